//! Batch dataset runs: config + reference images in, rendered scenes, label
//! images, COCO annotations, QA records and a run manifest out.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorimetry::ColorSystem;
use crate::error::{Error, Result};
use crate::export::{gen_qa, label_image, to_coco, to_jsonl, QaRecord, QaTemplates, SceneRecord};
use crate::image::{encode_png_gray8, encode_png_rgb8, load_png, write_atomic, RgbImage};
use crate::materials::MaterialLibrary;
use crate::synthesis::{synthesize_scene, SubstrateModel, SynthesisConfig, SynthesisPlan};

pub const DEFAULT_COLOR_SYSTEM: &str = "color_system_srgb_d65.json";

/// Per-scene seed derived from the master seed and scene index.
pub fn scene_seed(master: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub file_name: String,
    pub reference: String,
    pub seed: u64,
    pub flakes_requested: usize,
    pub flakes_placed: usize,
    pub placements_skipped: usize,
    pub gain: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub n_images: usize,
    pub scenes: Vec<SceneManifest>,
}

#[derive(Debug, Clone)]
pub struct ReferenceImage {
    pub name: String,
    pub image: RgbImage,
}

/// A fully validated run. Building one reads inputs only; nothing is
/// written until [`DatasetJob::run`].
#[derive(Debug, Clone)]
pub struct DatasetJob {
    pub config: SynthesisConfig,
    pub config_sha256: String,
    pub plan: SynthesisPlan,
    pub model: SubstrateModel,
    pub system: ColorSystem,
    pub references: Vec<ReferenceImage>,
    pub output_dir: PathBuf,
    pub templates: QaTemplates,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Sorted `*.png` files of `dir`, decoded.
pub fn load_references(dir: &Path) -> Result<Vec<ReferenceImage>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| x.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no PNG reference images in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            Ok(ReferenceImage {
                name: p.file_name().unwrap().to_string_lossy().into_owned(),
                image: load_png(p)?,
            })
        })
        .collect()
}

impl DatasetJob {
    /// Reads and validates the config at `path`; relative paths inside it
    /// resolve against its directory.
    pub fn prepare(path: impl AsRef<Path>, default_data_dir: &Path) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::Config(format!("{} is not UTF-8: {e}", path.display())))?;
        let config = SynthesisConfig::from_json(text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut job = Self::from_config(config, base, default_data_dir)?;
        job.config_sha256 = sha256_hex(&bytes);
        Ok(job)
    }

    pub fn from_config(config: SynthesisConfig, base: &Path, default_data_dir: &Path) -> Result<Self> {
        let data_dir = config
            .data_dir
            .as_deref()
            .map(|d| resolve(base, d))
            .unwrap_or_else(|| default_data_dir.to_path_buf());
        let library = MaterialLibrary::open(data_dir.join("materials"))?;
        let plan = config.resolve(&library)?;
        let model = SubstrateModel::from_library(&library, plan.oxide_nm, plan.grid)?;
        let cs_path = config
            .color_system
            .as_deref()
            .map(|p| resolve(base, p))
            .unwrap_or_else(|| data_dir.join(DEFAULT_COLOR_SYSTEM));
        let system = ColorSystem::load(cs_path, plan.grid)?;

        let reference_dir = config
            .reference_dir
            .as_deref()
            .ok_or_else(|| Error::Config("`reference_dir` is required".into()))?;
        let references = load_references(&resolve(base, reference_dir))?;
        let output_dir = resolve(
            base,
            config
                .output_dir
                .as_deref()
                .ok_or_else(|| Error::Config("`output_dir` is required".into()))?,
        );
        if output_dir.exists() && !output_dir.is_dir() {
            return Err(Error::Config(format!(
                "output_dir {} is not a directory",
                output_dir.display()
            )));
        }
        if config.n_flakes > 255 {
            return Err(Error::Config(format!(
                "n_flakes {} exceeds the 255 labels of a mask image",
                config.n_flakes
            )));
        }
        let (_, hi) = plan.flake_px;
        for r in &references {
            if hi > r.image.width() || hi > r.image.height() {
                return Err(Error::Config(format!(
                    "flake_px max {hi} exceeds reference `{}` ({}x{})",
                    r.name,
                    r.image.width(),
                    r.image.height()
                )));
            }
        }
        let config_sha256 = sha256_hex(
            serde_json::to_string(&config)
                .map_err(|e| Error::parse("config", e))?
                .as_bytes(),
        );
        Ok(Self {
            config,
            config_sha256,
            plan,
            model,
            system,
            references,
            output_dir,
            templates: QaTemplates::default(),
        })
    }

    pub fn scene_file_name(index: usize) -> String {
        format!("scene_{index:05}.png")
    }

    /// Renders every scene and writes the output tree.
    pub fn run(&self) -> Result<RunManifest> {
        let images_dir = self.output_dir.join("images");
        let masks_dir = self.output_dir.join("masks");
        for d in [&images_dir, &masks_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }

        let results: Vec<(SceneRecord, Vec<QaRecord>, SceneManifest)> = (0..self.config.n_images)
            .into_par_iter()
            .map(|i| {
                let reference = &self.references[i % self.references.len()];
                let seed = scene_seed(self.config.seed, i as u64);
                let out =
                    synthesize_scene(&reference.image, &self.plan, &self.model, &self.system, seed)?;
                let file_name = Self::scene_file_name(i);
                let record = SceneRecord {
                    file_name: file_name.clone(),
                    width: out.image.width(),
                    height: out.image.height(),
                    flakes: out.flakes,
                };
                write_atomic(images_dir.join(&file_name), &encode_png_rgb8(&out.image)?)?;
                let labels = label_image(&record)?;
                write_atomic(
                    masks_dir.join(&file_name),
                    &encode_png_gray8(&labels, record.width, record.height)?,
                )?;
                let mut qa_rng = ChaCha8Rng::seed_from_u64(scene_seed(seed, u64::MAX));
                let qa = gen_qa(&record, &self.templates, &mut qa_rng)?;
                let manifest = SceneManifest {
                    file_name,
                    reference: reference.name.clone(),
                    seed,
                    flakes_requested: self.plan.n_flakes,
                    flakes_placed: record.flakes.len(),
                    placements_skipped: out.skipped,
                    gain: out.gain.components(),
                };
                Ok((record, qa, manifest))
            })
            .collect::<Result<_>>()?;

        let mut scenes = Vec::with_capacity(results.len());
        let mut qa = Vec::new();
        let mut manifests = Vec::with_capacity(results.len());
        for (s, q, m) in results {
            scenes.push(s);
            qa.extend(q);
            manifests.push(m);
        }
        let coco = to_coco(&scenes)?;
        write_atomic(self.output_dir.join("annotations.json"), coco.to_json()?.as_bytes())?;
        write_atomic(self.output_dir.join("instructions.jsonl"), to_jsonl(&qa)?.as_bytes())?;
        let manifest = RunManifest {
            config_sha256: self.config_sha256.clone(),
            seed: self.config.seed,
            n_images: self.config.n_images,
            scenes: manifests,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse("manifest", e))?;
        write_atomic(self.output_dir.join("run_manifest.json"), json.as_bytes())?;
        Ok(manifest)
    }
}

/// [`DatasetJob::prepare`] followed by [`DatasetJob::run`].
pub fn run_dataset(config_path: impl AsRef<Path>, default_data_dir: &Path) -> Result<RunManifest> {
    DatasetJob::prepare(config_path, default_data_dir)?.run()
}
