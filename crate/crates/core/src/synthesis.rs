//! Synthetic flake scenes: random flake shapes and layer counts, physically
//! rendered flake colours, substrate-aware placement, and hard compositing
//! onto a reference micrograph.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorimetry::{
    delta_e, estimate_background, rgb_to_lab, spectrum_to_xyz, wb_gain, xyz_to_linear_rgb,
    ColorSystem, LinearRgb, WhiteBalanceGain,
};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::materials::{DispersionTable, MaterialLibrary, SpectralGrid};
use crate::optics::{reflectance_spectrum, Layer, LayerStack};
use crate::pia::{pia_map, substrate_mask, PatchSize, PiaMap, SubstrateMask};

/// Thickness class used as the detection category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerClass {
    Mono,
    Few,
    Thick,
}

impl LayerClass {
    pub const ALL: [LayerClass; 3] = [LayerClass::Mono, LayerClass::Few, LayerClass::Thick];

    /// 1 layer → Mono, 2-5 → Few, more → Thick.
    pub fn from_layer_count(layers: u32) -> Self {
        match layers {
            0 | 1 => LayerClass::Mono,
            2..=5 => LayerClass::Few,
            _ => LayerClass::Thick,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerClass::Mono => "Mono",
            LayerClass::Few => "Few",
            LayerClass::Thick => "Thick",
        }
    }

    pub fn category_id(self) -> u32 {
        match self {
            LayerClass::Mono => 1,
            LayerClass::Few => 2,
            LayerClass::Thick => 3,
        }
    }
}

/// Binary patch, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlakeMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl FlakeMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{} mask bits for a {width}x{height} patch",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Local `(x, y)` of every set pixel.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
    }
}

/// Labels the 4-connected components of `bits` (0 = unset, 1.. = component).
pub fn label_components_4(width: usize, height: usize, bits: &[bool]) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
    }
    (labels, next)
}

/// Fills a closed polygon by testing pixel centres with the even-odd rule.
fn rasterize_polygon(vertices: &[(f64, f64)], width: usize, height: usize) -> Vec<bool> {
    let mut bits = vec![false; width * height];
    let mut crossings = Vec::with_capacity(vertices.len());
    for row in 0..height {
        let yc = row as f64 + 0.5;
        crossings.clear();
        for k in 0..vertices.len() {
            let (x0, y0) = vertices[k];
            let (x1, y1) = vertices[(k + 1) % vertices.len()];
            if (y0 <= yc) != (y1 <= yc) {
                crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        crossings.sort_unstable_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let first = (span[0] - 0.5).ceil().max(0.0) as usize;
            for col in first..width {
                let xc = col as f64 + 0.5;
                if xc >= span[1] {
                    break;
                }
                bits[row * width + col] = true;
            }
        }
    }
    bits
}

const MASK_MIN_VERTICES: usize = 8;
const MASK_MAX_VERTICES: usize = 16;
const MASK_RADIAL_JITTER: f64 = 0.35;
const MASK_ATTEMPTS: usize = 200;

fn try_polygon_mask<R: Rng>(rng: &mut R, min: usize, max: usize) -> Option<FlakeMask> {
    let width = rng.random_range(min..=max);
    let height = rng.random_range(min..=max);
    let n = rng.random_range(MASK_MIN_VERTICES..=MASK_MAX_VERTICES);
    let rotation = rng.random_range(0.0..PI);
    let step = 2.0 * PI / n as f64;
    let mut pts: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let theta = k as f64 * step + rng.random_range(-0.3..0.3) * step;
            let r = 1.0 + rng.random_range(-MASK_RADIAL_JITTER..=MASK_RADIAL_JITTER);
            let (s, c) = (theta + rotation).sin_cos();
            (r * c, r * s)
        })
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    for p in &mut pts {
        p.0 = (p.0 - x0) / (x1 - x0) * width as f64;
        p.1 = (p.1 - y0) / (y1 - y0) * height as f64;
    }
    let bits = rasterize_polygon(&pts, width, height);
    let (labels, count) = label_components_4(width, height, &bits);
    if count == 0 {
        return None;
    }
    let mut sizes = vec![0usize; count as usize + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let keep = (1..=count).max_by_key(|&l| (sizes[l as usize], std::cmp::Reverse(l)))?;

    let (mut bx0, mut bx1, mut by0, mut by1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, &l) in labels.iter().enumerate() {
        if l == keep {
            let (x, y) = (i % width, i / width);
            bx0 = bx0.min(x);
            bx1 = bx1.max(x);
            by0 = by0.min(y);
            by1 = by1.max(y);
        }
    }
    let (w, h) = (bx1 - bx0 + 1, by1 - by0 + 1);
    if w < min || h < min || w > max || h > max {
        return None;
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = labels[(y + by0) * width + x + bx0] == keep;
        }
    }
    Some(FlakeMask {
        width: w,
        height: h,
        bits: out,
    })
}

/// A single 4-connected flake shape whose bounding box lies within
/// `size_px = (min, max)` on both axes: a jittered polygon of 8-16 vertices
/// around an ellipse, rasterized and reduced to its largest component.
pub fn random_flake_mask<R: Rng>(rng: &mut R, size_px: (usize, usize)) -> Result<FlakeMask> {
    let (min, max) = size_px;
    if min < 1 || min > max {
        return Err(Error::Domain(format!(
            "flake size range [{min}, {max}] is degenerate"
        )));
    }
    if max < 3 {
        return Ok(FlakeMask::filled(min, min));
    }
    for _ in 0..MASK_ATTEMPTS {
        if let Some(mask) = try_polygon_mask(rng, min, max) {
            return Ok(mask);
        }
    }
    Ok(FlakeMask::filled(min, min))
}

/// Discrete distribution over layer counts.
#[derive(Debug, Clone)]
pub struct LayerDistribution {
    counts: Vec<u32>,
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl LayerDistribution {
    pub fn new(entries: &[(u32, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("layer distribution is empty".into()));
        }
        for &(n, w) in entries {
            if n == 0 {
                return Err(Error::Config("layer counts start at 1".into()));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Config(format!(
                    "layer-count weight for {n} must be positive, got {w}"
                )));
            }
        }
        let counts: Vec<u32> = entries.iter().map(|e| e.0).collect();
        let weights: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            counts,
            weights,
            index,
        })
    }

    /// Uniform over `1..=max_layers`.
    pub fn uniform(max_layers: u32) -> Self {
        let entries: Vec<(u32, f64)> = (1..=max_layers.max(1)).map(|n| (n, 1.0)).collect();
        Self::new(&entries).expect("uniform distribution is valid")
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        self.counts[self.index.sample(rng)]
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.counts.iter().copied().zip(self.weights.iter().copied())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialEntry {
    pub id: String,
    #[serde(default = "one")]
    pub weight: f64,
    /// Falls back to the material catalog when absent.
    #[serde(default)]
    pub monolayer_nm: Option<f64>,
    /// Layer count (as a string key) → weight. Uniform over 1..=10 when absent.
    #[serde(default)]
    pub layer_distribution: Option<BTreeMap<String, f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min_nm: f64,
    pub max_nm: f64,
    pub samples: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        let g = SpectralGrid::visible();
        Self {
            min_nm: g.min_nm(),
            max_nm: g.max_nm(),
            samples: g.len(),
        }
    }
}

impl GridSpec {
    pub fn to_grid(self) -> Result<SpectralGrid> {
        SpectralGrid::new(self.min_nm, self.max_nm, self.samples)
    }
}

/// How flake colours (and, for an explicit gain, the whole canvas) are
/// white balanced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WbMode {
    /// Gain = reference background median / modeled bare-substrate colour,
    /// applied to flake colours only.
    #[default]
    FromReference,
    /// Fixed gain applied to the reference canvas and to flake colours.
    Gain([f64; 3]),
    None,
}

/// Scene and dataset configuration (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub materials: Vec<MaterialEntry>,
    #[serde(default = "default_oxide")]
    pub oxide_nm: f64,
    #[serde(default = "default_n_flakes")]
    pub n_flakes: usize,
    #[serde(default = "default_flake_px")]
    pub flake_px: [usize; 2],
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_percentile")]
    pub substrate_percentile: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub wb_mode: WbMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patch")]
    pub patch_px: usize,
    #[serde(default)]
    pub reference_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_n_images")]
    pub n_images: usize,
    /// Directory holding `materials/` and colour-system files.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Colour-system JSON; defaults to `<data_dir>/color_system_srgb_d65.json`.
    #[serde(default)]
    pub color_system: Option<PathBuf>,
}

fn default_oxide() -> f64 {
    180.0
}
fn default_n_flakes() -> usize {
    30
}
fn default_flake_px() -> [usize; 2] {
    [12, 48]
}
fn default_percentile() -> f64 {
    90.0
}
fn default_retries() -> usize {
    100
}
fn default_patch() -> usize {
    14
}
fn default_n_images() -> usize {
    1
}

impl SynthesisConfig {
    /// A config with defaults for everything except the material list.
    pub fn with_materials(materials: Vec<MaterialEntry>) -> Self {
        Self {
            materials,
            oxide_nm: default_oxide(),
            n_flakes: default_n_flakes(),
            flake_px: default_flake_px(),
            grid: GridSpec::default(),
            substrate_percentile: default_percentile(),
            max_retries: default_retries(),
            wb_mode: WbMode::default(),
            seed: 0,
            patch_px: default_patch(),
            reference_dir: None,
            output_dir: None,
            n_images: default_n_images(),
            data_dir: None,
            color_system: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every field and resolves materials against `library`.
    pub fn resolve(&self, library: &MaterialLibrary) -> Result<SynthesisPlan> {
        if self.materials.is_empty() {
            return Err(Error::Config("at least one material is required".into()));
        }
        if !(self.oxide_nm >= 0.0) || !self.oxide_nm.is_finite() {
            return Err(Error::Config(format!(
                "oxide_nm must be >= 0, got {}",
                self.oxide_nm
            )));
        }
        let [lo, hi] = self.flake_px;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!("flake_px [{lo}, {hi}] is invalid")));
        }
        if !(self.substrate_percentile > 0.0 && self.substrate_percentile < 100.0) {
            return Err(Error::Config(format!(
                "substrate_percentile must lie in (0, 100), got {}",
                self.substrate_percentile
            )));
        }
        if self.max_retries < 1 {
            return Err(Error::Config("max_retries must be >= 1".into()));
        }
        if self.patch_px < 1 {
            return Err(Error::Config("patch_px must be >= 1".into()));
        }
        if let WbMode::Gain(g) = self.wb_mode {
            WhiteBalanceGain::new(g).map_err(|e| Error::Config(e.to_string()))?;
        }
        let grid = self.grid.to_grid().map_err(|e| Error::Config(e.to_string()))?;

        let mut materials = Vec::with_capacity(self.materials.len());
        for m in &self.materials {
            if !(m.weight > 0.0) || !m.weight.is_finite() {
                return Err(Error::Config(format!(
                    "material `{}` weight must be positive",
                    m.id
                )));
            }
            let table = library.get(&m.id)?;
            if !table.covers(&grid) {
                return Err(Error::Config(format!(
                    "material `{}` does not cover {}-{} nm",
                    m.id,
                    grid.min_nm(),
                    grid.max_nm()
                )));
            }
            let monolayer_nm = m
                .monolayer_nm
                .or_else(|| library.monolayer_nm(&m.id))
                .ok_or_else(|| {
                    Error::Config(format!("no monolayer thickness known for `{}`", m.id))
                })?;
            if !(monolayer_nm > 0.0) || !monolayer_nm.is_finite() {
                return Err(Error::Config(format!(
                    "monolayer thickness of `{}` must be positive",
                    m.id
                )));
            }
            let layers = match &m.layer_distribution {
                None => LayerDistribution::uniform(10),
                Some(map) => {
                    let entries = map
                        .iter()
                        .map(|(k, &w)| {
                            k.trim().parse::<u32>().map(|n| (n, w)).map_err(|_| {
                                Error::Config(format!(
                                    "`{}` layer_distribution key `{k}` is not a layer count",
                                    m.id
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    LayerDistribution::new(&entries)?
                }
            };
            materials.push(ResolvedMaterial {
                id: m.id.clone(),
                table,
                monolayer_nm,
                layers,
            });
        }
        let weights: Vec<f64> = self.materials.iter().map(|m| m.weight).collect();
        let material_index =
            WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(SynthesisPlan {
            materials,
            material_index,
            oxide_nm: self.oxide_nm,
            n_flakes: self.n_flakes,
            flake_px: (lo, hi),
            grid,
            substrate_percentile: self.substrate_percentile,
            max_retries: self.max_retries,
            wb_mode: self.wb_mode,
            patch: PatchSize::square(self.patch_px),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedMaterial {
    pub id: String,
    pub table: Arc<DispersionTable>,
    pub monolayer_nm: f64,
    pub layers: LayerDistribution,
}

/// A validated [`SynthesisConfig`] with materials bound to their tables.
#[derive(Debug, Clone)]
pub struct SynthesisPlan {
    pub materials: Vec<ResolvedMaterial>,
    material_index: WeightedIndex<f64>,
    pub oxide_nm: f64,
    pub n_flakes: usize,
    pub flake_px: (usize, usize),
    pub grid: SpectralGrid,
    pub substrate_percentile: f64,
    pub max_retries: usize,
    pub wb_mode: WbMode,
    pub patch: PatchSize,
}

impl SynthesisPlan {
    pub fn material(&self, id: &str) -> Result<&ResolvedMaterial> {
        self.materials
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::Config(format!("material `{id}` is not in the config")))
    }

    fn pick_material<R: Rng>(&self, rng: &mut R) -> usize {
        self.material_index.sample(rng)
    }
}

/// `(layer_count, thickness_nm)` for one flake of `material_id`.
pub fn sample_thickness<R: Rng>(
    material_id: &str,
    plan: &SynthesisPlan,
    rng: &mut R,
) -> Result<(u32, f64)> {
    let m = plan.material(material_id)?;
    let layers = m.layers.sample(rng);
    Ok((layers, f64::from(layers) * m.monolayer_nm))
}

/// Air over a fixed oxide on a silicon substrate.
#[derive(Debug, Clone)]
pub struct SubstrateModel {
    pub air: Arc<DispersionTable>,
    pub oxide: Arc<DispersionTable>,
    pub silicon: Arc<DispersionTable>,
    pub oxide_nm: f64,
    pub grid: SpectralGrid,
}

impl SubstrateModel {
    /// Uses the `air`, `sio2` and `si` tables of `library`.
    pub fn from_library(library: &MaterialLibrary, oxide_nm: f64, grid: SpectralGrid) -> Result<Self> {
        let model = Self {
            air: library.get("air")?,
            oxide: library.get("sio2")?,
            silicon: library.get("si")?,
            oxide_nm,
            grid,
        };
        for t in [&model.air, &model.oxide, &model.silicon] {
            if !t.covers(&grid) {
                return Err(Error::Config(format!(
                    "`{}` does not cover {}-{} nm",
                    t.material_id(),
                    grid.min_nm(),
                    grid.max_nm()
                )));
            }
        }
        Ok(model)
    }

    fn oxide_layers(&self) -> Result<Vec<Layer>> {
        if self.oxide_nm > 0.0 {
            Ok(vec![Layer::new(self.oxide.clone(), self.oxide_nm)?])
        } else {
            Ok(vec![])
        }
    }

    /// `{air, SiO2, Si}`.
    pub fn bare_stack(&self) -> Result<LayerStack> {
        Ok(LayerStack::new(
            self.air.clone(),
            self.oxide_layers()?,
            self.silicon.clone(),
        ))
    }

    /// `{air, flake, SiO2, Si}`.
    pub fn flake_stack(&self, material: &Arc<DispersionTable>, thickness_nm: f64) -> Result<LayerStack> {
        let mut layers = vec![Layer::new(material.clone(), thickness_nm)?];
        layers.extend(self.oxide_layers()?);
        Ok(LayerStack::new(self.air.clone(), layers, self.silicon.clone()))
    }
}

/// Linear RGB (clipped) of a stack's reflectance under the system illuminant.
pub fn stack_color(stack: &LayerStack, grid: SpectralGrid, system: &ColorSystem) -> Result<LinearRgb> {
    let spectrum = reflectance_spectrum(stack, grid)?;
    Ok(xyz_to_linear_rgb(spectrum_to_xyz(&spectrum, system)?, system).0)
}

pub fn substrate_color(model: &SubstrateModel, system: &ColorSystem) -> Result<LinearRgb> {
    stack_color(&model.bare_stack()?, model.grid, system)
}

/// Rendered colour of a flake of `thickness_nm` on the substrate, with the
/// white-balance gain applied when given.
pub fn flake_color(
    model: &SubstrateModel,
    material: &Arc<DispersionTable>,
    thickness_nm: f64,
    system: &ColorSystem,
    gain: Option<&WhiteBalanceGain>,
) -> Result<LinearRgb> {
    let c = stack_color(&model.flake_stack(material, thickness_nm)?, model.grid, system)?;
    Ok(match gain {
        Some(g) => g.apply(c),
        None => c,
    })
}

/// Gain mapping the modeled bare-substrate colour onto the reference
/// image's median colour.
pub fn wb_from_reference(
    reference: &RgbImage,
    model: &SubstrateModel,
    system: &ColorSystem,
) -> Result<WhiteBalanceGain> {
    let c_ref = estimate_background(reference)?;
    let c_0 = substrate_color(model, system)?;
    wb_gain(c_ref, c_0, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlakeInstance {
    pub mask: FlakeMask,
    /// Top-left pixel of the mask in the scene.
    pub x: usize,
    pub y: usize,
    pub material_id: String,
    pub layer_count: u32,
    pub thickness_nm: f64,
    pub color: LinearRgb,
    pub layer_class: LayerClass,
    /// CIE76 contrast of the flake colour against the scene background.
    pub delta_e: f64,
}

/// Scene under construction.
#[derive(Debug, Clone)]
pub struct SceneDraft {
    pub canvas: RgbImage,
    pub occupied: Vec<bool>,
    pub placed: Vec<FlakeInstance>,
    pub rng: ChaCha8Rng,
}

impl SceneDraft {
    pub fn new(canvas: RgbImage, seed: u64) -> Self {
        let n = canvas.width() * canvas.height();
        Self {
            canvas,
            occupied: vec![false; n],
            placed: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Rejection-samples a top-left position where every mask pixel lands on
/// substrate and on no occupied pixel. Marks the pixels occupied on success;
/// `Ok(None)` after `max_retries` rejections.
pub fn place_flake(
    draft: &mut SceneDraft,
    mask: &FlakeMask,
    substrate: &SubstrateMask,
    max_retries: usize,
) -> Result<Option<(usize, usize)>> {
    let (w, h) = (draft.canvas.width(), draft.canvas.height());
    if mask.width() > w || mask.height() > h {
        return Err(Error::Domain(format!(
            "{}x{} flake does not fit a {w}x{h} canvas",
            mask.width(),
            mask.height()
        )));
    }
    if substrate.width() != w || substrate.height() != h {
        return Err(Error::Shape("substrate mask and canvas differ in size".into()));
    }
    let pixels: Vec<(usize, usize)> = mask.set_pixels().collect();
    for _ in 0..max_retries {
        let x = draft.rng.random_range(0..=w - mask.width());
        let y = draft.rng.random_range(0..=h - mask.height());
        let ok = pixels.iter().all(|&(px, py)| {
            let i = (y + py) * w + x + px;
            substrate.bits()[i] && !draft.occupied[i]
        });
        if ok {
            for &(px, py) in &pixels {
                draft.occupied[(y + py) * w + x + px] = true;
            }
            return Ok(Some((x, y)));
        }
    }
    Ok(None)
}

/// `out = color * M + canvas * (1 - M)` inside the mask window.
pub fn composite(
    canvas: &mut RgbImage,
    mask: &FlakeMask,
    x: usize,
    y: usize,
    color: LinearRgb,
) -> Result<()> {
    if x + mask.width() > canvas.width() || y + mask.height() > canvas.height() {
        return Err(Error::Domain(format!(
            "mask window at ({x}, {y}) leaves the {}x{} canvas",
            canvas.width(),
            canvas.height()
        )));
    }
    let c = color.to_array();
    for (px, py) in mask.set_pixels() {
        canvas.set(x + px, y + py, c);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    /// Linear RGB; quantize with [`RgbImage::to_srgb8`].
    pub image: RgbImage,
    pub flakes: Vec<FlakeInstance>,
    pub pia: PiaMap,
    pub substrate: SubstrateMask,
    pub gain: WhiteBalanceGain,
    pub skipped: usize,
}

/// Renders one synthetic scene on top of `reference`. Deterministic in `seed`.
pub fn synthesize_scene(
    reference: &RgbImage,
    plan: &SynthesisPlan,
    model: &SubstrateModel,
    system: &ColorSystem,
    seed: u64,
) -> Result<SceneOutput> {
    if system.grid() != &plan.grid || model.grid != plan.grid {
        return Err(Error::Shape(
            "colour system, substrate model and plan must share one grid".into(),
        ));
    }
    let (lo, hi) = plan.flake_px;
    if hi > reference.width() || hi > reference.height() {
        return Err(Error::Config(format!(
            "flake_px max {hi} exceeds the {}x{} reference",
            reference.width(),
            reference.height()
        )));
    }
    let patch = PatchSize {
        height: plan.patch.height.min(reference.height()),
        width: plan.patch.width.min(reference.width()),
    };

    let (gain, canvas) = match plan.wb_mode {
        WbMode::FromReference => (wb_from_reference(reference, model, system)?, reference.clone()),
        WbMode::Gain(g) => {
            let g = WhiteBalanceGain::new(g)?;
            let mut canvas = reference.clone();
            g.apply_image(&mut canvas);
            (g, canvas)
        }
        WbMode::None => (WhiteBalanceGain::IDENTITY, reference.clone()),
    };

    let pia = pia_map(reference, patch, system)?;
    let substrate = substrate_mask(&pia, plan.substrate_percentile)?;
    let background = rgb_to_lab(estimate_background(&canvas)?, system);

    let mut draft = SceneDraft::new(canvas, seed);
    let mut skipped = 0;
    let mut colors: HashMap<(usize, u32), LinearRgb> = HashMap::new();
    for _ in 0..plan.n_flakes {
        let mi = plan.pick_material(&mut draft.rng);
        let material = &plan.materials[mi];
        let mask = random_flake_mask(&mut draft.rng, (lo, hi))?;
        let (layers, thickness) = sample_thickness(&material.id, plan, &mut draft.rng)?;
        let Some((x, y)) = place_flake(&mut draft, &mask, &substrate, plan.max_retries)? else {
            skipped += 1;
            continue;
        };
        let color = match colors.get(&(mi, layers)) {
            Some(c) => *c,
            None => {
                let c = flake_color(model, &material.table, thickness, system, Some(&gain))?;
                colors.insert((mi, layers), c);
                c
            }
        };
        composite(&mut draft.canvas, &mask, x, y, color)?;
        draft.placed.push(FlakeInstance {
            mask,
            x,
            y,
            material_id: material.id.clone(),
            layer_count: layers,
            thickness_nm: thickness,
            color,
            layer_class: LayerClass::from_layer_count(layers),
            delta_e: delta_e(rgb_to_lab(color, system), background),
        });
    }
    Ok(SceneOutput {
        image: draft.canvas,
        flakes: draft.placed,
        pia,
        substrate,
        gain,
        skipped,
    })
}
