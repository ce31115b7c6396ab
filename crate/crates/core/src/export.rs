//! COCO detection annotations, instruction QA records, and per-scene label
//! images.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::{FlakeInstance, FlakeMask, LayerClass};

/// `[x, y, w, h]` in image pixels.
pub type BBox = [u32; 4];

/// Tight bounds of the set pixels of `mask` placed at `(x, y)`.
pub fn bbox_from_mask(mask: &FlakeMask, x: usize, y: usize) -> Result<BBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (px, py) in mask.set_pixels() {
        bounds = Some(match bounds {
            None => (px, px, py, py),
            Some((x0, x1, y0, y1)) => (x0.min(px), x1.max(px), y0.min(py), y1.max(py)),
        });
    }
    let (x0, x1, y0, y1) =
        bounds.ok_or_else(|| Error::Domain("bounding box of an empty mask".into()))?;
    Ok([
        (x + x0) as u32,
        (y + y0) as u32,
        (x1 - x0 + 1) as u32,
        (y1 - y0 + 1) as u32,
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox,
    pub area: u64,
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDataset {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("annotations", e))
    }

    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("annotations schema: {e}")))?;
        validate_coco(&ds)?;
        Ok(ds)
    }

    pub fn image_by_name(&self, file_name: &str) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.file_name == file_name)
    }

    pub fn annotations_of(&self, image_id: u64) -> impl Iterator<Item = &CocoAnnotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }
}

pub fn coco_categories() -> Vec<CocoCategory> {
    LayerClass::ALL
        .iter()
        .map(|c| CocoCategory {
            id: c.category_id(),
            name: c.name().to_string(),
            supercategory: "flake".to_string(),
        })
        .collect()
}

/// One synthesized image and its flakes.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    pub flakes: Vec<FlakeInstance>,
}

/// Image ids follow scene order, annotation ids follow scene then placement
/// order; both start at 1.
pub fn to_coco(scenes: &[SceneRecord]) -> Result<CocoDataset> {
    let mut names = HashSet::new();
    for s in scenes {
        if !names.insert(s.file_name.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate image file name `{}`",
                s.file_name
            )));
        }
    }
    let mut images = Vec::with_capacity(scenes.len());
    let mut annotations = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let image_id = i as u64 + 1;
        images.push(CocoImage {
            id: image_id,
            file_name: s.file_name.clone(),
            width: s.width as u32,
            height: s.height as u32,
        });
        for f in &s.flakes {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: f.layer_class.category_id(),
                bbox: bbox_from_mask(&f.mask, f.x, f.y)?,
                area: f.mask.count() as u64,
                iscrowd: 0,
            });
        }
    }
    Ok(CocoDataset {
        images,
        annotations,
        categories: coco_categories(),
    })
}

/// Unique ids, the three fixed categories, referential integrity, boxes
/// inside their image and areas no larger than their box.
pub fn validate_coco(ds: &CocoDataset) -> Result<()> {
    let fail = |m: String| Err(Error::Validation(m));
    if ds.categories != coco_categories() {
        return fail("categories must be Mono=1, Few=2, Thick=3 under `flake`".into());
    }
    let mut images = HashMap::new();
    let mut names = HashSet::new();
    for img in &ds.images {
        if images.insert(img.id, img).is_some() {
            return fail(format!("duplicate image id {}", img.id));
        }
        if !names.insert(&img.file_name) {
            return fail(format!("duplicate file name `{}`", img.file_name));
        }
        if img.width == 0 || img.height == 0 {
            return fail(format!("image {} has zero size", img.id));
        }
    }
    let mut ann_ids = HashSet::new();
    for a in &ds.annotations {
        if !ann_ids.insert(a.id) {
            return fail(format!("duplicate annotation id {}", a.id));
        }
        let Some(img) = images.get(&a.image_id) else {
            return fail(format!("annotation {} references missing image {}", a.id, a.image_id));
        };
        if !(1..=3).contains(&a.category_id) {
            return fail(format!("annotation {} has unknown category {}", a.id, a.category_id));
        }
        let [x, y, w, h] = a.bbox;
        if w == 0 || h == 0 || x + w > img.width || y + h > img.height {
            return fail(format!("annotation {} bbox {:?} leaves its image", a.id, a.bbox));
        }
        if a.area == 0 || a.area > u64::from(w) * u64::from(h) {
            return fail(format!("annotation {} area {} does not fit its bbox", a.id, a.area));
        }
        if a.iscrowd != 0 {
            return fail(format!("annotation {} has iscrowd != 0", a.id));
        }
    }
    Ok(())
}

/// Pixel value = 1-based flake index, 0 = background.
pub fn label_image(scene: &SceneRecord) -> Result<Vec<u8>> {
    if scene.flakes.len() > 255 {
        return Err(Error::Validation(format!(
            "{} flakes exceed the 8-bit label range",
            scene.flakes.len()
        )));
    }
    let mut labels = vec![0u8; scene.width * scene.height];
    for (i, f) in scene.flakes.iter().enumerate() {
        for (px, py) in f.mask.set_pixels() {
            let (x, y) = (f.x + px, f.y + py);
            if x >= scene.width || y >= scene.height {
                return Err(Error::Domain(format!("flake {} leaves the image", i + 1)));
            }
            labels[y * scene.width + x] = (i + 1) as u8;
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaTask {
    Counting,
    Localization,
    Verification,
}

impl QaTask {
    pub const ALL: [QaTask; 3] = [QaTask::Counting, QaTask::Localization, QaTask::Verification];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlakeSummary {
    pub index: usize,
    pub material: String,
    pub bbox: BBox,
    pub layer_count: u32,
    pub layer_class: LayerClass,
    pub thickness_nm: f64,
    pub color_hex: String,
    pub delta_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaAnswer {
    pub candidates: Vec<FlakeSummary>,
    pub reasoning: String,
    pub conclusion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub image: String,
    pub task: QaTask,
    pub question: String,
    pub answer: QaAnswer,
}

/// Question phrasings per task; one is drawn at random per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTemplates {
    pub counting: Vec<String>,
    pub localization: Vec<String>,
    pub verification: Vec<String>,
}

impl Default for QaTemplates {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            counting: v(&[
                "How many monolayer flakes are in the image?",
                "Count the monolayer flakes visible in this micrograph.",
            ]),
            localization: v(&[
                "Locate the monolayer flakes.",
                "Give the bounding boxes of all monolayer flakes in the image.",
            ]),
            verification: v(&[
                "Does this sample contain a monolayer flake?",
                "Is there at least one monolayer flake in this image?",
            ]),
        }
    }
}

impl QaTemplates {
    fn for_task(&self, task: QaTask) -> &[String] {
        match task {
            QaTask::Counting => &self.counting,
            QaTask::Localization => &self.localization,
            QaTask::Verification => &self.verification,
        }
    }
}

fn fmt_bbox(b: &BBox) -> String {
    format!("[{}, {}, {}, {}]", b[0], b[1], b[2], b[3])
}

fn summarize(scene: &SceneRecord) -> Result<Vec<FlakeSummary>> {
    scene
        .flakes
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(FlakeSummary {
                index: i + 1,
                material: f.material_id.clone(),
                bbox: bbox_from_mask(&f.mask, f.x, f.y)?,
                layer_count: f.layer_count,
                layer_class: f.layer_class,
                thickness_nm: f.thickness_nm,
                color_hex: f.color.hex(),
                delta_e: f.delta_e,
            })
        })
        .collect()
}

fn reasoning_text(candidates: &[FlakeSummary]) -> String {
    if candidates.is_empty() {
        return "No region differs in colour from the substrate background; the field of view \
                shows bare substrate only."
            .to_string();
    }
    let mut lines: Vec<String> = candidates
        .iter()
        .map(|c| {
            let layer_word = if c.layer_count == 1 { "layer" } else { "layers" };
            format!(
                "Flake {} at {} ({}) has rendered colour {} and contrast dE = {:.2} against the \
                 substrate, consistent with {} {} ({:.2} nm), so it is {}.",
                c.index,
                fmt_bbox(&c.bbox),
                c.material,
                c.color_hex,
                c.delta_e,
                c.layer_count,
                layer_word,
                c.thickness_nm,
                c.layer_class.name()
            )
        })
        .collect();
    let mono = candidates
        .iter()
        .filter(|c| c.layer_class == LayerClass::Mono)
        .count();
    lines.push(format!(
        "Thin flakes give the weakest interference contrast; {mono} of {} candidates fall in the \
         monolayer range.",
        candidates.len()
    ));
    lines.join(" ")
}

fn conclusion_text(task: QaTask, mono: &[BBox]) -> String {
    let n = mono.len();
    match task {
        QaTask::Counting => match n {
            1 => "There is 1 monolayer flake in the image.".to_string(),
            _ => format!("There are {n} monolayer flakes in the image."),
        },
        QaTask::Localization if n == 0 => "No monolayer flakes are present.".to_string(),
        QaTask::Localization => {
            let boxes: Vec<String> = mono.iter().map(fmt_bbox).collect();
            format!("Monolayer flakes are located at {}.", boxes.join("; "))
        }
        QaTask::Verification if n == 0 => "No, the sample does not contain a monolayer flake.".to_string(),
        QaTask::Verification => format!("Yes, the sample contains {n} monolayer flake(s)."),
    }
}

/// One record per task type for `scene`.
pub fn gen_qa<R: Rng>(scene: &SceneRecord, templates: &QaTemplates, rng: &mut R) -> Result<Vec<QaRecord>> {
    let candidates = summarize(scene)?;
    let reasoning = reasoning_text(&candidates);
    let mono: Vec<BBox> = candidates
        .iter()
        .filter(|c| c.layer_class == LayerClass::Mono)
        .map(|c| c.bbox)
        .collect();
    QaTask::ALL
        .iter()
        .map(|&task| {
            let question = templates
                .for_task(task)
                .choose(rng)
                .ok_or_else(|| Error::Config(format!("no question template for {task:?}")))?
                .clone();
            Ok(QaRecord {
                image: scene.file_name.clone(),
                task,
                question,
                answer: QaAnswer {
                    candidates: candidates.clone(),
                    reasoning: reasoning.clone(),
                    conclusion: conclusion_text(task, &mono),
                },
            })
        })
        .collect()
}

/// Every `[a, b, c, d]` group of unsigned integers in `text`.
pub fn parse_boxes(text: &str) -> Vec<BBox> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        let nums: Vec<u32> = after[..close]
            .split(',')
            .filter_map(|p| p.trim().parse().ok())
            .collect();
        if let [a, b, c, d] = nums[..] {
            out.push([a, b, c, d]);
        }
        rest = &after[close + 1..];
    }
    out
}

fn first_integer(text: &str) -> Option<u64> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Checks `record.answer.conclusion` against the Mono boxes of its image.
pub fn check_qa_record(record: &QaRecord, mono_boxes: &[BBox]) -> Result<()> {
    let c = &record.answer.conclusion;
    let n = mono_boxes.len();
    let ok = match record.task {
        QaTask::Counting => first_integer(c) == Some(n as u64),
        QaTask::Verification => {
            let yes = c.starts_with("Yes");
            let no = c.starts_with("No");
            yes != no && yes == (n > 0)
        }
        QaTask::Localization => {
            let mut got = parse_boxes(c);
            let mut want = mono_boxes.to_vec();
            got.sort_unstable();
            want.sort_unstable();
            got == want && (n > 0 || c.starts_with("No"))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{:?} answer for `{}` disagrees with {} annotated monolayer(s): {c}",
            record.task, record.image, n
        )))
    }
}

/// Checks every record against the annotations of the image it names.
pub fn validate_qa(records: &[QaRecord], coco: &CocoDataset) -> Result<()> {
    let mut mono: BTreeMap<&str, Vec<BBox>> = BTreeMap::new();
    let by_id: HashMap<u64, &str> = coco
        .images
        .iter()
        .map(|i| (i.id, i.file_name.as_str()))
        .collect();
    for img in &coco.images {
        mono.entry(img.file_name.as_str()).or_default();
    }
    for a in &coco.annotations {
        if a.category_id == LayerClass::Mono.category_id() {
            if let Some(name) = by_id.get(&a.image_id) {
                mono.entry(name).or_default().push(a.bbox);
            }
        }
    }
    for r in records {
        let boxes = mono.get(r.image.as_str()).ok_or_else(|| {
            Error::Validation(format!("QA record names unknown image `{}`", r.image))
        })?;
        check_qa_record(r, boxes)?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[QaRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::parse("qa record", e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<QaRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Validation(format!("instructions line {}: {e}", i + 1)))
        })
        .collect()
}
