//! Physics-informed attention: patch-wise CIELAB contrast against the image
//! background, min-max normalized into a per-pixel map, and the percentile
//! threshold that turns the map into a clean-substrate mask.

use crate::colorimetry::{delta_e, estimate_background_roi, median_rgb, rgb_to_lab, ColorSystem};
use crate::error::{Error, Result};
use crate::image::{RgbImage, Roi};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSize {
    pub height: usize,
    pub width: usize,
}

impl PatchSize {
    pub const fn square(side: usize) -> Self {
        Self {
            height: side,
            width: side,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchScore {
    pub row: usize,
    pub col: usize,
    /// Top-left pixel and true extent (edge patches may be smaller).
    pub roi: Roi,
    pub delta_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScores {
    pub patch: PatchSize,
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major over the patch grid.
    pub scores: Vec<PatchScore>,
}

fn check_geometry(image: &RgbImage, patch: PatchSize) -> Result<()> {
    if image.is_empty() {
        return Err(Error::Domain("attention map of an empty image".into()));
    }
    if patch.height == 0
        || patch.width == 0
        || patch.height > image.height()
        || patch.width > image.width()
    {
        return Err(Error::Domain(format!(
            "patch {}x{} does not fit a {}x{} image",
            patch.height,
            patch.width,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// ΔE between each patch's median colour and the background median.
pub fn patch_scores(image: &RgbImage, patch: PatchSize, system: &ColorSystem) -> Result<PatchScores> {
    patch_scores_roi(image, patch, system, None)
}

/// As [`patch_scores`], with the background estimated over `background_roi`
/// instead of the full image.
pub fn patch_scores_roi(
    image: &RgbImage,
    patch: PatchSize,
    system: &ColorSystem,
    background_roi: Option<Roi>,
) -> Result<PatchScores> {
    check_geometry(image, patch)?;
    let bg = estimate_background_roi(image, background_roi.unwrap_or(image.full_roi()))?;
    let bg_lab = rgb_to_lab(bg, system);

    let rows = image.height().div_ceil(patch.height);
    let cols = image.width().div_ceil(patch.width);
    let mut scratch = Default::default();
    let mut scores = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let y = row * patch.height;
            let x = col * patch.width;
            let roi = Roi {
                x,
                y,
                width: patch.width.min(image.width() - x),
                height: patch.height.min(image.height() - y),
            };
            let med = median_rgb(image.region(roi), &mut scratch)
                .expect("patches are never empty");
            scores.push(PatchScore {
                row,
                col,
                roi,
                delta_e: delta_e(rgb_to_lab(med, system), bg_lab),
            });
        }
    }
    Ok(PatchScores {
        patch,
        rows,
        cols,
        width: image.width(),
        height: image.height(),
        scores,
    })
}

/// Per-pixel attention in [0, 1], constant inside each patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PiaMap {
    width: usize,
    height: usize,
    patch: PatchSize,
    values: Vec<f64>,
}

impl PiaMap {
    /// Broadcasts patch scores to pixels and min-max normalizes. A flat score
    /// set (max == min) gives an all-zero map.
    pub fn from_scores(scores: &PatchScores) -> Self {
        let (lo, hi) = scores
            .scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.delta_e), hi.max(s.delta_e))
            });
        let range = hi - lo;
        let mut values = vec![0.0; scores.width * scores.height];
        if range > 0.0 {
            for s in &scores.scores {
                let v = (s.delta_e - lo) / range;
                for y in s.roi.y..s.roi.y + s.roi.height {
                    let start = y * scores.width + s.roi.x;
                    values[start..start + s.roi.width].fill(v);
                }
            }
        }
        Self {
            width: scores.width,
            height: scores.height,
            patch: scores.patch,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn patch(&self) -> PatchSize {
        self.patch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// `round(255 * value)` per pixel.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (255.0 * v).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

pub fn pia_map(image: &RgbImage, patch: PatchSize, system: &ColorSystem) -> Result<PiaMap> {
    Ok(PiaMap::from_scores(&patch_scores(image, patch, system)?))
}

/// Clean-substrate pixels: attention strictly below the percentile threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstrateMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    threshold: f64,
    percentile: f64,
}

impl SubstrateMask {
    pub fn all(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
            threshold: 0.0,
            percentile: 0.0,
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

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 255 for substrate, 0 elsewhere.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

/// Nearest-rank percentile: the `(floor(p/100 * N) + 1)`-th smallest value,
/// i.e. the smallest value with more than `p`% of the data at or below it.
pub fn nearest_rank_percentile(values: &[f64], percentile: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile / 100.0 * n as f64).floor() as usize + 1).min(n);
    sorted[rank - 1]
}

/// Thresholds `map` at its `percentile`-th value.
///
/// When the threshold equals the map minimum nothing is strictly below it; the
/// minimum-valued pixels are then taken as substrate (for an all-zero map this
/// marks everything as substrate).
pub fn substrate_mask(map: &PiaMap, percentile: f64) -> Result<SubstrateMask> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::Validation(format!(
            "percentile must lie in (0, 100), got {percentile}"
        )));
    }
    let tau = nearest_rank_percentile(&map.values, percentile);
    let min = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let bits = if tau <= min {
        map.values.iter().map(|&v| v <= min).collect()
    } else {
        map.values.iter().map(|&v| v < tau).collect()
    };
    Ok(SubstrateMask {
        width: map.width,
        height: map.height,
        bits,
        threshold: tau,
        percentile,
    })
}
