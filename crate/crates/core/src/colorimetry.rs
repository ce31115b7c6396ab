//! Spectrum → XYZ → linear RGB → CIELAB, the sRGB transfer curve, CIE76
//! colour difference, and diagonal white balance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RgbImage, Roi};
use crate::materials::{SpectralCurve, SpectralGrid, SpectralTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Xyz {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Xyz {
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            z: v[2],
        }
    }

    /// `(x, y)` chromaticity coordinates.
    pub fn chromaticity(self) -> (f64, f64) {
        let s = self.x + self.y + self.z;
        (self.x / s, self.y / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl LinearRgb {
    pub const BLACK: Self = Self::new(0.0, 0.0, 0.0);
    pub const WHITE: Self = Self::new(1.0, 1.0, 1.0);

    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn clipped(self) -> Self {
        Self::from_array(self.to_array().map(|v| v.clamp(0.0, 1.0)))
    }

    /// `#rrggbb` of the 8-bit sRGB encoding.
    pub fn hex(self) -> String {
        let [r, g, b] = srgb_encode_u8(self);
        format!("#{r:02x}{g:02x}{b:02x}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn mat_inverse(m: &Mat3) -> Option<Mat3> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    if !det.is_finite() || det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        [
            cof(1, 2, 1, 2) * inv_det,
            -cof(0, 2, 1, 2) * inv_det,
            cof(0, 1, 1, 2) * inv_det,
        ],
        [
            -cof(1, 2, 0, 2) * inv_det,
            cof(0, 2, 0, 2) * inv_det,
            -cof(0, 1, 0, 2) * inv_det,
        ],
        [
            cof(1, 2, 0, 1) * inv_det,
            -cof(0, 2, 0, 1) * inv_det,
            cof(0, 1, 0, 1) * inv_det,
        ],
    ])
}

/// On-disk description of a colour system. Paths are relative to the JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColorSystemFile {
    pub cmf_path: String,
    pub illuminant_path: String,
    /// Row-major 3x3.
    pub xyz_to_rgb: Vec<f64>,
    pub white_point: Vec<f64>,
}

/// Observer, illuminant and RGB primaries bound to one wavelength grid.
///
/// The discretized `cmf * illuminant` weights of each channel are scaled so
/// that a perfect reflector lands exactly on the white point (Y = 1), and the
/// rows of `xyz_to_rgb` are scaled so the white point maps to RGB (1, 1, 1).
#[derive(Debug, Clone)]
pub struct ColorSystem {
    grid: SpectralGrid,
    cmf: [SpectralCurve; 3],
    illuminant: SpectralCurve,
    weights: [Vec<f64>; 3],
    xyz_to_rgb: Mat3,
    rgb_to_xyz: Mat3,
    white_point: Xyz,
}

impl ColorSystem {
    pub fn new(
        cmf: &SpectralTable,
        illuminant: &SpectralTable,
        xyz_to_rgb: [f64; 9],
        white_point: [f64; 3],
        grid: SpectralGrid,
    ) -> Result<Self> {
        if cmf.column_count() != 3 || illuminant.column_count() != 1 {
            return Err(Error::Shape(
                "expected 3 colour-matching columns and 1 illuminant column".into(),
            ));
        }
        if white_point.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Validation(format!(
                "white point must be strictly positive, got {white_point:?}"
            )));
        }
        let white = white_point.map(|w| w / white_point[1]);
        let cmf = [
            cmf.sample(0, grid)?,
            cmf.sample(1, grid)?,
            cmf.sample(2, grid)?,
        ];
        let illuminant = illuminant.sample(0, grid)?;
        let mut weights: [Vec<f64>; 3] = Default::default();
        for c in 0..3 {
            let raw: Vec<f64> = cmf[c]
                .values()
                .iter()
                .zip(illuminant.values())
                .map(|(s, i)| s * i)
                .collect();
            let total: f64 = raw.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Validation(format!(
                    "channel {c} has zero response over {}-{} nm",
                    grid.min_nm(),
                    grid.max_nm()
                )));
            }
            let scale = white[c] / total;
            weights[c] = raw.into_iter().map(|w| w * scale).collect();
        }

        let mut m: Mat3 = [
            [xyz_to_rgb[0], xyz_to_rgb[1], xyz_to_rgb[2]],
            [xyz_to_rgb[3], xyz_to_rgb[4], xyz_to_rgb[5]],
            [xyz_to_rgb[6], xyz_to_rgb[7], xyz_to_rgb[8]],
        ];
        let mapped_white = mat_vec(&m, white);
        for (row, w) in m.iter_mut().zip(mapped_white) {
            if !(w > 0.0) {
                return Err(Error::Validation(
                    "xyz_to_rgb must map the white point to positive RGB".into(),
                ));
            }
            row.iter_mut().for_each(|v| *v /= w);
        }
        let rgb_to_xyz = mat_inverse(&m)
            .ok_or_else(|| Error::Validation("xyz_to_rgb matrix is singular".into()))?;

        Ok(Self {
            grid,
            cmf,
            illuminant,
            weights,
            xyz_to_rgb: m,
            rgb_to_xyz,
            white_point: Xyz::from_array(white),
        })
    }

    /// Loads a colour-system JSON file and binds it to `grid`.
    pub fn load(path: impl AsRef<Path>, grid: SpectralGrid) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ColorSystemFile = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        let matrix: [f64; 9] = file.xyz_to_rgb.as_slice().try_into().map_err(|_| {
            Error::parse(path.display().to_string(), "xyz_to_rgb needs 9 numbers")
        })?;
        let white: [f64; 3] = file.white_point.as_slice().try_into().map_err(|_| {
            Error::parse(path.display().to_string(), "white_point needs 3 numbers")
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let cmf = SpectralTable::load_cmf(base.join(&file.cmf_path))?;
        let illum = SpectralTable::load_illuminant(base.join(&file.illuminant_path))?;
        Self::new(&cmf, &illum, matrix, white, grid)
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn cmf(&self) -> &[SpectralCurve; 3] {
        &self.cmf
    }

    pub fn illuminant(&self) -> &SpectralCurve {
        &self.illuminant
    }

    pub fn white_point(&self) -> Xyz {
        self.white_point
    }

    /// Effective row-major XYZ → RGB matrix after white normalization.
    pub fn xyz_to_rgb_matrix(&self) -> [[f64; 3]; 3] {
        self.xyz_to_rgb
    }

    /// Per-channel weights applied to a reflectance sample at each grid point.
    pub fn channel_weights(&self) -> &[Vec<f64>; 3] {
        &self.weights
    }
}

/// Tristimulus values of a reflectance spectrum under the system illuminant.
pub fn spectrum_to_xyz(reflectance: &SpectralCurve, system: &ColorSystem) -> Result<Xyz> {
    if reflectance.grid() != system.grid() {
        return Err(Error::Shape(format!(
            "spectrum grid {:?} differs from colour-system grid {:?}",
            reflectance.grid(),
            system.grid()
        )));
    }
    let acc = system.weights.each_ref().map(|w| {
        w.iter()
            .zip(reflectance.values())
            .map(|(w, r)| w * r)
            .sum::<f64>()
    });
    Ok(Xyz::from_array(acc))
}

/// Linear RGB (clipped to [0, 1]) and the number of channels that were out of
/// gamut by more than rounding noise.
pub fn xyz_to_linear_rgb(xyz: Xyz, system: &ColorSystem) -> (LinearRgb, u32) {
    const SLACK: f64 = 1e-12;
    let raw = mat_vec(&system.xyz_to_rgb, xyz.to_array());
    let clipped = raw
        .iter()
        .filter(|v| !(-SLACK..=1.0 + SLACK).contains(*v))
        .count() as u32;
    (LinearRgb::from_array(raw).clipped(), clipped)
}

/// Unclipped linear RGB → XYZ.
pub fn linear_rgb_to_xyz(rgb: LinearRgb, system: &ColorSystem) -> Xyz {
    Xyz::from_array(mat_vec(&system.rgb_to_xyz, rgb.to_array()))
}

/// sRGB transfer curve for one linear channel; input clamped to [0, 1],
/// output in [0, 255] and not quantized.
pub fn srgb_encode_channel(linear: f64) -> f64 {
    let v = linear.clamp(0.0, 1.0);
    let e = if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    };
    255.0 * e
}

/// Inverse of [`srgb_encode_channel`]; input in [0, 255].
pub fn srgb_decode_channel(display: f64) -> f64 {
    let v = (display / 255.0).clamp(0.0, 1.0);
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn srgb_encode(rgb: LinearRgb) -> [f64; 3] {
    rgb.to_array().map(srgb_encode_channel)
}

pub fn srgb_decode(display: [f64; 3]) -> LinearRgb {
    LinearRgb::from_array(display.map(srgb_decode_channel))
}

pub fn srgb_encode_u8(rgb: LinearRgb) -> [u8; 3] {
    rgb.to_array().map(crate::image::quantize8)
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

pub fn xyz_to_lab(xyz: Xyz, white: Xyz) -> Lab {
    let fx = lab_f(xyz.x / white.x);
    let fy = lab_f(xyz.y / white.y);
    let fz = lab_f(xyz.z / white.z);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// CIELAB of a linear RGB colour, relative to the system white point.
pub fn rgb_to_lab(rgb: LinearRgb, system: &ColorSystem) -> Lab {
    xyz_to_lab(linear_rgb_to_xyz(rgb, system), system.white_point)
}

/// CIE76 colour difference.
pub fn delta_e(c1: Lab, c2: Lab) -> f64 {
    let dl = c1.l - c2.l;
    let da = c1.a - c2.a;
    let db = c1.b - c2.b;
    (dl * dl + da * da + db * db).sqrt()
}

/// Per-channel multiplier, all components strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteBalanceGain([f64; 3]);

impl WhiteBalanceGain {
    pub const IDENTITY: Self = Self([1.0, 1.0, 1.0]);

    pub fn new(g: [f64; 3]) -> Result<Self> {
        if g.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "white-balance gains must be finite and > 0, got {g:?}"
            )));
        }
        Ok(Self(g))
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }

    /// Multiplies each channel by its gain, then clips to [0, 1].
    pub fn apply(&self, c: LinearRgb) -> LinearRgb {
        let v = c.to_array();
        LinearRgb::from_array([0, 1, 2].map(|k| (v[k] * self.0[k]).clamp(0.0, 1.0)))
    }

    pub fn apply_image(&self, img: &mut RgbImage) {
        for px in img.pixels_mut() {
            *px = self.apply(LinearRgb::from_array(*px)).to_array();
        }
    }
}

/// `c_ref / c_0` per channel, optionally rescaled to unit mean.
pub fn wb_gain(c_ref: LinearRgb, c_0: LinearRgb, normalize: bool) -> Result<WhiteBalanceGain> {
    let r = c_ref.to_array();
    let z = c_0.to_array();
    if z.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!(
            "modeled colour has a non-positive channel: {z:?}"
        )));
    }
    let mut g = [r[0] / z[0], r[1] / z[1], r[2] / z[2]];
    if normalize {
        let mean = (g[0] + g[1] + g[2]) / 3.0;
        if mean > 0.0 {
            g = g.map(|v| v / mean);
        }
    }
    WhiteBalanceGain::new(g)
}

pub fn apply_wb(c: LinearRgb, gain: &WhiteBalanceGain) -> LinearRgb {
    gain.apply(c)
}

pub fn apply_wb_image(img: &RgbImage, gain: &WhiteBalanceGain) -> RgbImage {
    let mut out = img.clone();
    gain.apply_image(&mut out);
    out
}

/// Per-channel lower median of a pixel set. `scratch` is reused between calls.
pub(crate) fn median_rgb<I>(pixels: I, scratch: &mut [Vec<f64>; 3]) -> Option<LinearRgb>
where
    I: IntoIterator<Item = [f64; 3]>,
{
    scratch.iter_mut().for_each(Vec::clear);
    for px in pixels {
        for c in 0..3 {
            scratch[c].push(px[c]);
        }
    }
    let n = scratch[0].len();
    if n == 0 {
        return None;
    }
    let mid = (n - 1) / 2;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let (_, m, _) = scratch[c].select_nth_unstable_by(mid, f64::total_cmp);
        out[c] = *m;
    }
    Some(LinearRgb::from_array(out))
}

/// Per-channel median over all pixels; even counts take the lower median.
pub fn estimate_background(image: &RgbImage) -> Result<LinearRgb> {
    estimate_background_roi(image, image.full_roi())
}

pub fn estimate_background_roi(image: &RgbImage, roi: Roi) -> Result<LinearRgb> {
    if !image.contains_roi(roi) {
        return Err(Error::Domain(format!(
            "region {roi:?} exceeds {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let mut scratch = Default::default();
    median_rgb(image.region(roi), &mut scratch)
        .ok_or_else(|| Error::Domain("background of an empty image".into()))
}
