#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synthflake::colorimetry::srgb_decode_channel;
use synthflake::synthesis::SubstrateModel;
use synthflake::{
    default_data_dir, ColorSystem, DispersionTable, Layer, LayerStack, LinearRgb, MaterialLibrary,
    RgbImage, SpectralGrid,
};

pub fn library() -> MaterialLibrary {
    MaterialLibrary::open(default_data_dir().join("materials")).unwrap()
}

pub fn system_d65() -> ColorSystem {
    ColorSystem::load(
        default_data_dir().join("color_system_srgb_d65.json"),
        SpectralGrid::visible(),
    )
    .unwrap()
}

pub fn system_e() -> ColorSystem {
    ColorSystem::load(
        default_data_dir().join("color_system_srgb_e.json"),
        SpectralGrid::visible(),
    )
    .unwrap()
}

pub fn substrate(lib: &MaterialLibrary) -> SubstrateModel {
    SubstrateModel::from_library(lib, 180.0, SpectralGrid::visible()).unwrap()
}

pub fn constant(id: &str, n: Complex64) -> Arc<DispersionTable> {
    Arc::new(DispersionTable::constant(id, n, 300.0, 1000.0).unwrap())
}

/// Effective reflection coefficient built from the bottom interface up.
pub fn airy_r(indices: &[Complex64], thicknesses: &[f64], lambda_nm: f64) -> Complex64 {
    let m = indices.len();
    let fr = |a: Complex64, b: Complex64| (a - b) / (a + b);
    let mut r = fr(indices[m - 2], indices[m - 1]);
    for j in (0..thicknesses.len()).rev() {
        let n = indices[j + 1];
        let phase = (Complex64::i() * 4.0 * PI * n * thicknesses[j] / lambda_nm).exp();
        let r01 = fr(indices[j], n);
        r = (r01 + r * phase) / (1.0 + r01 * r * phase);
    }
    r
}

pub fn airy_reflectance(indices: &[Complex64], thicknesses: &[f64], lambda_nm: f64) -> f64 {
    airy_r(indices, thicknesses, lambda_nm).norm_sqr()
}

pub struct RandomStack {
    pub stack: LayerStack,
    pub indices: Vec<Complex64>,
    pub thicknesses: Vec<f64>,
}

/// Constant-index stack with `layers` layers; `lossy` adds k in [0, 2].
pub fn random_stack<R: Rng>(rng: &mut R, layers: usize, lossy: bool) -> RandomStack {
    let idx = |rng: &mut R, i: usize| {
        let n = rng.random_range(1.0..4.5);
        let k = if lossy && i > 0 { rng.random_range(0.0..2.0) } else { 0.0 };
        Complex64::new(n, k)
    };
    let indices: Vec<Complex64> = (0..layers + 2).map(|i| idx(rng, i)).collect();
    let thicknesses: Vec<f64> = (0..layers).map(|_| rng.random_range(1.0..500.0)).collect();
    let tables: Vec<_> = indices
        .iter()
        .enumerate()
        .map(|(i, &n)| constant(&format!("m{i}"), n))
        .collect();
    let layer_list = (0..layers)
        .map(|l| Layer::new(tables[l + 1].clone(), thicknesses[l]).unwrap())
        .collect();
    RandomStack {
        stack: LayerStack::new(tables[0].clone(), layer_list, tables[layers + 1].clone()),
        indices,
        thicknesses,
    }
}

/// Riemann-sum colour of a reflectance sampled on `system`'s grid, written
/// out from the colour-system definition: per-channel weights scaled to the
/// white point, matrix rows scaled so the white point maps to unit RGB.
pub fn riemann_rgb(reflectance: &[f64], system: &ColorSystem) -> ([f64; 3], [f64; 3]) {
    let white = system.white_point().to_array();
    let mut xyz = [0.0; 3];
    for c in 0..3 {
        let raw: Vec<f64> = system.cmf()[c]
            .values()
            .iter()
            .zip(system.illuminant().values())
            .map(|(a, b)| a * b)
            .collect();
        let total: f64 = raw.iter().sum();
        xyz[c] = raw.iter().zip(reflectance).map(|(w, r)| w * r).sum::<f64>() * white[c] / total;
    }
    let m = system.xyz_to_rgb_matrix();
    let mut rgb = [0.0; 3];
    for i in 0..3 {
        rgb[i] = (m[i][0] * xyz[0] + m[i][1] * xyz[1] + m[i][2] * xyz[2]).clamp(0.0, 1.0);
    }
    (xyz, rgb)
}

/// Reference micrograph: flat colour with a mild gradient and seeded noise,
/// already on the 8-bit sRGB lattice.
pub fn noisy_reference(width: usize, height: usize, color: LinearRgb, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = synthflake::colorimetry::srgb_encode(color);
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let shade = 1.5 * ((x + y) as f64 / (width + height) as f64 - 0.5);
            for b in base {
                let v = b + shade + rng.random_range(-1.5..1.5);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_srgb8(width, height, &data).unwrap()
}

/// Random 8-bit image decoded to linear RGB.
pub fn random_image(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u8> = (0..width * height * 3).map(|_| rng.random()).collect();
    RgbImage::from_srgb8(width, height, &data).unwrap()
}

pub fn decode8(v: u8) -> f64 {
    srgb_decode_channel(f64::from(v))
}

/// Lower median by sorting.
pub fn sort_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}
