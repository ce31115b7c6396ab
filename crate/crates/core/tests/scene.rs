mod common;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use synthflake::colorimetry::{delta_e, rgb_to_lab, srgb_encode_u8, WhiteBalanceGain};
use synthflake::image::encode_png_rgb8;
use synthflake::optics::contrast_spectrum;
use synthflake::synthesis::{
    flake_color, sample_thickness, substrate_color, synthesize_scene, wb_from_reference,
    MaterialEntry, SceneOutput, SubstrateModel, WbMode,
};
use synthflake::{
    ColorSystem, Layer, LayerStack, LinearRgb, MaterialLibrary, RgbImage, SpectralGrid,
    SynthesisConfig, SynthesisPlan,
};

use common::*;

struct Fixture {
    lib: MaterialLibrary,
    sys: ColorSystem,
    model: SubstrateModel,
}

fn fixture() -> Fixture {
    let lib = library();
    let model = substrate(&lib);
    Fixture {
        lib,
        sys: system_d65(),
        model,
    }
}

fn entry(id: &str) -> MaterialEntry {
    MaterialEntry {
        id: id.into(),
        weight: 1.0,
        monolayer_nm: None,
        layer_distribution: None,
    }
}

fn plan(f: &Fixture, n_flakes: usize, wb: WbMode) -> SynthesisPlan {
    let mut cfg = SynthesisConfig::with_materials(
        ["graphene", "mos2", "wse2", "hbn"].map(entry).to_vec(),
    );
    cfg.n_flakes = n_flakes;
    cfg.wb_mode = wb;
    cfg.resolve(&f.lib).unwrap()
}

fn reference(f: &Fixture, seed: u64) -> RgbImage {
    let c0 = substrate_color(&f.model, &f.sys).unwrap();
    let tinted = LinearRgb::new(c0.r * 1.1, c0.g, c0.b * 0.9);
    noisy_reference(448, 448, tinted, seed)
}

fn flake_pixels(out: &SceneOutput) -> Vec<bool> {
    let w = out.image.width();
    let mut covered = vec![false; w * out.image.height()];
    for fl in &out.flakes {
        for (px, py) in fl.mask.set_pixels() {
            covered[(fl.y + py) * w + fl.x + px] = true;
        }
    }
    covered
}

#[test]
fn no_flakes_reproduces_the_reference() {
    let f = fixture();
    let r = reference(&f, 1);
    let out = synthesize_scene(&r, &plan(&f, 0, WbMode::FromReference), &f.model, &f.sys, 5).unwrap();
    assert!(out.flakes.is_empty());
    assert_eq!(out.image, r);
    assert_eq!(encode_png_rgb8(&out.image).unwrap(), encode_png_rgb8(&r).unwrap());
}

#[test]
fn same_seed_same_scene() {
    let f = fixture();
    let r = reference(&f, 2);
    let p = plan(&f, 30, WbMode::FromReference);
    let a = synthesize_scene(&r, &p, &f.model, &f.sys, 99).unwrap();
    let b = synthesize_scene(&r, &p, &f.model, &f.sys, 99).unwrap();
    assert_eq!(a.flakes, b.flakes);
    assert_eq!(a.image.to_srgb8(), b.image.to_srgb8());
    let c = synthesize_scene(&r, &p, &f.model, &f.sys, 100).unwrap();
    assert_ne!(a.flakes, c.flakes);
}

#[test]
fn flake_interiors_carry_their_recorded_colour() {
    let f = fixture();
    let r = reference(&f, 3);
    let out = synthesize_scene(&r, &plan(&f, 30, WbMode::FromReference), &f.model, &f.sys, 7).unwrap();
    assert!(out.flakes.len() >= 20);
    let bytes = out.image.to_srgb8();
    let w = out.image.width();
    for fl in &out.flakes {
        let want = srgb_encode_u8(fl.color);
        for c in 0..3 {
            let vals: Vec<f64> = fl
                .mask
                .set_pixels()
                .map(|(px, py)| f64::from(bytes[((fl.y + py) * w + fl.x + px) * 3 + c]))
                .collect();
            let med = sort_median(vals);
            assert!((med - f64::from(want[c])).abs() <= 1.0, "channel {c}: {med} vs {}", want[c]);
        }
    }
}

#[test]
fn pixels_outside_flakes_are_untouched() {
    let f = fixture();
    let r = reference(&f, 4);
    let gain = [1.05, 0.97, 1.02];
    for wb in [WbMode::FromReference, WbMode::None, WbMode::Gain(gain)] {
        let out = synthesize_scene(&r, &plan(&f, 30, wb), &f.model, &f.sys, 11).unwrap();
        let expect = match wb {
            WbMode::Gain(g) => synthflake::colorimetry::apply_wb_image(&r, &WhiteBalanceGain::new(g).unwrap()),
            _ => r.clone(),
        };
        let covered = flake_pixels(&out);
        for (i, px) in out.image.pixels().iter().enumerate() {
            if !covered[i] {
                assert_eq!(*px, expect.pixels()[i]);
            }
        }
        for (i, c) in covered.iter().enumerate() {
            if *c {
                assert!(out.substrate.bits()[i], "flake pixel off the substrate mask");
            }
        }
    }
}

#[test]
fn crowded_scenes_degrade_instead_of_failing() {
    let f = fixture();
    let r = reference(&f, 5);
    let mut cfg = SynthesisConfig::with_materials(vec![entry("mos2")]);
    cfg.n_flakes = 255;
    cfg.flake_px = [60, 120];
    cfg.max_retries = 5;
    let p = cfg.resolve(&f.lib).unwrap();
    let out = synthesize_scene(&r, &p, &f.model, &f.sys, 1).unwrap();
    assert!(out.skipped > 0);
    assert_eq!(out.flakes.len() + out.skipped, 255);
}

#[test]
fn two_point_layer_distribution_frequencies() {
    let f = fixture();
    let mut e = entry("mos2");
    e.layer_distribution = Some(BTreeMap::from([("1".into(), 0.5), ("2".into(), 0.5)]));
    let p = SynthesisConfig::with_materials(vec![e]).resolve(&f.lib).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let ones = (0..n)
        .filter(|_| sample_thickness("mos2", &p, &mut rng).unwrap().0 == 1)
        .count() as f64;
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((ones - 5000.0).abs() <= 3.0 * sigma, "{ones}");
}

#[test]
fn unit_gain_and_vanishing_flake() {
    let f = fixture();
    let mos2 = f.lib.get("mos2").unwrap();
    let plain = flake_color(&f.model, &mos2, 0.65, &f.sys, None).unwrap();
    let unit = flake_color(&f.model, &mos2, 0.65, &f.sys, Some(&WhiteBalanceGain::IDENTITY)).unwrap();
    assert_eq!(plain, unit);
    let bare = substrate_color(&f.model, &f.sys).unwrap();
    for id in ["graphene", "mos2", "wte2", "hbn"] {
        let c = flake_color(&f.model, &f.lib.get(id).unwrap(), 1e-9, &f.sys, None).unwrap();
        for k in 0..3 {
            assert!((c.to_array()[k] - bare.to_array()[k]).abs() < 1e-4);
        }
    }
}

#[test]
fn reference_gain_roundtrip() {
    let f = fixture();
    let c0 = substrate_color(&f.model, &f.sys).unwrap();
    let flat = RgbImage::filled(64, 48, c0);
    let g = wb_from_reference(&flat, &f.model, &f.sys).unwrap().components();
    assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-6), "{g:?}");
    let g0 = [1.3, 0.8, 1.1];
    let tinted = RgbImage::filled(64, 48, LinearRgb::new(c0.r * g0[0], c0.g * g0[1], c0.b * g0[2]));
    let g = wb_from_reference(&tinted, &f.model, &f.sys).unwrap().components();
    for k in 0..3 {
        assert!((g[k] - g0[k]).abs() < 1e-6);
    }
}

#[test]
fn colour_is_continuous_in_thickness() {
    let f = fixture();
    for id in ["graphene", "hbn", "mos2", "mose2", "mowse2", "ws2", "wse2", "wte2"] {
        let table = f.lib.get(id).unwrap();
        let lab = |t: f64| rgb_to_lab(flake_color(&f.model, &table, t, &f.sys, None).unwrap(), &f.sys);
        let mut prev = lab(0.3);
        let mut worst: f64 = 0.0;
        for step in 1..=4970 {
            let t = 0.3 + 0.01 * f64::from(step);
            let cur = lab(t);
            worst = worst.max(delta_e(cur, prev));
            prev = cur;
        }
        assert!(worst < 1.0, "{id}: largest step dE = {worst}");
    }
}

#[test]
fn contrast_shrinks_with_oxide_mismatch() {
    let f = fixture();
    let grid = SpectralGrid::visible();
    let bare = f.model.bare_stack().unwrap();
    let extra = |d: f64| {
        let layers = vec![
            Layer::new(f.model.oxide.clone(), d).unwrap(),
            Layer::new(f.model.oxide.clone(), f.model.oxide_nm).unwrap(),
        ];
        LayerStack::new(f.model.air.clone(), layers, f.model.silicon.clone())
    };
    let mut prev: Option<Vec<f64>> = None;
    for d in [0.2, 0.1, 0.05, 0.025, 0.0125] {
        let c: Vec<f64> = contrast_spectrum(&extra(d), &bare, grid)
            .unwrap()
            .values()
            .iter()
            .map(|v| v.abs())
            .collect();
        if let Some(p) = &prev {
            for (a, b) in c.iter().zip(p) {
                assert!(a <= b, "{d} nm: {a} > {b}");
            }
        }
        prev = Some(c);
    }
}
