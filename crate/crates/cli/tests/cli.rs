use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use synthflake::colorimetry::{delta_e, rgb_to_lab};
use synthflake::export::{parse_jsonl, validate_qa};
use synthflake::image::{load_png, save_png_rgb16, save_png_rgb8};
use synthflake::optics::reflectance_spectrum;
use synthflake::pia::{pia_map, PatchSize};
use synthflake::synthesis::{stack_color, substrate_color, SubstrateModel};
use synthflake::{
    default_data_dir, CocoDataset, ColorSystem, LinearRgb, MaterialLibrary, RgbImage, SpectralGrid,
};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthflake"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Lib {
    lib: MaterialLibrary,
    sys: ColorSystem,
    model: SubstrateModel,
}

fn lib() -> Lib {
    let lib = MaterialLibrary::open(default_data_dir().join("materials")).unwrap();
    let sys = ColorSystem::load(
        default_data_dir().join("color_system_srgb_d65.json"),
        SpectralGrid::visible(),
    )
    .unwrap();
    let model = SubstrateModel::from_library(&lib, 180.0, SpectralGrid::visible()).unwrap();
    Lib { lib, sys, model }
}

fn read_csv(path: &Path) -> Vec<(f64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("wavelength_nm,R"));
    lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect()
}

/// Value after `label` on the matching report line.
fn field(report: &str, line: &str, label: &str) -> Vec<f64> {
    let l = report.lines().find(|l| l.starts_with(line)).unwrap();
    let rest = match label {
        "" => &l[line.len()..],
        _ => &l[l.find(label).unwrap() + label.len()..],
    };
    rest.split_whitespace()
        .map_while(|t| t.parse::<f64>().ok())
        .collect()
}

fn gray(path: &Path) -> image::GrayImage {
    image::open(path).unwrap().to_luma8()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let garbage = dir.path().join("garbage.png");
    fs::write(&garbage, b"not a png").unwrap();

    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["spectrum", "--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["bogus"])), 1);
    assert_eq!(code(&run(&["spectrum", "--material", "mos2", "--out", s(&out), "--frobnicate"])), 1);
    assert_eq!(code(&run(&["spectrum", "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["spectrum", "--material", "mos2", "--layers", "x", "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["color", "--material", "mos2", "--gain", "1,2"])), 1);
    assert_eq!(code(&run(&["pia", s(&garbage), "--out", s(&out), "--roi", "1,2,3"])), 1);

    assert_eq!(code(&run(&["spectrum", "--material", "unobtainium", "--out", s(&out)])), 2);
    assert!(!out.exists());
    assert_eq!(code(&run(&["spectrum", "--material", "mos2", "--samples", "1", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["spectrum", "--material", "mos2", "--oxide-nm=-5", "--out", s(&out)])), 2);
    let nowhere = dir.path().join("missing/r.csv");
    assert_eq!(code(&run(&["spectrum", "--material", "mos2", "--out", s(&nowhere)])), 2);
    assert_eq!(code(&run(&["color", "--material", "mos2", "--gain", "1,0,1"])), 2);
    assert_eq!(code(&run(&["pia", s(&garbage), "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["pia", "/no/such.png", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["calibrate", "--reference", s(&garbage)])), 2);
    assert_eq!(code(&run(&["dataset", "/no/such.json"])), 2);
    assert_eq!(
        code(&run(&["color", "--material", "mos2", "--data-dir", s(dir.path())])),
        2
    );
}

#[test]
fn spectrum_of_bare_substrate() {
    let l = lib();
    let dir = tempfile::tempdir().unwrap();
    let bare = l.model.bare_stack().unwrap();
    let want = reflectance_spectrum(&bare, SpectralGrid::visible()).unwrap();
    for extra in [&["--material", "sio2_only"][..], &["--material", "mos2", "--layers", "0"][..]] {
        let out = dir.path().join("bare.csv");
        let mut args = vec!["spectrum", "--oxide-nm", "180", "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let got = read_csv(&out);
        assert_eq!(got.len(), 31);
        for ((wl, r), (wwl, wr)) in got.iter().zip(want.iter()) {
            assert_eq!(*wl, wwl);
            assert_eq!(*r, wr);
        }
    }
}

#[test]
fn spectrum_row_count_follows_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("two.csv");
    let o = run(&["spectrum", "--material", "graphene", "--samples", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let rows = read_csv(&out);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![400.0, 700.0]);
    assert!(stdout(&o).starts_with("wrote 2 rows"));
}

#[test]
fn spectrum_matches_library() {
    let l = lib();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mos2.csv");
    assert_eq!(code(&run(&["spectrum", "--material", "mos2", "--out", s(&out)])), 0);
    let stack = l.model.flake_stack(&l.lib.get("mos2").unwrap(), 0.65).unwrap();
    let want = reflectance_spectrum(&stack, SpectralGrid::visible()).unwrap();
    let got = read_csv(&out);
    assert_eq!(got.len(), want.values().len());
    for ((wl, r), (wwl, wr)) in got.iter().zip(want.iter()) {
        assert_eq!((*wl, *r), (wwl, wr));
    }
}

#[test]
fn colour_of_vanishing_flake_is_the_substrate() {
    let o = run(&["color", "--material", "wse2", "--thickness-nm", "1e-9"]);
    assert_eq!(code(&o), 0);
    let de = field(&stdout(&o), "delta_e", "")[0];
    assert!(de < 0.1, "{de}");
}

#[test]
fn colour_report_is_deterministic_and_matches_library() {
    let l = lib();
    let args = ["color", "--material", "mos2", "--layers", "3"];
    let a = stdout(&run(&args));
    assert_eq!(a, stdout(&run(&args)));

    let stack = l.model.flake_stack(&l.lib.get("mos2").unwrap(), 3.0 * 0.65).unwrap();
    let flake = stack_color(&stack, SpectralGrid::visible(), &l.sys).unwrap();
    let bare = substrate_color(&l.model, &l.sys).unwrap();
    let close = |got: Vec<f64>, want: [f64; 3], tol: f64| {
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() <= tol, "{got:?} vs {want:?}");
        }
    };
    close(field(&a, "flake", "linear"), flake.to_array(), 5e-7);
    close(field(&a, "substrate", "linear"), bare.to_array(), 5e-7);
    let lab = rgb_to_lab(flake, &l.sys);
    close(field(&a, "flake", "lab"), [lab.l, lab.a, lab.b], 5e-5);
    let de = delta_e(lab, rgb_to_lab(bare, &l.sys));
    assert!((field(&a, "delta_e", "")[0] - de).abs() <= 5e-7);
    let [r, g, b] = synthflake::colorimetry::srgb_encode_u8(flake);
    assert!(a.contains(&format!("#{r:02x}{g:02x}{b:02x}")));

    let gained = stdout(&run(&["color", "--material", "mos2", "--layers", "3", "--gain", "1.2,1,0.8"]));
    close(field(&gained, "gain", ""), [1.2, 1.0, 0.8], 0.0);
    close(
        field(&gained, "flake", "linear"),
        [flake.r * 1.2, flake.g, flake.b * 0.8],
        5e-7,
    );
}

#[test]
fn pia_of_constant_image_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.png");
    save_png_rgb8(&input, &RgbImage::filled(100, 60, LinearRgb::new(0.3, 0.4, 0.35))).unwrap();
    let map = dir.path().join("map.png");
    let o = run(&["pia", s(&input), "--out", s(&map)]);
    assert_eq!(code(&o), 0);
    let img = gray(&map);
    assert_eq!(img.dimensions(), (100, 60));
    assert!(img.pixels().all(|p| p.0[0] == 0));
}

#[test]
fn pia_map_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let sample = default_data_dir().join("samples/sample_micrograph.png");
    let (map, mask, csv) = (dir.path().join("m.png"), dir.path().join("k.png"), dir.path().join("p.csv"));
    let o = run(&[
        "pia", s(&sample), "--patch", "14", "--out", s(&map), "--mask-out", s(&mask), "--csv-out", s(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let l = lib();
    let want = pia_map(&load_png(&sample).unwrap(), PatchSize::square(14), &l.sys).unwrap();
    let got = gray(&map);
    assert_eq!(got.dimensions(), (448, 448));
    for (x, y, p) in got.enumerate_pixels() {
        let v = want.get(x as usize, y as usize);
        assert_eq!(p.0[0], (255.0 * v).round() as u8);
    }

    let mut blocks = std::collections::BTreeSet::new();
    for by in 0..32 {
        for bx in 0..32 {
            let v = got.get_pixel(bx * 14, by * 14).0[0];
            for dy in 0..14 {
                for dx in 0..14 {
                    assert_eq!(got.get_pixel(bx * 14 + dx, by * 14 + dy).0[0], v);
                }
            }
            blocks.insert((by, bx));
        }
    }
    assert_eq!(blocks.len(), 32 * 32);
    assert!(stdout(&o).starts_with("32x32 patches"));

    let rows = fs::read_to_string(&csv).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next(), Some("patch_row,patch_col,delta_e,normalized"));
    assert_eq!(lines.count(), 32 * 32);
    let m = gray(&mask);
    assert!(m.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
}

#[test]
fn calibrate_self_rendered_reference_gives_unit_gain() {
    let l = lib();
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref16.png");
    let c0 = substrate_color(&l.model, &l.sys).unwrap();
    save_png_rgb16(&reference, &RgbImage::filled(40, 30, c0)).unwrap();
    let o = run(&["calibrate", "--reference", s(&reference)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("gain      1.000 1.000 1.000\n"), "{}", stdout(&o));
}

#[test]
fn calibrate_normalized_gain_has_unit_mean() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("tinted.png");
    save_png_rgb8(&reference, &RgbImage::filled(20, 20, LinearRgb::new(0.5, 0.3, 0.2))).unwrap();
    let out = stdout(&run(&["calibrate", "--reference", s(&reference), "--normalize"]));
    let g = field(&out, "gain_full", "");
    assert!(((g[0] + g[1] + g[2]) / 3.0 - 1.0).abs() < 1e-6, "{g:?}");
    let short = field(&out, "gain ", "");
    for k in 0..3 {
        assert!((short[k] - g[k]).abs() <= 5e-4);
    }
}

#[test]
fn calibrate_shipped_sample() {
    let sample = default_data_dir().join("samples/sample_micrograph.png");
    let o = run(&["calibrate", "--reference", s(&sample)]);
    assert_eq!(code(&o), 0);
    let g = field(&stdout(&o), "gain_full", "");
    assert_eq!(g.len(), 3);
    assert!(g.iter().all(|v| v.is_finite() && *v > 0.0));
}

fn write_config(dir: &Path, n_images: usize, n_flakes: usize, reference: &RgbImage) -> PathBuf {
    let refs = dir.join("refs");
    fs::create_dir_all(&refs).unwrap();
    save_png_rgb8(refs.join("ref.png"), reference).unwrap();
    let cfg = serde_json::json!({
        "materials": [{"id": "graphene"}, {"id": "mos2"}, {"id": "wse2"}],
        "n_flakes": n_flakes,
        "n_images": n_images,
        "seed": 3,
        "reference_dir": "refs",
        "output_dir": "out"
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut todo = vec![root.to_path_buf()];
    while let Some(d) = todo.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                todo.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn micrograph() -> RgbImage {
    load_png(default_data_dir().join("samples/sample_micrograph.png")).unwrap()
}

#[test]
fn dataset_without_flakes_copies_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let reference = micrograph();
    let cfg = write_config(dir.path(), 1, 0, &reference);
    let o = run(&["dataset", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    assert_eq!(
        fs::read(out.join("images/scene_00000.png")).unwrap(),
        fs::read(dir.path().join("refs/ref.png")).unwrap()
    );
    let coco = CocoDataset::from_json(&fs::read_to_string(out.join("annotations.json")).unwrap()).unwrap();
    assert_eq!(coco.images.len(), 1);
    assert!(coco.annotations.is_empty());
    assert!(gray(&out.join("masks/scene_00000.png")).pixels().all(|p| p.0[0] == 0));
    assert!(out.join("run_manifest.json").is_file());
}

#[test]
fn dataset_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 3, 12, &micrograph());
    assert_eq!(code(&run(&["dataset", s(&cfg)])), 0);
    let first = files(&dir.path().join("out"));
    fs::remove_dir_all(dir.path().join("out")).unwrap();
    assert_eq!(code(&run(&["dataset", s(&cfg)])), 0);
    let second = files(&dir.path().join("out"));
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    assert!(first == second);
    assert_eq!(first.len(), 3 + 3 + 3);
}

#[test]
fn dataset_annotations_and_qa_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10, 30, &micrograph());
    let o = run(&["dataset", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let coco = CocoDataset::from_json(&fs::read_to_string(out.join("annotations.json")).unwrap()).unwrap();
    assert_eq!(coco.images.len(), 10);
    assert!(coco.annotations.len() > 200);
    let qa = parse_jsonl(&fs::read_to_string(out.join("instructions.jsonl")).unwrap()).unwrap();
    assert_eq!(qa.len(), 30);
    validate_qa(&qa, &coco).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 10);
}

#[test]
fn dataset_config_errors_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 2, 5, &micrograph());
    let text = fs::read_to_string(&cfg).unwrap();
    let cases = [
        text.replace("\"graphene\"", "\"unobtainium\""),
        text.replace("\"n_images\": 2", "\"n_images\": 2, \"surprise\": 1"),
        text.replace("\"refs\"", "\"no_refs_here\""),
        text.replace("\"n_flakes\": 5", "\"n_flakes\": -5"),
        "{ not json".to_string(),
    ];
    for bad in cases {
        fs::write(&cfg, &bad).unwrap();
        let o = run(&["dataset", s(&cfg)]);
        assert_eq!(code(&o), 2, "{bad}");
        assert!(!dir.path().join("out").exists(), "{bad}");
    }
}
