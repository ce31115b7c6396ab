use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use synthflake::colorimetry::{
    delta_e, estimate_background, rgb_to_lab, srgb_encode_u8, wb_gain, WhiteBalanceGain,
};
use synthflake::image::{load_png, save_png_gray8, write_atomic};
use synthflake::optics::reflectance_spectrum;
use synthflake::pia::{patch_scores_roi, substrate_mask, PatchSize, PiaMap};
use synthflake::synthesis::{stack_color, substrate_color, SubstrateModel};
use synthflake::{
    default_data_dir, ColorSystem, DatasetJob, Error, LayerStack, LinearRgb, MaterialLibrary, Roi,
    SpectralGrid,
};

/// Synthetic 2D-material microscopy data: thin-film spectra, flake colours,
/// attention maps, white-balance calibration and dataset generation.
#[derive(Debug, Parser)]
#[command(name = "synthflake", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reflectance spectrum of a flake on the oxide/silicon substrate, as CSV.
    Spectrum(SpectrumArgs),
    /// Rendered colour of a flake and of the bare substrate.
    Color(ColorArgs),
    /// Patch-wise attention map of a micrograph and its substrate mask.
    Pia(PiaArgs),
    /// White-balance gain of a reference micrograph against the modeled substrate.
    Calibrate(CalibrateArgs),
    /// Generate a dataset from a JSON config.
    Dataset(DatasetArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding `materials/` and the colour-system files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Colour-system JSON (default: sRGB/D65 from the data directory).
    #[arg(long)]
    color_system: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, default_value_t = 400.0)]
    min_nm: f64,
    #[arg(long, default_value_t = 700.0)]
    max_nm: f64,
    #[arg(long, default_value_t = 31)]
    samples: usize,
}

#[derive(Debug, Args)]
struct StackArgs {
    /// Flake material id, or `sio2_only` for the bare substrate.
    #[arg(long)]
    material: String,
    /// Number of layers; 0 gives the bare substrate.
    #[arg(long, default_value_t = 1)]
    layers: u32,
    /// Flake thickness in nm, overriding layers x monolayer thickness.
    #[arg(long)]
    thickness_nm: Option<f64>,
    #[arg(long, default_value_t = 180.0)]
    oxide_nm: f64,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ColorArgs {
    #[command(flatten)]
    stack: StackArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Explicit white-balance gain `r,g,b`.
    #[arg(long, value_parser = parse_triple, conflicts_with = "reference")]
    gain: Option<[f64; 3]>,
    /// Reference micrograph to derive the white-balance gain from.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Rescale the derived gain to unit mean.
    #[arg(long)]
    normalize: bool,
}

#[derive(Debug, Args)]
struct PiaArgs {
    /// Input micrograph (PNG).
    input: PathBuf,
    /// Patch side in pixels.
    #[arg(long, default_value_t = 14)]
    patch: usize,
    #[arg(long, default_value_t = 90.0)]
    percentile: f64,
    /// Grayscale attention map PNG.
    #[arg(long)]
    out: PathBuf,
    /// Substrate mask PNG (255 = substrate).
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Per-patch scores CSV.
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Background region `x,y,width,height` (default: whole image).
    #[arg(long, value_parser = parse_roi)]
    roi: Option<Roi>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Reference micrograph (PNG).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 180.0)]
    oxide_nm: f64,
    /// Rescale the gain to unit mean.
    #[arg(long)]
    normalize: bool,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Dataset config JSON.
    config: PathBuf,
    /// Default data directory when the config names none.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn parse_numbers<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_numbers::<3>(s)
}

fn parse_roi(s: &str) -> Result<Roi, String> {
    let v = parse_numbers::<4>(s)?;
    if v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
        return Err("roi values must be non-negative integers".into());
    }
    Ok(Roi {
        x: v[0] as usize,
        y: v[1] as usize,
        width: v[2] as usize,
        height: v[3] as usize,
    })
}

struct Env {
    library: MaterialLibrary,
    system: ColorSystem,
    model: SubstrateModel,
    grid: SpectralGrid,
}

fn data_dir(args: &DataArgs) -> PathBuf {
    args.data_dir.clone().unwrap_or_else(default_data_dir)
}

fn open_env(data: &DataArgs, grid: &GridArgs, oxide_nm: f64) -> synthflake::Result<Env> {
    let dir = data_dir(data);
    let grid = SpectralGrid::new(grid.min_nm, grid.max_nm, grid.samples)?;
    if !oxide_nm.is_finite() || oxide_nm < 0.0 {
        return Err(Error::Validation(format!("oxide thickness must be >= 0, got {oxide_nm}")));
    }
    let library = MaterialLibrary::open(dir.join("materials"))?;
    let cs = data
        .color_system
        .clone()
        .unwrap_or_else(|| dir.join(synthflake::dataset::DEFAULT_COLOR_SYSTEM));
    let system = ColorSystem::load(cs, grid)?;
    let model = SubstrateModel::from_library(&library, oxide_nm, grid)?;
    Ok(Env {
        library,
        system,
        model,
        grid,
    })
}

/// The flake stack, or the bare substrate for `sio2_only` / zero layers.
fn build_stack(env: &Env, args: &StackArgs) -> synthflake::Result<LayerStack> {
    if args.material == "sio2_only" || (args.layers == 0 && args.thickness_nm.is_none()) {
        return env.model.bare_stack();
    }
    let table: Arc<_> = env.library.get(&args.material)?;
    let thickness = match args.thickness_nm {
        Some(t) => t,
        None => {
            let mono = env.library.monolayer_nm(&args.material).ok_or_else(|| {
                Error::Config(format!(
                    "no monolayer thickness for `{}`; pass --thickness-nm",
                    args.material
                ))
            })?;
            f64::from(args.layers) * mono
        }
    };
    env.model.flake_stack(&table, thickness)
}

fn check_output(path: &Path) -> synthflake::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(Error::Validation(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    Ok(())
}

fn check_input(path: &Path) -> synthflake::Result<()> {
    if !path.is_file() {
        return Err(Error::Validation(format!("input {} does not exist", path.display())));
    }
    Ok(())
}

fn cmd_spectrum(args: &SpectrumArgs) -> synthflake::Result<()> {
    check_output(&args.out)?;
    let env = open_env(&args.data, &args.grid, args.stack.oxide_nm)?;
    let stack = build_stack(&env, &args.stack)?;
    let curve = reflectance_spectrum(&stack, env.grid)?;
    let mut csv = String::from("wavelength_nm,R\n");
    for (wl, r) in curve.iter() {
        writeln!(csv, "{wl},{r}").unwrap();
    }
    write_atomic(&args.out, csv.as_bytes())?;
    let (lo, hi) = curve
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "wrote {} rows to {}: R min {lo:.6} max {hi:.6}",
        curve.values().len(),
        args.out.display()
    );
    Ok(())
}

fn fmt_color(label: &str, c: LinearRgb, system: &ColorSystem) -> String {
    let [r, g, b] = srgb_encode_u8(c);
    let lab = rgb_to_lab(c, system);
    format!(
        "{label:<9} linear {:.6} {:.6} {:.6}  srgb #{r:02x}{g:02x}{b:02x}  lab {:.4} {:.4} {:.4}",
        c.r, c.g, c.b, lab.l, lab.a, lab.b
    )
}

/// Report lines for [`cmd_color`].
fn color_report(env: &Env, args: &ColorArgs) -> synthflake::Result<String> {
    let stack = build_stack(env, &args.stack)?;
    let flake = stack_color(&stack, env.grid, &env.system)?;
    let bare = substrate_color(&env.model, &env.system)?;
    let gain = match (&args.gain, &args.reference) {
        (Some(g), _) => Some(WhiteBalanceGain::new(*g)?),
        (None, Some(path)) => {
            let reference = load_png(path)?;
            Some(wb_gain(estimate_background(&reference)?, bare, args.normalize)?)
        }
        (None, None) => None,
    };
    let (flake, bare) = match &gain {
        Some(g) => (g.apply(flake), g.apply(bare)),
        None => (flake, bare),
    };
    let mut out = String::new();
    if let Some(g) = gain {
        let [r, gg, b] = g.components();
        writeln!(out, "gain      {r:.6} {gg:.6} {b:.6}").unwrap();
    }
    writeln!(out, "{}", fmt_color("flake", flake, &env.system)).unwrap();
    writeln!(out, "{}", fmt_color("substrate", bare, &env.system)).unwrap();
    let de = delta_e(rgb_to_lab(flake, &env.system), rgb_to_lab(bare, &env.system));
    writeln!(out, "delta_e   {de:.6}").unwrap();
    Ok(out)
}

fn cmd_color(args: &ColorArgs) -> synthflake::Result<()> {
    if let Some(r) = &args.reference {
        check_input(r)?;
    }
    let env = open_env(&args.data, &args.grid, args.stack.oxide_nm)?;
    print!("{}", color_report(&env, args)?);
    Ok(())
}

fn cmd_pia(args: &PiaArgs) -> synthflake::Result<()> {
    check_input(&args.input)?;
    for p in [Some(&args.out), args.mask_out.as_ref(), args.csv_out.as_ref()]
        .into_iter()
        .flatten()
    {
        check_output(p)?;
    }
    let dir = data_dir(&args.data);
    let cs = args
        .data
        .color_system
        .clone()
        .unwrap_or_else(|| dir.join(synthflake::dataset::DEFAULT_COLOR_SYSTEM));
    let system = ColorSystem::load(cs, SpectralGrid::visible())?;
    let image = load_png(&args.input)?;
    if let Some(roi) = args.roi {
        if roi.width == 0 || roi.height == 0 || !image.contains_roi(roi) {
            return Err(Error::Validation(format!("roi {roi:?} is outside the image")));
        }
    }
    let scores = patch_scores_roi(&image, PatchSize::square(args.patch), &system, args.roi)?;
    let map = PiaMap::from_scores(&scores);
    let mask = substrate_mask(&map, args.percentile)?;
    save_png_gray8(&args.out, &map.to_gray8(), map.width(), map.height())?;
    if let Some(p) = &args.mask_out {
        save_png_gray8(p, &mask.to_gray8(), mask.width(), mask.height())?;
    }
    if let Some(p) = &args.csv_out {
        let mut csv = String::from("patch_row,patch_col,delta_e,normalized\n");
        for s in &scores.scores {
            let norm = map.get(s.roi.x, s.roi.y);
            writeln!(csv, "{},{},{},{norm}", s.row, s.col, s.delta_e).unwrap();
        }
        write_atomic(p, csv.as_bytes())?;
    }
    println!(
        "{}x{} patches of {} px; threshold {:.6} at p{}; {} of {} pixels are substrate",
        scores.rows,
        scores.cols,
        args.patch,
        mask.threshold(),
        args.percentile,
        mask.count(),
        map.width() * map.height()
    );
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> synthflake::Result<()> {
    check_input(&args.reference)?;
    let env = open_env(&args.data, &args.grid, args.oxide_nm)?;
    let reference = load_png(&args.reference)?;
    let c_ref = estimate_background(&reference)?;
    let c_0 = substrate_color(&env.model, &env.system)?;
    let g = wb_gain(c_ref, c_0, args.normalize)?.components();
    println!("gain      {:.3} {:.3} {:.3}", g[0], g[1], g[2]);
    println!("gain_full {} {} {}", g[0], g[1], g[2]);
    println!("reference {:.6} {:.6} {:.6}", c_ref.r, c_ref.g, c_ref.b);
    println!("modeled   {:.6} {:.6} {:.6}", c_0.r, c_0.g, c_0.b);
    Ok(())
}

fn cmd_dataset(args: &DatasetArgs) -> synthflake::Result<()> {
    check_input(&args.config)?;
    let data = args.data_dir.clone().unwrap_or_else(default_data_dir);
    let job = DatasetJob::prepare(&args.config, &data)?;
    let manifest = job.run()?;
    let placed: usize = manifest.scenes.iter().map(|s| s.flakes_placed).sum();
    let skipped: usize = manifest.scenes.iter().map(|s| s.placements_skipped).sum();
    println!(
        "wrote {} images with {placed} flakes ({skipped} placements skipped) to {}",
        manifest.n_images,
        job.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Color(a) => cmd_color(a),
        Command::Pia(a) => cmd_pia(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Dataset(a) => cmd_dataset(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
