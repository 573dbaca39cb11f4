use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use xsensor_core::align::{align, apply_fdm, fit_fdm, AlignMethod, AlignmentTransform};
use xsensor_core::dataset::{
    compute_stats, extract_patches, PatchManifest, DEFAULT_HISTOGRAM_BINS, PATCH_MANIFEST_FILE,
};
use xsensor_core::io::{read_raster, write_raster};
use xsensor_core::metrics::{evaluate_prediction_set, EvalConfig};
use xsensor_core::radiometry::{dn_to_surface, RadiometricParams};
use xsensor_core::resample::{resample, Kernel, ResampleSpec};
use xsensor_core::synth::{make_pair, scene, DistortionSpec};
use xsensor_core::{BandBuffer, MultiBandRaster, SampleEncoding};

use crate::config::{PipelineConfig, RawConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{run_pipeline, write_json};

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cut a raster into non-overlapping square patches plus a manifest.
    Tile(TileArgs),
    /// Per-band statistics over patch directories or raster files.
    Stats(StatsArgs),
    /// Convert an int16 DN raster to surface reflectance.
    Reflectance(ReflectanceArgs),
    /// Align a source raster onto a reference (histogram or distribution matching).
    Align(AlignArgs),
    /// Resample a raster to a new size.
    Resample(ResampleArgs),
    /// Score a directory of predicted patches against reference patches.
    Evaluate(EvaluateArgs),
    /// Generate a distorted low-resolution counterpart of a raster.
    Synth(SynthArgs),
    /// Run the full pipeline from a config file.
    Pipeline(PipelineArgs),
    /// Seeded train/validation split of a patch manifest.
    Split(SplitArgs),
}

#[derive(Args, Debug)]
pub struct TileArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Patch side in pixels.
    #[arg(long, default_value_t = 128)]
    pub patch_size: usize,
    /// Output directory for `<id>.tif` patches and `manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Patch directories (with manifest.json) or raster files.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReflectanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Radiometric parameter JSON keyed by band name.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub source: PathBuf,
    /// Reference raster; required unless `--transform` is given.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value = "hm")]
    pub method: AlignMethod,
    /// Apply a previously saved distribution-matching transform instead of fitting.
    #[arg(long, conflicts_with_all = ["reference", "transform_out"])]
    pub transform: Option<PathBuf>,
    /// Where to save the fitted transform (fdm only).
    #[arg(long)]
    pub transform_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ResampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, requires = "height", conflicts_with_all = ["magnify", "shrink"])]
    pub width: Option<usize>,
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    /// Integer magnification factor.
    #[arg(long, conflicts_with = "shrink")]
    pub magnify: Option<usize>,
    /// Integer reduction factor.
    #[arg(long)]
    pub shrink: Option<usize>,
    #[arg(long, default_value = "lanczos3")]
    pub kernel: Kernel,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Optional baseline patches; smaller ones are resampled to reference size.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Dynamic range for PSNR and SSIM (required: inputs are not 8-bit).
    #[arg(long)]
    pub data_range: f64,
    #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
    pub bins: usize,
    #[arg(long, default_value = "lanczos3")]
    pub kernel: Kernel,
    /// Skip per-band images, histograms and difference maps.
    #[arg(long)]
    pub no_artifacts: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Ground-truth raster.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    pub input: Option<PathBuf>,
    /// Generate a procedural ground truth of `WIDTHxHEIGHTxBANDS` instead.
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub scene_seed: u64,
    /// Distortion spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Write the ground truth here (useful with `--scene`).
    #[arg(long)]
    pub hr_out: Option<PathBuf>,
    #[arg(long)]
    pub lr_out: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Store outputs as int16 DN of `value × scale` instead of float32.
    #[arg(long)]
    pub dn_scale: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// TOML key-value config; keys may also come from `XSENSOR_<KEY>` or flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lo_input: Option<String>,
    #[arg(long)]
    pub hi_input: Option<String>,
    #[arg(long)]
    pub output_dir: Option<String>,
    #[arg(long)]
    pub radiometry: Option<String>,
    #[arg(long)]
    pub lo_patch_size: Option<String>,
    #[arg(long)]
    pub hi_patch_size: Option<String>,
    #[arg(long)]
    pub allow_ratio_override: Option<String>,
    #[arg(long)]
    pub normalization: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub data_range: Option<String>,
    #[arg(long)]
    pub histogram_bins: Option<String>,
    /// Externally upscaled patches (directory with manifest.json).
    #[arg(long)]
    pub predictions: Option<String>,
    #[arg(long)]
    pub artifacts: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn print(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn run_command(cmd: Command, threads: usize) -> CliResult<()> {
    match cmd {
        Command::Tile(a) => tile(a),
        Command::Stats(a) => stats(a),
        Command::Reflectance(a) => reflectance(a),
        Command::Align(a) => align_cmd(a),
        Command::Resample(a) => resample_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Pipeline(a) => pipeline(a, threads),
        Command::Split(a) => split(a),
    }
}

fn tile(a: TileArgs) -> CliResult<()> {
    let raster = read_raster(&a.input)?;
    let (grid, patches) = extract_patches(&raster, a.patch_size)?;
    create_dir(&a.out)?;
    let manifest = PatchManifest::for_grid(&file_name(&a.input), &raster, grid);
    use rayon::prelude::*;
    manifest
        .patches
        .par_iter()
        .zip(&patches)
        .try_for_each(|(e, p)| write_raster(p, a.out.join(&e.file), raster.encoding()))?;
    manifest.save(a.out.join(PATCH_MANIFEST_FILE))?;
    print(json!({
        "patches": grid.len(),
        "rows": grid.rows,
        "cols": grid.cols,
        "discarded_right": grid.discarded_right,
        "discarded_bottom": grid.discarded_bottom,
    }));
    Ok(())
}

fn load_inputs(paths: &[PathBuf]) -> CliResult<Vec<MultiBandRaster>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let m = PatchManifest::load(p.join(PATCH_MANIFEST_FILE))?;
            for e in &m.patches {
                out.push(read_raster(p.join(&e.file))?);
            }
        } else {
            out.push(read_raster(p)?);
        }
    }
    Ok(out)
}

fn stats(a: StatsArgs) -> CliResult<()> {
    if a.bins == 0 {
        return Err(CliError::config("--bins must be positive"));
    }
    let rasters = load_inputs(&a.input)?;
    let s = compute_stats(&rasters, a.bins)?;
    s.save(&a.out)?;
    print(json!({ "rasters": rasters.len(), "sample_count": s.sample_count }));
    Ok(())
}

fn reflectance(a: ReflectanceArgs) -> CliResult<()> {
    let raster = read_raster(&a.input)?;
    let params = RadiometricParams::load(&a.params, raster.band_names())?;
    let out = dn_to_surface(&raster, &params)?;
    write_raster(&out, &a.out, SampleEncoding::Float32Reflectance)?;
    Ok(())
}

fn align_cmd(a: AlignArgs) -> CliResult<()> {
    let source = read_raster(&a.source)?;
    let out = if let Some(t) = &a.transform {
        apply_fdm(&source, &AlignmentTransform::load(t)?)?
    } else {
        let Some(r) = &a.reference else {
            return Err(CliError::config("--reference is required unless --transform is given"));
        };
        let reference = read_raster(r)?;
        match (a.method, &a.transform_out) {
            (AlignMethod::Fdm, Some(path)) => {
                let t = fit_fdm(&source, &reference)?;
                t.save(path)?;
                apply_fdm(&source, &t)?
            }
            (_, Some(_)) => return Err(CliError::config("--transform-out only applies to --method fdm")),
            (m, None) => align(&source, &reference, m)?,
        }
    };
    write_raster(&out, &a.out, SampleEncoding::Float32Reflectance)?;
    Ok(())
}

fn resample_cmd(a: ResampleArgs) -> CliResult<()> {
    let raster = read_raster(&a.input)?;
    let (w, h) = match (a.width, a.height, a.magnify, a.shrink) {
        (Some(w), Some(h), None, None) => (w, h),
        (None, None, Some(f), None) if f > 0 => (raster.width() * f, raster.height() * f),
        (None, None, None, Some(f)) if f > 0 => ((raster.width() / f).max(1), (raster.height() / f).max(1)),
        _ => {
            return Err(CliError::config(
                "give exactly one of --width/--height, --magnify or --shrink (factors > 0)",
            ))
        }
    };
    let out = resample(&raster, &ResampleSpec::new(w, h, a.kernel))?;
    write_raster(&out, &a.out, SampleEncoding::Float32Reflectance)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let mut cfg = EvalConfig::new(a.data_range);
    cfg.histogram_bins = a.bins;
    cfg.baseline_kernel = a.kernel;
    if !a.no_artifacts {
        cfg.out_dir = Some(a.out.clone());
    } else {
        create_dir(&a.out)?;
    }
    let set = evaluate_prediction_set(&a.pred, &a.reference, a.baseline.as_deref(), &cfg)?;
    if a.no_artifacts {
        fs::write(a.out.join("metrics.csv"), set.to_csv())
            .map_err(|e| CliError::Data(format!("cannot write metrics: {e}")))?;
        write_json(&a.out.join("evaluation.json"), &set)?;
    }
    print(json!({
        "patches": set.patch_count,
        "baseline_resampled": set.baseline_resampled,
        "corpus": set.corpus_prediction.aggregate,
    }));
    Ok(())
}

fn parse_scene(s: &str) -> CliResult<(usize, usize, usize)> {
    let parts: Vec<Option<usize>> = s.split('x').map(|p| p.parse().ok()).collect();
    match parts.as_slice() {
        [Some(w), Some(h), Some(c)] if *w > 0 && *h > 0 && *c > 0 => Ok((*w, *h, *c)),
        _ => Err(CliError::config(format!("--scene `{s}` is not WIDTHxHEIGHTxBANDS"))),
    }
}

fn to_dn(raster: &MultiBandRaster, scale: f64) -> CliResult<MultiBandRaster> {
    let bands = raster
        .bands()
        .iter()
        .map(|b| {
            b.iter()
                .map(|v| {
                    let s = (v * scale).round();
                    if s >= i16::MIN as f64 && s <= i16::MAX as f64 {
                        Ok(s as i16)
                    } else {
                        Err(CliError::Data(format!("value {v} x {scale} does not fit int16")))
                    }
                })
                .collect::<CliResult<Vec<i16>>>()
                .map(BandBuffer::Int16)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(MultiBandRaster::new(
        raster.width(),
        raster.height(),
        bands,
        raster.band_names().to_vec(),
        None,
        raster.geo_meta().clone(),
    )?)
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let hr = match (&a.input, &a.scene) {
        (Some(p), None) => read_raster(p)?,
        (None, Some(s)) => {
            let (w, h, c) = parse_scene(s)?;
            scene(w, h, c, a.scene_seed)?
        }
        _ => return Err(CliError::config("give exactly one of --input or --scene")),
    };
    let spec = DistortionSpec::load(&a.spec)?;
    let (lr, manifest) = make_pair(&hr, &spec)?;
    let save = |r: &MultiBandRaster, path: &Path| -> CliResult<()> {
        match a.dn_scale {
            Some(s) => write_raster(&to_dn(r, s)?, path, SampleEncoding::Int16Dn)?,
            None => write_raster(r, path, SampleEncoding::Float32Reflectance)?,
        }
        Ok(())
    };
    if let Some(p) = &a.hr_out {
        save(&hr, p)?;
    }
    save(&lr, &a.lr_out)?;
    manifest.save(&a.manifest)?;
    Ok(())
}

fn pipeline(a: PipelineArgs, threads: usize) -> CliResult<()> {
    let flags = [
        ("lo_input", a.lo_input),
        ("hi_input", a.hi_input),
        ("output_dir", a.output_dir),
        ("radiometry", a.radiometry),
        ("lo_patch_size", a.lo_patch_size),
        ("hi_patch_size", a.hi_patch_size),
        ("allow_ratio_override", a.allow_ratio_override),
        ("normalization", a.normalization),
        ("method", a.method),
        ("kernel", a.kernel),
        ("data_range", a.data_range),
        ("histogram_bins", a.histogram_bins),
        ("predictions", a.predictions),
        ("artifacts", a.artifacts),
        ("seed", a.seed),
    ];
    let raw = RawConfig::load(a.config.as_deref(), std::env::vars(), &flags);
    let (config, warnings) = PipelineConfig::resolve(&raw)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let report = run_pipeline(&config, warnings, threads)?;
    print(json!({
        "output_dir": config.output_dir.display().to_string(),
        "patches": report.patch_count,
        "config_hash": report.config_hash,
        "corpus": report.corpus_prediction.aggregate,
    }));
    Ok(())
}

fn split(a: SplitArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.val_fraction) {
        return Err(CliError::config(format!("--val-fraction {} is outside [0, 1]", a.val_fraction)));
    }
    let m = PatchManifest::load(&a.manifest)?;
    let mut ids: Vec<String> = m.patches.iter().map(|p| p.id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    let n_val = (ids.len() as f64 * a.val_fraction).round() as usize;
    let (val, train) = ids.split_at(n_val);
    let (mut train, mut val) = (train.to_vec(), val.to_vec());
    train.sort();
    val.sort();
    write_json(
        &a.out,
        &json!({ "seed": a.seed, "val_fraction": a.val_fraction, "train": train, "val": val }),
    )
}
