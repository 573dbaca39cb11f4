//! End-to-end run: reflectance, tiling, statistics and normalization, upscaling
//! (or prediction ingestion), alignment and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use xsensor_core::align::{align, apply_fdm, fit_fdm, AlignMethod};
use xsensor_core::dataset::{
    compute_stats, extract_patches, minmax_normalize, PatchGrid, PatchManifest, PATCH_MANIFEST_FILE,
};
use xsensor_core::io::{convert_encoding, read_raster, write_raster};
use xsensor_core::metrics::{evaluate_prediction_set, EvalConfig, MetricReport};
use xsensor_core::radiometry::{dn_to_surface, RadiometricParams};
use xsensor_core::resample::{resample, ResampleSpec};
use xsensor_core::{MultiBandRaster, SampleEncoding};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const RUN_LOG_FILE: &str = "run_log.json";

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub role: &'static str,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub name: &'static str,
    pub files_written: usize,
}

/// Deterministic record of a run. Timings live in the separate run log.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub inputs: Vec<InputRecord>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
    pub patch_count: usize,
    pub corpus_prediction: MetricReport,
    pub corpus_baseline: Option<MetricReport>,
    /// Every file written, relative to the output directory, sorted.
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct StageTiming {
    name: &'static str,
    millis: f64,
}

#[derive(Debug, Serialize)]
struct RunLog {
    started_unix_seconds: u64,
    threads: usize,
    output_dir: String,
    stage_timings: Vec<StageTiming>,
    total_millis: f64,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

/// Tracks output files and stage bookkeeping.
struct Run<'a> {
    root: &'a Path,
    outputs: Vec<String>,
    stages: Vec<StageRecord>,
    timings: Vec<StageTiming>,
    stage_start: (Instant, usize),
}

impl<'a> Run<'a> {
    fn new(root: &'a Path) -> Self {
        Self {
            root,
            outputs: Vec::new(),
            stages: Vec::new(),
            timings: Vec::new(),
            stage_start: (Instant::now(), 0),
        }
    }

    fn begin(&mut self) {
        self.stage_start = (Instant::now(), self.outputs.len());
    }

    fn end(&mut self, name: &'static str) {
        let (t0, n0) = self.stage_start;
        self.stages.push(StageRecord {
            name,
            files_written: self.outputs.len() - n0,
        });
        self.timings.push(StageTiming {
            name,
            millis: t0.elapsed().as_secs_f64() * 1e3,
        });
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn record(&mut self, rel: impl Into<String>) {
        self.outputs.push(rel.into());
    }

    fn write_raster(&mut self, r: &MultiBandRaster, rel: &str) -> CliResult<()> {
        write_raster(r, self.path(rel), SampleEncoding::Float32Reflectance)?;
        self.record(rel);
        Ok(())
    }

    /// Writes patches as `<dir>/<id>.tif` plus the directory manifest.
    fn write_patch_set(&mut self, dir: &str, manifest: &PatchManifest, patches: &[MultiBandRaster]) -> CliResult<()> {
        create_dir(&self.path(dir))?;
        manifest
            .patches
            .par_iter()
            .zip(patches)
            .try_for_each(|(entry, p)| {
                write_raster(p, self.path(&format!("{dir}/{}", entry.file)), SampleEncoding::Float32Reflectance)
            })?;
        for entry in &manifest.patches {
            self.record(format!("{dir}/{}", entry.file));
        }
        let rel = format!("{dir}/{PATCH_MANIFEST_FILE}");
        manifest.save(self.path(&rel))?;
        self.record(rel);
        Ok(())
    }
}

fn to_reflectance(
    raster: MultiBandRaster,
    role: &str,
    params_path: Option<&Path>,
    warnings: &mut Vec<String>,
) -> CliResult<MultiBandRaster> {
    match (raster.encoding(), params_path) {
        (SampleEncoding::Int16Dn, Some(p)) => {
            let params = RadiometricParams::load(p, raster.band_names())?;
            Ok(dn_to_surface(&raster, &params)?)
        }
        (SampleEncoding::Int16Dn, None) => Err(CliError::config(format!(
            "{role} tile holds int16 DN; set `radiometry` to a parameter file"
        ))),
        (SampleEncoding::Float32Reflectance, p) => {
            if p.is_some() {
                warnings.push(format!("{role} tile is already float32; radiometric conversion skipped"));
            }
            Ok(convert_encoding(&raster, SampleEncoding::Float32Reflectance)?)
        }
    }
}

fn manifest_for(source: &str, raster: &MultiBandRaster, grid: PatchGrid) -> PatchManifest {
    PatchManifest::for_grid(source, raster, grid)
}

/// Runs every stage under `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig, warnings: Vec<String>, threads: usize) -> CliResult<RunReport> {
    let started = Instant::now();
    let started_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let root = config.output_dir.as_path();
    create_dir(root)?;
    let mut warnings = warnings;
    let mut run = Run::new(root);

    let inputs = vec![
        InputRecord {
            role: "lo_input",
            path: config.lo_input.display().to_string(),
            sha256: sha256_file(&config.lo_input)?,
        },
        InputRecord {
            role: "hi_input",
            path: config.hi_input.display().to_string(),
            sha256: sha256_file(&config.hi_input)?,
        },
    ];

    run.begin();
    let lo = read_raster(&config.lo_input)?;
    let hi = read_raster(&config.hi_input)?;
    if lo.band_count() != hi.band_count() {
        return Err(CliError::Data(format!(
            "tiles have {} and {} bands",
            lo.band_count(),
            hi.band_count()
        )));
    }
    let lo = to_reflectance(lo, "lo_input", config.radiometry.as_deref(), &mut warnings)?;
    let hi = to_reflectance(hi, "hi_input", config.radiometry.as_deref(), &mut warnings)?;
    create_dir(&run.path("reflectance"))?;
    run.write_raster(&lo, "reflectance/lo.tif")?;
    run.write_raster(&hi, "reflectance/hi.tif")?;
    run.end("reflectance");

    run.begin();
    let (lo_grid, lo_patches) = extract_patches(&lo, config.lo_patch_size)?;
    let (hi_grid, hi_patches) = extract_patches(&hi, config.hi_patch_size)?;
    if (lo_grid.rows, lo_grid.cols) != (hi_grid.rows, hi_grid.cols) {
        return Err(CliError::Data(format!(
            "patch grids differ: lo {}x{} vs hi {}x{}",
            lo_grid.rows, lo_grid.cols, hi_grid.rows, hi_grid.cols
        )));
    }
    let lo_manifest = manifest_for("reflectance/lo.tif", &lo, lo_grid);
    let hi_manifest = manifest_for("reflectance/hi.tif", &hi, hi_grid);
    run.write_patch_set("patches/lo", &lo_manifest, &lo_patches)?;
    run.write_patch_set("patches/hi", &hi_manifest, &hi_patches)?;
    run.end("tile");

    run.begin();
    create_dir(&run.path("stats"))?;
    let lo_stats = compute_stats(&lo_patches, config.histogram_bins)?;
    let hi_stats = compute_stats(&hi_patches, config.histogram_bins)?;
    lo_stats.save(run.path("stats/lo.json"))?;
    run.record("stats/lo.json");
    hi_stats.save(run.path("stats/hi.json"))?;
    run.record("stats/hi.json");
    let normalize = |patches: &[MultiBandRaster], stats| -> CliResult<Vec<MultiBandRaster>> {
        patches
            .par_iter()
            .map(|p| minmax_normalize(p, stats, config.normalization).map_err(CliError::from))
            .collect()
    };
    let lo_norm = normalize(&lo_patches, &lo_stats)?;
    let hi_norm = normalize(&hi_patches, &hi_stats)?;
    drop((lo_patches, hi_patches));
    let mut lo_norm_manifest = lo_manifest.clone();
    lo_norm_manifest.source = "patches/lo".into();
    let mut hi_norm_manifest = hi_manifest.clone();
    hi_norm_manifest.source = "patches/hi".into();
    run.write_patch_set("normalized/lo", &lo_norm_manifest, &lo_norm)?;
    run.write_patch_set("normalized/hi", &hi_norm_manifest, &hi_norm)?;
    run.end("stats_normalize");

    run.begin();
    let upscaled: Vec<MultiBandRaster> = match &config.predictions {
        Some(dir) => ingest_predictions(dir, &hi_manifest)?,
        None => {
            let spec = ResampleSpec::new(config.hi_patch_size, config.hi_patch_size, config.kernel);
            let up: Vec<MultiBandRaster> = lo_norm
                .par_iter()
                .map(|p| resample(p, &spec).map_err(CliError::from))
                .collect::<CliResult<_>>()?;
            let mut m = hi_manifest.clone();
            m.source = "normalized/lo".into();
            run.write_patch_set("upscaled", &m, &up)?;
            up
        }
    };
    run.end(if config.predictions.is_some() { "ingest_predictions" } else { "upscale" });

    run.begin();
    let aligned: Vec<(MultiBandRaster, Option<xsensor_core::align::AlignmentTransform>)> = upscaled
        .par_iter()
        .zip(&hi_norm)
        .map(|(src, reference)| {
            Ok(match config.method {
                AlignMethod::Fdm => {
                    let t = fit_fdm(src, reference)?;
                    (apply_fdm(src, &t)?, Some(t))
                }
                m => (align(src, reference, m)?, None),
            })
        })
        .collect::<CliResult<_>>()?;
    let mut m = hi_manifest.clone();
    m.source = if config.predictions.is_some() { "predictions" } else { "upscaled" }.into();
    let aligned_rasters: Vec<MultiBandRaster> = aligned.iter().map(|(r, _)| r.clone()).collect();
    run.write_patch_set("aligned", &m, &aligned_rasters)?;
    if config.method == AlignMethod::Fdm {
        create_dir(&run.path("aligned/transforms"))?;
        for (entry, (_, t)) in m.patches.iter().zip(&aligned) {
            let rel = format!("aligned/transforms/{}.json", entry.id);
            t.as_ref().expect("fdm transform").save(run.path(&rel))?;
            run.record(rel);
        }
    }
    drop((aligned, aligned_rasters, upscaled));
    run.end("align");

    run.begin();
    let mut eval = EvalConfig::new(config.data_range);
    eval.histogram_bins = config.histogram_bins;
    eval.baseline_kernel = config.kernel;
    eval.out_dir = Some(run.path("evaluation"));
    if !config.artifacts {
        eval.out_dir = None;
    }
    let set = evaluate_prediction_set(
        run.path("aligned"),
        run.path("normalized/hi"),
        Some(&run.path("normalized/lo")),
        &eval,
    )?;
    if config.artifacts {
        record_evaluation(&mut run, &set);
    }
    run.end("evaluate");

    run.outputs.sort();
    let report = RunReport {
        tool: "xsensor",
        version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        config_hash: config.hash(),
        inputs,
        stages: std::mem::take(&mut run.stages),
        warnings,
        patch_count: set.patch_count,
        corpus_prediction: set.corpus_prediction.clone(),
        corpus_baseline: set.corpus_baseline.clone(),
        outputs: run.outputs.clone(),
    };
    write_json(&run.path(RUN_REPORT_FILE), &report)?;
    let log = RunLog {
        started_unix_seconds: started_unix,
        threads,
        output_dir: root.display().to_string(),
        stage_timings: std::mem::take(&mut run.timings),
        total_millis: started.elapsed().as_secs_f64() * 1e3,
    };
    write_json(&run.path(RUN_LOG_FILE), &log)?;
    Ok(report)
}

fn record_evaluation(run: &mut Run, set: &xsensor_core::metrics::EvaluationSet) {
    run.record("evaluation/evaluation.json");
    if let Some(csv) = &set.metrics_csv {
        run.record(format!("evaluation/{csv}"));
    }
    for p in &set.patches {
        for a in &p.artifacts {
            for f in [&a.reference_png, &a.prediction_png, &a.histogram_csv, &a.diff_tif, &a.diff_png] {
                run.record(format!("evaluation/{f}"));
            }
        }
    }
}

/// Loads externally produced patches, in reference-manifest order.
fn ingest_predictions(dir: &Path, reference: &PatchManifest) -> CliResult<Vec<MultiBandRaster>> {
    let path = dir.join(PATCH_MANIFEST_FILE);
    let m = PatchManifest::load(&path)?;
    let missing: Vec<&str> = reference
        .patches
        .iter()
        .filter(|r| !m.patches.iter().any(|p| p.id == r.id))
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "predictions in {} lack patches: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    reference
        .patches
        .par_iter()
        .map(|r| {
            let entry = m.patches.iter().find(|p| p.id == r.id).expect("checked above");
            let p = read_raster(dir.join(&entry.file))?;
            Ok(convert_encoding(&p, SampleEncoding::Float32Reflectance)?)
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
