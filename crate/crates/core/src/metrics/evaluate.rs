//! Evaluation of a directory of predicted patches against reference patches.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    band_diff_sums, csv_field, diff_clamp_range, diff_map, errors_from_sums, histogram_compare,
    report_from_parts, ssim, BandMetrics, DiffSummary, DiffSums, MetricReport,
};
use crate::dataset::{write_json, PatchManifest, DEFAULT_HISTOGRAM_BINS, PATCH_MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::io::{png_bytes, read_raster, write_raster};
use crate::raster::{MultiBandRaster, SampleEncoding};
use crate::resample::{resample, Kernel, ResampleSpec};

pub const EVALUATION_FILE: &str = "evaluation.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
const ARTIFACT_DIR: &str = "artifacts";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub data_range: f64,
    pub histogram_bins: usize,
    /// Kernel used to bring a smaller baseline to reference size.
    pub baseline_kernel: Kernel,
    /// Where CSV, JSON and per-band artifacts go; `None` computes reports only.
    pub out_dir: Option<PathBuf>,
}

impl EvalConfig {
    pub fn new(data_range: f64) -> Self {
        Self {
            data_range,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            baseline_kernel: Kernel::Lanczos3,
            out_dir: None,
        }
    }
}

/// Per-band artifact files of one patch, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub band: usize,
    pub band_name: String,
    pub reference_png: String,
    pub prediction_png: String,
    pub histogram_csv: String,
    pub diff_tif: String,
    pub diff_png: String,
    pub diff_summary: DiffSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub id: String,
    pub prediction: MetricReport,
    pub baseline: Option<MetricReport>,
    pub baseline_resampled: bool,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Reports for every patch (ordered by id) plus corpus-level pooled reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSet {
    pub data_range: f64,
    pub histogram_bins: usize,
    pub patch_count: usize,
    /// True when any baseline patch was resampled to reference size.
    pub baseline_resampled: bool,
    pub baseline_kernel: Kernel,
    pub metrics_csv: Option<String>,
    pub corpus_prediction: MetricReport,
    pub corpus_baseline: Option<MetricReport>,
    pub patches: Vec<PatchReport>,
}

/// One line of the metric table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub patch_id: String,
    pub source: &'static str,
    /// Band index, or `None` for the all-band aggregate.
    pub band: Option<usize>,
    pub metrics: BandMetrics,
}

const CSV_HEADER: &str = "patch_id,source,band,band_name,mse,rmse,mae,psnr,psnr_infinite,ssim,sample_count";

impl EvaluationSet {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        let mut push = |id: &str, source: &'static str, r: &MetricReport| {
            for (b, m) in r.per_band.iter().enumerate() {
                rows.push(MetricRow {
                    patch_id: id.to_string(),
                    source,
                    band: Some(b),
                    metrics: m.clone(),
                });
            }
            rows.push(MetricRow {
                patch_id: id.to_string(),
                source,
                band: None,
                metrics: r.aggregate.clone(),
            });
        };
        for p in &self.patches {
            push(&p.id, "prediction", &p.prediction);
            if let Some(b) = &p.baseline {
                push(&p.id, "baseline", b);
            }
        }
        push("corpus", "prediction", &self.corpus_prediction);
        if let Some(b) = &self.corpus_baseline {
            push("corpus", "baseline", b);
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in self.rows() {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?},{:?},{},{},{:?},{}\n",
                csv_field(&r.patch_id),
                r.source,
                r.band.map_or("all".to_string(), |b| b.to_string()),
                csv_field(&m.band_name),
                m.mse,
                m.rmse,
                m.mae,
                m.psnr.map_or(String::new(), |v| format!("{v:?}")),
                m.psnr_infinite,
                m.ssim,
                m.sample_count,
            ));
        }
        out
    }
}

fn load_manifest(dir: &Path) -> Result<PatchManifest> {
    let path = dir.join(PATCH_MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Manifest(format!("no {PATCH_MANIFEST_FILE} in {}", dir.display())));
    }
    PatchManifest::load(path)
}

fn check_ids(what: &str, expected: &BTreeSet<&str>, found: &PatchManifest) -> Result<()> {
    let have: BTreeSet<&str> = found.patches.iter().map(|p| p.id.as_str()).collect();
    let missing: Vec<&str> = expected.difference(&have).copied().collect();
    let extra: Vec<&str> = have.difference(expected).copied().collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    let mut msg = format!("{what} patches do not match the reference manifest");
    if !missing.is_empty() {
        msg.push_str(&format!("; missing: {}", missing.join(", ")));
    }
    if !extra.is_empty() {
        msg.push_str(&format!("; unexpected: {}", extra.join(", ")));
    }
    Err(Error::Manifest(msg))
}

fn patch_path(dir: &Path, m: &PatchManifest, id: &str) -> PathBuf {
    let entry = m.patches.iter().find(|p| p.id == id).expect("id checked against manifest");
    dir.join(&entry.file)
}

struct PatchOutcome {
    report: PatchReport,
    pred_sums: Vec<DiffSums>,
    pred_ssim: Vec<f64>,
    base: Option<(Vec<DiffSums>, Vec<f64>)>,
}

/// Compares every patch of `pred_dir` (and optionally `baseline_dir`) with the
/// same-id patch of `ref_dir`. Each directory must hold a patch manifest; patch
/// sets must agree exactly. A baseline patch of different size is resampled to
/// reference size first.
pub fn evaluate_prediction_set(
    pred_dir: impl AsRef<Path>,
    ref_dir: impl AsRef<Path>,
    baseline_dir: Option<&Path>,
    config: &EvalConfig,
) -> Result<EvaluationSet> {
    let (pred_dir, ref_dir) = (pred_dir.as_ref(), ref_dir.as_ref());
    let ref_m = load_manifest(ref_dir)?;
    let pred_m = load_manifest(pred_dir)?;
    let base_m = baseline_dir.map(load_manifest).transpose()?;
    let ids: BTreeSet<&str> = ref_m.patches.iter().map(|p| p.id.as_str()).collect();
    if ids.is_empty() {
        return Err(Error::Manifest("reference manifest lists no patches".into()));
    }
    check_ids("prediction", &ids, &pred_m)?;
    if let Some(m) = &base_m {
        check_ids("baseline", &ids, m)?;
    }
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir.join(ARTIFACT_DIR)).map_err(|e| Error::io(dir, e))?;
    }

    let ids: Vec<&str> = ids.into_iter().collect();
    let outcomes: Vec<PatchOutcome> = ids
        .par_iter()
        .map(|id| {
            let reference = read_raster(patch_path(ref_dir, &ref_m, id))?;
            let pred = read_raster(patch_path(pred_dir, &pred_m, id))?;
            let baseline = match (baseline_dir, &base_m) {
                (Some(dir), Some(m)) => Some(read_raster(patch_path(dir, m, id))?),
                _ => None,
            };
            evaluate_patch(id, &reference, &pred, baseline, config)
        })
        .collect::<Result<_>>()?;

    let names = ref_m.band_names.clone();
    let corpus = |parts: Vec<(&[DiffSums], &[f64])>| -> Result<MetricReport> {
        let bands = parts[0].0.len();
        let mut sums = vec![DiffSums::default(); bands];
        let mut ssim_sum = vec![0.0; bands];
        for (s, q) in &parts {
            for b in 0..bands {
                sums[b] = sums[b].merge(s[b]);
                ssim_sum[b] += q[b];
            }
        }
        let ssims: Vec<f64> = ssim_sum.iter().map(|s| s / parts.len() as f64).collect();
        let names = if names.len() == bands { names.clone() } else { crate::raster::default_band_names(bands) };
        Ok(report_from_parts(&names, &errors_from_sums(&sums)?, &ssims, config.data_range))
    };
    let corpus_prediction = corpus(
        outcomes.iter().map(|o| (o.pred_sums.as_slice(), o.pred_ssim.as_slice())).collect(),
    )?;
    let corpus_baseline = if base_m.is_some() {
        Some(corpus(
            outcomes
                .iter()
                .map(|o| {
                    let (s, q) = o.base.as_ref().expect("baseline evaluated for every patch");
                    (s.as_slice(), q.as_slice())
                })
                .collect(),
        )?)
    } else {
        None
    };

    let patches: Vec<PatchReport> = outcomes.into_iter().map(|o| o.report).collect();
    let mut set = EvaluationSet {
        data_range: config.data_range,
        histogram_bins: config.histogram_bins,
        patch_count: patches.len(),
        baseline_resampled: patches.iter().any(|p| p.baseline_resampled),
        baseline_kernel: config.baseline_kernel,
        metrics_csv: None,
        corpus_prediction,
        corpus_baseline,
        patches,
    };
    if let Some(dir) = &config.out_dir {
        set.metrics_csv = Some(METRICS_CSV_FILE.to_string());
        let csv_path = dir.join(METRICS_CSV_FILE);
        fs::write(&csv_path, set.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        write_json(dir.join(EVALUATION_FILE), &set)?;
    }
    Ok(set)
}

fn evaluate_patch(
    id: &str,
    reference: &MultiBandRaster,
    pred: &MultiBandRaster,
    baseline: Option<MultiBandRaster>,
    config: &EvalConfig,
) -> Result<PatchOutcome> {
    let range = config.data_range;
    pred.check_same_shape(reference)?;
    let pred_sums: Vec<DiffSums> = (0..pred.band_count()).map(|b| band_diff_sums(pred, reference, b)).collect();
    let pred_ssim = ssim(pred, reference, range)?;
    let prediction = report_from_parts(reference.band_names(), &errors_from_sums(&pred_sums)?, &pred_ssim, range);

    let mut baseline_resampled = false;
    let baseline = match baseline {
        Some(b) if (b.width(), b.height()) != (reference.width(), reference.height()) => {
            if b.width() > reference.width() || b.height() > reference.height() {
                return Err(Error::DimensionMismatch(format!(
                    "baseline {}x{} is larger than reference {}x{}",
                    b.width(),
                    b.height(),
                    reference.width(),
                    reference.height()
                )));
            }
            baseline_resampled = true;
            let spec = ResampleSpec::new(reference.width(), reference.height(), config.baseline_kernel);
            Some(resample(&b, &spec)?)
        }
        other => other,
    };
    let base = match &baseline {
        Some(b) => {
            b.check_same_shape(reference)?;
            let sums: Vec<DiffSums> = (0..b.band_count()).map(|k| band_diff_sums(b, reference, k)).collect();
            let q = ssim(b, reference, range)?;
            Some((sums, q))
        }
        None => None,
    };
    let baseline_report = base.as_ref().map(|(s, q)| {
        errors_from_sums(s).map(|e| report_from_parts(reference.band_names(), &e, q, range))
    });

    let artifacts = match &config.out_dir {
        Some(dir) => write_artifacts(dir, id, reference, pred, baseline.as_ref(), config.histogram_bins)?,
        None => Vec::new(),
    };
    Ok(PatchOutcome {
        report: PatchReport {
            id: id.to_string(),
            prediction,
            baseline: baseline_report.transpose()?,
            baseline_resampled,
            artifacts,
        },
        pred_sums,
        pred_ssim,
        base,
    })
}

/// Display range shared by reference and prediction so both images are comparable.
fn shared_clamp(a: &MultiBandRaster, b: &MultiBandRaster, band: usize) -> (f64, f64) {
    let (lo, hi) = a
        .valid_samples(band)
        .chain(b.valid_samples(band))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_artifacts(
    out_dir: &Path,
    id: &str,
    reference: &MultiBandRaster,
    pred: &MultiBandRaster,
    baseline: Option<&MultiBandRaster>,
    bins: usize,
) -> Result<Vec<ArtifactEntry>> {
    let rel_dir = format!("{ARTIFACT_DIR}/{id}");
    fs::create_dir_all(out_dir.join(&rel_dir)).map_err(|e| Error::io(out_dir, e))?;
    let (diff, summaries) = diff_map(pred, reference)?;
    let mut entries = Vec::with_capacity(reference.band_count());
    for (b, summary) in summaries.into_iter().enumerate() {
        let rel = |suffix: &str| format!("{rel_dir}/b{b:02}_{suffix}");
        let entry = ArtifactEntry {
            band: b,
            band_name: reference.band_names()[b].clone(),
            reference_png: rel("reference.png"),
            prediction_png: rel("prediction.png"),
            histogram_csv: rel("histogram.csv"),
            diff_tif: rel("diff.tif"),
            diff_png: rel("diff.png"),
            diff_summary: summary,
        };
        let clamp = shared_clamp(reference, pred, b);
        write_file(&out_dir.join(&entry.reference_png), &png_bytes(reference, [b; 3], clamp)?)?;
        write_file(&out_dir.join(&entry.prediction_png), &png_bytes(pred, [b; 3], clamp)?)?;

        let mut sources = vec![("reference", reference), ("prediction", pred)];
        if let Some(base) = baseline {
            sources.push(("baseline", base));
        }
        let hist = histogram_compare(&sources, b, bins)?;
        write_file(&out_dir.join(&entry.histogram_csv), hist.to_csv().as_bytes())?;

        let single = MultiBandRaster::new(
            diff.width(),
            diff.height(),
            vec![diff.band(b).clone()],
            vec![diff.band_names()[b].clone()],
            diff.nodata(),
            diff.geo_meta().clone(),
        )?;
        write_raster(&single, out_dir.join(&entry.diff_tif), SampleEncoding::Float32Reflectance)?;
        write_file(
            &out_dir.join(&entry.diff_png),
            &png_bytes(&single, [0; 3], diff_clamp_range(&entry.diff_summary))?,
        )?;
        entries.push(entry);
    }
    Ok(entries)
}
