//! Band-wise quality metrics, difference maps and shared-bin histograms.

mod evaluate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;
use crate::stats::{chunked_reduce, Histogram};

pub use evaluate::{
    evaluate_prediction_set, ArtifactEntry, EvalConfig, EvaluationSet, MetricRow, PatchReport, EVALUATION_FILE,
    METRICS_CSV_FILE,
};

/// Running sums of `pred - ref` over pixels valid on both sides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffSums {
    pub count: u64,
    pub sum: f64,
    pub sum_abs: f64,
    pub sum_sq: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for DiffSums {
    fn default() -> Self {
        Self {
            count: 0,
            sum: 0.0,
            sum_abs: 0.0,
            sum_sq: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl DiffSums {
    #[inline]
    fn push(&mut self, d: f64) {
        self.count += 1;
        self.sum += d;
        self.sum_abs += d.abs();
        self.sum_sq += d * d;
        self.min = self.min.min(d);
        self.max = self.max.max(d);
    }

    pub fn merge(self, o: DiffSums) -> DiffSums {
        DiffSums {
            count: self.count + o.count,
            sum: self.sum + o.sum,
            sum_abs: self.sum_abs + o.sum_abs,
            sum_sq: self.sum_sq + o.sum_sq,
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn errors(&self) -> ErrorStats {
        let n = self.count as f64;
        let mse = self.sum_sq / n;
        ErrorStats {
            mse,
            rmse: mse.sqrt(),
            mae: self.sum_abs / n,
            sample_count: self.count,
        }
    }
}

fn check_pair(pred: &MultiBandRaster, reference: &MultiBandRaster) -> Result<()> {
    pred.check_same_shape(reference)
}

/// Difference sums of band `b`, skipping pixels that are nodata on either side.
pub fn band_diff_sums(pred: &MultiBandRaster, reference: &MultiBandRaster, b: usize) -> DiffSums {
    let (p, r) = (pred.band(b), reference.band(b));
    chunked_reduce(
        p.len(),
        DiffSums::default(),
        |mut acc, range| {
            for i in range {
                let (pv, rv) = (p.get(i), r.get(i));
                if !pred.is_nodata(pv) && !reference.is_nodata(rv) {
                    acc.push(pv - rv);
                }
            }
            acc
        },
        DiffSums::merge,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub sample_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelErrors {
    pub per_band: Vec<ErrorStats>,
    /// All bands' valid pixels pooled.
    pub aggregate: ErrorStats,
}

/// MSE, RMSE and MAE per band and pooled over bands.
pub fn pixel_errors(pred: &MultiBandRaster, reference: &MultiBandRaster) -> Result<PixelErrors> {
    check_pair(pred, reference)?;
    let sums: Vec<DiffSums> = (0..pred.band_count())
        .map(|b| band_diff_sums(pred, reference, b))
        .collect();
    errors_from_sums(&sums)
}

fn errors_from_sums(sums: &[DiffSums]) -> Result<PixelErrors> {
    if let Some(b) = sums.iter().position(|s| s.count == 0) {
        return Err(Error::InsufficientData(format!("band {b} has no pixels valid on both sides")));
    }
    let pooled = sums.iter().fold(DiffSums::default(), |a, &s| a.merge(s));
    Ok(PixelErrors {
        per_band: sums.iter().map(DiffSums::errors).collect(),
        aggregate: pooled.errors(),
    })
}

/// PSNR in dB; `None` when `mse == 0` (infinite).
pub fn psnr_from_mse(mse: f64, data_range: f64) -> Option<f64> {
    (mse > 0.0).then(|| 20.0 * data_range.log10() - 10.0 * mse.log10())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsnrReport {
    pub per_band: Vec<Option<f64>>,
    pub aggregate: Option<f64>,
}

pub fn psnr(pred: &MultiBandRaster, reference: &MultiBandRaster, data_range: f64) -> Result<PsnrReport> {
    check_range(data_range)?;
    let e = pixel_errors(pred, reference)?;
    Ok(PsnrReport {
        per_band: e.per_band.iter().map(|s| psnr_from_mse(s.mse, data_range)).collect(),
        aggregate: psnr_from_mse(e.aggregate.mse, data_range),
    })
}

fn check_range(data_range: f64) -> Result<()> {
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    Ok(())
}

/// SSIM constants: Gaussian window side, its σ, and the stabilizer factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filter: output is `(w - k + 1) × (h - k + 1)`.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * data[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * tmp[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one band pair over every window position free of nodata.
/// Returns `None` when no window qualifies.
pub fn ssim_plane(
    x: &[f64],
    y: &[f64],
    valid: &[bool],
    w: usize,
    h: usize,
    data_range: f64,
    params: &SsimParams,
) -> Option<f64> {
    let taps = params.taps();
    let k = params.window;
    let c1 = (params.k1 * data_range).powi(2);
    let c2 = (params.k2 * data_range).powi(2);
    let clean = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(valid).map(|(&a, &ok)| if ok { a } else { 0.0 }).collect()
    };
    let (x, y) = (clean(x), clean(y));
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(&x, w, h, &taps);
    let my = filter_valid(&y, w, h, &taps);
    let exx = filter_valid(&xx, w, h, &taps);
    let eyy = filter_valid(&yy, w, h, &taps);
    let exy = filter_valid(&xy, w, h, &taps);

    // Windows touching nodata are skipped; an integral image counts invalid pixels.
    let mut bad = vec![0u32; (w + 1) * (h + 1)];
    for r in 0..h {
        for c in 0..w {
            bad[(r + 1) * (w + 1) + c + 1] = u32::from(!valid[r * w + c]) + bad[r * (w + 1) + c + 1]
                + bad[(r + 1) * (w + 1) + c]
                - bad[r * (w + 1) + c];
        }
    }
    let ow = w - k + 1;
    let mut sum = 0.0;
    let mut n = 0u64;
    for (i, ((((&mx, &my), &exx), &eyy), &exy)) in
        mx.iter().zip(&my).zip(&exx).zip(&eyy).zip(&exy).enumerate()
    {
        let (r, c) = (i / ow, i % ow);
        let invalid = bad[(r + k) * (w + 1) + c + k] + bad[r * (w + 1) + c]
            - bad[r * (w + 1) + c + k]
            - bad[(r + k) * (w + 1) + c];
        if invalid > 0 {
            continue;
        }
        let sx = exx - mx * mx;
        let sy = eyy - my * my;
        let sxy = exy - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sx + sy + c2);
        sum += num / den;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean SSIM per band (Gaussian 11×11 window, σ = 1.5, k1 = 0.01, k2 = 0.03).
pub fn ssim(pred: &MultiBandRaster, reference: &MultiBandRaster, data_range: f64) -> Result<Vec<f64>> {
    ssim_with(pred, reference, data_range, &SsimParams::default())
}

pub fn ssim_with(
    pred: &MultiBandRaster,
    reference: &MultiBandRaster,
    data_range: f64,
    params: &SsimParams,
) -> Result<Vec<f64>> {
    check_pair(pred, reference)?;
    check_range(data_range)?;
    let (w, h) = (pred.width(), pred.height());
    if w < params.window || h < params.window {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    use rayon::prelude::*;
    (0..pred.band_count())
        .into_par_iter()
        .map(|b| {
            let x = pred.band(b).to_f64();
            let y = reference.band(b).to_f64();
            let valid: Vec<bool> = x
                .iter()
                .zip(&y)
                .map(|(&a, &c)| !pred.is_nodata(a) && !reference.is_nodata(c))
                .collect();
            ssim_plane(&x, &y, &valid, w, h, data_range, params).ok_or_else(|| {
                Error::InsufficientData(format!("band {b}: no SSIM window free of nodata"))
            })
        })
        .collect()
}

/// Summary of a signed difference map band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub mean_abs: f64,
    pub sample_count: u64,
}

impl From<DiffSums> for DiffSummary {
    fn from(s: DiffSums) -> Self {
        let n = s.count as f64;
        Self {
            min: s.min,
            max: s.max,
            mean: s.sum / n,
            mean_abs: s.sum_abs / n,
            sample_count: s.count,
        }
    }
}

/// Signed `pred - ref` per band plus per-band summaries.
pub fn diff_map(
    pred: &MultiBandRaster,
    reference: &MultiBandRaster,
) -> Result<(MultiBandRaster, Vec<DiffSummary>)> {
    check_pair(pred, reference)?;
    let bands: Vec<Vec<f64>> = (0..pred.band_count())
        .map(|b| {
            let (p, r) = (pred.band(b), reference.band(b));
            (0..p.len())
                .map(|i| {
                    let (pv, rv) = (p.get(i), r.get(i));
                    if pred.is_nodata(pv) || reference.is_nodata(rv) {
                        f64::NAN
                    } else {
                        pv - rv
                    }
                })
                .collect()
        })
        .collect();
    let has_nodata = bands.iter().flatten().any(|v| v.is_nan());
    let summaries = (0..pred.band_count())
        .map(|b| {
            let s = band_diff_sums(pred, reference, b);
            if s.count == 0 {
                Err(Error::InsufficientData(format!("band {b} has no pixels valid on both sides")))
            } else {
                Ok(DiffSummary::from(s))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let map = MultiBandRaster::new(
        pred.width(),
        pred.height(),
        bands
            .into_iter()
            .map(|b| crate::BandBuffer::Float32(b.into_iter().map(|v| v as f32).collect()))
            .collect(),
        pred.band_names().to_vec(),
        has_nodata.then_some(f64::NAN),
        reference.geo_meta().clone(),
    )?;
    Ok((map, summaries))
}

/// Symmetric clamp range `(-r, r)` with `r = max |diff|` for PNG export.
pub fn diff_clamp_range(summary: &DiffSummary) -> (f64, f64) {
    let r = summary.min.abs().max(summary.max.abs());
    let r = if r > 0.0 { r } else { 1.0 };
    (-r, r)
}

/// Counts of one source under the shared binning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSource {
    pub label: String,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub band: usize,
    pub bin_edges: Vec<f64>,
    pub sources: Vec<HistogramSource>,
}

impl HistogramReport {
    /// `bin_low,bin_high,<label>...` with one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high");
        for s in &self.sources {
            out.push(',');
            out.push_str(&csv_field(&s.label));
        }
        out.push('\n');
        for i in 0..self.bin_edges.len() - 1 {
            out.push_str(&format!("{:?},{:?}", self.bin_edges[i], self.bin_edges[i + 1]));
            for s in &self.sources {
                out.push_str(&format!(",{}", s.counts[i]));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Histograms of band `band` of every source under one shared binning that spans
/// the union of their valid ranges.
pub fn histogram_compare(
    sources: &[(&str, &MultiBandRaster)],
    band: usize,
    bins: usize,
) -> Result<HistogramReport> {
    if sources.is_empty() {
        return Err(Error::InsufficientData("no rasters to compare".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if let Some((label, _)) = sources.iter().find(|(_, r)| band >= r.band_count()) {
        return Err(Error::InvalidArgument(format!("band {band} missing from `{label}`")));
    }
    let (lo, hi) = sources
        .iter()
        .flat_map(|(_, r)| r.valid_samples(band))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InsufficientData(format!(
            "band {band}: no valid samples to bin"
        )));
    }
    let empty = Histogram::new(lo, hi, bins);
    let sources = sources
        .iter()
        .map(|(label, r)| {
            let mut h = empty.clone();
            r.valid_samples(band).for_each(|v| h.add(v));
            HistogramSource {
                label: label.to_string(),
                counts: h.counts,
            }
        })
        .collect();
    Ok(HistogramReport {
        band,
        bin_edges: empty.bin_edges,
        sources,
    })
}

/// Metrics of one band, or of all bands when `band_name` is `"all"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub band_name: String,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the error is zero (infinite PSNR).
    pub psnr: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim: f64,
    pub sample_count: u64,
}

impl BandMetrics {
    fn new(name: &str, e: &ErrorStats, ssim: f64, data_range: f64) -> Self {
        let psnr = psnr_from_mse(e.mse, data_range);
        Self {
            band_name: name.to_string(),
            mse: e.mse,
            rmse: e.rmse,
            mae: e.mae,
            psnr,
            psnr_infinite: psnr.is_none(),
            ssim,
            sample_count: e.sample_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_band: Vec<BandMetrics>,
    pub aggregate: BandMetrics,
    pub data_range: f64,
    pub sample_count: u64,
}

/// All metrics of `pred` against `reference`. Aggregate SSIM is the band mean.
pub fn metric_report(pred: &MultiBandRaster, reference: &MultiBandRaster, data_range: f64) -> Result<MetricReport> {
    check_range(data_range)?;
    let errors = pixel_errors(pred, reference)?;
    let ssims = ssim(pred, reference, data_range)?;
    Ok(report_from_parts(reference.band_names(), &errors, &ssims, data_range))
}

pub(crate) fn report_from_parts(
    names: &[String],
    errors: &PixelErrors,
    ssims: &[f64],
    data_range: f64,
) -> MetricReport {
    let per_band = names
        .iter()
        .zip(&errors.per_band)
        .zip(ssims)
        .map(|((n, e), &s)| BandMetrics::new(n, e, s, data_range))
        .collect();
    let mean_ssim = ssims.iter().sum::<f64>() / ssims.len() as f64;
    MetricReport {
        per_band,
        aggregate: BandMetrics::new("all", &errors.aggregate, mean_ssim, data_range),
        data_range,
        sample_count: errors.aggregate.sample_count,
    }
}
