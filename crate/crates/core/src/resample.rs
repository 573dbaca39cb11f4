//! Separable Lanczos-3 / Catmull-Rom resampling.
//!
//! Output pixel `i` samples source coordinate `(i + 0.5)·(src/dst) − 0.5`. When
//! shrinking, the kernel is stretched by the reduction factor so it low-passes
//! before decimation. Taps outside the image clamp to the edge pixel, and the
//! weights of each output sample are renormalized over the taps that hold data.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Lanczos3,
    /// Catmull-Rom cubic (`a = -0.5`).
    Bicubic,
}

impl Kernel {
    pub fn radius(self) -> f64 {
        match self {
            Kernel::Lanczos3 => 3.0,
            Kernel::Bicubic => 2.0,
        }
    }

    pub fn weight(self, x: f64) -> f64 {
        let ax = x.abs();
        if ax >= self.radius() {
            return 0.0;
        }
        match self {
            Kernel::Lanczos3 => {
                if ax == 0.0 {
                    1.0
                } else if ax.fract() == 0.0 {
                    0.0
                } else {
                    sinc(ax) * sinc(ax / 3.0)
                }
            }
            Kernel::Bicubic => {
                const A: f64 = -0.5;
                if ax < 1.0 {
                    ((A + 2.0) * ax - (A + 3.0)) * ax * ax + 1.0
                } else {
                    ((A * ax - 5.0 * A) * ax + 8.0 * A) * ax - 4.0 * A
                }
            }
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lanczos" | "lanczos3" => Ok(Kernel::Lanczos3),
            "bicubic" | "cubic" | "catmull-rom" => Ok(Kernel::Bicubic),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

#[inline]
fn sinc(x: f64) -> f64 {
    let px = PI * x;
    px.sin() / px
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EdgePolicy {
    #[default]
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub target_width: usize,
    pub target_height: usize,
    pub kernel: Kernel,
    pub edge_policy: EdgePolicy,
}

impl ResampleSpec {
    pub fn new(target_width: usize, target_height: usize, kernel: Kernel) -> Self {
        Self {
            target_width,
            target_height,
            kernel,
            edge_policy: EdgePolicy::Clamp,
        }
    }
}

/// Unnormalized `(source index, weight)` taps for every output index along one axis.
pub fn axis_taps(src: usize, dst: usize, kernel: Kernel) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    let stretch = ratio.max(1.0);
    let support = kernel.radius() * stretch;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let first = (center - support).ceil() as i64;
            let last = (center + support).floor() as i64;
            (first..=last)
                .filter_map(|j| {
                    let w = kernel.weight((j as f64 - center) / stretch);
                    (w != 0.0).then(|| (j.clamp(0, src as i64 - 1) as usize, w))
                })
                .collect()
        })
        .collect()
}

/// Weighted mean over taps holding data (non-NaN), anchored on the first valid
/// tap so a constant neighbourhood reproduces its value exactly.
#[inline]
fn convolve(taps: &[(usize, f64)], sample: impl Fn(usize) -> f64) -> f64 {
    let mut anchor = f64::NAN;
    let mut weight_sum = 0.0;
    let mut acc = 0.0;
    for &(j, w) in taps {
        let v = sample(j);
        if v.is_nan() {
            continue;
        }
        if anchor.is_nan() {
            anchor = v;
        }
        weight_sum += w;
        acc += w * (v - anchor);
    }
    if anchor.is_nan() || weight_sum.abs() < 1e-12 {
        f64::NAN
    } else {
        anchor + acc / weight_sum
    }
}

/// Resamples one band of `w`×`h` samples (NaN = no data) to `spec` size.
pub fn resample_plane(data: &[f64], w: usize, h: usize, spec: &ResampleSpec) -> Vec<f64> {
    let (tw, th) = (spec.target_width, spec.target_height);
    let xt = axis_taps(w, tw, spec.kernel);
    let yt = axis_taps(h, th, spec.kernel);
    let mut horizontal = vec![0.0; tw * h];
    horizontal
        .par_chunks_mut(tw)
        .enumerate()
        .for_each(|(y, out)| {
            let row = &data[y * w..(y + 1) * w];
            for (x, o) in out.iter_mut().enumerate() {
                *o = convolve(&xt[x], |j| row[j]);
            }
        });
    let mut out = vec![0.0; tw * th];
    out.par_chunks_mut(tw).enumerate().for_each(|(y, line)| {
        let taps = &yt[y];
        for (x, o) in line.iter_mut().enumerate() {
            *o = convolve(taps, |j| horizontal[j * tw + x]);
        }
    });
    out
}

pub fn resample(raster: &MultiBandRaster, spec: &ResampleSpec) -> Result<MultiBandRaster> {
    if spec.target_width == 0 || spec.target_height == 0 {
        return Err(Error::InvalidArgument(format!(
            "target dimensions must be positive, got {}x{}",
            spec.target_width, spec.target_height
        )));
    }
    let (w, h) = (raster.width(), raster.height());
    let bands: Vec<Vec<f64>> = (0..raster.band_count())
        .into_par_iter()
        .map(|b| {
            let plane: Vec<f64> = raster
                .band(b)
                .iter()
                .map(|v| if raster.is_nodata(v) { f64::NAN } else { v })
                .collect();
            resample_plane(&plane, w, h, spec)
        })
        .collect();
    let has_nodata = raster.nodata().is_some() || bands.iter().flatten().any(|v| v.is_nan());
    let bands = bands
        .into_iter()
        .map(|b| crate::BandBuffer::Float32(b.into_iter().map(|v| v as f32).collect()))
        .collect();
    MultiBandRaster::new(
        spec.target_width,
        spec.target_height,
        bands,
        raster.band_names().to_vec(),
        has_nodata.then_some(f64::NAN),
        raster.geo_meta().clone(),
    )
}

/// Integer rescale by `factor` (>1 magnifies, <1 via [`shrink_by`]).
pub fn magnify_by(raster: &MultiBandRaster, factor: usize, kernel: Kernel) -> Result<MultiBandRaster> {
    resample(
        raster,
        &ResampleSpec::new(raster.width() * factor, raster.height() * factor, kernel),
    )
}

pub fn shrink_by(raster: &MultiBandRaster, factor: usize, kernel: Kernel) -> Result<MultiBandRaster> {
    if factor == 0 {
        return Err(Error::InvalidArgument("scale factor must be positive".into()));
    }
    resample(
        raster,
        &ResampleSpec::new(
            (raster.width() / factor).max(1),
            (raster.height() / factor).max(1),
            kernel,
        ),
    )
}
