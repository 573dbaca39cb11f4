//! Synthetic cross-sensor pairs with a known distortion.
//!
//! A high-resolution raster is pushed through cross-band mixing, a per-band affine
//! map, an optional signed power law, a Lanczos-3 downscale and additive Gaussian
//! noise. The noise sample of band `b`, pixel `i` is drawn by Box-Muller from two
//! 64-bit words at position `4·i` of the ChaCha8 stream `b` keyed by the seed, so
//! each value depends only on `(seed, band, pixel)` and never on thread schedule.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align, AlignMethod};
use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};
use crate::metrics::{pixel_errors, psnr_from_mse, ssim};
use crate::raster::MultiBandRaster;
use crate::resample::{resample, shrink_by, Kernel, ResampleSpec};

pub const NOISE_ALGORITHM: &str = "chacha8-stream-per-band/box-muller";

fn default_scale() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    pub gains: Vec<f64>,
    pub biases: Vec<f64>,
    /// Row-major `c × c` matrix applied to each pixel vector before the affine step.
    #[serde(default)]
    pub mixing: Option<Vec<f64>>,
    /// Per-band exponent of `sign(v)·|v|^γ`.
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_scale")]
    pub scale_factor: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DistortionSpec {
    /// Gain 1, bias 0, scale 1, no noise.
    pub fn identity(bands: usize) -> Self {
        Self {
            gains: vec![1.0; bands],
            biases: vec![0.0; bands],
            mixing: None,
            gamma: None,
            noise_sigma: 0.0,
            scale_factor: 1,
            seed: 0,
        }
    }

    /// Per-band gain and bias only, at the default scale factor.
    pub fn affine(gains: Vec<f64>, biases: Vec<f64>) -> Self {
        Self {
            gains,
            biases,
            scale_factor: default_scale(),
            ..Self::identity(0)
        }
    }

    /// Checks parameter ranges and that every per-band list has `bands` entries.
    pub fn validate(&self, bands: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.gains.len() != bands || self.biases.len() != bands {
            problems.push(format!(
                "expected {bands} gains and biases, got {} and {}",
                self.gains.len(),
                self.biases.len()
            ));
        }
        if self.gains.iter().any(|g| *g == 0.0 || !g.is_finite()) {
            problems.push("gains must be finite and nonzero".to_string());
        }
        if self.biases.iter().any(|b| !b.is_finite()) {
            problems.push("biases must be finite".to_string());
        }
        if let Some(m) = &self.mixing {
            if m.len() != bands * bands || m.iter().any(|v| !v.is_finite()) {
                problems.push(format!("mixing must be {bands}x{bands} finite values"));
            }
        }
        if let Some(g) = &self.gamma {
            if g.len() != bands || g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                problems.push(format!("gamma must be {bands} positive values"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            problems.push(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.scale_factor == 0 {
            problems.push("scale_factor must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid distortion spec: {}", problems.join("; "))))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// Ground-truth record of a generated pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: DistortionSpec,
    pub hr_width: usize,
    pub hr_height: usize,
    pub lr_width: usize,
    pub lr_height: usize,
    pub band_names: Vec<String>,
    pub downscale_kernel: Kernel,
    pub noise_algorithm: String,
}

impl SynthManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// Band-limited procedural scene in roughly `[0.05, 0.95]`: per band a weighted sum
/// of eight shared plane waves below 0.08 cycles/pixel, so a 3× Lanczos
/// downscale keeps it essentially alias-free. Bands are correlated but full rank.
pub fn scene(width: usize, height: usize, bands: usize, seed: u64) -> Result<MultiBandRaster> {
    const WAVES: usize = 8;
    const MAX_FREQ: f64 = 0.08;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..WAVES)
        .map(|_| {
            (
                rng.gen_range(-MAX_FREQ..MAX_FREQ),
                rng.gen_range(-MAX_FREQ..MAX_FREQ),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let weights: Vec<Vec<(f64, f64)>> = (0..bands)
        .map(|_| (0..WAVES).map(|_| (rng.gen_range(0.2..1.0), rng.gen_range(-0.5..0.5))).collect())
        .collect();
    let data = weights
        .par_iter()
        .map(|w| {
            let norm: f64 = w.iter().map(|(a, _)| a).sum();
            (0..width * height)
                .map(|i| {
                    let (x, y) = ((i % width) as f64, (i / width) as f64);
                    let v: f64 = waves
                        .iter()
                        .zip(w)
                        .map(|(&(fx, fy, phase), &(a, shift))| {
                            a * (2.0 * PI * (fx * x + fy * y) + phase + shift).cos()
                        })
                        .sum();
                    (0.5 + 0.45 * v / norm) as f32
                })
                .collect()
        })
        .collect();
    MultiBandRaster::from_f32(width, height, data)
}

/// Standard normal draw for `(seed, band, pixel)`.
pub fn gaussian(seed: u64, band: usize, pixel: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(band as u64);
    rng.set_word_pos(4 * pixel as u128);
    box_muller(&mut rng)
}

#[inline]
fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE;
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Spectral part of the distortion (mix, affine, gamma) on one pixel vector.
fn distort_pixel(spec: &DistortionSpec, x: &[f64], out: &mut [f64]) {
    let c = x.len();
    match &spec.mixing {
        Some(m) => {
            for (r, o) in out.iter_mut().enumerate() {
                *o = (0..c).map(|k| m[r * c + k] * x[k]).sum();
            }
        }
        None => out.copy_from_slice(x),
    }
    for (b, o) in out.iter_mut().enumerate() {
        *o = spec.gains[b] * *o + spec.biases[b];
        if let Some(g) = &spec.gamma {
            *o = o.signum() * o.abs().powf(g[b]);
        }
    }
}

/// Produces the distorted low-resolution counterpart of `hr` and its manifest.
/// A pixel that is nodata in any band is nodata in every output band.
pub fn make_pair(hr: &MultiBandRaster, spec: &DistortionSpec) -> Result<(MultiBandRaster, SynthManifest)> {
    let c = hr.band_count();
    spec.validate(c)?;
    let n = hr.pixel_count();
    let planes: Vec<Vec<f64>> = hr.bands().iter().map(|b| b.to_f64()).collect();
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; n]; c];
    let mut x = vec![0.0; c];
    let mut y = vec![0.0; c];
    for i in 0..n {
        for b in 0..c {
            x[b] = planes[b][i];
        }
        if x.iter().any(|&v| hr.is_nodata(v)) {
            out.iter_mut().for_each(|o| o[i] = f64::NAN);
            continue;
        }
        distort_pixel(spec, &x, &mut y);
        for b in 0..c {
            out[b][i] = y[b];
        }
    }
    let spectral = hr.derive_f32(out)?;
    let mut lr = if spec.scale_factor > 1 {
        shrink_by(&spectral, spec.scale_factor, Kernel::Lanczos3)?
    } else {
        spectral
    };
    if spec.noise_sigma > 0.0 {
        lr = add_noise(&lr, spec.noise_sigma, spec.seed)?;
    }
    let manifest = SynthManifest {
        spec: spec.clone(),
        hr_width: hr.width(),
        hr_height: hr.height(),
        lr_width: lr.width(),
        lr_height: lr.height(),
        band_names: hr.band_names().to_vec(),
        downscale_kernel: Kernel::Lanczos3,
        noise_algorithm: NOISE_ALGORITHM.to_string(),
    };
    Ok((lr, manifest))
}

fn add_noise(raster: &MultiBandRaster, sigma: f64, seed: u64) -> Result<MultiBandRaster> {
    let w = raster.width();
    let bands: Vec<Vec<f64>> = (0..raster.band_count())
        .into_par_iter()
        .map(|b| {
            let band = raster.band(b);
            let mut out = vec![0.0; raster.pixel_count()];
            out.par_chunks_mut(w).enumerate().for_each(|(row, line)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                rng.set_word_pos(4 * (row * w) as u128);
                for (x, o) in line.iter_mut().enumerate() {
                    let z = box_muller(&mut rng);
                    let v = band.get(row * w + x);
                    *o = if raster.is_nodata(v) { v } else { v + sigma * z };
                }
            });
            out
        })
        .collect();
    raster.derive_f32(bands)
}

/// PSNR (dB, `None` when infinite) and mean SSIM over bands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub mse: f64,
    pub psnr: Option<f64>,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub method: AlignMethod,
    /// Dynamic range of `hr`, used for PSNR and SSIM.
    pub data_range: f64,
    pub pre: QualityScore,
    pub post: QualityScore,
}

fn score(pred: &MultiBandRaster, reference: &MultiBandRaster, data_range: f64) -> Result<QualityScore> {
    let e = pixel_errors(pred, reference)?;
    let s = ssim(pred, reference, data_range)?;
    Ok(QualityScore {
        mse: e.aggregate.mse,
        psnr: psnr_from_mse(e.aggregate.mse, data_range),
        ssim: s.iter().sum::<f64>() / s.len() as f64,
    })
}

/// Dynamic range `max - min` over all valid samples, or 1 when constant.
pub fn dynamic_range(raster: &MultiBandRaster) -> f64 {
    let (lo, hi) = (0..raster.band_count())
        .flat_map(|b| raster.valid_samples(b))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Distorts `hr`, upscales the result back to `hr` size, aligns it onto `hr`
/// with `method` and scores both the unaligned and the aligned upscale.
pub fn verify_recovery(hr: &MultiBandRaster, spec: &DistortionSpec, method: AlignMethod) -> Result<RecoveryReport> {
    if method == AlignMethod::None {
        return Err(Error::InvalidArgument("recovery needs an alignment method (hm or fdm)".into()));
    }
    let (lr, _) = make_pair(hr, spec)?;
    let upscaled = resample(&lr, &ResampleSpec::new(hr.width(), hr.height(), Kernel::Lanczos3))?;
    let aligned = align(&upscaled, hr, method)?;
    let data_range = dynamic_range(hr);
    Ok(RecoveryReport {
        method,
        data_range,
        pre: score(&upscaled, hr, data_range)?,
        post: score(&aligned, hr, data_range)?,
    })
}
