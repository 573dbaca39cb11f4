//! Spectral alignment of a source raster onto a reference raster.
//!
//! Two methods are provided:
//!
//! * **Histogram matching**: an independent monotone remapping per band. A source
//!   sample at average rank `r` among `N_s` valid samples has quantile
//!   `q = r / (N_s - 1)` and is replaced by the reference quantile function at `q`,
//!   linearly interpolated between sorted reference samples. The quantile position is
//!   evaluated in exact integer arithmetic so equal-size inputs map sample-for-sample.
//! * **Feature distribution matching**: an affine map in band space,
//!   `y = A (x - μ_s) + μ_t` with `A = L_t L_s^{-1}` built from Cholesky factors,
//!   which transfers the reference mean vector and covariance matrix onto the source
//!   while leaving spatial content untouched.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;
use crate::stats::chunked_reduce;

/// Alignment method selector used by the synth module and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMethod {
    Hm,
    Fdm,
    None,
}

impl std::str::FromStr for AlignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hm" => Ok(Self::Hm),
            "fdm" => Ok(Self::Fdm),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown alignment method `{other}` (expected hm, fdm or none)"
            ))),
        }
    }
}

impl std::fmt::Display for AlignMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlignMethod::Hm => "hm",
            AlignMethod::Fdm => "fdm",
            AlignMethod::None => "none",
        })
    }
}

/// Applies `method` with `reference` as target. `None` returns the source as float32.
pub fn align(source: &MultiBandRaster, reference: &MultiBandRaster, method: AlignMethod) -> Result<MultiBandRaster> {
    match method {
        AlignMethod::Hm => histogram_match(source, reference),
        AlignMethod::Fdm => apply_fdm(source, &fit_fdm(source, reference)?),
        AlignMethod::None => crate::io::convert_encoding(source, crate::SampleEncoding::Float32Reflectance),
    }
}

/// Per-band histogram matching of `source` onto `reference`.
pub fn histogram_match(source: &MultiBandRaster, reference: &MultiBandRaster) -> Result<MultiBandRaster> {
    if source.band_count() != reference.band_count() {
        return Err(Error::BandMismatch {
            expected: source.band_count(),
            found: reference.band_count(),
        });
    }
    let bands = (0..source.band_count())
        .into_par_iter()
        .map(|b| {
            let mut target: Vec<f64> = reference.valid_samples(b).collect();
            let src: Vec<f64> = source.band(b).to_f64();
            let valid = src.iter().filter(|&&v| !source.is_nodata(v)).count();
            if valid < 2 || target.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "band {b}: histogram matching needs at least 2 valid samples on each side \
                     (source {valid}, reference {})",
                    target.len()
                )));
            }
            target.sort_by(f64::total_cmp);
            Ok(match_band(&src, |v| source.is_nodata(v), &target))
        })
        .collect::<Result<Vec<_>>>()?;
    source.derive_f32(bands)
}

/// Maps every valid entry of `src` through the reference quantile function of `sorted_ref`.
fn match_band(src: &[f64], is_nodata: impl Fn(f64) -> bool, sorted_ref: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..src.len()).filter(|&i| !is_nodata(src[i])).collect();
    order.par_sort_by(|&a, &b| src[a].total_cmp(&src[b]));
    let n_src = order.len() as u128;
    let n_ref = sorted_ref.len() as u128;
    let den = 2 * (n_src - 1);

    let mut out = vec![f64::NAN; src.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && src[order[j]].total_cmp(&src[order[i]]) == Ordering::Equal {
            j += 1;
        }
        // Twice the average zero-based rank of the tie group [i, j).
        let rank2 = (i + j - 1) as u128;
        let num = rank2 * (n_ref - 1);
        let lo = (num / den) as usize;
        let rem = num % den;
        let value = if rem == 0 {
            sorted_ref[lo]
        } else {
            let (a, b) = (sorted_ref[lo], sorted_ref[lo + 1]);
            let frac = rem as f64 / den as f64;
            (a + frac * (b - a)).clamp(a, b)
        };
        for &k in &order[i..j] {
            out[k] = value;
        }
        i = j;
    }
    out
}

/// Mean vector and co-moment matrix accumulated over pixel vectors.
#[derive(Clone, Debug, PartialEq)]
struct JointMoments {
    count: u64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl JointMoments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    fn push(&mut self, x: &[f64], delta: &mut [f64]) {
        let c = self.mean.len();
        self.count += 1;
        let n = self.count as f64;
        for k in 0..c {
            delta[k] = x[k] - self.mean[k];
            self.mean[k] += delta[k] / n;
        }
        for r in 0..c {
            let after = x[r] - self.mean[r];
            for s in 0..c {
                self.comoment[r * c + s] += after * delta[s];
            }
        }
    }

    fn merge(self, other: JointMoments) -> JointMoments {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let c = self.mean.len();
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let delta: Vec<f64> = (0..c).map(|k| other.mean[k] - self.mean[k]).collect();
        let mean = (0..c).map(|k| self.mean[k] + delta[k] * nb / n).collect();
        let mut comoment = vec![0.0; c * c];
        for r in 0..c {
            for s in 0..c {
                comoment[r * c + s] = self.comoment[r * c + s]
                    + other.comoment[r * c + s]
                    + delta[r] * delta[s] * na * nb / n;
            }
        }
        JointMoments {
            count,
            mean,
            comoment,
        }
    }

    /// Population covariance, symmetrized.
    fn covariance(&self) -> Vec<f64> {
        let c = self.mean.len();
        let n = self.count as f64;
        let mut cov = vec![0.0; c * c];
        for r in 0..c {
            for s in 0..c {
                cov[r * c + s] = 0.5 * (self.comoment[r * c + s] + self.comoment[s * c + r]) / n;
            }
        }
        cov
    }
}

/// Mean vector and population covariance (row-major) over pixels valid in every band.
pub fn pixel_moments(raster: &MultiBandRaster) -> (u64, Vec<f64>, Vec<f64>) {
    let c = raster.band_count();
    let m = chunked_reduce(
        raster.pixel_count(),
        JointMoments::new(c),
        |mut acc, range| {
            let mut x = vec![0.0; c];
            let mut delta = vec![0.0; c];
            'px: for i in range {
                for (b, slot) in x.iter_mut().enumerate() {
                    let v = raster.band(b).get(i);
                    if raster.is_nodata(v) {
                        continue 'px;
                    }
                    *slot = v;
                }
                acc.push(&x, &mut delta);
            }
            acc
        },
        JointMoments::merge,
    );
    let cov = if m.count > 0 { m.covariance() } else { vec![0.0; c * c] };
    (m.count, m.mean, cov)
}

/// Relative eigenvalue floor: `ε = FDM_EPSILON · trace(Σ) / c`.
pub const FDM_EPSILON: f64 = 1e-8;

/// Fit-time diagnostics kept alongside the transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub source_count: u64,
    pub target_count: u64,
    /// Row-major `c×c`.
    pub source_covariance: Vec<f64>,
    /// Row-major `c×c`.
    pub target_covariance: Vec<f64>,
    pub source_floor: f64,
    pub target_floor: f64,
    /// Eigenvalues raised to the floor, over both covariance matrices.
    pub eigenvalue_floors_applied: usize,
}

/// Fitted affine map `y = A (x - μ_s) + μ_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    pub dimension: usize,
    pub source_mean: Vec<f64>,
    pub target_mean: Vec<f64>,
    /// Row-major `c×c` matrix `A`.
    pub matrix: Vec<f64>,
    pub regularization_epsilon: f64,
    pub fit_diagnostics: FitDiagnostics,
}

impl AlignmentTransform {
    pub fn identity(dimension: usize) -> Self {
        let mut matrix = vec![0.0; dimension * dimension];
        (0..dimension).for_each(|i| matrix[i * dimension + i] = 1.0);
        Self {
            dimension,
            source_mean: vec![0.0; dimension],
            target_mean: vec![0.0; dimension],
            matrix,
            regularization_epsilon: FDM_EPSILON,
            fit_diagnostics: FitDiagnostics {
                source_count: 0,
                target_count: 0,
                source_covariance: vec![0.0; dimension * dimension],
                target_covariance: vec![0.0; dimension * dimension],
                source_floor: 0.0,
                target_floor: 0.0,
                eigenvalue_floors_applied: 0,
            },
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let t: Self = read_json(path)?;
        let c = t.dimension;
        if t.source_mean.len() != c || t.target_mean.len() != c || t.matrix.len() != c * c {
            return Err(Error::InvalidArgument(format!(
                "transform arrays do not match dimension {c}"
            )));
        }
        Ok(t)
    }

    /// Maps one pixel vector.
    #[inline]
    pub fn apply_pixel(&self, x: &[f64], out: &mut [f64]) {
        let c = self.dimension;
        for r in 0..c {
            let mut acc = 0.0;
            for s in 0..c {
                acc += self.matrix[r * c + s] * (x[s] - self.source_mean[s]);
            }
            out[r] = acc + self.target_mean[r];
        }
    }
}

/// Lower Cholesky factor of `cov`, with eigenvalues floored at `epsilon · trace / c`
/// first when any fall below. Returns `(factor, floor, floors_applied)`.
fn floored_cholesky(cov: &[f64], c: usize, epsilon: f64) -> (DMatrix<f64>, f64, usize) {
    let m = DMatrix::from_row_slice(c, c, cov);
    let trace = m.trace();
    let floor = if trace > 0.0 { epsilon * trace / c as f64 } else { epsilon };
    let eig = SymmetricEigen::new(m.clone());
    let floors = eig.eigenvalues.iter().filter(|&&l| l < floor).count();
    let m = if floors == 0 {
        m
    } else {
        let d = DVector::from_iterator(c, eig.eigenvalues.iter().map(|&l| l.max(floor)));
        let v = &eig.eigenvectors;
        let r = v * DMatrix::from_diagonal(&d) * v.transpose();
        (&r + r.transpose()) * 0.5
    };
    let l = match Cholesky::new(m.clone()) {
        Some(ch) => ch.l(),
        // Rounding left the floored matrix a hair short of definite.
        None => Cholesky::new(m + DMatrix::identity(c, c) * floor).expect("floored matrix is definite").l(),
    };
    (l, floor, floors)
}

/// Fits `A = L_t L_s^{-1}` from the Cholesky factors of both covariances, so that
/// `A Σ_s Aᵀ = Σ_t`. Because `chol(D Σ Dᵀ) = D chol(Σ)` for any lower-triangular `D`
/// with positive diagonal, this exactly undoes per-band gain and offset changes.
pub fn fit_fdm(source: &MultiBandRaster, reference: &MultiBandRaster) -> Result<AlignmentTransform> {
    let c = source.band_count();
    if reference.band_count() != c {
        return Err(Error::BandMismatch {
            expected: c,
            found: reference.band_count(),
        });
    }
    let (ns, mu_s, cov_s) = pixel_moments(source);
    let (nt, mu_t, cov_t) = pixel_moments(reference);
    let need = (c + 1) as u64;
    if ns < need || nt < need {
        return Err(Error::InsufficientData(format!(
            "feature distribution matching needs at least {need} valid pixels per image \
             (source {ns}, reference {nt})"
        )));
    }
    if cov_s.iter().chain(&cov_t).chain(&mu_s).chain(&mu_t).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite mean or covariance entries".into()));
    }
    let (l_s, floor_s, floors_s) = floored_cholesky(&cov_s, c, FDM_EPSILON);
    let (l_t, floor_t, floors_t) = floored_cholesky(&cov_t, c, FDM_EPSILON);
    // A = L_t L_s^{-1}, i.e. Aᵀ solves L_sᵀ Aᵀ = L_tᵀ.
    let at = l_s
        .transpose()
        .solve_upper_triangular(&l_t.transpose())
        .expect("Cholesky factor has a positive diagonal");
    let a = at.transpose();
    let matrix: Vec<f64> = (0..c).flat_map(|r| (0..c).map(move |s| (r, s))).map(|(r, s)| a[(r, s)]).collect();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("fitted matrix has non-finite entries".into()));
    }
    Ok(AlignmentTransform {
        dimension: c,
        source_mean: mu_s,
        target_mean: mu_t,
        matrix,
        regularization_epsilon: FDM_EPSILON,
        fit_diagnostics: FitDiagnostics {
            source_count: ns,
            target_count: nt,
            source_covariance: cov_s,
            target_covariance: cov_t,
            source_floor: floor_s,
            target_floor: floor_t,
            eigenvalue_floors_applied: floors_s + floors_t,
        },
    })
}

/// Applies a fitted transform per pixel. A pixel with nodata in any band is nodata
/// in every output band.
pub fn apply_fdm(raster: &MultiBandRaster, transform: &AlignmentTransform) -> Result<MultiBandRaster> {
    let c = raster.band_count();
    if c != transform.dimension {
        return Err(Error::BandMismatch {
            expected: transform.dimension,
            found: c,
        });
    }
    let n = raster.pixel_count();
    let width = raster.width();
    let rows: Vec<Vec<f64>> = (0..raster.height())
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; width * c];
            let mut x = vec![0.0; c];
            let mut out = vec![0.0; c];
            for col in 0..width {
                let i = y * width + col;
                let mut valid = true;
                for (b, slot) in x.iter_mut().enumerate() {
                    *slot = raster.band(b).get(i);
                    valid &= !raster.is_nodata(*slot);
                }
                if valid {
                    transform.apply_pixel(&x, &mut out);
                } else {
                    out.iter_mut().for_each(|v| *v = f64::NAN);
                }
                row[col * c..(col + 1) * c].copy_from_slice(&out);
            }
            row
        })
        .collect();
    let mut bands = vec![Vec::with_capacity(n); c];
    for row in &rows {
        for px in row.chunks_exact(c) {
            for (b, &v) in px.iter().enumerate() {
                bands[b].push(v);
            }
        }
    }
    raster.derive_f32(bands)
}
