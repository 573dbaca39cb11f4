//! Patch-grid extraction, dataset statistics and min-max normalization.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MetaValue, MultiBandRaster};
use crate::stats::{chunked_reduce, Histogram, Moments};

pub const DEFAULT_HISTOGRAM_BINS: usize = 256;

/// Non-overlapping grid anchored at the upper-left corner; the right and bottom
/// remainders are discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub cols: usize,
    pub rows: usize,
    pub discarded_right: usize,
    pub discarded_bottom: usize,
}

impl PatchGrid {
    pub fn new(width: usize, height: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        if patch_size > width.min(height) {
            return Err(Error::InvalidArgument(format!(
                "patch size {patch_size} exceeds raster {width}x{height}"
            )));
        }
        let cols = width / patch_size;
        let rows = height / patch_size;
        Ok(Self {
            patch_size,
            cols,
            rows,
            discarded_right: width - cols * patch_size,
            discarded_bottom: height - rows * patch_size,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel offset `(x, y)` of patch `k` in row-major order.
    pub fn offset(&self, k: usize) -> (usize, usize) {
        ((k % self.cols) * self.patch_size, (k / self.cols) * self.patch_size)
    }
}

/// Metadata keys added to every extracted patch.
pub const META_PATCH_ROW: &str = "patch_row";
pub const META_PATCH_COL: &str = "patch_col";
pub const META_PATCH_X: &str = "patch_x_offset";
pub const META_PATCH_Y: &str = "patch_y_offset";

/// Stable identifier of the patch at grid position (`row`, `col`).
pub fn patch_id(row: usize, col: usize) -> String {
    format!("r{row:03}_c{col:03}")
}

/// Cuts `raster` into row-major patches. Each patch keeps the parent metadata and
/// records its grid position and pixel offset.
pub fn extract_patches(
    raster: &MultiBandRaster,
    patch_size: usize,
) -> Result<(PatchGrid, Vec<MultiBandRaster>)> {
    let grid = PatchGrid::new(raster.width(), raster.height(), patch_size)?;
    let patches = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (x, y) = grid.offset(k);
            Ok(raster
                .crop(x, y, patch_size, patch_size)?
                .with_meta_entry(META_PATCH_ROW, MetaValue::Numbers(vec![(k / grid.cols) as f64]))
                .with_meta_entry(META_PATCH_COL, MetaValue::Numbers(vec![(k % grid.cols) as f64]))
                .with_meta_entry(META_PATCH_X, MetaValue::Numbers(vec![x as f64]))
                .with_meta_entry(META_PATCH_Y, MetaValue::Numbers(vec![y as f64])))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, patches))
}

/// Summary of one band (or of all bands pooled).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsEntry {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub sample_count: u64,
    pub histogram: Histogram,
}

impl StatsEntry {
    fn from_parts(m: Moments, histogram: Histogram) -> Self {
        Self {
            min: m.min,
            max: m.max,
            mean: m.mean.clamp(m.min, m.max),
            std: m.std(),
            sample_count: m.count,
            histogram,
        }
    }
}

/// Dataset statistics manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStatistics {
    pub band_names: Vec<String>,
    pub per_band: Vec<StatsEntry>,
    pub overall: StatsEntry,
    /// Valid (non-nodata) samples across every band.
    pub sample_count: u64,
}

impl BandStatistics {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

fn band_moments(raster: &MultiBandRaster, band: usize) -> Moments {
    let buf = raster.band(band);
    chunked_reduce(
        buf.len(),
        Moments::default(),
        |mut acc, range| {
            for i in range {
                let v = buf.get(i);
                if !raster.is_nodata(v) {
                    acc.push(v);
                }
            }
            acc
        },
        Moments::merge,
    )
}

fn band_histogram(raster: &MultiBandRaster, band: usize, empty: &Histogram) -> Histogram {
    let buf = raster.band(band);
    chunked_reduce(
        buf.len(),
        empty.clone(),
        |mut acc, range| {
            for i in range {
                let v = buf.get(i);
                if !raster.is_nodata(v) {
                    acc.add(v);
                }
            }
            acc
        },
        Histogram::merge,
    )
}

/// Min, max, mean, population std and histogram per band and over all bands.
///
/// Moments are accumulated with Welford updates over fixed chunks and merged in
/// a fixed order; the histogram spans `[global min, global max]` of its scope.
pub fn compute_stats(rasters: &[MultiBandRaster], bins: usize) -> Result<BandStatistics> {
    let first = rasters
        .first()
        .ok_or_else(|| Error::InsufficientData("no rasters given".into()))?;
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let bands = first.band_count();
    for r in rasters {
        if r.band_count() != bands {
            return Err(Error::BandMismatch {
                expected: bands,
                found: r.band_count(),
            });
        }
        if r.encoding() != first.encoding() {
            return Err(Error::InvalidArgument("rasters mix sample encodings".into()));
        }
    }

    let per_raster: Vec<Vec<Moments>> = rasters
        .par_iter()
        .map(|r| (0..bands).map(|b| band_moments(r, b)).collect())
        .collect();
    let band_totals: Vec<Moments> = (0..bands)
        .map(|b| {
            per_raster
                .iter()
                .fold(Moments::default(), |acc, m| acc.merge(m[b]))
        })
        .collect();
    let overall = band_totals
        .iter()
        .fold(Moments::default(), |acc, &m| acc.merge(m));
    if overall.count == 0 {
        return Err(Error::InsufficientData("no valid samples".into()));
    }
    if let Some(b) = band_totals.iter().position(|m| m.count == 0) {
        return Err(Error::InsufficientData(format!("band {b} has no valid samples")));
    }

    let empty_band: Vec<Histogram> = band_totals
        .iter()
        .map(|m| Histogram::new(m.min, m.max, bins))
        .collect();
    let empty_overall = Histogram::new(overall.min, overall.max, bins);
    let partial: Vec<(Vec<Histogram>, Histogram)> = rasters
        .par_iter()
        .map(|r| {
            let per: Vec<Histogram> = (0..bands)
                .map(|b| band_histogram(r, b, &empty_band[b]))
                .collect();
            let all = (0..bands).fold(empty_overall.clone(), |acc, b| {
                acc.merge(band_histogram(r, b, &empty_overall))
            });
            (per, all)
        })
        .collect();
    let mut band_hist = empty_band;
    let mut overall_hist = empty_overall;
    for (per, all) in partial {
        band_hist = band_hist.into_iter().zip(per).map(|(a, h)| a.merge(h)).collect();
        overall_hist = overall_hist.merge(all);
    }

    Ok(BandStatistics {
        band_names: first.band_names().to_vec(),
        per_band: band_totals
            .iter()
            .zip(band_hist)
            .map(|(&m, h)| StatsEntry::from_parts(m, h))
            .collect(),
        overall: StatsEntry::from_parts(overall, overall_hist),
        sample_count: overall.count,
    })
}

/// Scope of the min/max used for normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// One range over all bands.
    Global,
    /// Channel-wise ranges.
    #[default]
    PerBand,
}

impl std::str::FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "per_band" | "per-band" | "channel" => Ok(Self::PerBand),
            other => Err(Error::InvalidArgument(format!("unknown normalization mode `{other}`"))),
        }
    }
}

fn scopes(raster: &MultiBandRaster, stats: &BandStatistics, mode: NormalizationMode) -> Result<Vec<(f64, f64)>> {
    let ranges: Vec<(f64, f64)> = match mode {
        NormalizationMode::Global => vec![(stats.overall.min, stats.overall.max); raster.band_count()],
        NormalizationMode::PerBand => {
            if stats.per_band.len() != raster.band_count() {
                return Err(Error::BandMismatch {
                    expected: raster.band_count(),
                    found: stats.per_band.len(),
                });
            }
            stats.per_band.iter().map(|e| (e.min, e.max)).collect()
        }
    };
    if let Some((b, (lo, hi))) = ranges.iter().enumerate().find(|(_, (lo, hi))| hi.partial_cmp(lo) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::Domain(format!(
            "degenerate normalization range [{lo}, {hi}] for band {b}"
        )));
    }
    Ok(ranges)
}

/// `x' = clamp((x - min) / (max - min), 0, 1)`.
pub fn minmax_normalize(
    raster: &MultiBandRaster,
    stats: &BandStatistics,
    mode: NormalizationMode,
) -> Result<MultiBandRaster> {
    let ranges = scopes(raster, stats, mode)?;
    let bands = (0..raster.band_count())
        .into_par_iter()
        .map(|b| {
            let (lo, hi) = ranges[b];
            raster
                .band(b)
                .iter()
                .map(|v| {
                    if raster.is_nodata(v) {
                        f64::NAN
                    } else {
                        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    raster.derive_f32(bands)
}

/// Affine inverse of [`minmax_normalize`]: `x = x'·(max - min) + min`.
pub fn denormalize(
    raster: &MultiBandRaster,
    stats: &BandStatistics,
    mode: NormalizationMode,
) -> Result<MultiBandRaster> {
    let ranges = scopes(raster, stats, mode)?;
    let bands = (0..raster.band_count())
        .into_par_iter()
        .map(|b| {
            let (lo, hi) = ranges[b];
            raster
                .band(b)
                .iter()
                .map(|v| if raster.is_nodata(v) { f64::NAN } else { v * (hi - lo) + lo })
                .collect()
        })
        .collect();
    raster.derive_f32(bands)
}

/// One patch file in a [`PatchManifest`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub id: String,
    pub row: usize,
    pub col: usize,
    pub x_offset: usize,
    pub y_offset: usize,
    /// Path relative to the manifest's directory.
    pub file: String,
}

/// JSON listing of the patches cut from one source tile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub source: String,
    pub source_width: usize,
    pub source_height: usize,
    pub band_names: Vec<String>,
    pub grid: PatchGrid,
    pub patches: Vec<PatchEntry>,
}

pub const PATCH_MANIFEST_FILE: &str = "manifest.json";

impl PatchManifest {
    pub fn for_grid(source: &str, raster: &MultiBandRaster, grid: PatchGrid) -> Self {
        let patches = (0..grid.len())
            .map(|k| {
                let (row, col) = (k / grid.cols, k % grid.cols);
                let id = patch_id(row, col);
                PatchEntry {
                    file: format!("{id}.tif"),
                    id,
                    row,
                    col,
                    x_offset: col * grid.patch_size,
                    y_offset: row * grid.patch_size,
                }
            })
            .collect();
        Self {
            source: source.to_string(),
            source_width: raster.width(),
            source_height: raster.height(),
            band_names: raster.band_names().to_vec(),
            grid,
            patches,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{BandBuffer, GeoMeta};

    fn f32s(r: &MultiBandRaster, b: usize) -> Vec<f32> {
        match r.band(b) {
            BandBuffer::Float32(v) => v.clone(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn grid_geometry() {
        let g = PatchGrid::new(3660, 3660, 128).unwrap();
        assert_eq!((g.rows, g.cols, g.len(), g.discarded_right, g.discarded_bottom), (28, 28, 784, 76, 76));
        let g = PatchGrid::new(10980, 10980, 384).unwrap();
        assert_eq!((g.rows, g.cols, g.len()), (28, 28, 784));
        let g = PatchGrid::new(128, 128, 128).unwrap();
        assert_eq!((g.len(), g.discarded_right), (1, 0));
        assert!(PatchGrid::new(100, 200, 128).is_err());
    }

    #[test]
    fn patches_carry_offsets_and_content() {
        let r = MultiBandRaster::from_i16(5, 4, vec![(0..20).collect()]).unwrap();
        let (grid, patches) = extract_patches(&r, 2).unwrap();
        assert_eq!((grid.rows, grid.cols), (2, 2));
        assert_eq!(patches[1].band(0), &BandBuffer::Int16(vec![2, 3, 7, 8]));
        assert_eq!(
            patches[2].geo_meta()[META_PATCH_Y],
            MetaValue::Numbers(vec![2.0])
        );
    }

    #[test]
    fn stats_examples() {
        let r = MultiBandRaster::from_f32(4, 1, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let s = compute_stats(&[r], 4).unwrap();
        let e = &s.per_band[0];
        assert_eq!((e.min, e.max, e.mean), (1.0, 4.0, 2.5));
        assert!((e.std - 1.118_033_988_749_895).abs() < 1e-12);
        assert_eq!(e.histogram.counts, vec![1, 1, 1, 1]);

        let c = MultiBandRaster::from_f32(3, 1, vec![vec![7.0; 3]]).unwrap();
        let s = compute_stats(&[c], 256).unwrap();
        let e = &s.per_band[0];
        assert_eq!((e.min, e.max, e.mean, e.std), (7.0, 7.0, 7.0, 0.0));
        assert_eq!(e.histogram.total(), 3);
    }

    #[test]
    fn stats_exclude_nodata_and_reject_empty() {
        let r = MultiBandRaster::new(
            3,
            1,
            vec![BandBuffer::Int16(vec![-1, 5, 9])],
            vec!["a".into()],
            Some(-1.0),
            GeoMeta::new(),
        )
        .unwrap();
        let s = compute_stats(std::slice::from_ref(&r), 8).unwrap();
        assert_eq!(s.sample_count, 2);
        assert_eq!(s.per_band[0].min, 5.0);
        assert!(matches!(compute_stats(&[], 8), Err(Error::InsufficientData(_))));
        let all_nodata = MultiBandRaster::new(
            1,
            1,
            vec![BandBuffer::Int16(vec![-1])],
            vec!["a".into()],
            Some(-1.0),
            GeoMeta::new(),
        )
        .unwrap();
        assert!(matches!(compute_stats(&[all_nodata], 8), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn two_band_overall_equals_concatenation() {
        let a: Vec<f32> = (0..50).map(|i| (i as f32 * 0.7).sin() * 3.0).collect();
        let b: Vec<f32> = (0..50).map(|i| (i as f32 * 1.3).cos() * 11.0 + 4.0).collect();
        let r = MultiBandRaster::from_f32(10, 5, vec![a.clone(), b.clone()]).unwrap();
        let s = compute_stats(&[r], 16).unwrap();
        let all: Vec<f64> = a.iter().chain(&b).map(|&x| f64::from(x)).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((s.overall.mean - mean).abs() < 1e-12);
        assert!((s.overall.std - std).abs() < 1e-12);
        assert_eq!(s.overall.histogram.total(), 100);
        assert_eq!(s.overall.min, all.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn normalization_modes() {
        let r = MultiBandRaster::from_f32(2, 1, vec![vec![0.0, 10.0], vec![0.0, 100.0]]).unwrap();
        let s = compute_stats(std::slice::from_ref(&r), 8).unwrap();
        let probe = MultiBandRaster::from_f32(1, 1, vec![vec![10.0], vec![10.0]]).unwrap();
        let pb = minmax_normalize(&probe, &s, NormalizationMode::PerBand).unwrap();
        assert_eq!((f32s(&pb, 0)[0], f32s(&pb, 1)[0]), (1.0, 0.1));
        let ends = minmax_normalize(&r, &s, NormalizationMode::PerBand).unwrap();
        assert_eq!(f32s(&ends, 0), vec![0.0, 1.0]);
        let gl = minmax_normalize(&probe, &s, NormalizationMode::Global).unwrap();
        assert_eq!((f32s(&gl, 0)[0], f32s(&gl, 1)[0]), (0.1, 0.1));

        let out_of_range = MultiBandRaster::from_f32(1, 1, vec![vec![50.0], vec![-3.0]]).unwrap();
        let c = minmax_normalize(&out_of_range, &s, NormalizationMode::PerBand).unwrap();
        assert_eq!((f32s(&c, 0)[0], f32s(&c, 1)[0]), (1.0, 0.0));
    }

    #[test]
    fn degenerate_scope_is_an_error() {
        let r = MultiBandRaster::from_f32(2, 1, vec![vec![3.0, 3.0], vec![0.0, 1.0]]).unwrap();
        let s = compute_stats(std::slice::from_ref(&r), 8).unwrap();
        assert!(matches!(
            minmax_normalize(&r, &s, NormalizationMode::PerBand),
            Err(Error::Domain(_))
        ));
        assert!(minmax_normalize(&r, &s, NormalizationMode::Global).is_ok());
    }

    #[test]
    fn denormalize_endpoints() {
        let r = MultiBandRaster::from_f32(2, 1, vec![vec![-2.0, 6.0]]).unwrap();
        let s = compute_stats(std::slice::from_ref(&r), 8).unwrap();
        let unit = MultiBandRaster::from_f32(2, 1, vec![vec![0.0, 1.0]]).unwrap();
        let d = denormalize(&unit, &s, NormalizationMode::PerBand).unwrap();
        assert_eq!(f32s(&d, 0), vec![-2.0, 6.0]);
    }
}
