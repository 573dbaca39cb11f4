//! In-memory multi-band raster model shared by every module.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band labels used by the six-band harmonized Landsat/Sentinel products.
pub const HLS_BANDS: [&str; 6] = ["SWIR1", "SWIR2", "NIR", "Red", "Green", "Blue"];

/// Sample encoding shared by all bands of a raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleEncoding {
    /// Signed 16-bit digital numbers.
    Int16Dn,
    /// 32-bit float reflectance (or any other physical quantity).
    Float32Reflectance,
}

impl SampleEncoding {
    pub fn name(self) -> &'static str {
        match self {
            SampleEncoding::Int16Dn => "int16-DN",
            SampleEncoding::Float32Reflectance => "float32-reflectance",
        }
    }
}

impl std::str::FromStr for SampleEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "int16" | "int16-dn" | "i16" => Ok(SampleEncoding::Int16Dn),
            "float32" | "float32-reflectance" | "f32" => Ok(SampleEncoding::Float32Reflectance),
            other => Err(Error::InvalidArgument(format!("unknown encoding `{other}`"))),
        }
    }
}

/// Row-major samples of one band.
#[derive(Clone, Debug, PartialEq)]
pub enum BandBuffer {
    Int16(Vec<i16>),
    Float32(Vec<f32>),
}

impl BandBuffer {
    pub fn len(&self) -> usize {
        match self {
            BandBuffer::Int16(v) => v.len(),
            BandBuffer::Float32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encoding(&self) -> SampleEncoding {
        match self {
            BandBuffer::Int16(_) => SampleEncoding::Int16Dn,
            BandBuffer::Float32(_) => SampleEncoding::Float32Reflectance,
        }
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        match self {
            BandBuffer::Int16(v) => f64::from(v[index]),
            BandBuffer::Float32(v) => f64::from(v[index]),
        }
    }

    /// Widens every sample to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            BandBuffer::Int16(v) => v.iter().map(|&x| f64::from(x)).collect(),
            BandBuffer::Float32(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            BandBuffer::Int16(v) => Box::new(v.iter().map(|&x| f64::from(x))),
            BandBuffer::Float32(v) => Box::new(v.iter().map(|&x| f64::from(x))),
        }
    }

    /// Copies a `w`×`h` window starting at (`x0`, `y0`) out of a band of row stride `stride`.
    pub(crate) fn window(&self, stride: usize, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        fn copy<T: Copy>(src: &[T], stride: usize, x0: usize, y0: usize, w: usize, h: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(w * h);
            for row in y0..y0 + h {
                let start = row * stride + x0;
                out.extend_from_slice(&src[start..start + w]);
            }
            out
        }
        match self {
            BandBuffer::Int16(v) => BandBuffer::Int16(copy(v, stride, x0, y0, w, h)),
            BandBuffer::Float32(v) => BandBuffer::Float32(copy(v, stride, x0, y0, w, h)),
        }
    }
}

/// One opaque metadata value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Numbers(Vec<f64>),
    Text(String),
}

/// Opaque key-value geospatial metadata, preserved verbatim on write.
pub type GeoMeta = BTreeMap<String, MetaValue>;

/// A multi-band image grid. Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiBandRaster {
    width: usize,
    height: usize,
    bands: Vec<BandBuffer>,
    band_names: Vec<String>,
    nodata: Option<f64>,
    geo_meta: GeoMeta,
}

impl MultiBandRaster {
    pub fn new(
        width: usize,
        height: usize,
        bands: Vec<BandBuffer>,
        band_names: Vec<String>,
        nodata: Option<f64>,
        geo_meta: GeoMeta,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if bands.is_empty() {
            return Err(Error::InvalidArgument("raster has no bands".into()));
        }
        if band_names.len() != bands.len() {
            return Err(Error::BandMismatch {
                expected: bands.len(),
                found: band_names.len(),
            });
        }
        let encoding = bands[0].encoding();
        for (i, band) in bands.iter().enumerate() {
            if band.len() != width * height {
                return Err(Error::DimensionMismatch(format!(
                    "band {i} holds {} samples, expected {}",
                    band.len(),
                    width * height
                )));
            }
            if band.encoding() != encoding {
                return Err(Error::InvalidArgument(format!(
                    "band {i} is {} but band 0 is {}",
                    band.encoding().name(),
                    encoding.name()
                )));
            }
        }
        if encoding == SampleEncoding::Int16Dn {
            if let Some(nd) = nodata {
                if nd.fract() != 0.0 || nd < f64::from(i16::MIN) || nd > f64::from(i16::MAX) {
                    return Err(Error::OutOfRange {
                        encoding: encoding.name(),
                        value: nd,
                    });
                }
            }
        } else {
            for (i, band) in bands.iter().enumerate() {
                if let BandBuffer::Float32(v) = band {
                    if let Some(bad) = v
                        .iter()
                        .map(|&x| f64::from(x))
                        .find(|&x| !x.is_finite() && !nodata_matches(nodata, x))
                    {
                        return Err(Error::InvalidArgument(format!(
                            "band {i} contains non-finite sample {bad} that is not nodata"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            width,
            height,
            bands,
            band_names,
            nodata,
            geo_meta,
        })
    }

    /// Builds a float raster from per-band `f32` vectors with default names `B1..Bn`.
    pub fn from_f32(width: usize, height: usize, bands: Vec<Vec<f32>>) -> Result<Self> {
        let names = default_band_names(bands.len());
        let bands = bands.into_iter().map(BandBuffer::Float32).collect();
        Self::new(width, height, bands, names, None, GeoMeta::new())
    }

    /// Builds an int16 raster with default names `B1..Bn`.
    pub fn from_i16(width: usize, height: usize, bands: Vec<Vec<i16>>) -> Result<Self> {
        let names = default_band_names(bands.len());
        let bands = bands.into_iter().map(BandBuffer::Int16).collect();
        Self::new(width, height, bands, names, None, GeoMeta::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[BandBuffer] {
        &self.bands
    }

    pub fn band(&self, index: usize) -> &BandBuffer {
        &self.bands[index]
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn geo_meta(&self) -> &GeoMeta {
        &self.geo_meta
    }

    pub fn encoding(&self) -> SampleEncoding {
        self.bands[0].encoding()
    }

    #[inline]
    pub fn is_nodata(&self, value: f64) -> bool {
        nodata_matches(self.nodata, value)
    }

    /// Replaces the band names, keeping everything else.
    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bands.len() {
            return Err(Error::BandMismatch {
                expected: self.bands.len(),
                found: names.len(),
            });
        }
        self.band_names = names;
        Ok(self)
    }

    pub fn with_geo_meta(mut self, geo_meta: GeoMeta) -> Self {
        self.geo_meta = geo_meta;
        self
    }

    pub fn with_meta_entry(mut self, key: impl Into<String>, value: MetaValue) -> Self {
        self.geo_meta.insert(key.into(), value);
        self
    }

    pub fn with_nodata(self, nodata: Option<f64>) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.bands,
            self.band_names,
            nodata,
            self.geo_meta,
        )
    }

    /// Band `index` widened to `f64`, nodata samples replaced with `None`.
    pub fn valid_samples(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        self.bands[index].iter().filter(move |&v| !self.is_nodata(v))
    }

    /// Checks width, height and band count against `other`.
    pub fn check_same_shape(&self, other: &MultiBandRaster) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        if self.band_count() != other.band_count() {
            return Err(Error::BandMismatch {
                expected: self.band_count(),
                found: other.band_count(),
            });
        }
        Ok(())
    }

    /// Copies a window into a new raster that keeps names, nodata and metadata.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "window {w}x{h}+{x0}+{y0} outside {}x{} raster",
                self.width, self.height
            )));
        }
        let bands = self
            .bands
            .iter()
            .map(|b| b.window(self.width, x0, y0, w, h))
            .collect();
        Ok(Self {
            width: w,
            height: h,
            bands,
            band_names: self.band_names.clone(),
            nodata: self.nodata,
            geo_meta: self.geo_meta.clone(),
        })
    }

    /// Builds a float32 raster with the same shape and metadata from per-band `f64` samples.
    ///
    /// Nodata is carried as NaN in float outputs whenever the source declared a sentinel.
    pub(crate) fn derive_f32(&self, bands: Vec<Vec<f64>>) -> Result<Self> {
        let bands = bands
            .into_iter()
            .map(|b| BandBuffer::Float32(b.into_iter().map(|v| v as f32).collect()))
            .collect();
        Self::new(
            self.width,
            self.height,
            bands,
            self.band_names.clone(),
            self.nodata.map(|_| f64::NAN),
            self.geo_meta.clone(),
        )
    }
}

pub fn default_band_names(count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("B{i}")).collect()
}

#[inline]
pub(crate) fn nodata_matches(nodata: Option<f64>, value: f64) -> bool {
    match nodata {
        Some(nd) if nd.is_nan() => value.is_nan(),
        Some(nd) => value == nd,
        None => false,
    }
}
