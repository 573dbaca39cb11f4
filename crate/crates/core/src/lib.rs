//! Cross-sensor satellite raster toolkit: TIFF I/O, radiometric conversion,
//! patch-grid curation, spectral alignment, resampling, evaluation metrics and
//! synthetic sensor-pair generation.

pub mod align;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod radiometry;
pub mod raster;
pub mod resample;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{BandBuffer, GeoMeta, MetaValue, MultiBandRaster, SampleEncoding};
