//! Raster file input/output: TIFF containers and 8-bit PNG previews.

mod tiff;

use std::fs;
use std::path::Path;

pub use self::tiff::Compression;
use crate::error::{Error, Result};
use crate::raster::{default_band_names, BandBuffer, MultiBandRaster, SampleEncoding};

/// Reads a single- or multi-band TIFF. Samples are returned exactly as stored.
pub fn read_raster(path: impl AsRef<Path>) -> Result<MultiBandRaster> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = tiff::decode(&data)?;
    let names = decoded
        .band_names
        .unwrap_or_else(|| default_band_names(decoded.bands.len()));
    MultiBandRaster::new(
        decoded.width,
        decoded.height,
        decoded.bands,
        names,
        decoded.nodata,
        decoded.geo_meta,
    )
}

/// Writes `raster` as an uncompressed TIFF in the requested sample encoding.
pub fn write_raster(
    raster: &MultiBandRaster,
    path: impl AsRef<Path>,
    encoding: SampleEncoding,
) -> Result<()> {
    write_raster_with(raster, path, encoding, Compression::None)
}

pub fn write_raster_with(
    raster: &MultiBandRaster,
    path: impl AsRef<Path>,
    encoding: SampleEncoding,
    compression: Compression,
) -> Result<()> {
    let path = path.as_ref();
    let converted = convert_encoding(raster, encoding)?;
    let bytes = tiff::encode(&converted, encoding, compression)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Re-encodes samples. Float to int16 rounds to nearest (ties away from zero) and
/// fails on any value outside the signed 16-bit range.
pub fn convert_encoding(raster: &MultiBandRaster, encoding: SampleEncoding) -> Result<MultiBandRaster> {
    if raster.encoding() == encoding {
        return Ok(raster.clone());
    }
    let bands = match encoding {
        SampleEncoding::Float32Reflectance => raster
            .bands()
            .iter()
            .map(|b| BandBuffer::Float32(b.iter().map(|v| v as f32).collect()))
            .collect(),
        SampleEncoding::Int16Dn => {
            let nodata = match raster.nodata() {
                Some(nd) => Some(to_i16(nd)?),
                None => None,
            };
            let mut out = Vec::with_capacity(raster.band_count());
            for band in raster.bands() {
                let mut samples = Vec::with_capacity(band.len());
                for v in band.iter() {
                    samples.push(match nodata {
                        Some(nd) if raster.is_nodata(v) => nd,
                        _ => to_i16(v)?,
                    });
                }
                out.push(BandBuffer::Int16(samples));
            }
            out
        }
    };
    let nodata = match (encoding, raster.nodata()) {
        (SampleEncoding::Int16Dn, Some(nd)) => Some(f64::from(to_i16(nd)?)),
        (_, nd) => nd,
    };
    MultiBandRaster::new(
        raster.width(),
        raster.height(),
        bands,
        raster.band_names().to_vec(),
        nodata,
        raster.geo_meta().clone(),
    )
}

fn to_i16(v: f64) -> Result<i16> {
    let r = v.round();
    if r.is_finite() && r >= f64::from(i16::MIN) && r <= f64::from(i16::MAX) {
        Ok(r as i16)
    } else {
        Err(Error::OutOfRange {
            encoding: SampleEncoding::Int16Dn.name(),
            value: v,
        })
    }
}

/// Maps one sample onto a byte: `round(255 * clamp((v - low) / (high - low), 0, 1))`.
#[inline]
pub fn clamp_to_u8(v: f64, low: f64, high: f64) -> u8 {
    let t = ((v - low) / (high - low)).clamp(0.0, 1.0);
    // f64::round rounds half-way cases away from zero.
    (255.0 * t).round() as u8
}

/// Renders three bands as an 8-bit RGB PNG image in memory.
pub fn png_bytes(raster: &MultiBandRaster, bands: [usize; 3], clamp: (f64, f64)) -> Result<Vec<u8>> {
    let (low, high) = clamp;
    if !(low.is_finite() && high.is_finite() && low < high) {
        return Err(Error::InvalidArgument(format!(
            "clamp range ({low}, {high}) must satisfy low < high"
        )));
    }
    if let Some(&b) = bands.iter().find(|&&b| b >= raster.band_count()) {
        return Err(Error::InvalidArgument(format!(
            "band index {b} out of range for {} bands",
            raster.band_count()
        )));
    }
    let n = raster.pixel_count();
    let mut rgb = vec![0u8; n * 3];
    for (c, &b) in bands.iter().enumerate() {
        let band = raster.band(b);
        for i in 0..n {
            let v = band.get(i);
            rgb[i * 3 + c] = if raster.is_nodata(v) { 0 } else { clamp_to_u8(v, low, high) };
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raster.width() as u32, raster.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&rgb)?;
    }
    Ok(out)
}

/// Writes an 8-bit RGB PNG visualization of three bands clamped to `clamp`.
pub fn export_png(
    raster: &MultiBandRaster,
    bands: [usize; 3],
    clamp: (f64, f64),
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = png_bytes(raster, bands, clamp)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
