//! Digital number → radiance → top-of-atmosphere reflectance → surface reflectance.
//!
//! ```text
//! L      = G·DN + B
//! ρ_TOA  = π·L·d² / (E_sun·cos θ_s)
//! ρ_surf = (ρ_TOA − ρ_path) / (T_s·T_v)
//! ```
//!
//! All arithmetic runs in `f64`; outputs are stored as `f32`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MultiBandRaster, SampleEncoding};

/// Per-band calibration and atmosphere terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRadiometry {
    /// W·m⁻²·sr⁻¹·µm⁻¹ per DN.
    pub gain: f64,
    /// W·m⁻²·sr⁻¹·µm⁻¹.
    pub bias: f64,
    /// Mean exoatmospheric solar irradiance, W·m⁻²·µm⁻¹.
    pub esun: f64,
    #[serde(default)]
    pub path_reflectance: f64,
    #[serde(default = "one")]
    pub transmittance_sun: f64,
    #[serde(default = "one")]
    pub transmittance_view: f64,
}

fn one() -> f64 {
    1.0
}

impl BandRadiometry {
    /// Band with pure top-of-atmosphere output (no path term, unit transmittance).
    pub fn toa_only(gain: f64, bias: f64, esun: f64) -> Self {
        Self {
            gain,
            bias,
            esun,
            path_reflectance: 0.0,
            transmittance_sun: 1.0,
            transmittance_view: 1.0,
        }
    }
}

#[inline]
pub fn radiance(dn: f64, gain: f64, bias: f64) -> f64 {
    gain * dn + bias
}

#[inline]
pub fn toa_reflectance(radiance: f64, earth_sun_distance: f64, esun: f64, cos_zenith: f64) -> f64 {
    PI * radiance * earth_sun_distance * earth_sun_distance / (esun * cos_zenith)
}

#[inline]
pub fn surface_reflectance(toa: f64, path_reflectance: f64, t_sun: f64, t_view: f64) -> f64 {
    (toa - path_reflectance) / (t_sun * t_view)
}

/// Scene-constant radiometric parameters, one [`BandRadiometry`] per raster band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiometricParams {
    pub bands: Vec<BandRadiometry>,
    /// Astronomical units.
    pub earth_sun_distance: f64,
    /// Radians.
    pub solar_zenith: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    earth_sun_distance: f64,
    #[serde(default)]
    solar_zenith_deg: Option<f64>,
    #[serde(default)]
    solar_zenith_rad: Option<f64>,
    bands: BTreeMap<String, BandRadiometry>,
}

impl RadiometricParams {
    pub fn new(bands: Vec<BandRadiometry>, earth_sun_distance: f64, solar_zenith: f64) -> Self {
        Self {
            bands,
            earth_sun_distance,
            solar_zenith,
        }
    }

    /// Parses the JSON parameter file and orders its bands to match `band_names`.
    ///
    /// ```json
    /// { "earth_sun_distance": 1.0,
    ///   "solar_zenith_deg": 30.0,
    ///   "bands": { "Red": { "gain": 0.01, "bias": -0.1, "esun": 1536.0 } } }
    /// ```
    pub fn from_json(text: &str, band_names: &[String]) -> Result<Self> {
        let file: ParamFile = serde_json::from_str(text)?;
        let solar_zenith = match (file.solar_zenith_deg, file.solar_zenith_rad) {
            (Some(deg), None) => deg.to_radians(),
            (None, Some(rad)) => rad,
            _ => {
                return Err(Error::InvalidArgument(
                    "exactly one of solar_zenith_deg / solar_zenith_rad is required".into(),
                ))
            }
        };
        let mut missing = Vec::new();
        let mut bands = Vec::with_capacity(band_names.len());
        for name in band_names {
            match file.bands.get(name) {
                Some(b) => bands.push(*b),
                None => missing.push(name.as_str()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "parameter file has no entry for band(s) {}",
                missing.join(", ")
            )));
        }
        let params = Self::new(bands, file.earth_sun_distance, solar_zenith);
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>, band_names: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, band_names)
    }

    fn check_geometry(&self) -> Result<f64> {
        if !(self.earth_sun_distance > 0.0 && self.earth_sun_distance.is_finite()) {
            return Err(Error::Domain(format!(
                "earth-sun distance must be positive, got {}",
                self.earth_sun_distance
            )));
        }
        if !(0.0..FRAC_PI_2).contains(&self.solar_zenith) {
            return Err(Error::Domain(format!(
                "solar zenith {} rad is outside [0, π/2): sun at or below the horizon",
                self.solar_zenith
            )));
        }
        if let Some((i, b)) = self.bands.iter().enumerate().find(|(_, b)| b.esun.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Domain(format!("band {i}: esun must be positive, got {}", b.esun)));
        }
        Ok(self.solar_zenith.cos())
    }

    fn check_atmosphere(&self) -> Result<()> {
        for (i, b) in self.bands.iter().enumerate() {
            let ok = |t: f64| t > 0.0 && t <= 1.0;
            if !ok(b.transmittance_sun) || !ok(b.transmittance_view) {
                return Err(Error::Domain(format!(
                    "band {i}: transmittances must lie in (0, 1], got T_s={} T_v={}",
                    b.transmittance_sun, b.transmittance_view
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_geometry()?;
        self.check_atmosphere()
    }

    fn check_bands(&self, raster: &MultiBandRaster) -> Result<()> {
        if self.bands.len() != raster.band_count() {
            return Err(Error::BandMismatch {
                expected: raster.band_count(),
                found: self.bands.len(),
            });
        }
        Ok(())
    }

    /// Full DN → surface reflectance chain for one sample of band `band`.
    #[inline]
    pub fn dn_to_surface_value(&self, band: usize, dn: f64, cos_zenith: f64) -> f64 {
        let b = &self.bands[band];
        let l = radiance(dn, b.gain, b.bias);
        let toa = toa_reflectance(l, self.earth_sun_distance, b.esun, cos_zenith);
        surface_reflectance(toa, b.path_reflectance, b.transmittance_sun, b.transmittance_view)
    }

    /// Analytic inverse of [`Self::dn_to_surface_value`].
    pub fn surface_to_dn_value(&self, band: usize, surface: f64, cos_zenith: f64) -> f64 {
        let b = &self.bands[band];
        let toa = surface * b.transmittance_sun * b.transmittance_view + b.path_reflectance;
        let l = toa * b.esun * cos_zenith / (PI * self.earth_sun_distance * self.earth_sun_distance);
        (l - b.bias) / b.gain
    }
}

fn map_bands<F>(raster: &MultiBandRaster, f: F) -> Result<MultiBandRaster>
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    let bands: Vec<Vec<f64>> = (0..raster.band_count())
        .into_par_iter()
        .map(|b| {
            raster
                .band(b)
                .iter()
                .map(|v| if raster.is_nodata(v) { f64::NAN } else { f(b, v) })
                .collect()
        })
        .collect();
    raster.derive_f32(bands)
}

/// `L = G·DN + B` per band.
pub fn dn_to_radiance(raster: &MultiBandRaster, params: &RadiometricParams) -> Result<MultiBandRaster> {
    require_dn(raster)?;
    params.check_bands(raster)?;
    map_bands(raster, |b, dn| {
        radiance(dn, params.bands[b].gain, params.bands[b].bias)
    })
}

/// `ρ_TOA = π·L·d² / (E_sun·cos θ_s)` per band.
pub fn radiance_to_toa(raster: &MultiBandRaster, params: &RadiometricParams) -> Result<MultiBandRaster> {
    params.check_bands(raster)?;
    let cos_zenith = params.check_geometry()?;
    map_bands(raster, |b, l| {
        toa_reflectance(l, params.earth_sun_distance, params.bands[b].esun, cos_zenith)
    })
}

/// `ρ_surf = (ρ_TOA − ρ_path) / (T_s·T_v)` per band.
pub fn toa_to_surface(raster: &MultiBandRaster, params: &RadiometricParams) -> Result<MultiBandRaster> {
    params.check_bands(raster)?;
    params.check_atmosphere()?;
    map_bands(raster, |b, toa| {
        let p = &params.bands[b];
        surface_reflectance(toa, p.path_reflectance, p.transmittance_sun, p.transmittance_view)
    })
}

/// The three conversions composed in a single pass per pixel.
pub fn dn_to_surface(raster: &MultiBandRaster, params: &RadiometricParams) -> Result<MultiBandRaster> {
    require_dn(raster)?;
    params.check_bands(raster)?;
    let cos_zenith = params.check_geometry()?;
    params.check_atmosphere()?;
    map_bands(raster, |b, dn| params.dn_to_surface_value(b, dn, cos_zenith))
}

fn require_dn(raster: &MultiBandRaster) -> Result<()> {
    if raster.encoding() != SampleEncoding::Int16Dn {
        return Err(Error::InvalidArgument(format!(
            "expected int16-DN input, got {}",
            raster.encoding().name()
        )));
    }
    Ok(())
}
