//! Pipeline configuration: a flat TOML key-value file, overridden by
//! `XSENSOR_<KEY>` environment variables, overridden in turn by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};
use xsensor_core::align::AlignMethod;
use xsensor_core::dataset::NormalizationMode;
use xsensor_core::resample::Kernel;

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "XSENSOR_";

/// Every recognized key with its default (if optional) and a one-line description.
pub const PIPELINE_KEYS: &[(&str, Option<&str>, &str)] = &[
    ("lo_input", None, "low-resolution (30 m) tile"),
    ("hi_input", None, "high-resolution (10 m) tile"),
    ("output_dir", None, "directory receiving every stage's outputs"),
    ("radiometry", Some(""), "radiometric parameter JSON; required when a tile holds int16 DN"),
    ("lo_patch_size", Some("128"), "patch side on the low-resolution tile"),
    ("hi_patch_size", Some("384"), "patch side on the high-resolution tile"),
    ("allow_ratio_override", Some("false"), "accept patch sizes whose ratio is not 3"),
    ("normalization", Some("per_band"), "min-max normalization scope: global or per_band"),
    ("method", Some("hm"), "alignment method: hm, fdm or none"),
    ("kernel", Some("lanczos3"), "resampling kernel: lanczos3 or bicubic"),
    ("data_range", Some("1.0"), "dynamic range entering PSNR and SSIM"),
    ("histogram_bins", Some("256"), "bins for statistics and histogram comparison"),
    ("predictions", Some(""), "directory of externally upscaled patches replacing the classical upscale"),
    ("artifacts", Some("true"), "write per-band images, histograms and difference maps"),
    ("seed", Some("0"), "seed recorded with the run"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Default,
    File,
    Env,
    Flag,
}

/// Layered string values before typing.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, (String, Origin)>,
    errors: Vec<String>,
}

fn known(key: &str) -> bool {
    PIPELINE_KEYS.iter().any(|(k, _, _)| *k == key)
}

impl RawConfig {
    pub fn load<E>(file: Option<&Path>, env: E, flags: &[(&str, Option<String>)]) -> Self
    where
        E: IntoIterator<Item = (String, String)>,
    {
        let mut raw = RawConfig::default();
        for (k, d, _) in PIPELINE_KEYS {
            if let Some(d) = d {
                raw.values.insert(k.to_string(), (d.to_string(), Origin::Default));
            }
        }
        if let Some(path) = file {
            raw.read_file(path);
        }
        for (name, value) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if known(&key) {
                    raw.values.insert(key, (value, Origin::Env));
                }
            }
        }
        for (key, value) in flags {
            if let Some(v) = value {
                raw.values.insert(key.to_string(), (v.clone(), Origin::Flag));
            }
        }
        raw
    }

    fn read_file(&mut self, path: &Path) {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                self.errors.push(format!("cannot read config file {}: {e}", path.display()));
                return;
            }
        };
        let table: toml::Table = match text.parse() {
            Ok(t) => t,
            Err(e) => {
                self.errors.push(format!("config file {} is not valid TOML: {e}", path.display()));
                return;
            }
        };
        for (key, value) in table {
            if !known(&key) {
                self.errors.push(format!("unknown config key `{key}`"));
                continue;
            }
            let text = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    self.errors.push(format!("config key `{key}` must be a scalar, got {}", other.type_str()));
                    continue;
                }
            };
            self.values.insert(key, (text, Origin::File));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn origin(&self, key: &str) -> Option<&Origin> {
        self.values.get(key).map(|(_, o)| o)
    }
}

/// Fully validated pipeline settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub lo_input: PathBuf,
    pub hi_input: PathBuf,
    /// Not part of the recorded config, so reruns elsewhere hash identically.
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub radiometry: Option<PathBuf>,
    pub lo_patch_size: usize,
    pub hi_patch_size: usize,
    pub allow_ratio_override: bool,
    pub normalization: NormalizationMode,
    pub method: AlignMethod,
    pub kernel: Kernel,
    pub data_range: f64,
    pub histogram_bins: usize,
    pub predictions: Option<PathBuf>,
    pub artifacts: bool,
    pub seed: u64,
}

struct Collector<'a> {
    raw: &'a RawConfig,
    errors: Vec<String>,
}

impl Collector<'_> {
    fn required(&mut self, key: &str) -> Option<String> {
        match self.raw.get(key) {
            Some(v) if !v.is_empty() => Some(v.to_string()),
            _ => {
                self.errors.push(format!("missing required key `{key}`"));
                None
            }
        }
    }

    fn optional_path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw.get(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    fn parse<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let v = self.raw.get(key).unwrap_or_default();
        match v.parse() {
            Ok(t) => Some(t),
            Err(_) => {
                self.errors.push(format!("`{key}` = `{v}` is not {what}"));
                None
            }
        }
    }

    fn existing(&mut self, key: &str, path: &Path, dir: bool) {
        let ok = if dir { path.is_dir() } else { path.is_file() };
        if !ok {
            let kind = if dir { "directory" } else { "file" };
            self.errors.push(format!("`{key}`: {kind} not found: {}", path.display()));
        }
    }
}

impl PipelineConfig {
    /// Types and checks every key, reporting all problems together. The second
    /// value holds warnings for accepted but unusual settings.
    pub fn resolve(raw: &RawConfig) -> CliResult<(Self, Vec<String>)> {
        let mut c = Collector {
            raw,
            errors: raw.errors.clone(),
        };
        let lo_input = c.required("lo_input").map(PathBuf::from);
        let hi_input = c.required("hi_input").map(PathBuf::from);
        let output_dir = c.required("output_dir").map(PathBuf::from);
        let radiometry = c.optional_path("radiometry");
        let predictions = c.optional_path("predictions");
        let lo_patch_size: Option<usize> = c.parse("lo_patch_size", "a positive integer");
        let hi_patch_size: Option<usize> = c.parse("hi_patch_size", "a positive integer");
        let allow_ratio_override: Option<bool> = c.parse("allow_ratio_override", "true or false");
        let normalization: Option<NormalizationMode> = c.parse("normalization", "global or per_band");
        let method: Option<AlignMethod> = c.parse("method", "hm, fdm or none");
        let kernel: Option<Kernel> = c.parse("kernel", "lanczos3 or bicubic");
        let data_range: Option<f64> = c.parse("data_range", "a number");
        let histogram_bins: Option<usize> = c.parse("histogram_bins", "a positive integer");
        let artifacts: Option<bool> = c.parse("artifacts", "true or false");
        let seed: Option<u64> = c.parse("seed", "a non-negative integer");

        for (key, path) in [("lo_input", &lo_input), ("hi_input", &hi_input)] {
            if let Some(p) = path {
                c.existing(key, p, false);
            }
        }
        if let Some(p) = &radiometry {
            c.existing("radiometry", p, false);
        }
        if let Some(p) = &predictions {
            c.existing("predictions", p, true);
        }
        if let Some(r) = data_range {
            if !(r > 0.0 && r.is_finite()) {
                c.errors.push(format!("`data_range` must be positive, got {r}"));
            }
        }
        if histogram_bins == Some(0) {
            c.errors.push("`histogram_bins` must be positive".into());
        }
        let mut warnings = Vec::new();
        if let (Some(lo), Some(hi)) = (lo_patch_size, hi_patch_size) {
            if lo == 0 || hi == 0 {
                c.errors.push("patch sizes must be positive".into());
            } else if hi != 3 * lo {
                if allow_ratio_override == Some(true) {
                    warnings.push(format!(
                        "patch sizes {lo}/{hi} do not preserve the 3x resolution ratio"
                    ));
                } else {
                    c.errors.push(format!(
                        "hi_patch_size ({hi}) must be 3 x lo_patch_size ({lo}); \
                         set allow_ratio_override = true to accept"
                    ));
                }
            }
        }
        if !c.errors.is_empty() {
            return Err(CliError::Config(c.errors));
        }
        Ok((
            PipelineConfig {
                lo_input: lo_input.unwrap(),
                hi_input: hi_input.unwrap(),
                output_dir: output_dir.unwrap(),
                radiometry,
                lo_patch_size: lo_patch_size.unwrap(),
                hi_patch_size: hi_patch_size.unwrap(),
                allow_ratio_override: allow_ratio_override.unwrap(),
                normalization: normalization.unwrap(),
                method: method.unwrap(),
                kernel: kernel.unwrap(),
                data_range: data_range.unwrap(),
                histogram_bins: histogram_bins.unwrap(),
                predictions,
                artifacts: artifacts.unwrap(),
                seed: seed.unwrap(),
            },
            warnings,
        ))
    }

    /// SHA-256 of the canonical JSON form of the recorded settings.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
