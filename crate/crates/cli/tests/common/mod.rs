#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn xsensor() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xsensor"))
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    xsensor().current_dir(dir).args(args).env_remove_prefixed().output().unwrap()
}

pub trait EnvClean {
    fn env_remove_prefixed(&mut self) -> &mut Self;
}

impl EnvClean for Command {
    fn env_remove_prefixed(&mut self) -> &mut Self {
        for (k, _) in std::env::vars() {
            if k.starts_with("XSENSOR_") {
                self.env_remove(k);
            }
        }
        self
    }
}

pub fn ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(serde_json::Value::Null)
}

pub fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {text}"));
    serde_json::from_str(line).unwrap()
}

/// Radiometry under which reflectance equals `DN × 1e-4`.
pub const UNIT_RADIOMETRY: &str = r#"{"earth_sun_distance":1.0,"solar_zenith_deg":0.0,
 "bands":{"B1":{"gain":0.0001,"bias":0,"esun":3.141592653589793},
          "B2":{"gain":0.0001,"bias":0,"esun":3.141592653589793},
          "B3":{"gain":0.0001,"bias":0,"esun":3.141592653589793}}}"#;

/// Writes `hi.tif` (scene), `lo.tif` (distorted third-size copy) as int16 DN,
/// plus `radio.json` and `spec.json` into `dir`.
pub fn fixture(dir: &Path, size: usize, spec: &str) -> (PathBuf, PathBuf) {
    std::fs::write(dir.join("radio.json"), UNIT_RADIOMETRY).unwrap();
    std::fs::write(dir.join("spec.json"), spec).unwrap();
    let scene = format!("{size}x{size}x3");
    ok(&run(
        dir,
        &[
            "synth", "--scene", &scene, "--scene-seed", "5", "--spec", "spec.json", "--hr-out", "hi.tif",
            "--lr-out", "lo.tif", "--manifest", "synth.json", "--dn-scale", "10000",
        ],
    ));
    (dir.join("lo.tif"), dir.join("hi.tif"))
}

pub const DEFAULT_SPEC: &str =
    r#"{"gains":[0.7,1.3,0.8],"biases":[0.05,-0.08,0.1],"noise_sigma":0.005,"scale_factor":3,"seed":11}"#;

pub fn pipeline_args<'a>(out: &'a str, method: &'a str) -> Vec<&'a str> {
    vec![
        "pipeline", "--lo-input", "lo.tif", "--hi-input", "hi.tif", "--radiometry", "radio.json",
        "--lo-patch-size", "16", "--hi-patch-size", "48", "--method", method, "--output-dir", out,
    ]
}
