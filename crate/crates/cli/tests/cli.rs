mod common;

use std::collections::BTreeSet;

use common::*;

fn corpus_psnr(v: &serde_json::Value) -> f64 {
    v["corpus"]["psnr"].as_f64().unwrap()
}

#[test]
fn tile_reports_grid_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 96, DEFAULT_SPEC);
    let v = ok(&run(dir.path(), &["tile", "--input", "hi.tif", "--patch-size", "40", "--out", "tiles"]));
    assert_eq!(v["patches"], 4);
    assert_eq!(v["discarded_right"], 16);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tiles/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["patches"].as_array().unwrap().len(), 4);
    let p = xsensor_core::io::read_raster(dir.path().join("tiles/r001_c001.tif")).unwrap();
    assert_eq!(p.encoding(), xsensor_core::SampleEncoding::Int16Dn);
}

#[test]
fn missing_radiometry_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 96, DEFAULT_SPEC);
    let mut args = pipeline_args("out", "hm");
    args[6] = "nowhere/radio.json";
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out).to_string().contains("nowhere/radio.json"));
    assert!(!dir.path().join("out/run_report.json").exists());
}

#[test]
fn int16_input_without_radiometry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 96, DEFAULT_SPEC);
    let mut args = pipeline_args("out", "hm");
    args.drain(5..7);
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out).to_string().contains("radiometry"));
}

#[test]
fn every_config_error_is_reported_at_once() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "data_range = -1\nhistogram_bins = 0\nbogus = 3\n").unwrap();
    let out = run(dir.path(), &["pipeline", "--config", "c.toml", "--method", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "config");
    let msgs: Vec<String> = e["error"]["messages"].as_array().unwrap().iter().map(|m| m.to_string()).collect();
    for key in ["lo_input", "hi_input", "output_dir", "data_range", "histogram_bins", "bogus", "nope"] {
        assert!(msgs.iter().any(|m| m.contains(key)), "{key} missing from {msgs:?}");
    }
}

#[test]
fn flags_override_environment_which_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 96, DEFAULT_SPEC);
    std::fs::write(
        dir.path().join("c.toml"),
        "lo_input = \"lo.tif\"\nhi_input = \"hi.tif\"\nradiometry = \"radio.json\"\nlo_patch_size = 16\nhi_patch_size = 48\noutput_dir = \"from_file\"\nmethod = \"fdm\"\n",
    )
    .unwrap();
    let status = xsensor()
        .current_dir(dir.path())
        .env_remove_prefixed()
        .env("XSENSOR_OUTPUT_DIR", "from_env")
        .env("XSENSOR_METHOD", "none")
        .args(["pipeline", "--config", "c.toml", "--method", "hm"])
        .output()
        .unwrap();
    ok(&status);
    assert!(dir.path().join("from_env/run_report.json").exists());
    assert!(!dir.path().join("from_file").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("from_env/run_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["method"], "hm");
}

#[test]
fn alignment_beats_plain_upscaling_and_predictions_can_be_ingested() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 96, DEFAULT_SPEC);
    let hm = ok(&run(dir.path(), &pipeline_args("hm", "hm")));
    let none = ok(&run(dir.path(), &pipeline_args("none", "none")));
    assert_eq!(hm["patches"], 4);
    assert!(corpus_psnr(&hm) > corpus_psnr(&none) + 1.0, "{hm} vs {none}");

    let mut args = pipeline_args("ingested", "none");
    args.extend(["--predictions", "none/upscaled"]);
    let ingested = ok(&run(dir.path(), &args));
    assert_eq!(ingested["corpus"], none["corpus"]);

    std::fs::remove_file(dir.path().join("none/upscaled/r000_c001.tif")).unwrap();
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("none/upscaled/manifest.json")).unwrap()).unwrap();
    manifest["patches"].as_array_mut().unwrap().retain(|p| p["id"] != "r000_c001");
    std::fs::write(dir.path().join("none/upscaled/manifest.json"), manifest.to_string()).unwrap();
    let mut args = pipeline_args("broken", "none");
    args.extend(["--predictions", "none/upscaled"]);
    let out = run(dir.path(), &args);
    assert_ne!(out.status.code(), Some(0));
    assert!(error_json(&out).to_string().contains("r000_c001"));
}

#[test]
fn split_is_seeded_disjoint_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 96, DEFAULT_SPEC);
    ok(&run(dir.path(), &["tile", "--input", "hi.tif", "--patch-size", "8", "--out", "tiles"]));
    let split = |seed: &str, out: &str| -> serde_json::Value {
        ok(&run(
            dir.path(),
            &["split", "--manifest", "tiles/manifest.json", "--val-fraction", "0.1", "--seed", seed, "--out", out],
        ));
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(out)).unwrap()).unwrap()
    };
    let a = split("3", "a.json");
    let b = split("3", "b.json");
    let c = split("4", "c.json");
    assert_eq!(a, b);
    assert_ne!(a["val"], c["val"]);
    let ids = |v: &serde_json::Value| -> BTreeSet<String> {
        v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
    };
    let (train, val) = (ids(&a["train"]), ids(&a["val"]));
    assert_eq!(val.len(), 14);
    assert!(train.is_disjoint(&val));
    assert_eq!(train.len() + val.len(), 144);
}

#[test]
fn usage_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["tile", "--patch-size", "zero"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["tile", "--input", "absent.tif", "--out", "t"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_json(&out).to_string().contains("absent.tif"));
}
