//! Behavioral checks for the subcommands that the acceptance gate does not
//! already pin: exit codes, verification output shape, and config handling.

use std::fs;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simdis"))
}

#[test]
fn verify_emits_a_json_line_per_check_and_exits_zero() {
    let output = binary()
        .args(["verify", "--trials", "500", "--grad-batches", "1"])
        .output()
        .expect("run binary");
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    // 6 properties per universe sweep (4 exhaustive + 1 randomized) plus 6
    // gradient suites.
    assert_eq!(lines.len(), 5 * 6 + 6, "unexpected output:\n{stdout}");
    for line in lines {
        let report: serde_json::Value = serde_json::from_str(line).expect("json line");
        assert_eq!(report["failures"], 0);
        assert!(report["property_name"].is_string());
    }
}

#[test]
fn grad_check_reports_every_strategy() {
    let output = binary()
        .args(["grad-check", "--batches", "1", "--seed", "5"])
        .output()
        .expect("run binary");
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    let names: Vec<String> = stdout
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["property_name"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    for slug in [
        "all",
        "any",
        "mulsupcon",
        "simdis_inside_log",
        "simdis_outside_log",
        "simdis_temperature_scaled",
    ] {
        assert!(
            names
                .iter()
                .any(|n| n == &format!("gradient_matches_finite_differences/{slug}")),
            "missing {slug} in {names:?}"
        );
    }
}

#[test]
fn dump_defaults_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let output = binary()
        .args(["run", "--dump-defaults"])
        .output()
        .expect("run binary");
    assert!(output.status.success());
    // The dump is a valid config file: feed it back with a tiny override.
    let mut config: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    config["data"]["synth"]["num_samples"] = 64.into();
    config["data"]["synth"]["num_classes"] = 6.into();
    config["data"]["synth"]["feature_dim"] = 8.into();
    config["train"]["epochs_contrastive"] = 1.into();
    config["train"]["epochs_probe"] = 1.into();
    config["train"]["batch_pairs"] = 16.into();
    config["train"]["encoder_widths"] = serde_json::json!([8]);
    config["train"]["projection_dim"] = 4.into();
    config["output_dir"] = dir.path().join("out").to_str().unwrap().into();
    let path = dir.path().join("config.json");
    fs::write(&path, config.to_string()).unwrap();

    let run = binary()
        .args(["run", "--config"])
        .arg(&path)
        .output()
        .expect("run binary");
    assert!(
        run.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(dir.path().join("out/metrics.json").exists());
    assert!(dir.path().join("out/checkpoint.json").exists());
}

#[test]
fn config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        "{\n  \"data\": { \"synth\": {} },\n  \"trian\": {}\n}",
    )
    .unwrap();
    let output = binary()
        .args(["run", "--config"])
        .arg(&path)
        .output()
        .expect("run binary");
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("trian"), "stderr: {stderr}");
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn unknown_strategy_exits_2() {
    let output = binary()
        .args(["run", "--strategy", "bogus"])
        .output()
        .expect("run binary");
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn jsonl_data_source_trains_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    // One feature row per line; three labels, easily separable.
    let mut lines = String::new();
    for i in 0..60 {
        let class = i % 3;
        let mut features = [0.05, 0.05, 0.05];
        features[class] = 1.0;
        lines.push_str(&format!(
            "{{\"features\":[{},{},{}],\"labels\":[{}]}}\n",
            features[0], features[1], features[2], class
        ));
    }
    let data_path = dir.path().join("data.jsonl");
    fs::write(&data_path, lines).unwrap();
    let config = serde_json::json!({
        "data": { "jsonl": { "path": data_path.to_str().unwrap(), "augment_sigma": 0.02 } },
        "train": {
            "epochs_contrastive": 2, "epochs_probe": 20, "batch_pairs": 20,
            "encoder_widths": [8], "projection_dim": 4, "seed": 1
        },
        "output_dir": dir.path().join("out").to_str().unwrap(),
        "metrics_k": [1]
    });
    let config_path = dir.path().join("config.json");
    fs::write(&config_path, config.to_string()).unwrap();

    let output = binary()
        .args(["run", "--config"])
        .arg(&config_path)
        .output()
        .expect("run binary");
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    // Imported data is not copied into the run directory.
    assert!(!dir.path().join("out/dataset.jsonl").exists());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics.json")).unwrap())
            .unwrap();
    // Trivially separable three-class data: the probe should be well above
    // chance (1/3) at precision@1.
    assert!(metrics["p_at_1"].as_f64().unwrap() > 0.8, "{metrics}");
}
