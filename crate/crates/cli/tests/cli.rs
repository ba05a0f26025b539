use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

const FIG2: &str = include_str!("../presets/fig2.toml");

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn mqc(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mqc")).args(args).output().unwrap();
    eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    out
}

/// fig2 reduced to order 2 on a coarse grid, written next to the outputs.
fn light_fig2(dir: &PathBuf, mode: &str) -> String {
    let text = FIG2
        .replace("order_max = 4", "order_max = 2")
        .replace("grid_points = 4001", "grid_points = 401")
        .replace("mode = \"full\"", &format!("mode = \"{mode}\""));
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn result(path: PathBuf) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["result"].clone()
}

fn csv_rows(path: PathBuf) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let body = text.split_once('\n').unwrap().1;
    csv::Reader::from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn spectrum_reports_all_five_peaks() {
    let d = scratch("spectrum");
    let cfg = light_fig2(&d, "full");
    let out = mqc(&["spectrum", "--config", &cfg, "--out", d.to_str().unwrap(), "--format", "json", "--format", "csv"]);
    assert!(out.status.success());
    let peaks = result(d.join("peaks.json"));
    let labels: Vec<(i64, String)> = peaks
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p["kappa"].as_i64().unwrap(), p["peak"].as_str().unwrap().to_string()))
        .collect();
    let want = [(1, "D1"), (1, "D2"), (2, "2D1"), (2, "D1D2"), (2, "2D2")];
    assert_eq!(labels, want.map(|(k, l)| (k, l.to_string())));
    for p in peaks.as_array().unwrap() {
        assert!(p["a_x"].as_f64().unwrap() > 0.0 && p["a_y"].as_f64().unwrap() > 0.0);
    }
    // Normalised to the y-polarised D2 peak.
    let d2 = &peaks[1];
    assert!((d2["a_y"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(csv_rows(d.join("spectrum_k1.csv")).len(), 401);
}

#[test]
fn uncoupled_two_quantum_spectrum_is_zero() {
    let d = scratch("off");
    let cfg = light_fig2(&d, "off");
    let out = mqc(&["spectrum", "--config", &cfg, "--out", d.to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    let rows = csv_rows(d.join("spectrum_k2.csv"));
    assert!(!rows.is_empty());
    for r in rows {
        for v in &r[1..] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
    assert!(rows_nonzero(d.join("spectrum_k1.csv")));
}

fn rows_nonzero(path: PathBuf) -> bool {
    csv_rows(path).iter().any(|r| r[3].parse::<f64>().unwrap() > 0.0)
}

#[test]
fn outputs_are_reproducible() {
    let d = scratch("repro");
    let cfg = light_fig2(&d, "near-electrostatic");
    let args = ["spectrum", "--config", &cfg, "--out", d.to_str().unwrap(), "--format", "csv", "--format", "json", "--format", "svg"];
    let names = ["spectrum_k1.csv", "spectrum_k2.csv", "peaks.json", "peaks.csv", "spectrum_k2.svg"];
    assert!(mqc(&args).status.success());
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(d.join(n)).unwrap()).collect();
    assert!(mqc(&args).status.success());
    for (n, a) in names.iter().zip(first) {
        assert_eq!(fs::read(d.join(n)).unwrap(), a, "{n} differs between runs");
    }
}

#[test]
fn estimate_collision_rate() {
    let d = scratch("estimate");
    let out = mqc(&["estimate", "--preset", "tableII", "--out", d.to_str().unwrap()]);
    assert!(out.status.success());
    let r = result(d.join("estimate.json"));
    let total = r["collisions"]["total"].as_f64().unwrap();
    assert!((total - 20.4).abs() < 0.1, "{total}");
    let theta = r["pulse_area_rad"].as_f64().unwrap();
    assert!(theta > 0.0 && theta < 1.0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Cs") && stdout.contains("total"));
    assert!(d.join("collisions.csv").exists());
}

#[test]
fn uniform_d1_emission_is_isotropic() {
    let d = scratch("emission");
    let out = mqc(&["emission-pattern", "--preset", "fig4", "--out", d.to_str().unwrap(), "--format", "json", "--format", "csv"]);
    assert!(out.status.success());
    let cases = result(d.join("emission.json"))["cases"].clone();
    assert_eq!(cases[0]["label"], "D1 uniform");
    assert_eq!(cases[0]["flat"], true);
    assert_eq!(cases[1]["flat"], true);
    assert_eq!(cases[2]["flat"], false);
    let rows = csv_rows(d.join("emission.csv"));
    assert_eq!(rows.len(), 181);
    assert_eq!(rows[0].len(), 1 + 3 * 3);
}

#[test]
fn small_validation_passes() {
    let d = scratch("validate");
    let out = mqc(&["validate", "--preset", "validate-small", "--out", d.to_str().unwrap()]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{stdout}");
    assert_eq!(result(d.join("validate.json"))["pass"], true);
}

#[test]
fn bad_configurations_are_rejected() {
    let d = scratch("bad");
    let path = d.join("bad.toml");
    fs::write(&path, FIG2.replace("area = 0.3", "area = 0.3\nareaa = 1.0")).unwrap();
    let out = mqc(&["spectrum", "--config", path.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("areaa"));

    fs::write(&path, FIG2.replace("\"7.5 mm\"", "7.5e-3")).unwrap();
    let out = mqc(&["spectrum", "--config", path.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = mqc(&["spectrum", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}
