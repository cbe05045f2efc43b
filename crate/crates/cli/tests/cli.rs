use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn nvmag(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvmag"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn doc(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

const EIGHT_DIPS: &str = r#"
seed = 11
[model]
e_mhz = 3.0
[grid]
start_mhz = 2690.0
stop_mhz = 3050.0
points = 901
[simulate]
field_mt = [3.0, 1.7, 4.1]
width_mhz = 6.0
contrast = 0.03
counts_per_point = 1e6
[fit]
n_peaks = 8
"#;

fn setup(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn simulate_is_deterministic_under_seed() {
    let dir = setup(EIGHT_DIPS);
    let p = dir.path();
    assert!(nvmag(
        &["simulate-odmr", "--config", "run.toml", "--output", "a.csv"],
        p
    )
    .status
    .success());
    assert!(nvmag(
        &["simulate-odmr", "--config", "run.toml", "--output", "b.csv"],
        p
    )
    .status
    .success());
    assert_eq!(
        fs::read(p.join("a.csv")).unwrap(),
        fs::read(p.join("b.csv")).unwrap()
    );
    assert!(nvmag(
        &[
            "simulate-odmr",
            "--config",
            "run.toml",
            "--seed",
            "12",
            "--output",
            "c.csv"
        ],
        p
    )
    .status
    .success());
    assert_ne!(
        fs::read(p.join("a.csv")).unwrap(),
        fs::read(p.join("c.csv")).unwrap()
    );
    let truth: Value =
        serde_json::from_str(&fs::read_to_string(p.join("a.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["synthetic"], Value::Bool(true));
    assert_eq!(truth["peaks"].as_array().unwrap().len(), 8);
}

#[test]
fn zero_field_minima_at_d_plus_minus_e() {
    let config = r#"
[model]
e_mhz = 4.0
[grid]
start_mhz = 2840.0
stop_mhz = 2900.0
points = 241
[simulate]
field_mt = [0.0, 0.0, 0.0]
width_mhz = 3.0
contrast = 0.02
"#;
    let dir = setup(config);
    let out = nvmag(
        &["simulate-odmr", "--config", "run.toml", "--output", "z.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("z.csv")).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',').map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    let step = 60.0 / 240.0;
    let (lower, upper): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.0 < 2870.0);
    let min_of = |v: &[&(f64, f64)]| v.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    assert!((min_of(&lower) - 2866.0).abs() <= step);
    assert!((min_of(&upper) - 2874.0).abs() <= step);
}

#[test]
fn simulate_fit_reconstruct_round_trip() {
    let dir = setup(EIGHT_DIPS);
    let p = dir.path();
    assert!(nvmag(
        &["simulate-odmr", "--config", "run.toml", "--output", "s.csv"],
        p
    )
    .status
    .success());
    let fit = nvmag(
        &[
            "fit-odmr", "--config", "run.toml", "--input", "s.csv", "--output", "fit.json",
            "--plot", "plot.csv",
        ],
        p,
    );
    assert_eq!(fit.status.code(), Some(0), "{}", stderr(&fit));
    let fitted = doc(&fit);
    assert_eq!(fitted["schema_version"], 1);
    let truth: Value =
        serde_json::from_str(&fs::read_to_string(p.join("s.truth.json")).unwrap()).unwrap();
    let mut want: Vec<f64> = truth["peaks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| q["center_mhz"].as_f64().unwrap())
        .collect();
    want.sort_by(f64::total_cmp);
    for (q, w) in fitted["results"]["peaks"]
        .as_array()
        .unwrap()
        .iter()
        .zip(&want)
    {
        let c = q["center_mhz"].as_f64().unwrap();
        let s = q["sigma_center_mhz"].as_f64().unwrap();
        assert!((c - w).abs() < 5.0 * s, "{c} vs {w} (sigma {s})");
    }
    let plot = fs::read_to_string(p.join("plot.csv")).unwrap();
    assert!(plot.starts_with("freq_mhz,data,model,residual\n"));
    assert_eq!(plot.lines().count(), 902);

    let rec = nvmag(
        &["reconstruct", "--config", "run.toml", "--input", "fit.json"],
        p,
    );
    assert_eq!(rec.status.code(), Some(0), "{}", stderr(&rec));
    let r = doc(&rec);
    let mag = r["results"]["magnitude_mt"].as_f64().unwrap();
    let sigma = r["results"]["sigma_magnitude_mt"].as_f64().unwrap();
    let truth_mag = (3.0f64 * 3.0 + 1.7 * 1.7 + 4.1 * 4.1).sqrt();
    assert!(
        (mag - truth_mag).abs() < 4.0 * sigma,
        "{mag} vs {truth_mag} (sigma {sigma})"
    );
}

#[test]
fn pairing_failure_exits_2_with_table() {
    let dir = tempfile::tempdir().unwrap();
    let peaks = r#"{"peaks": [
        {"center_mhz": 2820.0, "fwhm_mhz": 6.0, "contrast": 0.03},
        {"center_mhz": 2930.0, "fwhm_mhz": 6.0, "contrast": 0.03}
    ]}"#;
    fs::write(dir.path().join("p.json"), peaks).unwrap();
    let out = nvmag(&["reconstruct", "--input", "p.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let d = doc(&out);
    assert_eq!(d["status"], "failed");
    assert_eq!(
        d["results"]["pairs"][0]["asymmetry_mhz"].as_f64().unwrap(),
        10.0
    );
}

#[test]
fn zero_field_and_degenerate_fixtures() {
    let dir = setup("[model]\ne_mhz = 3.0\n");
    let p = dir.path();
    let zero = core_fixture("zero_field_peaks.json");
    let out = nvmag(
        &[
            "reconstruct",
            "--config",
            "run.toml",
            "--input",
            zero.to_str().unwrap(),
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(doc(&out)["results"]["magnitude_mt"].as_f64().unwrap() < 1e-9);

    let equal = core_fixture("equal_projection_peaks.json");
    let out = nvmag(
        &[
            "reconstruct",
            "--config",
            "run.toml",
            "--input",
            equal.to_str().unwrap(),
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(0));
    let d = doc(&out);
    assert_eq!(
        d["results"]["ambiguity_note"]["tied_solutions"]
            .as_array()
            .unwrap()
            .len(),
        3
    );
    assert!(stderr(&out).contains("sign patterns fit equally well"));
}

#[test]
fn input_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("empty.csv"), "").unwrap();
    let out = nvmag(&["fit-odmr", "--input", "empty.csv"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());

    fs::write(p.join("header_only.csv"), "freq_mhz,pl_norm\n").unwrap();
    assert_eq!(
        nvmag(&["fit-odmr", "--input", "header_only.csv"], p)
            .status
            .code(),
        Some(1)
    );

    let mut rows = String::from("freq_mhz,pl_norm\n");
    for i in 0..20 {
        let f = if i == 7 { 2800.0 } else { 2850.0 + i as f64 };
        rows.push_str(&format!("{f},1.0\n"));
    }
    fs::write(p.join("nonmono.csv"), rows).unwrap();
    let out = nvmag(&["fit-odmr", "--input", "nonmono.csv"], p);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(
        msg.contains("row 9") && msg.contains("strictly increasing"),
        "{msg}"
    );

    fs::write(p.join("garbage.csv"), [0xff, 0xfe, 0x00, 0x12, b'\n', 0x80]).unwrap();
    assert_eq!(
        nvmag(&["fit-odmr", "--input", "garbage.csv"], p)
            .status
            .code(),
        Some(1)
    );

    assert_eq!(
        nvmag(&["fit-odmr", "--input", "missing.csv"], p)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(nvmag(&["no-such-command"], p).status.code(), Some(1));
    assert_eq!(
        nvmag(&["fit-decay", "--input", "x.csv", "--kind", "ramsay"], p)
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn config_errors_exit_1() {
    let dir = setup("[sensitivity]\ncontrast = 0.03\npl_rate_hz = 362.4e9\n");
    let out = nvmag(&["sensitivity", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("readout_us"), "{}", stderr(&out));

    fs::write(dir.path().join("bad.toml"), "[model]\nd_mhz = \n").unwrap();
    let out = nvmag(&["sensitivity", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let out = nvmag(&["simulate-odmr", "--output", "x.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("grid"));
}

#[test]
fn default_sensitivity_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out = nvmag(&["sensitivity"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let d = doc(&out);
    let s = &d["results"]["summary_pt_per_sqrthz"];
    for (key, want, tol) in [
        ("baseline_dc", 627.0, 0.01),
        ("baseline_ac", 198.0, 0.01),
        ("enhanced_dc", 63.0, 0.02),
        ("enhanced_ac", 20.0, 0.02),
    ] {
        let got = s[key].as_f64().unwrap();
        assert!((got / want - 1.0).abs() < tol, "{key}: {got}");
    }
    assert!(d["results"]["report"]["baseline"]["eta_dc_t_per_sqrthz"].is_f64());
}

#[test]
fn t1_record_round_trip() {
    let config = r#"
seed = 3
[fit]
decay_kind = "t1"
[decay]
start_us = 0.0
stop_us = 25000.0
points = 201
read_noise = 0.01
[decay.model]
kind = "t1"
amplitude = 0.5
t1_us = 5000.0
offset = 0.5
"#;
    let dir = setup(config);
    let p = dir.path();
    let sim = nvmag(
        &[
            "simulate-decay",
            "--config",
            "run.toml",
            "--output",
            "t1.csv",
        ],
        p,
    );
    assert!(sim.status.success(), "{}", stderr(&sim));
    let fit = nvmag(
        &["fit-decay", "--config", "run.toml", "--input", "t1.csv"],
        p,
    );
    assert_eq!(fit.status.code(), Some(0), "{}", stderr(&fit));
    let t1 = doc(&fit)["results"]["decay_time_us"].as_f64().unwrap();
    assert!((t1 / 5000.0 - 1.0).abs() < 0.05, "{t1}");
}

#[test]
fn saturation_fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("# synthetic saturation curve\npower_mw,rate_hz\n");
    for k in 1..=20 {
        let p = 3.0 * k as f64;
        text.push_str(&format!("{p},{}\n", 362.4e9 * p / (p + 11.7)));
    }
    fs::write(dir.path().join("sat.csv"), text).unwrap();
    let out = nvmag(
        &[
            "fit-saturation",
            "--input",
            "sat.csv",
            "--plot",
            "sat_plot.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let d = doc(&out);
    assert!((d["results"]["p_sat_mw"].as_f64().unwrap() / 11.7 - 1.0).abs() < 1e-6);
    assert!((d["results"]["c_sat_hz"].as_f64().unwrap() / 362.4e9 - 1.0).abs() < 1e-6);
    assert!(dir.path().join("sat_plot.csv").exists());
}

#[test]
fn unresolvable_width_exits_2() {
    let config = r#"
[grid]
start_mhz = 2850.0
stop_mhz = 2890.0
points = 81
[simulate]
peaks = [{ center_mhz = 2870.1, fwhm_mhz = 0.05, contrast = 0.5 }]
"#;
    let dir = setup(config);
    let p = dir.path();
    assert!(nvmag(
        &["simulate-odmr", "--config", "run.toml", "--output", "n.csv"],
        p
    )
    .status
    .success());
    let out = nvmag(&["fit-odmr", "--config", "run.toml", "--input", "n.csv"], p);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert_eq!(doc(&out)["status"], "failed");
}
