use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_cavity-spdc");

fn cli(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn report(out: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(out.join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn spectrum_reports_background_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["spectrum", "--preset", "paper-ratios"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(dir.path(), "spectrum");
    let b = r["results"]["background_fraction"].as_f64().unwrap();
    assert!((b - 3.41).abs() <= 0.10, "{b}");
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("mode_index,detuning_h_hz,detuning_v_hz,weight,filtered_weight\n"));
    assert_eq!(csv.lines().count(), 1 + 1 + 4 * 46);
}

#[test]
fn chsh_at_unit_visibility_reaches_tsirelson() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"noise_visibility": 1.0}"#);
    let o = cli(&["chsh", "--config", &config], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = report(dir.path(), "chsh")["results"]["s_optimal"].as_f64().unwrap();
    assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-9, "{s}");
}

#[test]
fn sampled_histogram_refits_linewidth() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"simulation": {"g2_events": 100000}}"#);
    let o = cli(&["g2-sample", "--config", &config, "--seed", "7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cli(&["g2-fit", "--config", &config], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(dir.path(), "g2-fit");
    let lw = r["results"]["fit"]["parameters"][1]["value"].as_f64().unwrap();
    assert!((lw / 9.6e6 - 1.0).abs() < 0.03, "{lw}");
}

#[test]
fn tomography_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cli(&["tomo-simulate"], dir.path()).status.success());
    let o = cli(&["tomo-reconstruct"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let f = report(dir.path(), "tomo-reconstruct")["results"]["fidelity_phi_minus"]
        .as_f64()
        .unwrap();
    assert!((0.95..=1.0).contains(&f), "{f}");
}

#[test]
fn empty_config_echoes_defaults_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "{}");
    assert!(cli(&["entangle", "--config", &config], dir.path()).status.success());
    let r = report(dir.path(), "entangle");
    assert_eq!(r["seed"], 0);
    let c = &r["config"];
    assert_eq!(c["seed"], 0);
    assert_eq!(c["cavity"]["fsr_mean_hz"], 1.9e9);
    assert_eq!(c["cavity"]["finesse"], 166.0);
    assert_eq!(c["temporal"]["linewidth_hz"], 9.6e6);
    assert_eq!(c["temporal"]["detector_jitter_fwhm_s"], 350e-12);
    assert_eq!(c["etalon"]["finesse"], 31.0);
    assert_eq!(c["pdh"]["modulation_frequency_hz"], 70e6);
    assert_eq!(r["timestamp"], "2023-11-14T22:13:20Z");
}

#[test]
fn echoed_config_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cli(&["chsh", "--seed", "11"], dir.path()).status.success());
    let first = report(dir.path(), "chsh");
    let echo = write_config(dir.path(), &first["config"].to_string());
    let again = dir.path().join("again");
    assert!(cli(&["chsh", "--config", &echo], &again).status.success());
    assert_eq!(first["results"], report(&again, "chsh")["results"]);
}

#[test]
fn invalid_config_exits_one_with_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"cavity": {"finesse": -3}, "noise_visibility": 2}"#);
    let o = cli(&["spectrum", "--config", &config], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("cavity.finesse"), "{err}");
    assert!(err.contains("noise_visibility"), "{err}");
    assert!(!dir.path().join("spectrum.json").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"cavity": {"finesses": 100}}"#);
    let o = cli(&["spectrum", "--config", &config], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cavity.finesses"), "{}", stderr(&o));
}

#[test]
fn missing_files_exit_two_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["g2-fit"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("g2_histogram.csv"), "{}", stderr(&o));

    let o = cli(&["spectrum", "--config", "/nonexistent/cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/cfg.json"), "{}", stderr(&o));
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "tau_s,count\n0.0,abc\n").unwrap();
    let o = cli(&["g2-fit", "--input", input.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 1"), "{}", stderr(&o));
}

#[test]
fn tomography_non_convergence_exits_three_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"simulation": {"mle_max_iterations": 1}}"#);
    assert!(cli(&["tomo-simulate"], dir.path()).status.success());
    let o = cli(&["tomo-reconstruct", "--config", &config], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(report(dir.path(), "tomo-reconstruct")["results"]["converged"], false);
}

#[test]
fn bad_flag_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["spectrum", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["nonsense"], dir.path()).status.code(), Some(1));
    assert_eq!(
        cli(&["spectrum", "--preset", "other"], dir.path()).status.code(),
        Some(1)
    );
}

fn all_outputs(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    for c in [
        "spectrum",
        "entangle",
        "chsh",
        "tomo-simulate",
        "tomo-reconstruct",
        "g2-sample",
        "g2-fit",
        "coherence",
        "rates-fit",
        "pdh-sweep",
    ] {
        let o = cli(&[c, "--seed", "42", "--threads", threads], dir);
        assert!(o.status.success(), "{c}: {}", stderr(&o));
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = all_outputs(a.path(), "1");
    let four = all_outputs(b.path(), "4");
    assert_eq!(one.len(), 19);
    for ((name_a, bytes_a), (name_b, bytes_b)) in one.iter().zip(&four) {
        assert_eq!(name_a, name_b);
        assert!(bytes_a == bytes_b, "{name_a} differs");
    }
}

#[test]
fn every_csv_has_a_header() {
    let dir = tempfile::tempdir().unwrap();
    for (name, bytes) in all_outputs(dir.path(), "2") {
        if name.ends_with(".csv") {
            let text = String::from_utf8(bytes).unwrap();
            let header = text.lines().next().unwrap();
            assert!(
                header.chars().all(|c| c.is_ascii_lowercase() || c == '_' || c == ','),
                "{name}: {header}"
            );
            assert!(text.lines().count() > 1, "{name}");
        }
    }
}

#[test]
fn outputs_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    for c in ["spectrum", "chsh", "tomo-simulate", "g2-sample"] {
        let o = cli(&[c, "--seed", "42"], dir.path());
        assert!(o.status.success(), "{c}: {}", stderr(&o));
    }
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in [
        "spectrum.csv",
        "chsh.json",
        "chsh_counts.csv",
        "tomo_counts.csv",
        "g2_histogram.csv",
    ] {
        let want = std::fs::read(golden.join(name)).unwrap();
        let got = std::fs::read(dir.path().join(name)).unwrap();
        assert!(got == want, "{name} differs from its golden file");
    }
}
