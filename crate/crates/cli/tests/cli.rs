use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;

fn ldv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldv"))
        .args(args)
        .output()
        .expect("spawn ldv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_scenario(outputs: &[&str], sweep_points: usize, expectations: &str) -> String {
    let quoted: Vec<String> = outputs.iter().map(|o| format!("\"{o}\"")).collect();
    let step = 1.0e3;
    let start = 867.0e3 - step * (sweep_points as f64 - 1.0) / 2.0;
    let stop = start + step * (sweep_points as f64 - 1.0);
    format!(
        r#"schema_version = 1
name = "small"
seed = 1
reps = 200
outputs = [{}]

[[modes]]
freq_hz = 867.0e3
mass_amu = 9.0116336

[drive]
force_yn = 100.0
t_d = 100.0e-6

[detection]
base_rate = 2.0e5
detuning_hz = -12.0e6
linewidth_hz = 19.4e6
wavelength_nm = 313.0
damping = 5.0e4
dead_time = 4.5e-6
window = 30.0e-6
bin_width = 0.1e-6

[sweep]
start_hz = {start}
stop_hz = {stop}
step_hz = {step}
{expectations}"#,
        quoted.join(", ")
    )
}

#[test]
fn run_writes_products_and_prints_the_manifest_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig3");
    let o = ldv(&[
        "run",
        "fig3_resonance",
        "--out",
        path_str(&out),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), path_str(&out.join("manifest.json")));
    for f in [
        "residual_grid.csv",
        "residual_grid_counts.csv",
        "rms_spectrum.csv",
        "force_fit.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn missing_scenario_fails() {
    let o = ldv(&["run", "missing.scenario"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.scenario"));
}

#[test]
fn usage_errors_fail() {
    assert!(!ldv(&[]).status.success());
    assert!(!ldv(&["run"]).status.success());
    assert!(!ldv(&["run", "fig3_resonance", "--format", "xml"])
        .status
        .success());
}

#[test]
fn list_names_every_bundled_scenario() {
    let o = ldv(&["list-scenarios"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 11);
    assert!(text.contains("fig3_resonance") && text.contains("null_experiment"));
}

#[test]
fn seed_override_changes_only_monte_carlo_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(ldv(&["run", "fig4_two_mode", "--out", path_str(&a)])
        .status
        .success());
    assert!(
        ldv(&["run", "fig4_two_mode", "--out", path_str(&b), "--seed", "7"])
            .status
            .success()
    );
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_str().unwrap();
        if name == "manifest.json" {
            continue;
        }
        let same = std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap();
        assert_eq!(same, !name.starts_with("residual_grid"), "{name}");
    }
}

#[test]
fn verify_only_runs_the_selected_checks() {
    let o = ldv(&["verify", "fig3_resonance", "--only", "band_"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.starts_with("PASS")));

    let o = ldv(&["verify", "fig4_offset_interference", "--format", "json"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["checks"][0]["status"], "pass");
}

#[test]
fn verify_fails_on_a_corrupted_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tight.toml");
    let text = small_scenario(
        &["rms_spectrum", "phase_trace"],
        31,
        "\n[[expectations]]\ncheck = \"phase_slope\"\ntolerance = 1e-18\n",
    );
    std::fs::write(&path, text).unwrap();
    let o = ldv(&["verify", path_str(&path)]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("FAIL"));
}

#[test]
fn verify_without_expectations_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bare.toml");
    std::fs::write(&path, small_scenario(&["rms_spectrum"], 31, "")).unwrap();
    let o = ldv(&["verify", path_str(&path)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("expectations"));
}

#[test]
fn render_is_deterministic_and_rejects_unknown_products() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(ldv(&["run", "fig4_two_mode", "--out", path_str(&out)])
        .status
        .success());
    for product in [
        "residual_grid.csv",
        "residual_grid_counts.csv",
        "rms_spectrum.csv",
        "offset_scan.csv",
    ] {
        let input = out.join(product);
        let (p1, p2) = (dir.path().join("1.ppm"), dir.path().join("2.ppm"));
        assert!(ldv(&["render", path_str(&input), "--out", path_str(&p1)])
            .status
            .success());
        assert!(ldv(&["render", path_str(&input), "--out", path_str(&p2)])
            .status
            .success());
        let bytes = std::fs::read(&p1).unwrap();
        assert!(bytes.starts_with(b"P6\n"), "{product}");
        assert_eq!(bytes, std::fs::read(&p2).unwrap(), "{product}");
    }

    let bogus = dir.path().join("bogus.csv");
    std::fs::write(&bogus, "time_s,value\n1,2\n").unwrap();
    let o = ldv(&["render", path_str(&bogus)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown product"));
}

#[test]
fn all_zero_residuals_render_uniform_white() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("zeros.csv");
    let mut text = String::from("drive_freq_hz/residual,1e-6,2e-6,3e-6\n");
    for f in [866e3, 867e3, 868e3] {
        text.push_str(&format!("{f:e},0e0,0e0,0e0\n"));
    }
    std::fs::write(&input, text).unwrap();
    assert!(ldv(&["render", path_str(&input)]).status.success());
    let bytes = std::fs::read(dir.path().join("zeros.ppm")).unwrap();
    let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
    assert!(bytes[header_end..].iter().all(|&b| b == 255));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Exit status is zero exactly when every requested product succeeds.
    /// Resolvability on a single mode is refused at load time; force fits
    /// fail at run time on short scans.
    #[test]
    fn exit_status_reflects_product_failures(
        rms in any::<bool>(),
        grid in any::<bool>(),
        resolvability in any::<bool>(),
        force in any::<bool>(),
        short_scan in any::<bool>(),
    ) {
        let mut outputs = vec!["energy_spectrum"];
        if rms { outputs.push("rms_spectrum"); }
        if grid { outputs.push("residual_grid"); }
        if resolvability { outputs.push("resolvability"); }
        if force { outputs.push("force_fit"); }
        let points = if short_scan { 5 } else { 21 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, small_scenario(&outputs, points, "")).unwrap();
        let out = dir.path().join("out");
        let o = ldv(&["run", path_str(&path), "--out", path_str(&out)]);

        if resolvability {
            prop_assert_eq!(o.status.code(), Some(2));
            prop_assert!(!out.exists());
        } else {
            let should_fail = force && short_scan;
            prop_assert_eq!(o.status.success(), !should_fail, "{}", stdout(&o));
            prop_assert!(out.join("manifest.json").exists());
            prop_assert!(out.join("energy_spectrum.csv").exists());
            prop_assert_eq!(stdout(&o).contains("failed products: force_fit"), should_fail);
        }
    }
}
