use doppler_core::runner::{
    output_files, run, verify, verify_manifest, CheckStatus, OutputFormat, RunOptions,
    MANIFEST_FILE,
};
use doppler_core::scenario::{bundled_source, load_bundled, parse_scenario};
use doppler_core::Error;
use proptest::prelude::*;

fn opts(jobs: usize) -> RunOptions {
    RunOptions {
        jobs: Some(jobs),
        format: OutputFormat::Csv,
    }
}

#[test]
fn single_and_multi_threaded_runs_are_byte_identical() {
    for name in ["fig3_resonance", "fig4_two_mode"] {
        let s = load_bundled(name).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(&s, a.path(), &opts(1)).unwrap();
        run(&s, b.path(), &opts(4)).unwrap();
        let fa = output_files(a.path()).unwrap();
        assert!(!fa.is_empty());
        assert_eq!(fa, output_files(b.path()).unwrap(), "{name}");
    }
}

#[test]
fn manifest_lists_every_file_and_detects_tampering() {
    let s = load_bundled("fig3_resonance").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(&s, dir.path(), &opts(2)).unwrap();
    assert!(manifest.succeeded());
    let listed: Vec<_> = manifest.files.iter().map(|f| f.path.clone()).collect();
    let on_disk: Vec<_> = output_files(dir.path())
        .unwrap()
        .keys()
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    assert_eq!(listed, on_disk);
    assert!(dir.path().join(MANIFEST_FILE).exists());
    assert!(verify_manifest(dir.path()).unwrap().is_empty());

    let victim = dir.path().join("rms_spectrum.csv");
    let mut text = std::fs::read_to_string(&victim).unwrap();
    text.push_str("# edited\n");
    std::fs::write(&victim, text).unwrap();
    std::fs::remove_file(dir.path().join("phase_trace.json")).unwrap();
    let mut bad = verify_manifest(dir.path()).unwrap();
    bad.sort();
    assert_eq!(
        bad,
        vec![
            "phase_trace.json".to_string(),
            "rms_spectrum.csv".to_string()
        ]
    );
}

#[test]
fn changing_the_seed_only_touches_monte_carlo_products() {
    let mut s = load_bundled("fig3_resonance").unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&s, a.path(), &opts(2)).unwrap();
    s.seed = 7;
    run(&s, b.path(), &opts(2)).unwrap();
    let (fa, fb) = (
        output_files(a.path()).unwrap(),
        output_files(b.path()).unwrap(),
    );
    for (path, bytes) in &fa {
        let name = path.to_string_lossy();
        let stochastic = name.starts_with("residual_grid") || name.starts_with("force_fit");
        assert_eq!(bytes != &fb[path], stochastic, "{name}");
    }
}

#[test]
fn json_format_writes_matrices_inline() {
    let s = load_bundled("fig4_two_mode").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions {
        jobs: Some(2),
        format: OutputFormat::Json,
    };
    run(&s, dir.path(), &options).unwrap();
    let files = output_files(dir.path()).unwrap();
    assert!(files.keys().all(|p| p.extension().unwrap() == "json"));
    let grid: serde_json::Value =
        serde_json::from_slice(&files[std::path::Path::new("residual_grid.json")]).unwrap();
    assert_eq!(
        grid["residuals"].as_array().unwrap().len(),
        grid["rows"].as_u64().unwrap() as usize
    );
}

#[test]
fn missing_products_mark_checks_as_errors() {
    let text = bundled_source("fig3_resonance")
        .unwrap()
        .replace(
            r#"outputs = ["residual_grid", "rms_spectrum", "energy_spectrum", "phase_trace", "force_fit"]"#,
            r#"outputs = ["rms_spectrum"]"#,
        );
    let s = parse_scenario(&text).unwrap();
    let report = verify(&s, None, Some(2)).unwrap();
    assert!(!report.passed());
    let status = |name: &str| {
        report
            .checks
            .iter()
            .find(|c| c.name == name)
            .unwrap()
            .status
    };
    assert_eq!(status("peak_location"), CheckStatus::Pass);
    assert_eq!(status("phase_slope"), CheckStatus::Error);
    assert_eq!(status("band_period"), CheckStatus::Error);
}

#[test]
fn only_filters_checks_and_rejects_unknown_prefixes() {
    let s = load_bundled("fig3_resonance").unwrap();
    let report = verify(&s, Some("band_"), Some(2)).unwrap();
    let names: Vec<_> = report.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["band_period", "band_phase_slope"]);
    assert!(report.passed());
    assert!(matches!(
        verify(&s, Some("nonsense"), None),
        Err(Error::InvalidParameter { .. })
    ));
}

#[test]
fn corrupted_tolerance_fails_the_check() {
    let text = bundled_source("fig3_resonance").unwrap().replace(
        "check = \"phase_slope\"\ntolerance = 0.01",
        "check = \"phase_slope\"\ntolerance = 1e-18",
    );
    let s = parse_scenario(&text).unwrap();
    let report = verify(&s, Some("phase_slope"), None).unwrap();
    assert_eq!(report.checks[0].status, CheckStatus::Fail);
    assert!(!report.passed());
}

/// Header lines of every table in the scenario, plus the top level.
fn insertion_points(text: &str) -> Vec<usize> {
    let mut points = vec![0];
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        offset += line.len();
        if line.starts_with('[') {
            points.push(offset);
        }
    }
    points
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_unknown_key_is_rejected(
        scenario in prop::sample::select(vec!["fig3_resonance", "fig4_two_mode", "null_experiment", "fig4_offset_interference"]),
        which in any::<prop::sample::Index>(),
        key in "x[a-z_]{0,12}",
        value in prop::sample::select(vec!["1", "2.5", "true", "\"text\""]),
    ) {
        let text = bundled_source(scenario).unwrap();
        prop_assert!(parse_scenario(text).is_ok());
        let points = insertion_points(text);
        let at = points[which.index(points.len())];
        let injected = format!("{}{key} = {value}\n{}", &text[..at], &text[at..]);
        let err = parse_scenario(&injected).unwrap_err();
        prop_assert!(matches!(err, Error::Schema { .. }), "{err}");
        prop_assert!(err.to_string().contains(&key), "{err}");
    }
}
