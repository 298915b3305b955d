use doppler_core::consts::{hz_to_angular, BE9_ION_MASS, YOCTONEWTON};
use doppler_core::force::{extract_force, FitSource, ForceData};
use doppler_core::oscillator::{DriveConfig, ModeParams};
use doppler_core::runner::scenario_grid;
use doppler_core::scenario::load_bundled;
use doppler_core::spectroscopy::rms_spectrum;

#[test]
fn noise_free_spectra_are_fitted_to_1e_4() {
    let w0 = hz_to_angular(867e3);
    let mode = ModeParams::new(w0, BE9_ION_MASS, 1.0).unwrap();
    for (t_d, psi, guess_hz) in [
        (100e-6, 0.0, -8e3),
        (200e-6, 1.1, 2e3),
        (400e-6, 2.5, 600.0),
        (1e-3, 0.0, -300.0),
    ] {
        let drive = DriveConfig::new(1e-22, w0, psi, t_d).unwrap();
        let step = 0.1 / t_d;
        let grid: Vec<f64> = (-40..=40)
            .map(|i| w0 + hz_to_angular(step * i as f64))
            .collect();
        let s = rms_spectrum(&[mode], &drive, &grid, 30e-6, 0.0).unwrap();
        let guess = ModeParams {
            omega_z: w0 + hz_to_angular(guess_hz),
            ..mode
        };
        let fit = extract_force(ForceData::Spectrum(&s), &guess, &drive).unwrap();
        assert!(
            (fit.force / 1e-22 - 1.0).abs() < 1e-4,
            "t_d {t_d}: {}",
            fit.force
        );
        assert!((fit.omega_z / w0 - 1.0).abs() < 1e-9);
    }
}

#[test]
fn monte_carlo_grid_recovers_the_force_within_ten_percent() {
    let s = load_bundled("force_calibration").unwrap();
    let g = scenario_grid(&s, s.seed).unwrap();
    let fit = extract_force(ForceData::Grid(&g), &s.modes[0], &s.drive).unwrap();
    assert_eq!(fit.source, FitSource::ResidualGrid);
    let rel = fit.force / s.drive.force - 1.0;
    assert!(rel.abs() < 0.10, "relative error {rel}");
    // The statistical error bar should be honest about the scatter.
    assert!(rel.abs() < 4.0 * fit.force_sigma / s.drive.force);
    // Order of magnitude of a ~100 yN force.
    let yn = fit.force / YOCTONEWTON;
    assert!((30.0..300.0).contains(&yn));
}

#[test]
fn too_narrow_a_scan_is_refused() {
    let w0 = hz_to_angular(867e3);
    let mode = ModeParams::new(w0, BE9_ION_MASS, 1.0).unwrap();
    let drive = DriveConfig::new(1e-22, w0, 0.0, 1e-3).unwrap();
    let grid: Vec<f64> = (0..5).map(|i| w0 + i as f64).collect();
    let s = rms_spectrum(&[mode], &drive, &grid, 30e-6, 0.0).unwrap();
    assert!(extract_force(ForceData::Spectrum(&s), &mode, &drive).is_err());
}
