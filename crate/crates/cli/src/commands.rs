//! One pipeline per command.

use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};

use cavity_spdc::entanglement::{
    chsh_s, chsh_s_general, fidelity, optimize_chsh_angles, optimize_chsh_settings, simulate_chsh, violation_sigmas,
    visibility_sweep, ChshSettings,
};
use cavity_spdc::pdh::{
    error_signal_sweep, error_signal_zeros, exact_mirror_finesse, lock_capture_range, pdh_error_signal,
    reflection_finesse,
};
use cavity_spdc::polarization::{
    apply_werner_noise, pbs_interfere, phase_compensate, phi_minus_vector, PolarizationVector, RelativePhase,
    TwoPhotonPolarizationState, BASIS_LABELS,
};
use cavity_spdc::rates::{fit_proportional, pair_rate, simulate_power_sweep, spectral_brightness, PowerRatePoint};
use cavity_spdc::spectral::{
    background_fraction, build_joint_spectrum, filtered_spectrum, mode_weight_ratio, single_mode_purity,
};
use cavity_spdc::temporal::{
    coherence_length, envelope_fwhm, fit_coherence_length, fit_linewidth, sample_coincidences,
    simulate_visibility_curve, Histogram,
};
use cavity_spdc::tomography::{
    linear_reconstruct, matrix_tables, mle_reconstruct, simulate_counts, standard_settings, CountRecord, MleOptions,
    ProjectorSetting,
};
use cavity_spdc::SPEED_OF_LIGHT;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::table::{field, num, read_csv, write_csv};
use crate::{CliError, Command, Outcome, RunPaths};

pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const DENSITY_CSV: &str = "entangle_density.csv";
pub const CHSH_CSV: &str = "chsh_counts.csv";
pub const TOMO_COUNTS_CSV: &str = "tomo_counts.csv";
pub const TOMO_DENSITY_CSV: &str = "tomo_density.csv";
pub const HISTOGRAM_CSV: &str = "g2_histogram.csv";
pub const VISIBILITY_CSV: &str = "coherence_visibility.csv";
pub const RATES_CSV: &str = "rates_points.csv";
pub const PDH_CSV: &str = "pdh_error_signal.csv";

const COUNTS_HEADER: [&str; 3] = ["setting", "counts", "exposure_s"];
const HISTOGRAM_HEADER: [&str; 2] = ["tau_s", "count"];
const RATES_HEADER: [&str; 2] = ["power_mw", "rate_cps"];

pub fn execute(command: Command, config: &ExperimentConfig, paths: &RunPaths) -> Result<Outcome, CliError> {
    let out = paths.out_dir.as_path();
    let done = |results: Value| Ok(Outcome { results, failure: None });
    match command {
        Command::Spectrum => done(spectrum(config, out)?),
        Command::Entangle => done(entangle(config, out)?),
        Command::Chsh => done(chsh(config, out)?),
        Command::TomoSimulate => done(tomo_simulate(config, out)?),
        Command::TomoReconstruct => tomo_reconstruct(config, out, paths),
        Command::G2Sample => done(g2_sample(config, out)?),
        Command::G2Fit => g2_fit(config, paths),
        Command::Coherence => coherence(config, out),
        Command::RatesFit => done(rates_fit(config, out, paths.input.as_deref())?),
        Command::PdhSweep => done(pdh_sweep(config, out)?),
    }
}

fn input_path(paths: &RunPaths, default_name: &str) -> PathBuf {
    paths.input.clone().unwrap_or_else(|| paths.out_dir.join(default_name))
}

/// Input as echoed in the report; relative to the output directory when defaulted, so
/// that reports do not depend on where the run happened.
fn input_label(paths: &RunPaths, default_name: &str) -> String {
    paths
        .input
        .as_ref()
        .map_or_else(|| default_name.to_string(), |p| p.display().to_string())
}

fn spectrum(config: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let cavity = &config.cavity;
    let joint = build_joint_spectrum(cavity)?;
    let filtered = filtered_spectrum(&joint, &config.etalon);
    let ratios = (1..=cavity.n_side_modes.min(3))
        .map(|m| mode_weight_ratio(cavity, m))
        .collect::<Result<Vec<f64>, _>>()?;
    write_csv(
        &out.join(SPECTRUM_CSV),
        &[
            "mode_index",
            "detuning_h_hz",
            "detuning_v_hz",
            "weight",
            "filtered_weight",
        ],
        joint.terms().iter().zip(filtered.terms()).map(|(t, f)| {
            vec![
                t.mode.to_string(),
                num(t.detuning_h),
                num(t.detuning_v),
                num(t.weight),
                num(f.weight),
            ]
        }),
    )?;
    Ok(json!({
        "fsr_diff_hz": cavity.fsr_diff,
        "n_side_modes": cavity.n_side_modes,
        "cavity_linewidth_hz": cavity.linewidth(),
        "mode_weight_ratios": ratios,
        "background_fraction": background_fraction(cavity)?,
        "center_weight": joint.center_weight(),
        "single_mode_purity": single_mode_purity(&joint)?,
        "filtered_single_mode_purity": single_mode_purity(&filtered)?,
        "filtered_transmitted_fraction": filtered.total_weight(),
        "data": SPECTRUM_CSV,
    }))
}

struct Prepared {
    state: TwoPhotonPolarizationState,
    success_probability: f64,
    both_in_port_a: f64,
    both_in_port_b: f64,
}

/// |+⟩ and |−⟩ interfered on the PBS, phase-compensated, then mixed with white noise.
fn entangled_state(config: &ExperimentConfig) -> Result<Prepared, CliError> {
    let alpha = RelativePhase(config.simulation.pbs_phase_rad);
    let outcome = pbs_interfere(
        &PolarizationVector::diagonal(),
        &PolarizationVector::antidiagonal(),
        alpha,
    );
    let post_selected = outcome.state.expect("diagonal inputs always yield coincidences");
    let state = apply_werner_noise(&phase_compensate(&post_selected, alpha), config.noise_visibility)?;
    Ok(Prepared {
        state,
        success_probability: outcome.success_probability,
        both_in_port_a: outcome.both_in_port_a,
        both_in_port_b: outcome.both_in_port_b,
    })
}

fn density_rows(state: &TwoPhotonPolarizationState) -> Vec<Vec<String>> {
    let t = matrix_tables(state);
    let mut rows = Vec::new();
    for (r, row_label) in BASIS_LABELS.iter().enumerate() {
        for (c, column_label) in BASIS_LABELS.iter().enumerate() {
            rows.push(vec![
                row_label.to_string(),
                column_label.to_string(),
                num(t.real[r][c]),
                num(t.imag[r][c]),
            ]);
        }
    }
    rows
}

const DENSITY_HEADER: [&str; 4] = ["row", "column", "real", "imag"];

fn entangle(config: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p = entangled_state(config)?;
    write_csv(&out.join(DENSITY_CSV), &DENSITY_HEADER, density_rows(&p.state))?;
    Ok(json!({
        "success_probability": p.success_probability,
        "both_in_port_a": p.both_in_port_a,
        "both_in_port_b": p.both_in_port_b,
        "fidelity_phi_minus": fidelity(&p.state, &phi_minus_vector())?,
        "purity": p.state.purity(),
        "min_eigenvalue": p.state.min_eigenvalue(),
        "visibility_hv_basis": visibility_sweep(&p.state, 0.0, 0.0)?,
        "visibility_diagonal_basis": visibility_sweep(&p.state, FRAC_PI_4, 0.0)?,
        "density_matrix": matrix_tables(&p.state),
        "data": DENSITY_CSV,
    }))
}

fn settings_json(s: &ChshSettings) -> Value {
    let dir = |d: &cavity_spdc::entanglement::AnalyzerDirection| {
        let v = d.bloch_vector();
        json!([v.x, v.y, v.z])
    };
    json!({
        "a": dir(&s.a),
        "a_prime": dir(&s.a_prime),
        "b": dir(&s.b),
        "b_prime": dir(&s.b_prime),
    })
}

fn chsh(config: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let state = entangled_state(config)?.state;
    let angles = optimize_chsh_angles(&state);
    let exact = chsh_s(&state, &angles);
    let general = optimize_chsh_settings(&state);
    let (measured, counts) = simulate_chsh(&state, &angles, config.simulation.chsh_counts_per_pair, config.seed)?;
    let sigma = measured.std_dev.unwrap_or(f64::NAN);
    let pairs = [
        (angles.phi_a, angles.phi_b),
        (angles.phi_a, angles.phi_b_prime),
        (angles.phi_a_prime, angles.phi_b),
        (angles.phi_a_prime, angles.phi_b_prime),
    ];
    let mut rows = Vec::new();
    for ((a, b), c) in pairs.iter().zip(&counts) {
        let (e, se) = c.correlation()?;
        let mut row = vec![num(a.to_degrees()), num(b.to_degrees())];
        row.extend(c.counts.iter().map(|n| n.to_string()));
        row.extend([num(e), num(se)]);
        rows.push(row);
    }
    write_csv(
        &out.join(CHSH_CSV),
        &[
            "angle_a_deg",
            "angle_b_deg",
            "counts_a_b",
            "counts_a_bperp",
            "counts_aperp_b",
            "counts_aperp_bperp",
            "correlation",
            "correlation_std",
        ],
        rows,
    )?;
    Ok(json!({
        "noise_visibility": config.noise_visibility,
        "angles_deg": angles.to_degrees(),
        "s_optimal": exact.s_value,
        "s_general_analyzers": chsh_s_general(&state, &general),
        "general_analyzer_bloch_vectors": settings_json(&general),
        "s_measured": measured.s_value,
        "s_measured_std": sigma,
        "violation_sigmas": violation_sigmas(measured.s_value, sigma)?,
        "data": CHSH_CSV,
    }))
}

fn tomo_simulate(config: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let state = entangled_state(config)?.state;
    let settings = standard_settings();
    let records = simulate_counts(
        &state,
        &settings,
        config.simulation.tomography_counts_per_setting,
        config.seed,
    )?;
    write_csv(
        &out.join(TOMO_COUNTS_CSV),
        &COUNTS_HEADER,
        records
            .iter()
            .map(|r| vec![r.setting.label.clone(), r.counts.to_string(), num(r.exposure)]),
    )?;
    Ok(json!({
        "settings": records.len(),
        "total_counts": records.iter().map(|r| r.counts).sum::<u64>(),
        "mean_counts_per_setting": config.simulation.tomography_counts_per_setting,
        "true_fidelity_phi_minus": fidelity(&state, &phi_minus_vector())?,
        "data": TOMO_COUNTS_CSV,
    }))
}

fn read_count_records(path: &Path) -> Result<Vec<CountRecord>, CliError> {
    read_csv(path, &COUNTS_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let setting = ProjectorSetting::from_label(&row[0])
                .map_err(|e| CliError::input(path, format!("row {}: {e}", i + 1)))?;
            let counts = field(path, i, "count", &row[1])?;
            let exposure = field(path, i, "exposure", &row[2])?;
            CountRecord::new(setting, counts, exposure)
                .map_err(|e| CliError::input(path, format!("row {}: {e}", i + 1)))
        })
        .collect()
}

fn tomo_reconstruct(config: &ExperimentConfig, out: &Path, paths: &RunPaths) -> Result<Outcome, CliError> {
    let records = read_count_records(&input_path(paths, TOMO_COUNTS_CSV))?;
    let linear = linear_reconstruct(&records)?;
    let options = MleOptions {
        max_iterations: config.simulation.mle_max_iterations,
        tolerance: config.simulation.mle_tolerance,
    };
    let result = mle_reconstruct(&records, &options)?;
    write_csv(
        &out.join(TOMO_DENSITY_CSV),
        &DENSITY_HEADER,
        density_rows(&result.density_matrix),
    )?;
    let failure = (!result.converged).then(|| {
        format!(
            "maximum-likelihood reconstruction did not converge in {} iterations",
            result.iterations
        )
    });
    Ok(Outcome {
        results: json!({
            "input": input_label(paths, TOMO_COUNTS_CSV),
            "linear_min_eigenvalue": linear.min_eigenvalue,
            "linear_is_physical": linear.is_physical(),
            "fidelity_phi_minus": fidelity(&result.density_matrix, &phi_minus_vector())?,
            "purity": result.density_matrix.purity(),
            "min_eigenvalue": result.density_matrix.min_eigenvalue(),
            "log_likelihood": result.log_likelihood,
            "iterations": result.iterations,
            "gradient_norm": result.gradient_norm,
            "converged": result.converged,
            "density_matrix": matrix_tables(&result.density_matrix),
            "data": TOMO_DENSITY_CSV,
        }),
        failure,
    })
}

fn g2_sample(config: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let hist = sample_coincidences(&config.temporal, config.simulation.g2_events, config.seed)?;
    write_csv(
        &out.join(HISTOGRAM_CSV),
        &HISTOGRAM_HEADER,
        hist.centers()
            .iter()
            .zip(&hist.counts)
            .map(|(t, n)| vec![num(*t), n.to_string()]),
    )?;
    Ok(json!({
        "total_events": hist.total_events,
        "events_in_window": hist.in_window(),
        "bins": hist.n_bins(),
        "envelope_fwhm_s": envelope_fwhm(config.temporal.linewidth),
        "data": HISTOGRAM_CSV,
    }))
}

fn read_histogram(path: &Path) -> Result<Histogram, CliError> {
    let rows = read_csv(path, &HISTOGRAM_HEADER)?;
    let mut centers = Vec::with_capacity(rows.len());
    let mut counts = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        centers.push(field::<f64>(path, i, "delay", &row[0])?);
        counts.push(field::<u64>(path, i, "count", &row[1])?);
    }
    Histogram::from_centers(&centers, counts).map_err(|e| CliError::input(path, e.to_string()))
}

fn g2_fit(config: &ExperimentConfig, paths: &RunPaths) -> Result<Outcome, CliError> {
    let hist = read_histogram(&input_path(paths, HISTOGRAM_CSV))?;
    let fit = fit_linewidth(&hist)?;
    let linewidth = fit.value("linewidth_hz");
    let failure = (!fit.converged).then(|| "linewidth fit did not converge".to_string());
    Ok(Outcome {
        results: json!({
            "input": input_label(paths, HISTOGRAM_CSV),
            "fit": fit,
            "configured_linewidth_hz": config.temporal.linewidth,
            "relative_deviation": linewidth / config.temporal.linewidth - 1.0,
            "fwhm_s": envelope_fwhm(linewidth),
            "coherence_length_m": SPEED_OF_LIGHT / linewidth,
        }),
        failure,
    })
}

fn coherence(config: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let wavelength = SPEED_OF_LIGHT / config.cavity.center_frequency;
    let length = coherence_length(config.temporal.linewidth, wavelength)?;
    let sim = &config.simulation;
    let points = simulate_visibility_curve(
        &sim.visibility_delays_m,
        sim.visibility_v0,
        length,
        sim.visibility_relative_noise,
        config.seed,
    )?;
    write_csv(
        &out.join(VISIBILITY_CSV),
        &["delay_m", "visibility"],
        points.iter().map(|p| vec![num(p.delay), num(p.visibility)]),
    )?;
    let fit = fit_coherence_length(&points)?;
    let failure = (!fit.converged).then(|| "coherence-length fit did not converge".to_string());
    Ok(Outcome {
        results: json!({
            "wavelength_m": wavelength,
            "coherence_length_m": length,
            "fit": fit,
            "relative_deviation": fit.value("coherence_length_m") / length - 1.0,
            "data": VISIBILITY_CSV,
        }),
        failure,
    })
}

fn read_rate_points(path: &Path) -> Result<Vec<PowerRatePoint>, CliError> {
    read_csv(path, &RATES_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, row)| {
            Ok(PowerRatePoint {
                pump_power: field(path, i, "power", &row[0])?,
                pair_rate: field(path, i, "rate", &row[1])?,
            })
        })
        .collect()
}

fn rates_fit(config: &ExperimentConfig, out: &Path, input: Option<&Path>) -> Result<Value, CliError> {
    let points = match input {
        Some(path) => read_rate_points(path)?,
        None => {
            let sim = &config.simulation;
            let points =
                simulate_power_sweep(&config.rates, &sim.rate_powers_mw, sim.rate_relative_noise, config.seed)?;
            write_csv(
                &out.join(RATES_CSV),
                &RATES_HEADER,
                points.iter().map(|p| vec![num(p.pump_power), num(p.pair_rate)]),
            )?;
            points
        }
    };
    let fit = fit_proportional(&points)?;
    let k = fit.value("rate_per_mw");
    let max_power = points.iter().map(|p| p.pump_power).fold(0.0, f64::max);
    let fitted = cavity_spdc::rates::RateParams {
        rate_per_mw: k,
        ..config.rates.clone()
    };
    let max_rate = pair_rate(&fitted, max_power)?;
    let brightness = spectral_brightness(max_rate, config.rates.linewidth)?;
    Ok(json!({
        "input": input.map_or_else(|| RATES_CSV.to_string(), |p| p.display().to_string()),
        "fit": fit,
        "max_power_mw": max_power,
        "pair_rate_at_max_power_cps": max_rate,
        "spectral_brightness_cps_per_mhz": brightness,
        "spectral_brightness_cps_per_mhz_per_mw": spectral_brightness(k * config.rates.duty_factor, config.rates.linewidth)?,
    }))
}

fn pdh_sweep(config: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let params = config.pdh_params();
    let span = config.simulation.pdh_span_hz;
    write_csv(
        &out.join(PDH_CSV),
        &["detuning_hz", "error_signal"],
        error_signal_sweep(&params, span, config.simulation.pdh_points)
            .into_iter()
            .map(|(d, e)| vec![num(d), num(e)]),
    )?;
    let step = (params.cavity.linewidth() / 20.0).min(span / 100.0);
    let zeros = error_signal_zeros(&params, -span, span, step);
    let h = 1e-6 * params.cavity.linewidth();
    let slope = (pdh_error_signal(&params, h) - pdh_error_signal(&params, -h)) / (2.0 * h);
    Ok(json!({
        "zero_crossings_hz": zeros,
        "slope_at_lock_per_hz": slope,
        "capture_range": lock_capture_range(&params),
        "reflection_finesse": reflection_finesse(&params),
        "mirror_finesse": exact_mirror_finesse(&params),
        "data": PDH_CSV,
    }))
}
