//! Two-photon time correlations: the single-mode double exponential, the multimode
//! comb, detector jitter, simulated TAC histograms, and linewidth fits.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{first_issue, Error, ParamIssue, Result};
use crate::numerics::{fit_parameter, levenberg_marquardt, substream_rng, FitResult, LeastSquaresOptions};
use crate::spectral::JointSpectrum;
use crate::SPEED_OF_LIGHT;

/// `2·sqrt(2·ln 2)`, the FWHM of a unit-σ Gaussian.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalParams {
    /// Single-mode linewidth Δν, Hz.
    #[serde(rename = "linewidth_hz")]
    pub linewidth: f64,
    /// Cavity round-trip time, s.
    #[serde(rename = "round_trip_time_s")]
    pub round_trip_time: f64,
    /// Combined two-detector jitter as a Gaussian FWHM, s.
    #[serde(rename = "detector_jitter_fwhm_s")]
    pub detector_jitter_fwhm: f64,
    /// TAC quantization step, s.
    #[serde(rename = "tac_resolution_s")]
    pub tac_resolution: f64,
    #[serde(rename = "bin_width_s")]
    pub bin_width: f64,
    /// Histogram covers `[-window_half_width, window_half_width)`.
    #[serde(rename = "window_half_width_s")]
    pub window_half_width: f64,
}

impl TemporalParams {
    pub fn reference() -> Self {
        Self {
            linewidth: 9.6e6,
            round_trip_time: 520e-12,
            detector_jitter_fwhm: 350e-12,
            tac_resolution: 50e-12,
            bin_width: 0.5e-9,
            window_half_width: 120e-9,
        }
    }

    pub fn issues(&self) -> Vec<ParamIssue> {
        let mut issues = Vec::new();
        for (field, value) in [
            ("linewidth_hz", self.linewidth),
            ("round_trip_time_s", self.round_trip_time),
            ("detector_jitter_fwhm_s", self.detector_jitter_fwhm),
            ("tac_resolution_s", self.tac_resolution),
            ("bin_width_s", self.bin_width),
            ("window_half_width_s", self.window_half_width),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                issues.push(ParamIssue::new(field, "must be positive and finite"));
            }
        }
        if self.bin_width < self.tac_resolution {
            issues.push(ParamIssue::new(
                "bin_width_s",
                "must not be smaller than tac_resolution_s",
            ));
        }
        if self.window_half_width < self.bin_width {
            issues.push(ParamIssue::new(
                "window_half_width_s",
                "must not be smaller than bin_width_s",
            ));
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        first_issue(self.issues())
    }

    fn n_bins(&self) -> usize {
        (2.0 * self.window_half_width / self.bin_width).round().max(1.0) as usize
    }
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Coincidence counts against arrival-time difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, s; one more than the number of bins.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Events generated, including those that fell outside the window.
    pub total_events: u64,
}

impl Histogram {
    pub fn new(bin_edges: Vec<f64>, counts: Vec<u64>, total_events: u64) -> Result<Self> {
        if bin_edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(Error::Degenerate(format!(
                "{} bin edges cannot bound {} bins",
                bin_edges.len(),
                counts.len()
            )));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Degenerate("bin edges must increase strictly".into()));
        }
        Ok(Self {
            bin_edges,
            counts,
            total_events,
        })
    }

    /// Builds a histogram from bin centres spaced uniformly.
    pub fn from_centers(centers: &[f64], counts: Vec<u64>) -> Result<Self> {
        if centers.len() < 2 || centers.len() != counts.len() {
            return Err(Error::Degenerate(
                "need at least two bin centres, one count each".into(),
            ));
        }
        let width = (centers[centers.len() - 1] - centers[0]) / (centers.len() - 1) as f64;
        let mut edges: Vec<f64> = centers.iter().map(|c| c - 0.5 * width).collect();
        edges.push(centers[centers.len() - 1] + 0.5 * width);
        let total = counts.iter().sum();
        Self::new(edges, counts, total)
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn in_window(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin counts as a curve sampled at the bin centres.
    pub fn to_curve(&self) -> Curve {
        Curve {
            tau: self.centers(),
            values: self.counts.iter().map(|&c| c as f64).collect(),
        }
    }

    /// Sums the counts of histograms with identical binning.
    pub fn merge(&self, other: &Histogram) -> Result<Histogram> {
        if self.bin_edges != other.bin_edges {
            return Err(Error::Degenerate("cannot merge histograms with different bins".into()));
        }
        Ok(Histogram {
            bin_edges: self.bin_edges.clone(),
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            total_events: self.total_events + other.total_events,
        })
    }
}

/// A real function of delay sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    /// `n` samples of `f` starting at `start` with spacing `step`.
    pub fn sample(start: f64, step: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let tau: Vec<f64> = (0..n).map(|i| start + step * i as f64).collect();
        let values = tau.iter().map(|&t| f(t)).collect();
        Self { tau, values }
    }

    pub fn spacing(&self) -> f64 {
        if self.tau.len() < 2 {
            return 0.0;
        }
        (self.tau[self.tau.len() - 1] - self.tau[0]) / (self.tau.len() - 1) as f64
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Full width at half of the maximum sample, interpolating linearly at the first
    /// half-maximum crossing on each side of the peak.
    pub fn fwhm(&self) -> Option<f64> {
        let (peak_index, peak) = self
            .values
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        let half = 0.5 * peak;
        let crossing = |i: usize, j: usize| {
            let (y0, y1) = (self.values[i], self.values[j]);
            self.tau[i] + (half - y0) / (y1 - y0) * (self.tau[j] - self.tau[i])
        };
        let left = (0..peak_index).rev().find(|&i| self.values[i] < half)?;
        let right = (peak_index + 1..self.values.len()).find(|&i| self.values[i] < half)?;
        Some(crossing(right - 1, right) - crossing(left + 1, left))
    }
}

/// `e^{-2π Δν |τ|}`.
pub fn g2_envelope(tau: f64, linewidth: f64) -> f64 {
    (-2.0 * std::f64::consts::PI * linewidth * tau.abs()).exp()
}

/// Full width at half maximum of [`g2_envelope`], `ln 2 / (π Δν)`.
pub fn envelope_fwhm(linewidth: f64) -> f64 {
    std::f64::consts::LN_2 / (std::f64::consts::PI * linewidth)
}

/// `|Σₖ √wₖ e^{-i 2π δₖ τ}|² · g2_envelope(τ)`, where `δₖ` is half the frequency
/// difference between the two photons of term `k`.
pub fn multimode_g2(joint: &JointSpectrum, tau: f64, linewidth: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for term in joint.terms() {
        let amplitude = term.weight.max(0.0).sqrt();
        let phase = -std::f64::consts::PI * (term.detuning_h - term.detuning_v) * tau;
        re += amplitude * phase.cos();
        im += amplitude * phase.sin();
    }
    (re * re + im * im) * g2_envelope(tau, linewidth)
}

/// Gaussian smoothing with the given FWHM.
///
/// Each sample is spread over its neighbours within 6σ with weights normalized over
/// the grid, so the sum of the values is preserved.
pub fn convolve_detector_response(curve: &Curve, jitter_fwhm: f64) -> Result<Curve> {
    if !(jitter_fwhm >= 0.0 && jitter_fwhm.is_finite()) {
        return Err(Error::domain("jitter_fwhm", jitter_fwhm, "jitter_fwhm >= 0"));
    }
    let step = curve.spacing();
    if jitter_fwhm == 0.0 || curve.values.len() < 2 {
        return Ok(curve.clone());
    }
    let sigma = jitter_fwhm / FWHM_PER_SIGMA;
    let reach = (6.0 * sigma / step).ceil() as usize;
    let kernel: Vec<f64> = (0..=reach)
        .map(|k| {
            let x = k as f64 * step / sigma;
            (-0.5 * x * x).exp()
        })
        .collect();
    let n = curve.values.len();
    let mut out = vec![0.0; n];
    for (i, &v) in curve.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(n - 1);
        let norm: f64 = (lo..=hi).map(|j| kernel[i.abs_diff(j)]).sum();
        for (j, slot) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *slot += v * kernel[i.abs_diff(j)] / norm;
        }
    }
    Ok(Curve {
        tau: curve.tau.clone(),
        values: out,
    })
}

/// Residual comb modulation `(max − min)/(max + min)` near zero delay: the maximum
/// within a quarter period of τ = 0 against the minimum between a quarter and three
/// quarters of a period.
pub fn comb_contrast(curve: &Curve, period: f64) -> Option<f64> {
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for (&t, &v) in curve.tau.iter().zip(&curve.values) {
        let a = t.abs();
        if a <= 0.25 * period {
            max = max.max(v);
        } else if a <= 0.75 * period {
            min = min.min(v);
        }
    }
    (max.is_finite() && min.is_finite() && max + min > 0.0).then(|| (max - min) / (max + min))
}

const EVENTS_PER_BATCH: u64 = 1 << 16;

/// Simulated TAC histogram: delays drawn from the normalized double exponential by
/// inverse CDF, Gaussian jitter added, floored to the TAC grid, then binned.
///
/// Events are drawn in batches of 65536, batch `b` from substream `(seed, b)`.
pub fn sample_coincidences(params: &TemporalParams, n_events: u64, seed: u64) -> Result<Histogram> {
    params.validate()?;
    if n_events == 0 {
        return Err(Error::domain("n_events", 0.0, "n_events > 0"));
    }
    let n_bins = params.n_bins();
    let decay = 1.0 / (2.0 * std::f64::consts::PI * params.linewidth);
    let sigma = params.detector_jitter_fwhm / FWHM_PER_SIGMA;
    let jitter = Normal::new(0.0, sigma).map_err(|e| Error::Degenerate(e.to_string()))?;
    let n_batches = n_events.div_ceil(EVENTS_PER_BATCH);

    let counts = (0..n_batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = substream_rng(seed, batch);
            let mut counts = vec![0u64; n_bins];
            let size = EVENTS_PER_BATCH.min(n_events - batch * EVENTS_PER_BATCH);
            for _ in 0..size {
                let u: f64 = rng.random();
                let magnitude = -decay * (-u).ln_1p();
                let tau = if rng.random::<bool>() { magnitude } else { -magnitude };
                let measured = tau + jitter.sample(&mut rng);
                let quantized = (measured / params.tac_resolution).floor() * params.tac_resolution;
                // nudge so that values on a bin edge land in the bin above
                let position = (quantized + params.window_half_width) / params.bin_width;
                let index = (position + 1e-9).floor();
                if index >= 0.0 && (index as usize) < n_bins {
                    counts[index as usize] += 1;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n_bins],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let edges = (0..=n_bins)
        .map(|i| -params.window_half_width + params.bin_width * i as f64)
        .collect();
    Histogram::new(edges, counts, n_events)
}

const REWEIGHT_PASSES: usize = 4;
const MIN_NONEMPTY_BINS: usize = 10;

/// Fits `c₀ e^{-2π Δν |τ|}` to the bin counts by weighted least squares.
///
/// The first pass weights each bin by `1/max(n, 1)`; later passes use the current
/// model as the Poisson variance. Reports `c0` (counts per bin) and `linewidth_hz`.
pub fn fit_linewidth(hist: &Histogram) -> Result<FitResult> {
    let nonempty = hist.counts.iter().filter(|&&c| c > 0).count();
    if nonempty < MIN_NONEMPTY_BINS {
        return Err(Error::domain(
            "nonempty_bins",
            nonempty as f64,
            "at least 10 nonempty bins are needed",
        ));
    }
    let taus: Vec<f64> = hist.centers().iter().map(|t| t.abs()).collect();
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let total: f64 = counts.iter().sum();
    let mean_abs = taus.iter().zip(&counts).map(|(t, n)| t * n).sum::<f64>() / total;
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut x = DVector::from_vec(vec![
        counts.iter().copied().fold(0.0, f64::max),
        1.0 / (two_pi * mean_abs.max(1e-300)),
    ]);
    let mut variances: Vec<f64> = counts.iter().map(|n| n.max(1.0)).collect();
    let mut fit = None;
    for _ in 0..REWEIGHT_PASSES {
        let result = levenberg_marquardt(
            |p| {
                let mut r = DVector::zeros(taus.len());
                let mut j = DMatrix::zeros(taus.len(), 2);
                for (i, (&t, &n)) in taus.iter().zip(&counts).enumerate() {
                    let e = (-two_pi * p[1] * t).exp();
                    let s = variances[i].sqrt();
                    r[i] = (p[0] * e - n) / s;
                    j[(i, 0)] = e / s;
                    j[(i, 1)] = -p[0] * two_pi * t * e / s;
                }
                (r, j)
            },
            x.clone(),
            &LeastSquaresOptions::default(),
        );
        x = result.x.clone();
        variances = taus
            .iter()
            .map(|&t| (x[0] * (-two_pi * x[1] * t).exp()).max(1e-3))
            .collect();
        fit = Some(result);
    }
    let fit = fit.expect("at least one pass");
    if !(fit.x[1] > 0.0 && fit.x[0] > 0.0) {
        return Err(Error::Degenerate("linewidth fit left the physical region".into()));
    }
    Ok(FitResult {
        parameters: vec![
            fit_parameter("c0", "counts", fit.x[0], fit.covariance[(0, 0)]),
            fit_parameter("linewidth_hz", "Hz", fit.x[1], fit.covariance[(1, 1)]),
        ],
        residual_norm: fit.residual_norm,
        converged: fit.converged,
    })
}

/// Coherence length `(c/λ)/Δν · λ = c/Δν`; the wavelength cancels.
pub fn coherence_length(linewidth: f64, wavelength: f64) -> Result<f64> {
    if !(linewidth > 0.0 && linewidth.is_finite()) {
        return Err(Error::domain("linewidth", linewidth, "linewidth > 0"));
    }
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::domain("wavelength", wavelength, "wavelength > 0"));
    }
    Ok(SPEED_OF_LIGHT / linewidth)
}

/// `v₀ e^{-x/x₀}`.
pub fn visibility_vs_delay(delay: f64, v0: f64, coherence_length: f64) -> Result<f64> {
    if !(coherence_length > 0.0) {
        return Err(Error::domain(
            "coherence_length",
            coherence_length,
            "coherence_length > 0",
        ));
    }
    Ok(v0 * (-delay / coherence_length).exp())
}

/// Visibility measured at a path delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityPoint {
    #[serde(rename = "delay_m")]
    pub delay: f64,
    pub visibility: f64,
}

/// Samples of `v₀ e^{-x/x₀}` with Gaussian noise of standard deviation
/// `relative_noise` times the noiseless value, point `i` drawn from substream `(seed, i)`.
pub fn simulate_visibility_curve(
    delays: &[f64],
    v0: f64,
    coherence_length: f64,
    relative_noise: f64,
    seed: u64,
) -> Result<Vec<VisibilityPoint>> {
    if !(relative_noise >= 0.0 && relative_noise.is_finite()) {
        return Err(Error::domain("relative_noise", relative_noise, "relative_noise >= 0"));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    delays
        .iter()
        .enumerate()
        .map(|(i, &delay)| {
            let clean = visibility_vs_delay(delay, v0, coherence_length)?;
            let noise = unit.sample(&mut substream_rng(seed, i as u64));
            Ok(VisibilityPoint {
                delay,
                visibility: clean * (1.0 + relative_noise * noise),
            })
        })
        .collect()
}

/// Unweighted least-squares fit of `v₀ e^{-x/x₀}`. Standard errors are scaled by
/// the residual variance. Reports `v0` and `coherence_length_m`.
pub fn fit_coherence_length(points: &[VisibilityPoint]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::domain(
            "points",
            points.len() as f64,
            "at least 3 visibility points are needed",
        ));
    }
    // start from a log-linear regression on the positive points
    let positive: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.visibility > 0.0)
        .map(|p| (p.delay, p.visibility.ln()))
        .collect();
    let start = if positive.len() >= 2 {
        let n = positive.len() as f64;
        let mx = positive.iter().map(|p| p.0).sum::<f64>() / n;
        let my = positive.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = positive.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = positive.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let x0 = if slope < 0.0 { -1.0 / slope } else { 1.0 };
        vec![(my - slope * mx).exp(), x0]
    } else {
        return Err(Error::Degenerate("need at least two positive visibilities".into()));
    };

    let fit = levenberg_marquardt(
        |p| {
            let mut r = DVector::zeros(points.len());
            let mut j = DMatrix::zeros(points.len(), 2);
            for (i, pt) in points.iter().enumerate() {
                let e = (-pt.delay / p[1]).exp();
                r[i] = p[0] * e - pt.visibility;
                j[(i, 0)] = e;
                j[(i, 1)] = p[0] * e * pt.delay / (p[1] * p[1]);
            }
            (r, j)
        },
        DVector::from_vec(start),
        &LeastSquaresOptions::default(),
    );
    if !(fit.x[1] > 0.0) {
        return Err(Error::Degenerate(
            "coherence-length fit left the physical region".into(),
        ));
    }
    let dof = (points.len() - 2).max(1) as f64;
    let scale = fit.residual_norm.powi(2) / dof;
    Ok(FitResult {
        parameters: vec![
            fit_parameter("v0", "", fit.x[0], scale * fit.covariance[(0, 0)]),
            fit_parameter("coherence_length_m", "m", fit.x[1], scale * fit.covariance[(1, 1)]),
        ],
        residual_norm: fit.residual_norm,
        converged: fit.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_joint_spectrum, CavityParams, ModeTerm};

    #[test]
    fn envelope_examples() {
        assert_eq!(g2_envelope(0.0, 9.6e6), 1.0);
        let fwhm = envelope_fwhm(9.6e6);
        assert!((fwhm - 22.98e-9).abs() < 0.01e-9, "{fwhm}");
        assert!((g2_envelope(11.49e-9, 9.6e6) - 0.5).abs() < 1e-3);
        assert!((g2_envelope(0.5 * fwhm, 9.6e6) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn single_mode_g2_is_the_envelope() {
        let single = JointSpectrum::single_mode();
        for i in -200..=200 {
            let tau = i as f64 * 0.37e-9;
            assert!((multimode_g2(&single, tau, 9.6e6) - g2_envelope(tau, 9.6e6)).abs() < 1e-12);
        }
    }

    fn two_sided_comb(spacing: f64) -> JointSpectrum {
        let term = |mode, d: f64, weight| ModeTerm {
            mode,
            detuning_h: d,
            detuning_v: -d,
            weight,
        };
        JointSpectrum::from_terms(vec![term(0, 0.0, 0.8), term(1, spacing, 0.1), term(1, -spacing, 0.1)]).unwrap()
    }

    #[test]
    fn comb_period_follows_mode_spacing() {
        let joint = two_sided_comb(1.9e9);
        let curve = Curve::sample(0.1e-9, 1e-13, 10_000, |t| multimode_g2(&joint, t, 9.6e6));
        // first revival after the origin
        let peak = (1..curve.values.len() - 1)
            .find(|&i| curve.values[i] > curve.values[i - 1] && curve.values[i] >= curve.values[i + 1])
            .unwrap();
        let period = curve.tau[peak];
        assert!((period - 1.0 / 1.9e9).abs() < 1e-12, "{period}");
        assert!((period - 520e-12).abs() / 520e-12 < 0.02);
    }

    #[test]
    fn half_period_is_a_local_minimum() {
        let joint = two_sided_comb(1.9e9);
        let period = 1.0 / 1.9e9;
        let curve = Curve::sample(0.25 * period, 1e-15, 262_000, |t| multimode_g2(&joint, t, 9.6e6));
        let (i, _) = curve
            .values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(i > 0 && i < curve.values.len() - 1);
        assert!((curve.tau[i] - 0.5 * period).abs() < 1e-12, "{}", curve.tau[i]);
    }

    #[test]
    fn zero_jitter_is_identity() {
        let c = Curve::sample(-1e-9, 1e-11, 201, |t| g2_envelope(t, 9.6e6));
        assert_eq!(convolve_detector_response(&c, 0.0).unwrap(), c);
        assert!(convolve_detector_response(&c, -1.0).is_err());
    }

    #[test]
    fn convolution_preserves_mass_and_broad_widths() {
        let c = Curve::sample(-150e-9, 10e-12, 30_001, |t| g2_envelope(t, 9.6e6));
        let smooth = convolve_detector_response(&c, 350e-12).unwrap();
        assert!((smooth.total() - c.total()).abs() < 1e-9 * c.total());
        let before = c.fwhm().unwrap();
        let after = smooth.fwhm().unwrap();
        // The cusp at τ = 0 is rounded off: the peak drops to e^{s²/2} erfc(s/√2) with
        // s = 2πΔν σ, while the tails only gain the factor e^{s²/2}.
        let s = 2.0 * std::f64::consts::PI * 9.6e6 * 350e-12 / FWHM_PER_SIGMA;
        let x = s / std::f64::consts::SQRT_2;
        let erfc =
            1.0 - 2.0 / std::f64::consts::PI.sqrt() * (x - x.powi(3) / 3.0 + x.powi(5) / 10.0 - x.powi(7) / 42.0);
        let peak = (0.5 * s * s).exp() * erfc;
        let expected = (0.5 * s * s - peak.ln() + std::f64::consts::LN_2) / std::f64::consts::LN_2;
        assert!(
            (after / before - expected).abs() < 1e-4,
            "{} vs {expected}",
            after / before
        );
        assert!((before / envelope_fwhm(9.6e6) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn jitter_washes_out_the_comb() {
        let joint = build_joint_spectrum(&CavityParams::ratio_matched()).unwrap();
        let curve = Curve::sample(-10e-9, 5e-12, 4001, |t| multimode_g2(&joint, t, 9.6e6));
        let period = 520e-12;
        let raw = comb_contrast(&curve, period).unwrap();
        let smooth = comb_contrast(&convolve_detector_response(&curve, 350e-12).unwrap(), period).unwrap();
        assert!(raw > 0.9, "{raw}");
        assert!(smooth < raw);
    }

    #[test]
    fn sampled_delays_have_the_right_scale() {
        let params = TemporalParams::reference();
        let hist = sample_coincidences(&params, 1_000_000, 7).unwrap();
        let mean_abs = hist
            .centers()
            .iter()
            .zip(&hist.counts)
            .map(|(t, &n)| t.abs() * n as f64)
            .sum::<f64>()
            / hist.in_window() as f64;
        let expected = 1.0 / (2.0 * std::f64::consts::PI * 9.6e6);
        assert!((mean_abs / expected - 1.0).abs() < 0.02, "{mean_abs}");

        let clipped = (hist.total_events - hist.in_window()) as f64 / hist.total_events as f64;
        let tail = (-2.0 * std::f64::consts::PI * 9.6e6 * 120e-9).exp();
        let sd = (tail / 1e6).sqrt();
        assert!((clipped - tail).abs() < 5.0 * sd, "{clipped} vs {tail}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = TemporalParams::reference();
        let a = sample_coincidences(&params, 200_000, 11).unwrap();
        assert_eq!(a, sample_coincidences(&params, 200_000, 11).unwrap());
        assert_ne!(a, sample_coincidences(&params, 200_000, 12).unwrap());
        assert_eq!(a.n_bins(), 480);
        assert!(sample_coincidences(&params, 0, 11).is_err());
    }

    #[test]
    fn fit_recovers_noiseless_linewidth() {
        let params = TemporalParams::reference();
        let centers: Vec<f64> = (0..480).map(|i| -119.75e-9 + 0.5e-9 * i as f64).collect();
        let counts = centers
            .iter()
            .map(|&t| (1e6 * g2_envelope(t, 9.6e6)).round() as u64)
            .collect();
        let hist = Histogram::from_centers(&centers, counts).unwrap();
        let fit = fit_linewidth(&hist).unwrap();
        assert!((fit.value("linewidth_hz") / params.linewidth - 1.0).abs() < 1e-3);
        assert!(fit.std_error("linewidth_hz") >= 0.0);
    }

    #[test]
    fn fit_recovers_sampled_linewidths() {
        for linewidth in [9.6e6, 1e6] {
            let params = TemporalParams {
                linewidth,
                window_half_width: 120e-9 * 9.6e6 / linewidth,
                bin_width: 0.5e-9 * 9.6e6 / linewidth,
                ..TemporalParams::reference()
            };
            for seed in 0..5 {
                let hist = sample_coincidences(&params, 100_000, seed).unwrap();
                let fit = fit_linewidth(&hist).unwrap();
                let rel = fit.value("linewidth_hz") / linewidth - 1.0;
                assert!(rel.abs() < 0.03, "{linewidth} seed {seed}: {rel}");
            }
        }
    }

    #[test]
    fn degenerate_histogram_is_rejected() {
        let mut counts = vec![0u64; 20];
        counts[10] = 100;
        let centers: Vec<f64> = (0..20).map(|i| i as f64 * 1e-9).collect();
        let hist = Histogram::from_centers(&centers, counts).unwrap();
        assert!(matches!(fit_linewidth(&hist), Err(Error::Domain { .. })));
    }

    #[test]
    fn coherence_length_examples() {
        let l = coherence_length(9.6e6, 780e-9).unwrap();
        assert!((l - 31.23).abs() < 0.01);
        assert!((l - 32.0).abs() < 3.0);
        assert!((coherence_length(SPEED_OF_LIGHT, 780e-9).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(l, coherence_length(9.6e6, 1550e-9).unwrap());
        assert!(coherence_length(0.0, 780e-9).is_err());
    }

    #[test]
    fn visibility_examples() {
        assert_eq!(visibility_vs_delay(0.0, 0.9, 31.2).unwrap(), 0.9);
        assert!((visibility_vs_delay(31.2, 0.9, 31.2).unwrap() - 0.9 / std::f64::consts::E).abs() < 1e-15);
        assert!(visibility_vs_delay(1.0, 0.9, 0.0).is_err());
    }

    #[test]
    fn coherence_fit_on_noisy_samples() {
        let delays: Vec<f64> = (0..25).map(|i| i as f64 * 2.5).collect();
        for seed in 0..10 {
            let points = simulate_visibility_curve(&delays, 0.9, 31.2, 0.02, seed).unwrap();
            let fit = fit_coherence_length(&points).unwrap();
            assert!((fit.value("coherence_length_m") / 31.2 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn merge_adds_counts() {
        let params = TemporalParams::reference();
        let a = sample_coincidences(&params, 1000, 1).unwrap();
        let b = sample_coincidences(&params, 2000, 2).unwrap();
        let m = a.merge(&b).unwrap();
        assert_eq!(m.total_events, 3000);
        assert_eq!(m.in_window(), a.in_window() + b.in_window());
        assert_eq!(m, b.merge(&a).unwrap());
    }
}
