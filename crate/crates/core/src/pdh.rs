//! Pound-Drever-Hall model of the cavity lock: reflection response of the two-mirror
//! cavity and the demodulated error signal.
//!
//! Sign convention: with `ε(δ) = Im[F(δ)F*(δ+Ω) − F*(δ)F(δ−Ω)]` the slope at the lock
//! point is negative for an undercoupled or impedance-matched cavity.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{first_issue, ParamIssue, Result};
use crate::spectral::CavityParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    H,
    V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdhParams {
    pub cavity: CavityParams,
    /// Phase-modulation frequency Ω_mod, Hz.
    pub modulation_frequency: f64,
    /// Power reflectivities of the input and output mirrors.
    pub mirror_reflectivities: [f64; 2],
    /// Fractional power lost per round trip inside the cavity.
    pub round_trip_loss: f64,
    /// Detuning of the V resonance from the H resonance, Hz.
    pub v_resonance_offset: f64,
}

impl PdhParams {
    pub fn reference(cavity: CavityParams) -> Self {
        Self {
            cavity,
            modulation_frequency: 70e6,
            mirror_reflectivities: [0.99, 0.97],
            round_trip_loss: 0.0,
            v_resonance_offset: 0.0,
        }
    }

    /// Issues with the lock parameters, cavity excluded.
    pub fn lock_issues(&self) -> Vec<ParamIssue> {
        let mut issues = Vec::new();
        if !(self.modulation_frequency > 0.0 && self.modulation_frequency.is_finite()) {
            issues.push(ParamIssue::new(
                "modulation_frequency_hz",
                "must be a positive finite frequency",
            ));
        }
        if !self.mirror_reflectivities.iter().all(|r| *r > 0.0 && *r < 1.0) {
            issues.push(ParamIssue::new(
                "mirror_reflectivities",
                "each reflectivity must lie in (0, 1)",
            ));
        }
        if !(self.round_trip_loss >= 0.0 && self.round_trip_loss < 1.0) {
            issues.push(ParamIssue::new("round_trip_loss", "must lie in [0, 1)"));
        }
        if !self.v_resonance_offset.is_finite() {
            issues.push(ParamIssue::new("v_resonance_offset_hz", "must be finite"));
        }
        issues
    }

    pub fn issues(&self) -> Vec<ParamIssue> {
        let mut issues: Vec<ParamIssue> = self.cavity.issues().into_iter().map(|i| i.under("cavity")).collect();
        issues.extend(self.lock_issues());
        issues
    }

    pub fn validate(&self) -> Result<()> {
        first_issue(self.issues())
    }

    /// Amplitude reflectivities `r₁` and `r₂`, the round-trip loss folded into `r₂`.
    fn amplitudes(&self) -> (f64, f64) {
        let [r1, r2] = self.mirror_reflectivities;
        (r1.sqrt(), (r2 * (1.0 - self.round_trip_loss)).sqrt())
    }

    fn fsr(&self, polarization: Polarization) -> f64 {
        match polarization {
            Polarization::H => self.cavity.fsr_h(),
            Polarization::V => self.cavity.fsr_v(),
        }
    }

    /// Finesse implied by the mirrors and loss, `π√(r₁r₂) / (1 − r₁r₂)`.
    pub fn mirror_finesse(&self) -> f64 {
        let (r1, r2) = self.amplitudes();
        let g = r1 * r2;
        std::f64::consts::PI * g.sqrt() / (1.0 - g)
    }
}

impl Default for PdhParams {
    fn default() -> Self {
        Self::reference(CavityParams::default())
    }
}

/// Reflected field of the H resonance at laser detuning `detuning`.
pub fn cavity_reflection(params: &PdhParams, detuning: f64) -> Complex64 {
    polarized_reflection(params, Polarization::H, detuning)
}

/// `F(δ) = (r₁ − r₂e^{iφ}) / (1 − r₁r₂e^{iφ})` with `φ = 2πδ/FSR` for the given
/// polarization; the V resonance is shifted by `v_resonance_offset`.
pub fn polarized_reflection(params: &PdhParams, polarization: Polarization, detuning: f64) -> Complex64 {
    let (r1, r2) = params.amplitudes();
    let shifted = match polarization {
        Polarization::H => detuning,
        Polarization::V => detuning - params.v_resonance_offset,
    };
    let x = shifted / params.fsr(polarization);
    let phase = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (x - x.round()));
    (r1 - r2 * phase) / (1.0 - r1 * r2 * phase)
}

/// Demodulated error signal in arbitrary units.
pub fn pdh_error_signal(params: &PdhParams, detuning: f64) -> f64 {
    let omega = params.modulation_frequency;
    let f0 = cavity_reflection(params, detuning);
    let up = cavity_reflection(params, detuning + omega);
    let down = cavity_reflection(params, detuning - omega);
    (f0 * up.conj() - f0.conj() * down).im
}

/// Samples `(detuning, ε)` on `n` evenly spaced points over `[-span, span]`.
pub fn error_signal_sweep(params: &PdhParams, span: f64, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let d = -span + 2.0 * span * i as f64 / (n - 1) as f64;
            (d, pdh_error_signal(params, d))
        })
        .collect()
}

/// Sign changes of the error signal on `[lo, hi]`, located by scanning with `step` and
/// bisecting each bracket.
pub fn error_signal_zeros(params: &PdhParams, lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let e = |d| pdh_error_signal(params, d);
    let mut zeros = Vec::new();
    let n = ((hi - lo) / step).ceil() as usize;
    let mut a = lo;
    let mut fa = e(a);
    for i in 1..=n {
        let b = (lo + step * i as f64).min(hi);
        let fb = e(b);
        if fa == 0.0 {
            zeros.push(a);
        } else if fa * fb < 0.0 {
            let (mut x0, mut x1, mut f0) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (x0 + x1);
                if mid <= x0 || mid >= x1 {
                    break;
                }
                let fm = e(mid);
                if fm == 0.0 {
                    x0 = mid;
                    x1 = mid;
                    break;
                }
                if (fm < 0.0) == (f0 < 0.0) {
                    x0 = mid;
                    f0 = fm;
                } else {
                    x1 = mid;
                }
            }
            zeros.push(0.5 * (x0 + x1));
        }
        a = b;
        fa = fb;
    }
    zeros
}

/// Detuning interval around the lock point where the error signal is monotonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureRange {
    #[serde(rename = "lower_hz")]
    pub lower: f64,
    #[serde(rename = "upper_hz")]
    pub upper: f64,
}

impl CaptureRange {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Distance from 0 along `direction` (±1) to the first extremum of the error signal.
fn first_extremum(params: &PdhParams, direction: f64) -> f64 {
    let e = |d: f64| pdh_error_signal(params, direction * d);
    let step = params.cavity.linewidth() / 2000.0;
    let limit = params.modulation_frequency.min(0.5 * params.cavity.fsr_mean);
    let slope_sign = (e(step) - e(0.0)).signum();
    let mut x = step;
    let mut prev = e(x);
    while x < limit {
        let next = e(x + step);
        if (next - prev).signum() != slope_sign {
            // extremum within [x - step, x + step]; golden-section refine
            let (mut a, mut b) = (x - step, x + step);
            let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
            let value = |d: f64| slope_sign * e(d);
            for _ in 0..100 {
                let c = b - inv_phi * (b - a);
                let d = a + inv_phi * (b - a);
                if value(c) > value(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            return 0.5 * (a + b);
        }
        x += step;
        prev = next;
    }
    limit
}

/// Linear capture range bounded by the extrema of the error signal on either side of
/// the lock point.
pub fn lock_capture_range(params: &PdhParams) -> CaptureRange {
    CaptureRange {
        lower: -first_extremum(params, -1.0),
        upper: first_extremum(params, 1.0),
    }
}

/// Finesse from the full width at half maximum of the resonant dip `1 − |F|²`.
pub fn reflection_finesse(params: &PdhParams) -> f64 {
    let fsr = params.cavity.fsr_h();
    let dip = |d: f64| 1.0 - cavity_reflection(params, d).norm_sqr();
    let half = 0.5 * dip(0.0);
    let (mut a, mut b) = (0.0, 0.5 * fsr);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if dip(mid) > half {
            a = mid;
        } else {
            b = mid;
        }
    }
    fsr / (a + b)
}

/// Airy finesse `π / (2 asin(1/√K))`, `K = 4g/(1−g)²`, for comparison with the
/// small-loss formula.
pub fn exact_mirror_finesse(params: &PdhParams) -> f64 {
    let (r1, r2) = params.amplitudes();
    let g = r1 * r2;
    let k = 4.0 * g / (1.0 - g).powi(2);
    std::f64::consts::PI / (2.0 * (1.0 / k.sqrt()).asin())
}
