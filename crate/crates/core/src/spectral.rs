//! Cavity mode comb and the mode structure of the two-photon output.
//!
//! In a type-II double-resonant cavity the H and V photons see slightly different
//! free spectral ranges, `Ω_H = Ω + ΔΩ/2` and `Ω_V = Ω - ΔΩ/2`. Energy conservation
//! pairs a photon detuned by `+mΩ_H` with one detuned by `-mΩ_H` (and likewise for V),
//! so apart from the doubly resonant centre mode every emitted pair has at most one
//! photon on a cavity resonance. The relative weight of the `m`-th side-mode family is
//!
//! ```text
//! χ_m / χ_0 = 4 / (1 + (4F²/π²) sin²(π m ΔΩ / Ω))
//! ```
//!
//! and each family splits into four equally weighted sub-terms. External etalons then
//! filter both photons.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{first_issue, Error, ParamIssue, Result};
use crate::{DEFAULT_WAVELENGTH, SPEED_OF_LIGHT};

/// Mean cavity FSR of the reference source, Hz.
pub const REFERENCE_FSR_MEAN: f64 = 1.9e9;
/// FSR difference between H and V as quoted alongside the cavity parameters, Hz.
pub const REFERENCE_QUOTED_FSR_DIFF: f64 = 21e6;
/// Measured cavity finesse.
pub const REFERENCE_FINESSE: f64 = 166.0;
/// Phase-matching bandwidth of the crystal, Hz.
pub const REFERENCE_PHASE_MATCHING_BANDWIDTH: f64 = 175e9;
/// Quoted first side-mode ratio χ₁/χ₀ used to back-solve ΔΩ.
pub const REFERENCE_FIRST_RATIO: f64 = 1.7;

/// `sin²(πx)` with the argument reduced to `[-1/2, 1/2]` first, so the result is
/// periodic in `x` to rounding and accurate for large `x`.
pub(crate) fn sin_sq_pi(x: f64) -> f64 {
    let reduced = x - x.round();
    let s = (PI * reduced).sin();
    s * s
}

/// Number of side-mode families supported by a phase-matching bandwidth.
pub fn side_modes_for_bandwidth(phase_matching_bandwidth: f64, fsr_mean: f64) -> u32 {
    // the tiny slack keeps exact multiples from rounding down a mode
    (phase_matching_bandwidth / (2.0 * fsr_mean) * (1.0 + 1e-12)).floor() as u32
}

/// Named cavity parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// ΔΩ = 21 MHz, as quoted with the cavity parameters.
    #[serde(rename = "paper-quoted")]
    Quoted,
    /// ΔΩ back-solved from χ₁/χ₀ = 1.7, which also reproduces the quoted 0.63, 0.31
    /// and the background sum of 3.41.
    #[serde(rename = "paper-ratios")]
    RatioMatched,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper-quoted" => Ok(Preset::Quoted),
            "paper-ratios" => Ok(Preset::RatioMatched),
            other => Err(format!(
                "unknown preset `{other}` (expected `paper-quoted` or `paper-ratios`)"
            )),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Quoted => "paper-quoted",
            Preset::RatioMatched => "paper-ratios",
        })
    }
}

/// Geometry and resonance parameters of the double-resonant cavity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityParams {
    /// Mean free spectral range Ω, Hz.
    #[serde(rename = "fsr_mean_hz")]
    pub fsr_mean: f64,
    /// FSR difference ΔΩ = Ω_H - Ω_V, Hz.
    #[serde(rename = "fsr_diff_hz")]
    pub fsr_diff: f64,
    pub finesse: f64,
    /// Centre frequency ω₀ of the down-converted photons, Hz.
    #[serde(rename = "center_frequency_hz")]
    pub center_frequency: f64,
    /// Number N of side-mode families kept on each side of the centre mode.
    pub n_side_modes: u32,
    #[serde(rename = "phase_matching_bandwidth_hz")]
    pub phase_matching_bandwidth: f64,
}

impl CavityParams {
    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Quoted => Self::quoted(),
            Preset::RatioMatched => Self::ratio_matched(),
        }
    }

    pub fn quoted() -> Self {
        Self::reference_with_fsr_diff(REFERENCE_QUOTED_FSR_DIFF)
    }

    pub fn ratio_matched() -> Self {
        let fsr_diff = back_solve_fsr_diff(REFERENCE_FIRST_RATIO, 1, REFERENCE_FINESSE, REFERENCE_FSR_MEAN)
            .expect("reference ratio is attainable");
        Self::reference_with_fsr_diff(fsr_diff)
    }

    fn reference_with_fsr_diff(fsr_diff: f64) -> Self {
        Self {
            fsr_mean: REFERENCE_FSR_MEAN,
            fsr_diff,
            finesse: REFERENCE_FINESSE,
            center_frequency: SPEED_OF_LIGHT / DEFAULT_WAVELENGTH,
            n_side_modes: side_modes_for_bandwidth(REFERENCE_PHASE_MATCHING_BANDWIDTH, REFERENCE_FSR_MEAN),
            phase_matching_bandwidth: REFERENCE_PHASE_MATCHING_BANDWIDTH,
        }
    }

    /// Free spectral range seen by the H photon.
    pub fn fsr_h(&self) -> f64 {
        self.fsr_mean + 0.5 * self.fsr_diff
    }

    /// Free spectral range seen by the V photon.
    pub fn fsr_v(&self) -> f64 {
        self.fsr_mean - 0.5 * self.fsr_diff
    }

    /// Cavity resonance linewidth (FWHM), Hz.
    pub fn linewidth(&self) -> f64 {
        self.fsr_mean / self.finesse
    }

    pub fn issues(&self) -> Vec<ParamIssue> {
        let mut issues = Vec::new();
        if !(self.fsr_mean > 0.0 && self.fsr_mean.is_finite()) {
            issues.push(ParamIssue::new("fsr_mean_hz", "must be a positive finite frequency"));
        }
        if !(self.finesse > 1.0 && self.finesse.is_finite()) {
            issues.push(ParamIssue::new("finesse", "must be finite and greater than 1"));
        }
        if !(self.fsr_diff.abs() < self.fsr_mean.abs()) {
            issues.push(ParamIssue::new(
                "fsr_diff_hz",
                "magnitude must be smaller than fsr_mean_hz",
            ));
        }
        if !(self.center_frequency > 0.0 && self.center_frequency.is_finite()) {
            issues.push(ParamIssue::new(
                "center_frequency_hz",
                "must be a positive finite frequency",
            ));
        }
        if !(self.phase_matching_bandwidth > 0.0 && self.phase_matching_bandwidth.is_finite()) {
            issues.push(ParamIssue::new(
                "phase_matching_bandwidth_hz",
                "must be a positive finite frequency",
            ));
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        first_issue(self.issues())
    }
}

impl Default for CavityParams {
    fn default() -> Self {
        Self::ratio_matched()
    }
}

/// A lossless symmetric Fabry-Perot etalon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtalonParams {
    #[serde(rename = "fsr_hz")]
    pub fsr: f64,
    pub finesse: f64,
}

impl EtalonParams {
    pub fn reference() -> Self {
        Self {
            fsr: 13.9e9,
            finesse: 31.0,
        }
    }

    pub fn issues(&self) -> Vec<ParamIssue> {
        let mut issues = Vec::new();
        if !(self.fsr > 0.0 && self.fsr.is_finite()) {
            issues.push(ParamIssue::new("fsr_hz", "must be a positive finite frequency"));
        }
        if !(self.finesse > 0.0 && self.finesse.is_finite()) {
            issues.push(ParamIssue::new("finesse", "must be positive and finite"));
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        first_issue(self.issues())
    }
}

impl Default for EtalonParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// One two-photon frequency term of the joint state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm {
    /// Side-mode family index, 0 for the centre mode.
    #[serde(rename = "mode_index")]
    pub mode: u32,
    /// Detuning of the H photon from ω₀, Hz.
    #[serde(rename = "detuning_h_hz")]
    pub detuning_h: f64,
    /// Detuning of the V photon from ω₀, Hz.
    #[serde(rename = "detuning_v_hz")]
    pub detuning_v: f64,
    pub weight: f64,
}

/// Discrete mode weights of the multimode two-photon state.
///
/// The first term is always the centre mode; side-mode families follow in order of
/// increasing `m`, four sub-terms each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpectrum {
    terms: Vec<ModeTerm>,
}

impl JointSpectrum {
    /// Builds a spectrum from explicit terms. The first term must be the centre mode.
    pub fn from_terms(terms: Vec<ModeTerm>) -> Result<Self> {
        match terms.first() {
            Some(t) if t.mode == 0 => {}
            _ => {
                return Err(Error::Degenerate(
                    "joint spectrum must start with the centre mode (m = 0)".into(),
                ))
            }
        }
        if let Some(bad) = terms.iter().find(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return Err(Error::domain("mode weight", bad.weight, "weights must be >= 0"));
        }
        Ok(Self { terms })
    }

    /// A spectrum holding only the doubly resonant centre mode.
    pub fn single_mode() -> Self {
        Self {
            terms: vec![ModeTerm {
                mode: 0,
                detuning_h: 0.0,
                detuning_v: 0.0,
                weight: 1.0,
            }],
        }
    }

    pub fn terms(&self) -> &[ModeTerm] {
        &self.terms
    }

    /// χ₀.
    pub fn center_weight(&self) -> f64 {
        self.terms[0].weight
    }

    /// Highest side-mode family index present.
    pub fn n_side_modes(&self) -> u32 {
        self.terms.iter().map(|t| t.mode).max().unwrap_or(0)
    }

    /// χₘ for `m = 1..=N`, each summed over its sub-terms.
    pub fn side_weights(&self) -> Vec<f64> {
        let mut weights = vec![0.0; self.n_side_modes() as usize];
        for t in self.terms.iter().filter(|t| t.mode > 0) {
            weights[t.mode as usize - 1] += t.weight;
        }
        weights
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }

    /// Rescales the weights to sum to one.
    pub fn normalized(&self) -> Result<Self> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return Err(Error::Degenerate("all mode weights are zero".into()));
        }
        Ok(Self {
            terms: self
                .terms
                .iter()
                .map(|t| ModeTerm {
                    weight: t.weight / total,
                    ..*t
                })
                .collect(),
        })
    }
}

/// χₘ/χ₀ for the `m`-th side-mode family.
pub fn mode_weight_ratio(params: &CavityParams, m: u32) -> Result<f64> {
    params.validate()?;
    if m == 0 || m > params.n_side_modes {
        return Err(Error::domain(
            "side-mode index m",
            f64::from(m),
            "1 <= m <= n_side_modes",
        ));
    }
    Ok(ratio_formula(params.finesse, params.fsr_diff, params.fsr_mean, m))
}

fn ratio_formula(finesse: f64, fsr_diff: f64, fsr_mean: f64, m: u32) -> f64 {
    let contrast = 4.0 * finesse * finesse / (PI * PI);
    4.0 / (1.0 + contrast * sin_sq_pi(f64::from(m) * fsr_diff / fsr_mean))
}

/// Smallest ΔΩ ≥ 0 for which the `m`-th side-mode ratio equals `target_ratio`.
pub fn back_solve_fsr_diff(target_ratio: f64, m: u32, finesse: f64, fsr_mean: f64) -> Result<f64> {
    if !(target_ratio > 0.0 && target_ratio <= 4.0) {
        return Err(Error::domain("target ratio", target_ratio, "0 < ratio <= 4"));
    }
    if m == 0 {
        return Err(Error::domain("side-mode index m", 0.0, "m >= 1"));
    }
    if !(finesse > 1.0) {
        return Err(Error::domain("finesse", finesse, "finesse > 1"));
    }
    if !(fsr_mean > 0.0) {
        return Err(Error::domain("fsr_mean", fsr_mean, "fsr_mean > 0"));
    }
    let sin_sq = (4.0 / target_ratio - 1.0) * PI * PI / (4.0 * finesse * finesse);
    if sin_sq > 1.0 {
        return Err(Error::domain(
            "target ratio",
            target_ratio,
            "ratio must be at least 4 / (1 + 4F²/π²)",
        ));
    }
    Ok(sin_sq.sqrt().asin() * fsr_mean / (f64::from(m) * PI))
}

/// Σ_{m=1..N} χₘ/χ₀.
pub fn background_fraction(params: &CavityParams) -> Result<f64> {
    params.validate()?;
    Ok((1..=params.n_side_modes)
        .map(|m| ratio_formula(params.finesse, params.fsr_diff, params.fsr_mean, m))
        .sum())
}

/// Builds the normalized multimode two-photon spectrum of the cavity.
pub fn build_joint_spectrum(params: &CavityParams) -> Result<JointSpectrum> {
    params.validate()?;
    let ratios: Vec<f64> = (1..=params.n_side_modes)
        .map(|m| ratio_formula(params.finesse, params.fsr_diff, params.fsr_mean, m))
        .collect();
    let center = 1.0 / (1.0 + ratios.iter().sum::<f64>());
    let (fsr_h, fsr_v) = (params.fsr_h(), params.fsr_v());

    let mut terms = Vec::with_capacity(1 + 4 * ratios.len());
    terms.push(ModeTerm {
        mode: 0,
        detuning_h: 0.0,
        detuning_v: 0.0,
        weight: center,
    });
    for (i, ratio) in ratios.iter().enumerate() {
        let m = i as u32 + 1;
        let quarter = 0.25 * ratio * center;
        for fsr in [fsr_h, fsr_v] {
            let offset = f64::from(m) * fsr;
            for sign in [1.0, -1.0] {
                terms.push(ModeTerm {
                    mode: m,
                    detuning_h: sign * offset,
                    detuning_v: -sign * offset,
                    weight: quarter,
                });
            }
        }
    }
    Ok(JointSpectrum { terms })
}

/// Airy transmission of an etalon at a detuning from one of its resonances.
pub fn etalon_transmission(etalon: &EtalonParams, detuning: f64) -> f64 {
    let coefficient = (2.0 * etalon.finesse / PI).powi(2);
    1.0 / (1.0 + coefficient * sin_sq_pi(detuning / etalon.fsr))
}

/// Passes each photon of every term through its own copy of `etalon`.
///
/// The result is not renormalized.
pub fn filtered_spectrum(joint: &JointSpectrum, etalon: &EtalonParams) -> JointSpectrum {
    JointSpectrum {
        terms: joint
            .terms
            .iter()
            .map(|t| ModeTerm {
                weight: t.weight
                    * etalon_transmission(etalon, t.detuning_h)
                    * etalon_transmission(etalon, t.detuning_v),
                ..*t
            })
            .collect(),
    }
}

/// Fraction of the pair emission in the doubly resonant centre mode.
pub fn single_mode_purity(joint: &JointSpectrum) -> Result<f64> {
    let total = joint.total_weight();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all mode weights are zero".into()));
    }
    Ok(joint.center_weight() / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cavity(fsr_diff: f64) -> CavityParams {
        CavityParams {
            fsr_diff,
            ..CavityParams::quoted()
        }
    }

    #[test]
    fn side_modes_from_bandwidth() {
        assert_eq!(side_modes_for_bandwidth(175e9, 1.9e9), 46);
        assert_eq!(CavityParams::quoted().n_side_modes, 46);
    }

    #[test]
    fn equal_cavity_lengths_give_ratio_four() {
        assert_eq!(mode_weight_ratio(&cavity(0.0), 5).unwrap(), 4.0);
    }

    #[test]
    fn quoted_fsr_diff_ratio() {
        let r = mode_weight_ratio(&cavity(21e6), 1).unwrap();
        assert!((r - 0.2767).abs() < 1e-3, "{r}");
    }

    #[test]
    fn back_solved_ratios_match_published_values() {
        let p = CavityParams::ratio_matched();
        assert!((p.fsr_diff - 6.656e6).abs() < 5e3, "{}", p.fsr_diff);
        assert_relative_eq!(mode_weight_ratio(&p, 1).unwrap(), 1.7, max_relative = 1e-9);
        let r2 = mode_weight_ratio(&p, 2).unwrap();
        let r3 = mode_weight_ratio(&p, 3).unwrap();
        assert!((r2 / 0.624 - 1.0).abs() < 0.03, "{r2}");
        assert!((r3 / 0.304 - 1.0).abs() < 0.03, "{r3}");
    }

    #[test]
    fn ratio_index_out_of_range() {
        assert!(mode_weight_ratio(&cavity(0.0), 0).is_err());
        assert!(mode_weight_ratio(&cavity(0.0), 47).is_err());
    }

    #[test]
    fn back_solve_examples() {
        assert_eq!(back_solve_fsr_diff(4.0, 1, 166.0, 1.9e9).unwrap(), 0.0);
        let d1 = back_solve_fsr_diff(1.7, 1, 166.0, 1.9e9).unwrap();
        assert!((d1 - 6.66e6).abs() < 0.05e6, "{d1}");
        let d2 = back_solve_fsr_diff(0.63, 2, 166.0, 1.9e9).unwrap();
        assert!((d2 / d1 - 1.0).abs() < 0.01, "{d2} vs {d1}");
        assert!(back_solve_fsr_diff(4.5, 1, 166.0, 1.9e9).is_err());
        assert!(back_solve_fsr_diff(0.0, 1, 166.0, 1.9e9).is_err());
        assert!(back_solve_fsr_diff(1e-6, 1, 166.0, 1.9e9).is_err());
    }

    #[test]
    fn back_solve_round_trips() {
        for &(r, m) in &[(1.7, 1), (0.5, 3), (3.9, 2), (0.01, 7)] {
            let d = back_solve_fsr_diff(r, m, 166.0, 1.9e9).unwrap();
            let got = mode_weight_ratio(&cavity(d), m).unwrap();
            assert_relative_eq!(got, r, max_relative = 1e-9);
        }
    }

    #[test]
    fn background_fraction_examples() {
        assert_eq!(background_fraction(&cavity(0.0)).unwrap(), 184.0);
        let b = background_fraction(&CavityParams::ratio_matched()).unwrap();
        assert!((b - 3.41).abs() < 0.10, "{b}");
        let sharp = CavityParams {
            finesse: 1e6,
            ..CavityParams::ratio_matched()
        };
        assert!(background_fraction(&sharp).unwrap() < 0.01);
    }

    #[test]
    fn etalon_examples() {
        let e = EtalonParams::reference();
        assert_eq!(etalon_transmission(&e, 0.0), 1.0);
        let half = etalon_transmission(&e, e.fsr / 2.0);
        assert!((half - 2.56e-3).abs() < 1e-4, "{half}");
        let side = etalon_transmission(&e, 1.9e9);
        assert!((side - 0.0146).abs() < 5e-4, "{side}");
    }

    #[test]
    fn joint_spectrum_structure() {
        let p = CavityParams::ratio_matched();
        let j = build_joint_spectrum(&p).unwrap();
        assert_eq!(j.terms().len(), 1 + 4 * 46);
        assert!((j.total_weight() - 1.0).abs() < 1e-12);
        let side = j.side_weights();
        assert_relative_eq!(side[0] / j.center_weight(), 1.7, max_relative = 1e-9);
        for t in j.terms().iter().filter(|t| t.mode == 1) {
            assert_relative_eq!(t.weight, side[0] / 4.0, max_relative = 1e-12);
            assert_eq!(t.detuning_h, -t.detuning_v);
        }
    }

    #[test]
    fn unfiltered_purity() {
        let j = build_joint_spectrum(&CavityParams::ratio_matched()).unwrap();
        let b = background_fraction(&CavityParams::ratio_matched()).unwrap();
        assert_relative_eq!(single_mode_purity(&j).unwrap(), 1.0 / (1.0 + b), max_relative = 1e-12);
        assert!((single_mode_purity(&j).unwrap() - 0.2268).abs() < 0.006);
        let n0 = CavityParams {
            n_side_modes: 0,
            ..CavityParams::ratio_matched()
        };
        assert_eq!(single_mode_purity(&build_joint_spectrum(&n0).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn filtering_suppresses_first_side_mode() {
        let p = CavityParams::ratio_matched();
        let e = EtalonParams::reference();
        let j = build_joint_spectrum(&p).unwrap();
        let f = filtered_spectrum(&j, &e);
        assert_eq!(f.center_weight(), j.center_weight());
        let t_h = etalon_transmission(&e, p.fsr_h());
        let suppression = f.terms()[1].weight / j.terms()[1].weight;
        assert_relative_eq!(suppression, t_h * t_h, max_relative = 1e-12);
        assert!((suppression - 2.1e-4).abs() < 0.2e-4, "{suppression}");
        assert!(single_mode_purity(&f).unwrap() >= 0.99);
    }

    #[test]
    fn negligible_etalon_is_identity() {
        let j = build_joint_spectrum(&CavityParams::ratio_matched()).unwrap();
        let e = EtalonParams {
            fsr: 13.9e9,
            finesse: 1e-12,
        };
        let f = filtered_spectrum(&j, &e);
        for (a, b) in f.terms().iter().zip(j.terms()) {
            assert_relative_eq!(a.weight, b.weight, max_relative = 1e-15);
        }
    }

    #[test]
    fn zero_weights_rejected() {
        let empty = JointSpectrum::from_terms(vec![ModeTerm {
            mode: 0,
            detuning_h: 0.0,
            detuning_v: 0.0,
            weight: 0.0,
        }])
        .unwrap();
        assert!(single_mode_purity(&empty).is_err());
        assert!(empty.normalized().is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = CavityParams {
            finesse: 0.5,
            ..CavityParams::ratio_matched()
        };
        assert!(matches!(
            background_fraction(&bad),
            Err(Error::InvalidParameter(ParamIssue { ref field, .. })) if field == "finesse"
        ));
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("paper-quoted".parse::<Preset>().unwrap(), Preset::Quoted);
        assert_eq!(Preset::RatioMatched.to_string(), "paper-ratios");
        assert!("other".parse::<Preset>().is_err());
    }
}
