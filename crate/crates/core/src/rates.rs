//! Pair-generation rate far below the oscillation threshold, where it grows linearly
//! with pump power.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{first_issue, Error, ParamIssue, Result};
use crate::numerics::{fit_parameter, substream_rng, FitResult};

pub const REFERENCE_MAX_RATE: f64 = 1780.0;
pub const REFERENCE_MAX_POWER_MW: f64 = 27.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    /// Pair rate per unit pump power k, counts/s/mW.
    pub rate_per_mw: f64,
    /// Oscillation threshold, W.
    #[serde(rename = "threshold_power_w")]
    pub threshold_power: f64,
    #[serde(rename = "linewidth_mhz")]
    pub linewidth: f64,
    /// Fraction of time the source is gated open, multiplies every rate.
    pub duty_factor: f64,
}

impl RateParams {
    pub fn reference() -> Self {
        Self {
            rate_per_mw: REFERENCE_MAX_RATE / REFERENCE_MAX_POWER_MW,
            threshold_power: 1.88,
            linewidth: 9.6,
            duty_factor: 1.0,
        }
    }

    pub fn issues(&self) -> Vec<ParamIssue> {
        let mut issues = Vec::new();
        for (field, value) in [
            ("rate_per_mw", self.rate_per_mw),
            ("threshold_power_w", self.threshold_power),
            ("linewidth_mhz", self.linewidth),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                issues.push(ParamIssue::new(field, "must be positive and finite"));
            }
        }
        if !(self.duty_factor > 0.0 && self.duty_factor <= 1.0) {
            issues.push(ParamIssue::new("duty_factor", "must lie in (0, 1]"));
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        first_issue(self.issues())
    }
}

impl Default for RateParams {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRatePoint {
    #[serde(rename = "power_mw")]
    pub pump_power: f64,
    #[serde(rename = "rate_cps")]
    pub pair_rate: f64,
}

/// `k · P · duty`, in counts/s for a pump power in mW.
///
/// Powers above a tenth of the threshold are accepted with a logged warning, since
/// the linear law no longer holds near threshold.
pub fn pair_rate(params: &RateParams, pump_power: f64) -> Result<f64> {
    if !(pump_power >= 0.0 && pump_power.is_finite()) {
        return Err(Error::domain("pump_power", pump_power, "pump_power >= 0"));
    }
    let limit_mw = 0.1 * params.threshold_power * 1e3;
    if pump_power > limit_mw {
        log::warn!(
            "pump power {pump_power} mW exceeds a tenth of the {} W threshold; the linear rate model may not hold",
            params.threshold_power
        );
    }
    Ok(params.rate_per_mw * pump_power * params.duty_factor)
}

/// Pair rate per MHz of linewidth, counts/s/MHz.
pub fn spectral_brightness(rate: f64, linewidth_mhz: f64) -> Result<f64> {
    if !(linewidth_mhz > 0.0 && linewidth_mhz.is_finite()) {
        return Err(Error::domain("linewidth_mhz", linewidth_mhz, "linewidth_mhz > 0"));
    }
    Ok(rate / linewidth_mhz)
}

/// Least squares through the origin, `k = Σ P·R / Σ P²`, reported as `rate_per_mw`.
///
/// The standard error uses the residual variance with `n − 1` degrees of freedom; a
/// single point determines the line exactly and gets a standard error of zero.
pub fn fit_proportional(points: &[PowerRatePoint]) -> Result<FitResult> {
    if points.is_empty() {
        return Err(Error::domain("points", 0.0, "at least one point is needed"));
    }
    for p in points {
        if !(p.pump_power >= 0.0 && p.pump_power.is_finite()) {
            return Err(Error::domain("pump_power", p.pump_power, "pump_power >= 0"));
        }
        if !(p.pair_rate >= 0.0 && p.pair_rate.is_finite()) {
            return Err(Error::domain("pair_rate", p.pair_rate, "pair_rate >= 0"));
        }
    }
    let spp: f64 = points.iter().map(|p| p.pump_power * p.pump_power).sum();
    if spp == 0.0 {
        return Err(Error::domain("pump_power", 0.0, "not all pump powers may be zero"));
    }
    let spr: f64 = points.iter().map(|p| p.pump_power * p.pair_rate).sum();
    let k = spr / spp;
    let rss: f64 = points.iter().map(|p| (p.pair_rate - k * p.pump_power).powi(2)).sum();
    let variance = if points.len() > 1 {
        rss / (points.len() - 1) as f64 / spp
    } else {
        0.0
    };
    Ok(FitResult {
        parameters: vec![fit_parameter("rate_per_mw", "counts/s/mW", k, variance)],
        residual_norm: rss.sqrt(),
        converged: true,
    })
}

/// Rates `k·P` at the given powers with Gaussian noise of standard deviation
/// `relative_noise` times the rate; point `i` uses substream `(seed, i)`.
pub fn simulate_power_sweep(
    params: &RateParams,
    powers: &[f64],
    relative_noise: f64,
    seed: u64,
) -> Result<Vec<PowerRatePoint>> {
    if !(relative_noise >= 0.0 && relative_noise.is_finite()) {
        return Err(Error::domain("relative_noise", relative_noise, "relative_noise >= 0"));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    powers
        .iter()
        .enumerate()
        .map(|(i, &power)| {
            let clean = pair_rate(params, power)?;
            let noise = unit.sample(&mut substream_rng(seed, i as u64));
            Ok(PowerRatePoint {
                pump_power: power,
                pair_rate: (clean * (1.0 + relative_noise * noise)).max(0.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_rate_examples() {
        let p = RateParams::reference();
        assert_eq!(pair_rate(&p, 0.0).unwrap(), 0.0);
        assert!((pair_rate(&p, 27.0).unwrap() - 1780.0).abs() < 1e-9);
        let r = pair_rate(&p, 13.0).unwrap();
        assert_eq!(pair_rate(&p, 26.0).unwrap(), 2.0 * r);
        assert!(pair_rate(&p, -1.0).is_err());
        // above a tenth of threshold: warning only
        assert!(pair_rate(&p, 500.0).is_ok());
    }

    #[test]
    fn duty_factor_scales_rates() {
        let p = RateParams {
            duty_factor: 0.5,
            ..RateParams::reference()
        };
        assert!((pair_rate(&p, 27.0).unwrap() - 890.0).abs() < 1e-9);
    }

    #[test]
    fn brightness_examples() {
        let b = spectral_brightness(1780.0, 9.6).unwrap();
        assert!((b - 185.4).abs() < 0.05);
        assert_eq!(spectral_brightness(0.0, 3.0).unwrap(), 0.0);
        assert!((b / 27.0 - 6.87).abs() < 0.005);
        assert!(spectral_brightness(1.0, 0.0).is_err());
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let points: Vec<PowerRatePoint> = [5.0, 10.0, 15.0, 20.0, 27.0]
            .iter()
            .map(|&p| PowerRatePoint {
                pump_power: p,
                pair_rate: 65.9 * p,
            })
            .collect();
        let fit = fit_proportional(&points).unwrap();
        assert!((fit.value("rate_per_mw") - 65.9).abs() < 1e-9);
        assert!(fit.std_error("rate_per_mw") < 1e-9);
    }

    #[test]
    fn noisy_fit_within_five_percent() {
        let params = RateParams {
            rate_per_mw: 65.9,
            ..RateParams::reference()
        };
        let powers: Vec<f64> = (1..=10).map(|i| 2.7 * i as f64).collect();
        for seed in 0..20 {
            let points = simulate_power_sweep(&params, &powers, 0.05, seed).unwrap();
            let k = fit_proportional(&points).unwrap().value("rate_per_mw");
            assert!((k / 65.9 - 1.0).abs() < 0.05, "seed {seed}: {k}");
        }
    }

    #[test]
    fn single_point_and_degenerate_inputs() {
        let one = [PowerRatePoint {
            pump_power: 27.0,
            pair_rate: 1780.0,
        }];
        let fit = fit_proportional(&one).unwrap();
        assert!((fit.value("rate_per_mw") - 1780.0 / 27.0).abs() < 1e-12);
        assert_eq!(fit.std_error("rate_per_mw"), 0.0);
        assert!(fit_proportional(&[]).is_err());
        let zeros = [PowerRatePoint {
            pump_power: 0.0,
            pair_rate: 3.0,
        }; 3];
        assert!(matches!(fit_proportional(&zeros), Err(Error::Domain { .. })));
    }
}
