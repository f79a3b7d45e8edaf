//! Polarization correlations, the CHSH combination, visibility and fidelity.
//!
//! A linear analyzer at angle θ measures the Pauli observable `cos 2θ Z + sin 2θ X`
//! (Z = H/V, X = D/A), so the correlation coefficient between two analyzers is
//! `E(a, b) = u(a)ᵀ M u(b)` with `u(θ) = (sin 2θ, cos 2θ)` and `M` the X-Z block of
//! the two-photon correlation tensor. The optimizer works on that block; the
//! reported values always go through the coincidence probabilities.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DVector, Matrix2, Matrix3, Vector3, Vector4};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bfgs_minimize, poisson, substream_rng, MinimizeOptions};
use crate::polarization::{coincidence_probability, TwoPhotonPolarizationState, C64};

/// Local CHSH bound.
pub const CLASSICAL_BOUND: f64 = 2.0;

/// Analyzer angles of the two photons, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshAngles {
    pub phi_a: f64,
    pub phi_a_prime: f64,
    pub phi_b: f64,
    pub phi_b_prime: f64,
}

impl ChshAngles {
    /// The textbook settings for |φ±⟩: 0, 45°, 22.5°, 67.5°.
    pub fn standard() -> Self {
        Self {
            phi_a: 0.0,
            phi_a_prime: PI / 4.0,
            phi_b: PI / 8.0,
            phi_b_prime: 3.0 * PI / 8.0,
        }
    }

    pub fn from_degrees(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Self {
        Self {
            phi_a: a.to_radians(),
            phi_a_prime: a_prime.to_radians(),
            phi_b: b.to_radians(),
            phi_b_prime: b_prime.to_radians(),
        }
    }

    pub fn to_degrees(&self) -> [f64; 4] {
        [
            self.phi_a.to_degrees(),
            self.phi_a_prime.to_degrees(),
            self.phi_b.to_degrees(),
            self.phi_b_prime.to_degrees(),
        ]
    }

    fn as_array(&self) -> [f64; 4] {
        [self.phi_a, self.phi_a_prime, self.phi_b, self.phi_b_prime]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            phi_a: a[0],
            phi_a_prime: a[1],
            phi_b: a[2],
            phi_b_prime: a[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub s_value: f64,
    pub std_dev: Option<f64>,
    pub angles: ChshAngles,
}

/// `E(a,b) = P(a,b) + P(a⊥,b⊥) − P(a,b⊥) − P(a⊥,b)`.
pub fn correlation_coefficient(state: &TwoPhotonPolarizationState, angle_a: f64, angle_b: f64) -> f64 {
    let (a_perp, b_perp) = (angle_a + FRAC_PI_2, angle_b + FRAC_PI_2);
    coincidence_probability(state, angle_a, angle_b) + coincidence_probability(state, a_perp, b_perp)
        - coincidence_probability(state, angle_a, b_perp)
        - coincidence_probability(state, a_perp, angle_b)
}

fn chsh_combination(e: impl Fn(f64, f64) -> f64, angles: &ChshAngles) -> f64 {
    e(angles.phi_a, angles.phi_b) - e(angles.phi_a, angles.phi_b_prime)
        + e(angles.phi_a_prime, angles.phi_b)
        + e(angles.phi_a_prime, angles.phi_b_prime)
}

/// `S = |E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)|`.
pub fn chsh_s(state: &TwoPhotonPolarizationState, angles: &ChshAngles) -> ChshResult {
    let s = chsh_combination(|a, b| correlation_coefficient(state, a, b), angles);
    ChshResult {
        s_value: s.abs(),
        std_dev: None,
        angles: *angles,
    }
}

/// Pauli matrices X, Y, Z.
pub(crate) fn paulis() -> [Matrix2<C64>; 3] {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        Matrix2::new(z, o, o, z),
        Matrix2::new(z, -i, i, z),
        Matrix2::new(o, z, z, -o),
    ]
}

/// `T_ij = Tr[ρ σ_i ⊗ σ_j]` over (X, Y, Z).
pub fn correlation_tensor(state: &TwoPhotonPolarizationState) -> Matrix3<f64> {
    let p = paulis();
    Matrix3::from_fn(|i, j| state.expectation(&p[i].kronecker(&p[j])).re)
}

/// Correlation model restricted to linear analyzers.
struct LinearModel {
    /// X-Z block, ordered (X, Z).
    block: Matrix2<f64>,
}

impl LinearModel {
    fn new(state: &TwoPhotonPolarizationState) -> Self {
        let t = correlation_tensor(state);
        Self {
            block: Matrix2::new(t[(0, 0)], t[(0, 2)], t[(2, 0)], t[(2, 2)]),
        }
    }

    fn direction(theta: f64) -> nalgebra::Vector2<f64> {
        let (s, c) = (2.0 * theta).sin_cos();
        nalgebra::Vector2::new(s, c)
    }

    fn direction_derivative(theta: f64) -> nalgebra::Vector2<f64> {
        let (s, c) = (2.0 * theta).sin_cos();
        nalgebra::Vector2::new(2.0 * c, -2.0 * s)
    }

    fn e(&self, a: f64, b: f64) -> f64 {
        Self::direction(a).dot(&(self.block * Self::direction(b)))
    }

    /// Signed CHSH combination and its gradient in the four angles.
    fn combination_with_gradient(&self, x: &[f64; 4]) -> (f64, [f64; 4]) {
        let [a, ap, b, bp] = *x;
        let (ua, uap, ub, ubp) = (
            Self::direction(a),
            Self::direction(ap),
            Self::direction(b),
            Self::direction(bp),
        );
        let (da, dap, db, dbp) = (
            Self::direction_derivative(a),
            Self::direction_derivative(ap),
            Self::direction_derivative(b),
            Self::direction_derivative(bp),
        );
        let m = &self.block;
        let s = ua.dot(&(m * ub)) - ua.dot(&(m * ubp)) + uap.dot(&(m * ub)) + uap.dot(&(m * ubp));
        let grad = [
            da.dot(&(m * (ub - ubp))),
            dap.dot(&(m * (ub + ubp))),
            (ua + uap).dot(&(m * db)),
            (uap - ua).dot(&(m * dbp)),
        ];
        (s, grad)
    }
}

/// Coarse-grid resolution of the angle search, radians (2°).
pub const CHSH_GRID_STEP: f64 = PI / 90.0;

/// Analyzer angles maximizing S, from a 2° grid over `[0, π)⁴` followed by local
/// quasi-Newton refinement.
///
/// The grid maximum is located exactly. For fixed `(a, a′)` the combination splits
/// into `f(b) + h(b′)`, so each `(a, a′)` pair only needs the extremes of `f` and
/// `h`. Ties resolve to the lexicographically smallest grid index, which keeps the
/// parallel reduction deterministic.
pub fn optimize_chsh_angles(state: &TwoPhotonPolarizationState) -> ChshAngles {
    optimize_block(&LinearModel::new(state))
}

fn optimize_block(model: &LinearModel) -> ChshAngles {
    let n = (PI / CHSH_GRID_STEP).round() as usize;
    let grid: Vec<f64> = (0..n).map(|i| i as f64 * CHSH_GRID_STEP).collect();
    let table: Vec<Vec<f64>> = grid
        .iter()
        .map(|&a| grid.iter().map(|&b| model.e(a, b)).collect())
        .collect();

    // (value, sign, [ia, ia', ib, ib'])
    type Cell = (f64, f64, [usize; 4]);
    let better = |x: Cell, y: Cell| -> Cell {
        if y.0 > x.0 || (y.0 == x.0 && y.2 < x.2) {
            y
        } else {
            x
        }
    };
    let worst: Cell = (f64::NEG_INFINITY, 1.0, [usize::MAX; 4]);
    let best = (0..n)
        .into_par_iter()
        .map(|ia| {
            let mut local = worst;
            for iap in 0..n {
                let (mut f_max, mut f_min) = ((f64::MIN, 0), (f64::MAX, 0));
                let (mut h_max, mut h_min) = ((f64::MIN, 0), (f64::MAX, 0));
                for (ib, (&ta, &tap)) in table[ia].iter().zip(&table[iap]).enumerate() {
                    let f = ta + tap;
                    let h = tap - ta;
                    if f > f_max.0 {
                        f_max = (f, ib);
                    }
                    if f < f_min.0 {
                        f_min = (f, ib);
                    }
                    if h > h_max.0 {
                        h_max = (h, ib);
                    }
                    if h < h_min.0 {
                        h_min = (h, ib);
                    }
                }
                let positive: Cell = (f_max.0 + h_max.0, 1.0, [ia, iap, f_max.1, h_max.1]);
                let negative: Cell = (-(f_min.0 + h_min.0), -1.0, [ia, iap, f_min.1, h_min.1]);
                local = better(local, better(positive, negative));
            }
            local
        })
        .reduce(|| worst, better);

    let (_, sign, idx) = best;
    let start = idx.map(|i| grid[i]);
    let refined = bfgs_minimize(
        |x| {
            let (s, g) = model.combination_with_gradient(&[x[0], x[1], x[2], x[3]]);
            (-sign * s, DVector::from_iterator(4, g.iter().map(|v| -sign * v)))
        },
        DVector::from_row_slice(&start),
        &MinimizeOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-12,
            step_tolerance: 1e-14,
        },
    );
    let refined_angles = [refined.x[0], refined.x[1], refined.x[2], refined.x[3]];
    let chosen = if -refined.value >= sign * model.combination_with_gradient(&start).0 {
        refined_angles
    } else {
        start
    };
    ChshAngles::from_array(chosen.map(|a| a.rem_euclid(PI)))
}

/// General projective analyzer: a unit Bloch vector in (X, Y, Z) coordinates,
/// reachable with a wave-plate pair in front of a polarizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerDirection {
    /// Angle from the Z (H/V) axis, radians.
    pub polar: f64,
    /// Angle in the X-Y plane from X, radians.
    pub azimuth: f64,
}

impl AnalyzerDirection {
    pub fn bloch_vector(&self) -> Vector3<f64> {
        let (sp, cp) = self.polar.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(sp * ca, sp * sa, cp)
    }

    /// The linear analyzer at `angle`.
    pub fn linear(angle: f64) -> Self {
        Self {
            polar: 2.0 * angle,
            azimuth: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: AnalyzerDirection,
    pub a_prime: AnalyzerDirection,
    pub b: AnalyzerDirection,
    pub b_prime: AnalyzerDirection,
}

/// S for general analyzer directions.
pub fn chsh_s_general(state: &TwoPhotonPolarizationState, settings: &ChshSettings) -> f64 {
    let t = correlation_tensor(state);
    let e = |x: &AnalyzerDirection, y: &AnalyzerDirection| x.bloch_vector().dot(&(t * y.bloch_vector()));
    (e(&settings.a, &settings.b) - e(&settings.a, &settings.b_prime)
        + e(&settings.a_prime, &settings.b)
        + e(&settings.a_prime, &settings.b_prime))
    .abs()
}

impl AnalyzerDirection {
    fn from_bloch(v: &Vector3<f64>) -> Self {
        let n = v.normalize();
        Self {
            polar: n.z.clamp(-1.0, 1.0).acos(),
            azimuth: n.y.atan2(n.x),
        }
    }
}

/// Negated signed CHSH combination over four unnormalized 3-vectors packed in `x`,
/// with its gradient. Each vector is normalized inside, so the parameterization has
/// no coordinate singularities.
fn general_objective(t: &Matrix3<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let raw = |k: usize| Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
    let (va, vap, vb, vbp) = (raw(0), raw(1), raw(2), raw(3));
    let (a, ap, b, bp) = (va.normalize(), vap.normalize(), vb.normalize(), vbp.normalize());
    let s = a.dot(&(t * (b - bp))) + ap.dot(&(t * (b + bp)));
    // ∂S/∂n for each unit vector, then projected through the normalization
    let partials = [
        t * (b - bp),
        t * (b + bp),
        t.transpose() * (a + ap),
        t.transpose() * (ap - a),
    ];
    let mut grad = DVector::zeros(12);
    for (k, (v, dn)) in [va, vap, vb, vbp].iter().zip(partials.iter()).enumerate() {
        let norm = v.norm();
        let n = v / norm;
        let g = (dn - n * n.dot(dn)) / norm;
        grad.rows_mut(3 * k, 3).copy_from(&g);
    }
    (-s, -grad)
}

/// Analyzer directions maximizing S over all projective measurements.
///
/// Each of the three coordinate planes of the Bloch sphere gets the exact grid
/// search of [`optimize_chsh_angles`]; every plane optimum then seeds a
/// quasi-Newton refinement over all directions and the best result is kept.
pub fn optimize_chsh_settings(state: &TwoPhotonPolarizationState) -> ChshSettings {
    let t = correlation_tensor(state);
    let mut best: Option<(f64, ChshSettings)> = None;
    // (p, q): the linear angle θ maps to sin 2θ e_p + cos 2θ e_q
    for (p, q) in [(0usize, 2usize), (0, 1), (1, 2)] {
        let model = LinearModel {
            block: Matrix2::new(t[(p, p)], t[(p, q)], t[(q, p)], t[(q, q)]),
        };
        let angles = optimize_block(&model);
        let embed = |theta: f64| {
            let mut v = Vector3::zeros();
            v[p] = (2.0 * theta).sin();
            v[q] = (2.0 * theta).cos();
            v
        };
        let mut x0 = DVector::zeros(12);
        for (k, theta) in angles.as_array().into_iter().enumerate() {
            x0.rows_mut(3 * k, 3).copy_from(&embed(theta));
        }
        let sign = chsh_combination(|x, y| model.e(x, y), &angles).signum();
        let t_signed = t * sign;
        let m = bfgs_minimize(
            |x| general_objective(&t_signed, x),
            x0,
            &MinimizeOptions {
                max_iterations: 500,
                gradient_tolerance: 1e-12,
                step_tolerance: 1e-14,
            },
        );
        let dir = |k: usize| AnalyzerDirection::from_bloch(&Vector3::new(m.x[3 * k], m.x[3 * k + 1], m.x[3 * k + 2]));
        let settings = ChshSettings {
            a: dir(0),
            a_prime: dir(1),
            b: dir(2),
            b_prime: dir(3),
        };
        let value = chsh_s_general(state, &settings);
        if best.is_none_or(|(v, _)| value > v) {
            best = Some((value, settings));
        }
    }
    best.expect("three planes searched").1
}

/// Visibility of the polarization correlation fringe.
///
/// The first analyzer is held at `fixed_angle` while the second sweeps
/// `[basis_offset, basis_offset + π)`. Returns `(C_max − C_min)/(C_max + C_min)`.
pub fn visibility_sweep(state: &TwoPhotonPolarizationState, fixed_angle: f64, basis_offset: f64) -> Result<f64> {
    let curve = correlation_curve(state, fixed_angle, basis_offset, VISIBILITY_SWEEP_POINTS);
    fringe_visibility(&curve)
}

/// Number of analyzer positions in a visibility sweep.
pub const VISIBILITY_SWEEP_POINTS: usize = 180;

/// Coincidence probability as the second analyzer sweeps half a turn.
pub fn correlation_curve(
    state: &TwoPhotonPolarizationState,
    fixed_angle: f64,
    basis_offset: f64,
    points: usize,
) -> Vec<(f64, f64)> {
    (0..points)
        .map(|k| {
            let angle = basis_offset + PI * k as f64 / points as f64;
            (angle, coincidence_probability(state, fixed_angle, angle))
        })
        .collect()
}

/// Visibility of a uniformly sampled half-turn fringe.
///
/// The coincidence probability is exactly `c₀ + c₁ cos 2θ + s₁ sin 2θ`, so the
/// discrete Fourier coefficients of the sweep give its true extremes `c₀ ± |c₁, s₁|`
/// rather than the extremes of the sampled points.
pub fn fringe_visibility(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 3 {
        return Err(Error::Degenerate("a fringe needs at least three samples".into()));
    }
    let n = curve.len() as f64;
    let origin = curve[0].0;
    let (mut c0, mut c1, mut s1) = (0.0, 0.0, 0.0);
    for &(angle, value) in curve {
        let (s, c) = (2.0 * (angle - origin)).sin_cos();
        c0 += value;
        c1 += value * c;
        s1 += value * s;
    }
    c0 /= n;
    c1 *= 2.0 / n;
    s1 *= 2.0 / n;
    let amplitude = c1.hypot(s1);
    let (max, min) = (c0 + amplitude, (c0 - amplitude).max(0.0));
    if !(max + min > 1e-15) {
        return Err(Error::Degenerate("coincidence fringe is identically zero".into()));
    }
    Ok(((max - min) / (max + min)).clamp(0.0, 1.0))
}

/// `⟨ψ|ρ|ψ⟩` for a pure target normalized within 1e-9.
pub fn fidelity(state: &TwoPhotonPolarizationState, target: &Vector4<C64>) -> Result<f64> {
    let norm_sq = target.norm_squared();
    if (norm_sq - 1.0).abs() > 1e-9 {
        return Err(Error::domain("target norm²", norm_sq, "target must be normalized"));
    }
    Ok((target.adjoint() * state.density_matrix() * target)[(0, 0)]
        .re
        .clamp(0.0, 1.0))
}

/// Standard deviations by which S exceeds the local bound.
///
/// Measured values are quoted in decimal, so `(S − 2)/σ` is evaluated exactly on the
/// shortest decimal forms of the inputs and rounded once: `(2.66, 0.03)` gives 22.0
/// rather than the 22.000000000000007 of binary arithmetic. Inputs with more digits
/// than fit a 53-bit integer fall back to plain floating point.
pub fn violation_sigmas(s_value: f64, std_dev: f64) -> Result<f64> {
    if !(std_dev > 0.0) {
        return Err(Error::domain("std_dev", std_dev, "std_dev > 0"));
    }
    Ok(decimal_excess_ratio(s_value, std_dev).unwrap_or((s_value - CLASSICAL_BOUND) / std_dev))
}

/// `x = digits · 10^exponent` from the shortest round-trip representation.
fn decimal_parts(x: f64) -> Option<(i128, i32)> {
    if !x.is_finite() {
        return None;
    }
    let text = format!("{x:e}");
    let (mantissa, exponent) = text.split_once('e')?;
    let fraction_digits = mantissa.split_once('.').map_or(0, |(_, f)| f.len()) as i32;
    let digits: i128 = mantissa.replace('.', "").parse().ok()?;
    Some((digits, exponent.parse::<i32>().ok()? - fraction_digits))
}

fn decimal_excess_ratio(s_value: f64, std_dev: f64) -> Option<f64> {
    let (s_digits, s_exp) = decimal_parts(s_value)?;
    let (d_digits, d_exp) = decimal_parts(std_dev)?;
    let bound = CLASSICAL_BOUND as i128;
    let common = s_exp.min(d_exp).min(0);
    let scale = |digits: i128, exp: i32| digits.checked_mul(10i128.checked_pow((exp - common) as u32)?);
    let numerator = scale(s_digits, s_exp)?.checked_sub(scale(bound, 0)?)?;
    let denominator = scale(d_digits, d_exp)?;
    const EXACT: i128 = 1 << 53;
    (numerator.abs() <= EXACT && denominator <= EXACT).then(|| numerator as f64 / denominator as f64)
}

/// Simulated coincidence counts for one analyzer pair: outcomes
/// `(a, b), (a, b⊥), (a⊥, b), (a⊥, b⊥)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationCounts {
    pub counts: [u64; 4],
}

impl CorrelationCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Correlation estimate and its Poisson standard error.
    ///
    /// With `N₌ = N(a,b) + N(a⊥,b⊥)` and `N≠` the remaining counts,
    /// `E = (N₌ − N≠)/N` and propagating independent Poisson errors through E gives
    /// `σ_E² = 4 N₌ N≠ / N³ = (1 − E²)/N`.
    pub fn correlation(&self) -> Result<(f64, f64)> {
        let n = self.total() as f64;
        if n == 0.0 {
            return Err(Error::Degenerate("no coincidences recorded".into()));
        }
        let same = (self.counts[0] + self.counts[3]) as f64;
        let different = (self.counts[1] + self.counts[2]) as f64;
        let e = (same - different) / n;
        Ok((e, (4.0 * same * different / (n * n * n)).sqrt()))
    }
}

fn sample_correlation(
    state: &TwoPhotonPolarizationState,
    angle_a: f64,
    angle_b: f64,
    mean_counts: f64,
    rng: &mut ChaCha8Rng,
) -> CorrelationCounts {
    let (ap, bp) = (angle_a + FRAC_PI_2, angle_b + FRAC_PI_2);
    let probs = [
        coincidence_probability(state, angle_a, angle_b),
        coincidence_probability(state, angle_a, bp),
        coincidence_probability(state, ap, angle_b),
        coincidence_probability(state, ap, bp),
    ];
    CorrelationCounts {
        counts: probs.map(|p| poisson(rng, mean_counts * p)),
    }
}

/// CHSH estimate from Poisson-sampled coincidences.
///
/// Each of the four analyzer pairs gets its own RNG substream `(seed, pair index)`;
/// `mean_counts` is the expected total coincidence number per analyzer pair. The
/// standard deviation adds the four `σ_E` in quadrature.
pub fn simulate_chsh(
    state: &TwoPhotonPolarizationState,
    angles: &ChshAngles,
    mean_counts: f64,
    seed: u64,
) -> Result<(ChshResult, [CorrelationCounts; 4])> {
    if !(mean_counts > 0.0) {
        return Err(Error::domain("mean_counts", mean_counts, "mean_counts > 0"));
    }
    let pairs = [
        (angles.phi_a, angles.phi_b),
        (angles.phi_a, angles.phi_b_prime),
        (angles.phi_a_prime, angles.phi_b),
        (angles.phi_a_prime, angles.phi_b_prime),
    ];
    let counts: Vec<CorrelationCounts> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| sample_correlation(state, a, b, mean_counts, &mut substream_rng(seed, i as u64)))
        .collect();
    let mut estimates = [(0.0, 0.0); 4];
    for (slot, c) in estimates.iter_mut().zip(&counts) {
        *slot = c.correlation()?;
    }
    let s = estimates[0].0 - estimates[1].0 + estimates[2].0 + estimates[3].0;
    let sigma = estimates.iter().map(|(_, se)| se * se).sum::<f64>().sqrt();
    Ok((
        ChshResult {
            s_value: s.abs(),
            std_dev: Some(sigma),
            angles: *angles,
        },
        [counts[0], counts[1], counts[2], counts[3]],
    ))
}
