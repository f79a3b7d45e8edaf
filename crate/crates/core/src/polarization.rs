//! Jones calculus for single photons and the two-photon polarization state produced
//! by interfering the pair on a polarizing beam splitter.
//!
//! Two-photon operators act on the ordered basis `{HH, HV, VH, VV}`, photon A first.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Labels of the two-photon basis, in matrix order.
pub const BASIS_LABELS: [&str; 4] = ["HH", "HV", "VH", "VV"];

/// A normalized single-photon Jones vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationVector {
    amplitude_h: C64,
    amplitude_v: C64,
}

impl PolarizationVector {
    /// Accepts amplitudes already normalized to within 1e-12.
    pub fn new(amplitude_h: C64, amplitude_v: C64) -> Result<Self> {
        let norm_sq = amplitude_h.norm_sqr() + amplitude_v.norm_sqr();
        if (norm_sq - 1.0).abs() > 1e-12 {
            return Err(Error::domain(
                "polarization vector norm²",
                norm_sq,
                "must equal 1 within 1e-12",
            ));
        }
        Ok(Self {
            amplitude_h,
            amplitude_v,
        })
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(amplitude_h: C64, amplitude_v: C64) -> Result<Self> {
        let norm = (amplitude_h.norm_sqr() + amplitude_v.norm_sqr()).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Degenerate("zero polarization vector".into()));
        }
        Ok(Self {
            amplitude_h: amplitude_h / norm,
            amplitude_v: amplitude_v / norm,
        })
    }

    pub fn horizontal() -> Self {
        Self {
            amplitude_h: ONE,
            amplitude_v: ZERO,
        }
    }

    pub fn vertical() -> Self {
        Self {
            amplitude_h: ZERO,
            amplitude_v: ONE,
        }
    }

    /// |+⟩ = (|H⟩ + |V⟩)/√2.
    pub fn diagonal() -> Self {
        Self {
            amplitude_h: C64::new(FRAC_1_SQRT_2, 0.0),
            amplitude_v: C64::new(FRAC_1_SQRT_2, 0.0),
        }
    }

    /// |−⟩ = (|H⟩ − |V⟩)/√2.
    pub fn antidiagonal() -> Self {
        Self {
            amplitude_h: C64::new(FRAC_1_SQRT_2, 0.0),
            amplitude_v: C64::new(-FRAC_1_SQRT_2, 0.0),
        }
    }

    /// |R⟩ = (|H⟩ − i|V⟩)/√2.
    pub fn right() -> Self {
        Self {
            amplitude_h: C64::new(FRAC_1_SQRT_2, 0.0),
            amplitude_v: C64::new(0.0, -FRAC_1_SQRT_2),
        }
    }

    /// |L⟩ = (|H⟩ + i|V⟩)/√2.
    pub fn left() -> Self {
        Self {
            amplitude_h: C64::new(FRAC_1_SQRT_2, 0.0),
            amplitude_v: C64::new(0.0, FRAC_1_SQRT_2),
        }
    }

    /// Linear polarization at `angle` from H.
    pub fn linear(angle: f64) -> Self {
        Self {
            amplitude_h: C64::new(angle.cos(), 0.0),
            amplitude_v: C64::new(angle.sin(), 0.0),
        }
    }

    pub fn amplitude_h(&self) -> C64 {
        self.amplitude_h
    }

    pub fn amplitude_v(&self) -> C64 {
        self.amplitude_v
    }

    pub fn to_vector(&self) -> Vector2<C64> {
        Vector2::new(self.amplitude_h, self.amplitude_v)
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn projector(&self) -> Matrix2<C64> {
        let v = self.to_vector();
        v * v.adjoint()
    }

    /// Applies a Jones matrix and renormalizes.
    pub fn transformed(&self, jones: &Matrix2<C64>) -> Result<Self> {
        let out = jones * self.to_vector();
        Self::normalized(out[0], out[1])
    }

    /// |⟨self|other⟩|².
    pub fn overlap(&self, other: &Self) -> f64 {
        (self.amplitude_h.conj() * other.amplitude_h + self.amplitude_v.conj() * other.amplitude_v).norm_sqr()
    }
}

/// A two-photon polarization density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonPolarizationState {
    rho: Matrix4<C64>,
}

impl TwoPhotonPolarizationState {
    /// Validates Hermiticity, unit trace and positivity, all within 1e-10.
    pub fn from_density_matrix(rho: Matrix4<C64>) -> Result<Self> {
        let asymmetry = (rho - rho.adjoint()).norm();
        if asymmetry > 1e-10 {
            return Err(Error::domain(
                "density matrix Hermiticity defect",
                asymmetry,
                "must be Hermitian within 1e-10",
            ));
        }
        let trace = rho.trace();
        if (trace.re - 1.0).abs() > 1e-10 || trace.im.abs() > 1e-10 {
            return Err(Error::domain(
                "density matrix trace",
                trace.re,
                "trace must be 1 within 1e-10",
            ));
        }
        let state = Self { rho };
        let min = state.min_eigenvalue();
        if min < -1e-10 {
            return Err(Error::domain(
                "density matrix minimum eigenvalue",
                min,
                "must be positive semidefinite within 1e-10",
            ));
        }
        Ok(state)
    }

    /// `|ψ⟩⟨ψ|` for a state vector normalized within 1e-9.
    pub fn from_pure(psi: &Vector4<C64>) -> Result<Self> {
        let norm_sq = psi.norm_squared();
        if (norm_sq - 1.0).abs() > 1e-9 {
            return Err(Error::domain("state vector norm²", norm_sq, "must equal 1 within 1e-9"));
        }
        Ok(Self {
            rho: psi * psi.adjoint(),
        })
    }

    pub fn product(a: &PolarizationVector, b: &PolarizationVector) -> Self {
        let psi = product_vector(a, b);
        Self {
            rho: psi * psi.adjoint(),
        }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            rho: Matrix4::identity() * C64::new(0.25, 0.0),
        }
    }

    /// |φ⁻⟩⟨φ⁻|.
    pub fn phi_minus() -> Self {
        let psi = phi_minus_vector();
        Self {
            rho: psi * psi.adjoint(),
        }
    }

    pub fn density_matrix(&self) -> &Matrix4<C64> {
        &self.rho
    }

    pub fn into_density_matrix(self) -> Matrix4<C64> {
        self.rho
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let eig = self.rho.symmetric_eigen();
        let mut values = [
            eig.eigenvalues[0],
            eig.eigenvalues[1],
            eig.eigenvalues[2],
            eig.eigenvalues[3],
        ];
        values.sort_by(f64::total_cmp);
        values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// `U ρ U†` for a two-photon unitary `U`.
    pub fn transformed(&self, unitary: &Matrix4<C64>) -> Self {
        Self {
            rho: unitary * self.rho * unitary.adjoint(),
        }
    }

    /// Applies independent Jones matrices to photons A and B.
    pub fn with_local_unitaries(&self, on_a: &Matrix2<C64>, on_b: &Matrix2<C64>) -> Self {
        self.transformed(&on_a.kronecker(on_b))
    }

    /// Tr[ρ · (Π_A ⊗ Π_B)].
    pub fn expectation(&self, operator: &Matrix4<C64>) -> C64 {
        (self.rho * operator).trace()
    }

    /// Row-major complex entries over `{HH, HV, VH, VV}`.
    pub fn entries(&self) -> [C64; 16] {
        let mut out = [ZERO; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = self.rho[(r, c)];
            }
        }
        out
    }
}

impl Serialize for TwoPhotonPolarizationState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.entries().iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TwoPhotonPolarizationState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(deserializer)?;
        if pairs.len() != 16 {
            return Err(serde::de::Error::invalid_length(pairs.len(), &"16 complex entries"));
        }
        let rho = Matrix4::from_fn(|r, c| {
            let [re, im] = pairs[4 * r + c];
            C64::new(re, im)
        });
        Self::from_density_matrix(rho).map_err(serde::de::Error::custom)
    }
}

/// |φ⁻⟩ = (|HH⟩ − |VV⟩)/√2.
pub fn phi_minus_vector() -> Vector4<C64> {
    Vector4::new(C64::new(FRAC_1_SQRT_2, 0.0), ZERO, ZERO, C64::new(-FRAC_1_SQRT_2, 0.0))
}

/// |φ⁺⟩ = (|HH⟩ + |VV⟩)/√2.
pub fn phi_plus_vector() -> Vector4<C64> {
    Vector4::new(C64::new(FRAC_1_SQRT_2, 0.0), ZERO, ZERO, C64::new(FRAC_1_SQRT_2, 0.0))
}

pub fn product_vector(a: &PolarizationVector, b: &PolarizationVector) -> Vector4<C64> {
    let (a, b) = (a.to_vector(), b.to_vector());
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

/// Setting of a linear retarder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePlateSetting {
    /// Phase delay of the slow axis, radians in `[0, 2π)`.
    pub retardance: f64,
    /// Fast-axis angle from H, radians.
    pub fast_axis_angle: f64,
}

impl WavePlateSetting {
    pub fn new(retardance: f64, fast_axis_angle: f64) -> Result<Self> {
        if !(0.0..TAU).contains(&retardance) {
            return Err(Error::domain("retardance", retardance, "0 <= retardance < 2π"));
        }
        Ok(Self {
            retardance,
            fast_axis_angle,
        })
    }

    pub fn half_wave(fast_axis_angle: f64) -> Self {
        Self {
            retardance: PI,
            fast_axis_angle,
        }
    }

    pub fn quarter_wave(fast_axis_angle: f64) -> Self {
        Self {
            retardance: PI / 2.0,
            fast_axis_angle,
        }
    }
}

fn rotation(angle: f64) -> Matrix2<C64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0))
}

/// Jones matrix `R(θ) · diag(1, e^{iΓ}) · R(−θ)` of a retarder.
pub fn waveplate_jones(setting: &WavePlateSetting) -> Matrix2<C64> {
    let retarder = Matrix2::new(ONE, ZERO, ZERO, C64::from_polar(1.0, setting.retardance));
    rotation(setting.fast_axis_angle) * retarder * rotation(-setting.fast_axis_angle)
}

/// Relative phase between the HH and VV coincidence amplitudes at the PBS output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePhase(pub f64);

impl RelativePhase {
    /// The phase reduced to `[0, 2π)`.
    pub fn wrapped(self) -> f64 {
        self.0.rem_euclid(TAU)
    }
}

/// Result of interfering two photons on a PBS and post-selecting one photon per port.
#[derive(Debug, Clone, PartialEq)]
pub struct PbsOutcome {
    /// Conditional output state; `None` when no coincidence is possible.
    pub state: Option<TwoPhotonPolarizationState>,
    /// Probability of one photon in each output port.
    pub success_probability: f64,
    /// Probability that both photons leave through port A (the H-transmitting port of
    /// input 1).
    pub both_in_port_a: f64,
    pub both_in_port_b: f64,
}

/// Interferes photon `a` (input 1) and photon `b` (input 2) on an ideal PBS.
///
/// H is transmitted and V reflected, both with unit amplitude: input 1 maps H to
/// port A and V to port B, input 2 maps H to port B and V to port A. The coincidence
/// amplitude is `a_H b_H |HH⟩ + e^{iα} a_V b_V |VV⟩`, with the port-A photon written
/// first; `alpha` is the residual H/V phase picked up at the overlap.
pub fn pbs_interfere(photon_a: &PolarizationVector, photon_b: &PolarizationVector, alpha: RelativePhase) -> PbsOutcome {
    let hh = photon_a.amplitude_h * photon_b.amplitude_h;
    let vv = photon_a.amplitude_v * photon_b.amplitude_v * C64::from_polar(1.0, alpha.0);
    let success_probability = hh.norm_sqr() + vv.norm_sqr();
    let both_in_port_a = (photon_a.amplitude_h * photon_b.amplitude_v).norm_sqr();
    let both_in_port_b = (photon_a.amplitude_v * photon_b.amplitude_h).norm_sqr();

    let state = (success_probability > 1e-300).then(|| {
        let norm = success_probability.sqrt();
        let psi = Vector4::new(hh / norm, ZERO, ZERO, vv / norm);
        TwoPhotonPolarizationState {
            rho: psi * psi.adjoint(),
        }
    });
    PbsOutcome {
        state,
        success_probability,
        both_in_port_a,
        both_in_port_b,
    }
}

/// Undoes a relative phase `alpha` with a retarder `diag(1, e^{−iα})` on photon B.
pub fn phase_compensate(state: &TwoPhotonPolarizationState, alpha: RelativePhase) -> TwoPhotonPolarizationState {
    let compensator = Matrix2::new(ONE, ZERO, ZERO, C64::from_polar(1.0, -alpha.0));
    state.with_local_unitaries(&Matrix2::identity(), &compensator)
}

/// Mixes a pure state with white noise: `V |ψ⟩⟨ψ| + (1 − V) I/4`.
pub fn apply_werner_noise(state: &TwoPhotonPolarizationState, visibility: f64) -> Result<TwoPhotonPolarizationState> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::domain("visibility", visibility, "0 <= V <= 1"));
    }
    let purity = state.purity();
    if (purity - 1.0).abs() > 1e-9 {
        return Err(Error::domain("input purity", purity, "input state must be pure"));
    }
    let noise = Matrix4::<C64>::identity() * C64::new((1.0 - visibility) / 4.0, 0.0);
    Ok(TwoPhotonPolarizationState {
        rho: state.rho * C64::new(visibility, 0.0) + noise,
    })
}

/// Projector onto linear polarization at `angle`.
pub fn analyzer_projector(angle: f64) -> Matrix2<C64> {
    PolarizationVector::linear(angle).projector()
}

/// Probability that photon A passes a linear analyzer at `angle_a` and photon B one
/// at `angle_b`.
pub fn coincidence_probability(state: &TwoPhotonPolarizationState, angle_a: f64, angle_b: f64) -> f64 {
    projection_probability(
        state,
        &PolarizationVector::linear(angle_a),
        &PolarizationVector::linear(angle_b),
    )
}

/// Tr[ρ (|a⟩⟨a| ⊗ |b⟩⟨b|)] for arbitrary analyzer states.
pub fn projection_probability(
    state: &TwoPhotonPolarizationState,
    analyzer_a: &PolarizationVector,
    analyzer_b: &PolarizationVector,
) -> f64 {
    let psi = product_vector(analyzer_a, analyzer_b);
    (psi.adjoint() * state.rho * psi)[(0, 0)].re.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn assert_matrix_close(a: &Matrix2<C64>, b: &Matrix2<C64>, tol: f64) {
        assert!((a - b).norm() < tol, "{a} vs {b}");
    }

    /// Removes the global phase by making the first nonzero entry real positive.
    fn dephased(m: &Matrix2<C64>) -> Matrix2<C64> {
        let pivot = m.iter().find(|z| z.norm() > 1e-9).copied().unwrap();
        m * (pivot.conj() / pivot.norm())
    }

    #[test]
    fn waveplates_at_zero_angle() {
        let hwp = waveplate_jones(&WavePlateSetting::half_wave(0.0));
        assert_matrix_close(&dephased(&hwp), &Matrix2::new(ONE, ZERO, ZERO, -ONE), 1e-12);
        let qwp = waveplate_jones(&WavePlateSetting::quarter_wave(0.0));
        assert_matrix_close(
            &dephased(&qwp),
            &Matrix2::new(ONE, ZERO, ZERO, C64::new(0.0, 1.0)),
            1e-12,
        );
    }

    #[test]
    fn waveplates_are_unitary() {
        for i in 0..20 {
            let setting = WavePlateSetting::new(0.3 * i as f64 % TAU, 0.17 * i as f64).unwrap();
            let j = waveplate_jones(&setting);
            assert_matrix_close(&(j * j.adjoint()), &Matrix2::identity(), 1e-12);
        }
    }

    #[test]
    fn half_wave_at_eighth_turn_makes_diagonal() {
        let out = PolarizationVector::horizontal()
            .transformed(&waveplate_jones(&WavePlateSetting::half_wave(PI / 8.0)))
            .unwrap();
        assert!((out.overlap(&PolarizationVector::diagonal()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn retardance_range_enforced() {
        assert!(WavePlateSetting::new(TAU, 0.0).is_err());
        assert!(WavePlateSetting::new(-0.1, 0.0).is_err());
    }

    #[test]
    fn pbs_diagonal_antidiagonal_gives_phi_minus() {
        let out = pbs_interfere(
            &PolarizationVector::diagonal(),
            &PolarizationVector::antidiagonal(),
            RelativePhase(0.0),
        );
        assert!((out.success_probability - 0.5).abs() < 1e-12);
        let state = out.state.unwrap();
        assert!((state.density_matrix() - TwoPhotonPolarizationState::phi_minus().density_matrix()).norm() < 1e-12);
        assert!((out.success_probability + out.both_in_port_a + out.both_in_port_b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pbs_basis_inputs() {
        let h = PolarizationVector::horizontal();
        let v = PolarizationVector::vertical();
        let out = pbs_interfere(&h, &h, RelativePhase(0.7));
        assert!((out.success_probability - 1.0).abs() < 1e-15);
        let hh = out.state.unwrap();
        assert!((hh.density_matrix()[(0, 0)].re - 1.0).abs() < 1e-15);
        let out = pbs_interfere(&h, &v, RelativePhase(0.7));
        assert_eq!(out.success_probability, 0.0);
        assert!(out.state.is_none());
        assert_eq!(out.both_in_port_a, 1.0);
    }

    #[test]
    fn compensation_restores_phi_minus() {
        let phi = phi_minus_vector();
        for &alpha in &[0.0, 1.3, -2.2, 5.9] {
            let out = pbs_interfere(
                &PolarizationVector::diagonal(),
                &PolarizationVector::antidiagonal(),
                RelativePhase(alpha),
            );
            let fixed = phase_compensate(&out.state.unwrap(), RelativePhase(alpha));
            let f = (phi.adjoint() * fixed.density_matrix() * phi)[(0, 0)].re;
            assert!((f - 1.0).abs() < 1e-12, "alpha {alpha}: {f}");
        }
    }

    #[test]
    fn compensation_is_two_pi_periodic() {
        let out = pbs_interfere(
            &PolarizationVector::diagonal(),
            &PolarizationVector::antidiagonal(),
            RelativePhase(0.4),
        );
        let s = out.state.unwrap();
        let a = phase_compensate(&s, RelativePhase(0.4));
        let b = phase_compensate(&s, RelativePhase(0.4 + TAU));
        assert!((a.density_matrix() - b.density_matrix()).norm() < 1e-12);
        assert_eq!(phase_compensate(&s, RelativePhase(0.0)), s);
    }

    #[test]
    fn werner_noise_examples() {
        let phi = TwoPhotonPolarizationState::phi_minus();
        assert!((apply_werner_noise(&phi, 1.0).unwrap().density_matrix() - phi.density_matrix()).norm() < 1e-15);
        let mixed = apply_werner_noise(&phi, 0.0).unwrap();
        for e in mixed.eigenvalues() {
            assert!((e - 0.25).abs() < 1e-14);
        }
        let w = apply_werner_noise(&phi, 0.97).unwrap();
        let psi = phi_minus_vector();
        let f = (psi.adjoint() * w.density_matrix() * psi)[(0, 0)].re;
        assert!((f - 0.9775).abs() < 1e-12);
        assert!(apply_werner_noise(&phi, 1.2).is_err());
        assert!(apply_werner_noise(&mixed, 0.5).is_err());
    }

    #[test]
    fn coincidence_examples() {
        let phi = TwoPhotonPolarizationState::phi_minus();
        assert!((coincidence_probability(&phi, 0.0, 0.0) - 0.5).abs() < 1e-15);
        assert!(coincidence_probability(&phi, 0.0, FRAC_PI_2).abs() < 1e-15);
        let mixed = TwoPhotonPolarizationState::maximally_mixed();
        assert!((coincidence_probability(&mixed, 0.3, 1.1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn density_matrix_validation() {
        let mut bad = *TwoPhotonPolarizationState::phi_minus().density_matrix();
        bad[(0, 3)] = C64::new(0.2, 0.1);
        assert!(TwoPhotonPolarizationState::from_density_matrix(bad).is_err());
        let scaled = TwoPhotonPolarizationState::phi_minus().into_density_matrix() * C64::new(2.0, 0.0);
        assert!(TwoPhotonPolarizationState::from_density_matrix(scaled).is_err());
        let mut negative = Matrix4::<C64>::zeros();
        negative[(0, 0)] = C64::new(1.2, 0.0);
        negative[(1, 1)] = C64::new(-0.2, 0.0);
        assert!(TwoPhotonPolarizationState::from_density_matrix(negative).is_err());
    }
}
