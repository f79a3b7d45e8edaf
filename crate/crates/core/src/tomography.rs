//! Two-photon polarization tomography: simulated coincidence counts, linear
//! inversion, and maximum-likelihood reconstruction.
//!
//! The maximum-likelihood estimate is searched over `ρ = T†T / Tr(T†T)` with `T`
//! lower triangular (4 real diagonal entries and 6 complex off-diagonal ones, 16
//! real parameters), which makes every iterate a valid density matrix. The
//! unnormalized `T†T` also carries the unknown count rate, so the Poisson
//! likelihood is maximized without a separate intensity parameter.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::paulis;
use crate::error::{Error, Result};
use crate::numerics::{bfgs_minimize, poisson, substream_rng, MinimizeOptions};
use crate::polarization::{product_vector, PolarizationVector, TwoPhotonPolarizationState, C64};

/// A product projector `|a⟩⟨a| ⊗ |b⟩⟨b|`, labelled by two letters from
/// `H V D A R L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorSetting {
    pub label: String,
    pub projector_a: PolarizationVector,
    pub projector_b: PolarizationVector,
}

fn letter_state(letter: char) -> Option<PolarizationVector> {
    Some(match letter {
        'H' => PolarizationVector::horizontal(),
        'V' => PolarizationVector::vertical(),
        'D' => PolarizationVector::diagonal(),
        'A' => PolarizationVector::antidiagonal(),
        'R' => PolarizationVector::right(),
        'L' => PolarizationVector::left(),
        _ => return None,
    })
}

impl ProjectorSetting {
    /// Parses labels such as `"HV"` or `"RD"`.
    pub fn from_label(label: &str) -> Result<Self> {
        let mut chars = label.chars();
        let parsed = match (chars.next(), chars.next(), chars.next()) {
            (Some(a), Some(b), None) => letter_state(a).zip(letter_state(b)),
            _ => None,
        };
        let (projector_a, projector_b) = parsed.ok_or_else(|| {
            Error::Degenerate(format!(
                "unknown projector label `{label}` (expected two of H, V, D, A, R, L)"
            ))
        })?;
        Ok(Self {
            label: label.to_string(),
            projector_a,
            projector_b,
        })
    }

    fn state_vector(&self) -> Vector4<C64> {
        product_vector(&self.projector_a, &self.projector_b)
    }

    /// Tr[ρ Π].
    pub fn probability(&self, state: &TwoPhotonPolarizationState) -> f64 {
        let psi = self.state_vector();
        (psi.adjoint() * state.density_matrix() * psi)[(0, 0)].re.max(0.0)
    }
}

/// The 16 product projectors of the standard two-qubit tomography protocol.
pub fn standard_settings() -> Vec<ProjectorSetting> {
    [
        "HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH", "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL",
    ]
    .iter()
    .map(|l| ProjectorSetting::from_label(l).expect("valid label"))
    .collect()
}

/// All 36 products of the six Pauli eigenstates.
pub fn overcomplete_settings() -> Vec<ProjectorSetting> {
    const LETTERS: [char; 6] = ['H', 'V', 'D', 'A', 'R', 'L'];
    LETTERS
        .iter()
        .flat_map(|a| LETTERS.iter().map(move |b| format!("{a}{b}")))
        .map(|l| ProjectorSetting::from_label(&l).expect("valid label"))
        .collect()
}

/// Coincidences recorded for one projector setting.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub setting: ProjectorSetting,
    pub counts: u64,
    /// Acquisition time, s.
    pub exposure: f64,
}

impl CountRecord {
    pub fn new(setting: ProjectorSetting, counts: u64, exposure: f64) -> Result<Self> {
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::domain("exposure", exposure, "exposure > 0"));
        }
        Ok(Self {
            setting,
            counts,
            exposure,
        })
    }
}

/// Poisson counts with mean `mean_counts_per_setting · Tr[ρ Π]` for every setting,
/// each drawn from substream `(seed, setting index)`. Exposure is recorded as 1 s.
pub fn simulate_counts(
    state: &TwoPhotonPolarizationState,
    settings: &[ProjectorSetting],
    mean_counts_per_setting: f64,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    if !(mean_counts_per_setting > 0.0 && mean_counts_per_setting.is_finite()) {
        return Err(Error::domain(
            "mean_counts_per_setting",
            mean_counts_per_setting,
            "must be positive",
        ));
    }
    Ok(settings
        .par_iter()
        .enumerate()
        .map(|(i, setting)| {
            let mean = mean_counts_per_setting * setting.probability(state);
            CountRecord {
                setting: setting.clone(),
                counts: poisson(&mut substream_rng(seed, i as u64), mean),
                exposure: 1.0,
            }
        })
        .collect())
}

/// Counts equal to `scale · Tr[ρ Π]`, rounded to the nearest integer.
pub fn expected_counts(
    state: &TwoPhotonPolarizationState,
    settings: &[ProjectorSetting],
    scale: f64,
) -> Vec<CountRecord> {
    settings
        .iter()
        .map(|setting| CountRecord {
            setting: setting.clone(),
            counts: (scale * setting.probability(state)).round() as u64,
            exposure: 1.0,
        })
        .collect()
}

/// Hermitian operator basis σ_i ⊗ σ_j, i, j ∈ {I, X, Y, Z}, index `4i + j`.
fn operator_basis() -> Vec<Matrix4<C64>> {
    let p = paulis();
    let single = [nalgebra::Matrix2::<C64>::identity(), p[0], p[1], p[2]];
    let mut basis = Vec::with_capacity(16);
    for a in &single {
        for b in &single {
            basis.push(a.kronecker(b));
        }
    }
    basis
}

/// Real design matrix `A[s][k] = Tr[Γ_k Π_s] / 4` mapping Pauli coefficients to
/// projection probabilities.
fn design_matrix(settings: &[&ProjectorSetting]) -> DMatrix<f64> {
    let basis = operator_basis();
    DMatrix::from_fn(settings.len(), 16, |s, k| {
        let psi = settings[s].state_vector();
        (psi.adjoint() * basis[k] * psi)[(0, 0)].re / 4.0
    })
}

const RANK_TOLERANCE: f64 = 1e-10;

/// Rank of the measurement operators of `settings` within the 16-dimensional space of
/// two-qubit Hermitian operators.
pub fn operator_rank(settings: &[ProjectorSetting]) -> usize {
    let refs: Vec<&ProjectorSetting> = settings.iter().collect();
    let svd = design_matrix(&refs).svd(false, false);
    let max = svd.singular_values.max();
    svd.singular_values
        .iter()
        .filter(|s| **s > RANK_TOLERANCE * max.max(1e-300))
        .count()
}

/// Hermitian, unit-trace estimate from linear inversion; may have negative eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimate {
    pub matrix: Matrix4<C64>,
    pub min_eigenvalue: f64,
}

impl LinearEstimate {
    pub fn is_physical(&self) -> bool {
        self.min_eigenvalue >= -1e-12
    }

    /// Clips negative eigenvalues to zero and renormalizes the trace.
    pub fn project_to_psd(&self) -> TwoPhotonPolarizationState {
        let eig = self.matrix.symmetric_eigen();
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let mut rho = Matrix4::<C64>::zeros();
        for (k, value) in clipped.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            rho += (v * v.adjoint()) * C64::new(value / total, 0.0);
        }
        TwoPhotonPolarizationState::from_density_matrix(hermitize(&rho)).expect("clipped spectrum is a valid state")
    }
}

fn hermitize(m: &Matrix4<C64>) -> Matrix4<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Least-squares inversion of the count rates onto the Pauli-product expansion of ρ.
pub fn linear_reconstruct(records: &[CountRecord]) -> Result<LinearEstimate> {
    let settings: Vec<&ProjectorSetting> = records.iter().map(|r| &r.setting).collect();
    let a = design_matrix(&settings);
    let svd = a.svd(true, true);
    let max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > RANK_TOLERANCE * max.max(1e-300))
        .count();
    if rank < 16 {
        return Err(Error::RankDeficient { rank, required: 16 });
    }
    let rates = DVector::from_iterator(records.len(), records.iter().map(|r| r.counts as f64 / r.exposure));
    let coefficients = svd
        .solve(&rates, RANK_TOLERANCE * max)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let trace = coefficients[0];
    if !(trace > 0.0) {
        return Err(Error::Degenerate("no coincidences to reconstruct from".into()));
    }
    let basis = operator_basis();
    let mut rho = Matrix4::<C64>::zeros();
    for (k, gamma) in basis.iter().enumerate() {
        rho += gamma * C64::new(coefficients[k] / (4.0 * trace), 0.0);
    }
    let matrix = hermitize(&rho);
    let min_eigenvalue = matrix
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(LinearEstimate { matrix, min_eigenvalue })
}

/// Poisson log-likelihood of `state`, with the count rate set to its best value:
/// `Σ nᵢ ln μᵢ − μᵢ` (up to the state-independent `−Σ ln nᵢ!`) where
/// `μᵢ = c · tᵢ · Tr[ρ Πᵢ]` and `c = Σnᵢ / Σ tᵢ Tr[ρ Πᵢ]`.
pub fn log_likelihood(records: &[CountRecord], state: &TwoPhotonPolarizationState) -> f64 {
    let p: Vec<f64> = records
        .iter()
        .map(|r| r.exposure * r.setting.probability(state))
        .collect();
    let total_counts: f64 = records.iter().map(|r| r.counts as f64).sum();
    let scale = total_counts / p.iter().sum::<f64>();
    records
        .iter()
        .zip(&p)
        .map(|(r, &pi)| {
            let mu = scale * pi;
            let n = r.counts as f64;
            if r.counts == 0 {
                -mu
            } else {
                n * mu.ln() - mu
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub density_matrix: TwoPhotonPolarizationState,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-10,
        }
    }
}

/// White-noise admixture used to make the starting point strictly positive, so it
/// has a Cholesky factor.
const START_REGULARIZATION: f64 = 1e-4;

/// Lower-triangular positions (row, col) of the complex off-diagonal parameters.
const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (3, 2)];

fn unpack(t: &DVector<f64>) -> Matrix4<C64> {
    let mut m = Matrix4::<C64>::zeros();
    for k in 0..4 {
        m[(k, k)] = C64::new(t[k], 0.0);
    }
    for (i, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        m[(r, c)] = C64::new(t[4 + 2 * i], t[5 + 2 * i]);
    }
    m
}

fn pack(m: &Matrix4<C64>) -> DVector<f64> {
    let mut t = DVector::zeros(16);
    for k in 0..4 {
        t[k] = m[(k, k)].re;
    }
    for (i, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        t[4 + 2 * i] = m[(r, c)].re;
        t[5 + 2 * i] = m[(r, c)].im;
    }
    t
}

/// Lower-triangular `T` with `T†T = m` for a positive definite `m`.
fn lower_factor(m: &Matrix4<C64>) -> Option<Matrix4<C64>> {
    // With J the exchange matrix, J m J = C C† gives m = (J C J)(J C† J) and
    // J C† J is lower triangular.
    let flip = |a: &Matrix4<C64>| Matrix4::from_fn(|r, c| a[(3 - r, 3 - c)]);
    let chol = Cholesky::new(flip(m))?;
    Some(flip(&chol.l().adjoint()))
}

/// Scaled negative log-likelihood and its gradient in the 16 parameters of `T`.
struct Objective {
    vectors: Vec<Vector4<C64>>,
    /// nᵢ / Σn.
    frequencies: Vec<f64>,
    /// tᵢ / mean(t).
    weights: Vec<f64>,
}

impl Objective {
    fn new(records: &[CountRecord]) -> Self {
        let total: f64 = records.iter().map(|r| r.counts as f64).sum();
        let mean_exposure = records.iter().map(|r| r.exposure).sum::<f64>() / records.len() as f64;
        Self {
            vectors: records.iter().map(|r| r.setting.state_vector()).collect(),
            frequencies: records.iter().map(|r| r.counts as f64 / total).collect(),
            weights: records.iter().map(|r| r.exposure / mean_exposure).collect(),
        }
    }

    /// `Σ wᵢ qᵢ − fᵢ ln qᵢ` with `qᵢ = ‖T ψᵢ‖²`.
    fn evaluate(&self, t: &DVector<f64>) -> (f64, DVector<f64>) {
        let tm = unpack(t);
        let mut value = 0.0;
        let mut grad = DVector::zeros(16);
        for ((psi, &f), &w) in self.vectors.iter().zip(&self.frequencies).zip(&self.weights) {
            let x = tm * psi;
            let q = x.norm_squared();
            let dq = if f > 0.0 {
                if !(q > 0.0) {
                    return (f64::INFINITY, grad);
                }
                value += w * q - f * q.ln();
                w - f / q
            } else {
                value += w * q;
                w
            };
            for k in 0..4 {
                grad[k] += dq * 2.0 * (x[k].conj() * psi[k]).re;
            }
            for (i, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
                let z = x[r].conj() * psi[c];
                grad[4 + 2 * i] += dq * 2.0 * z.re;
                grad[5 + 2 * i] += dq * -2.0 * z.im;
            }
        }
        (value, grad)
    }
}

/// Maximum-likelihood density matrix, started from the PSD-projected linear estimate.
pub fn mle_reconstruct(records: &[CountRecord], options: &MleOptions) -> Result<ReconstructionResult> {
    let linear = linear_reconstruct(records)?;
    let start_state = linear.project_to_psd();
    let identity = Matrix4::<C64>::identity() * C64::new(0.25, 0.0);
    let start = start_state.density_matrix() * C64::new(1.0 - START_REGULARIZATION, 0.0)
        + identity * C64::new(START_REGULARIZATION, 0.0);

    // Scale so that Σ tᵢ qᵢ matches the observed total at the start.
    let objective = Objective::new(records);
    let expected: f64 = objective
        .vectors
        .iter()
        .zip(&objective.weights)
        .map(|(psi, w)| w * (psi.adjoint() * start * psi)[(0, 0)].re)
        .sum();
    let scaled = start * C64::new(1.0 / expected, 0.0);
    let factor = lower_factor(&hermitize(&scaled))
        .ok_or_else(|| Error::Degenerate("starting estimate has no Cholesky factor".into()))?;

    let minimum = bfgs_minimize(
        |t| objective.evaluate(t),
        pack(&factor),
        &MinimizeOptions {
            max_iterations: options.max_iterations,
            gradient_tolerance: options.tolerance,
            step_tolerance: options.tolerance,
        },
    );

    let t = unpack(&minimum.x);
    let unnormalized = t.adjoint() * t;
    let trace = unnormalized.trace().re;
    let state =
        TwoPhotonPolarizationState::from_density_matrix(hermitize(&(unnormalized * C64::new(1.0 / trace, 0.0))))?;
    Ok(ReconstructionResult {
        log_likelihood: log_likelihood(records, &state),
        density_matrix: state,
        iterations: minimum.iterations,
        converged: minimum.converged,
        gradient_norm: minimum.gradient_norm,
    })
}

/// Real and imaginary parts of a reconstructed density matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTables {
    pub real: [[f64; 4]; 4],
    pub imag: [[f64; 4]; 4],
}

impl MatrixTables {
    pub fn recombine(&self) -> Matrix4<C64> {
        Matrix4::from_fn(|r, c| C64::new(self.real[r][c], self.imag[r][c]))
    }
}

pub fn report_matrix(result: &ReconstructionResult) -> MatrixTables {
    matrix_tables(&result.density_matrix)
}

pub fn matrix_tables(state: &TwoPhotonPolarizationState) -> MatrixTables {
    let rho = state.density_matrix();
    let mut tables = MatrixTables {
        real: [[0.0; 4]; 4],
        imag: [[0.0; 4]; 4],
    };
    for r in 0..4 {
        for c in 0..4 {
            tables.real[r][c] = rho[(r, c)].re;
            tables.imag[r][c] = rho[(r, c)].im;
        }
    }
    tables
}

/// `½ Σ |λᵢ(ρ − σ)|`.
pub fn trace_distance(a: &TwoPhotonPolarizationState, b: &TwoPhotonPolarizationState) -> f64 {
    let diff = hermitize(&(a.density_matrix() - b.density_matrix()));
    0.5 * diff.symmetric_eigen().eigenvalues.iter().map(|v| v.abs()).sum::<f64>()
}
