use cavity_spdc::entanglement::fidelity;
use cavity_spdc::polarization::{apply_werner_noise, phi_minus_vector, TwoPhotonPolarizationState};
use cavity_spdc::tomography::{
    linear_reconstruct, log_likelihood, mle_reconstruct, simulate_counts, standard_settings, trace_distance, MleOptions,
};
use proptest::prelude::*;

fn werner(v: f64) -> TwoPhotonPolarizationState {
    apply_werner_noise(&TwoPhotonPolarizationState::phi_minus(), v).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    0.5 * (v[v.len() / 2] + v[(v.len() - 1) / 2])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mle_output_is_a_density_matrix(v in 0.0f64..=1.0, mean in 5.0f64..1e5, seed in any::<u64>()) {
        let records = simulate_counts(&werner(v), &standard_settings(), mean, seed).unwrap();
        let Ok(result) = mle_reconstruct(&records, &MleOptions::default()) else {
            // only an all-zero record set is rejected
            prop_assert!(records.iter().all(|r| r.counts == 0));
            return Ok(());
        };
        let rho = result.density_matrix.density_matrix();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-12);
        prop_assert!(rho.trace().im.abs() < 1e-15);
        prop_assert!((rho - rho.adjoint()).norm() == 0.0);
        prop_assert!(result.density_matrix.min_eigenvalue() >= -1e-12);
    }

    #[test]
    fn mle_is_never_worse_than_its_start(v in 0.5f64..=1.0, mean in 50.0f64..1e4, seed in any::<u64>()) {
        let records = simulate_counts(&werner(v), &standard_settings(), mean, seed).unwrap();
        let start = linear_reconstruct(&records).unwrap().project_to_psd();
        let result = mle_reconstruct(&records, &MleOptions::default()).unwrap();
        prop_assert!(result.log_likelihood >= log_likelihood(&records, &start) - 1e-9);
    }

    #[test]
    fn reconstruction_is_bit_reproducible(seed in any::<u64>()) {
        let records = simulate_counts(&werner(0.97), &standard_settings(), 1e3, seed).unwrap();
        let a = mle_reconstruct(&records, &MleOptions::default()).unwrap();
        let b = mle_reconstruct(&records, &MleOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn error_shrinks_with_counts() {
    let truth = werner(0.97);
    let errors = |mean: f64| -> Vec<f64> {
        (0..20)
            .map(|seed| {
                let records = simulate_counts(&truth, &standard_settings(), mean, seed).unwrap();
                let result = mle_reconstruct(&records, &MleOptions::default()).unwrap();
                trace_distance(&result.density_matrix, &truth)
            })
            .collect()
    };
    let low = median(errors(1e3));
    let high = median(errors(1e6));
    assert!(high < low, "{high} vs {low}");
}

#[test]
fn fidelity_band_at_moderate_counts() {
    let truth = werner(0.97);
    for seed in 0..5 {
        let records = simulate_counts(&truth, &standard_settings(), 1e5, seed).unwrap();
        let result = mle_reconstruct(&records, &MleOptions::default()).unwrap();
        let f = fidelity(&result.density_matrix, &phi_minus_vector()).unwrap();
        assert!((0.96..=0.99).contains(&f), "seed {seed}: {f}");
    }
}
