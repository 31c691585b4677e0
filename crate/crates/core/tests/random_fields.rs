use reldiff::randomfield::{
    correlation_time, covariance_estimate, fit_covariance_ansatz, kubo_alpha_estimate, kubo_alpha_time_integrated,
    target_covariance, Coherence, FieldSampler, KuboConfig,
};
use reldiff::spectral::{moment_tensor, Profile, ShellComponent};
use reldiff::{FourVector, SpectralDensity};

fn lowered(t: [[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let eta = [1.0, -1.0, -1.0, -1.0];
    std::array::from_fn(|a| std::array::from_fn(|b| eta[a] * eta[b] * t[a][b]))
}

fn check_ansatz(g: &SpectralDensity, realizations: usize) {
    let sampler = FieldSampler::new(g).unwrap();
    let est = covariance_estimate(&sampler, &FourVector::new(0.3, -0.2, 0.5, 0.1), 16, realizations, 11).unwrap();
    for i in 0..6 {
        assert!(est.mean[i].abs() <= 4.0 * est.mean_se[i], "mean {i}: {} ± {}", est.mean[i], est.mean_se[i]);
    }
    let fit = fit_covariance_ansatz(&est, &lowered(moment_tensor(g)), &g.frame()).unwrap();
    assert!((fit.a1 - 1.0).abs() <= 4.0 * fit.a1_se, "a1 {} ± {}", fit.a1, fit.a1_se);
    assert!(fit.a_w.abs() <= 4.0 * fit.a_w_se, "a_w {} ± {}", fit.a_w, fit.a_w_se);
    assert!(fit.a0.abs() <= 4.0 * fit.a0_se, "a0 {} ± {}", fit.a0, fit.a0_se);

    // The sampled covariance against the analytic target, entry by entry.
    let target = target_covariance(g);
    for i in 0..6 {
        for j in 0..6 {
            let d = est.covariance[i][j] - target[i][j];
            assert!(d.abs() <= 5.0 * est.covariance_se[i][j] + 1e-12, "({i},{j}) {} vs {}", est.covariance[i][j], target[i][j]);
        }
    }
}

#[test]
fn planck_covariance_has_the_bianchi_form() {
    check_ansatz(&SpectralDensity::planck(1.0, 1.0).unwrap(), 20_000);
}

#[test]
fn moving_massive_shell_has_the_bianchi_form() {
    let g = SpectralDensity::new(
        vec![
            ShellComponent {
                mass: 0.7,
                profile: Profile::Monochromatic { k0: 1.2, weight: 1.0 },
            },
            ShellComponent {
                mass: 0.0,
                profile: Profile::Planck { beta: 2.0, norm: 3.0 },
            },
        ],
        FourVector::unit_with_rapidity([0.0, 0.6, 0.8], 0.7),
    )
    .unwrap();
    check_ansatz(&g, 20_000);
}

#[test]
fn short_coherence_gives_momentum_independent_tau_c() {
    let g = SpectralDensity::planck(1.0, 1.0).unwrap();
    let w = FourVector::at_rest(1.0);
    let cfg = KuboConfig {
        realizations: 20_000,
        seed: 3,
        ..KuboConfig::default()
    };
    let t_coh = 1e-3;
    let tau = |p: [f64; 3]| {
        let p = FourVector::on_shell(1.0, p);
        let small = kubo_alpha_estimate(&g, &p, &w, 1e-6, &cfg).unwrap();
        let int = kubo_alpha_time_integrated(&g, &p, &w, 20.0 * t_coh, Coherence::ProperTime(t_coh), &cfg).unwrap();
        assert!(!int.truncation_warning, "tail {}", int.tail_fraction);
        correlation_time(&small, &int)
    };
    let rest = tau([0.0; 3]);
    let moving = tau([1.0, 0.0, 0.0]);
    let combined = (rest.std_err.powi(2) + moving.std_err.powi(2)).sqrt();
    assert!((rest.tau_c - moving.tau_c).abs() <= 3.0 * combined, "{rest:?} vs {moving:?}");
    // Coherence far below the field period: the integral is t_coh times the
    // coincident correlation.
    assert!((rest.tau_c / t_coh - 1.0).abs() < 0.05, "{rest:?}");
}
