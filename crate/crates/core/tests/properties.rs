use nnr_core::densela::{dot, DenseMatrix};
use nnr_core::designs::{
    build_deconv_instance, design_one_instance, group_testing_design, load_instance, save_instance, DeconvSpec,
    Ensemble,
};
use nnr_core::nnls::{kkt_check, nnls_solve_raw};
use nnr_core::rng::{normal_vec, substream};
use nnr_core::simlab::{aggregate, prop2_sample, recovery_replication, Row};
use nnr_core::simplex::{project_simplex, tau_s_with_forms};
use nnr_core::{nnls_solve, GroundTruth, NnlsOptions, RegressionInstance};
use proptest::prelude::*;

fn random_design(n: usize, p: usize, seed: u64) -> DenseMatrix {
    let mut rng = substream(seed, 0, 0);
    DenseMatrix::from_col_major(n, p, normal_vec(&mut rng, n * p)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nnls_satisfies_kkt(n in 3usize..25, p in 1usize..40, seed in any::<u64>()) {
        let x = random_design(n, p, seed);
        let y = normal_vec(&mut substream(seed, 1, 0), n);
        let inst = RegressionInstance::new(x, y, None).unwrap();
        let sol = nnls_solve(&inst, NnlsOptions::default()).unwrap();
        let r: Vec<f64> = inst.y.iter().zip(inst.x.matvec(&sol.beta)).map(|(a, b)| a - b).collect();
        for j in 0..p {
            let g = dot(inst.x.col(j), &r) / n as f64;
            prop_assert!(sol.beta[j] >= 0.0);
            if sol.beta[j] > 0.0 {
                prop_assert!(g.abs() < 1e-8, "active gradient {g}");
            } else {
                prop_assert!(g < 1e-8, "inactive gradient {g}");
            }
        }
        prop_assert!(kkt_check(&inst, &sol.beta, 1e-8).unwrap().is_optimal);
    }

    #[test]
    fn simplex_projection_is_optimal(v in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let x = project_simplex(&v);
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(x.iter().all(|&a| a >= 0.0));
        let d: Vec<f64> = v.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dx = dot(&d, &x);
        for dj in &d {
            prop_assert!(dj - dx <= 1e-12);
        }
    }

    #[test]
    fn tau_forms_agree(n in 8usize..20, extra in 1usize..12, s in 1usize..4, seed in any::<u64>()) {
        let p = s + extra;
        let x = random_design(n, p, seed);
        let inst = RegressionInstance::new(x, vec![0.0; n], None).unwrap();
        let support: Vec<usize> = (0..s).collect();
        let (cert, forms) = tau_s_with_forms(&inst.x, &support).unwrap();
        let scale = forms.projected.abs().max(1e-6);
        prop_assert!((forms.projected - forms.schur).abs() / scale < 1e-6);
        prop_assert!((forms.projected - forms.eliminated).abs() / scale < 1e-6);
        prop_assert!(cert.value >= 0.0);
    }

    #[test]
    fn aggregate_matches_direct_computation(vals in prop::collection::vec(-100.0f64..100.0, 2..40)) {
        let rows: Vec<Row> = vals.iter().enumerate().map(|(i, v)| Row { cell: 0, rep: i, values: vec![*v] }).collect();
        let agg = &aggregate(&rows, &["v".to_string()])[0];
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        prop_assert_eq!(agg.count, vals.len());
        prop_assert!((agg.mean - mean).abs() < 1e-9);
        prop_assert!((agg.std_error - (var / k).sqrt()).abs() < 1e-9);
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        let h = (k - 1.0) * 0.5;
        let lo = h.floor() as usize;
        let median = sorted[lo] + (h - lo as f64) * (sorted[(lo + 1).min(vals.len() - 1)] - sorted[lo]);
        prop_assert!((agg.quantiles[2] - median).abs() < 1e-9);
    }

    #[test]
    fn active_set_size_in_range(s in 0usize..8, rho in 0.0f64..0.9, extra in 1usize..60, seed in any::<u64>()) {
        let p = s + extra;
        let draw = prop2_sample(s, rho, p, &mut substream(seed, 0, 0)).unwrap();
        prop_assert!(draw.card_f >= s && draw.card_f <= p);
        prop_assert_eq!(draw.p_minus_s, p - s);
    }

    #[test]
    fn data_driven_success_implies_oracle_success(seed in 0u64..40) {
        let inst = design_one_instance(60, 120, 3, 0.5, &mut substream(seed, 0, 0)).unwrap();
        let row = recovery_replication(&inst, 3, 1.0).unwrap();
        prop_assert!(row[3] <= row[2]);
    }
}

#[test]
fn instance_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = substream(5, 0, 0);
    let inst = design_one_instance(20, 30, 2, 0.5, &mut rng).unwrap();
    let path = save_instance(&dir.path().join("inst"), &inst, None, serde_json::json!({"k": 1})).unwrap();
    let (back, manifest) = load_instance(&path).unwrap();
    assert_eq!(back.x, inst.x);
    assert_eq!(back.y, inst.y);
    assert_eq!(back.truth, inst.truth);
    assert!(!manifest.normalized);

    let bin = dir.path().join("inst.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(load_instance(&path).is_err());
}

#[test]
fn noiseless_deconvolution_fits_exactly() {
    let spec = DeconvSpec::default();
    let inst = build_deconv_instance(&spec, 0.0, &mut substream(1, 0, 0)).unwrap();
    let sol = nnls_solve(&inst, NnlsOptions::default()).unwrap();
    let beta_star = &inst.truth.as_ref().unwrap().beta_star;
    let fit = inst.x.matvec(&sol.beta);
    let target = inst.x.matvec(beta_star);
    let mse = fit.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / inst.n() as f64;
    assert!(mse <= 1e-10, "{mse}");
}

#[test]
fn group_testing_gram_concentrates() {
    let (n, p) = (4000, 12);
    let x = group_testing_design(n, p, 0.5, 3).unwrap();
    let g = x.gram(1.0 / n as f64);
    for j in 0..p {
        assert!((g.get(j, j) - 1.0).abs() < 1e-12);
        for k in 0..j {
            assert!((g.get(j, k) - 0.5).abs() < 0.03, "{}", g.get(j, k));
        }
    }
}

#[test]
fn ensemble_moments_match_draws() {
    let draws = 200_000;
    for e in [
        Ensemble::E1 { a: 1.0 },
        Ensemble::E1 { a: 0.3 },
        Ensemble::E2 { pi: 0.2 },
        Ensemble::E3 { a: 0.7 },
        Ensemble::E4 { a: 0.5 },
    ] {
        let mut rng = substream(9, 0, 0);
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..draws {
            let v = e.sample(&mut rng);
            assert!(v >= 0.0);
            m1 += v;
            m2 += v * v;
        }
        let mom = e.moments();
        m1 /= draws as f64;
        m2 /= draws as f64;
        assert!((m1 - mom.mu).abs() < 0.02 * mom.mu2.sqrt(), "{e:?}: {m1} vs {}", mom.mu);
        assert!((m2 - mom.mu2).abs() < 0.03 * mom.mu2, "{e:?}: {m2} vs {}", mom.mu2);
    }
}

#[test]
fn raw_solver_on_orthonormal_design_clips() {
    let x = DenseMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.0 });
    let y = vec![2.0, -2.0, 4.0, 0.0];
    let sol = nnls_solve_raw(&x, &y, NnlsOptions::default()).unwrap();
    assert_eq!(sol.beta, vec![1.0, 0.0, 2.0, 0.0]);
    let _ = GroundTruth::new(sol.beta, 0.0, None).unwrap();
}
