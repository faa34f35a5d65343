use proptest::prelude::*;
use rkn_core::kalman::{
    concise_covariance_update, innovation, is_valid_covariance, joseph_covariance_update,
    kalman_gain, predict, run_kalman_filter, FilterState, MeasurementNoisePolicy,
};
use rkn_core::numerics::Matrix;
use rkn_core::statespace::{LinearStateSpaceModel, Observations};

fn spd(dim: usize, entries: &[f64], ridge: f64) -> Matrix<f64> {
    let a = Matrix::new(dim, dim, entries[..dim * dim].to_vec()).unwrap();
    a.matmul_t(&a)
        .add(&Matrix::identity(dim).scale(ridge))
        .symmetrize()
}

fn relative_gap(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn joseph_equals_concise_for_the_kalman_gain(
        m in 1usize..5,
        n in 1usize..4,
        p_raw in prop::collection::vec(-2.0f64..2.0, 16),
        r_raw in prop::collection::vec(-2.0f64..2.0, 9),
        h_raw in prop::collection::vec(-3.0f64..3.0, 12),
        p_ridge in 1e-3f64..1.0,
        r_ridge in 1e-3f64..1.0,
    ) {
        let p = spd(m, &p_raw, p_ridge);
        let r = spd(n, &r_raw, r_ridge);
        let h = Matrix::new(n, m, h_raw[..n * m].to_vec()).unwrap();
        let s = h.sandwich(&p).add(&r).symmetrize();
        let k = kalman_gain(&p, &h, &s).unwrap();
        let joseph = joseph_covariance_update(&p, &k, &h, &r);
        let concise = concise_covariance_update(&p, &k, &h);
        prop_assert!(relative_gap(&joseph, &concise) <= 1e-10, "gap {}", relative_gap(&joseph, &concise));
    }

    #[test]
    fn joseph_stays_valid_for_arbitrary_gains(
        p_raw in prop::collection::vec(-2.0f64..2.0, 4),
        k_raw in prop::collection::vec(-5.0f64..5.0, 2),
        r in 1e-4f64..10.0,
    ) {
        let p = spd(2, &p_raw, 1e-3);
        let k = Matrix::new(2, 1, k_raw).unwrap();
        let h = Matrix::from_rows(&[[1.0, 0.0]]);
        let out = joseph_covariance_update(&p, &k, &h, &Matrix::from_diag(&[r]));
        prop_assert!(is_valid_covariance(&out));
    }
}

#[test]
fn concise_form_loses_validity_for_a_suboptimal_gain() {
    let p = Matrix::identity(2);
    let k = Matrix::from_rows(&[[3.0], [0.0]]);
    let h = Matrix::from_rows(&[[1.0, 0.0]]);
    assert!(!is_valid_covariance(&concise_covariance_update(&p, &k, &h)));
    assert!(is_valid_covariance(&joseph_covariance_update(
        &p,
        &k,
        &h,
        &Matrix::from_diag(&[1.0])
    )));
}

#[test]
fn filter_run_agrees_with_step_composition() {
    let model = LinearStateSpaceModel::new(
        Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]),
        Matrix::from_rows(&[[1.0, 0.0]]),
        Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.01]]),
        1.0,
    )
    .unwrap();
    let zs = vec![vec![0.7], vec![2.1], vec![2.9], vec![4.2]];
    let p0 = Matrix::from_diag(&[1.0, 0.5]);
    let run = run_kalman_filter(
        &model,
        Observations {
            measurements: &zs,
            modes: None,
        },
        MeasurementNoisePolicy::ExpectedVariance { sigma_w_sq: 0.5 },
        &[0.0, 1.0],
        &p0,
    )
    .unwrap();

    let r = Matrix::from_diag(&[0.5]);
    let mut state = FilterState {
        x_hat: vec![0.0, 1.0],
        p: p0,
        t: 0,
    };
    for (k, z) in zs.iter().enumerate() {
        let pred = predict(&state, &model);
        let (y, s) = innovation(&pred, z, &model, &r).unwrap();
        let gain = kalman_gain(&pred.p, &model.h, &s).unwrap();
        let x: Vec<f64> = pred
            .x_hat
            .iter()
            .zip(gain.mul_vec(&y))
            .map(|(a, b)| a + b)
            .collect();
        let p = concise_covariance_update(&pred.p, &gain, &model.h);
        assert!(relative_gap(&run.p[k], &p) < 1e-12);
        assert!(x
            .iter()
            .zip(&run.x_hat[k])
            .all(|(a, b)| (a - b).abs() < 1e-12));
        state = FilterState {
            x_hat: x,
            p,
            t: pred.t,
        };
    }
}
