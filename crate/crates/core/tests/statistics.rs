use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rkn_core::evaluation::{
    ensemble_for, msmd, per_time_consistency, per_time_mahalanobis, run_estimator, Estimator,
};
use rkn_core::statespace::{
    generate_dataset, make_constant_velocity_model, noise_from_heterogeneity, sample_trajectory,
    Dataset, DatasetConfig, SplitSizes,
};
use rkn_core::Matrix64;

fn default_dataset(test: usize, seed: u64) -> Dataset {
    let config = DatasetConfig {
        dt: 1.0,
        sigma_v_sq: 1e-4,
        noise: noise_from_heterogeneity(40.0, 1e-4, 0.6, 1.5625).unwrap(),
        init_mean: vec![0.0, 1.0],
        init_cov: vec![vec![1.0, 0.0], vec![0.0, 0.01]],
        sizes: SplitSizes {
            train: 0,
            val: 0,
            test,
        },
        horizon: 150,
        master_seed: seed,
    };
    generate_dataset(&config).unwrap()
}

struct Moments {
    n: f64,
    sum: f64,
    sum2: f64,
    sum4: f64,
}

impl Moments {
    fn new() -> Self {
        Self {
            n: 0.0,
            sum: 0.0,
            sum2: 0.0,
            sum4: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum2 += x * x;
        self.sum4 += x.powi(4);
    }

    // Mean-zero variance estimate and its standard error.
    fn variance(&self) -> (f64, f64) {
        let v = self.sum2 / self.n;
        let m4 = self.sum4 / self.n;
        (v, ((m4 - v * v) / self.n).sqrt())
    }
}

#[test]
fn simulated_noise_matches_its_specification() {
    let model = make_constant_velocity_model(1.0, 1e-4).unwrap();
    let noise = noise_from_heterogeneity(40.0, 1e-4, 0.6, 1.5625).unwrap();
    let init_cov = Matrix64::from_diag(&[1.0, 0.01]);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let (mut w, mut dv, mut modes) = (Moments::new(), Moments::new(), Moments::new());
    while w.n < 1e5 {
        let traj =
            sample_trajectory(&model, &noise, 150, &[0.0, 1.0], &init_cov, &mut rng).unwrap();
        for k in 0..traj.len() {
            w.push(traj.measurements[k][0] - traj.states[k][0]);
            modes.push(if traj.modes[k] { 1.0 } else { 0.0 });
            if k > 0 {
                dv.push(traj.states[k][1] - traj.states[k - 1][1]);
            }
        }
    }

    let (var_w, se_w) = w.variance();
    assert!(
        (var_w - noise.sigma_w_sq).abs() < 3.0 * se_w,
        "Var(w) = {var_w}, se {se_w}"
    );
    assert!((var_w / noise.sigma_w_sq - 1.0).abs() < 0.03);
    let mean_w = w.sum / w.n;
    assert!(mean_w.abs() < 3.0 * (var_w / w.n).sqrt());

    // Mixture kurtosis: E[w⁴] = 3 (p σ1⁴ + (1 − p) σ2⁴).
    let m4 = 3.0 * (noise.p * noise.sigma1_sq.powi(2) + (1.0 - noise.p) * noise.sigma2_sq.powi(2));
    assert!(
        (w.sum4 / w.n / m4 - 1.0).abs() < 0.05,
        "E[w^4] = {}, expected {m4}",
        w.sum4 / w.n
    );

    let p_hat = modes.sum / modes.n;
    assert!(
        (p_hat - noise.p).abs() < 3.0 * (noise.p * (1.0 - noise.p) / modes.n).sqrt(),
        "p = {p_hat}"
    );

    let (var_v, se_v) = dv.variance();
    assert!(
        (var_v - 1e-4).abs() < 3.0 * se_v,
        "Var(dv) = {var_v}, se {se_v}"
    );
}

#[test]
fn initial_states_follow_the_initial_distribution() {
    let model = make_constant_velocity_model(1.0, 0.0).unwrap();
    let noise = noise_from_heterogeneity(40.0, 1e-4, 0.6, 1.5625).unwrap();
    let init_cov = Matrix64::from_diag(&[1.0, 0.01]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut pos, mut vel) = (Moments::new(), Moments::new());
    for _ in 0..20_000 {
        let traj = sample_trajectory(&model, &noise, 1, &[0.0, 1.0], &init_cov, &mut rng).unwrap();
        // With σv² = 0, x₁ = F x₀ exactly.
        let v0 = traj.states[0][1];
        pos.push(traj.states[0][0] - v0);
        vel.push(v0 - 1.0);
    }
    let (vp, sp) = pos.variance();
    let (vv, sv) = vel.variance();
    assert!((vp - 1.0).abs() < 3.0 * sp, "{vp}");
    assert!((vv - 0.01).abs() < 3.0 * sv, "{vv}");
}

#[test]
fn oracle_filter_error_is_orthogonal_to_the_innovation() {
    let ds = default_dataset(1000, 31);
    let runs = run_estimator(Estimator::Okf, &ds, &ds.test).unwrap();
    let n = ds.test.len() as f64;
    let threshold = 3.0 / n.sqrt();
    let (mut checked, mut within) = (0usize, 0usize);
    for t in 0..ds.horizon() {
        let y: Vec<f64> = runs.iter().map(|r| r.innovation[t][0]).collect();
        for c in 0..2 {
            let e: Vec<f64> = ds
                .test
                .iter()
                .zip(&runs)
                .map(|(s, r)| s.states[t][c] - r.x_hat[t][c])
                .collect();
            let corr = correlation(&e, &y);
            checked += 1;
            if corr.abs() <= threshold {
                within += 1;
            }
        }
    }
    // 3σ bands hold 99.7% of the time for independent draws.
    assert!(
        within as f64 >= 0.99 * checked as f64,
        "{within} of {checked} within {threshold}"
    );
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn oracle_filter_is_calibrated() {
    let ds = default_dataset(1000, 5);
    let runs = run_estimator(Estimator::Okf, &ds, &ds.test).unwrap();
    let ens = ensemble_for(&ds.test, &runs).unwrap();

    let total = msmd(&ens).unwrap();
    assert!((total - 2.0).abs() <= 0.15, "MSMD {total}");

    let band = 4.0 * (2.0 * 2.0 / 1000.0f64).sqrt();
    let per_t = per_time_mahalanobis(&ens).unwrap();
    let inside = per_t.iter().filter(|&&d| (d - 2.0).abs() <= band).count();
    assert!(
        inside as f64 >= 0.99 * per_t.len() as f64,
        "{inside} of {}",
        per_t.len()
    );

    let curves = per_time_consistency(&ens).unwrap();
    let n = ds.test.len() as f64;
    for c in 0..2 {
        let mut mean_rel = 0.0;
        for t in 20..ds.horizon() {
            let (emp, est) = (curves.empirical_std[t][c], curves.estimated_std[t][c]);
            let rel = (est - emp).abs() / emp;
            mean_rel += rel / (ds.horizon() - 20) as f64;

            // Standard error of a sample std, from the spread of e².
            let sq: Vec<f64> = ens.errors().iter().map(|s| s[t][c] * s[t][c]).collect();
            let m2 = sq.iter().sum::<f64>() / n;
            let v2 = sq.iter().map(|x| (x - m2).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (v2 / n).sqrt() / (2.0 * m2);
            assert!(
                rel <= 5.0 * se,
                "t = {}, component {c}: {est} vs {emp}, se {se}",
                t + 1
            );
        }
        assert!(
            mean_rel <= 0.05,
            "component {c}: mean relative gap {mean_rel}"
        );
    }
}

#[test]
fn expected_variance_filter_is_calibrated_on_average_but_less_accurate() {
    let ds = default_dataset(500, 9);
    let okf = ensemble_for(
        &ds.test,
        &run_estimator(Estimator::Okf, &ds, &ds.test).unwrap(),
    )
    .unwrap();
    let sokf = ensemble_for(
        &ds.test,
        &run_estimator(Estimator::Sokf, &ds, &ds.test).unwrap(),
    )
    .unwrap();
    let (a, b) = (
        rkn_core::evaluation::mse(&okf),
        rkn_core::evaluation::mse(&sokf),
    );
    assert!(a < b, "o-KF {a} vs so-KF {b}");
    let d = msmd(&sokf).unwrap();
    assert!((d - 2.0).abs() < 0.2, "{d}");

    let (co, cs) = (
        per_time_consistency(&okf).unwrap(),
        per_time_consistency(&sokf).unwrap(),
    );
    let t = ds.horizon() - 1;
    assert!(cs.estimated_std[t][0] > co.estimated_std[t][0]);
}
