//! Classical Kalman filter: predict, innovation, gain, correction and the
//! concise and Joseph covariance updates, plus the oracle (o-KF) and
//! expected-variance (so-KF) baseline configurations.

use std::io::Write;

use crate::error::{Error, NumericError, Result};
use crate::numerics::{min_eigenvalue_small, spd_solve, Matrix, Real};
use crate::statespace::{fmt_f64, BimodalNoiseSpec, LinearStateSpaceModel, Observations};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T> {
    pub x_hat: Vec<T>,
    pub p: Matrix<T>,
    pub t: usize,
}

/// How the filter models the measurement noise covariance `R_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementNoisePolicy<T> {
    /// `R_t = σ1²` when the stored mode indicator is set, `σ2²` otherwise.
    OraclePerStep { sigma1_sq: T, sigma2_sq: T },
    /// `R_t = σ_w²` at every step.
    ExpectedVariance { sigma_w_sq: T },
}

impl<T: Real> MeasurementNoisePolicy<T> {
    pub fn oracle(noise: &BimodalNoiseSpec) -> Self {
        Self::OraclePerStep {
            sigma1_sq: T::from_f64_lossy(noise.sigma1_sq),
            sigma2_sq: T::from_f64_lossy(noise.sigma2_sq),
        }
    }

    pub fn expected_variance(noise: &BimodalNoiseSpec) -> Self {
        Self::ExpectedVariance {
            sigma_w_sq: T::from_f64_lossy(noise.sigma_w_sq),
        }
    }

    pub fn requires_modes(&self) -> bool {
        matches!(self, Self::OraclePerStep { .. })
    }

    /// `R` at step `k` (0-based) as `variance · I_n`.
    fn covariance(&self, modes: Option<&[bool]>, k: usize, n: usize) -> Result<Matrix<T>> {
        let var = match *self {
            Self::OraclePerStep {
                sigma1_sq,
                sigma2_sq,
            } => {
                let mode = *modes.and_then(|m| m.get(k)).ok_or(Error::MissingModes)?;
                if mode {
                    sigma1_sq
                } else {
                    sigma2_sq
                }
            }
            Self::ExpectedVariance { sigma_w_sq } => sigma_w_sq,
        };
        Ok(Matrix::identity(n).scale(var))
    }
}

/// Per-step record of a filter pass; index `k` holds time step `t = k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun<T> {
    pub x_hat: Vec<Vec<T>>,
    pub p: Vec<Matrix<T>>,
    pub gain: Vec<Matrix<T>>,
    pub innovation: Vec<Vec<T>>,
    /// Innovation covariances. Empty for estimators that never form `S_t`.
    pub innovation_cov: Vec<Matrix<T>>,
}

impl<T: Real> FilterRun<T> {
    pub fn with_capacity(len: usize) -> Self {
        Self {
            x_hat: Vec::with_capacity(len),
            p: Vec::with_capacity(len),
            gain: Vec::with_capacity(len),
            innovation: Vec::with_capacity(len),
            innovation_cov: Vec::with_capacity(len),
        }
    }

    pub fn len(&self) -> usize {
        self.x_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_hat.is_empty()
    }
}

pub const FILTER_RUN_HEADER: &str = "series,t,xhat_pos,xhat_vel,P00,P01,P11,K0,K1,innov";

/// Writes runs as CSV with header [`FILTER_RUN_HEADER`]. Only the
/// two-state, one-measurement layout is representable.
pub fn write_filter_runs<T: Real, W: Write>(
    runs: &[FilterRun<T>],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{FILTER_RUN_HEADER}")?;
    for (series, run) in runs.iter().enumerate() {
        for k in 0..run.len() {
            let (x, p, g, y) = (&run.x_hat[k], &run.p[k], &run.gain[k], &run.innovation[k]);
            if x.len() != 2 || g.shape() != (2, 1) || y.len() != 1 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    "filter run export supports two states and one measurement",
                ));
            }
            let f = |v: T| fmt_f64(v.to_f64_lossy());
            writeln!(
                out,
                "{series},{},{},{},{},{},{},{},{},{}",
                k + 1,
                f(x[0]),
                f(x[1]),
                f(p[(0, 0)]),
                f(p[(0, 1)]),
                f(p[(1, 1)]),
                f(g[(0, 0)]),
                f(g[(1, 0)]),
                f(y[0])
            )?;
        }
    }
    Ok(())
}

/// `x̂ ← F x̂`, `P ← F P Fᵀ + Q`.
pub fn predict<T: Real>(
    state: &FilterState<T>,
    model: &LinearStateSpaceModel<T>,
) -> FilterState<T> {
    FilterState {
        x_hat: model.f.mul_vec(&state.x_hat),
        p: model.f.sandwich(&state.p).add(&model.q).symmetrize(),
        t: state.t + 1,
    }
}

/// Innovation `y = z − H x̂` and its covariance `S = H P Hᵀ + R`.
pub fn innovation<T: Real>(
    predicted: &FilterState<T>,
    z: &[T],
    model: &LinearStateSpaceModel<T>,
    r: &Matrix<T>,
) -> Result<(Vec<T>, Matrix<T>), NumericError> {
    let hx = model.h.mul_vec(&predicted.x_hat);
    let y = z.iter().zip(&hx).map(|(&zi, &hi)| zi - hi).collect();
    let s = model.h.sandwich(&predicted.p).add(r).symmetrize();
    crate::numerics::cholesky(&s)?;
    Ok((y, s))
}

/// `K = P Hᵀ S⁻¹`, computed as `(S⁻¹ H P)ᵀ` with an SPD solve.
pub fn kalman_gain<T: Real>(
    p_pred: &Matrix<T>,
    h: &Matrix<T>,
    s: &Matrix<T>,
) -> Result<Matrix<T>, NumericError> {
    let hp = h.matmul(p_pred);
    Ok(spd_solve(s, &hp)?.transpose())
}

/// `x̂ ← x̂ + K y`.
pub fn correct<T: Real>(predicted: &FilterState<T>, k: &Matrix<T>, y: &[T]) -> Vec<T> {
    predicted
        .x_hat
        .iter()
        .zip(k.mul_vec(y))
        .map(|(&x, dx)| x + dx)
        .collect()
}

/// `I − K H`.
pub fn gain_complement<T: Real>(k: &Matrix<T>, h: &Matrix<T>) -> Matrix<T> {
    Matrix::identity(k.rows()).sub(&k.matmul(h))
}

/// `P ← (I − K H) P`, valid only for the optimal gain.
pub fn concise_covariance_update<T: Real>(
    p_pred: &Matrix<T>,
    k: &Matrix<T>,
    h: &Matrix<T>,
) -> Matrix<T> {
    gain_complement(k, h).matmul(p_pred).symmetrize()
}

/// `P ← (I − K H) P (I − K H)ᵀ + K R Kᵀ`, valid for any gain.
pub fn joseph_covariance_update<T: Real>(
    p_pred: &Matrix<T>,
    k: &Matrix<T>,
    h: &Matrix<T>,
    r: &Matrix<T>,
) -> Matrix<T> {
    gain_complement(k, h)
        .sandwich(p_pred)
        .add(&k.sandwich(r))
        .symmetrize()
}

/// Runs the filter over a measurement sequence from `(x̂₀|₀, P₀|₀)`, using
/// the Joseph form for every covariance update.
pub fn run_kalman_filter<T: Real>(
    model: &LinearStateSpaceModel<T>,
    obs: Observations<'_, T>,
    policy: MeasurementNoisePolicy<T>,
    init_mean: &[T],
    init_cov: &Matrix<T>,
) -> Result<FilterRun<T>> {
    if policy.requires_modes() && obs.modes.is_none_or(|m| m.len() < obs.measurements.len()) {
        return Err(Error::MissingModes);
    }
    let n = model.measurement_dim();
    let mut state = FilterState {
        x_hat: init_mean.to_vec(),
        p: init_cov.clone(),
        t: 0,
    };
    let mut run = FilterRun::with_capacity(obs.measurements.len());
    for (k, z) in obs.measurements.iter().enumerate() {
        let predicted = predict(&state, model);
        let r = policy.covariance(obs.modes, k, n)?;
        let (y, s) = innovation(&predicted, z, model, &r)
            .map_err(|e| Error::numeric_at(format!("innovation covariance at t = {}", k + 1), e))?;
        let gain = kalman_gain(&predicted.p, &model.h, &s)
            .map_err(|e| Error::numeric_at(format!("gain at t = {}", k + 1), e))?;
        let x_hat = correct(&predicted, &gain, &y);
        let p = joseph_covariance_update(&predicted.p, &gain, &model.h, &r);
        state = FilterState {
            x_hat,
            p,
            t: predicted.t,
        };
        run.x_hat.push(state.x_hat.clone());
        run.p.push(state.p.clone());
        run.gain.push(gain);
        run.innovation.push(y);
        run.innovation_cov.push(s);
    }
    Ok(run)
}

/// Checks the covariance invariants: symmetric within `1e-10‖P‖` and smallest
/// eigenvalue at least `−1e-12‖P‖`.
pub fn is_valid_covariance<T: Real>(p: &Matrix<T>) -> bool {
    let norm = p.max_abs();
    p.asymmetry() <= T::from_f64_lossy(1e-10) * norm
        && min_eigenvalue_small(p) >= -T::from_f64_lossy(1e-12) * norm
}
