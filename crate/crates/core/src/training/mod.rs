//! Gaussian negative log-likelihood training of [`RknModel`] by full
//! backpropagation through time, jointly over both networks.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, NumericError, Result};
use crate::evaluation::{ensemble_for, mse_db, msmd};
use crate::kalman::gain_complement;
use crate::neural::{AdamState, ParameterStore};
use crate::numerics::{cholesky, dot, spd_inverse, LowerTriangular, Matrix};
use crate::rkn::{backward_rollout, rollout, BatchRollout, RknModel};
use crate::statespace::{fmt_f64, mix64, Dataset, KnownDynamics, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
    /// Global gradient-norm cap.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            l2_lambda: 1e-4,
            seed: 0,
            patience: Some(25),
            clip_norm: Some(10.0),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| {
            Err(Error::InvalidParameter(format!("training.{field}: {why}")))
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda", "must be non-negative and finite");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("clip_norm", "must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `eᵀ P̂⁻¹ e`
    pub quadratic: f64,
    pub logdet: f64,
    pub regularization: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn data(quadratic: f64, logdet: f64) -> Self {
        Self {
            quadratic,
            logdet,
            regularization: 0.0,
            total: quadratic + logdet,
        }
    }

    pub fn with_regularization(self, regularization: f64) -> Self {
        Self {
            regularization,
            total: self.quadratic + self.logdet + regularization,
            ..self
        }
    }
}

/// `𝓛 = eᵀ P̂⁻¹ e + ln det P̂`.
pub fn nll_loss(e: &[f64], p_hat: &Matrix<f64>) -> Result<LossBreakdown, NumericError> {
    let l = cholesky(p_hat)?;
    Ok(nll_from_factor(e, &l))
}

fn nll_from_factor(e: &[f64], l: &LowerTriangular<f64>) -> LossBreakdown {
    let mut w = e.to_vec();
    l.forward_substitute(&mut w);
    let logdet = 2.0 * (0..l.dim()).map(|i| l.get(i, i).ln()).sum::<f64>();
    LossBreakdown::data(dot(&w, &w), logdet)
}

/// `∂𝓛/∂P̂ = P̂⁻¹ − P̂⁻¹ e eᵀ P̂⁻¹`.
pub fn analytic_grad_p(e: &[f64], p_hat: &Matrix<f64>) -> Result<Matrix<f64>, NumericError> {
    let inv = spd_inverse(p_hat)?;
    let w = inv.mul_vec(e);
    Ok(inv.sub(&Matrix::outer(&w, &w)))
}

/// Single-step `∂𝓛/∂K̂` with `P̂ₜ₋₁` held fixed:
/// `−2 (G J M Hᵀ + P̂⁻¹ e ŷᵀ)` with `G = ∂𝓛/∂P̂`, `J = I − K̂H`,
/// `M = F P̂ₜ₋₁ Fᵀ`.
pub fn analytic_grad_k(
    e: &[f64],
    y: &[f64],
    p_hat: &Matrix<f64>,
    p_prev: &Matrix<f64>,
    k: &Matrix<f64>,
    dynamics: &KnownDynamics<f64>,
) -> Result<Matrix<f64>, NumericError> {
    let g = analytic_grad_p(e, p_hat)?;
    let j = gain_complement(k, &dynamics.h);
    let m = dynamics.f.sandwich(p_prev);
    let w = spd_inverse(p_hat)?.mul_vec(e);
    Ok(g.matmul(&j)
        .matmul(&m)
        .matmul_t(&dynamics.h)
        .add(&Matrix::outer(&w, y))
        .scale(-2.0))
}

/// Factorizes `P̂`, retrying once with `1e-9·tr(P̂)/m` added to the
/// diagonal. Returns the factor of the matrix actually used.
fn factor_with_jitter(
    p: &Matrix<f64>,
) -> Result<(LowerTriangular<f64>, Matrix<f64>), NumericError> {
    match cholesky(p) {
        Ok(l) => Ok((l, p.clone())),
        Err(NumericError::NotPositiveDefinite { .. }) => {
            let m = p.rows();
            let jitter = 1e-9 * p.trace().abs() / m as f64;
            let bumped = p.add(&Matrix::identity(m).scale(jitter));
            Ok((cholesky(&bumped)?, bumped))
        }
        Err(e) => Err(e),
    }
}

/// Mean NLL over all `(series, t)` in a rollout, optionally with the loss
/// gradients with respect to every `x̂ₜ` and `P̂ₜ` in rollout layout.
fn rollout_nll(
    r: &BatchRollout,
    series: &[&Trajectory],
    want_grads: bool,
) -> Result<(LossBreakdown, Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>)> {
    let (bsz, horizon) = (r.batch(), r.horizon());
    let m = r.x_hat_at(0, 0).len();
    let scale = 1.0 / (bsz * horizon) as f64;
    let (mut quad, mut logdet) = (0.0, 0.0);
    let mut grads = want_grads.then(|| {
        (
            vec![vec![0.0; bsz * m]; horizon],
            vec![vec![0.0; bsz * m * m]; horizon],
        )
    });
    for t in 0..horizon {
        for (b, traj) in series.iter().enumerate() {
            let x_hat = r.x_hat_at(t, b);
            let e: Vec<f64> = traj.states[t]
                .iter()
                .zip(x_hat)
                .map(|(x, xh)| x - xh)
                .collect();
            let p = r.p_at(t, b);
            let locate = |err| {
                Error::numeric_at(
                    format!("covariance of batch series {b} at t = {}", t + 1),
                    err,
                )
            };
            let (l, used) = factor_with_jitter(&p).map_err(locate)?;
            let loss = nll_from_factor(&e, &l);
            quad += loss.quadratic;
            logdet += loss.logdet;
            if let Some((gx, gp)) = grads.as_mut() {
                let inv = spd_inverse(&used).map_err(locate)?;
                let w = inv.mul_vec(&e);
                let g = inv.sub(&Matrix::outer(&w, &w));
                for i in 0..m {
                    gx[t][b * m + i] = -2.0 * w[i] * scale;
                }
                for (dst, src) in gp[t][b * m * m..(b + 1) * m * m]
                    .iter_mut()
                    .zip(g.as_slice())
                {
                    *dst = src * scale;
                }
            }
        }
    }
    Ok((LossBreakdown::data(quad * scale, logdet * scale), grads))
}

fn measurement_refs<'a>(series: &[&'a Trajectory]) -> Vec<&'a [Vec<f64>]> {
    series.iter().map(|t| t.measurements.as_slice()).collect()
}

/// Mean NLL of a batch without touching gradients.
pub fn batch_loss(
    rkn: &RknModel,
    dynamics: &KnownDynamics<f64>,
    series: &[&Trajectory],
    init_mean: &[f64],
    init_cov: &Matrix<f64>,
) -> Result<LossBreakdown> {
    let r = rollout(
        rkn,
        dynamics,
        &measurement_refs(series),
        init_mean,
        init_cov,
        false,
    )?;
    Ok(rollout_nll(&r, series, false)?.0)
}

/// Mean NLL of a batch; its gradient is added to both parameter stores.
pub fn batch_loss_and_gradient(
    rkn: &mut RknModel,
    dynamics: &KnownDynamics<f64>,
    series: &[&Trajectory],
    init_mean: &[f64],
    init_cov: &Matrix<f64>,
) -> Result<LossBreakdown> {
    let r = rollout(
        rkn,
        dynamics,
        &measurement_refs(series),
        init_mean,
        init_cov,
        true,
    )?;
    let (loss, grads) = rollout_nll(&r, series, true)?;
    let (gx, gp) = grads.expect("gradients requested");
    backward_rollout(rkn, dynamics, &r, &gx, &gp)?;
    Ok(loss)
}

/// Time-averaged NLL of one sequence, accumulating its gradient.
pub fn sequence_loss(
    rkn: &mut RknModel,
    dynamics: &KnownDynamics<f64>,
    trajectory: &Trajectory,
    init_mean: &[f64],
    init_cov: &Matrix<f64>,
) -> Result<LossBreakdown> {
    batch_loss_and_gradient(rkn, dynamics, &[trajectory], init_mean, init_cov)
}

/// `λ (‖Θ1‖² + ‖Θ2‖²)`.
pub fn l2_penalty(rkn: &RknModel, lambda: f64) -> f64 {
    lambda * (rkn.gain_params.squared_norm() + rkn.chol_params.squared_norm())
}

fn add_l2_gradient(store: &mut ParameterStore, lambda: f64) {
    for (g, v) in store.grads.iter_mut().zip(&store.values) {
        *g += 2.0 * lambda * v;
    }
}

/// Rescales both gradient vectors so their joint norm is at most `cap`.
/// Returns the norm before clipping.
pub fn clip_global_norm(rkn: &mut RknModel, cap: Option<f64>) -> f64 {
    let sq: f64 = rkn
        .gain_params
        .grads
        .iter()
        .chain(&rkn.chol_params.grads)
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if let Some(cap) = cap {
        if norm > cap {
            let s = cap / norm;
            rkn.gain_params
                .grads
                .iter_mut()
                .chain(rkn.chol_params.grads.iter_mut())
                .for_each(|g| *g *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub val_mse_db: f64,
    pub val_msmd: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_nll,val_nll,val_mse_db,val_msmd";

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.train_nll),
            fmt_f64(r.val_nll),
            fmt_f64(r.val_mse_db),
            fmt_f64(r.val_msmd)
        )?;
    }
    Ok(())
}

/// Validation metrics of a model on a list of series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationMetrics {
    pub nll: f64,
    pub mse_db: f64,
    pub msmd: f64,
}

pub fn validate_model(
    rkn: &RknModel,
    dataset: &Dataset,
    series: &[Trajectory],
) -> Result<ValidationMetrics> {
    let refs: Vec<&Trajectory> = series.iter().collect();
    let r = rollout(
        rkn,
        &dataset.model.known_dynamics(),
        &measurement_refs(&refs),
        &dataset.init_mean,
        &dataset.init_cov,
        false,
    )?;
    let (loss, _) = rollout_nll(&r, &refs, false)?;
    let runs: Vec<_> = (0..r.batch()).map(|b| r.run(b)).collect();
    let ens = ensemble_for(series, &runs)?;
    Ok(ValidationMetrics {
        nll: loss.total,
        mse_db: mse_db(&ens),
        msmd: msmd(&ens)?,
    })
}

/// Everything needed to continue training where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub model: RknModel,
    pub gain_adam: AdamState,
    pub chol_adam: AdamState,
    pub best_gain: Vec<f64>,
    pub best_chol: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub epochs_since_best: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainingState {
    pub fn new(model: RknModel, config: &TrainingConfig) -> Self {
        Self {
            gain_adam: AdamState::new(model.gain_params.len(), config.learning_rate),
            chol_adam: AdamState::new(model.chol_params.len(), config.learning_rate),
            best_gain: model.gain_params.values.clone(),
            best_chol: model.chol_params.values.clone(),
            best_epoch: 0,
            best_val_nll: f64::INFINITY,
            epochs_since_best: 0,
            epoch: 0,
            history: Vec::new(),
            model,
        }
    }

    /// The best-validation parameters in a standalone model.
    pub fn best_model(&self) -> RknModel {
        let mut m = self.model.clone();
        m.gain_params.values.clone_from(&self.best_gain);
        m.chol_params.values.clone_from(&self.best_chol);
        m.zero_grads();
        m
    }

    pub fn stopped_early(&self, config: &TrainingConfig) -> bool {
        config.patience.is_some_and(|p| self.epochs_since_best >= p)
    }
}

fn diverged(epoch: usize, batch: usize, reason: impl ToString) -> Error {
    Error::Diverged {
        epoch,
        batch,
        reason: reason.to_string(),
    }
}

/// Trains from scratch; returns the best-validation model and the history.
pub fn train(
    rkn: RknModel,
    dataset: &Dataset,
    config: &TrainingConfig,
) -> Result<(RknModel, Vec<EpochRecord>)> {
    let state = train_from(TrainingState::new(rkn, config), dataset, config, |_| Ok(()))?;
    Ok((state.best_model(), state.history))
}

/// Runs epochs `state.epoch + 1 ..= config.epochs`, calling `on_epoch` after
/// each. Mini-batch order for epoch `k` depends only on `(seed, k)`, so a
/// resumed run matches an uninterrupted one.
pub fn train_from<F>(
    mut state: TrainingState,
    dataset: &Dataset,
    config: &TrainingConfig,
    mut on_epoch: F,
) -> Result<TrainingState>
where
    F: FnMut(&TrainingState) -> Result<()>,
{
    config.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::InvalidParameter(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let dynamics = dataset.model.known_dynamics();
    state.gain_adam.lr = config.learning_rate;
    state.chol_adam.lr = config.learning_rate;
    while state.epoch < config.epochs && !state.stopped_early(config) {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix64(
            config.seed ^ mix64(epoch as u64),
        )));

        let mut nll_sum = 0.0;
        for (batch_index, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Trajectory> = idx.iter().map(|&i| &dataset.train[i]).collect();
            let model = &mut state.model;
            model.zero_grads();
            let loss = batch_loss_and_gradient(
                model,
                &dynamics,
                &batch,
                &dataset.init_mean,
                &dataset.init_cov,
            )
            .map_err(|e| diverged(epoch, batch_index, e))?;
            if !loss.total.is_finite() {
                return Err(diverged(
                    epoch,
                    batch_index,
                    format!("non-finite loss {}", loss.total),
                ));
            }
            nll_sum += loss.total * batch.len() as f64;
            add_l2_gradient(&mut model.gain_params, config.l2_lambda);
            add_l2_gradient(&mut model.chol_params, config.l2_lambda);
            let norm = clip_global_norm(model, config.clip_norm);
            if !norm.is_finite() {
                return Err(diverged(epoch, batch_index, "non-finite gradient"));
            }
            state.gain_adam.apply(&mut model.gain_params)?;
            state.chol_adam.apply(&mut model.chol_params)?;
        }

        let val = validate_model(&state.model, dataset, &dataset.val)
            .map_err(|e| diverged(epoch, usize::MAX, e))?;
        if !val.nll.is_finite() {
            return Err(diverged(
                epoch,
                usize::MAX,
                format!("non-finite validation loss {}", val.nll),
            ));
        }
        state.history.push(EpochRecord {
            epoch,
            train_nll: nll_sum / dataset.train.len() as f64,
            val_nll: val.nll,
            val_mse_db: val.mse_db,
            val_msmd: val.msmd,
        });
        if val.nll < state.best_val_nll {
            state.best_val_nll = val.nll;
            state.best_epoch = epoch;
            state.best_gain.clone_from(&state.model.gain_params.values);
            state.best_chol.clone_from(&state.model.chol_params.values);
            state.epochs_since_best = 0;
        } else {
            state.epochs_since_best += 1;
        }
        state.epoch = epoch;
        on_epoch(&state)?;
    }
    Ok(state)
}
