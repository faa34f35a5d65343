//! Recursive KalmanNet: a predictor-corrector whose gain and corrected noise
//! covariance factor come from two recurrent networks fed the same features.
//!
//! Per step, with `J = I − K̂H`:
//!
//! ```text
//! x̂⁻ = F x̂ₜ₋₁            ŷ = z − H x̂⁻
//! x̂ₜ = x̂⁻ + K̂ ŷ
//! P̂ₜ = J F P̂ₜ₋₁ Fᵀ Jᵀ + Ĉ Ĉᵀ
//! ```
//!
//! The estimator only sees `F`, `H`, `dt` and the measurements.

use crate::error::{Error, Result};
use crate::kalman::FilterRun;
use crate::neural::{init_parameters, HiddenState, Network, NetworkSpec, ParameterStore, Tape};
use crate::numerics::{packed_index, packed_len, LowerTriangular, Matrix};
use crate::statespace::{mix64, KnownDynamics};
use ndarray::{Array2, ArrayView2, Axis};

/// Length of the concatenated feature vector for `m` states and `n`
/// measurements.
pub fn feature_dim(m: usize, n: usize) -> usize {
    n + m + n * m + n
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Innovation `z − H F x̂ₜ₋₁`.
    pub innovation: Vec<f64>,
    /// Previous correction `K̂ₜ₋₁ ŷₜ₋₁`.
    pub prev_correction: Vec<f64>,
    /// Row-major `H`.
    pub observation_matrix: Vec<f64>,
    /// `zₜ − zₜ₋₁`.
    pub measurement_diff: Vec<f64>,
    pub squared: bool,
}

impl FeatureVector {
    pub fn raw(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(&self.innovation);
        v.extend(&self.prev_correction);
        v.extend(&self.observation_matrix);
        v.extend(&self.measurement_diff);
        v
    }

    /// The network input: [`FeatureVector::raw`], squared elementwise when
    /// `squared` is set.
    pub fn values(&self) -> Vec<f64> {
        let raw = self.raw();
        if self.squared {
            raw.into_iter().map(|v| v * v).collect()
        } else {
            raw
        }
    }

    pub fn len(&self) -> usize {
        self.innovation.len()
            + self.prev_correction.len()
            + self.observation_matrix.len()
            + self.measurement_diff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The two networks and their parameters (`Θ1` for the gain, `Θ2` for the
/// Cholesky factor).
#[derive(Debug, Clone, PartialEq)]
pub struct RknModel {
    state_dim: usize,
    measurement_dim: usize,
    squared_features: bool,
    gain_net: Network,
    chol_net: Network,
    pub gain_params: ParameterStore,
    pub chol_params: ParameterStore,
}

impl RknModel {
    /// Default specs: see [`NetworkSpec::default_for`].
    pub fn default_specs(m: usize, n: usize) -> (NetworkSpec, NetworkSpec) {
        let d = feature_dim(m, n);
        (
            NetworkSpec::default_for(d, m * n),
            NetworkSpec::default_for(d, packed_len(m)),
        )
    }

    pub fn from_parts(
        state_dim: usize,
        measurement_dim: usize,
        squared_features: bool,
        gain_params: ParameterStore,
        gain_spec: NetworkSpec,
        chol_params: ParameterStore,
        chol_spec: NetworkSpec,
    ) -> Result<Self> {
        let d = feature_dim(state_dim, measurement_dim);
        if gain_spec.input_dim != d || chol_spec.input_dim != d {
            return Err(Error::SpecMismatch(format!(
                "network inputs must have {d} features"
            )));
        }
        if gain_spec.output_dim != state_dim * measurement_dim {
            return Err(Error::SpecMismatch(format!(
                "gain head must output {} values, spec has {}",
                state_dim * measurement_dim,
                gain_spec.output_dim
            )));
        }
        if chol_spec.output_dim != packed_len(state_dim) {
            return Err(Error::SpecMismatch(format!(
                "Cholesky head must output {} values, spec has {}",
                packed_len(state_dim),
                chol_spec.output_dim
            )));
        }
        let gain_net = Network::new(gain_spec)?;
        let chol_net = Network::new(chol_spec)?;
        for (net, store, name) in [
            (&gain_net, &gain_params, "gain"),
            (&chol_net, &chol_params, "Cholesky"),
        ] {
            if store.len() != net.parameter_count() || store.grads.len() != store.len() {
                return Err(Error::SpecMismatch(format!(
                    "{name} network has {} parameters, store has {}",
                    net.parameter_count(),
                    store.len()
                )));
            }
        }
        Ok(Self {
            state_dim,
            measurement_dim,
            squared_features,
            gain_net,
            chol_net,
            gain_params,
            chol_params,
        })
    }

    /// Fresh parameters; the two networks draw from independent streams
    /// derived from `seed`.
    pub fn initialize(
        state_dim: usize,
        measurement_dim: usize,
        squared_features: bool,
        gain_spec: NetworkSpec,
        chol_spec: NetworkSpec,
        seed: u64,
    ) -> Result<Self> {
        gain_spec.validate()?;
        chol_spec.validate()?;
        let gain_params = init_parameters(&gain_spec, mix64(seed ^ 0x6761_696e));
        let chol_params = init_parameters(&chol_spec, mix64(seed ^ 0x6368_6f6c));
        Self::from_parts(
            state_dim,
            measurement_dim,
            squared_features,
            gain_params,
            gain_spec,
            chol_params,
            chol_spec,
        )
    }

    /// All-zero parameters.
    pub fn zeros(
        state_dim: usize,
        measurement_dim: usize,
        squared_features: bool,
        gain_spec: NetworkSpec,
        chol_spec: NetworkSpec,
    ) -> Result<Self> {
        gain_spec.validate()?;
        chol_spec.validate()?;
        let gain_params = ParameterStore::zeros(&gain_spec);
        let chol_params = ParameterStore::zeros(&chol_spec);
        Self::from_parts(
            state_dim,
            measurement_dim,
            squared_features,
            gain_params,
            gain_spec,
            chol_params,
            chol_spec,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement_dim
    }

    pub fn squared_features(&self) -> bool {
        self.squared_features
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.state_dim, self.measurement_dim)
    }

    pub fn gain_net(&self) -> &Network {
        &self.gain_net
    }

    pub fn chol_net(&self) -> &Network {
        &self.chol_net
    }

    pub fn parameter_count(&self) -> usize {
        self.gain_params.len() + self.chol_params.len()
    }

    pub fn zero_grads(&mut self) {
        self.gain_params.zero_grads();
        self.chol_params.zero_grads();
    }

    fn check_dynamics(&self, dynamics: &KnownDynamics<f64>) -> Result<()> {
        if dynamics.state_dim() != self.state_dim
            || dynamics.measurement_dim() != self.measurement_dim
        {
            return Err(Error::InvalidParameter(format!(
                "model is {}×{}, estimator expects {}×{}",
                dynamics.state_dim(),
                dynamics.measurement_dim(),
                self.state_dim,
                self.measurement_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RknFilterState {
    pub x_hat: Vec<f64>,
    pub p: Matrix<f64>,
    pub gain_hidden: HiddenState,
    pub chol_hidden: HiddenState,
    pub prev_correction: Vec<f64>,
    pub prev_measurement: Vec<f64>,
    /// Number of steps taken so far; 0 before the first measurement.
    pub t: usize,
}

impl RknFilterState {
    pub fn initial(rkn: &RknModel, init_mean: &[f64], init_cov: &Matrix<f64>) -> Result<Self> {
        let m = rkn.state_dim;
        if init_mean.len() != m || init_cov.shape() != (m, m) {
            return Err(Error::InvalidParameter(format!(
                "initial state must be {m}-dimensional"
            )));
        }
        Ok(Self {
            x_hat: init_mean.to_vec(),
            p: init_cov.clone(),
            gain_hidden: rkn.gain_net.zero_hidden(1),
            chol_hidden: rkn.chol_net.zero_hidden(1),
            prev_correction: vec![0.0; m],
            prev_measurement: vec![0.0; rkn.measurement_dim],
            t: 0,
        })
    }
}

/// Features for the step that consumes `z`. On the first step the previous
/// correction and measurement difference are zero.
pub fn compute_features(
    state: &RknFilterState,
    z: &[f64],
    dynamics: &KnownDynamics<f64>,
    squared: bool,
) -> FeatureVector {
    let x_pred = dynamics.f.mul_vec(&state.x_hat);
    let hx = dynamics.h.mul_vec(&x_pred);
    let innovation = z.iter().zip(&hx).map(|(a, b)| a - b).collect();
    let (prev_correction, measurement_diff) = if state.t == 0 {
        (vec![0.0; state.x_hat.len()], vec![0.0; z.len()])
    } else {
        (
            state.prev_correction.clone(),
            z.iter()
                .zip(&state.prev_measurement)
                .map(|(a, b)| a - b)
                .collect(),
        )
    };
    FeatureVector {
        innovation,
        prev_correction,
        observation_matrix: dynamics.h.as_slice().to_vec(),
        measurement_diff,
        squared,
    }
}

fn as_row(values: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, values.len()), values).expect("row vector")
}

fn check_features(rkn: &RknModel, features: &FeatureVector) -> Result<()> {
    if features.len() != rkn.feature_dim() {
        return Err(Error::InvalidParameter(format!(
            "feature vector has length {}, expected {}",
            features.len(),
            rkn.feature_dim()
        )));
    }
    Ok(())
}

/// Gain network forward pass; output reshaped row-major to `m × n`.
pub fn estimate_gain(
    rkn: &RknModel,
    features: &FeatureVector,
    hidden: &HiddenState,
) -> Result<(Matrix<f64>, HiddenState)> {
    check_features(rkn, features)?;
    let (out, next, _) =
        rkn.gain_net
            .forward(&rkn.gain_params, as_row(&features.values()), hidden)?;
    let k = Matrix::new(
        rkn.state_dim,
        rkn.measurement_dim,
        out.into_raw_vec_and_offset().0,
    )?;
    Ok((k, next))
}

/// Packs raw Cholesky-head outputs; diagonal entries go through softplus.
pub fn cholesky_from_outputs(m: usize, outputs: &[f64]) -> Result<LowerTriangular<f64>> {
    let mut packed = outputs.to_vec();
    for i in 0..m.min(packed.len()) {
        let idx = packed_index(i, i);
        if idx < packed.len() {
            packed[idx] = softplus(packed[idx]);
        }
    }
    Ok(LowerTriangular::from_packed(m, packed)?)
}

/// Cholesky network forward pass.
pub fn estimate_cholesky(
    rkn: &RknModel,
    features: &FeatureVector,
    hidden: &HiddenState,
) -> Result<(LowerTriangular<f64>, HiddenState)> {
    check_features(rkn, features)?;
    let (out, next, _) =
        rkn.chol_net
            .forward(&rkn.chol_params, as_row(&features.values()), hidden)?;
    Ok((
        cholesky_from_outputs(rkn.state_dim, out.as_slice().expect("contiguous"))?,
        next,
    ))
}

/// `P̂ = (I − K̂H) F P_prev Fᵀ (I − K̂H)ᵀ + Ĉ Ĉᵀ`, symmetrized.
pub fn covariance_update(
    k: &Matrix<f64>,
    dynamics: &KnownDynamics<f64>,
    p_prev: &Matrix<f64>,
    c: &LowerTriangular<f64>,
) -> Matrix<f64> {
    let j = Matrix::identity(k.rows()).sub(&k.matmul(&dynamics.h));
    j.sandwich(&dynamics.f.sandwich(p_prev))
        .add(&c.gram())
        .symmetrize()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub features: FeatureVector,
    pub gain: Matrix<f64>,
    pub cholesky: LowerTriangular<f64>,
    pub innovation: Vec<f64>,
    pub correction: Vec<f64>,
}

pub fn rkn_step(
    state: &RknFilterState,
    z: &[f64],
    dynamics: &KnownDynamics<f64>,
    rkn: &RknModel,
) -> Result<(RknFilterState, StepRecord)> {
    rkn.check_dynamics(dynamics)?;
    if z.len() != rkn.measurement_dim {
        return Err(Error::InvalidParameter(format!(
            "measurement must have {} entries",
            rkn.measurement_dim
        )));
    }
    let x_pred = dynamics.f.mul_vec(&state.x_hat);
    let features = compute_features(state, z, dynamics, rkn.squared_features);
    let (gain, gain_hidden) = estimate_gain(rkn, &features, &state.gain_hidden)?;
    let (cholesky, chol_hidden) = estimate_cholesky(rkn, &features, &state.chol_hidden)?;
    let innovation = features.innovation.clone();
    let correction = gain.mul_vec(&innovation);
    let x_hat = x_pred.iter().zip(&correction).map(|(a, b)| a + b).collect();
    let p = covariance_update(&gain, dynamics, &state.p, &cholesky);
    let next = RknFilterState {
        x_hat,
        p,
        gain_hidden,
        chol_hidden,
        prev_correction: correction.clone(),
        prev_measurement: z.to_vec(),
        t: state.t + 1,
    };
    Ok((
        next,
        StepRecord {
            features,
            gain,
            cholesky,
            innovation,
            correction,
        },
    ))
}

/// Folds [`rkn_step`] over `measurements` from `(x̂₀|₀, P̂₀|₀)` and zero
/// hidden states.
pub fn run_rkn(
    rkn: &RknModel,
    dynamics: &KnownDynamics<f64>,
    measurements: &[Vec<f64>],
    init_mean: &[f64],
    init_cov: &Matrix<f64>,
) -> Result<FilterRun<f64>> {
    if measurements.is_empty() {
        return Err(Error::InvalidParameter(
            "measurement sequence is empty".into(),
        ));
    }
    let mut state = RknFilterState::initial(rkn, init_mean, init_cov)?;
    let mut run = FilterRun::with_capacity(measurements.len());
    for z in measurements {
        let (next, record) = rkn_step(&state, z, dynamics, rkn)?;
        state = next;
        run.x_hat.push(state.x_hat.clone());
        run.p.push(state.p.clone());
        run.gain.push(record.gain);
        run.innovation.push(record.innovation);
    }
    Ok(run)
}

/// A batch of equal-length sequences run in lockstep. Per-step buffers are
/// flat and sequence-major: `x_hat[t][b·m + i]`, `p[t][b·m² + i·m + j]`,
/// `gain[t][b·m·n + i·n + j]`.
#[derive(Debug, Clone)]
pub struct BatchRollout {
    batch: usize,
    m: usize,
    n: usize,
    pub x_hat: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub gain: Vec<Vec<f64>>,
    pub innovation: Vec<Vec<f64>>,
    init_cov: Matrix<f64>,
    /// Present only when the rollout was taped for a backward pass.
    trace: Option<RolloutTrace>,
}

#[derive(Debug, Clone)]
struct RolloutTrace {
    raw_features: Vec<Array2<f64>>,
    chol_outputs: Vec<Array2<f64>>,
    gain_tapes: Vec<Tape>,
    chol_tapes: Vec<Tape>,
}

impl BatchRollout {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn horizon(&self) -> usize {
        self.x_hat.len()
    }

    pub fn x_hat_at(&self, t: usize, b: usize) -> &[f64] {
        &self.x_hat[t][b * self.m..(b + 1) * self.m]
    }

    pub fn p_at(&self, t: usize, b: usize) -> Matrix<f64> {
        let mm = self.m * self.m;
        Matrix::new(self.m, self.m, self.p[t][b * mm..(b + 1) * mm].to_vec())
            .expect("finite covariance")
    }

    fn p_prev_at(&self, t: usize, b: usize) -> Matrix<f64> {
        if t == 0 {
            self.init_cov.clone()
        } else {
            self.p_at(t - 1, b)
        }
    }

    pub fn gain_at(&self, t: usize, b: usize) -> Matrix<f64> {
        let mn = self.m * self.n;
        Matrix::new(self.m, self.n, self.gain[t][b * mn..(b + 1) * mn].to_vec())
            .expect("finite gain")
    }

    pub fn innovation_at(&self, t: usize, b: usize) -> &[f64] {
        &self.innovation[t][b * self.n..(b + 1) * self.n]
    }

    /// Sequence `b` as a [`FilterRun`].
    pub fn run(&self, b: usize) -> FilterRun<f64> {
        let mut run = FilterRun::with_capacity(self.horizon());
        for t in 0..self.horizon() {
            run.x_hat.push(self.x_hat_at(t, b).to_vec());
            run.p.push(self.p_at(t, b));
            run.gain.push(self.gain_at(t, b));
            run.innovation.push(self.innovation_at(t, b).to_vec());
        }
        run
    }

    pub fn is_taped(&self) -> bool {
        self.trace.is_some()
    }
}

fn non_finite(t: usize, what: &str) -> Error {
    Error::InvalidParameter(format!("non-finite {what} at t = {}", t + 1))
}

/// Runs every sequence in `batch` through the estimator together. With
/// `taped`, records what [`backward_rollout`] needs.
pub fn rollout(
    rkn: &RknModel,
    dynamics: &KnownDynamics<f64>,
    batch: &[&[Vec<f64>]],
    init_mean: &[f64],
    init_cov: &Matrix<f64>,
    taped: bool,
) -> Result<BatchRollout> {
    rkn.check_dynamics(dynamics)?;
    let (m, n) = (rkn.state_dim, rkn.measurement_dim);
    let bsz = batch.len();
    let horizon = batch.first().map_or(0, |s| s.len());
    if bsz == 0 || horizon == 0 {
        return Err(Error::InvalidParameter(
            "rollout needs at least one non-empty sequence".into(),
        ));
    }
    if batch
        .iter()
        .any(|s| s.len() != horizon || s.iter().any(|z| z.len() != n))
    {
        return Err(Error::InvalidParameter(
            "sequences in a batch must share length and measurement size".into(),
        ));
    }
    if init_mean.len() != m || init_cov.shape() != (m, m) {
        return Err(Error::InvalidParameter(format!(
            "initial state must be {m}-dimensional"
        )));
    }
    let d = rkn.feature_dim();
    let (f, h) = (&dynamics.f, &dynamics.h);
    let mut out = BatchRollout {
        batch: bsz,
        m,
        n,
        x_hat: Vec::with_capacity(horizon),
        p: Vec::with_capacity(horizon),
        gain: Vec::with_capacity(horizon),
        innovation: Vec::with_capacity(horizon),
        init_cov: init_cov.clone(),
        trace: None,
    };
    let mut trace = RolloutTrace {
        raw_features: Vec::new(),
        chol_outputs: Vec::new(),
        gain_tapes: Vec::new(),
        chol_tapes: Vec::new(),
    };
    let mut gain_hidden = rkn.gain_net.zero_hidden(bsz);
    let mut chol_hidden = rkn.chol_net.zero_hidden(bsz);
    let mut corrections = vec![0.0; bsz * m];

    for t in 0..horizon {
        let mut raw = Array2::zeros((bsz, d));
        let mut x_preds = Vec::with_capacity(bsz * m);
        let mut innovations = Vec::with_capacity(bsz * n);
        for (b, seq) in batch.iter().enumerate() {
            let x_prev = if t == 0 {
                init_mean
            } else {
                out.x_hat_at(t - 1, b)
            };
            let x_pred = f.mul_vec(x_prev);
            let hx = h.mul_vec(&x_pred);
            let z = &seq[t];
            let mut row = raw.row_mut(b);
            for i in 0..n {
                row[i] = z[i] - hx[i];
                innovations.push(row[i]);
            }
            if t > 0 {
                for i in 0..m {
                    row[n + i] = corrections[b * m + i];
                }
                for i in 0..n {
                    row[n + m + n * m + i] = z[i] - seq[t - 1][i];
                }
            }
            for (i, &v) in h.as_slice().iter().enumerate() {
                row[n + m + i] = v;
            }
            x_preds.extend(x_pred);
        }
        let features = if rkn.squared_features {
            raw.mapv(|v| v * v)
        } else {
            raw.clone()
        };
        let (gain_out, next_gain_hidden, gain_tape) =
            rkn.gain_net
                .forward(&rkn.gain_params, features.view(), &gain_hidden)?;
        let (chol_out, next_chol_hidden, chol_tape) =
            rkn.chol_net
                .forward(&rkn.chol_params, features.view(), &chol_hidden)?;
        gain_hidden = next_gain_hidden;
        chol_hidden = next_chol_hidden;
        if gain_out.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(t, "gain"));
        }
        if chol_out.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(t, "Cholesky factor"));
        }

        let mut x_hat = Vec::with_capacity(bsz * m);
        let mut p = Vec::with_capacity(bsz * m * m);
        for b in 0..bsz {
            let k = Matrix::new(m, n, gain_out.row(b).to_vec())?;
            let y = &innovations[b * n..(b + 1) * n];
            let corr = k.mul_vec(y);
            for i in 0..m {
                corrections[b * m + i] = corr[i];
                x_hat.push(x_preds[b * m + i] + corr[i]);
            }
            let c = cholesky_from_outputs(m, chol_out.row(b).as_slice().expect("contiguous row"))?;
            let p_prev = out.p_prev_at(t, b);
            let p_new = covariance_update(&k, dynamics, &p_prev, &c);
            if !p_new.is_finite() {
                return Err(non_finite(t, "covariance"));
            }
            p.extend_from_slice(p_new.as_slice());
        }
        out.x_hat.push(x_hat);
        out.p.push(p);
        out.gain.push(gain_out.into_raw_vec_and_offset().0);
        out.innovation.push(innovations);
        if taped {
            trace.raw_features.push(raw);
            trace.chol_outputs.push(chol_out);
            trace.gain_tapes.push(gain_tape);
            trace.chol_tapes.push(chol_tape);
        }
    }
    if taped {
        out.trace = Some(trace);
    }
    Ok(out)
}

/// Backpropagates a loss through a taped rollout, accumulating into
/// `rkn.gain_params.grads` and `rkn.chol_params.grads`.
///
/// `d_x_hat[t]` and `d_p[t]` hold `∂L/∂x̂ₜ` and `∂L/∂P̂ₜ` in the rollout's
/// buffer layout. Gradients flow through the state, the covariance
/// recursion, the fed-back correction and both networks' hidden states.
pub fn backward_rollout(
    rkn: &mut RknModel,
    dynamics: &KnownDynamics<f64>,
    rollout: &BatchRollout,
    d_x_hat: &[Vec<f64>],
    d_p: &[Vec<f64>],
) -> Result<()> {
    let trace = rollout
        .trace
        .as_ref()
        .ok_or_else(|| Error::TapeMismatch("rollout was not taped".into()))?;
    let (m, n, bsz) = (rollout.m, rollout.n, rollout.batch);
    let horizon = rollout.horizon();
    if d_x_hat.len() != horizon
        || d_p.len() != horizon
        || d_x_hat.iter().any(|g| g.len() != bsz * m)
        || d_p.iter().any(|g| g.len() != bsz * m * m)
    {
        return Err(Error::TapeMismatch(
            "loss gradients do not match the rollout".into(),
        ));
    }
    let (f, h) = (&dynamics.f, &dynamics.h);
    let identity = Matrix::identity(m);
    let packed = packed_len(m);

    let mut gx = vec![0.0; bsz * m];
    let mut gp = vec![0.0; bsz * m * m];
    let mut gcorr = vec![0.0; bsz * m];
    let mut gain_dh: Option<HiddenState> = None;
    let mut chol_dh: Option<HiddenState> = None;

    for t in (0..horizon).rev() {
        gx.iter_mut().zip(&d_x_hat[t]).for_each(|(a, b)| *a += b);
        gp.iter_mut().zip(&d_p[t]).for_each(|(a, b)| *a += b);

        let mut d_gain_out = Array2::zeros((bsz, m * n));
        let mut d_chol_out = Array2::zeros((bsz, packed));
        let mut gy_all = vec![0.0; bsz * n];
        let mut gp_prev = vec![0.0; bsz * m * m];
        let chol_raw = &trace.chol_outputs[t];
        for b in 0..bsz {
            let k = rollout.gain_at(t, b);
            let y = rollout.innovation_at(t, b);
            let gp_b = Matrix::new(m, m, gp[b * m * m..(b + 1) * m * m].to_vec())?;
            let gs = gp_b.symmetrize();

            // B̂ = C Cᵀ
            let outputs = chol_raw.row(b);
            let c =
                cholesky_from_outputs(m, outputs.as_slice().expect("contiguous row"))?.to_matrix();
            let gc = gs.matmul(&c).scale(2.0);
            for i in 0..m {
                for j in 0..=i {
                    let idx = packed_index(i, j);
                    let mut v = gc[(i, j)];
                    if i == j {
                        v *= sigmoid(outputs[idx]);
                    }
                    d_chol_out[[b, idx]] = v;
                }
            }

            // A = J M Jᵀ with M = F P_prev Fᵀ
            let mmat = f.sandwich(&rollout.p_prev_at(t, b));
            let j = identity.sub(&k.matmul(h));
            let gj = gs.matmul(&j).matmul(&mmat).scale(2.0);
            let gm = j.transpose().matmul(&gs).matmul(&j);
            let gprev = f.transpose().matmul(&gm).matmul(f);
            gp_prev[b * m * m..(b + 1) * m * m].copy_from_slice(gprev.as_slice());
            let mut gk = gj.matmul_t(h).scale(-1.0);

            // x̂ = x̂⁻ + K y, and K y is fed back as the next step's feature
            let gsum: Vec<f64> = (0..m).map(|i| gx[b * m + i] + gcorr[b * m + i]).collect();
            gk = gk.add(&Matrix::outer(&gsum, y));
            let gy = k.tr_mul_vec(&gsum);
            gy_all[b * n..(b + 1) * n].copy_from_slice(&gy);
            for (dst, src) in d_gain_out.row_mut(b).iter_mut().zip(gk.as_slice()) {
                *dst = *src;
            }
        }

        let (d_feat_gain, next_gain_dh) = rkn.gain_net.backward(
            &mut rkn.gain_params,
            &trace.gain_tapes[t],
            d_gain_out.view(),
            gain_dh.as_ref(),
        )?;
        let (d_feat_chol, next_chol_dh) = rkn.chol_net.backward(
            &mut rkn.chol_params,
            &trace.chol_tapes[t],
            d_chol_out.view(),
            chol_dh.as_ref(),
        )?;
        gain_dh = Some(next_gain_dh);
        chol_dh = Some(next_chol_dh);
        let mut d_raw = d_feat_gain + d_feat_chol;
        if rkn.squared_features {
            d_raw.zip_mut_with(&trace.raw_features[t], |g, &r| *g *= 2.0 * r);
        }

        let mut next_gx = vec![0.0; bsz * m];
        for (b, d_row) in d_raw.axis_iter(Axis(0)).enumerate() {
            let gy: Vec<f64> = (0..n).map(|i| gy_all[b * n + i] + d_row[i]).collect();
            for i in 0..m {
                gcorr[b * m + i] = d_row[n + i];
            }
            // y = z − H F x̂ₜ₋₁
            let ht_gy = h.tr_mul_vec(&gy);
            let gx_pred: Vec<f64> = (0..m).map(|i| gx[b * m + i] - ht_gy[i]).collect();
            next_gx[b * m..(b + 1) * m].copy_from_slice(&f.tr_mul_vec(&gx_pred));
        }
        gx = next_gx;
        gp = gp_prev;
    }
    Ok(())
}
