//! Minimal recurrent network toolkit: affine layers, GRU cells, a flat
//! parameter store with hand-written reverse-mode gradients, and Adam.
//!
//! Layers run on row-major batches (`batch × features`), so a mini-batch of
//! sequences advances in lockstep through one matrix product per weight.

mod adam;
pub mod autodiff;

pub use adam::{adam_step, AdamState};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Update-gate bias at initialization. With `h' = (1 − z) h + z h̃`, a
/// negative bias keeps `z` below one half so early hidden states move slowly.
pub const GRU_UPDATE_BIAS_INIT: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer sizes: `fc_in` affine layers (with activation), then the GRU stack,
/// then `fc_out` affine layers (with activation), then a linear affine layer
/// to `output_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub fc_in: Vec<usize>,
    pub gru_layers: Vec<usize>,
    pub fc_out: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    /// `affine(in→32) tanh → GRU(64) → affine(64→32) tanh → affine(32→out)`.
    pub fn default_for(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            fc_in: vec![32],
            gru_layers: vec![64],
            fc_out: vec![32],
            output_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self
            .fc_in
            .iter()
            .chain(&self.gru_layers)
            .chain(&self.fc_out);
        if self.input_dim == 0 || self.output_dim == 0 || sizes.clone().any(|&s| s == 0) {
            return Err(Error::InvalidParameter(format!(
                "network layer sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        plan_layers(self)
            .iter()
            .map(LayerPlan::parameter_count)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerKind {
    Affine(Activation),
    Gru,
}

/// One layer's position in the flat parameter vector.
///
/// Affine: `W (out × in)` then `b (out)`. GRU: three blocks for the update
/// gate, reset gate and candidate, each `W (hidden × (in + hidden))` then
/// `b (hidden)`; the weight columns act on `[x, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerPlan {
    kind: LayerKind,
    input: usize,
    output: usize,
    offset: usize,
}

impl LayerPlan {
    fn gate_block(&self) -> usize {
        self.output * (self.input + self.output) + self.output
    }

    fn parameter_count(&self) -> usize {
        match self.kind {
            LayerKind::Affine(_) => self.output * self.input + self.output,
            LayerKind::Gru => 3 * self.gate_block(),
        }
    }
}

fn plan_layers(spec: &NetworkSpec) -> Vec<LayerPlan> {
    let mut plan = Vec::new();
    let mut offset = 0;
    let mut input = spec.input_dim;
    let mut push = |kind, output: usize, input: &mut usize| {
        let layer = LayerPlan {
            kind,
            input: *input,
            output,
            offset,
        };
        offset += layer.parameter_count();
        plan.push(layer);
        *input = output;
    };
    for &size in &spec.fc_in {
        push(LayerKind::Affine(spec.activation), size, &mut input);
    }
    for &size in &spec.gru_layers {
        push(LayerKind::Gru, size, &mut input);
    }
    for &size in &spec.fc_out {
        push(LayerKind::Affine(spec.activation), size, &mut input);
    }
    push(
        LayerKind::Affine(Activation::Identity),
        spec.output_dim,
        &mut input,
    );
    plan
}

/// A named region of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub shape: (usize, usize),
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter values with a same-length gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub layout: Vec<ParamSlice>,
}

impl ParameterStore {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layout = layout_for(spec);
        let len = layout.last().map_or(0, |s| s.offset + s.len());
        Self {
            values: vec![0.0; len],
            grads: vec![0.0; len],
            layout,
        }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        let mut store = Self::zeros(spec);
        if values.len() != store.values.len() {
            return Err(Error::SpecMismatch(format!(
                "expected {} parameters, found {}",
                store.values.len(),
                values.len()
            )));
        }
        store.values = values;
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn slice(&self, name: &str) -> Option<&ParamSlice> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

fn layout_for(spec: &NetworkSpec) -> Vec<ParamSlice> {
    let mut layout = Vec::new();
    for (i, layer) in plan_layers(spec).iter().enumerate() {
        match layer.kind {
            LayerKind::Affine(_) => {
                layout.push(ParamSlice {
                    name: format!("affine{i}.weight"),
                    offset: layer.offset,
                    shape: (layer.output, layer.input),
                });
                layout.push(ParamSlice {
                    name: format!("affine{i}.bias"),
                    offset: layer.offset + layer.output * layer.input,
                    shape: (layer.output, 1),
                });
            }
            LayerKind::Gru => {
                let cols = layer.input + layer.output;
                for (g, gate) in ["update", "reset", "candidate"].iter().enumerate() {
                    let base = layer.offset + g * layer.gate_block();
                    layout.push(ParamSlice {
                        name: format!("gru{i}.{gate}.weight"),
                        offset: base,
                        shape: (layer.output, cols),
                    });
                    layout.push(ParamSlice {
                        name: format!("gru{i}.{gate}.bias"),
                        offset: base + layer.output * cols,
                        shape: (layer.output, 1),
                    });
                }
            }
        }
    }
    layout
}

/// Weights uniform in `±sqrt(1/fan_in)` (fan-in counts `[x, h]` for GRU
/// gates), biases zero except the GRU update gate at
/// [`GRU_UPDATE_BIAS_INIT`]. Deterministic per seed.
pub fn init_parameters(spec: &NetworkSpec, seed: u64) -> ParameterStore {
    let mut store = ParameterStore::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slice in store.layout.clone() {
        let values = &mut store.values[slice.offset..slice.offset + slice.len()];
        if slice.name.ends_with(".weight") {
            let bound = (1.0 / slice.shape.1 as f64).sqrt();
            values
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
        } else if slice.name.ends_with("update.bias") {
            values.iter_mut().for_each(|v| *v = GRU_UPDATE_BIAS_INIT);
        }
    }
    store
}

/// Per-GRU-layer hidden states, each `batch × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<Array2<f64>>,
}

impl HiddenState {
    pub fn zeros(spec: &NetworkSpec, batch: usize) -> Self {
        Self {
            layers: spec
                .gru_layers
                .iter()
                .map(|&h| Array2::zeros((batch, h)))
                .collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Affine {
        input: Array2<f64>,
        output: Array2<f64>,
    },
    Gru {
        /// `[x, h]`
        xh: Array2<f64>,
        /// `[x, r ⊙ h]`
        xrh: Array2<f64>,
        update: Array2<f64>,
        reset: Array2<f64>,
        candidate: Array2<f64>,
    },
}

/// Everything a forward pass records for its backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    caches: Vec<LayerCache>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn weight_view(values: &[f64], offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &values[offset..offset + rows * cols])
        .expect("layout slice")
}

fn weight_view_mut(
    values: &mut [f64],
    offset: usize,
    rows: usize,
    cols: usize,
) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut values[offset..offset + rows * cols])
        .expect("layout slice")
}

fn bias_view(values: &[f64], offset: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&values[offset..offset + len])
}

fn bias_view_mut(values: &mut [f64], offset: usize, len: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut values[offset..offset + len])
}

/// `x Wᵀ + b` for a batch `x`.
fn affine(x: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), w.nrows()));
    general_mat_mul(1.0, x, &w.t(), 0.0, &mut out);
    out += &b;
    out
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn concat_cols(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("equal row counts")
}

/// A network specification with its resolved parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    plan: Vec<LayerPlan>,
    parameter_count: usize,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let plan = plan_layers(&spec);
        let parameter_count = plan.iter().map(LayerPlan::parameter_count).sum();
        Ok(Self {
            spec,
            plan,
            parameter_count,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_count
    }

    pub fn zero_hidden(&self, batch: usize) -> HiddenState {
        HiddenState::zeros(&self.spec, batch)
    }

    fn check_params(&self, params: &ParameterStore) -> Result<()> {
        if params.values.len() != self.parameter_count || params.grads.len() != self.parameter_count
        {
            return Err(Error::SpecMismatch(format!(
                "network has {} parameters, store has {}",
                self.parameter_count,
                params.values.len()
            )));
        }
        Ok(())
    }

    /// One step for a batch: `input` is `batch × input_dim`.
    pub fn forward(
        &self,
        params: &ParameterStore,
        input: ArrayView2<f64>,
        hidden: &HiddenState,
    ) -> Result<(Array2<f64>, HiddenState, Tape)> {
        self.check_params(params)?;
        let batch = input.nrows();
        if input.ncols() != self.spec.input_dim {
            return Err(Error::InvalidParameter(format!(
                "network input has {} features, expected {}",
                input.ncols(),
                self.spec.input_dim
            )));
        }
        if hidden.layers.len() != self.spec.gru_layers.len()
            || hidden
                .layers
                .iter()
                .zip(&self.spec.gru_layers)
                .any(|(h, &s)| h.dim() != (batch, s))
        {
            return Err(Error::InvalidParameter(
                "hidden state does not match network or batch".into(),
            ));
        }
        let values = &params.values;
        let mut caches = Vec::with_capacity(self.plan.len());
        let mut next_hidden = Vec::with_capacity(hidden.layers.len());
        let mut x = input.to_owned();
        let mut gru_index = 0;
        for layer in &self.plan {
            match layer.kind {
                LayerKind::Affine(act) => {
                    let w = weight_view(values, layer.offset, layer.output, layer.input);
                    let b = bias_view(
                        values,
                        layer.offset + layer.output * layer.input,
                        layer.output,
                    );
                    let mut out = affine(&x.view(), w, b);
                    out.mapv_inplace(|v| act.apply(v));
                    caches.push(LayerCache::Affine {
                        input: x,
                        output: out.clone(),
                    });
                    x = out;
                }
                LayerKind::Gru => {
                    let h = &hidden.layers[gru_index];
                    let (hid, cols, block) =
                        (layer.output, layer.input + layer.output, layer.gate_block());
                    let gate = |g: usize, inp: &Array2<f64>| {
                        let base = layer.offset + g * block;
                        affine(
                            &inp.view(),
                            weight_view(values, base, hid, cols),
                            bias_view(values, base + hid * cols, hid),
                        )
                    };
                    let xh = concat_cols(&x.view(), &h.view());
                    let update = gate(0, &xh).mapv_into(sigmoid);
                    let reset = gate(1, &xh).mapv_into(sigmoid);
                    let rh = &reset * h;
                    let xrh = concat_cols(&x.view(), &rh.view());
                    let candidate = gate(2, &xrh).mapv_into(f64::tanh);
                    let new_h = h + &(&update * &(&candidate - h));
                    caches.push(LayerCache::Gru {
                        xh,
                        xrh,
                        update,
                        reset,
                        candidate,
                    });
                    next_hidden.push(new_h.clone());
                    x = new_h;
                    gru_index += 1;
                }
            }
        }
        Ok((
            x,
            HiddenState {
                layers: next_hidden,
            },
            Tape { batch, caches },
        ))
    }

    /// Single-sample convenience wrapper around [`Network::forward`].
    pub fn forward_one(
        &self,
        params: &ParameterStore,
        input: &[f64],
        hidden: &HiddenState,
    ) -> Result<(Vec<f64>, HiddenState, Tape)> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let (out, hidden, tape) = self.forward(params, view, hidden)?;
        Ok((out.into_raw_vec_and_offset().0, hidden, tape))
    }

    /// Accumulates `∂(outputᵀ d_output + Σ h'ᵀ d_hidden)/∂θ` into
    /// `params.grads` and returns the gradients with respect to the input and
    /// the incoming hidden state. `d_hidden` carries the gradient flowing
    /// into this step's outgoing hidden state from later time steps.
    pub fn backward(
        &self,
        params: &mut ParameterStore,
        tape: &Tape,
        d_output: ArrayView2<f64>,
        d_hidden: Option<&HiddenState>,
    ) -> Result<(Array2<f64>, HiddenState)> {
        self.check_params(params)?;
        if tape.caches.len() != self.plan.len() {
            return Err(Error::TapeMismatch(format!(
                "tape has {} layers, network has {}",
                tape.caches.len(),
                self.plan.len()
            )));
        }
        for (layer, cache) in self.plan.iter().zip(&tape.caches) {
            let fits = match (layer.kind, cache) {
                (LayerKind::Affine(_), LayerCache::Affine { input, output }) => {
                    input.dim() == (tape.batch, layer.input)
                        && output.dim() == (tape.batch, layer.output)
                }
                (LayerKind::Gru, LayerCache::Gru { xh, candidate, .. }) => {
                    xh.dim() == (tape.batch, layer.input + layer.output)
                        && candidate.dim() == (tape.batch, layer.output)
                }
                _ => false,
            };
            if !fits {
                return Err(Error::TapeMismatch(
                    "layer shapes differ between tape and network".into(),
                ));
            }
        }
        if d_output.dim() != (tape.batch, self.spec.output_dim) {
            return Err(Error::TapeMismatch(format!(
                "output gradient shape {:?} does not match ({}, {})",
                d_output.dim(),
                tape.batch,
                self.spec.output_dim
            )));
        }
        if let Some(dh) = d_hidden {
            if dh.layers.len() != self.spec.gru_layers.len()
                || dh
                    .layers
                    .iter()
                    .zip(&self.spec.gru_layers)
                    .any(|(h, &s)| h.dim() != (tape.batch, s))
            {
                return Err(Error::TapeMismatch(
                    "hidden gradient does not match the tape".into(),
                ));
            }
        }

        let ParameterStore { values, grads, .. } = params;
        let mut d_prev_hidden: Vec<Array2<f64>> = Vec::with_capacity(self.spec.gru_layers.len());
        let mut gru_index = self.spec.gru_layers.len();
        let mut dx = d_output.to_owned();
        for (layer, cache) in self.plan.iter().zip(&tape.caches).rev() {
            match (layer.kind, cache) {
                (LayerKind::Affine(act), LayerCache::Affine { input, output }) => {
                    let mut da = dx;
                    da.zip_mut_with(output, |d, &o| *d *= act.derivative_from_output(o));
                    let w_off = layer.offset;
                    let b_off = w_off + layer.output * layer.input;
                    {
                        let mut gw = weight_view_mut(grads, w_off, layer.output, layer.input);
                        general_mat_mul(1.0, &da.t(), input, 1.0, &mut gw);
                    }
                    bias_view_mut(grads, b_off, layer.output)
                        .scaled_add(1.0, &da.sum_axis(Axis(0)));
                    let mut d_in = Array2::zeros((tape.batch, layer.input));
                    general_mat_mul(
                        1.0,
                        &da,
                        &weight_view(values, w_off, layer.output, layer.input),
                        0.0,
                        &mut d_in,
                    );
                    dx = d_in;
                }
                (
                    LayerKind::Gru,
                    LayerCache::Gru {
                        xh,
                        xrh,
                        update,
                        reset,
                        candidate,
                    },
                ) => {
                    gru_index -= 1;
                    let (inp, hid) = (layer.input, layer.output);
                    let cols = inp + hid;
                    let block = layer.gate_block();
                    let h = xh.slice(ndarray::s![.., inp..]);

                    let mut dh_new = dx;
                    if let Some(dh) = d_hidden {
                        dh_new += &dh.layers[gru_index];
                    }
                    // h' = h + z ⊙ (h̃ − h)
                    let d_update = &dh_new * &(candidate - &h);
                    let d_candidate = &dh_new * update;
                    let mut dh = &dh_new * &update.mapv(|z| 1.0 - z);

                    let mut gate_backward =
                        |g: usize, da: &Array2<f64>, inputs: &Array2<f64>| -> Array2<f64> {
                            let base = layer.offset + g * block;
                            {
                                let mut gw = weight_view_mut(grads, base, hid, cols);
                                general_mat_mul(1.0, &da.t(), inputs, 1.0, &mut gw);
                            }
                            bias_view_mut(grads, base + hid * cols, hid)
                                .scaled_add(1.0, &da.sum_axis(Axis(0)));
                            let mut d_inputs = Array2::zeros((tape.batch, cols));
                            general_mat_mul(
                                1.0,
                                da,
                                &weight_view(values, base, hid, cols),
                                0.0,
                                &mut d_inputs,
                            );
                            d_inputs
                        };

                    let da_cand = &d_candidate * &candidate.mapv(|c| 1.0 - c * c);
                    let d_xrh = gate_backward(2, &da_cand, xrh);
                    let d_rh = d_xrh.slice(ndarray::s![.., inp..]);
                    let d_reset = &d_rh * &h;
                    dh += &(&d_rh * reset);
                    let mut d_x = d_xrh.slice(ndarray::s![.., ..inp]).to_owned();

                    let da_update = &d_update * &update.mapv(|z| z * (1.0 - z));
                    let d_xh = gate_backward(0, &da_update, xh);
                    let da_reset = &d_reset * &reset.mapv(|r| r * (1.0 - r));
                    let d_xh_r = gate_backward(1, &da_reset, xh);
                    let d_xh = d_xh + d_xh_r;
                    d_x += &d_xh.slice(ndarray::s![.., ..inp]);
                    dh += &d_xh.slice(ndarray::s![.., inp..]);

                    d_prev_hidden.push(dh);
                    dx = d_x;
                }
                _ => unreachable!("tape layers checked above"),
            }
        }
        d_prev_hidden.reverse();
        Ok((
            dx,
            HiddenState {
                layers: d_prev_hidden,
            },
        ))
    }
}

/// One step of a bare GRU cell for a single sample. `params` holds the three
/// gate blocks in store order; returns the new hidden state.
pub fn gru_step(
    params: &[f64],
    input_dim: usize,
    hidden_dim: usize,
    input: &[f64],
    h: &[f64],
) -> Result<(Vec<f64>, Tape)> {
    let spec = NetworkSpec {
        input_dim,
        fc_in: vec![],
        gru_layers: vec![hidden_dim],
        fc_out: vec![],
        output_dim: hidden_dim,
        activation: Activation::Identity,
    };
    let net = Network::new(spec)?;
    let gru_len = net.plan[0].parameter_count();
    if params.len() != gru_len {
        return Err(Error::SpecMismatch(format!(
            "GRU cell expects {gru_len} parameters, got {}",
            params.len()
        )));
    }
    // Identity read-out so the network output equals the new hidden state.
    let mut values = params.to_vec();
    let readout = net.plan[1];
    let mut eye = vec![0.0; readout.parameter_count()];
    for i in 0..hidden_dim {
        eye[i * hidden_dim + i] = 1.0;
    }
    values.extend(eye);
    let store = ParameterStore::from_values(net.spec(), values)?;
    let hidden = HiddenState {
        layers: vec![Array2::from_shape_vec((1, hidden_dim), h.to_vec()).expect("row")],
    };
    let (_, next, tape) = net.forward_one(&store, input, &hidden)?;
    Ok((next.layers[0].row(0).to_vec(), tape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            fc_in: vec![4],
            gru_layers: vec![3],
            fc_out: vec![2],
            output_dim: 2,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn single_affine_layer_counts_parameters() {
        let spec = NetworkSpec {
            input_dim: 2,
            fc_in: vec![],
            gru_layers: vec![],
            fc_out: vec![],
            output_dim: 3,
            activation: Activation::Tanh,
        };
        assert_eq!(spec.parameter_count(), 9);
        let store = ParameterStore::zeros(&spec);
        assert_eq!(store.len(), 9);
        assert_eq!(store.layout.len(), 2);
    }

    #[test]
    fn layout_covers_store_exactly() {
        for spec in [small_spec(), NetworkSpec::default_for(6, 2)] {
            let store = ParameterStore::zeros(&spec);
            let mut next = 0;
            for s in &store.layout {
                assert_eq!(s.offset, next, "{}", s.name);
                next += s.len();
            }
            assert_eq!(next, spec.parameter_count());
            assert_eq!(next, store.values.len());
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let spec = small_spec();
        assert_eq!(init_parameters(&spec, 4), init_parameters(&spec, 4));
        assert_ne!(
            init_parameters(&spec, 4).values,
            init_parameters(&spec, 5).values
        );
        let store = init_parameters(&spec, 4);
        let bias = store.slice("gru1.update.bias").unwrap();
        assert!(store.values[bias.offset..bias.offset + bias.len()]
            .iter()
            .all(|&b| b == GRU_UPDATE_BIAS_INIT));
        let w = store.slice("affine0.weight").unwrap();
        let bound = (1.0f64 / 3.0).sqrt();
        assert!(store.values[w.offset..w.offset + w.len()]
            .iter()
            .all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let net = Network::new(small_spec()).unwrap();
        let store = ParameterStore::zeros(net.spec());
        let (out, _, _) = net
            .forward_one(&store, &[1.0, -2.0, 0.5], &net.zero_hidden(1))
            .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_affine_layer_is_identity() {
        let spec = NetworkSpec {
            input_dim: 3,
            fc_in: vec![],
            gru_layers: vec![],
            fc_out: vec![],
            output_dim: 3,
            activation: Activation::Tanh,
        };
        let net = Network::new(spec.clone()).unwrap();
        let mut values = vec![0.0; 12];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let store = ParameterStore::from_values(&spec, values).unwrap();
        let (out, _, _) = net
            .forward_one(&store, &[0.3, -4.0, 2.0], &net.zero_hidden(1))
            .unwrap();
        assert_eq!(out, vec![0.3, -4.0, 2.0]);
    }

    #[test]
    fn gru_zero_weights_hand_values() {
        // z = σ(0) = 0.5, h̃ = tanh(0) = 0, h' = 0.5·h + 0.5·0.
        let params = vec![0.0; 3 * (1 * 2 + 1)];
        let (h, _) = gru_step(&params, 1, 1, &[0.7], &[1.0]).unwrap();
        assert_eq!(h, vec![0.5]);
        let (h, _) = gru_step(&params, 1, 1, &[0.0], &[0.0]).unwrap();
        assert_eq!(h, vec![0.0]);
    }

    #[test]
    fn zero_output_gradient_accumulates_nothing() {
        let net = Network::new(small_spec()).unwrap();
        let mut store = init_parameters(net.spec(), 1);
        let (_, _, tape) = net
            .forward_one(&store, &[0.1, 0.2, 0.3], &net.zero_hidden(1))
            .unwrap();
        net.backward(&mut store, &tape, Array2::zeros((1, 2)).view(), None)
            .unwrap();
        assert!(store.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let spec = NetworkSpec {
            input_dim: 2,
            fc_in: vec![],
            gru_layers: vec![],
            fc_out: vec![],
            output_dim: 3,
            activation: Activation::Tanh,
        };
        let net = Network::new(spec.clone()).unwrap();
        let mut store = init_parameters(&spec, 9);
        let x = [0.5, -1.5];
        let g = [1.0, -2.0, 0.25];
        let (_, _, tape) = net.forward_one(&store, &x, &net.zero_hidden(1)).unwrap();
        let d_out = Array2::from_shape_vec((1, 3), g.to_vec()).unwrap();
        net.backward(&mut store, &tape, d_out.view(), None).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(store.grads[i * 2 + j], g[i] * x[j]);
            }
            assert_eq!(store.grads[6 + i], g[i]);
        }
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let net = Network::new(small_spec()).unwrap();
        let other = Network::new(NetworkSpec::default_for(3, 2)).unwrap();
        let store = init_parameters(other.spec(), 1);
        let (_, _, tape) = other
            .forward_one(&store, &[0.1, 0.2, 0.3], &other.zero_hidden(1))
            .unwrap();
        let mut mine = init_parameters(net.spec(), 1);
        let r = net.backward(&mut mine, &tape, Array2::zeros((1, 2)).view(), None);
        assert!(matches!(r, Err(Error::TapeMismatch(_))));
    }

    #[test]
    fn forward_is_pure() {
        let net = Network::new(small_spec()).unwrap();
        let store = init_parameters(net.spec(), 3);
        let mut hidden = net.zero_hidden(1);
        hidden.layers[0].fill(0.2);
        let a = net.forward_one(&store, &[0.4, 0.1, -0.3], &hidden).unwrap();
        let b = net.forward_one(&store, &[0.4, 0.1, -0.3], &hidden).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_ne!(a.1, hidden);
    }

    /// Σ_t Σ w_t ⊙ out_t over a short sequence for a batch of two.
    fn sequence_objective(
        net: &Network,
        store: &ParameterStore,
        xs: &[Array2<f64>],
        ws: &[Array2<f64>],
    ) -> f64 {
        let mut hidden = net.zero_hidden(2);
        let mut total = 0.0;
        for (x, w) in xs.iter().zip(ws) {
            let (out, next, _) = net.forward(store, x.view(), &hidden).unwrap();
            total += (&out * w).sum();
            hidden = next;
        }
        total
    }

    #[test]
    fn backward_through_time_matches_finite_differences() {
        let spec = NetworkSpec {
            input_dim: 3,
            fc_in: vec![4],
            gru_layers: vec![3, 2],
            fc_out: vec![3],
            output_dim: 2,
            activation: Activation::Tanh,
        };
        let net = Network::new(spec).unwrap();
        let mut store = init_parameters(net.spec(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
        let xs: Vec<_> = (0..4).map(|_| draw(2, 3)).collect();
        let ws: Vec<_> = (0..4).map(|_| draw(2, 2)).collect();

        let mut hidden = net.zero_hidden(2);
        let mut tapes = Vec::new();
        for x in &xs {
            let (_, next, tape) = net.forward(&store, x.view(), &hidden).unwrap();
            tapes.push(tape);
            hidden = next;
        }
        let mut d_hidden: Option<HiddenState> = None;
        let mut d_inputs = Vec::new();
        for (tape, w) in tapes.iter().zip(&ws).rev() {
            let (dx, dh) = net
                .backward(&mut store, tape, w.view(), d_hidden.as_ref())
                .unwrap();
            d_inputs.push(dx);
            d_hidden = Some(dh);
        }
        d_inputs.reverse();

        let eps = 1e-6;
        for i in 0..store.len() {
            let mut plus = store.clone();
            plus.values[i] += eps;
            let mut minus = store.clone();
            minus.values[i] -= eps;
            let fd = (sequence_objective(&net, &plus, &xs, &ws)
                - sequence_objective(&net, &minus, &xs, &ws))
                / (2.0 * eps);
            assert!(
                (fd - store.grads[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs {}",
                store.grads[i]
            );
        }
        for t in 0..xs.len() {
            for (r, c) in [(0, 0), (1, 2)] {
                let mut xp = xs.clone();
                xp[t][[r, c]] += eps;
                let mut xm = xs.clone();
                xm[t][[r, c]] -= eps;
                let fd = (sequence_objective(&net, &store, &xp, &ws)
                    - sequence_objective(&net, &store, &xm, &ws))
                    / (2.0 * eps);
                assert!((fd - d_inputs[t][[r, c]]).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }
}
