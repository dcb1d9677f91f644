//! Dense feedforward networks with input prescaling and optional batch
//! normalization, evaluated on whole mini-batches with a hand-written reverse
//! pass.
//!
//! A network with neuron-layer sizes `m_0, …, m_L` computes
//!
//! ```text
//! N(x) = ρ_L ∘ A_L ∘ … ∘ ρ_1 ∘ A_1 (prescale(x)),   A_l(h) = W_l h + b_l
//! ```
//!
//! with an optional batch-norm transform in front of any `A_l`.
//!
//! All trainable values of every network live in one [`ParamCollection`]. Each
//! network owns a contiguous range laid out layer by layer as
//! `[γ_l, β_l]` (only where batch norm is enabled), then `W_l` (row-major,
//! `m_l × m_{l-1}`), then `b_l`.

pub mod batchnorm;
pub mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use batchnorm::BatchStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    /// Exponential linear unit with α = 1.
    Elu,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prescale {
    pub center: Vec<f64>,
    pub halfwidth: Vec<f64>,
}

impl Prescale {
    pub fn identity(width: usize) -> Self {
        Self { center: vec![0.0; width], halfwidth: vec![1.0; width] }
    }
}

/// `(x − center) / halfwidth`.
pub fn prescale(x: f64, center: f64, halfwidth: f64) -> f64 {
    (x - center) / halfwidth
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    /// Affine-layer indices (0-based) whose input is normalized.
    pub positions: Vec<usize>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self { positions: vec![], epsilon: 1e-5, momentum: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Neuron-layer sizes `m_0 … m_L`.
    pub sizes: Vec<usize>,
    /// One activation per affine layer (`L` entries).
    pub activations: Vec<Activation>,
    pub prescale: Prescale,
    #[serde(default)]
    pub batchnorm: Option<BatchNormConfig>,
}

impl NetworkSpec {
    /// Hidden layers share one activation; the output layer is the identity.
    pub fn dense(sizes: Vec<usize>, hidden: Activation, prescale: Prescale) -> Self {
        let l = sizes.len().saturating_sub(1);
        let mut activations = vec![hidden; l];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        Self { sizes, activations, prescale, batchnorm: None }
    }

    pub fn with_batchnorm(mut self, cfg: BatchNormConfig) -> Self {
        self.batchnorm = Some(cfg);
        self
    }

    pub fn depth(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.iter().any(|&m| m == 0) {
            return Err(Error::config("network needs at least one affine layer and non-empty layers"));
        }
        if self.activations.len() != self.depth() {
            return Err(Error::config(format!(
                "network has {} affine layers but {} activations",
                self.depth(),
                self.activations.len()
            )));
        }
        let m0 = self.input_width();
        if self.prescale.center.len() != m0 || self.prescale.halfwidth.len() != m0 {
            return Err(Error::config("prescale width does not match the network input"));
        }
        if self.prescale.halfwidth.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::config("prescale halfwidth must be positive"));
        }
        if let Some(bn) = &self.batchnorm {
            if bn.positions.iter().any(|&p| p >= self.depth()) {
                return Err(Error::config("batch-norm position beyond the last affine layer"));
            }
            if !(bn.epsilon > 0.0) {
                return Err(Error::config("batch-norm epsilon must be positive"));
            }
            if !(0.0..1.0).contains(&bn.momentum) {
                return Err(Error::config("batch-norm momentum must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn bn_at(&self, l: usize) -> bool {
        self.batchnorm.as_ref().is_some_and(|b| b.positions.contains(&l))
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        (0..self.depth())
            .map(|l| {
                let (mi, mo) = (self.sizes[l], self.sizes[l + 1]);
                mi * mo + mo + if self.bn_at(l) { 2 * mi } else { 0 }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named tensor view used by [`ParamCollection::unflatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// The flat parameter vector Θ with its shape table.
///
/// Every mutable access bumps an epoch counter so that tapes recorded against
/// older values are rejected.
#[derive(Debug, Clone, Default)]
pub struct ParamCollection {
    values: Vec<f64>,
    blocks: Vec<ParamBlock>,
    epoch: u64,
}

impl ParamCollection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> usize {
        let block = ParamBlock { name: name.into(), offset: self.values.len(), shape };
        assert_eq!(block.len(), data.len(), "parameter block {} has wrong length", block.name);
        self.values.extend_from_slice(data);
        let offset = block.offset;
        self.blocks.push(block);
        self.epoch += 1;
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.epoch += 1;
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::usage(format!(
                "parameter vector has length {}, expected {}",
                values.len(),
                self.values.len()
            )));
        }
        self.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn unflatten(&self) -> Vec<Tensor> {
        self.blocks
            .iter()
            .map(|b| Tensor {
                name: b.name.clone(),
                shape: b.shape.clone(),
                data: self.values[b.offset..b.offset + b.len()].to_vec(),
            })
            .collect()
    }

    pub fn flatten(tensors: &[Tensor]) -> Self {
        let mut p = Self::new();
        for t in tensors {
            p.push(t.name.clone(), t.shape.clone(), &t.data);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
struct LayerLayout {
    bn: Option<usize>,
    w: usize,
    b: usize,
    m_in: usize,
    m_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub populated: bool,
}

#[derive(Debug)]
struct LayerTape {
    /// Input before batch norm (only when batch norm is active at this layer).
    bn_input: Option<Vec<f64>>,
    xhat: Option<Vec<f64>>,
    stats: Option<BatchStats>,
    h: Vec<f64>,
    z: Vec<f64>,
    a: Vec<f64>,
}

/// Intermediates of one batched forward evaluation.
#[derive(Debug)]
pub struct Tape {
    net_id: usize,
    epoch: u64,
    batch: usize,
    mode: Mode,
    layers: Vec<LayerTape>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        &self.layers.last().unwrap().a
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    spec: NetworkSpec,
    offset: usize,
    layers: Vec<LayerLayout>,
    running: Vec<Option<RunningStats>>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

impl Network {
    /// Allocates this network's parameters at the end of `params` with
    /// Glorot-uniform weights, zero biases, and `γ = 1, β = 0`.
    pub fn new(spec: NetworkSpec, name: &str, params: &mut ParamCollection, rng: &RandomStream) -> Result<Self> {
        spec.validate()?;
        let mut r = rng.rng();
        let offset = params.len();
        let mut layers = Vec::with_capacity(spec.depth());
        let mut running = Vec::with_capacity(spec.depth());
        for l in 0..spec.depth() {
            let (mi, mo) = (spec.sizes[l], spec.sizes[l + 1]);
            let bn = if spec.bn_at(l) {
                let off = params.push(format!("{name}.bn{l}.gamma"), vec![mi], &vec![1.0; mi]);
                params.push(format!("{name}.bn{l}.beta"), vec![mi], &vec![0.0; mi]);
                running.push(Some(RunningStats { mean: vec![0.0; mi], var: vec![1.0; mi], populated: false }));
                Some(off)
            } else {
                running.push(None);
                None
            };
            let w = params.push(format!("{name}.w{l}"), vec![mo, mi], &glorot(&mut r, mi, mo, mi * mo));
            let b = params.push(format!("{name}.b{l}"), vec![mo], &vec![0.0; mo]);
            layers.push(LayerLayout { bn, w, b, m_in: mi, m_out: mo });
        }
        Ok(Self { name: name.to_string(), spec, offset, layers, running })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Range of this network inside the parameter vector.
    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.spec.param_count()
    }

    pub fn running_stats(&self) -> impl Iterator<Item = &RunningStats> {
        self.running.iter().flatten()
    }

    pub fn running_stats_mut(&mut self) -> impl Iterator<Item = &mut RunningStats> {
        self.running.iter_mut().flatten()
    }

    /// Sets the output layer's weights and biases to zero so that the network
    /// is identically zero.
    pub fn zero_output(&self, params: &mut ParamCollection) {
        let last = self.layers.last().unwrap();
        let v = params.values_mut();
        v[last.w..last.w + last.m_in * last.m_out].fill(0.0);
        v[last.b..last.b + last.m_out].fill(0.0);
    }

    /// Sets the output bias (e.g. to start at a known level).
    pub fn set_output_bias(&self, params: &mut ParamCollection, bias: &[f64]) {
        let last = self.layers.last().unwrap();
        params.values_mut()[last.b..last.b + last.m_out].copy_from_slice(bias);
    }

    /// Evaluates `batch` inputs (`batch × m_0`, row-major).
    pub fn forward(&self, params: &ParamCollection, x: &[f64], batch: usize, mode: Mode) -> Result<(Vec<f64>, Tape)> {
        let m0 = self.spec.input_width();
        if x.len() != batch * m0 || batch == 0 {
            return Err(Error::usage(format!(
                "network {} expects {batch} x {m0} inputs, got {} values",
                self.name,
                x.len()
            )));
        }
        let theta = params.values();
        let mut h: Vec<f64> = x
            .chunks_exact(m0)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.spec.prescale.center)
                    .zip(&self.spec.prescale.halfwidth)
                    .map(|((&v, &c), &w)| prescale(v, c, w))
            })
            .collect();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (mi, mo) = (layer.m_in, layer.m_out);
            let mut bn_input = None;
            let mut xhat = None;
            let mut stats = None;
            if let Some(g) = layer.bn {
                let eps = self.spec.batchnorm.as_ref().unwrap().epsilon;
                let gamma = &theta[g..g + mi];
                let beta = &theta[g + mi..g + 2 * mi];
                let mut out = vec![0.0; h.len()];
                match mode {
                    Mode::Train => {
                        if batch < 2 {
                            return Err(Error::usage(
                                "batch normalization in training mode needs a batch of at least 2",
                            ));
                        }
                        let mut xh = vec![0.0; h.len()];
                        stats = Some(batchnorm::forward_train(&h, batch, mi, gamma, beta, eps, &mut out, &mut xh));
                        xhat = Some(xh);
                    }
                    Mode::Infer => {
                        let rs = self.running[l].as_ref().unwrap();
                        if !rs.populated {
                            return Err(Error::usage(format!(
                                "network {} has unpopulated batch-norm statistics",
                                self.name
                            )));
                        }
                        batchnorm::forward_infer(&h, mi, gamma, beta, &rs.mean, &rs.var, eps, &mut out);
                    }
                }
                bn_input = Some(std::mem::replace(&mut h, out));
            }
            let w = &theta[layer.w..layer.w + mi * mo];
            let bias = &theta[layer.b..layer.b + mo];
            let act = self.spec.activations[l];
            let mut z = vec![0.0; batch * mo];
            let mut a = vec![0.0; batch * mo];
            for (hrow, (zrow, arow)) in h.chunks_exact(mi).zip(z.chunks_exact_mut(mo).zip(a.chunks_exact_mut(mo))) {
                for o in 0..mo {
                    let wrow = &w[o * mi..(o + 1) * mi];
                    let mut s = bias[o];
                    for k in 0..mi {
                        s += wrow[k] * hrow[k];
                    }
                    zrow[o] = s;
                    arow[o] = act.apply(s);
                }
            }
            let next = a.clone();
            tapes.push(LayerTape { bn_input, xhat, stats, h, z, a });
            h = next;
        }
        let tape = Tape { net_id: self.offset, epoch: params.epoch(), batch, mode, layers: tapes };
        Ok((h, tape))
    }

    /// Reverse pass: accumulates `dL/dΘ` into `grad` (the full parameter
    /// vector) and returns `dL/dx` for the raw, unscaled inputs.
    pub fn backward(&self, params: &ParamCollection, tape: &Tape, dy: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if tape.net_id != self.offset || tape.epoch != params.epoch() {
            return Err(Error::usage(format!(
                "stale tape for network {}: parameters changed since the forward pass",
                self.name
            )));
        }
        if grad.len() != params.len() {
            return Err(Error::usage("gradient buffer does not match the parameter vector"));
        }
        let batch = tape.batch;
        if dy.len() != batch * self.spec.output_width() {
            return Err(Error::usage("output gradient has the wrong shape"));
        }
        let theta = params.values();
        let mut da = dy.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let lt = &tape.layers[l];
            let (mi, mo) = (layer.m_in, layer.m_out);
            let act = self.spec.activations[l];
            let w = &theta[layer.w..layer.w + mi * mo];
            let mut dh = vec![0.0; batch * mi];
            {
                let (gw, rest) = grad[layer.w..].split_at_mut(mi * mo);
                let gb = &mut rest[layer.b - layer.w - mi * mo..][..mo];
                for b in 0..batch {
                    let hrow = &lt.h[b * mi..(b + 1) * mi];
                    let dhrow = &mut dh[b * mi..(b + 1) * mi];
                    for o in 0..mo {
                        let i = b * mo + o;
                        let dz = da[i] * act.derivative(lt.z[i], lt.a[i]);
                        if dz == 0.0 {
                            continue;
                        }
                        gb[o] += dz;
                        let wrow = &w[o * mi..(o + 1) * mi];
                        let gwrow = &mut gw[o * mi..(o + 1) * mi];
                        for k in 0..mi {
                            gwrow[k] += dz * hrow[k];
                            dhrow[k] += dz * wrow[k];
                        }
                    }
                }
            }
            if let Some(g) = layer.bn {
                let eps = self.spec.batchnorm.as_ref().unwrap().epsilon;
                let gamma = &theta[g..g + mi];
                let mut dx = vec![0.0; batch * mi];
                let (dgamma, dbeta) = grad[g..g + 2 * mi].split_at_mut(mi);
                match tape.mode {
                    Mode::Train => batchnorm::backward_train(
                        &dh,
                        lt.xhat.as_ref().unwrap(),
                        lt.stats.as_ref().unwrap(),
                        gamma,
                        batch,
                        mi,
                        &mut dx,
                        dgamma,
                        dbeta,
                    ),
                    Mode::Infer => {
                        let rs = self.running[l].as_ref().unwrap();
                        batchnorm::backward_infer(
                            &dh,
                            lt.bn_input.as_ref().unwrap(),
                            mi,
                            gamma,
                            &rs.mean,
                            &rs.var,
                            eps,
                            &mut dx,
                            dgamma,
                            dbeta,
                        )
                    }
                }
                dh = dx;
            }
            da = dh;
        }
        let m0 = self.spec.input_width();
        for (i, v) in da.iter_mut().enumerate() {
            *v /= self.spec.prescale.halfwidth[i % m0];
        }
        Ok(da)
    }

    /// Folds the batch statistics of a training-mode tape into the running averages.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        if tape.mode != Mode::Train || tape.net_id != self.offset {
            return;
        }
        let momentum = self.spec.batchnorm.as_ref().map_or(0.99, |b| b.momentum);
        for (rs, lt) in self.running.iter_mut().zip(&tape.layers) {
            if let (Some(rs), Some(stats)) = (rs.as_mut(), lt.stats.as_ref()) {
                batchnorm::update_running(&mut rs.mean, &mut rs.var, &mut rs.populated, momentum, stats);
            }
        }
    }

    /// Inference-mode evaluation of a single input.
    pub fn predict(&self, params: &ParamCollection, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(params, x, 1, Mode::Infer).map(|(y, _)| y)
    }
}

#[cfg(test)]
mod tests;
