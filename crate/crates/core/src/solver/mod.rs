//! Training engine for time-discrete FBSDE control problems.
//!
//! The risk factors are always simulated forward. The portfolio value `Y` is
//! either stepped forward from a trainable initial value (loss: squared
//! replication gap at maturity, barrier breach or exercise) or stepped
//! backward from the payoff (loss: dispersion of the rolled-back `Y_0`, or its
//! distance from a trainable initial-value network).
//!
//! Controls are evaluated once per mini-batch for all steps, the scalar `Y`
//! recursion runs per path, and gradients are accumulated by an explicit
//! adjoint sweep followed by the network reverse passes.

mod rollout;
mod train;


use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generators::GeneratorSpec;
use crate::instruments::{BarrierSpec, BridgeEuropean, ExerciseSpec, ExerciseStrategy, HoldingValue, PayoffSpec};
use crate::nn::checkpoint::{Checkpoint, NetworkEntry};
use crate::nn::{Activation, BatchNormConfig, Mode, Network, NetworkSpec, ParamCollection, Prescale};
use crate::optim::Optimizer;
use crate::rng::{labels, RandomStream};
use crate::timegrid::{InitialStateSpec, ModelSpec, TimeGrid};

pub use rollout::RolloutResult;
pub use train::{Evaluation, IterationRecord, TrainConfig, TrainOutcome, TrainReport, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLayout {
    /// One network per time step with input `x`.
    PerStep,
    /// One network for all steps with input `(t, x)`.
    Shared,
    /// `Π ≡ 0`; nothing is trained except the initial value.
    Zero,
}

/// What the control networks output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlUnits {
    /// Number of units held; value invested is `δ·x`.
    Shares,
    /// Value invested `π` directly.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardScheme {
    Exact,
    Taylor,
}

/// `rc(t, x, y, Π) = control·Σπ_j² + value·y²`, integrated over time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunningCost {
    pub control: f64,
    pub value: f64,
}

impl RunningCost {
    pub fn is_zero(&self) -> bool {
        self.control == 0.0 && self.value == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub direction: Direction,
    pub layout: ControlLayout,
    pub units: ControlUnits,
    pub backward_scheme: BackwardScheme,
    pub running_cost: RunningCost,
    /// Starting value of the scalar `Y_0` (forward method, fixed initial state).
    /// `None` fits it by least squares against the untrained controls when
    /// training starts.
    pub y0_init: Option<f64>,
}

impl MethodSpec {
    pub fn new(direction: Direction, layout: ControlLayout) -> Self {
        Self {
            direction,
            layout,
            units: ControlUnits::Shares,
            backward_scheme: BackwardScheme::Exact,
            running_cost: RunningCost::default(),
            y0_init: None,
        }
    }
}

/// How the initial value of `Y` is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialValue {
    /// Trainable scalar (forward method, fixed initial state).
    Scalar,
    /// Network `Y_init(X_0)` (random initial state).
    Network,
    /// Mean of the rolled-back values (backward method, fixed initial state).
    RolledBack,
}

/// Terminal value `g`, possibly depending on the initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    Payoff(PayoffSpec),
    /// Continuously monitored barrier folded into a European payoff of `(X_0, X_T)`.
    BridgeBarrier(BridgeEuropean),
}

impl Terminal {
    pub fn value(&self, x0: &[f64], x_t: &[f64]) -> f64 {
        match self {
            Terminal::Payoff(p) => p.value(x_t),
            Terminal::BridgeBarrier(b) => b.value(x0, x_t),
        }
    }

    pub fn underlier(&self) -> usize {
        match self {
            Terminal::Payoff(p) => p.underlier(),
            Terminal::BridgeBarrier(b) => b.payoff.underlier(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instrument {
    pub terminal: Terminal,
    pub barrier: Option<BarrierSpec>,
    pub exercise: Option<ExerciseSpec>,
}

impl Instrument {
    pub fn european(payoff: PayoffSpec) -> Self {
        Self { terminal: Terminal::Payoff(payoff), barrier: None, exercise: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Prescale center per state component; defaults to the initial-state center.
    pub center: Option<Vec<f64>>,
    /// Prescale halfwidth per state component; defaults to the initial box
    /// halfwidth, or 40% of the center for a fixed initial state.
    pub halfwidth: Option<Vec<f64>>,
    pub batchnorm: Option<BatchNormConfig>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![11, 11], activation: Activation::Elu, center: None, halfwidth: None, batchnorm: None }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub init: InitialStateSpec,
    pub generator: GeneratorSpec,
    pub instrument: Instrument,
    pub method: MethodSpec,
    pub control_net: NetworkConfig,
    pub y_init_net: NetworkConfig,
}

impl Problem {
    pub fn initial_value(&self) -> InitialValue {
        match (self.init.is_fixed(), self.method.direction) {
            (false, _) => InitialValue::Network,
            (true, Direction::Forward) => InitialValue::Scalar,
            (true, Direction::Backward) => InitialValue::RolledBack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        self.init.validate(&self.model)?;
        self.generator.validate()?;
        if let Some(c) = &self.generator.costs {
            if c.components.len() != d {
                return Err(Error::config(format!(
                    "transaction costs list {} components for a {d}-dimensional model",
                    c.components.len()
                )));
            }
        }
        if self.instrument.terminal.underlier() >= d {
            return Err(Error::config("payoff underlier index out of range"));
        }
        if let Some(b) = &self.instrument.barrier {
            if b.underlier >= d {
                return Err(Error::config("barrier underlier index out of range"));
            }
        }
        if let Some(ex) = &self.instrument.exercise {
            ex.validate(self.grid.start(), self.grid.maturity())?;
            for &t in &ex.times {
                if self.grid.index_of(t).is_none() {
                    return Err(Error::config(format!("exercise time {t} is not a grid time")));
                }
            }
            if !ex.is_adapted() && self.method.direction == Direction::Forward {
                return Err(Error::config(
                    "clairvoyant exercise needs rolled-back values and only exists for the backward method",
                ));
            }
        }
        if self.method.layout == ControlLayout::Zero && self.initial_value() == InitialValue::RolledBack {
            tracing::info!("backward method with zero control: nothing to train");
        }
        let rc = self.method.running_cost;
        if !(rc.control >= 0.0 && rc.value >= 0.0) {
            return Err(Error::config("running cost weights must be non-negative"));
        }
        for net in [&self.control_net, &self.y_init_net] {
            if net.hidden.contains(&0) {
                return Err(Error::config("hidden layer widths must be positive"));
            }
            for v in [&net.center, &net.halfwidth].into_iter().flatten() {
                if v.len() != d {
                    return Err(Error::config(format!("prescale vectors need {d} entries")));
                }
            }
        }
        Ok(())
    }

    fn prescale_for_state(&self, net: &NetworkConfig) -> Prescale {
        let center = net.center.clone().unwrap_or_else(|| self.init.center());
        let halfwidth = net.halfwidth.clone().unwrap_or_else(|| match &self.init {
            InitialStateSpec::UniformBox { lo, hi } => {
                lo.iter().zip(hi).map(|(a, b)| (0.5 * (b - a)).max(1e-12)).collect()
            }
            InitialStateSpec::Fixed(x) => x.iter().map(|v| (0.4 * v.abs()).max(1.0)).collect(),
        });
        Prescale { center, halfwidth }
    }

    fn network_spec(&self, net: &NetworkConfig, with_time: bool, out: usize) -> NetworkSpec {
        let d = self.model.dim();
        let mut prescale = self.prescale_for_state(net);
        if with_time {
            let (t0, t1) = (self.grid.start(), self.grid.maturity());
            prescale.center.insert(0, 0.5 * (t0 + t1));
            prescale.halfwidth.insert(0, 0.5 * (t1 - t0));
        }
        let mut sizes = vec![d + usize::from(with_time)];
        sizes.extend(&net.hidden);
        sizes.push(out);
        let mut spec = NetworkSpec::dense(sizes, net.activation, prescale);
        spec.batchnorm = net.batchnorm.clone();
        spec
    }
}

/// Price and hedge read off the trained controls at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceDelta {
    pub price: f64,
    /// Units of the payoff underlier held at the initial time.
    pub delta: f64,
    /// The state lies outside the prescale box the networks were trained on.
    pub outside_box: bool,
}

pub struct Solver {
    problem: Problem,
    params: ParamCollection,
    pi_nets: Vec<Network>,
    y_init: Option<Network>,
    y0_index: Option<usize>,
    /// The scalar `Y_0` still awaits its least-squares start.
    y0_unfitted: bool,
    exercise_steps: Vec<usize>,
    spec_hash: [u8; 32],
}

/// Holding value given by a trained initial-value network.
pub struct NetworkHoldingValue {
    net: Network,
    params: ParamCollection,
}

impl HoldingValue for NetworkHoldingValue {
    fn holding_value(&self, _t: f64, x: &[f64]) -> f64 {
        self.net.predict(&self.params, x).map_or(f64::NAN, |v| v[0])
    }

    fn holding_values(&self, _t: f64, xs: &[f64], dim: usize) -> Vec<f64> {
        let batch = xs.len() / dim;
        match self.net.forward(&self.params, xs, batch, Mode::Infer) {
            Ok((v, _)) => v,
            Err(_) => vec![f64::NAN; batch],
        }
    }
}

impl Solver {
    /// Builds the networks with weights drawn from `seed`.
    pub fn new(problem: Problem, seed: u64) -> Result<Self> {
        problem.validate()?;
        let d = problem.model.dim();
        let n = problem.grid.steps();
        let weights = RandomStream::new(seed).substream(labels::WEIGHTS);
        let mut params = ParamCollection::new();
        let y0_index = match problem.initial_value() {
            InitialValue::Scalar => Some(params.push("y0", vec![1], &[problem.method.y0_init.unwrap_or(0.0)])),
            _ => None,
        };
        let mut pi_nets = Vec::new();
        match problem.method.layout {
            ControlLayout::PerStep => {
                let spec = problem.network_spec(&problem.control_net, false, d);
                for i in 0..n {
                    pi_nets.push(Network::new(
                        spec.clone(),
                        &format!("pi{i}"),
                        &mut params,
                        &weights.substream(i as u64),
                    )?);
                }
            }
            ControlLayout::Shared => {
                let spec = problem.network_spec(&problem.control_net, true, d);
                pi_nets.push(Network::new(spec, "pi", &mut params, &weights.substream(u64::MAX - 1))?);
            }
            ControlLayout::Zero => {}
        }
        let y_init = match problem.initial_value() {
            InitialValue::Network => {
                let spec = problem.network_spec(&problem.y_init_net, false, 1);
                Some(Network::new(spec, "y_init", &mut params, &weights.substream(u64::MAX))?)
            }
            _ => None,
        };
        let exercise_steps = problem
            .instrument
            .exercise
            .as_ref()
            .map(|ex| ex.times.iter().map(|&t| problem.grid.index_of(t).unwrap()).collect())
            .unwrap_or_default();
        let y0_unfitted = y0_index.is_some() && problem.method.y0_init.is_none();
        let mut solver =
            Self { problem, params, pi_nets, y_init, y0_index, y0_unfitted, exercise_steps, spec_hash: [0; 32] };
        solver.spec_hash = solver.compute_spec_hash();
        Ok(solver)
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn params(&self) -> &ParamCollection {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamCollection {
        &mut self.params
    }

    pub fn control_networks(&self) -> &[Network] {
        &self.pi_nets
    }

    pub fn initial_value_network(&self) -> Option<&Network> {
        self.y_init.as_ref()
    }

    pub fn spec_hash(&self) -> [u8; 32] {
        self.spec_hash
    }

    fn compute_spec_hash(&self) -> [u8; 32] {
        let nets: Vec<(&str, &NetworkSpec)> =
            self.pi_nets.iter().chain(self.y_init.iter()).map(|n| (n.name(), n.spec())).collect();
        let descriptor = serde_json::json!({
            "direction": self.problem.method.direction,
            "layout": self.problem.method.layout,
            "units": self.problem.method.units,
            "steps": self.problem.grid.steps(),
            "dim": self.problem.model.dim(),
            "scalar_y0": self.y0_index.is_some(),
            "networks": nets,
        });
        let mut h = Sha256::new();
        h.update(descriptor.to_string().as_bytes());
        h.finalize().into()
    }

    /// Evaluation mode that does not need training statistics when none exist yet.
    fn eval_mode(&self) -> Mode {
        let populated = self.pi_nets.iter().chain(self.y_init.iter()).all(|n| n.running_stats().all(|s| s.populated));
        if populated {
            Mode::Infer
        } else {
            Mode::Train
        }
    }

    fn all_networks(&self) -> impl Iterator<Item = &Network> {
        self.pi_nets.iter().chain(self.y_init.iter())
    }

    pub fn checkpoint(&self, counter: u64, optimizer: Option<&Optimizer>) -> Checkpoint {
        let networks = self
            .all_networks()
            .map(|n| NetworkEntry {
                name: n.name().to_string(),
                offset: n.param_range().start as u64,
                sizes: n.spec().sizes.iter().map(|&s| s as u32).collect(),
                batchnorm: (0..n.spec().depth()).map(|l| n.spec().bn_at(l)).collect(),
            })
            .collect();
        Checkpoint {
            spec_hash: self.spec_hash,
            counter,
            networks,
            params: self.params.values().to_vec(),
            running: self.all_networks().flat_map(|n| n.running_stats().cloned()).collect(),
            optimizer: optimizer.map(|o| o.snapshot()).unwrap_or_default(),
        }
    }

    /// Loads parameters and batch-norm statistics. The checkpoint must come from
    /// an identically shaped problem.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.spec_hash != self.spec_hash {
            return Err(Error::Format("checkpoint was written for a different network layout".into()));
        }
        self.params.set_values(&ckpt.params)?;
        self.y0_unfitted = false;
        let slots: usize = self.all_networks().map(|n| n.running_stats().count()).sum();
        if slots != ckpt.running.len() {
            return Err(Error::Format("batch-norm statistics do not match the network layout".into()));
        }
        let mut it = ckpt.running.iter();
        for net in self.pi_nets.iter_mut().chain(self.y_init.iter_mut()) {
            for rs in net.running_stats_mut() {
                let saved = it.next().unwrap();
                if saved.mean.len() != rs.mean.len() {
                    return Err(Error::Format("batch-norm statistics have the wrong width".into()));
                }
                *rs = saved.clone();
            }
        }
        Ok(())
    }

    /// The trained initial-value network as a holding-value function.
    pub fn holding_value(&self) -> Result<Arc<dyn HoldingValue>> {
        let net = self
            .y_init
            .clone()
            .ok_or_else(|| Error::usage("only random-initial-state runs have an initial-value network"))?;
        Ok(Arc::new(NetworkHoldingValue { net, params: self.params.clone() }))
    }

    fn inside_box(&self, x: &[f64]) -> bool {
        match &self.problem.init {
            InitialStateSpec::UniformBox { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= *a - 1e-12 && *v <= *b + 1e-12)
            }
            InitialStateSpec::Fixed(c) => x.iter().zip(c).all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0)),
        }
    }

    /// Initial hedge in units of the payoff underlier at `x`.
    pub fn initial_delta(&self, x: &[f64]) -> Result<f64> {
        let j = self.problem.instrument.terminal.underlier();
        let u = match self.problem.method.layout {
            ControlLayout::Zero => return Ok(0.0),
            ControlLayout::PerStep => self.forward_single(&self.pi_nets[0], x)?,
            ControlLayout::Shared => {
                let mut input = vec![self.problem.grid.start()];
                input.extend_from_slice(x);
                self.forward_single(&self.pi_nets[0], &input)?
            }
        };
        Ok(match self.problem.method.units {
            ControlUnits::Shares => u[j],
            ControlUnits::Value => u[j] / x[j],
        })
    }

    /// Inference on one state; NaN while batch-norm statistics are still empty.
    fn forward_single(&self, net: &Network, x: &[f64]) -> Result<Vec<f64>> {
        if net.running_stats().any(|s| !s.populated) {
            return Ok(vec![f64::NAN; net.spec().output_width()]);
        }
        net.predict(&self.params, x)
    }

    /// Price and initial delta at `x`. For the backward method with a fixed
    /// initial state the price is the mean rolled-back value over an evaluation batch.
    pub fn extract_price_delta(&self, x: &[f64]) -> Result<PriceDelta> {
        if x.len() != self.problem.model.dim() {
            return Err(Error::usage("state has the wrong dimension"));
        }
        let outside_box = !self.inside_box(x);
        let price = match self.problem.initial_value() {
            InitialValue::Scalar => self.params.values()[self.y0_index.unwrap()],
            InitialValue::Network => {
                let net = self.y_init.as_ref().unwrap();
                self.forward_single(net, x)?[0]
            }
            InitialValue::RolledBack => self.evaluate(4096, 0)?.price,
        };
        let delta = self.initial_delta(x)?;
        Ok(PriceDelta { price, delta, outside_box })
    }

    /// Current scalar `Y_0`, if the method has one.
    pub fn scalar_y0(&self) -> Option<f64> {
        self.y0_index.map(|i| self.params.values()[i])
    }

    fn exercise_strategy_needs_y(&self) -> bool {
        matches!(self.problem.instrument.exercise.as_ref().map(|e| &e.strategy), Some(ExerciseStrategy::Clairvoyant))
    }
}
