//! Experiment configuration documents, presets and dotted-key overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{CostComponent, GeneratorSpec, TransactionCostSpec};
use crate::instruments::{
    BarrierSpec, BridgeEuropean, ExerciseSpec, ExerciseStrategy, HoldingValue, OptionKind, PayoffLeg, PayoffSpec,
    RebateTiming, ThresholdRule, ValueFunction,
};
use crate::optim::OptimizerConfig;
use crate::solver::{
    BackwardScheme, ControlLayout, ControlUnits, Direction, Instrument, MethodSpec, NetworkConfig, Problem,
    RunningCost, Terminal, TrainConfig,
};
use crate::timegrid::{InitialStateSpec, ModelSpec, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// `black_scholes` or `lognormal`.
    pub kind: String,
    pub rate: f64,
    pub vol: f64,
    /// Lognormal model only.
    pub drift: Vec<f64>,
    /// Lognormal model only: row-major `d × d` volatility matrix.
    pub vol_matrix: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: "black_scholes".into(), rate: 0.06, vol: 0.2, drift: vec![], vol_matrix: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub t0: f64,
    pub maturity: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { t0: 0.0, maturity: 0.5, steps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialStateConfig {
    /// `fixed` or `uniform`.
    pub kind: String,
    pub value: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Default for InitialStateConfig {
    fn default() -> Self {
        Self { kind: "fixed".into(), value: vec![120.0], lo: vec![], hi: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierConfig {
    pub level: f64,
    pub rebate: f64,
    /// `at_breach` or `at_maturity`.
    pub rebate_timing: RebateTiming,
    /// `discrete`: observed at grid times. `bridge`: continuous monitoring folded
    /// into the terminal payoff (lognormal single-asset models).
    pub monitoring: String,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self { level: 150.0, rebate: 0.0, rebate_timing: RebateTiming::AtBreach, monitoring: "discrete".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExerciseConfig {
    pub times: Vec<f64>,
    /// Exercise value as payoff legs; empty means the constant `value_constant`.
    pub legs: Vec<PayoffLeg>,
    pub value_constant: f64,
    /// `holding_value`, `threshold`, `never`, `always` or `clairvoyant`.
    pub strategy: String,
    /// Run directory whose trained initial-value network is the holding value.
    pub holding_value_run: Option<PathBuf>,
    pub threshold: f64,
    pub exercise_above: bool,
    pub allow_clairvoyant: bool,
}

impl Default for ExerciseConfig {
    fn default() -> Self {
        Self {
            times: vec![],
            legs: vec![],
            value_constant: 0.0,
            strategy: "holding_value".into(),
            holding_value_run: None,
            threshold: 0.0,
            exercise_above: true,
            allow_clairvoyant: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstrumentConfig {
    pub legs: Vec<PayoffLeg>,
    pub underlier: usize,
    pub barrier: Option<BarrierConfig>,
    pub exercise: Option<ExerciseConfig>,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        Self { legs: PayoffSpec::call_spread_120_150().legs().to_vec(), underlier: 0, barrier: None, exercise: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// `risk_neutral`, `numeraire_zero` or `differential_rates`.
    pub kind: String,
    /// Defaults to the model rate.
    pub rate: Option<f64>,
    pub lend: f64,
    pub borrow: f64,
    /// One entry per risky component; an empty list means no transaction costs.
    pub costs: Vec<CostComponent>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { kind: "risk_neutral".into(), rate: None, lend: 0.04, borrow: 0.08, costs: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub direction: Direction,
    pub layout: ControlLayout,
    pub units: ControlUnits,
    pub backward_scheme: BackwardScheme,
    pub running_cost: RunningCost,
    /// Starting value of the scalar `Y_0`; omitted means a least-squares fit.
    pub y0_init: Option<f64>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        let m = MethodSpec::new(Direction::Forward, ControlLayout::PerStep);
        Self {
            direction: m.direction,
            layout: m.layout,
            units: m.units,
            backward_scheme: m.backward_scheme,
            running_cost: m.running_cost,
            y0_init: m.y0_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworksConfig {
    pub control: NetworkConfig,
    pub y_init: NetworkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub validation_every: u64,
    pub validation_batch: Option<usize>,
    pub seed: u64,
    pub deterministic: bool,
    pub report_state: Option<Vec<f64>>,
    /// Paths used for the final evaluation.
    pub eval_batch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            iterations: t.iterations,
            validation_every: t.validation_every,
            validation_batch: t.validation_batch,
            seed: t.seed,
            deterministic: t.deterministic,
            report_state: t.report_state,
            eval_batch: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub svg: bool,
    /// States at which the random-initial-state curves are compared with the oracle.
    pub curve_states: Vec<f64>,
    /// Paths of the Monte-Carlo oracle for barrier and exercise instruments.
    pub oracle_paths: usize,
    pub oracle_substeps: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            svg: true,
            curve_states: (0..9).map(|k| 80.0 + 10.0 * k as f64).collect(),
            oracle_paths: 200_000,
            oracle_substeps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub initial_state: InitialStateConfig,
    pub instrument: InstrumentConfig,
    pub generator: GeneratorConfig,
    pub method: MethodConfig,
    pub networks: NetworksConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub output: OutputConfig,
}

pub const PRESETS: &[(&str, &str)] = &[
    ("fwd-fixed-eu", "forward method, spot 120, separate networks per step"),
    ("bwd-fixed-eu", "backward method, spot 120, one network with time input"),
    ("fwd-random-eu", "forward method, spot uniform on [70, 170], initial-value network"),
    ("bwd-random-eu", "backward method, spot uniform on [70, 170], initial-value network"),
    ("fwd-fixed-barrier", "forward method, up-and-out call 120 / barrier 150 via the bridge transform"),
    ("fwd-fixed-barrier-discrete", "forward method, up-and-out call 120 / barrier 150 observed at grid times"),
    ("bwd-random-holding", "backward method from t = 0.25, spot uniform on [70, 170]: holding value for exercise"),
    ("fwd-fixed-exercise", "forward method, one exercise date at t = 0.25 with a put 200 exercise value"),
];

fn random_box(cfg: &mut ExperimentConfig) {
    cfg.initial_state = InitialStateConfig { kind: "uniform".into(), value: vec![], lo: vec![70.0], hi: vec![170.0] };
    cfg.networks.control.center = Some(vec![120.0]);
    cfg.networks.control.halfwidth = Some(vec![50.0]);
    cfg.networks.y_init.center = Some(vec![120.0]);
    cfg.networks.y_init.halfwidth = Some(vec![50.0]);
    cfg.training.report_state = Some(vec![120.0]);
}

fn call_legs(strike: f64) -> Vec<PayoffLeg> {
    vec![PayoffLeg { weight: 1.0, kind: OptionKind::Call, strike }]
}

impl ExperimentConfig {
    /// Built-in experiment by name.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig { preset: Some(name.to_string()), ..Default::default() };
        cfg.networks.control.center = Some(vec![120.0]);
        cfg.networks.control.halfwidth = Some(vec![50.0]);
        match name {
            "fwd-fixed-eu" => {}
            "bwd-fixed-eu" => {
                cfg.method.direction = Direction::Backward;
                cfg.method.layout = ControlLayout::Shared;
            }
            "fwd-random-eu" => random_box(&mut cfg),
            "bwd-random-eu" => {
                random_box(&mut cfg);
                cfg.method.direction = Direction::Backward;
            }
            "fwd-fixed-barrier" | "fwd-fixed-barrier-discrete" => {
                cfg.instrument.legs = call_legs(120.0);
                let monitoring = if name.ends_with("discrete") { "discrete" } else { "bridge" };
                cfg.instrument.barrier = Some(BarrierConfig { monitoring: monitoring.into(), ..Default::default() });
            }
            "bwd-random-holding" => {
                random_box(&mut cfg);
                cfg.method.direction = Direction::Backward;
                cfg.grid = GridConfig { t0: 0.25, maturity: 0.5, steps: 25 };
            }
            "fwd-fixed-exercise" => {
                cfg.instrument.exercise = Some(ExerciseConfig {
                    times: vec![0.25],
                    legs: vec![PayoffLeg { weight: 1.0, kind: OptionKind::Put, strike: 200.0 }],
                    holding_value_run: Some(PathBuf::from("runs/bwd-random-holding")),
                    ..Default::default()
                });
            }
            _ => {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                return Err(Error::config(format!("unknown preset {name:?}; available: {}", names.join(", "))));
            }
        }
        Ok(cfg)
    }

    /// Parses a TOML document, reporting every unknown key and every invalid value.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Schema(vec![e.to_string().trim().to_string()]))?;
        let base: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Schema(vec![e.to_string().trim().to_string()]))?;
        // A preset key selects the starting point; the document's explicit values win.
        let cfg = match &base.preset {
            Some(name) => {
                let preset =
                    serde_json::to_value(Self::preset(name).map_err(|e| Error::Schema(vec![format!("preset: {e}")]))?)?;
                let doc: toml::Value = toml::from_str(text).map_err(|e| Error::Schema(vec![e.to_string()]))?;
                let mut merged = preset;
                merge_json(&mut merged, serde_json::to_value(doc)?);
                serde_json::from_value(merged).map_err(|e| Error::Schema(vec![e.to_string()]))?
            }
            None => base,
        };
        let mut errs: Vec<String> = unknown.into_iter().map(|k| format!("{k}: unknown key")).collect();
        errs.extend(cfg.validate());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Schema(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The full document with every default written out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Applies `key=value` overrides with dotted keys, e.g. `training.iterations=100`.
    /// Values are parsed as TOML literals, falling back to plain strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut errs = Vec::new();
        for o in overrides {
            let Some((key, raw)) = o.split_once('=') else {
                errs.push(format!("{o}: overrides have the form key=value"));
                continue;
            };
            let value = parse_literal(raw.trim());
            let parts: Vec<&str> = key.trim().split('.').collect();
            if let Err(e) = set_path(&mut doc, &parts, value) {
                errs.push(format!("{key}: {e}"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Schema(errs));
        }
        strip_nulls(&mut doc);
        let text = toml::to_string(&doc).map_err(|e| Error::Schema(vec![e.to_string()]))?;
        let mut parsed = Self::from_toml_str(&text)?;
        // The preset has been expanded already; keep its name only as a label.
        parsed.preset = self.preset.clone();
        *self = parsed;
        Ok(())
    }

    /// Every invalid value, one message per field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let dim = match self.model.kind.as_str() {
            "black_scholes" => {
                if !(self.model.vol >= 0.0) {
                    errs.push(format!("model.vol: must be non-negative, got {}", self.model.vol));
                }
                1
            }
            "lognormal" => {
                let d = self.model.drift.len();
                if d == 0 || self.model.vol_matrix.len() != d * d {
                    errs.push("model.vol_matrix: needs drift.len()² entries".into());
                }
                d.max(1)
            }
            k => {
                errs.push(format!("model.kind: expected black_scholes or lognormal, got {k:?}"));
                1
            }
        };
        if !self.model.rate.is_finite() {
            errs.push("model.rate: must be finite".into());
        }
        if !(self.grid.maturity > self.grid.t0) {
            errs.push(format!("grid.maturity: must exceed grid.t0 ({})", self.grid.t0));
        }
        if self.grid.steps == 0 {
            errs.push("grid.steps: must be positive".into());
        }
        match self.initial_state.kind.as_str() {
            "fixed" => {
                if self.initial_state.value.len() != dim {
                    errs.push(format!("initial_state.value: needs {dim} entries"));
                }
                if self.initial_state.value.iter().any(|v| !(*v > 0.0)) {
                    errs.push("initial_state.value: must be positive".into());
                }
            }
            "uniform" => {
                let (lo, hi) = (&self.initial_state.lo, &self.initial_state.hi);
                if lo.len() != dim || hi.len() != dim {
                    errs.push(format!("initial_state.lo/hi: need {dim} entries each"));
                } else if lo.iter().zip(hi).any(|(a, b)| !(*a > 0.0 && b > a)) {
                    errs.push("initial_state.lo/hi: need 0 < lo < hi".into());
                }
            }
            k => errs.push(format!("initial_state.kind: expected fixed or uniform, got {k:?}")),
        }
        if let Err(e) = PayoffSpec::new(self.instrument.legs.clone(), self.instrument.underlier) {
            errs.push(format!("instrument.legs: {e}"));
        }
        if self.instrument.underlier >= dim {
            errs.push(format!("instrument.underlier: must be below {dim}"));
        }
        if let Some(b) = &self.instrument.barrier {
            if !(b.level > 0.0) {
                errs.push(format!("instrument.barrier.level: must be positive, got {}", b.level));
            }
            match b.monitoring.as_str() {
                "discrete" => {}
                "bridge" => {
                    if self.model.kind != "black_scholes" {
                        errs.push("instrument.barrier.monitoring: bridge needs the black_scholes model".into());
                    }
                    if b.rebate_timing != RebateTiming::AtMaturity && b.rebate != 0.0 {
                        errs.push(
                            "instrument.barrier.rebate_timing: bridge monitoring pays rebates at maturity".into(),
                        );
                    }
                }
                m => errs.push(format!("instrument.barrier.monitoring: expected discrete or bridge, got {m:?}")),
            }
        }
        if let Some(ex) = &self.instrument.exercise {
            if ex.times.is_empty() {
                errs.push("instrument.exercise.times: must not be empty".into());
            }
            if !ex.legs.is_empty() {
                if let Err(e) = PayoffSpec::new(ex.legs.clone(), self.instrument.underlier) {
                    errs.push(format!("instrument.exercise.legs: {e}"));
                }
            }
            match ex.strategy.as_str() {
                "holding_value" => {
                    if ex.holding_value_run.is_none() {
                        errs.push("instrument.exercise.holding_value_run: required by the holding_value strategy".into());
                    }
                }
                "threshold" | "never" | "always" => {}
                "clairvoyant" => {
                    if !ex.allow_clairvoyant {
                        errs.push("instrument.exercise.allow_clairvoyant: must be true for the clairvoyant strategy".into());
                    }
                }
                s => errs.push(format!(
                    "instrument.exercise.strategy: expected holding_value, threshold, never, always or clairvoyant, got {s:?}"
                )),
            }
        }
        match self.generator.kind.as_str() {
            "risk_neutral" | "numeraire_zero" => {}
            "differential_rates" => {
                if !(self.generator.borrow >= self.generator.lend) {
                    errs.push("generator.borrow: must be at least generator.lend".into());
                }
            }
            k => errs.push(format!(
                "generator.kind: expected risk_neutral, numeraire_zero or differential_rates, got {k:?}"
            )),
        }
        if !self.generator.costs.is_empty() {
            if self.generator.costs.len() != dim {
                errs.push(format!("generator.costs: needs {dim} entries"));
            }
            let spec = TransactionCostSpec { components: self.generator.costs.iter().copied().map(Some).collect() };
            if let Err(e) = spec.validate() {
                errs.push(format!("generator.costs: {e}"));
            }
        }
        let rc = self.method.running_cost;
        if !(rc.control >= 0.0 && rc.value >= 0.0) {
            errs.push("method.running_cost: weights must be non-negative".into());
        }
        for (name, net) in [("control", &self.networks.control), ("y_init", &self.networks.y_init)] {
            if net.hidden.is_empty() || net.hidden.contains(&0) {
                errs.push(format!("networks.{name}.hidden: needs positive widths"));
            }
            for (field, v) in [("center", &net.center), ("halfwidth", &net.halfwidth)] {
                if let Some(v) = v {
                    if v.len() != dim {
                        errs.push(format!("networks.{name}.{field}: needs {dim} entries"));
                    }
                }
            }
            if let Some(h) = &net.halfwidth {
                if h.iter().any(|v| !(*v > 0.0)) {
                    errs.push(format!("networks.{name}.halfwidth: must be positive"));
                }
            }
        }
        errs.extend(self.optimizer.validate());
        let t = &self.training;
        if t.batch_size == 0 {
            errs.push("training.batch_size: must be positive".into());
        }
        if t.validation_every == 0 {
            errs.push("training.validation_every: must be positive".into());
        }
        if t.eval_batch < 2 {
            errs.push("training.eval_batch: must be at least 2".into());
        }
        if self.output.oracle_paths < crate::analytics::MIN_ORACLE_PATHS {
            errs.push(format!("output.oracle_paths: must be at least {}", crate::analytics::MIN_ORACLE_PATHS));
        }
        if self.output.oracle_substeps == 0 {
            errs.push("output.oracle_substeps: must be positive".into());
        }
        errs
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match self.model.kind.as_str() {
            "lognormal" => {
                ModelSpec::lognormal(self.model.drift.clone(), self.model.vol_matrix.clone(), self.model.rate)
            }
            _ => Ok(ModelSpec::black_scholes(self.model.rate, self.model.vol)),
        }
    }

    pub fn payoff(&self) -> Result<PayoffSpec> {
        PayoffSpec::new(self.instrument.legs.clone(), self.instrument.underlier)
    }

    pub fn generator_spec(&self) -> Result<GeneratorSpec> {
        let rate = self.generator.rate.unwrap_or(self.model.rate);
        let mut g = match self.generator.kind.as_str() {
            "numeraire_zero" => GeneratorSpec::numeraire_zero(),
            "differential_rates" => {
                GeneratorSpec::differential_rates(rate, self.generator.lend, self.generator.borrow)?
            }
            _ => GeneratorSpec::risk_neutral(rate),
        };
        if !self.generator.costs.is_empty() {
            g = g.with_costs(TransactionCostSpec {
                components: self.generator.costs.iter().copied().map(Some).collect(),
            });
        }
        Ok(g)
    }

    pub fn barrier_spec(&self) -> Result<Option<BarrierSpec>> {
        self.instrument
            .barrier
            .as_ref()
            .map(|b| {
                let mut spec = BarrierSpec::up_and_out(b.level, ValueFunction::Constant(b.rebate))?;
                spec.rebate_timing = b.rebate_timing;
                spec.underlier = self.instrument.underlier;
                Ok(spec)
            })
            .transpose()
    }

    pub fn exercise_value(&self) -> Result<Option<ValueFunction>> {
        self.instrument
            .exercise
            .as_ref()
            .map(|ex| {
                if ex.legs.is_empty() {
                    Ok(ValueFunction::Constant(ex.value_constant))
                } else {
                    PayoffSpec::new(ex.legs.clone(), self.instrument.underlier).map(ValueFunction::Payoff)
                }
            })
            .transpose()
    }

    /// Builds the solver problem. `holding_value` is required by the
    /// `holding_value` exercise strategy.
    pub fn problem(&self, holding_value: Option<Arc<dyn HoldingValue>>) -> Result<Problem> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(Error::Schema(errs));
        }
        let model = self.model_spec()?;
        let grid = TimeGrid::uniform(self.grid.t0, self.grid.maturity, self.grid.steps)?;
        let init = match self.initial_state.kind.as_str() {
            "uniform" => {
                InitialStateSpec::UniformBox { lo: self.initial_state.lo.clone(), hi: self.initial_state.hi.clone() }
            }
            _ => InitialStateSpec::Fixed(self.initial_state.value.clone()),
        };
        let payoff = self.payoff()?;
        let mut barrier = self.barrier_spec()?;
        let terminal = match (&barrier, self.instrument.barrier.as_ref().map(|b| b.monitoring.as_str())) {
            (Some(b), Some("bridge")) => {
                let t = Terminal::BridgeBarrier(BridgeEuropean {
                    payoff,
                    barrier: b.clone(),
                    vol: self.model.vol,
                    horizon: self.grid.maturity - self.grid.t0,
                });
                barrier = None;
                t
            }
            _ => Terminal::Payoff(payoff),
        };
        let exercise = match (&self.instrument.exercise, self.exercise_value()?) {
            (Some(ex), Some(value)) => {
                let strategy = match ex.strategy.as_str() {
                    "holding_value" => ExerciseStrategy::HoldingValue(holding_value.ok_or_else(|| {
                        Error::config("instrument.exercise: the holding_value strategy needs a trained holding value")
                    })?),
                    "threshold" => ExerciseStrategy::Given(Arc::new(ThresholdRule {
                        underlier: self.instrument.underlier,
                        level: ex.threshold,
                        above: ex.exercise_above,
                    })),
                    "never" => ExerciseStrategy::HoldingValue(Arc::new(|_: f64, _: &[f64]| f64::INFINITY)),
                    "always" => ExerciseStrategy::HoldingValue(Arc::new(|_: f64, _: &[f64]| f64::NEG_INFINITY)),
                    _ => ExerciseStrategy::Clairvoyant,
                };
                Some(ExerciseSpec { times: ex.times.clone(), value, strategy, allow_clairvoyant: ex.allow_clairvoyant })
            }
            _ => None,
        };
        let m = &self.method;
        let method = MethodSpec {
            direction: m.direction,
            layout: m.layout,
            units: m.units,
            backward_scheme: m.backward_scheme,
            running_cost: m.running_cost,
            y0_init: m.y0_init,
        };
        let problem = Problem {
            model,
            grid,
            init,
            generator: self.generator_spec()?,
            instrument: Instrument { terminal, barrier, exercise },
            method,
            control_net: self.networks.control.clone(),
            y_init_net: self.networks.y_init.clone(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            batch_size: t.batch_size,
            iterations: t.iterations,
            validation_every: t.validation_every,
            validation_batch: t.validation_batch,
            seed: t.seed,
            deterministic: t.deterministic,
            optimizer: self.optimizer.clone(),
            report_state: t.report_state.clone(),
        }
    }

    /// State at which price and delta are reported.
    pub fn report_state(&self) -> Vec<f64> {
        if let Some(x) = &self.training.report_state {
            return x.clone();
        }
        match self.initial_state.kind.as_str() {
            "uniform" => self.initial_state.lo.iter().zip(&self.initial_state.hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            _ => self.initial_state.value.clone(),
        }
    }
}

fn parse_literal(raw: &str) -> serde_json::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(t) => serde_json::to_value(&t["v"]).unwrap_or(serde_json::Value::String(raw.to_string())),
        Err(_) => serde_json::Value::String(raw.to_string()),
    }
}

fn set_path(doc: &mut serde_json::Value, parts: &[&str], value: serde_json::Value) -> std::result::Result<(), String> {
    let (last, head) = parts.split_last().ok_or("empty key")?;
    let mut cur = doc;
    for p in head {
        let obj = cur.as_object_mut().ok_or_else(|| format!("{p} is not a table"))?;
        let entry = obj.entry(p.to_string()).or_insert(serde_json::Value::Null);
        if entry.is_null() {
            *entry = serde_json::json!({});
        }
        cur = entry;
    }
    let obj = cur.as_object_mut().ok_or("parent is not a table")?;
    obj.insert(last.to_string(), value);
    Ok(())
}

fn strip_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|_, x| !x.is_null());
            m.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

fn merge_json(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert!(cfg.validate().is_empty(), "{name}: {:?}", cfg.validate());
            let text = cfg.to_toml_string();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn forward_fixed_preset_matches_the_reference_setup() {
        let c = ExperimentConfig::preset("fwd-fixed-eu").unwrap();
        assert_eq!(c.initial_state.value, vec![120.0]);
        assert_eq!((c.model.rate, c.model.vol), (0.06, 0.2));
        assert_eq!((c.grid.maturity, c.grid.steps), (0.5, 50));
        assert_eq!((c.training.batch_size, c.training.iterations), (512, 20000));
        assert_eq!(c.networks.control.hidden, vec![11, 11]);
        assert_eq!(c.networks.control.activation, Activation::Elu);
        assert_eq!(c.optimizer.learning_rate, 1e-3);
        let p = c.problem(None).unwrap();
        assert_eq!(p.instrument.terminal, Terminal::Payoff(PayoffSpec::call_spread_120_150()));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_all_listed() {
        let doc = r#"
            learning_rat = 3
            [training]
            batch_size = 0
            iteratons = 5
            [grid]
            steps = 0
        "#;
        let Err(Error::Schema(errs)) = ExperimentConfig::from_toml_str(doc) else { panic!("expected schema error") };
        let all = errs.join("\n");
        for needle in ["learning_rat", "training.iteratons", "training.batch_size", "grid.steps"] {
            assert!(all.contains(needle), "{needle} missing from {all}");
        }
    }

    #[test]
    fn type_errors_are_reported() {
        let err = ExperimentConfig::from_toml_str("[training]\niterations = \"many\"").unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn overrides_use_dotted_keys() {
        let mut c = ExperimentConfig::preset("bwd-random-eu").unwrap();
        c.apply_overrides(&[
            "training.iterations=7".into(),
            "method.direction=forward".into(),
            "networks.control.hidden=[5]".into(),
        ])
        .unwrap();
        assert_eq!(c.training.iterations, 7);
        assert_eq!(c.method.direction, Direction::Forward);
        assert_eq!(c.networks.control.hidden, vec![5]);
        assert_eq!(c.initial_state.lo, vec![70.0]);
        assert!(c.apply_overrides(&["training.nope=1".into()]).is_err());
        assert!(c.apply_overrides(&["novalue".into()]).is_err());
    }

    #[test]
    fn preset_key_in_documents_expands() {
        let c = ExperimentConfig::from_toml_str("preset = \"bwd-fixed-eu\"\n[training]\niterations = 3\n").unwrap();
        assert_eq!(c.method.layout, ControlLayout::Shared);
        assert_eq!(c.training.iterations, 3);
    }

    #[test]
    fn holding_value_strategy_needs_a_function() {
        let c = ExperimentConfig::preset("fwd-fixed-exercise").unwrap();
        assert!(c.problem(None).unwrap_err().is_config());
        let hv: Arc<dyn HoldingValue> = Arc::new(|_: f64, _: &[f64]| 0.0);
        assert!(c.problem(Some(hv)).is_ok());
    }
}
