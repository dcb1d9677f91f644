//! Payoffs, knock-out barrier monitoring, Brownian-bridge breach probabilities
//! and exercise decisions.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffLeg {
    pub weight: f64,
    pub kind: OptionKind,
    pub strike: f64,
}

impl PayoffLeg {
    pub fn value(&self, s: f64) -> f64 {
        let intrinsic = match self.kind {
            OptionKind::Call => (s - self.strike).max(0.0),
            OptionKind::Put => (self.strike - s).max(0.0),
        };
        self.weight * intrinsic
    }
}

/// A weighted sum of calls and puts on one underlier.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffSpec {
    legs: Vec<PayoffLeg>,
    underlier: usize,
}

impl PayoffSpec {
    pub fn new(legs: Vec<PayoffLeg>, underlier: usize) -> Result<Self> {
        if legs.is_empty() {
            return Err(Error::config("payoff needs at least one leg"));
        }
        for leg in &legs {
            if !(leg.strike > 0.0) || !leg.strike.is_finite() {
                return Err(Error::config(format!("strike must be positive, got {}", leg.strike)));
            }
            if !leg.weight.is_finite() {
                return Err(Error::config("leg weight must be finite"));
            }
        }
        Ok(Self { legs, underlier })
    }

    pub fn call(strike: f64) -> Self {
        Self::new(vec![PayoffLeg { weight: 1.0, kind: OptionKind::Call, strike }], 0).expect("valid call")
    }

    pub fn put(strike: f64) -> Self {
        Self::new(vec![PayoffLeg { weight: 1.0, kind: OptionKind::Put, strike }], 0).expect("valid put")
    }

    /// Long one call at 120, short two calls at 150.
    pub fn call_spread_120_150() -> Self {
        Self::new(
            vec![
                PayoffLeg { weight: 1.0, kind: OptionKind::Call, strike: 120.0 },
                PayoffLeg { weight: -2.0, kind: OptionKind::Call, strike: 150.0 },
            ],
            0,
        )
        .expect("valid combo")
    }

    pub fn legs(&self) -> &[PayoffLeg] {
        &self.legs
    }

    pub fn underlier(&self) -> usize {
        self.underlier
    }

    pub fn value_at(&self, s: f64) -> f64 {
        self.legs.iter().map(|l| l.value(s)).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_at(x[self.underlier])
    }
}

pub fn european_payoff(spec: &PayoffSpec, x_t: &[f64]) -> f64 {
    spec.value(x_t)
}

/// A deterministic function of the state used for rebates and exercise values.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueFunction {
    Constant(f64),
    Payoff(PayoffSpec),
}

impl ValueFunction {
    pub fn zero() -> Self {
        ValueFunction::Constant(0.0)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ValueFunction::Constant(c) => *c,
            ValueFunction::Payoff(p) => p.value(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebateTiming {
    /// Rebate paid when the barrier is hit.
    #[default]
    AtBreach,
    /// Rebate paid at maturity; valued at the breach time by discounting.
    AtMaturity,
}

/// Up-and-out barrier observed at every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSpec {
    pub level: f64,
    pub rebate: ValueFunction,
    pub rebate_timing: RebateTiming,
    pub underlier: usize,
}

impl BarrierSpec {
    pub fn up_and_out(level: f64, rebate: ValueFunction) -> Result<Self> {
        if !(level > 0.0) {
            return Err(Error::config(format!("barrier level must be positive, got {level}")));
        }
        Ok(Self { level, rebate, rebate_timing: RebateTiming::AtBreach, underlier: 0 })
    }

    /// Rebate `g_B(t, x)` as valued at time `t`.
    pub fn rebate_value(&self, t: f64, x: &[f64], maturity: f64, short_rate: f64) -> f64 {
        let r = self.rebate.value(x);
        match self.rebate_timing {
            RebateTiming::AtBreach => r,
            RebateTiming::AtMaturity => r * (-short_rate * (maturity - t)).exp(),
        }
    }
}

/// Instantaneous indicator: is `x` inside the knock-out region (`x ≥ B`)?
pub fn in_barrier_indicator(_t: f64, x: &[f64], spec: &BarrierSpec) -> bool {
    x[spec.underlier] >= spec.level
}

/// Per-path barrier memory. `breached` never resets once set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BarrierMonitorState {
    pub breached: bool,
    /// Grid index of the last observation.
    pub last_index: Option<usize>,
    /// Time, state and portfolio value at breach or maturity, once known.
    pub t_b: Option<f64>,
    pub x_b: Vec<f64>,
    pub y_b: f64,
    pub index_b: Option<usize>,
}

impl BarrierMonitorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Whether the record `(t_B, X_B, Y_B)` has been fixed.
    pub fn is_settled(&self) -> bool {
        self.t_b.is_some()
    }
}

/// Observes grid point `index` (times must be visited in order, starting at 0).
pub fn update_barrier_monitor(
    state: &BarrierMonitorState,
    index: usize,
    t_i: f64,
    x_i: &[f64],
    y_i: f64,
    is_maturity: bool,
    spec: &BarrierSpec,
) -> Result<BarrierMonitorState> {
    let expected = state.last_index.map_or(0, |i| i + 1);
    if index != expected {
        return Err(Error::usage(format!("barrier monitor observed index {index}, expected {expected}")));
    }
    let mut next = state.clone();
    next.last_index = Some(index);
    if next.is_settled() {
        return Ok(next);
    }
    if in_barrier_indicator(t_i, x_i, spec) {
        next.breached = true;
    }
    if next.breached || is_maturity {
        next.t_b = Some(t_i);
        next.x_b = x_i.to_vec();
        next.y_b = y_i;
        next.index_b = Some(index);
    }
    Ok(next)
}

/// Probability that a lognormal bridge from `x0` to `x_t` over `horizon`
/// touched the upper level `barrier`.
pub fn bridge_breach_probability(x0: f64, x_t: f64, barrier: f64, vol: f64, horizon: f64) -> Result<f64> {
    for (name, v) in [("x0", x0), ("xT", x_t), ("barrier", barrier), ("vol", vol), ("horizon", horizon)] {
        if !(v > 0.0) || v.is_nan() {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    if x0 >= barrier || x_t >= barrier {
        return Ok(1.0);
    }
    if barrier.is_infinite() {
        return Ok(0.0);
    }
    let a = (barrier / x0).ln();
    let b = (barrier / x_t).ln();
    Ok((-2.0 * a * b / (vol * vol * horizon)).exp())
}

/// Terminal payoff of the European whose value equals the barrier option's:
/// `g_NB(1 − p) + g_B p` below the barrier and `g_B` at or above it.
pub fn barrier_equivalent_european<'a>(
    barrier: f64,
    no_breach: impl Fn(f64) -> f64 + 'a,
    breach: impl Fn(f64) -> f64 + 'a,
    breach_probability: impl Fn(f64) -> f64 + 'a,
) -> impl Fn(f64) -> f64 + 'a {
    move |x_t| {
        if x_t >= barrier {
            breach(x_t)
        } else {
            let p = breach_probability(x_t);
            no_breach(x_t) * (1.0 - p) + breach(x_t) * p
        }
    }
}

/// Continuously monitored up-and-out payoff expressed as a path-independent
/// European payoff of `(X_0, X_T)` under constant-volatility lognormal dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeEuropean {
    pub payoff: PayoffSpec,
    pub barrier: BarrierSpec,
    pub vol: f64,
    pub horizon: f64,
}

impl BridgeEuropean {
    pub fn value(&self, x0: &[f64], x_t: &[f64]) -> f64 {
        let j = self.barrier.underlier;
        let rebate = self.barrier.rebate.value(x_t);
        let g = barrier_equivalent_european(
            self.barrier.level,
            |_| self.payoff.value(x_t),
            |_| rebate,
            |s| bridge_breach_probability(x0[j], s, self.barrier.level, self.vol, self.horizon).unwrap_or(1.0),
        );
        g(x_t[j])
    }
}

/// Continuation-value estimate used by holding-value exercise strategies.
pub trait HoldingValue: Send + Sync {
    fn holding_value(&self, t: f64, x: &[f64]) -> f64;

    /// `xs` is `batch × dim`.
    fn holding_values(&self, t: f64, xs: &[f64], dim: usize) -> Vec<f64> {
        xs.chunks_exact(dim).map(|x| self.holding_value(t, x)).collect()
    }
}

/// A directly specified, adapted exercise strategy.
pub trait ExerciseRule: Send + Sync {
    fn should_exercise(&self, t: f64, x: &[f64]) -> bool;
}

impl<F: Fn(f64, &[f64]) -> f64 + Send + Sync> HoldingValue for F {
    fn holding_value(&self, t: f64, x: &[f64]) -> f64 {
        self(t, x)
    }
}

/// Exercise when the underlier is above (or below) a fixed level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub underlier: usize,
    pub level: f64,
    pub above: bool,
}

impl ExerciseRule for ThresholdRule {
    fn should_exercise(&self, _t: f64, x: &[f64]) -> bool {
        if self.above {
            x[self.underlier] > self.level
        } else {
            x[self.underlier] < self.level
        }
    }
}

#[derive(Clone)]
pub enum ExerciseStrategy {
    HoldingValue(Arc<dyn HoldingValue>),
    Given(Arc<dyn ExerciseRule>),
    /// Compares the exercise value to the rolled-back portfolio value. Not adapted.
    Clairvoyant,
}

impl fmt::Debug for ExerciseStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExerciseStrategy::HoldingValue(_) => f.write_str("HoldingValue"),
            ExerciseStrategy::Given(_) => f.write_str("Given"),
            ExerciseStrategy::Clairvoyant => f.write_str("Clairvoyant"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExerciseSpec {
    pub times: Vec<f64>,
    pub value: ValueFunction,
    pub strategy: ExerciseStrategy,
    pub allow_clairvoyant: bool,
}

static CLAIRVOYANT_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_clairvoyant() {
    if !CLAIRVOYANT_WARNED.swap(true, Ordering::Relaxed) {
        tracing::warn!(
            "clairvoyant exercise is not adapted: it looks at the rolled-back future value and \
             gives noisy prices with foresight bias"
        );
    }
}

impl ExerciseSpec {
    pub fn validate(&self, start: f64, maturity: f64) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::config("exercise schedule is empty"));
        }
        for &t in &self.times {
            if !(t > start && t < maturity) {
                return Err(Error::config(format!("exercise time {t} must lie strictly inside ({start}, {maturity})")));
            }
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("exercise times must be strictly increasing"));
        }
        if matches!(self.strategy, ExerciseStrategy::Clairvoyant) && !self.allow_clairvoyant {
            return Err(Error::config("clairvoyant exercise requires the explicit allow_clairvoyant opt-in"));
        }
        Ok(())
    }

    pub fn is_adapted(&self) -> bool {
        !matches!(self.strategy, ExerciseStrategy::Clairvoyant)
    }
}

/// Decides exercise at an exercise time. `y_rolled` is only consulted by the
/// clairvoyant strategy.
pub fn exercise_decision(spec: &ExerciseSpec, t: f64, x: &[f64], y_rolled: Option<f64>) -> Result<bool> {
    let g = spec.value.value(x);
    match &spec.strategy {
        ExerciseStrategy::HoldingValue(hv) => Ok(g > hv.holding_value(t, x)),
        ExerciseStrategy::Given(rule) => Ok(rule.should_exercise(t, x)),
        ExerciseStrategy::Clairvoyant => {
            if !spec.allow_clairvoyant {
                return Err(Error::config("clairvoyant exercise requires the explicit allow_clairvoyant opt-in"));
            }
            warn_clairvoyant();
            let y = y_rolled.ok_or_else(|| Error::usage("clairvoyant exercise needs the rolled-back value"))?;
            Ok(g > y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn payoff_examples() {
        assert_eq!(european_payoff(&PayoffSpec::call(120.0), &[150.0]), 30.0);
        assert_eq!(european_payoff(&PayoffSpec::call_spread_120_150(), &[160.0]), 20.0);
        assert_eq!(european_payoff(&PayoffSpec::put(120.0), &[150.0]), 0.0);
    }

    #[test]
    fn payoff_validation() {
        assert!(PayoffSpec::new(vec![], 0).is_err());
        let bad = PayoffLeg { weight: 1.0, kind: OptionKind::Call, strike: 0.0 };
        assert!(PayoffSpec::new(vec![bad], 0).is_err());
    }

    fn barrier(level: f64) -> BarrierSpec {
        BarrierSpec::up_and_out(level, ValueFunction::zero()).unwrap()
    }

    fn run_monitor(path: &[f64], spec: &BarrierSpec) -> Vec<BarrierMonitorState> {
        let mut s = BarrierMonitorState::new();
        let mut out = vec![];
        for (i, &x) in path.iter().enumerate() {
            s = update_barrier_monitor(&s, i, i as f64, &[x], 10.0 + i as f64, i + 1 == path.len(), spec).unwrap();
            out.push(s.clone());
        }
        out
    }

    #[test]
    fn monitor_without_breach_records_maturity() {
        let states = run_monitor(&[100.0, 120.0, 140.0, 130.0], &barrier(150.0));
        let last = states.last().unwrap();
        assert!(!last.breached);
        assert_eq!(last.t_b, Some(3.0));
        assert_eq!(last.x_b, vec![130.0]);
        assert_eq!(last.y_b, 13.0);
    }

    #[test]
    fn monitor_stays_breached() {
        let mut path = vec![100.0; 12];
        path[7] = 151.0;
        let states = run_monitor(&path, &barrier(150.0));
        assert!(!states[6].breached);
        assert!(states[7..].iter().all(|s| s.breached));
        let last = states.last().unwrap();
        assert_eq!(last.t_b, Some(7.0));
        assert_eq!(last.x_b, vec![151.0]);
        assert_eq!(last.index_b, Some(7));
    }

    #[test]
    fn vacuous_barrier_never_triggers() {
        let states = run_monitor(&[100.0, 1e5, 3e5], &barrier(f64::INFINITY));
        assert!(states.iter().all(|s| !s.breached));
    }

    #[test]
    fn monitor_rejects_out_of_order() {
        let s = BarrierMonitorState::new();
        let err = update_barrier_monitor(&s, 2, 0.0, &[1.0], 0.0, false, &barrier(150.0)).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn indicator_examples() {
        let b = barrier(150.0);
        assert!(in_barrier_indicator(0.0, &[155.0], &b));
        assert!(!in_barrier_indicator(0.0, &[149.99], &b));
        assert!(in_barrier_indicator(0.0, &[150.0], &b));
    }

    #[test]
    fn bridge_probability_limits() {
        assert_eq!(bridge_breach_probability(120.0, 150.0, 150.0, 0.2, 0.5).unwrap(), 1.0);
        assert_eq!(bridge_breach_probability(120.0, 170.0, 150.0, 0.2, 0.5).unwrap(), 1.0);
        assert_eq!(bridge_breach_probability(120.0, 120.0, f64::INFINITY, 0.2, 0.5).unwrap(), 0.0);
        assert!(bridge_breach_probability(120.0, 120.0, 1e12, 0.2, 0.5).unwrap() < 1e-300);
        assert!(matches!(bridge_breach_probability(-1.0, 120.0, 150.0, 0.2, 0.5), Err(Error::Domain(_))));
        assert!(bridge_breach_probability(120.0, 120.0, 150.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn equivalent_european_limits() {
        let call = |x: f64| (x - 120.0).max(0.0);
        let never = barrier_equivalent_european(150.0, call, |_| 5.0, |_| 0.0);
        assert_eq!(never(140.0), 20.0);
        assert_eq!(never(150.0), 5.0);
        let always = barrier_equivalent_european(150.0, call, |_| 5.0, |_| 1.0);
        assert_eq!(always(140.0), 5.0);
        assert_eq!(always(100.0), 5.0);
    }

    proptest! {
        #[test]
        fn bridge_probability_is_monotone(
            x0 in 50.0f64..149.0, xt in 50.0f64..149.0, dx in 0.0f64..0.99,
            vol in 0.05f64..0.6, horizon in 0.05f64..2.0,
        ) {
            let p = bridge_breach_probability(x0, xt, 150.0, vol, horizon).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            let p_x0 = bridge_breach_probability(x0 + dx, xt, 150.0, vol, horizon).unwrap();
            let p_xt = bridge_breach_probability(x0, xt + dx, 150.0, vol, horizon).unwrap();
            prop_assert!(p_x0 >= p - 1e-15);
            prop_assert!(p_xt >= p - 1e-15);
            let near = bridge_breach_probability(x0, 150.0 * (1.0 - 1e-14), 150.0, vol, horizon).unwrap();
            prop_assert!(near > 1.0 - 1e-9);
        }

        #[test]
        fn monitor_flag_is_monotone_and_records_first_breach(path in proptest::collection::vec(100.0f64..200.0, 2..30)) {
            let spec = barrier(150.0);
            let states = run_monitor(&path, &spec);
            for w in states.windows(2) {
                prop_assert!(!w[0].breached || w[1].breached);
            }
            let first = path.iter().position(|&x| x >= 150.0).unwrap_or(path.len() - 1);
            prop_assert_eq!(states.last().unwrap().t_b, Some(first as f64));
        }
    }

    fn spec_with(strategy: ExerciseStrategy, value: ValueFunction, allow: bool) -> ExerciseSpec {
        ExerciseSpec { times: vec![0.25], value, strategy, allow_clairvoyant: allow }
    }

    #[test]
    fn exercise_examples() {
        let g30 = ValueFunction::Constant(30.0);
        let hv = spec_with(ExerciseStrategy::HoldingValue(Arc::new(|_t: f64, _x: &[f64]| 25.0)), g30.clone(), false);
        assert!(exercise_decision(&hv, 0.25, &[100.0], None).unwrap());

        let zero = spec_with(
            ExerciseStrategy::HoldingValue(Arc::new(|_t: f64, x: &[f64]| x[0] * 0.1)),
            ValueFunction::zero(),
            false,
        );
        for x in [50.0, 120.0, 400.0] {
            assert!(!exercise_decision(&zero, 0.25, &[x], None).unwrap());
        }

        let rule = ThresholdRule { underlier: 0, level: 140.0, above: true };
        let given = spec_with(ExerciseStrategy::Given(Arc::new(rule)), g30.clone(), false);
        assert!(exercise_decision(&given, 0.25, &[150.0], None).unwrap());
        assert!(!exercise_decision(&given, 0.25, &[130.0], None).unwrap());
    }

    #[test]
    fn clairvoyant_needs_opt_in() {
        let g = ValueFunction::Constant(30.0);
        let locked = spec_with(ExerciseStrategy::Clairvoyant, g.clone(), false);
        assert!(locked.validate(0.0, 0.5).unwrap_err().is_config());
        assert!(exercise_decision(&locked, 0.25, &[1.0], Some(1.0)).unwrap_err().is_config());
        let open = spec_with(ExerciseStrategy::Clairvoyant, g, true);
        assert!(open.validate(0.0, 0.5).is_ok());
        assert!(exercise_decision(&open, 0.25, &[1.0], Some(20.0)).unwrap());
        assert!(!exercise_decision(&open, 0.25, &[1.0], Some(40.0)).unwrap());
    }

    #[test]
    fn exercise_schedule_validation() {
        let mut s = spec_with(
            ExerciseStrategy::Given(Arc::new(ThresholdRule { underlier: 0, level: 1.0, above: true })),
            ValueFunction::zero(),
            false,
        );
        s.times = vec![0.5];
        assert!(s.validate(0.0, 0.5).is_err());
        s.times = vec![0.3, 0.2];
        assert!(s.validate(0.0, 0.5).is_err());
    }
}
