//! BSDE generators, the discrete drift term of the portfolio recursion,
//! transaction-cost charges, and exact/Taylor backward steps.
//!
//! The discrete recursion for the portfolio value is
//!
//! ```text
//! Y[i+1] = driftterm(t_i, Δt_i, X_i, Y_i, Π_i) − cost(Π_i → Π_{i+1}) + Π_iᵀ σ_LN(t_i, X_i) ΔW_i
//! driftterm(…) = Y_i − f(t_i, X_i, Y_i, Π_i) Δt_i
//! ```
//!
//! so the combined discrete drift `f_Δt = Y_i − driftterm + cost` enters with a
//! minus sign. `Π` is always the value invested per risky component; the cash
//! position is `π₀ = Y − Σ π_j`.
//!
//! For differential rates the generator is written with an explicit asset
//! growth rate `r`:
//!
//! ```text
//! f = −r Σπ_j − r_l (π₀)⁺ + r_b (π₀)⁻
//! ```
//!
//! which is the usual `−r_l Y + (r_b − r_l)(Σπ − Y)⁺` when `r = r_l`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum GeneratorKind {
    /// `f = −V(t,x) y + h(t,x)`.
    LinearPde {
        potential: ScalarField,
        source: ScalarField,
    },
    /// `f = −r y`.
    RiskNeutral {
        rate: f64,
    },
    /// `f = 0`.
    NumeraireZero,
    DifferentialRates {
        asset_rate: f64,
        lend: f64,
        borrow: f64,
    },
}

impl fmt::Debug for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorKind::LinearPde { .. } => f.write_str("LinearPde"),
            GeneratorKind::RiskNeutral { rate } => write!(f, "RiskNeutral({rate})"),
            GeneratorKind::NumeraireZero => f.write_str("NumeraireZero"),
            GeneratorKind::DifferentialRates { asset_rate, lend, borrow } => {
                write!(f, "DifferentialRates(r={asset_rate}, r_l={lend}, r_b={borrow})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    ValueBased,
    PerShare,
    FixedCommission,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostComponent {
    pub form: CostForm,
    pub lambda: f64,
    /// Ignored by `FixedCommission`.
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_exponent() -> f64 {
    2.0
}

/// One entry per risky component; `None` means that component trades for free.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransactionCostSpec {
    pub components: Vec<Option<CostComponent>>,
}

impl TransactionCostSpec {
    pub fn validate(&self) -> Result<()> {
        for (j, c) in self.components.iter().enumerate() {
            let Some(c) = c else { continue };
            if !(c.lambda >= 0.0) || !c.lambda.is_finite() {
                return Err(Error::config(format!("cost lambda[{j}] must be >= 0")));
            }
            if c.form != CostForm::FixedCommission && !(c.exponent > 1.0 && c.exponent <= 2.0) {
                return Err(Error::config(format!("cost exponent[{j}] must lie in (1, 2], got {}", c.exponent)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub costs: Option<TransactionCostSpec>,
}

/// Generator value and its partial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub value: f64,
    pub d_y: f64,
    /// `∂f/∂π_j`, identical for every component for the built-in variants.
    pub d_pi: f64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind) -> Self {
        Self { kind, costs: None }
    }

    pub fn risk_neutral(rate: f64) -> Self {
        Self::new(GeneratorKind::RiskNeutral { rate })
    }

    pub fn numeraire_zero() -> Self {
        Self::new(GeneratorKind::NumeraireZero)
    }

    pub fn differential_rates(asset_rate: f64, lend: f64, borrow: f64) -> Result<Self> {
        let g = Self::new(GeneratorKind::DifferentialRates { asset_rate, lend, borrow });
        g.validate()?;
        Ok(g)
    }

    pub fn with_costs(mut self, costs: TransactionCostSpec) -> Self {
        self.costs = Some(costs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let GeneratorKind::DifferentialRates { lend, borrow, asset_rate } = self.kind {
            if !(borrow >= lend) {
                return Err(Error::config(format!(
                    "differential rates need borrow >= lend, got r_b={borrow} r_l={lend}"
                )));
            }
            if ![lend, borrow, asset_rate].iter().all(|r| r.is_finite()) {
                return Err(Error::config("differential rates must be finite"));
            }
        }
        if let Some(c) = &self.costs {
            c.validate()?;
        }
        Ok(())
    }

    pub fn has_costs(&self) -> bool {
        self.costs.as_ref().is_some_and(|c| c.components.iter().any(Option::is_some))
    }

    pub fn partials(&self, t: f64, x: &[f64], y: f64, pi: &[f64]) -> Partials {
        match &self.kind {
            GeneratorKind::LinearPde { potential, source } => {
                let v = potential(t, x);
                Partials { value: -v * y + source(t, x), d_y: -v, d_pi: 0.0 }
            }
            GeneratorKind::RiskNeutral { rate } => Partials { value: -rate * y, d_y: -rate, d_pi: 0.0 },
            GeneratorKind::NumeraireZero => Partials { value: 0.0, d_y: 0.0, d_pi: 0.0 },
            GeneratorKind::DifferentialRates { asset_rate, lend, borrow } => {
                let s: f64 = pi.iter().sum();
                let cash = y - s;
                // kink at cash == 0 belongs to the lending branch
                let rate = if cash >= 0.0 { *lend } else { *borrow };
                Partials { value: -asset_rate * s - rate * cash, d_y: -rate, d_pi: -asset_rate + rate }
            }
        }
    }
}

pub fn eval_generator(spec: &GeneratorSpec, t: f64, x: &[f64], y: f64, pi: &[f64]) -> f64 {
    spec.partials(t, x, y, pi).value
}

/// Deterministic part of `Y[i+1]` before costs.
pub fn discrete_drift_term(spec: &GeneratorSpec, t: f64, dt: f64, x: &[f64], y: f64, pi: &[f64]) -> f64 {
    match &spec.kind {
        GeneratorKind::RiskNeutral { rate } => (1.0 + rate * dt) * y,
        GeneratorKind::DifferentialRates { asset_rate, lend, borrow } => {
            let s: f64 = pi.iter().sum();
            let cash = y - s;
            let cash_rate = if cash >= 0.0 { lend } else { borrow };
            y + dt * (asset_rate * s + cash_rate * cash)
        }
        _ => y - eval_generator(spec, t, x, y, pi) * dt,
    }
}

fn power_cost(d: f64, lambda: f64, q: f64) -> (f64, f64) {
    let a = d.abs();
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let v = lambda * a.powf(q);
    (v, q * v / a * d.signum())
}

/// Nonnegative charge for rebalancing from `pi_prev` (at `x_prev`) to `pi_next`
/// (at `x_next`). The caller subtracts it from `Y`.
pub fn transaction_cost_charge(
    spec: &TransactionCostSpec,
    pi_prev: &[f64],
    pi_next: &[f64],
    x_prev: &[f64],
    x_next: &[f64],
) -> f64 {
    transaction_cost_with_gradient(spec, pi_prev, pi_next, x_prev, x_next, None)
}

/// As [`transaction_cost_charge`], optionally writing `∂cost/∂pi_prev` and
/// `∂cost/∂pi_next`. The fixed-commission indicator has zero gradient.
pub fn transaction_cost_with_gradient(
    spec: &TransactionCostSpec,
    pi_prev: &[f64],
    pi_next: &[f64],
    x_prev: &[f64],
    x_next: &[f64],
    mut grad: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let mut total = 0.0;
    for (j, c) in spec.components.iter().enumerate() {
        let Some(c) = c else { continue };
        let (cost, d_prev, d_next) = match c.form {
            CostForm::ValueBased => {
                let (v, g) = power_cost(pi_next[j] - pi_prev[j], c.lambda, c.exponent);
                (v, -g, g)
            }
            CostForm::PerShare => {
                let d = pi_next[j] / x_next[j] - pi_prev[j] / x_prev[j];
                let (v, g) = power_cost(d, c.lambda, c.exponent);
                (v, -g / x_prev[j], g / x_next[j])
            }
            CostForm::FixedCommission => {
                let v = if pi_next[j] != pi_prev[j] { c.lambda } else { 0.0 };
                (v, 0.0, 0.0)
            }
        };
        total += cost;
        if let Some((gp, gn)) = grad.as_mut() {
            gp[j] += d_prev;
            gn[j] += d_next;
        }
    }
    total
}

/// Result of a backward step together with its sensitivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardStep {
    pub y: f64,
    pub d_residual: f64,
    /// `∂y/∂π_j`, the same for every component.
    pub d_pi: f64,
}

fn exact_tolerance(r: f64) -> f64 {
    1e-12_f64.max(8.0 * f64::EPSILON * r.abs())
}

/// Solves `y − f(t, x, y, π) Δt = R` for `y`.
pub fn backward_exact_step(spec: &GeneratorSpec, t: f64, dt: f64, x: &[f64], pi: &[f64], residual: f64) -> Result<f64> {
    backward_exact_step_partials(spec, t, dt, x, pi, residual).map(|s| s.y)
}

pub fn backward_exact_step_partials(
    spec: &GeneratorSpec,
    t: f64,
    dt: f64,
    x: &[f64],
    pi: &[f64],
    residual: f64,
) -> Result<BackwardStep> {
    let step = match &spec.kind {
        GeneratorKind::NumeraireZero => BackwardStep { y: residual, d_residual: 1.0, d_pi: 0.0 },
        GeneratorKind::RiskNeutral { rate } => {
            let denom = 1.0 + rate * dt;
            if !(denom > 0.0) {
                return Err(Error::Numerical(format!(
                    "backward step has no unique root: 1 + r dt = {denom} (r={rate}, dt={dt})"
                )));
            }
            let c = rate * dt / denom;
            BackwardStep { y: residual - residual * c, d_residual: 1.0 - c, d_pi: 0.0 }
        }
        GeneratorKind::LinearPde { potential, source } => {
            let v = potential(t, x);
            let h = source(t, x);
            let denom = 1.0 + v * dt;
            if !(denom > 0.0) {
                return Err(Error::Numerical(format!(
                    "backward step has no unique root: 1 + V dt = {denom} (V={v}, dt={dt})"
                )));
            }
            BackwardStep { y: (residual + h * dt) / denom, d_residual: 1.0 / denom, d_pi: 0.0 }
        }
        GeneratorKind::DifferentialRates { asset_rate, lend, borrow } => {
            let s: f64 = pi.iter().sum();
            let solve = |cash_rate: f64| {
                let denom = 1.0 + cash_rate * dt;
                let y = (residual - dt * (asset_rate - cash_rate) * s) / denom;
                (y, denom)
            };
            let (y_l, den_l) = solve(*lend);
            let (y_b, den_b) = solve(*borrow);
            if !(den_l > 0.0 && den_b > 0.0) {
                return Err(Error::Numerical(format!(
                    "backward step has no unique root: 1 + r_l dt = {den_l}, 1 + r_b dt = {den_b}"
                )));
            }
            let lend_ok = y_l - s >= 0.0;
            let borrow_ok = y_b - s < 0.0;
            match (lend_ok, borrow_ok) {
                (true, _) => BackwardStep { y: y_l, d_residual: 1.0 / den_l, d_pi: -dt * (asset_rate - lend) / den_l },
                (false, true) => {
                    BackwardStep { y: y_b, d_residual: 1.0 / den_b, d_pi: -dt * (asset_rate - borrow) / den_b }
                }
                (false, false) => {
                    return Err(Error::Numerical(format!(
                        "differential-rates backward step found no consistent branch \
                         (R={residual}, Σπ={s}, lend root {y_l}, borrow root {y_b})"
                    )))
                }
            }
        }
    };
    let check = step.y - eval_generator(spec, t, x, step.y, pi) * dt - residual;
    if !step.y.is_finite() || check.abs() > exact_tolerance(residual) {
        return Err(Error::Numerical(format!(
            "backward step residual {check:e} exceeds tolerance (R={residual}, y={})",
            step.y
        )));
    }
    Ok(step)
}

/// First-order approximation `y ≈ R + f(t, x, R, π) Δt`.
pub fn backward_taylor_step(spec: &GeneratorSpec, t: f64, dt: f64, x: &[f64], pi: &[f64], residual: f64) -> f64 {
    backward_taylor_step_partials(spec, t, dt, x, pi, residual).y
}

pub fn backward_taylor_step_partials(
    spec: &GeneratorSpec,
    t: f64,
    dt: f64,
    x: &[f64],
    pi: &[f64],
    residual: f64,
) -> BackwardStep {
    let p = spec.partials(t, x, residual, pi);
    BackwardStep { y: residual + p.value * dt, d_residual: 1.0 + p.d_y * dt, d_pi: p.d_pi * dt }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn generator_examples() {
        assert_eq!(eval_generator(&GeneratorSpec::risk_neutral(0.06), 0.0, &[1.0], 100.0, &[0.0]), -6.0);
        assert_eq!(eval_generator(&GeneratorSpec::numeraire_zero(), 0.3, &[7.0], 55.0, &[3.0]), 0.0);
        let dr = GeneratorSpec::differential_rates(0.04, 0.04, 0.06).unwrap();
        let f = eval_generator(&dr, 0.0, &[1.0], 100.0, &[80.0]);
        assert!((f - -4.0).abs() < 1e-12, "{f}");
        // borrowing branch: −r_l Y + (r_b − r_l)(Σπ − Y)
        let f = eval_generator(&dr, 0.0, &[1.0], 100.0, &[130.0]);
        assert!((f - (-4.0 + 0.02 * 30.0)).abs() < 1e-12, "{f}");
    }

    #[test]
    fn linear_pde_generator() {
        let g = GeneratorSpec::new(GeneratorKind::LinearPde {
            potential: Arc::new(|_t, x| 0.5 * x[0]),
            source: Arc::new(|t, _x| 2.0 + t),
        });
        let f = eval_generator(&g, 1.0, &[0.2], 10.0, &[0.0]);
        assert!((f - (-1.0 + 3.0)).abs() < 1e-15);
        let y = backward_exact_step(&g, 1.0, 0.1, &[0.2], &[0.0], 5.0).unwrap();
        assert!((y - eval_generator(&g, 1.0, &[0.2], y, &[0.0]) * 0.1 - 5.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_inverted_rates() {
        assert!(GeneratorSpec::differential_rates(0.05, 0.06, 0.04).unwrap_err().is_config());
    }

    #[test]
    fn drift_term_examples() {
        let rn = GeneratorSpec::risk_neutral(0.06);
        assert!((discrete_drift_term(&rn, 0.0, 0.01, &[1.0], 100.0, &[0.0]) - 100.06).abs() < 1e-12);
        let dr = GeneratorSpec::differential_rates(0.06, 0.04, 0.08).unwrap();
        let lend = discrete_drift_term(&dr, 0.0, 0.01, &[1.0], 100.0, &[60.0]);
        assert!((lend - 100.052).abs() < 1e-12, "{lend}");
        let borrow = discrete_drift_term(&dr, 0.0, 0.01, &[1.0], 100.0, &[140.0]);
        assert!((borrow - 100.052).abs() < 1e-12, "{borrow}");
    }

    #[test]
    fn drift_term_matches_generator_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let dr = GeneratorSpec::differential_rates(0.06, 0.04, 0.08).unwrap();
        for _ in 0..1000 {
            let y: f64 = rng.random_range(-200.0..200.0);
            let pi = [rng.random_range(-200.0..200.0), rng.random_range(-50.0..50.0)];
            let dt = 0.01;
            let a = discrete_drift_term(&dr, 0.0, dt, &[1.0, 1.0], y, &pi);
            let b = y - eval_generator(&dr, 0.0, &[1.0, 1.0], y, &pi) * dt;
            assert!((a - b).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    fn costs(form: CostForm, lambda: f64, exponent: f64) -> TransactionCostSpec {
        TransactionCostSpec { components: vec![Some(CostComponent { form, lambda, exponent })] }
    }

    #[test]
    fn transaction_cost_examples() {
        for form in [CostForm::ValueBased, CostForm::FixedCommission] {
            let c = costs(form, 0.01, 1.5);
            assert_eq!(transaction_cost_charge(&c, &[50.0], &[50.0], &[100.0], &[110.0]), 0.0);
        }
        let c = costs(CostForm::PerShare, 0.01, 1.5);
        assert_eq!(transaction_cost_charge(&c, &[50.0], &[55.0], &[100.0], &[110.0]), 0.0);
        let v = transaction_cost_charge(&costs(CostForm::ValueBased, 0.01, 2.0), &[50.0], &[60.0], &[1.0], &[1.0]);
        assert!((v - 1.0).abs() < 1e-12);
        // π/X moves 0.5 → 0.4
        let v = transaction_cost_charge(&costs(CostForm::PerShare, 0.01, 1.5), &[50.0], &[40.0], &[100.0], &[100.0]);
        assert!((v - 0.01 * 0.1f64.powf(1.5)).abs() < 1e-15);
        assert!((v - 3.1622776601683794e-4).abs() < 1e-15);
        let v = transaction_cost_charge(
            &costs(CostForm::FixedCommission, 0.25, 2.0),
            &[50.0],
            &[50.000001],
            &[1.0],
            &[1.0],
        );
        assert_eq!(v, 0.25);
    }

    #[test]
    fn cost_validation() {
        assert!(costs(CostForm::ValueBased, 0.01, 1.0).validate().is_err());
        assert!(costs(CostForm::ValueBased, 0.01, 2.5).validate().is_err());
        assert!(costs(CostForm::ValueBased, -0.01, 2.0).validate().is_err());
        assert!(costs(CostForm::FixedCommission, 0.01, 0.0).validate().is_ok());
    }

    #[test]
    fn cost_gradient_matches_differences() {
        for form in [CostForm::ValueBased, CostForm::PerShare] {
            let c = costs(form, 0.03, 1.5);
            let (pp, pn, xp, xn) = (40.0, 47.0, 100.0, 104.0);
            let mut gp = [0.0];
            let mut gn = [0.0];
            transaction_cost_with_gradient(&c, &[pp], &[pn], &[xp], &[xn], Some((&mut gp, &mut gn)));
            let h = 1e-6;
            let f = |a: f64, b: f64| transaction_cost_charge(&c, &[a], &[b], &[xp], &[xn]);
            let fd_p = (f(pp + h, pn) - f(pp - h, pn)) / (2.0 * h);
            let fd_n = (f(pp, pn + h) - f(pp, pn - h)) / (2.0 * h);
            assert!((gp[0] - fd_p).abs() < 1e-7 * fd_p.abs().max(1e-3));
            assert!((gn[0] - fd_n).abs() < 1e-7 * fd_n.abs().max(1e-3));
        }
    }

    #[test]
    fn exact_step_examples() {
        let nz = GeneratorSpec::numeraire_zero();
        assert_eq!(backward_exact_step(&nz, 0.0, 0.01, &[1.0], &[3.0], 42.0).unwrap(), 42.0);
        let rn = GeneratorSpec::risk_neutral(0.06);
        let y = backward_exact_step(&rn, 0.0, 0.01, &[1.0], &[0.0], 100.06).unwrap();
        assert!((y - 100.0).abs() < 1e-12);
    }

    #[test]
    fn taylor_step_examples() {
        let nz = GeneratorSpec::numeraire_zero();
        assert_eq!(
            backward_taylor_step(&nz, 0.0, 0.01, &[1.0], &[0.0], 9.0),
            backward_exact_step(&nz, 0.0, 0.01, &[1.0], &[0.0], 9.0).unwrap()
        );
        let rn = GeneratorSpec::risk_neutral(0.06);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let r: f64 = rng.random_range(-500.0..500.0);
            let dt: f64 = rng.random_range(1e-4..0.1);
            let exact = backward_exact_step(&rn, 0.0, dt, &[1.0], &[0.0], r).unwrap();
            let taylor = backward_taylor_step(&rn, 0.0, dt, &[1.0], &[0.0], r);
            let bound = 0.06f64.powi(2) * dt * dt * r.abs() / (1.0 + 0.06 * dt);
            assert!((taylor - exact).abs() <= bound * (1.0 + 1e-9) + 1e-13);
        }
    }

    #[test]
    fn taylor_gap_is_second_order() {
        let dr = GeneratorSpec::differential_rates(0.06, 0.04, 0.08).unwrap();
        let gap = |dt: f64| {
            let e = backward_exact_step(&dr, 0.0, dt, &[1.0], &[60.0], 100.0).unwrap();
            let t = backward_taylor_step(&dr, 0.0, dt, &[1.0], &[60.0], 100.0);
            (t - e).abs()
        };
        let (g1, g2) = (gap(0.02), gap(0.01));
        let ratio = g1 / g2;
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn differential_rates_round_trip_both_branches() {
        let dr = GeneratorSpec::differential_rates(0.06, 0.04, 0.08).unwrap();
        for (y, s) in [(100.0, 60.0), (100.0, 140.0), (100.0, 100.0), (-20.0, 10.0)] {
            let r = discrete_drift_term(&dr, 0.0, 0.01, &[1.0], y, &[s]);
            let back = backward_exact_step(&dr, 0.0, 0.01, &[1.0], &[s], r).unwrap();
            assert!((back - y).abs() <= 1e-12 * y.abs().max(1.0), "{y} {s} {back}");
        }
    }

    #[test]
    fn exact_step_partials_match_differences() {
        let dr = GeneratorSpec::differential_rates(0.05, 0.03, 0.09).unwrap();
        for (s, r) in [(60.0, 100.0), (140.0, 100.0)] {
            let st = backward_exact_step_partials(&dr, 0.0, 0.02, &[1.0], &[s], r).unwrap();
            let h = 1e-5;
            let f = |s: f64, r: f64| backward_exact_step(&dr, 0.0, 0.02, &[1.0], &[s], r).unwrap();
            let fd_r = (f(s, r + h) - f(s, r - h)) / (2.0 * h);
            let fd_s = (f(s + h, r) - f(s - h, r)) / (2.0 * h);
            assert!((st.d_residual - fd_r).abs() < 1e-8);
            assert!((st.d_pi - fd_s).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn differential_rates_reduce_to_risk_neutral(y in -1e3f64..1e3, s in -1e3f64..1e3, r in 0.0f64..0.2) {
            let dr = GeneratorSpec::differential_rates(r, r, r).unwrap();
            let rn = GeneratorSpec::risk_neutral(r);
            let a = eval_generator(&dr, 0.0, &[1.0], y, &[s]);
            let b = eval_generator(&rn, 0.0, &[1.0], y, &[s]);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + y.abs() + s.abs()));
        }

        #[test]
        fn generators_are_positively_homogeneous(y in -1e3f64..1e3, s in -1e3f64..1e3, lam in 0.0f64..10.0) {
            for g in [GeneratorSpec::risk_neutral(0.06), GeneratorSpec::differential_rates(0.05, 0.04, 0.08).unwrap()] {
                let a = eval_generator(&g, 0.0, &[1.0], lam * y, &[lam * s]);
                let b = lam * eval_generator(&g, 0.0, &[1.0], y, &[s]);
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn costs_are_nonnegative_and_vanish_without_trading(
            a in -100.0f64..100.0, d in -10.0f64..10.0, x in 50.0f64..150.0, q in 1.01f64..2.0, lam in 0.0f64..0.1,
        ) {
            for form in [CostForm::ValueBased, CostForm::PerShare, CostForm::FixedCommission] {
                let c = costs(form, lam, q);
                let moved = transaction_cost_charge(&c, &[a], &[a + d], &[x], &[x]);
                prop_assert!(moved >= 0.0);
                prop_assert_eq!(transaction_cost_charge(&c, &[a], &[a], &[x], &[x]), 0.0);
                if lam > 0.0 && d != 0.0 {
                    prop_assert!(moved > 0.0);
                }
            }
        }
    }
}
