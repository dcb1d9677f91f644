//! Time grids, initial-state sampling, Brownian increments and Euler–Maruyama
//! stepping of the risk-factor SDE.
//!
//! Volatility matrices use the row convention `dX_j = μ_j dt + Σ_k σ[j][k] dW_k`,
//! stored row-major as `dim × dim`. For lognormal models the normal volatility
//! is `σ_N[j][k] = x_j · σ_LN[j][k]`.
//!
//! Path arrays are stored step-major (`[step][path][component]`) so that the
//! states of every path at one grid time form a contiguous `batch × dim` block,
//! which is what the control networks consume.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{labels, RandomStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::config("time grid needs at least two points"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("time grid contains non-finite times"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("time grid must be strictly increasing"));
        }
        Ok(Self { times })
    }

    /// `steps + 1` equally spaced points from `t0` to `maturity` inclusive.
    pub fn uniform(t0: f64, maturity: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("time grid needs at least one step"));
        }
        if !(maturity > t0) || !t0.is_finite() || !maturity.is_finite() {
            return Err(Error::config(format!("time grid span must be positive, got [{t0}, {maturity}]")));
        }
        let span = maturity - t0;
        let mut times: Vec<f64> = (0..=steps).map(|i| t0 + span * (i as f64) / (steps as f64)).collect();
        times[steps] = maturity;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `N`; the grid has `N + 1` points.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn maturity(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Index of the grid point equal to `t` up to a relative tolerance of 1e-9.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let scale = self.maturity().abs().max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * scale)
    }
}

/// `f(t, x, out)` writing a vector or a row-major matrix into `out`.
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Dynamics {
    /// `μ_j = drift_j · x_j`, `σ_LN` constant.
    Lognormal { drift: Vec<f64>, vol: Vec<f64> },
    /// Arbitrary drift and normal volatility. `σ_LN` is derived as `σ_N / x` row-wise.
    Custom { drift: StateFn, normal_vol: StateFn },
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Lognormal { drift, vol } => {
                f.debug_struct("Lognormal").field("drift", drift).field("vol", vol).finish()
            }
            Dynamics::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    dim: usize,
    dynamics: Dynamics,
    short_rate: f64,
}

impl ModelSpec {
    /// Single-asset risk-neutral Black–Scholes: `μ = r·x`, `σ_N = σ·x`.
    pub fn black_scholes(rate: f64, vol: f64) -> Self {
        Self { dim: 1, dynamics: Dynamics::Lognormal { drift: vec![rate], vol: vec![vol] }, short_rate: rate }
    }

    pub fn lognormal(drift: Vec<f64>, vol: Vec<f64>, short_rate: f64) -> Result<Self> {
        let dim = drift.len();
        if dim == 0 || vol.len() != dim * dim {
            return Err(Error::config(format!(
                "lognormal model needs dim >= 1 and a dim x dim volatility matrix (dim {dim}, {} entries)",
                vol.len()
            )));
        }
        Ok(Self { dim, dynamics: Dynamics::Lognormal { drift, vol }, short_rate })
    }

    pub fn custom(dim: usize, drift: StateFn, normal_vol: StateFn, short_rate: f64) -> Self {
        Self { dim, dynamics: Dynamics::Custom { drift, normal_vol }, short_rate }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn short_rate(&self) -> f64 {
        self.short_rate
    }

    pub fn is_lognormal(&self) -> bool {
        matches!(self.dynamics, Dynamics::Lognormal { .. })
    }

    /// Constant Black–Scholes volatility of a one-dimensional lognormal model.
    pub fn bs_vol(&self) -> Option<f64> {
        match &self.dynamics {
            Dynamics::Lognormal { vol, .. } if self.dim == 1 => Some(vol[0]),
            _ => None,
        }
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Lognormal { drift, .. } => {
                for ((o, &m), &xj) in out.iter_mut().zip(drift).zip(x) {
                    *o = m * xj;
                }
            }
            Dynamics::Custom { drift, .. } => drift(t, x, out),
        }
    }

    pub fn normal_vol(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.dynamics {
            Dynamics::Lognormal { vol, .. } => {
                for j in 0..d {
                    for k in 0..d {
                        out[j * d + k] = x[j] * vol[j * d + k];
                    }
                }
            }
            Dynamics::Custom { normal_vol, .. } => normal_vol(t, x, out),
        }
    }

    pub fn lognormal_vol(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.dynamics {
            Dynamics::Lognormal { vol, .. } => out.copy_from_slice(vol),
            Dynamics::Custom { normal_vol, .. } => {
                normal_vol(t, x, out);
                for j in 0..d {
                    for k in 0..d {
                        out[j * d + k] /= x[j];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStateSpec {
    Fixed(Vec<f64>),
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl InitialStateSpec {
    pub fn dim(&self) -> usize {
        match self {
            InitialStateSpec::Fixed(x) => x.len(),
            InitialStateSpec::UniformBox { lo, .. } => lo.len(),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, InitialStateSpec::Fixed(_))
    }

    /// Center of the distribution: the fixed value, or the box midpoint.
    pub fn center(&self) -> Vec<f64> {
        match self {
            InitialStateSpec::Fixed(x) => x.clone(),
            InitialStateSpec::UniformBox { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        match self {
            InitialStateSpec::Fixed(x) => {
                if x.len() != model.dim() {
                    return Err(Error::config("initial state dimension does not match model"));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("initial state must be finite"));
                }
                if model.is_lognormal() && x.iter().any(|&v| v <= 0.0) {
                    return Err(Error::config("lognormal models need a positive initial state"));
                }
            }
            InitialStateSpec::UniformBox { lo, hi } => {
                if lo.len() != model.dim() || hi.len() != model.dim() {
                    return Err(Error::config("initial box dimension does not match model"));
                }
                check_box(lo, hi)?;
            }
        }
        Ok(())
    }
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != hi.len() {
        return Err(Error::config("box bounds have different lengths"));
    }
    for (j, (a, b)) in lo.iter().zip(hi).enumerate() {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::config(format!("box bound {j} is not finite")));
        }
        if a > b {
            return Err(Error::config(format!("box bound {j}: lo {a} > hi {b}")));
        }
    }
    Ok(())
}

/// `batch × dim` initial states, row-major.
pub fn sample_initial_states(spec: &InitialStateSpec, batch: usize, rng: &RandomStream) -> Result<Vec<f64>> {
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    match spec {
        InitialStateSpec::Fixed(x) => Ok(x.repeat(batch)),
        InitialStateSpec::UniformBox { lo, hi } => {
            check_box(lo, hi)?;
            let d = lo.len();
            let mut out = vec![0.0; batch * d];
            for (b, row) in out.chunks_exact_mut(d).enumerate() {
                let mut r = rng.path_rng(b as u64);
                for j in 0..d {
                    let u: f64 = r.random();
                    row[j] = lo[j] + (hi[j] - lo[j]) * u;
                }
            }
            Ok(out)
        }
    }
}

/// Gaussian increments with variance `Δt_i`, laid out `[step][path][component]`.
pub fn simulate_increments(grid: &TimeGrid, batch: usize, dim: usize, rng: &RandomStream) -> Vec<f64> {
    let n = grid.steps();
    let sqrt_dt: Vec<f64> = (0..n).map(|i| grid.dt(i).sqrt()).collect();
    let mut out = vec![0.0; n * batch * dim];
    for b in 0..batch {
        let mut r = rng.path_rng(b as u64);
        for (i, s) in sqrt_dt.iter().enumerate() {
            let base = (i * batch + b) * dim;
            for k in 0..dim {
                let z: f64 = r.sample(StandardNormal);
                out[base + k] = s * z;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stepping {
    #[default]
    Euler,
    /// Exact lognormal transition. Oracle runs only.
    ExactGbm,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Simulation(format!("non-finite {what}")))
    }
}

/// One Euler–Maruyama step `x + μ(t,x)Δt + σ_N(t,x)ΔW`.
pub fn euler_step(x: &[f64], t: f64, dt: f64, dw: &[f64], model: &ModelSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    let mut scratch = StepScratch::new(model.dim());
    euler_step_into(x, t, dt, dw, model, &mut scratch, &mut out)?;
    Ok(out)
}

struct StepScratch {
    drift: Vec<f64>,
    vol: Vec<f64>,
}

impl StepScratch {
    fn new(dim: usize) -> Self {
        Self { drift: vec![0.0; dim], vol: vec![0.0; dim * dim] }
    }
}

fn euler_step_into(
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
    model: &ModelSpec,
    scratch: &mut StepScratch,
    out: &mut [f64],
) -> Result<()> {
    let d = model.dim();
    if x.len() != d || dw.len() != d {
        return Err(Error::usage("state/increment dimension does not match model"));
    }
    if !(dt > 0.0) {
        return Err(Error::Simulation(format!("time step must be positive, got {dt}")));
    }
    check_finite(x, "state")?;
    check_finite(dw, "increment")?;
    if !t.is_finite() {
        return Err(Error::Simulation("non-finite time".into()));
    }
    model.drift(t, x, &mut scratch.drift);
    model.normal_vol(t, x, &mut scratch.vol);
    for j in 0..d {
        let mut diffusion = 0.0;
        for k in 0..d {
            diffusion += scratch.vol[j * d + k] * dw[k];
        }
        out[j] = x[j] + scratch.drift[j] * dt + diffusion;
    }
    check_finite(out, "state after Euler step")
}

fn exact_gbm_step_into(x: &[f64], dt: f64, dw: &[f64], model: &ModelSpec, out: &mut [f64]) -> Result<()> {
    let Dynamics::Lognormal { drift, vol } = model.dynamics() else {
        return Err(Error::config("exact GBM stepping needs a lognormal model"));
    };
    let d = model.dim();
    for j in 0..d {
        let mut var = 0.0;
        let mut diffusion = 0.0;
        for k in 0..d {
            let s = vol[j * d + k];
            var += s * s;
            diffusion += s * dw[k];
        }
        out[j] = x[j] * ((drift[j] - 0.5 * var) * dt + diffusion).exp();
    }
    check_finite(out, "state after exact step")
}

/// Simulated risk-factor paths together with the increments that drove them.
#[derive(Debug, Clone)]
pub struct PathBatch {
    batch: usize,
    steps: usize,
    dim: usize,
    states: Vec<f64>,
    increments: Vec<f64>,
}

impl PathBatch {
    pub fn from_parts(batch: usize, steps: usize, dim: usize, states: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        if states.len() != batch * (steps + 1) * dim || increments.len() != batch * steps * dim {
            return Err(Error::usage(format!(
                "path arrays have wrong shape for batch {batch}, steps {steps}, dim {dim}"
            )));
        }
        Ok(Self { batch, steps, dim, states, increments })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// States of every path at grid index `i`, `batch × dim`.
    pub fn states_at(&self, i: usize) -> &[f64] {
        let w = self.batch * self.dim;
        &self.states[i * w..(i + 1) * w]
    }

    /// Increments over step `i` for every path, `batch × dim`.
    pub fn increments_at(&self, i: usize) -> &[f64] {
        let w = self.batch * self.dim;
        &self.increments[i * w..(i + 1) * w]
    }

    pub fn state(&self, b: usize, i: usize) -> &[f64] {
        let o = (i * self.batch + b) * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn increment(&self, b: usize, i: usize) -> &[f64] {
        let o = (i * self.batch + b) * self.dim;
        &self.increments[o..o + self.dim]
    }
}

pub fn simulate_paths(
    grid: &TimeGrid,
    model: &ModelSpec,
    init: &InitialStateSpec,
    batch: usize,
    rng: &RandomStream,
) -> Result<PathBatch> {
    simulate_paths_with(grid, model, init, batch, rng, Stepping::Euler)
}

pub fn simulate_paths_with(
    grid: &TimeGrid,
    model: &ModelSpec,
    init: &InitialStateSpec,
    batch: usize,
    rng: &RandomStream,
    stepping: Stepping,
) -> Result<PathBatch> {
    init.validate(model)?;
    let d = model.dim();
    let n = grid.steps();
    let x0 = sample_initial_states(init, batch, &rng.substream(labels::INITIAL_STATES))?;
    let increments = simulate_increments(grid, batch, d, &rng.substream(labels::INCREMENTS));
    let w = batch * d;
    let mut states = vec![0.0; (n + 1) * w];
    states[..w].copy_from_slice(&x0);
    let mut scratch = StepScratch::new(d);
    for i in 0..n {
        let (t, dt) = (grid.time(i), grid.dt(i));
        let (done, rest) = states.split_at_mut((i + 1) * w);
        let cur = &done[i * w..];
        let next = &mut rest[..w];
        let dw = &increments[i * w..(i + 1) * w];
        for b in 0..batch {
            let r = b * d..(b + 1) * d;
            match stepping {
                Stepping::Euler => {
                    euler_step_into(&cur[r.clone()], t, dt, &dw[r.clone()], model, &mut scratch, &mut next[r])?
                }
                Stepping::ExactGbm => exact_gbm_step_into(&cur[r.clone()], dt, &dw[r.clone()], model, &mut next[r])?,
            }
        }
    }
    PathBatch::from_parts(batch, n, d, states, increments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, var)
    }

    #[test]
    fn uniform_grid_examples() {
        let g = TimeGrid::uniform(0.0, 0.5, 50).unwrap();
        assert_eq!(g.times().len(), 51);
        for i in 0..50 {
            assert!((g.dt(i) - 0.01).abs() < 1e-15);
        }
        let g = TimeGrid::uniform(0.0, 1.0, 1).unwrap();
        assert_eq!(g.times(), &[0.0, 1.0]);
        let g = TimeGrid::uniform(0.25, 0.5, 5).unwrap();
        for i in 0..5 {
            assert!((g.dt(i) - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_rejects_bad_spans() {
        assert!(TimeGrid::uniform(0.0, 0.0, 5).unwrap_err().is_config());
        assert!(TimeGrid::uniform(1.0, 0.5, 5).unwrap_err().is_config());
        assert!(TimeGrid::uniform(0.0, 1.0, 0).unwrap_err().is_config());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
    }

    #[test]
    fn fixed_initial_states_are_copies() {
        let s = sample_initial_states(&InitialStateSpec::Fixed(vec![120.0]), 512, &RandomStream::new(1)).unwrap();
        assert_eq!(s.len(), 512);
        assert!(s.iter().all(|&x| x == 120.0));
    }

    #[test]
    fn uniform_box_law_of_large_numbers() {
        let spec = InitialStateSpec::UniformBox { lo: vec![70.0], hi: vec![170.0] };
        let n = 1_000_000;
        let s = sample_initial_states(&spec, n, &RandomStream::new(2)).unwrap();
        assert!(s.iter().all(|&x| (70.0..=170.0).contains(&x)));
        let (m, _) = mean_var(&s);
        // uniform variance (hi - lo)^2 / 12
        let se = (100.0f64.powi(2) / 12.0 / n as f64).sqrt();
        assert!((m - 120.0).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn degenerate_and_inverted_boxes() {
        let spec = InitialStateSpec::UniformBox { lo: vec![95.0], hi: vec![95.0] };
        let s = sample_initial_states(&spec, 64, &RandomStream::new(3)).unwrap();
        assert!(s.iter().all(|&x| x == 95.0));
        let bad = InitialStateSpec::UniformBox { lo: vec![2.0], hi: vec![1.0] };
        assert!(sample_initial_states(&bad, 4, &RandomStream::new(3)).unwrap_err().is_config());
    }

    #[test]
    fn increment_moments() {
        let grid = TimeGrid::uniform(0.0, 0.01, 1).unwrap();
        let n = 1_000_000;
        let dw = simulate_increments(&grid, n, 1, &RandomStream::new(4));
        let (m, v) = mean_var(&dw);
        assert!((v - 0.01).abs() < 0.01 * 0.01, "variance {v}");
        assert!(m.abs() < 3.0 * (0.01f64 / n as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn increments_are_deterministic() {
        let grid = TimeGrid::uniform(0.0, 0.5, 50).unwrap();
        let a = simulate_increments(&grid, 64, 2, &RandomStream::new(9));
        let b = simulate_increments(&grid, 64, 2, &RandomStream::new(9));
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        // path b's draws do not depend on the batch size
        let c = simulate_increments(&grid, 16, 2, &RandomStream::new(9));
        for i in 0..50 {
            for b in 0..16 {
                for k in 0..2 {
                    assert_eq!(a[(i * 64 + b) * 2 + k].to_bits(), c[(i * 16 + b) * 2 + k].to_bits());
                }
            }
        }
    }

    #[test]
    fn euler_step_examples() {
        let frozen = ModelSpec::black_scholes(0.0, 0.0);
        assert_eq!(euler_step(&[3.0], 0.0, 0.1, &[0.7], &frozen).unwrap(), vec![3.0]);
        let bs = ModelSpec::black_scholes(0.06, 0.2);
        let x = euler_step(&[120.0], 0.0, 0.01, &[0.0], &bs).unwrap();
        assert!((x[0] - 120.072).abs() < 1e-12);
        let x = euler_step(&[120.0], 0.0, 0.01, &[0.05], &bs).unwrap();
        assert!((x[0] - 121.272).abs() < 1e-12);
    }

    #[test]
    fn euler_step_rejects_non_finite() {
        let bs = ModelSpec::black_scholes(0.06, 0.2);
        assert!(matches!(euler_step(&[f64::NAN], 0.0, 0.01, &[0.0], &bs), Err(Error::Simulation(_))));
        assert!(matches!(euler_step(&[1.0], 0.0, 0.01, &[f64::INFINITY], &bs), Err(Error::Simulation(_))));
        assert!(euler_step(&[1.0], 0.0, 0.0, &[0.0], &bs).is_err());
    }

    #[test]
    fn zero_vol_paths_compound_deterministically() {
        let grid = TimeGrid::uniform(0.0, 0.5, 50).unwrap();
        let model = ModelSpec::black_scholes(0.06, 0.0);
        let p = simulate_paths(&grid, &model, &InitialStateSpec::Fixed(vec![120.0]), 8, &RandomStream::new(5)).unwrap();
        let mut expected = 120.0;
        for i in 0..50 {
            expected *= 1.0 + 0.06 * grid.dt(i);
        }
        for b in 0..8 {
            assert!((p.state(b, 50)[0] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn single_step_path_matches_euler_step() {
        let grid = TimeGrid::uniform(0.0, 0.25, 1).unwrap();
        let model = ModelSpec::black_scholes(0.06, 0.2);
        let p = simulate_paths(&grid, &model, &InitialStateSpec::Fixed(vec![100.0]), 4, &RandomStream::new(6)).unwrap();
        for b in 0..4 {
            let x = euler_step(p.state(b, 0), 0.0, 0.25, p.increment(b, 0), &model).unwrap();
            assert_eq!(x[0].to_bits(), p.state(b, 1)[0].to_bits());
        }
    }

    #[test]
    fn risk_neutral_terminal_mean() {
        // 10^6 paths in ten independent chunks of 10^5.
        let grid = TimeGrid::uniform(0.0, 0.5, 50).unwrap();
        let model = ModelSpec::black_scholes(0.06, 0.2);
        let init = InitialStateSpec::Fixed(vec![120.0]);
        let root = RandomStream::new(11);
        let mut terminal = Vec::with_capacity(1_000_000);
        for c in 0..10 {
            let p = simulate_paths(&grid, &model, &init, 100_000, &root.substream(c)).unwrap();
            terminal.extend_from_slice(p.states_at(50));
        }
        let (m, v) = mean_var(&terminal);
        let se = (v / terminal.len() as f64).sqrt();
        let target = 120.0 * (0.06f64 * 0.5).exp();
        assert!((m - target).abs() < 3.0 * se, "mean {m} target {target} se {se}");
    }

    #[test]
    fn discounted_paths_are_martingales() {
        let grid = TimeGrid::uniform(0.0, 0.5, 50).unwrap();
        let model = ModelSpec::black_scholes(0.06, 0.2);
        let p = simulate_paths(&grid, &model, &InitialStateSpec::Fixed(vec![120.0]), 100_000, &RandomStream::new(12))
            .unwrap();
        let disc: Vec<f64> = p.states_at(50).iter().map(|x| x * (-0.03f64).exp()).collect();
        let (m, v) = mean_var(&disc);
        let se = (v / disc.len() as f64).sqrt();
        assert!((m - 120.0).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn path_batch_shapes() {
        let grid = TimeGrid::uniform(0.0, 1.0, 7).unwrap();
        let model = ModelSpec::lognormal(vec![0.01, 0.02], vec![0.2, 0.0, 0.05, 0.3], 0.01).unwrap();
        let p =
            simulate_paths(&grid, &model, &InitialStateSpec::Fixed(vec![1.0, 2.0]), 5, &RandomStream::new(1)).unwrap();
        assert_eq!((p.batch(), p.steps(), p.dim()), (5, 7, 2));
        assert_eq!(p.states_at(7).len(), 10);
        assert_eq!(p.increments_at(6).len(), 10);
        assert!(PathBatch::from_parts(5, 7, 2, vec![0.0; 3], vec![0.0; 70]).is_err());
    }

    #[test]
    fn exact_gbm_stepping_has_exact_mean() {
        let grid = TimeGrid::uniform(0.0, 0.5, 5).unwrap();
        let model = ModelSpec::black_scholes(0.06, 0.2);
        let p = simulate_paths_with(
            &grid,
            &model,
            &InitialStateSpec::Fixed(vec![120.0]),
            200_000,
            &RandomStream::new(13),
            Stepping::ExactGbm,
        )
        .unwrap();
        let (m, v) = mean_var(p.states_at(5));
        let se = (v / 200_000.0).sqrt();
        assert!((m - 120.0 * 0.03f64.exp()).abs() < 3.0 * se);
    }
}
