//! Forward and backward rollouts of the portfolio recursion and their adjoints.

use super::{BackwardScheme, ControlLayout, ControlUnits, Direction, InitialValue, Solver};
use crate::error::{Error, Result};
use crate::generators::{backward_exact_step_partials, backward_taylor_step_partials, transaction_cost_with_gradient};
use crate::instruments::ExerciseStrategy;
use crate::nn::{Mode, Tape};
use crate::timegrid::PathBatch;

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Mean loss over the batch.
    pub loss: f64,
    pub per_path: Vec<f64>,
    /// Initial values of `Y`: the scalar, the network outputs (forward), or
    /// the rolled-back values (backward).
    pub y0: Vec<f64>,
    /// `Y_init(X_0)` for random initial states.
    pub y_init: Option<Vec<f64>>,
    /// Forward method: `Y` at the stopping index minus its target.
    pub gaps: Vec<f64>,
    /// Forward method: grid index at which each path stopped.
    pub stop_index: Vec<usize>,
    pub gradient: Option<Vec<f64>>,
}

/// Network outputs for every step plus the maps from outputs to the
/// portfolio vector and to the diffusion term.
pub(super) struct Controls {
    /// `N × B × d`, step-major. Empty for the zero control.
    u: Vec<f64>,
    /// `∂π/∂u`.
    pi_scale: Vec<f64>,
    /// `∂(diffusion)/∂u`.
    d_scale: Vec<f64>,
    tapes: Vec<Tape>,
}

pub(super) struct Tapes {
    pub pi: Vec<Tape>,
    pub y_init: Option<Tape>,
}

/// Per-path scratch for one adjoint sweep.
#[derive(Default)]
struct Scratch {
    y: Vec<f64>,
    f_y: Vec<f64>,
    f_pi: Vec<f64>,
    d_res: Vec<f64>,
    cost_on: Vec<bool>,
    cost_prev: Vec<f64>,
    cost_next: Vec<f64>,
    overwritten: Vec<bool>,
    pi: Vec<f64>,
}

impl Scratch {
    fn reset(&mut self, n: usize, d: usize) {
        for v in [&mut self.y, &mut self.f_y, &mut self.f_pi, &mut self.d_res] {
            v.clear();
            v.resize(n + 1, 0.0);
        }
        self.cost_on.clear();
        self.cost_on.resize(n, false);
        self.overwritten.clear();
        self.overwritten.resize(n + 1, false);
        for v in [&mut self.cost_prev, &mut self.cost_next, &mut self.pi] {
            v.clear();
            v.resize(n * d, 0.0);
        }
    }
}

impl Controls {
    fn is_zero(&self) -> bool {
        self.u.is_empty()
    }

    fn pi_into(&self, idx: usize, d: usize, out: &mut [f64]) {
        if self.is_zero() {
            out.fill(0.0);
        } else {
            for j in 0..d {
                out[j] = self.pi_scale[idx * d + j] * self.u[idx * d + j];
            }
        }
    }

    fn diffusion(&self, idx: usize, d: usize) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        (0..d).map(|j| self.d_scale[idx * d + j] * self.u[idx * d + j]).sum()
    }
}

fn non_finite(what: &str, path: usize, step: usize, value: f64) -> Error {
    Error::Numerical(format!("non-finite {what} {value} on path {path} at step {step}"))
}

impl Solver {
    pub(super) fn eval_controls(&self, paths: &PathBatch, mode: Mode) -> Result<Controls> {
        let (n, b, d) = (paths.steps(), paths.batch(), paths.dim());
        let grid = &self.problem.grid;
        let mut u = Vec::new();
        let mut tapes = Vec::new();
        match self.problem.method.layout {
            ControlLayout::Zero => {
                return Ok(Controls { u, pi_scale: vec![], d_scale: vec![], tapes });
            }
            ControlLayout::PerStep => {
                u.reserve(n * b * d);
                for (i, net) in self.pi_nets.iter().enumerate() {
                    let (out, tape) = net.forward(&self.params, paths.states_at(i), b, mode)?;
                    u.extend_from_slice(&out);
                    tapes.push(tape);
                }
            }
            ControlLayout::Shared => {
                let mut input = Vec::with_capacity(n * b * (d + 1));
                for i in 0..n {
                    let t = grid.time(i);
                    for x in paths.states_at(i).chunks_exact(d) {
                        input.push(t);
                        input.extend_from_slice(x);
                    }
                }
                let (out, tape) = self.pi_nets[0].forward(&self.params, &input, n * b, mode)?;
                u = out;
                tapes.push(tape);
            }
        }
        let mut pi_scale = vec![0.0; n * b * d];
        let mut d_scale = vec![0.0; n * b * d];
        let mut sig = vec![0.0; d * d];
        let model = &self.problem.model;
        for i in 0..n {
            let t = grid.time(i);
            for p in 0..b {
                let x = paths.state(p, i);
                let dw = paths.increment(p, i);
                model.normal_vol(t, x, &mut sig);
                let base = (i * b + p) * d;
                for j in 0..d {
                    let noise: f64 = (0..d).map(|k| sig[j * d + k] * dw[k]).sum();
                    match self.problem.method.units {
                        ControlUnits::Shares => {
                            pi_scale[base + j] = x[j];
                            d_scale[base + j] = noise;
                        }
                        ControlUnits::Value => {
                            pi_scale[base + j] = 1.0;
                            d_scale[base + j] = noise / x[j];
                        }
                    }
                }
            }
        }
        Ok(Controls { u, pi_scale, d_scale, tapes })
    }

    fn backward_controls(&self, ctrl: &Controls, du: &[f64], batch: usize, grad: &mut [f64]) -> Result<()> {
        match self.problem.method.layout {
            ControlLayout::Zero => {}
            ControlLayout::PerStep => {
                let w = batch * self.problem.model.dim();
                for (i, (net, tape)) in self.pi_nets.iter().zip(&ctrl.tapes).enumerate() {
                    net.backward(&self.params, tape, &du[i * w..(i + 1) * w], grad)?;
                }
            }
            ControlLayout::Shared => {
                self.pi_nets[0].backward(&self.params, &ctrl.tapes[0], du, grad)?;
            }
        }
        Ok(())
    }

    /// Adapted exercise decisions at grid index `e` for every path.
    fn exercise_flags(&self, paths: &PathBatch, e: usize) -> Vec<bool> {
        let ex = self.problem.instrument.exercise.as_ref().unwrap();
        let d = paths.dim();
        let t = self.problem.grid.time(e);
        let xs = paths.states_at(e);
        match &ex.strategy {
            ExerciseStrategy::HoldingValue(hv) => {
                let hold = hv.holding_values(t, xs, d);
                xs.chunks_exact(d).zip(hold).map(|(x, h)| ex.value.value(x) > h).collect()
            }
            ExerciseStrategy::Given(rule) => xs.chunks_exact(d).map(|x| rule.should_exercise(t, x)).collect(),
            ExerciseStrategy::Clairvoyant => vec![false; paths.batch()],
        }
    }

    /// Values that replace `Y` at `(i, path)`, NaN where none applies.
    /// Clairvoyant exercise depends on `Y` and is handled during the rollout.
    fn overwrites(&self, paths: &PathBatch) -> Vec<f64> {
        let (n, b) = (paths.steps(), paths.batch());
        let mut out = vec![f64::NAN; (n + 1) * b];
        let grid = &self.problem.grid;
        let short_rate = self.problem.model.short_rate();
        if let Some(ex) = &self.problem.instrument.exercise {
            if ex.is_adapted() {
                for &e in &self.exercise_steps {
                    for (p, flag) in self.exercise_flags(paths, e).into_iter().enumerate() {
                        if flag {
                            out[e * b + p] = ex.value.value(paths.state(p, e));
                        }
                    }
                }
            }
        }
        if let Some(bar) = &self.problem.instrument.barrier {
            for i in 0..=n {
                for p in 0..b {
                    let x = paths.state(p, i);
                    if x[bar.underlier] >= bar.level {
                        out[i * b + p] = bar.rebate_value(grid.time(i), x, grid.maturity(), short_rate);
                    }
                }
            }
        }
        out
    }

    /// Forward method: first stopping index per path and the value `Y` must
    /// match there.
    fn stops(&self, paths: &PathBatch) -> (Vec<usize>, Vec<f64>) {
        let (n, b) = (paths.steps(), paths.batch());
        let ow = self.overwrites(paths);
        let mut stop = vec![n; b];
        let mut target = vec![0.0; b];
        for p in 0..b {
            match (0..=n).find(|&i| !ow[i * b + p].is_nan()) {
                Some(i) => {
                    stop[p] = i;
                    target[p] = ow[i * b + p];
                }
                None => target[p] = self.problem.instrument.terminal.value(paths.state(p, 0), paths.state(p, n)),
            }
        }
        (stop, target)
    }

    fn initial_values(&self, paths: &PathBatch, mode: Mode) -> Result<(Option<Vec<f64>>, Option<Tape>)> {
        match (&self.y_init, self.problem.initial_value()) {
            (Some(net), InitialValue::Network) => {
                let (v, tape) = net.forward(&self.params, paths.states_at(0), paths.batch(), mode)?;
                Ok((Some(v), Some(tape)))
            }
            _ => Ok((None, None)),
        }
    }

    /// Loss (and optionally its gradient with respect to every parameter) on one batch.
    pub fn rollout(&self, paths: &PathBatch, mode: Mode, want_grad: bool) -> Result<RolloutResult> {
        self.rollout_with_tapes(paths, mode, want_grad).map(|(r, _)| r)
    }

    pub(super) fn rollout_with_tapes(
        &self,
        paths: &PathBatch,
        mode: Mode,
        want_grad: bool,
    ) -> Result<(RolloutResult, Tapes)> {
        if paths.steps() != self.problem.grid.steps() || paths.dim() != self.problem.model.dim() {
            return Err(Error::usage("path batch does not match the problem grid or dimension"));
        }
        let ctrl = self.eval_controls(paths, mode)?;
        let (y_init, y_init_tape) = self.initial_values(paths, mode)?;
        let mut grad = want_grad.then(|| vec![0.0; self.params.len()]);
        let mut du = if want_grad && !ctrl.is_zero() { vec![0.0; ctrl.u.len()] } else { Vec::new() };
        let mut result = match self.problem.method.direction {
            Direction::Forward => {
                self.forward_pass(paths, &ctrl, y_init.as_deref(), y_init_tape.as_ref(), grad.as_deref_mut(), &mut du)?
            }
            Direction::Backward => {
                self.backward_pass(paths, &ctrl, y_init.as_deref(), y_init_tape.as_ref(), grad.as_deref_mut(), &mut du)?
            }
        };
        if let Some(g) = grad.as_mut() {
            self.backward_controls(&ctrl, &du, paths.batch(), g)?;
        }
        result.y_init = y_init;
        result.gradient = grad;
        if !result.loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {}", result.loss)));
        }
        Ok((result, Tapes { pi: ctrl.tapes, y_init: y_init_tape }))
    }

    /// Accumulates the gradient of the running cost at one step; returns `∂rc/∂y`.
    fn running_cost(&self, y: f64, pi: &[f64]) -> (f64, f64) {
        let rc = self.problem.method.running_cost;
        let value = rc.control * pi.iter().map(|p| p * p).sum::<f64>() + rc.value * y * y;
        (value, 2.0 * rc.value * y)
    }

    fn forward_pass(
        &self,
        paths: &PathBatch,
        ctrl: &Controls,
        y_init: Option<&[f64]>,
        y_init_tape: Option<&Tape>,
        mut grad: Option<&mut [f64]>,
        du: &mut [f64],
    ) -> Result<RolloutResult> {
        let (n, b, d) = (paths.steps(), paths.batch(), paths.dim());
        let grid = &self.problem.grid;
        let gen = &self.problem.generator;
        let costs = gen.costs.as_ref();
        let rc = self.problem.method.running_cost;
        let inv_b = 1.0 / b as f64;
        let (stop, target) = self.stops(paths);
        let y0: Vec<f64> = match y_init {
            Some(v) => v.to_vec(),
            None => vec![self.params.values()[self.y0_index.unwrap()]; b],
        };
        let mut per_path = vec![0.0; b];
        let mut gaps = vec![0.0; b];
        let mut y0_bar = vec![0.0; b];
        let mut s = Scratch::default();
        let mut pi_next = vec![0.0; d];
        for p in 0..b {
            s.reset(n, d);
            let sp = stop[p];
            let mut y = y0[p];
            let mut j_cost = 0.0;
            for i in 0..sp {
                let idx = i * b + p;
                let (t, dt) = (grid.time(i), grid.dt(i));
                let x = paths.state(p, i);
                ctrl.pi_into(idx, d, &mut s.pi[i * d..(i + 1) * d]);
                let pi = &s.pi[i * d..(i + 1) * d];
                let f = gen.partials(t, x, y, pi);
                let mut cost = 0.0;
                if let Some(c) = costs {
                    if i + 1 < sp {
                        ctrl.pi_into((i + 1) * b + p, d, &mut pi_next);
                        let (gp, gn) = (&mut s.cost_prev[i * d..(i + 1) * d], &mut s.cost_next[i * d..(i + 1) * d]);
                        cost =
                            transaction_cost_with_gradient(c, pi, &pi_next, x, paths.state(p, i + 1), Some((gp, gn)));
                        s.cost_on[i] = true;
                    }
                }
                if !rc.is_zero() {
                    j_cost += self.running_cost(y, pi).0 * dt;
                }
                s.y[i] = y;
                s.f_y[i] = f.d_y;
                s.f_pi[i] = f.d_pi;
                y = y - f.value * dt - cost + ctrl.diffusion(idx, d);
                if !y.is_finite() {
                    return Err(non_finite("Y", p, i + 1, y));
                }
            }
            let gap = y - target[p];
            gaps[p] = gap;
            per_path[p] = gap * gap + j_cost;

            if grad.is_none() {
                continue;
            }
            let mut y_bar = 2.0 * gap * inv_b;
            for i in (0..sp).rev() {
                let idx = i * b + p;
                let dt = grid.dt(i);
                let pi = &s.pi[i * d..(i + 1) * d];
                if !ctrl.is_zero() {
                    for j in 0..d {
                        let k = idx * d + j;
                        let mut dpi = -y_bar * s.f_pi[i] * dt;
                        if s.cost_on[i] {
                            dpi -= y_bar * s.cost_prev[i * d + j];
                        }
                        dpi += inv_b * 2.0 * rc.control * pi[j] * dt;
                        du[k] += dpi * ctrl.pi_scale[k] + y_bar * ctrl.d_scale[k];
                        if s.cost_on[i] {
                            let kn = ((i + 1) * b + p) * d + j;
                            du[kn] -= y_bar * s.cost_next[i * d + j] * ctrl.pi_scale[kn];
                        }
                    }
                }
                let rc_y = 2.0 * rc.value * s.y[i];
                y_bar = y_bar * (1.0 - s.f_y[i] * dt) + inv_b * rc_y * dt;
            }
            y0_bar[p] = y_bar;
        }
        if let Some(g) = grad.as_deref_mut() {
            self.backprop_initial(y_init_tape, &y0_bar, g)?;
        }
        let loss = per_path.iter().sum::<f64>() * inv_b;
        Ok(RolloutResult { loss, per_path, y0, y_init: None, gaps, stop_index: stop, gradient: None })
    }

    fn backprop_initial(&self, tape: Option<&Tape>, y0_bar: &[f64], grad: &mut [f64]) -> Result<()> {
        match self.problem.initial_value() {
            InitialValue::Scalar => grad[self.y0_index.unwrap()] += y0_bar.iter().sum::<f64>(),
            InitialValue::Network => {
                let net = self.y_init.as_ref().unwrap();
                net.backward(&self.params, tape.unwrap(), y0_bar, grad)?;
            }
            InitialValue::RolledBack => {}
        }
        Ok(())
    }

    fn backward_pass(
        &self,
        paths: &PathBatch,
        ctrl: &Controls,
        y_init: Option<&[f64]>,
        y_init_tape: Option<&Tape>,
        mut grad: Option<&mut [f64]>,
        du: &mut [f64],
    ) -> Result<RolloutResult> {
        let (n, b, d) = (paths.steps(), paths.batch(), paths.dim());
        let grid = &self.problem.grid;
        let gen = &self.problem.generator;
        let costs = gen.costs.as_ref();
        let rc = self.problem.method.running_cost;
        let scheme = self.problem.method.backward_scheme;
        let inv_b = 1.0 / b as f64;
        let ow = self.overwrites(paths);
        let clairvoyant = self.exercise_strategy_needs_y().then(|| self.problem.instrument.exercise.as_ref().unwrap());

        let mut y0 = vec![0.0; b];
        let mut j0 = vec![0.0; b];
        let mut scratch: Vec<Scratch> = Vec::new();
        let mut s = Scratch::default();
        let mut pi_next = vec![0.0; d];
        for p in 0..b {
            s.reset(n, d);
            let mut y = self.problem.instrument.terminal.value(paths.state(p, 0), paths.state(p, n));
            if !ow[n * b + p].is_nan() {
                y = ow[n * b + p];
                s.overwritten[n] = true;
            }
            s.y[n] = y;
            let mut j_cost = 0.0;
            for i in (0..n).rev() {
                let idx = i * b + p;
                let (t, dt) = (grid.time(i), grid.dt(i));
                let x = paths.state(p, i);
                ctrl.pi_into(idx, d, &mut s.pi[i * d..(i + 1) * d]);
                let pi = &s.pi[i * d..(i + 1) * d];
                let mut cost = 0.0;
                if let Some(c) = costs {
                    if i + 1 < n && !s.overwritten[i + 1] {
                        ctrl.pi_into((i + 1) * b + p, d, &mut pi_next);
                        let (gp, gn) = (&mut s.cost_prev[i * d..(i + 1) * d], &mut s.cost_next[i * d..(i + 1) * d]);
                        cost =
                            transaction_cost_with_gradient(c, pi, &pi_next, x, paths.state(p, i + 1), Some((gp, gn)));
                        s.cost_on[i] = true;
                    }
                }
                let residual = y - ctrl.diffusion(idx, d) + cost;
                let step = match scheme {
                    BackwardScheme::Exact => backward_exact_step_partials(gen, t, dt, x, pi, residual)
                        .map_err(|e| Error::Numerical(format!("path {p}, step {i}: {e}")))?,
                    BackwardScheme::Taylor => backward_taylor_step_partials(gen, t, dt, x, pi, residual),
                };
                y = step.y;
                s.d_res[i] = step.d_residual;
                s.f_pi[i] = step.d_pi;
                if !rc.is_zero() {
                    j_cost += self.running_cost(y, pi).0 * dt;
                }
                s.y[i] = y;
                let mut replace = ow[idx];
                if replace.is_nan() {
                    if let Some(ex) = clairvoyant {
                        if self.exercise_steps.contains(&i) {
                            let g = ex.value.value(x);
                            if g > y {
                                replace = g;
                            }
                        }
                    }
                }
                if !replace.is_nan() {
                    y = replace;
                    j_cost = 0.0;
                    s.overwritten[i] = true;
                    s.y[i] = y;
                }
                if !y.is_finite() {
                    return Err(non_finite("Y", p, i, y));
                }
            }
            y0[p] = y;
            j0[p] = j_cost;
            if grad.is_some() {
                scratch.push(std::mem::take(&mut s));
            }
        }

        // Initial cost.
        let mut y0_bar = vec![0.0; b];
        let mut y_init_bar = vec![0.0; b];
        let per_path: Vec<f64> = match y_init {
            Some(yi) => (0..b)
                .map(|p| {
                    let gap = y0[p] - yi[p];
                    y0_bar[p] = 2.0 * gap * inv_b;
                    y_init_bar[p] = -2.0 * gap * inv_b;
                    gap * gap + j0[p]
                })
                .collect(),
            None => {
                let mean = y0.iter().sum::<f64>() * inv_b;
                (0..b)
                    .map(|p| {
                        let dev = y0[p] - mean;
                        y0_bar[p] = 2.0 * dev * inv_b;
                        dev * dev + j0[p]
                    })
                    .collect()
            }
        };
        let loss = per_path.iter().sum::<f64>() * inv_b;

        if let Some(g) = grad.as_deref_mut() {
            for (p, s) in scratch.iter().enumerate() {
                let mut y_bar = y0_bar[p];
                let j_bar = inv_b;
                for i in 0..n {
                    if s.overwritten[i] {
                        break;
                    }
                    let idx = i * b + p;
                    let dt = grid.dt(i);
                    let pi = &s.pi[i * d..(i + 1) * d];
                    y_bar += j_bar * 2.0 * rc.value * s.y[i] * dt;
                    let r_bar = y_bar * s.d_res[i];
                    if !ctrl.is_zero() {
                        for j in 0..d {
                            let k = idx * d + j;
                            let mut dpi = y_bar * s.f_pi[i] + j_bar * 2.0 * rc.control * pi[j] * dt;
                            if s.cost_on[i] {
                                dpi += r_bar * s.cost_prev[i * d + j];
                            }
                            du[k] += dpi * ctrl.pi_scale[k] - r_bar * ctrl.d_scale[k];
                            if s.cost_on[i] {
                                let kn = ((i + 1) * b + p) * d + j;
                                du[kn] += r_bar * s.cost_next[i * d + j] * ctrl.pi_scale[kn];
                            }
                        }
                    }
                    y_bar = r_bar;
                }
            }
            if y_init.is_some() {
                self.backprop_initial(y_init_tape, &y_init_bar, g)?;
            }
        }
        Ok(RolloutResult { loss, per_path, y0, y_init: None, gaps: Vec::new(), stop_index: Vec::new(), gradient: None })
    }
}
