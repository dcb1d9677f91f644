//! Parameter updates: plain SGD, momentum and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::OptimizerSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Inertia α of the momentum method.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("optimizer.learning_rate: must be positive, got {}", self.learning_rate));
        }
        match self.algorithm {
            Algorithm::Sgd => {}
            Algorithm::Momentum => {
                if !(0.0..1.0).contains(&self.momentum) {
                    errs.push(format!("optimizer.momentum: must lie in [0,1), got {}", self.momentum));
                }
            }
            Algorithm::Adam => {
                for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        errs.push(format!("optimizer.{name}: must lie in [0,1), got {b}"));
                    }
                }
                if !(self.epsilon > 0.0) {
                    errs.push(format!("optimizer.epsilon: must be positive, got {}", self.epsilon));
                }
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                errs.push(format!("optimizer.clip_norm: must be positive, got {c}"));
            }
        }
        errs
    }
}

pub fn sgd_step(theta: &mut [f64], g: &[f64], eta: f64) {
    debug_assert_eq!(theta.len(), g.len());
    for (t, &gi) in theta.iter_mut().zip(g) {
        *t -= eta * gi;
    }
}

/// `ΔΘ ← αΔΘ − ηg`, then `Θ ← Θ + ΔΘ`.
pub fn momentum_step(theta: &mut [f64], delta: &mut [f64], g: &[f64], eta: f64, alpha: f64) {
    debug_assert_eq!(theta.len(), g.len());
    debug_assert_eq!(delta.len(), g.len());
    for ((t, d), &gi) in theta.iter_mut().zip(delta.iter_mut()).zip(g) {
        *d = alpha * *d - eta * gi;
        *t += *d;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, alpha: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { alpha, beta1, beta2, epsilon, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

pub fn adam_step(state: &mut AdamState, theta: &mut [f64], g: &[f64]) {
    debug_assert_eq!(theta.len(), g.len());
    state.step += 1;
    let n = state.step.min(i32::MAX as u64) as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(n);
    let c2 = 1.0 - b2.powi(n);
    for i in 0..theta.len() {
        let gi = g[i];
        let m = b1 * state.m[i] + (1.0 - b1) * gi;
        let v = b2 * state.v[i] + (1.0 - b2) * gi * gi;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        theta[i] -= state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd { eta: f64 },
    Momentum { eta: f64, alpha: f64, delta: Vec<f64> },
    Adam(AdamState),
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub state: OptimizerState,
    clip_norm: Option<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, len: usize) -> Self {
        let state = match cfg.algorithm {
            Algorithm::Sgd => OptimizerState::Sgd { eta: cfg.learning_rate },
            Algorithm::Momentum => {
                OptimizerState::Momentum { eta: cfg.learning_rate, alpha: cfg.momentum, delta: vec![0.0; len] }
            }
            Algorithm::Adam => {
                OptimizerState::Adam(AdamState::new(len, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon))
            }
        };
        Self { state, clip_norm: cfg.clip_norm, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `g` may be modified by clipping.
    pub fn step(&mut self, theta: &mut [f64], g: &mut [f64]) {
        if let Some(c) = self.clip_norm {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > c {
                let s = c / norm;
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
        match &mut self.state {
            OptimizerState::Sgd { eta } => sgd_step(theta, g, *eta),
            OptimizerState::Momentum { eta, alpha, delta } => momentum_step(theta, delta, g, *eta, *alpha),
            OptimizerState::Adam(s) => adam_step(s, theta, g),
        }
        self.steps += 1;
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        let (kind, buffers) = match &self.state {
            OptimizerState::Sgd { .. } => (1, vec![]),
            OptimizerState::Momentum { delta, .. } => (2, vec![delta.clone()]),
            OptimizerState::Adam(s) => (3, vec![s.m.clone(), s.v.clone()]),
        };
        OptimizerSnapshot { kind, step: self.steps, buffers }
    }

    /// Restores buffers saved by [`Optimizer::snapshot`]; hyperparameters stay as configured.
    pub fn restore(&mut self, snap: &OptimizerSnapshot) -> Result<()> {
        let mismatch = || Error::Format("optimizer state in checkpoint does not match the configured optimizer".into());
        match (&mut self.state, snap.kind, snap.buffers.as_slice()) {
            (OptimizerState::Sgd { .. }, 1, []) => {}
            (OptimizerState::Momentum { delta, .. }, 2, [d]) if d.len() == delta.len() => delta.clone_from(d),
            (OptimizerState::Adam(s), 3, [m, v]) if m.len() == s.m.len() && v.len() == s.v.len() => {
                s.m.clone_from(m);
                s.v.clone_from(v);
                s.step = snap.step;
            }
            _ => return Err(mismatch()),
        }
        self.steps = snap.step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sgd_examples() {
        let mut t = [1.0];
        sgd_step(&mut t, &[0.0], 0.1);
        assert_eq!(t, [1.0]);
        sgd_step(&mut t, &[2.0], 0.1);
        assert!((t[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn minibatch_gradient_is_mean_of_sample_gradients() {
        // loss_b(θ) = (θ·a_b − c_b)²; gradient of the mean loss equals the mean gradient
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = 0.37;
        let per: Vec<f64> = (0..16).map(|b| 2.0 * (theta * a[b] - c[b]) * a[b]).collect();
        let mean_of_grads = per.iter().sum::<f64>() / 16.0;
        let loss = |th: f64| (0..16).map(|b| (th * a[b] - c[b]).powi(2)).sum::<f64>() / 16.0;
        let h = 1e-6;
        let fd = (loss(theta + h) - loss(theta - h)) / (2.0 * h);
        assert!((fd - mean_of_grads).abs() < 1e-8);
        let mut t1 = [theta];
        sgd_step(&mut t1, &[mean_of_grads], 0.1);
        let mut t2 = [theta];
        for g in &per {
            t2[0] -= 0.1 * g / 16.0;
        }
        assert!((t1[0] - t2[0]).abs() < 1e-14);
    }

    #[test]
    fn momentum_examples() {
        let (mut a, mut b) = ([1.0, -2.0], [1.0, -2.0]);
        let mut d = [0.0, 0.0];
        momentum_step(&mut a, &mut d, &[0.3, 0.5], 0.1, 0.0);
        sgd_step(&mut b, &[0.3, 0.5], 0.1);
        assert_eq!(a, b);

        let mut t = [0.0];
        let mut d = [0.5];
        momentum_step(&mut t, &mut d, &[0.0], 0.1, 0.9);
        assert!((d[0] - 0.45).abs() < 1e-15);
        assert!((t[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn momentum_reaches_geometric_fixed_point() {
        let (eta, alpha, g) = (0.01, 0.9, 3.0);
        let mut t = [0.0];
        let mut d = [0.0];
        for _ in 0..200 {
            momentum_step(&mut t, &mut d, &[g], eta, alpha);
        }
        let fixed = -eta * g / (1.0 - alpha);
        assert!((d[0] - fixed).abs() < 1e-9, "{} vs {fixed}", d[0]);
    }

    #[test]
    fn adam_first_step() {
        for g in [1e-3, -0.7, 4.0, 4000.0] {
            let mut s = AdamState::new(1, 1e-3, 0.9, 0.999, 1e-8);
            let mut t = [0.0];
            adam_step(&mut s, &mut t, &[g]);
            let expect = -1e-3 * g / (g.abs() + 1e-8);
            assert!((t[0] - expect).abs() < 1e-15, "{g}: {} vs {expect}", t[0]);
            assert!((t[0].abs() - 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_zero_gradient_is_inert() {
        let mut s = AdamState::new(3, 1e-3, 0.9, 0.999, 1e-8);
        let mut t = [1.0, 2.0, 3.0];
        for _ in 0..10 {
            adam_step(&mut s, &mut t, &[0.0; 3]);
        }
        assert_eq!(t, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn adam_without_averaging_is_normalized_gradient() {
        let mut s = AdamState::new(3, 0.01, 0.0, 0.0, 1e-8);
        let mut t = [0.0; 3];
        let g = [0.2, -5.0, 1e-3];
        for _ in 0..3 {
            let before = t;
            adam_step(&mut s, &mut t, &g);
            for i in 0..3 {
                let expect = -0.01 * g[i] / (g[i].abs() + 1e-8);
                assert!(((t[i] - before[i]) - expect).abs() < 1e-15);
            }
        }
    }

    /// Straight transcription of the six update equations, one scalar at a time.
    fn adam_reference(
        m: &mut [f64],
        v: &mut [f64],
        n: u64,
        theta: &mut [f64],
        g: &[f64],
        alpha: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        for i in 0..theta.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
            let m_hat = m[i] / (1.0 - beta1.powi(n as i32));
            let v_hat = v[i] / (1.0 - beta2.powi(n as i32));
            theta[i] = theta[i] - alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }

    proptest! {
        #[test]
        fn adam_matches_reference(seed in 0u64..1000, len in 1usize..20, steps in 1usize..40) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut s = AdamState::new(len, 1e-3, 0.9, 0.999, 1e-8);
            let mut t: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut tr = t.clone();
            let (mut m, mut v) = (vec![0.0; len], vec![0.0; len]);
            for n in 1..=steps {
                let g: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
                adam_step(&mut s, &mut t, &g);
                adam_reference(&mut m, &mut v, n as u64, &mut tr, &g, 1e-3, 0.9, 0.999, 1e-8);
            }
            for i in 0..len {
                prop_assert!((t[i] - tr[i]).abs() <= 1e-14 * (1.0 + tr[i].abs()));
                prop_assert!((s.m[i] - m[i]).abs() <= 1e-14 * (1.0 + m[i].abs()));
                prop_assert!((s.v[i] - v[i]).abs() <= 1e-14 * (1.0 + v[i].abs()));
            }
            prop_assert_eq!(s.step, steps as u64);
        }

        #[test]
        fn momentum_matches_reference(seed in 0u64..1000, len in 1usize..20, steps in 1usize..40) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut t: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut tr = t.clone();
            let mut d = vec![0.0; len];
            let mut dr = vec![0.0; len];
            for _ in 0..steps {
                let g: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
                momentum_step(&mut t, &mut d, &g, 0.01, 0.9);
                for i in 0..len {
                    let prev = dr[i];
                    dr[i] = 0.9 * prev - 0.01 * g[i];
                    tr[i] = tr[i] + dr[i];
                }
            }
            for i in 0..len {
                prop_assert!((t[i] - tr[i]).abs() <= 1e-14 * (1.0 + tr[i].abs()));
            }
        }

        #[test]
        fn updates_preserve_finiteness(g in proptest::collection::vec(-1e6f64..1e6, 1..10)) {
            for algorithm in [Algorithm::Sgd, Algorithm::Momentum, Algorithm::Adam] {
                let cfg = OptimizerConfig { algorithm, ..Default::default() };
                let mut opt = Optimizer::new(&cfg, g.len());
                let mut t = vec![0.5; g.len()];
                let mut gg = g.clone();
                opt.step(&mut t, &mut gg);
                prop_assert_eq!(t.len(), g.len());
                prop_assert!(t.iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn clipping_bounds_the_gradient() {
        let cfg = OptimizerConfig {
            algorithm: Algorithm::Sgd,
            learning_rate: 1.0,
            clip_norm: Some(1.0),
            ..Default::default()
        };
        let mut opt = Optimizer::new(&cfg, 2);
        let mut t = [0.0, 0.0];
        let mut g = [3.0, 4.0];
        opt.step(&mut t, &mut g);
        assert!((t[0] + 0.6).abs() < 1e-15 && (t[1] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip_resumes_identically() {
        let cfg = OptimizerConfig::default();
        let mut a = Optimizer::new(&cfg, 2);
        let mut ta = [0.1, 0.2];
        for k in 0..5 {
            a.step(&mut ta, &mut [k as f64, 1.0]);
        }
        let mut b = Optimizer::new(&cfg, 2);
        b.restore(&a.snapshot()).unwrap();
        let mut tb = ta;
        a.step(&mut ta, &mut [0.3, -0.2]);
        b.step(&mut tb, &mut [0.3, -0.2]);
        assert_eq!(ta, tb);
        let sgd = Optimizer::new(&OptimizerConfig { algorithm: Algorithm::Sgd, ..Default::default() }, 2);
        assert!(b.restore(&sgd.snapshot()).is_err());
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let cfg = OptimizerConfig { learning_rate: -1.0, beta1: 1.0, beta2: 2.0, epsilon: 0.0, ..Default::default() };
        assert_eq!(cfg.validate().len(), 4);
        assert!(OptimizerConfig::default().validate().is_empty());
    }
}
