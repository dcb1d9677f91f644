//! Mini-batch training loop, validation and reporting.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Direction, InitialValue, Solver};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{labels, RandomStream};
use crate::timegrid::simulate_paths;

pub const CSV_HEADER: &str = "iter,train_loss,val_loss,price,delta,elapsed_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub validation_every: u64,
    /// Defaults to the training batch size.
    pub validation_batch: Option<usize>,
    pub seed: u64,
    /// Report zero wall-clock times so that reports are reproducible byte for byte.
    pub deterministic: bool,
    pub optimizer: OptimizerConfig,
    /// State at which price and delta are logged; defaults to the initial-state center.
    pub report_state: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            iterations: 20000,
            validation_every: 100,
            validation_batch: None,
            seed: 0,
            deterministic: false,
            optimizer: OptimizerConfig::default(),
            report_state: None,
        }
    }
}

impl TrainConfig {
    /// Every problem with this configuration, prefixed by the field name.
    pub fn validate(&self, solver: &Solver) -> Vec<String> {
        let mut errs: Vec<String> = self.optimizer.validate();
        let needs_two = solver.problem.initial_value() == InitialValue::RolledBack
            || solver.all_networks().any(|n| n.spec().batchnorm.is_some());
        let min = if needs_two { 2 } else { 1 };
        if self.batch_size < min {
            errs.push(format!("training.batch_size: must be at least {min}, got {}", self.batch_size));
        }
        if let Some(v) = self.validation_batch {
            if v < min {
                errs.push(format!("training.validation_batch: must be at least {min}, got {v}"));
            }
        }
        if self.validation_every == 0 {
            errs.push("training.validation_every: must be positive".into());
        }
        if let Some(x) = &self.report_state {
            if x.len() != solver.problem.model.dim() {
                errs.push(format!("training.report_state: needs {} entries", solver.problem.model.dim()));
            }
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: u64,
    /// Loss of the mini-batch used for the update, before the update.
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub price: Option<f64>,
    pub delta: Option<f64>,
    pub elapsed_s: f64,
    /// Sample standard deviation of the rolled-back `Y_0` on the validation batch.
    pub y0_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iter,
                field(r.train_loss),
                field(r.val_loss),
                field(r.price),
                field(r.delta),
                r.elapsed_s
            );
        }
        s
    }

    /// Parses a report written by [`TrainReport::to_csv`]; `y0_std` is not stored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Format("report does not start with the expected header".into()));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?} in report")))
            }
        };
        let mut records = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.trim().split(',').collect();
            if cols.len() != 6 {
                return Err(Error::Format(format!("report line {} has {} columns", n + 2, cols.len())));
            }
            records.push(IterationRecord {
                iter: cols[0].parse().map_err(|_| Error::Format(format!("bad iteration {:?}", cols[0])))?,
                train_loss: opt(cols[1])?,
                val_loss: opt(cols[2])?,
                price: opt(cols[3])?,
                delta: opt(cols[4])?,
                elapsed_s: opt(cols[5])?.unwrap_or(0.0),
                y0_std: None,
            });
        }
        Ok(Self { records })
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Validation records only.
    pub fn validations(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.val_loss.is_some())
    }
}

/// Result of [`Solver::train`]. On divergence the solver holds the last
/// parameters that produced a finite loss and `error` is set.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub optimizer: Optimizer,
    pub iterations_completed: u64,
    pub error: Option<Error>,
}

/// Statistics of the trained solver on an independent batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub paths: usize,
    pub loss: f64,
    /// Scalar `Y_0`, mean rolled-back `Y_0`, or mean of `Y_init(X_0)`.
    pub price: f64,
    /// Monte-Carlo standard error of the price implied by the evaluation batch.
    pub price_se: f64,
    pub y0_std: f64,
    /// Forward method: mean and standard deviation of the terminal gap.
    pub gap_mean: Option<f64>,
    pub gap_std: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

impl Solver {
    fn report_state(&self, cfg: &TrainConfig) -> Vec<f64> {
        cfg.report_state.clone().unwrap_or_else(|| self.problem.init.center())
    }

    /// Price and delta logged at one iteration. `rolled_mean` is the mean
    /// rolled-back `Y_0` of the batch just evaluated.
    fn logged_price_delta(&self, x: &[f64], rolled_mean: Option<f64>) -> Result<(Option<f64>, Option<f64>)> {
        let price = match self.problem.initial_value() {
            InitialValue::Scalar => self.scalar_y0(),
            InitialValue::Network => Some(self.forward_single(self.y_init.as_ref().unwrap(), x)?[0]),
            InitialValue::RolledBack => rolled_mean,
        };
        let delta = self.initial_delta(x)?;
        let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
        Ok((finite(price), finite(Some(delta))))
    }

    fn validation_loss(&self, cfg: &TrainConfig, k: u64) -> Result<(f64, Option<f64>, Option<f64>)> {
        let batch = cfg.validation_batch.unwrap_or(cfg.batch_size);
        let stream = RandomStream::new(cfg.seed).substream(labels::VALIDATION).substream(k);
        let paths = simulate_paths(&self.problem.grid, &self.problem.model, &self.problem.init, batch, &stream)?;
        let res = self.rollout(&paths, self.eval_mode(), false)?;
        let rolled = (self.problem.method.direction == Direction::Backward).then(|| mean_std(&res.y0));
        Ok((res.loss, rolled.map(|r| r.0), rolled.map(|r| r.1)))
    }

    /// Sets the scalar `Y_0` to the least-squares fit of the targets under the
    /// current controls. The gaps are affine in `Y_0` for linear generators,
    /// so rollouts at 0 and 1 determine the minimizer.
    fn fit_scalar_y0(&mut self, cfg: &TrainConfig) -> Result<()> {
        let k = self.y0_index.unwrap();
        let stream = RandomStream::new(cfg.seed).substream(labels::TRAINING).substream(0);
        let paths =
            simulate_paths(&self.problem.grid, &self.problem.model, &self.problem.init, cfg.batch_size, &stream)?;
        let mode = self.eval_mode();
        self.params.values_mut()[k] = 0.0;
        let at_zero = self.rollout(&paths, mode, false)?.gaps;
        self.params.values_mut()[k] = 1.0;
        let at_one = self.rollout(&paths, mode, false)?.gaps;
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in at_zero.iter().zip(&at_one) {
            let slope = b - a;
            num += a * slope;
            den += slope * slope;
        }
        let fit = -num / den;
        self.params.values_mut()[k] = if den > 0.0 && fit.is_finite() { fit } else { 0.0 };
        self.y0_unfitted = false;
        Ok(())
    }

    /// Runs `cfg.iterations` parameter updates.
    pub fn train(&mut self, cfg: &TrainConfig) -> Result<TrainOutcome> {
        let errs = cfg.validate(self);
        if !errs.is_empty() {
            return Err(Error::Schema(errs));
        }
        let start = Instant::now();
        let elapsed = |det: bool| if det { 0.0 } else { start.elapsed().as_secs_f64() };
        let x_report = self.report_state(cfg);
        let mut optimizer = Optimizer::new(&cfg.optimizer, self.params.len());
        let mut report = TrainReport::default();

        if self.y0_unfitted {
            self.fit_scalar_y0(cfg)?;
        }
        let (val, rolled_mean, y0_std) =
            self.validation_loss(cfg, 0).map_err(|e| Error::Diverged { iteration: 0, detail: e.to_string() })?;
        let (price, delta) = self.logged_price_delta(&x_report, rolled_mean)?;
        report.records.push(IterationRecord {
            iter: 0,
            train_loss: None,
            val_loss: Some(val),
            price,
            delta,
            elapsed_s: elapsed(cfg.deterministic),
            y0_std,
        });

        let training = RandomStream::new(cfg.seed).substream(labels::TRAINING);
        let mut last_good = self.params.values().to_vec();
        let mut outcome_error = None;
        let mut completed = 0;
        for k in 1..=cfg.iterations {
            let step = (|| -> Result<(f64, Option<f64>, Option<f64>, Option<f64>)> {
                let paths = simulate_paths(
                    &self.problem.grid,
                    &self.problem.model,
                    &self.problem.init,
                    cfg.batch_size,
                    &training.substream(k),
                )?;
                let (res, tapes) = self.rollout_with_tapes(&paths, Mode::Train, true)?;
                let mut g = res.gradient.unwrap();
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite gradient component {i}")));
                }
                last_good.copy_from_slice(self.params.values());
                optimizer.step(self.params.values_mut(), &mut g);
                if self.params.values().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("non-finite parameter after update".into()));
                }
                let nets = self.pi_nets.iter_mut().zip(&tapes.pi);
                for (net, tape) in nets {
                    net.update_running_stats(tape);
                }
                if let (Some(net), Some(tape)) = (self.y_init.as_mut(), tapes.y_init.as_ref()) {
                    net.update_running_stats(tape);
                }
                let rolled_mean = (self.problem.method.direction == Direction::Backward).then(|| mean_std(&res.y0).0);
                if k % cfg.validation_every == 0 {
                    let (v, m, s) = self.validation_loss(cfg, k)?;
                    Ok((res.loss, Some(v), m.or(rolled_mean), s))
                } else {
                    Ok((res.loss, None, rolled_mean, None))
                }
            })();
            match step {
                Ok((loss, val, rolled, y0_std)) => {
                    let (price, delta) = self.logged_price_delta(&x_report, rolled)?;
                    report.records.push(IterationRecord {
                        iter: k,
                        train_loss: Some(loss),
                        val_loss: val,
                        price,
                        delta,
                        elapsed_s: elapsed(cfg.deterministic),
                        y0_std,
                    });
                    completed = k;
                }
                Err(e) => {
                    self.params.set_values(&last_good)?;
                    tracing::warn!(iteration = k, "training diverged: {e}");
                    outcome_error = Some(Error::Diverged { iteration: k, detail: e.to_string() });
                    break;
                }
            }
        }
        Ok(TrainOutcome { report, optimizer, iterations_completed: completed, error: outcome_error })
    }

    /// Loss and price statistics on `batch` fresh paths drawn from evaluation substream `seed`.
    pub fn evaluate(&self, batch: usize, seed: u64) -> Result<Evaluation> {
        let stream = RandomStream::new(seed).substream(labels::EVALUATION);
        let paths = simulate_paths(&self.problem.grid, &self.problem.model, &self.problem.init, batch, &stream)?;
        let res = self.rollout(&paths, self.eval_mode(), false)?;
        let n = batch as f64;
        let (y0_mean, y0_std) = mean_std(&res.y0);
        let (gap_mean, gap_std) = match res.gaps.is_empty() {
            true => (None, None),
            false => {
                let (m, s) = mean_std(&res.gaps);
                (Some(m), Some(s))
            }
        };
        let discount =
            (-self.problem.model.short_rate() * (self.problem.grid.maturity() - self.problem.grid.start())).exp();
        let (price, price_se) = match self.problem.initial_value() {
            InitialValue::Scalar => (self.scalar_y0().unwrap(), discount * gap_std.unwrap_or(0.0) / n.sqrt()),
            InitialValue::RolledBack => (y0_mean, y0_std / n.sqrt()),
            InitialValue::Network => {
                let (m, s) = mean_std(res.y_init.as_deref().unwrap_or(&[]));
                (m, s / n.sqrt())
            }
        };
        Ok(Evaluation { paths: batch, loss: res.loss, price, price_se, y0_std, gap_mean, gap_std })
    }
}
