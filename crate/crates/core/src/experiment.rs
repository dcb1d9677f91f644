//! Experiment runs: training, artifacts, oracle tables and run summaries.
//!
//! A run directory holds
//!
//! ```text
//! config.toml      resolved configuration, every default written out
//! report.csv       iter,train_loss,val_loss,price,delta,elapsed_s
//! checkpoint.bin   final parameters, batch-norm statistics and optimizer state
//! summary.json     price, delta, oracle gaps, loss statistics and checks
//! summary.txt      the same as a one-page text
//! training.svg     loss, price and delta against iteration
//! holding_value/   config and checkpoint of the holding-value run, if any
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    bs_combo_delta, bs_combo_price, mc_reference_price, McExercise, McInstrument, McModel, Monitoring,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::instruments::HoldingValue;
use crate::nn::checkpoint::Checkpoint;
use crate::solver::{Direction, Evaluation, Solver, TrainOutcome, TrainReport};
use crate::svg::{render, Panel, Series};

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";
pub const PLOT_FILE: &str = "training.svg";
pub const HOLDING_VALUE_DIR: &str = "holding_value";

/// Acceptance thresholds applied by `report --check`.
pub mod thresholds {
    /// Fixed initial state: price within the larger of this relative or absolute error.
    pub const PRICE_REL: f64 = 0.02;
    pub const PRICE_ABS: f64 = 0.25;
    pub const DELTA_ABS: f64 = 0.05;
    /// Random initial state: curve errors over the comparison states.
    pub const CURVE_PRICE_REL: f64 = 0.03;
    pub const CURVE_PRICE_ABS: f64 = 0.40;
    pub const CURVE_DELTA_ABS: f64 = 0.08;
    /// Backward fixed: final rolled-back standard deviation over the value at iteration 100.
    pub const STD_RATIO: f64 = 0.25;
    pub const STD_REFERENCE_ITER: u64 = 100;
    /// Monte-Carlo oracle comparisons: this many combined standard errors plus a training allowance.
    pub const MC_SIGMAS: f64 = 3.0;
    pub const MC_TRAINING_ABS: f64 = 0.40;
    /// Exercise: price may fall below the European value by at most this many standard errors.
    pub const EXERCISE_SIGMAS: f64 = 2.0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub price: f64,
    pub delta: Option<f64>,
    /// Monte-Carlo standard error; absent for closed forms.
    pub std_error: Option<f64>,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub x: f64,
    #[serde(flatten)]
    pub value: OracleValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub price: f64,
    pub delta: f64,
    pub oracle_price: f64,
    pub oracle_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub initial_val: Option<f64>,
    pub final_val: Option<f64>,
    pub min_val: Option<f64>,
    /// Mean training loss over the last 100 iterations.
    pub final_train_avg: Option<f64>,
    /// Rolled-back `Y_0` standard deviation at the reference iteration and at the end.
    pub y0_std_reference: Option<f64>,
    pub y0_std_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: Option<String>,
    pub iterations: u64,
    pub untrained: bool,
    pub diverged: Option<String>,
    pub report_state: Vec<f64>,
    pub price: f64,
    pub delta: f64,
    pub outside_box: bool,
    pub evaluation: Evaluation,
    pub oracle: Option<OracleValue>,
    pub price_error: Option<f64>,
    pub delta_error: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub losses: LossStats,
    /// European closed-form price at the report state, for exercise instruments.
    pub european_price: Option<f64>,
    pub checks: Vec<Check>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        s.push_str(&format!("run: {}\n", self.preset.as_deref().unwrap_or("custom")));
        s.push_str(&format!("iterations: {}{}\n", self.iterations, if self.untrained { " (untrained)" } else { "" }));
        if let Some(d) = &self.diverged {
            s.push_str(&format!("diverged: {d}\n"));
        }
        s.push_str(&format!(
            "state: {:?}{}\n",
            self.report_state,
            if self.outside_box { " (outside training box)" } else { "" }
        ));
        s.push_str(&format!(
            "price: {:.6}  (evaluation {:.6} ± {:.6})\n",
            self.price, self.evaluation.price, self.evaluation.price_se
        ));
        s.push_str(&format!("delta: {:.6}\n", self.delta));
        if let Some(o) = &self.oracle {
            s.push_str(&format!(
                "oracle ({}): price {:.6}{} delta {}\n",
                o.method,
                o.price,
                o.std_error.map_or(String::new(), |e| format!(" ± {e:.6}")),
                opt(o.delta)
            ));
            s.push_str(&format!(
                "|price - oracle|: {}  |delta - oracle|: {}\n",
                opt(self.price_error),
                opt(self.delta_error)
            ));
        }
        let l = &self.losses;
        s.push_str(&format!(
            "validation loss: initial {} final {} min {}; final train avg {}\n",
            opt(l.initial_val),
            opt(l.final_val),
            opt(l.min_val),
            opt(l.final_train_avg)
        ));
        if l.y0_std_final.is_some() {
            s.push_str(&format!(
                "rolled-back Y0 std: reference {} final {}\n",
                opt(l.y0_std_reference),
                opt(l.y0_std_final)
            ));
        }
        if !self.curve.is_empty() {
            s.push_str("x        price      oracle     delta      oracle\n");
            for c in &self.curve {
                s.push_str(&format!(
                    "{:<8} {:<10.5} {:<10.5} {:<10.5} {}\n",
                    c.x,
                    c.price,
                    c.oracle_price,
                    c.delta,
                    opt(c.oracle_delta)
                ));
            }
        }
        for c in &self.checks {
            s.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        s
    }
}

/// Loads the holding value referenced by an exercise configuration. Relative
/// paths are resolved against `base`.
pub fn load_holding_value(cfg: &ExperimentConfig, base: &Path) -> Result<Option<(Arc<dyn HoldingValue>, PathBuf)>> {
    let Some(ex) = &cfg.instrument.exercise else { return Ok(None) };
    if ex.strategy != "holding_value" {
        return Ok(None);
    }
    let dir = ex.holding_value_run.as_ref().ok_or_else(|| Error::config("holding_value_run is not set"))?;
    let dir = if dir.is_absolute() { dir.clone() } else { base.join(dir) };
    let missing: Vec<String> = [CONFIG_FILE, CHECKPOINT_FILE]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| dir.join(f).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let hv_cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let mut solver = Solver::new(hv_cfg.problem(None)?, hv_cfg.training.seed)?;
    solver.restore(&Checkpoint::load(&dir.join(CHECKPOINT_FILE))?)?;
    if (hv_cfg.grid.t0 - ex.times[0]).abs() > 1e-12 {
        tracing::warn!("holding-value run starts at {} but the first exercise time is {}", hv_cfg.grid.t0, ex.times[0]);
    }
    Ok(Some((solver.holding_value()?, dir)))
}

/// Independent value at state `x`: closed form for Europeans, Monte Carlo otherwise.
pub fn oracle_value(cfg: &ExperimentConfig, x: f64, hv: Option<&Arc<dyn HoldingValue>>) -> Result<OracleValue> {
    if cfg.model.kind != "black_scholes" {
        return Err(Error::usage("oracles exist for the single-asset Black-Scholes model only"));
    }
    let payoff = cfg.payoff()?;
    let (r, vol) = (cfg.model.rate, cfg.model.vol);
    let horizon = cfg.grid.maturity - cfg.grid.t0;
    if cfg.instrument.barrier.is_none() && cfg.instrument.exercise.is_none() {
        return Ok(OracleValue {
            price: bs_combo_price(&payoff, x, r, vol, horizon)?,
            delta: Some(bs_combo_delta(&payoff, x, r, vol, horizon)?),
            std_error: None,
            method: "closed form".into(),
        });
    }
    let mut inst = McInstrument::european(payoff);
    inst.barrier = cfg.barrier_spec()?;
    let mut monitoring = Monitoring::Discrete;
    let mut substeps = cfg.output.oracle_substeps;
    if let Some(b) = &cfg.instrument.barrier {
        if b.monitoring == "bridge" {
            monitoring = Monitoring::ContinuousBridge;
        } else {
            substeps = cfg.grid.steps;
        }
    }
    if let (Some(ex), Some(value)) = (&cfg.instrument.exercise, cfg.exercise_value()?) {
        let t0 = cfg.grid.t0;
        let v = value.clone();
        let rule: Arc<dyn Fn(f64, f64) -> bool + Send + Sync> = match ex.strategy.as_str() {
            "holding_value" => {
                let hv = hv.cloned().ok_or_else(|| Error::config("the exercise oracle needs the holding value"))?;
                Arc::new(move |t, s| v.value(&[s]) > hv.holding_value(t + t0, &[s]))
            }
            "threshold" => {
                let (level, above) = (ex.threshold, ex.exercise_above);
                Arc::new(move |_, s| if above { s > level } else { s < level })
            }
            "never" => Arc::new(|_, _| false),
            "always" => Arc::new(|_, _| true),
            _ => return Err(Error::usage("the clairvoyant strategy has no adapted oracle")),
        };
        // Exercise dates must fall on the oracle grid.
        substeps = cfg.grid.steps;
        inst.exercise = Some(McExercise { times: ex.times.iter().map(|t| t - t0).collect(), value, rule });
    }
    let model = McModel { spot: x, rate: r, vol, maturity: horizon };
    let est = mc_reference_price(&inst, &model, cfg.output.oracle_paths, substeps, monitoring, cfg.training.seed)?;
    Ok(OracleValue {
        price: est.price,
        delta: None,
        std_error: Some(est.std_error),
        method: format!("Monte Carlo, {} paths, {substeps} steps", est.paths),
    })
}

/// Oracle table over `xs`.
pub fn oracle_table(cfg: &ExperimentConfig, xs: &[f64], base: &Path) -> Result<Vec<OracleRow>> {
    let hv = load_holding_value(cfg, base)?.map(|h| h.0);
    xs.iter().map(|&x| Ok(OracleRow { x, value: oracle_value(cfg, x, hv.as_ref())? })).collect()
}

fn loss_stats(report: &TrainReport) -> LossStats {
    let vals: Vec<(u64, f64)> = report.validations().map(|r| (r.iter, r.val_loss.unwrap())).collect();
    let train: Vec<f64> = report.records.iter().filter_map(|r| r.train_loss).collect();
    let tail = &train[train.len().saturating_sub(100)..];
    let std_at =
        |it: u64| report.records.iter().find(|r| r.iter == it).and_then(|r| r.y0_std.or(r.val_loss.map(f64::sqrt)));
    let final_iter = report.validations().last().map(|r| r.iter);
    LossStats {
        initial_val: vals.first().map(|v| v.1),
        final_val: vals.last().map(|v| v.1),
        min_val: vals.iter().map(|v| v.1).reduce(f64::min),
        final_train_avg: (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64),
        y0_std_reference: std_at(thresholds::STD_REFERENCE_ITER),
        y0_std_final: final_iter.and_then(std_at),
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Summary of a trained solver. `report` must come from the same run.
pub fn summarize(
    cfg: &ExperimentConfig,
    solver: &Solver,
    report: &TrainReport,
    diverged: Option<String>,
    hv: Option<&Arc<dyn HoldingValue>>,
) -> Result<RunSummary> {
    let x = cfg.report_state();
    let evaluation = solver.evaluate(cfg.training.eval_batch, cfg.training.seed)?;
    let pd = solver.extract_price_delta(&x)?;
    let iterations = report.records.last().map_or(0, |r| r.iter);
    let random = cfg.initial_state.kind == "uniform";
    let backward = cfg.method.direction == Direction::Backward;
    let single = cfg.model.kind == "black_scholes";
    let mut losses = loss_stats(report);
    if !(backward && !random) {
        losses.y0_std_reference = None;
        losses.y0_std_final = None;
    }

    let oracle = if single { Some(oracle_value(cfg, x[0], hv)?) } else { None };
    let price_error = oracle.as_ref().map(|o| (pd.price - o.price).abs());
    let delta_error = oracle.as_ref().and_then(|o| o.delta).map(|d| (pd.delta - d).abs());

    let european_only = cfg.instrument.barrier.is_none() && cfg.instrument.exercise.is_none();
    let mut curve = Vec::new();
    if random && single && european_only {
        for &s in &cfg.output.curve_states {
            let p = solver.extract_price_delta(&[s])?;
            let o = oracle_value(cfg, s, hv)?;
            curve.push(CurvePoint {
                x: s,
                price: p.price,
                delta: p.delta,
                oracle_price: o.price,
                oracle_delta: o.delta,
            });
        }
    }

    let european_price = match (&cfg.instrument.exercise, single) {
        (Some(_), true) => {
            let mut eu = cfg.clone();
            eu.instrument.exercise = None;
            eu.instrument.barrier = None;
            Some(oracle_value(&eu, x[0], None)?.price)
        }
        _ => None,
    };

    let mut checks = Vec::new();
    if iterations > 0 && diverged.is_none() {
        use thresholds::*;
        if let (Some(o), false) = (&oracle, random) {
            if let Some(se) = o.std_error {
                let combined = (se * se + evaluation.price_se * evaluation.price_se).sqrt();
                let tol = MC_SIGMAS * combined + MC_TRAINING_ABS;
                let err = price_error.unwrap();
                checks.push(check(
                    "price vs Monte-Carlo oracle",
                    err <= tol,
                    format!("|{:.5} - {:.5}| = {err:.5}, tolerance {tol:.5}", pd.price, o.price),
                ));
            } else {
                let tol = (PRICE_REL * o.price.abs()).max(PRICE_ABS);
                let err = price_error.unwrap();
                checks.push(check(
                    "price vs closed form",
                    err <= tol,
                    format!("|{:.5} - {:.5}| = {err:.5}, tolerance {tol:.5}", pd.price, o.price),
                ));
                if let (Some(d), Some(e)) = (o.delta, delta_error) {
                    checks.push(check(
                        "delta vs closed form",
                        e <= DELTA_ABS,
                        format!("|{:.5} - {d:.5}| = {e:.5}, tolerance {DELTA_ABS}", pd.delta),
                    ));
                }
            }
        }
        if !curve.is_empty() {
            let (worst_p, worst_x) = curve
                .iter()
                .map(|c| {
                    (
                        (c.price - c.oracle_price).abs()
                            - (CURVE_PRICE_REL * c.oracle_price.abs()).max(CURVE_PRICE_ABS),
                        c.x,
                    )
                })
                .fold((f64::MIN, 0.0), |a, b| if b.0 > a.0 { b } else { a });
            checks.push(check(
                "initial-value curve vs closed form",
                worst_p <= 0.0,
                format!("largest excess over tolerance {worst_p:.5} at x = {worst_x}"),
            ));
            let worst_d = curve.iter().filter_map(|c| c.oracle_delta.map(|d| (c.delta - d).abs())).fold(0.0, f64::max);
            checks.push(check(
                "delta curve vs closed form",
                worst_d <= CURVE_DELTA_ABS,
                format!("largest gap {worst_d:.5}, tolerance {CURVE_DELTA_ABS}"),
            ));
        }
        if let (Some(r), Some(f)) = (losses.y0_std_reference, losses.y0_std_final) {
            if iterations > STD_REFERENCE_ITER {
                checks.push(check(
                    "rolled-back Y0 dispersion decay",
                    f < STD_RATIO * r,
                    format!(
                        "std {f:.5} at the end vs {r:.5} at iteration {STD_REFERENCE_ITER}, ratio limit {STD_RATIO}"
                    ),
                ));
            }
        }
        if let Some(eu) = european_price {
            let floor = eu - EXERCISE_SIGMAS * evaluation.price_se;
            checks.push(check(
                "exercise adds value",
                pd.price >= floor,
                format!("price {:.5} vs European {eu:.5} - {EXERCISE_SIGMAS} SE = {floor:.5}", pd.price),
            ));
        }
    }

    Ok(RunSummary {
        preset: cfg.preset.clone(),
        iterations,
        untrained: iterations == 0,
        diverged,
        report_state: x,
        price: pd.price,
        delta: pd.delta,
        outside_box: pd.outside_box,
        evaluation,
        oracle,
        price_error,
        delta_error,
        curve,
        losses,
        european_price,
        checks,
    })
}

/// Loss, price and delta against iteration.
pub fn training_plot(report: &TrainReport, oracle: Option<&OracleValue>) -> String {
    let pts = |f: &dyn Fn(&crate::solver::IterationRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        report.records.iter().filter_map(|r| f(r).map(|v| (r.iter as f64, v))).collect()
    };
    let last = report.records.last().map_or(1.0, |r| r.iter as f64);
    let mut price = vec![Series::new("price", "#1f77b4", pts(&|r| r.price))];
    let mut delta = vec![Series::new("delta", "#1f77b4", pts(&|r| r.delta))];
    if let Some(o) = oracle {
        price.push(Series::new("oracle", "#d62728", vec![(0.0, o.price), (last, o.price)]).dashed());
        if let Some(d) = o.delta {
            delta.push(Series::new("oracle", "#d62728", vec![(0.0, d), (last, d)]).dashed());
        }
    }
    render(&[
        Panel {
            title: "loss".into(),
            x_label: "iteration".into(),
            log_y: true,
            series: vec![
                Series::new("train", "#9ecae1", pts(&|r| r.train_loss)),
                Series::new("validation", "#ff7f0e", pts(&|r| r.val_loss)),
            ],
        },
        Panel { title: "price".into(), x_label: "iteration".into(), log_y: false, series: price },
        Panel { title: "delta".into(), x_label: "iteration".into(), log_y: false, series: delta },
    ])
}

/// Result of [`run`].
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub report: TrainReport,
    /// Set when training diverged; artifacts are written regardless.
    pub error: Option<Error>,
}

fn copy_holding_value(src: &Path, dir: &Path) -> Result<()> {
    let dst = dir.join(HOLDING_VALUE_DIR);
    std::fs::create_dir_all(&dst)?;
    for f in [CONFIG_FILE, CHECKPOINT_FILE] {
        std::fs::copy(src.join(f), dst.join(f))?;
    }
    Ok(())
}

/// Trains `cfg` and writes all artifacts to `dir`. Relative holding-value runs
/// are resolved against `base`.
pub fn run(cfg: &ExperimentConfig, dir: &Path, base: &Path) -> Result<RunOutput> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Schema(errs));
    }
    let hv = load_holding_value(cfg, base)?;
    let problem = cfg.problem(hv.as_ref().map(|h| h.0.clone()))?;
    let mut solver = Solver::new(problem, cfg.training.seed)?;
    let train_cfg = cfg.train_config();
    let errs = train_cfg.validate(&solver);
    if !errs.is_empty() {
        return Err(Error::Schema(errs));
    }
    std::fs::create_dir_all(dir)?;
    let mut resolved = cfg.clone();
    if let Some((_, src)) = &hv {
        copy_holding_value(src, dir)?;
        resolved.instrument.exercise.as_mut().unwrap().holding_value_run = Some(PathBuf::from(HOLDING_VALUE_DIR));
    }
    std::fs::write(dir.join(CONFIG_FILE), resolved.to_toml_string())?;

    let TrainOutcome { report, optimizer, iterations_completed, error } = solver.train(&train_cfg)?;
    std::fs::write(dir.join(REPORT_FILE), report.to_csv())?;
    solver.checkpoint(iterations_completed, Some(&optimizer)).save(&dir.join(CHECKPOINT_FILE))?;
    let summary =
        summarize(&resolved, &solver, &report, error.as_ref().map(|e| e.to_string()), hv.as_ref().map(|h| &h.0))?;
    write_summary(dir, &summary)?;
    if cfg.output.svg {
        std::fs::write(dir.join(PLOT_FILE), training_plot(&report, summary.oracle.as_ref()))?;
    }
    Ok(RunOutput { dir: dir.to_path_buf(), summary, report, error })
}

fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(summary)? + "\n")?;
    std::fs::write(dir.join(SUMMARY_TEXT_FILE), summary.to_text())?;
    Ok(())
}

/// Rebuilds the summary of a finished run from its directory alone.
pub fn report(dir: &Path) -> Result<RunSummary> {
    let missing: Vec<String> = [CONFIG_FILE, REPORT_FILE, CHECKPOINT_FILE]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| dir.join(f).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let report = TrainReport::from_csv(&std::fs::read_to_string(dir.join(REPORT_FILE))?)?;
    let hv = load_holding_value(&cfg, dir)?;
    let mut solver = Solver::new(cfg.problem(hv.as_ref().map(|h| h.0.clone()))?, cfg.training.seed)?;
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    solver.restore(&ckpt)?;
    let trained = report.last().map_or(0, |r| r.iter);
    let diverged = (ckpt.counter < trained || trained < cfg.training.iterations)
        .then(|| format!("training stopped after {trained} of {} iterations", cfg.training.iterations));
    let summary = summarize(&cfg, &solver, &report, diverged, hv.as_ref().map(|h| &h.0))?;
    write_summary(dir, &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(preset: &str, iterations: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(preset).unwrap();
        c.grid.steps = 5;
        c.training.iterations = iterations;
        c.training.batch_size = 64;
        c.training.validation_every = 10;
        c.training.eval_batch = 256;
        c.training.deterministic = true;
        c.output.oracle_paths = 10_000;
        c.output.oracle_substeps = 50;
        c
    }

    #[test]
    fn zero_iteration_run_is_flagged_untrained() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&tiny("fwd-fixed-eu", 0), dir.path(), dir.path()).unwrap();
        assert!(out.summary.untrained);
        assert!(out.summary.checks.is_empty());
        assert!(!out.summary.all_passed());
        assert_eq!(out.report.records.len(), 1);
        for f in [CONFIG_FILE, REPORT_FILE, CHECKPOINT_FILE, SUMMARY_FILE, SUMMARY_TEXT_FILE, PLOT_FILE] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert!(out.summary.to_text().contains("untrained"));
    }

    #[test]
    fn report_rebuilds_the_summary_from_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&tiny("bwd-random-eu", 20), dir.path(), dir.path()).unwrap();
        let first = std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap();
        let again = report(dir.path()).unwrap();
        assert_eq!(again, out.summary);
        assert_eq!(std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap(), first);
        assert_eq!(again.curve.len(), 9);
    }

    #[test]
    fn missing_artifacts_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let Err(Error::MissingArtifacts(list)) = report(dir.path()) else { panic!("expected missing artifacts") };
        assert_eq!(list.len(), 3);
    }

    #[test]
    fn same_seed_gives_identical_artifacts() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = tiny("bwd-fixed-eu", 15);
        run(&cfg, a.path(), a.path()).unwrap();
        run(&cfg, b.path(), b.path()).unwrap();
        for f in [REPORT_FILE, CHECKPOINT_FILE, SUMMARY_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn exercise_run_copies_its_holding_value() {
        let root = tempfile::tempdir().unwrap();
        let mut hv = tiny("bwd-random-holding", 5);
        hv.output.svg = false;
        run(&hv, &root.path().join("hv"), root.path()).unwrap();
        let mut ex = tiny("fwd-fixed-exercise", 5);
        ex.grid.steps = 4;
        ex.instrument.exercise.as_mut().unwrap().holding_value_run = Some(PathBuf::from("hv"));
        let out = run(&ex, &root.path().join("ex"), root.path()).unwrap();
        assert!(out.summary.european_price.is_some());
        std::fs::remove_dir_all(root.path().join("hv")).unwrap();
        assert_eq!(report(&root.path().join("ex")).unwrap(), out.summary);
    }

    #[test]
    fn oracle_rows_for_europeans_and_barriers() {
        let c = ExperimentConfig::preset("fwd-fixed-eu").unwrap();
        let rows = oracle_table(&c, &[120.0], Path::new(".")).unwrap();
        assert!(rows[0].value.std_error.is_none());
        let mut b = tiny("fwd-fixed-barrier", 0);
        b.output.oracle_paths = 10_000;
        let rows = oracle_table(&b, &[120.0], Path::new(".")).unwrap();
        assert!(rows[0].value.std_error.unwrap() > 0.0);
    }
}
