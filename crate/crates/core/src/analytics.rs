//! Reference values: closed-form Black–Scholes prices and deltas and a plain
//! Monte-Carlo pricer for barrier and exercisable payoffs.
//!
//! Nothing here depends on the network or optimizer modules.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::instruments::{bridge_breach_probability, BarrierSpec, OptionKind, PayoffSpec, ValueFunction};
use crate::rng::{labels, RandomStream};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsParams {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub vol: f64,
    pub maturity: f64,
}

impl BsParams {
    /// Zero volatility or zero maturity are accepted as the deterministic limits.
    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.strike > 0.0) {
            return Err(Error::Domain(format!("spot and strike must be positive: {self:?}")));
        }
        if !(self.vol >= 0.0 && self.maturity >= 0.0) || !self.rate.is_finite() {
            return Err(Error::Domain(format!("vol and maturity must be non-negative: {self:?}")));
        }
        Ok(())
    }

    fn d1_d2(&self) -> Option<(f64, f64)> {
        let s = self.vol * self.maturity.sqrt();
        if s < 1e-300 {
            return None;
        }
        let d1 = ((self.spot / self.strike).ln() + (self.rate + 0.5 * self.vol * self.vol) * self.maturity) / s;
        Some((d1, d1 - s))
    }
}

pub fn bs_price(kind: OptionKind, p: &BsParams) -> Result<f64> {
    p.validate()?;
    let df = (-p.rate * p.maturity).exp();
    Ok(match (kind, p.d1_d2()) {
        (OptionKind::Call, Some((d1, d2))) => p.spot * norm_cdf(d1) - p.strike * df * norm_cdf(d2),
        (OptionKind::Put, Some((d1, d2))) => p.strike * df * norm_cdf(-d2) - p.spot * norm_cdf(-d1),
        (OptionKind::Call, None) => (p.spot - p.strike * df).max(0.0),
        (OptionKind::Put, None) => (p.strike * df - p.spot).max(0.0),
    })
}

pub fn bs_delta(kind: OptionKind, p: &BsParams) -> Result<f64> {
    p.validate()?;
    let df = (-p.rate * p.maturity).exp();
    Ok(match (kind, p.d1_d2()) {
        (OptionKind::Call, Some((d1, _))) => norm_cdf(d1),
        (OptionKind::Put, Some((d1, _))) => norm_cdf(d1) - 1.0,
        (OptionKind::Call, None) => f64::from(p.spot > p.strike * df),
        (OptionKind::Put, None) => -f64::from(p.spot < p.strike * df),
    })
}

/// Legwise Black–Scholes value of a call/put combination.
pub fn bs_combo_price(payoff: &PayoffSpec, spot: f64, rate: f64, vol: f64, maturity: f64) -> Result<f64> {
    payoff.legs().iter().try_fold(0.0, |acc, leg| {
        let p = BsParams { spot, strike: leg.strike, rate, vol, maturity };
        Ok(acc + leg.weight * bs_price(leg.kind, &p)?)
    })
}

pub fn bs_combo_delta(payoff: &PayoffSpec, spot: f64, rate: f64, vol: f64, maturity: f64) -> Result<f64> {
    payoff.legs().iter().try_fold(0.0, |acc, leg| {
        let p = BsParams { spot, strike: leg.strike, rate, vol, maturity };
        Ok(acc + leg.weight * bs_delta(leg.kind, &p)?)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitoring {
    /// Barrier observed at the substep times only.
    Discrete,
    /// Substep observations plus the bridge crossing probability in between.
    ContinuousBridge,
}

/// Exercise opportunities for the Monte-Carlo oracle.
#[derive(Clone)]
pub struct McExercise {
    pub times: Vec<f64>,
    pub value: ValueFunction,
    pub rule: Arc<dyn Fn(f64, f64) -> bool + Send + Sync>,
}

#[derive(Clone)]
pub struct McInstrument {
    pub payoff: PayoffSpec,
    pub barrier: Option<BarrierSpec>,
    pub exercise: Option<McExercise>,
}

impl McInstrument {
    pub fn european(payoff: PayoffSpec) -> Self {
        Self { payoff, barrier: None, exercise: None }
    }
}

/// Single-asset Black–Scholes market under the pricing measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McModel {
    pub spot: f64,
    pub rate: f64,
    pub vol: f64,
    pub maturity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub price: f64,
    pub std_error: f64,
    pub paths: usize,
}

pub const MIN_ORACLE_PATHS: usize = 10_000;

/// Discounted-payoff mean and standard error over `paths` exact GBM paths with
/// `substeps` equal steps.
pub fn mc_reference_price(
    instrument: &McInstrument,
    model: &McModel,
    paths: usize,
    substeps: usize,
    monitoring: Monitoring,
    seed: u64,
) -> Result<McEstimate> {
    if paths < MIN_ORACLE_PATHS {
        return Err(Error::usage(format!(
            "the Monte-Carlo oracle needs at least {MIN_ORACLE_PATHS} paths, got {paths}"
        )));
    }
    mc_price_unchecked(instrument, model, paths, substeps, monitoring, seed)
}

pub(crate) fn mc_price_unchecked(
    instrument: &McInstrument,
    model: &McModel,
    paths: usize,
    substeps: usize,
    monitoring: Monitoring,
    seed: u64,
) -> Result<McEstimate> {
    if substeps == 0 {
        return Err(Error::usage("substeps must be at least 1"));
    }
    if !(model.spot > 0.0 && model.vol >= 0.0 && model.maturity > 0.0) {
        return Err(Error::Domain(format!("invalid model {model:?}")));
    }
    let dt = model.maturity / substeps as f64;
    let ex_steps: Vec<usize> = match &instrument.exercise {
        Some(ex) => ex
            .times
            .iter()
            .map(|&t| {
                let k = (t / dt).round();
                if (k * dt - t).abs() > 1e-9 * model.maturity || k < 1.0 || k as usize >= substeps {
                    Err(Error::usage(format!("exercise time {t} is not an interior substep time")))
                } else {
                    Ok(k as usize)
                }
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let values = simulate_values(instrument, model, paths, substeps, monitoring, seed, dt, &ex_steps);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(McEstimate { price: mean, std_error: (var / n).sqrt(), paths })
}

#[allow(clippy::too_many_arguments)]
fn simulate_values(
    instrument: &McInstrument,
    model: &McModel,
    paths: usize,
    substeps: usize,
    monitoring: Monitoring,
    seed: u64,
    dt: f64,
    ex_steps: &[usize],
) -> Vec<f64> {
    let stream = RandomStream::new(seed).substream(labels::ORACLE);
    let drift = (model.rate - 0.5 * model.vol * model.vol) * dt;
    let diffusion = model.vol * dt.sqrt();
    let disc = |t: f64| (-model.rate * t).exp();
    let rebate = |t: f64, x: f64, b: &BarrierSpec| b.rebate_value(t, &[x], model.maturity, model.rate) * disc(t);

    let one_path = |path: usize| -> f64 {
        let mut rng = stream.path_rng(path as u64);
        let mut x = model.spot;
        let mut survival = 1.0;
        let mut acc = 0.0;
        if let Some(b) = &instrument.barrier {
            if x >= b.level {
                return rebate(0.0, x, b);
            }
        }
        let mut next_ex = 0;
        for k in 1..=substeps {
            let z: f64 = rng.sample(StandardNormal);
            let x_prev = x;
            x *= (drift + diffusion * z).exp();
            let t = k as f64 * dt;
            if let Some(b) = &instrument.barrier {
                if x >= b.level {
                    return acc + survival * rebate(t, x, b);
                }
                if monitoring == Monitoring::ContinuousBridge && model.vol > 0.0 {
                    let p = bridge_breach_probability(x_prev, x, b.level, model.vol, dt).unwrap_or(1.0);
                    acc += survival * p * rebate(t, x, b);
                    survival *= 1.0 - p;
                }
            }
            if let Some(ex) = &instrument.exercise {
                if next_ex < ex_steps.len() && ex_steps[next_ex] == k {
                    next_ex += 1;
                    if (ex.rule)(t, x) {
                        return acc + survival * ex.value.value(&[x]) * disc(t);
                    }
                }
            }
        }
        acc + survival * instrument.payoff.value_at(x) * disc(model.maturity)
    };

    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(paths.div_ceil(4096)).max(1);
    let mut out = vec![0.0; paths];
    if threads == 1 {
        for (p, v) in out.iter_mut().enumerate() {
            *v = one_path(p);
        }
    } else {
        let chunk = paths.div_ceil(threads);
        std::thread::scope(|s| {
            for (c, slice) in out.chunks_mut(chunk).enumerate() {
                let one_path = &one_path;
                s.spawn(move || {
                    for (i, v) in slice.iter_mut().enumerate() {
                        *v = one_path(c * chunk + i);
                    }
                });
            }
        });
    }
    out
}

/// Central difference of the Monte-Carlo price with common random numbers.
pub fn mc_reference_delta(
    instrument: &McInstrument,
    model: &McModel,
    paths: usize,
    substeps: usize,
    monitoring: Monitoring,
    seed: u64,
) -> Result<f64> {
    let h = 0.01 * model.spot;
    let up = McModel { spot: model.spot + h, ..*model };
    let dn = McModel { spot: model.spot - h, ..*model };
    let pu = mc_reference_price(instrument, &up, paths, substeps, monitoring, seed)?.price;
    let pd = mc_reference_price(instrument, &dn, paths, substeps, monitoring, seed)?.price;
    Ok((pu - pd) / (2.0 * h))
}
