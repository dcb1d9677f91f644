//! Batch normalization kernels over `batch × width` row-major blocks.

use crate::error::{Error, Result};

/// Per-feature statistics of one training mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/B) batch variance.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Training-mode transform: batch mean/variance, standardize, scale and shift.
/// Writes the standardized inputs to `xhat` for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn forward_train(
    x: &[f64],
    batch: usize,
    width: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    out: &mut [f64],
    xhat: &mut [f64],
) -> BatchStats {
    let inv_b = 1.0 / batch as f64;
    let mut mean = vec![0.0; width];
    for row in x.chunks_exact(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_b);
    let mut var = vec![0.0; width];
    for row in x.chunks_exact(width) {
        for k in 0..width {
            let d = row[k] - mean[k];
            var[k] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v *= inv_b);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    for b in 0..batch {
        for k in 0..width {
            let i = b * width + k;
            let h = (x[i] - mean[k]) * inv_std[k];
            xhat[i] = h;
            out[i] = gamma[k] * h + beta[k];
        }
    }
    BatchStats { mean, var, inv_std }
}

/// Reverse pass of [`forward_train`]; accumulates into `dgamma`/`dbeta`.
#[allow(clippy::too_many_arguments)]
pub fn backward_train(
    dy: &[f64],
    xhat: &[f64],
    stats: &BatchStats,
    gamma: &[f64],
    batch: usize,
    width: usize,
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let bf = batch as f64;
    let mut sum_dxhat = vec![0.0; width];
    let mut sum_dxhat_xhat = vec![0.0; width];
    for b in 0..batch {
        for k in 0..width {
            let i = b * width + k;
            dgamma[k] += dy[i] * xhat[i];
            dbeta[k] += dy[i];
            let dh = dy[i] * gamma[k];
            sum_dxhat[k] += dh;
            sum_dxhat_xhat[k] += dh * xhat[i];
        }
    }
    for b in 0..batch {
        for k in 0..width {
            let i = b * width + k;
            let dh = dy[i] * gamma[k];
            dx[i] = stats.inv_std[k] / bf * (bf * dh - sum_dxhat[k] - xhat[i] * sum_dxhat_xhat[k]);
        }
    }
}

/// Inference-mode transform `γ/√(σ²_I+ε)·x + (β − γμ_I/√(σ²_I+ε))`.
#[allow(clippy::too_many_arguments)]
pub fn forward_infer(
    x: &[f64],
    width: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
    out: &mut [f64],
) {
    for (row, o) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        for k in 0..width {
            let s = gamma[k] / (var[k] + eps).sqrt();
            o[k] = s * row[k] + (beta[k] - s * mean[k]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn backward_infer(
    dy: &[f64],
    x: &[f64],
    width: usize,
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    for (i, (&g, &xv)) in dy.iter().zip(x).enumerate() {
        let k = i % width;
        let inv = 1.0 / (var[k] + eps).sqrt();
        dx[i] = g * gamma[k] * inv;
        dgamma[k] += g * (xv - mean[k]) * inv;
        dbeta[k] += g;
    }
}

/// Trainable scale/shift plus running statistics for one normalized layer input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub populated: bool,
}

impl BatchNormState {
    pub fn new(width: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            eps,
            momentum,
            populated: false,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential moving average of batch statistics; the first batch seeds them.
    pub fn update_running(&mut self, stats: &BatchStats) {
        update_running(&mut self.running_mean, &mut self.running_var, &mut self.populated, self.momentum, stats);
    }
}

pub(crate) fn update_running(
    mean: &mut [f64],
    var: &mut [f64],
    populated: &mut bool,
    momentum: f64,
    stats: &BatchStats,
) {
    if *populated {
        for k in 0..mean.len() {
            mean[k] = momentum * mean[k] + (1.0 - momentum) * stats.mean[k];
            var[k] = momentum * var[k] + (1.0 - momentum) * stats.var[k];
        }
    } else {
        mean.copy_from_slice(&stats.mean);
        var.copy_from_slice(&stats.var);
        *populated = true;
    }
}

/// Normalizes a `batch × width` block with batch statistics and updates the
/// running averages.
pub fn batchnorm_train(x: &[f64], state: &mut BatchNormState) -> Result<Vec<f64>> {
    let w = state.width();
    if w == 0 || x.len() % w != 0 {
        return Err(Error::usage("batch does not match batch-norm width"));
    }
    let batch = x.len() / w;
    if batch < 2 {
        return Err(Error::usage(format!("batch normalization needs a batch of at least 2, got {batch}")));
    }
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let stats = forward_train(x, batch, w, &state.gamma, &state.beta, state.eps, &mut out, &mut xhat);
    state.update_running(&stats);
    Ok(out)
}

pub fn batchnorm_infer(x: &[f64], state: &BatchNormState) -> Result<Vec<f64>> {
    let w = state.width();
    if w == 0 || x.len() % w != 0 {
        return Err(Error::usage("input does not match batch-norm width"));
    }
    if !state.populated {
        return Err(Error::usage("batch-norm running statistics are not populated"));
    }
    let mut out = vec![0.0; x.len()];
    forward_infer(x, w, &state.gamma, &state.beta, &state.running_mean, &state.running_var, state.eps, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(gamma: f64, beta: f64, eps: f64) -> BatchNormState {
        let mut s = BatchNormState::new(1, eps, 0.99);
        s.gamma = vec![gamma];
        s.beta = vec![beta];
        s
    }

    #[test]
    fn standardized_batch_is_unchanged() {
        let out = batchnorm_train(&[-1.0, 1.0], &mut state(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(out, vec![-1.0, 1.0]);
    }

    #[test]
    fn zero_gamma_collapses_to_beta() {
        let out = batchnorm_train(&[3.0, -7.0, 12.5, 0.1], &mut state(0.0, 0.7, 1e-5)).unwrap();
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn direct_evaluation() {
        let mut s = state(2.0, 1.0, 0.0);
        let out = batchnorm_train(&[0.0, 2.0], &mut s).unwrap();
        assert_eq!(out, vec![-1.0, 3.0]);
        assert_eq!((s.running_mean[0], s.running_var[0]), (1.0, 1.0));
    }

    #[test]
    fn rejects_single_sample_batches() {
        assert!(matches!(batchnorm_train(&[1.0], &mut state(1.0, 0.0, 1e-5)), Err(Error::Usage(_))));
    }

    #[test]
    fn inference_examples() {
        let mut s = state(1.0, 0.0, 0.0);
        assert!(batchnorm_infer(&[1.0], &s).is_err());
        s.populated = true;
        s.running_mean = vec![0.0];
        s.running_var = vec![1.0];
        assert_eq!(batchnorm_infer(&[3.5, -2.0], &s).unwrap(), vec![3.5, -2.0]);
        let mut s = state(2.0, 1.0, 0.0);
        s.populated = true;
        s.running_mean = vec![1.0];
        s.running_var = vec![4.0];
        assert_eq!(batchnorm_infer(&[3.0], &s).unwrap(), vec![3.0]);
    }

    #[test]
    fn inference_matches_training_at_batch_statistics() {
        let x = [0.3, 1.7, -2.2, 4.0, 0.9];
        let mut s = state(1.3, -0.4, 1e-5);
        let train = batchnorm_train(&x, &mut s).unwrap();
        // first update copies the batch statistics exactly
        let infer = batchnorm_infer(&x, &s).unwrap();
        for (a, b) in train.iter().zip(&infer) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn running_average_uses_momentum() {
        let mut s = state(1.0, 0.0, 1e-5);
        batchnorm_train(&[0.0, 2.0], &mut s).unwrap();
        batchnorm_train(&[10.0, 14.0], &mut s).unwrap();
        assert!((s.running_mean[0] - (0.99 * 1.0 + 0.01 * 12.0)).abs() < 1e-15);
        assert!((s.running_var[0] - (0.99 * 1.0 + 0.01 * 4.0)).abs() < 1e-15);
    }
}
