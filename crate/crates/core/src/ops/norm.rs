//! Batch normalization over `(N, H, W)` per channel and layer normalization
//! over the last axis.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(RunningStats {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::ones(&[channels])?,
        })
    }
}

pub struct BatchNormOutput {
    pub output: Tensor,
    /// Normalized input before the affine transform.
    pub normalized: Tensor,
    /// Per-channel `1 / sqrt(var + eps)` actually used.
    pub inv_std: Vec<f64>,
    /// Updated running statistics (train mode only).
    pub updated: Option<RunningStats>,
}

pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<BatchNormOutput> {
    let (n, c, h, w) = input.dims4()?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running mean", &running.mean),
        ("running var", &running.var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(format!(
                "batch_norm {name} has shape {:?}, expected [{c}]",
                t.shape()
            )));
        }
    }
    let hw = h * w;
    let count = n * hw;
    let x = input.data();
    let (mean, var, updated) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::Numerical(format!(
                    "batch_norm in train mode needs at least 2 values per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let vals = || (0..n).flat_map(move |s| x[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter());
                let m = vals().sum::<f64>() / count as f64;
                let v = vals().map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                mean[ch] = m;
                var[ch] = v;
            }
            let unbias = count as f64 / (count - 1) as f64;
            let rm = running
                .mean
                .data()
                .iter()
                .zip(&mean)
                .map(|(r, m)| (1.0 - momentum) * r + momentum * m)
                .collect();
            let rv = running
                .var
                .data()
                .iter()
                .zip(&var)
                .map(|(r, v)| (1.0 - momentum) * r + momentum * v * unbias)
                .collect();
            let updated = RunningStats {
                mean: Tensor::new(&[c], rm)?,
                var: Tensor::new(&[c], rv)?,
            };
            (mean, var, Some(updated))
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut output = vec![0.0; x.len()];
    for (i, (&xv, (nv, ov))) in x.iter().zip(normalized.iter_mut().zip(output.iter_mut())).enumerate() {
        let ch = (i / hw) % c;
        *nv = (xv - mean[ch]) * inv_std[ch];
        *ov = gamma.data()[ch] * *nv + beta.data()[ch];
    }
    Ok(BatchNormOutput {
        output: Tensor::new(input.shape(), output)?,
        normalized: Tensor::new(input.shape(), normalized)?,
        inv_std,
        updated,
    })
}

/// Normalize over the last axis of `input`, then scale and shift.
pub fn layer_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let d = *input.shape().last().unwrap();
    if d < 2 {
        return Err(Error::shape("layer_norm needs at least 2 features on the last axis"));
    }
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(format!(
            "layer_norm gamma/beta must have shape [{d}], got {:?} / {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut normalized = input.clone();
    let mut output = input.clone();
    let mut inv_std = Vec::with_capacity(input.numel() / d);
    for (xn, y) in normalized.data_mut().chunks_mut(d).zip(output.data_mut().chunks_mut(d)) {
        let m = xn.iter().sum::<f64>() / d as f64;
        let v = xn.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64;
        let s = 1.0 / (v + eps).sqrt();
        inv_std.push(s);
        for i in 0..d {
            xn[i] = (xn[i] - m) * s;
            y[i] = gamma.data()[i] * xn[i] + beta.data()[i];
        }
    }
    Ok((output, normalized, inv_std))
}

impl Tape {
    /// Batch normalization. In train mode the updated running statistics are
    /// queued under `stats_name` (see [`Tape::take_buffer_updates`]).
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        mode: Mode,
        stats_name: &str,
    ) -> Result<Var> {
        let res = batch_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            mode,
            BN_EPS,
            self.bn_momentum().unwrap_or(BN_MOMENTUM),
        )?;
        if let Some(up) = res.updated {
            self.push_buffer_update(format!("{stats_name}.running_mean"), up.mean);
            self.push_buffer_update(format!("{stats_name}.running_var"), up.var);
        }
        let (_, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let gamma_v = self.value(gamma).clone();
        let xhat = res.normalized;
        let inv_std = res.inv_std;
        self.record(
            "batch_norm",
            res.output,
            &[x, gamma, beta],
            Box::new(move |g| {
                let gd = g.data();
                let xh = xhat.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (&gv, &xv)) in gd.iter().zip(xh).enumerate() {
                    let ch = (i / hw) % c;
                    dgamma[ch] += gv * xv;
                    dbeta[ch] += gv;
                }
                let mut dx = vec![0.0; gd.len()];
                match mode {
                    Mode::Eval => {
                        for (i, d) in dx.iter_mut().enumerate() {
                            let ch = (i / hw) % c;
                            *d = gd[i] * gamma_v.data()[ch] * inv_std[ch];
                        }
                    }
                    Mode::Train => {
                        let count = (gd.len() / c) as f64;
                        for (i, d) in dx.iter_mut().enumerate() {
                            let ch = (i / hw) % c;
                            *d = gamma_v.data()[ch] * inv_std[ch] / count
                                * (count * gd[i] - dbeta[ch] - xh[i] * dgamma[ch]);
                        }
                    }
                }
                vec![
                    Tensor::new(xhat.shape(), dx).unwrap(),
                    Tensor::new(&[c], dgamma).unwrap(),
                    Tensor::new(&[c], dbeta).unwrap(),
                ]
            }),
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, xhat, inv_std) = layer_norm(self.value(x), self.value(gamma), self.value(beta), LN_EPS)?;
        let gamma_v = self.value(gamma).clone();
        self.record(
            "layer_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |g| {
                let d = gamma_v.numel();
                let mut dx = g.clone();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for ((row, xh), &s) in dx.data_mut().chunks_mut(d).zip(xhat.data().chunks(d)).zip(&inv_std) {
                    let mut mean_dy = 0.0;
                    let mut mean_dy_xh = 0.0;
                    for i in 0..d {
                        dgamma[i] += row[i] * xh[i];
                        dbeta[i] += row[i];
                        let dy = row[i] * gamma_v.data()[i];
                        row[i] = dy;
                        mean_dy += dy;
                        mean_dy_xh += dy * xh[i];
                    }
                    mean_dy /= d as f64;
                    mean_dy_xh /= d as f64;
                    for i in 0..d {
                        row[i] = s * (row[i] - mean_dy - xh[i] * mean_dy_xh);
                    }
                }
                vec![
                    dx,
                    Tensor::new(&[d], dgamma).unwrap(),
                    Tensor::new(&[d], dbeta).unwrap(),
                ]
            }),
        )
    }
}
