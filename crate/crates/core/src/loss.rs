//! Dice and cross-entropy segmentation losses over `[N, K, H, W]` logits.

use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DICE_EPS: f64 = 1e-5;

/// Weights of the combined objective `alpha * dice + beta * cross_entropy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    alpha: f64,
    beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || beta < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got alpha={alpha} beta={beta}"
            )));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Err(Error::Config("loss weights alpha and beta cannot both be zero".into()));
        }
        Ok(LossWeights { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0 }
    }
}

struct Layout {
    n: usize,
    k: usize,
    hw: usize,
}

fn layout(logits: &Tensor, targets: &[LabelMask]) -> Result<Layout> {
    let (n, k, h, w) = logits.dims4()?;
    if targets.len() != n {
        return Err(Error::shape(format!(
            "{n} logit maps but {} target masks",
            targets.len()
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if t.height() != h || t.width() != w {
            return Err(Error::shape(format!(
                "target {i} is {}x{}, logits are {h}x{w}",
                t.height(),
                t.width()
            )));
        }
        t.check_classes(k)?;
    }
    Ok(Layout { n, k, hw: h * w })
}

/// Per-pixel softmax over the class axis, same layout as the logits.
fn class_softmax(logits: &Tensor, lay: &Layout) -> Vec<f64> {
    let Layout { n, k, hw } = *lay;
    let z = logits.data();
    let mut p = vec![0.0; z.len()];
    for b in 0..n {
        for i in 0..hw {
            let at = |c: usize| (b * k + c) * hw + i;
            let m = (0..k).map(|c| z[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for c in 0..k {
                let e = (z[at(c)] - m).exp();
                p[at(c)] = e;
                s += e;
            }
            for c in 0..k {
                p[at(c)] /= s;
            }
        }
    }
    p
}

fn target_at(targets: &[LabelMask], b: usize, i: usize) -> usize {
    targets[b].data()[i] as usize
}

/// Per-class `(sum p*g, sum p + sum g + eps)`.
fn dice_terms(p: &[f64], targets: &[LabelMask], lay: &Layout, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let Layout { n, k, hw } = *lay;
    let mut inter = vec![0.0; k];
    let mut denom = vec![eps; k];
    for b in 0..n {
        for i in 0..hw {
            let t = target_at(targets, b, i);
            for c in 0..k {
                let pv = p[(b * k + c) * hw + i];
                denom[c] += pv;
                if c == t {
                    inter[c] += pv;
                    denom[c] += 1.0;
                }
            }
        }
    }
    (inter, denom)
}

fn dice_value(inter: &[f64], denom: &[f64], eps: f64) -> f64 {
    let k = inter.len();
    inter
        .iter()
        .zip(denom)
        .map(|(i, d)| 1.0 - (2.0 * i + eps) / d)
        .sum::<f64>()
        / k as f64
}

/// Soft Dice loss averaged over all `K` classes.
pub fn dice_loss(logits: &Tensor, targets: &[LabelMask], eps: f64) -> Result<f64> {
    let lay = layout(logits, targets)?;
    let p = class_softmax(logits, &lay);
    let (inter, denom) = dice_terms(&p, targets, &lay, eps);
    Ok(dice_value(&inter, &denom, eps))
}

/// Mean negative log-likelihood of the target class, log-sum-exp stabilized.
pub fn cross_entropy(logits: &Tensor, targets: &[LabelMask]) -> Result<f64> {
    let lay = layout(logits, targets)?;
    let Layout { n, k, hw } = lay;
    let z = logits.data();
    let mut total = 0.0;
    for b in 0..n {
        for i in 0..hw {
            let at = |c: usize| (b * k + c) * hw + i;
            let m = (0..k).map(|c| z[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|c| (z[at(c)] - m).exp()).sum::<f64>().ln();
            total += lse - z[at(target_at(targets, b, i))];
        }
    }
    Ok(total / (n * hw) as f64)
}

pub fn combined_loss(logits: &Tensor, targets: &[LabelMask], w: LossWeights) -> Result<f64> {
    Ok(w.alpha * dice_loss(logits, targets, DICE_EPS)? + w.beta * cross_entropy(logits, targets)?)
}

impl Tape {
    pub fn dice_loss(&mut self, logits: Var, targets: &[LabelMask], eps: f64) -> Result<Var> {
        let z = self.value(logits).clone();
        let lay = layout(&z, targets)?;
        let p = class_softmax(&z, &lay);
        let (inter, denom) = dice_terms(&p, targets, &lay, eps);
        let value = dice_value(&inter, &denom, eps);
        let targets = targets.to_vec();
        self.record(
            "dice_loss",
            Tensor::scalar(value),
            &[logits],
            Box::new(move |g| {
                let Layout { n, k, hw } = lay;
                let scale = g.item() / k as f64;
                let mut gz = vec![0.0; p.len()];
                let mut dp = vec![0.0; k];
                for b in 0..n {
                    for i in 0..hw {
                        let t = target_at(&targets, b, i);
                        let at = |c: usize| (b * k + c) * hw + i;
                        let mut dot = 0.0;
                        for c in 0..k {
                            let gt = if c == t { 1.0 } else { 0.0 };
                            let d = denom[c];
                            dp[c] = -scale * (2.0 * gt / d - (2.0 * inter[c] + eps) / (d * d));
                            dot += p[at(c)] * dp[c];
                        }
                        for c in 0..k {
                            gz[at(c)] = p[at(c)] * (dp[c] - dot);
                        }
                    }
                }
                vec![Tensor::new(z.shape(), gz).unwrap()]
            }),
        )
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[LabelMask]) -> Result<Var> {
        let z = self.value(logits).clone();
        let value = cross_entropy(&z, targets)?;
        let lay = layout(&z, targets)?;
        let p = class_softmax(&z, &lay);
        let targets = targets.to_vec();
        self.record(
            "cross_entropy",
            Tensor::scalar(value),
            &[logits],
            Box::new(move |g| {
                let Layout { n, k, hw } = lay;
                let scale = g.item() / (n * hw) as f64;
                let mut gz: Vec<f64> = p.iter().map(|v| v * scale).collect();
                for b in 0..n {
                    for i in 0..hw {
                        gz[(b * k + target_at(&targets, b, i)) * hw + i] -= scale;
                    }
                }
                vec![Tensor::new(z.shape(), gz).unwrap()]
            }),
        )
    }

    pub fn combined_loss(&mut self, logits: Var, targets: &[LabelMask], w: LossWeights) -> Result<Var> {
        let dice = self.dice_loss(logits, targets, DICE_EPS)?;
        let ce = self.cross_entropy(logits, targets)?;
        let dice = self.scale(dice, w.alpha)?;
        let ce = self.scale(ce, w.beta)?;
        self.add(dice, ce)
    }
}
