//! Input preparation, AdamW training with polynomial decay, and evaluation.

use crate::error::{Error, Result};
use crate::fusion::{fit_pca, fuse, project_hyper3};
use crate::io::{HyperCube, LabelMask, Sample};
use crate::loss::LossWeights;
use crate::metrics::{ConfusionMatrix, SegmentationReport};
use crate::network::config::Modality;
use crate::network::model::Network;
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Network input for one sample under `modality`.
pub fn prepare_input(sample: &Sample, modality: Modality) -> Result<Tensor> {
    model_input(modality, Some(&sample.rgb), Some(&sample.cube))
}

/// Network input from whichever sources `modality` needs.
pub fn model_input(modality: Modality, rgb: Option<&Tensor>, cube: Option<&HyperCube>) -> Result<Tensor> {
    let need_rgb = || rgb.ok_or_else(|| Error::Config(format!("{} input needs an RGB image", modality.name())));
    let need_cube = || cube.ok_or_else(|| Error::Config(format!("{} input needs a cube", modality.name())));
    match modality {
        Modality::Rgb => Ok(need_rgb()?.clone()),
        Modality::Hyper3 => {
            let cube = need_cube()?;
            project_hyper3(cube, &fit_pca(cube)?)
        }
        Modality::Fused => {
            let cube = need_cube()?;
            let h3 = project_hyper3(cube, &fit_pca(cube)?)?;
            fuse(need_rgb()?, &h3)
        }
        Modality::Multispectral => {
            let cube = need_cube()?;
            if cube.bands() != modality.in_channels() {
                return Err(Error::Data(format!(
                    "multispectral input needs {} bands, cube has {}",
                    modality.in_channels(),
                    cube.bands()
                )));
            }
            Ok(cube.to_tensor())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub decay_power: f64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
            iterations: 300,
            decay_power: 0.9,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0 && self.decay_power >= 0.0) {
            return Err(Error::Config(
                "eps must be > 0, weight decay and decay power >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at step `t`: `lr * (1 - t / T)^power`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let frac = 1.0 - t as f64 / self.iterations.max(1) as f64;
        self.learning_rate * frac.max(0.0).powf(self.decay_power)
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u32,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Result<Self> {
        let zeros = || -> Result<Vec<Tensor>> { store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect() };
        Ok(AdamW {
            m: zeros()?,
            v: zeros()?,
            step: 0,
        })
    }

    pub fn update(&mut self, store: &mut ParamStore, lr: f64, tc: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = tc.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (x, g)) in p.value.data_mut().iter_mut().zip(p.gradient.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *x -= lr * (mhat / (vhat.sqrt() + tc.eps) + tc.weight_decay * *x);
            }
        }
    }
}

/// One example: network input and its target mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub mask: LabelMask,
}

pub fn prepare_examples(samples: &[Sample], modality: Modality) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            Ok(Example {
                input: prepare_input(s, modality)?,
                mask: s.mask.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Training loss before the update of each step.
    pub losses: Vec<f64>,
}

/// Per-image steps in fixed order: step `t` uses example `t % len`.
pub fn train_toy(net: &Network, store: &mut ParamStore, data: &[Example], tc: &TrainConfig) -> Result<TrainHistory> {
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training needs at least one example".into()));
    }
    let mut opt = AdamW::new(store)?;
    let mut losses = Vec::with_capacity(tc.iterations);
    let at_step = |t: usize, e: Error| match e {
        Error::Numerical(msg) => Error::Numerical(format!("step {t}: {msg}")),
        other => other,
    };
    for t in 0..tc.iterations {
        let ex = &data[t % data.len()];
        let mut tape = Tape::new();
        let x = tape.constant(ex.input.clone());
        let logits = net
            .forward(&mut tape, store, x, Mode::Train)
            .map_err(|e| at_step(t, e))?;
        let loss = tape
            .combined_loss(logits, std::slice::from_ref(&ex.mask), tc.loss)
            .map_err(|e| at_step(t, e))?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("step {t}: loss is not finite")));
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        store.zero_grad();
        tape.accumulate_param_grads(&grads, store);
        store.apply_buffer_updates(tape.take_buffer_updates())?;
        opt.update(store, tc.lr_at(t), tc);
    }
    Ok(TrainHistory { losses })
}

/// Eval-mode predictions pooled into one confusion matrix.
pub fn evaluate_examples(
    net: &Network,
    store: &ParamStore,
    data: &[Example],
) -> Result<(SegmentationReport, Vec<LabelMask>)> {
    let mut cm = ConfusionMatrix::new(net.config.num_classes);
    let mut preds = Vec::with_capacity(data.len());
    for ex in data {
        let pred = net.predict(store, &ex.input)?.remove(0);
        cm.add(&pred, &ex.mask)?;
        preds.push(pred);
    }
    Ok((cm.report(), preds))
}
