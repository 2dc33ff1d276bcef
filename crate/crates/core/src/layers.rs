//! Parameterized building blocks. Each layer registers its tensors in a
//! [`ParamStore`] under a dotted name prefix and keeps only the handles; the
//! forward pass reads current values from the store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{Activation, Conv2dParams, Mode, RunningStats};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;

/// Seeded source of initial weights.
pub struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid sigma"),
        }
    }

    pub fn normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal.sample(&mut self.rng)).collect();
        Tensor::new(shape, data)
    }
}

pub(crate) fn param_var(tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
    tape.param(store, id)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geometry: Conv2dParams,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geometry: Conv2dParams,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            init.normal(&[out_ch, in_ch / geometry.groups, kernel, kernel])?,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])?)?)
        } else {
            None
        };
        Ok(Conv2d { weight, bias, geometry })
    }

    /// 1x1 convolution with bias.
    pub fn pointwise(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        in_ch: usize,
        out_ch: usize,
    ) -> Result<Self> {
        Conv2d::new(store, init, name, in_ch, out_ch, 1, Conv2dParams::default(), true)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = param_var(tape, store, self.weight);
        let b = self.bias.map(|b| param_var(tape, store, b));
        tape.conv2d(x, w, b, self.geometry)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub name: String,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.weight"), Tensor::ones(&[channels])?)?;
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(&[channels])?)?;
        let stats = RunningStats::new(channels)?;
        store.add_buffer(format!("{name}.running_mean"), stats.mean)?;
        store.add_buffer(format!("{name}.running_var"), stats.var)?;
        Ok(BatchNorm2d {
            gamma,
            beta,
            name: name.to_string(),
        })
    }

    fn stats(&self, store: &ParamStore) -> Result<RunningStats> {
        let get = |suffix: &str| {
            store
                .buffer(&format!("{}.{suffix}", self.name))
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing buffer {}.{suffix}", self.name)))
        };
        Ok(RunningStats {
            mean: get("running_mean")?,
            var: get("running_var")?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let stats = self.stats(store)?;
        let g = param_var(tape, store, self.gamma);
        let b = param_var(tape, store, self.beta);
        tape.batch_norm(x, g, b, &stats, mode, &self.name)
    }
}

/// Convolution, batch norm, activation.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub act: Activation,
}

impl ConvBnAct {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.bn.forward(tape, store, y, mode)?;
        tape.activation(y, self.act)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.weight"), Tensor::ones(&[dim])?)?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])?)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = param_var(tape, store, self.gamma);
        let b = param_var(tape, store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        in_f: usize,
        out_f: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.normal(&[out_f, in_f])?)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_f])?)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = param_var(tape, store, self.weight);
        let b = self.bias.map(|b| param_var(tape, store, b));
        tape.linear(x, w, b)
    }
}
