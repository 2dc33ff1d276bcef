//! Encoder stub, decoder with the comprehensive attention block, and the
//! classifier head.

use crate::attention::ComprehensiveAttention;
use crate::error::{Error, Result};
use crate::io::{Checkpoint, LabelMask};
use crate::layers::{BatchNorm2d, Conv2d, ConvBnAct, Initializer};
use crate::metrics::argmax_masks;
use crate::network::config::NetworkConfig;
use crate::ops::{Activation, Conv2dParams, Mode};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub enc1: ConvBnAct,
    pub enc2: ConvBnAct,
    pub up: ConvBnAct,
    pub merge: Conv2d,
    pub attention: ComprehensiveAttention,
    pub head: Conv2d,
}

fn conv_bn_relu(
    store: &mut ParamStore,
    init: &mut Initializer,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
) -> Result<ConvBnAct> {
    Ok(ConvBnAct {
        conv: Conv2d::new(
            store,
            init,
            &format!("{name}.conv"),
            in_ch,
            out_ch,
            3,
            Conv2dParams::new(stride, 1, 1),
            false,
        )?,
        bn: BatchNorm2d::new(store, &format!("{name}.bn"), out_ch)?,
        act: Activation::Relu,
    })
}

impl Network {
    /// Build the network and a freshly initialized parameter store.
    pub fn build(config: NetworkConfig) -> Result<(Network, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(config.seed);
        let [w0, w1] = config.widths;
        let s = &mut store;
        let i = &mut init;
        let enc1 = conv_bn_relu(s, i, "encoder.stage1", config.in_channels(), w0, 2)?;
        let enc2 = conv_bn_relu(s, i, "encoder.stage2", w0, w1, 2)?;
        let up = conv_bn_relu(s, i, "decoder.up", w1, w0, 1)?;
        let merge = Conv2d::pointwise(s, i, "decoder.merge", 2 * w0, w0)?;
        let attention = ComprehensiveAttention::new(s, i, "decoder.cab", config.attention())?;
        let head = Conv2d::pointwise(s, i, "head", w0, config.num_classes)?;
        Ok((
            Network {
                config,
                enc1,
                enc2,
                up,
                merge,
                attention,
                head,
            },
            store,
        ))
    }

    /// Rebuild a network from a checkpoint. If `expected` is given the
    /// stored configuration must equal it.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&NetworkConfig>) -> Result<(Network, ParamStore)> {
        let config: NetworkConfig = ckpt
            .config
            .parse()
            .map_err(|e| Error::Mismatch(format!("checkpoint config unreadable: {e}")))?;
        if let Some(exp) = expected {
            if *exp != config {
                return Err(Error::Mismatch(format!(
                    "checkpoint config '{config}' does not match requested '{exp}'"
                )));
            }
        }
        let (net, mut store) = Network::build(config)?;
        ckpt.restore_into(&mut store)?;
        Ok((net, store))
    }

    pub fn checkpoint(&self, store: &ParamStore) -> Checkpoint {
        Checkpoint::from_store(&self.config.to_string(), store)
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels() {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels()
            )));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!("input {h}x{w} is not divisible by 4")));
        }
        Ok(())
    }

    /// Logits `[N, K, H, W]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let (_, _, h, w) = tape.value(x).dims4()?;
        tape.push_scope("encoder");
        let feats = self
            .enc1
            .forward(tape, store, x, mode)
            .and_then(|f1| Ok((f1, self.enc2.forward(tape, store, f1, mode)?)));
        tape.pop_scope();
        let (f1, f2) = feats?;
        tape.push_scope("decoder");
        let y = self.decode(tape, store, f1, f2, h, w, mode);
        tape.pop_scope();
        let y = y?;
        tape.push_scope("head");
        let out = self.head.forward(tape, store, y);
        tape.pop_scope();
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        f1: Var,
        f2: Var,
        h: usize,
        w: usize,
        mode: Mode,
    ) -> Result<Var> {
        let up = tape.bilinear_resize(f2, h / 2, w / 2)?;
        let up = self.up.forward(tape, store, up, mode)?;
        let joint = tape.concat_channels(up, f1)?;
        let joint = self.merge.forward(tape, store, joint)?;
        let refined = self.attention.forward(tape, store, joint, mode)?;
        tape.bilinear_resize(refined, h, w)
    }

    /// Set every running statistic to the batch statistics of `x`.
    pub fn calibrate_batch_norm(&self, store: &mut ParamStore, x: &Tensor) -> Result<()> {
        let mut tape = Tape::new();
        tape.set_bn_momentum(1.0);
        let xv = tape.constant(x.clone());
        self.forward(&mut tape, store, xv, Mode::Train)?;
        store.apply_buffer_updates(tape.take_buffer_updates())
    }

    /// Eval-mode logits for a plain tensor.
    pub fn logits(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, store, xv, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }

    /// Eval-mode predicted masks.
    pub fn predict(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<LabelMask>> {
        argmax_masks(&self.logits(store, x)?)
    }
}

pub fn parameter_count(store: &ParamStore) -> usize {
    store.num_scalars()
}
