//! Directional-pooling (coordinate) attention.

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Initializer};
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct CoordAttention {
    pub shared: Conv2d,
    pub bn: BatchNorm2d,
    pub conv_x: Conv2d,
    pub conv_y: Conv2d,
    pub channels: usize,
    pub reduced: usize,
}

impl CoordAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "coordinate attention needs channels ({channels}) divisible by the reduction ratio ({reduction})"
            )));
        }
        let reduced = channels / reduction;
        Ok(CoordAttention {
            shared: Conv2d::pointwise(store, init, &format!("{name}.shared"), channels, reduced)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), reduced)?,
            conv_x: Conv2d::pointwise(store, init, &format!("{name}.conv_x"), reduced, channels)?,
            conv_y: Conv2d::pointwise(store, init, &format!("{name}.conv_y"), reduced, channels)?,
            channels,
            reduced,
        })
    }

    /// Pool along W and H, run both through the shared bottleneck as one
    /// `[N, C, H + W, 1]` map, then gate `x` with the two sigmoid maps.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!(
                "coordinate attention built for {} channels, got {c}",
                self.channels
            )));
        }
        let px = tape.avg_pool_x(x)?;
        let py = tape.avg_pool_y(x)?;
        let py = tape.permute(py, &[0, 1, 3, 2])?;
        let joint = tape.concat(&[px, py], 2)?;
        let joint = self.shared.forward(tape, store, joint)?;
        let joint = self.bn.forward(tape, store, joint, mode)?;
        let joint = tape.silu(joint)?;
        let fx = tape.narrow(joint, 2, 0, h)?;
        let fy = tape.narrow(joint, 2, h, w)?;
        let fy = tape.permute(fy, &[0, 1, 3, 2])?;
        let ax = self.conv_x.forward(tape, store, fx)?;
        let ax = tape.sigmoid(ax)?;
        let ay = self.conv_y.forward(tape, store, fy)?;
        let ay = tape.sigmoid(ay)?;
        let out = tape.mul(x, ax)?;
        tape.mul(out, ay)
    }
}
