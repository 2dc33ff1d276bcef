//! Mamba-style block: layer norm, gated selective scan over the row-major
//! pixel sequence, output projection and a residual connection.

use crate::error::{Error, Result};
use crate::layers::{Initializer, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaDims {
    pub channels: usize,
    pub inner: usize,
    pub state: usize,
    pub conv_width: usize,
    /// Rank of the step-size projection.
    pub dt_rank: usize,
}

impl MambaDims {
    /// Inner width `2 * channels` and step rank `ceil(channels / 16)`.
    pub fn new(channels: usize, state: usize, conv_width: usize) -> Result<Self> {
        if channels == 0 || state == 0 || conv_width == 0 {
            return Err(Error::Config(format!(
                "mamba needs positive channels, state and conv width, got {channels}, {state}, {conv_width}"
            )));
        }
        Ok(MambaDims {
            channels,
            inner: 2 * channels,
            state,
            conv_width,
            dt_rank: channels.div_ceil(16),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MambaBlock {
    pub dims: MambaDims,
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub x_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub out_proj: Linear,
}

impl MambaBlock {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, dims: MambaDims) -> Result<Self> {
        let MambaDims {
            channels: c,
            inner: di,
            state: s,
            conv_width: k,
            dt_rank: r,
        } = dims;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), c)?;
        let in_proj = Linear::new(store, init, &format!("{name}.in_proj"), c, 2 * di, false)?;
        let conv_weight = store.add(format!("{name}.conv.weight"), init.normal(&[di, k])?)?;
        let conv_bias = store.add(format!("{name}.conv.bias"), Tensor::zeros(&[di])?)?;
        let x_proj = Linear::new(store, init, &format!("{name}.x_proj"), di, r + 2 * s, false)?;
        let dt_proj = Linear::new(store, init, &format!("{name}.dt_proj"), r, di, true)?;
        // A = -exp(a_log) = -(1..=S) in every row
        let a = (0..di).flat_map(|_| (1..=s).map(|j| (j as f64).ln())).collect();
        let a_log = store.add(format!("{name}.a_log"), Tensor::new(&[di, s], a)?)?;
        let d_skip = store.add(format!("{name}.d_skip"), Tensor::ones(&[di])?)?;
        let out_proj = Linear::new(store, init, &format!("{name}.out_proj"), di, c, false)?;
        Ok(MambaBlock {
            dims,
            norm,
            in_proj,
            conv_weight,
            conv_bias,
            x_proj,
            dt_proj,
            a_log,
            d_skip,
            out_proj,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (n, c, h, w) = tape.value(x).dims4()?;
        let MambaDims {
            inner: di,
            state: s,
            dt_rank: r,
            ..
        } = self.dims;
        if c != self.dims.channels {
            return Err(Error::shape(format!(
                "mamba block built for {} channels, got {c}",
                self.dims.channels
            )));
        }
        let l = h * w;
        let seq = tape.reshape(x, &[n, c, l])?;
        let seq = tape.permute(seq, &[0, 2, 1])?;
        let seq = self.norm.forward(tape, store, seq)?;
        let proj = self.in_proj.forward(tape, store, seq)?;
        let xs = tape.narrow(proj, 2, 0, di)?;
        let z = tape.narrow(proj, 2, di, di)?;

        let cw = tape.param(store, self.conv_weight);
        let cb = tape.param(store, self.conv_bias);
        let xs = tape.causal_conv1d(xs, cw, cb)?;
        let xs = tape.silu(xs)?;

        let sel = self.x_proj.forward(tape, store, xs)?;
        let dt = tape.narrow(sel, 2, 0, r)?;
        let b = tape.narrow(sel, 2, r, s)?;
        let cm = tape.narrow(sel, 2, r + s, s)?;
        let dt = self.dt_proj.forward(tape, store, dt)?;
        let dt = tape.softplus(dt)?;

        let a_log = tape.param(store, self.a_log);
        let a = tape.exp(a_log)?;
        let a = tape.scale(a, -1.0)?;
        let d_skip = tape.param(store, self.d_skip);
        let y = tape.ssm_scan(xs, dt, a, b, cm, d_skip)?;

        let gate = tape.silu(z)?;
        let y = tape.mul(y, gate)?;
        let out = self.out_proj.forward(tape, store, y)?;
        let out = tape.permute(out, &[0, 2, 1])?;
        let out = tape.reshape(out, &[n, c, h, w])?;
        tape.add(out, x)
    }
}
