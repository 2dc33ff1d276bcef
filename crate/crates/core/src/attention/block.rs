//! The comprehensive attention block: coordinate-attention and Mamba paths,
//! per-path channel reduction, softmax-weighted fusion, then batch norm and
//! SiLU.

use crate::attention::coord::CoordAttention;
use crate::attention::mamba::{MambaBlock, MambaDims};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Initializer};
use crate::ops::{softmax_last, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub channels: usize,
    pub use_coord: bool,
    pub use_mamba: bool,
    pub use_weighted_fusion: bool,
    pub reduction: usize,
    pub state: usize,
    pub conv_width: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_weighted_fusion && !(self.use_coord || self.use_mamba) {
            return Err(Error::Config(
                "weighted fusion needs at least one attention path".into(),
            ));
        }
        Ok(())
    }
}

/// Softmax of the raw fusion scalars restricted to the enabled paths, in
/// path order (coordinate first).
pub fn effective_weights(raw: &[f64; 2], enabled: [bool; 2]) -> Vec<f64> {
    let picked: Vec<f64> = raw.iter().zip(enabled).filter(|(_, e)| *e).map(|(r, _)| *r).collect();
    if picked.is_empty() {
        return picked;
    }
    let n = picked.len();
    softmax_last(&Tensor::new(&[n], picked).unwrap()).into_data()
}

#[derive(Debug, Clone)]
pub struct ComprehensiveAttention {
    pub config: AttentionConfig,
    pub coord: Option<CoordAttention>,
    pub mamba: Option<MambaBlock>,
    /// Channel-reduction convs of the enabled paths, coordinate path first.
    pub reduce: [Option<Conv2d>; 2],
    /// Raw fusion scalars `[w_conv_raw, w_mamba_raw]`.
    pub fusion: Option<ParamId>,
    pub norm: BatchNorm2d,
    pub scope: String,
}

impl ComprehensiveAttention {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let coord = if config.use_coord {
            Some(CoordAttention::new(
                store,
                init,
                &format!("{name}.coord"),
                c,
                config.reduction,
            )?)
        } else {
            None
        };
        let mamba = if config.use_mamba {
            let dims = MambaDims::new(c, config.state, config.conv_width)?;
            Some(MambaBlock::new(store, init, &format!("{name}.mamba"), dims)?)
        } else {
            None
        };
        let mut reduce = [None, None];
        for (slot, (on, path)) in reduce
            .iter_mut()
            .zip([(config.use_coord, "coord"), (config.use_mamba, "mamba")])
        {
            if on {
                *slot = Some(Conv2d::pointwise(store, init, &format!("{name}.reduce_{path}"), c, c)?);
            }
        }
        let fusion = if config.use_weighted_fusion {
            Some(store.add(format!("{name}.fusion.raw"), Tensor::zeros(&[2])?)?)
        } else {
            None
        };
        let norm = BatchNorm2d::new(store, &format!("{name}.norm"), c)?;
        Ok(ComprehensiveAttention {
            config,
            coord,
            mamba,
            reduce,
            fusion,
            norm,
            scope: name.rsplit('.').next().unwrap_or(name).to_string(),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        tape.push_scope(&self.scope);
        let out = self.forward_inner(tape, store, x, mode);
        tape.pop_scope();
        out
    }

    fn forward_inner(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let mut paths = Vec::new();
        if let Some(coord) = &self.coord {
            tape.push_scope("coord");
            let y = coord.forward(tape, store, x, mode);
            tape.pop_scope();
            paths.push((0, y?));
        }
        if let Some(mamba) = &self.mamba {
            tape.push_scope("mamba");
            let y = mamba.forward(tape, store, x);
            tape.pop_scope();
            paths.push((1, y?));
        }
        let fused = if paths.is_empty() {
            x
        } else {
            tape.push_scope("fusion");
            let y = self.fuse(tape, store, &paths);
            tape.pop_scope();
            y?
        };
        tape.push_scope("norm");
        let y = self.norm.forward(tape, store, fused, mode).and_then(|y| tape.silu(y));
        tape.pop_scope();
        y
    }

    /// Reduce every enabled path, then combine with the softmax weights (or
    /// equal fixed weights when weighted fusion is off).
    fn fuse(&self, tape: &mut Tape, store: &ParamStore, paths: &[(usize, Var)]) -> Result<Var> {
        let weights = match self.fusion {
            Some(raw_id) => {
                let raw = tape.param(store, raw_id);
                let logits = if paths.len() == 2 {
                    raw
                } else {
                    tape.narrow(raw, 0, paths[0].0, 1)?
                };
                Some(tape.softmax_last(logits)?)
            }
            None => None,
        };
        let mut acc: Option<Var> = None;
        for (slot, &(path, y)) in paths.iter().enumerate() {
            let conv = self.reduce[path]
                .as_ref()
                .expect("reduction conv exists for every enabled path");
            let mut y = conv.forward(tape, store, y)?;
            if let Some(weights) = weights {
                let w = tape.narrow(weights, 0, slot, 1)?;
                let w = tape.reshape(w, &[1, 1, 1, 1])?;
                y = tape.mul(y, w)?;
            } else if paths.len() > 1 {
                y = tape.scale(y, 1.0 / paths.len() as f64)?;
            }
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(a, y)?,
            });
        }
        Ok(acc.expect("at least one path"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for raw in [[0.0, 0.0], [3.0, -2.0], [-50.0, 40.0]] {
            let w = effective_weights(&raw, [true, true]);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(w.iter().all(|&v| v > 0.0));
        }
        assert_eq!(effective_weights(&[0.0, 0.0], [true, true]), vec![0.5, 0.5]);
        assert_eq!(effective_weights(&[7.0, 1.0], [false, true]), vec![1.0]);
    }

    #[test]
    fn wf_without_paths_is_rejected() {
        let cfg = AttentionConfig {
            channels: 4,
            use_coord: false,
            use_mamba: false,
            use_weighted_fusion: true,
            reduction: 2,
            state: 2,
            conv_width: 3,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
