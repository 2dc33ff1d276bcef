//! Gradient checks for every block of the pipeline on small random
//! instances. Used by the `gradcheck` command and the acceptance tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, ComprehensiveAttention, CoordAttention, MambaBlock, MambaDims};
use crate::error::Result;
use crate::gradcheck::{GradCheckReport, GradChecker};
use crate::io::LabelMask;
use crate::layers::Initializer;
use crate::loss::{LossWeights, DICE_EPS};
use crate::network::{Ablation, Modality, Network, NetworkConfig};
use crate::ops::{Conv2dParams, Mode, RunningStats};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Tolerance for network blocks.
pub const BLOCK_TOLERANCE: f64 = 1e-4;
/// Tolerance for the losses on their own.
pub const LOSS_TOLERANCE: f64 = 1e-6;

/// Names of every recorded op, the valid targets of a sabotage run.
pub const KNOWN_OPS: &[&str] = &[
    "add",
    "avg_pool_x",
    "avg_pool_y",
    "batch_norm",
    "bilinear_resize",
    "causal_conv1d",
    "concat",
    "conv2d",
    "cross_entropy",
    "dice_loss",
    "exp",
    "layer_norm",
    "linear",
    "mul",
    "narrow",
    "permute",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "silu",
    "softmax",
    "softplus",
    "ssm_scan",
    "sum",
];

#[derive(Debug, Clone)]
pub struct BlockResult {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl BlockResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance
    }
}

struct Fixture {
    rng: ChaCha8Rng,
}

impl Fixture {
    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
        Tensor::uniform(shape, lo, hi, &mut self.rng)
    }

    /// Overwrite every parameter with uniform values of unit output
    /// variance: weights use the bound `sqrt(3 / fan_in)`, vectors `[-1, 1]`.
    /// Keeps activations away from saturation so no gradient sinks below the
    /// finite-difference noise floor.
    fn randomize(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let shape = store.get(id).value.shape().to_vec();
            let bound = if shape.len() >= 2 {
                (3.0 * shape[0] as f64 / shape.iter().product::<usize>() as f64).sqrt()
            } else {
                1.0
            };
            store.get_mut(id).value = self.uniform(&shape, -bound, bound)?;
        }
        Ok(())
    }

    fn mask(&mut self, h: usize, w: usize, k: usize) -> Result<LabelMask> {
        use rand::Rng;
        let data = (0..h * w).map(|_| self.rng.random_range(0..k) as u8).collect();
        LabelMask::new(h, w, data)
    }
}

/// `sum(r * y)` for a fixed random `r`, so no output symmetry hides errors.
fn project(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    tape.weighted_sum(y, r)
}

fn check<F>(checker: &GradChecker, store: &mut ParamStore, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    checker.check(store, f)
}

/// Run every block check. Batch norm runs in eval mode except in the
/// dedicated train-mode check.
pub fn run_suite(checker: &GradChecker, seed: u64) -> Result<Vec<BlockResult>> {
    let mut fx = Fixture {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut out = Vec::new();
    let mut push = |name, report, tolerance| {
        out.push(BlockResult {
            name,
            report,
            tolerance,
        })
    };

    // grouped, strided, padded convolution
    {
        let mut s = ParamStore::new();
        let x = s.add("x", fx.uniform(&[2, 4, 5, 5], -2.0, 2.0)?)?;
        let w = s.add("weight", fx.uniform(&[6, 2, 3, 3], -1.0, 1.0)?)?;
        let b = s.add("bias", fx.uniform(&[6], -1.0, 1.0)?)?;
        let r = fx.uniform(&[2, 6, 3, 3], -1.0, 1.0)?;
        let rep = check(checker, &mut s, |t, s| {
            let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
            let y = t.conv2d(x, w, Some(b), Conv2dParams::new(2, 1, 2))?;
            project(t, y, &r)
        })?;
        push("conv2d", rep, BLOCK_TOLERANCE);
    }

    for (name, mode) in [("batch_norm_eval", Mode::Eval), ("batch_norm_train", Mode::Train)] {
        let mut s = ParamStore::new();
        let x = s.add("x", fx.uniform(&[2, 3, 3, 3], -2.0, 2.0)?)?;
        let g = s.add("gamma", fx.uniform(&[3], 0.5, 1.5)?)?;
        let b = s.add("beta", fx.uniform(&[3], -1.0, 1.0)?)?;
        let stats = RunningStats {
            mean: fx.uniform(&[3], -0.5, 0.5)?,
            var: fx.uniform(&[3], 0.5, 1.5)?,
        };
        let r = fx.uniform(&[2, 3, 3, 3], -1.0, 1.0)?;
        let rep = check(checker, &mut s, |t, s| {
            let (x, g, b) = (t.param(s, x), t.param(s, g), t.param(s, b));
            let y = t.batch_norm(x, g, b, &stats, mode, "bn")?;
            project(t, y, &r)
        })?;
        push(name, rep, BLOCK_TOLERANCE);
    }

    {
        let mut s = ParamStore::new();
        let x = s.add("x", fx.uniform(&[2, 3, 5], -2.0, 2.0)?)?;
        let g = s.add("gamma", fx.uniform(&[5], 0.5, 1.5)?)?;
        let b = s.add("beta", fx.uniform(&[5], -1.0, 1.0)?)?;
        let r = fx.uniform(&[2, 3, 5], -1.0, 1.0)?;
        let rep = check(checker, &mut s, |t, s| {
            let (x, g, b) = (t.param(s, x), t.param(s, g), t.param(s, b));
            let y = t.layer_norm(x, g, b)?;
            project(t, y, &r)
        })?;
        push("layer_norm", rep, BLOCK_TOLERANCE);
    }

    // activations, pooling, resize and channel concat
    {
        let mut s = ParamStore::new();
        let x = s.add("x", fx.uniform(&[1, 2, 4, 3], -2.0, 2.0)?)?;
        let rs: Vec<Tensor> = [&[1, 4, 4, 3][..], &[1, 4, 4, 1], &[1, 4, 1, 3], &[1, 4, 5, 7]]
            .iter()
            .map(|sh| fx.uniform(sh, -1.0, 1.0))
            .collect::<Result<_>>()?;
        let rep = check(checker, &mut s, |t, s| {
            let x = t.param(s, x);
            let a = t.sigmoid(x)?;
            let b = t.silu(x)?;
            let c = t.relu(x)?;
            let d = t.softplus(x)?;
            let ab = t.concat_channels(a, b)?;
            let cd = t.concat_channels(c, d)?;
            let y = t.mul(ab, cd)?;
            let e = t.exp(y)?;
            let px = t.avg_pool_x(e)?;
            let py = t.avg_pool_y(e)?;
            let up = t.bilinear_resize(e, 5, 7)?;
            let terms = [
                project(t, e, &rs[0])?,
                project(t, px, &rs[1])?,
                project(t, py, &rs[2])?,
                project(t, up, &rs[3])?,
            ];
            let mut acc = terms[0];
            for &v in &terms[1..] {
                acc = t.add(acc, v)?;
            }
            Ok(acc)
        })?;
        push("elementwise_pool_resize", rep, BLOCK_TOLERANCE);
    }

    {
        let mut s = ParamStore::new();
        let mut init = Initializer::new(seed);
        let block = CoordAttention::new(&mut s, &mut init, "coord", 4, 2)?;
        fx.randomize(&mut s)?;
        let x = s.add("x", fx.uniform(&[2, 4, 3, 5], -2.0, 2.0)?)?;
        let r = fx.uniform(&[2, 4, 3, 5], -1.0, 1.0)?;
        let rep = check(checker, &mut s, |t, s| {
            let xv = t.param(s, x);
            let y = block.forward(t, s, xv, Mode::Eval)?;
            project(t, y, &r)
        })?;
        push("coord_attention", rep, BLOCK_TOLERANCE);
    }

    {
        let mut s = ParamStore::new();
        let u = s.add("u", fx.uniform(&[2, 5, 3], -2.0, 2.0)?)?;
        let delta = s.add("delta", fx.uniform(&[2, 5, 3], 0.1, 1.0)?)?;
        let a = s.add("a", fx.uniform(&[3, 4], -2.0, -0.1)?)?;
        let b = s.add("b", fx.uniform(&[2, 5, 4], -1.0, 1.0)?)?;
        let c = s.add("c", fx.uniform(&[2, 5, 4], -1.0, 1.0)?)?;
        let d = s.add("d_skip", fx.uniform(&[3], -1.0, 1.0)?)?;
        let r = fx.uniform(&[2, 5, 3], -1.0, 1.0)?;
        let rep = check(checker, &mut s, |t, s| {
            let vars = [u, delta, a, b, c, d].map(|id| t.param(s, id));
            let y = t.ssm_scan(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])?;
            project(t, y, &r)
        })?;
        push("ssm_scan", rep, BLOCK_TOLERANCE);
    }

    {
        let mut s = ParamStore::new();
        let mut init = Initializer::new(seed);
        let block = MambaBlock::new(&mut s, &mut init, "mamba", MambaDims::new(4, 3, 3)?)?;
        fx.randomize(&mut s)?;
        let x = s.add("x", fx.uniform(&[1, 4, 3, 3], -2.0, 2.0)?)?;
        let r = fx.uniform(&[1, 4, 3, 3], -1.0, 1.0)?;
        let rep = check(checker, &mut s, |t, s| {
            let xv = t.param(s, x);
            let y = block.forward(t, s, xv)?;
            project(t, y, &r)
        })?;
        push("mamba_block", rep, BLOCK_TOLERANCE);
    }

    {
        let mut s = ParamStore::new();
        let mut init = Initializer::new(seed);
        let cfg = AttentionConfig {
            channels: 4,
            use_coord: true,
            use_mamba: true,
            use_weighted_fusion: true,
            reduction: 2,
            state: 2,
            conv_width: 3,
        };
        let block = ComprehensiveAttention::new(&mut s, &mut init, "cab", cfg)?;
        fx.randomize(&mut s)?;
        let x = s.add("x", fx.uniform(&[1, 4, 4, 4], -2.0, 2.0)?)?;
        let r = fx.uniform(&[1, 4, 4, 4], -1.0, 1.0)?;
        let rep = check(checker, &mut s, |t, s| {
            let xv = t.param(s, x);
            let y = block.forward(t, s, xv, Mode::Eval)?;
            project(t, y, &r)
        })?;
        push("weighted_fusion", rep, BLOCK_TOLERANCE);
    }

    {
        let targets = vec![fx.mask(4, 4, 3)?, fx.mask(4, 4, 3)?];
        let logits = fx.uniform(&[2, 3, 4, 4], -2.0, 2.0)?;
        let weights = LossWeights::new(0.7, 1.3)?;
        for name in ["dice_loss", "cross_entropy", "combined_loss"] {
            let mut s = ParamStore::new();
            let z = s.add("logits", logits.clone())?;
            let rep = check(checker, &mut s, |t, s| {
                let zv = t.param(s, z);
                match name {
                    "dice_loss" => t.dice_loss(zv, &targets, DICE_EPS),
                    "cross_entropy" => t.cross_entropy(zv, &targets),
                    _ => t.combined_loss(zv, &targets, weights),
                }
            })?;
            push(name, rep, LOSS_TOLERANCE);
        }
    }

    {
        let cfg = NetworkConfig::new(Modality::Fused, 3, Ablation::All, seed);
        let (net, mut s) = Network::build(cfg)?;
        fx.randomize(&mut s)?;
        let x = fx.uniform(&[1, 6, 8, 8], 0.0, 1.0)?;
        net.calibrate_batch_norm(&mut s, &x)?;
        let target = vec![fx.mask(8, 8, 3)?];
        let rep = check(checker, &mut s, |t, s| {
            let xv = t.constant(x.clone());
            let y = net.forward(t, s, xv, Mode::Eval)?;
            t.combined_loss(y, &target, LossWeights::default())
        })?;
        push("network", rep, BLOCK_TOLERANCE);
    }
    Ok(out)
}
