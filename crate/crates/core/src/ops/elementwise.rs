//! Elementwise arithmetic with same-rank broadcasting, activations and
//! reductions.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{strides_of, Tensor};

/// Elementwise nonlinearity. SiLU is used inside the attention blocks, ReLU
/// in the encoder and upsampling path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Silu,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => x * sigmoid(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    fn op_name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Silu => "silu",
        }
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|x| kind.apply(x))
}

/// Output shape of a same-rank broadcast: each axis must match or be 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "broadcast operands must have equal rank: {a:?} vs {b:?}"
        )));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Strides of `shape` viewed inside `out`, with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    shape
        .iter()
        .zip(out)
        .zip(strides)
        .map(|((&s, &o), st)| if s == 1 && o != 1 { 0 } else { st })
        .collect()
}

/// Visit every output position with the matching offsets into `a` and `b`.
fn for_each_broadcast(out: &[usize], a_strides: &[usize], b_strides: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += a_strides[d];
            ib += b_strides[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= a_strides[d] * out[d];
            ib -= b_strides[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let out = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![0.0; out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::new(&out, data)
}

/// Sum a gradient of broadcast shape `out` back down to `shape`, optionally
/// weighting each term by the other operand.
fn reduce_to(grad: &Tensor, shape: &[usize], weight: Option<(&Tensor, &[usize])>) -> Tensor {
    let out = grad.shape();
    let s_self = broadcast_strides(shape, out);
    let mut acc = vec![0.0; shape.iter().product()];
    let g = grad.data();
    match weight {
        Some((w, w_shape)) => {
            let s_w = broadcast_strides(w_shape, out);
            let wd = w.data();
            for_each_broadcast(out, &s_self, &s_w, |o, i, j| acc[i] += g[o] * wd[j]);
        }
        None => {
            for_each_broadcast(out, &s_self, &s_self, |o, i, _| acc[i] += g[o]);
        }
    }
    Tensor::new(shape, acc).expect("reduced gradient shape")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary(a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary(a, b, |x, y| x * y)
}

/// Softmax over the last axis.
pub fn softmax_last(input: &Tensor) -> Tensor {
    let d = *input.shape().last().unwrap();
    let mut out = input.clone();
    for row in out.data_mut().chunks_mut(d) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let out = add(&ta, &tb)?;
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        self.record(
            "add",
            out,
            &[a, b],
            Box::new(move |g| vec![reduce_to(g, &sa, None), reduce_to(g, &sb, None)]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let out = mul(&ta, &tb)?;
        self.record(
            "mul",
            out,
            &[a, b],
            Box::new(move |g| {
                vec![
                    reduce_to(g, ta.shape(), Some((&tb, tb.shape()))),
                    reduce_to(g, tb.shape(), Some((&ta, ta.shape()))),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.record("scale", out, &[a], Box::new(move |g| vec![g.map(|x| x * factor)]))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        let saved = out.clone();
        self.record(
            "exp",
            out,
            &[a],
            Box::new(move |g| vec![g.zip_map(&saved, |g, y| g * y).unwrap()]),
        )
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a).clone();
        let out = x.map(softplus);
        self.record(
            "softplus",
            out,
            &[a],
            Box::new(move |g| vec![g.zip_map(&x, |g, x| g * sigmoid(x)).unwrap()]),
        )
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let x = self.value(a).clone();
        let out = activation(&x, kind);
        self.record(
            kind.op_name(),
            out,
            &[a],
            Box::new(move |g| vec![g.zip_map(&x, |g, x| g * kind.derivative(x)).unwrap()]),
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Silu)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let out = Tensor::scalar(self.value(a).sum());
        self.record(
            "sum",
            out,
            &[a],
            Box::new(move |g| vec![Tensor::full(&shape, g.item()).unwrap()]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `sum(a * weights)` for a fixed weight tensor of the same shape.
    pub fn weighted_sum(&mut self, a: Var, weights: &Tensor) -> Result<Var> {
        if self.value(a).shape() != weights.shape() {
            return Err(Error::shape(format!(
                "weighted_sum weights {:?} do not match value {:?}",
                weights.shape(),
                self.value(a).shape()
            )));
        }
        let w = self.constant(weights.clone());
        let prod = self.mul(a, w)?;
        self.sum(prod)
    }

    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let out = softmax_last(self.value(a));
        let p = out.clone();
        let d = *p.shape().last().unwrap();
        self.record(
            "softmax",
            out,
            &[a],
            Box::new(move |g| {
                let mut gi = g.clone();
                for (row_g, row_p) in gi.data_mut().chunks_mut(d).zip(p.data().chunks(d)) {
                    let dot: f64 = row_g.iter().zip(row_p).map(|(a, b)| a * b).sum();
                    for (gv, pv) in row_g.iter_mut().zip(row_p) {
                        *gv = pv * (*gv - dot);
                    }
                }
                vec![gi]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        let silu1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((Activation::Silu.apply(1.0) - silu1).abs() < 1e-15);
        assert!((Activation::Silu.apply(1.0) - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_stays_open_interval_for_moderate_inputs() {
        for x in [-30.0, -5.0, 0.0, 5.0, 30.0] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0, "sigmoid({x}) = {s}");
        }
    }

    #[test]
    fn broadcasting_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 1], &[2, 1, 4]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape(&[2, 3], &[3, 3]).is_err());
        assert!(broadcast_shape(&[2, 3], &[2, 3, 1]).is_err());
        let a = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = mul(&a, &b).unwrap();
        assert_eq!(c.data(), &[10.0, 20.0, 30.0, 20.0, 40.0, 60.0]);
    }

    #[test]
    fn broadcast_gradient_sums_over_expanded_axes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let c = tape.mul(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[6.0, 6.0]);
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 100.0]).unwrap();
        let s = softmax_last(&t);
        for row in s.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }
}
