//! Layout operations: reshape, axis permutation, slicing and concatenation.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{strides_of, Tensor};

pub fn permute(input: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let shape = input.shape();
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape(format!("{axes:?} is not a permutation of {rank} axes")));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides_of(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = input.numel();
    let mut data = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let src = input.data();
    for _ in 0..total {
        data.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, data)
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `len` entries of `axis` starting at `start`.
pub fn narrow(input: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = input.shape();
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(Error::shape(format!(
            "cannot take [{start}, {}) of axis {axis} in shape {shape:?}",
            start + len
        )));
    }
    let (outer, extent, inner) = split_at_axis(shape, axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&input.data()[base..base + len * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Tensor::new(&out_shape, data)
}

pub fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat needs at least one operand"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape(format!("concat axis {axis} out of range for rank {rank}")));
    }
    for t in inputs {
        let ok = t.rank() == rank
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(Error::shape(format!(
                "concat along axis {axis}: {:?} does not match {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let total_axis: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for t in inputs {
            let chunk = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total_axis;
    Tensor::new(&out_shape, data)
}

/// Channel concatenation of two `[N, C, H, W]` tensors.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.dims4()?;
    b.dims4()?;
    concat(&[a, b], 1)
}

fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

impl Tape {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let in_shape = self.value(a).shape().to_vec();
        let out = self.value(a).reshape(shape)?;
        self.record(
            "reshape",
            out,
            &[a],
            Box::new(move |g| vec![g.reshape(&in_shape).unwrap()]),
        )
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = permute(self.value(a), axes)?;
        let inv = inverse_permutation(axes);
        self.record("permute", out, &[a], Box::new(move |g| vec![permute(g, &inv).unwrap()]))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let in_shape = self.value(a).shape().to_vec();
        let out = narrow(self.value(a), axis, start, len)?;
        self.record(
            "narrow",
            out,
            &[a],
            Box::new(move |g| {
                let (outer, extent, inner) = split_at_axis(&in_shape, axis);
                let mut gi = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    gi[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![Tensor::new(&in_shape, gi).unwrap()]
            }),
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = concat(&tensors, axis)?;
        let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        self.record(
            "concat",
            out,
            parts,
            Box::new(move |g| {
                let mut start = 0;
                extents
                    .iter()
                    .map(|&len| {
                        let part = narrow(g, axis, start, len).unwrap();
                        start += len;
                        part
                    })
                    .collect()
            }),
        )
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).dims4()?;
        self.value(b).dims4()?;
        self.concat(&[a, b], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::new(shape, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn permute_transposes() {
        let t = seq(&[2, 3]);
        let p = permute(&t, &[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(permute(&t, &[0, 0]).is_err());
    }

    #[test]
    fn permute_inverse_round_trips() {
        let t = seq(&[2, 3, 4, 5]);
        let axes = [0, 2, 3, 1];
        let back = permute(&permute(&t, &axes).unwrap(), &inverse_permutation(&axes)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn concat_then_narrow_recovers_parts() {
        let a = seq(&[1, 3, 2, 2]);
        let b = seq(&[1, 3, 2, 2]).map(|x| -x);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 6, 2, 2]);
        assert_eq!(narrow(&c, 1, 0, 3).unwrap(), a);
        assert_eq!(narrow(&c, 1, 3, 3).unwrap(), b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = seq(&[1, 1, 2, 2]);
        let b = seq(&[1, 1, 2, 3]);
        assert!(concat_channels(&a, &b).is_err());
        let c = seq(&[2, 1, 2, 2]);
        assert!(concat_channels(&a, &c).is_err());
    }

    #[test]
    fn concat_gradient_of_sum_is_all_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(seq(&[1, 2, 2, 2]));
        let b = tape.leaf(seq(&[1, 1, 2, 2]));
        let c = tape.concat_channels(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(a).unwrap().data().iter().all(|&x| x == 1.0));
        assert!(g.get(b).unwrap().data().iter().all(|&x| x == 1.0));
    }
}
