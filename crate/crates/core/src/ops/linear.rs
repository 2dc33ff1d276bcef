use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `y = x W^T + b` applied to the last axis: `[..., in] x [out, in] -> [..., out]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (out_f, in_f) = match weight.shape() {
        &[o, i] => (o, i),
        s => return Err(Error::shape(format!("linear weight must be [out, in], got {s:?}"))),
    };
    if *input.shape().last().unwrap() != in_f {
        return Err(Error::shape(format!(
            "linear expects {in_f} input features, got shape {:?}",
            input.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [out_f] {
            return Err(Error::shape(format!("linear bias {:?}, expected [{out_f}]", b.shape())));
        }
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(input.numel() / in_f * out_f);
    for row in input.data().chunks(in_f) {
        for o in 0..out_f {
            let wr = &w[o * in_f..(o + 1) * in_f];
            let mut acc = bias.map_or(0.0, |b| b.data()[o]);
            acc += row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            out.push(acc);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = out_f;
    Tensor::new(&shape, out)
}

impl Tape {
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xi = self.value(x).clone();
        let wi = self.value(weight).clone();
        let out = linear(&xi, &wi, bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        self.record(
            "linear",
            out,
            &inputs,
            Box::new(move |g| {
                let (out_f, in_f) = (wi.shape()[0], wi.shape()[1]);
                let w = wi.data();
                let mut gx = vec![0.0; xi.numel()];
                let mut gw = vec![0.0; wi.numel()];
                let mut gb = vec![0.0; out_f];
                for ((xr, gxr), gr) in xi
                    .data()
                    .chunks(in_f)
                    .zip(gx.chunks_mut(in_f))
                    .zip(g.data().chunks(out_f))
                {
                    for o in 0..out_f {
                        let go = gr[o];
                        gb[o] += go;
                        for i in 0..in_f {
                            gxr[i] += go * w[o * in_f + i];
                            gw[o * in_f + i] += go * xr[i];
                        }
                    }
                }
                let mut grads = vec![
                    Tensor::new(xi.shape(), gx).unwrap(),
                    Tensor::new(wi.shape(), gw).unwrap(),
                ];
                if has_bias {
                    grads.push(Tensor::new(&[out_f], gb).unwrap());
                }
                grads
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_product() {
        let x = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(&[3], vec![0.0, 0.0, 10.0]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), &[1.0, 2.0, 13.0, 3.0, 4.0, 17.0]);
        assert!(linear(&x, &b.reshape(&[1, 3]).unwrap(), None).is_err());
    }
}
