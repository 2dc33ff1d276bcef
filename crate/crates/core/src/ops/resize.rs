//! Bilinear resampling with half-pixel centers and edge clamping.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Source taps for one output coordinate: `(lo, hi, weight_of_hi)`.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bilinear_resize target extents must be >= 1"));
    }
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

fn bilinear_resize_backward(g: &Tensor, in_shape: &[usize]) -> Tensor {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (out_h, out_w) = (g.shape()[2], g.shape()[3]);
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let mut gi = vec![0.0; in_shape.iter().product()];
    for (plane, gp) in gi.chunks_mut(h * w).zip(g.data().chunks(out_h * out_w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = gp[oy * out_w + ox];
                plane[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += v * (1.0 - fy) * fx;
                plane[y1 * w + x0] += v * fy * (1.0 - fx);
                plane[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Tensor::new(in_shape, gi).unwrap()
}

impl Tape {
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let in_shape = self.value(x).shape().to_vec();
        let out = bilinear_resize(self.value(x), out_h, out_w)?;
        self.record(
            "bilinear_resize",
            out,
            &[x],
            Box::new(move |g| vec![bilinear_resize_backward(g, &in_shape)]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::new(&[1, 2, 2, 3], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        assert_eq!(bilinear_resize(&x, 2, 3).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[1, 1, 3, 5], 0.7).unwrap();
        for (h, w) in [(1, 1), (7, 2), (12, 20)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn half_pixel_upsample_of_a_ramp() {
        let x = Tensor::new(&[1, 1, 2, 1], vec![0.0, 1.0]).unwrap();
        let y = bilinear_resize(&x, 4, 1).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_target_rejected() {
        let x = Tensor::ones(&[1, 1, 2, 2]).unwrap();
        assert!(bilinear_resize(&x, 0, 2).is_err());
    }
}
