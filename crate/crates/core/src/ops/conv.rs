//! 2-D cross-correlation with zero padding and channel groups, and the causal
//! depthwise 1-D convolution used in front of the state-space scan.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dParams {
            stride,
            padding,
            groups,
        }
    }
}

struct ConvGeom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    cig: usize,
    cog: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn out_extent(len: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < k {
        return Err(Error::shape(format!(
            "conv2d {axis}: kernel {k} with stride {stride} does not fit {len} + 2*{pad}"
        )));
    }
    // trailing rows the last window cannot reach are dropped
    Ok((padded - k) / stride + 1)
}

fn geometry(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, p: Conv2dParams) -> Result<ConvGeom> {
    let (n, ci, h, w) = input.dims4()?;
    let (co, cig, kh, kw) = weight.dims4()?;
    let g = p.groups;
    if g == 0 || ci % g != 0 || co % g != 0 {
        return Err(Error::shape(format!(
            "conv2d groups={g} must divide input channels {ci} and output channels {co}"
        )));
    }
    if cig != ci / g {
        return Err(Error::shape(format!(
            "conv2d weight expects {cig} input channels per group, input provides {}",
            ci / g
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(Error::shape(format!(
                "conv2d bias shape {:?}, expected [{co}]",
                b.shape()
            )));
        }
    }
    let oh = out_extent(h, kh, p.stride, p.padding, "height")?;
    let ow = out_extent(w, kw, p.stride, p.padding, "width")?;
    Ok(ConvGeom {
        n,
        ci,
        h,
        w,
        co,
        cig,
        cog: co / g,
        kh,
        kw,
        oh,
        ow,
        stride: p.stride,
        pad: p.padding,
    })
}

/// Visit every (output, input, weight) index triple that contributes a product.
fn for_each_tap(gm: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    for n in 0..gm.n {
        for oc in 0..gm.co {
            let group = oc / gm.cog;
            for oy in 0..gm.oh {
                for ox in 0..gm.ow {
                    let o_idx = ((n * gm.co + oc) * gm.oh + oy) * gm.ow + ox;
                    for icg in 0..gm.cig {
                        let ic = group * gm.cig + icg;
                        for ky in 0..gm.kh {
                            let iy = (oy * gm.stride + ky) as isize - gm.pad as isize;
                            if iy < 0 || iy >= gm.h as isize {
                                continue;
                            }
                            for kx in 0..gm.kw {
                                let ix = (ox * gm.stride + kx) as isize - gm.pad as isize;
                                if ix < 0 || ix >= gm.w as isize {
                                    continue;
                                }
                                let i_idx = ((n * gm.ci + ic) * gm.h + iy as usize) * gm.w + ix as usize;
                                let w_idx = ((oc * gm.cig + icg) * gm.kh + ky) * gm.kw + kx;
                                f(o_idx, i_idx, w_idx);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, p: Conv2dParams) -> Result<Tensor> {
    let gm = geometry(input, weight, bias, p)?;
    let mut out = vec![0.0; gm.n * gm.co * gm.oh * gm.ow];
    if let Some(b) = bias {
        for (i, v) in out.iter_mut().enumerate() {
            *v = b.data()[(i / (gm.oh * gm.ow)) % gm.co];
        }
    }
    let (x, wt) = (input.data(), weight.data());
    for_each_tap(&gm, |o, i, w| out[o] += x[i] * wt[w]);
    Tensor::new(&[gm.n, gm.co, gm.oh, gm.ow], out)
}

/// Gradients of conv2d with respect to input, weight and bias.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    p: Conv2dParams,
) -> (Tensor, Tensor, Tensor) {
    let gm = geometry(input, weight, None, p).expect("geometry validated in forward");
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    for_each_tap(&gm, |o, i, w| {
        gx[i] += g[o] * wt[w];
        gw[w] += g[o] * x[i];
    });
    let mut gb = vec![0.0; gm.co];
    for (i, &v) in g.iter().enumerate() {
        gb[(i / (gm.oh * gm.ow)) % gm.co] += v;
    }
    (
        Tensor::new(input.shape(), gx).unwrap(),
        Tensor::new(weight.shape(), gw).unwrap(),
        Tensor::new(&[gm.co], gb).unwrap(),
    )
}

/// Causal depthwise convolution over a `[N, L, D]` sequence with a `[D, k]`
/// kernel: `out[t] = bias + sum_j w[j] * x[t - (k - 1) + j]`, zeros before
/// the start.
pub fn causal_conv1d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, l, d, k) = causal_dims(input, weight, bias)?;
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    let mut out = vec![0.0; n * l * d];
    for s in 0..n {
        for t in 0..l {
            for c in 0..d {
                let mut acc = b[c];
                for j in 0..k {
                    let src = t as isize - (k - 1) as isize + j as isize;
                    if src >= 0 {
                        acc += w[c * k + j] * x[(s * l + src as usize) * d + c];
                    }
                }
                out[(s * l + t) * d + c] = acc;
            }
        }
    }
    Tensor::new(input.shape(), out)
}

fn causal_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (n, l, d) = match input.shape() {
        &[n, l, d] => (n, l, d),
        s => return Err(Error::shape(format!("causal_conv1d expects [N, L, D], got {s:?}"))),
    };
    let k = match weight.shape() {
        &[wd, k] if wd == d => k,
        s => return Err(Error::shape(format!("causal_conv1d kernel {s:?} does not match D={d}"))),
    };
    if bias.shape() != [d] {
        return Err(Error::shape(format!(
            "causal_conv1d bias {:?}, expected [{d}]",
            bias.shape()
        )));
    }
    Ok((n, l, d, k))
}

fn causal_conv1d_backward(g: &Tensor, input: &Tensor, weight: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, l, d) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = weight.shape()[1];
    let (x, w, gd) = (input.data(), weight.data(), g.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; d];
    for s in 0..n {
        for t in 0..l {
            for c in 0..d {
                let go = gd[(s * l + t) * d + c];
                gb[c] += go;
                for j in 0..k {
                    let src = t as isize - (k - 1) as isize + j as isize;
                    if src >= 0 {
                        let xi = (s * l + src as usize) * d + c;
                        gw[c * k + j] += go * x[xi];
                        gx[xi] += go * w[c * k + j];
                    }
                }
            }
        }
    }
    (
        Tensor::new(input.shape(), gx).unwrap(),
        Tensor::new(weight.shape(), gw).unwrap(),
        Tensor::new(&[d], gb).unwrap(),
    )
}

impl Tape {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, p: Conv2dParams) -> Result<Var> {
        let xi = self.value(x).clone();
        let wi = self.value(weight).clone();
        let out = conv2d(&xi, &wi, bias.map(|b| self.value(b)), p)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        self.record(
            "conv2d",
            out,
            &inputs,
            Box::new(move |g| {
                let (gx, gw, gb) = conv2d_backward(g, &xi, &wi, p);
                if has_bias {
                    vec![gx, gw, gb]
                } else {
                    vec![gx, gw]
                }
            }),
        )
    }

    pub fn causal_conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xi = self.value(x).clone();
        let wi = self.value(weight).clone();
        let out = causal_conv1d(&xi, &wi, self.value(bias))?;
        self.record(
            "causal_conv1d",
            out,
            &[x, weight, bias],
            Box::new(move |g| {
                let (gx, gw, gb) = causal_conv1d_backward(g, &xi, &wi);
                vec![gx, gw, gb]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_ones() {
        let x = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dParams::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::new(&[1, 1, 2, 3], vec![1.0, -2.0, 3.0, 4.5, 0.0, 7.0]).unwrap();
        let w = Tensor::ones(&[1, 1, 1, 1]).unwrap();
        assert_eq!(conv2d(&x, &w, None, Conv2dParams::default()).unwrap(), x);
    }

    #[test]
    fn hand_cross_correlation() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dParams::default()).unwrap();
        assert_eq!(y.item(), 5.0);
    }

    #[test]
    fn padding_and_stride() {
        let x = Tensor::ones(&[1, 1, 4, 4]).unwrap();
        let w = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let b = Tensor::new(&[1], vec![0.5]).unwrap();
        let y = conv2d(&x, &w, Some(&b), Conv2dParams::new(2, 1, 1)).unwrap();
        // (4 + 2 - 3) / 2 rounds down
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.5, 6.5, 6.5, 9.5]);
        let x = Tensor::ones(&[1, 1, 5, 5]).unwrap();
        let y = conv2d(&x, &w, Some(&b), Conv2dParams::new(2, 1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), &[4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5]);
    }

    #[test]
    fn dimension_errors() {
        let x = Tensor::ones(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::ones(&[2, 2, 1, 1]).unwrap();
        assert!(conv2d(&x, &w, None, Conv2dParams::default()).is_err());
        assert!(conv2d(&x, &w, None, Conv2dParams::new(1, 0, 2)).is_err());
        let w = Tensor::ones(&[2, 3, 5, 5]).unwrap();
        assert!(conv2d(&x, &w, None, Conv2dParams::default()).is_err());
    }

    #[test]
    fn grouped_identity_is_identity() {
        let x = Tensor::new(&[1, 3, 2, 2], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let w = Tensor::ones(&[3, 1, 1, 1]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dParams::new(1, 0, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn causal_conv_uses_only_past() {
        let x = Tensor::new(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(&[1, 3], vec![0.5, 0.25, 1.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        let y = causal_conv1d(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.25, 4.0, 5.75]);
    }
}
