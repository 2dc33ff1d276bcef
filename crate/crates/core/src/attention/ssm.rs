//! Selective state-space scan with zero-order-hold discretization.
//!
//! For every batch element, inner channel `d` and state index `s`:
//!
//! ```text
//! abar = exp(delta[t, d] * a[d, s])
//! h[t, d, s] = abar * h[t - 1, d, s] + delta[t, d] * b[t, s] * u[t, d]
//! y[t, d] = sum_s c[t, s] * h[t, d, s] + d_skip[d] * u[t, d]
//! ```
//!
//! with `h[-1] = 0`. Shapes: `u`, `delta`: `[N, L, D]`; `a`: `[D, S]`;
//! `b`, `c`: `[N, L, S]`; `d_skip`: `[D]`.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    n: usize,
    l: usize,
    d: usize,
    s: usize,
}

fn dims(u: &Tensor, delta: &Tensor, a: &Tensor, b: &Tensor, c: &Tensor, d_skip: &Tensor) -> Result<Dims> {
    let (n, l, d) = match u.shape() {
        &[n, l, d] => (n, l, d),
        s => return Err(Error::shape(format!("ssm_scan input must be [N, L, D], got {s:?}"))),
    };
    let s = match a.shape() {
        &[ad, s] if ad == d => s,
        sh => return Err(Error::shape(format!("ssm_scan A must be [{d}, S], got {sh:?}"))),
    };
    if delta.shape() != u.shape() {
        return Err(Error::shape(format!(
            "ssm_scan delta {:?} does not match input {:?}",
            delta.shape(),
            u.shape()
        )));
    }
    for (name, t) in [("B", b), ("C", c)] {
        if t.shape() != [n, l, s] {
            return Err(Error::shape(format!(
                "ssm_scan {name} must be [{n}, {l}, {s}], got {:?}",
                t.shape()
            )));
        }
    }
    if d_skip.shape() != [d] {
        return Err(Error::shape(format!(
            "ssm_scan skip must be [{d}], got {:?}",
            d_skip.shape()
        )));
    }
    if let Some(i) = delta
        .data()
        .iter()
        .position(|&v| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::Numerical(format!(
            "ssm_scan step size must be positive, delta[{i}] = {}",
            delta.data()[i]
        )));
    }
    Ok(Dims { n, l, d, s })
}

/// Returns the output and every hidden state `[N, L, D, S]`.
fn scan(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
    dm: Dims,
) -> (Vec<f64>, Vec<f64>) {
    let Dims { n, l, d, s } = dm;
    let (ud, dd, ad, bd, cd, sd) = (u.data(), delta.data(), a.data(), b.data(), c.data(), d_skip.data());
    let mut y = vec![0.0; n * l * d];
    let mut hs = vec![0.0; n * l * d * s];
    for bi in 0..n {
        for t in 0..l {
            let row = bi * l + t;
            for di in 0..d {
                let dt = dd[row * d + di];
                let x = ud[row * d + di];
                let mut acc = sd[di] * x;
                for si in 0..s {
                    let prev = if t == 0 { 0.0 } else { hs[((row - 1) * d + di) * s + si] };
                    let h = (dt * ad[di * s + si]).exp() * prev + dt * bd[row * s + si] * x;
                    hs[(row * d + di) * s + si] = h;
                    acc += cd[row * s + si] * h;
                }
                y[row * d + di] = acc;
            }
        }
    }
    (y, hs)
}

pub fn ssm_scan(u: &Tensor, delta: &Tensor, a: &Tensor, b: &Tensor, c: &Tensor, d_skip: &Tensor) -> Result<Tensor> {
    let dm = dims(u, delta, a, b, c, d_skip)?;
    let (y, _) = scan(u, delta, a, b, c, d_skip, dm);
    Tensor::new(u.shape(), y)
}

struct Saved {
    u: Tensor,
    delta: Tensor,
    a: Tensor,
    b: Tensor,
    c: Tensor,
    d_skip: Tensor,
    hs: Vec<f64>,
    dm: Dims,
}

fn scan_backward(g: &Tensor, sv: &Saved) -> Vec<Tensor> {
    let Dims { n, l, d, s } = sv.dm;
    let (ud, dd, ad, bd, cd, sd) = (
        sv.u.data(),
        sv.delta.data(),
        sv.a.data(),
        sv.b.data(),
        sv.c.data(),
        sv.d_skip.data(),
    );
    let gy = g.data();
    let hs = &sv.hs;
    let mut gu = vec![0.0; ud.len()];
    let mut gdelta = vec![0.0; dd.len()];
    let mut ga = vec![0.0; ad.len()];
    let mut gb = vec![0.0; bd.len()];
    let mut gc = vec![0.0; cd.len()];
    let mut gskip = vec![0.0; d];
    let mut carry = vec![0.0; d * s];
    for bi in 0..n {
        carry.fill(0.0);
        for t in (0..l).rev() {
            let row = bi * l + t;
            for di in 0..d {
                let idx = row * d + di;
                let (x, dt, gyv) = (ud[idx], dd[idx], gy[idx]);
                gskip[di] += gyv * x;
                gu[idx] += gyv * sd[di];
                for si in 0..s {
                    let h = hs[idx * s + si];
                    let prev = if t == 0 { 0.0 } else { hs[((row - 1) * d + di) * s + si] };
                    let av = ad[di * s + si];
                    let abar = (dt * av).exp();
                    gc[row * s + si] += gyv * h;
                    let dh = gyv * cd[row * s + si] + carry[di * s + si];
                    let bv = bd[row * s + si];
                    gdelta[idx] += dh * (prev * abar * av + bv * x);
                    ga[di * s + si] += dh * prev * abar * dt;
                    gb[row * s + si] += dh * dt * x;
                    gu[idx] += dh * dt * bv;
                    carry[di * s + si] = dh * abar;
                }
            }
        }
    }
    let t = |shape: &[usize], v: Vec<f64>| Tensor::new(shape, v).unwrap();
    vec![
        t(sv.u.shape(), gu),
        t(sv.delta.shape(), gdelta),
        t(sv.a.shape(), ga),
        t(sv.b.shape(), gb),
        t(sv.c.shape(), gc),
        t(sv.d_skip.shape(), gskip),
    ]
}

impl Tape {
    /// The scan as one fused op; see the module docs for shapes.
    pub fn ssm_scan(&mut self, u: Var, delta: Var, a: Var, b: Var, c: Var, d_skip: Var) -> Result<Var> {
        let [ut, dt, at, bt, ct, st] = [u, delta, a, b, c, d_skip].map(|v| self.value(v).clone());
        let dm = dims(&ut, &dt, &at, &bt, &ct, &st)?;
        let (y, hs) = scan(&ut, &dt, &at, &bt, &ct, &st, dm);
        let out = Tensor::new(ut.shape(), y)?;
        let saved = Saved {
            u: ut,
            delta: dt,
            a: at,
            b: bt,
            c: ct,
            d_skip: st,
            hs,
            dm,
        };
        self.record(
            "ssm_scan",
            out,
            &[u, delta, a, b, c, d_skip],
            Box::new(move |g| scan_backward(g, &saved)),
        )
    }
}
