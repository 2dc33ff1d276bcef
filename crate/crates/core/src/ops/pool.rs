//! Directional average pooling: along the width axis (X) and the height axis (Y).

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `[N, C, H, W] -> [N, C, H, 1]`, mean over width.
pub fn avg_pool_x(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let out = input
        .data()
        .chunks(w)
        .map(|row| row.iter().sum::<f64>() / w as f64)
        .collect();
    Tensor::new(&[n, c, h, 1], out)
}

/// `[N, C, H, W] -> [N, C, 1, W]`, mean over height.
pub fn avg_pool_y(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let mut out = vec![0.0; n * c * w];
    for (plane, acc) in input.data().chunks(h * w).zip(out.chunks_mut(w)) {
        for row in plane.chunks(w) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= h as f64);
    }
    Tensor::new(&[n, c, 1, w], out)
}

impl Tape {
    pub fn avg_pool_x(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let out = avg_pool_x(self.value(x))?;
        let w = shape[3];
        self.record(
            "avg_pool_x",
            out,
            &[x],
            Box::new(move |g| {
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / w as f64, w))
                    .collect();
                vec![Tensor::new(&shape, data).unwrap()]
            }),
        )
    }

    pub fn avg_pool_y(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let out = avg_pool_y(self.value(x))?;
        let (h, w) = (shape[2], shape[3]);
        self.record(
            "avg_pool_y",
            out,
            &[x],
            Box::new(move |g| {
                let mut data = Vec::with_capacity(shape.iter().product());
                for row in g.data().chunks(w) {
                    for _ in 0..h {
                        data.extend(row.iter().map(|v| v / h as f64));
                    }
                }
                vec![Tensor::new(&shape, data).unwrap()]
            }),
        )
    }
}
