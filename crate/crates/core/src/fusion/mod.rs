//! Hyperspectral/RGB data fusion: PCA to three channels, bilinear alignment to
//! the RGB raster, channel concatenation.

pub mod jacobi;
pub mod pca;

pub use jacobi::{jacobi_eigen, SymmetricEigen};
pub use pca::{fit_pca, project_hyper3, project_scores, PcaModel};

use crate::error::{Error, Result};
use crate::io::HyperCube;
use crate::ops::{bilinear_resize, concat_channels};
use crate::tensor::Tensor;

/// Resize `hyper3` to the RGB raster and append it after the RGB channels.
pub fn fuse(rgb: &Tensor, hyper3: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = rgb.dims4()?;
    let (hn, hc, _, _) = hyper3.dims4()?;
    if n != 1 || c != 3 || hn != 1 || hc != 3 {
        return Err(Error::shape(format!(
            "fuse needs [1, 3, H, W] inputs, got {:?} and {:?}",
            rgb.shape(),
            hyper3.shape()
        )));
    }
    let aligned = bilinear_resize(hyper3, h, w)?;
    concat_channels(rgb, &aligned)
}

/// Full fusion block: fit PCA on `cube`, project, and fuse with `rgb`.
pub fn fuse_cube(rgb: &Tensor, cube: &HyperCube) -> Result<(Tensor, PcaModel)> {
    let model = fit_pca(cube)?;
    let hyper3 = project_hyper3(cube, &model)?;
    Ok((fuse(rgb, &hyper3)?, model))
}
