//! Per-image spectral PCA reducing a hyperspectral cube to three channels.

use crate::error::{Error, Result};
use crate::fusion::jacobi::jacobi_eigen;
use crate::io::HyperCube;
use crate::tensor::Tensor;

pub const COMPONENTS: usize = 3;
/// Score channels with a range at or below this are treated as constant.
pub const CONSTANT_RANGE_TOL: f64 = 1e-12;
/// Also constant: a range this small relative to the widest score channel.
/// Null-space directions only resolve to about the eigensolver tolerance.
pub const RELATIVE_RANGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Three orthonormal band-length vectors, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    /// Every eigenvalue of the covariance, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    pub variance_retained: f64,
}

impl PcaModel {
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    /// Raw component scores of one spectrum.
    pub fn scores(&self, spectrum: &[f64]) -> [f64; COMPONENTS] {
        let mut out = [0.0; COMPONENTS];
        for (k, comp) in self.components.iter().enumerate() {
            out[k] = comp
                .iter()
                .zip(spectrum.iter().zip(&self.mean))
                .map(|(c, (x, m))| c * (x - m))
                .sum();
        }
        out
    }
}

/// Flip `v` so its largest-magnitude coordinate is positive. Magnitudes
/// within 1e-12 of the maximum count as tied; the lowest index wins.
fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(&lead) = v.iter().find(|x| x.abs() >= max - 1e-12) {
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub fn fit_pca(cube: &HyperCube) -> Result<PcaModel> {
    let bands = cube.bands();
    let n = cube.pixels();
    if bands < COMPONENTS {
        return Err(Error::Data(format!(
            "PCA to {COMPONENTS} components needs at least {COMPONENTS} bands, cube has {bands}"
        )));
    }
    if n < 2 {
        return Err(Error::Data("PCA needs at least two pixels".into()));
    }
    if cube.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cube contains non-finite values".into()));
    }
    let planes: Vec<Vec<f64>> = (0..bands)
        .map(|b| cube.band(b).iter().map(|&v| v as f64).collect())
        .collect();
    let mean: Vec<f64> = planes.iter().map(|p| p.iter().sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = planes
        .iter()
        .zip(&mean)
        .map(|(p, m)| p.iter().map(|v| v - m).collect())
        .collect();
    let mut cov = vec![0.0; bands * bands];
    for i in 0..bands {
        for j in 0..=i {
            let c = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            cov[i * bands + j] = c;
            cov[j * bands + i] = c;
        }
    }
    let eig = jacobi_eigen(&cov, bands)?;
    let eigenvalues: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let top: f64 = eigenvalues[..COMPONENTS].iter().sum();
    let variance_retained = if total > 0.0 {
        (top / total).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let components = eig.vectors[..COMPONENTS]
        .iter()
        .map(|v| {
            let mut v = v.clone();
            fix_sign(&mut v);
            v
        })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        variance_retained,
    })
}

/// Component scores as `[1, 3, H, W]`, without normalization.
pub fn project_scores(cube: &HyperCube, model: &PcaModel) -> Result<Tensor> {
    if model.bands() != cube.bands() {
        return Err(Error::shape(format!(
            "PCA model has {} bands, cube has {}",
            model.bands(),
            cube.bands()
        )));
    }
    let n = cube.pixels();
    let mut out = vec![0.0; COMPONENTS * n];
    for p in 0..n {
        let s = model.scores(&cube.spectrum(p));
        for k in 0..COMPONENTS {
            out[k * n + p] = s[k];
        }
    }
    Tensor::new(&[1, COMPONENTS, cube.height(), cube.width()], out)
}

/// Project onto the three components, then min-max each channel to `[0, 1]`.
/// A constant channel becomes 0.5 everywhere.
pub fn project_hyper3(cube: &HyperCube, model: &PcaModel) -> Result<Tensor> {
    let mut t = project_scores(cube, model)?;
    let n = cube.pixels();
    let bounds = |ch: &[f64]| {
        let lo = ch.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let widest = t.data().chunks(n).map(bounds).fold(0f64, |m, (lo, hi)| m.max(hi - lo));
    let flat = CONSTANT_RANGE_TOL.max(RELATIVE_RANGE_TOL * widest);
    for ch in t.data_mut().chunks_mut(n) {
        let (lo, hi) = bounds(ch);
        if hi - lo <= flat {
            ch.fill(0.5);
        } else {
            ch.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker_cube() -> HyperCube {
        // spectra (1,0,0), (0,1,0), (1,0,0), (0,1,0) on a 2x2 grid
        HyperCube::new(3, 2, 2, vec![1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 0., 0.]).unwrap()
    }

    #[test]
    fn checker_spectra() {
        let m = fit_pca(&checker_cube()).unwrap();
        assert!((m.eigenvalues[0] - 0.5).abs() < 1e-15);
        assert!(m.eigenvalues[1..].iter().all(|&l| l.abs() < 1e-15));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components[0][0] - s).abs() < 1e-15);
        assert!((m.components[0][1] + s).abs() < 1e-15);
        assert_eq!(m.variance_retained, 1.0);
        let scores = project_scores(&checker_cube(), &m).unwrap();
        for (i, want) in [s, -s, s, -s].iter().enumerate() {
            assert!((scores.data()[i] - want).abs() < 1e-15);
        }
        let h3 = project_hyper3(&checker_cube(), &m).unwrap();
        assert_eq!(&h3.data()[..4], &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_cube() {
        let cube = HyperCube::new(4, 2, 3, vec![0.25; 24]).unwrap();
        let m = fit_pca(&cube).unwrap();
        assert!(m.eigenvalues.iter().all(|&l| l == 0.0));
        assert_eq!(m.variance_retained, 1.0);
        let h3 = project_hyper3(&cube, &m).unwrap();
        assert!(h3.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn two_bands_are_rejected() {
        let cube = HyperCube::new(2, 2, 2, vec![1., 0., 1., 0., 0., 1., 0., 1.]).unwrap();
        assert!(matches!(fit_pca(&cube), Err(Error::Data(_))));
    }

    #[test]
    fn band_mismatch() {
        let m = fit_pca(&checker_cube()).unwrap();
        let other = HyperCube::new(4, 2, 2, vec![0.0; 16]).unwrap();
        assert!(matches!(project_hyper3(&other, &m), Err(Error::Shape(_))));
    }

    #[test]
    fn sign_ties_go_to_the_lower_index() {
        let mut v = vec![-0.5, 0.5, 0.1];
        fix_sign(&mut v);
        assert_eq!(v, vec![0.5, -0.5, -0.1]);
    }
}
