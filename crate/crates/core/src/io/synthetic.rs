//! Deterministic synthetic scenes: paired hyperspectral cubes, RGB images and
//! class masks with rectangular objects on a flat background.
//!
//! Every foreground class `k` has a Gaussian spectral bump of amplitude 1
//! centred at band `k * bands / num_classes`; the background spectrum is flat
//! at 0.1. Spectra get iid Gaussian noise with standard deviation 0.05. RGB
//! colours are exact multiples of 1/255, so images survive a PPM round trip
//! unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::cube::HyperCube;
use crate::io::pnm::{byte_to_unit, LabelMask};
use crate::tensor::Tensor;

pub const BACKGROUND_LEVEL: f64 = 0.1;
pub const SPECTRAL_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub cube: HyperCube,
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub rgb: Tensor,
    pub mask: LabelMask,
}

/// Centre band of the spectral bump of `class`.
pub fn signature_center(class: usize, bands: usize, num_classes: usize) -> f64 {
    class as f64 * bands as f64 / num_classes as f64
}

/// Noise-free spectrum of `class` (class 0 is background).
pub fn class_signature(class: usize, bands: usize, num_classes: usize) -> Vec<f64> {
    if class == 0 {
        return vec![BACKGROUND_LEVEL; bands];
    }
    let center = signature_center(class, bands, num_classes);
    let width = (bands as f64 / (2.0 * num_classes as f64)).max(1.0);
    (0..bands)
        .map(|b| {
            let d = b as f64 - center;
            (-d * d / (2.0 * width * width)).exp()
        })
        .collect()
}

/// Fixed 8-bit RGB colour of `class`.
pub fn class_color(class: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [40, 40, 40],
        [200, 60, 50],
        [50, 180, 70],
        [60, 90, 210],
        [220, 200, 40],
        [180, 60, 200],
        [40, 200, 200],
        [240, 140, 20],
    ];
    PALETTE.get(class).copied().unwrap_or([
        (class * 67 % 256) as u8,
        (class * 131 % 256) as u8,
        (class * 29 % 256) as u8,
    ])
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
    class: u8,
}

/// Even-aligned extent between 6 and half the image side, and an even
/// origin that keeps it inside the image.
fn place(rng: &mut ChaCha8Rng, side: usize) -> (usize, usize) {
    let max_half = (side / 4).max(3);
    let len = (2 * rng.random_range(3..=max_half)).min(side - 2);
    let origin = 2 * rng.random_range(0..=(side - len) / 2);
    (origin.min(side - len), len)
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    if spec.num_classes < 2 || spec.num_classes > 256 {
        return Err(Error::Config(format!(
            "synthetic data needs 2..=256 classes, got {}",
            spec.num_classes
        )));
    }
    if spec.height < 8 || spec.width < 8 {
        return Err(Error::Config(format!(
            "synthetic images must be at least 8x8, got {}x{}",
            spec.height, spec.width
        )));
    }
    if spec.bands == 0 {
        return Err(Error::Config("synthetic cubes need at least one band".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, SPECTRAL_NOISE).expect("valid sigma");
    let signatures: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|k| class_signature(k, spec.bands, spec.num_classes))
        .collect();
    let (h, w) = (spec.height, spec.width);
    let mut samples = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let n_rects = rng.random_range(1..=3);
        let rects: Vec<Rect> = (0..n_rects)
            .map(|_| {
                let (y0, rh) = place(&mut rng, h);
                let (x0, rw) = place(&mut rng, w);
                let class = rng.random_range(1..spec.num_classes) as u8;
                Rect {
                    y0,
                    x0,
                    h: rh,
                    w: rw,
                    class,
                }
            })
            .collect();
        let mut labels = vec![0u8; h * w];
        for r in &rects {
            for y in r.y0..r.y0 + r.h {
                labels[y * w + r.x0..y * w + r.x0 + r.w].fill(r.class);
            }
        }
        let plane = h * w;
        let mut cube = vec![0f32; spec.bands * plane];
        let mut rgb = vec![0.0; 3 * plane];
        for (p, &label) in labels.iter().enumerate() {
            let sig = &signatures[label as usize];
            for b in 0..spec.bands {
                cube[b * plane + p] = (sig[b] + noise.sample(&mut rng)) as f32;
            }
            let color = class_color(label as usize);
            for c in 0..3 {
                rgb[c * plane + p] = byte_to_unit(color[c]);
            }
        }
        samples.push(Sample {
            cube: HyperCube::new(spec.bands, h, w, cube)?,
            rgb: Tensor::new(&[1, 3, h, w], rgb)?,
            mask: LabelMask::with_classes(h, w, labels, spec.num_classes)?,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            count: 5,
            height: 16,
            width: 12,
            bands: 9,
            num_classes: 3,
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(
            generate_synthetic_dataset(&spec(3)).unwrap(),
            generate_synthetic_dataset(&spec(3)).unwrap()
        );
        assert_ne!(
            generate_synthetic_dataset(&spec(3)).unwrap(),
            generate_synthetic_dataset(&spec(4)).unwrap()
        );
    }

    #[test]
    fn every_image_has_background_and_foreground() {
        for seed in 0..20 {
            for s in generate_synthetic_dataset(&spec(seed)).unwrap() {
                let hist = s.mask.histogram(3);
                assert!(hist[0] > 0);
                assert!(hist[1..].iter().any(|&c| c > 0));
            }
        }
    }

    #[test]
    fn signature_peaks_at_the_rounded_center() {
        for (bands, classes) in [(9, 3), (224, 7), (16, 5), (28, 4)] {
            for k in 1..classes {
                let sig = class_signature(k, bands, classes);
                let argmax = (0..bands).fold(0, |best, b| if sig[b] > sig[best] { b } else { best });
                let expect = (k as f64 * bands as f64 / classes as f64).round() as usize;
                assert_eq!(argmax, expect, "bands={bands} classes={classes} k={k}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(0);
        s.num_classes = 1;
        assert!(generate_synthetic_dataset(&s).is_err());
        let mut s = spec(0);
        s.height = 7;
        assert!(generate_synthetic_dataset(&s).is_err());
    }
}
