//! Confusion-matrix segmentation metrics.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::io::LabelMask;
use crate::tensor::Tensor;

/// `K x K` pixel counts, rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::shape(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        pred.check_classes(self.k)?;
        gt.check_classes(self.k)?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn report(&self) -> SegmentationReport {
        let k = self.k;
        let mut per_class_iou = Vec::with_capacity(k);
        for c in 0..k {
            let tp = self.get(c, c);
            let row: u64 = (0..k).map(|p| self.get(c, p)).sum();
            let col: u64 = (0..k).map(|t| self.get(t, c)).sum();
            let union = row + col - tp;
            per_class_iou.push((union > 0).then(|| tp as f64 / union as f64));
        }
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let total = self.total();
        let correct: u64 = (0..k).map(|c| self.get(c, c)).sum();
        SegmentationReport {
            per_class_iou,
            miou,
            pixel_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
}

impl SegmentationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16}{:>10}", "class", "iou");
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            let v = iou.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{c:<16}{v:>10}");
        }
        let _ = writeln!(s, "{:<16}{:>10.6}", "miou", self.miou);
        let _ = writeln!(s, "{:<16}{:>10.6}", "pixel_accuracy", self.pixel_accuracy);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,class,value\n");
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            let v = iou.map_or_else(String::new, |v| format!("{v:.6}"));
            let _ = writeln!(s, "iou,{c},{v}");
        }
        let _ = writeln!(s, "miou,,{:.6}", self.miou);
        let _ = writeln!(s, "pixel_accuracy,,{:.6}", self.pixel_accuracy);
        s
    }
}

pub fn evaluate(pred: &LabelMask, gt: &LabelMask, num_classes: usize) -> Result<SegmentationReport> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.add(pred, gt)?;
    Ok(cm.report())
}

/// Per-image argmax over the class axis of `[N, K, H, W]` logits; ties go to
/// the smaller class index.
pub fn argmax_masks(logits: &Tensor) -> Result<Vec<LabelMask>> {
    let (n, k, h, w) = logits.dims4()?;
    if k > 256 {
        return Err(Error::shape(format!("{k} classes do not fit in a byte mask")));
    }
    let hw = h * w;
    let z = logits.data();
    (0..n)
        .map(|b| {
            let labels = (0..hw)
                .map(|i| {
                    let mut best = 0;
                    for c in 1..k {
                        if z[(b * k + c) * hw + i] > z[(b * k + best) * hw + i] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMask::new(h, w, labels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[u8]) -> LabelMask {
        LabelMask::new(2, 2, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let r = evaluate(&m(&[0, 1, 2, 1]), &m(&[0, 1, 2, 1]), 4).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.pixel_accuracy, 1.0);
        assert_eq!(r.per_class_iou[3], None);
    }

    #[test]
    fn total_miss() {
        let r = evaluate(&m(&[1; 4]), &m(&[0; 4]), 2).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.0), Some(0.0)]);
        assert_eq!(r.pixel_accuracy, 0.0);
    }

    #[test]
    fn argmax_ties_prefer_lower_class() {
        let z = Tensor::new(&[1, 3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(argmax_masks(&z).unwrap()[0].data(), &[0, 1]);
    }

    #[test]
    fn text_is_fixed_precision() {
        let r = evaluate(&m(&[0, 1, 1, 1]), &m(&[0, 1, 0, 1]), 2).unwrap();
        assert!(r.to_text().contains("0.583333"));
        assert!(r.to_csv().contains("pixel_accuracy,,0.750000"));
    }

    #[test]
    fn dimension_mismatch() {
        let a = LabelMask::new(1, 4, vec![0; 4]).unwrap();
        assert!(evaluate(&a, &m(&[0; 4]), 2).is_err());
    }
}
