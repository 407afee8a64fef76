use crate::data::Mask;
use crate::{Error, Result};

/// Pixel confusion counts; positives are class 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_masks(pred: &Mask, gt: &Mask) -> Result<Self> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn overall_accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `1.0` when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }
}

pub fn overall_accuracy(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(Confusion::from_masks(pred, gt)?.overall_accuracy())
}

pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(Confusion::from_masks(pred, gt)?.iou())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn mask(bits: &[u8]) -> Mask {
        Mask::new(4, 4, bits.to_vec()).unwrap()
    }

    #[test]
    fn identical_and_complementary() {
        let a = mask(&[1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 0, 0, 1]);
        let not_a = mask(&a.data().iter().map(|v| 1 - v).collect::<Vec<_>>());
        assert_eq!(overall_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(overall_accuracy(&a, &not_a).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_iou() {
        // Rows 0-1 vs rows 1-2: 8 pixels each, 4 shared.
        let a = mask(&[1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0]);
        let b = mask(&[0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0]);
        assert!((iou(&a, &b).unwrap() - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn empty_masks_have_unit_iou() {
        let z = Mask::zeros(4, 4);
        assert_eq!(iou(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(overall_accuracy(&Mask::zeros(2, 2), &Mask::zeros(2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn oa_symmetric_under_relabeling(a in proptest::collection::vec(0u8..2, 16), b in proptest::collection::vec(0u8..2, 16)) {
            let (ma, mb) = (mask(&a), mask(&b));
            let flip = |m: &[u8]| mask(&m.iter().map(|v| 1 - v).collect::<Vec<_>>());
            prop_assert_eq!(overall_accuracy(&ma, &mb).unwrap(), overall_accuracy(&flip(&a), &flip(&b)).unwrap());
        }
    }

    #[test]
    fn iou_not_symmetric_under_relabeling() {
        let a = mask(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let b = mask(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let flip = |m: &Mask| mask(&m.data().iter().map(|v| 1 - v).collect::<Vec<_>>());
        assert_ne!(iou(&a, &b).unwrap(), iou(&flip(&a), &flip(&b)).unwrap());
    }
}
