use super::Tensor;
use crate::{Error, Result};

const CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `predictions`.
///
/// Predictions are clamped to `[1e-7, 1 - 1e-7]`; the gradient is zero where
/// the clamp is active.
pub fn bce_loss(predictions: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    predictions.same_dims(targets, "bce_loss")?;
    if predictions.is_empty() {
        return Err(Error::Shape("bce_loss of an empty tensor".into()));
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.data().iter().zip(targets.data()) {
        let pc = p.clamp(CLAMP, 1.0 - CLAMP);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        grad.push(if p == pc { (pc - y) / (pc * (1.0 - pc)) / n } else { 0.0 });
    }
    Ok((loss / n, Tensor::new(predictions.dims(), grad)?))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn half_probability_positive_target() {
        let p = Tensor::filled(&[1], 0.5);
        let y = Tensor::filled(&[1], 1.0);
        let (loss, _) = bce_loss(&p, &y).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let (loss, _) = bce_loss(&Tensor::filled(&[4], 1.0), &Tensor::filled(&[4], 1.0)).unwrap();
        assert!(loss < 1e-6);
        assert!(loss.is_finite());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Tensor::uniform(&[2, 1, 3, 3], 0.05, 0.95, &mut rng);
        let y = Tensor::new(&[2, 1, 3, 3], (0..18).map(|_| rng.random_range(0..2) as f64).collect()).unwrap();
        let (_, grad) = bce_loss(&p, &y).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.data_mut()[i] += h;
            let mut minus = p.clone();
            minus.data_mut()[i] -= h;
            let fd = (bce_loss(&plus, &y).unwrap().0 - bce_loss(&minus, &y).unwrap().0) / (2.0 * h);
            let a = grad.data()[i];
            assert!((a - fd).abs() / a.abs().max(fd.abs()) < 1e-5, "{a} vs {fd}");
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(bce_loss(&Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }
}
