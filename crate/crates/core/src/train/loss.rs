use crate::error::{Error, Result};

/// Mean squared error over every channel of every element.
pub fn photometric_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("prediction has {} values, target has {}", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / pred.len() as f64)
}

/// `MSE(rgb) + lambda * MSE(feature)`.
pub fn joint_loss(pred_rgb: &[f64], gt_rgb: &[f64], pred_feat: &[f64], gt_feat: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(photometric_loss(pred_rgb, gt_rgb)? + lambda * photometric_loss(pred_feat, gt_feat)?)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_inputs_have_zero_loss() {
        let x = [0.1, 0.7, 0.3];
        assert_eq!(photometric_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(joint_loss(&x, &x, &x, &x, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn constant_residual() {
        let pred = [0.5; 12];
        let gt = [0.0; 12];
        assert_eq!(photometric_loss(&pred, &gt).unwrap(), 0.25);
    }

    #[test]
    fn joint_loss_combines_linearly() {
        let rgb_pred = [0.2, 0.2, 0.2];
        let rgb_gt = [0.0; 3];
        let f_pred = [1.0, -1.0];
        let f_gt = [0.0, 0.0];
        assert!((joint_loss(&rgb_pred, &rgb_gt, &f_pred, &f_gt, 0.001).unwrap() - 0.041).abs() < 1e-12);
        assert_eq!(
            joint_loss(&rgb_pred, &rgb_gt, &f_pred, &f_gt, 0.0).unwrap(),
            photometric_loss(&rgb_pred, &rgb_gt).unwrap()
        );
        assert!(joint_loss(&rgb_pred, &rgb_gt, &f_pred, &f_gt, -1.0).is_err());
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (rays, ch) = (37, 3);
        let pred: Vec<f64> = (0..rays * ch).map(|_| rng.random()).collect();
        let gt: Vec<f64> = (0..rays * ch).map(|_| rng.random()).collect();
        let mut acc = 0.0;
        for r in 0..rays {
            for c in 0..ch {
                let d = pred[r * ch + c] - gt[r * ch + c];
                acc += d * d;
            }
        }
        acc /= (rays * ch) as f64;
        assert!((photometric_loss(&pred, &gt).unwrap() - acc).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch() {
        assert!(photometric_loss(&[1.0], &[1.0, 2.0]).is_err());
    }
}
