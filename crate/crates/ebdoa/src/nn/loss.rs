//! Fused sigmoid + binary cross-entropy loss.

use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against soft targets in
/// `[0, 1]`, with the gradient with respect to the logits.
///
/// The per-cell loss uses the numerically stable fused form
/// `max(z, 0) - z t + ln(1 + e^{-|z|})`, so large-magnitude logits never
/// overflow. The gradient is `(sigmoid(z) - t) / n` for `n` cells.
pub fn sigmoid_bce(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() {
        return Err(Error::invalid(format!(
            "logit shape {:?} does not match target shape {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    if let Some(bad) = targets.values().iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("target value {bad} outside [0, 1]")));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(logits.shape())?;
    for ((&z, &t), g) in logits.values().iter().zip(targets.values()).zip(grad.values_mut()) {
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - t) / n;
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn neutral_logit_costs_ln_two() {
        let logits = Tensor::zeros(&[4]).unwrap();
        let targets = Tensor::new(&[4], vec![0.5; 4]).unwrap();
        let (loss, grad) = sigmoid_bce(&logits, &targets).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
        for &g in grad.values() {
            assert_relative_eq!(g, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let logits = Tensor::new(&[4], vec![40.0, -40.0, 50.0, -50.0]).unwrap();
        let targets = Tensor::new(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (loss, grad) = sigmoid_bce(&logits, &targets).unwrap();
        assert!(loss < 1e-15, "loss {loss}");
        assert!(grad.values().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = Tensor::new(&[2], vec![1e4, -1e4]).unwrap();
        let targets = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let (loss, grad) = sigmoid_bce(&logits, &targets).unwrap();
        assert!(loss.is_finite());
        // Fully wrong confident prediction costs |z| per cell.
        assert_relative_eq!(loss, 1e4, max_relative = 1e-12);
        assert!(grad.values().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn rejects_targets_outside_unit_interval() {
        let logits = Tensor::zeros(&[2]).unwrap();
        assert!(sigmoid_bce(&logits, &Tensor::new(&[2], vec![0.5, 1.2]).unwrap()).is_err());
        assert!(sigmoid_bce(&logits, &Tensor::new(&[2], vec![-0.1, 0.5]).unwrap()).is_err());
        assert!(sigmoid_bce(&logits, &Tensor::zeros(&[3]).unwrap()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Tensor::new(
            &[8],
            vec![0.3, -1.2, 2.5, 0.0, -0.7, 1.9, -3.0, 0.01],
        )
        .unwrap();
        let targets = Tensor::new(
            &[8],
            vec![0.9, 0.1, 1.0, 0.5, 0.0, 0.4, 0.05, 0.75],
        )
        .unwrap();
        let (_, grad) = sigmoid_bce(&logits, &targets).unwrap();
        let mut probe = logits.clone();
        let err = gradient_check(grad.values(), 1e-5, 8, 2, |i, d| {
            let old = probe.values()[i];
            probe.values_mut()[i] = old + d;
            let (loss, _) = sigmoid_bce(&probe, &targets).unwrap();
            probe.values_mut()[i] = old;
            loss
        });
        assert!(err < 1e-5, "loss gradient error {err}");
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative(
            pairs in proptest::collection::vec((-30.0f64..30.0, 0.0f64..=1.0), 1..20)
        ) {
            let logits = Tensor::new(&[pairs.len()], pairs.iter().map(|p| p.0).collect()).unwrap();
            let targets = Tensor::new(&[pairs.len()], pairs.iter().map(|p| p.1).collect()).unwrap();
            let (loss, _) = sigmoid_bce(&logits, &targets).unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
