//! Finite-difference verification of analytic gradients.

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Compares an analytic gradient against central finite differences on a
/// random subsample of coordinates and returns the worst relative error.
///
/// `loss_at(i, delta)` must evaluate the scalar loss with parameter `i`
/// temporarily offset by `delta` and then restore it; the checker probes
/// `+step` and `-step` per sampled coordinate. At least `samples`
/// coordinates are probed (all of them when the gradient is smaller than
/// that). Relative error uses a floor so that near-zero gradient pairs
/// compare absolutely at the floor's scale.
pub fn gradient_check(
    analytic: &[f64],
    step: f64,
    samples: usize,
    seed: u64,
    mut loss_at: impl FnMut(usize, f64) -> f64,
) -> f64 {
    let n = analytic.len();
    let mut indices: Vec<usize> = (0..n).collect();
    if n > samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Partial Fisher-Yates: the first `samples` entries become a
        // uniform draw without replacement.
        for i in 0..samples {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        indices.truncate(samples);
    }

    let mut worst = 0.0f64;
    for &i in &indices {
        let plus = loss_at(i, step);
        let minus = loss_at(i, -step);
        let fd = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_correct_and_flags_wrong_gradients() {
        // f(w) = sum(w^2) has gradient 2w.
        let mut w = vec![0.3, -0.7, 1.1, 0.0, 2.4];
        let analytic: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let err = gradient_check(&analytic, 1e-5, 10, 1, |i, d| {
            let old = w[i];
            w[i] = old + d;
            let loss = w.iter().map(|v| v * v).sum::<f64>();
            w[i] = old;
            loss
        });
        assert!(err < 1e-7, "correct gradient flagged with error {err}");

        let wrong: Vec<f64> = w.iter().map(|v| 2.0 * v + 0.5).collect();
        let err = gradient_check(&wrong, 1e-5, 10, 1, |i, d| {
            let old = w[i];
            w[i] = old + d;
            let loss = w.iter().map(|v| v * v).sum::<f64>();
            w[i] = old;
            loss
        });
        assert!(err > 0.05, "wrong gradient passed with error {err}");
    }

    #[test]
    fn subsamples_large_parameter_vectors() {
        let w: Vec<f64> = (0..2000).map(|i| i as f64 * 1e-4).collect();
        let analytic: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let mut evals = 0usize;
        let mut wc = w.clone();
        let err = gradient_check(&analytic, 1e-5, 250, 3, |i, d| {
            evals += 1;
            let old = wc[i];
            wc[i] = old + d;
            let loss = wc.iter().map(|v| v * v).sum::<f64>();
            wc[i] = old;
            loss
        });
        assert_eq!(evals, 500);
        assert!(err < 1e-5, "checker noise {err}");
    }
}
