//! Softmax cross-entropy and the KL/JS divergences used for scoring.

use crate::error::{PpgtaError, Result};

pub use super::tape::softmax;

const PROB_FLOOR: f64 = 1e-8;

/// loss = -log softmax(logits)[target]; gradient = softmax - one_hot.
pub fn softmax_xent(logits: &[f32], target: usize) -> Result<(f32, Vec<f32>)> {
    if target >= logits.len() {
        return Err(PpgtaError::Contract(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = softmax(logits);
    let loss = -(probs[target].max(1e-30)).ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, p)| p - if i == target { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

fn check_normalized(p: &[f32], name: &str) -> Result<()> {
    let s: f64 = p.iter().map(|v| *v as f64).sum();
    if (s - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0) {
        return Err(PpgtaError::Contract(format!(
            "{name} is not a probability vector (sum={s})"
        )));
    }
    Ok(())
}

/// KL(p || q) with q floored at 1e-8 before division. Zero entries of p
/// contribute nothing.
pub fn kl_divergence(p: &[f32], q: &[f32]) -> Result<f32> {
    if p.len() != q.len() {
        return Err(PpgtaError::Contract("kl: length mismatch".into()));
    }
    check_normalized(p, "p")?;
    check_normalized(q, "q")?;
    let mut acc = 0.0f64;
    for (pi, qi) in p.iter().zip(q.iter()) {
        let pi = *pi as f64;
        if pi > 0.0 {
            acc += pi * (pi / (*qi as f64).max(PROB_FLOOR)).ln();
        }
    }
    Ok(acc.max(0.0) as f32)
}

/// Jensen-Shannon divergence in nats; symmetric, bounded by ln 2.
pub fn js_divergence(p: &[f32], q: &[f32]) -> Result<f32> {
    if p.len() != q.len() {
        return Err(PpgtaError::Contract("js: length mismatch".into()));
    }
    check_normalized(p, "p")?;
    check_normalized(q, "q")?;
    let m: Vec<f32> = p.iter().zip(q.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut acc = 0.0f64;
    for (x, mi) in p.iter().zip(m.iter()) {
        let x = *x as f64;
        if x > 0.0 {
            acc += 0.5 * x * (x / (*mi as f64).max(PROB_FLOOR)).ln();
        }
    }
    for (x, mi) in q.iter().zip(m.iter()) {
        let x = *x as f64;
        if x > 0.0 {
            acc += 0.5 * x * (x / (*mi as f64).max(PROB_FLOOR)).ln();
        }
    }
    Ok((acc.max(0.0) as f32).min(std::f64::consts::LN_2 as f32))
}

/// Empirical action distribution with add-one smoothing.
pub fn smoothed_histogram(actions: &[u8], n_actions: usize) -> Vec<f32> {
    let mut counts = vec![1.0f64; n_actions];
    for &a in actions {
        counts[a as usize] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| (c / total) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f32, b: f32, tol: f64) {
        assert!(((a as f64) - (b as f64)).abs() <= tol, "{a} != {b} (tol {tol})");
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = [0.25f32, 0.25, 0.25, 0.25];
        assert_close(kl_divergence(&p, &p).unwrap(), 0.0, 1e-9);
        assert_close(js_divergence(&p, &p).unwrap(), 0.0, 1e-9);
    }

    #[test]
    fn js_of_disjoint_distributions_is_ln_2() {
        let p = [1.0f32, 0.0];
        let q = [0.0f32, 1.0];
        assert_close(js_divergence(&p, &q).unwrap(), std::f64::consts::LN_2 as f32, 1e-9);
    }

    #[test]
    fn uniform_logit_cross_entropy_is_ln_9() {
        let logits = [0.7f32; 9];
        let (loss, grad) = softmax_xent(&logits, 4).unwrap();
        assert_close(loss, (9.0f64).ln() as f32, 1e-6);
        // gradient = softmax - one_hot
        assert_close(grad[4], 1.0 / 9.0 - 1.0, 1e-6);
        assert_close(grad[0], 1.0 / 9.0, 1e-6);
    }

    #[test]
    fn non_normalized_input_is_rejected() {
        let p = [0.5f32, 0.2];
        let q = [0.5f32, 0.5];
        assert!(kl_divergence(&p, &q).is_err());
        assert!(js_divergence(&p, &q).is_err());
        assert!(softmax_xent(&[0.0; 4], 9).is_err());
    }

    #[test]
    fn smoothed_histogram_is_normalized() {
        let h = smoothed_histogram(&[0, 0, 3], 9);
        let sum: f64 = h.iter().map(|v| *v as f64).sum();
        assert_close(sum as f32, 1.0, 1e-6);
        assert_close(h[0], 3.0 / 12.0, 1e-6);
        assert_close(h[1], 1.0 / 12.0, 1e-6);
    }

    fn prob_vec(n: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(1e-6f64..1.0, n).prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            let mut p: Vec<f32> = raw.iter().map(|v| (v / s) as f32).collect();
            // re-normalize in f32 so the 1e-6 contract check passes
            let fs: f64 = p.iter().map(|v| *v as f64).sum();
            for v in &mut p {
                *v = ((*v as f64) / fs) as f32;
            }
            p
        })
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_js_is_bounded(p in prob_vec(9), q in prob_vec(9)) {
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            let js = js_divergence(&p, &q).unwrap();
            prop_assert!((0.0..=std::f64::consts::LN_2 as f32).contains(&js));
            let js_rev = js_divergence(&q, &p).unwrap();
            prop_assert!((js - js_rev).abs() <= 1e-6);
        }

        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-10.0f32..10.0, 9)) {
            let p = softmax(&logits);
            let s: f64 = p.iter().map(|v| *v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }
}
