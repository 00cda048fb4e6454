use crate::error::{invalid, Error, Result};
use crate::loss::ParamInterval;

use super::{GradKind, LambdaGrad, TIE_TOLERANCE};

/// Quantile threshold of conformal training: `lambda = 1 - s_(k)` over the scores plus a
/// `+inf` sentinel, `k = ceil((N + 1)(1 - alpha))`, with gradient `-ds_(k)/dtheta`.
///
/// `k` is found through the same `(1 + count) / (N + 1) <= alpha` test the bisection
/// calibrator uses, so both agree at exact rational boundaries.
pub fn conftr_quantile_grad(scores: &[(f64, Vec<f64>)], alpha: f64, interval: ParamInterval) -> Result<LambdaGrad> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let dim = scores[0].1.len();
    if let Some((_, g)) = scores.iter().find(|(_, g)| g.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: g.len() });
    }
    let n = scores.len();
    let denom = (n + 1) as f64;
    let fits = |c: usize| (1.0 + c as f64) / denom <= alpha;
    // c = number of calibration scores allowed strictly above the selected one.
    let mut c = ((alpha * denom).floor() as usize).min(n + 1);
    while c > 0 && !fits(c - 1) {
        c -= 1;
    }
    while c < n && fits(c) {
        c += 1;
    }
    if c == 0 {
        return Ok(LambdaGrad::constant(interval.lo(), dim, GradKind::FallbackZero));
    }
    let c = c - 1;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let k = n - c - 1;
    let s = scores[order[k]].0;
    let near = |j: usize| (scores[order[j]].0 - s).abs() < TIE_TOLERANCE;
    if (k > 0 && near(k - 1)) || (k + 1 < n && near(k + 1)) {
        return Err(Error::TieDetected { location: s });
    }
    let value = 1.0 - s;
    if value >= interval.hi() {
        return Ok(LambdaGrad::constant(interval.hi(), dim, GradKind::InteriorMax));
    }
    if value < interval.lo() {
        return Ok(LambdaGrad::constant(interval.lo(), dim, GradKind::FallbackZero));
    }
    let grad = scores[order[k]].1.iter().map(|g| -g).collect();
    Ok(LambdaGrad { value, grad, kind: GradKind::ActiveJump { index: k } })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nine() -> Vec<(f64, Vec<f64>)> {
        (1..=9).map(|i| (i as f64 / 10.0, vec![i as f64, 1.0])).collect()
    }

    #[test]
    fn uniform_scores_example() {
        let r = conftr_quantile_grad(&nine(), 0.1, ParamInterval::unit()).unwrap();
        assert!((r.value - 0.1).abs() < 1e-15);
        assert_eq!(r.grad, vec![-9.0, -1.0]);
    }

    #[test]
    fn sentinel_and_single_score() {
        let r = conftr_quantile_grad(&nine(), 0.05, ParamInterval::unit()).unwrap();
        assert_eq!((r.value, r.kind), (0.0, GradKind::FallbackZero));
        let r = conftr_quantile_grad(&[(0.4, vec![2.0])], 0.5, ParamInterval::unit()).unwrap();
        assert_eq!((r.value, r.grad.as_slice()), (0.6, &[-2.0][..]));
    }

    #[test]
    fn ceil_formula_agrees() {
        for n in 1..40usize {
            let scores: Vec<(f64, Vec<f64>)> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64, vec![i as f64])).collect();
            for alpha in [0.01, 0.05, 0.1, 0.2, 0.25, 0.5, 0.9] {
                let r = conftr_quantile_grad(&scores, alpha, ParamInterval::new(-2.0, 2.0).unwrap()).unwrap();
                let k = ((n + 1) as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
                if k > n {
                    assert_eq!(r.kind, GradKind::FallbackZero);
                } else {
                    assert_eq!(r.grad, vec![-((k - 1) as f64)], "n={n} alpha={alpha}");
                }
            }
        }
    }

    #[test]
    fn tie_at_order_statistic() {
        let s = vec![(0.5, vec![1.0]), (0.5, vec![2.0]), (0.1, vec![0.0])];
        assert!(matches!(conftr_quantile_grad(&s, 0.5, ParamInterval::unit()), Err(Error::TieDetected { .. })));
    }
}
