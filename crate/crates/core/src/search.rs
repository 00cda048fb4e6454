//! Scalar search routines shared by the calibration and risk code.

use crate::error::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `width` or after `max_iter` shrinks.
/// Returns the best point seen and its value.
pub fn golden_min<F>(mut f: F, lo: f64, hi: f64, width: f64, max_iter: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut best = (a, f(a)?);
    let fb = f(b)?;
    if fb < best.1 {
        best = (b, fb);
    }
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..max_iter {
        if b - a <= width {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
        for (x, v) in [(x1, f1), (x2, f2)] {
            if v < best.1 || (v == best.1 && x < best.0) {
                best = (x, v);
            }
        }
    }
    Ok(best)
}

/// Largest point of `[lo, hi]` where a nondecreasing predicate-style test holds,
/// given that `ok(lo)` is true and `ok(hi)` is false. Returns the last `ok` bracket end.
pub(crate) fn bisect_last_true<F>(mut ok: F, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(lo);
        }
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}
