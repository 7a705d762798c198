//! Bisection on monotone predicates.

/// Largest `x` in `[lo, hi]` with `pred(x)` true, assuming `pred` is true on a
/// prefix of the interval and `pred(lo)` holds. Returns a point where the
/// predicate holds, within `tol` of the boundary.
pub fn last_true<F>(mut lo: f64, mut hi: f64, tol: f64, pred: F) -> f64
where
    F: Fn(f64) -> bool,
{
    if pred(hi) {
        return hi;
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Root of a non-increasing function on `[lo, hi]` by bisection, assuming
/// `f(lo) >= 0 >= f(hi)`.
pub fn decreasing_root<F>(mut lo: f64, mut hi: f64, tol: f64, f: F) -> f64
where
    F: Fn(f64) -> f64,
{
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + 0.5 * (hi - lo)
}
