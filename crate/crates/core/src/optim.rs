//! Derivative-free one-dimensional maximization.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Outcome of a bracketed line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMax {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Golden-section maximization of `f` on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `tol` or after `max_evals`
/// function evaluations, whichever comes first. The best point evaluated is
/// returned, so the result never depends on the final bracket midpoint being
/// evaluated. `NaN` values are treated as `-inf`.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_evals: usize) -> LineMax
where
    F: FnMut(f64) -> f64,
{
    let mut eval = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut best = LineMax { x: a, value: f64::NEG_INFINITY, evaluations: 0 };
    if max_evals == 0 {
        return best;
    }

    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c);
    best.evaluations += 1;
    best.x = c;
    best.value = fc;
    if max_evals == 1 {
        return best;
    }
    let mut fd = eval(d);
    best.evaluations += 1;
    if fd > best.value {
        best.x = d;
        best.value = fd;
    }

    while (b - a) > tol && best.evaluations < max_evals {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
            if fc > best.value {
                best.x = c;
                best.value = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
            if fd > best.value {
                best.x = d;
                best.value = fd;
            }
        }
        best.evaluations += 1;
    }
    best
}
