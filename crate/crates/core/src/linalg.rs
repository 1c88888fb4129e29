//! Small dense linear algebra used by the regression-based estimators.
//!
//! Systems here are at most a few dozen unknowns, so a plain Gaussian
//! elimination with partial pivoting is all that is needed.

use ndarray::{Array1, Array2};

/// Solves `a x = b`. Returns `None` when a pivot falls below `tol` times
/// the largest absolute entry of `a`.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>, tol: f64) -> Option<Array1<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut m = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let (piv, pmax) =
            (col..n).map(|r| (r, m[[r, col]].abs())).fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pmax <= tol * scale {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap([piv, c], [col, c]);
            }
            rhs.swap(piv, col);
        }
        let p = m[[col, col]];
        for r in col + 1..n {
            let factor = m[[r, col]] / p;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[[r, c]] -= factor * m[[col, c]];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = Array1::zeros(n);
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[[r, c]] * x[c];
        }
        x[r] = acc / m[[r, r]];
    }
    Some(x)
}

/// Solution of `a x = b`, falling back to `(a + ridge I) x = b` when `a` is
/// numerically singular. The flag reports whether the fallback was used.
pub fn solve_or_ridge(a: &Array2<f64>, b: &Array1<f64>, ridge: f64) -> (Array1<f64>, bool) {
    if let Some(x) = solve(a, b, 1e-13) {
        return (x, false);
    }
    let mut reg = a.clone();
    for i in 0..reg.nrows() {
        reg[[i, i]] += ridge;
    }
    match solve(&reg, b, 0.0) {
        Some(x) => (x, true),
        None => (Array1::zeros(b.len()), true),
    }
}
