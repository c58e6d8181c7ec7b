//! Adaptive Gauss–Kronrod quadrature.
//!
//! The density tabulation integrates several kernels at once over shared
//! nodes, so the driver is vector-valued: each component carries its own
//! tolerance and intervals are bisected until every component's error
//! estimate is below its share of the budget.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature did not converge on [{a}, {b}]: error {err:.3e} > tolerance {tol:.3e}")]
    NonConvergence { a: f64, b: f64, err: f64, tol: f64 },
}

/// 15-point Kronrod abscissae (positive half, descending).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// Embedded 7-point Gauss weights (for `XGK[1], XGK[3], XGK[5], XGK[7]`).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss–Kronrod 15(7) panel. Returns the Kronrod value and the
/// difference to the embedded Gauss rule, componentwise.
fn gk15_panel<const K: usize>(f: &mut impl FnMut(f64) -> [f64; K], a: f64, b: f64) -> ([f64; K], [f64; K]) {
    let c = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (lo, hi) = (c - half * x, c + half * x);
        let mut v = f(hi);
        if x > 0.0 {
            let vl = f(lo);
            for k in 0..K {
                v[k] += vl[k];
            }
        }
        for k in 0..K {
            kron[k] += wk * v[k];
        }
        if i % 2 == 1 {
            let wg = WG[(i - 1) / 2];
            for k in 0..K {
                gauss[k] += wg * v[k];
            }
        }
    }
    let mut err = [0.0; K];
    for k in 0..K {
        kron[k] *= half;
        gauss[k] *= half;
        err[k] = (kron[k] - gauss[k]).abs();
    }
    (kron, err)
}

/// Adaptive vector-valued integral of `f` over `[a, b]`.
///
/// `tol` is an absolute tolerance per component; `splits` lists interior
/// points where the integrand is known to lose smoothness (kinks, jumps) so
/// the subdivision starts there.
pub fn integrate_vec<const K: usize>(
    mut f: impl FnMut(f64) -> [f64; K],
    a: f64,
    b: f64,
    tol: [f64; K],
    splits: &[f64],
) -> Result<[f64; K], QuadError> {
    debug_assert!(b >= a);
    let width = b - a;
    if width == 0.0 {
        return Ok([0.0; K]);
    }
    // Seed the work stack with the split-delimited pieces.
    let mut edges: Vec<f64> = vec![a];
    let mut cut: Vec<f64> = splits.iter().copied().filter(|&s| s > a && s < b).collect();
    cut.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for s in cut {
        if s - edges.last().unwrap() > 1e-300 {
            edges.push(s);
        }
    }
    edges.push(b);

    let mut total = [0.0; K];
    const MAX_DEPTH: u32 = 48;
    // (lo, hi, depth); depth-first refinement keeps evaluation order
    // deterministic.
    let mut stack: Vec<(f64, f64, u32)> = Vec::with_capacity(64);
    for w in edges.windows(2).rev() {
        stack.push((w[0], w[1], 0));
    }
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15_panel(&mut f, lo, hi);
        // Error budget proportional to the panel's share of the full range.
        let frac = (hi - lo) / width;
        let ok = (0..K).all(|k| err[k] <= tol[k] * frac.max(1e-6));
        if ok || (0..K).all(|k| err[k] <= 1e-4 * tol[k]) {
            for k in 0..K {
                total[k] += val[k];
            }
            continue;
        }
        if depth >= MAX_DEPTH {
            let worst = err.iter().cloned().fold(0.0, f64::max);
            let worst_tol = tol.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(QuadError::NonConvergence { a: lo, b: hi, err: worst, tol: worst_tol });
        }
        let mid = 0.5 * (lo + hi);
        stack.push((mid, hi, depth + 1));
        stack.push((lo, mid, depth + 1));
    }
    Ok(total)
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    splits: &[f64],
) -> Result<f64, QuadError> {
    Ok(integrate_vec(|x| [f(x)], a, b, [tol], splits)?[0])
}
