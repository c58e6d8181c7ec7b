//! Truncated gradient maps and the V/W gradient moduli.
//!
//! The truncation `(|z|−δ)₊ z/|z|` cuts the field off on the degenerate
//! region and approximates the identity uniformly to within δ; its
//! regularized variant replaces |z| by `√(ε²+|z|²)` and doubles the radius.

use serde::{Deserialize, Serialize};

use crate::energy::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruncationMode {
    /// `(|z|−δ)₊ z/|z|`
    Exact,
    /// `(√(ε²+|z|²)−2δ)₊ z/|z|`
    Regularized,
}

/// Truncation radius δ and regularization ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationParams {
    pub delta: f64,
    pub eps: f64,
}

impl TruncationParams {
    pub fn new(delta: f64, eps: f64) -> Self {
        assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
        assert!(eps >= 0.0, "eps must be nonnegative");
        TruncationParams { delta, eps }
    }

    /// Hypothesis of the a priori Hölder estimate. The boundary value
    /// ε = δ/8 is admitted; the estimates degrade continuously there.
    pub fn holder_admissible(&self) -> bool {
        self.eps <= self.delta / 8.0
    }
}

/// Apply the truncated gradient map to a single vector. `z = 0` maps to 0.
pub fn truncate_gradient(z: &[f64], params: &TruncationParams, mode: TruncationMode) -> Vec<f64> {
    let r = norm(z);
    if r == 0.0 {
        return vec![0.0; z.len()];
    }
    let amount = match mode {
        TruncationMode::Exact => (r - params.delta).max(0.0),
        TruncationMode::Regularized => {
            ((params.eps * params.eps + r * r).sqrt() - 2.0 * params.delta).max(0.0)
        }
    };
    z.iter().map(|&zi| amount * zi / r).collect()
}

/// Magnitude of the truncated gradient without forming the vector.
pub fn truncation_magnitude(grad_norm: f64, params: &TruncationParams, mode: TruncationMode) -> f64 {
    match mode {
        TruncationMode::Exact => (grad_norm - params.delta).max(0.0),
        TruncationMode::Regularized => {
            ((params.eps * params.eps + grad_norm * grad_norm).sqrt() - 2.0 * params.delta).max(0.0)
        }
    }
}

/// `V_ε = √(ε² + |g|²)` for one gradient vector.
pub fn v_eps(grad: &[f64], eps: f64) -> f64 {
    (eps * eps + grad.iter().map(|&x| x * x).sum::<f64>()).sqrt()
}

/// Coordinatewise shifted modulus `w_j = (g_j−1)₊ − (−g_j−1)₊` and
/// `W = √(1 + Σ w_j²)`.
pub fn w_eps(grad: &[f64]) -> f64 {
    let s: f64 = grad
        .iter()
        .map(|&g| {
            let w = (g - 1.0).max(0.0) - (-g - 1.0).max(0.0);
            w * w
        })
        .sum();
    (1.0 + s).sqrt()
}

/// `V_ε` over a whole gradient field (one vector per node).
pub fn v_eps_field(grads: &[Vec<f64>], eps: f64) -> Vec<f64> {
    grads.iter().map(|g| v_eps(g, eps)).collect()
}

/// `W_ε` over a whole gradient field.
pub fn w_eps_field(grads: &[Vec<f64>]) -> Vec<f64> {
    grads.iter().map(|g| w_eps(g)).collect()
}

/// Dimensional constant in the compatibility chain `V ≤ c_n W ≤ c_n(1+V)`.
pub fn compatibility_constant(n: usize) -> f64 {
    (n as f64).sqrt() + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(delta: f64, eps: f64) -> TruncationParams {
        TruncationParams::new(delta, eps)
    }

    #[test]
    fn small_vectors_truncate_to_zero() {
        let p = params(0.5, 0.0);
        assert_eq!(truncate_gradient(&[0.3, 0.2], &p, TruncationMode::Exact), vec![0.0, 0.0]);
        assert_eq!(truncate_gradient(&[0.0, 0.0], &p, TruncationMode::Exact), vec![0.0, 0.0]);
    }

    #[test]
    fn exact_truncation_value() {
        // radius 1 on z = (3,4): (5−1)/5 · z = (2.4, 3.2)
        let pd = TruncationParams { delta: 1.0, eps: 0.0 };
        let out = truncate_gradient(&[3.0, 4.0], &pd, TruncationMode::Exact);
        assert!((out[0] - 2.4).abs() < 1e-15);
        assert!((out[1] - 3.2).abs() < 1e-15);
    }

    #[test]
    fn regularized_at_eps_zero_matches_exact_with_doubled_radius() {
        let z = [1.5, -0.7, 0.3];
        let pr = TruncationParams { delta: 0.4, eps: 0.0 };
        let pe = TruncationParams { delta: 0.8, eps: 0.0 };
        let a = truncate_gradient(&z, &pr, TruncationMode::Regularized);
        let b = truncate_gradient(&z, &pe, TruncationMode::Exact);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn v_and_w_at_zero_gradient() {
        assert_eq!(v_eps(&[0.0, 0.0], 0.25), 0.25);
        assert_eq!(w_eps(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn v_and_w_spec_examples() {
        // grad = (2,0), eps = 0: w = (1,0), W = sqrt2, V = 2, W <= sqrt2 V.
        let g = [2.0, 0.0];
        let v = v_eps(&g, 0.0);
        let w = w_eps(&g);
        assert!((v - 2.0).abs() < 1e-15);
        assert!((w - 2f64.sqrt()).abs() < 1e-15);
        assert!(w <= 2f64.sqrt() * v + 1e-15);
        // grad = (0.5, 0.5): w = 0, W = 1 >= V / c_n.
        let g2 = [0.5, 0.5];
        assert_eq!(w_eps(&g2), 1.0);
        assert!(1.0 >= v_eps(&g2, 0.0) / compatibility_constant(2));
    }

    proptest! {
        /// sup_z |G_δ(z) − z| ≤ δ: the truncation approximates the identity.
        #[test]
        fn uniform_approximation(
            x in -10.0f64..10.0, y in -10.0f64..10.0, delta in 1e-6f64..0.999,
        ) {
            let z = [x, y];
            let p = TruncationParams { delta, eps: 0.0 };
            let t = truncate_gradient(&z, &p, TruncationMode::Exact);
            let diff = ((t[0]-z[0]).powi(2) + (t[1]-z[1]).powi(2)).sqrt();
            prop_assert!(diff <= delta + 1e-12);
        }

        /// Compatibility chains hold pointwise with c_n = sqrt(n) + 1.
        #[test]
        fn vw_compatibility(
            gx in -20.0f64..20.0, gy in -20.0f64..20.0, gz in -20.0f64..20.0,
            eps in 0.0f64..1.0,
        ) {
            let g = [gx, gy, gz];
            let c = compatibility_constant(3);
            let v = v_eps(&g, eps);
            let w = w_eps(&g);
            prop_assert!(v <= c * w + 1e-12);
            prop_assert!(c * w <= c * (1.0 + v) + 1e-12);
            if (gx*gx + gy*gy + gz*gz).sqrt() > 1.0 {
                prop_assert!(w <= 2f64.sqrt() * v + 1e-12);
            }
        }
    }

    #[test]
    fn truncation_uniformly_converges_to_identity() {
        // As delta decreases to 0 the sup-distance to the identity shrinks.
        let zs: Vec<[f64; 2]> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.13;
                [2.0 * t.cos(), 1.3 * t.sin()]
            })
            .collect();
        let mut prev = f64::INFINITY;
        for delta in [0.8, 0.4, 0.2, 0.1, 0.05] {
            let p = TruncationParams { delta, eps: 0.0 };
            let sup = zs
                .iter()
                .map(|z| {
                    let t = truncate_gradient(z, &p, TruncationMode::Exact);
                    ((t[0] - z[0]).powi(2) + (t[1] - z[1]).powi(2)).sqrt()
                })
                .fold(0.0, f64::max);
            assert!(sup <= delta + 1e-15);
            assert!(sup <= prev + 1e-15);
            prev = sup;
        }
    }

    #[test]
    fn holder_admissibility_is_inclusive_at_the_boundary() {
        assert!(TruncationParams::new(0.1, 0.0125).holder_admissible());
        assert!(!TruncationParams::new(0.1, 0.0126).holder_admissible());
    }
}
