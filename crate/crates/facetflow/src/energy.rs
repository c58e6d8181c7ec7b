//! Exact energy densities and their first-order calculus.
//!
//! The composite density is `E(z) = E₁(z) + E_p(z)` with a positively
//! one-homogeneous part `E₁` (the Euclidean norm, or `√(zᵀAz)` for SPD `A`)
//! and the power part `E_p(z) = |z|^p / p`. This module holds the exact
//! formulas; the mollified tables live in [`crate::mollify`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("growth exponent must exceed 1, got p = {0}")]
    ExponentTooSmall(f64),
    #[error("spatial dimension must be 1, 2, or 3, got {0}")]
    BadDimension(usize),
    #[error("need 0 < lambda <= Lambda, got lambda = {0}, Lambda = {1}")]
    BadEllipticity(f64, f64),
    #[error("one-homogeneous gradient bound K must be positive, got {0}")]
    BadGradientBound(f64),
    #[error("anisotropy matrix must be symmetric positive definite")]
    NotSpd,
    #[error("K = {k} is below the anisotropic gradient bound sqrt(lambda_max(A)) = {need:.6}")]
    GradientBoundTooSmall { k: f64, need: f64 },
    #[error("subcritical mode requires n >= 3 and p <= 2n/(n+2) = {threshold:.6}, got n = {n}, p = {p}")]
    NotSubcritical { n: usize, p: f64, threshold: f64 },
}

/// Small dense symmetric matrix (dimension ≤ 3), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    pub n: usize,
    pub data: [[f64; 3]; 3],
}

impl SymMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = [[0.0; 3]; 3];
        for (i, row) in data.iter_mut().enumerate().take(n) {
            row[i] = 1.0;
        }
        SymMatrix { n, data }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.data[i][j] * z[j]).sum())
            .collect()
    }

    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        let az = self.apply(z);
        dot(&az, z)
    }

    fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for j in 0..i {
                if (self.data[i][j] - self.data[j][i]).abs() > 1e-14 {
                    return false;
                }
            }
        }
        true
    }

    /// Largest eigenvalue by deterministic power iteration (n ≤ 3).
    pub fn lambda_max(&self) -> f64 {
        let mut v = vec![1.0; self.n];
        let mut lam = 0.0;
        for _ in 0..200 {
            let w = self.apply(&v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v = w.iter().map(|x| x / norm).collect();
            lam = norm;
        }
        lam
    }

    /// Smallest eigenvalue via `λ_min(A) = c − λ_max(c·I − A)` with `c = λ_max(A)`.
    pub fn lambda_min(&self) -> f64 {
        let c = self.lambda_max();
        let mut shifted = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                shifted.data[i][j] = -shifted.data[i][j];
            }
            shifted.data[i][i] += c;
        }
        c - shifted.lambda_max()
    }
}

/// Choice of the one-homogeneous part `E₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DensityKind {
    /// `E₁(z) = |z|`.
    Euclidean,
    /// `E₁(z) = √(zᵀAz)` for a symmetric positive-definite `A`.
    Anisotropic(SymMatrix),
}

/// Parameters of the composite density `E = E₁ + E_p`.
///
/// `lambda`, `Lambda`, `K` are the structural constants entering the
/// mollified bounds: lower/upper ellipticity and the uniform bound on
/// `|∇E₁|`. They default to `min(p−1,1)/2`, `2`, `2` for the canonical
/// densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub n: usize,
    pub p: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub k_bound: f64,
    pub density_kind: DensityKind,
}

impl EnergyModel {
    pub fn canonical(n: usize, p: f64) -> Result<Self, ModelError> {
        Self::new(n, p, (p - 1.0).min(1.0) / 2.0, 2.0, 2.0, DensityKind::Euclidean)
    }

    pub fn new(
        n: usize,
        p: f64,
        lambda: f64,
        big_lambda: f64,
        k_bound: f64,
        density_kind: DensityKind,
    ) -> Result<Self, ModelError> {
        if !(1..=3).contains(&n) {
            return Err(ModelError::BadDimension(n));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(ModelError::ExponentTooSmall(p));
        }
        if !(lambda > 0.0 && big_lambda >= lambda) {
            return Err(ModelError::BadEllipticity(lambda, big_lambda));
        }
        if !(k_bound > 0.0) {
            return Err(ModelError::BadGradientBound(k_bound));
        }
        if let DensityKind::Anisotropic(a) = &density_kind {
            if a.n != n || !a.is_symmetric() || a.lambda_min() <= 0.0 {
                return Err(ModelError::NotSpd);
            }
            let need = a.lambda_max().sqrt();
            if k_bound < need {
                return Err(ModelError::GradientBoundTooSmall { k: k_bound, need });
            }
        }
        Ok(EnergyModel { n, p, lambda, big_lambda, k_bound, density_kind })
    }

    /// Subcritical threshold `2n/(n+2)`.
    pub fn subcritical_threshold(&self) -> f64 {
        2.0 * self.n as f64 / (self.n as f64 + 2.0)
    }

    /// True iff `n ≥ 3` and `1 < p ≤ 2n/(n+2)`.
    pub fn is_subcritical(&self) -> bool {
        self.n >= 3 && self.p <= self.subcritical_threshold()
    }

    /// One-homogeneous part `E₁(z)`.
    pub fn eval_e1(&self, z: &[f64]) -> f64 {
        match &self.density_kind {
            DensityKind::Euclidean => norm(z),
            DensityKind::Anisotropic(a) => a.quadratic_form(z).max(0.0).sqrt(),
        }
    }

    /// Power part `E_p(z) = |z|^p / p`.
    pub fn eval_ep(&self, z: &[f64]) -> f64 {
        norm(z).powf(self.p) / self.p
    }

    /// Full density `E(z) = E₁(z) + E_p(z)`; nonnegative, zero iff `z = 0`.
    pub fn eval_energy(&self, z: &[f64]) -> f64 {
        self.eval_e1(z) + self.eval_ep(z)
    }

    /// `∇E_p(z) = |z|^{p−2} z` (extended by 0 at the origin for p > 1).
    pub fn grad_ep(&self, z: &[f64]) -> Vec<f64> {
        let r = norm(z);
        if r == 0.0 {
            return vec![0.0; z.len()];
        }
        let s = r.powf(self.p - 2.0);
        z.iter().map(|&zi| s * zi).collect()
    }

    /// Subdifferential of `E₁` at `z`: a singleton gradient away from the
    /// origin, the dual unit ball at the origin.
    pub fn subdifferential_e1(&self, z: &[f64]) -> SubgradientSet {
        let e1 = self.eval_e1(z);
        if e1 == 0.0 {
            return SubgradientSet::DualBall { kind: self.density_kind.clone() };
        }
        let v = match &self.density_kind {
            DensityKind::Euclidean => z.iter().map(|&zi| zi / e1).collect(),
            DensityKind::Anisotropic(a) => a.apply(z).iter().map(|&w| w / e1).collect(),
        };
        SubgradientSet::Singleton(v)
    }

    /// Hessian of `E₁` at `z ≠ 0` (exact formula).
    pub fn hess_e1(&self, z: &[f64]) -> SymMatrix {
        let nn = self.n;
        let mut h = SymMatrix { n: nn, data: [[0.0; 3]; 3] };
        match &self.density_kind {
            DensityKind::Euclidean => {
                let r = norm(z);
                for i in 0..nn {
                    for j in 0..nn {
                        let kron = if i == j { 1.0 } else { 0.0 };
                        h.data[i][j] = (kron - z[i] * z[j] / (r * r)) / r;
                    }
                }
            }
            DensityKind::Anisotropic(a) => {
                let s = a.quadratic_form(z).sqrt();
                let az = a.apply(z);
                for i in 0..nn {
                    for j in 0..nn {
                        h.data[i][j] = a.data[i][j] / s - az[i] * az[j] / (s * s * s);
                    }
                }
            }
        }
        h
    }
}

/// The subdifferential `∂E₁(z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SubgradientSet {
    /// `{∇E₁(z)}` for `z ≠ 0`.
    Singleton(Vec<f64>),
    /// At the origin: the dual unit ball of the density
    /// (`{ζ : |ζ| ≤ 1}` Euclidean, `{ζ : ζᵀA⁻¹ζ ≤ 1}` anisotropic).
    DualBall { kind: DensityKind },
}

impl SubgradientSet {
    /// Membership test, up to `tol`.
    pub fn contains(&self, zeta: &[f64], tol: f64) -> bool {
        match self {
            SubgradientSet::Singleton(v) => {
                v.iter().zip(zeta).all(|(a, b)| (a - b).abs() <= tol)
            }
            SubgradientSet::DualBall { kind } => match kind {
                DensityKind::Euclidean => norm(zeta) <= 1.0 + tol,
                // ζᵀ A⁻¹ ζ ≤ 1 characterizes subgradients of √(zᵀAz) at 0;
                // solve A x = ζ by Cramer (n ≤ 3) via the adjugate-free path:
                // smallest systems, Gaussian elimination.
                DensityKind::Anisotropic(a) => {
                    let x = solve_spd(a, zeta);
                    dot(&x, zeta) <= 1.0 + tol
                }
            },
        }
    }

    /// A representative element (the gradient, or the ball center).
    pub fn representative(&self, dim: usize) -> Vec<f64> {
        match self {
            SubgradientSet::Singleton(v) => v.clone(),
            SubgradientSet::DualBall { .. } => vec![0.0; dim],
        }
    }

    /// Largest Euclidean norm over the set.
    pub fn sup_norm(&self) -> f64 {
        match self {
            SubgradientSet::Singleton(v) => norm(v),
            SubgradientSet::DualBall { kind } => match kind {
                DensityKind::Euclidean => 1.0,
                DensityKind::Anisotropic(a) => a.lambda_max().sqrt(),
            },
        }
    }
}

fn solve_spd(a: &SymMatrix, b: &[f64]) -> Vec<f64> {
    let n = a.n;
    let mut m = [[0.0f64; 4]; 3];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a.data[i][j];
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r1, &r2| m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(z: &[f64]) -> f64 {
    dot(z, z).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(p: f64) -> EnergyModel {
        EnergyModel::canonical(2, p).unwrap()
    }

    #[test]
    fn energy_at_origin_is_zero() {
        assert_eq!(model(1.5).eval_energy(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn energy_unit_vector() {
        let e = model(1.5).eval_energy(&[1.0, 0.0]);
        assert!((e - (1.0 + 1.0 / 1.5)).abs() < 1e-15);
    }

    #[test]
    fn energy_three_four() {
        // E(z) = 5 + 5^{1.2}/1.2, checked against a high-precision scalar
        // evaluation: 5^{1.2} = exp(1.2 ln 5).
        let e = model(1.2).eval_energy(&[3.0, 4.0]);
        let expect = 5.0 + (1.2 * 5f64.ln()).exp() / 1.2;
        assert!((e - expect).abs() < 1e-12);
        assert!(e > 0.0);
    }

    #[test]
    fn subdifferential_away_from_origin() {
        let m = model(1.5);
        let s = m.subdifferential_e1(&[3.0, 4.0]);
        assert_eq!(s, SubgradientSet::Singleton(vec![0.6, 0.8]));
    }

    #[test]
    fn subdifferential_at_origin_is_dual_ball() {
        let m = model(1.5);
        let s = m.subdifferential_e1(&[0.0, 0.0]);
        assert!(matches!(s, SubgradientSet::DualBall { .. }));
        assert!(s.contains(&[0.6, 0.8], 1e-12));
        assert!(!s.contains(&[0.9, 0.8], 1e-12));
        assert_eq!(s.sup_norm(), 1.0);
    }

    #[test]
    fn euler_identity_for_returned_subgradients() {
        let m = model(1.5);
        let z = [3.0, 4.0];
        let zeta = m.subdifferential_e1(&z).representative(2);
        assert!((dot(&zeta, &z) - m.eval_e1(&z)).abs() < 1e-14);
        assert!(norm(&zeta) <= m.k_bound);
    }

    fn aniso_model() -> EnergyModel {
        let a = SymMatrix { n: 2, data: [[1.5, 0.3, 0.0], [0.3, 0.75, 0.0], [0.0; 3]] };
        EnergyModel::new(2, 1.3, 0.05, 2.0, 2.0, DensityKind::Anisotropic(a)).unwrap()
    }

    #[test]
    fn anisotropic_euler_identity_and_k_bound() {
        let m = aniso_model();
        for z in [[1.0f64, 0.0], [0.2, -1.7], [3.0, 4.0]] {
            let zeta = m.subdifferential_e1(&z).representative(2);
            assert!((dot(&zeta, &z) - m.eval_e1(&z)).abs() < 1e-12);
            assert!(norm(&zeta) <= m.k_bound + 1e-12);
        }
    }

    #[test]
    fn anisotropic_dual_ball_membership() {
        let m = aniso_model();
        let s = m.subdifferential_e1(&[0.0, 0.0]);
        // ∇E₁ from nearby points must lie in the dual ball.
        for z in [[1.0f64, 0.4], [-0.3, 0.9]] {
            let zeta = m.subdifferential_e1(&z).representative(2);
            assert!(s.contains(&zeta, 1e-10));
        }
        assert!(!s.contains(&[2.0, 0.0], 1e-10));
    }

    #[test]
    fn e1_hessian_order_bounds_euclidean() {
        // 0 ≤ ∇²E₁ ≤ (K/|z|) id, symbolically: eigenvalues are {0, 1/|z|}.
        let m = model(1.5);
        let z = [0.6, -1.1];
        let h = m.hess_e1(&z);
        let r = norm(&z);
        // radial eigenvector z/|z| -> 0, tangential -> 1/r
        let zu = [z[0] / r, z[1] / r];
        let hz = [
            h.data[0][0] * zu[0] + h.data[0][1] * zu[1],
            h.data[1][0] * zu[0] + h.data[1][1] * zu[1],
        ];
        assert!(norm(&hz) < 1e-14);
        let tu = [-zu[1], zu[0]];
        let ht = [
            h.data[0][0] * tu[0] + h.data[0][1] * tu[1],
            h.data[1][0] * tu[0] + h.data[1][1] * tu[1],
        ];
        assert!((norm(&ht) - 1.0 / r).abs() < 1e-13);
        assert!(1.0 / r <= m.k_bound / r);
    }

    #[test]
    fn e1_hessian_order_bounds_anisotropic_sampled() {
        let m = aniso_model();
        let mut worst_low = f64::INFINITY;
        let mut worst_high = f64::INFINITY;
        for i in 0..200 {
            let t = i as f64 * 0.1 + 0.05;
            let z = [t.cos() * (0.2 + t * 0.05), t.sin() * (0.2 + t * 0.05)];
            let h = m.hess_e1(&z);
            let hm = SymMatrix { n: 2, data: h.data };
            worst_low = worst_low.min(hm.lambda_min());
            worst_high = worst_high.min(m.k_bound / norm(&z) - hm.lambda_max());
        }
        assert!(worst_low >= -1e-12, "Hessian must be PSD, got min eig {worst_low}");
        assert!(worst_high >= -1e-12, "upper order bound violated by {worst_high}");
    }

    #[test]
    fn validation_errors() {
        assert!(EnergyModel::canonical(2, 0.9).is_err());
        assert!(EnergyModel::canonical(4, 1.5).is_err());
        assert!(EnergyModel::new(2, 1.5, 0.0, 1.0, 1.0, DensityKind::Euclidean).is_err());
        assert!(EnergyModel::new(2, 1.5, 2.0, 1.0, 1.0, DensityKind::Euclidean).is_err());
        // Anisotropic K must dominate sqrt(lambda_max(A)).
        let a = SymMatrix { n: 2, data: [[9.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]] };
        let err = EnergyModel::new(2, 1.5, 0.1, 2.0, 2.0, DensityKind::Anisotropic(a));
        assert!(matches!(err, Err(ModelError::GradientBoundTooSmall { .. })));
    }

    #[test]
    fn subcritical_flag() {
        assert!(EnergyModel::canonical(3, 1.1).unwrap().is_subcritical());
        assert!(!EnergyModel::canonical(3, 1.3).unwrap().is_subcritical());
        assert!(!EnergyModel::canonical(2, 1.1).unwrap().is_subcritical());
    }
}
