//! Mollified energy densities `E^ε = ρ_ε ∗ E` as radial tables.
//!
//! For a radial density and the radial bump mollifier the convolution is
//! radial, so it is tabulated as a profile over `r = |z|` together with its
//! first two radial derivatives. Every quantity is reduced to a 1D or 2D
//! quadrature:
//!
//! * value: `∫ ρ(w) e(|r e₁ − εw|) dw`
//! * slope: `ε⁻¹ ∫ (∂₁ρ)(w) e(|r e₁ − εw|) dw` (derivative moved onto ρ, so
//!   the integrand stays bounded even for the one-homogeneous part)
//! * curvature: `ε⁻¹ ∫ (∂₁ρ)(w) (∂₁e)(r e₁ − εw) dw`
//!
//! Between table nodes the profile is the piecewise quintic Hermite
//! interpolant of (value, slope, curvature); the returned gradient and
//! Hessian are the exact first and second derivatives of that interpolant,
//! so evaluation, gradient, and Hessian are mutually consistent to
//! interpolation accuracy by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{norm, DensityKind, EnergyModel, SymMatrix};
use crate::quad::{integrate, integrate_vec, QuadError};

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("mollification radius must lie in (0,1), got {0}")]
    BadEps(f64),
    #[error("radial tables require the Euclidean density; anisotropic E1 is only supported exactly")]
    NotRadial,
    #[error("query |z| = {r:.6} exceeds the table range r_max = {r_max:.6}")]
    OutOfTable { r: f64, r_max: f64 },
    #[error("quadrature failed while tabulating the density: {0}")]
    Quad(#[from] QuadError),
}

/// Quadrature control for the table build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    /// base absolute tolerance, scaled per kernel magnitude
    pub abs_tol: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { abs_tol: 1e-10 }
    }
}

/// One tabulated radial profile: value and its first two radial derivatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RadialProfile {
    value: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

/// Which additive part of the density `E = E₁ + E_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityPart {
    One,
    Power,
    Full,
}

/// Radial table of `E^ε` and its first two radial derivatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollifiedDensity {
    pub eps: f64,
    pub model: EnergyModel,
    pub r_max: f64,
    pub quad_spec: QuadSpec,
    /// `∫ ρ(w) |w| dw`; fixes `E_{1,ε}(0) = ε·c_ρ`
    pub c_rho: f64,
    dr: f64,
    one: RadialProfile,
    pow: RadialProfile,
}

/// Quintic Hermite basis on [0,1] and its first two derivatives.
fn hermite5(s: f64) -> [[f64; 6]; 3] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h = [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        0.5 * s3 - s4 + 0.5 * s5,
    ];
    let dh = [
        -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
        1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
        s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4,
        30.0 * s2 - 60.0 * s3 + 30.0 * s4,
        -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
        1.5 * s2 - 4.0 * s3 + 2.5 * s4,
    ];
    let d2h = [
        -60.0 * s + 180.0 * s2 - 120.0 * s3,
        -36.0 * s + 96.0 * s2 - 60.0 * s3,
        1.0 - 9.0 * s + 18.0 * s2 - 10.0 * s3,
        60.0 * s - 180.0 * s2 + 120.0 * s3,
        -24.0 * s + 84.0 * s2 - 60.0 * s3,
        3.0 * s - 12.0 * s2 + 10.0 * s3,
    ];
    [h, dh, d2h]
}

/// Unit-sphere surface measure in `R^n`.
fn sphere_surface(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => unreachable!("dimension is validated at model construction"),
    }
}

fn bump(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

fn bump_deriv(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let d = 1.0 - t * t;
        bump(t) * (-2.0 * t / (d * d))
    }
}

/// The six raw kernels at one table radius:
/// `[value₁, slope₁, curv₁, value_p, slope_p, curv_p]`.
fn compute_node(
    r: f64,
    eps: f64,
    p: f64,
    n: usize,
    c_norm: f64,
    tol: [f64; 6],
) -> Result<[f64; 6], QuadError> {
    let inv_eps = 1.0 / eps;
    if n == 1 {
        let f = |w: f64| -> [f64; 6] {
            let t = w.abs();
            let rho = c_norm * bump(t);
            let drho = c_norm * bump_deriv(t) * w.signum();
            let v = r - eps * w;
            let u = v.abs();
            let e1 = u;
            let de1 = v.signum();
            let ep = u.powf(p) / p;
            let dep = if u == 0.0 { 0.0 } else { u.powf(p - 1.0) * v.signum() };
            [
                rho * e1,
                inv_eps * drho * e1,
                inv_eps * drho * de1,
                rho * ep,
                inv_eps * drho * ep,
                inv_eps * drho * dep,
            ]
        };
        let mut splits = vec![0.0];
        let kink = r * inv_eps;
        if kink < 1.0 {
            splits.push(kink);
        }
        return integrate_vec(f, -1.0, 1.0, tol, &splits);
    }

    // n >= 2: polar reduction over (t, phi) in [0,1] x [0,pi] with measure
    // omega_{n-2} t^{n-1} sin^{n-2}(phi).
    let omega = sphere_surface(n - 1);
    let pow_sin = (n - 2) as i32;
    let inner_tol = {
        let mut t = tol;
        for v in t.iter_mut() {
            *v *= 0.2;
        }
        t
    };
    let outer = |t: f64| -> [f64; 6] {
        if t == 0.0 {
            return [0.0; 6];
        }
        let rho = c_norm * bump(t);
        let drho = c_norm * bump_deriv(t);
        let weight_t = omega * t.powi((n - 1) as i32);
        if rho == 0.0 && drho == 0.0 {
            return [0.0; 6];
        }
        let inner = |phi: f64| -> [f64; 6] {
            let (sin_phi, cos_phi) = phi.sin_cos();
            let a = r - eps * t * cos_phi;
            let b = eps * t * sin_phi;
            let u = (a * a + b * b).sqrt();
            let m = if pow_sin == 0 { 1.0 } else { sin_phi.powi(pow_sin) };
            let e1 = u;
            let ep = u.powf(p) / p;
            // radial derivative kernels: ∂₁E_s(v) = e_s'(u)·v₁/u
            let q = if u == 0.0 { 0.0 } else { a / u };
            let de1 = q;
            let dep = if u == 0.0 { 0.0 } else { u.powf(p - 1.0) * q };
            [
                m * rho * e1,
                m * inv_eps * drho * cos_phi * e1,
                m * inv_eps * drho * cos_phi * de1,
                m * rho * ep,
                m * inv_eps * drho * cos_phi * ep,
                m * inv_eps * drho * cos_phi * dep,
            ]
        };
        let vals = integrate_vec(inner, 0.0, std::f64::consts::PI, inner_tol, &[])
            .unwrap_or([f64::NAN; 6]);
        let mut out = [0.0; 6];
        for k in 0..6 {
            out[k] = weight_t * vals[k];
        }
        out
    };
    let mut splits = Vec::new();
    let kink = r * inv_eps;
    if kink < 1.0 {
        splits.push(kink);
    }
    let mut tol_outer = tol;
    for v in tol_outer.iter_mut() {
        *v *= 4.0; // the inner integral already works at a tighter tolerance
    }
    integrate_vec(outer, 0.0, 1.0, tol_outer, &splits)
}

impl MollifiedDensity {
    /// Number of table nodes.
    pub fn table_len(&self) -> usize {
        self.one.value.len()
    }

    /// Table radii (uniform spacing ≤ ε/16).
    pub fn r_grid(&self) -> Vec<f64> {
        (0..self.table_len()).map(|i| i as f64 * self.dr).collect()
    }

    pub fn spacing(&self) -> f64 {
        self.dr
    }

    fn profile(&self, part: DensityPart) -> (&RadialProfile, Option<&RadialProfile>) {
        match part {
            DensityPart::One => (&self.one, None),
            DensityPart::Power => (&self.pow, None),
            DensityPart::Full => (&self.one, Some(&self.pow)),
        }
    }

    /// Tabulated node values `(value, slope, curvature)` for a part.
    pub fn node_values(&self, part: DensityPart, idx: usize) -> (f64, f64, f64) {
        let (a, b) = self.profile(part);
        let mut v = (a.value[idx], a.d1[idx], a.d2[idx]);
        if let Some(b) = b {
            v = (v.0 + b.value[idx], v.1 + b.d1[idx], v.2 + b.d2[idx]);
        }
        v
    }

    /// Interpolated `(value, slope, curvature)` at radius `r ∈ [0, r_max]`,
    /// with quadratic extension beyond the table (used by the solver for
    /// transient Newton iterates).
    pub fn profile_extended(&self, part: DensityPart, r: f64) -> (f64, f64, f64) {
        debug_assert!(r >= 0.0);
        let last = self.table_len() - 1;
        if r >= self.r_max {
            let (v, d1, d2) = self.node_values(part, last);
            let x = r - self.r_max;
            return (v + d1 * x + 0.5 * d2 * x * x, d1 + d2 * x, d2);
        }
        let idx = ((r / self.dr) as usize).min(last - 1);
        let s = (r - idx as f64 * self.dr) / self.dr;
        let (v0, d10, d20) = self.node_values(part, idx);
        let (v1, d11, d21) = self.node_values(part, idx + 1);
        let [h, dh, d2h] = hermite5(s);
        let dr = self.dr;
        let coef = [v0, dr * d10, dr * dr * d20, v1, dr * d11, dr * dr * d21];
        let mut out = [0.0; 3];
        for k in 0..6 {
            out[0] += coef[k] * h[k];
            out[1] += coef[k] * dh[k];
            out[2] += coef[k] * d2h[k];
        }
        (out[0], out[1] / dr, out[2] / (dr * dr))
    }

    fn check_range(&self, r: f64) -> Result<(), DensityError> {
        if r > self.r_max {
            Err(DensityError::OutOfTable { r, r_max: self.r_max })
        } else {
            Ok(())
        }
    }

    /// `E^ε(z)` (or one of its parts).
    pub fn eval_part(&self, part: DensityPart, z: &[f64]) -> Result<f64, DensityError> {
        let r = norm(z);
        self.check_range(r)?;
        Ok(self.profile_extended(part, r).0)
    }

    /// `E^ε(z)`.
    pub fn eval(&self, z: &[f64]) -> Result<f64, DensityError> {
        self.eval_part(DensityPart::Full, z)
    }

    /// `∇E^ε(z) = g'(|z|)·z/|z|`, the zero vector at the origin.
    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>, DensityError> {
        self.grad_part(DensityPart::Full, z)
    }

    pub fn grad_part(&self, part: DensityPart, z: &[f64]) -> Result<Vec<f64>, DensityError> {
        let r = norm(z);
        self.check_range(r)?;
        if r == 0.0 {
            return Ok(vec![0.0; z.len()]);
        }
        let (_, d1, _) = self.profile_extended(part, r);
        Ok(z.iter().map(|&zi| d1 * zi / r).collect())
    }

    /// `∇²E^ε(z) = g''(r)·P_z + (g'(r)/r)·(id − P_z)`, and `g''(0)·id` at the
    /// origin.
    pub fn hess(&self, z: &[f64]) -> Result<SymMatrix, DensityError> {
        let r = norm(z);
        self.check_range(r)?;
        let n = self.model.n;
        let (rad, tan) = self.eigencoeffs(DensityPart::Full, r);
        let mut h = SymMatrix { n, data: [[0.0; 3]; 3] };
        if r == 0.0 {
            for i in 0..n {
                h.data[i][i] = rad;
            }
            return Ok(h);
        }
        for i in 0..n {
            for j in 0..n {
                let proj = z[i] * z[j] / (r * r);
                let kron = if i == j { 1.0 } else { 0.0 };
                h.data[i][j] = rad * proj + tan * (kron - proj);
            }
        }
        Ok(h)
    }

    /// Radial and tangential Hessian eigenvalues `(g''(r), g'(r)/r)` at
    /// radius r; both equal `g''(0)` at the origin.
    pub fn eigencoeffs(&self, part: DensityPart, r: f64) -> (f64, f64) {
        let (_, d1, d2) = self.profile_extended(part, r);
        if r < 1e-14 * self.dr.max(1e-300) {
            let (_, _, d20) = self.node_values_full0(part);
            return (d20, d20);
        }
        (d2, d1 / r)
    }

    fn node_values_full0(&self, part: DensityPart) -> (f64, f64, f64) {
        self.node_values(part, 0)
    }

    /// Scalar flux multiplier `φ(r) = g'(r)/r` (`g''(0)` at the origin),
    /// extended beyond the table. Nonnegative for the convex profile.
    pub fn flux_multiplier(&self, r: f64) -> f64 {
        self.eigencoeffs(DensityPart::Full, r).1
    }
}

/// Build the radial table by quadrature against the bump mollifier
/// `ρ(w) = c·exp(−1/(1−|w|²))` on the unit ball.
pub fn mollify_density(
    model: &EnergyModel,
    eps: f64,
    quad_spec: QuadSpec,
    r_max: f64,
) -> Result<MollifiedDensity, DensityError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DensityError::BadEps(eps));
    }
    if model.density_kind != DensityKind::Euclidean {
        return Err(DensityError::NotRadial);
    }
    let n = model.n;
    let p = model.p;
    let surface = sphere_surface(n);

    // Normalize the bump: ∫ρ = surface·c_norm·∫₀¹ bump(t) t^{n-1} dt = 1.
    let moment = |k: i32| -> Result<f64, QuadError> {
        integrate(|t| bump(t) * t.powi(k), 0.0, 1.0, 1e-14, &[])
    };
    let mass = surface * moment((n - 1) as i32)?;
    let c_norm = 1.0 / mass;
    let c_rho = surface * c_norm * moment(n as i32)?;

    let target_dr = eps / 16.0;
    let steps = (r_max / target_dr).ceil() as usize;
    let dr = r_max / steps as f64;
    let len = steps + 1;

    let mut one = RadialProfile { value: vec![0.0; len], d1: vec![0.0; len], d2: vec![0.0; len] };
    let mut pow = RadialProfile { value: vec![0.0; len], d1: vec![0.0; len], d2: vec![0.0; len] };

    let base = quad_spec.abs_tol;
    for i in 0..len {
        let r = i as f64 * dr;
        // Tolerances scaled to each kernel's magnitude.
        let s_v1 = 1.0 + r;
        let s_vp = 1.0 + (r + eps).powf(p);
        let s_d2 = 1.0 + (eps * eps + r * r).powf(p / 2.0 - 1.0) + 1.0 / (eps * eps + r * r).sqrt();
        let tol = [
            base * s_v1,
            base * 2.0,
            base * s_d2,
            base * s_vp,
            base * (1.0 + (r + eps).powf(p - 1.0)),
            base * s_d2,
        ];
        let vals = compute_node(r, eps, p, n, c_norm, tol)?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(DensityError::Quad(QuadError::NonConvergence {
                a: r,
                b: r,
                err: f64::NAN,
                tol: base,
            }));
        }
        one.value[i] = vals[0];
        one.d1[i] = vals[1];
        one.d2[i] = vals[2];
        pow.value[i] = vals[3];
        pow.d1[i] = vals[4];
        pow.d2[i] = vals[5];
    }
    // Radial symmetry forces a vanishing slope at the origin; the quadrature
    // returns it only up to roundoff, so pin it exactly.
    one.d1[0] = 0.0;
    pow.d1[0] = 0.0;

    Ok(MollifiedDensity { eps, model: model.clone(), r_max, quad_spec, c_rho, dr, one, pow })
}

/// Sampling plan for [`verify_structural`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { count: 10_000, radius: 3.0, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityReport {
    pub inequality: String,
    pub samples: usize,
    pub worst_margin: f64,
    pub pass: bool,
}

/// Sampled certificates of the structural inequalities of `E^ε`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub eps: f64,
    pub p: f64,
    pub n: usize,
    pub tolerance: f64,
    pub entries: Vec<InequalityReport>,
    pub pass: bool,
}

impl StructureReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.worst_margin).fold(f64::INFINITY, f64::min)
    }
}

fn sample_in_ball(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..radius)).collect();
        if norm(&v) <= radius {
            return v;
        }
    }
}

/// Verify the gradient bound, eigenvalue sandwich, strong monotonicity (for
/// the power part and the full density), and the zero-anchored monotonicity
/// on a random sample. Failures are reported, not raised.
pub fn verify_structural(
    md: &MollifiedDensity,
    model: &EnergyModel,
    samples: &SampleSpec,
    tolerance: f64,
) -> StructureReport {
    let mut rng = ChaCha8Rng::seed_from_u64(samples.seed);
    let n = model.n;
    let (lam, big_lam, kb, p, eps) = (model.lambda, model.big_lambda, model.k_bound, model.p, md.eps);

    let mut grad_bound = f64::INFINITY;
    let mut sandwich = f64::INFINITY;
    let mut mono_pow = f64::INFINITY;
    let mut mono_full = f64::INFINITY;
    let mut anchor = f64::INFINITY;

    for _ in 0..samples.count {
        let z = sample_in_ball(&mut rng, n, samples.radius);
        let w = sample_in_ball(&mut rng, n, samples.radius);
        let rz = norm(&z);
        let rw = norm(&w);

        // |∇E^ε(z)| ≤ Λ(ε+|z|²)^{(p−1)/2} + K
        let gz = md.grad(&z).expect("sample inside table");
        grad_bound = grad_bound
            .min(big_lam * (eps + rz * rz).powf((p - 1.0) / 2.0) + kb - norm(&gz));

        // λ(ε²+|z|²)^{p/2−1} ≤ eig(∇²E^ε(z)) ≤ Λ(ε²+|z|²)^{p/2−1} + K/√(ε²+|z|²)
        let (rad, tan) = md.eigencoeffs(DensityPart::Full, rz);
        let lo = lam * (eps * eps + rz * rz).powf(p / 2.0 - 1.0);
        let hi = big_lam * (eps * eps + rz * rz).powf(p / 2.0 - 1.0)
            + kb / (eps * eps + rz * rz).sqrt();
        let min_eig = if n == 1 { rad } else { rad.min(tan) };
        let max_eig = if n == 1 { rad } else { rad.max(tan) };
        sandwich = sandwich.min(min_eig - lo).min(hi - max_eig);

        // strong monotonicity of the power part and the full density
        let diff: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a - b).collect();
        let d2 = diff.iter().map(|x| x * x).sum::<f64>();
        let rhs = lam * (eps * eps + rz * rz + rw * rw).powf(p / 2.0 - 1.0) * d2;
        let gpz = md.grad_part(DensityPart::Power, &z).unwrap();
        let gpw = md.grad_part(DensityPart::Power, &w).unwrap();
        let pair_pow: f64 = gpz.iter().zip(&gpw).zip(&diff).map(|((a, b), d)| (a - b) * d).sum();
        mono_pow = mono_pow.min(pair_pow - rhs);
        let gw = md.grad(&w).unwrap();
        let pair_full: f64 = gz.iter().zip(&gw).zip(&diff).map(|((a, b), d)| (a - b) * d).sum();
        mono_full = mono_full.min(pair_full - rhs);

        // zero-anchored form: ⟨∇E^ε(z) − ∇E^ε(0) | z⟩ ≥ λ(|z|^p − ε^p)
        let lhs: f64 = gz.iter().zip(&z).map(|(a, b)| a * b).sum();
        anchor = anchor.min(lhs - lam * (rz.powf(p) - eps.powf(p)));
    }

    let entry = |name: &str, worst: f64| InequalityReport {
        inequality: name.to_string(),
        samples: samples.count,
        worst_margin: worst,
        pass: worst >= -tolerance,
    };
    let entries = vec![
        entry("gradient_bound", grad_bound),
        entry("eigenvalue_sandwich", sandwich),
        entry("strong_monotonicity_power", mono_pow),
        entry("strong_monotonicity_full", mono_full),
        entry("zero_anchored_monotonicity", anchor),
    ];
    let pass = entries.iter().all(|e| e.pass);
    StructureReport { eps, p, n, tolerance, entries, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::dot;

    fn canonical(n: usize, p: f64) -> EnergyModel {
        EnergyModel::canonical(n, p).unwrap()
    }

    fn table(n: usize, p: f64, eps: f64) -> MollifiedDensity {
        mollify_density(&canonical(n, p), eps, QuadSpec::default(), 4.0).unwrap()
    }

    #[test]
    fn hermite_basis_identities() {
        // Endpoint data reproduction and exactness on a quintic.
        let [h0, dh0, d2h0] = hermite5(0.0);
        assert_eq!(h0[0], 1.0);
        assert_eq!(dh0[1], 1.0);
        assert_eq!(d2h0[2], 1.0);
        let [h1, dh1, d2h1] = hermite5(1.0);
        assert_eq!(h1[3], 1.0);
        assert_eq!(dh1[4], 1.0);
        assert_eq!(d2h1[5], 1.0);
        // f(s) = s^5 on [0,1]: data (0,0,0) and (1,5,20).
        for s in [0.25, 0.5, 0.75] {
            let [h, dh, d2h] = hermite5(s);
            let f = h[3] + 5.0 * h[4] + 20.0 * h[5];
            let df = dh[3] + 5.0 * dh[4] + 20.0 * dh[5];
            let d2f = d2h[3] + 5.0 * d2h[4] + 20.0 * d2h[5];
            assert!((f - s.powi(5)).abs() < 1e-14);
            assert!((df - 5.0 * s.powi(4)).abs() < 1e-13);
            assert!((d2f - 20.0 * s.powi(3)).abs() < 1e-13);
        }
    }

    #[test]
    fn e1_part_at_origin_matches_first_moment() {
        // E_{1,ε}(0) = ε·c_ρ with c_ρ = ∫ρ(w)|w|dw, which the build computes
        // by an independent 1D moment quadrature.
        for n in [1usize, 2, 3] {
            let md = mollify_density(&canonical(n, 1.3), 0.1, QuadSpec::default(), 1.0).unwrap();
            let v = md.eval_part(DensityPart::One, &vec![0.0; n]).unwrap();
            assert!(
                (v - 0.1 * md.c_rho).abs() < 1e-9,
                "n={n}: {v} vs {}",
                0.1 * md.c_rho
            );
            assert!(md.c_rho > 0.0 && md.c_rho < 1.0);
        }
    }

    #[test]
    fn jensen_domination_at_table_radii() {
        // E^ε(z) ≥ E(z) for convex E, at every table radius.
        for n in [1usize, 2, 3] {
            let model = canonical(n, 1.2);
            let md = mollify_density(&model, 0.15, QuadSpec::default(), 3.0).unwrap();
            for (i, r) in md.r_grid().iter().enumerate() {
                let (g, _, _) = md.node_values(DensityPart::Full, i);
                let mut z = vec![0.0; n];
                z[0] = *r;
                let exact = model.eval_energy(&z);
                assert!(g >= exact - 1e-10, "n={n} r={r}: {g} < {exact}");
            }
        }
    }

    #[test]
    fn jensen_gap_decays_with_eps() {
        let model = canonical(2, 1.3);
        let z = [0.7, -0.4];
        let exact = model.eval_energy(&z);
        let mut prev = f64::INFINITY;
        for eps in [0.4, 0.2, 0.1, 0.05] {
            let md = mollify_density(&model, eps, QuadSpec::default(), 2.0).unwrap();
            let gap = md.eval(&z).unwrap() - exact;
            let rate = (1.0 + model.p * 2f64.powf(model.p - 1.0) + model.k_bound) * eps;
            assert!(gap >= -1e-10 && gap <= rate, "eps={eps}: gap {gap} rate {rate}");
            assert!(gap <= prev + 1e-12, "gap must shrink with eps");
            prev = gap;
        }
    }

    #[test]
    fn slope_table_is_consistent_with_value_table() {
        let md = table(2, 1.3, 0.1);
        let h = 1e-6;
        for r in [0.02, 0.09, 0.35, 1.2, 3.1] {
            let f = |x: f64| md.profile_extended(DensityPart::Full, x).0;
            let fd = (f(r + h) - f(r - h)) / (2.0 * h);
            let d1 = md.profile_extended(DensityPart::Full, r).1;
            assert!((fd - d1).abs() < 1e-8 * (1.0 + d1.abs()), "r={r}: {fd} vs {d1}");
        }
    }

    #[test]
    fn slope_vanishes_at_origin() {
        let md = table(2, 1.3, 0.1);
        assert_eq!(md.node_values(DensityPart::Full, 0).1, 0.0);
        let g = md.grad(&[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn value_table_is_convex_nondecreasing() {
        let md = table(2, 1.1, 0.1);
        let grid = md.r_grid();
        let mut prev_sec = -f64::INFINITY;
        for i in 1..grid.len() {
            let (a, _, _) = md.node_values(DensityPart::Full, i - 1);
            let (b, _, _) = md.node_values(DensityPart::Full, i);
            assert!(b >= a - 1e-12, "profile must be nondecreasing");
            let sec = (b - a) / md.spacing();
            assert!(sec >= prev_sec - 1e-9, "secants must be nondecreasing (convexity)");
            prev_sec = sec;
        }
    }

    #[test]
    fn interpolant_matches_fresh_quadrature_off_grid() {
        // Independent oracle: direct quadrature at radii that are not table
        // nodes, against the interpolated profile.
        let model = canonical(2, 1.3);
        let eps = 0.1;
        let md = mollify_density(&model, eps, QuadSpec::default(), 2.0).unwrap();
        let c_norm = {
            let mass = sphere_surface(2) * integrate(|t| bump(t) * t, 0.0, 1.0, 1e-14, &[]).unwrap();
            1.0 / mass
        };
        for r in [0.013, 0.0891, 0.777, 1.531] {
            let tol = [1e-12; 6];
            let direct = compute_node(r, eps, model.p, 2, c_norm, tol).unwrap();
            let (v1, d11, _) = md.profile_extended(DensityPart::One, r);
            let (vp, d1p, _) = md.profile_extended(DensityPart::Power, r);
            assert!((v1 - direct[0]).abs() < 1e-8, "r={r} value1 {} vs {}", v1, direct[0]);
            assert!((d11 - direct[1]).abs() < 1e-7, "r={r} slope1");
            assert!((vp - direct[3]).abs() < 1e-8, "r={r} valuep");
            assert!((d1p - direct[4]).abs() < 1e-7, "r={r} slopep");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_eval() {
        let md = table(2, 1.2, 0.1);
        let z = [0.3, -0.2];
        let h = 1e-5;
        let g = md.grad(&z).unwrap();
        for i in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fd = (md.eval(&zp).unwrap() - md.eval(&zm).unwrap()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-6, "component {i}: {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let md = table(2, 1.2, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let z = sample_in_ball(&mut rng, 2, 2.5);
            let h = md.hess(&z).unwrap();
            let step = 2e-4;
            let mut fro_diff = 0.0;
            let mut fro_ref = 0.0;
            for j in 0..2 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += step;
                zm[j] -= step;
                let gp = md.grad(&zp).unwrap();
                let gm = md.grad(&zm).unwrap();
                for i in 0..2 {
                    let fd = (gp[i] - gm[i]) / (2.0 * step);
                    fro_diff += (h.data[i][j] - fd).powi(2);
                    fro_ref += fd * fd;
                }
            }
            let rel = (fro_diff / fro_ref.max(1e-12)).sqrt();
            assert!(rel < 1e-4, "z={z:?}: relative Frobenius error {rel}");
        }
    }

    #[test]
    fn hessian_is_scalar_at_origin_and_spd() {
        let md = table(2, 1.2, 0.1);
        let h = md.hess(&[0.0, 0.0]).unwrap();
        assert!(h.data[0][0] > 0.0);
        assert_eq!(h.data[0][0], h.data[1][1]);
        assert_eq!(h.data[0][1], 0.0);
        // eigenvalue sandwich at z = (1, 0)
        let model = canonical(2, 1.2);
        let (rad, tan) = md.eigencoeffs(DensityPart::Full, 1.0);
        let lo = model.lambda * (0.01f64 + 1.0).powf(model.p / 2.0 - 1.0);
        let hi = model.big_lambda * (0.01f64 + 1.0).powf(model.p / 2.0 - 1.0)
            + model.k_bound / (0.01f64 + 1.0).sqrt();
        assert!(rad.min(tan) >= lo && rad.max(tan) <= hi);
    }

    #[test]
    fn out_of_table_is_an_error_for_public_ops() {
        let md = table(2, 1.2, 0.1);
        assert!(matches!(md.grad(&[5.0, 0.0]), Err(DensityError::OutOfTable { .. })));
        assert!(matches!(md.eval(&[5.0, 0.0]), Err(DensityError::OutOfTable { .. })));
        // extended profile keeps the flux monotone beyond the table
        let (_, d1a, _) = md.profile_extended(DensityPart::Full, 4.5);
        let (_, d1b, _) = md.profile_extended(DensityPart::Full, 6.0);
        assert!(d1b > d1a);
    }

    #[test]
    fn structural_certificate_passes() {
        let model = canonical(2, 1.1);
        let md = mollify_density(&model, 0.1, QuadSpec::default(), 7.0).unwrap();
        let spec = SampleSpec { count: 2000, radius: 3.0, seed: 3 };
        let report = verify_structural(&md, &model, &spec, 1e-6);
        assert!(report.pass, "margins: {:?}", report.entries);
    }

    #[test]
    fn degenerate_pair_has_zero_margin_and_anchor_sign() {
        let model = canonical(2, 1.1);
        let md = mollify_density(&model, 0.1, QuadSpec::default(), 2.0).unwrap();
        // z = w: monotonicity margin exactly 0 (both sides vanish).
        let z = [0.4, 0.9];
        let g = md.grad(&z).unwrap();
        let pair: f64 = g.iter().zip(&g).zip([0.0, 0.0]).map(|((a, b), d)| (a - b) * d).sum();
        assert_eq!(pair, 0.0);
        // z = 0 in the anchored form: margin λ ε^p > 0.
        let margin = 0.0 - model.lambda * (0.0f64.powf(model.p) - 0.1f64.powf(model.p));
        assert!(margin > 0.0);
        assert!((margin - model.lambda * 0.1f64.powf(model.p)).abs() < 1e-15);
    }

    #[test]
    fn euler_identity_residual_bound_on_sweep() {
        // |⟨∇E_{1,ε}(z) | z⟩ − E₁(z)| ≤ 2Kε over a sample sweep.
        let model = canonical(2, 1.3);
        for eps in [0.2, 0.1] {
            let md = mollify_density(&model, eps, QuadSpec::default(), 3.0).unwrap();
            let mut worst = 0.0f64;
            for i in 0..200 {
                let t = i as f64 * 0.11;
                let z = [(0.02 + 0.01 * i as f64) * t.cos(), (0.02 + 0.01 * i as f64) * t.sin()];
                if norm(&z) > 2.9 {
                    continue;
                }
                let g1 = md.grad_part(DensityPart::One, &z).unwrap();
                let res = (dot(&g1, &z) - model.eval_e1(&z)).abs();
                worst = worst.max(res);
            }
            assert!(worst <= 2.0 * model.k_bound * eps + 1e-9, "eps={eps}: {worst}");
        }
    }

    #[test]
    fn anisotropic_density_is_rejected() {
        let a = crate::energy::SymMatrix { n: 2, data: [[1.5, 0.0, 0.0], [0.0, 0.75, 0.0], [0.0; 3]] };
        let model = EnergyModel::new(2, 1.3, 0.05, 2.0, 2.0, DensityKind::Anisotropic(a)).unwrap();
        assert!(matches!(
            mollify_density(&model, 0.1, QuadSpec::default(), 1.0),
            Err(DensityError::NotRadial)
        ));
    }

    #[test]
    fn bad_eps_is_rejected() {
        let model = canonical(2, 1.3);
        assert!(matches!(
            mollify_density(&model, 0.0, QuadSpec::default(), 1.0),
            Err(DensityError::BadEps(_))
        ));
        assert!(matches!(
            mollify_density(&model, 1.0, QuadSpec::default(), 1.0),
            Err(DensityError::BadEps(_))
        ));
    }

    #[test]
    fn table_spacing_honors_the_bound() {
        let md = table(2, 1.3, 0.1);
        assert!(md.spacing() <= 0.1 / 16.0 + 1e-15);
    }
}
