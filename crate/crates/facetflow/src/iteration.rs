//! Numeric forms of the two iteration lemmata used by the a priori bounds.
//!
//! * Geometric fast-convergence: from `Y_{l+1}^{p_{l+1}} ≤ (A B^l Y_l^{p_l})^κ`
//!   with `p_l ≥ μ(κ^l − 1)` and `κ^l/p_l → 1/μ`, conclude
//!   `limsup Y_l ≤ A^{κ'/μ} B^{(κ')²/μ} Y₀^{p₀/μ}`.
//! * Absorbing iteration: from `f(r₁) ≤ θ f(r₂) + A/(r₂−r₁)^α + B` for all
//!   pairs, conclude `f(R₁) ≤ C(α,θ)[A/(R₂−R₁)^α + B]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IterationError {
    #[error("inadmissible iteration instance: {0}")]
    Inadmissible(String),
    #[error("sampled function violates the absorbing hypothesis at r1 = {r1:.4}, r2 = {r2:.4}")]
    HypothesisViolated { r1: f64, r2: f64 },
}

/// Instance of the geometric iteration: worst-case recursion with equality.
///
/// The exponent ladder is `p_l = μ κ^l + (p₀ − μ)`, which satisfies
/// `p_l ≥ μ(κ^l − 1)` and `κ^l / p_l → 1/μ` whenever `p₀ ≥ 1` and `μ > 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MoserInstance {
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
    pub mu: f64,
    pub p0: f64,
    pub y0: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MoserOutcome {
    pub y_final: f64,
    pub bound: f64,
    pub pass: bool,
}

impl MoserInstance {
    fn check(&self) -> Result<(), IterationError> {
        if !(self.kappa > 1.0) {
            return Err(IterationError::Inadmissible(format!("kappa = {} must exceed 1", self.kappa)));
        }
        if !(self.a >= 1.0 && self.b >= 1.0) {
            return Err(IterationError::Inadmissible("A and B must be at least 1".into()));
        }
        if !(self.mu > 0.0) {
            return Err(IterationError::Inadmissible("mu must be positive".into()));
        }
        if !(self.p0 >= 1.0) {
            return Err(IterationError::Inadmissible("p0 must be at least 1".into()));
        }
        if !(self.y0 >= 0.0) {
            return Err(IterationError::Inadmissible("Y0 must be nonnegative".into()));
        }
        Ok(())
    }

    fn exponent(&self, l: usize) -> f64 {
        self.mu * self.kappa.powi(l as i32) + (self.p0 - self.mu)
    }

    /// Iterate the recursion with equality to the configured depth and
    /// compare against the closed-form limsup bound.
    ///
    /// The exponents `p_l` grow like `κ^l`, so the recursion runs in log
    /// space on `a_l = p_l ln Y_l`, which obeys
    /// `a_{l+1} = κ(ln A + l ln B) + κ a_l`.
    pub fn run(&self) -> Result<MoserOutcome, IterationError> {
        self.check()?;
        // Admissibility of the exponent ladder (the lemma's hypotheses).
        for l in 0..=self.depth {
            let pl = self.exponent(l);
            if pl < self.mu * (self.kappa.powi(l as i32) - 1.0) - 1e-12 || pl < 1.0 {
                return Err(IterationError::Inadmissible(format!("p_{l} = {pl} is inadmissible")));
            }
        }
        let kp = self.kappa / (self.kappa - 1.0);
        if self.y0 == 0.0 {
            // A B^l · 0 stays 0, and so does the bound.
            return Ok(MoserOutcome { y_final: 0.0, bound: 0.0, pass: true });
        }
        let (ln_a, ln_b) = (self.a.ln(), self.b.ln());
        let mut acc = self.p0 * self.y0.ln();
        for l in 0..self.depth {
            acc = self.kappa * (ln_a + l as f64 * ln_b) + self.kappa * acc;
        }
        let ln_y = acc / self.exponent(self.depth);
        let ln_bound =
            (kp / self.mu) * ln_a + (kp * kp / self.mu) * ln_b + (self.p0 / self.mu) * self.y0.ln();
        let pass = ln_y <= ln_bound + 1e-9;
        Ok(MoserOutcome { y_final: ln_y.exp(), bound: ln_bound.exp(), pass })
    }
}

/// Instance of the absorbing iteration over a sampled function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbsorbingInstance {
    pub theta: f64,
    pub a: f64,
    pub alpha: f64,
    pub b: f64,
    pub r1: f64,
    pub r2: f64,
    /// sampled radii (increasing, spanning [r1, r2]) and values of f
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AbsorbingOutcome {
    pub f_at_r1: f64,
    pub constant: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `C(α,θ)` from the interpolation-sequence proof: pick `τ = θ^{1/(2α)}`
/// so that `θ τ^{−α} = √θ < 1`; then `C = (1−τ)^{−α} / (1−√θ)`.
pub fn absorbing_constant(alpha: f64, theta: f64) -> f64 {
    assert!(alpha > 0.0);
    assert!((0.0..1.0).contains(&theta));
    if theta == 0.0 {
        return 1.0;
    }
    let tau = theta.powf(1.0 / (2.0 * alpha));
    (1.0 - tau).powf(-alpha) / (1.0 - theta.sqrt())
}

impl AbsorbingInstance {
    /// Verify the hypothesis on all sampled pairs, then the conclusion with
    /// the derived constant.
    pub fn run(&self) -> Result<AbsorbingOutcome, IterationError> {
        if !(self.theta >= 0.0 && self.theta < 1.0) {
            return Err(IterationError::Inadmissible(format!("theta = {} not in [0,1)", self.theta)));
        }
        if !(self.alpha > 0.0 && self.a > 0.0 && self.b >= 0.0 && self.r1 < self.r2) {
            return Err(IterationError::Inadmissible("need alpha, A > 0, B >= 0, R1 < R2".into()));
        }
        if self.radii.len() != self.values.len() || self.radii.len() < 2 {
            return Err(IterationError::Inadmissible("need at least two samples of f".into()));
        }
        for (i, pair) in self.radii.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(IterationError::Inadmissible(format!("radii not increasing at {i}")));
            }
        }
        for v in &self.values {
            if !(*v >= 0.0) {
                return Err(IterationError::Inadmissible("f must be nonnegative".into()));
            }
        }
        // Hypothesis on all sampled pairs.
        for i in 0..self.radii.len() {
            for j in (i + 1)..self.radii.len() {
                let (ri, rj) = (self.radii[i], self.radii[j]);
                let rhs = self.theta * self.values[j] + self.a / (rj - ri).powf(self.alpha) + self.b;
                if self.values[i] > rhs + 1e-12 * (1.0 + rhs.abs()) {
                    return Err(IterationError::HypothesisViolated { r1: ri, r2: rj });
                }
            }
        }
        let c = absorbing_constant(self.alpha, self.theta);
        let bound = c * (self.a / (self.r2 - self.r1).powf(self.alpha) + self.b);
        let f_at_r1 = self.values[0];
        Ok(AbsorbingOutcome { f_at_r1, constant: c, bound, pass: f_at_r1 <= bound * (1.0 + 1e-12) })
    }

    /// Deterministic random admissible instance: a candidate piecewise-linear
    /// profile is scaled until the hypothesis holds on all knot pairs.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rng.gen_range(0.05..0.9);
        let a = rng.gen_range(0.2..5.0);
        let alpha = rng.gen_range(0.3..3.0);
        let b = rng.gen_range(0.0..2.0);
        let r1 = rng.gen_range(0.1..1.0);
        let r2 = r1 + rng.gen_range(0.2..2.0);
        let knots = rng.gen_range(4..24);
        let radii: Vec<f64> = (0..knots)
            .map(|i| r1 + (r2 - r1) * i as f64 / (knots - 1) as f64)
            .collect();
        let mut values: Vec<f64> = (0..knots).map(|_| rng.gen_range(0.0..40.0)).collect();
        // Scale down until the hypothesis holds on every knot pair.
        let mut scale = 1.0f64;
        for i in 0..knots {
            for j in (i + 1)..knots {
                let gap = values[i] - theta * values[j];
                if gap > 0.0 {
                    let budget = a / (radii[j] - radii[i]).powf(alpha) + b;
                    scale = scale.min(budget / gap);
                }
            }
        }
        let s = scale * 0.999;
        for v in values.iter_mut() {
            *v *= s;
        }
        AbsorbingInstance { theta, a, alpha, b, r1, r2, radii, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_case_reproduces_the_bound() {
        // A = B = 1, p_l = κ^l (μ = 1, p₀ = 1): Y_l ≡ Y₀ and bound = Y₀.
        let inst = MoserInstance { a: 1.0, b: 1.0, kappa: 1.5, mu: 1.0, p0: 1.0, y0: 2.31, depth: 60 };
        let out = inst.run().unwrap();
        assert!((out.y_final - 2.31).abs() < 1e-12 * 2.31);
        assert!((out.bound - 2.31).abs() < 1e-12 * 2.31);
        assert!(out.pass);
    }

    #[test]
    fn zero_start_stays_zero() {
        let inst = MoserInstance { a: 3.0, b: 2.0, kappa: 1.4, mu: 0.7, p0: 1.2, y0: 0.0, depth: 25 };
        let out = inst.run().unwrap();
        assert_eq!(out.y_final, 0.0);
        assert!(out.pass);
    }

    #[test]
    fn random_admissible_instances_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let inst = MoserInstance {
                a: rng.gen_range(1.0..10.0),
                b: rng.gen_range(1.0..10.0),
                kappa: rng.gen_range(1.01..3.0),
                mu: rng.gen_range(0.2..3.0),
                p0: rng.gen_range(1.0..4.0),
                y0: rng.gen_range(0.0..5.0),
                depth: 40,
            };
            let out = inst.run().unwrap();
            assert!(out.pass, "{inst:?} gave Y = {} > bound = {}", out.y_final, out.bound);
        }
    }

    #[test]
    fn inadmissible_instances_error() {
        let bad = MoserInstance { a: 0.5, b: 1.0, kappa: 1.5, mu: 1.0, p0: 1.0, y0: 1.0, depth: 5 };
        assert!(bad.run().is_err());
        let bad2 = MoserInstance { a: 1.5, b: 1.0, kappa: 0.9, mu: 1.0, p0: 1.0, y0: 1.0, depth: 5 };
        assert!(bad2.run().is_err());
    }

    #[test]
    fn absorbing_theta_zero_has_unit_constant() {
        assert_eq!(absorbing_constant(1.3, 0.0), 1.0);
        // With θ = 0 the hypothesis applied to (R1, R2) is the conclusion.
        let inst = AbsorbingInstance {
            theta: 0.0,
            a: 1.0,
            alpha: 1.0,
            b: 0.5,
            r1: 0.5,
            r2: 1.5,
            radii: vec![0.5, 1.0, 1.5],
            values: vec![1.2, 1.0, 0.2],
        };
        let out = inst.run().unwrap();
        assert_eq!(out.constant, 1.0);
        assert!(out.pass);
    }

    #[test]
    fn absorbing_constant_function_algebra() {
        // Constant f ≡ F admissible iff F(1−θ) ≤ A/(R2−R1)^α + B; then the
        // conclusion holds for any C ≥ 1/(1−θ).
        let (theta, a, alpha, b, r1, r2) = (0.5, 2.0, 1.5, 0.3, 0.2, 1.2);
        let budget: f64 = a / (r2 - r1_f(r1, r2)).powf(alpha) + b;
        fn r1_f(r1: f64, _r2: f64) -> f64 {
            r1
        }
        let f = budget / (1.0 - theta) * 0.99;
        let inst = AbsorbingInstance {
            theta,
            a,
            alpha,
            b,
            r1,
            r2,
            radii: vec![r1, 0.7, r2],
            values: vec![f, f, f],
        };
        let out = inst.run().unwrap();
        assert!(out.constant >= 1.0 / (1.0 - theta));
        assert!(out.pass);
    }

    #[test]
    fn absorbing_random_instances_pass() {
        for seed in 0..100u64 {
            let inst = AbsorbingInstance::random(seed);
            let out = inst.run().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(out.pass, "seed {seed}: f(R1) = {} > bound = {}", out.f_at_r1, out.bound);
        }
    }

    #[test]
    fn absorbing_hypothesis_violation_is_detected() {
        let inst = AbsorbingInstance {
            theta: 0.1,
            a: 0.01,
            alpha: 2.0,
            b: 0.0,
            r1: 0.1,
            r2: 1.1,
            radii: vec![0.1, 0.6, 1.1],
            values: vec![100.0, 0.0, 0.0],
        };
        assert!(matches!(inst.run(), Err(IterationError::HypothesisViolated { .. })));
    }
}
