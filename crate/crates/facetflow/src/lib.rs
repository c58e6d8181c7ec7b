//! Numerical laboratory for the regularized (1,p)-Laplace gradient flow
//! `∂_t u = div(∇E^ε(∇u))` with `E(z) = E₁(z) + |z|^p/p`.
//!
//! The crate is organized around five pieces:
//!
//! * [`energy`] / [`mollify`] — exact energy densities, their subdifferentials,
//!   and the mollified density `E^ε = ρ_ε ∗ E` tabulated as a radial profile,
//!   together with sampled certificates of its structural inequalities.
//! * [`composites`] / [`truncation`] — the composite test-function algebra
//!   (ψ, ψ̃, Ψ), the truncated gradient maps, and the V/W gradient moduli.
//! * [`grid`] / [`solver`] — an implicit (backward Euler) finite-difference
//!   solver for the approximate Dirichlet problem in 1–3 space dimensions.
//! * [`lab`] / [`iteration`] — empirical checks of the maximum/comparison
//!   principles, ε-convergence, boundedness ratios, Hölder-modulus fits, and
//!   the numeric iteration lemmata.
//! * [`config`] / [`runio`] / [`cli`] — experiment configuration, run
//!   persistence, and the `facetflow` command-line front end.

pub mod cli;
pub mod composites;
pub mod config;
pub mod energy;
pub mod grid;
pub mod iteration;
pub mod lab;
pub mod mollify;
pub mod quad;
pub mod runio;
pub mod solver;
pub mod truncation;

pub use composites::{ExponentBook, PsiSpec, PsiVariant};
pub use energy::{DensityKind, EnergyModel, SubgradientSet};
pub use grid::{BoundaryData, Grid, InitialData, ScalarField};
pub use iteration::{AbsorbingInstance, MoserInstance};
pub use lab::{DiagnosticsReport, ParabolicCylinder};
pub use mollify::{MollifiedDensity, QuadSpec, StructureReport};
pub use solver::{RunResult, SolverConfig};
pub use truncation::{TruncationMode, TruncationParams};
