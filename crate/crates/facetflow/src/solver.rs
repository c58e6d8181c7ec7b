//! Implicit finite-difference solver for `∂_t u = div(∇E^ε(∇u))` with
//! prescribed parabolic-boundary data.
//!
//! Space discretization reconstructs the full gradient on each cell face
//! (normal component from the two adjacent nodes, tangential components by
//! averaging the neighboring central differences) and applies `∇E^ε` there;
//! the discrete divergence differences the normal flux components. Because
//! the density is radial, the normal flux is a nonnegative scalar multiple
//! of the normal difference, which makes the implicit step satisfy the
//! discrete maximum principle up to the nonlinear-solver tolerance.
//!
//! Time discretization is backward Euler; each step is solved by damped
//! Newton on the residual with the analytic Hessian weights on faces, with
//! a frozen-coefficient (Picard) fallback for the degenerate region.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::grid::{BoundaryData, Grid, GridError, InitialData, ScalarField};
use crate::mollify::{DensityError, DensityPart, MollifiedDensity};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("nonlinear solve failed to converge at t = {t:.6}; residual history {history:?}")]
    NonConvergence { t: f64, history: Vec<f64> },
    #[error("initial data disagrees with boundary data at t = 0: gap {max_gap:.3e} > tol {tol:.3e}")]
    IncompatibleData { max_gap: f64, tol: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Time stepping and nonlinear-solve controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// sup-norm residual tolerance of the implicit solve
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// step-halving factor for the damped line search
    pub damping: f64,
    pub picard_fallback: bool,
    /// record a snapshot every this many steps (1 = every step)
    pub snapshot_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.01,
            t_end: 0.1,
            newton_tol: 1e-12,
            newton_max_iter: 40,
            damping: 0.5,
            picard_fallback: true,
            snapshot_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub used_picard: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub energy: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    pub newton_iters: usize,
}

/// Trajectory of one simulation: snapshots, diagnostics series, and the
/// parabolic-boundary bounds needed by the maximum-principle checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub grid: Arc<Grid>,
    pub eps: f64,
    pub p: f64,
    pub snapshots: Vec<ScalarField>,
    pub series: Vec<SeriesRow>,
    pub convergence: Vec<StepLog>,
    /// sup over the parabolic boundary (initial slice plus lateral data)
    pub boundary_sup: f64,
    /// (min, max) over the parabolic boundary
    pub boundary_range: (f64, f64),
    pub bc_static: bool,
    /// worst discrete-maximum-principle margin over all recorded steps
    pub dmp_margin: f64,
}

impl RunResult {
    pub fn final_field(&self) -> &ScalarField {
        self.snapshots.last().expect("run holds at least the initial snapshot")
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Energy column of the series.
    pub fn energy_series(&self) -> Vec<f64> {
        self.series.iter().map(|r| r.energy).collect()
    }
}

const AXIS_STRIDE: fn(&Grid, usize) -> usize = |g, a| match a {
    0 => 1,
    1 => g.nodes[0],
    _ => g.nodes[0] * g.nodes[1],
};

/// Central difference of `values` along axis `b` at a node, one-sided on the
/// boundary (first order there is enough: it only feeds the tangential part
/// of the face reconstruction).
#[inline]
fn node_diff(grid: &Grid, values: &[f64], idx: usize, coord_b: usize, b: usize) -> f64 {
    let s = AXIS_STRIDE(grid, b);
    let last = grid.nodes[b] - 1;
    let h = grid.h[b];
    if coord_b == 0 {
        (values[idx + s] - values[idx]) / h
    } else if coord_b == last {
        (values[idx] - values[idx - s]) / h
    } else {
        (values[idx + s] - values[idx - s]) / (2.0 * h)
    }
}

/// Reconstructed gradient at the face between `m` and `m + e_a`.
#[inline]
fn face_gradient(grid: &Grid, values: &[f64], m: usize, coords: [usize; 3], a: usize) -> [f64; 3] {
    let s = AXIS_STRIDE(grid, a);
    let mp = m + s;
    let mut g = [0.0f64; 3];
    g[a] = (values[mp] - values[m]) / grid.h[a];
    for b in 0..grid.dim {
        if b == a {
            continue;
        }
        let db_lo = node_diff(grid, values, m, coords[b], b);
        let db_hi = node_diff(grid, values, mp, coords[b], b);
        g[b] = 0.5 * (db_lo + db_hi);
    }
    g
}

fn norm3(g: &[f64; 3]) -> f64 {
    (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
}

/// Visit every face with normal along `axis`: `(face_index, node_m, coords_of_m)`.
fn for_each_face(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize, [usize; 3])) {
    let mut dims = [grid.nodes[0], grid.nodes[1], grid.nodes[2]];
    dims[axis] -= 1;
    let mut face = 0usize;
    for iz in 0..dims[2] {
        for iy in 0..dims[1] {
            for ix in 0..dims[0] {
                let m = grid.index(ix, iy, iz);
                f(face, m, [ix, iy, iz]);
                face += 1;
            }
        }
    }
}

fn face_array_len(grid: &Grid, axis: usize) -> usize {
    let mut dims = [grid.nodes[0], grid.nodes[1], grid.nodes[2]];
    dims[axis] -= 1;
    dims[0] * dims[1] * dims[2]
}

/// Full flux vectors `∇E^ε(G_f)` on every face, per axis.
///
/// Strict table semantics: a reconstructed gradient beyond the table radius
/// is an out-of-table error.
pub fn face_flux(
    u: &ScalarField,
    md: &MollifiedDensity,
) -> Result<Vec<Vec<[f64; 3]>>, SolverError> {
    let grid = &u.grid;
    let mut out = Vec::with_capacity(grid.dim);
    for a in 0..grid.dim {
        let mut fluxes = vec![[0.0f64; 3]; face_array_len(grid, a)];
        let mut bad: Option<f64> = None;
        for_each_face(grid, a, |face, m, coords| {
            let g = face_gradient(grid, &u.values, m, coords, a);
            let r = norm3(&g);
            if r > md.r_max {
                bad = Some(r);
                return;
            }
            let phi = md.flux_multiplier(r);
            fluxes[face] = [phi * g[0], phi * g[1], phi * g[2]];
        });
        if let Some(r) = bad {
            return Err(DensityError::OutOfTable { r, r_max: md.r_max }.into());
        }
        out.push(fluxes);
    }
    Ok(out)
}

/// Normal flux components per axis (the only part entering the divergence),
/// using the smooth extension beyond the table so transient Newton iterates
/// cannot fail.
fn normal_flux(grid: &Grid, values: &[f64], md: &MollifiedDensity) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.dim);
    for a in 0..grid.dim {
        let mut fl = vec![0.0f64; face_array_len(grid, a)];
        for_each_face(grid, a, |face, m, coords| {
            let g = face_gradient(grid, values, m, coords, a);
            let r = norm3(&g);
            fl[face] = md.flux_multiplier(r) * g[a];
        });
        out.push(fl);
    }
    out
}

/// Largest reconstructed face-gradient magnitude (table-range validity).
fn max_face_radius(grid: &Grid, values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..grid.dim {
        for_each_face(grid, a, |_, m, coords| {
            let g = face_gradient(grid, values, m, coords, a);
            worst = worst.max(norm3(&g));
        });
    }
    worst
}

/// Discrete divergence of the face flux at interior nodes (zero on the
/// boundary where Dirichlet values are pinned).
fn divergence_from_normal(grid: &Grid, flux: &[Vec<f64>], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            continue;
        }
        let c = grid.coords(idx);
        let mut div = 0.0;
        for a in 0..grid.dim {
            let mut dims = [grid.nodes[0], grid.nodes[1], grid.nodes[2]];
            dims[a] -= 1;
            let fs = [1usize, dims[0], dims[0] * dims[1]];
            let face_hi = c[0] * fs[0] + c[1] * fs[1] + c[2] * fs[2];
            let mut clo = c;
            clo[a] -= 1;
            let face_lo = clo[0] * fs[0] + clo[1] * fs[1] + clo[2] * fs[2];
            div += (flux[a][face_hi] - flux[a][face_lo]) / grid.h[a];
        }
        out[idx] = div;
    }
}

/// Public form of the discrete divergence with strict table semantics.
pub fn divergence(u: &ScalarField, md: &MollifiedDensity) -> Result<Vec<f64>, SolverError> {
    let flux = face_flux(u, md)?;
    let normals: Vec<Vec<f64>> = flux
        .iter()
        .enumerate()
        .map(|(a, v)| v.iter().map(|f| f[a]).collect())
        .collect();
    let mut out = vec![0.0; u.grid.node_count()];
    divergence_from_normal(&u.grid, &normals, &mut out);
    Ok(out)
}

/// Backward-Euler residual `u_new − u_old − dt·div_h(∇E^ε(∇u_new))` on the
/// interior; zero on boundary nodes by construction.
pub fn step_residual(
    u_new: &ScalarField,
    u_old: &ScalarField,
    dt: f64,
    md: &MollifiedDensity,
    bc: &BoundaryData,
) -> Result<ScalarField, SolverError> {
    if u_new.grid != u_old.grid {
        return Err(GridError::GridMismatch.into());
    }
    let grid = &u_new.grid;
    if cfg!(debug_assertions) {
        for idx in 0..grid.node_count() {
            if grid.is_boundary(idx) {
                let want = bc.value_at_node(grid, idx, u_new.time);
                debug_assert!(
                    (u_new.values[idx] - want).abs() <= 1e-9 * (1.0 + want.abs()),
                    "boundary nodes of u_new must carry the boundary data"
                );
            }
        }
    }
    let mut res = vec![0.0; grid.node_count()];
    residual_into(grid, &u_new.values, &u_old.values, dt, md, &mut res);
    Ok(ScalarField { grid: grid.clone(), values: res, time: u_new.time })
}

fn residual_into(
    grid: &Grid,
    u_new: &[f64],
    u_old: &[f64],
    dt: f64,
    md: &MollifiedDensity,
    out: &mut [f64],
) {
    let flux = normal_flux(grid, u_new, md);
    divergence_from_normal(grid, &flux, out);
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            out[idx] = 0.0;
        } else {
            out[idx] = u_new[idx] - u_old[idx] - dt * out[idx];
        }
    }
}

fn sup(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Per-face linearization data: unit gradient direction and the radial and
/// tangential Hessian eigenvalues of the density there.
#[derive(Clone, Copy)]
struct FaceLin {
    ghat: [f64; 3],
    rad: f64,
    tan: f64,
}

/// Linearize the flux on every face at the current state. In Picard mode
/// the Hessian is replaced by the frozen scalar multiplier `φ(|G|)·id`
/// (the Kačanov linearization).
fn face_linearization(
    grid: &Grid,
    values: &[f64],
    md: &MollifiedDensity,
    picard: bool,
) -> Vec<Vec<FaceLin>> {
    let mut out = Vec::with_capacity(grid.dim);
    for a in 0..grid.dim {
        let mut lin = vec![FaceLin { ghat: [0.0; 3], rad: 0.0, tan: 0.0 }; face_array_len(grid, a)];
        for_each_face(grid, a, |face, m, coords| {
            let g = face_gradient(grid, values, m, coords, a);
            let r = norm3(&g);
            let (rad, tan) = md.eigencoeffs(DensityPart::Full, r);
            lin[face] = if picard || r == 0.0 {
                FaceLin { ghat: [0.0; 3], rad: tan, tan }
            } else {
                FaceLin { ghat: [g[0] / r, g[1] / r, g[2] / r], rad, tan }
            };
        });
        out.push(lin);
    }
    out
}

/// Analytic Jacobian-vector product `(I − dt·div∘H(G_f)·δ∇)v` on the
/// interior. `v` must vanish on boundary nodes (Dirichlet increments).
fn apply_jacobian(grid: &Grid, lin: &[Vec<FaceLin>], dt: f64, v: &[f64], out: &mut [f64]) {
    // flux increment per face: the a-component of H·δG
    let mut dflux: Vec<Vec<f64>> = Vec::with_capacity(grid.dim);
    for a in 0..grid.dim {
        let mut df = vec![0.0f64; face_array_len(grid, a)];
        for_each_face(grid, a, |face, m, coords| {
            let dg = face_gradient(grid, v, m, coords, a);
            let fl = &lin[a][face];
            let along = fl.ghat[0] * dg[0] + fl.ghat[1] * dg[1] + fl.ghat[2] * dg[2];
            df[face] = fl.rad * along * fl.ghat[a] + fl.tan * (dg[a] - along * fl.ghat[a]);
        });
        dflux.push(df);
    }
    divergence_from_normal(grid, &dflux, out);
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            out[idx] = 0.0;
        } else {
            out[idx] = v[idx] - dt * out[idx];
        }
    }
}

/// Jacobi diagonal of the linearized operator (normal couplings only; used
/// as a preconditioner).
fn jacobi_diagonal(grid: &Grid, lin: &[Vec<FaceLin>], dt: f64) -> Vec<f64> {
    let n = grid.node_count();
    let mut diag = vec![1.0f64; n];
    for idx in 0..n {
        if grid.is_boundary(idx) {
            continue;
        }
        let c = grid.coords(idx);
        let mut d = 1.0;
        for a in 0..grid.dim {
            let mut dims = [grid.nodes[0], grid.nodes[1], grid.nodes[2]];
            dims[a] -= 1;
            let fs = [1usize, dims[0], dims[0] * dims[1]];
            let f_hi = c[0] * fs[0] + c[1] * fs[1] + c[2] * fs[2];
            let mut clo = c;
            clo[a] -= 1;
            let f_lo = clo[0] * fs[0] + clo[1] * fs[1] + clo[2] * fs[2];
            let haa = |fl: &FaceLin| fl.rad * fl.ghat[a] * fl.ghat[a] + fl.tan * (1.0 - fl.ghat[a] * fl.ghat[a]);
            d += dt * (haa(&lin[a][f_hi]) + haa(&lin[a][f_lo])) / (grid.h[a] * grid.h[a]);
        }
        diag[idx] = d;
    }
    diag
}

/// Jacobi-preconditioned BiCGStab on the interior unknowns (the Jacobian
/// carries mildly asymmetric tangential couplings).
fn solve_linear(grid: &Grid, lin: &[Vec<FaceLin>], dt: f64, rhs: &[f64], x: &mut [f64]) {
    let n = grid.node_count();
    let diag = jacobi_diagonal(grid, lin, dt);
    x.iter_mut().for_each(|v| *v = 0.0);
    let mut r: Vec<f64> = rhs.to_vec();
    for idx in 0..n {
        if grid.is_boundary(idx) {
            r[idx] = 0.0;
        }
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let norm2 = |a: &[f64]| -> f64 { dot(a, a).sqrt() };
    let rhs_norm = norm2(&r);
    if rhs_norm == 0.0 {
        return;
    }
    let tol = rhs_norm * 1e-12;
    let r_hat = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut p = vec![0.0f64; n];
    let mut vv = vec![0.0f64; n];
    let mut p_hat = vec![0.0f64; n];
    let mut s_hat = vec![0.0f64; n];
    let mut t = vec![0.0f64; n];
    let max_iter = 4 * n + 200;
    for _ in 0..max_iter {
        let rho1 = dot(&r_hat, &r);
        if rho1.abs() < 1e-300 {
            break;
        }
        let beta = (rho1 / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * vv[i]);
        }
        for i in 0..n {
            p_hat[i] = p[i] / diag[i];
        }
        apply_jacobian(grid, lin, dt, &p_hat, &mut vv);
        let denom = dot(&r_hat, &vv);
        if denom.abs() < 1e-300 {
            break;
        }
        alpha = rho1 / denom;
        // s = r − α v (reuse r)
        for i in 0..n {
            r[i] -= alpha * vv[i];
        }
        if norm2(&r) <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            break;
        }
        for i in 0..n {
            s_hat[i] = r[i] / diag[i];
        }
        apply_jacobian(grid, lin, dt, &s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt < 1e-300 {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            break;
        }
        omega = dot(&t, &r) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] -= omega * t[i];
        }
        if norm2(&r) <= tol || omega == 0.0 {
            break;
        }
        rho = rho1;
    }
}

/// Outcome of one implicit step.
pub struct StepOutcome {
    pub field: ScalarField,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub used_picard: bool,
}

/// Solve one backward-Euler step to `time_new = u_old.time + dt`.
///
/// Damped Newton with the analytic Hessian face weights; after repeated
/// stalls (or half the iteration budget) the weights switch to the frozen
/// scalar multiplier (Picard), which is unconditionally safe for the
/// degenerate region.
pub fn solve_timestep(
    u_old: &ScalarField,
    dt: f64,
    md: &MollifiedDensity,
    bc: &BoundaryData,
    cfg: &SolverConfig,
) -> Result<StepOutcome, SolverError> {
    let grid = u_old.grid.clone();
    let n = grid.node_count();
    let t_new = u_old.time + dt;

    let mut u = u_old.values.clone();
    for idx in 0..n {
        if grid.is_boundary(idx) {
            u[idx] = bc.value_at_node(&grid, idx, t_new);
        }
    }

    let mut res = vec![0.0; n];
    residual_into(&grid, &u, &u_old.values, dt, md, &mut res);
    let mut res_norm = sup(&res);
    let mut history = vec![res_norm];

    let mut picard = false;
    let mut stalls = 0usize;
    let mut iters = 0usize;
    let mut delta = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_res = vec![0.0; n];

    while res_norm > cfg.newton_tol {
        if iters >= cfg.newton_max_iter {
            return Err(SolverError::NonConvergence { t: t_new, history });
        }
        if cfg.picard_fallback && !picard && (stalls >= 1 || iters >= cfg.newton_max_iter / 2) {
            picard = true;
        }
        let lin = face_linearization(&grid, &u, md, picard);
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        solve_linear(&grid, &lin, dt, &rhs, &mut delta);

        // damped line search with a sufficient-decrease test
        let mut lambda = 1.0f64;
        let mut accepted = false;
        for _ in 0..24 {
            for i in 0..n {
                trial[i] = u[i] + lambda * delta[i];
            }
            residual_into(&grid, &trial, &u_old.values, dt, md, &mut trial_res);
            let t_norm = sup(&trial_res);
            if t_norm <= (1.0 - 1e-4 * lambda) * res_norm {
                u.copy_from_slice(&trial);
                res.copy_from_slice(&trial_res);
                res_norm = t_norm;
                accepted = true;
                break;
            }
            lambda *= cfg.damping;
        }
        iters += 1;
        history.push(res_norm);
        if !accepted {
            stalls += 1;
            if picard || !cfg.picard_fallback {
                return Err(SolverError::NonConvergence { t: t_new, history });
            }
        }
    }

    Ok(StepOutcome {
        field: ScalarField { grid, values: u, time: t_new },
        newton_iters: iters,
        final_residual: res_norm,
        used_picard: picard,
    })
}

/// Discrete energy `∫ E^ε(∇u) dx` by face quadrature (each face carries the
/// reconstructed full gradient; transversal trapezoid weights make the total
/// face measure exactly `|Ω|` per axis).
pub fn discrete_energy(u: &ScalarField, md: &MollifiedDensity) -> f64 {
    let grid = &u.grid;
    let mut total = 0.0;
    let cell: f64 = (0..grid.dim).map(|a| grid.h[a]).product();
    for a in 0..grid.dim {
        for_each_face(grid, a, |_, m, coords| {
            let g = face_gradient(grid, &u.values, m, coords, a);
            let r = norm3(&g);
            let (val, _, _) = md.profile_extended(DensityPart::Full, r);
            let mut w = cell;
            for b in 0..grid.dim {
                if b != a && (coords[b] == 0 || coords[b] == grid.nodes[b] - 1) {
                    w *= 0.5;
                }
            }
            total += w * val;
        });
    }
    total / grid.dim as f64
}

fn sup_v_eps(u: &ScalarField, eps: f64) -> f64 {
    u.gradient()
        .iter()
        .map(|g| (eps * eps + g.iter().map(|x| x * x).sum::<f64>()).sqrt())
        .fold(0.0, f64::max)
}

/// March backward-Euler steps to `t_end`, recording snapshots, the energy
/// and sup series, and the per-step convergence log.
pub fn run_simulation(
    cfg: &SolverConfig,
    md: &MollifiedDensity,
    bc: &BoundaryData,
    initial: &InitialData,
    grid: &Arc<Grid>,
) -> Result<RunResult, SolverError> {
    let u0 = initial.build(grid, bc);
    u0.validate_finite()?;

    // Initial data must agree with the lateral data at t = 0.
    let mut max_gap = 0.0f64;
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            let want = bc.value_at_node(grid, idx, 0.0);
            max_gap = max_gap.max((u0.values[idx] - want).abs());
        }
    }
    let compat_tol = 1e-9 * (1.0 + u0.sup_norm());
    if max_gap > compat_tol {
        return Err(SolverError::IncompatibleData { max_gap, tol: compat_tol });
    }

    let lateral = bc.range(grid, cfg.t_end);
    let lo_bound = lateral.0.min(u0.min());
    let hi_bound = lateral.1.max(u0.max());
    let boundary_sup = lo_bound.abs().max(hi_bound.abs());

    let mut snapshots = vec![u0.clone()];
    let mut series = vec![SeriesRow {
        t: 0.0,
        energy: discrete_energy(&u0, md),
        sup_u: u0.sup_norm(),
        sup_v: sup_v_eps(&u0, md.eps),
        newton_iters: 0,
    }];
    let mut convergence = Vec::new();
    let mut dmp_margin = f64::INFINITY;

    let r0 = max_face_radius(grid, &u0.values);
    if r0 > md.r_max {
        return Err(DensityError::OutOfTable { r: r0, r_max: md.r_max }.into());
    }

    let mut u = u0;
    let mut step_index = 0usize;
    let total_steps = (cfg.t_end / cfg.dt - 1e-12).ceil().max(0.0) as usize;
    while step_index < total_steps {
        let dt = cfg.dt.min(cfg.t_end - u.time).max(0.0);
        let out = solve_timestep(&u, dt, md, bc, cfg)?;
        u = out.field;
        u.validate_finite()?;
        step_index += 1;

        let r = max_face_radius(grid, &u.values);
        if r > md.r_max {
            return Err(DensityError::OutOfTable { r, r_max: md.r_max }.into());
        }
        dmp_margin = dmp_margin.min(u.min() - lo_bound).min(hi_bound - u.max());

        convergence.push(StepLog {
            t: u.time,
            newton_iters: out.newton_iters,
            final_residual: out.final_residual,
            used_picard: out.used_picard,
        });
        series.push(SeriesRow {
            t: u.time,
            energy: discrete_energy(&u, md),
            sup_u: u.sup_norm(),
            sup_v: sup_v_eps(&u, md.eps),
            newton_iters: out.newton_iters,
        });
        if step_index % cfg.snapshot_every.max(1) == 0 || step_index == total_steps {
            snapshots.push(u.clone());
        }
    }

    Ok(RunResult {
        grid: grid.clone(),
        eps: md.eps,
        p: md.model.p,
        snapshots,
        series,
        convergence,
        boundary_sup,
        boundary_range: (lo_bound, hi_bound),
        bc_static: bc.is_static(),
        dmp_margin: if dmp_margin.is_finite() { dmp_margin } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyModel;
    use crate::mollify::{mollify_density, QuadSpec};

    fn density(n: usize, p: f64, eps: f64, r_max: f64) -> MollifiedDensity {
        let model = EnergyModel::canonical(n, p).unwrap();
        mollify_density(&model, eps, QuadSpec::default(), r_max).unwrap()
    }

    fn grid(dim: usize, cells: usize) -> Arc<Grid> {
        Arc::new(Grid::new(dim, &[cells, cells, cells], &[1.0, 1.0, 1.0]).unwrap())
    }

    #[test]
    fn affine_field_has_constant_flux_and_zero_divergence() {
        let md = density(2, 1.3, 0.1, 6.0);
        let g = grid(2, 8);
        let u = ScalarField::from_fn(&g, 0.0, |x| 0.2 + 1.1 * x[0] - 0.7 * x[1]);
        let flux = face_flux(&u, &md).unwrap();
        for a in 0..2 {
            let first = flux[a][0];
            for f in &flux[a] {
                for k in 0..2 {
                    assert!((f[k] - first[k]).abs() < 1e-12, "flux must be constant");
                }
            }
        }
        let div = divergence(&u, &md).unwrap();
        for (idx, d) in div.iter().enumerate() {
            if !g.is_boundary(idx) {
                assert!(d.abs() < 1e-10, "node {idx}: divergence {d}");
            }
        }
    }

    #[test]
    fn constant_field_has_zero_flux() {
        let md = density(2, 1.3, 0.1, 6.0);
        let g = grid(2, 6);
        let u = ScalarField::constant(&g, 2.5, 0.0);
        let flux = face_flux(&u, &md).unwrap();
        for a in 0..2 {
            for f in &flux[a] {
                assert_eq!(*f, [0.0; 3]);
            }
        }
    }

    #[test]
    fn divergence_richardson_on_manufactured_1d() {
        // u = sin(pi x): the discrete divergence of the flux converges at
        // second order to its fine-grid limit. Sample at x = 0.25, where the
        // gradient stays away from the degenerate point.
        let md = density(1, 1.3, 0.1, 8.0);
        let sample = |cells: usize| -> f64 {
            let g = Arc::new(Grid::new(1, &[cells], &[1.0]).unwrap());
            let u = ScalarField::from_fn(&g, 0.0, |x| (std::f64::consts::PI * x[0]).sin());
            let div = divergence(&u, &md).unwrap();
            div[cells / 4]
        };
        let reference = sample(512);
        let e1 = (sample(32) - reference).abs();
        let e2 = (sample(64) - reference).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}, errors {e1:.3e}/{e2:.3e}");
    }

    #[test]
    fn residual_vanishes_for_steady_states() {
        let md = density(2, 1.3, 0.1, 6.0);
        let g = grid(2, 6);
        // constants
        let bc = BoundaryData::Constant(1.0);
        let c = ScalarField::constant(&g, 1.0, 0.1);
        let c_old = ScalarField::constant(&g, 1.0, 0.0);
        let r = step_residual(&c, &c_old, 0.1, &md, &bc).unwrap();
        assert!(r.sup_norm() < 1e-14);
        // affine data
        let bc = BoundaryData::Affine { a: 0.3, b: [0.8, -0.4, 0.0] };
        let aff = ScalarField::from_fn(&g, 0.1, |x| 0.3 + 0.8 * x[0] - 0.4 * x[1]);
        let aff_old = ScalarField::from_fn(&g, 0.0, |x| 0.3 + 0.8 * x[0] - 0.4 * x[1]);
        let r = step_residual(&aff, &aff_old, 0.1, &md, &bc).unwrap();
        assert!(r.sup_norm() < 1e-11, "{}", r.sup_norm());
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let md = density(2, 1.3, 0.1, 6.0);
        let a = ScalarField::constant(&grid(2, 6), 0.0, 0.0);
        let b = ScalarField::constant(&grid(2, 7), 0.0, 0.0);
        assert!(matches!(
            step_residual(&a, &b, 0.1, &md, &BoundaryData::Constant(0.0)),
            Err(SolverError::Grid(GridError::GridMismatch))
        ));
    }

    #[test]
    fn constant_step_converges_immediately() {
        let md = density(2, 1.3, 0.1, 6.0);
        let g = grid(2, 6);
        let u_old = ScalarField::constant(&g, 2.0, 0.0);
        let out = solve_timestep(&u_old, 0.05, &md, &BoundaryData::Constant(2.0), &SolverConfig::default())
            .unwrap();
        assert_eq!(out.newton_iters, 0);
        assert_eq!(out.field.values, u_old.values);
    }

    #[test]
    fn zero_dt_returns_old_field() {
        let md = density(2, 1.3, 0.1, 6.0);
        let g = grid(2, 5);
        let bc = BoundaryData::Affine { a: 0.0, b: [1.0, 0.0, 0.0] };
        let u_old = InitialData::FromBoundary.build(&g, &bc);
        let out = solve_timestep(&u_old, 0.0, &md, &bc, &SolverConfig::default()).unwrap();
        assert_eq!(out.field.values, u_old.values);
    }

    #[test]
    fn smooth_1d_step_converges_quickly() {
        let md = density(1, 1.3, 0.1, 8.0);
        let g = Arc::new(Grid::new(1, &[64], &[1.0]).unwrap());
        let bc = BoundaryData::Constant(0.0);
        let u_old = InitialData::Bump { amplitude: 1.0 }.build(&g, &bc);
        let dt = 1.0 / 64.0;
        let out = solve_timestep(&u_old, dt, &md, &bc, &SolverConfig::default()).unwrap();
        assert!(out.newton_iters <= 10, "took {} iterations", out.newton_iters);
        assert!(out.final_residual <= 1e-12);
    }

    #[test]
    fn constant_run_is_constant_with_flat_energy() {
        let md = density(2, 1.3, 0.1, 6.0);
        let g = grid(2, 6);
        let cfg = SolverConfig { dt: 0.02, t_end: 0.1, ..Default::default() };
        let run = run_simulation(&cfg, &md, &BoundaryData::Constant(1.5), &InitialData::FromBoundary, &g)
            .unwrap();
        let vol = g.volume();
        let e0 = md.eval(&[0.0, 0.0]).unwrap() * vol;
        for row in &run.series {
            assert!((row.energy - e0).abs() < 1e-12, "{} vs {e0}", row.energy);
        }
        for s in &run.snapshots {
            assert!(s.values.iter().all(|&v| (v - 1.5).abs() < 1e-13));
        }
        assert_eq!(run.boundary_range, (1.5, 1.5));
    }

    #[test]
    fn energy_dissipates_and_dmp_holds_for_bump_run() {
        let md = density(2, 1.3, 0.1, 20.0);
        let g = grid(2, 12);
        let cfg = SolverConfig { dt: 0.01, t_end: 0.08, ..Default::default() };
        let run = run_simulation(
            &cfg,
            &md,
            &BoundaryData::Constant(0.0),
            &InitialData::Bump { amplitude: 0.5 },
            &g,
        )
        .unwrap();
        let energy = run.energy_series();
        for w in energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "energy must not increase: {} -> {}", w[0], w[1]);
        }
        assert!(run.dmp_margin >= -1e-10, "dmp margin {}", run.dmp_margin);
        // the bump decays
        assert!(run.final_field().sup_norm() < 0.5);
    }

    #[test]
    fn incompatible_initial_data_is_rejected() {
        let md = density(2, 1.3, 0.1, 6.0);
        let g = grid(2, 5);
        let err = run_simulation(
            &Default::default(),
            &md,
            &BoundaryData::Constant(1.0),
            &InitialData::Bump { amplitude: 0.5 },
            &g,
        );
        assert!(matches!(err, Err(SolverError::IncompatibleData { .. })));
    }

    #[test]
    fn steady_affine_state_in_1d() {
        // With time-independent affine boundary data the solution converges
        // to the affine interpolant.
        let md = density(1, 1.3, 0.1, 8.0);
        let g = Arc::new(Grid::new(1, &[64], &[1.0]).unwrap());
        let bc = BoundaryData::Affine { a: 0.0, b: [1.0, 0.0, 0.0] };
        // start from a perturbed compatible state
        let init = ScalarField::from_fn(&g, 0.0, |x| {
            x[0] + 0.3 * (std::f64::consts::PI * x[0]).sin()
        });
        let cfg = SolverConfig { dt: 0.05, t_end: 10.0, snapshot_every: 50, ..Default::default() };
        let run = run_simulation(&cfg, &md, &bc, &InitialData::Field(init.values), &g).unwrap();
        let last = run.final_field();
        let mut worst = 0.0f64;
        for idx in 0..g.node_count() {
            let x = g.position(idx)[0];
            worst = worst.max((last.values[idx] - x).abs());
        }
        assert!(worst < 1e-6, "deviation from affine interpolant {worst}");
    }

    #[test]
    fn translation_equivariance() {
        let md = density(1, 1.3, 0.1, 8.0);
        let g = Arc::new(Grid::new(1, &[32], &[1.0]).unwrap());
        let cfg = SolverConfig { dt: 0.02, t_end: 0.1, ..Default::default() };
        let base = run_simulation(&cfg, &md, &BoundaryData::Constant(0.0), &InitialData::Bump { amplitude: 0.4 }, &g)
            .unwrap();
        // shifted: bc + 1 and initial + 1
        let shifted_init: Vec<f64> =
            base.snapshots[0].values.iter().map(|v| v + 1.0).collect();
        let shifted = run_simulation(
            &cfg,
            &md,
            &BoundaryData::Constant(1.0),
            &InitialData::Field(shifted_init),
            &g,
        )
        .unwrap();
        let a = base.final_field();
        let b = shifted.final_field();
        for i in 0..g.node_count() {
            assert!((b.values[i] - a.values[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_reruns() {
        let md = density(2, 1.3, 0.1, 20.0);
        let g = grid(2, 8);
        let cfg = SolverConfig { dt: 0.02, t_end: 0.06, ..Default::default() };
        let r1 = run_simulation(&cfg, &md, &BoundaryData::Constant(0.0), &InitialData::Bump { amplitude: 0.5 }, &g)
            .unwrap();
        let r2 = run_simulation(&cfg, &md, &BoundaryData::Constant(0.0), &InitialData::Bump { amplitude: 0.5 }, &g)
            .unwrap();
        assert_eq!(r1.final_field().values, r2.final_field().values);
        assert_eq!(r1.energy_series(), r2.energy_series());
    }
}
