//! Empirical verification of the theorem-level statements on recorded runs:
//! maximum/comparison principles, ε-convergence of gradients, local
//! boundedness ratios, V/W compatibility, and the Hölder-modulus fit of the
//! truncated gradient.
//!
//! Every "there exists a constant C" statement is tested as stability of the
//! fitted empirical ratio across mesh refinement and ε, since the source
//! theory never provides numeric constants.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::composites::ExponentBook;
use crate::energy::{dot, norm};
use crate::mollify::{DensityPart, MollifiedDensity};
use crate::solver::RunResult;
use crate::truncation::{compatibility_constant, v_eps, w_eps, TruncationParams};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("parabolic cylinder exits the run domain: {0}")]
    Geometry(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("runs are incompatible: {0}")]
    IncompatibleRuns(String),
}

/// Parabolic cylinder `B_R(x₀) × (t₀−R², t₀]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub center: [f64; 3],
    pub t0: f64,
    pub radius: f64,
}

impl ParabolicCylinder {
    pub fn new(center: [f64; 3], t0: f64, radius: f64) -> Self {
        ParabolicCylinder { center, t0, radius }
    }

    pub fn half(&self) -> Self {
        ParabolicCylinder { center: self.center, t0: self.t0, radius: self.radius / 2.0 }
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t > self.t0 - self.radius * self.radius - 1e-12 && t <= self.t0 + 1e-12
    }

    fn contains_point(&self, x: &[f64], dim: usize) -> bool {
        let mut d2 = 0.0;
        for a in 0..dim {
            let d = x[a] - self.center[a];
            d2 += d * d;
        }
        d2 < self.radius * self.radius
    }

    /// The cylinder (and its spatial ball) must fit inside the run's
    /// space-time domain.
    pub fn validate(&self, run: &RunResult) -> Result<(), LabError> {
        let grid = &run.grid;
        for a in 0..grid.dim {
            if self.center[a] - self.radius < -1e-12
                || self.center[a] + self.radius > grid.extent[a] + 1e-12
            {
                return Err(LabError::Geometry(format!(
                    "ball of radius {} at {:?} leaves axis {a}",
                    self.radius, self.center
                )));
            }
        }
        let t_end = run.final_field().time;
        if self.t0 > t_end + 1e-12 || self.t0 - self.radius * self.radius < -1e-12 {
            return Err(LabError::Geometry(format!(
                "time window ({}, {}] leaves (0, {t_end}]",
                self.t0 - self.radius * self.radius,
                self.t0
            )));
        }
        Ok(())
    }
}

/// Fitted constants of a diagnostic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FittedConstants {
    #[serde(rename = "C")]
    pub c: f64,
    pub alpha: f64,
}

/// Outcome of one check, serializable for the CLI report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub check: String,
    pub run_ids: Vec<String>,
    pub params: Value,
    pub margins: Value,
    pub fitted: Option<FittedConstants>,
    pub pass: bool,
}

impl DiagnosticsReport {
    /// The single headline margin, when one exists.
    pub fn main_margin(&self) -> Option<f64> {
        self.margins.get("margin").and_then(Value::as_f64)
    }

    /// Fixed-schema row for `report.csv`:
    /// `check,run_ids,pass,margin,fitted_C,fitted_alpha`.
    pub fn csv_row(&self) -> String {
        let margin = self.main_margin().map(|m| m.to_string()).unwrap_or_default();
        let (c, a) = self
            .fitted
            .map(|f| (f.c.to_string(), f.alpha.to_string()))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.check,
            self.run_ids.join("|"),
            self.pass,
            margin,
            c,
            a
        )
    }
}

/// Snapshot indices and node indices inside the cylinder, with quadrature
/// weights (node trapezoid weight × dt).
struct CylinderSamples {
    /// (snapshot index, dt weight)
    times: Vec<(usize, f64)>,
    nodes: Vec<usize>,
}

fn cylinder_samples(run: &RunResult, cyl: &ParabolicCylinder) -> Result<CylinderSamples, LabError> {
    cyl.validate(run)?;
    let grid = &run.grid;
    let mut times = Vec::new();
    for (i, s) in run.snapshots.iter().enumerate() {
        if cyl.contains_time(s.time) && s.time > 1e-14 {
            let dt = if i == 0 { 0.0 } else { s.time - run.snapshots[i - 1].time };
            times.push((i, dt.max(1e-14)));
        }
    }
    let nodes: Vec<usize> = (0..grid.node_count())
        .filter(|&idx| cyl.contains_point(&grid.position(idx), grid.dim))
        .collect();
    if times.is_empty() || nodes.is_empty() {
        return Err(LabError::Geometry("cylinder contains no samples".into()));
    }
    Ok(CylinderSamples { times, nodes })
}

/// `‖u_ε‖_∞ ≤ ‖u_*‖_∞` over the whole run; scans the stored snapshots so
/// that corrupted data is caught and located.
pub fn check_max_principle(run: &RunResult, run_id: &str) -> DiagnosticsReport {
    let mut worst = f64::NEG_INFINITY;
    let mut where_ = (0usize, 0usize);
    for (si, snap) in run.snapshots.iter().enumerate() {
        for (ni, v) in snap.values.iter().enumerate() {
            if v.abs() > worst {
                worst = v.abs();
                where_ = (si, ni);
            }
        }
    }
    let margin = run.boundary_sup - worst;
    let pass = margin >= -1e-10;
    DiagnosticsReport {
        check: "max_principle".into(),
        run_ids: vec![run_id.into()],
        params: json!({ "boundary_sup": run.boundary_sup }),
        margins: json!({
            "margin": margin,
            "worst_snapshot": where_.0,
            "worst_node": where_.1,
        }),
        fitted: None,
        pass,
    }
}

/// Ordered boundary data must give ordered solutions: reports the worst
/// violation `min (u_B − u_A)` over all nodes and snapshot times.
pub fn check_comparison(
    run_a: &RunResult,
    run_b: &RunResult,
    ids: (&str, &str),
) -> Result<DiagnosticsReport, LabError> {
    if run_a.grid != run_b.grid {
        return Err(LabError::IncompatibleRuns("different grids".into()));
    }
    if run_a.snapshots.len() != run_b.snapshots.len() || (run_a.eps - run_b.eps).abs() > 1e-14 {
        return Err(LabError::IncompatibleRuns("different configs".into()));
    }
    let mut worst = f64::INFINITY;
    for (sa, sb) in run_a.snapshots.iter().zip(&run_b.snapshots) {
        if (sa.time - sb.time).abs() > 1e-12 {
            return Err(LabError::IncompatibleRuns("snapshot times differ".into()));
        }
        for (va, vb) in sa.values.iter().zip(&sb.values) {
            worst = worst.min(vb - va);
        }
    }
    Ok(DiagnosticsReport {
        check: "comparison_principle".into(),
        run_ids: vec![ids.0.into(), ids.1.into()],
        params: json!({}),
        margins: json!({ "margin": worst }),
        fitted: None,
        pass: worst >= -1e-8,
    })
}

/// Discrete space-time `L^p` norm of the gradient difference of two runs
/// over `Ω × (0, T−τ]`.
fn grad_diff_lp(run_a: &RunResult, run_b: &RunResult, p: f64, t_cut: f64) -> f64 {
    let grid = &run_a.grid;
    let mut total = 0.0;
    for (i, (sa, sb)) in run_a.snapshots.iter().zip(&run_b.snapshots).enumerate() {
        if sa.time > t_cut + 1e-12 || i == 0 {
            continue;
        }
        let dt = sa.time - run_a.snapshots[i - 1].time;
        let ga = sa.gradient();
        let gb = sb.gradient();
        for idx in 0..grid.node_count() {
            let d: f64 = ga[idx]
                .iter()
                .zip(&gb[idx])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            total += grid.node_weight(idx) * dt * d.powf(p);
        }
    }
    total.powf(1.0 / p)
}

/// ε-convergence study: pairwise `L^p` distances of gradients over the runs
/// of a decreasing ε sweep, excluding the final time band of width
/// `tau_frac·T`. Passes iff consecutive distances are nonincreasing.
pub fn epsilon_convergence_study(
    runs: &[(String, RunResult)],
    p: f64,
    tau_frac: f64,
) -> Result<DiagnosticsReport, LabError> {
    for w in runs.windows(2) {
        if w[1].1.eps >= w[0].1.eps {
            return Err(LabError::Hypothesis("eps list must be strictly decreasing".into()));
        }
        if w[0].1.grid != w[1].1.grid || w[0].1.snapshots.len() != w[1].1.snapshots.len() {
            return Err(LabError::IncompatibleRuns("sweep runs differ beyond eps".into()));
        }
    }
    let ids: Vec<String> = runs.iter().map(|(id, _)| id.clone()).collect();
    if runs.len() < 2 {
        return Ok(DiagnosticsReport {
            check: "epsilon_convergence".into(),
            run_ids: ids,
            params: json!({ "p": p, "tau_frac": tau_frac }),
            margins: json!({ "matrix": [], "consecutive": [] }),
            fitted: None,
            pass: true,
        });
    }
    let t_end = runs[0].1.final_field().time;
    let t_cut = t_end * (1.0 - tau_frac);
    let k = runs.len();
    let mut matrix = vec![vec![0.0f64; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = grad_diff_lp(&runs[i].1, &runs[j].1, p, t_cut);
            matrix[i][j] = d;
            matrix[j][i] = d;
        }
    }
    let consecutive: Vec<f64> = (0..k - 1).map(|i| matrix[i][i + 1]).collect();
    let pass = consecutive.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(DiagnosticsReport {
        check: "epsilon_convergence".into(),
        run_ids: ids,
        params: json!({ "p": p, "tau_frac": tau_frac, "t_cut": t_cut }),
        margins: json!({ "matrix": matrix, "consecutive": consecutive }),
        fitted: None,
        pass,
    })
}

fn average_over(
    run: &RunResult,
    samples: &CylinderSamples,
    mut f: impl FnMut(usize, usize) -> f64,
) -> f64 {
    let grid = &run.grid;
    let mut total = 0.0;
    let mut weight = 0.0;
    for &(si, dt) in &samples.times {
        for &idx in &samples.nodes {
            let w = grid.node_weight(idx) * dt;
            total += w * f(si, idx);
            weight += w;
        }
    }
    total / weight
}

fn integral_over(
    run: &RunResult,
    samples: &CylinderSamples,
    mut f: impl FnMut(usize, usize) -> f64,
) -> f64 {
    let grid = &run.grid;
    let mut total = 0.0;
    for &(si, dt) in &samples.times {
        for &idx in &samples.nodes {
            total += grid.node_weight(idx) * dt * f(si, idx);
        }
    }
    total
}

fn sup_over(
    _run: &RunResult,
    samples: &CylinderSamples,
    mut f: impl FnMut(usize, usize) -> f64,
) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &(si, _) in &samples.times {
        for &idx in &samples.nodes {
            m = m.max(f(si, idx));
        }
    }
    m
}

/// Fitted constant of the local sup bound
/// `sup_{Q_{R/2}} |u| ≤ C (R^{−s_c} ⨏_{Q_R} (|u|+1)^s)^{1/(s−s_c)}`.
pub fn sup_estimate_ratio(
    run: &RunResult,
    run_id: &str,
    cyl: &ParabolicCylinder,
    s: f64,
) -> Result<DiagnosticsReport, LabError> {
    let book = ExponentBook::new(run.grid.dim, run.p, s);
    if s <= book.s_c {
        return Err(LabError::Hypothesis(format!("s = {s} must exceed s_c = {}", book.s_c)));
    }
    let outer = cylinder_samples(run, cyl)?;
    let inner = cylinder_samples(run, &cyl.half())?;
    let lhs = sup_over(run, &inner, |si, idx| run.snapshots[si].values[idx].abs());
    let avg = average_over(run, &outer, |si, idx| {
        (run.snapshots[si].values[idx].abs() + 1.0).powf(s)
    });
    let rhs = (cyl.radius.powf(-book.s_c) * avg).powf(1.0 / (s - book.s_c));
    let c = lhs / rhs;
    Ok(DiagnosticsReport {
        check: "sup_estimate_ratio".into(),
        run_ids: vec![run_id.into()],
        params: json!({ "s": s, "s_c": book.s_c, "radius": cyl.radius }),
        margins: json!({ "lhs": lhs, "rhs": rhs }),
        fitted: Some(FittedConstants { c, alpha: 0.0 }),
        pass: c.is_finite() && c >= 0.0,
    })
}

fn v_field(run: &RunResult, si: usize) -> Vec<f64> {
    run.snapshots[si]
        .gradient()
        .iter()
        .map(|g| v_eps(g, run.eps))
        .collect()
}

/// Fitted constant of `∬_{Q_{R/2}} V^q ≤ C ∬_{Q_R} (V^p + 1)`.
pub fn reversed_holder_ratio(
    run: &RunResult,
    run_id: &str,
    cyl: &ParabolicCylinder,
    q: f64,
) -> Result<DiagnosticsReport, LabError> {
    if q <= run.p {
        return Err(LabError::Hypothesis(format!("q = {q} must exceed p = {}", run.p)));
    }
    let outer = cylinder_samples(run, cyl)?;
    let inner = cylinder_samples(run, &cyl.half())?;
    let vcache: Vec<(usize, Vec<f64>)> =
        outer.times.iter().map(|&(si, _)| (si, v_field(run, si))).collect();
    let vget = |si: usize| -> &Vec<f64> {
        &vcache.iter().find(|(i, _)| *i == si).expect("cached").1
    };
    let num = integral_over(run, &inner, |si, idx| vget(si)[idx].powf(q));
    let den = integral_over(run, &outer, |si, idx| vget(si)[idx].powf(run.p) + 1.0);
    let c = num / den;
    Ok(DiagnosticsReport {
        check: "reversed_holder_ratio".into(),
        run_ids: vec![run_id.into()],
        params: json!({ "q": q, "p": run.p, "radius": cyl.radius }),
        margins: json!({ "numerator": num, "denominator": den }),
        fitted: Some(FittedConstants { c, alpha: 0.0 }),
        pass: c.is_finite() && c >= 0.0,
    })
}

/// Fitted constant of
/// `ess sup_{Q_{R/2}} V ≤ C (⨏_{Q_R} (1+V)^q)^{1/(q−q_c)}` for `q > q_c, q ≥ 2`.
pub fn sup_vq_ratio(
    run: &RunResult,
    run_id: &str,
    cyl: &ParabolicCylinder,
    q: f64,
) -> Result<DiagnosticsReport, LabError> {
    let book = ExponentBook::new(run.grid.dim, run.p, q);
    if q <= book.q_c || q < 2.0 {
        return Err(LabError::Hypothesis(format!(
            "need q > q_c = {} and q >= 2, got q = {q}",
            book.q_c
        )));
    }
    let outer = cylinder_samples(run, cyl)?;
    let inner = cylinder_samples(run, &cyl.half())?;
    let vcache: Vec<(usize, Vec<f64>)> =
        outer.times.iter().map(|&(si, _)| (si, v_field(run, si))).collect();
    let vget = |si: usize| -> &Vec<f64> {
        &vcache.iter().find(|(i, _)| *i == si).expect("cached").1
    };
    let lhs = sup_over(run, &inner, |si, idx| vget(si)[idx]);
    let avg = average_over(run, &outer, |si, idx| (1.0 + vget(si)[idx]).powf(q));
    let rhs = avg.powf(1.0 / (q - book.q_c));
    let c = lhs / rhs;
    Ok(DiagnosticsReport {
        check: "sup_vq_ratio".into(),
        run_ids: vec![run_id.into()],
        params: json!({ "q": q, "q_c": book.q_c, "radius": cyl.radius }),
        margins: json!({ "lhs": lhs, "rhs": rhs }),
        fitted: Some(FittedConstants { c, alpha: 0.0 }),
        pass: c.is_finite() && c >= 0.0,
    })
}

/// Stability of a fitted constant across runs: `max/min ≤ factor`.
pub fn ratio_stability(reports: &[DiagnosticsReport], factor: f64) -> DiagnosticsReport {
    let values: Vec<f64> = reports.iter().filter_map(|r| r.fitted.map(|f| f.c)).collect();
    let ids: Vec<String> = reports.iter().flat_map(|r| r.run_ids.clone()).collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    let check = reports.first().map(|r| r.check.clone()).unwrap_or_default();
    DiagnosticsReport {
        check: format!("{check}_stability"),
        run_ids: ids,
        params: json!({ "factor": factor }),
        margins: json!({ "margin": factor - ratio, "max": max, "min": min, "ratio": ratio }),
        fitted: None,
        pass: values.len() >= 2 && min > 0.0 && ratio <= factor,
    }
}

/// sup of `V_ε` over the cylinder per run; the sweep passes iff the series
/// is bounded: `max/min ≤ 1.2` (the theorem's constant is ε-independent).
pub fn gradient_sup_series(
    runs: &[(String, RunResult)],
    cyl: &ParabolicCylinder,
) -> Result<DiagnosticsReport, LabError> {
    let mut series = Vec::new();
    for (_, run) in runs {
        let samples = cylinder_samples(run, cyl)?;
        series.push(sup_over(run, &samples, |si, idx| v_field(run, si)[idx]));
    }
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = !series.is_empty() && min > 0.0 && max / min <= 1.2;
    Ok(DiagnosticsReport {
        check: "gradient_sup_series".into(),
        run_ids: runs.iter().map(|(id, _)| id.clone()).collect(),
        params: json!({ "radius": cyl.radius }),
        margins: json!({ "series": series, "margin": 1.2 - max / min }),
        fitted: None,
        pass,
    })
}

/// Magnitude of the regularized truncated gradient for one node gradient.
fn trunc_mag(g: &[f64], eps: f64, delta: f64) -> f64 {
    ((eps * eps + g.iter().map(|x| x * x).sum::<f64>()).sqrt() - 2.0 * delta).max(0.0)
}

/// Hölder-modulus estimate of `𝒢_{2δ,ε}(∇u_ε)` over a cylinder.
///
/// Verifies the sup bounds, then fits `log|Δ𝒢|` against `log d_p` over the
/// binned upper envelope of at least `pairs` sampled point pairs. A field
/// with `𝒢 ≡ 0` (or constant) is reported as trivially Hölder.
pub fn holder_modulus_estimate(
    run: &RunResult,
    run_id: &str,
    params: &TruncationParams,
    cyl: &ParabolicCylinder,
    pairs: usize,
    seed: u64,
) -> Result<DiagnosticsReport, LabError> {
    if !params.holder_admissible() {
        return Err(LabError::Hypothesis(format!(
            "need eps <= delta/8, got eps = {}, delta = {}",
            params.eps, params.delta
        )));
    }
    if (params.eps - run.eps).abs() > 1e-12 {
        return Err(LabError::Hypothesis("truncation eps must match the run's eps".into()));
    }
    let samples = cylinder_samples(run, cyl)?;
    let grid = &run.grid;
    let delta = params.delta;
    let eps = run.eps;

    // Truncated-gradient vectors and V per included snapshot.
    let mut gfields: Vec<(usize, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for &(si, _) in &samples.times {
        let grads = run.snapshots[si].gradient();
        let vs: Vec<f64> = grads.iter().map(|g| v_eps(g, eps)).collect();
        let tg: Vec<Vec<f64>> = grads
            .iter()
            .map(|g| {
                let r = norm(g);
                let mag = trunc_mag(g, eps, delta);
                if r == 0.0 || mag == 0.0 {
                    vec![0.0; grid.dim]
                } else {
                    g.iter().map(|&gi| mag * gi / r).collect()
                }
            })
            .collect();
        gfields.push((si, tg, vs));
    }

    let sup_v = gfields
        .iter()
        .flat_map(|(_, _, vs)| samples.nodes.iter().map(move |&i| vs[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    let sup_g = gfields
        .iter()
        .flat_map(|(_, tg, _)| samples.nodes.iter().map(move |&i| norm(&tg[i])))
        .fold(f64::NEG_INFINITY, f64::max);

    // Exact formula bound: sup|𝒢| = max(0, sup V − 2δ).
    let formula_gap = (sup_g - (sup_v - 2.0 * delta).max(0.0)).abs();

    if sup_g == 0.0 {
        return Ok(DiagnosticsReport {
            check: "holder_modulus".into(),
            run_ids: vec![run_id.into()],
            params: json!({ "delta": delta, "eps": eps, "radius": cyl.radius }),
            margins: json!({ "sup_v": sup_v, "sup_g": 0.0, "formula_gap": formula_gap,
                              "trivial": "truncation annihilates the field" }),
            fitted: None,
            pass: formula_gap == 0.0,
        });
    }

    // Theorem-mirror bound with μ₀ = sup V − δ.
    let sup_bound_margin = (sup_v - delta) - sup_g;

    // Sample point pairs and collect (d_p, |Δ𝒢|).
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<(f64, f64)> = Vec::with_capacity(pairs);
    let nt = samples.times.len();
    let nn = samples.nodes.len();
    for _ in 0..pairs {
        let (a_t, b_t) = (rng.gen_range(0..nt), rng.gen_range(0..nt));
        let (a_n, b_n) = (rng.gen_range(0..nn), rng.gen_range(0..nn));
        let (sa, ta) = (a_t, run.snapshots[gfields[a_t].0].time);
        let (sb, tb) = (b_t, run.snapshots[gfields[b_t].0].time);
        let (ia, ib) = (samples.nodes[a_n], samples.nodes[b_n]);
        if ia == ib && sa == sb {
            continue;
        }
        let xa = grid.position(ia);
        let xb = grid.position(ib);
        let dx: f64 = (0..grid.dim).map(|d| (xa[d] - xb[d]).powi(2)).sum::<f64>().sqrt();
        let dp = dx.max((ta - tb).abs().sqrt());
        if dp <= 0.0 {
            continue;
        }
        let ga = &gfields[sa].1[ia];
        let gb = &gfields[sb].1[ib];
        let dg: f64 = ga.iter().zip(gb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        data.push((dp, dg));
    }

    if data.iter().all(|&(_, dg)| dg == 0.0) {
        return Ok(DiagnosticsReport {
            check: "holder_modulus".into(),
            run_ids: vec![run_id.into()],
            params: json!({ "delta": delta, "eps": eps, "radius": cyl.radius }),
            margins: json!({ "sup_v": sup_v, "sup_g": sup_g, "formula_gap": formula_gap,
                              "trivial": "field is constant over the cylinder" }),
            fitted: None,
            pass: formula_gap == 0.0,
        });
    }

    // Binned upper envelope in log d_p, least squares on the bin maxima.
    let logs: Vec<f64> = data.iter().map(|&(d, _)| d.ln()).collect();
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    const BINS: usize = 24;
    let width = ((hi - lo) / BINS as f64).max(1e-12);
    let mut env = vec![f64::NEG_INFINITY; BINS];
    for (k, &(_, dg)) in data.iter().enumerate() {
        let b = (((logs[k] - lo) / width) as usize).min(BINS - 1);
        env[b] = env[b].max(dg);
    }
    let pts: Vec<(f64, f64)> = env
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.0)
        .map(|(b, &e)| (lo + (b as f64 + 0.5) * width, e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(LabError::Geometry("not enough envelope bins for a fit".into()));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;

    let pass = formula_gap == 0.0 && sup_bound_margin >= -1e-12 && slope > 0.0;
    Ok(DiagnosticsReport {
        check: "holder_modulus".into(),
        run_ids: vec![run_id.into()],
        params: json!({ "delta": delta, "eps": eps, "radius": cyl.radius,
                         "pairs": data.len(), "bins": pts.len() }),
        margins: json!({ "sup_v": sup_v, "sup_g": sup_g, "formula_gap": formula_gap,
                          "sup_bound_margin": sup_bound_margin }),
        fitted: Some(FittedConstants { c: intercept.exp(), alpha: slope }),
        pass,
    })
}

/// Fraction of nodes with `V_ε ≤ δ`, per snapshot.
pub fn facet_fraction(run: &RunResult, delta: f64) -> Vec<(f64, f64)> {
    run.snapshots
        .iter()
        .enumerate()
        .map(|(si, snap)| {
            let vs = v_field(run, si);
            let count = vs.iter().filter(|&&v| v <= delta).count();
            (snap.time, count as f64 / vs.len() as f64)
        })
        .collect()
}

/// Pointwise compatibility `V ≤ c_n W ≤ c_n(1+V)` everywhere and
/// `W ≤ √2 V` on `{|∇u| > 1}`, with `c_n = √n + 1`.
pub fn vw_compatibility(run: &RunResult, run_id: &str) -> DiagnosticsReport {
    let c_n = compatibility_constant(run.grid.dim);
    let mut m1 = f64::INFINITY;
    let mut m2 = f64::INFINITY;
    let mut m3 = f64::INFINITY;
    for si in 0..run.snapshots.len() {
        let grads = run.snapshots[si].gradient();
        for g in &grads {
            let v = v_eps(g, run.eps);
            let w = w_eps(g);
            m1 = m1.min(c_n * w - v);
            m2 = m2.min(c_n * (1.0 + v) - c_n * w);
            if norm(g) > 1.0 {
                m3 = m3.min(2f64.sqrt() * v - w);
            }
        }
    }
    let worst = m1.min(m2).min(if m3.is_finite() { m3 } else { f64::INFINITY });
    DiagnosticsReport {
        check: "vw_compatibility".into(),
        run_ids: vec![run_id.into()],
        params: json!({ "c_n": c_n }),
        margins: json!({ "margin": worst, "lower_chain": m1, "upper_chain": m2,
                          "nondegenerate": if m3.is_finite() { Value::from(m3) } else { Value::Null } }),
        fitted: None,
        pass: worst >= -1e-12,
    }
}

/// sup over nodes of `|⟨∇E_{1,ε}(∇u) | ∇u⟩ − E₁(∇u)|`; bounded by `2Kε`
/// plus the quadrature tolerance.
pub fn euler_identity_residual(
    run: &RunResult,
    run_id: &str,
    md: &MollifiedDensity,
) -> Result<DiagnosticsReport, LabError> {
    if (md.eps - run.eps).abs() > 1e-14 {
        return Err(LabError::Hypothesis("density eps must match the run".into()));
    }
    let mut worst = 0.0f64;
    for snap in &run.snapshots {
        for g in &snap.gradient() {
            let r = norm(g);
            if r > md.r_max {
                return Err(LabError::Hypothesis(format!("gradient {r} exceeds the table")));
            }
            let (_, d1, _) = md.profile_extended(DensityPart::One, r);
            let grad_e1: Vec<f64> =
                if r == 0.0 { vec![0.0; g.len()] } else { g.iter().map(|&x| d1 * x / r).collect() };
            let res = (dot(&grad_e1, g) - r).abs();
            worst = worst.max(res);
        }
    }
    let bound = 2.0 * md.model.k_bound * md.eps + 1e-8;
    Ok(DiagnosticsReport {
        check: "euler_identity_residual".into(),
        run_ids: vec![run_id.into()],
        params: json!({ "eps": md.eps, "k_bound": md.model.k_bound }),
        margins: json!({ "margin": bound - worst, "residual": worst, "bound": bound }),
        fitted: None,
        pass: worst <= bound,
    })
}
