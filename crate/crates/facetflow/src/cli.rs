//! Command implementations behind the `facetflow` binary.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver nonconvergence,
//! 3 verification/check failure.

use clap::{Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::composites::{check_composite_inequalities, ExponentBook, PsiSpec, PsiVariant};
use crate::config::{parse_config_file, ConfigError, ExperimentConfig};
use crate::iteration::{AbsorbingInstance, MoserInstance};
use crate::lab::{self, DiagnosticsReport, ParabolicCylinder};
use crate::mollify::{verify_structural, SampleSpec};
use crate::runio::{read_run, write_run};
use crate::solver::{run_simulation, RunResult, SolverError};
use crate::truncation::TruncationParams;

#[derive(Parser, Debug)]
#[command(name = "facetflow", version, about = "Numerical laboratory for the regularized (1,p)-Laplace gradient flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one simulation and persist it under the output directory.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// output directory (default `runs/<experiment name>`)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured ε sweep and write the gradient-convergence matrix.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sampling certifiers.
    Verify {
        /// which suite: structure | composites | lemmas
        which: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the regularity checks on a stored run directory.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        /// cylinder `cx[,cy[,cz]],t0,R` overriding the stored config
        #[arg(long)]
        cylinder: Option<String>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
    },
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Solve { config, out } => cmd_solve(&config, out.as_deref()),
        Command::Sweep { config, out } => cmd_sweep(&config, out.as_deref()),
        Command::Verify { which, config, seed } => cmd_verify(&which, &config, seed),
        Command::Analyze { run, delta, cylinder, s, q } => {
            cmd_analyze(&run, delta, cylinder.as_deref(), s, q)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, i32> {
    parse_config_file(path).map_err(|e| {
        eprintln!("config error: {e}");
        1
    })
}

fn solver_exit(e: &SolverError) -> i32 {
    match e {
        SolverError::NonConvergence { .. } => 2,
        _ => 1,
    }
}

fn execute_run(config: &ExperimentConfig, eps: f64) -> Result<RunResult, SolverError> {
    let md = config.build_density(eps).map_err(|e| match e {
        ConfigError::Density(d) => SolverError::Density(d),
        other => {
            // configuration failures surfaced late are still config errors;
            // encode them as incompatible data with the message printed
            eprintln!("config error: {other}");
            SolverError::IncompatibleData { max_gap: f64::NAN, tol: 0.0 }
        }
    })?;
    let grid = config.build_grid();
    run_simulation(&config.solver_config(), &md, &config.boundary_data(), &config.initial_data(), &grid)
}

pub fn cmd_solve(config_path: &Path, out: Option<&Path>) -> i32 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.experiment.name));
    let start = Instant::now();
    match execute_run(&config, config.mollifier.eps) {
        Ok(run) => {
            let wall = start.elapsed().as_secs_f64();
            if let Err(e) = write_run(&dir, &config, &run, wall, "ok") {
                eprintln!("write error: {e}");
                return 1;
            }
            println!(
                "solved `{}`: {} steps, final energy {}, wrote {}",
                config.experiment.name,
                run.series.len() - 1,
                run.energy_series().last().unwrap(),
                dir.display()
            );
            0
        }
        Err(e) => {
            eprintln!("solver error: {e}");
            solver_exit(&e)
        }
    }
}

pub fn cmd_sweep(config_path: &Path, out: Option<&Path>) -> i32 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_sweep", config.experiment.name)));
    let eps_list = config.experiment.eps_list.clone();
    let start = Instant::now();
    let results: Vec<Result<(String, RunResult), SolverError>> = eps_list
        .par_iter()
        .map(|&eps| {
            let id = format!("eps_{eps}");
            execute_run(&config, eps).map(|r| (id, r))
        })
        .collect();
    let mut runs = Vec::new();
    for r in results {
        match r {
            Ok(pair) => runs.push(pair),
            Err(e) => {
                eprintln!("solver error during sweep: {e}");
                return solver_exit(&e);
            }
        }
    }
    let wall = start.elapsed().as_secs_f64();
    for (id, run) in &runs {
        let mut sub = config.clone();
        sub.mollifier.eps = run.eps;
        if let Err(e) = write_run(&dir.join(id), &sub, run, wall, "ok") {
            eprintln!("write error: {e}");
            return 1;
        }
    }
    let report = match lab::epsilon_convergence_study(&runs, config.model.p, config.experiment.tau_frac) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("check error: {e}");
            return 3;
        }
    };
    if let Err(code) = write_reports(&dir, &[report.clone()]) {
        return code;
    }
    println!("{} epsilon_convergence", pass_str(report.pass));
    if report.pass {
        0
    } else {
        3
    }
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn write_reports(dir: &Path, reports: &[DiagnosticsReport]) -> Result<(), i32> {
    if let Err(e) = std::fs::create_dir_all(dir) {
        eprintln!("write error: {e}");
        return Err(1);
    }
    let json = serde_json::to_string_pretty(reports).expect("reports serialize");
    if let Err(e) = std::fs::write(dir.join("report.json"), json + "\n") {
        eprintln!("write error: {e}");
        return Err(1);
    }
    let mut csv = String::from("check,run_ids,pass,margin,fitted_C,fitted_alpha\n");
    for r in reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    if let Err(e) = std::fs::write(dir.join("report.csv"), csv) {
        eprintln!("write error: {e}");
        return Err(1);
    }
    Ok(())
}

pub fn cmd_verify(which: &str, config_path: &Path, seed: Option<u64>) -> i32 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let seed = seed.unwrap_or(config.experiment.seed);
    match which {
        "structure" => verify_structure(&config, seed),
        "composites" => verify_composites(&config, seed),
        "lemmas" => verify_lemmas(seed),
        other => {
            eprintln!("unknown verify suite `{other}` (expected structure|composites|lemmas)");
            1
        }
    }
}

fn verify_structure(config: &ExperimentConfig, seed: u64) -> i32 {
    let model = config.build_model();
    let mut all_pass = true;
    for &eps in &config.experiment.eps_list {
        let md = match config.build_density(eps) {
            Ok(md) => md,
            Err(e) => {
                eprintln!("config error: {e}");
                return 1;
            }
        };
        let spec = SampleSpec { count: 10_000, radius: 3.0, seed };
        let report = verify_structural(&md, &model, &spec, 1e-6);
        for entry in &report.entries {
            println!(
                "{} structure/{} eps={eps} worst_margin={:.3e}",
                pass_str(entry.pass),
                entry.inequality,
                entry.worst_margin
            );
        }
        all_pass &= report.pass;
    }
    if all_pass {
        0
    } else {
        3
    }
}

fn sample_sigmas(rng: &mut ChaCha8Rng, count: usize, hi: f64, big_m: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s: f64 = rng.gen_range(0.0..hi);
        // checkers sample away from the kink points {1, M}
        if (s - 1.0).abs() > 1e-6 && (s - big_m).abs() > 1e-6 {
            out.push(s);
        }
    }
    out
}

fn verify_composites(config: &ExperimentConfig, seed: u64) -> i32 {
    let p = config.model.p;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_pass = true;
    for variant in [PsiVariant::Plain, PsiVariant::Tilde] {
        for &(alpha, big_m, r) in
            &[(0.0, 2.0, 1.5), (0.5, 10.0, 2.0), (1.0, 3.0, 2.0), (2.0, 10.0, 3.0), (3.0, 2.5, 1.5)]
        {
            let spec = PsiSpec::new(variant, alpha, big_m);
            // equality margins need a bounded dynamic range; inequalities
            // are sampled wider
            let hi = if variant == PsiVariant::Plain { 2.2f64.min(big_m * 0.99) } else { 4.0 * big_m };
            let sigmas = sample_sigmas(&mut rng, 1000, hi, big_m);
            let report = check_composite_inequalities(&spec, r, p, &sigmas);
            println!(
                "{} composites/{:?} alpha={alpha} M={big_m} r={r} corrected_gap={:?}",
                pass_str(report.pass),
                variant,
                report.corrected_identity_gap
            );
            all_pass &= report.pass;
        }
    }
    // exponent bookkeeping on the configured (n, p)
    let book = ExponentBook::new(config.model.n, p, config.experiment.s);
    let ok = book.s_c >= 0.0 && book.q_c >= 0.0;
    println!("{} composites/exponents s_c={} q_c={}", pass_str(ok), book.s_c, book.q_c);
    all_pass &= ok;
    if all_pass {
        0
    } else {
        3
    }
}

fn verify_lemmas(seed: u64) -> i32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_pass = true;
    // equality case
    let eq = MoserInstance { a: 1.0, b: 1.0, kappa: 1.5, mu: 1.0, p0: 1.0, y0: 1.7, depth: 60 };
    let out = eq.run().expect("equality case is admissible");
    let eq_ok = (out.y_final - out.bound).abs() <= 1e-12 * out.bound;
    println!("{} lemmas/geometric_equality gap={:.3e}", pass_str(eq_ok), (out.y_final - out.bound).abs());
    all_pass &= eq_ok;
    // seeded admissible instances
    let mut worst_ratio = 0.0f64;
    let mut ok = true;
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
        match inst.run() {
            Ok(o) => {
                ok &= o.pass;
                if o.bound > 0.0 {
                    worst_ratio = worst_ratio.max(o.y_final / o.bound);
                }
            }
            Err(e) => {
                eprintln!("unexpected inadmissible instance: {e}");
                ok = false;
            }
        }
    }
    println!("{} lemmas/geometric_random worst_ratio={worst_ratio:.6}", pass_str(ok));
    all_pass &= ok;
    let mut ok = true;
    for k in 0..100u64 {
        let inst = AbsorbingInstance::random(seed.wrapping_add(k));
        match inst.run() {
            Ok(o) => ok &= o.pass,
            Err(e) => {
                eprintln!("absorbing instance {k}: {e}");
                ok = false;
            }
        }
    }
    println!("{} lemmas/absorbing_random", pass_str(ok));
    all_pass &= ok;
    if all_pass {
        0
    } else {
        3
    }
}

fn parse_cylinder_arg(arg: &str, dim: usize) -> Result<ParabolicCylinder, String> {
    let parts: Result<Vec<f64>, _> = arg.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let parts = parts.map_err(|_| format!("cannot parse cylinder `{arg}`"))?;
    if parts.len() != dim + 2 {
        return Err(format!("cylinder needs {} entries for dim {dim}", dim + 2));
    }
    let mut center = [0.0; 3];
    for d in 0..dim {
        center[d] = parts[d];
    }
    Ok(ParabolicCylinder::new(center, parts[dim], parts[dim + 1]))
}

pub fn cmd_analyze(
    run_dir: &Path,
    delta: Option<f64>,
    cylinder: Option<&str>,
    s: Option<f64>,
    q: Option<f64>,
) -> i32 {
    let (config, run) = match read_run(run_dir) {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("cannot load run: {e}");
            return 1;
        }
    };
    let run_id = run_dir.display().to_string();
    let delta = delta.unwrap_or(config.experiment.delta);
    let s = s.unwrap_or(config.experiment.s);
    let q = q.unwrap_or(config.experiment.q);
    let cyl = match cylinder {
        Some(argtext) => match parse_cylinder_arg(argtext, config.grid.dim) {
            Ok(c) => Some(c),
            Err(msg) => {
                eprintln!("{msg}");
                return 1;
            }
        },
        None => config.cylinder(),
    };

    let mut reports = Vec::new();
    reports.push(lab::check_max_principle(&run, &run_id));
    reports.push(lab::vw_compatibility(&run, &run_id));

    // facet fraction time series, summarized by its final value
    let series = lab::facet_fraction(&run, delta);
    let last = series.last().copied().unwrap_or((0.0, 0.0));
    reports.push(DiagnosticsReport {
        check: "facet_fraction".into(),
        run_ids: vec![run_id.clone()],
        params: serde_json::json!({ "delta": delta }),
        margins: serde_json::json!({ "series": series, "final": last.1 }),
        fitted: None,
        pass: (0.0..=1.0).contains(&last.1),
    });

    match config.build_density(run.eps) {
        Ok(md) => match lab::euler_identity_residual(&run, &run_id, &md) {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("skipping euler_identity_residual: {e}"),
        },
        Err(e) => {
            eprintln!("config error: {e}");
            return 1;
        }
    }

    if let Some(cyl) = cyl {
        match lab::sup_estimate_ratio(&run, &run_id, &cyl, s) {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("skipping sup_estimate_ratio: {e}"),
        }
        match lab::reversed_holder_ratio(&run, &run_id, &cyl, q) {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("skipping reversed_holder_ratio: {e}"),
        }
        match lab::sup_vq_ratio(&run, &run_id, &cyl, q) {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("skipping sup_vq_ratio: {e}"),
        }
        let params = TruncationParams { delta, eps: run.eps };
        if params.holder_admissible() {
            match lab::holder_modulus_estimate(&run, &run_id, &params, &cyl, 10_000, config.experiment.seed) {
                Ok(r) => reports.push(r),
                Err(e) => eprintln!("skipping holder_modulus: {e}"),
            }
        }
    }

    for r in &reports {
        println!("{} {}", pass_str(r.pass), r.check);
    }
    let all_pass = reports.iter().all(|r| r.pass);
    if let Err(code) = write_reports(run_dir, &reports) {
        return code;
    }
    if all_pass {
        0
    } else {
        3
    }
}
