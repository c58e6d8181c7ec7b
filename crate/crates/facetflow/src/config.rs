//! Experiment configuration: INI-style sectioned `key = value` text with
//! located validation errors, a canonical emitter (so `parse(emit(c)) = c`),
//! and builders for the domain objects.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

use crate::energy::{DensityKind, EnergyModel};
use crate::grid::{BoundaryData, Grid, InitialData};
use crate::lab::ParabolicCylinder;
use crate::mollify::{mollify_density, DensityError, MollifiedDensity, QuadSpec};
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Located { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Density(#[from] DensityError),
}

fn located(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Located { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub n: usize,
    pub p: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub k: f64,
    pub subcritical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifierSection {
    pub eps: f64,
    pub quad_tol: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub damping: f64,
    pub picard_fallback: bool,
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundarySection {
    Constant { value: f64 },
    Affine { a: f64, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSection {
    Boundary,
    Bump { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub name: String,
    pub eps_list: Vec<f64>,
    pub delta: f64,
    pub s: f64,
    pub q: f64,
    /// `cx[,cy[,cz]],t0,R`
    pub cylinder: Option<Vec<f64>>,
    pub seed: u64,
    pub tau_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub mollifier: MollifierSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub solver: SolverSection,
    pub boundary: BoundarySection,
    pub initial: InitialSection,
    pub experiment: ExperimentSection,
}

struct RawItem {
    line: usize,
    value: String,
    used: bool,
}

struct RawConfig {
    items: Vec<(String, String, RawItem)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut items = Vec::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| located(line_no, "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| located(line_no, "expected `key = value`"))?;
            if section.is_empty() {
                return Err(located(line_no, "key outside of any [section]"));
            }
            items.push((
                section.clone(),
                key.trim().to_string(),
                RawItem { line: line_no, value: value.trim().to_string(), used: false },
            ));
        }
        Ok(RawConfig { items })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        for (s, k, item) in self.items.iter_mut() {
            if s == section && k == key && !item.used {
                item.used = true;
                return Some((item.line, item.value.clone()));
            }
        }
        None
    }

    fn check_consumed(&self) -> Result<(), ConfigError> {
        for (s, k, item) in &self.items {
            if !item.used {
                return Err(located(item.line, format!("unknown key `{k}` in section [{s}]")));
            }
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse::<T>().map_err(|_| located(line, format!("cannot parse `{v}` for {key}")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| located(line, format!("bad list entry in {key}"))))
        .collect()
}

macro_rules! field {
    ($raw:expr, $section:literal, $key:literal, $ty:ty, $default:expr) => {
        match $raw.take($section, $key) {
            Some((line, v)) => parse_num::<$ty>(line, $key, &v)?,
            None => $default,
        }
    };
}

/// Parse and validate a configuration text. Every numeric constraint of the
/// downstream types is checked here with a located message.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = RawConfig::parse(text)?;

    // [model]
    let (p_line, p): (usize, f64) = match raw.take("model", "p") {
        Some((line, v)) => (line, parse_num(line, "p", &v)?),
        None => return Err(ConfigError::Invalid("missing [model] p".into())),
    };
    if !(p > 1.0) {
        return Err(located(p_line, format!("p must exceed 1, got {p}")));
    }
    let n = field!(raw, "model", "n", usize, 1);
    if !(1..=3).contains(&n) {
        return Err(ConfigError::Invalid(format!("model n must be 1, 2, or 3, got {n}")));
    }
    let lambda = field!(raw, "model", "lambda", f64, (p - 1.0).min(1.0) / 2.0);
    let big_lambda = field!(raw, "model", "Lambda", f64, 2.0);
    let k = field!(raw, "model", "K", f64, 2.0);
    let subcritical = field!(raw, "model", "subcritical", bool, false);
    if subcritical {
        let threshold = 2.0 * n as f64 / (n as f64 + 2.0);
        if n < 3 || p > threshold {
            return Err(located(
                p_line,
                format!("subcritical mode requires n >= 3 and p <= 2n/(n+2) = {threshold}, got n = {n}, p = {p}"),
            ));
        }
    }
    let model = ModelSection { n, p, lambda, big_lambda, k, subcritical };
    EnergyModel::new(n, p, lambda, big_lambda, k, DensityKind::Euclidean)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    // [mollifier]
    let eps = field!(raw, "mollifier", "eps", f64, 0.1);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ConfigError::Invalid(format!("mollifier eps must lie in (0,1), got {eps}")));
    }
    let quad_tol = field!(raw, "mollifier", "quad_tol", f64, 1e-10);
    let expected_sup = field!(raw, "mollifier", "expected_sup_grad", f64, 1.0);
    let r_max = field!(raw, "mollifier", "r_max", f64, 8.0 * (expected_sup + 1.0));
    if !(r_max > 1.0) {
        return Err(ConfigError::Invalid("mollifier r_max must exceed 1".into()));
    }
    let mollifier = MollifierSection { eps, quad_tol, r_max };

    // [grid]
    let dim = field!(raw, "grid", "dim", usize, 1);
    let cells = match raw.take("grid", "cells") {
        Some((line, v)) => parse_list::<usize>(line, "cells", &v)?,
        None => vec![64],
    };
    let extent = match raw.take("grid", "extent") {
        Some((line, v)) => parse_list::<f64>(line, "extent", &v)?,
        None => vec![1.0; dim],
    };
    if cells.len() != dim || extent.len() != dim {
        return Err(ConfigError::Invalid(format!(
            "grid cells/extent must list exactly dim = {dim} entries"
        )));
    }
    let grid = GridSection { dim, cells, extent };
    Grid::new(dim, &grid.cells, &grid.extent).map_err(|e| ConfigError::Invalid(e.to_string()))?;

    // [time]
    let dt = field!(raw, "time", "dt", f64, 0.01);
    let t_end = field!(raw, "time", "t_end", f64, 0.1);
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(ConfigError::Invalid("time dt must be positive and t_end nonnegative".into()));
    }
    let time = TimeSection { dt, t_end };

    // [solver]
    let newton_tol = field!(raw, "solver", "newton_tol", f64, 1e-12);
    if !(newton_tol > 0.0) {
        return Err(ConfigError::Invalid("solver newton_tol must be positive".into()));
    }
    let solver = SolverSection {
        newton_tol,
        newton_max_iter: field!(raw, "solver", "newton_max_iter", usize, 40),
        damping: field!(raw, "solver", "damping", f64, 0.5),
        picard_fallback: field!(raw, "solver", "picard_fallback", bool, true),
        snapshot_every: field!(raw, "solver", "snapshot_every", usize, 1),
    };

    // [boundary]
    let boundary = match raw.take("boundary", "kind") {
        Some((line, v)) => match v.as_str() {
            "constant" => {
                BoundarySection::Constant { value: field!(raw, "boundary", "value", f64, 0.0) }
            }
            "affine" => {
                let a = field!(raw, "boundary", "a", f64, 0.0);
                let b = match raw.take("boundary", "b") {
                    Some((bl, bv)) => parse_list::<f64>(bl, "b", &bv)?,
                    None => vec![0.0; dim],
                };
                if b.len() != dim {
                    return Err(located(line, format!("boundary b must list {dim} slopes")));
                }
                BoundarySection::Affine { a, b }
            }
            other => return Err(located(line, format!("unknown boundary kind `{other}`"))),
        },
        None => BoundarySection::Constant { value: 0.0 },
    };

    // [initial]
    let initial = match raw.take("initial", "kind") {
        Some((line, v)) => match v.as_str() {
            "boundary" => InitialSection::Boundary,
            "bump" => {
                InitialSection::Bump { amplitude: field!(raw, "initial", "amplitude", f64, 0.5) }
            }
            other => return Err(located(line, format!("unknown initial kind `{other}`"))),
        },
        None => InitialSection::Boundary,
    };

    // [experiment]
    let name = raw
        .take("experiment", "name")
        .map(|(_, v)| v)
        .unwrap_or_else(|| "run".to_string());
    let eps_list = match raw.take("experiment", "eps_list") {
        Some((line, v)) => {
            let list = parse_list::<f64>(line, "eps_list", &v)?;
            for w in list.windows(2) {
                if w[1] >= w[0] {
                    return Err(located(line, "eps_list must be strictly decreasing"));
                }
            }
            for &e in &list {
                if !(e > 0.0 && e < 1.0) {
                    return Err(located(line, "every eps must lie in (0,1)"));
                }
            }
            list
        }
        None => vec![eps],
    };
    let delta = field!(raw, "experiment", "delta", f64, 0.1);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ConfigError::Invalid(format!("experiment delta must lie in (0,1), got {delta}")));
    }
    let cylinder = match raw.take("experiment", "cylinder") {
        Some((line, v)) => {
            let list = parse_list::<f64>(line, "cylinder", &v)?;
            if list.len() != dim + 2 {
                return Err(located(
                    line,
                    format!("cylinder needs {} entries: cx[,cy[,cz]],t0,R", dim + 2),
                ));
            }
            Some(list)
        }
        None => None,
    };
    let experiment = ExperimentSection {
        name,
        eps_list,
        delta,
        s: field!(raw, "experiment", "s", f64, 4.0),
        q: field!(raw, "experiment", "q", f64, 2.0),
        cylinder,
        seed: field!(raw, "experiment", "seed", u64, 42),
        tau_frac: field!(raw, "experiment", "tau_frac", f64, 0.1),
    };

    raw.check_consumed()?;
    Ok(ExperimentConfig { model, mollifier, grid, time, solver, boundary, initial, experiment })
}

pub fn parse_config_file(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn join<T: std::fmt::Display>(list: &[T]) -> String {
    list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Canonical text form; `parse_config(emit_config(c)) == c`.
pub fn emit_config(c: &ExperimentConfig) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "[model]").unwrap();
    writeln!(w, "n = {}", c.model.n).unwrap();
    writeln!(w, "p = {}", c.model.p).unwrap();
    writeln!(w, "lambda = {}", c.model.lambda).unwrap();
    writeln!(w, "Lambda = {}", c.model.big_lambda).unwrap();
    writeln!(w, "K = {}", c.model.k).unwrap();
    writeln!(w, "subcritical = {}", c.model.subcritical).unwrap();
    writeln!(w, "\n[mollifier]").unwrap();
    writeln!(w, "eps = {}", c.mollifier.eps).unwrap();
    writeln!(w, "quad_tol = {}", c.mollifier.quad_tol).unwrap();
    writeln!(w, "r_max = {}", c.mollifier.r_max).unwrap();
    writeln!(w, "\n[grid]").unwrap();
    writeln!(w, "dim = {}", c.grid.dim).unwrap();
    writeln!(w, "cells = {}", join(&c.grid.cells)).unwrap();
    writeln!(w, "extent = {}", join(&c.grid.extent)).unwrap();
    writeln!(w, "\n[time]").unwrap();
    writeln!(w, "dt = {}", c.time.dt).unwrap();
    writeln!(w, "t_end = {}", c.time.t_end).unwrap();
    writeln!(w, "\n[solver]").unwrap();
    writeln!(w, "newton_tol = {}", c.solver.newton_tol).unwrap();
    writeln!(w, "newton_max_iter = {}", c.solver.newton_max_iter).unwrap();
    writeln!(w, "damping = {}", c.solver.damping).unwrap();
    writeln!(w, "picard_fallback = {}", c.solver.picard_fallback).unwrap();
    writeln!(w, "snapshot_every = {}", c.solver.snapshot_every).unwrap();
    writeln!(w, "\n[boundary]").unwrap();
    match &c.boundary {
        BoundarySection::Constant { value } => {
            writeln!(w, "kind = constant").unwrap();
            writeln!(w, "value = {value}").unwrap();
        }
        BoundarySection::Affine { a, b } => {
            writeln!(w, "kind = affine").unwrap();
            writeln!(w, "a = {a}").unwrap();
            writeln!(w, "b = {}", join(b)).unwrap();
        }
    }
    writeln!(w, "\n[initial]").unwrap();
    match &c.initial {
        InitialSection::Boundary => writeln!(w, "kind = boundary").unwrap(),
        InitialSection::Bump { amplitude } => {
            writeln!(w, "kind = bump").unwrap();
            writeln!(w, "amplitude = {amplitude}").unwrap();
        }
    }
    writeln!(w, "\n[experiment]").unwrap();
    writeln!(w, "name = {}", c.experiment.name).unwrap();
    writeln!(w, "eps_list = {}", join(&c.experiment.eps_list)).unwrap();
    writeln!(w, "delta = {}", c.experiment.delta).unwrap();
    writeln!(w, "s = {}", c.experiment.s).unwrap();
    writeln!(w, "q = {}", c.experiment.q).unwrap();
    if let Some(cyl) = &c.experiment.cylinder {
        writeln!(w, "cylinder = {}", join(cyl)).unwrap();
    }
    writeln!(w, "seed = {}", c.experiment.seed).unwrap();
    writeln!(w, "tau_frac = {}", c.experiment.tau_frac).unwrap();
    out
}

/// SHA-256 of the canonical config text, hex-encoded.
pub fn config_hash(c: &ExperimentConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(emit_config(c).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn build_model(&self) -> EnergyModel {
        EnergyModel::new(
            self.model.n,
            self.model.p,
            self.model.lambda,
            self.model.big_lambda,
            self.model.k,
            DensityKind::Euclidean,
        )
        .expect("validated at parse time")
    }

    pub fn build_grid(&self) -> Arc<Grid> {
        Arc::new(Grid::new(self.grid.dim, &self.grid.cells, &self.grid.extent).expect("validated"))
    }

    pub fn build_density(&self, eps: f64) -> Result<MollifiedDensity, ConfigError> {
        Ok(mollify_density(
            &self.build_model(),
            eps,
            QuadSpec { abs_tol: self.mollifier.quad_tol },
            self.mollifier.r_max,
        )?)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.time.dt,
            t_end: self.time.t_end,
            newton_tol: self.solver.newton_tol,
            newton_max_iter: self.solver.newton_max_iter,
            damping: self.solver.damping,
            picard_fallback: self.solver.picard_fallback,
            snapshot_every: self.solver.snapshot_every,
        }
    }

    pub fn boundary_data(&self) -> BoundaryData {
        match &self.boundary {
            BoundarySection::Constant { value } => BoundaryData::Constant(*value),
            BoundarySection::Affine { a, b } => {
                let mut bb = [0.0; 3];
                for (i, v) in b.iter().enumerate() {
                    bb[i] = *v;
                }
                BoundaryData::Affine { a: *a, b: bb }
            }
        }
    }

    pub fn initial_data(&self) -> InitialData {
        match &self.initial {
            InitialSection::Boundary => InitialData::FromBoundary,
            InitialSection::Bump { amplitude } => InitialData::Bump { amplitude: *amplitude },
        }
    }

    pub fn cylinder(&self) -> Option<ParabolicCylinder> {
        self.experiment.cylinder.as_ref().map(|list| {
            let dim = self.grid.dim;
            let mut center = [0.0; 3];
            for d in 0..dim {
                center[d] = list[d];
            }
            ParabolicCylinder::new(center, list[dim], list[dim + 1])
        })
    }
}

/// Provenance record of a run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub files: Vec<String>,
    pub snapshot_times: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub outcome: String,
    pub config_text: String,
}
