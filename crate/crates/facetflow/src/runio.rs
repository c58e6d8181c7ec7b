//! Run-directory persistence: `manifest.json`, `series.csv`, and
//! `snapshot_<k>.csv` with fixed column schemas.
//!
//! Floats are written with the shortest round-trip representation, so a
//! rerun with an identical config produces byte-identical files and a read
//! back reconstructs the exact values.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use crate::config::{config_hash, emit_config, parse_config, ConfigError, ExperimentConfig, RunManifest};
use crate::grid::ScalarField;
use crate::solver::{RunResult, SeriesRow, StepLog};

pub const ARTIFACT_VERSION: &str = "facetflow/0.1.0";

#[derive(Debug, Error)]
pub enum RunIoError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed {file}: {message}")]
    Malformed { file: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("manifest hash mismatch: stored {stored}, recomputed {computed}")]
    HashMismatch { stored: String, computed: String },
}

fn io_err(path: &Path, source: std::io::Error) -> RunIoError {
    RunIoError::Io { path: path.display().to_string(), source }
}

fn snapshot_header(dim: usize) -> &'static str {
    match dim {
        1 => "x,u",
        2 => "x,y,u",
        _ => "x,y,z,u",
    }
}

fn write_snapshot(path: &Path, field: &ScalarField) -> Result<(), RunIoError> {
    let grid = &field.grid;
    let mut buf = String::with_capacity(grid.node_count() * 24);
    buf.push_str(snapshot_header(grid.dim));
    buf.push('\n');
    for idx in 0..grid.node_count() {
        let pos = grid.position(idx);
        for d in 0..grid.dim {
            buf.push_str(&pos[d].to_string());
            buf.push(',');
        }
        buf.push_str(&field.values[idx].to_string());
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

fn write_series(path: &Path, rows: &[SeriesRow]) -> Result<(), RunIoError> {
    let mut buf = String::from("t,energy,sup_u,sup_V,newton_iters\n");
    for r in rows {
        buf.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t, r.energy, r.sup_u, r.sup_v, r.newton_iters
        ));
    }
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Persist a run: `manifest.json`, `series.csv`, `snapshot_<k>.csv`.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    run: &RunResult,
    wall_clock_seconds: f64,
    outcome: &str,
) -> Result<(), RunIoError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut files = vec!["manifest.json".to_string(), "series.csv".to_string()];
    for (k, snap) in run.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k}.csv");
        write_snapshot(&dir.join(&name), snap)?;
        files.push(name);
    }
    write_series(&dir.join("series.csv"), &run.series)?;
    let manifest = RunManifest {
        config_hash: config_hash(config),
        artifact_version: ARTIFACT_VERSION.to_string(),
        files,
        snapshot_times: run.snapshot_times(),
        wall_clock_seconds,
        outcome: outcome.to_string(),
        config_text: emit_config(config),
    };
    let path = dir.join("manifest.json");
    let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    f.write_all(json.as_bytes()).map_err(|e| io_err(&path, e))?;
    f.write_all(b"\n").map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn parse_csv_floats(file: &str, text: &str, cols: usize) -> Result<Vec<Vec<f64>>, RunIoError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != cols {
            return Err(RunIoError::Malformed {
                file: file.into(),
                message: format!("row {i} has {} columns, expected {cols}", parts.len()),
            });
        }
        let row = parts
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| RunIoError::Malformed {
                    file: file.into(),
                    message: format!("row {i}: bad float `{s}`"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Load a stored run: the parsed config plus a reconstructed [`RunResult`].
pub fn read_run(dir: &Path) -> Result<(ExperimentConfig, RunResult), RunIoError> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| RunIoError::Malformed {
        file: "manifest.json".into(),
        message: e.to_string(),
    })?;
    let config = parse_config(&manifest.config_text)?;
    let computed = config_hash(&config);
    if computed != manifest.config_hash {
        return Err(RunIoError::HashMismatch { stored: manifest.config_hash, computed });
    }

    let grid = config.build_grid();
    let dim = grid.dim;

    let mut snapshots = Vec::new();
    for (k, &t) in manifest.snapshot_times.iter().enumerate() {
        let name = format!("snapshot_{k}.csv");
        let path = dir.join(&name);
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let rows = parse_csv_floats(&name, &text, dim + 1)?;
        if rows.len() != grid.node_count() {
            return Err(RunIoError::Malformed {
                file: name,
                message: format!("{} rows for {} nodes", rows.len(), grid.node_count()),
            });
        }
        let values: Vec<f64> = rows.iter().map(|r| r[dim]).collect();
        snapshots.push(ScalarField { grid: Arc::clone(&grid), values, time: t });
    }
    if snapshots.is_empty() {
        return Err(RunIoError::Malformed {
            file: "manifest.json".into(),
            message: "run holds no snapshots".into(),
        });
    }

    let series_path = dir.join("series.csv");
    let stext = std::fs::read_to_string(&series_path).map_err(|e| io_err(&series_path, e))?;
    let srows = parse_csv_floats("series.csv", &stext, 5)?;
    let series: Vec<SeriesRow> = srows
        .iter()
        .map(|r| SeriesRow {
            t: r[0],
            energy: r[1],
            sup_u: r[2],
            sup_v: r[3],
            newton_iters: r[4] as usize,
        })
        .collect();
    let convergence: Vec<StepLog> = series
        .iter()
        .skip(1)
        .map(|r| StepLog {
            t: r.t,
            newton_iters: r.newton_iters,
            final_residual: 0.0,
            used_picard: false,
        })
        .collect();

    // Parabolic-boundary bounds: lateral data range plus the initial slice.
    let bc = config.boundary_data();
    let lateral = bc.range(&grid, config.time.t_end);
    let u0 = &snapshots[0];
    let lo = lateral.0.min(u0.min());
    let hi = lateral.1.max(u0.max());
    let mut dmp = f64::INFINITY;
    for snap in snapshots.iter().skip(1) {
        dmp = dmp.min(snap.min() - lo).min(hi - snap.max());
    }

    let run = RunResult {
        grid,
        eps: config.mollifier.eps,
        p: config.model.p,
        snapshots,
        series,
        convergence,
        boundary_sup: lo.abs().max(hi.abs()),
        boundary_range: (lo, hi),
        bc_static: bc.is_static(),
        dmp_margin: if dmp.is_finite() { dmp } else { 0.0 },
    };
    Ok((config, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::InitialData;
    use crate::solver::run_simulation;

    fn demo_config() -> ExperimentConfig {
        parse_config(
            "[model]\nn = 2\np = 1.3\n\n[mollifier]\neps = 0.1\nr_max = 20\n\n[grid]\ndim = 2\ncells = 6,6\nextent = 1,1\n\n[time]\ndt = 0.02\nt_end = 0.06\n\n[initial]\nkind = bump\namplitude = 0.4\n",
        )
        .unwrap()
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let config = demo_config();
        let md = config.build_density(0.1).unwrap();
        let grid = config.build_grid();
        let run = run_simulation(
            &config.solver_config(),
            &md,
            &config.boundary_data(),
            &InitialData::Bump { amplitude: 0.4 },
            &grid,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &config, &run, 0.1, "ok").unwrap();

        let (config2, run2) = read_run(dir.path()).unwrap();
        assert_eq!(config, config2);
        assert_eq!(run.snapshots.len(), run2.snapshots.len());
        for (a, b) in run.snapshots.iter().zip(&run2.snapshots) {
            assert_eq!(a.values, b.values, "snapshot values must round-trip bit-exactly");
            assert_eq!(a.time, b.time);
        }
        assert_eq!(run.energy_series(), run2.energy_series());
        assert_eq!(run.boundary_range, run2.boundary_range);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let config = demo_config();
        let md = config.build_density(0.1).unwrap();
        let grid = config.build_grid();
        let mk = || {
            run_simulation(
                &config.solver_config(),
                &md,
                &config.boundary_data(),
                &InitialData::Bump { amplitude: 0.4 },
                &grid,
            )
            .unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_run(d1.path(), &config, &mk(), 0.0, "ok").unwrap();
        write_run(d2.path(), &config, &mk(), 0.0, "ok").unwrap();
        for name in ["series.csv", "snapshot_0.csv", "snapshot_3.csv"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} must be byte-identical across reruns");
        }
    }

    #[test]
    fn hash_mismatch_is_detected() {
        let config = demo_config();
        let md = config.build_density(0.1).unwrap();
        let grid = config.build_grid();
        let run = run_simulation(
            &config.solver_config(),
            &md,
            &config.boundary_data(),
            &InitialData::Bump { amplitude: 0.4 },
            &grid,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &config, &run, 0.0, "ok").unwrap();
        // tamper with the stored hash
        let mpath = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&mpath).unwrap();
        let bad = text.replacen("\"config_hash\": \"", "\"config_hash\": \"deadbeef", 1);
        std::fs::write(&mpath, bad).unwrap();
        assert!(matches!(read_run(dir.path()), Err(RunIoError::HashMismatch { .. })));
    }
}
