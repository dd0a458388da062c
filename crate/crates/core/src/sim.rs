//! Monte Carlo driver, violation metrics and file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, TightenedConstraintSet};
use crate::error::{Error, Result};
use crate::mpc::{run_episode, EpisodeOptions, EpisodeResult};
use crate::scenario::Problem;
use crate::trajectory::Trajectory;

pub const DEFAULT_BETAS: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

/// Violation statistics for one β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub beta: f64,
    pub episodes: usize,
    /// Episodes with at least one step inside an obstacle.
    pub violated: usize,
    /// Collisions per violated episode, 0 when none.
    pub avg_in_violated: f64,
    /// Collisions per episode.
    pub total_avg: f64,
    pub collisions: usize,
}

/// Collision count of an episode is its number of violating steps.
pub fn compute_metrics(results: &[EpisodeResult]) -> Result<MetricsRow> {
    let Some(first) = results.first() else {
        return Err(Error::contract("metrics need at least one episode"));
    };
    let counts: Vec<usize> = results.iter().map(|r| r.violations).collect();
    let mut row = metrics_from_counts(&counts)?;
    row.beta = first.beta;
    Ok(row)
}

/// Metrics from raw per-episode collision counts.
pub fn metrics_from_counts(counts: &[usize]) -> Result<MetricsRow> {
    if counts.is_empty() {
        return Err(Error::contract("metrics need at least one episode"));
    }
    let collisions: usize = counts.iter().sum();
    let violated = counts.iter().filter(|c| **c > 0).count();
    Ok(MetricsRow {
        beta: f64::NAN,
        episodes: counts.len(),
        violated,
        avg_in_violated: if violated == 0 {
            0.0
        } else {
            collisions as f64 / violated as f64
        },
        total_avg: collisions as f64 / counts.len() as f64,
        collisions,
    })
}

/// Episodes for one β, seeds `base_seed + i`, returned in index order.
pub fn run_batch(
    problem: &Problem,
    beta: f64,
    episodes: usize,
    base_seed: u64,
    threads: usize,
) -> Result<Vec<EpisodeResult>> {
    if episodes == 0 {
        return Err(Error::contract("episode count must be at least 1"));
    }
    let run = |i: usize| {
        run_episode(
            problem,
            &EpisodeOptions {
                beta,
                seed: base_seed + i as u64,
                noise: true,
            },
        )
    };
    if threads <= 1 {
        return (0..episodes).map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Solver(format!("thread pool: {e}")))?;
    pool.install(|| (0..episodes).into_par_iter().map(run).collect())
}

#[derive(Debug, Clone)]
pub struct MonteCarlo {
    pub rows: Vec<MetricsRow>,
    /// Per β, per episode.
    pub episodes: Vec<Vec<EpisodeResult>>,
}

/// The full protocol: `episodes` runs for every β.
pub fn run_monte_carlo(
    problem: &Problem,
    betas: &[f64],
    episodes: usize,
    base_seed: u64,
    threads: usize,
) -> Result<MonteCarlo> {
    // Fail on configuration before spending any time.
    let mut probe = problem.set.clone();
    for &b in betas {
        probe.set_beta(b)?;
    }
    problem.initialize()?;
    let mut rows = Vec::with_capacity(betas.len());
    let mut all = Vec::with_capacity(betas.len());
    for &beta in betas {
        let results = run_batch(problem, beta, episodes, base_seed, threads)?;
        rows.push(compute_metrics(&results)?);
        all.push(results);
    }
    Ok(MonteCarlo {
        rows,
        episodes: all,
    })
}

/// Smallest distance to an obstacle boundary along `xs[1..]`, that is
/// `−max g`; negative inside an obstacle.
pub fn min_clearance(set: &ConstraintSet, xs: &[DVector<f64>]) -> f64 {
    let u = DVector::zeros(set.control_dim());
    xs.iter()
        .skip(1)
        .map(|x| -set.max_value(x, &u))
        .fold(f64::INFINITY, f64::min)
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let header = ["beta", "episodes", "violated", "avg_in_violated", "total_avg", "collisions"]
        .map(String::from)
        .to_vec();
    let body = rows.iter().map(|r| {
        vec![
            r.beta.to_string(),
            r.episodes.to_string(),
            r.violated.to_string(),
            r.avg_in_violated.to_string(),
            r.total_avg.to_string(),
            r.collisions.to_string(),
        ]
    });
    write_atomic(path, &csv_bytes(header, body)?)
}

fn column_names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

/// `step, x0.., u0.., max_g` with the control of the step leaving that
/// state; the final state has empty control cells.
fn trajectory_csv(
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    max_g: &[f64],
) -> Result<Vec<u8>> {
    let n = states.first().map_or(0, |x| x.len());
    let m = controls.first().map_or(0, |u| u.len());
    let mut header = vec!["step".to_string()];
    header.extend(column_names("x", n));
    header.extend(column_names("u", m));
    header.push("max_g".into());
    let body = states.iter().enumerate().map(|(k, x)| {
        let mut r = vec![k.to_string()];
        r.extend(x.iter().map(|v| v.to_string()));
        match controls.get(k) {
            Some(u) => r.extend(u.iter().map(|v| v.to_string())),
            None => r.extend(std::iter::repeat_n(String::new(), m)),
        }
        r.push(max_g[k].to_string());
        r
    });
    csv_bytes(header, body)
}

pub fn write_episode(path: &Path, episode: &EpisodeResult) -> Result<()> {
    let bytes = trajectory_csv(&episode.states, &episode.controls, &episode.constraint_values)?;
    write_atomic(path, &bytes)
}

/// A planned trajectory with its raw largest constraint value per state.
pub fn write_plan(path: &Path, traj: &Trajectory, tight: &TightenedConstraintSet) -> Result<()> {
    let max_g: Vec<f64> = traj
        .xs
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let u = if k == 0 { &traj.us[0] } else { &traj.us[k - 1] };
            tight.set.max_value(x, u)
        })
        .collect();
    write_atomic(path, &trajectory_csv(&traj.xs, &traj.us, &max_g)?)
}

/// `step, m0..` tightening margins per time step.
pub fn write_margins(path: &Path, tight: &TightenedConstraintSet) -> Result<()> {
    let c = tight.set.len();
    let mut header = vec!["step".to_string()];
    header.extend(column_names("m", c));
    let body = tight.margins.iter().enumerate().map(|(k, m)| {
        let mut r = vec![k.to_string()];
        r.extend(m.iter().map(|v| v.to_string()));
        r
    });
    write_atomic(path, &csv_bytes(header, body)?)
}
