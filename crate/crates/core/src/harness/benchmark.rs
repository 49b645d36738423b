//! Experiment grids and their CSV output.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::optimizer::{align, AlignConfig};

use super::instance::{make_instance, BaseSource, ScenarioSpec};

pub const CSV_HEADER: &str = "scenario,param,rep,seed,e3d,iters,converged,wall_s";

/// Noise fractions of the noise sweep: 5 % and then 10 % to 100 % in steps of 10 %.
pub const NOISE_LEVELS: [f64; 11] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const REMOVAL_LEVELS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const THETA_LEVELS: [f64; 4] = [3.0, 5.0, 7.0, 12.0];
pub const SCALING_POINTS: [usize; 3] = [25_000, 50_000, 100_000];
/// Outlier fraction used by the missing-data and theta sweeps.
pub const SWEEP_NOISE: f64 = 0.4;
pub const SCALING_THETA: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Noise,
    Missing,
    Theta,
    Scaling,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Self::Noise),
            "missing" => Ok(Self::Missing),
            "theta" => Ok(Self::Theta),
            "scaling" => Ok(Self::Scaling),
            other => Err(Error::BadSpec(format!(
                "unknown scenario `{other}` (expected noise, missing, theta or scaling)"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Noise => "noise",
            Self::Missing => "missing",
            Self::Theta => "theta",
            Self::Scaling => "scaling",
        })
    }
}

/// One grid cell: a labelled scenario run `spec.repetitions` times.
#[derive(Debug, Clone)]
pub struct Cell {
    pub scenario: String,
    pub param: f64,
    pub spec: ScenarioSpec,
}

/// The sweep of `scenario` around `template`. The scaling sweep always uses
/// the built-in generator, since it needs bases of given sizes.
pub fn grid(scenario: Scenario, template: &ScenarioSpec) -> Vec<Cell> {
    let cell = |param: f64, spec: ScenarioSpec| Cell {
        scenario: scenario.to_string(),
        param,
        spec,
    };
    match scenario {
        Scenario::Noise => NOISE_LEVELS
            .iter()
            .map(|&noise| {
                cell(
                    noise,
                    ScenarioSpec {
                        noise_fraction: noise,
                        ..template.clone()
                    },
                )
            })
            .collect(),
        Scenario::Missing => REMOVAL_LEVELS
            .iter()
            .map(|&removal| {
                cell(
                    removal,
                    ScenarioSpec {
                        removal_fraction: removal,
                        noise_fraction: SWEEP_NOISE,
                        ..template.clone()
                    },
                )
            })
            .collect(),
        Scenario::Theta => THETA_LEVELS
            .iter()
            .map(|&theta| {
                let mut spec = ScenarioSpec {
                    noise_fraction: SWEEP_NOISE,
                    ..template.clone()
                };
                spec.config.theta = theta;
                cell(theta, spec)
            })
            .collect(),
        Scenario::Scaling => SCALING_POINTS
            .iter()
            .map(|&points| {
                let mut spec = ScenarioSpec {
                    base: BaseSource::Generated { points },
                    noise_fraction: 0.0,
                    removal_fraction: 0.0,
                    ..template.clone()
                };
                spec.config.theta = SCALING_THETA;
                cell(points as f64, spec)
            })
            .collect(),
    }
}

/// SplitMix64 step; spreads consecutive inputs over the whole range.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce5_e9b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Instance seed of repetition `rep`. It does not depend on the cell, so all
/// cells of a sweep see the same base poses and noise draws.
pub fn rep_seed(master: u64, rep: usize) -> u64 {
    splitmix64(master.wrapping_mul(0x1000_0000_01b3).wrapping_add(rep as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub scenario: String,
    pub param: f64,
    pub rep: usize,
    pub seed: u64,
    /// `None` when the run failed.
    pub e3d: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_s: f64,
}

impl Row {
    pub fn to_csv(&self) -> String {
        let e3d = self.e3d.map_or_else(|| "NaN".to_string(), |v| format!("{v:e}"));
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.scenario, self.param, self.rep, self.seed, e3d, self.iterations, self.converged, self.wall_s
        )
    }
}

/// Run one repetition of a spec.
pub fn run_once(spec: &ScenarioSpec, seed: u64) -> Result<(f64, usize, bool)> {
    let instance = make_instance(spec, seed)?;
    let config = AlignConfig { seed, ..spec.config.clone() };
    let result = align(&instance.clouds, &config)?;
    let e3d = instance.e3d(&result.transforms)?;
    Ok((e3d, result.outer_iterations, result.converged))
}

/// Run every cell `spec.repetitions` times in grid order, handing each row to
/// `sink` as soon as it is done. A failing run yields an error row and the
/// grid continues.
pub fn run_benchmark(cells: &[Cell], mut sink: impl FnMut(&Row) -> Result<()>) -> Result<Vec<Row>> {
    for cell in cells {
        cell.spec.validate()?;
    }
    let mut rows = Vec::new();
    for cell in cells {
        for rep in 0..cell.spec.repetitions {
            let seed = rep_seed(cell.spec.seed, rep);
            let start = Instant::now();
            let outcome = run_once(&cell.spec, seed);
            let wall_s = start.elapsed().as_secs_f64();
            let row = match outcome {
                Ok((e3d, iterations, converged)) => Row {
                    scenario: cell.scenario.clone(),
                    param: cell.param,
                    rep,
                    seed,
                    e3d: Some(e3d),
                    iterations,
                    converged,
                    wall_s,
                },
                Err(e) => {
                    log::warn!("{} param {} rep {rep} failed: {e}", cell.scenario, cell.param);
                    Row {
                        scenario: cell.scenario.clone(),
                        param: cell.param,
                        rep,
                        seed,
                        e3d: None,
                        iterations: 0,
                        converged: false,
                        wall_s,
                    }
                }
            };
            sink(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Run a grid and stream it as CSV to `out`.
pub fn write_benchmark<W: Write>(cells: &[Cell], mut out: W) -> Result<Vec<Row>> {
    writeln!(out, "{CSV_HEADER}")?;
    run_benchmark(cells, |row| {
        writeln!(out, "{}", row.to_csv())?;
        out.flush()?;
        Ok(())
    })
}
