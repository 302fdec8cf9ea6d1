//! Wires a scenario into a world, runs it and judges the trace.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::faults::inject;
use crate::harness::report::Report;
use crate::harness::scenario::{Scenario, ScenarioError};
use crate::sim::trace::Trace;
use crate::sim::world::SimWorld;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub trace: Trace,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}", path.display())]
    Scenario {
        path: PathBuf,
        source: ScenarioError,
    },
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
    #[error(transparent)]
    World(#[from] crate::sim::world::WorldError),
}

/// Builds the world of `s`, with faults injected and before the first step.
pub fn build_world(s: &Scenario) -> Result<SimWorld, RunError> {
    let mut world = SimWorld::new(&s.world_spec()?)?;
    if let Some(f) = &s.faults {
        inject(&mut world, f);
    }
    Ok(world)
}

pub fn run_scenario(s: &Scenario) -> Result<Outcome, RunError> {
    let mut world = build_world(s)?;
    let stop = s.stop;
    world.run_bounded(|w| stop.holds(w), s.max_steps, s.max_cycles)?;
    let messages = world.messages();
    let trace = world.into_trace();
    let mut report = Report::from_trace(&trace);
    report.name = s.name.clone();
    report.messages = Some(messages);
    Ok(Outcome { report, trace })
}

pub fn load(path: &Path) -> Result<Scenario, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.into(),
        source,
    })?;
    Scenario::parse(&text).map_err(|source| RunError::Scenario {
        path: path.into(),
        source,
    })
}

/// Runs every `*.toml` scenario in `dir` in parallel, in file-name order.
/// Per-file outcomes of a batch, in file-name order.
pub type Batch = Vec<(PathBuf, Result<Outcome, RunError>)>;

pub fn run_batch(dir: &Path) -> Result<Batch, RunError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| RunError::Io {
            path: dir.into(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    Ok(paths
        .into_par_iter()
        .map(|p| {
            let r = load(&p).and_then(|s| run_scenario(&s));
            (p, r)
        })
        .collect())
}
