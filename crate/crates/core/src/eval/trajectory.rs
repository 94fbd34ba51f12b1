//! Trajectory files: JSON lines, one header object per episode followed by
//! one object per step.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, StepLog};
use crate::bench::EpisodeMode;
use crate::env::Outcome;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrajectoryLine {
    Episode {
        benchmark: String,
        mode: EpisodeMode,
        episode: usize,
        seed: u64,
        target_branch: String,
        outcome: Outcome,
        duration: f64,
        initial_pathlength: f64,
        final_pathlength: f64,
        n_steps: usize,
    },
    Step {
        episode: usize,
        #[serde(flatten)]
        log: StepLog,
    },
}

pub fn write_trajectories(records: &[EpisodeRecord], out: &mut impl Write) -> Result<()> {
    let mut line = |l: &TrajectoryLine| -> Result<()> {
        serde_json::to_writer(&mut *out, l)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    for r in records {
        line(&TrajectoryLine::Episode {
            benchmark: r.benchmark.clone(),
            mode: r.mode,
            episode: r.episode,
            seed: r.seed,
            target_branch: r.target_branch.clone(),
            outcome: r.outcome,
            duration: r.duration,
            initial_pathlength: r.initial_pathlength,
            final_pathlength: r.final_pathlength,
            n_steps: r.steps.len(),
        })?;
        for s in &r.steps {
            line(&TrajectoryLine::Step {
                episode: r.episode,
                log: s.clone(),
            })?;
        }
    }
    Ok(())
}

pub fn read_trajectories(input: impl BufRead) -> Result<Vec<EpisodeRecord>> {
    let mut records: Vec<(EpisodeRecord, usize)> = Vec::new();
    let mut offset = 0;
    for line in input.lines() {
        let line = line?;
        let here = offset;
        offset += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine =
            serde_json::from_str(&line).map_err(|e| Error::format(here, format!("trajectory line: {e}")))?;
        match parsed {
            TrajectoryLine::Episode {
                benchmark,
                mode,
                episode,
                seed,
                target_branch,
                outcome,
                duration,
                initial_pathlength,
                final_pathlength,
                n_steps,
            } => records.push((
                EpisodeRecord {
                    benchmark,
                    mode,
                    episode,
                    seed,
                    target_branch,
                    outcome,
                    duration,
                    initial_pathlength,
                    final_pathlength,
                    steps: Vec::with_capacity(n_steps),
                },
                n_steps,
            )),
            TrajectoryLine::Step { episode, log } => match records.last_mut() {
                Some((r, _)) if r.episode == episode => r.steps.push(log),
                _ => return Err(Error::format(here, format!("step of episode {episode} outside its header"))),
            },
        }
    }
    for (r, n) in &records {
        if r.steps.len() != *n {
            return Err(Error::format(
                offset,
                format!("episode {} declares {n} steps, file has {}", r.episode, r.steps.len()),
            ));
        }
    }
    Ok(records.into_iter().map(|(r, _)| r).collect())
}
