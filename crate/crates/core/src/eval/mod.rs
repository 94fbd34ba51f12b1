//! Episode rollouts, benchmark metrics and the two significance tests used
//! to compare controllers.

mod report;
mod stats;
mod trajectory;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{BenchmarkSpec, EpisodeMode};
use crate::controllers::{Policy, PolicyFactory};
use crate::env::{NavEnv, Outcome};
use crate::error::{Error, Result};
use crate::geom::mix_seed;

pub use report::{metrics_json, metrics_table, MetricsRow};
pub use stats::{compare_proportions, compare_samples};
pub use trajectory::{read_trajectories, write_trajectories, TrajectoryLine};

/// One environment step as logged for replay and analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    /// Clamped velocities per device, `[translation, rotation]`.
    pub action: Vec<[f64; 2]>,
    /// Raw image-plane tracking points per device, mm.
    pub tracking: Vec<Vec<[f64; 2]>>,
    pub reward: f64,
    pub pathlength: f64,
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub benchmark: String,
    pub mode: EpisodeMode,
    /// Position in the run; the seed is derived from it.
    pub episode: usize,
    pub seed: u64,
    pub target_branch: String,
    pub outcome: Outcome,
    /// Simulated time at the end of the episode, s.
    pub duration: f64,
    pub initial_pathlength: f64,
    pub final_pathlength: f64,
    pub steps: Vec<StepLog>,
}

impl EpisodeRecord {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Fraction of the initial path covered, in [0, 1].
    pub fn path_ratio(&self) -> f64 {
        if self.initial_pathlength <= 0.0 {
            return 1.0;
        }
        ((self.initial_pathlength - self.final_pathlength) / self.initial_pathlength).clamp(0.0, 1.0)
    }
}

/// Seed of episode `i` in a run started from `master_seed`.
pub fn episode_seed(master_seed: u64, i: usize) -> u64 {
    mix_seed(master_seed, i as u64)
}

/// Runs one full episode and logs every step.
pub fn run_episode(env: &mut NavEnv, policy: &mut dyn Policy, episode: usize, seed: u64) -> Result<EpisodeRecord> {
    let (mut observation, info) = env.reset(seed)?;
    policy.reset(seed);
    let initial = info.pathlength;
    let mut steps = Vec::new();
    loop {
        let action = policy.act(&observation, &env.context()?)?;
        let r = env.step(&action)?;
        steps.push(StepLog {
            step: r.info.step,
            time: r.info.time,
            action: r.info.action.devices.iter().map(|d| [d.translation, d.rotation]).collect(),
            tracking: r.info.tracking.clone(),
            reward: r.reward,
            pathlength: r.info.pathlength,
            terminated: r.terminated,
            truncated: r.truncated,
        });
        observation = r.observation;
        if let Some(outcome) = r.info.outcome {
            return Ok(EpisodeRecord {
                benchmark: env.spec().name.clone(),
                mode: env.mode(),
                episode,
                seed,
                target_branch: env.target()?.branch.clone(),
                outcome,
                duration: r.info.time,
                initial_pathlength: initial,
                final_pathlength: r.info.pathlength,
                steps,
            });
        }
    }
}

/// Runs `n` episodes with seeds derived from `master_seed`. Every episode
/// starts from a fresh reset, so the records do not depend on
/// `parallelism` or on how episodes are spread over workers.
pub fn run_episodes(
    spec: &BenchmarkSpec,
    mode: EpisodeMode,
    policy: &PolicyFactory,
    n: usize,
    master_seed: u64,
    parallelism: usize,
) -> Result<Vec<EpisodeRecord>> {
    if n == 0 {
        return Err(Error::invalid("episode count must be positive"));
    }
    if parallelism == 0 {
        return Err(Error::invalid("parallelism must be positive"));
    }
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map_init(
                || -> Result<(NavEnv, Box<dyn Policy>)> { Ok((NavEnv::new(spec.clone(), mode)?, policy()?)) },
                |worker, i| match worker {
                    Ok((env, p)) => run_episode(env, p.as_mut(), i, episode_seed(master_seed, i)),
                    Err(e) => Err(Error::Internal(format!("worker setup failed: {e}"))),
                },
            )
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    pub n_episodes: usize,
    pub n_success: usize,
    pub success_rate: f64,
    /// Mean fraction of the path covered by failed episodes; absent when
    /// every episode succeeded.
    pub path_ratio: Option<f64>,
    /// Mean duration of successful episodes, s.
    pub duration: Option<f64>,
    pub n_wrong_branch: usize,
    pub n_sim_error: usize,
    pub n_timeout: usize,
}

pub fn compute_metrics(records: &[EpisodeRecord]) -> Result<BenchmarkMetrics> {
    if records.is_empty() {
        return Err(Error::invalid("no episode records"));
    }
    let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let n_success = count(Outcome::Success);
    Ok(BenchmarkMetrics {
        n_episodes: records.len(),
        n_success,
        success_rate: n_success as f64 / records.len() as f64,
        path_ratio: mean(sorted(records.iter().filter(|r| r.outcome != Outcome::Success).map(|r| r.path_ratio()))),
        duration: mean(sorted(records.iter().filter(|r| r.outcome == Outcome::Success).map(|r| r.duration))),
        n_wrong_branch: count(Outcome::WrongBranch),
        n_sim_error: count(Outcome::SimError),
        n_timeout: count(Outcome::Timeout),
    })
}

// Summing in sorted order keeps the means independent of record order.
fn sorted(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: usize,
    /// First step whose reward or flags differ from the log.
    pub first_mismatch: Option<usize>,
    pub outcome: Outcome,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Re-simulates a record's action log from its seed and compares rewards
/// and flags bit for bit. `on_step` sees the environment after every step.
pub fn replay_with(
    spec: &BenchmarkSpec,
    record: &EpisodeRecord,
    mut on_step: impl FnMut(&NavEnv, usize) -> Result<()>,
) -> Result<ReplayReport> {
    if spec.name != record.benchmark {
        return Err(Error::invalid(format!(
            "record belongs to {}, not {}",
            record.benchmark, spec.name
        )));
    }
    let mut env = NavEnv::new(spec.clone(), record.mode)?;
    env.reset(record.seed)?;
    on_step(&env, 0)?;
    let mut first_mismatch = None;
    let mut outcome = None;
    for (i, logged) in record.steps.iter().enumerate() {
        let action = crate::physics::Action::from_flat(&logged.action.concat())?;
        let r = env.step(&action)?;
        on_step(&env, i + 1)?;
        let same = r.reward.to_bits() == logged.reward.to_bits()
            && r.terminated == logged.terminated
            && r.truncated == logged.truncated;
        if !same && first_mismatch.is_none() {
            first_mismatch = Some(i);
        }
        if r.info.outcome.is_some() {
            outcome = r.info.outcome;
            if i + 1 != record.steps.len() && first_mismatch.is_none() {
                first_mismatch = Some(i);
            }
            break;
        }
    }
    let Some(outcome) = outcome else {
        return Ok(ReplayReport {
            steps: record.steps.len(),
            first_mismatch: Some(first_mismatch.unwrap_or(record.steps.len())),
            outcome: record.outcome,
        });
    };
    Ok(ReplayReport {
        steps: record.steps.len(),
        first_mismatch,
        outcome,
    })
}

pub fn replay(spec: &BenchmarkSpec, record: &EpisodeRecord) -> Result<ReplayReport> {
    replay_with(spec, record, |_, _| Ok(()))
}
