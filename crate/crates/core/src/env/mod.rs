//! The navigation environment: reset/step loop, reward and episode endings.

mod observation;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bench::{BenchmarkSpec, EpisodeMode, VesselCache};
use crate::controllers::PolicyContext;
use crate::error::{Error, Result};
use crate::geom::{mix_seed, Vec3};
use crate::imaging::track_devices;
use crate::physics::{Action, DeviceAction, Engine, EngineConfig, RodEngine, RodState};
use crate::vessel::{sample_target, CenterlineIndex, DistanceField, Target, VesselTree};

pub use observation::{build_observation, observation_len, Observation, ObservationBounds};

/// Idle penalty per step.
pub const STEP_PENALTY: f64 = -0.005;
/// Reward per mm of path length gained towards the target.
pub const PATH_COEFFICIENT: f64 = 0.001;
/// Bonus on reaching the target.
pub const TARGET_REWARD: f64 = 1.0;

/// `R = -0.005 + 0.001 (prev - now) + reached`.
pub fn compute_reward(pathlength_prev: f64, pathlength_now: f64, reached: bool) -> f64 {
    let bonus = if reached { TARGET_REWARD } else { 0.0 };
    STEP_PENALTY + PATH_COEFFICIENT * (pathlength_prev - pathlength_now) + bonus
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub max_duration: f64,
    pub success_threshold: f64,
    pub wrong_branch_margin: f64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt > 0.0 && self.max_duration > 0.0 && self.success_threshold > 0.0 && self.wrong_branch_margin >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("episode config needs positive dt, duration and threshold"))
        }
    }

    /// `floor(max_duration / dt)`, robust to the rounding of `dt`.
    pub fn max_steps(&self) -> usize {
        (self.max_duration / self.dt + 1e-9).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    WrongBranch,
    SimError,
    Timeout,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::WrongBranch => "wrong-branch",
            Outcome::SimError => "sim-error",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// 3D tip position per device.
    pub tips: Vec<Vec3>,
    /// Centerline distance from the closest device tip to the target, mm.
    pub pathlength: f64,
    /// The action after clamping to the velocity limits.
    pub action: Action,
    /// Episode time after this step, s.
    pub time: f64,
    pub step: usize,
    pub outcome: Option<Outcome>,
    /// Raw (unnormalized) image-plane tracking points per device.
    pub tracking: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Builds a simulation engine for a freshly reset episode.
pub type EngineFactory =
    Arc<dyn Fn(Arc<VesselTree>, Arc<CenterlineIndex>, &[crate::device::DeviceSpec], EngineConfig) -> Result<Box<dyn Engine>> + Send + Sync>;

pub fn default_engine_factory() -> EngineFactory {
    Arc::new(|tree, index, devices, config| Ok(Box::new(RodEngine::new(tree, Some(index), devices, config)?)))
}

struct Episode {
    tree: Arc<VesselTree>,
    index: Arc<CenterlineIndex>,
    field: DistanceField,
    target: Target,
    target_2d: [f64; 2],
    /// Terminal branch ends that count as a wrong branch.
    dead_ends: Vec<Vec3>,
    engine: Box<dyn Engine>,
    bounds: ObservationBounds,
    tracking: Vec<Vec<[f64; 2]>>,
    last_action: Action,
    observation: Observation,
    pathlength: f64,
    initial_pathlength: f64,
    step: usize,
    finished: bool,
}

/// One environment instance; not shared between threads.
pub struct NavEnv {
    spec: BenchmarkSpec,
    mode: EpisodeMode,
    config: EpisodeConfig,
    factory: EngineFactory,
    cache: VesselCache,
    episode: Option<Episode>,
    seed: u64,
}

impl NavEnv {
    pub fn new(spec: BenchmarkSpec, mode: EpisodeMode) -> Result<Self> {
        Self::with_engine(spec, mode, default_engine_factory())
    }

    pub fn with_engine(spec: BenchmarkSpec, mode: EpisodeMode, factory: EngineFactory) -> Result<Self> {
        spec.validate()?;
        let config = spec.episode_config(mode);
        config.validate()?;
        Ok(NavEnv {
            spec,
            mode,
            config,
            factory,
            cache: VesselCache::default(),
            episode: None,
            seed: 0,
        })
    }

    pub fn spec(&self) -> &BenchmarkSpec {
        &self.spec
    }

    pub fn mode(&self) -> EpisodeMode {
        self.mode
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn n_devices(&self) -> usize {
        self.spec.devices.len()
    }

    pub fn observation_len(&self) -> usize {
        observation_len(self.n_devices())
    }

    /// Seed of the current episode.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Warnings raised while resolving vessel sources (e.g. a missing mesh file).
    pub fn warnings(&self) -> &[String] {
        self.cache.warnings()
    }

    fn episode(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or_else(|| Error::Usage("environment has not been reset".into()))
    }

    pub fn tree(&self) -> Result<&Arc<VesselTree>> {
        Ok(&self.episode()?.tree)
    }

    pub fn target(&self) -> Result<&Target> {
        Ok(&self.episode()?.target)
    }

    pub fn rod_states(&self) -> Result<&[RodState]> {
        Ok(self.episode()?.engine.rod_states())
    }

    pub fn pathlength(&self) -> Result<f64> {
        Ok(self.episode()?.pathlength)
    }

    pub fn initial_pathlength(&self) -> Result<f64> {
        Ok(self.episode()?.initial_pathlength)
    }

    pub fn observation(&self) -> Result<&Observation> {
        Ok(&self.episode()?.observation)
    }

    pub fn is_finished(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.finished)
    }

    /// Privileged view of the current episode for scripted controllers.
    pub fn context(&self) -> Result<PolicyContext<'_>> {
        let e = self.episode()?;
        Ok(PolicyContext {
            tree: &e.tree,
            index: &e.index,
            field: &e.field,
            target: &e.target,
            engine: e.engine.as_ref(),
            dt: self.config.dt,
            ds: self.spec.engine.ds,
            step: e.step,
            wrong_branch_margin: self.config.wrong_branch_margin,
        })
    }

    /// Starts an episode; vessel and target are drawn from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<(Observation, StepInfo)> {
        self.seed = seed;
        let source = self.spec.vessel_source(self.mode).clone();
        let (tree, index) = self.cache.resolve(&source, mix_seed(seed, 0))?;
        let target = sample_target(
            &tree,
            &self.spec.target_branches,
            mix_seed(seed, 1),
            self.spec.target_spacing,
            self.config.success_threshold,
        )?;
        let target_branch = tree.branch_index(&target.branch).expect("sampled from the tree");
        let field = DistanceField::new(&tree, index.lumen_pose(&target.position));
        let lineage = tree.lineage(target_branch);
        let dead_ends = tree
            .terminal_branches()
            .into_iter()
            .filter(|b| !lineage.contains(b))
            .map(|b| *tree.branches[b].points.last().expect("non-empty branch"))
            .collect();
        let geometry = &self.spec.imaging;
        let (lo, hi) = geometry.projected_bounds(&tree, self.spec.position_padding)?;
        let bounds = ObservationBounds::new(
            self.n_devices(),
            lo,
            hi,
            [self.spec.max_translation, self.spec.max_rotation],
        );
        let mut engine_config = self.spec.engine.clone();
        engine_config.dt = self.config.dt;
        engine_config.rng_seed = mix_seed(seed, 2);
        let engine = (self.factory)(tree.clone(), index.clone(), &self.spec.devices, engine_config)?;
        let tracking = track_devices(engine.rod_states(), &tree.insertion.position, geometry)?.devices;
        let target_2d = geometry.project_point(&target.position)?;
        let last_action = Action::zero(self.n_devices());
        let observation = build_observation(&tracking, &tracking, target_2d, &last_action, &bounds)?;
        let pathlength = min_pathlength(engine.rod_states(), &index, &field)?;
        let info = StepInfo {
            tips: engine.rod_states().iter().map(RodState::tip).collect(),
            pathlength,
            action: last_action.clone(),
            time: 0.0,
            step: 0,
            outcome: None,
            tracking: tracking.clone(),
        };
        self.episode = Some(Episode {
            tree,
            index,
            field,
            target,
            target_2d,
            dead_ends,
            engine,
            bounds,
            tracking,
            last_action,
            observation: observation.clone(),
            pathlength,
            initial_pathlength: pathlength,
            step: 0,
            finished: false,
        });
        Ok((observation, info))
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        let n = self.n_devices();
        let limits = [self.spec.max_translation, self.spec.max_rotation];
        let config = self.config.clone();
        let geometry = self.spec.imaging.clone();
        let e = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Usage("environment has not been reset".into()))?;
        if e.finished {
            return Err(Error::Usage("episode is finished; call reset".into()));
        }
        if action.devices.len() != n {
            return Err(Error::invalid(format!("action has {} devices, expected {n}", action.devices.len())));
        }
        if !action.is_finite() {
            return Err(Error::invalid("action contains non-finite values"));
        }
        let clamped = Action::new(
            action
                .devices
                .iter()
                .map(|d| {
                    DeviceAction::new(
                        d.translation.clamp(-limits[0], limits[0]),
                        d.rotation.clamp(-limits[1], limits[1]),
                    )
                })
                .collect(),
        );
        e.step += 1;
        let time = e.step as f64 * config.dt;
        let sim = e.engine.step(&clamped);
        let (outcome, reward) = match sim {
            Err(Error::Sim(_)) => (Some(Outcome::SimError), compute_reward(e.pathlength, e.pathlength, false)),
            Err(other) => return Err(other),
            Ok(()) => {
                let tracking = track_devices(e.engine.rod_states(), &e.tree.insertion.position, &geometry)?.devices;
                let now = min_pathlength(e.engine.rod_states(), &e.index, &e.field)?;
                let reached = e
                    .engine
                    .rod_states()
                    .iter()
                    .any(|s| (s.tip() - e.target.position).norm() <= config.success_threshold);
                let reward = compute_reward(e.pathlength, now, reached);
                e.observation = build_observation(&tracking, &e.tracking, e.target_2d, &clamped, &e.bounds)?;
                e.tracking = tracking;
                e.pathlength = now;
                e.last_action = clamped.clone();
                let outcome = if reached {
                    Some(Outcome::Success)
                } else if on_dead_end(e.engine.rod_states(), &e.index, &e.dead_ends, config.wrong_branch_margin) {
                    Some(Outcome::WrongBranch)
                } else if e.step >= config.max_steps() {
                    Some(Outcome::Timeout)
                } else {
                    None
                };
                (outcome, reward)
            }
        };
        e.finished = outcome.is_some();
        let truncated = outcome == Some(Outcome::Timeout);
        Ok(StepResult {
            observation: e.observation.clone(),
            reward,
            terminated: e.finished && !truncated,
            truncated,
            info: StepInfo {
                tips: e.engine.rod_states().iter().map(RodState::tip).collect(),
                pathlength: e.pathlength,
                action: clamped,
                time,
                step: e.step,
                outcome,
                tracking: e.tracking.clone(),
            },
        })
    }
}

fn min_pathlength(states: &[RodState], index: &CenterlineIndex, field: &DistanceField) -> Result<f64> {
    let mut best = f64::INFINITY;
    for s in states {
        best = best.min(field.distance_to(&index.lumen_pose(&s.tip()))?);
    }
    Ok(best)
}

/// Whether any tip's centerline projection lies within `margin` of a dead end.
fn on_dead_end(states: &[RodState], index: &CenterlineIndex, dead_ends: &[Vec3], margin: f64) -> bool {
    states.iter().any(|s| {
        let p = index.lumen_pose(&s.tip()).point;
        dead_ends.iter().any(|d| (p - d).norm() <= margin)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench;

    #[test]
    fn reward_examples() {
        assert!((compute_reward(110.0, 100.0, false) - 0.005).abs() < 1e-15);
        assert_eq!(compute_reward(50.0, 50.0, false), -0.005);
        assert!((compute_reward(9.8, 5.0, true) - 0.9998).abs() < 1e-12);
    }

    #[test]
    fn max_steps_floor() {
        let c = |d: f64| EpisodeConfig {
            dt: 1.0 / 7.5,
            max_duration: d,
            success_threshold: 5.0,
            wrong_branch_margin: 4.0,
        };
        assert_eq!(c(120.0).max_steps(), 900);
        assert_eq!(c(133.0).max_steps(), 997);
        assert_eq!(c(20.0).max_steps(), 150);
        assert_eq!(c(66.0).max_steps(), 495);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut env = NavEnv::new(bench::y_phantom_nav(), EpisodeMode::Eval).unwrap();
        let (a, _) = env.reset(4).unwrap();
        let (b, _) = env.reset(4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tracking_now, a.tracking_prev);
        assert!(a.last_action.iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn idle_step_costs_penalty() {
        let mut env = NavEnv::new(bench::y_phantom_nav(), EpisodeMode::Eval).unwrap();
        env.reset(1).unwrap();
        let r = env.step(&Action::zero(1)).unwrap();
        assert!((r.reward + 0.005).abs() < 1e-12);
        assert!(!r.terminated && !r.truncated);
    }

    #[test]
    fn step_before_reset_and_after_end_is_usage_error() {
        let mut spec = bench::y_phantom_nav();
        spec.eval_max_duration = 2.0 / 7.5;
        let mut env = NavEnv::new(spec, EpisodeMode::Eval).unwrap();
        assert!(matches!(env.step(&Action::zero(1)), Err(Error::Usage(_))));
        env.reset(0).unwrap();
        assert!(!env.step(&Action::zero(1)).unwrap().truncated);
        let r = env.step(&Action::zero(1)).unwrap();
        assert!(r.truncated && !r.terminated);
        assert_eq!(r.info.outcome, Some(Outcome::Timeout));
        assert!(matches!(env.step(&Action::zero(1)), Err(Error::Usage(_))));
    }

    #[test]
    fn wrong_action_shape_rejected() {
        let mut env = NavEnv::new(bench::y_phantom_nav(), EpisodeMode::Eval).unwrap();
        env.reset(0).unwrap();
        assert!(matches!(env.step(&Action::zero(2)), Err(Error::InvalidInput(_))));
    }
}
