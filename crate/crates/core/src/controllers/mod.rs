//! Policies: the common interface, a random baseline, a scripted centerline
//! follower and inference of the recurrent actor network.

mod follower;
mod neural;
mod weights;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::physics::{Action, DeviceAction, Engine, MAX_ROTATION, MAX_TRANSLATION};
use crate::vessel::{CenterlineIndex, DistanceField, Target, VesselTree};

pub use follower::{CenterlineFollower, FollowerParams};
pub use neural::{neural_forward, LstmState, NetworkWeights, NeuralPolicy, PolicyNetworkSpec, PolicyOutput};
pub use weights::{load_weights, WeightBundle, MAGIC};

/// Privileged simulator state handed to every policy next to the
/// observation. Learned policies ignore it; scripted ones may not.
pub struct PolicyContext<'a> {
    pub tree: &'a VesselTree,
    pub index: &'a CenterlineIndex,
    pub field: &'a DistanceField,
    pub target: &'a Target,
    pub engine: &'a dyn Engine,
    pub dt: f64,
    /// Node spacing of the rod discretisation, mm.
    pub ds: f64,
    pub step: usize,
    pub wrong_branch_margin: f64,
}

pub trait Policy: Send {
    /// Called at the start of every episode with that episode's seed.
    fn reset(&mut self, seed: u64);
    fn act(&mut self, observation: &Observation, ctx: &PolicyContext<'_>) -> Result<Action>;
}

/// Creates one fresh policy per worker for parallel rollouts.
pub type PolicyFactory = Arc<dyn Fn() -> Result<Box<dyn Policy>> + Send + Sync>;

/// Uniform velocities within the limits; reseeded per episode.
pub struct RandomPolicy {
    n_devices: usize,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(n_devices: usize, seed: u64) -> Self {
        RandomPolicy {
            n_devices,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(crate::geom::mix_seed(self.seed, seed));
    }

    fn act(&mut self, observation: &Observation, _ctx: &PolicyContext<'_>) -> Result<Action> {
        if observation.n_devices() != self.n_devices {
            return Err(Error::invalid(format!(
                "random policy drives {} devices, observation has {}",
                self.n_devices,
                observation.n_devices()
            )));
        }
        Ok(Action::new(
            (0..self.n_devices)
                .map(|_| {
                    DeviceAction::new(
                        self.rng.random_range(-MAX_TRANSLATION..=MAX_TRANSLATION),
                        self.rng.random_range(-MAX_ROTATION..=MAX_ROTATION),
                    )
                })
                .collect(),
        ))
    }
}

/// Training hyperparameters, recorded for documentation only; nothing here
/// trains. Unpublished values are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfigRecord {
    pub exploration_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: u32,
    pub learning_rate: f64,
    pub discount: Option<f64>,
    pub replay_size: Option<u64>,
    pub batch_size: Option<u32>,
    pub entropy_target: Option<f64>,
}

impl TrainingConfigRecord {
    pub fn new(learning_rate: f64) -> Self {
        TrainingConfigRecord {
            exploration_steps: 20_000_000,
            eval_every: 250_000,
            eval_episodes: 100,
            learning_rate,
            discount: None,
            replay_size: None,
            batch_size: None,
            entropy_target: None,
        }
    }
}
