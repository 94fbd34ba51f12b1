//! Benchmark definitions and their documentation cards.

mod card;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controllers::{PolicyNetworkSpec, TrainingConfigRecord};
use crate::device::{catheter, j_shaped, DeviceSpec, J_TIP_ANGLE, J_TIP_RADIUS};
use crate::env::EpisodeConfig;
use crate::error::{Error, Result};
use crate::imaging::FluoroGeometry;
use crate::physics::{EngineConfig, MAX_ROTATION, MAX_TRANSLATION};
use crate::vessel::{
    dual_device_anatomy, generate_aortic_arch, y_phantom, ArchRanges, CenterlineIndex, VesselTree, BRACHIOCEPHALIC,
    DEFAULT_SPACING, DEFAULT_TARGET_THRESHOLD, LEFT_CAROTID, LEFT_SUBCLAVIAN, LEFT_VERTEBRAL, RIGHT_CAROTID,
    RIGHT_SUBCLAVIAN, RIGHT_VERTEBRAL,
};

pub use card::{card_json, card_markdown, CardEntry, Provenance};

pub const BASIC_WIRE_NAV: &str = "basic_wire_nav";
pub const ARCH_VARIETY: &str = "arch_variety";
pub const DUAL_DEVICE_NAV: &str = "dual_device_nav";
pub const Y_PHANTOM_NAV: &str = "y_phantom";

/// Seed of the procedural arch standing in for the patient mesh.
pub const STAND_IN_ARCH_SEED: u64 = 1;
/// Arch evaluated after training on random arches.
pub const ARCH_VARIETY_EVAL_SEED: u64 = 661023725;
pub const FRAME_RATE: f64 = 7.5;
pub const WRONG_BRANCH_MARGIN: f64 = 4.0;
/// Padding of the projected vessel bounds used for normalization, mm.
pub const POSITION_PADDING: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    Train,
    Eval,
}

/// Where an episode's vessel tree comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VesselSource {
    /// A vessel tree JSON file; the procedural arch `fallback_seed` is used
    /// when the file is missing.
    File { path: PathBuf, fallback_seed: u64 },
    /// One fixed procedural arch.
    Arch { seed: u64 },
    /// A new procedural arch per episode, seeded from the episode seed.
    ArchPerEpisode,
    DualDeviceAnatomy,
    YPhantom,
}

impl VesselSource {
    /// Whether the tree depends on the episode seed.
    pub fn per_episode(&self) -> bool {
        matches!(self, VesselSource::ArchPerEpisode)
    }

    /// Builds the tree; the second value carries a warning when a fallback was used.
    pub fn build(&self, vessel_seed: u64) -> Result<(VesselTree, Option<String>)> {
        match self {
            VesselSource::File { path, fallback_seed } => {
                if path.exists() {
                    Ok((VesselTree::load(path)?, None))
                } else {
                    let warning = format!(
                        "vessel file {} not found; using procedural arch {fallback_seed}",
                        path.display()
                    );
                    Ok((generate_aortic_arch(*fallback_seed, &ArchRanges::default())?, Some(warning)))
                }
            }
            VesselSource::Arch { seed } => Ok((generate_aortic_arch(*seed, &ArchRanges::default())?, None)),
            VesselSource::ArchPerEpisode => Ok((generate_aortic_arch(vessel_seed, &ArchRanges::default())?, None)),
            VesselSource::DualDeviceAnatomy => Ok((dual_device_anatomy()?, None)),
            VesselSource::YPhantom => Ok((y_phantom(), None)),
        }
    }
}

/// Keeps the most recent tree and its spatial index between resets.
#[derive(Default)]
pub struct VesselCache {
    key: Option<(VesselSource, u64)>,
    value: Option<(Arc<VesselTree>, Arc<CenterlineIndex>)>,
    warnings: Vec<String>,
}

impl VesselCache {
    pub fn resolve(&mut self, source: &VesselSource, vessel_seed: u64) -> Result<(Arc<VesselTree>, Arc<CenterlineIndex>)> {
        let key = (source.clone(), if source.per_episode() { vessel_seed } else { 0 });
        if self.key.as_ref() != Some(&key) {
            let (tree, warning) = source.build(vessel_seed)?;
            if let Some(w) = warning {
                if !self.warnings.contains(&w) {
                    self.warnings.push(w);
                }
            }
            let index = Arc::new(CenterlineIndex::new(&tree));
            self.value = Some((Arc::new(tree), index));
            self.key = Some(key);
        }
        Ok(self.value.clone().expect("filled above"))
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub train_vessel: VesselSource,
    pub eval_vessel: VesselSource,
    /// Outer device first when devices are concentric.
    pub devices: Vec<DeviceSpec>,
    pub target_branches: Vec<String>,
    /// Spacing of candidate target points along the centerlines, mm.
    pub target_spacing: f64,
    pub train_max_duration: f64,
    pub eval_max_duration: f64,
    pub max_translation: f64,
    pub max_rotation: f64,
    pub imaging: FluoroGeometry,
    pub success_threshold: f64,
    pub wrong_branch_margin: f64,
    pub position_padding: f64,
    pub engine: EngineConfig,
    pub network: PolicyNetworkSpec,
    pub training: TrainingConfigRecord,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.target_spacing,
            self.train_max_duration,
            self.eval_max_duration,
            self.max_translation,
            self.max_rotation,
            self.success_threshold,
            self.position_padding,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(self.wrong_branch_margin >= 0.0) {
            return Err(Error::invalid(format!("benchmark {}: constants must be positive", self.name)));
        }
        if self.devices.is_empty() {
            return Err(Error::invalid(format!("benchmark {}: no devices", self.name)));
        }
        if self.target_branches.is_empty() {
            return Err(Error::invalid(format!("benchmark {}: no target branches", self.name)));
        }
        if self.network.n_devices != self.devices.len() {
            return Err(Error::invalid(format!(
                "benchmark {}: network built for {} devices, benchmark has {}",
                self.name,
                self.network.n_devices,
                self.devices.len()
            )));
        }
        for d in &self.devices {
            d.check()?;
        }
        self.imaging.validate()?;
        self.engine.validate()?;
        self.network.validate()
    }

    pub fn vessel_source(&self, mode: EpisodeMode) -> &VesselSource {
        match mode {
            EpisodeMode::Train => &self.train_vessel,
            EpisodeMode::Eval => &self.eval_vessel,
        }
    }

    pub fn max_duration(&self, mode: EpisodeMode) -> f64 {
        match mode {
            EpisodeMode::Train => self.train_max_duration,
            EpisodeMode::Eval => self.eval_max_duration,
        }
    }

    pub fn episode_config(&self, mode: EpisodeMode) -> EpisodeConfig {
        EpisodeConfig {
            dt: self.imaging.dt(),
            max_duration: self.max_duration(mode),
            success_threshold: self.success_threshold,
            wrong_branch_margin: self.wrong_branch_margin,
        }
    }

    /// Replaces both vessel sources with a vessel tree file, keeping the
    /// current fixed arch as the fallback.
    pub fn with_vessel_file(mut self, path: impl Into<PathBuf>) -> Self {
        let fallback_seed = match self.eval_vessel {
            VesselSource::Arch { seed } => seed,
            _ => STAND_IN_ARCH_SEED,
        };
        let source = VesselSource::File {
            path: path.into(),
            fallback_seed,
        };
        self.train_vessel = source.clone();
        self.eval_vessel = source;
        self
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn imaging() -> FluoroGeometry {
    FluoroGeometry {
        frame_rate: FRAME_RATE,
        ..FluoroGeometry::default()
    }
}

fn engine() -> EngineConfig {
    EngineConfig {
        dt: 1.0 / FRAME_RATE,
        ..EngineConfig::default()
    }
}

fn supra_aortic() -> Vec<String> {
    names(&[
        BRACHIOCEPHALIC,
        RIGHT_CAROTID,
        LEFT_CAROTID,
        RIGHT_SUBCLAVIAN,
        LEFT_SUBCLAVIAN,
    ])
}

fn single_wire(name: &str, vessel: VesselSource, network: PolicyNetworkSpec, training: TrainingConfigRecord) -> BenchmarkSpec {
    BenchmarkSpec {
        name: name.into(),
        train_vessel: vessel.clone(),
        eval_vessel: vessel,
        devices: vec![j_shaped(J_TIP_RADIUS, J_TIP_ANGLE)],
        target_branches: supra_aortic(),
        target_spacing: DEFAULT_SPACING,
        train_max_duration: 20.0,
        eval_max_duration: 120.0,
        max_translation: MAX_TRANSLATION,
        max_rotation: MAX_ROTATION,
        imaging: imaging(),
        success_threshold: DEFAULT_TARGET_THRESHOLD,
        wrong_branch_margin: WRONG_BRANCH_MARGIN,
        position_padding: POSITION_PADDING,
        engine: engine(),
        network,
        training,
    }
}

/// Guidewire to the supra-aortic arteries of one fixed arch.
pub fn basic_wire_nav() -> BenchmarkSpec {
    single_wire(
        BASIC_WIRE_NAV,
        VesselSource::Arch {
            seed: STAND_IN_ARCH_SEED,
        },
        PolicyNetworkSpec::new(500, vec![900; 4], 1),
        TrainingConfigRecord::new(2.199e-4),
    )
}

/// Like [`basic_wire_nav`] on a new random arch every training episode;
/// evaluation uses one pinned arch.
pub fn arch_variety() -> BenchmarkSpec {
    let mut spec = single_wire(
        ARCH_VARIETY,
        VesselSource::ArchPerEpisode,
        PolicyNetworkSpec::new(900, vec![400; 3], 1),
        TrainingConfigRecord::new(3.218e-4),
    );
    spec.eval_vessel = VesselSource::Arch {
        seed: ARCH_VARIETY_EVAL_SEED,
    };
    spec
}

/// Concentric catheter and guidewire to carotid and vertebral targets.
pub fn dual_device_nav() -> BenchmarkSpec {
    BenchmarkSpec {
        name: DUAL_DEVICE_NAV.into(),
        train_vessel: VesselSource::DualDeviceAnatomy,
        eval_vessel: VesselSource::DualDeviceAnatomy,
        devices: vec![catheter(), j_shaped(J_TIP_RADIUS, J_TIP_ANGLE)],
        target_branches: names(&[RIGHT_CAROTID, LEFT_CAROTID, RIGHT_VERTEBRAL, LEFT_VERTEBRAL]),
        target_spacing: DEFAULT_SPACING,
        train_max_duration: 66.0,
        eval_max_duration: 133.0,
        max_translation: MAX_TRANSLATION,
        max_rotation: MAX_ROTATION,
        imaging: imaging(),
        success_threshold: DEFAULT_TARGET_THRESHOLD,
        wrong_branch_margin: WRONG_BRANCH_MARGIN,
        position_padding: POSITION_PADDING,
        engine: engine(),
        network: PolicyNetworkSpec::new(500, vec![900; 4], 2),
        training: TrainingConfigRecord::new(2.199e-4),
    }
}

/// Synthetic Y-shaped phantom for controller sanity checks.
pub fn y_phantom_nav() -> BenchmarkSpec {
    let mut spec = single_wire(
        Y_PHANTOM_NAV,
        VesselSource::YPhantom,
        PolicyNetworkSpec::new(500, vec![900; 4], 1),
        TrainingConfigRecord::new(2.199e-4),
    );
    spec.target_branches = names(&["left", "right"]);
    spec.train_max_duration = 120.0;
    spec
}

/// The three published benchmarks.
pub fn all() -> Vec<BenchmarkSpec> {
    vec![basic_wire_nav(), arch_variety(), dual_device_nav()]
}

pub fn by_name(name: &str) -> Result<BenchmarkSpec> {
    match name {
        BASIC_WIRE_NAV => Ok(basic_wire_nav()),
        ARCH_VARIETY => Ok(arch_variety()),
        DUAL_DEVICE_NAV => Ok(dual_device_nav()),
        Y_PHANTOM_NAV => Ok(y_phantom_nav()),
        other => Err(Error::invalid(format!(
            "unknown benchmark {other}; expected one of {BASIC_WIRE_NAV}, {ARCH_VARIETY}, {DUAL_DEVICE_NAV}, {Y_PHANTOM_NAV}"
        ))),
    }
}
