//! Quasi-static device mechanics behind a pluggable engine interface.
//!
//! The default engine discretises each inserted device as a polyline of
//! nodes `ds` apart (tip first) and relaxes it towards minimum bending energy
//! while keeping segment lengths fixed and every node inside the vessel lumen.

mod coaxial;
mod engine;
mod rod;

use serde::{Deserialize, Serialize};

use crate::device::DeviceSpec;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::vessel::{CenterlineIndex, VesselTree};

pub use coaxial::{couple_coaxial, CoaxialBlend};
pub use engine::{engine_reset, EngineSnapshot, RodEngine};
pub use rod::bending_energy;

/// Translation speed limit, mm/s.
pub const MAX_TRANSLATION: f64 = 35.0;
/// Rotation speed limit, rad/s. The benchmark value, deliberately not π.
pub const MAX_ROTATION: f64 = 3.14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceAction {
    /// mm/s, positive inserts.
    pub translation: f64,
    /// rad/s about the insertion axis.
    pub rotation: f64,
}

impl DeviceAction {
    pub fn new(translation: f64, rotation: f64) -> Self {
        DeviceAction { translation, rotation }
    }

    pub fn clamped(self) -> Self {
        DeviceAction {
            translation: self.translation.clamp(-MAX_TRANSLATION, MAX_TRANSLATION),
            rotation: self.rotation.clamp(-MAX_ROTATION, MAX_ROTATION),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.is_finite() && self.rotation.is_finite()
    }
}

/// One velocity command per device, in device order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub devices: Vec<DeviceAction>,
}

impl Action {
    pub fn new(devices: Vec<DeviceAction>) -> Self {
        Action { devices }
    }

    pub fn zero(n_devices: usize) -> Self {
        Action {
            devices: vec![DeviceAction::default(); n_devices],
        }
    }

    /// Interleaved `[translation, rotation]` pairs.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "action needs a positive even number of values, got {}",
                values.len()
            )));
        }
        Ok(Action {
            devices: values.chunks(2).map(|c| DeviceAction::new(c[0], c[1])).collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.devices.iter().flat_map(|d| [d.translation, d.rotation]).collect()
    }

    pub fn clamped(&self) -> Self {
        Action {
            devices: self.devices.iter().map(|d| d.clamped()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.devices.iter().all(DeviceAction::is_finite)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Node spacing, mm.
    pub ds: f64,
    /// Control period, s.
    pub dt: f64,
    pub solver_iterations: usize,
    /// Convergence threshold on the largest node move per iteration, mm.
    pub displacement_tolerance: f64,
    /// Distance kept between nodes and the lumen wall, mm.
    pub collision_margin: f64,
    pub rng_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            ds: 2.0,
            dt: 1.0 / 7.5,
            solver_iterations: 200,
            displacement_tolerance: 1e-3,
            collision_margin: 0.05,
            rng_seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ds > 0.0
            && self.dt > 0.0
            && self.solver_iterations > 0
            && self.displacement_tolerance > 0.0
            && self.collision_margin > 0.0
            && self.ds.is_finite()
            && self.dt.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("engine config values must all be positive"))
        }
    }
}

/// Discretised state of one device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RodState {
    pub device: DeviceSpec,
    pub inserted_length: f64,
    pub base_twist: f64,
    /// Tip first.
    pub nodes: Vec<Vec3>,
}

impl RodState {
    pub fn node_count(inserted_length: f64, ds: f64) -> usize {
        (inserted_length / ds + 1e-9).floor() as usize + 1
    }

    pub fn tip(&self) -> Vec3 {
        self.nodes[0]
    }

    /// Unit direction of the most distal segment (insertion direction when
    /// fewer than two nodes exist).
    pub fn tip_direction(&self, fallback: &Vec3) -> Vec3 {
        if self.nodes.len() < 2 {
            return *fallback;
        }
        (self.nodes[0] - self.nodes[1]).normalize()
    }

    /// Point at arclength `d` from the tip along the node polyline.
    pub fn point_from_tip(&self, d: f64) -> Vec3 {
        let cum = crate::geom::cumulative_arclength(&self.nodes);
        crate::geom::point_at_arclength(&self.nodes, &cum, d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimErrorKind {
    NonFiniteState,
    ExplosiveDisplacement,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("simulation error ({kind:?}) at step {step}")]
pub struct SimError {
    pub kind: SimErrorKind,
    pub step: usize,
}

/// Contract every simulation backend implements.
pub trait Engine: Send {
    fn reset(&mut self, tree: &VesselTree, devices: &[DeviceSpec]) -> Result<()>;
    fn step(&mut self, action: &Action) -> Result<()>;
    fn rod_states(&self) -> &[RodState];
    /// World-frame rest curvature per node of device `i`, including the
    /// current base twist.
    fn rest_curvature(&self, device: usize) -> Vec<Vec3>;
}

/// Moves `node` radially onto the lumen bound when it lies beyond
/// `radius - margin` of its lumen centerline; otherwise returns it unchanged.
pub fn collide_project(node: &Vec3, index: &CenterlineIndex, margin: f64) -> Vec3 {
    let pose = index.lumen_pose(node);
    project_onto_pose(node, &pose.point, pose.distance, pose.radius, margin)
}

#[inline]
pub(crate) fn project_onto_pose(node: &Vec3, center: &Vec3, distance: f64, radius: f64, margin: f64) -> Vec3 {
    let bound = (radius - margin).max(0.0);
    if distance <= bound {
        return *node;
    }
    if distance <= 0.0 {
        return *center;
    }
    center + (node - center) * (bound / distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vessel::{Branch, InsertionPoint};
    use rand::{Rng, SeedableRng};

    fn tube() -> VesselTree {
        let pts: Vec<Vec3> = (0..=50).map(|k| Vec3::new(0.0, 0.0, 2.0 * k as f64)).collect();
        VesselTree::new(
            "tube",
            vec![Branch::new("t", pts, vec![3.0; 51])],
            InsertionPoint {
                position: Vec3::zeros(),
                direction: Vec3::z(),
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn collide_on_centerline_unchanged() {
        let idx = CenterlineIndex::new(&tube());
        let p = Vec3::new(0.0, 0.0, 31.0);
        assert_eq!(collide_project(&p, &idx, 0.05), p);
    }

    #[test]
    fn collide_outside_moves_to_bound() {
        let idx = CenterlineIndex::new(&tube());
        let p = Vec3::new(4.0, 0.0, 31.0);
        let q = collide_project(&p, &idx, 0.05);
        assert!((q - Vec3::new(2.95, 0.0, 31.0)).norm() < 1e-12);
    }

    #[test]
    fn action_clamp() {
        let a = Action::from_flat(&[100.0, -9.0]).unwrap().clamped();
        assert_eq!(a.to_flat(), vec![35.0, -3.14]);
        assert!(Action::from_flat(&[1.0]).is_err());
    }

    #[test]
    fn collide_random_nodes_always_inside() {
        let tree = crate::vessel::generate_aortic_arch(5, &Default::default()).unwrap();
        let idx = CenterlineIndex::new(&tree);
        let (lo, hi) = tree.bounding_box();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let p = Vec3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            );
            let q = collide_project(&p, &idx, 0.05);
            let pose = idx.lumen_pose_exhaustive(&q);
            assert!(pose.distance <= pose.radius - 0.05 + 1e-9);
        }
    }
}
