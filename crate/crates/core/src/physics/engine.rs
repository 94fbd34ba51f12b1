use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::coaxial::{clearance, constrain_inner, couple_coaxial};
use super::rod::{bending_energy, bending_step, follow_the_leader, world_curvature};
use super::{project_onto_pose, Action, Engine, EngineConfig, RodState, SimError, SimErrorKind};
use crate::device::DeviceSpec;
use crate::error::{Error, Result};
use crate::geom::{is_finite, Vec3};
use crate::vessel::{CenterlineIndex, VesselTree};

/// Proximal damping relative to the stiffest curvature weight. Small values
/// approach a Newton step; long-wavelength modes stay damped.
const DAMPING: f64 = 0.002;
/// Largest node move of one bending step, in units of ds.
const MAX_MOVE: f64 = 0.5;
/// Passes of the length-preserving collision sweep after the solve.
const FINAL_SWEEP_ITERS: usize = 6;
/// Relative segment-length error the final sweep accepts before turning a
/// segment back into the lumen.
const LENGTH_TOLERANCE: f64 = 1e-3;

/// JSON-exportable engine state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub step: usize,
    pub states: Vec<RodState>,
}

/// Bending energy of device 0 around every bending step, when logging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub before: f64,
    pub after: f64,
    /// After the collision projection that closes the iteration.
    pub end: f64,
}

/// The default quasi-static rod engine.
#[derive(Clone, Debug)]
pub struct RodEngine {
    tree: Arc<VesselTree>,
    index: Arc<CenterlineIndex>,
    config: EngineConfig,
    states: Vec<RodState>,
    /// Material rest curvature per potential node, tip first.
    material: Vec<Vec<[f64; 2]>>,
    rigidity: Vec<Vec<f64>>,
    step_index: usize,
    energy_log: Option<Vec<EnergyRecord>>,
    last_displacement: f64,
    rest_world: Vec<Vec<Vec3>>,
    scratch: Vec<Vec3>,
}

/// Builds an engine with every device retracted to a single node at the
/// insertion point.
pub fn engine_reset(tree: &VesselTree, devices: &[DeviceSpec], config: EngineConfig) -> Result<RodEngine> {
    RodEngine::new(Arc::new(tree.clone()), None, devices, config)
}

impl RodEngine {
    pub fn new(
        tree: Arc<VesselTree>,
        index: Option<Arc<CenterlineIndex>>,
        devices: &[DeviceSpec],
        config: EngineConfig,
    ) -> Result<Self> {
        config.validate()?;
        tree.validate()?;
        let index = index.unwrap_or_else(|| Arc::new(CenterlineIndex::new(&tree)));
        let mut engine = RodEngine {
            tree,
            index,
            config,
            states: Vec::new(),
            material: Vec::new(),
            rigidity: Vec::new(),
            step_index: 0,
            energy_log: None,
            last_displacement: 0.0,
            rest_world: Vec::new(),
            scratch: Vec::new(),
        };
        engine.reset_devices(devices)?;
        Ok(engine)
    }

    fn reset_devices(&mut self, devices: &[DeviceSpec]) -> Result<()> {
        if devices.is_empty() {
            return Err(Error::invalid("at least one device is required"));
        }
        for d in devices {
            d.check()?;
        }
        let ds = self.config.ds;
        let insertion = self.tree.insertion.position;
        self.states = devices
            .iter()
            .map(|d| RodState {
                device: d.clone(),
                inserted_length: 0.0,
                base_twist: 0.0,
                nodes: vec![insertion],
            })
            .collect();
        if self.states.len() == 2 {
            clearance(&self.states[0], &self.states[1])?;
        } else if self.states.len() > 2 {
            return Err(Error::invalid("at most two concentric devices are supported"));
        }
        self.material = devices
            .iter()
            .map(|d| {
                (0..RodState::node_count(d.total_length, ds))
                    .map(|i| d.curvature_at(i as f64 * ds))
                    .collect()
            })
            .collect();
        self.rigidity = devices
            .iter()
            .map(|d| {
                (0..RodState::node_count(d.total_length, ds))
                    .map(|i| d.rigidity_at(i as f64 * ds))
                    .collect()
            })
            .collect();
        self.rest_world = vec![Vec::new(); devices.len()];
        self.step_index = 0;
        self.last_displacement = 0.0;
        Ok(())
    }

    pub fn tree(&self) -> &Arc<VesselTree> {
        &self.tree
    }

    pub fn index(&self) -> &Arc<CenterlineIndex> {
        &self.index
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Largest node move in the final solver iteration of the last step.
    pub fn last_displacement(&self) -> f64 {
        self.last_displacement
    }

    pub fn enable_energy_log(&mut self) {
        self.energy_log = Some(Vec::new());
    }

    pub fn take_energy_log(&mut self) -> Vec<EnergyRecord> {
        self.energy_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            step: self.step_index,
            states: self.states.clone(),
        }
    }

    fn ghost(&self, state: &RodState) -> Vec3 {
        let ins = &self.tree.insertion;
        let n = state.nodes.len();
        let base = state.inserted_length - (n - 1) as f64 * self.config.ds;
        ins.position + ins.direction * (base - self.config.ds)
    }

    /// Moves the material of a rod along its current shape to a new
    /// inserted length; the tip extrapolates along its last segment.
    fn advance(&self, state: &mut RodState, new_length: f64) {
        let ds = self.config.ds;
        let ins = &self.tree.insertion;
        let old = &state.nodes;
        let l_old = state.inserted_length;
        let n_old = old.len();
        let base_sigma = l_old - (n_old - 1) as f64 * ds;
        let tip_dir = state.tip_direction(&ins.direction);
        let curve = |sigma: f64| -> Vec3 {
            if sigma >= l_old {
                old[0] + tip_dir * (sigma - l_old)
            } else if sigma <= base_sigma {
                ins.position + ins.direction * sigma
            } else {
                let u = (l_old - sigma) / ds;
                let k = (u.floor() as usize).min(n_old - 2);
                let f = u - k as f64;
                old[k] * (1.0 - f) + old[k + 1] * f
            }
        };
        let n_new = RodState::node_count(new_length, ds);
        let mut nodes: Vec<Vec3> = (0..n_new).map(|i| curve(new_length - i as f64 * ds)).collect();
        let base = new_length - (n_new - 1) as f64 * ds;
        nodes[n_new - 1] = ins.position + ins.direction * base;
        state.nodes = nodes;
        state.inserted_length = new_length;
    }

    fn update_rest(&mut self) -> Result<()> {
        let dir = self.tree.insertion.direction;
        for d in 0..self.states.len() {
            let ghost = self.ghost(&self.states[d]);
            let s = &self.states[d];
            world_curvature(&s.nodes, &ghost, &dir, s.base_twist, &self.material[d], &mut self.rest_world[d]);
        }
        if self.states.len() == 2 {
            let blend = couple_coaxial(
                &self.states[0],
                &self.states[1],
                &self.rest_world[0],
                &self.rest_world[1],
                self.config.ds,
            )?;
            self.rest_world[0] = blend.outer;
            self.rest_world[1] = blend.inner;
        }
        Ok(())
    }

    fn collide(&self, nodes: &mut [Vec3]) {
        let margin = self.config.collision_margin;
        for x in nodes.iter_mut() {
            let pose = self.index.lumen_pose(x);
            *x = project_onto_pose(x, &pose.point, pose.distance, pose.radius, margin);
        }
    }

    fn energy(&self, d: usize) -> f64 {
        let s = &self.states[d];
        bending_energy(&s.nodes, &self.ghost(s), &self.rest_world[d], &self.rigidity[d], self.config.ds)
    }

    /// Relaxes all rods for at most `iterations` rounds.
    fn relax(&mut self, iterations: usize) -> Result<()> {
        let ds = self.config.ds;
        let coax = if self.states.len() == 2 {
            Some(clearance(&self.states[0], &self.states[1])?)
        } else {
            None
        };
        let mut previous: Vec<Vec3> = Vec::new();
        for _ in 0..iterations {
            self.update_rest()?;
            let mut largest: f64 = 0.0;
            for d in 0..self.states.len() {
                if self.states[d].nodes.len() < 2 {
                    continue;
                }
                let ghost = self.ghost(&self.states[d]);
                previous.clear();
                previous.extend_from_slice(&self.states[d].nodes);
                let before = self.energy_log.is_some().then(|| self.energy(d));
                follow_the_leader(&mut self.states[d].nodes, ds);
                let after_ftl = self.energy_log.is_some().then(|| self.energy(d));
                let mut scratch = std::mem::take(&mut self.scratch);
                bending_step(
                    &mut self.states[d].nodes,
                    &ghost,
                    &self.rest_world[d],
                    &self.rigidity[d],
                    ds,
                    DAMPING,
                    MAX_MOVE * ds,
                    &mut scratch,
                );
                self.scratch = scratch;
                let after_bend = self.energy_log.is_some().then(|| self.energy(d));
                let mut nodes = std::mem::take(&mut self.states[d].nodes);
                self.collide(&mut nodes);
                self.states[d].nodes = nodes;
                if d == 1 {
                    if let Some(c) = coax {
                        let (outer, inner) = self.states.split_at_mut(1);
                        constrain_inner(&mut inner[0], &outer[0], c, ds);
                        let mut nodes = std::mem::take(&mut self.states[1].nodes);
                        self.collide(&mut nodes);
                        self.states[1].nodes = nodes;
                    }
                }
                if d == 0 {
                    if let (Some(log), Some(_), Some(b), Some(a)) = (&self.energy_log, before, after_ftl, after_bend) {
                        let end = self.energy(0);
                        let mut log = log.clone();
                        log.push(EnergyRecord { before: b, after: a, end });
                        self.energy_log = Some(log);
                    }
                }
                largest = largest.max(self.check(d, &previous)?);
            }
            self.last_displacement = largest;
            if largest < self.config.displacement_tolerance {
                break;
            }
        }
        Ok(())
    }

    /// Validates a rod after an iteration; returns its largest node move.
    fn check(&self, d: usize, previous: &[Vec3]) -> Result<f64> {
        let mut largest: f64 = 0.0;
        for (x, p) in self.states[d].nodes.iter().zip(previous) {
            if !is_finite(x) {
                return Err(SimError {
                    kind: SimErrorKind::NonFiniteState,
                    step: self.step_index,
                }
                .into());
            }
            let moved = (x - p).norm();
            if moved > 1e-9 {
                let pose = self.index.lumen_pose(x);
                if moved > 4.0 * pose.radius {
                    return Err(SimError {
                        kind: SimErrorKind::ExplosiveDisplacement,
                        step: self.step_index,
                    }
                    .into());
                }
            }
            largest = largest.max(moved);
        }
        Ok(largest)
    }

    /// Point at distance `ds` from `anchor` that stays in the lumen, turning
    /// from `wanted` towards `inside` (a direction whose point is in the
    /// lumen, e.g. folding back onto the previous node) by bisection.
    fn turn_into_lumen(&self, anchor: &Vec3, wanted: &Vec3, inside: &Vec3, ds: f64) -> Option<Vec3> {
        let margin = self.config.collision_margin;
        let (u, v) = (wanted.try_normalize(1e-12)?, inside.try_normalize(1e-12)?);
        let at = |a: f64| -> Option<Vec3> { Some(anchor + (u * (1.0 - a) + v * a).try_normalize(1e-12)? * ds) };
        let fits = |p: &Vec3| {
            let pose = self.index.lumen_pose(p);
            pose.distance <= (pose.radius - margin).max(0.0) + 1e-9
        };
        let mut good = at(1.0).filter(|p| fits(p))?;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            match at(mid) {
                Some(p) if fits(&p) => {
                    good = p;
                    hi = mid;
                }
                _ => lo = mid,
            }
        }
        Some(good)
    }

    /// Restores exact segment lengths while keeping every node in the lumen,
    /// walking from the base to the tip.
    fn final_sweep(&mut self) {
        let ds = self.config.ds;
        let margin = self.config.collision_margin;
        for d in 0..self.states.len() {
            let mut nodes = std::mem::take(&mut self.states[d].nodes);
            for i in (0..nodes.len().saturating_sub(1)).rev() {
                let anchor = nodes[i + 1];
                let mut c = nodes[i];
                for _ in 0..FINAL_SWEEP_ITERS {
                    let dir = c - anchor;
                    let len = dir.norm();
                    if len < 1e-12 {
                        break;
                    }
                    let placed = anchor + dir * (ds / len);
                    let pose = self.index.lumen_pose(&placed);
                    c = project_onto_pose(&placed, &pose.point, pose.distance, pose.radius, margin);
                    if c == placed {
                        break;
                    }
                }
                if ((c - anchor).norm() - ds).abs() > LENGTH_TOLERANCE * ds {
                    let fold = nodes.get(i + 2).copied();
                    let centre = self.index.lumen_pose(&anchor).point;
                    // Slide towards the lumen centre first; folding back is the fallback.
                    let turned = self
                        .turn_into_lumen(&anchor, &(c - anchor), &(centre - anchor), ds)
                        .or_else(|| fold.and_then(|f| self.turn_into_lumen(&anchor, &(c - anchor), &(f - anchor), ds)));
                    if let Some(p) = turned {
                        c = p;
                    }
                }
                nodes[i] = c;
            }
            self.states[d].nodes = nodes;
        }
        if self.states.len() == 2 {
            if let Ok(c) = clearance(&self.states[0], &self.states[1]) {
                let (outer, inner) = self.states.split_at_mut(1);
                constrain_inner(&mut inner[0], &outer[0], c, ds);
                let mut nodes = std::mem::take(&mut self.states[1].nodes);
                self.collide(&mut nodes);
                self.states[1].nodes = nodes;
            }
        }
    }

    /// Relaxes the current configuration without moving the devices.
    pub fn solve_equilibrium(&mut self) -> Result<()> {
        self.relax(self.config.solver_iterations)?;
        self.final_sweep();
        Ok(())
    }

    pub fn step(&mut self, action: &Action) -> Result<()> {
        if action.devices.len() != self.states.len() {
            return Err(Error::invalid(format!(
                "action has {} device commands for {} devices",
                action.devices.len(),
                self.states.len()
            )));
        }
        if !action.is_finite() {
            return Err(Error::invalid("action is not finite"));
        }
        let action = action.clamped();
        let (ds, dt) = (self.config.ds, self.config.dt);
        let targets: Vec<f64> = self
            .states
            .iter()
            .zip(&action.devices)
            .map(|(s, a)| (s.inserted_length + a.translation * dt).clamp(0.0, s.device.total_length))
            .collect();
        let substeps = self
            .states
            .iter()
            .zip(&targets)
            .map(|(s, t)| ((t - s.inserted_length).abs() / (0.5 * ds)).ceil() as usize)
            .max()
            .unwrap_or(1)
            .max(1);
        let per = (self.config.solver_iterations / substeps).max(1);
        let starts: Vec<(f64, f64)> = self.states.iter().map(|s| (s.inserted_length, s.base_twist)).collect();
        for k in 1..=substeps {
            let f = k as f64 / substeps as f64;
            for d in 0..self.states.len() {
                let (l0, tw0) = starts[d];
                let length = if k == substeps { targets[d] } else { l0 + (targets[d] - l0) * f };
                if length != self.states[d].inserted_length {
                    let mut s = self.states[d].clone();
                    self.advance(&mut s, length);
                    self.states[d] = s;
                }
                self.states[d].base_twist = tw0 + action.devices[d].rotation * dt * f;
            }
            self.relax(per)?;
        }
        self.final_sweep();
        self.step_index += 1;
        Ok(())
    }
}

impl Engine for RodEngine {
    fn reset(&mut self, tree: &VesselTree, devices: &[DeviceSpec]) -> Result<()> {
        if *self.tree != *tree {
            tree.validate()?;
            self.tree = Arc::new(tree.clone());
            self.index = Arc::new(CenterlineIndex::new(tree));
        }
        self.reset_devices(devices)
    }

    fn step(&mut self, action: &Action) -> Result<()> {
        RodEngine::step(self, action)
    }

    fn rod_states(&self) -> &[RodState] {
        &self.states
    }

    fn rest_curvature(&self, device: usize) -> Vec<Vec3> {
        let s = &self.states[device];
        let mut out = Vec::new();
        world_curvature(
            &s.nodes,
            &self.ghost(s),
            &self.tree.insertion.direction,
            s.base_twist,
            &self.material[device],
            &mut out,
        );
        out
    }
}
