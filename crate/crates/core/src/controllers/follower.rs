//! Scripted baseline that steers the shaped tip along the centerline path
//! to the target using the simulator's 3D state.

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyContext};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::vessel::{CenterlinePose, VesselTree};
use crate::physics::{Action, DeviceAction, RodState, MAX_ROTATION, MAX_TRANSLATION};

/// Aim offsets below this sine of the angle to the shaft are ignored.
const MIN_LATERAL: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowerParams {
    /// Path distance ahead of the tip bend used as the aim point, mm.
    pub lookahead: f64,
    /// Aim direction counts as straight ahead below this sine of the angle to the shaft.
    pub lateral_tolerance: f64,
    /// Largest bend-to-aim angle at which the device still advances, rad.
    pub angle_tolerance: f64,
    /// Fraction of the bend-to-aim angle corrected per step.
    pub rotation_gain: f64,
    /// Steps spent retracting after entering a wrong branch or stalling.
    pub retract_steps: usize,
    /// Steps without path progress that count as a stall.
    pub stall_steps: usize,
    /// Progress below this over `stall_steps` counts as a stall, mm.
    pub stall_progress: f64,
    /// How far an outer device trails the steered inner one, mm. A short
    /// trail lets the stiff outer device follow the inner one into side branches.
    pub trail: f64,
}

impl Default for FollowerParams {
    fn default() -> Self {
        FollowerParams {
            lookahead: 20.0,
            lateral_tolerance: 0.25,
            angle_tolerance: 0.5,
            rotation_gain: 1.0,
            retract_steps: 8,
            stall_steps: 40,
            stall_progress: 2.0,
            trail: 120.0,
        }
    }
}

/// Steers the last device; any device before it follows `trail` mm behind.
pub struct CenterlineFollower {
    params: FollowerParams,
    retract_left: usize,
    best: f64,
    since_best: usize,
    /// Retries at the current obstacle; selects a roll offset for the bend.
    attempt: usize,
    /// Best path distance reached before the last retraction.
    retry_at: f64,
}

/// Bend roll offsets tried in turn after each retraction.
const ROLL_OFFSETS: [f64; 4] = [0.0, std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2, std::f64::consts::PI];
/// Progress past the last retraction point that clears the retry count, mm.
const RETRY_CLEARANCE: f64 = 20.0;

impl CenterlineFollower {
    pub fn new(params: FollowerParams) -> Self {
        CenterlineFollower {
            params,
            retract_left: 0,
            best: f64::INFINITY,
            since_best: 0,
            attempt: 0,
            retry_at: f64::INFINITY,
        }
    }

    pub fn params(&self) -> &FollowerParams {
        &self.params
    }

    fn steer(&mut self, ctx: &PolicyContext<'_>, device: usize) -> Result<DeviceAction> {
        let p = &self.params;
        let state = &ctx.engine.rod_states()[device];
        let insertion = ctx.tree.insertion.direction;
        let tip_pose = ctx.index.lumen_pose(&state.tip());
        let dist = ctx.field.distance_to(&tip_pose)?;
        if dist < self.best - p.stall_progress {
            self.best = dist;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        let target_branch = ctx
            .tree
            .branch_index(&ctx.target.branch)
            .ok_or_else(|| Error::invalid(format!("target branch {} not in tree", ctx.target.branch)))?;
        let off_path = off_path(ctx.tree, target_branch, &tip_pose, p.lookahead / 4.0);
        if dist < self.retry_at - RETRY_CLEARANCE {
            self.attempt = 0;
            self.retry_at = f64::INFINITY;
        }
        if self.retract_left == 0 && (off_path || self.since_best >= p.stall_steps) {
            self.retract_left = p.retract_steps;
            self.attempt += 1;
            self.retry_at = self.best.min(dist);
            self.since_best = 0;
            self.best = f64::INFINITY;
        }
        if off_path {
            self.retract_left = self.retract_left.max(p.retract_steps / 2);
        }
        if self.retract_left > 0 {
            self.retract_left -= 1;
            return Ok(DeviceAction::new(-MAX_TRANSLATION, 0.0));
        }
        let bend_nodes = (state.device.shaped_length() / ctx.ds).ceil() as usize;
        let r = bend_nodes.max(1);
        if state.nodes.len() <= r + 1 || bend_nodes == 0 {
            return Ok(DeviceAction::new(MAX_TRANSLATION, 0.0));
        }
        let shaft = (state.nodes[r] - state.nodes[r + 1]).try_normalize(1e-12).unwrap_or(insertion);
        let aim = ctx.field.toward_origin(&tip_pose, p.lookahead) - state.nodes[r];
        let Some(aim) = aim.try_normalize(1e-9) else {
            return Ok(DeviceAction::new(MAX_TRANSLATION, 0.0));
        };
        let aim_perp = aim - shaft * aim.dot(&shaft);
        let rest = ctx.engine.rest_curvature(device);
        let bend: Vec3 = rest[1..=r.min(rest.len() - 1)].iter().sum();
        let bend_perp = bend - shaft * bend.dot(&shaft);
        if aim_perp.norm() < MIN_LATERAL || bend_perp.norm() < 1e-9 {
            return Ok(DeviceAction::new(MAX_TRANSLATION, 0.0));
        }
        // Orient the bend towards the aim early; only stop advancing when a
        // sharp turn is ahead and the bend faces away from it.
        let phi = wrap_angle(
            shaft.dot(&bend_perp.cross(&aim_perp)).atan2(bend_perp.dot(&aim_perp))
                + ROLL_OFFSETS[self.attempt % ROLL_OFFSETS.len()],
        );
        let rotation = (p.rotation_gain * phi / ctx.dt).clamp(-MAX_ROTATION, MAX_ROTATION);
        let translation = if aim_perp.norm() < p.lateral_tolerance || phi.abs() <= p.angle_tolerance {
            MAX_TRANSLATION
        } else {
            0.0
        };
        Ok(DeviceAction::new(translation, rotation))
    }
}

impl Default for CenterlineFollower {
    fn default() -> Self {
        CenterlineFollower::new(FollowerParams::default())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

/// Whether the pose lies on a branch off the target's lineage, or on an
/// ancestor past the point where the path turns off, by more than `margin`
/// beyond the relevant vessel wall.
fn off_path(tree: &VesselTree, target_branch: usize, pose: &CenterlinePose, margin: f64) -> bool {
    let lineage = tree.lineage(target_branch);
    let Some(k) = lineage.iter().position(|&b| b == pose.branch) else {
        return depth_in_branch(tree, pose) > margin;
    };
    let Some(&child) = lineage.get(k + 1) else {
        return false;
    };
    let attach = tree.branches[child].parent.as_ref().expect("non-root child has a parent");
    let parent = &tree.branches[pose.branch];
    let turn_off = crate::geom::polyline_length(&parent.points[..=attach.index]);
    let child_radius = tree.branches[child].radii[0];
    pose.arclength > turn_off + child_radius + margin
}

/// Arclength past the parent's wall; a child's first stretch lies inside its parent.
fn depth_in_branch(tree: &VesselTree, pose: &CenterlinePose) -> f64 {
    let b = &tree.branches[pose.branch];
    let wall = b
        .parent
        .as_ref()
        .and_then(|a| tree.branch(&a.branch).map(|p| p.radii[a.index]))
        .unwrap_or(0.0);
    pose.arclength - wall
}

fn trailing(outer: &RodState, inner: &RodState, trail: f64, dt: f64) -> DeviceAction {
    let wanted = (inner.inserted_length - trail).max(0.0);
    DeviceAction::new(((wanted - outer.inserted_length) / dt).clamp(-MAX_TRANSLATION, MAX_TRANSLATION), 0.0)
}

impl Policy for CenterlineFollower {
    fn reset(&mut self, _seed: u64) {
        self.retract_left = 0;
        self.best = f64::INFINITY;
        self.since_best = 0;
        self.attempt = 0;
        self.retry_at = f64::INFINITY;
    }

    fn act(&mut self, observation: &Observation, ctx: &PolicyContext<'_>) -> Result<Action> {
        let states = ctx.engine.rod_states();
        if observation.n_devices() != states.len() {
            return Err(Error::invalid("observation and simulator disagree on the device count"));
        }
        let steered = states.len() - 1;
        let lead = self.steer(ctx, steered)?;
        let target_branch = ctx
            .tree
            .branch_index(&ctx.target.branch)
            .ok_or_else(|| Error::invalid(format!("target branch {} not in tree", ctx.target.branch)))?;
        let margin = self.params.lookahead / 4.0;
        let mut devices: Vec<DeviceAction> = states[..steered]
            .iter()
            .map(|outer| {
                // An outer device that strayed is pulled back regardless of the inner one.
                if off_path(ctx.tree, target_branch, &ctx.index.lumen_pose(&outer.tip()), margin) {
                    DeviceAction::new(-MAX_TRANSLATION, 0.0)
                } else {
                    trailing(outer, &states[steered], self.params.trail, ctx.dt)
                }
            })
            .collect();
        devices.push(lead);
        Ok(Action::new(devices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{y_phantom_nav, EpisodeMode};
    use crate::env::NavEnv;

    #[test]
    fn advances_in_straight_trunk() {
        let mut env = NavEnv::new(y_phantom_nav(), EpisodeMode::Eval).unwrap();
        let (obs, _) = env.reset(0).unwrap();
        let mut f = CenterlineFollower::default();
        let a = f.act(&obs, &env.context().unwrap()).unwrap();
        assert_eq!(a.devices[0], DeviceAction::new(35.0, 0.0));
    }
}
