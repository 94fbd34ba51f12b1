//! Observation layout and [-1, 1] normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::TRACKING_POINTS;
use crate::physics::Action;

/// Per-element normalization bounds in flattened observation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ObservationBounds {
    /// Image-plane bounds for every position element and the velocity limits
    /// for every action element.
    pub fn new(n_devices: usize, position_min: [f64; 2], position_max: [f64; 2], limits: [f64; 2]) -> Self {
        let mut min = Vec::with_capacity(observation_len(n_devices));
        let mut max = Vec::with_capacity(min.capacity());
        for _ in 0..(2 * TRACKING_POINTS * n_devices + 1) {
            min.extend_from_slice(&position_min);
            max.extend_from_slice(&position_max);
        }
        for _ in 0..n_devices {
            min.extend_from_slice(&[-limits[0], -limits[1]]);
            max.extend_from_slice(&limits);
        }
        ObservationBounds { min, max }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::invalid("observation bounds differ in length"));
        }
        for (i, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("degenerate observation bound at element {i}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// `x -> 2 (x - min) / (max - min) - 1`, element-wise.
    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_len(raw.len())?;
        self.validate()?;
        Ok(raw
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(x, (lo, hi))| 2.0 * (x - lo) / (hi - lo) - 1.0)
            .collect())
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Result<Vec<f64>> {
        self.check_len(normalized.len())?;
        self.validate()?;
        Ok(normalized
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(y, (lo, hi))| lo + (y + 1.0) * (hi - lo) / 2.0)
            .collect())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::invalid(format!("expected {} observation values, got {n}", self.len())));
        }
        Ok(())
    }
}

/// Flattened length for `n` devices: `14 n + 2`.
pub fn observation_len(n_devices: usize) -> usize {
    n_devices * 4 * TRACKING_POINTS + 2 + 2 * n_devices
}

/// Normalized observation. Flattening order: for each device its current
/// then previous tracking points, then the target, then the last action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tracking_now: Vec<Vec<[f64; 2]>>,
    pub tracking_prev: Vec<Vec<[f64; 2]>>,
    pub target_2d: [f64; 2],
    /// Normalized `[translation, rotation]` per device.
    pub last_action: Vec<[f64; 2]>,
}

impl Observation {
    pub fn n_devices(&self) -> usize {
        self.tracking_now.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(observation_len(self.n_devices()));
        for (now, prev) in self.tracking_now.iter().zip(&self.tracking_prev) {
            for p in now.iter().chain(prev) {
                out.extend_from_slice(p);
            }
        }
        out.extend_from_slice(&self.target_2d);
        for a in &self.last_action {
            out.extend_from_slice(a);
        }
        out
    }

    /// Inverse of [`Observation::flatten`].
    pub fn unflatten(values: &[f64], n_devices: usize) -> Result<Self> {
        if values.len() != observation_len(n_devices) {
            return Err(Error::invalid(format!(
                "expected {} observation values for {n_devices} devices, got {}",
                observation_len(n_devices),
                values.len()
            )));
        }
        let mut it = values.chunks(2).map(|c| [c[0], c[1]]);
        let mut now = Vec::new();
        let mut prev = Vec::new();
        for _ in 0..n_devices {
            now.push(it.by_ref().take(TRACKING_POINTS).collect());
            prev.push(it.by_ref().take(TRACKING_POINTS).collect());
        }
        let target_2d = it.next().expect("length checked");
        Ok(Observation {
            tracking_now: now,
            tracking_prev: prev,
            target_2d,
            last_action: it.collect(),
        })
    }
}

fn flat_raw(now: &[Vec<[f64; 2]>], prev: &[Vec<[f64; 2]>], target: [f64; 2], last_action: &Action) -> Vec<f64> {
    Observation {
        tracking_now: now.to_vec(),
        tracking_prev: prev.to_vec(),
        target_2d: target,
        last_action: last_action.devices.iter().map(|d| [d.translation, d.rotation]).collect(),
    }
    .flatten()
}

/// Normalizes raw image-plane tracking, target and action into an observation.
pub fn build_observation(
    tracking_now: &[Vec<[f64; 2]>],
    tracking_prev: &[Vec<[f64; 2]>],
    target_2d: [f64; 2],
    last_action: &Action,
    bounds: &ObservationBounds,
) -> Result<Observation> {
    let n = tracking_now.len();
    if tracking_prev.len() != n || last_action.devices.len() != n {
        return Err(Error::invalid("tracking and action disagree on the device count"));
    }
    if tracking_now.iter().chain(tracking_prev).any(|t| t.len() != TRACKING_POINTS) {
        return Err(Error::invalid(format!("every device needs {TRACKING_POINTS} tracking points")));
    }
    let raw = flat_raw(tracking_now, tracking_prev, target_2d, last_action);
    Observation::unflatten(&bounds.normalize(&raw)?, n)
}
