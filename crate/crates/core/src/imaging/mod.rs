//! Fluoroscopy geometry, device tracking and grayscale frame synthesis.
//!
//! Patient axes: x towards the patient's left, y posterior, z cranial. The
//! gantry first turns by the RAO/LAO angle about z (RAO positive), then by
//! the cranial/caudal angle about x. Image coordinates are the rotated x and
//! z; the rotated y is depth.

mod frame;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::physics::RodState;
use crate::vessel::VesselTree;

pub use frame::{render_fluoro, GrayFrame};

/// Spacing of tracked points along each device, mm.
pub const TRACKING_SPACING: f64 = 2.0;
/// Tracked points per device.
pub const TRACKING_POINTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionMode {
    Orthographic,
    /// Point source `source_distance` mm in front of the isocenter; the
    /// detector plane passes through the isocenter.
    ConeBeam { source_distance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluoroGeometry {
    pub rao_lao_angle: f64,
    pub cran_caud_angle: f64,
    pub isocenter: Vec3,
    /// mm per pixel.
    pub pixel_spacing: f64,
    pub image_size: (u32, u32),
    pub frame_rate: f64,
    pub mode: ProjectionMode,
}

impl Default for FluoroGeometry {
    fn default() -> Self {
        FluoroGeometry {
            rao_lao_angle: 30f64.to_radians(),
            cran_caud_angle: 0.0,
            isocenter: Vec3::zeros(),
            pixel_spacing: 0.5,
            image_size: (512, 512),
            frame_rate: 7.5,
            mode: ProjectionMode::Orthographic,
        }
    }
}

impl FluoroGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_spacing > 0.0) || self.image_size.0 == 0 || self.image_size.1 == 0 || !(self.frame_rate > 0.0)
        {
            return Err(Error::invalid("fluoro geometry needs positive spacing, size and frame rate"));
        }
        if let ProjectionMode::ConeBeam { source_distance } = self.mode {
            if !(source_distance > 0.0) {
                return Err(Error::invalid("cone-beam source distance must be positive"));
            }
        }
        Ok(())
    }

    /// Control period implied by the frame rate.
    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vec3::x_axis(), self.cran_caud_angle)
            * Rotation3::from_axis_angle(&Vec3::z_axis(), self.rao_lao_angle)
    }

    /// Image-plane position in mm, and the depth coordinate.
    pub fn project_with_depth(&self, p: &Vec3) -> Result<([f64; 2], f64)> {
        let q = self.rotation() * (p - self.isocenter);
        match self.mode {
            ProjectionMode::Orthographic => Ok(([q.x, q.z], q.y)),
            ProjectionMode::ConeBeam { source_distance } => {
                let from_source = source_distance + q.y;
                if !(from_source > 0.0) {
                    return Err(Error::Projection(format!(
                        "point at depth {} lies behind the source",
                        q.y
                    )));
                }
                let s = source_distance / from_source;
                Ok(([q.x * s, q.z * s], q.y))
            }
        }
    }

    pub fn project_point(&self, p: &Vec3) -> Result<[f64; 2]> {
        self.project_with_depth(p).map(|(uv, _)| uv)
    }

    /// Image-plane mm to fractional pixel coordinates (row 0 at the top).
    pub fn to_pixel(&self, uv: [f64; 2]) -> [f64; 2] {
        let (w, h) = self.image_size;
        [
            w as f64 / 2.0 + uv[0] / self.pixel_spacing,
            h as f64 / 2.0 - uv[1] / self.pixel_spacing,
        ]
    }

    /// Projected bounding box of a vessel tree's lumen, padded by `pad` mm.
    pub fn projected_bounds(&self, tree: &VesselTree, pad: f64) -> Result<([f64; 2], [f64; 2])> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for b in &tree.branches {
            for (p, r) in b.points.iter().zip(&b.radii) {
                let uv = self.project_point(p)?;
                for k in 0..2 {
                    lo[k] = lo[k].min(uv[k] - r);
                    hi[k] = hi[k].max(uv[k] + r);
                }
            }
        }
        let uv = self.project_point(&tree.insertion.position)?;
        for k in 0..2 {
            lo[k] = lo[k].min(uv[k]) - pad;
            hi[k] = hi[k].max(uv[k]) + pad;
        }
        Ok((lo, hi))
    }
}

/// Projected tracking points, tip first, per device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub devices: Vec<Vec<[f64; 2]>>,
}

/// The inserted device polyline from the tip back to the insertion point.
pub fn device_polyline(state: &RodState, insertion: &Vec3) -> Vec<Vec3> {
    let mut pts = state.nodes.clone();
    if (pts[pts.len() - 1] - insertion).norm() > 1e-12 {
        pts.push(*insertion);
    }
    pts
}

/// 3D tracking points at 0, 2 and 4 mm from the tip; short devices repeat
/// their most basal point.
pub fn tracking_points_3d(state: &RodState, insertion: &Vec3) -> Vec<Vec3> {
    let pts = device_polyline(state, insertion);
    let cum = crate::geom::cumulative_arclength(&pts);
    (0..TRACKING_POINTS)
        .map(|k| crate::geom::point_at_arclength(&pts, &cum, k as f64 * TRACKING_SPACING))
        .collect()
}

pub fn track_devices(states: &[RodState], insertion: &Vec3, geometry: &FluoroGeometry) -> Result<TrackingResult> {
    let devices = states
        .iter()
        .map(|s| {
            tracking_points_3d(s, insertion)
                .iter()
                .map(|p| geometry.project_point(p))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackingResult { devices })
}
