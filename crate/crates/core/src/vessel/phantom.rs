//! Synthetic anatomies bundled with the benchmarks.

use super::arch::{build_arch, ArchParameters};
use super::mesh::{merge, tube_mesh};
use super::{resample_centerline, Branch, InsertionPoint, VesselTree, DEFAULT_SPACING};
use crate::error::Result;
use crate::geom::Vec3;

/// A symmetric Y bifurcation: a 120 mm trunk along +z splitting into two
/// 80 mm children at ±35°.
pub fn y_phantom() -> VesselTree {
    let trunk_len = 120.0;
    let top = Vec3::new(0.0, 0.0, trunk_len);
    let line = |name: &str, from: Vec3, dir: Vec3, len: f64, r: f64| {
        let raw = Branch::new(name, vec![from, from + dir * len], vec![r, r]);
        resample_centerline(&raw, DEFAULT_SPACING).expect("static phantom geometry")
    };
    let angle = 35f64.to_radians();
    let trunk = line("trunk", Vec3::zeros(), Vec3::z(), trunk_len, 8.0);
    let last = trunk.points.len() - 1;
    let left = line("left", top, Vec3::new(angle.sin(), 0.0, angle.cos()), 80.0, 5.0).with_parent("trunk", last);
    let right = line("right", top, Vec3::new(-angle.sin(), 0.0, angle.cos()), 80.0, 5.0).with_parent("trunk", last);
    let branches = vec![trunk, left, right];
    let mesh = merge(branches.iter().map(|b| tube_mesh(&b.points, &b.radii, 12)));
    VesselTree::new(
        "y_phantom",
        branches,
        InsertionPoint {
            position: Vec3::zeros(),
            direction: Vec3::z(),
        },
        Some(mesh),
    )
    .expect("static phantom geometry")
}

/// Parameters of the fixed arch underlying the dual-device anatomy.
pub fn dual_device_parameters() -> ArchParameters {
    ArchParameters {
        arch_radius: 27.0,
        ascending_length: 55.0,
        descending_length: 150.0,
        aorta_diameter: 28.0,
        brachiocephalic_diameter: 12.0,
        left_carotid_diameter: 7.5,
        left_subclavian_diameter: 8.5,
        takeoff_jitter: 0.0,
        branch_length_scale: 1.0,
    }
}

/// Synthetic stand-in for a segmented arch with cerebral extension: longer
/// carotids and a vertebral artery off each subclavian.
pub fn dual_device_anatomy() -> Result<VesselTree> {
    build_arch("dual_device_anatomy", &dual_device_parameters(), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn y_phantom_is_valid() {
        let y = y_phantom();
        assert_eq!(y.branches.len(), 3);
        assert_eq!(y.terminal_branches(), vec![1, 2]);
    }

    #[test]
    fn dual_anatomy_has_vertebrals() {
        let t = dual_device_anatomy().unwrap();
        assert!(t.branch("right_vertebral").is_some());
        assert!(t.branch("left_vertebral").is_some());
        assert!(t.branch("left_common_carotid").unwrap().length() > 140.0);
    }
}
