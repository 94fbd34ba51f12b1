//! Procedural type-I aortic arches.
//!
//! Patient axes: x towards the patient's left, y posterior, z cranial. The
//! root branch runs from the distal descending aorta (the insertion end) up
//! over the arch and down the ascending aorta. The supra-aortic vessels leave
//! the arch in anatomical order: brachiocephalic trunk (splitting into the
//! right subclavian and right common carotid), left common carotid, left
//! subclavian.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::mesh::{merge, tube_mesh};
use super::{resample_centerline, Branch, InsertionPoint, VesselTree, DEFAULT_SPACING};
use crate::error::{Error, Result};
use crate::geom::{angle_between, Vec3};

pub const AORTA: &str = "aorta";
pub const BRACHIOCEPHALIC: &str = "brachiocephalic_trunk";
pub const RIGHT_SUBCLAVIAN: &str = "right_subclavian";
pub const RIGHT_CAROTID: &str = "right_common_carotid";
pub const LEFT_CAROTID: &str = "left_common_carotid";
pub const LEFT_SUBCLAVIAN: &str = "left_subclavian";
pub const RIGHT_VERTEBRAL: &str = "right_vertebral";
pub const LEFT_VERTEBRAL: &str = "left_vertebral";

/// Branch names of a generated arch, root first.
pub const ARCH_BRANCHES: [&str; 6] = [
    AORTA,
    BRACHIOCEPHALIC,
    RIGHT_SUBCLAVIAN,
    RIGHT_CAROTID,
    LEFT_CAROTID,
    LEFT_SUBCLAVIAN,
];

/// Largest angle between a child's first segment and its parent's tangent.
const MAX_TAKEOFF: f64 = 45.0 * PI / 180.0;
/// Child radius at the branch end relative to its start.
const TAPER: f64 = 0.85;
/// Right carotid and subclavian start radii as fractions of the trunk's.
const RCCA_FRACTION: f64 = 0.65;
const RSA_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

/// Uniform parameter ranges of the arch generator (mm and rad).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchRanges {
    pub arch_radius: Range,
    pub ascending_length: Range,
    pub descending_length: Range,
    pub aorta_diameter: Range,
    pub brachiocephalic_diameter: Range,
    pub left_carotid_diameter: Range,
    pub left_subclavian_diameter: Range,
    pub takeoff_jitter: Range,
    pub branch_length_scale: Range,
}

impl Default for ArchRanges {
    fn default() -> Self {
        ArchRanges {
            arch_radius: Range::new(22.0, 32.0),
            ascending_length: Range::new(40.0, 70.0),
            descending_length: Range::new(120.0, 180.0),
            aorta_diameter: Range::new(24.0, 32.0),
            brachiocephalic_diameter: Range::new(10.0, 14.0),
            left_carotid_diameter: Range::new(6.0, 9.0),
            left_subclavian_diameter: Range::new(7.0, 10.0),
            takeoff_jitter: Range::new(-0.08, 0.08),
            branch_length_scale: Range::new(0.8, 1.2),
        }
    }
}

impl ArchRanges {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("arch_radius", self.arch_radius),
            ("ascending_length", self.ascending_length),
            ("descending_length", self.descending_length),
            ("aorta_diameter", self.aorta_diameter),
            ("brachiocephalic_diameter", self.brachiocephalic_diameter),
            ("left_carotid_diameter", self.left_carotid_diameter),
            ("left_subclavian_diameter", self.left_subclavian_diameter),
            ("branch_length_scale", self.branch_length_scale),
        ];
        for (name, r) in all {
            if !(r.min > 0.0) || r.max < r.min || !r.max.is_finite() {
                return Err(Error::invalid(format!("arch range {name} must be positive and ordered")));
            }
        }
        let j = self.takeoff_jitter;
        if j.max < j.min || j.min.abs() > 0.2 || j.max.abs() > 0.2 {
            return Err(Error::invalid("takeoff_jitter must lie within [-0.2, 0.2] rad"));
        }
        if self.aorta_diameter.min <= self.brachiocephalic_diameter.max {
            return Err(Error::invalid("aorta must be wider than the brachiocephalic trunk"));
        }
        Ok(())
    }

    pub fn sample(&self, seed: u64) -> ArchParameters {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ArchParameters {
            arch_radius: self.arch_radius.draw(&mut rng),
            ascending_length: self.ascending_length.draw(&mut rng),
            descending_length: self.descending_length.draw(&mut rng),
            aorta_diameter: self.aorta_diameter.draw(&mut rng),
            brachiocephalic_diameter: self.brachiocephalic_diameter.draw(&mut rng),
            left_carotid_diameter: self.left_carotid_diameter.draw(&mut rng),
            left_subclavian_diameter: self.left_subclavian_diameter.draw(&mut rng),
            takeoff_jitter: self.takeoff_jitter.draw(&mut rng),
            branch_length_scale: self.branch_length_scale.draw(&mut rng),
        }
    }

    /// Declared lumen-radius interval of a generated branch.
    pub fn radius_bounds(&self, branch: &str) -> Range {
        let bct = self.brachiocephalic_diameter;
        let (lo, hi) = match branch {
            AORTA => (self.aorta_diameter.min, self.aorta_diameter.max),
            BRACHIOCEPHALIC => (bct.min * TAPER, bct.max),
            RIGHT_CAROTID => (bct.min * RCCA_FRACTION * TAPER, bct.max * RCCA_FRACTION),
            RIGHT_SUBCLAVIAN => (bct.min * RSA_FRACTION * TAPER, bct.max * RSA_FRACTION),
            LEFT_CAROTID => (self.left_carotid_diameter.min * TAPER, self.left_carotid_diameter.max),
            LEFT_SUBCLAVIAN => (self.left_subclavian_diameter.min * TAPER, self.left_subclavian_diameter.max),
            _ => (0.0, f64::INFINITY),
        };
        Range::new(lo / 2.0, hi / 2.0)
    }
}

/// One concrete draw of the nine arch parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParameters {
    pub arch_radius: f64,
    pub ascending_length: f64,
    pub descending_length: f64,
    pub aorta_diameter: f64,
    pub brachiocephalic_diameter: f64,
    pub left_carotid_diameter: f64,
    pub left_subclavian_diameter: f64,
    pub takeoff_jitter: f64,
    pub branch_length_scale: f64,
}

/// Generates the type-I arch for `seed`; a pure function of its inputs.
pub fn generate_aortic_arch(seed: u64, ranges: &ArchRanges) -> Result<VesselTree> {
    ranges.validate()?;
    let params = ranges.sample(seed);
    build_arch(&format!("aortic_arch_{seed}"), &params, false)
}

struct Builder {
    branches: Vec<Branch>,
}

impl Builder {
    fn tangent(&self, branch: usize, index: usize) -> Vec3 {
        let pts = &self.branches[branch].points;
        let a = pts[index.saturating_sub(1)];
        let b = pts[(index + 1).min(pts.len() - 1)];
        (b - a).normalize()
    }

    /// Adds a child leaving `parent` at point `index`, bending from a capped
    /// take-off direction into `final_dir`.
    fn child(
        &mut self,
        name: &str,
        parent: usize,
        index: usize,
        final_dir: Vec3,
        length: f64,
        radius: f64,
    ) -> Result<usize> {
        let start = self.branches[parent].points[index];
        let t = self.tangent(parent, index);
        let final_dir = final_dir.normalize();
        let angle = angle_between(&t, &final_dir);
        let d0 = if angle < 1e-9 {
            t
        } else {
            let w = (final_dir - t * t.dot(&final_dir)).normalize();
            let a = angle.min(MAX_TAKEOFF);
            t * a.cos() + w * a.sin()
        };
        let end = start + d0 * (0.3 * length) + final_dir * (0.7 * length);
        let p1 = start + d0 * (0.35 * length);
        let p2 = end - final_dir * (0.35 * length);
        let n = 400;
        let dense: Vec<Vec3> = (0..=n)
            .map(|k| {
                let u = k as f64 / n as f64;
                let v = 1.0 - u;
                start * (v * v * v) + p1 * (3.0 * v * v * u) + p2 * (3.0 * v * u * u) + end * (u * u * u)
            })
            .collect();
        let cum = crate::geom::cumulative_arclength(&dense);
        let total = *cum.last().unwrap();
        let radii = cum.iter().map(|s| radius * (1.0 - (1.0 - TAPER) * s / total)).collect();
        let raw = Branch::new(name, dense, radii).with_parent(&self.branches[parent].name.clone(), index);
        let mut b = resample_centerline(&raw, DEFAULT_SPACING)?;
        b.points[0] = start;
        self.branches.push(b);
        Ok(self.branches.len() - 1)
    }
}

pub(crate) fn build_arch(name: &str, p: &ArchParameters, cerebral_extension: bool) -> Result<VesselTree> {
    let h = Vec3::new((PI / 6.0).cos(), (PI / 6.0).sin(), 0.0);
    let z = Vec3::z();
    let r = p.arch_radius;
    let mut dense = Vec::new();
    let n_desc = (p.descending_length / 0.5).ceil() as usize;
    for k in 0..n_desc {
        let f = k as f64 / n_desc as f64;
        dense.push(h * r - z * (p.descending_length * (1.0 - f)));
    }
    let n_arch = 400;
    for k in 0..n_arch {
        let phi = PI * k as f64 / n_arch as f64;
        dense.push(h * (r * phi.cos()) + z * (r * phi.sin()));
    }
    let n_asc = (p.ascending_length / 0.5).ceil() as usize;
    for k in 0..=n_asc {
        let f = k as f64 / n_asc as f64;
        dense.push(-h * r - z * (p.ascending_length * f));
    }
    let ao_r = p.aorta_diameter / 2.0;
    let root = resample_centerline(&Branch::new(AORTA, dense.clone(), vec![ao_r; dense.len()]), DEFAULT_SPACING)?;
    let step = crate::geom::polyline_length(&root.points) / (root.points.len() - 1) as f64;
    let takeoff = |phi: f64| ((p.descending_length + r * phi) / step).round() as usize;

    let mut b = Builder { branches: vec![root] };
    let j = p.takeoff_jitter;
    let scale = p.branch_length_scale;
    let bct_r = p.brachiocephalic_diameter / 2.0;

    let bct = b.child(
        BRACHIOCEPHALIC,
        0,
        takeoff(0.64 * PI + j),
        Vec3::new(-0.45, -0.1, 1.0),
        40.0 * scale,
        bct_r,
    )?;
    let bct_end = b.branches[bct].points.len() - 1;
    let rsa = b.child(
        RIGHT_SUBCLAVIAN,
        bct,
        bct_end,
        Vec3::new(-1.0, 0.1, 0.25),
        70.0 * scale,
        bct_r * RSA_FRACTION,
    )?;
    let carotid_length = if cerebral_extension { 150.0 } else { 90.0 };
    b.child(
        RIGHT_CAROTID,
        bct,
        bct_end,
        Vec3::new(-0.1, 0.0, 1.0),
        carotid_length * scale,
        bct_r * RCCA_FRACTION,
    )?;
    b.child(
        LEFT_CAROTID,
        0,
        takeoff(0.47 * PI - 0.5 * j),
        Vec3::new(0.15, 0.0, 1.0),
        (carotid_length + 10.0) * scale,
        p.left_carotid_diameter / 2.0,
    )?;
    let lsa = b.child(
        LEFT_SUBCLAVIAN,
        0,
        takeoff(0.31 * PI + j),
        Vec3::new(0.7, 0.15, 0.7),
        80.0 * scale,
        p.left_subclavian_diameter / 2.0,
    )?;
    if cerebral_extension {
        for (name, parent, dir) in [
            (RIGHT_VERTEBRAL, rsa, Vec3::new(0.15, 0.2, 1.0)),
            (LEFT_VERTEBRAL, lsa, Vec3::new(-0.15, 0.2, 1.0)),
        ] {
            let at = (12.0 / DEFAULT_SPACING).round() as usize;
            let at = at.min(b.branches[parent].points.len() - 2);
            b.child(name, parent, at, dir, 130.0 * scale, 2.0)?;
        }
    }

    check_self_intersection(&b.branches)?;
    let mesh = merge(b.branches.iter().map(|br| tube_mesh(&br.points, &br.radii, 12)));
    let root = &b.branches[0];
    let insertion = InsertionPoint {
        position: root.points[0],
        direction: (root.points[1] - root.points[0]).normalize(),
    };
    VesselTree::new(name, b.branches, insertion, Some(mesh))
}

/// Rejects trees where a branch's centerline runs inside another branch's
/// lumen away from their shared junction region.
fn check_self_intersection(branches: &[Branch]) -> Result<()> {
    let clear_from = |b: &Branch| -> f64 {
        match &b.parent {
            None => 0.0,
            Some(att) => {
                let parent = branches.iter().find(|p| p.name == att.branch).unwrap();
                2.5 * parent.radii[att.index] + b.radii[0]
            }
        }
    };
    let samples: Vec<Vec<(Vec3, f64, f64)>> = branches
        .iter()
        .map(|b| {
            let cum = crate::geom::cumulative_arclength(&b.points);
            b.points
                .iter()
                .zip(&b.radii)
                .zip(cum)
                .map(|((p, r), s)| (*p, *r, s))
                .collect()
        })
        .collect();
    for i in 0..branches.len() {
        for j in i + 1..branches.len() {
            let (ci, cj) = (clear_from(&branches[i]), clear_from(&branches[j]));
            // Junction regions near the root are skipped via the child's own clearance.
            for &(p, rp, sp) in samples[i].iter().filter(|(_, _, s)| *s >= ci) {
                for &(q, rq, sq) in samples[j].iter().filter(|(_, _, s)| *s >= cj) {
                    let _ = (sp, sq);
                    if (p - q).norm() < rp.max(rq) {
                        return Err(Error::Generation(format!(
                            "centerlines of {} and {} intersect",
                            branches[i].name, branches[j].name
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_eval_seed() {
        let ranges = ArchRanges::default();
        let a = generate_aortic_arch(661023725, &ranges).unwrap();
        let b = generate_aortic_arch(661023725, &ranges).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn structure_for_many_seeds() {
        let ranges = ArchRanges::default();
        for seed in 0..100u64 {
            let tree = generate_aortic_arch(seed, &ranges).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            let root = tree.root();
            assert_eq!(tree.branches[root].name, AORTA);
            let first_level = tree
                .branches
                .iter()
                .filter(|b| b.parent.as_ref().is_some_and(|a| a.branch == AORTA))
                .count();
            // The root plus the three supra-aortic vessels leaving the arch.
            assert_eq!(first_level + 1, 4, "seed {seed}");
            assert_eq!(tree.branches.len(), ARCH_BRANCHES.len());
            let parents = tree.parent_indices();
            for (bi, b) in tree.branches.iter().enumerate() {
                let bounds = ranges.radius_bounds(&b.name);
                assert!(b.radii.iter().all(|r| bounds.contains(*r)), "seed {seed} {}", b.name);
                if let Some((pi, idx)) = parents[bi] {
                    let pts = &tree.branches[pi].points;
                    let pt = (pts[(idx + 1).min(pts.len() - 1)] - pts[idx.saturating_sub(1)]).normalize();
                    let ct = (b.points[1] - b.points[0]).normalize();
                    let a = angle_between(&pt, &ct).to_degrees();
                    assert!(a < 60.0, "seed {seed} {} takeoff {a}", b.name);
                }
            }
            tree.mesh.as_ref().unwrap().validate().unwrap();
        }
    }

    #[test]
    fn insertion_points_towards_arch() {
        let tree = generate_aortic_arch(1, &ArchRanges::default()).unwrap();
        assert!((tree.insertion.direction - Vec3::z()).norm() < 1e-9);
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut r = ArchRanges::default();
        r.arch_radius = Range::new(-1.0, 2.0);
        assert!(generate_aortic_arch(0, &r).is_err());
    }

    #[test]
    fn different_seeds_differ() {
        let r = ArchRanges::default();
        assert_ne!(generate_aortic_arch(1, &r).unwrap(), generate_aortic_arch(2, &r).unwrap());
    }
}
