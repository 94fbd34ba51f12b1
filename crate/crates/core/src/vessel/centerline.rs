use serde::{Deserialize, Serialize};

use super::{Branch, VesselTree};
use crate::error::{Error, Result};
use crate::geom::{cumulative_arclength, project_on_segment, Vec3};

/// Projection of a point onto the centerline graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterlinePose {
    /// Branch index in the tree.
    pub branch: usize,
    /// Segment index within the branch (between points `segment` and `segment + 1`).
    pub segment: usize,
    /// Position within the segment, 0..=1.
    pub t: f64,
    /// Arclength from the branch start, mm.
    pub arclength: f64,
    /// Distance from the query point to the centerline, mm.
    pub distance: f64,
    /// The projected point on the centerline.
    pub point: Vec3,
    /// Interpolated lumen radius at the projection.
    pub radius: f64,
}

/// Resamples a branch at uniform arclength intervals no longer than `spacing`.
pub fn resample_centerline(branch: &Branch, spacing: f64) -> Result<Branch> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
    }
    if branch.points.len() < 2 || branch.radii.len() != branch.points.len() {
        return Err(Error::invalid(format!("branch {} is malformed", branch.name)));
    }
    if branch.points.iter().any(|p| !crate::geom::is_finite(p)) || branch.radii.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid(format!("branch {} has non-finite values", branch.name)));
    }
    let cum = cumulative_arclength(&branch.points);
    let total = *cum.last().unwrap();
    let intervals = ((total / spacing).ceil() as usize).max(1);
    let step = total / intervals as f64;
    let mut points = Vec::with_capacity(intervals + 1);
    let mut radii = Vec::with_capacity(intervals + 1);
    let mut k = 0;
    for i in 0..=intervals {
        let s = if i == intervals { total } else { step * i as f64 };
        while k + 2 < cum.len() && cum[k + 1] < s {
            k += 1;
        }
        let seg = cum[k + 1] - cum[k];
        let t = if seg > 0.0 { ((s - cum[k]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        points.push(branch.points[k] + (branch.points[k + 1] - branch.points[k]) * t);
        radii.push(branch.radii[k] + (branch.radii[k + 1] - branch.radii[k]) * t);
    }
    // Endpoints are copied exactly so junction coincidence survives resampling.
    points[0] = branch.points[0];
    *points.last_mut().unwrap() = *branch.points.last().unwrap();
    Ok(Branch {
        name: branch.name.clone(),
        points,
        radii,
        parent: branch.parent.clone(),
    })
}

#[derive(Clone, Debug)]
struct Segment {
    a: Vec3,
    b: Vec3,
    ra: f64,
    rb: f64,
    branch: usize,
    index: usize,
    s0: f64,
}

impl Segment {
    #[inline]
    fn pose(&self, p: &Vec3) -> CenterlinePose {
        let t = project_on_segment(p, &self.a, &self.b);
        let point = self.a + (self.b - self.a) * t;
        CenterlinePose {
            branch: self.branch,
            segment: self.index,
            t,
            arclength: self.s0 + (self.b - self.a).norm() * t,
            distance: (p - point).norm(),
            point,
            radius: self.ra + (self.rb - self.ra) * t,
        }
    }
}

/// Spatial index over all centerline segments of a tree.
///
/// Each grid cell lists the segments whose lumen, grown by `reach`, overlaps
/// the cell; lumen queries for points inside or near the vessel touch a single
/// cell.
#[derive(Clone, Debug)]
pub struct CenterlineIndex {
    segments: Vec<Segment>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    entries: Vec<u32>,
    reach: f64,
    branch_lengths: Vec<f64>,
}

impl CenterlineIndex {
    pub fn new(tree: &VesselTree) -> Self {
        let mut segments = Vec::new();
        let mut branch_lengths = Vec::new();
        for (bi, b) in tree.branches.iter().enumerate() {
            let cum = cumulative_arclength(&b.points);
            for k in 0..b.points.len() - 1 {
                segments.push(Segment {
                    a: b.points[k],
                    b: b.points[k + 1],
                    ra: b.radii[k],
                    rb: b.radii[k + 1],
                    branch: bi,
                    index: k,
                    s0: cum[k],
                });
            }
            branch_lengths.push(*cum.last().unwrap());
        }
        let reach = 4.0;
        let max_r = segments.iter().map(|s| s.ra.max(s.rb)).fold(0.0, f64::max);
        let (lo, hi) = tree.bounding_box();
        // Cells scale with the widest lumen, capped at about a million cells.
        let span = hi - lo + Vec3::repeat(2.0 * reach);
        let volume_cell = (span.x * span.y * span.z / 1.0e6).cbrt();
        let cell = (max_r * 0.75).max(2.0).max(volume_cell);
        let origin = lo - Vec3::repeat(reach + cell);
        let extent = hi - lo + Vec3::repeat(2.0 * (reach + cell));
        let dims = [0, 1, 2].map(|i| ((extent[i] / cell).ceil() as usize).max(1));
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (si, s) in segments.iter().enumerate() {
            let r = s.ra.max(s.rb) + reach;
            let lo = s.a.inf(&s.b) - Vec3::repeat(r);
            let hi = s.a.sup(&s.b) + Vec3::repeat(r);
            let c0 = [0, 1, 2].map(|i| (((lo[i] - origin[i]) / cell).floor().max(0.0) as usize).min(dims[i] - 1));
            let c1 = [0, 1, 2].map(|i| (((hi[i] - origin[i]) / cell).floor().max(0.0) as usize).min(dims[i] - 1));
            for x in c0[0]..=c1[0] {
                for y in c0[1]..=c1[1] {
                    for z in c0[2]..=c1[2] {
                        // Skip cells whose box is farther than r from the segment.
                        let cmin = origin + Vec3::new(x as f64, y as f64, z as f64) * cell;
                        let center = cmin + Vec3::repeat(cell * 0.5);
                        let t = project_on_segment(&center, &s.a, &s.b);
                        let q = s.a + (s.b - s.a) * t;
                        if (center - q).norm() <= r + cell * 0.8661 {
                            buckets[(x * dims[1] + y) * dims[2] + z].push(si as u32);
                        }
                    }
                }
            }
        }
        let mut starts = Vec::with_capacity(buckets.len() + 1);
        let mut entries = Vec::new();
        for b in buckets {
            starts.push(entries.len() as u32);
            entries.extend(b);
        }
        starts.push(entries.len() as u32);
        CenterlineIndex {
            segments,
            origin,
            cell,
            dims,
            starts,
            entries,
            reach,
            branch_lengths,
        }
    }

    pub fn branch_length(&self, branch: usize) -> f64 {
        self.branch_lengths[branch]
    }

    /// Globally nearest centerline point (exact, exhaustive over segments).
    pub fn nearest(&self, p: &Vec3) -> CenterlinePose {
        let mut best = self.segments[0].pose(p);
        for s in &self.segments[1..] {
            let q = s.pose(p);
            if q.distance < best.distance {
                best = q;
            }
        }
        best
    }

    /// Pose of the lumen the point is deepest inside, i.e. the one minimising
    /// `distance - radius`. Points outside every lumen get the closest wall.
    pub fn lumen_pose(&self, p: &Vec3) -> CenterlinePose {
        let mut best: Option<CenterlinePose> = None;
        if let Some(cell) = self.cell_of(p) {
            let (a, b) = (self.starts[cell] as usize, self.starts[cell + 1] as usize);
            for &si in &self.entries[a..b] {
                let q = self.segments[si as usize].pose(p);
                if best.is_none_or(|bq| q.distance - q.radius < bq.distance - bq.radius) {
                    best = Some(q);
                }
            }
        }
        match best {
            // Every segment whose clearance beats `reach` is listed in the cell.
            Some(q) if q.distance - q.radius < self.reach => q,
            _ => self.lumen_pose_exhaustive(p),
        }
    }

    pub(crate) fn lumen_pose_exhaustive(&self, p: &Vec3) -> CenterlinePose {
        let mut best = self.segments[0].pose(p);
        for s in &self.segments[1..] {
            let q = s.pose(p);
            if q.distance - q.radius < best.distance - best.radius {
                best = q;
            }
        }
        best
    }

    fn cell_of(&self, p: &Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for i in 0..3 {
            let c = ((p[i] - self.origin[i]) / self.cell).floor();
            if !(c >= 0.0) || c as usize >= self.dims[i] {
                return None;
            }
            idx[i] = c as usize;
        }
        Some((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2])
    }

    /// Unit tangent of the centerline at a pose, pointing away from the branch start.
    pub fn tangent(&self, tree: &VesselTree, pose: &CenterlinePose) -> Vec3 {
        let b = &tree.branches[pose.branch];
        (b.points[pose.segment + 1] - b.points[pose.segment]).normalize()
    }
}

/// Globally nearest centerline point of a tree.
pub fn nearest_centerline_point(tree: &VesselTree, point: &Vec3) -> CenterlinePose {
    CenterlineIndex::new(tree).nearest(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vessel::{InsertionPoint, VesselTree};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn line(len: f64, n: usize) -> Branch {
        let pts = (0..=n).map(|k| Vec3::new(len * k as f64 / n as f64, 0.0, 0.0)).collect();
        Branch::new("b", pts, vec![2.0; n + 1])
    }

    #[test]
    fn straight_resample_uniform() {
        let r = resample_centerline(&line(100.0, 3), 10.0).unwrap();
        assert_eq!(r.points.len(), 11);
        for (k, p) in r.points.iter().enumerate() {
            assert!((p.x - 10.0 * k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn coarse_spacing_keeps_endpoints() {
        let b = line(7.0, 5);
        let r = resample_centerline(&b, 50.0).unwrap();
        assert_eq!(r.points, vec![b.points[0], *b.points.last().unwrap()]);
    }

    #[test]
    fn semicircle_arclength() {
        let radius = 20.0;
        let n = 2000;
        let pts = (0..=n)
            .map(|k| {
                let a = PI * k as f64 / n as f64;
                Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
            })
            .collect();
        let b = Branch::new("arc", pts, vec![1.0; n + 1]);
        let r = resample_centerline(&b, 0.5).unwrap();
        let len = crate::geom::polyline_length(&r.points);
        assert!((len - PI * radius).abs() / (PI * radius) < 1e-3);
        // Spacing bound and arclength preservation.
        assert!(r.points.windows(2).all(|w| (w[1] - w[0]).norm() <= 0.5 + 1e-9));
        assert!((len - b.length()).abs() <= 0.25);
    }

    #[test]
    fn resample_rejects_bad_input() {
        assert!(resample_centerline(&line(10.0, 2), 0.0).is_err());
        let mut b = line(10.0, 2);
        b.points[1].y = f64::NAN;
        assert!(matches!(resample_centerline(&b, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn radii_interpolate_linearly() {
        let mut b = line(10.0, 1);
        b.radii = vec![1.0, 3.0];
        let r = resample_centerline(&b, 2.5).unwrap();
        assert!((r.radii[2] - 2.0).abs() < 1e-12);
    }

    fn tree_from(branches: Vec<Branch>) -> VesselTree {
        let p0 = branches[0].points[0];
        let d = (branches[0].points[1] - p0).normalize();
        VesselTree::new(
            "t",
            branches,
            InsertionPoint {
                position: p0,
                direction: d,
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn on_centerline_and_radial_offsets() {
        let tree = tree_from(vec![line(50.0, 25)]);
        let idx = CenterlineIndex::new(&tree);
        assert_eq!(idx.nearest(&Vec3::new(13.3, 0.0, 0.0)).distance, 0.0);
        let q = idx.nearest(&Vec3::new(20.0, 3.0, 0.0));
        assert!((q.distance - 3.0).abs() < 1e-12);
        assert!((q.arclength - 20.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_agrees_with_dense_sampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let root = Branch::new(
            "root",
            (0..=20).map(|k| Vec3::new(0.0, 0.0, 3.0 * k as f64)).collect(),
            vec![5.0; 21],
        );
        let side = Branch::new(
            "side",
            (0..=15)
                .map(|k| {
                    let a = k as f64 * 0.1;
                    Vec3::new(20.0 * (1.0 - a.cos()), 5.0 * a, 30.0 + 20.0 * a.sin())
                })
                .collect(),
            vec![3.0; 16],
        )
        .with_parent("root", 10);
        let tree = tree_from(vec![root, side]);
        let idx = CenterlineIndex::new(&tree);
        for _ in 0..200 {
            let p = Vec3::new(rng.random_range(-20.0..40.0), rng.random_range(-20.0..20.0), rng.random_range(-5.0..70.0));
            // Oracle: dense sampling of every segment.
            let mut best = (f64::INFINITY, 0usize, 0.0);
            for (bi, b) in tree.branches.iter().enumerate() {
                let cum = cumulative_arclength(&b.points);
                for k in 0..b.points.len() - 1 {
                    for j in 0..=200 {
                        let t = j as f64 / 200.0;
                        let q = b.points[k] + (b.points[k + 1] - b.points[k]) * t;
                        let d = (p - q).norm();
                        if d < best.0 {
                            best = (d, bi, cum[k] + (cum[k + 1] - cum[k]) * t);
                        }
                    }
                }
            }
            let q = idx.nearest(&p);
            assert!(q.distance <= best.0 + 1e-12);
            assert!(best.0 - q.distance < 0.02);
            if (q.distance - best.0).abs() < 1e-3 && q.branch == best.1 {
                assert!((q.arclength - best.2).abs() < 0.1);
            }
        }
    }

    #[test]
    fn lumen_pose_matches_exhaustive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tree = crate::vessel::generate_aortic_arch(3, &crate::vessel::ArchRanges::default()).unwrap();
        let idx = CenterlineIndex::new(&tree);
        let (lo, hi) = tree.bounding_box();
        for _ in 0..2000 {
            let p = Vec3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            );
            let a = idx.lumen_pose(&p);
            let b = idx.lumen_pose_exhaustive(&p);
            assert!(((a.distance - a.radius) - (b.distance - b.radius)).abs() < 1e-12);
        }
    }
}
