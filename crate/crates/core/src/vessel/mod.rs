//! Vessel-tree geometry: centerline branches with lumen radii, an optional
//! surface mesh and the device insertion pose.

mod arch;
mod centerline;
mod graph;
pub mod mesh;
mod phantom;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

pub use arch::{generate_aortic_arch, ArchParameters, ArchRanges, Range, ARCH_BRANCHES};
pub use arch::{
    AORTA, BRACHIOCEPHALIC, LEFT_CAROTID, LEFT_SUBCLAVIAN, LEFT_VERTEBRAL, RIGHT_CAROTID, RIGHT_SUBCLAVIAN, RIGHT_VERTEBRAL,
};
pub use centerline::{nearest_centerline_point, resample_centerline, CenterlineIndex, CenterlinePose};
pub use graph::{path_length, DistanceField};
pub use mesh::{load_mesh, MeshFormat, TriMesh};
pub use phantom::{dual_device_anatomy, dual_device_parameters, y_phantom};

/// Default centerline resampling spacing in mm.
pub const DEFAULT_SPACING: f64 = 2.0;

/// Where a child branch's first point attaches to its parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub branch: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub points: Vec<Vec3>,
    pub radii: Vec<f64>,
    #[serde(default)]
    pub parent: Option<Attachment>,
}

impl Branch {
    pub fn new(name: impl Into<String>, points: Vec<Vec3>, radii: Vec<f64>) -> Self {
        Branch {
            name: name.into(),
            points,
            radii,
            parent: None,
        }
    }

    pub fn with_parent(mut self, parent: &str, index: usize) -> Self {
        self.parent = Some(Attachment {
            branch: parent.to_string(),
            index,
        });
        self
    }

    pub fn length(&self) -> f64 {
        crate::geom::polyline_length(&self.points)
    }

    fn check(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid(format!("branch {} has fewer than 2 points", self.name)));
        }
        if self.radii.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "branch {} has {} radii for {} points",
                self.name,
                self.radii.len(),
                self.points.len()
            )));
        }
        for (k, p) in self.points.iter().enumerate() {
            if !crate::geom::is_finite(p) {
                return Err(Error::invalid(format!("branch {} point {k} is not finite", self.name)));
            }
        }
        for (k, w) in self.points.windows(2).enumerate() {
            if (w[1] - w[0]).norm() <= 0.0 {
                return Err(Error::invalid(format!(
                    "branch {} has zero spacing between points {k} and {}",
                    self.name,
                    k + 1
                )));
            }
        }
        if let Some(k) = self.radii.iter().position(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid(format!("branch {} radius {k} is not positive", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertionPoint {
    pub position: Vec3,
    pub direction: Vec3,
}

/// Navigation target on a branch centerline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub position: Vec3,
    pub branch: String,
    pub arclength: f64,
    pub threshold: f64,
}

pub const DEFAULT_TARGET_THRESHOLD: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselTree {
    pub name: String,
    pub branches: Vec<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<TriMesh>,
    pub insertion: InsertionPoint,
}

impl VesselTree {
    /// Builds and validates a tree.
    pub fn new(
        name: impl Into<String>,
        branches: Vec<Branch>,
        insertion: InsertionPoint,
        mesh: Option<TriMesh>,
    ) -> Result<Self> {
        let tree = VesselTree {
            name: name.into(),
            branches,
            mesh,
            insertion,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn branch_index(&self, name: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.name == name)
    }

    pub fn branch(&self, name: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.name == name)
    }

    pub fn root(&self) -> usize {
        self.branches
            .iter()
            .position(|b| b.parent.is_none())
            .expect("validated tree has a root")
    }

    /// Parent branch index for every branch (`None` for the root).
    pub fn parent_indices(&self) -> Vec<Option<(usize, usize)>> {
        self.branches
            .iter()
            .map(|b| {
                b.parent
                    .as_ref()
                    .and_then(|a| self.branch_index(&a.branch).map(|p| (p, a.index)))
            })
            .collect()
    }

    /// Indices of the branches on the root-to-`branch` chain, root first.
    pub fn lineage(&self, branch: usize) -> Vec<usize> {
        let parents = self.parent_indices();
        let mut chain = vec![branch];
        let mut cur = branch;
        while let Some((p, _)) = parents[cur] {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    /// Checks every structural invariant of the tree.
    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::invalid("vessel tree has no branches"));
        }
        for b in &self.branches {
            b.check()?;
        }
        for (i, a) in self.branches.iter().enumerate() {
            if self.branches[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::invalid(format!("duplicate branch name {}", a.name)));
            }
        }
        let roots = self.branches.iter().filter(|b| b.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::invalid(format!("expected exactly one root branch, found {roots}")));
        }
        for b in &self.branches {
            if let Some(att) = &b.parent {
                let parent = self.branch(&att.branch).ok_or_else(|| {
                    Error::invalid(format!("branch {} attaches to unknown branch {}", b.name, att.branch))
                })?;
                if att.index >= parent.points.len() {
                    return Err(Error::invalid(format!(
                        "branch {} attaches at index {} beyond parent {} ({} points)",
                        b.name,
                        att.index,
                        parent.name,
                        parent.points.len()
                    )));
                }
                let gap = (parent.points[att.index] - b.points[0]).norm();
                if gap > 1e-6 {
                    return Err(Error::invalid(format!(
                        "branch {} starts {gap} mm away from its attachment point",
                        b.name
                    )));
                }
            }
        }
        // Every branch must reach the root without revisiting a branch.
        let parents = self.parent_indices();
        for start in 0..self.branches.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some((p, _)) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > self.branches.len() {
                    return Err(Error::invalid("branch graph contains a cycle"));
                }
            }
        }
        let dir_norm = self.insertion.direction.norm();
        if (dir_norm - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("insertion direction has norm {dir_norm}")));
        }
        let root = &self.branches[self.root()];
        if (self.insertion.position - root.points[0]).norm() > root.radii[0] {
            return Err(Error::invalid(
                "insertion point lies outside the root branch's first lumen cross-section",
            ));
        }
        if let Some(mesh) = &self.mesh {
            mesh.validate()?;
        }
        Ok(())
    }

    /// Bounding box of all centerline points, inflated by the local radius.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for b in &self.branches {
            for (p, r) in b.points.iter().zip(&b.radii) {
                lo = lo.inf(&(p - Vec3::repeat(*r)));
                hi = hi.sup(&(p + Vec3::repeat(*r)));
            }
        }
        (lo, hi)
    }

    /// Branches with nothing attached at their last point.
    pub fn terminal_branches(&self) -> Vec<usize> {
        (0..self.branches.len())
            .filter(|&i| {
                let last = self.branches[i].points.len() - 1;
                !self.branches.iter().any(|b| {
                    b.parent
                        .as_ref()
                        .is_some_and(|a| a.branch == self.branches[i].name && a.index == last)
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: VesselTree = serde_json::from_str(text)?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Samples a target uniformly over the resampled centerline points of the
/// allowed branches.
pub fn sample_target(
    tree: &VesselTree,
    allowed_branches: &[String],
    rng_seed: u64,
    spacing: f64,
    threshold: f64,
) -> Result<Target> {
    use rand::{Rng, SeedableRng};

    if allowed_branches.is_empty() {
        return Err(Error::invalid("no target branches given"));
    }
    let mut candidates: Vec<(String, f64, Vec3)> = Vec::new();
    for name in allowed_branches {
        let branch = tree
            .branch(name)
            .ok_or_else(|| Error::invalid(format!("unknown target branch {name}")))?;
        let resampled = resample_centerline(branch, spacing)?;
        let cum = crate::geom::cumulative_arclength(&resampled.points);
        // A child's first point sits on the parent centerline, not in the child.
        let skip = usize::from(branch.parent.is_some());
        for (p, s) in resampled.points.iter().zip(cum).skip(skip) {
            candidates.push((name.clone(), s, *p));
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let (branch, arclength, position) = candidates.swap_remove(rng.random_range(0..candidates.len()));
    Ok(Target {
        position,
        branch,
        arclength,
        threshold,
    })
}
