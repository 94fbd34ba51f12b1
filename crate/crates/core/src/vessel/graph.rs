use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{CenterlineIndex, CenterlinePose, VesselTree};
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Centerline graph: one node per centerline point, edges between
/// consecutive points and from each child's first point to its attachment.
#[derive(Clone, Debug)]
struct Graph {
    offsets: Vec<usize>,
    positions: Vec<Vec3>,
    adjacency: Vec<Vec<(usize, f64)>>,
    segment_lengths: Vec<Vec<f64>>,
}

impl Graph {
    fn new(tree: &VesselTree) -> Self {
        let mut offsets = Vec::with_capacity(tree.branches.len());
        let mut total = 0;
        for b in &tree.branches {
            offsets.push(total);
            total += b.points.len();
        }
        let mut adjacency = vec![Vec::new(); total];
        let positions: Vec<Vec3> = tree.branches.iter().flat_map(|b| b.points.iter().copied()).collect();
        let mut segment_lengths = Vec::with_capacity(tree.branches.len());
        for (bi, b) in tree.branches.iter().enumerate() {
            let mut lens = Vec::with_capacity(b.points.len() - 1);
            for k in 0..b.points.len() - 1 {
                let w = (b.points[k + 1] - b.points[k]).norm();
                let (u, v) = (offsets[bi] + k, offsets[bi] + k + 1);
                adjacency[u].push((v, w));
                adjacency[v].push((u, w));
                lens.push(w);
            }
            segment_lengths.push(lens);
        }
        for (bi, parent) in tree.parent_indices().into_iter().enumerate() {
            if let Some((p, idx)) = parent {
                let w = (tree.branches[bi].points[0] - tree.branches[p].points[idx]).norm();
                let (u, v) = (offsets[bi], offsets[p] + idx);
                adjacency[u].push((v, w));
                adjacency[v].push((u, w));
            }
        }
        Graph {
            offsets,
            positions,
            adjacency,
            segment_lengths,
        }
    }

    /// The two graph nodes bounding a pose's segment, with the distance to each.
    fn anchors(&self, pose: &CenterlinePose) -> [(usize, f64); 2] {
        let len = self.segment_lengths[pose.branch][pose.segment];
        let u = self.offsets[pose.branch] + pose.segment;
        [(u, pose.t * len), (u + 1, (1.0 - pose.t) * len)]
    }

    /// Distances from the sources and each node's predecessor on a shortest
    /// path (`None` for sources and unreachable nodes).
    fn dijkstra(&self, sources: &[(usize, f64)]) -> (Vec<f64>, Vec<Option<usize>>) {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut pred = vec![None; self.adjacency.len()];
        let mut heap = BinaryHeap::new();
        for &(u, d) in sources {
            if d < dist[u] {
                dist[u] = d;
                heap.push(State { cost: d, node: u });
            }
        }
        while let Some(State { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(v, w) in &self.adjacency[node] {
                let c = cost + w;
                if c < dist[v] {
                    dist[v] = c;
                    pred[v] = Some(node);
                    heap.push(State { cost: c, node: v });
                }
            }
        }
        (dist, pred)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost; ties broken by node for a total, deterministic order.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Centerline distances from one fixed pose to every graph node.
///
/// Built once per episode for the target; each query is then O(1).
#[derive(Clone, Debug)]
pub struct DistanceField {
    graph: Graph,
    origin: CenterlinePose,
    node_distance: Vec<f64>,
    predecessor: Vec<Option<usize>>,
}

impl DistanceField {
    pub fn new(tree: &VesselTree, origin: CenterlinePose) -> Self {
        let graph = Graph::new(tree);
        let (node_distance, predecessor) = graph.dijkstra(&graph.anchors(&origin));
        DistanceField {
            graph,
            origin,
            node_distance,
            predecessor,
        }
    }

    /// Along-centerline distance from the origin pose to `pose`.
    pub fn distance_to(&self, pose: &CenterlinePose) -> Result<f64> {
        let mut best = f64::INFINITY;
        if pose.branch == self.origin.branch && pose.segment == self.origin.segment {
            best = (pose.arclength - self.origin.arclength).abs();
        }
        for (node, d) in self.graph.anchors(pose) {
            best = best.min(self.node_distance[node] + d);
        }
        if best.is_finite() {
            Ok(best)
        } else {
            Err(Error::Internal("centerline poses are not connected".into()))
        }
    }

    /// Point reached by walking `lookahead` mm from `pose` along the shortest
    /// centerline path towards the origin (the origin itself if closer).
    pub fn toward_origin(&self, pose: &CenterlinePose, lookahead: f64) -> Vec3 {
        if pose.branch == self.origin.branch && pose.segment == self.origin.segment {
            let gap = self.origin.point - pose.point;
            let len = gap.norm();
            return if len <= lookahead { self.origin.point } else { pose.point + gap * (lookahead / len) };
        }
        let [a, b] = self.graph.anchors(pose);
        let (mut node, first) = if self.node_distance[a.0] + a.1 <= self.node_distance[b.0] + b.1 {
            a
        } else {
            b
        };
        let mut here = pose.point;
        let mut left = lookahead;
        let mut step = first;
        loop {
            let next = self.graph.positions[node];
            if step >= left {
                return here + (next - here) * (left / step.max(1e-12));
            }
            left -= step;
            here = next;
            match self.predecessor[node] {
                Some(v) => {
                    step = (self.graph.positions[v] - here).norm();
                    node = v;
                }
                // An anchor of the origin's segment: finish on the origin point.
                None => {
                    let gap = self.origin.point - here;
                    let len = gap.norm();
                    return if len <= left { self.origin.point } else { here + gap * (left / len) };
                }
            }
        }
    }

    /// Distance from the origin to centerline point `index` of `branch`.
    pub fn node_distance(&self, branch: usize, index: usize) -> f64 {
        self.node_distance[self.graph.offsets[branch] + index]
    }
}

/// Shortest along-centerline distance between the projections of `a` and `b`.
pub fn path_length(tree: &VesselTree, a: &Vec3, b: &Vec3) -> Result<f64> {
    let index = CenterlineIndex::new(tree);
    let pa = index.nearest(a);
    let pb = index.nearest(b);
    DistanceField::new(tree, pa).distance_to(&pb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vessel::{Branch, InsertionPoint};
    use rand::{Rng, SeedableRng};

    fn y_tree() -> VesselTree {
        let root = Branch::new(
            "root",
            (0..=10).map(|k| Vec3::new(0.0, 0.0, 5.0 * k as f64)).collect(),
            vec![4.0; 11],
        );
        let left = Branch::new(
            "left",
            (0..=8).map(|k| Vec3::new(3.0 * k as f64, 0.0, 50.0 + 4.0 * k as f64)).collect(),
            vec![3.0; 9],
        )
        .with_parent("root", 10);
        let right = Branch::new(
            "right",
            (0..=8).map(|k| Vec3::new(-3.0 * k as f64, 0.0, 50.0 + 4.0 * k as f64)).collect(),
            vec![3.0; 9],
        )
        .with_parent("root", 10);
        VesselTree::new(
            "y",
            vec![root, left, right],
            InsertionPoint {
                position: Vec3::zeros(),
                direction: Vec3::z(),
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn same_branch_difference() {
        let tree = y_tree();
        let d = path_length(&tree, &Vec3::new(0.0, 0.0, 10.0), &Vec3::new(0.0, 1.0, 45.0)).unwrap();
        assert!((d - 35.0).abs() < 1e-9);
        assert_eq!(path_length(&tree, &Vec3::new(0.3, 0.0, 12.0), &Vec3::new(0.3, 0.0, 12.0)).unwrap(), 0.0);
    }

    #[test]
    fn across_children_goes_through_junction() {
        let tree = y_tree();
        // arclength 15 on left, 25 on right: both 5 mm segments long (3-4-5)
        let a = Vec3::new(9.0, 0.0, 62.0);
        let b = Vec3::new(-15.0, 0.0, 70.0);
        let d = path_length(&tree, &a, &b).unwrap();
        assert!((d - 40.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn lookahead_walks_towards_origin() {
        let tree = y_tree();
        let index = CenterlineIndex::new(&tree);
        let target = index.nearest(&Vec3::new(15.0, 0.0, 70.0));
        let field = DistanceField::new(&tree, target);
        let p = field.toward_origin(&index.nearest(&Vec3::new(0.0, 0.0, 30.0)), 10.0);
        assert!((p - Vec3::new(0.0, 0.0, 40.0)).norm() < 1e-9);
        // Crosses the junction into the left child.
        let p = field.toward_origin(&index.nearest(&Vec3::new(0.0, 0.0, 45.0)), 10.0);
        assert!((p - Vec3::new(3.0, 0.0, 54.0)).norm() < 1e-9, "{p:?}");
        let p = field.toward_origin(&index.nearest(&Vec3::new(12.0, 0.0, 66.0)), 50.0);
        assert!((p - Vec3::new(15.0, 0.0, 70.0)).norm() < 1e-9);
    }

    #[test]
    fn symmetric_on_random_points() {
        let tree = y_tree();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = Vec3::new(rng.random_range(-20.0..20.0), 0.0, rng.random_range(0.0..80.0));
            let b = Vec3::new(rng.random_range(-20.0..20.0), 0.0, rng.random_range(0.0..80.0));
            let ab = path_length(&tree, &a, &b).unwrap();
            let ba = path_length(&tree, &b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-9);
        }
    }
}
