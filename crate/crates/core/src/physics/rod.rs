//! Numerical kernels of the rod solver. Nodes are tip first; the last node
//! is the pinned base and `ghost` is a fixed point one spacing behind it
//! along the insertion direction, which clamps the base tangent.

use crate::geom::{any_perpendicular, transport, Vec3};

/// Discrete bending energy `Σ B ds ‖κ − κ⁰‖²` with `κ` the second difference
/// over `ds²` at every node that has two neighbours (the ghost counts).
pub fn bending_energy(nodes: &[Vec3], ghost: &Vec3, rest: &[Vec3], rigidity: &[f64], ds: f64) -> f64 {
    let n = nodes.len();
    let mut e = 0.0;
    for i in 1..n {
        let next = if i + 1 < n { nodes[i + 1] } else { *ghost };
        let k = (nodes[i - 1] - nodes[i] * 2.0 + next) / (ds * ds);
        e += rigidity[i] * ds * (k - rest[i]).norm_squared();
    }
    e
}

/// Base material direction after `twist` about the insertion axis.
pub(crate) fn base_normal(direction: &Vec3, twist: f64) -> Vec3 {
    let m = any_perpendicular(direction);
    let b = direction.cross(&m);
    m * twist.cos() + b * twist.sin()
}

/// World-frame rest curvature per node from material components, using
/// frames parallel-transported from the base along the current polyline.
pub(crate) fn world_curvature(
    nodes: &[Vec3],
    ghost: &Vec3,
    direction: &Vec3,
    twist: f64,
    material: &[[f64; 2]],
    out: &mut Vec<Vec3>,
) {
    let n = nodes.len();
    out.clear();
    out.resize(n, Vec3::zeros());
    if n < 2 {
        return;
    }
    // Frame on the base-side edge of node i, walking from the base.
    let mut t_prev = *direction;
    let mut m_prev = base_normal(direction, twist);
    let _ = ghost;
    for i in (1..n).rev() {
        let e = nodes[i - 1] - nodes[i];
        let len = e.norm();
        let t = if len > 0.0 { e / len } else { t_prev };
        // Node i sits between its base-side edge (t_prev) and tip-side edge (t).
        let mid = t_prev + t;
        let mid_norm = mid.norm();
        let t_mid = if mid_norm > 1e-12 { mid / mid_norm } else { t };
        let m_mid = transport(&m_prev, &t_prev, &t_mid);
        let [k1, k2] = material[i];
        out[i] = m_mid * k1 + t_mid.cross(&m_mid) * k2;
        m_prev = transport(&m_prev, &t_prev, &t);
        t_prev = t;
    }
}

/// Restores every segment to length `ds`, walking from the base to the tip.
pub(crate) fn follow_the_leader(nodes: &mut [Vec3], ds: f64) {
    let n = nodes.len();
    for i in (0..n.saturating_sub(1)).rev() {
        let d = nodes[i] - nodes[i + 1];
        let len = d.norm();
        if len > 1e-12 {
            nodes[i] = nodes[i + 1] + d * (ds / len);
        }
    }
}

/// Symmetric positive-definite pentadiagonal system, factorised once.
pub(crate) struct Pentadiagonal {
    l0: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl Pentadiagonal {
    /// `a0` diagonal, `a1[i] = A[i][i+1]`, `a2[i] = A[i][i+2]`.
    pub(crate) fn factor(a0: &[f64], a1: &[f64], a2: &[f64]) -> Self {
        let m = a0.len();
        let mut l0 = vec![0.0; m];
        let mut l1 = vec![0.0; m];
        let mut l2 = vec![0.0; m];
        for i in 0..m {
            if i >= 2 {
                l2[i] = a2[i - 2] / l0[i - 2];
            }
            if i >= 1 {
                let prev = if i >= 2 { l2[i] * l1[i - 1] } else { 0.0 };
                l1[i] = (a1[i - 1] - prev) / l0[i - 1];
            }
            l0[i] = (a0[i] - l1[i] * l1[i] - l2[i] * l2[i]).sqrt();
        }
        Pentadiagonal { l0, l1, l2 }
    }

    pub(crate) fn solve(&self, b: &mut [Vec3]) {
        let m = b.len();
        for i in 0..m {
            let mut v = b[i];
            if i >= 1 {
                v -= b[i - 1] * self.l1[i];
            }
            if i >= 2 {
                v -= b[i - 2] * self.l2[i];
            }
            b[i] = v / self.l0[i];
        }
        for i in (0..m).rev() {
            let mut v = b[i];
            if i + 1 < m {
                v -= b[i + 1] * self.l1[i + 1];
            }
            if i + 2 < m {
                v -= b[i + 2] * self.l2[i + 2];
            }
            b[i] = v / self.l0[i];
        }
    }
}

/// Stencil weight of the curvature term at node i: `2 B ds / ds⁴`.
#[inline]
fn weight(rigidity: f64, ds: f64) -> f64 {
    2.0 * rigidity / (ds * ds * ds)
}

/// One proximal bending step: solves `(H + μI) δ = −∇E` for the free nodes
/// (all but the pinned base) and applies it, scaled so no node moves more
/// than `max_move`. Returns the largest applied node displacement.
pub(crate) fn bending_step(
    nodes: &mut [Vec3],
    ghost: &Vec3,
    rest: &[Vec3],
    rigidity: &[f64],
    ds: f64,
    damping: f64,
    max_move: f64,
    scratch: &mut Vec<Vec3>,
) -> f64 {
    let n = nodes.len();
    if n < 2 {
        return 0.0;
    }
    let m = n - 1;
    let mut a0 = vec![0.0; m];
    let mut a1 = vec![0.0; m];
    let mut a2 = vec![0.0; m];
    scratch.clear();
    scratch.resize(m, Vec3::zeros());
    let grad = scratch;
    let ds2 = ds * ds;
    let mut wmax: f64 = 0.0;
    for i in 1..n {
        let w = weight(rigidity[i], ds);
        wmax = wmax.max(w);
        let next = if i + 1 < n { nodes[i + 1] } else { *ghost };
        let r = nodes[i - 1] - nodes[i] * 2.0 + next - rest[i] * ds2;
        // Stencil (i-1, i, i+1) with coefficients (1, -2, 1); only indices < m are free.
        let idx = [i - 1, i, i + 1];
        let c = [1.0, -2.0, 1.0];
        for a in 0..3 {
            if idx[a] >= m {
                continue;
            }
            grad[idx[a]] += r * (w * c[a]);
            for b in a..3 {
                if idx[b] >= m {
                    continue;
                }
                let v = w * c[a] * c[b];
                match b - a {
                    0 => a0[idx[a]] += v,
                    1 => a1[idx[a]] += v,
                    _ => a2[idx[a]] += v,
                }
            }
        }
    }
    let mu = damping * wmax;
    for d in a0.iter_mut() {
        *d += mu;
    }
    let fac = Pentadiagonal::factor(&a0, &a1, &a2);
    for g in grad.iter_mut() {
        *g = -*g;
    }
    fac.solve(grad);
    let largest = grad.iter().map(|d| d.norm()).fold(0.0, f64::max);
    let scale = if largest > max_move { max_move / largest } else { 1.0 };
    for (x, d) in nodes.iter_mut().zip(grad.iter()) {
        *x += d * scale;
    }
    largest * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pentadiagonal_matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = 9;
        let a1: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a2: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a0: Vec<f64> = (0..m).map(|_| 6.0 + rng.random::<f64>()).collect();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            dense[(i, i)] = a0[i];
            if i + 1 < m {
                dense[(i, i + 1)] = a1[i];
                dense[(i + 1, i)] = a1[i];
            }
            if i + 2 < m {
                dense[(i, i + 2)] = a2[i];
                dense[(i + 2, i)] = a2[i];
            }
        }
        let b: Vec<Vec3> = (0..m).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let mut x = b.clone();
        Pentadiagonal::factor(&a0, &a1, &a2).solve(&mut x);
        for c in 0..3 {
            let rhs = nalgebra::DVector::from_iterator(m, b.iter().map(|v| v[c]));
            let sol = dense.clone().lu().solve(&rhs).unwrap();
            for i in 0..m {
                assert!((sol[i] - x[i][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bending_step_never_increases_energy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let ds = 2.0;
        for _ in 0..50 {
            let n = rng.random_range(3..30);
            let mut nodes: Vec<Vec3> = (0..n)
                .map(|i| {
                    Vec3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        ds * (n - 1 - i) as f64,
                    )
                })
                .collect();
            nodes[n - 1] = Vec3::zeros();
            let ghost = Vec3::new(0.0, 0.0, -ds);
            let rest: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random_range(-0.1..0.1), 0.0, 0.0)).collect();
            let rig = vec![1.0; n];
            let mut scratch = Vec::new();
            for _ in 0..5 {
                let before = bending_energy(&nodes, &ghost, &rest, &rig, ds);
                bending_step(&mut nodes, &ghost, &rest, &rig, ds, 0.02, 1.0, &mut scratch);
                let after = bending_energy(&nodes, &ghost, &rest, &rig, ds);
                assert!(after <= before + 1e-12, "{after} > {before}");
                assert_eq!(nodes[n - 1], Vec3::zeros());
            }
        }
    }

    #[test]
    fn follow_the_leader_restores_lengths() {
        let mut nodes = vec![Vec3::new(1.0, 3.0, 0.0), Vec3::new(0.5, 1.0, 0.0), Vec3::zeros()];
        follow_the_leader(&mut nodes, 2.0);
        assert!(((nodes[0] - nodes[1]).norm() - 2.0).abs() < 1e-12);
        assert!(((nodes[1] - nodes[2]).norm() - 2.0).abs() < 1e-12);
    }
}
