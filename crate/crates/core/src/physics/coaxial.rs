//! Coupling of a hollow outer device with a device running inside it.
//!
//! Both rods share the insertion point, so nodes are matched by arclength
//! from the base: node `i` of a rod inserted `L` sits at `L - i·ds`.

use super::RodState;
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Rest curvatures after blending over the overlap, per node of each rod.
#[derive(Clone, Debug, PartialEq)]
pub struct CoaxialBlend {
    pub outer: Vec<Vec3>,
    pub inner: Vec<Vec3>,
}

/// Radial clearance between the inner device and the outer device's lumen.
pub fn clearance(outer: &RodState, inner: &RodState) -> Result<f64> {
    if !outer.device.is_hollow {
        return Err(Error::invalid(format!("outer device {} is not hollow", outer.device.name)));
    }
    if inner.device.outer_diameter >= outer.device.inner_diameter {
        return Err(Error::invalid(format!(
            "inner device {} ({} mm) does not fit the {} mm lumen of {}",
            inner.device.name, inner.device.outer_diameter, outer.device.inner_diameter, outer.device.name
        )));
    }
    Ok((outer.device.inner_diameter - inner.device.outer_diameter) / 2.0)
}

/// Fractional node index of arclength-from-base `sigma` on a rod.
#[inline]
fn index_at(state: &RodState, sigma: f64, ds: f64) -> f64 {
    ((state.inserted_length - sigma) / ds).clamp(0.0, (state.nodes.len() - 1) as f64)
}

fn lerp_at(values: &[Vec3], u: f64) -> Vec3 {
    let k = u.floor() as usize;
    if k + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let f = u - k as f64;
    values[k] * (1.0 - f) + values[k + 1] * f
}

/// Blends rest curvatures over the overlap,
/// `κ = (B_outer κ_outer + B_inner κ_inner) / (B_outer + B_inner)`; nodes
/// outside the overlap keep their own curvature.
pub fn couple_coaxial(
    outer: &RodState,
    inner: &RodState,
    outer_rest: &[Vec3],
    inner_rest: &[Vec3],
    ds: f64,
) -> Result<CoaxialBlend> {
    clearance(outer, inner)?;
    let overlap = outer.inserted_length.min(inner.inserted_length);
    let mut out_blend = outer_rest.to_vec();
    let mut in_blend = inner_rest.to_vec();
    if overlap <= 0.0 || outer.nodes.len() < 2 || inner.nodes.len() < 2 {
        return Ok(CoaxialBlend {
            outer: out_blend,
            inner: in_blend,
        });
    }
    for (i, k) in in_blend.iter_mut().enumerate() {
        let sigma = inner.inserted_length - i as f64 * ds;
        if sigma > outer.inserted_length + 1e-9 {
            continue;
        }
        let u = index_at(outer, sigma, ds);
        let bo = outer.device.rigidity_at(u * ds);
        let bi = inner.device.rigidity_at(i as f64 * ds);
        *k = (lerp_at(outer_rest, u) * bo + inner_rest[i] * bi) / (bo + bi);
    }
    for (j, k) in out_blend.iter_mut().enumerate() {
        let sigma = outer.inserted_length - j as f64 * ds;
        if sigma > inner.inserted_length + 1e-9 {
            continue;
        }
        let u = index_at(inner, sigma, ds);
        let bo = outer.device.rigidity_at(j as f64 * ds);
        let bi = inner.device.rigidity_at(u * ds);
        *k = (outer_rest[j] * bo + lerp_at(inner_rest, u) * bi) / (bo + bi);
    }
    Ok(CoaxialBlend {
        outer: out_blend,
        inner: in_blend,
    })
}

/// Pulls inner nodes inside the overlap to within `clearance` of the outer
/// rod's centerline at the same arclength from the base.
pub(crate) fn constrain_inner(inner: &mut RodState, outer: &RodState, clearance: f64, ds: f64) {
    if outer.nodes.len() < 2 {
        return;
    }
    let l_in = inner.inserted_length;
    for (i, x) in inner.nodes.iter_mut().enumerate() {
        let sigma = l_in - i as f64 * ds;
        if sigma > outer.inserted_length {
            continue;
        }
        let c = lerp_at(&outer.nodes, index_at(outer, sigma, ds));
        let d = *x - c;
        let dist = d.norm();
        if dist > clearance {
            *x = c + d * (clearance / dist);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{catheter, j_shaped, J_TIP_ANGLE, J_TIP_RADIUS};

    fn rod(device: crate::device::DeviceSpec, length: f64) -> RodState {
        let n = RodState::node_count(length, 2.0);
        RodState {
            device,
            inserted_length: length,
            base_twist: 0.0,
            nodes: (0..n).map(|i| Vec3::new(0.0, 0.0, length - 2.0 * i as f64)).collect(),
        }
    }

    fn rest(state: &RodState) -> Vec<Vec3> {
        (0..state.nodes.len())
            .map(|i| {
                let [a, b] = state.device.curvature_at(i as f64 * 2.0);
                Vec3::new(a, b, 0.0)
            })
            .collect()
    }

    #[test]
    fn retracted_inner_leaves_outer_alone() {
        let outer = rod(catheter(), 40.0);
        let inner = rod(j_shaped(J_TIP_RADIUS, J_TIP_ANGLE), 0.0);
        let (ro, ri) = (rest(&outer), rest(&inner));
        let b = couple_coaxial(&outer, &inner, &ro, &ri, 2.0).unwrap();
        assert_eq!(b.outer, ro);
    }

    #[test]
    fn equal_rigidity_averages() {
        let mut outer = rod(catheter(), 40.0);
        outer.device.body_rigidity = 1.0;
        let inner = rod(j_shaped(J_TIP_RADIUS, J_TIP_ANGLE), 40.0);
        let (ro, ri) = (rest(&outer), rest(&inner));
        let b = couple_coaxial(&outer, &inner, &ro, &ri, 2.0).unwrap();
        assert!((b.inner[0].norm() - 0.5 / J_TIP_RADIUS).abs() < 1e-12);
        assert!((b.outer[0].norm() - 0.5 / J_TIP_RADIUS).abs() < 1e-12);
    }

    #[test]
    fn stiff_outer_dominates() {
        let mut outer = rod(catheter(), 40.0);
        outer.device.body_rigidity = 1000.0;
        let inner = rod(j_shaped(J_TIP_RADIUS, J_TIP_ANGLE), 40.0);
        let (ro, ri) = (rest(&outer), rest(&inner));
        let b = couple_coaxial(&outer, &inner, &ro, &ri, 2.0).unwrap();
        // Outer rest curvature is zero; the blend must stay within 1% of κ_inner's scale.
        assert!(b.inner[0].norm() < 0.01 / J_TIP_RADIUS);
    }

    #[test]
    fn oversized_inner_rejected() {
        let outer = rod(catheter(), 10.0);
        let mut inner = rod(j_shaped(J_TIP_RADIUS, J_TIP_ANGLE), 10.0);
        inner.device.outer_diameter = 1.5;
        assert!(matches!(
            couple_coaxial(&outer, &inner, &rest(&outer), &rest(&inner), 2.0),
            Err(Error::InvalidInput(_))
        ));
    }
}
