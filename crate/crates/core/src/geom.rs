//! Small vector helpers shared by the geometry, physics and imaging modules.

use nalgebra::{Rotation3, Unit, Vector3};

pub type Vec3 = Vector3<f64>;

/// Total length of a polyline.
pub fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Cumulative arclength at every vertex, starting at 0.
pub fn cumulative_arclength(points: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in points.windows(2) {
        acc += (w[1] - w[0]).norm();
        out.push(acc);
    }
    out
}

/// Point at arclength `s` along a polyline (clamped to its ends).
pub fn point_at_arclength(points: &[Vec3], cumulative: &[f64], s: f64) -> Vec3 {
    let last = points.len() - 1;
    if s <= 0.0 || last == 0 {
        return points[0];
    }
    if s >= cumulative[last] {
        return points[last];
    }
    let k = match cumulative.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(k) => return points[k],
        Err(k) => k - 1,
    };
    let seg = cumulative[k + 1] - cumulative[k];
    let t = if seg > 0.0 { (s - cumulative[k]) / seg } else { 0.0 };
    points[k] + (points[k + 1] - points[k]) * t
}

/// Closest point on segment `[a, b]` to `p`; returns the segment parameter in `[0, 1]`.
#[inline]
pub fn project_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

/// Some unit vector perpendicular to `v` (deterministic).
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.z.abs() < 0.9 {
        Vec3::z()
    } else {
        Vec3::x()
    };
    let p = helper - v * v.dot(&helper) / v.norm_squared();
    p.normalize()
}

/// Rotation taking unit vector `from` onto unit vector `to` with the smallest angle.
pub fn minimal_rotation(from: &Vec3, to: &Vec3) -> Rotation3<f64> {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to).clamp(-1.0, 1.0);
    if s < 1e-15 {
        if c > 0.0 {
            return Rotation3::identity();
        }
        let perp = any_perpendicular(from);
        return Rotation3::from_axis_angle(&Unit::new_unchecked(perp), std::f64::consts::PI);
    }
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis / s), s.atan2(c))
}

/// Parallel-transport `v` from tangent `t0` to tangent `t1`.
#[inline]
pub fn transport(v: &Vec3, t0: &Vec3, t1: &Vec3) -> Vec3 {
    let axis = t0.cross(t1);
    let s2 = axis.norm_squared();
    if s2 < 1e-30 {
        return *v;
    }
    let c = t0.dot(t1);
    // Rodrigues with sin/cos taken directly from the cross and dot products.
    v * c + axis.cross(v) + axis * (axis.dot(v) * (1.0 - c) / s2)
}

/// Unsigned angle between two vectors in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.cross(b).norm().atan2(a.dot(b))
}

pub fn is_finite(v: &Vec3) -> bool {
    v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
}

/// SplitMix64 step; used to derive independent sub-seeds from one seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
