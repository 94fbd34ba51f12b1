//! Device geometry: guidewires and catheters built from straight, arc and
//! helix segments, listed tip first.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

pub const GUIDEWIRE_DIAMETER: f64 = 0.89;
pub const GUIDEWIRE_LENGTH: f64 = 450.0;
pub const CATHETER_DIAMETER: f64 = 1.7;
pub const CATHETER_INNER_DIAMETER: f64 = 1.2;
pub const CATHETER_LENGTH: f64 = 400.0;
pub const GUIDEWIRE_RIGIDITY: f64 = 1.0;
pub const CATHETER_RIGIDITY: f64 = 5.0;

pub const J_TIP_RADIUS: f64 = 12.1;
pub const J_TIP_ANGLE: f64 = 0.4 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentShape {
    Straight {
        length: f64,
    },
    /// Planar bend; `roll` turns the bending direction about the tangent.
    Arc {
        radius: f64,
        angle: f64,
        #[serde(default)]
        roll: f64,
    },
    /// `angle` is the total turn about the helix axis, `pitch` is mm per turn.
    Helix {
        radius: f64,
        pitch: f64,
        angle: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    #[serde(flatten)]
    pub shape: SegmentShape,
    /// Relative flexural rigidity.
    pub rigidity: f64,
}

impl SegmentSpec {
    pub fn arclength(&self) -> f64 {
        match self.shape {
            SegmentShape::Straight { length } => length,
            SegmentShape::Arc { radius, angle, .. } => radius * angle,
            SegmentShape::Helix { radius, pitch, angle } => {
                let c = pitch / (2.0 * PI);
                angle * (radius * radius + c * c).sqrt()
            }
        }
    }

    /// Curvature magnitude, torsion and the starting bend direction angle.
    fn curvature_params(&self) -> (f64, f64, f64) {
        match self.shape {
            SegmentShape::Straight { .. } => (0.0, 0.0, 0.0),
            SegmentShape::Arc { radius, roll, .. } => (1.0 / radius, 0.0, roll),
            SegmentShape::Helix { radius, pitch, .. } => {
                let c = pitch / (2.0 * PI);
                let d = radius * radius + c * c;
                (radius / d, c / d, 0.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    /// Shaped segments, tip first. Whatever length remains is a straight body.
    pub segments: Vec<SegmentSpec>,
    pub total_length: f64,
    pub outer_diameter: f64,
    /// Lumen diameter of hollow devices, 0 for wires.
    #[serde(default)]
    pub inner_diameter: f64,
    pub body_rigidity: f64,
    pub is_hollow: bool,
}

/// Rest geometry in the device frame: base at the origin, body along +x.
#[derive(Clone, Debug, PartialEq)]
pub struct RestCenterline {
    /// Tip first, spaced `ds` apart along the curve.
    pub points: Vec<Vec3>,
    /// Rest curvature vector per node (1/mm), device frame.
    pub curvature: Vec<Vec3>,
}

impl DeviceSpec {
    pub fn shaped_length(&self) -> f64 {
        self.segments.iter().map(SegmentSpec::arclength).sum()
    }

    /// Every invariant violation; empty when the spec is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.is_empty() {
            out.push("name: empty".to_string());
        }
        if !(self.outer_diameter > 0.0) || !self.outer_diameter.is_finite() {
            out.push(format!("outer_diameter: must be positive, got {}", self.outer_diameter));
        }
        if !(self.body_rigidity > 0.0) || !self.body_rigidity.is_finite() {
            out.push(format!("body_rigidity: must be positive, got {}", self.body_rigidity));
        }
        if !(self.total_length > 0.0) || !self.total_length.is_finite() {
            out.push(format!("total_length: must be positive, got {}", self.total_length));
        }
        if self.is_hollow {
            if !(self.inner_diameter > 0.0) || self.inner_diameter >= self.outer_diameter {
                out.push(format!(
                    "inner_diameter: hollow device needs 0 < inner < outer, got {}",
                    self.inner_diameter
                ));
            }
        } else if self.inner_diameter != 0.0 {
            out.push("inner_diameter: only hollow devices have a lumen".to_string());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.rigidity > 0.0) || !s.rigidity.is_finite() {
                out.push(format!("segments[{i}].rigidity: must be positive, got {}", s.rigidity));
            }
            let positive: &[(&str, f64)] = match &s.shape {
                SegmentShape::Straight { length } => &[("length", *length)],
                SegmentShape::Arc { radius, angle, .. } => &[("radius", *radius), ("angle", *angle)],
                SegmentShape::Helix { radius, pitch, angle } => {
                    &[("radius", *radius), ("pitch", *pitch), ("angle", *angle)]
                }
            };
            for (field, v) in positive {
                if !(*v > 0.0) || !v.is_finite() {
                    out.push(format!("segments[{i}].{field}: must be positive, got {v}"));
                }
            }
        }
        let shaped = self.shaped_length();
        if shaped > self.total_length {
            out.push(format!(
                "total_length: {} mm is shorter than the shaped segments ({shaped} mm)",
                self.total_length
            ));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("device {}: {}", self.name, v.join("; "))))
        }
    }

    /// Rigidity at distance `d` from the tip.
    pub fn rigidity_at(&self, d: f64) -> f64 {
        let mut s = 0.0;
        for seg in &self.segments {
            s += seg.arclength();
            if d < s {
                return seg.rigidity;
            }
        }
        self.body_rigidity
    }

    /// Rest curvature at distance `d` from the tip as components along the
    /// two normals of the base-transported (Bishop) frame.
    pub fn curvature_at(&self, d: f64) -> [f64; 2] {
        let mut start = 0.0;
        for seg in &self.segments {
            let len = seg.arclength();
            if d < start + len {
                let (k, tau, phi0) = seg.curvature_params();
                // The base end of the segment is where `phi0` applies.
                let from_base = start + len - d;
                let phi = phi0 + tau * from_base;
                return [k * phi.cos(), k * phi.sin()];
            }
            start += len;
        }
        [0.0, 0.0]
    }

    /// Samples the rest shape tip first at spacing `ds`.
    pub fn rest_centerline(&self, ds: f64) -> Result<RestCenterline> {
        if !(ds > 0.0) {
            return Err(Error::invalid(format!("ds must be positive, got {ds}")));
        }
        self.check()?;
        let n = (self.total_length / ds).floor() as usize + 1;
        // Integrate the Bishop frame from the base with small exact rotations.
        let substeps = 32;
        let h = ds / substeps as f64;
        let body = self.total_length - (n - 1) as f64 * ds;
        let mut p = Vec3::x() * body;
        let (mut t, mut m1, mut m2) = (Vec3::x(), Vec3::y(), Vec3::z());
        let mut base_first = vec![p];
        let mut curv = vec![self.curvature_world(self.total_length - body, &t, &m1, &m2)];
        for k in 1..n {
            for j in 0..substeps {
                let d_mid = self.total_length - body - (k - 1) as f64 * ds - (j as f64 + 0.5) * h;
                let [k1, k2] = self.curvature_at(d_mid.max(0.0));
                let kv = m1 * k1 + m2 * k2;
                let omega = t.cross(&kv) * h;
                let angle = omega.norm();
                let rot = if angle > 0.0 {
                    Rotation3::from_axis_angle(&Unit::new_normalize(omega), angle)
                } else {
                    Rotation3::identity()
                };
                let half = if angle > 0.0 {
                    Rotation3::from_axis_angle(&Unit::new_normalize(omega), angle * 0.5)
                } else {
                    Rotation3::identity()
                };
                p += half * t * h;
                t = rot * t;
                m1 = rot * m1;
                m2 = rot * m2;
            }
            base_first.push(p);
            let d = self.total_length - body - k as f64 * ds;
            curv.push(self.curvature_world(d.max(0.0), &t, &m1, &m2));
        }
        base_first.reverse();
        curv.reverse();
        Ok(RestCenterline {
            points: base_first,
            curvature: curv,
        })
    }

    fn curvature_world(&self, d: f64, _t: &Vec3, m1: &Vec3, m2: &Vec3) -> Vec3 {
        let [k1, k2] = self.curvature_at(d);
        m1 * k1 + m2 * k2
    }
}

fn wire(name: &str, segments: Vec<SegmentSpec>) -> DeviceSpec {
    DeviceSpec {
        name: name.to_string(),
        segments,
        total_length: GUIDEWIRE_LENGTH,
        outer_diameter: GUIDEWIRE_DIAMETER,
        inner_diameter: 0.0,
        body_rigidity: GUIDEWIRE_RIGIDITY,
        is_hollow: false,
    }
}

/// A straight guidewire.
pub fn straight(length: f64) -> DeviceSpec {
    let mut d = wire("straight", vec![SegmentSpec {
        shape: SegmentShape::Straight { length },
        rigidity: GUIDEWIRE_RIGIDITY,
    }]);
    d.total_length = length;
    d
}

/// A guidewire whose tip is a single arc.
pub fn j_shaped(tip_radius: f64, tip_angle: f64) -> DeviceSpec {
    wire("j_shaped", vec![SegmentSpec {
        shape: SegmentShape::Arc {
            radius: tip_radius,
            angle: tip_angle,
            roll: 0.0,
        },
        rigidity: GUIDEWIRE_RIGIDITY,
    }])
}

/// Reverse-curve catheter: a tight primary curve at the tip followed by an
/// opposed secondary curve.
pub fn simmons() -> DeviceSpec {
    DeviceSpec {
        name: "simmons".to_string(),
        segments: vec![
            SegmentSpec {
                shape: SegmentShape::Arc {
                    radius: 8.0,
                    angle: PI,
                    roll: 0.0,
                },
                rigidity: CATHETER_RIGIDITY,
            },
            SegmentSpec {
                shape: SegmentShape::Arc {
                    radius: 15.0,
                    angle: 0.75 * PI,
                    roll: PI,
                },
                rigidity: CATHETER_RIGIDITY,
            },
        ],
        total_length: CATHETER_LENGTH,
        outer_diameter: CATHETER_DIAMETER,
        inner_diameter: CATHETER_INNER_DIAMETER,
        body_rigidity: CATHETER_RIGIDITY,
        is_hollow: true,
    }
}

/// A straight hollow catheter.
pub fn catheter() -> DeviceSpec {
    DeviceSpec {
        name: "catheter".to_string(),
        segments: Vec::new(),
        total_length: CATHETER_LENGTH,
        outer_diameter: CATHETER_DIAMETER,
        inner_diameter: CATHETER_INNER_DIAMETER,
        body_rigidity: CATHETER_RIGIDITY,
        is_hollow: true,
    }
}

/// Optional overrides for [`preset`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PresetParams {
    pub tip_radius: Option<f64>,
    pub tip_angle: Option<f64>,
    pub total_length: Option<f64>,
    pub outer_diameter: Option<f64>,
}

pub fn preset(name: &str, params: &PresetParams) -> Result<DeviceSpec> {
    let mut spec = match name {
        "straight" => straight(params.total_length.unwrap_or(GUIDEWIRE_LENGTH)),
        "j_shaped" => j_shaped(
            params.tip_radius.unwrap_or(J_TIP_RADIUS),
            params.tip_angle.unwrap_or(J_TIP_ANGLE),
        ),
        "simmons" => simmons(),
        "catheter" => catheter(),
        _ => return Err(Error::invalid(format!("unknown device preset {name}"))),
    };
    if let Some(l) = params.total_length {
        spec.total_length = l;
    }
    if let Some(d) = params.outer_diameter {
        spec.outer_diameter = d;
    }
    spec.check()?;
    Ok(spec)
}
