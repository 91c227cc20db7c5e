//! Convex collision primitives: signed distance queries, volumes, inertia
//! tensors, and deterministic surface sampling.
//!
//! All per-kind quantities are expressed in the primitive's local frame.
//! Capsules and cylinders are aligned with the local +z axis; use
//! `ShapePrimitive::local_pose` to orient them.

use crate::error::{Error, Result};
use crate::math::{Mat3, Pose, Vec3};
use serde::{Deserialize, Serialize};

/// Geometry of a single convex primitive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Box { half_extents: Vec3 },
    Sphere { radius: f64 },
    /// Segment along ±half_length on z, inflated by radius.
    Capsule { radius: f64, half_length: f64 },
    /// Flat-capped, axis z, caps at ±half_height.
    Cylinder { radius: f64, half_height: f64 },
}

/// A primitive placed in a body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapePrimitive {
    #[serde(flatten)]
    pub kind: ShapeKind,
    #[serde(default)]
    pub pose: Pose,
}

impl ShapeKind {
    /// All dimensions strictly positive.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShapeKind::Box { half_extents } => {
                half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0
            }
            ShapeKind::Sphere { radius } => radius > 0.0,
            ShapeKind::Capsule {
                radius,
                half_length,
            } => radius > 0.0 && half_length > 0.0,
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => radius > 0.0 && half_height > 0.0,
        };
        if ok && self.aabb_half_extents().is_finite() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "shape dimensions must be strictly positive and finite: {self:?}"
            )))
        }
    }

    /// Signed distance from a local-frame point to the surface (< 0 inside),
    /// plus the outward unit normal at the closest surface point.
    pub fn signed_distance(&self, p: Vec3) -> (f64, Vec3) {
        match *self {
            ShapeKind::Sphere { radius } => {
                let n = p.norm();
                let normal = if n > 1e-12 {
                    p / n
                } else {
                    Vec3::new(0.0, 0.0, 1.0)
                };
                (n - radius, normal)
            }
            ShapeKind::Capsule {
                radius,
                half_length,
            } => {
                let c = Vec3::new(0.0, 0.0, p.z.clamp(-half_length, half_length));
                let d = p - c;
                let n = d.norm();
                let normal = if n > 1e-12 {
                    d / n
                } else {
                    Vec3::new(1.0, 0.0, 0.0)
                };
                (n - radius, normal)
            }
            ShapeKind::Box { half_extents } => {
                let q = Vec3::new(
                    p.x.abs() - half_extents.x,
                    p.y.abs() - half_extents.y,
                    p.z.abs() - half_extents.z,
                );
                if q.x > 0.0 || q.y > 0.0 || q.z > 0.0 {
                    // Outside: distance to the clamped closest point.
                    let closest = Vec3::new(
                        p.x.clamp(-half_extents.x, half_extents.x),
                        p.y.clamp(-half_extents.y, half_extents.y),
                        p.z.clamp(-half_extents.z, half_extents.z),
                    );
                    let d = p - closest;
                    let n = d.norm();
                    (n, d / n.max(1e-300))
                } else {
                    // Inside: nearest face wins, x > y > z on exact ties.
                    let (sd, normal) = if q.x >= q.y && q.x >= q.z {
                        (q.x, Vec3::new(sign_or_pos(p.x), 0.0, 0.0))
                    } else if q.y >= q.z {
                        (q.y, Vec3::new(0.0, sign_or_pos(p.y), 0.0))
                    } else {
                        (q.z, Vec3::new(0.0, 0.0, sign_or_pos(p.z)))
                    };
                    (sd, normal)
                }
            }
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => {
                let radial = (p.x * p.x + p.y * p.y).sqrt();
                let dr = radial - radius;
                let dz = p.z.abs() - half_height;
                let radial_dir = if radial > 1e-12 {
                    Vec3::new(p.x / radial, p.y / radial, 0.0)
                } else {
                    Vec3::new(1.0, 0.0, 0.0)
                };
                if dr > 0.0 || dz > 0.0 {
                    let qr = dr.max(0.0);
                    let qz = dz.max(0.0);
                    let dist = (qr * qr + qz * qz).sqrt();
                    let normal = (radial_dir * qr
                        + Vec3::new(0.0, 0.0, sign_or_pos(p.z)) * qz)
                        / dist.max(1e-300);
                    (dist, normal)
                } else if dr >= dz {
                    (dr, radial_dir)
                } else {
                    (dz, Vec3::new(0.0, 0.0, sign_or_pos(p.z)))
                }
            }
        }
    }

    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            ShapeKind::Box { half_extents } => {
                8.0 * half_extents.x * half_extents.y * half_extents.z
            }
            ShapeKind::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            ShapeKind::Capsule {
                radius,
                half_length,
            } => PI * radius * radius * 2.0 * half_length + 4.0 / 3.0 * PI * radius.powi(3),
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => PI * radius * radius * 2.0 * half_height,
        }
    }

    /// Inertia tensor for unit mass about the primitive's COM, local axes.
    pub fn unit_inertia(&self) -> Mat3 {
        match *self {
            ShapeKind::Box { half_extents } => {
                let a2 = (2.0 * half_extents.x).powi(2);
                let b2 = (2.0 * half_extents.y).powi(2);
                let c2 = (2.0 * half_extents.z).powi(2);
                Mat3::diag((b2 + c2) / 12.0, (a2 + c2) / 12.0, (a2 + b2) / 12.0)
            }
            ShapeKind::Sphere { radius } => {
                let v = 0.4 * radius * radius;
                Mat3::diag(v, v, v)
            }
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => {
                let h2 = (2.0 * half_height).powi(2);
                let r2 = radius * radius;
                let ixx = (3.0 * r2 + h2) / 12.0;
                Mat3::diag(ixx, ixx, r2 / 2.0)
            }
            ShapeKind::Capsule {
                radius,
                half_length,
            } => {
                // Mass split between the cylindrical body and the two
                // hemispherical caps by volume; caps carried by parallel axis.
                use std::f64::consts::PI;
                let r = radius;
                let h = 2.0 * half_length;
                let v_cyl = PI * r * r * h;
                let v_sph = 4.0 / 3.0 * PI * r.powi(3);
                let m_cyl = v_cyl / (v_cyl + v_sph);
                let m_sph = v_sph / (v_cyl + v_sph);
                let izz = m_cyl * r * r / 2.0 + m_sph * 0.4 * r * r;
                let ixx = m_cyl * (3.0 * r * r + h * h) / 12.0
                    + m_sph * (0.4 * r * r + h * h / 4.0 + 0.375 * h * r);
                Mat3::diag(ixx, ixx, izz)
            }
        }
    }

    /// Conservative axis-aligned bounding half extents in the local frame.
    pub fn aabb_half_extents(&self) -> Vec3 {
        match *self {
            ShapeKind::Box { half_extents } => half_extents,
            ShapeKind::Sphere { radius } => Vec3::splat(radius),
            ShapeKind::Capsule {
                radius,
                half_length,
            } => Vec3::new(radius, radius, half_length + radius),
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => Vec3::new(radius, radius, half_height),
        }
    }

    /// Deterministic points on the surface at roughly the given spacing,
    /// local frame. Used as contact probes for body-vs-static narrowphase.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Vec3> {
        let spacing = spacing.max(1e-4);
        let mut pts = Vec::new();
        match *self {
            ShapeKind::Sphere { radius } => {
                let area = 4.0 * std::f64::consts::PI * radius * radius;
                let n = ((area / (spacing * spacing)).ceil() as usize).clamp(8, 256);
                fibonacci_sphere(&mut pts, n, radius, Vec3::ZERO, -1.0, 1.0);
            }
            ShapeKind::Box { half_extents } => {
                let h = half_extents;
                // One grid per face pair, offset to cell centers.
                face_grid(&mut pts, h.x, h.y, h.z, spacing, |u, v, w| Vec3::new(u, v, w));
                face_grid(&mut pts, h.y, h.z, h.x, spacing, |u, v, w| Vec3::new(w, u, v));
                face_grid(&mut pts, h.z, h.x, h.y, spacing, |u, v, w| Vec3::new(v, w, u));
            }
            ShapeKind::Capsule {
                radius,
                half_length,
            } => {
                ring_stack(&mut pts, radius, -half_length, half_length, spacing);
                // Caps: one 45-degree ring plus the pole per end.
                let rr = radius / 2f64.sqrt();
                for sgn in [-1.0, 1.0] {
                    let zc = sgn * half_length;
                    ring(&mut pts, rr, zc + sgn * rr);
                    pts.push(Vec3::new(0.0, 0.0, zc + sgn * radius));
                }
            }
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => {
                ring_stack(&mut pts, radius, -half_height, half_height, spacing);
                for sgn in [-1.0, 1.0] {
                    let z = sgn * half_height;
                    ring(&mut pts, radius * 0.55, z);
                    pts.push(Vec3::new(0.0, 0.0, z));
                }
            }
        }
        pts
    }
}

fn sign_or_pos(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn fibonacci_sphere(out: &mut Vec<Vec3>, n: usize, radius: f64, center: Vec3, z_lo: f64, z_hi: f64) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..n {
        let z = z_lo + (z_hi - z_lo) * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let th = golden * i as f64;
        out.push(center + Vec3::new(r * th.cos(), r * th.sin(), z) * radius);
    }
}

fn face_grid(
    out: &mut Vec<Vec3>,
    hu: f64,
    hv: f64,
    hw: f64,
    spacing: f64,
    map: impl Fn(f64, f64, f64) -> Vec3,
) {
    let nu = ((2.0 * hu / spacing).round() as usize).max(1);
    let nv = ((2.0 * hv / spacing).round() as usize).max(1);
    for iu in 0..nu {
        for iv in 0..nv {
            let u = -hu + (iu as f64 + 0.5) * 2.0 * hu / nu as f64;
            let v = -hv + (iv as f64 + 0.5) * 2.0 * hv / nv as f64;
            out.push(map(u, v, hw));
            out.push(map(u, v, -hw));
        }
    }
}

fn ring(out: &mut Vec<Vec3>, radius: f64, z: f64) {
    let n = ((2.0 * std::f64::consts::PI * radius / 0.008).round() as usize).clamp(6, 24);
    for i in 0..n {
        let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        out.push(Vec3::new(radius * th.cos(), radius * th.sin(), z));
    }
}

fn ring_stack(out: &mut Vec<Vec3>, radius: f64, z_lo: f64, z_hi: f64, spacing: f64) {
    let n = (((z_hi - z_lo) / spacing).round() as usize).max(1) + 1;
    for i in 0..n {
        let z = z_lo + (z_hi - z_lo) * i as f64 / (n - 1).max(1) as f64;
        ring(out, radius, z);
    }
}

/// Combined inertia tensor and center of mass for a primitive composition of
/// the given total mass, assuming uniform density and disjoint primitives
/// (overlap is double-counted). Tensor is about the returned COM, body axes.
pub fn compute_inertia(shapes: &[ShapePrimitive], mass: f64) -> Result<(Mat3, Vec3)> {
    if mass <= 0.0 || !mass.is_finite() {
        return Err(Error::Validation(format!("mass must be positive, got {mass}")));
    }
    let volumes: Vec<f64> = shapes.iter().map(|s| s.kind.volume()).collect();
    let total: f64 = volumes.iter().sum();
    if !(total > 1e-12) {
        return Err(Error::Validation(
            "zero-volume shape composition".to_string(),
        ));
    }
    let mut com = Vec3::ZERO;
    for (s, v) in shapes.iter().zip(&volumes) {
        com += s.pose.translation * (*v / total);
    }
    let mut inertia = Mat3::ZERO;
    for (s, v) in shapes.iter().zip(&volumes) {
        let mi = mass * v / total;
        let rot = s.pose.rotation.to_mat3();
        let own = rot
            .mul_mat(&s.kind.unit_inertia().scale(mi))
            .mul_mat(&rot.transpose());
        let d = s.pose.translation - com;
        let shift = Mat3::identity().scale(d.norm_squared()).add(&outer(d, d).scale(-1.0));
        inertia = inertia.add(&own).add(&shift.scale(mi));
    }
    if !inertia.is_symmetric(1e-9) || !inertia.is_positive_definite() {
        return Err(Error::Validation(
            "composed inertia tensor is not symmetric positive-definite".to_string(),
        ));
    }
    Ok((inertia, com))
}

fn outer(a: Vec3, b: Vec3) -> Mat3 {
    Mat3::from_rows([
        [a.x * b.x, a.x * b.y, a.x * b.z],
        [a.y * b.x, a.y * b.y, a.y * b.z],
        [a.z * b.x, a.z * b.y, a.z * b.z],
    ])
}
