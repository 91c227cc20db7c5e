//! Rigid object descriptions: primitive compositions with mass, material,
//! and inertia computed on load unless overridden.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::physics::MaterialParams;
use crate::shapes::{compute_inertia, ShapePrimitive};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct ObjectModel {
    pub name: String,
    pub mass: f64,
    pub shapes: Vec<ShapePrimitive>,
    pub material: MaterialParams,
    /// Inertia about the COM, body axes.
    pub inertia_body: Mat3,
    /// COM in the body frame.
    pub com: Vec3,
    /// Radius of a bounding sphere around the body-frame origin.
    pub bound_radius: f64,
}

/// Contact parameters for a named material pairing against the hand's pads.
pub fn material_preset(name: &str) -> Option<MaterialParams> {
    let friction = match name {
        "default" | "rubber" => 0.8,
        "steel" => 0.5,
        "wood" => 0.7,
        "plastic" => 0.6,
        _ => return None,
    };
    Some(MaterialParams {
        friction_coefficient: friction,
        ..MaterialParams::default()
    })
}

#[derive(Serialize, Deserialize)]
struct ObjectFile {
    name: String,
    mass: f64,
    #[serde(default)]
    material: Option<String>,
    #[serde(default)]
    material_params: Option<MaterialParams>,
    /// Row-major 3x3 override, about the COM.
    #[serde(default)]
    inertia: Option<[f64; 9]>,
    #[serde(default)]
    com: Option<Vec3>,
    shapes: Vec<ShapePrimitive>,
}

impl ObjectModel {
    pub fn parse_toml(text: &str) -> Result<ObjectModel> {
        let file: ObjectFile =
            toml::from_str(text).map_err(|e| Error::parse("object description", 0, e.to_string()))?;
        if !(file.mass > 0.0 && file.mass.is_finite()) {
            return Err(Error::Validation(format!(
                "object `{}`: mass must be positive, got {}",
                file.name, file.mass
            )));
        }
        if file.shapes.is_empty() {
            return Err(Error::Validation(format!(
                "object `{}`: at least one shape required",
                file.name
            )));
        }
        for s in &file.shapes {
            s.kind.validate()?;
            if !s.pose.is_finite() {
                return Err(Error::Validation(format!(
                    "object `{}`: non-finite shape pose",
                    file.name
                )));
            }
        }
        let material = match (&file.material_params, &file.material) {
            (Some(p), _) => {
                p.validate()?;
                *p
            }
            (None, Some(name)) => material_preset(name).ok_or_else(|| {
                Error::Validation(format!("object `{}`: unknown material `{name}`", file.name))
            })?,
            (None, None) => MaterialParams::default(),
        };
        let (inertia_body, com) = match (file.inertia, file.com) {
            (Some(flat), com_opt) => {
                let m = Mat3::from_flat(flat);
                if !m.is_symmetric(1e-9) || !m.is_positive_definite() {
                    return Err(Error::Validation(format!(
                        "object `{}`: inertia override must be symmetric positive-definite",
                        file.name
                    )));
                }
                (m, com_opt.unwrap_or(Vec3::ZERO))
            }
            (None, _) => compute_inertia(&file.shapes, file.mass)?,
        };
        let bound_radius = file
            .shapes
            .iter()
            .map(|s| s.pose.translation.norm() + s.kind.aabb_half_extents().norm())
            .fold(0.0, f64::max);
        Ok(ObjectModel {
            name: file.name,
            mass: file.mass,
            shapes: file.shapes,
            material,
            inertia_body,
            com,
            bound_radius,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<ObjectModel> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_toml(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    /// Uniform mass scaling for domain randomization; inertia scales with mass
    /// (geometry unchanged).
    pub fn with_mass_factor(&self, factor: f64) -> ObjectModel {
        let mut m = self.clone();
        m.mass *= factor;
        m.inertia_body = m.inertia_body.scale(factor);
        m
    }

    pub fn with_friction_factor(&self, factor: f64) -> ObjectModel {
        let mut m = self.clone();
        m.material.friction_coefficient *= factor;
        m
    }

    /// Deterministic surface probe points in the body frame, used for
    /// object-vs-obstacle narrowphase.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for s in &self.shapes {
            for p in s.kind.surface_samples(spacing) {
                pts.push(s.pose.transform_point(p));
            }
        }
        pts
    }
}
