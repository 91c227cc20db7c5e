//! Penalty-contact rigid-body world: one free object, one kinematic-tree
//! hand, optional static obstacles, semi-implicit Euler integration.
//!
//! The object integrates linear and angular *momentum*, so with no applied
//! forces both are conserved bitwise. The hand base (wrist) is kinematic:
//! each control tick commands a wrist target pose that is interpolated
//! across substeps. Finger joints follow a first-order servo law
//! `qdot = (tau_pd + tau_contact) / viscosity` with smoothing and a speed
//! clamp, which keeps the massless-finger approximation stable against the
//! stiff contact springs.

use crate::error::{Error, Result};
use crate::hand::{HandDescription, FkResult, JointState, JointVec, SpatialVel, NUM_JOINTS};
use crate::math::{Mat3, Pose, Quat, Vec3, Wrench, WrenchFrame};
use crate::object::ObjectModel;
use crate::shapes::ShapePrimitive;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Contact parameters for one material pairing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialParams {
    /// N/m.
    pub contact_stiffness: f64,
    /// N·s/m, applied to approach speed only.
    pub contact_damping: f64,
    pub friction_coefficient: f64,
    /// Slip speed below which friction is linear in velocity (m/s).
    pub v_slip: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            contact_stiffness: 1.0e4,
            contact_damping: 50.0,
            friction_coefficient: 0.8,
            v_slip: 0.01,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.contact_stiffness >= 0.0
            && self.contact_damping >= 0.0
            && self.friction_coefficient >= 0.0
            && self.v_slip > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "material parameters must be non-negative (v_slip > 0): {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Physics substep, s.
    pub dt: f64,
    /// Control period, s; must be an integer multiple of dt.
    pub control_dt: f64,
    pub gravity: Vec3,
    /// Steady-state penetration budget used by validation suites, m.
    pub max_penetration: f64,
    /// Divergence guard bounds.
    pub max_linear_velocity: f64,
    pub max_angular_velocity: f64,
    /// First-order joint servo viscosity, N·m·s/rad.
    pub joint_viscosity: f64,
    /// Per-substep exponential smoothing factor for joint velocity, (0, 1].
    pub joint_vel_smoothing: f64,
    /// Joint speed clamp, rad/s.
    pub max_joint_speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0 / 600.0,
            control_dt: 1.0 / 30.0,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            max_penetration: 0.005,
            max_linear_velocity: 50.0,
            max_angular_velocity: 200.0,
            joint_viscosity: 0.12,
            joint_vel_smoothing: 0.35,
            max_joint_speed: 3.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.control_dt > 0.0) {
            return Err(Error::Validation("dt and control_dt must be positive".into()));
        }
        let n = (self.control_dt / self.dt).round();
        if n < 1.0 || (n * self.dt - self.control_dt).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "dt ({}) must divide control_dt ({}) exactly",
                self.dt, self.control_dt
            )));
        }
        if !(self.joint_viscosity > 0.0)
            || !(self.joint_vel_smoothing > 0.0 && self.joint_vel_smoothing <= 1.0)
            || !(self.max_joint_speed > 0.0)
        {
            return Err(Error::Validation("invalid joint servo parameters".into()));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.control_dt / self.dt).round() as usize
    }
}

/// Free rigid body state. Momentum is the integrated quantity; velocities
/// are derived views.
#[derive(Clone, Debug)]
pub struct RigidObject {
    pub shapes: Vec<ShapePrimitive>,
    pub mass: f64,
    pub inertia_body: Mat3,
    inertia_body_inv: Mat3,
    pub com_body: Vec3,
    pub bound_radius: f64,
    pub pose: Pose,
    pub frozen: bool,
    linear_momentum: Vec3,
    angular_momentum: Vec3,
}

impl RigidObject {
    pub fn from_model(model: &ObjectModel, pose: Pose) -> RigidObject {
        RigidObject {
            shapes: model.shapes.clone(),
            mass: model.mass,
            inertia_body: model.inertia_body,
            inertia_body_inv: model
                .inertia_body
                .inverse()
                .expect("inertia validated positive-definite"),
            com_body: model.com,
            bound_radius: model.bound_radius,
            pose,
            frozen: false,
            linear_momentum: Vec3::ZERO,
            angular_momentum: Vec3::ZERO,
        }
    }

    pub fn com_world(&self) -> Vec3 {
        self.pose.transform_point(self.com_body)
    }

    pub fn linear_velocity(&self) -> Vec3 {
        self.linear_momentum / self.mass
    }

    fn inertia_world_inv(&self) -> Mat3 {
        let r = self.pose.rotation.to_mat3();
        r.mul_mat(&self.inertia_body_inv).mul_mat(&r.transpose())
    }

    pub fn angular_velocity(&self) -> Vec3 {
        self.inertia_world_inv().mul_vec(self.angular_momentum)
    }

    pub fn set_velocity(&mut self, linear: Vec3, angular: Vec3) {
        self.linear_momentum = linear * self.mass;
        let r = self.pose.rotation.to_mat3();
        let inertia_world = r.mul_mat(&self.inertia_body).mul_mat(&r.transpose());
        self.angular_momentum = inertia_world.mul_vec(angular);
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.linear_momentum
    }

    pub fn angular_momentum(&self) -> Vec3 {
        self.angular_momentum
    }

    /// Velocity of a world point rigidly attached to the object.
    pub fn point_velocity(&self, p_world: Vec3) -> Vec3 {
        self.linear_velocity() + self.angular_velocity().cross(p_world - self.com_world())
    }
}

/// Immovable scene geometry (e.g. a nail for hammering).
#[derive(Clone, Debug)]
pub struct Obstacle {
    pub name: String,
    pub shapes: Vec<ShapePrimitive>,
    pub pose: Pose,
    pub material: MaterialParams,
    pub bound_radius: f64,
}

impl Obstacle {
    pub fn new(name: impl Into<String>, shapes: Vec<ShapePrimitive>, pose: Pose, material: MaterialParams) -> Obstacle {
        let bound_radius = shapes
            .iter()
            .map(|s| s.pose.translation.norm() + s.kind.aabb_half_extents().norm())
            .fold(0.0, f64::max);
        Obstacle {
            name: name.into(),
            shapes,
            pose,
            material,
            bound_radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactKind {
    /// A hand sample point inside the object; `link_id` is the hand link.
    HandObject,
    /// An object surface point inside an obstacle; `link_id` is the obstacle index.
    ObjectObstacle,
}

#[derive(Clone, Copy, Debug)]
pub struct ContactPoint {
    pub kind: ContactKind,
    /// World position of the penetrating sample point.
    pub position: Vec3,
    /// Outward unit normal of the penetrated body's surface at the closest
    /// point; pushes the penetrating point out.
    pub normal: Vec3,
    pub penetration_depth: f64,
    /// Velocity of the penetrating point relative to the penetrated body.
    pub relative_velocity: Vec3,
    pub link_id: usize,
    pub shape_id: usize,
}

/// Per-substep stabilization bounds on contact reaction, derived from the
/// object's mass and the live contact count so stacked penalty springs can
/// never exceed the integrator's stable stiffness.
#[derive(Clone, Copy, Debug)]
pub struct ContactCaps {
    /// N/m bound on effective stiffness.
    pub stiffness: f64,
    /// N·s/m bound on normal damping and the regularized friction slope.
    pub viscous: f64,
}

impl ContactCaps {
    pub fn none() -> ContactCaps {
        ContactCaps {
            stiffness: f64::INFINITY,
            viscous: f64::INFINITY,
        }
    }

    fn for_substep(mass: f64, dt: f64, contact_count: usize) -> ContactCaps {
        let n = contact_count.max(1) as f64;
        ContactCaps {
            stiffness: mass / (dt * dt * n),
            viscous: 0.5 * mass / (dt * n),
        }
    }
}

/// Force produced by one contact, acting on the body that owns the
/// penetrating point (hand link for hand-object contacts, the object for
/// object-obstacle contacts). The penetrated body receives the negation.
#[derive(Clone, Copy, Debug)]
pub struct ContactForce {
    /// Separating component along the contact normal, ≥ 0 (non-adhesive).
    pub normal_magnitude: f64,
    /// Full force on the penetrating body, world frame.
    pub force: Vec3,
}

/// Penalty normal force plus regularized Coulomb friction.
pub fn contact_force(c: &ContactPoint, mat: &MaterialParams, caps: &ContactCaps) -> ContactForce {
    let k = mat.contact_stiffness.min(caps.stiffness);
    let damping = mat.contact_damping.min(caps.viscous);
    let v_n = c.relative_velocity.dot(c.normal);
    let normal_magnitude = (k * c.penetration_depth + damping * (-v_n).max(0.0)).max(0.0);
    let v_t = c.relative_velocity - c.normal * v_n;
    let slip = v_t.norm();
    let mut force = c.normal * normal_magnitude;
    if slip > 1e-12 {
        let max_static = mat.friction_coefficient * normal_magnitude;
        let slope = (max_static / mat.v_slip).min(caps.viscous);
        let magnitude = (slope * slip).min(max_static);
        force += v_t * (-magnitude / slip);
    }
    ContactForce {
        normal_magnitude,
        force,
    }
}

/// Commanded inputs for one control tick.
#[derive(Clone, Copy, Debug)]
pub struct ControlAction {
    pub wrist_target: Pose,
    pub q_target: JointVec,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub tick: u64,
    pub time: f64,
    pub object_pose: Pose,
    pub object_lin_vel: Vec3,
    pub object_ang_vel: Vec3,
    pub q: JointVec,
    pub qdot: JointVec,
    /// Clamped PD torque from the last substep.
    pub tau_actuator: JointVec,
    /// Tick-averaged contact load projected onto each joint.
    pub tau_readout: JointVec,
    pub contact_count: usize,
    pub max_penetration: f64,
    /// Normal impulse transferred to obstacles during this tick, N·s.
    pub obstacle_impulse: f64,
    pub diverged: bool,
}

pub struct World {
    pub config: SimConfig,
    pub hand: Arc<HandDescription>,
    pub joints: JointState,
    pub object: RigidObject,
    /// Hand-object contact parameters.
    pub object_material: MaterialParams,
    pub obstacles: Vec<Obstacle>,
    wrist_pose: Pose,
    substeps: usize,
    tick: u64,
    diverged: bool,
    ext_force: Vec3,
    ext_torque: Vec3,
    weld: Option<Pose>,
    object_shape_inv: Vec<Pose>,
    obstacle_shape_inv: Vec<Vec<Pose>>,
    object_surface: Vec<Vec3>,
    contact_buf: Vec<ContactPoint>,
}

impl World {
    pub fn new(
        config: SimConfig,
        hand: Arc<HandDescription>,
        model: &ObjectModel,
        object_pose: Pose,
        wrist_pose: Pose,
    ) -> Result<World> {
        config.validate()?;
        model.material.validate()?;
        let object = RigidObject::from_model(model, object_pose);
        let object_shape_inv = object.shapes.iter().map(|s| s.pose.inverse()).collect();
        Ok(World {
            substeps: config.substeps(),
            config,
            hand,
            joints: JointState::default(),
            object,
            object_material: model.material,
            obstacles: Vec::new(),
            wrist_pose,
            tick: 0,
            diverged: false,
            ext_force: Vec3::ZERO,
            ext_torque: Vec3::ZERO,
            weld: None,
            object_shape_inv,
            obstacle_shape_inv: Vec::new(),
            object_surface: Vec::new(),
            contact_buf: Vec::new(),
        })
    }

    pub fn add_obstacle(&mut self, obstacle: Obstacle, object_model: &ObjectModel) {
        if self.object_surface.is_empty() {
            self.object_surface = object_model.surface_samples(0.008);
        }
        self.obstacle_shape_inv
            .push(obstacle.shapes.iter().map(|s| s.pose.inverse()).collect());
        self.obstacles.push(obstacle);
    }

    pub fn wrist_pose(&self) -> Pose {
        self.wrist_pose
    }

    /// Place the wrist instantaneously (no interpolation, no velocity).
    pub fn teleport_wrist(&mut self, pose: Pose) {
        self.wrist_pose = pose;
    }

    /// Set joint positions directly (reinstatement); targets follow.
    pub fn set_joint_positions(&mut self, q: &JointVec) {
        let mut q = *q;
        self.hand.clamp_to_limits(&mut q);
        self.joints.q = q;
        self.joints.q_target = q;
        self.joints.qdot = [0.0; NUM_JOINTS];
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.control_dt
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Object pose expressed in the wrist frame.
    pub fn in_hand_pose(&self) -> Pose {
        self.wrist_pose.inverse().compose(&self.object.pose)
    }

    /// Freeze: the object ignores all forces and holds pose; velocities zero.
    pub fn freeze_object(&mut self, frozen: bool) {
        self.object.frozen = frozen;
        if frozen {
            self.object.linear_momentum = Vec3::ZERO;
            self.object.angular_momentum = Vec3::ZERO;
        }
    }

    /// Infinite-friction test fixture: the object follows the wrist rigidly.
    pub fn weld_object_to_wrist(&mut self) {
        self.weld = Some(self.in_hand_pose());
    }

    pub fn release_weld(&mut self) {
        self.weld = None;
    }

    /// Accumulate an external wrench for the next control tick. The force
    /// acts at `application_point` (world coordinates); its moment about the
    /// current COM is accumulated alongside any pure torque.
    pub fn apply_external_wrench(&mut self, w: &Wrench, application_point: Vec3) {
        let (force, torque) = match w.frame {
            WrenchFrame::World => (w.force, w.torque),
            WrenchFrame::Object => (
                self.object.pose.rotate_vector(w.force),
                self.object.pose.rotate_vector(w.torque),
            ),
        };
        self.ext_force += force;
        self.ext_torque += torque + (application_point - self.object.com_world()).cross(force);
    }

    /// Current contacts at zero wrist velocity; for inspection and tests.
    pub fn detect_contacts(&self) -> Vec<ContactPoint> {
        let fk = self.hand.fk_full(
            &self.wrist_pose,
            &SpatialVel::default(),
            &self.joints.q,
            &self.joints.qdot,
        );
        let mut out = Vec::new();
        self.collect_contacts(&fk, &mut out);
        out
    }

    fn collect_contacts(&self, fk: &FkResult, out: &mut Vec<ContactPoint>) {
        out.clear();
        let obj = &self.object;
        let obj_inv = obj.pose.inverse();
        let margin = 0.02;
        for (link_id, link) in self.hand.links.iter().enumerate() {
            if link.sample_points.is_empty() {
                continue;
            }
            let state = &fk.links[link_id];
            for &sp in &link.sample_points {
                let p_world = state.pose.transform_point(sp);
                if p_world.distance(obj.pose.translation) > obj.bound_radius + margin {
                    continue;
                }
                let p_body = obj_inv.transform_point(p_world);
                for (shape_id, (shape, inv)) in
                    obj.shapes.iter().zip(&self.object_shape_inv).enumerate()
                {
                    let p_local = inv.transform_point(p_body);
                    let (sd, n_local) = shape.kind.signed_distance(p_local);
                    if sd < 0.0 {
                        let normal = obj
                            .pose
                            .rotate_vector(shape.pose.rotate_vector(n_local));
                        let rel = state.point_velocity(p_world) - obj.point_velocity(p_world);
                        out.push(ContactPoint {
                            kind: ContactKind::HandObject,
                            position: p_world,
                            normal,
                            penetration_depth: -sd,
                            relative_velocity: rel,
                            link_id,
                            shape_id,
                        });
                    }
                }
            }
        }
        for (obs_id, (obs, inv_list)) in
            self.obstacles.iter().zip(&self.obstacle_shape_inv).enumerate()
        {
            let center_dist = obj.pose.translation.distance(obs.pose.translation);
            if center_dist > obj.bound_radius + obs.bound_radius + margin {
                continue;
            }
            for &sp in &self.object_surface {
                let p_world = obj.pose.transform_point(sp);
                for (shape_id, (shape, inv)) in obs.shapes.iter().zip(inv_list).enumerate() {
                    let p_local = inv.transform_point(obs.pose.inverse().transform_point(p_world));
                    let (sd, n_local) = shape.kind.signed_distance(p_local);
                    if sd < 0.0 {
                        let normal = obs.pose.rotate_vector(shape.pose.rotate_vector(n_local));
                        out.push(ContactPoint {
                            kind: ContactKind::ObjectObstacle,
                            position: p_world,
                            normal,
                            penetration_depth: -sd,
                            relative_velocity: obj.point_velocity(p_world),
                            link_id: obs_id,
                            shape_id,
                        });
                    }
                }
            }
        }
    }

    /// Advance one control tick (`substeps` physics substeps).
    pub fn step(&mut self, action: &ControlAction) -> WorldSnapshot {
        let dt = self.config.dt;
        let n = self.substeps;
        let mut q_target = action.q_target;
        self.hand.clamp_to_limits(&mut q_target);
        self.joints.q_target = q_target;

        let wrist_start = self.wrist_pose;
        let mut readout_accum = [0.0; NUM_JOINTS];
        let mut max_pen = 0.0f64;
        let mut obstacle_impulse = 0.0;
        let mut contact_count = 0;

        if !self.diverged {
            for s in 0..n {
                let f0 = s as f64 / n as f64;
                let f1 = (s + 1) as f64 / n as f64;
                let pose_now = interp_pose(&wrist_start, &action.wrist_target, f0);
                let pose_next = interp_pose(&wrist_start, &action.wrist_target, f1);
                let wrist_vel = spatial_between(&pose_now, &pose_next, dt);
                self.wrist_pose = pose_now;
                let sub = self.substep(&pose_next, &wrist_vel, &mut readout_accum);
                max_pen = max_pen.max(sub.max_penetration);
                obstacle_impulse += sub.obstacle_impulse;
                contact_count = sub.contact_count;
                if self.diverged {
                    break;
                }
            }
            if !self.diverged {
                self.wrist_pose = action.wrist_target;
            }
        }

        self.tick += 1;
        self.ext_force = Vec3::ZERO;
        self.ext_torque = Vec3::ZERO;

        let inv_n = 1.0 / n as f64;
        let mut tau_readout = readout_accum;
        for t in &mut tau_readout {
            *t *= inv_n;
        }
        WorldSnapshot {
            tick: self.tick,
            time: self.time(),
            object_pose: self.object.pose,
            object_lin_vel: self.object.linear_velocity(),
            object_ang_vel: self.object.angular_velocity(),
            q: self.joints.q,
            qdot: self.joints.qdot,
            tau_actuator: self.joints.tau,
            tau_readout,
            contact_count,
            max_penetration: max_pen,
            obstacle_impulse,
            diverged: self.diverged,
        }
    }

    fn substep(
        &mut self,
        wrist_next: &Pose,
        wrist_vel: &SpatialVel,
        readout_accum: &mut JointVec,
    ) -> SubstepStats {
        let dt = self.config.dt;
        let fk = self
            .hand
            .fk_full(&self.wrist_pose, wrist_vel, &self.joints.q, &self.joints.qdot);

        let mut contacts = std::mem::take(&mut self.contact_buf);
        self.collect_contacts(&fk, &mut contacts);
        let caps = ContactCaps::for_substep(self.object.mass, dt, contacts.len());

        let x_com = self.object.com_world();
        let mut force = Vec3::ZERO;
        let mut torque = Vec3::ZERO;
        let mut tau_react = [0.0; NUM_JOINTS];
        let mut stats = SubstepStats {
            contact_count: contacts.len(),
            max_penetration: 0.0,
            obstacle_impulse: 0.0,
        };
        for c in &contacts {
            stats.max_penetration = stats.max_penetration.max(c.penetration_depth);
            match c.kind {
                ContactKind::HandObject => {
                    let cf = contact_force(c, &self.object_material, &caps);
                    force -= cf.force;
                    torque -= (c.position - x_com).cross(cf.force);
                    for &j in &self.hand.ancestor_joints[c.link_id] {
                        tau_react[j] += fk.joint_axis[j]
                            .cross(c.position - fk.joint_origin[j])
                            .dot(cf.force);
                    }
                }
                ContactKind::ObjectObstacle => {
                    let cf = contact_force(c, &self.obstacles[c.link_id].material, &caps);
                    force += cf.force;
                    torque += (c.position - x_com).cross(cf.force);
                    stats.obstacle_impulse += cf.normal_magnitude * dt;
                }
            }
        }
        self.contact_buf = contacts;

        // Joint servo update.
        let smoothing = self.config.joint_vel_smoothing;
        let viscosity = self.config.joint_viscosity;
        let tau_act = self.hand.pd_torque(&self.joints);
        for i in 0..NUM_JOINTS {
            let raw = ((tau_act[i] + tau_react[i]) / viscosity)
                .clamp(-self.config.max_joint_speed, self.config.max_joint_speed);
            let qdot = self.joints.qdot[i] + smoothing * (raw - self.joints.qdot[i]);
            let mut q = self.joints.q[i] + qdot * dt;
            let limits = self.hand.joints[i].limits;
            let clamped = q < limits[0] || q > limits[1];
            q = q.clamp(limits[0], limits[1]);
            self.joints.q[i] = q;
            self.joints.qdot[i] = if clamped { 0.0 } else { qdot };
            readout_accum[i] += -tau_react[i];
        }
        self.joints.tau = tau_act;

        // Object update.
        if let Some(rel) = self.weld {
            let x_com_now = self.object.com_world();
            let v = wrist_vel.linear + wrist_vel.angular.cross(x_com_now - self.wrist_pose.translation);
            self.object.pose = wrist_next.compose(&rel);
            self.object.set_velocity(v, wrist_vel.angular);
        } else if !self.object.frozen {
            let obj = &mut self.object;
            let total_force = force + self.ext_force + self.config.gravity * obj.mass;
            let total_torque = torque + self.ext_torque;
            obj.linear_momentum += total_force * dt;
            obj.angular_momentum += total_torque * dt;
            let v = obj.linear_velocity();
            let w = obj.angular_velocity();
            let new_com = obj.pose.transform_point(obj.com_body) + v * dt;
            let rot = Quat::from_rotation_vector(w * dt).mul(obj.pose.rotation);
            obj.pose = Pose::new(new_com - rot.rotate(obj.com_body), rot);

            let guard = v.norm() <= self.config.max_linear_velocity
                && w.norm() <= self.config.max_angular_velocity
                && obj.pose.is_finite();
            if !guard {
                self.diverged = true;
            }
        }
        if self.joints.q.iter().any(|v| !v.is_finite()) {
            self.diverged = true;
        }
        if !self.diverged {
            self.wrist_pose = *wrist_next;
        }
        stats
    }
}

struct SubstepStats {
    contact_count: usize,
    max_penetration: f64,
    obstacle_impulse: f64,
}

fn interp_pose(a: &Pose, b: &Pose, s: f64) -> Pose {
    Pose::new(
        a.translation + (b.translation - a.translation) * s,
        a.rotation.slerp(b.rotation, s),
    )
}

fn spatial_between(a: &Pose, b: &Pose, dt: f64) -> SpatialVel {
    SpatialVel {
        linear: (b.translation - a.translation) / dt,
        angular: b.rotation.mul(a.rotation.conjugate()).to_rotation_vector() / dt,
    }
}
