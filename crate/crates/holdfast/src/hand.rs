//! 16-DoF four-finger hand: kinematic tree description, forward kinematics
//! with velocities, PD torque law, and finger/group bookkeeping.
//!
//! Wrist frame convention used by the default hand: +x along the fingers,
//! +z out of the palm surface (the side objects rest on), y across the palm.
//! Flexion joints use axis (0,-1,0) so positive q curls toward +z.

use crate::error::{Error, Result};
use crate::math::{Pose, Quat, Vec3};
use crate::shapes::{ShapeKind, ShapePrimitive};
use serde::{Deserialize, Serialize};

pub const NUM_JOINTS: usize = 16;
pub const NUM_FINGERS: usize = 4;
/// Group tiers within a finger, in closing order.
pub const NUM_GROUPS: usize = 3;

pub type JointVec = [f64; NUM_JOINTS];

#[derive(Clone, Debug)]
pub struct LinkDef {
    pub name: String,
    pub shapes: Vec<ShapePrimitive>,
    /// Contact probe points, link frame.
    pub sample_points: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub struct JointDef {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Parent-link frame to joint frame; the child link frame coincides with
    /// the joint frame rotated by q about `axis`.
    pub origin: Pose,
    /// Unit axis in the joint frame.
    pub axis: Vec3,
    pub limits: [f64; 2],
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
}

#[derive(Clone, Debug)]
pub struct FingerDef {
    pub name: String,
    /// Joint indices per tier: [proximal, intermediate, distal].
    pub groups: [Vec<usize>; NUM_GROUPS],
}

impl FingerDef {
    pub fn joints(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().flatten().copied()
    }
}

#[derive(Clone, Debug)]
pub struct HandDescription {
    pub name: String,
    pub links: Vec<LinkDef>,
    pub joints: Vec<JointDef>,
    pub root: usize,
    pub fingers: Vec<FingerDef>,
    /// Joints that set finger spread; held fixed during closure.
    pub inter_finger_joints: Vec<usize>,
    pub is_spread: [bool; NUM_JOINTS],
    /// Per link: the joint whose child it is (None for the root).
    pub parent_joint: Vec<Option<usize>>,
    /// Link indices in parent-before-child order, root first.
    pub topo_order: Vec<usize>,
    /// Per link: ancestor joint indices, root side first.
    pub ancestor_joints: Vec<Vec<usize>>,
}

/// Per-joint servo state carried by the simulation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct JointState {
    pub q: JointVec,
    pub qdot: JointVec,
    pub q_target: JointVec,
    /// Last applied (clamped) actuator torque.
    pub tau: JointVec,
}

impl Default for JointState {
    fn default() -> Self {
        JointState {
            q: [0.0; NUM_JOINTS],
            qdot: [0.0; NUM_JOINTS],
            q_target: [0.0; NUM_JOINTS],
            tau: [0.0; NUM_JOINTS],
        }
    }
}

/// Linear velocity of a frame origin plus angular velocity, world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpatialVel {
    pub linear: Vec3,
    pub angular: Vec3,
}

#[derive(Clone, Copy, Debug)]
pub struct LinkState {
    pub pose: Pose,
    pub vel: SpatialVel,
}

impl LinkState {
    /// Velocity of a world-frame point rigidly attached to this link.
    pub fn point_velocity(&self, p_world: Vec3) -> Vec3 {
        self.vel.linear + self.vel.angular.cross(p_world - self.pose.translation)
    }
}

#[derive(Clone, Debug)]
pub struct FkResult {
    pub links: Vec<LinkState>,
    pub joint_origin: [Vec3; NUM_JOINTS],
    pub joint_axis: [Vec3; NUM_JOINTS],
}

impl HandDescription {
    /// World pose of every link for the given wrist pose and joint vector.
    pub fn forward_kinematics(&self, wrist: &Pose, q: &JointVec) -> Vec<Pose> {
        self.fk_full(wrist, &SpatialVel::default(), q, &[0.0; NUM_JOINTS])
            .links
            .into_iter()
            .map(|l| l.pose)
            .collect()
    }

    /// Poses plus spatial velocities, chaining wrist motion and joint rates.
    pub fn fk_full(
        &self,
        wrist: &Pose,
        wrist_vel: &SpatialVel,
        q: &JointVec,
        qdot: &JointVec,
    ) -> FkResult {
        let mut links = vec![
            LinkState {
                pose: Pose::IDENTITY,
                vel: SpatialVel::default(),
            };
            self.links.len()
        ];
        let mut joint_origin = [Vec3::ZERO; NUM_JOINTS];
        let mut joint_axis = [Vec3::ZERO; NUM_JOINTS];
        links[self.root] = LinkState {
            pose: *wrist,
            vel: *wrist_vel,
        };
        for &link in &self.topo_order {
            let Some(j) = self.parent_joint[link] else {
                continue;
            };
            let joint = &self.joints[j];
            let parent = links[joint.parent];
            let joint_pose = parent.pose.compose(&joint.origin);
            let axis_world = joint_pose.rotation.rotate(joint.axis);
            let child_rot = joint_pose
                .rotation
                .mul(Quat::from_axis_angle(joint.axis, q[j]));
            let p = joint_pose.translation;
            links[link] = LinkState {
                pose: Pose::new(p, child_rot),
                vel: SpatialVel {
                    linear: parent.vel.linear
                        + parent.vel.angular.cross(p - parent.pose.translation),
                    angular: parent.vel.angular + axis_world * qdot[j],
                },
            };
            joint_origin[j] = p;
            joint_axis[j] = axis_world;
        }
        FkResult {
            links,
            joint_origin,
            joint_axis,
        }
    }

    /// τ_i = clamp(kp_i (q_target_i − q_i) − kd_i qdot_i, ±torque_limit_i).
    pub fn pd_torque(&self, state: &JointState) -> JointVec {
        let mut tau = [0.0; NUM_JOINTS];
        for (i, joint) in self.joints.iter().enumerate() {
            let raw = joint.kp * (state.q_target[i] - state.q[i]) - joint.kd * state.qdot[i];
            tau[i] = raw.clamp(-joint.torque_limit, joint.torque_limit);
        }
        tau
    }

    pub fn clamp_to_limits(&self, q: &mut JointVec) {
        for (i, joint) in self.joints.iter().enumerate() {
            q[i] = q[i].clamp(joint.limits[0], joint.limits[1]);
        }
    }

    /// The distal-most link of a finger (child of its last distal joint).
    pub fn distal_link(&self, finger: usize) -> usize {
        let j = *self.fingers[finger].groups[NUM_GROUPS - 1]
            .last()
            .expect("validated: distal group non-empty");
        self.joints[j].child
    }

    pub fn total_sample_points(&self) -> usize {
        self.links.iter().map(|l| l.sample_points.len()).sum()
    }

    pub fn parse_toml(text: &str) -> Result<HandDescription> {
        let file: HandFile = toml::from_str(text)
            .map_err(|e| Error::parse("hand description", 0, e.to_string()))?;
        file.resolve()
    }

    pub fn load(path: &std::path::Path) -> Result<HandDescription> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_toml(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&HandFile::from_description(self))
            .expect("hand description serializes")
    }

    /// The hand shipped with the repo: palm plus four 4-joint fingers
    /// (abduction + three flexion joints each), capsule links, hobby-servo
    /// scale gains (kp 3.0, kd 0.1, torque limit 0.95 N·m).
    pub fn default_16dof() -> HandDescription {
        build_default().expect("default hand is valid")
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Serialize, Deserialize)]
struct HandFile {
    name: String,
    links: Vec<LinkFile>,
    joints: Vec<JointFile>,
    fingers: Vec<FingerFile>,
    inter_finger_joints: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LinkFile {
    name: String,
    #[serde(default)]
    shapes: Vec<ShapePrimitive>,
    #[serde(default)]
    sample_points: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct JointFile {
    name: String,
    parent: String,
    child: String,
    origin: Pose,
    axis: Vec3,
    limits: [f64; 2],
    kp: f64,
    kd: f64,
    torque_limit: f64,
}

#[derive(Serialize, Deserialize)]
struct FingerFile {
    name: String,
    proximal: Vec<String>,
    intermediate: Vec<String>,
    distal: Vec<String>,
}

impl HandFile {
    fn from_description(d: &HandDescription) -> HandFile {
        HandFile {
            name: d.name.clone(),
            links: d
                .links
                .iter()
                .map(|l| LinkFile {
                    name: l.name.clone(),
                    shapes: l.shapes.clone(),
                    sample_points: l.sample_points.clone(),
                })
                .collect(),
            joints: d
                .joints
                .iter()
                .map(|j| JointFile {
                    name: j.name.clone(),
                    parent: d.links[j.parent].name.clone(),
                    child: d.links[j.child].name.clone(),
                    origin: j.origin,
                    axis: j.axis,
                    limits: j.limits,
                    kp: j.kp,
                    kd: j.kd,
                    torque_limit: j.torque_limit,
                })
                .collect(),
            fingers: d
                .fingers
                .iter()
                .map(|f| FingerFile {
                    name: f.name.clone(),
                    proximal: f.groups[0].iter().map(|&j| d.joints[j].name.clone()).collect(),
                    intermediate: f.groups[1].iter().map(|&j| d.joints[j].name.clone()).collect(),
                    distal: f.groups[2].iter().map(|&j| d.joints[j].name.clone()).collect(),
                })
                .collect(),
            inter_finger_joints: d
                .inter_finger_joints
                .iter()
                .map(|&j| d.joints[j].name.clone())
                .collect(),
        }
    }

    fn resolve(self) -> Result<HandDescription> {
        let bad = |m: String| Error::Validation(m);
        let mut link_idx = std::collections::BTreeMap::new();
        for (i, l) in self.links.iter().enumerate() {
            if link_idx.insert(l.name.clone(), i).is_some() {
                return Err(bad(format!("duplicate link name `{}`", l.name)));
            }
            for s in &l.shapes {
                s.kind.validate()?;
            }
            for p in &l.sample_points {
                if !p.is_finite() {
                    return Err(bad(format!("non-finite sample point on link `{}`", l.name)));
                }
            }
        }
        if self.joints.len() != NUM_JOINTS {
            return Err(bad(format!(
                "expected {NUM_JOINTS} joints, found {}",
                self.joints.len()
            )));
        }
        let mut joint_idx = std::collections::BTreeMap::new();
        let mut joints = Vec::with_capacity(NUM_JOINTS);
        let mut parent_joint: Vec<Option<usize>> = vec![None; self.links.len()];
        for (i, j) in self.joints.iter().enumerate() {
            if joint_idx.insert(j.name.clone(), i).is_some() {
                return Err(bad(format!("duplicate joint name `{}`", j.name)));
            }
            let parent = *link_idx
                .get(&j.parent)
                .ok_or_else(|| bad(format!("joint `{}`: unknown parent link `{}`", j.name, j.parent)))?;
            let child = *link_idx
                .get(&j.child)
                .ok_or_else(|| bad(format!("joint `{}`: unknown child link `{}`", j.name, j.child)))?;
            if parent_joint[child].is_some() {
                return Err(bad(format!(
                    "link `{}` has more than one parent joint",
                    j.child
                )));
            }
            parent_joint[child] = Some(i);
            let axis = j
                .axis
                .normalized()
                .ok_or_else(|| bad(format!("joint `{}`: zero axis", j.name)))?;
            if !(j.limits[0] <= j.limits[1]) {
                return Err(bad(format!("joint `{}`: limits not ordered", j.name)));
            }
            if !(j.kp > 0.0) || j.kd < 0.0 || !(j.torque_limit > 0.0) {
                return Err(bad(format!("joint `{}`: invalid gains", j.name)));
            }
            if !j.origin.is_finite() {
                return Err(bad(format!("joint `{}`: non-finite origin", j.name)));
            }
            joints.push(JointDef {
                name: j.name.clone(),
                parent,
                child,
                origin: j.origin,
                axis,
                limits: j.limits,
                kp: j.kp,
                kd: j.kd,
                torque_limit: j.torque_limit,
            });
        }

        let mut roots = parent_joint
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| i);
        let root = roots
            .next()
            .ok_or_else(|| bad("no root link (every link is a joint child: loop)".into()))?;
        if let Some(extra) = roots.next() {
            return Err(bad(format!(
                "disconnected tree: links `{}` and `{}` both lack a parent",
                self.links[root].name, self.links[extra].name
            )));
        }

        // Parent-before-child order; detects unreachable links and loops.
        let mut topo_order = vec![root];
        let mut visited = vec![false; self.links.len()];
        visited[root] = true;
        let mut cursor = 0;
        while cursor < topo_order.len() {
            let link = topo_order[cursor];
            cursor += 1;
            for (ji, j) in joints.iter().enumerate() {
                if j.parent == link {
                    if visited[j.child] {
                        return Err(bad(format!("loop through joint `{}`", self.joints[ji].name)));
                    }
                    visited[j.child] = true;
                    topo_order.push(j.child);
                }
            }
        }
        if topo_order.len() != self.links.len() {
            let orphan = visited.iter().position(|v| !v).unwrap();
            return Err(bad(format!(
                "link `{}` unreachable from root `{}`",
                self.links[orphan].name, self.links[root].name
            )));
        }

        if self.fingers.len() != NUM_FINGERS {
            return Err(bad(format!(
                "expected {NUM_FINGERS} fingers, found {}",
                self.fingers.len()
            )));
        }
        let mut assigned = [false; NUM_JOINTS];
        let mut fingers = Vec::with_capacity(NUM_FINGERS);
        for f in &self.fingers {
            let mut groups: [Vec<usize>; NUM_GROUPS] = Default::default();
            for (gi, names) in [&f.proximal, &f.intermediate, &f.distal].iter().enumerate() {
                for name in names.iter() {
                    let j = *joint_idx
                        .get(name)
                        .ok_or_else(|| bad(format!("finger `{}`: unknown joint `{name}`", f.name)))?;
                    if assigned[j] {
                        return Err(bad(format!(
                            "joint `{name}` assigned to more than one finger group"
                        )));
                    }
                    assigned[j] = true;
                    groups[gi].push(j);
                }
            }
            if groups[NUM_GROUPS - 1].is_empty() {
                return Err(bad(format!("finger `{}`: empty distal group", f.name)));
            }
            fingers.push(FingerDef {
                name: f.name.clone(),
                groups,
            });
        }
        if let Some(j) = assigned.iter().position(|a| !a) {
            return Err(bad(format!(
                "joint `{}` not assigned to any finger group",
                joints[j].name
            )));
        }

        let mut is_spread = [false; NUM_JOINTS];
        let mut inter_finger_joints = Vec::new();
        for name in &self.inter_finger_joints {
            let j = *joint_idx
                .get(name)
                .ok_or_else(|| bad(format!("unknown inter-finger joint `{name}`")))?;
            is_spread[j] = true;
            inter_finger_joints.push(j);
        }

        let mut ancestor_joints: Vec<Vec<usize>> = vec![Vec::new(); self.links.len()];
        for &link in &topo_order {
            if let Some(j) = parent_joint[link] {
                let mut chain = ancestor_joints[joints[j].parent].clone();
                chain.push(j);
                ancestor_joints[link] = chain;
            }
        }

        Ok(HandDescription {
            name: self.name,
            links: self
                .links
                .into_iter()
                .map(|l| LinkDef {
                    name: l.name,
                    shapes: l.shapes,
                    sample_points: l.sample_points,
                })
                .collect(),
            joints,
            root,
            fingers,
            inter_finger_joints,
            is_spread,
            parent_joint,
            topo_order,
            ancestor_joints,
        })
    }
}

// ---------------------------------------------------------------------------
// Default hand construction

struct FingerParams {
    name: &'static str,
    base: Pose,
    abd_limits: [f64; 2],
    /// (radius, half_length) per link: metacarpal, proximal, intermediate, distal.
    links: [(f64, f64); 4],
}

fn capsule_along_x(radius: f64, half_length: f64) -> ShapePrimitive {
    ShapePrimitive {
        kind: ShapeKind::Capsule {
            radius,
            half_length,
        },
        pose: Pose::new(
            Vec3::new(half_length, 0.0, 0.0),
            Quat::from_rot_y(90f64.to_radians()),
        ),
    }
}

/// Probe points at stations along a capsule laid on +x: the pad line (+z)
/// plus both flanks, so objects cannot slide through a link side unseen.
/// Distal links get extra points on the end cap.
fn pad_points(radius: f64, half_length: f64, count: usize, tip: bool) -> Vec<Vec3> {
    let len = 2.0 * half_length;
    let mut pts = Vec::with_capacity(count * 3 + if tip { 5 } else { 0 });
    for i in 0..count {
        let x = len * (i as f64 + 0.5) / count as f64;
        pts.push(Vec3::new(x, 0.0, radius));
        pts.push(Vec3::new(x, radius, 0.0));
        pts.push(Vec3::new(x, -radius, 0.0));
    }
    if tip {
        for phi in [45f64, 0.0, -45.0] {
            let (s, c) = phi.to_radians().sin_cos();
            pts.push(Vec3::new(len + radius * c, 0.0, radius * s));
        }
        pts.push(Vec3::new(len, radius, 0.0));
        pts.push(Vec3::new(len, -radius, 0.0));
    }
    pts
}

fn build_default() -> Result<HandDescription> {
    let flex_limits = [-0.1, 1.9];
    let (kp, kd, tl) = (3.0, 0.1, 0.95);
    let fingers = [
        FingerParams {
            name: "index",
            base: Pose::from_translation(Vec3::new(0.06, 0.035, 0.0)),
            abd_limits: [-0.35, 0.35],
            links: [(0.007, 0.006), (0.008, 0.02), (0.0075, 0.015), (0.007, 0.0125)],
        },
        FingerParams {
            name: "middle",
            base: Pose::from_translation(Vec3::new(0.06, 0.0, 0.0)),
            abd_limits: [-0.35, 0.35],
            links: [(0.007, 0.006), (0.008, 0.022), (0.0075, 0.016), (0.007, 0.0125)],
        },
        FingerParams {
            name: "ring",
            base: Pose::from_translation(Vec3::new(0.06, -0.035, 0.0)),
            abd_limits: [-0.35, 0.35],
            links: [(0.007, 0.006), (0.008, 0.02), (0.0075, 0.015), (0.007, 0.0125)],
        },
        FingerParams {
            name: "thumb",
            base: Pose::new(
                Vec3::new(0.01, -0.05, 0.005),
                Quat::from_rot_z(90f64.to_radians()),
            ),
            abd_limits: [-0.6, 0.6],
            links: [(0.008, 0.008), (0.009, 0.022), (0.0085, 0.016), (0.008, 0.0135)],
        },
    ];

    let palm = LinkFile {
        name: "palm".into(),
        shapes: vec![ShapePrimitive {
            kind: ShapeKind::Box {
                half_extents: Vec3::new(0.05, 0.045, 0.012),
            },
            pose: Pose::from_translation(Vec3::new(0.01, 0.0, -0.012)),
        }],
        sample_points: {
            // 10 mm column pitch across the palm face; a coarser grid lets
            // handle-sized cylinders sink between probe columns on glancing
            // normals.
            let mut pts = Vec::new();
            for ix in 0..11 {
                let x = -0.04 + 0.01 * ix as f64;
                for iy in 0..5 {
                    pts.push(Vec3::new(x, -0.045 + 0.0225 * iy as f64, 0.0));
                }
            }
            pts
        },
    };

    let mut links = vec![palm];
    let mut joints = Vec::new();
    let mut finger_files = Vec::new();
    let mut inter = Vec::new();

    for fp in &fingers {
        let fname = fp.name;
        let link_names = ["meta", "prox", "mid", "dist"];
        let joint_names = ["abd", "mcp", "pip", "dip"];
        for (li, &(r, hl)) in fp.links.iter().enumerate() {
            let distal = li == 3;
            links.push(LinkFile {
                name: format!("{fname}_{}", link_names[li]),
                shapes: vec![capsule_along_x(r, hl)],
                sample_points: pad_points(r, hl, if distal { 3 } else { 4 }, distal),
            });
        }
        for (ji, &jn) in joint_names.iter().enumerate() {
            let (parent, origin, axis, limits) = match ji {
                0 => (
                    "palm".to_string(),
                    fp.base,
                    Vec3::new(0.0, 0.0, 1.0),
                    fp.abd_limits,
                ),
                _ => (
                    format!("{fname}_{}", link_names[ji - 1]),
                    Pose::from_translation(Vec3::new(2.0 * fp.links[ji - 1].1, 0.0, 0.0)),
                    Vec3::new(0.0, -1.0, 0.0),
                    flex_limits,
                ),
            };
            joints.push(JointFile {
                name: format!("{fname}_{jn}"),
                parent,
                child: format!("{fname}_{}", link_names[ji]),
                origin,
                axis,
                limits,
                kp,
                kd,
                torque_limit: tl,
            });
        }
        finger_files.push(FingerFile {
            name: fname.into(),
            proximal: vec![format!("{fname}_abd"), format!("{fname}_mcp")],
            intermediate: vec![format!("{fname}_pip")],
            distal: vec![format!("{fname}_dip")],
        });
        inter.push(format!("{fname}_abd"));
    }

    HandFile {
        name: "hand_16dof".into(),
        links,
        joints,
        fingers: finger_files,
        inter_finger_joints: inter,
    }
    .resolve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_q(rng: &mut StdRng, hand: &HandDescription) -> JointVec {
        let mut q = [0.0; NUM_JOINTS];
        for (i, j) in hand.joints.iter().enumerate() {
            q[i] = rng.gen_range(j.limits[0]..j.limits[1]);
        }
        q
    }

    /// Independent FK oracle: 4x4 homogeneous chain with Rodrigues rotation
    /// matrices, sharing no code with the quaternion implementation.
    mod oracle {
        use super::*;

        #[derive(Clone, Copy)]
        pub struct M4(pub [[f64; 4]; 4]);

        impl M4 {
            pub fn identity() -> M4 {
                let mut m = [[0.0; 4]; 4];
                for (i, row) in m.iter_mut().enumerate() {
                    row[i] = 1.0;
                }
                M4(m)
            }

            pub fn mul(&self, o: &M4) -> M4 {
                let mut r = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        r[i][j] = (0..4).map(|k| self.0[i][k] * o.0[k][j]).sum();
                    }
                }
                M4(r)
            }

            pub fn from_rodrigues(axis: Vec3, angle: f64, t: Vec3) -> M4 {
                let (s, c) = angle.sin_cos();
                let (x, y, z) = (axis.x, axis.y, axis.z);
                let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
                let mut r = [[0.0; 4]; 4];
                for i in 0..3 {
                    for j in 0..3 {
                        let kk: f64 = (0..3).map(|m| k[i][m] * k[m][j]).sum();
                        r[i][j] = if i == j { 1.0 } else { 0.0 } + s * k[i][j] + (1.0 - c) * kk;
                    }
                }
                r[0][3] = t.x;
                r[1][3] = t.y;
                r[2][3] = t.z;
                r[3][3] = 1.0;
                M4(r)
            }

            pub fn from_pose_via_rodrigues(p: &Pose) -> M4 {
                // Axis-angle extracted from the quaternion, rebuilt by Rodrigues.
                let q = p.rotation;
                let s = (1.0 - q.w * q.w).max(0.0).sqrt();
                if s < 1e-12 {
                    M4::from_rodrigues(Vec3::new(0.0, 0.0, 1.0), 0.0, p.translation)
                } else {
                    let axis = Vec3::new(q.x / s, q.y / s, q.z / s);
                    let angle = 2.0 * q.w.clamp(-1.0, 1.0).acos();
                    M4::from_rodrigues(axis, angle, p.translation)
                }
            }

            pub fn translation(&self) -> Vec3 {
                Vec3::new(self.0[0][3], self.0[1][3], self.0[2][3])
            }

            pub fn rotate(&self, v: Vec3) -> Vec3 {
                Vec3::new(
                    self.0[0][0] * v.x + self.0[0][1] * v.y + self.0[0][2] * v.z,
                    self.0[1][0] * v.x + self.0[1][1] * v.y + self.0[1][2] * v.z,
                    self.0[2][0] * v.x + self.0[2][1] * v.y + self.0[2][2] * v.z,
                )
            }
        }

        pub fn fk(hand: &HandDescription, wrist: &Pose, q: &JointVec) -> Vec<M4> {
            let mut out = vec![M4::identity(); hand.links.len()];
            out[hand.root] = M4::from_pose_via_rodrigues(wrist);
            for &link in &hand.topo_order {
                let Some(ji) = hand.parent_joint[link] else {
                    continue;
                };
                let j = &hand.joints[ji];
                let m = out[j.parent]
                    .mul(&M4::from_pose_via_rodrigues(&j.origin))
                    .mul(&M4::from_rodrigues(j.axis, q[ji], Vec3::ZERO));
                out[link] = m;
            }
            out
        }
    }

    #[test]
    fn default_hand_is_valid_and_sized() {
        let hand = HandDescription::default_16dof();
        assert_eq!(hand.joints.len(), NUM_JOINTS);
        assert_eq!(hand.links.len(), 17);
        assert_eq!(hand.fingers.len(), NUM_FINGERS);
        assert_eq!(hand.inter_finger_joints.len(), NUM_FINGERS);
        // Each joint in exactly one finger/group (validated at build, spot-check counts).
        let total: usize = hand
            .fingers
            .iter()
            .map(|f| f.joints().count())
            .sum();
        assert_eq!(total, NUM_JOINTS);
        assert!(hand.total_sample_points() > 60);
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let hand = HandDescription::default_16dof();
        let text = hand.to_toml_string();
        let back = HandDescription::parse_toml(&text).unwrap();
        assert_eq!(hand.links.len(), back.links.len());
        for (a, b) in hand.joints.iter().zip(&back.joints) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.origin, b.origin);
            assert_eq!(a.axis, b.axis);
            assert_eq!(a.limits, b.limits);
        }
        for (a, b) in hand.links.iter().zip(&back.links) {
            assert_eq!(a.sample_points, b.sample_points);
            assert_eq!(a.shapes, b.shapes);
        }
    }

    #[test]
    fn zero_config_composes_with_wrist() {
        let hand = HandDescription::default_16dof();
        let q = [0.0; NUM_JOINTS];
        let at_identity = hand.forward_kinematics(&Pose::IDENTITY, &q);
        let wrist = Pose::new(Vec3::new(0.3, -0.1, 0.5), Quat::from_rot_x(0.7));
        let moved = hand.forward_kinematics(&wrist, &q);
        for (a, b) in at_identity.iter().zip(&moved) {
            let expect = wrist.compose(a);
            assert!(expect.translation.distance(b.translation) < 1e-12);
            assert!(crate::math::rotation_distance_rad(expect.rotation, b.rotation) < 1e-7);
        }
    }

    #[test]
    fn single_joint_moves_only_its_subtree() {
        let hand = HandDescription::default_16dof();
        let q0 = [0.0; NUM_JOINTS];
        let mut q1 = q0;
        // index_pip is joint 2; its subtree is index_mid and index_dist.
        let pip = hand.joints.iter().position(|j| j.name == "index_pip").unwrap();
        q1[pip] = 0.8;
        let a = hand.forward_kinematics(&Pose::IDENTITY, &q0);
        let b = hand.forward_kinematics(&Pose::IDENTITY, &q1);
        let subtree: Vec<usize> = (0..hand.links.len())
            .filter(|&l| hand.ancestor_joints[l].contains(&pip))
            .collect();
        assert_eq!(subtree.len(), 2);
        for l in 0..hand.links.len() {
            let moved = a[l].translation.distance(b[l].translation) > 1e-12
                || crate::math::rotation_distance_rad(a[l].rotation, b[l].rotation) > 1e-12;
            assert_eq!(moved, subtree.contains(&l), "link {}", hand.links[l].name);
        }
    }

    #[test]
    fn fk_matches_rodrigues_oracle() {
        let hand = HandDescription::default_16dof();
        let mut rng = StdRng::seed_from_u64(2024);
        let mut max_err = 0.0f64;
        for _ in 0..1000 {
            let wrist = Pose::new(
                Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
                Quat::from_axis_angle(
                    Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    rng.gen_range(-3.0..3.0),
                ),
            );
            let q = random_q(&mut rng, &hand);
            let got = hand.forward_kinematics(&wrist, &q);
            let want = oracle::fk(&hand, &wrist, &q);
            for f in 0..NUM_FINGERS {
                let tip_link = hand.distal_link(f);
                let tip_local = *hand.links[tip_link].sample_points.last().unwrap();
                let got_tip = got[tip_link].transform_point(tip_local);
                let want_tip = want[tip_link].translation() + want[tip_link].rotate(tip_local);
                max_err = max_err.max(got_tip.distance(want_tip));
            }
        }
        assert!(max_err < 1e-9, "max fingertip error {max_err}");
    }

    #[test]
    fn velocity_fk_matches_finite_difference() {
        let hand = HandDescription::default_16dof();
        let mut rng = StdRng::seed_from_u64(9);
        let q = random_q(&mut rng, &hand);
        let mut qdot = [0.0; NUM_JOINTS];
        for v in &mut qdot {
            *v = rng.gen_range(-2.0..2.0);
        }
        let wrist = Pose::new(Vec3::new(0.1, 0.0, 0.2), Quat::from_rot_z(0.4));
        let wrist_vel = SpatialVel {
            linear: Vec3::new(0.3, -0.2, 0.1),
            angular: Vec3::new(0.5, 0.1, -0.7),
        };
        let h = 1e-7;
        // Advance wrist and q by h along their velocities.
        let dq_rot = Quat::from_rotation_vector(wrist_vel.angular * h);
        let wrist2 = Pose::new(
            wrist.translation + wrist_vel.linear * h,
            dq_rot.mul(wrist.rotation),
        );
        let mut q2 = q;
        for i in 0..NUM_JOINTS {
            q2[i] += qdot[i] * h;
        }
        let fk1 = hand.fk_full(&wrist, &wrist_vel, &q, &qdot);
        let fk2 = hand.fk_full(&wrist2, &wrist_vel, &q2, &qdot);
        for l in 0..hand.links.len() {
            // Check the velocity of each link's first sample point.
            let Some(&pt) = hand.links[l].sample_points.first() else {
                continue;
            };
            let p1 = fk1.links[l].pose.transform_point(pt);
            let p2 = fk2.links[l].pose.transform_point(pt);
            let fd = (p2 - p1) / h;
            let an = fk1.links[l].point_velocity(p1);
            assert!(
                fd.distance(an) < 1e-5,
                "link {} point velocity: fd {fd:?} vs {an:?}",
                hand.links[l].name
            );
        }
    }

    #[test]
    fn pd_torque_examples() {
        let hand = HandDescription::default_16dof();
        let mut st = JointState::default();
        // At target, at rest: zero torque.
        assert_eq!(hand.pd_torque(&st), [0.0; NUM_JOINTS]);
        // 0.1 rad error, kp = 3, kd damping at rest: 0.3 N·m.
        st.q_target[5] = 0.1;
        let tau = hand.pd_torque(&st);
        assert!((tau[5] - 0.3).abs() < 1e-12);
        // Saturation at the torque limit.
        st.q_target[5] = 10.0;
        let tau = hand.pd_torque(&st);
        assert!((tau[5] - 0.95).abs() < 1e-12);
        st.q_target[5] = -10.0;
        let tau = hand.pd_torque(&st);
        assert!((tau[5] + 0.95).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_malformed_trees() {
        let hand = HandDescription::default_16dof();
        let good = hand.to_toml_string();

        // Loop: point a joint's child back at the palm.
        let looped = good.replace("child = \"thumb_dist\"", "child = \"palm\"");
        assert!(matches!(
            HandDescription::parse_toml(&looped),
            Err(Error::Validation(_))
        ));

        // Group membership violation: drop a joint from its finger.
        let unassigned = good.replace("intermediate = [\"ring_pip\"]", "intermediate = []");
        let err = HandDescription::parse_toml(&unassigned).unwrap_err();
        assert!(err.to_string().contains("ring_pip"), "{err}");

        // Double assignment.
        let doubled = good.replace(
            "intermediate = [\"ring_pip\"]",
            "intermediate = [\"ring_pip\", \"index_dip\"]",
        );
        assert!(HandDescription::parse_toml(&doubled).is_err());

        // Unknown parent link.
        let unknown = good.replace("parent = \"index_mid\"", "parent = \"nonexistent\"");
        assert!(HandDescription::parse_toml(&unknown).is_err());
    }

    #[test]
    fn limits_clamp() {
        let hand = HandDescription::default_16dof();
        let mut q = [10.0; NUM_JOINTS];
        hand.clamp_to_limits(&mut q);
        for (i, j) in hand.joints.iter().enumerate() {
            assert_eq!(q[i], j.limits[1]);
        }
    }
}
