//! Task specifications: analytic disturbance force models, domain
//! randomization, scene obstacles, and the bundle tying an object, a
//! demonstration trajectory, and per-task configuration together.

use crate::error::{Error, Result};
use crate::math::{Pose, Vec3, Wrench, WrenchFrame};
use crate::object::{material_preset, ObjectModel};
use crate::physics::{MaterialParams, Obstacle, RigidObject};
use crate::shapes::ShapePrimitive;
use crate::trajectory::DemoTrajectory;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceKind {
    /// Velocity-opposing drag at the attachment point: `F = -k * v_eff`.
    Resistive,
    /// Constant directional load: `F = k * d_hat` inside the active window.
    Application,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ForceModel {
    pub kind: ForceKind,
    /// Resistive: N·s/m. Application: N.
    pub k: f64,
    /// Object-frame point the force acts at.
    pub attachment_point: Vec3,
    /// World-frame direction, application kind only.
    #[serde(default)]
    pub direction: Vec3,
    /// Fractions of the episode during which the force is active.
    #[serde(default = "full_window")]
    pub active_window: [f64; 2],
}

fn full_window() -> [f64; 2] {
    [0.0, 1.0]
}

impl ForceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0) {
            return Err(Error::Validation(format!("force k must be >= 0: {}", self.k)));
        }
        let [a, b] = self.active_window;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(Error::Validation(format!(
                "active_window must satisfy 0 <= start <= end <= 1: [{a}, {b}]"
            )));
        }
        if self.kind == ForceKind::Application && (self.direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "application force direction must be unit-norm: {:?}",
                self.direction
            )));
        }
        if !self.attachment_point.is_finite() {
            return Err(Error::Validation("non-finite attachment point".into()));
        }
        Ok(())
    }

    pub fn active(&self, t_frac: f64) -> bool {
        t_frac >= self.active_window[0] && t_frac <= self.active_window[1]
    }

    /// World position of the attachment point for a given object pose.
    pub fn attachment_world(&self, object_pose: &Pose) -> Vec3 {
        object_pose.transform_point(self.attachment_point)
    }

    /// Drag opposing the attachment point's world velocity (linear + omega x r).
    /// Force only; the consumer applies it at the attachment point so the
    /// moment about the COM arises naturally.
    pub fn eval_resistive(&self, object: &RigidObject, t_frac: f64) -> Wrench {
        debug_assert_eq!(self.kind, ForceKind::Resistive);
        if !self.active(t_frac) {
            return Wrench::zero(WrenchFrame::World);
        }
        let v_eff = object.point_velocity(self.attachment_world(&object.pose));
        Wrench::world(v_eff * -self.k, Vec3::ZERO)
    }

    /// Constant directional load inside the window, zero outside.
    pub fn eval_application(&self, t_frac: f64) -> Wrench {
        debug_assert_eq!(self.kind, ForceKind::Application);
        if !self.active(t_frac) {
            return Wrench::zero(WrenchFrame::World);
        }
        Wrench::world(self.direction * self.k, Vec3::ZERO)
    }
}

/// Relative half-ranges for per-episode scaling, each in [0, 1).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationSpec {
    pub mass: f64,
    pub friction: f64,
    pub force_coefficients: f64,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        RandomizationSpec {
            mass: 0.30,
            friction: 0.30,
            force_coefficients: 0.30,
        }
    }
}

impl RandomizationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("mass", self.mass),
            ("friction", self.friction),
            ("force_coefficients", self.force_coefficients),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Validation(format!(
                    "randomization range {name} must be in [0, 1): {r}"
                )));
            }
        }
        Ok(())
    }
}

fn factor(r: f64, rng: &mut impl Rng) -> f64 {
    if r == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - r..=1.0 + r)
    }
}

/// Static scene geometry entry in a task file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub name: String,
    pub shapes: Vec<ShapePrimitive>,
    #[serde(default)]
    pub pose: Pose,
    #[serde(default)]
    pub material: Option<String>,
}

impl ObstacleSpec {
    pub fn build(&self) -> Result<Obstacle> {
        for s in &self.shapes {
            s.kind.validate()?;
        }
        let material = match &self.material {
            Some(name) => material_preset(name).ok_or_else(|| {
                Error::Validation(format!(
                    "obstacle `{}`: unknown material `{name}`",
                    self.name
                ))
            })?,
            None => MaterialParams::default(),
        };
        Ok(Obstacle::new(self.name.clone(), self.shapes.clone(), self.pose, material))
    }
}

#[derive(Clone, Debug, Deserialize)]
struct TaskFile {
    name: String,
    object: String,
    trajectory: String,
    /// Demonstrated wrist pose at the task start, world frame.
    demo_wrist: Pose,
    #[serde(default)]
    forces: Vec<ForceModel>,
    #[serde(default)]
    obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    randomization: RandomizationSpec,
    /// Episode length override; defaults to the resampled trajectory length.
    #[serde(default)]
    episode_ticks: Option<usize>,
    completion_proxy: String,
    /// Hammer: reference normal impulse for a fully driven nail, N·s.
    #[serde(default)]
    drive_impulse_ref: Option<f64>,
}

pub const COMPLETION_PROXIES: [&str; 5] = ["hammer", "saw", "cut", "stir", "scoop"];

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub name: String,
    pub object_path: PathBuf,
    pub trajectory_path: PathBuf,
    pub demo_wrist: Pose,
    pub forces: Vec<ForceModel>,
    pub obstacles: Vec<ObstacleSpec>,
    pub randomization: RandomizationSpec,
    pub episode_ticks: Option<usize>,
    pub completion_proxy: String,
    pub drive_impulse_ref: Option<f64>,
}

/// A task spec with its referenced assets loaded and validated.
#[derive(Clone, Debug)]
pub struct TaskBundle {
    pub spec: TaskSpec,
    pub object: ObjectModel,
    pub trajectory: DemoTrajectory,
}

impl TaskSpec {
    pub fn parse_toml(text: &str, base_dir: &Path) -> Result<TaskSpec> {
        let file: TaskFile =
            toml::from_str(text).map_err(|e| Error::parse("task spec", 0, e.to_string()))?;
        for f in &file.forces {
            f.validate()?;
        }
        file.randomization.validate()?;
        if !file.demo_wrist.is_finite() {
            return Err(Error::Validation("non-finite demo_wrist".into()));
        }
        if !COMPLETION_PROXIES.contains(&file.completion_proxy.as_str()) {
            return Err(Error::UnknownTask(file.completion_proxy));
        }
        if file.completion_proxy == "hammer" && file.drive_impulse_ref.is_none() {
            return Err(Error::Validation(
                "hammer tasks need drive_impulse_ref".into(),
            ));
        }
        if let Some(r) = file.drive_impulse_ref {
            if !(r > 0.0) {
                return Err(Error::Validation(format!(
                    "drive_impulse_ref must be positive: {r}"
                )));
            }
        }
        for o in &file.obstacles {
            o.build()?;
        }
        Ok(TaskSpec {
            name: file.name,
            object_path: base_dir.join(&file.object),
            trajectory_path: base_dir.join(&file.trajectory),
            demo_wrist: file.demo_wrist,
            forces: file.forces,
            obstacles: file.obstacles,
            randomization: file.randomization,
            episode_ticks: file.episode_ticks,
            completion_proxy: file.completion_proxy,
            drive_impulse_ref: file.drive_impulse_ref,
        })
    }

    pub fn load(path: &Path) -> Result<TaskSpec> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_toml(&text, base)
    }
}

impl TaskBundle {
    pub fn load(path: &Path) -> Result<TaskBundle> {
        let spec = TaskSpec::load(path)?;
        let object = ObjectModel::load(&spec.object_path)?;
        let trajectory = DemoTrajectory::load(&spec.trajectory_path)?;
        Ok(TaskBundle {
            spec,
            object,
            trajectory,
        })
    }

    /// The demonstrated grasp: wrist pose expressed in the object frame at
    /// the task start, `T_grasp = inverse(T_obj^0) * T_wrist^0`.
    pub fn demo_grasp(&self) -> Pose {
        self.trajectory.samples[0].1.inverse().compose(&self.spec.demo_wrist)
    }
}

/// Per-episode randomized quantities.
#[derive(Clone, Debug)]
pub struct EpisodeSetup {
    pub object: ObjectModel,
    pub forces: Vec<ForceModel>,
    /// The drawn factors, for logging: (mass, friction, per-force k).
    pub factors: (f64, f64, Vec<f64>),
}

/// Draw one episode's domain randomization: mass (inertia rescales with it),
/// hand-object friction, and each force coefficient.
pub fn randomize(bundle: &TaskBundle, rng: &mut impl Rng) -> EpisodeSetup {
    let r = &bundle.spec.randomization;
    let mass_f = factor(r.mass, rng);
    let friction_f = factor(r.friction, rng);
    let object = bundle
        .object
        .with_mass_factor(mass_f)
        .with_friction_factor(friction_f);
    let mut force_fs = Vec::with_capacity(bundle.spec.forces.len());
    let forces = bundle
        .spec
        .forces
        .iter()
        .map(|f| {
            let kf = factor(r.force_coefficients, rng);
            force_fs.push(kf);
            ForceModel {
                k: f.k * kf,
                ..*f
            }
        })
        .collect();
    EpisodeSetup {
        object,
        forces,
        factors: (mass_f, friction_f, force_fs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Quat;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn sphere_object() -> ObjectModel {
        ObjectModel::parse_toml(
            "name = \"ball\"\nmass = 1.0\n[[shapes]]\nkind = \"sphere\"\nradius = 0.05\n",
        )
        .unwrap()
    }

    fn resistive(k: f64, attachment: Vec3) -> ForceModel {
        ForceModel {
            kind: ForceKind::Resistive,
            k,
            attachment_point: attachment,
            direction: Vec3::ZERO,
            active_window: [0.0, 1.0],
        }
    }

    #[test]
    fn resistive_examples() {
        let model = sphere_object();
        let mut obj = RigidObject::from_model(&model, Pose::IDENTITY);

        // At rest: zero wrench.
        let f = resistive(2.0, Vec3::ZERO);
        assert_eq!(f.eval_resistive(&obj, 0.5).force, Vec3::ZERO);

        // Translating at (0.5, 0, 0) with k = 2: force (-1, 0, 0).
        obj.set_velocity(Vec3::new(0.5, 0.0, 0.0), Vec3::ZERO);
        let w = f.eval_resistive(&obj, 0.5);
        assert!(w.force.distance(Vec3::new(-1.0, 0.0, 0.0)) < 1e-12);

        // Pure rotation omega = (0,0,1), attachment 0.3 m out: v_eff = (0, 0.3, 0).
        obj.set_velocity(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let tip = resistive(2.0, Vec3::new(0.3, 0.0, 0.0));
        let w = tip.eval_resistive(&obj, 0.5);
        assert!(w.force.distance(Vec3::new(0.0, -0.6, 0.0)) < 1e-12);

        // Outside the window: zero.
        let windowed = ForceModel {
            active_window: [0.0, 0.4],
            ..tip
        };
        assert_eq!(windowed.eval_resistive(&obj, 0.5).force, Vec3::ZERO);
    }

    #[test]
    fn resistive_power_is_dissipative() {
        let model = sphere_object();
        let mut rng = StdRng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..500 {
            let mut obj = RigidObject::from_model(
                &model,
                Pose::new(
                    Vec3::new(rng.gen_range(-1.0..1.0), 0.0, 0.0),
                    Quat::from_rot_z(rng.gen_range(-3.0..3.0)),
                ),
            );
            obj.set_velocity(
                Vec3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
                Vec3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                ),
            );
            let f = resistive(
                rng.gen_range(0.0..5.0),
                Vec3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ),
            );
            let w = f.eval_resistive(&obj, 0.5);
            let v_eff = obj.point_velocity(f.attachment_world(&obj.pose));
            assert!(w.force.dot(v_eff) <= 1e-12);
        }
    }

    #[test]
    fn application_examples() {
        let scoop = ForceModel {
            kind: ForceKind::Application,
            k: 0.35,
            attachment_point: Vec3::new(0.0, 0.29, 0.0),
            direction: Vec3::new(0.0, 0.0, -1.0),
            active_window: [0.2, 0.8],
        };
        scoop.validate().unwrap();
        assert_eq!(scoop.eval_application(0.1).force, Vec3::ZERO);
        assert_eq!(scoop.eval_application(0.9).force, Vec3::ZERO);
        let w = scoop.eval_application(0.5);
        assert!(w.force.distance(Vec3::new(0.0, 0.0, -0.35)) < 1e-15);
        // Constant inside the window.
        assert_eq!(scoop.eval_application(0.2).force, w.force);
        assert_eq!(scoop.eval_application(0.8).force, w.force);

        let always = ForceModel {
            active_window: [0.0, 1.0],
            ..scoop
        };
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            assert_eq!(always.eval_application(t).force, w.force);
        }
    }

    #[test]
    fn force_validation() {
        let mut f = resistive(-1.0, Vec3::ZERO);
        assert!(f.validate().is_err());
        f.k = 1.0;
        f.active_window = [0.6, 0.4];
        assert!(f.validate().is_err());
        let app = ForceModel {
            kind: ForceKind::Application,
            k: 1.0,
            attachment_point: Vec3::ZERO,
            direction: Vec3::new(0.0, 0.0, -2.0),
            active_window: [0.0, 1.0],
        };
        assert!(app.validate().is_err());
    }

    const STIR_TASK: &str = r#"
name = "stir"
object = "ladle.toml"
trajectory = "stir.traj"
demo_wrist = [0.0, -0.035, 0.32, 1.0, 0.0, 0.0, 0.0]
completion_proxy = "stir"

[[forces]]
kind = "resistive"
k = 1.5
attachment_point = [0.0, 0.29, 0.0]

[randomization]
mass = 0.3
friction = 0.3
force_coefficients = 0.3
"#;

    #[test]
    fn parses_task_spec() {
        let spec = TaskSpec::parse_toml(STIR_TASK, Path::new("/assets")).unwrap();
        assert_eq!(spec.name, "stir");
        assert_eq!(spec.object_path, PathBuf::from("/assets/ladle.toml"));
        assert_eq!(spec.forces.len(), 1);
        assert_eq!(spec.forces[0].active_window, [0.0, 1.0]);
        assert!(spec.drive_impulse_ref.is_none());
    }

    #[test]
    fn rejects_bad_task_specs() {
        let bad_proxy = STIR_TASK.replace("completion_proxy = \"stir\"", "completion_proxy = \"juggle\"");
        assert!(TaskSpec::parse_toml(&bad_proxy, Path::new(".")).is_err());
        let bad_k = STIR_TASK.replace("k = 1.5", "k = -1.5");
        assert!(TaskSpec::parse_toml(&bad_k, Path::new(".")).is_err());
        // Hammer proxy requires a drive impulse reference.
        let hammer = STIR_TASK.replace("completion_proxy = \"stir\"", "completion_proxy = \"hammer\"");
        assert!(TaskSpec::parse_toml(&hammer, Path::new(".")).is_err());
    }

    #[test]
    fn bundle_loads_and_extracts_demo_grasp() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("ladle.toml"),
            "name = \"ladle\"\nmass = 0.06\n[[shapes]]\nkind = \"capsule\"\nradius = 0.01\nhalf_length = 0.12\n",
        )
        .unwrap();
        let traj = crate::demo::stir_circle(3, 4.0).unwrap();
        std::fs::write(dir.path().join("stir.traj"), traj.to_text()).unwrap();
        std::fs::write(dir.path().join("stir.toml"), STIR_TASK).unwrap();

        let bundle = TaskBundle::load(&dir.path().join("stir.toml")).unwrap();
        assert_eq!(bundle.object.name, "ladle");
        assert!(bundle.trajectory.samples.len() > 100);
        // demo_grasp satisfies T_wrist = T_obj0 * T_grasp.
        let grasp = bundle.demo_grasp();
        let back = bundle.trajectory.samples[0].1.compose(&grasp);
        assert!(back.translation.distance(bundle.spec.demo_wrist.translation) < 1e-9);
    }

    #[test]
    fn randomization_statistics() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("ladle.toml"),
            "name = \"ladle\"\nmass = 0.06\n[[shapes]]\nkind = \"capsule\"\nradius = 0.01\nhalf_length = 0.12\n",
        )
        .unwrap();
        let traj = crate::demo::stir_circle(2, 2.0).unwrap();
        std::fs::write(dir.path().join("stir.traj"), traj.to_text()).unwrap();
        std::fs::write(dir.path().join("stir.toml"), STIR_TASK).unwrap();
        let bundle = TaskBundle::load(&dir.path().join("stir.toml")).unwrap();

        // r = 0: exact identity.
        let mut zero = bundle.clone();
        zero.spec.randomization = RandomizationSpec {
            mass: 0.0,
            friction: 0.0,
            force_coefficients: 0.0,
        };
        let mut rng = StdRng::seed_from_u64(1);
        let setup = randomize(&zero, &mut rng);
        assert_eq!(setup.object.mass, bundle.object.mass);
        assert_eq!(setup.forces[0].k, bundle.spec.forces[0].k);

        // r = 0.3 over 10^4 draws: bounded support, mean within 0.01 of 1.
        let mut rng = StdRng::seed_from_u64(2);
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let s = randomize(&bundle, &mut rng);
            let f = s.factors.0;
            assert!((0.7..=1.3).contains(&f), "factor out of range: {f}");
            sum += f;
            // Inertia rescaled with mass.
            let ratio = s.object.inertia_body.0[0][0] / bundle.object.inertia_body.0[0][0];
            assert!((ratio - f).abs() < 1e-12);
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");

        // Fixed seed: reproducible.
        let a = randomize(&bundle, &mut StdRng::seed_from_u64(9)).factors;
        let b = randomize(&bundle, &mut StdRng::seed_from_u64(9)).factors;
        assert_eq!(a, b);
    }
}
