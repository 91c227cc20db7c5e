//! Shared test fixtures: a hammer-like object, a wrist pose from which the
//! default hand can wrap its handle, and a minimal lift task with a grasp
//! known to survive reinstatement.

use crate::grasp::{synth_batch, GraspCandidate, SamplerConfig, SynthScene};
use crate::hand::HandDescription;
use crate::math::{Pose, Vec3};
use crate::object::ObjectModel;
use crate::physics::SimConfig;
use crate::rl::env::{AdaptEnv, EnvConfig};
use crate::task::{RandomizationSpec, TaskBundle, TaskSpec};
use crate::trajectory::DemoTrajectory;
use std::sync::{Arc, OnceLock};

pub const HAMMER_TOML: &str = r#"
name = "hammer"
mass = 0.52
material = "wood"

[[shapes]]
kind = "capsule"
radius = 0.014
half_length = 0.115
pose = [0.0, -0.035, 0.0, 0.7071067811865476, 0.7071067811865476, 0.0, 0.0]

[[shapes]]
kind = "box"
half_extents = [0.045, 0.016, 0.016]
pose = [0.0, 0.12, 0.0, 1.0, 0.0, 0.0, 0.0]
"#;

pub fn hammer() -> ObjectModel {
    ObjectModel::parse_toml(HAMMER_TOML).unwrap()
}

/// The hammer lies flat at (0, 0, 0.5): handle capsule along world y at
/// z = 0.5 (bar bottom 0.486), head box hanging off toward +y. The demo
/// wrist puts the bar across the palm with 3 mm of clearance, between the
/// thumb line (x = -0.025, parallel to the bar) and the finger bases
/// (x = +0.025), so the fingers curl over the bar from +x while the thumb
/// curls up against its -x flank.
pub fn hammer_scene() -> SynthScene {
    SynthScene {
        sim: SimConfig::default(),
        hand: Arc::new(HandDescription::default_16dof()),
        object: hammer(),
        object_pose: Pose::from_translation(Vec3::new(0.0, 0.0, 0.5)),
        demo_wrist: Pose::from_translation(Vec3::new(-0.035, 0.0, 0.483)),
    }
}

/// A gentle 3 cm lift over 2 s starting at the synthesis pose.
/// Randomization is zeroed so tests see the nominal object.
pub fn lift_bundle() -> TaskBundle {
    let scene = hammer_scene();
    let start = scene.object_pose;
    let end = Pose::new(start.translation + Vec3::new(0.0, 0.0, 0.03), start.rotation);
    let trajectory = DemoTrajectory::new("object", vec![(0.0, start), (2.0, end)]).unwrap();
    TaskBundle {
        spec: TaskSpec {
            name: "stir".into(),
            object_path: "unused".into(),
            trajectory_path: "unused".into(),
            demo_wrist: scene.demo_wrist,
            forces: vec![],
            obstacles: vec![],
            randomization: RandomizationSpec {
                mass: 0.0,
                friction: 0.0,
                force_coefficients: 0.0,
            },
            episode_ticks: None,
            completion_proxy: "stir".into(),
            drive_impulse_ref: None,
        },
        object: scene.object.clone(),
        trajectory,
    }
}

/// A settled candidate from a fixed-seed batch that also survives
/// reinstatement on the lift task, shared (and cached) across tests.
pub fn lift_candidate() -> GraspCandidate {
    static CACHE: OnceLock<GraspCandidate> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            let scene = hammer_scene();
            let bundle = lift_bundle();
            let cfg = SamplerConfig::default();
            let candidates = synth_batch(&scene, &cfg, 7, 16).unwrap();
            candidates
                .into_iter()
                .find(|c| {
                    AdaptEnv::new(
                        &bundle,
                        scene.hand.clone(),
                        scene.sim.clone(),
                        c,
                        EnvConfig::default(),
                        0,
                    )
                    .is_ok()
                })
                .expect("no candidate reinstates on the lift task")
        })
        .clone()
}

