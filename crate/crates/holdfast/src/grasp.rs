//! Grasp synthesis: sample wrist perturbations and closure parameters around
//! a demonstrated grasp, close the fingers on the frozen object until torque
//! thresholds fire, settle, and archive the surviving candidates.

use crate::error::{Error, Result};
use crate::hand::{HandDescription, JointVec, NUM_GROUPS, NUM_JOINTS};
use crate::math::{Pose, Quat, Vec3};
use crate::object::ObjectModel;
use crate::physics::{ControlAction, SimConfig, World};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// In-hand COM displacement beyond which the object counts as dropped, m.
pub const DROP_DISPLACEMENT: f64 = 0.15;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Wrist perturbation half-ranges, m and rad per axis.
    pub translation_range: Vec3,
    pub rotation_range: Vec3,
    /// Initial angle ranges for the declared inter-finger joints.
    pub finger_spread_range: [f64; 2],
    pub thumb_spread_range: [f64; 2],
    /// Closing-rate range per joint group, rad/s.
    pub group_rate_range: [f64; 2],
    /// Stop threshold range for the torque readout, N·m.
    pub torque_threshold_range: [f64; 2],
    pub settle_duration: f64,
    pub closure_timeout: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let r15 = 15f64.to_radians();
        SamplerConfig {
            translation_range: Vec3::new(0.03, 0.03, 0.03),
            rotation_range: Vec3::new(r15, r15, r15),
            finger_spread_range: [-0.20, 0.20],
            thumb_spread_range: [-0.40, 0.40],
            group_rate_range: [0.3, 1.5],
            torque_threshold_range: [0.1, 0.6],
            settle_duration: 1.0,
            closure_timeout: 4.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
        let ok = self.translation_range.is_finite()
            && self.rotation_range.is_finite()
            && ordered(self.finger_spread_range)
            && ordered(self.group_rate_range)
            && ordered(self.thumb_spread_range)
            && ordered(self.torque_threshold_range)
            && self.group_rate_range[0] >= 0.0
            && self.torque_threshold_range[0] >= 0.0
            && self.settle_duration >= 0.0
            && self.closure_timeout > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("malformed sampler config".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    /// Commanded PD setpoints at closure stop.
    pub q_o: Vec<f64>,
    /// Wrist pose in the settled object's frame.
    pub t_grasp: Pose,
    pub sampler_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stability: Option<crate::stability::StabilityReport>,
}

impl GraspCandidate {
    pub fn q_o_array(&self) -> Result<JointVec> {
        self.q_o
            .as_slice()
            .try_into()
            .map_err(|_| Error::DimensionMismatch {
                context: "candidate q_o".into(),
                expected: NUM_JOINTS,
                actual: self.q_o.len(),
            })
    }
}

/// One closure run's drawn parameters.
#[derive(Clone, Debug)]
pub struct ClosureParams {
    /// (joint index, initial angle) for spread joints.
    pub spread: Vec<(usize, f64)>,
    /// Target advance rate per joint group, rad/s.
    pub rates: [f64; NUM_GROUPS],
    /// Readout magnitude at which a joint stops closing.
    pub tau_stop: f64,
    /// Joints that participate in closure.
    pub active: [bool; NUM_JOINTS],
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Uniform per-axis wrist perturbation: `T_wrist_demo ∘ T_perturb`.
pub fn sample_wrist_pose(t_wrist_demo: &Pose, cfg: &SamplerConfig, rng: &mut impl Rng) -> Pose {
    let t = cfg.translation_range;
    let r = cfg.rotation_range;
    let translation = Vec3::new(
        uniform(rng, -t.x, t.x),
        uniform(rng, -t.y, t.y),
        uniform(rng, -t.z, t.z),
    );
    let ax = uniform(rng, -r.x, r.x);
    let ay = uniform(rng, -r.y, r.y);
    let az = uniform(rng, -r.z, r.z);
    let rotation = Quat::from_rot_z(az)
        .mul(Quat::from_rot_y(ay))
        .mul(Quat::from_rot_x(ax));
    t_wrist_demo.compose(&Pose::new(translation, rotation))
}

/// Uniform draws for spread angles, group rates, and the stop threshold.
pub fn sample_finger_params(
    hand: &HandDescription,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> ClosureParams {
    let mut spread = Vec::with_capacity(hand.inter_finger_joints.len());
    for &j in &hand.inter_finger_joints {
        let range = if hand.joints[j].name.starts_with("thumb") {
            cfg.thumb_spread_range
        } else {
            cfg.finger_spread_range
        };
        let limits = hand.joints[j].limits;
        let angle = uniform(rng, range[0], range[1]).clamp(limits[0], limits[1]);
        spread.push((j, angle));
    }
    let mut rates = [0.0; NUM_GROUPS];
    for r in &mut rates {
        *r = uniform(rng, cfg.group_rate_range[0], cfg.group_rate_range[1]);
    }
    let tau_stop = uniform(
        rng,
        cfg.torque_threshold_range[0],
        cfg.torque_threshold_range[1],
    );
    let mut active = [false; NUM_JOINTS];
    for (j, flag) in active.iter_mut().enumerate() {
        *flag = !hand.is_spread[j];
    }
    ClosureParams {
        spread,
        rates,
        tau_stop,
        active,
    }
}

/// Joint index -> group tier (proximal 0, intermediate 1, distal 2).
fn group_map(hand: &HandDescription) -> [usize; NUM_JOINTS] {
    let mut map = [0usize; NUM_JOINTS];
    for f in &hand.fingers {
        for (tier, joints) in f.groups.iter().enumerate() {
            for &j in joints {
                map[j] = tier;
            }
        }
    }
    map
}

#[derive(Clone, Copy, Debug)]
pub struct ClosureOutcome {
    pub q_o: JointVec,
    pub ticks: usize,
    pub contact_ticks: usize,
}

/// Advance each active joint's target at its group rate until the torque
/// readout exceeds the stop threshold or the limit is reached. The object
/// must be frozen and the wrist already placed.
pub fn execute_closure(
    world: &mut World,
    params: &ClosureParams,
    cfg: &SamplerConfig,
) -> Result<ClosureOutcome> {
    let hand = world.hand.clone();
    let groups = group_map(&hand);
    let control_dt = world.config.control_dt;
    let max_ticks = (cfg.closure_timeout / control_dt).round().max(1.0) as usize;
    let wrist = world.wrist_pose();

    let mut active = params.active;
    let mut targets = world.joints.q_target;
    let mut ticks = 0;
    let mut contact_ticks = 0;
    while active.iter().any(|&a| a) && ticks < max_ticks {
        for j in 0..NUM_JOINTS {
            if !active[j] {
                continue;
            }
            let limits = hand.joints[j].limits;
            let next = targets[j] + params.rates[groups[j]] * control_dt;
            if next >= limits[1] {
                targets[j] = limits[1];
                active[j] = false;
            } else {
                targets[j] = next;
            }
        }
        let snap = world.step(&ControlAction {
            wrist_target: wrist,
            q_target: targets,
        });
        if snap.diverged {
            return Err(Error::Diverged { time: snap.time });
        }
        if snap.contact_count > 0 {
            contact_ticks += 1;
        }
        for j in 0..NUM_JOINTS {
            if active[j] && snap.tau_readout[j].abs() > params.tau_stop {
                active[j] = false;
            }
        }
        ticks += 1;
    }
    if contact_ticks == 0 {
        return Err(Error::NoContactGrasp);
    }
    Ok(ClosureOutcome {
        q_o: targets,
        ticks,
        contact_ticks,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SettleOutcome {
    pub object_pose: Pose,
    pub in_hand: Pose,
    pub dropped: bool,
    pub diverged: bool,
}

/// Unfreeze and run under gravity while holding targets; flags a drop when
/// the in-hand COM displacement exceeds [`DROP_DISPLACEMENT`].
pub fn settle(world: &mut World, duration: f64) -> SettleOutcome {
    let ticks = (duration / world.config.control_dt).round() as usize;
    world.freeze_object(false);
    let action = ControlAction {
        wrist_target: world.wrist_pose(),
        q_target: world.joints.q_target,
    };
    let com_ref = world
        .wrist_pose()
        .inverse()
        .transform_point(world.object.com_world());
    let mut dropped = false;
    let mut diverged = false;
    for _ in 0..ticks {
        let snap = world.step(&action);
        if snap.diverged {
            diverged = true;
            break;
        }
        let com_in_hand = world
            .wrist_pose()
            .inverse()
            .transform_point(world.object.com_world());
        if com_in_hand.distance(com_ref) > DROP_DISPLACEMENT {
            dropped = true;
            break;
        }
    }
    SettleOutcome {
        object_pose: world.object.pose,
        in_hand: world.in_hand_pose(),
        dropped,
        diverged,
    }
}

/// Rebuild a world holding a stored candidate: wrist at
/// `object_pose ∘ t_grasp`, joints at `q_o`, object free under gravity,
/// then a short settle. Returns the world and the reference in-hand pose.
pub fn reinstate(
    sim: &SimConfig,
    hand: &Arc<HandDescription>,
    object: &ObjectModel,
    object_pose: Pose,
    candidate: &GraspCandidate,
    settle_duration: f64,
) -> Result<(World, Pose)> {
    let q_o = candidate.q_o_array()?;
    let wrist = object_pose.compose(&candidate.t_grasp);
    let mut world = World::new(sim.clone(), hand.clone(), object, object_pose, wrist)?;
    // The stored setpoints sit past the object surface (closure advanced them
    // until torque stall), so teleporting the fingers to q_o would start them
    // deeply penetrated. Re-approach against the frozen object instead and
    // let the servo stall at the surface like the original closure did.
    world.freeze_object(true);
    let mut q_start = q_o;
    for (j, q) in q_start.iter_mut().enumerate() {
        if !hand.is_spread[j] {
            *q = 0.0;
        }
    }
    world.set_joint_positions(&q_start);
    let action = ControlAction {
        wrist_target: wrist,
        q_target: q_o,
    };
    let press_ticks = (1.0 / world.config.control_dt).round() as usize;
    for _ in 0..press_ticks {
        let snap = world.step(&action);
        if snap.diverged {
            return Err(Error::Diverged { time: world.time() });
        }
        if snap.qdot.iter().all(|v| v.abs() < 1e-3) {
            break;
        }
    }
    let outcome = settle(&mut world, settle_duration);
    if outcome.diverged {
        return Err(Error::Diverged { time: world.time() });
    }
    if outcome.dropped {
        return Err(Error::ResetFailure(
            "object dropped during reinstatement settle".into(),
        ));
    }
    let reference = world.in_hand_pose();
    Ok((world, reference))
}

/// Everything a synthesis run needs to build one scene.
#[derive(Clone)]
pub struct SynthScene {
    pub sim: SimConfig,
    pub hand: Arc<HandDescription>,
    pub object: ObjectModel,
    /// Object pose during synthesis (trajectory start pose).
    pub object_pose: Pose,
    /// Demonstrated wrist pose, world frame.
    pub demo_wrist: Pose,
}

/// One sample-close-settle run. `stream` picks the RNG stream so batches are
/// order-independent and individually reproducible.
pub fn synth_one(scene: &SynthScene, cfg: &SamplerConfig, seed: u64, stream: u64) -> Result<GraspCandidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let wrist = sample_wrist_pose(&scene.demo_wrist, cfg, &mut rng);
    let params = sample_finger_params(&scene.hand, cfg, &mut rng);

    let mut world = World::new(
        scene.sim.clone(),
        scene.hand.clone(),
        &scene.object,
        scene.object_pose,
        wrist,
    )?;
    world.freeze_object(true);
    let mut q_init = [0.0; NUM_JOINTS];
    for &(j, angle) in &params.spread {
        q_init[j] = angle;
    }
    world.set_joint_positions(&q_init);

    let closure = execute_closure(&mut world, &params, cfg)?;
    let settled = settle(&mut world, cfg.settle_duration);
    if settled.diverged {
        return Err(Error::Diverged { time: world.time() });
    }
    if settled.dropped {
        return Err(Error::ResetFailure("dropped during settle".into()));
    }
    Ok(GraspCandidate {
        q_o: closure.q_o.to_vec(),
        t_grasp: settled.object_pose.inverse().compose(&world.wrist_pose()),
        sampler_seed: stream,
        score: None,
        stability: None,
    })
}

/// Parallel batch synthesis; failures are dropped, order follows the stream
/// index so results are deterministic for a fixed (seed, n).
pub fn synth_batch(
    scene: &SynthScene,
    cfg: &SamplerConfig,
    seed: u64,
    n: usize,
) -> Result<Vec<GraspCandidate>> {
    if n == 0 {
        return Err(Error::Validation("batch size must be >= 1".into()));
    }
    cfg.validate()?;
    Ok((0..n as u64)
        .into_par_iter()
        .filter_map(|i| synth_one(scene, cfg, seed, i).ok())
        .collect())
}

/// Serialized batch output with provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraspArchive {
    pub object_name: String,
    pub object_sha256: String,
    pub sampler_sha256: String,
    pub seed: u64,
    pub requested: usize,
    pub object_pose: Pose,
    pub demo_wrist: Pose,
    pub candidates: Vec<GraspCandidate>,
}

impl GraspArchive {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("archive encode: {e}")))
    }

    pub fn parse_json(text: &str) -> Result<GraspArchive> {
        let archive: GraspArchive = serde_json::from_str(text)
            .map_err(|e| Error::parse("grasp archive", 0, e.to_string()))?;
        for (i, c) in archive.candidates.iter().enumerate() {
            if c.q_o.len() != NUM_JOINTS {
                return Err(Error::DimensionMismatch {
                    context: format!("candidate {i} q_o"),
                    expected: NUM_JOINTS,
                    actual: c.q_o.len(),
                });
            }
            if !c.t_grasp.is_finite() || c.q_o.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("candidate {i} is non-finite")));
            }
            if let Some(s) = c.score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::Validation(format!(
                        "candidate {i} score {s} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(archive)
    }

    pub fn load(path: &std::path::Path) -> Result<GraspArchive> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_json(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}
