//! The adaptation environment: replays a demonstrated object trajectory
//! through a stored grasp while task forces disturb the object, and lets a
//! policy nudge the finger targets each control tick.
//!
//! Episode mechanics: the wrist tracks `goal_k ∘ T_grasp`, so a perfectly
//! rigid grasp would reproduce the demonstration exactly; the residual only
//! has to counter in-hand slip. Episodes end at the trajectory end, at the
//! first penalty tick, or on divergence.

use crate::error::{Error, Result};
use crate::grasp::{reinstate, GraspCandidate};
use crate::hand::{HandDescription, JointVec, NUM_JOINTS};
use crate::math::{rotation_distance_rad, Pose};
use crate::metrics::{et_contrib_cm, etheta_contrib_deg, DROP_RADIUS};
use crate::physics::{ControlAction, SimConfig, World};
use crate::task::{randomize, ForceKind, ForceModel, TaskBundle};
use crate::trace::{EpisodeTrace, TraceRow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const OBS_DIM: usize = 3 * NUM_JOINTS + 7 + 1;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Position reward slope, 1/m.
    pub alpha_p: f64,
    pub alpha_q: f64,
    /// Slip thresholds triggering the penalty.
    pub delta_p: f64,
    pub delta_theta: f64,
    pub penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> RewardConfig {
        RewardConfig {
            alpha_p: 10.0,
            alpha_q: 5.0,
            delta_p: 0.03,
            delta_theta: 30.0f64.to_radians(),
            penalty: -50.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0) || !(self.alpha_q > 0.0) {
            return Err(Error::Validation(format!(
                "reward slopes must be positive: alpha_p={}, alpha_q={}",
                self.alpha_p, self.alpha_q
            )));
        }
        if !(self.penalty < 0.0) {
            return Err(Error::Validation(format!(
                "penalty must be negative: {}",
                self.penalty
            )));
        }
        if !(self.delta_p > 0.0) || !(self.delta_theta > 0.0) {
            return Err(Error::Validation("slip thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms {
    pub r_p: f64,
    pub r_q: f64,
    pub r_pen: f64,
    pub total: f64,
}

/// Tracking reward: `r_p = max(1 - alpha_p * |p_err|, 0)`,
/// `r_q = max(1 - alpha_q * (1 - |q_obj . q_goal|), 0)`, plus the penalty
/// when either slip threshold is crossed.
pub fn reward(object_pose: &Pose, goal_pose: &Pose, cfg: &RewardConfig) -> RewardTerms {
    let p_err = object_pose.translation.distance(goal_pose.translation);
    let r_p = (1.0 - cfg.alpha_p * p_err).max(0.0);
    let qdot = object_pose.rotation.dot(goal_pose.rotation).abs().min(1.0);
    let r_q = (1.0 - cfg.alpha_q * (1.0 - qdot)).max(0.0);
    let slipped = p_err > cfg.delta_p
        || rotation_distance_rad(object_pose.rotation, goal_pose.rotation) > cfg.delta_theta;
    let r_pen = if slipped { cfg.penalty } else { 0.0 };
    RewardTerms {
        r_p,
        r_q,
        r_pen,
        total: r_p + r_q + r_pen,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub reward: RewardConfig,
    /// Residual bound, rad per control tick.
    pub max_residual: f64,
    /// Settle time after reinstating the grasp at the trajectory start.
    pub settle_duration: f64,
}

impl Default for EnvConfig {
    fn default() -> EnvConfig {
        EnvConfig {
            reward: RewardConfig::default(),
            max_residual: 0.05,
            settle_duration: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if !(self.max_residual > 0.0) {
            return Err(Error::Validation(format!(
                "max_residual must be positive: {}",
                self.max_residual
            )));
        }
        Ok(())
    }
}

pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: RewardTerms,
    pub done: bool,
}

pub struct AdaptEnv {
    pub world: World,
    hand: Arc<HandDescription>,
    cfg: EnvConfig,
    task_name: String,
    seed: u64,
    /// Goal object poses, index 0 (start) through n_steps (end).
    goals: Vec<Pose>,
    wrists: Vec<Pose>,
    forces: Vec<ForceModel>,
    factors: (f64, f64, Vec<f64>),
    drive_impulse_ref: Option<f64>,
    q_target: JointVec,
    tick: usize,
    n_steps: usize,
    done: bool,
    dropped: bool,
    diverged: bool,
    penalty_tick: Option<usize>,
    obstacle_impulse_total: f64,
    episode_return: f64,
    warned_residual: bool,
    last_obs: Vec<f64>,
    rows: Vec<TraceRow>,
}

impl AdaptEnv {
    /// Builds the world and runs the reset: domain randomization, grasp
    /// reinstatement at the trajectory start, obstacles, one hold tick.
    /// A grasp that cannot hold through the settle is a reset failure.
    pub fn new(
        bundle: &TaskBundle,
        hand: Arc<HandDescription>,
        sim: SimConfig,
        candidate: &GraspCandidate,
        cfg: EnvConfig,
        seed: u64,
    ) -> Result<AdaptEnv> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let setup = randomize(bundle, &mut rng);

        let control_dt = sim.control_dt;
        let n_steps = match bundle.spec.episode_ticks {
            Some(n) => n,
            None => (bundle.trajectory.duration() / control_dt).round() as usize,
        };
        if n_steps == 0 {
            return Err(Error::Validation("episode must cover at least one tick".into()));
        }
        let t0 = bundle.trajectory.start_time();
        let duration = bundle.trajectory.duration();
        let goals: Vec<Pose> = (0..=n_steps)
            .map(|k| {
                bundle
                    .trajectory
                    .sample_at(t0 + duration * k as f64 / n_steps as f64)
            })
            .collect();
        let wrists = crate::trajectory::wrist_targets(&goals, &candidate.t_grasp);

        let (mut world, _reference) = reinstate(
            &sim,
            &hand,
            &setup.object,
            goals[0],
            candidate,
            cfg.settle_duration,
        )?;
        for spec in &bundle.spec.obstacles {
            world.add_obstacle(spec.build()?, &setup.object);
        }

        // One hold tick to obtain a torque readout for the first observation.
        let q_target = world.joints.q_target;
        let snap = world.step(&ControlAction {
            wrist_target: world.wrist_pose(),
            q_target,
        });
        if snap.diverged {
            return Err(Error::ResetFailure("diverged during reset hold".into()));
        }

        let mut env = AdaptEnv {
            world,
            hand,
            cfg,
            task_name: bundle.spec.name.clone(),
            seed,
            goals,
            wrists,
            forces: setup.forces,
            factors: setup.factors,
            drive_impulse_ref: bundle.spec.drive_impulse_ref,
            q_target,
            tick: 0,
            n_steps,
            done: false,
            dropped: false,
            diverged: false,
            penalty_tick: None,
            obstacle_impulse_total: 0.0,
            episode_return: 0.0,
            warned_residual: false,
            last_obs: Vec::new(),
            rows: Vec::new(),
        };
        env.last_obs = env.assemble_obs(&snap.q, &snap.tau_readout)?;
        Ok(env)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn obs(&self) -> &[f64] {
        &self.last_obs
    }

    fn assemble_obs(&self, q: &JointVec, tau: &JointVec) -> Result<Vec<f64>> {
        let mut obs = Vec::with_capacity(OBS_DIM);
        obs.extend_from_slice(q);
        obs.extend_from_slice(&self.q_target);
        obs.extend_from_slice(tau);
        // Goal for the upcoming interval: where the next step should land.
        let s_goal = self.goals[(self.tick + 1).min(self.n_steps)];
        obs.extend_from_slice(&s_goal.to_array7());
        let t_frac = self.tick as f64 / self.n_steps as f64;
        obs.push(t_frac);
        debug_assert_eq!(obs.len(), OBS_DIM);
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation".into()));
        }
        Ok(obs)
    }

    /// Applies the residual, advances the replay one control tick, and
    /// returns the new observation and reward. `delta_q` outside the
    /// residual bound is clamped (misuse of the action interface).
    pub fn step(&mut self, delta_q: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Validation("step called on a finished episode".into()));
        }
        if delta_q.len() != NUM_JOINTS {
            return Err(Error::DimensionMismatch {
                context: "residual action".into(),
                expected: NUM_JOINTS,
                actual: delta_q.len(),
            });
        }
        let mr = self.cfg.max_residual;
        let mut dq = [0.0; NUM_JOINTS];
        for (i, &d) in delta_q.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::NonFinite("residual action".into()));
            }
            if d.abs() > mr + 1e-12 && !self.warned_residual {
                log::warn!(
                    "residual {} exceeds max_residual {}; clamping (joint {})",
                    d,
                    mr,
                    i
                );
                self.warned_residual = true;
            }
            dq[i] = d.clamp(-mr, mr);
        }
        for i in 0..NUM_JOINTS {
            self.q_target[i] += dq[i];
        }
        self.hand.clamp_to_limits(&mut self.q_target);

        let next = self.tick + 1;
        let t_frac_next = next as f64 / self.n_steps as f64;
        for f in &self.forces {
            let w = match f.kind {
                ForceKind::Resistive => f.eval_resistive(&self.world.object, t_frac_next),
                ForceKind::Application => f.eval_application(t_frac_next),
            };
            if w.force.norm() > 0.0 || w.torque.norm() > 0.0 {
                let at = f.attachment_world(&self.world.object.pose);
                self.world.apply_external_wrench(&w, at);
            }
        }

        let snap = self.world.step(&ControlAction {
            wrist_target: self.wrists[next],
            q_target: self.q_target,
        });
        self.tick = next;
        self.obstacle_impulse_total += snap.obstacle_impulse;

        if snap.diverged {
            self.diverged = true;
            self.dropped = true;
            self.done = true;
            self.penalty_tick.get_or_insert(self.tick);
            let r = RewardTerms {
                r_p: 0.0,
                r_q: 0.0,
                r_pen: self.cfg.reward.penalty,
                total: self.cfg.reward.penalty,
            };
            self.episode_return += r.total;
            // The last valid observation is returned; with done set it is
            // only ever used as a bootstrap placeholder.
            return Ok(StepOutcome {
                obs: self.last_obs.clone(),
                reward: r,
                done: true,
            });
        }

        let goal = self.goals[next];
        let r = reward(&snap.object_pose, &goal, &self.cfg.reward);
        self.episode_return += r.total;
        if r.r_pen < 0.0 {
            self.done = true;
            self.penalty_tick.get_or_insert(self.tick);
        }
        let com = self.world.object.com_world();
        if com.distance(self.world.wrist_pose().translation) > DROP_RADIUS {
            self.dropped = true;
        }
        if self.tick == self.n_steps {
            self.done = true;
        }

        self.rows.push(TraceRow {
            t: self.tick as u64,
            object_pose: snap.object_pose,
            goal_pose: goal,
            et_cm: et_contrib_cm(&snap.object_pose, &goal),
            etheta_deg: etheta_contrib_deg(&snap.object_pose, &goal),
            r_p: r.r_p,
            r_q: r.r_q,
            r_pen: r.r_pen,
            q: snap.q,
            dq,
        });

        self.last_obs = self.assemble_obs(&snap.q, &snap.tau_readout)?;
        Ok(StepOutcome {
            obs: self.last_obs.clone(),
            reward: r,
            done: self.done,
        })
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    pub fn dropped(&self) -> bool {
        self.dropped
    }

    /// Episode trace with all metadata the metrics layer consumes.
    pub fn trace(&self) -> EpisodeTrace {
        let mut trace = EpisodeTrace {
            meta: Default::default(),
            rows: self.rows.clone(),
        };
        trace.set_meta("task", &self.task_name);
        trace.set_meta("seed", self.seed);
        trace.set_meta("episode_ticks", self.n_steps);
        trace.set_meta("dropped", self.dropped);
        trace.set_meta("diverged", self.diverged);
        trace.set_meta("penalty_tick", self.penalty_tick.unwrap_or(0));
        trace.set_meta("return", self.episode_return);
        trace.set_meta("mass_factor", self.factors.0);
        trace.set_meta("friction_factor", self.factors.1);
        let goal_path: f64 = self
            .goals
            .windows(2)
            .map(|w| w[0].translation.distance(w[1].translation))
            .sum();
        trace.set_meta("goal_path_length", goal_path);
        trace.set_meta("obstacle_impulse_total", self.obstacle_impulse_total);
        if let Some(r) = self.drive_impulse_ref {
            trace.set_meta("drive_impulse_ref", r);
        }
        let window = self
            .forces
            .iter()
            .find(|f| f.kind == ForceKind::Application)
            .map(|f| f.active_window)
            .unwrap_or([0.0, 1.0]);
        trace.set_meta("window_start", window[0]);
        trace.set_meta("window_end", window[1]);
        trace
    }
}

/// Replays an episode with zero residual: the w/o-adaptation baseline.
pub fn replay_no_adaptation(
    bundle: &TaskBundle,
    hand: Arc<HandDescription>,
    sim: SimConfig,
    candidate: &GraspCandidate,
    cfg: EnvConfig,
    seed: u64,
) -> Result<EpisodeTrace> {
    let mut env = AdaptEnv::new(bundle, hand, sim, candidate, cfg, seed)?;
    let zeros = [0.0; NUM_JOINTS];
    while !env.done() {
        env.step(&zeros)?;
    }
    Ok(env.trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Quat, Vec3};
    use crate::testutil::{hammer_scene, lift_bundle, lift_candidate as good_candidate};

    #[test]
    fn reward_oracle_examples() {
        let cfg = RewardConfig::default();
        let goal = Pose::from_translation(Vec3::new(0.1, 0.2, 0.3));

        let r = reward(&goal, &goal, &cfg);
        assert_eq!((r.r_p, r.r_q, r.r_pen), (1.0, 1.0, 0.0));
        assert_eq!(r.total, 2.0);

        // 5 cm position error at alpha_p = 10 -> r_p = 0.5, but 5 cm is past
        // delta_p so the penalty also fires.
        let off = Pose::from_translation(goal.translation + Vec3::new(0.05, 0.0, 0.0));
        let r = reward(&off, &goal, &cfg);
        assert!((r.r_p - 0.5).abs() < 1e-12);
        assert_eq!(r.r_q, 1.0);
        assert_eq!(r.r_pen, cfg.penalty);
        assert!((r.total - (1.5 + cfg.penalty)).abs() < 1e-12);

        // Within delta_p: no penalty.
        let near = Pose::from_translation(goal.translation + Vec3::new(0.02, 0.0, 0.0));
        let r = reward(&near, &goal, &cfg);
        assert!((r.r_p - 0.8).abs() < 1e-12);
        assert_eq!(r.r_pen, 0.0);

        // 20 cm error clamps r_p to zero.
        let far = Pose::from_translation(goal.translation + Vec3::new(0.2, 0.0, 0.0));
        assert_eq!(reward(&far, &goal, &cfg).r_p, 0.0);

        // Orientation reward via quaternion dot.
        let rot = Pose::new(goal.translation, Quat::from_rot_z(0.4));
        let r = reward(&rot, &goal, &cfg);
        let want = 1.0 - cfg.alpha_q * (1.0 - (0.2f64).cos());
        assert!((r.r_q - want).abs() < 1e-12);

        // Bounds hold everywhere on a grid.
        for dx in [-0.3, -0.01, 0.0, 0.02, 0.5] {
            for ang in [0.0, 0.3, 1.0, 3.0] {
                let p = Pose::new(
                    goal.translation + Vec3::new(dx, 0.0, 0.0),
                    Quat::from_rot_x(ang),
                );
                let r = reward(&p, &goal, &cfg);
                assert!(r.r_p >= 0.0 && r.r_p <= 1.0);
                assert!(r.r_q >= 0.0 && r.r_q <= 1.0);
                assert!(r.total >= cfg.penalty && r.total <= 2.0);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let bundle = lift_bundle();
        let scene = hammer_scene();
        let candidate = good_candidate();
        let mk = || {
            AdaptEnv::new(
                &bundle,
                scene.hand.clone(),
                scene.sim.clone(),
                &candidate,
                EnvConfig::default(),
                11,
            )
            .unwrap()
        };
        let mut a = mk();
        let mut b = mk();
        assert_eq!(a.obs(), b.obs());
        let dq = [0.01; NUM_JOINTS];
        for _ in 0..5 {
            let ra = a.step(&dq).unwrap();
            let rb = b.step(&dq).unwrap();
            assert_eq!(ra.obs, rb.obs);
            assert_eq!(ra.reward, rb.reward);
        }
    }

    #[test]
    fn observation_layout_and_bounds() {
        let bundle = lift_bundle();
        let scene = hammer_scene();
        let candidate = good_candidate();
        let mut env = AdaptEnv::new(
            &bundle,
            scene.hand.clone(),
            scene.sim.clone(),
            &candidate,
            EnvConfig::default(),
            3,
        )
        .unwrap();
        let obs = env.obs().to_vec();
        assert_eq!(obs.len(), OBS_DIM);
        assert_eq!(OBS_DIM, 56);
        // s_goal block is the tick-1 goal at reset.
        let goal1 = env.goals[1].to_array7();
        assert_eq!(&obs[48..55], &goal1[..]);
        assert_eq!(obs[55], 0.0);
        // q_target block mirrors the commanded targets.
        assert_eq!(&obs[16..32], &env.q_target[..]);

        let n = env.n_steps();
        let out = env.step(&[0.0; NUM_JOINTS]).unwrap();
        assert!((out.obs[55] - 1.0 / n as f64).abs() < 1e-15);
        assert!(out.obs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn residual_identity_with_raw_replay() {
        let bundle = lift_bundle();
        let scene = hammer_scene();
        let candidate = good_candidate();
        let cfg = EnvConfig::default();

        // Raw replay: reinstate, hold one tick, then step with constant
        // targets along the wrist schedule. No env bookkeeping.
        let setup = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            randomize(&bundle, &mut rng)
        };
        let n = (bundle.trajectory.duration() / scene.sim.control_dt).round() as usize;
        let t0 = bundle.trajectory.start_time();
        let dur = bundle.trajectory.duration();
        let goals: Vec<Pose> = (0..=n)
            .map(|k| bundle.trajectory.sample_at(t0 + dur * k as f64 / n as f64))
            .collect();
        let wrists = crate::trajectory::wrist_targets(&goals, &candidate.t_grasp);
        let (mut raw, _) = reinstate(
            &scene.sim,
            &scene.hand,
            &setup.object,
            goals[0],
            &candidate,
            cfg.settle_duration,
        )
        .unwrap();
        let q_target = raw.joints.q_target;
        raw.step(&ControlAction {
            wrist_target: raw.wrist_pose(),
            q_target,
        });
        let mut raw_poses = Vec::new();
        for k in 1..=n {
            let snap = raw.step(&ControlAction {
                wrist_target: wrists[k],
                q_target,
            });
            raw_poses.push(snap.object_pose);
        }

        let mut env = AdaptEnv::new(
            &bundle,
            scene.hand.clone(),
            scene.sim.clone(),
            &candidate,
            cfg,
            5,
        )
        .unwrap();
        let zeros = [0.0; NUM_JOINTS];
        let mut env_poses = Vec::new();
        while !env.done() {
            env.step(&zeros).unwrap();
            env_poses.push(env.world.object.pose);
        }
        assert_eq!(env_poses.len(), raw_poses.len());
        for (a, b) in env_poses.iter().zip(raw_poses.iter()) {
            assert_eq!(a.translation.x, b.translation.x);
            assert_eq!(a.translation.y, b.translation.y);
            assert_eq!(a.translation.z, b.translation.z);
            assert_eq!(a.rotation.w, b.rotation.w);
            assert_eq!(a.rotation.x, b.rotation.x);
            assert_eq!(a.rotation.y, b.rotation.y);
            assert_eq!(a.rotation.z, b.rotation.z);
        }
        assert!(!env.dropped(), "baseline lift should hold the object");
    }

    #[test]
    fn oversized_residual_is_clamped() {
        let bundle = lift_bundle();
        let scene = hammer_scene();
        let candidate = good_candidate();
        let mut env = AdaptEnv::new(
            &bundle,
            scene.hand.clone(),
            scene.sim.clone(),
            &candidate,
            EnvConfig::default(),
            2,
        )
        .unwrap();
        let before = env.q_target;
        let mut dq = [0.0; NUM_JOINTS];
        dq[0] = 1.0;
        dq[1] = -1.0;
        env.step(&dq).unwrap();
        let mr = env.cfg.max_residual;
        assert!((env.q_target[0] - (before[0] + mr)).abs() < 1e-12);
        assert!((env.q_target[1] - (before[1] - mr)).abs() < 1e-12);
        // Recorded residual in the trace is the clamped value.
        assert_eq!(env.rows[0].dq[0], mr);

        // Non-finite actions are rejected outright.
        dq[0] = f64::NAN;
        assert!(env.step(&dq).is_err());
    }

    #[test]
    fn unsuitable_grasp_is_reset_failure() {
        let bundle = lift_bundle();
        let scene = hammer_scene();
        let mut candidate = good_candidate();
        candidate.t_grasp = Pose::from_translation(Vec3::new(2.0, 0.0, 0.0));
        let err = AdaptEnv::new(
            &bundle,
            scene.hand.clone(),
            scene.sim.clone(),
            &candidate,
            EnvConfig::default(),
            0,
        )
        .err()
        .expect("a grasp a meter off the object cannot be reinstated");
        assert!(matches!(err, Error::ResetFailure(_)), "got {err:?}");
    }

    #[test]
    fn penalty_ends_episode() {
        let bundle = lift_bundle();
        let scene = hammer_scene();
        let candidate = good_candidate();
        let cfg = EnvConfig {
            reward: RewardConfig {
                delta_p: 1e-9,
                ..RewardConfig::default()
            },
            ..EnvConfig::default()
        };
        let mut env = AdaptEnv::new(
            &bundle,
            scene.hand.clone(),
            scene.sim.clone(),
            &candidate,
            cfg,
            4,
        )
        .unwrap();
        let out = env.step(&[0.0; NUM_JOINTS]).unwrap();
        assert!(out.done, "any tracking error crosses a 1e-9 threshold");
        assert_eq!(out.reward.r_pen, cfg.reward.penalty);
        assert!(env.done());
        assert!(env.step(&[0.0; NUM_JOINTS]).is_err());
        let trace = env.trace();
        assert_eq!(trace.meta["penalty_tick"], "1");
        assert_eq!(trace.metric_rows().len(), 1);
    }

    #[test]
    fn full_episode_trace_is_consistent() {
        let bundle = lift_bundle();
        let scene = hammer_scene();
        let candidate = good_candidate();
        let trace = replay_no_adaptation(
            &bundle,
            scene.hand.clone(),
            scene.sim.clone(),
            &candidate,
            EnvConfig::default(),
            9,
        )
        .unwrap();
        let n = trace.meta_f64("episode_ticks").unwrap() as usize;
        assert_eq!(n, 60, "2 s at 30 Hz");
        assert!(!trace.rows.is_empty());
        assert!(!trace.meta_bool("dropped"), "gentle lift must hold");
        assert_eq!(trace.rows.len(), n, "no penalty on the gentle lift");

        // Round-trips through the CSV form.
        let text = trace.to_text();
        let back = EpisodeTrace::parse(&text).unwrap();
        assert_eq!(back, trace);

        // Stored per-tick columns agree with the metrics recomputation.
        let et = crate::metrics::compute_et(&trace).unwrap();
        let col_mean = trace.rows.iter().map(|r| r.et_cm).sum::<f64>() / trace.rows.len() as f64;
        assert!((et - col_mean).abs() < 1e-9);

        // Sum of reward columns matches the recorded return.
        let total: f64 = trace
            .rows
            .iter()
            .map(|r| r.r_p + r.r_q + r.r_pen)
            .sum();
        assert!((total - trace.meta_f64("return").unwrap()).abs() < 1e-9);

        // The record builder accepts it.
        let rec = crate::metrics::RunRecord::from_trace("baseline", &trace).unwrap();
        assert!(rec.success);
        assert!(rec.e_t.unwrap() < 3.0, "tracking error should stay small");
    }
}
