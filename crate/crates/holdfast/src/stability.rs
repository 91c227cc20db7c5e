//! Wrench-space stability protocol: ramp a force or torque along each of the
//! 12 signed Cartesian axes on a reinstated grasp, record how long the object
//! stays put in the hand, and score candidates by the mean stable fraction.

use crate::error::{Error, Result};
use crate::grasp::{reinstate, GraspCandidate, SynthScene};
use crate::math::{rotation_distance_rad, Pose, Vec3, Wrench};
use crate::physics::{ControlAction, World};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const NUM_AXES: usize = 12;

/// Signed axis labels in protocol order.
pub const AXIS_LABELS: [&str; NUM_AXES] = [
    "+Fx", "-Fx", "+Fy", "-Fy", "+Fz", "-Fz", "+Tx", "-Tx", "+Ty", "-Ty", "+Tz", "-Tz",
];

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WrenchTestConfig {
    /// Peak ramp force, N.
    pub f_max: f64,
    /// Peak ramp torque, N·m.
    pub tau_max: f64,
    /// Ramp duration; the maximum is reached exactly at t_max, s.
    pub t_max: f64,
    /// Slip position threshold, m.
    pub delta_p: f64,
    /// Slip orientation threshold, rad.
    pub delta_theta: f64,
    /// Post-reinstatement settle before the ramp starts, s.
    pub settle_duration: f64,
}

impl Default for WrenchTestConfig {
    fn default() -> Self {
        WrenchTestConfig {
            f_max: 20.0,
            tau_max: 2.0,
            t_max: 2.0,
            delta_p: 0.03,
            delta_theta: 30f64.to_radians(),
            settle_duration: 0.5,
        }
    }
}

impl WrenchTestConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0;
        if pos(self.f_max)
            && pos(self.tau_max)
            && pos(self.t_max)
            && self.t_max.is_finite()
            && pos(self.delta_p)
            && pos(self.delta_theta)
            && self.settle_duration >= 0.0
        {
            Ok(())
        } else {
            Err(Error::Validation("malformed wrench test config".into()))
        }
    }

    /// (unit direction, peak magnitude, is_torque) for a protocol axis.
    pub fn axis(&self, index: usize) -> (Vec3, f64, bool) {
        assert!(index < NUM_AXES, "axis index {index} out of range");
        let dir = match index / 2 {
            0 | 3 => Vec3::new(1.0, 0.0, 0.0),
            1 | 4 => Vec3::new(0.0, 1.0, 0.0),
            _ => Vec3::new(0.0, 0.0, 1.0),
        };
        let sign = if index % 2 == 0 { 1.0 } else { -1.0 };
        let is_torque = index >= 6;
        let peak = if is_torque { self.tau_max } else { self.f_max };
        (dir * sign, peak, is_torque)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipMode {
    Position,
    Orientation,
    Survived,
    /// Divergence or a failed reinstatement, treated as immediate slip.
    Failed,
}

#[derive(Clone, Copy, Debug)]
pub struct AxisOutcome {
    pub t_stable: f64,
    pub mode: SlipMode,
    /// Normalized pose error at slip onset, 0 for survived axes.
    pub onset_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub t_stable: [f64; NUM_AXES],
    pub modes: [SlipMode; NUM_AXES],
    pub s_g: f64,
    /// Mean normalized slip-onset pose error over slipped axes (ranking tie-break).
    pub mean_onset_error: f64,
}

impl StabilityReport {
    fn from_outcomes(outcomes: &[AxisOutcome; NUM_AXES], cfg: &WrenchTestConfig) -> StabilityReport {
        let mut t_stable = [0.0; NUM_AXES];
        let mut modes = [SlipMode::Survived; NUM_AXES];
        let mut err_sum = 0.0;
        let mut slipped = 0usize;
        for (i, o) in outcomes.iter().enumerate() {
            t_stable[i] = o.t_stable;
            modes[i] = o.mode;
            if o.mode != SlipMode::Survived {
                err_sum += o.onset_error;
                slipped += 1;
            }
        }
        StabilityReport {
            t_stable,
            modes,
            s_g: score(&t_stable, cfg.t_max),
            mean_onset_error: if slipped == 0 { 0.0 } else { err_sum / slipped as f64 },
        }
    }

    /// All-axes-failed report for candidates that cannot even be reinstated.
    pub fn failed() -> StabilityReport {
        StabilityReport {
            t_stable: [0.0; NUM_AXES],
            modes: [SlipMode::Failed; NUM_AXES],
            s_g: 0.0,
            mean_onset_error: 1.0,
        }
    }

    /// Structured text export. The header records the wrench conventions so
    /// scores are comparable only under the same protocol.
    pub fn render(&self, cfg: &WrenchTestConfig) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# wrench ramp: world-frame axes at object COM, linear to F_max={} N / tau_max={} N·m over t_max={} s",
            cfg.f_max, cfg.tau_max, cfg.t_max,
        );
        let _ = writeln!(
            out,
            "# slip: in-hand deviation > {} m or {:.4} rad",
            cfg.delta_p, cfg.delta_theta,
        );
        for i in 0..NUM_AXES {
            let mode = match self.modes[i] {
                SlipMode::Position => "position",
                SlipMode::Orientation => "orientation",
                SlipMode::Survived => "survived",
                SlipMode::Failed => "failed",
            };
            let _ = writeln!(out, "{} t_stable={:.4} s {}", AXIS_LABELS[i], self.t_stable[i], mode);
        }
        let _ = writeln!(out, "S_G = {:.4}", self.s_g);
        out
    }
}

/// Mean stable-time fraction over the 12 axes.
pub fn score(t_stable: &[f64; NUM_AXES], t_max: f64) -> f64 {
    t_stable.iter().sum::<f64>() / (NUM_AXES as f64 * t_max)
}

/// Run one ramp test inside an already-prepared world. `reference` is the
/// in-hand pose recorded before the ramp; the wrist and finger targets are
/// held where they are.
pub fn run_axis_test_in(
    world: &mut World,
    reference: Pose,
    axis_index: usize,
    cfg: &WrenchTestConfig,
) -> AxisOutcome {
    let (dir, peak, is_torque) = cfg.axis(axis_index);
    let control_dt = world.config.control_dt;
    let ticks = (cfg.t_max / control_dt).round().max(1.0) as usize;
    let action = ControlAction {
        wrist_target: world.wrist_pose(),
        q_target: world.joints.q_target,
    };
    for k in 0..ticks {
        // Magnitude at the end of the tick the wrench acts over, so the last
        // tick carries exactly the configured maximum.
        let elapsed = (k + 1) as f64 * control_dt;
        let magnitude = (elapsed / cfg.t_max).min(1.0) * peak;
        let wrench = if is_torque {
            Wrench::world(Vec3::ZERO, dir * magnitude)
        } else {
            Wrench::world(dir * magnitude, Vec3::ZERO)
        };
        world.apply_external_wrench(&wrench, world.object.com_world());
        let snap = world.step(&action);
        if snap.diverged {
            return AxisOutcome {
                t_stable: elapsed,
                mode: SlipMode::Failed,
                onset_error: 1.0,
            };
        }
        let now = world.in_hand_pose();
        let dev_p = (now.translation - reference.translation).norm();
        let dev_theta = rotation_distance_rad(now.rotation, reference.rotation);
        if dev_p > cfg.delta_p || dev_theta > cfg.delta_theta {
            let norm = |dev: f64, threshold: f64| if threshold.is_finite() { dev / threshold } else { 0.0 };
            return AxisOutcome {
                t_stable: elapsed,
                mode: if dev_p > cfg.delta_p {
                    SlipMode::Position
                } else {
                    SlipMode::Orientation
                },
                onset_error: 0.5 * (norm(dev_p, cfg.delta_p) + norm(dev_theta, cfg.delta_theta)),
            };
        }
    }
    AxisOutcome {
        t_stable: cfg.t_max,
        mode: SlipMode::Survived,
        onset_error: 0.0,
    }
}

/// Reinstate the candidate into a fresh world and run one axis test.
pub fn run_axis_test(
    scene: &SynthScene,
    candidate: &GraspCandidate,
    axis_index: usize,
    cfg: &WrenchTestConfig,
) -> Result<AxisOutcome> {
    cfg.validate()?;
    let (mut world, reference) = reinstate(
        &scene.sim,
        &scene.hand,
        &scene.object,
        scene.object_pose,
        candidate,
        cfg.settle_duration,
    )?;
    Ok(run_axis_test_in(&mut world, reference, axis_index, cfg))
}

/// Full 12-axis evaluation of one candidate; each axis starts from its own
/// fresh world. A candidate that cannot be reinstated scores zero.
pub fn evaluate(
    scene: &SynthScene,
    candidate: &GraspCandidate,
    cfg: &WrenchTestConfig,
) -> Result<StabilityReport> {
    cfg.validate()?;
    let mut outcomes = [AxisOutcome {
        t_stable: 0.0,
        mode: SlipMode::Failed,
        onset_error: 1.0,
    }; NUM_AXES];
    for (axis, slot) in outcomes.iter_mut().enumerate() {
        match run_axis_test(scene, candidate, axis, cfg) {
            Ok(outcome) => *slot = outcome,
            Err(Error::ResetFailure(_)) | Err(Error::Diverged { .. }) => {
                return Ok(StabilityReport::failed());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(StabilityReport::from_outcomes(&outcomes, cfg))
}

/// Evaluate every candidate and sort: S_G descending, ties by smaller mean
/// slip-onset error, then by original index. Returns candidates with score
/// and report filled in.
pub fn evaluate_and_rank(
    scene: &SynthScene,
    candidates: &[GraspCandidate],
    cfg: &WrenchTestConfig,
) -> Result<Vec<GraspCandidate>> {
    if candidates.is_empty() {
        return Err(Error::EmptyResult("no candidates to evaluate".into()));
    }
    cfg.validate()?;
    let reports: Vec<StabilityReport> = candidates
        .par_iter()
        .map(|c| evaluate(scene, c, cfg))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        reports[b]
            .s_g
            .partial_cmp(&reports[a].s_g)
            .expect("scores are finite")
            .then(
                reports[a]
                    .mean_onset_error
                    .partial_cmp(&reports[b].mean_onset_error)
                    .expect("onset errors are finite"),
            )
            .then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .map(|i| {
            let mut c = candidates[i].clone();
            c.score = Some(reports[i].s_g);
            c.stability = Some(reports[i].clone());
            c
        })
        .collect())
}
