//! Demonstrated object-pose trajectories: a line-oriented text format,
//! control-rate resampling, and the wrist-target transform chain.

use crate::error::{Error, Result};
use crate::math::{Pose, Quat, Vec3};
use std::fmt::Write as _;
use std::path::Path;

pub const TRAJECTORY_HEADER: &str = "# holdfast-trajectory v1";

/// Relative quaternion-norm slack before a record is considered corrupt.
const QUAT_NORM_TOLERANCE: f64 = 1e-3;

/// An ordered object pose sequence `{(t, T_obj)}` in a named frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoTrajectory {
    pub frame: String,
    pub samples: Vec<(f64, Pose)>,
}

impl DemoTrajectory {
    pub fn new(frame: impl Into<String>, samples: Vec<(f64, Pose)>) -> Result<DemoTrajectory> {
        let t = DemoTrajectory {
            frame: frame.into(),
            samples,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::Validation(
                "trajectory needs at least 2 samples".into(),
            ));
        }
        for window in self.samples.windows(2) {
            if !(window[1].0 > window[0].0) {
                return Err(Error::Validation(format!(
                    "timestamps not strictly increasing at t = {}",
                    window[1].0
                )));
            }
        }
        for (t, p) in &self.samples {
            if !t.is_finite() || !p.is_finite() {
                return Err(Error::Validation("non-finite trajectory sample".into()));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().unwrap().0 - self.samples[0].0
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].0
    }

    /// Parse the text format: a `#` header line carrying `frame=<tag>`,
    /// then one record per line: `t tx ty tz qw qx qy qz`.
    pub fn parse(text: &str) -> Result<DemoTrajectory> {
        let mut frame = String::from("world");
        let mut samples = Vec::new();
        let mut seen_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if !seen_header {
                    seen_header = true;
                    for token in line.split_whitespace() {
                        if let Some(tag) = token.strip_prefix("frame=") {
                            frame = tag.to_string();
                        }
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(Error::parse(
                    "<trajectory>",
                    line_no,
                    format!("expected 8 fields, got {}", fields.len()),
                ));
            }
            let mut v = [0.0f64; 8];
            for (i, f) in fields.iter().enumerate() {
                v[i] = f.parse::<f64>().map_err(|_| {
                    Error::parse("<trajectory>", line_no, format!("bad number {f:?}"))
                })?;
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse("<trajectory>", line_no, "non-finite value"));
            }
            let q = Quat {
                w: v[4],
                x: v[5],
                y: v[6],
                z: v[7],
            };
            let norm = q.norm();
            if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
                return Err(Error::parse(
                    "<trajectory>",
                    line_no,
                    format!("quaternion norm {norm} outside {QUAT_NORM_TOLERANCE} of 1"),
                ));
            }
            // normalized() is bit-exact on unit input, so write/parse round-trips.
            let pose = Pose::new(Vec3::new(v[1], v[2], v[3]), q.normalized());
            if let Some(&(prev, _)) = samples.last() {
                if v[0] <= prev {
                    return Err(Error::parse(
                        "<trajectory>",
                        line_no,
                        format!("timestamp {} not increasing (previous {prev})", v[0]),
                    ));
                }
            }
            samples.push((v[0], pose));
        }
        DemoTrajectory::new(frame, samples)
    }

    pub fn load(path: &Path) -> Result<DemoTrajectory> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    /// Serialize with shortest-round-trip float formatting (lossless).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRAJECTORY_HEADER} frame={} units=s,m", self.frame);
        for (t, p) in &self.samples {
            let a = p.to_array7();
            let _ = writeln!(
                out,
                "{t} {} {} {} {} {} {} {}",
                a[0], a[1], a[2], a[3], a[4], a[5], a[6]
            );
        }
        out
    }

    /// Interpolated pose at time `t` (clamped to the sampled range); exact at
    /// the knots.
    pub fn sample_at(&self, t: f64) -> Pose {
        let s = &self.samples;
        if t <= s[0].0 {
            return s[0].1;
        }
        if t >= s[s.len() - 1].0 {
            return s[s.len() - 1].1;
        }
        // Index of the first sample with time > t; the segment is [i-1, i].
        let i = s.partition_point(|&(st, _)| st <= t);
        let (t0, a) = s[i - 1];
        let (t1, b) = s[i];
        if t == t0 {
            return a;
        }
        let alpha = (t - t0) / (t1 - t0);
        Pose::new(
            a.translation + (b.translation - a.translation) * alpha,
            a.rotation.slerp(b.rotation, alpha),
        )
    }

    /// Tick-aligned poses at `k / rate` (shifted by the start time), covering
    /// the full duration.
    pub fn resample(&self, rate: f64) -> Result<Vec<Pose>> {
        if !(rate > 0.0) {
            return Err(Error::Validation(format!("rate must be positive: {rate}")));
        }
        let n = (self.duration() * rate + 1e-9).floor() as usize + 1;
        let t0 = self.start_time();
        Ok((0..n).map(|k| self.sample_at(t0 + k as f64 / rate)).collect())
    }
}

/// Per-tick wrist pose: `T_wrist^t = T_obj^t ∘ T_grasp`.
pub fn wrist_targets(object_poses: &[Pose], t_grasp: &Pose) -> Vec<Pose> {
    object_poses.iter().map(|p| p.compose(t_grasp)).collect()
}

/// Chained world grasp pose: `T_world←grasp = T_world←cam ∘ T_cam←obj ∘ T_grasp`.
pub fn world_grasp_pose(t_world_cam: &Pose, t_cam_obj: &Pose, t_grasp: &Pose) -> Pose {
    t_world_cam.compose(t_cam_obj).compose(t_grasp)
}
