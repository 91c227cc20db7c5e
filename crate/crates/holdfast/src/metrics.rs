//! Evaluation metrics over episode traces: tracking errors, success rate,
//! and per-task completion proxies (explicitly proxies; real completion
//! needs hardware).
//!
//! Error means cover ticks up to and including the first penalty tick;
//! everything after a slip is excluded.

use crate::error::{Error, Result};
use crate::math::Pose;
use crate::task::COMPLETION_PROXIES;
use crate::trace::EpisodeTrace;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Drop threshold: COM further than this from the wrist counts as dropped.
pub const DROP_RADIUS: f64 = 0.15;

/// Per-tick contribution to E_t, centimeters. The single source of truth:
/// traces store this value per tick and compute_et re-derives it from the
/// pose columns; the two must agree.
pub fn et_contrib_cm(object_pose: &Pose, goal_pose: &Pose) -> f64 {
    object_pose.translation.distance(goal_pose.translation) * 100.0
}

/// Per-tick contribution to E_theta, degrees: `2 * arccos(|q_obj . q_goal|)`.
pub fn etheta_contrib_deg(object_pose: &Pose, goal_pose: &Pose) -> f64 {
    let d = object_pose.rotation.dot(goal_pose.rotation).abs().min(1.0);
    2.0 * d.acos() * 180.0 / std::f64::consts::PI
}

/// Mean positional deviation in centimeters over the metric rows.
pub fn compute_et(trace: &EpisodeTrace) -> Result<f64> {
    let rows = trace.metric_rows();
    if rows.is_empty() {
        return Err(Error::EmptyResult("trace has no rows".into()));
    }
    let sum: f64 = rows
        .iter()
        .map(|r| et_contrib_cm(&r.object_pose, &r.goal_pose))
        .sum();
    Ok(sum / rows.len() as f64)
}

/// Mean angular deviation in degrees over the metric rows.
pub fn compute_etheta(trace: &EpisodeTrace) -> Result<f64> {
    let rows = trace.metric_rows();
    if rows.is_empty() {
        return Err(Error::EmptyResult("trace has no rows".into()));
    }
    let sum: f64 = rows
        .iter()
        .map(|r| etheta_contrib_deg(&r.object_pose, &r.goal_pose))
        .sum();
    Ok(sum / rows.len() as f64)
}

/// Task completion proxy in [0, 1]. Inputs beyond the per-tick columns come
/// from trace metadata written at rollout time.
pub fn completion_proxy(task_name: &str, trace: &EpisodeTrace) -> Result<f64> {
    if !COMPLETION_PROXIES.contains(&task_name) {
        return Err(Error::UnknownTask(task_name.to_string()));
    }
    let episode_ticks = trace
        .meta_f64("episode_ticks")
        .unwrap_or(trace.rows.len() as f64)
        .max(1.0);
    let clean_ticks = match trace.first_penalty() {
        Some(i) => i,
        None => trace.rows.len(),
    };
    let value = match task_name {
        // Cumulative normal impulse delivered to the nail, over the drive
        // reference. Never contacted -> 0.
        "hammer" => {
            let delivered = trace.meta_f64("obstacle_impulse_total").unwrap_or(0.0);
            let reference = trace.meta_f64("drive_impulse_ref").unwrap_or(f64::INFINITY);
            if reference.is_finite() && reference > 0.0 {
                delivered / reference
            } else {
                0.0
            }
        }
        // Object path length covered while penalty-free, over the goal
        // trajectory's full path length.
        "saw" | "cut" => {
            let target = trace.meta_f64("goal_path_length").unwrap_or(0.0);
            if target <= 0.0 {
                0.0
            } else {
                let mut covered = 0.0;
                for w in trace.rows[..clean_ticks].windows(2) {
                    covered += w[0]
                        .object_pose
                        .translation
                        .distance(w[1].object_pose.translation);
                }
                covered / target
            }
        }
        // Fraction of the nominal episode completed without penalty.
        "stir" => clean_ticks as f64 / episode_ticks,
        // Binary: the application-force window passed without penalty.
        "scoop" => {
            let w0 = trace.meta_f64("window_start").unwrap_or(0.0);
            let w1 = trace.meta_f64("window_end").unwrap_or(1.0);
            let window_done = trace.rows.iter().enumerate().all(|(i, row)| {
                let t_frac = row.t as f64 / episode_ticks;
                !(t_frac >= w0 && t_frac <= w1) || trace.first_penalty().map_or(true, |p| i < p)
            });
            let reached_end = trace
                .rows
                .last()
                .map(|r| r.t as f64 / episode_ticks >= w1)
                .unwrap_or(false);
            if window_done && reached_end {
                1.0
            } else {
                0.0
            }
        }
        _ => unreachable!("gated by COMPLETION_PROXIES"),
    };
    Ok(value.clamp(0.0, 1.0))
}

/// One evaluated episode, ready for aggregation.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub success: bool,
    /// Present only for successful episodes.
    pub e_t: Option<f64>,
    pub e_theta: Option<f64>,
    pub proxy: Option<f64>,
    pub episode_return: f64,
}

impl RunRecord {
    /// Builds a record from a finished trace. Success means the object was
    /// held throughout: no drop and no divergence.
    pub fn from_trace(method: &str, trace: &EpisodeTrace) -> Result<RunRecord> {
        let task = trace
            .meta
            .get("task")
            .cloned()
            .ok_or_else(|| Error::Validation("trace missing task metadata".into()))?;
        let seed = trace.meta_f64("seed").unwrap_or(0.0) as u64;
        let dropped = trace.meta_bool("dropped");
        let diverged = trace.meta_bool("diverged");
        let success = !dropped && !diverged;
        let (e_t, e_theta, proxy) = if success {
            (
                Some(compute_et(trace)?),
                Some(compute_etheta(trace)?),
                Some(completion_proxy(&task, trace)?),
            )
        } else {
            (None, None, None)
        };
        Ok(RunRecord {
            method: method.to_string(),
            task,
            seed,
            success,
            e_t,
            e_theta,
            proxy,
            episode_return: trace.meta_f64("return").unwrap_or(0.0),
        })
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct GroupSummary {
    pub method: String,
    pub task: String,
    pub runs: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    pub mean_e_t: Option<f64>,
    pub mean_e_theta: Option<f64>,
    pub mean_proxy: Option<f64>,
    pub mean_return: f64,
    pub seeds: Vec<u64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Groups runs by (method, task); error means cover successful episodes
/// only. Output order is deterministic (sorted by group key) and invariant
/// to the input permutation.
pub fn aggregate(runs: &[RunRecord]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for run in runs {
        groups
            .entry((run.method.clone(), run.task.clone()))
            .or_default()
            .push(run);
    }
    groups
        .into_iter()
        .map(|((method, task), mut runs)| {
            runs.sort_by_key(|r| r.seed);
            let successes = runs.iter().filter(|r| r.success).count();
            let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
            seeds.dedup();
            GroupSummary {
                method,
                task,
                runs: runs.len(),
                successes,
                success_rate: 100.0 * successes as f64 / runs.len() as f64,
                mean_e_t: mean_of(runs.iter().filter_map(|r| r.e_t)),
                mean_e_theta: mean_of(runs.iter().filter_map(|r| r.e_theta)),
                mean_proxy: mean_of(runs.iter().filter_map(|r| r.proxy)),
                mean_return: runs.iter().map(|r| r.episode_return).sum::<f64>()
                    / runs.len() as f64,
                seeds,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}"),
        None => "--".to_string(),
    }
}

/// Summary table as CSV: method, task, S, E_t, E_theta, proxy, return, runs.
pub fn summary_csv(groups: &[GroupSummary]) -> String {
    let mut out = String::from("method,task,S_pct,E_t_cm,E_theta_deg,proxy,return,runs\n");
    for g in groups {
        let _ = writeln!(
            out,
            "{},{},{:.1},{},{},{},{:.3},{}",
            g.method,
            g.task,
            g.success_rate,
            fmt_opt(g.mean_e_t),
            fmt_opt(g.mean_e_theta),
            fmt_opt(g.mean_proxy),
            g.mean_return,
            g.runs
        );
    }
    out
}

/// Human-readable table of the same summary.
pub fn render_table(groups: &[GroupSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:<8} {:>7} {:>9} {:>11} {:>7} {:>9}",
        "method", "task", "S (%)", "E_t (cm)", "E_th (deg)", "proxy", "return"
    );
    for g in groups {
        let _ = writeln!(
            out,
            "{:<18} {:<8} {:>7.1} {:>9} {:>11} {:>7} {:>9.2}",
            g.method,
            g.task,
            g.success_rate,
            fmt_opt(g.mean_e_t),
            fmt_opt(g.mean_e_theta),
            fmt_opt(g.mean_proxy),
            g.mean_return
        );
    }
    out
}

/// E_theta time series for one trace (tick, degrees), for drift plots.
pub fn etheta_series_csv(trace: &EpisodeTrace) -> String {
    let mut out = String::from("t,etheta_deg\n");
    for row in &trace.rows {
        let _ = writeln!(
            out,
            "{},{}",
            row.t,
            etheta_contrib_deg(&row.object_pose, &row.goal_pose)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::NUM_JOINTS;
    use crate::math::{Quat, Vec3};
    use crate::trace::TraceRow;

    fn row(t: u64, obj: Pose, goal: Pose, r_pen: f64) -> TraceRow {
        TraceRow {
            t,
            object_pose: obj,
            goal_pose: goal,
            et_cm: et_contrib_cm(&obj, &goal),
            etheta_deg: etheta_contrib_deg(&obj, &goal),
            r_p: 1.0,
            r_q: 1.0,
            r_pen,
            q: [0.0; NUM_JOINTS],
            dq: [0.0; NUM_JOINTS],
        }
    }

    fn trace_with_offsets(offsets_cm: &[f64]) -> EpisodeTrace {
        let mut trace = EpisodeTrace::default();
        trace.set_meta("task", "stir");
        for (i, &off) in offsets_cm.iter().enumerate() {
            let goal = Pose::from_translation(Vec3::new(0.1 * i as f64, 0.0, 0.5));
            let obj = Pose::from_translation(goal.translation + Vec3::new(off / 100.0, 0.0, 0.0));
            trace.rows.push(row(i as u64 + 1, obj, goal, 0.0));
        }
        trace
    }

    #[test]
    fn et_examples() {
        let perfect = trace_with_offsets(&[0.0, 0.0, 0.0]);
        assert!(compute_et(&perfect).unwrap().abs() < 1e-12);

        let constant = trace_with_offsets(&[1.0, 1.0, 1.0, 1.0]);
        assert!((compute_et(&constant).unwrap() - 1.0).abs() < 1e-12);

        let ramp = trace_with_offsets(&[0.0, 1.0, 2.0]);
        assert!((compute_et(&ramp).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn etheta_examples() {
        let goal = Pose::IDENTITY;
        let mut trace = EpisodeTrace::default();
        trace.rows.push(row(1, goal, goal, 0.0));
        assert!(compute_etheta(&trace).unwrap().abs() < 1e-7);

        // Constant 90 degree offset.
        let mut trace = EpisodeTrace::default();
        let obj = Pose::new(Vec3::ZERO, Quat::from_rot_z(std::f64::consts::FRAC_PI_2));
        for t in 1..=3 {
            trace.rows.push(row(t, obj, goal, 0.0));
        }
        assert!((compute_etheta(&trace).unwrap() - 90.0).abs() < 1e-7);

        // q vs -q is zero distance (double cover).
        let q = Quat::from_rot_z(0.7);
        let neg = Quat::new(-q.w, -q.x, -q.y, -q.z);
        let mut trace = EpisodeTrace::default();
        trace
            .rows
            .push(row(1, Pose::new(Vec3::ZERO, q), Pose::new(Vec3::ZERO, neg), 0.0));
        assert!(compute_etheta(&trace).unwrap().abs() < 1e-6);
    }

    #[test]
    fn etheta_invariant_under_sign_flips() {
        let q1 = Quat::from_axis_angle(Vec3::new(1.0, 2.0, -0.5), 0.8);
        let q2 = Quat::from_axis_angle(Vec3::new(-0.3, 1.0, 0.9), 1.7);
        let base = etheta_contrib_deg(
            &Pose::new(Vec3::ZERO, q1),
            &Pose::new(Vec3::ZERO, q2),
        );
        for (s1, s2) in [(-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            let f1 = Quat::new(s1 * q1.w, s1 * q1.x, s1 * q1.y, s1 * q1.z);
            let f2 = Quat::new(s2 * q2.w, s2 * q2.x, s2 * q2.y, s2 * q2.z);
            let flipped = etheta_contrib_deg(
                &Pose::new(Vec3::ZERO, f1),
                &Pose::new(Vec3::ZERO, f2),
            );
            assert!((base - flipped).abs() < 1e-9);
        }
    }

    #[test]
    fn post_penalty_ticks_are_excluded() {
        let mut trace = trace_with_offsets(&[1.0, 1.0, 4.0, 9.0]);
        trace.rows[2].r_pen = -50.0;
        trace.rows[3].r_pen = -50.0;
        // Rows 1..=3 count: mean of 1, 1, 4.
        assert!((compute_et(&trace).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trace_column_agrees_with_compute_et() {
        let trace = trace_with_offsets(&[0.3, 1.7, 0.9, 2.2]);
        let column_mean =
            trace.rows.iter().map(|r| r.et_cm).sum::<f64>() / trace.rows.len() as f64;
        assert!((compute_et(&trace).unwrap() - column_mean).abs() < 1e-9);
    }

    #[test]
    fn aggregate_examples() {
        let mk = |seed, success, e_t| RunRecord {
            method: "ours".into(),
            task: "stir".into(),
            seed,
            success,
            e_t,
            e_theta: e_t,
            proxy: e_t.map(|_| 1.0),
            episode_return: 10.0,
        };
        // All successful: mean of 0.5, 1.0, 1.5.
        let runs = vec![
            mk(0, true, Some(0.5)),
            mk(1, true, Some(1.0)),
            mk(2, true, Some(1.5)),
        ];
        let g = aggregate(&runs);
        assert_eq!(g.len(), 1);
        assert!((g[0].success_rate - 100.0).abs() < 1e-12);
        assert!((g[0].mean_e_t.unwrap() - 1.0).abs() < 1e-12);

        // 2 of 3 drop: S = 33.3%, errors from the single success.
        let runs = vec![
            mk(0, false, None),
            mk(1, true, Some(0.8)),
            mk(2, false, None),
        ];
        let g = aggregate(&runs);
        assert!((g[0].success_rate - 100.0 / 3.0).abs() < 1e-9);
        assert!((g[0].mean_e_t.unwrap() - 0.8).abs() < 1e-12);
        let csv = summary_csv(&g);
        assert!(csv.contains("33.3"));

        // Zero successes: errors render as "--".
        let runs = vec![mk(0, false, None), mk(1, false, None)];
        let g = aggregate(&runs);
        assert_eq!(g[0].success_rate, 0.0);
        assert!(g[0].mean_e_t.is_none());
        let csv = summary_csv(&g);
        assert!(csv.contains("--"));
        let table = render_table(&g);
        assert!(table.contains("--"));
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mk = |method: &str, seed, e_t| RunRecord {
            method: method.into(),
            task: "saw".into(),
            seed,
            success: true,
            e_t: Some(e_t),
            e_theta: Some(e_t),
            proxy: Some(0.5),
            episode_return: e_t,
        };
        let mut runs = vec![
            mk("a", 0, 1.0),
            mk("a", 1, 2.0),
            mk("b", 0, 3.0),
            mk("b", 1, 5.0),
        ];
        let fwd = aggregate(&runs);
        runs.reverse();
        let rev = aggregate(&runs);
        assert_eq!(fwd.len(), rev.len());
        for (x, y) in fwd.iter().zip(rev.iter()) {
            assert_eq!(x.method, y.method);
            assert_eq!(x.task, y.task);
            assert_eq!(x.mean_e_t, y.mean_e_t);
            assert_eq!(x.seeds, y.seeds);
        }
    }

    #[test]
    fn proxy_examples() {
        // Stir, no penalties -> 1.0.
        let mut trace = trace_with_offsets(&[0.0; 10]);
        trace.set_meta("episode_ticks", 10);
        assert_eq!(completion_proxy("stir", &trace).unwrap(), 1.0);

        // Penalty halfway: 5 clean ticks of a nominal 10.
        let mut trace = trace_with_offsets(&[0.0; 6]);
        trace.set_meta("episode_ticks", 10);
        trace.rows[5].r_pen = -50.0;
        assert!((completion_proxy("stir", &trace).unwrap() - 0.5).abs() < 1e-12);

        // Hammer with no contact -> 0.
        let mut trace = trace_with_offsets(&[0.0; 3]);
        trace.set_meta("drive_impulse_ref", 2.0);
        assert_eq!(completion_proxy("hammer", &trace).unwrap(), 0.0);
        trace.set_meta("obstacle_impulse_total", 1.0);
        assert!((completion_proxy("hammer", &trace).unwrap() - 0.5).abs() < 1e-12);

        // Unknown task errors.
        assert!(matches!(
            completion_proxy("juggle", &trace),
            Err(Error::UnknownTask(_))
        ));
    }

    #[test]
    fn saw_proxy_tracks_clean_path_fraction() {
        // Goal advances 0.1 m per tick; offsets stay small.
        let mut trace = trace_with_offsets(&[0.0; 11]);
        let goal_path = 1.0;
        trace.set_meta("goal_path_length", goal_path);
        trace.set_meta("task", "saw");
        assert!((completion_proxy("saw", &trace).unwrap() - 1.0).abs() < 1e-9);

        // Penalty at tick 6: rows 1..=5 clean, 4 segments of 0.1 covered.
        trace.rows[5].r_pen = -50.0;
        let p = completion_proxy("saw", &trace).unwrap();
        assert!((p - 0.4).abs() < 1e-9, "saw proxy {p}");
    }

    #[test]
    fn scoop_proxy_requires_clean_window() {
        let mut trace = trace_with_offsets(&[0.0; 10]);
        trace.set_meta("episode_ticks", 10);
        trace.set_meta("window_start", 0.2);
        trace.set_meta("window_end", 0.8);
        assert_eq!(completion_proxy("scoop", &trace).unwrap(), 1.0);

        // Penalty inside the window voids it.
        trace.rows[4].r_pen = -50.0;
        assert_eq!(completion_proxy("scoop", &trace).unwrap(), 0.0);

        // Truncated before the window end also fails.
        let mut short = trace_with_offsets(&[0.0; 5]);
        short.set_meta("episode_ticks", 10);
        short.set_meta("window_start", 0.2);
        short.set_meta("window_end", 0.8);
        assert_eq!(completion_proxy("scoop", &short).unwrap(), 0.0);
    }

    #[test]
    fn run_record_from_trace() {
        let mut trace = trace_with_offsets(&[1.0, 1.0]);
        trace.set_meta("task", "stir");
        trace.set_meta("seed", 3);
        trace.set_meta("return", 4.5);
        trace.set_meta("episode_ticks", 2);
        let rec = RunRecord::from_trace("ours", &trace).unwrap();
        assert!(rec.success);
        assert!((rec.e_t.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rec.seed, 3);
        assert_eq!(rec.episode_return, 4.5);

        trace.set_meta("dropped", true);
        let rec = RunRecord::from_trace("ours", &trace).unwrap();
        assert!(!rec.success);
        assert!(rec.e_t.is_none());
    }
}
