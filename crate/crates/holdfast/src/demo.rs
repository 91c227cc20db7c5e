//! Synthetic demonstration trajectories. Real captured demos are not
//! distributed, so each task ships a parametrized generator emitting the
//! standard trajectory format: hammer swing, saw stroke, stir circle,
//! scoop arc. All motions are world-frame object poses for tools whose body
//! frame puts the grip at the origin and the working end along +y.

use crate::error::{Error, Result};
use crate::math::{Pose, Quat, Vec3};
use crate::trajectory::DemoTrajectory;

const RATE: f64 = 60.0;

fn sample_times(duration: f64) -> Vec<f64> {
    let n = (duration * RATE).round() as usize + 1;
    (0..n).map(|k| k as f64 / RATE).collect()
}

/// Repeated swing about a horizontal axis through the grip: the head dips
/// from rest height down onto the nail line and back, `strikes` times.
pub fn hammer_swing(strikes: usize, duration: f64) -> Result<DemoTrajectory> {
    let pivot = Vec3::new(0.0, 0.0, 0.25);
    let theta_max = 62f64.to_radians();
    let samples = sample_times(duration)
        .into_iter()
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * strikes as f64 * t / duration;
            let theta = theta_max * 0.5 * (1.0 - phase.cos());
            (t, Pose::new(pivot, Quat::from_rot_x(-theta)))
        })
        .collect();
    DemoTrajectory::new("world", samples)
}

/// Horizontal reciprocating stroke along the blade axis.
pub fn saw_stroke(strokes: usize, duration: f64, amplitude: f64) -> Result<DemoTrajectory> {
    let base = Vec3::new(0.0, 0.0, 0.15);
    let samples = sample_times(duration)
        .into_iter()
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * strokes as f64 * t / duration;
            let offset = Vec3::new(0.0, amplitude * phase.sin(), 0.0);
            (t, Pose::new(base + offset, Quat::IDENTITY))
        })
        .collect();
    DemoTrajectory::new("world", samples)
}

/// Circular orbit with the tool held bowl-down (constant orientation).
pub fn stir_circle(rotations: usize, duration: f64) -> Result<DemoTrajectory> {
    let grip = Vec3::new(0.0, 0.0, 0.30);
    let radius = 0.03;
    let tilt = Quat::from_rot_x(-90f64.to_radians());
    let samples = sample_times(duration)
        .into_iter()
        .map(|t| {
            let phi = 2.0 * std::f64::consts::PI * rotations as f64 * t / duration;
            let offset = Vec3::new(radius * (phi.cos() - 1.0), radius * phi.sin(), 0.0);
            (t, Pose::new(grip + offset, tilt))
        })
        .collect();
    DemoTrajectory::new("world", samples)
}

/// One dig-carry-dump cycle: dip and tilt into the pile, level out, carry
/// forward and up, then tip the bowl to dump.
pub fn scoop_arc(duration: f64) -> Result<DemoTrajectory> {
    let grip = Vec3::new(0.0, 0.0, 0.30);
    let bowl_down = -90f64.to_radians();
    // (t fraction, position offset, extra pitch about x)
    let keys: [(f64, Vec3, f64); 6] = [
        (0.00, Vec3::ZERO, 0.0),
        (0.15, Vec3::new(0.0, 0.04, -0.03), 0.5),
        (0.30, Vec3::new(0.0, 0.10, 0.00), 0.0),
        (0.80, Vec3::new(0.0, 0.22, 0.06), 0.0),
        (0.95, Vec3::new(0.0, 0.26, 0.06), -1.2),
        (1.00, Vec3::new(0.0, 0.26, 0.06), -1.4),
    ];
    let smoothstep = |a: f64| a * a * (3.0 - 2.0 * a);
    let samples = sample_times(duration)
        .into_iter()
        .map(|t| {
            let f = t / duration;
            let i = keys
                .iter()
                .rposition(|k| k.0 <= f)
                .unwrap_or(0)
                .min(keys.len() - 2);
            let (f0, p0, a0) = keys[i];
            let (f1, p1, a1) = keys[i + 1];
            let alpha = smoothstep(((f - f0) / (f1 - f0)).clamp(0.0, 1.0));
            let pos = p0 + (p1 - p0) * alpha;
            let pitch = a0 + (a1 - a0) * alpha;
            (t, Pose::new(grip + pos, Quat::from_rot_x(bowl_down + pitch)))
        })
        .collect();
    DemoTrajectory::new("world", samples)
}

/// CLI dispatcher. `cycles` means strikes, strokes, or rotations; the scoop
/// is a single cycle and ignores it.
pub fn generate(kind: &str, cycles: usize, duration: f64) -> Result<DemoTrajectory> {
    if !(duration > 0.0) {
        return Err(Error::Validation(format!(
            "duration must be positive: {duration}"
        )));
    }
    match kind {
        "hammer-swing" => hammer_swing(cycles.max(1), duration),
        "saw-stroke" => saw_stroke(cycles.max(1), duration, 0.05),
        "stir-circle" => stir_circle(cycles.max(1), duration),
        "scoop-arc" => scoop_arc(duration),
        other => Err(Error::Validation(format!(
            "unknown demo kind {other:?} (expected hammer-swing, saw-stroke, stir-circle, scoop-arc)"
        ))),
    }
}
