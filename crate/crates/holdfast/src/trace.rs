//! Episode trace files: one CSV per episode, one row per control tick, with
//! `# key=value` metadata lines before the column header.
//!
//! Columns (52): t, object pose 7, goal pose 7, et_cm, etheta_deg,
//! r_p, r_q, r_pen, q0..q15, dq0..dq15.

use crate::error::{Error, Result};
use crate::hand::NUM_JOINTS;
use crate::math::Pose;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const TRACE_COLUMNS: usize = 1 + 7 + 7 + 1 + 1 + 3 + NUM_JOINTS + NUM_JOINTS;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    /// 1-based tick index within the episode.
    pub t: u64,
    pub object_pose: Pose,
    pub goal_pose: Pose,
    /// Per-tick contribution to E_t, centimeters.
    pub et_cm: f64,
    /// Per-tick contribution to E_theta, degrees.
    pub etheta_deg: f64,
    pub r_p: f64,
    pub r_q: f64,
    pub r_pen: f64,
    pub q: [f64; NUM_JOINTS],
    pub dq: [f64; NUM_JOINTS],
}

impl TraceRow {
    pub fn is_finite(&self) -> bool {
        self.object_pose.is_finite()
            && self.goal_pose.is_finite()
            && self.et_cm.is_finite()
            && self.etheta_deg.is_finite()
            && self.r_p.is_finite()
            && self.r_q.is_finite()
            && self.r_pen.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.dq.iter().all(|v| v.is_finite())
    }

    fn write_csv(&self, out: &mut String) {
        let _ = write!(out, "{}", self.t);
        for v in self.object_pose.to_array7() {
            let _ = write!(out, ",{v}");
        }
        for v in self.goal_pose.to_array7() {
            let _ = write!(out, ",{v}");
        }
        for v in [self.et_cm, self.etheta_deg, self.r_p, self.r_q, self.r_pen] {
            let _ = write!(out, ",{v}");
        }
        for v in self.q.iter().chain(self.dq.iter()) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out);
    }

    fn parse_csv(line: &str, lineno: usize) -> Result<TraceRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != TRACE_COLUMNS {
            return Err(Error::parse(
                "trace",
                lineno,
                format!("expected {TRACE_COLUMNS} columns, found {}", fields.len()),
            ));
        }
        let t: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse("trace", lineno, format!("bad tick index {:?}", fields[0])))?;
        let mut vals = [0.0f64; TRACE_COLUMNS - 1];
        for (i, f) in fields[1..].iter().enumerate() {
            vals[i] = f
                .trim()
                .parse()
                .map_err(|_| Error::parse("trace", lineno, format!("bad float {f:?}")))?;
        }
        let pose = |a: &[f64]| Pose::from_array7(a.try_into().expect("length checked"));
        let row = TraceRow {
            t,
            object_pose: pose(&vals[0..7]),
            goal_pose: pose(&vals[7..14]),
            et_cm: vals[14],
            etheta_deg: vals[15],
            r_p: vals[16],
            r_q: vals[17],
            r_pen: vals[18],
            q: vals[19..19 + NUM_JOINTS].try_into().expect("length checked"),
            dq: vals[19 + NUM_JOINTS..].try_into().expect("length checked"),
        };
        if !row.is_finite() {
            return Err(Error::parse("trace", lineno, "non-finite value".to_string()));
        }
        Ok(row)
    }
}

fn column_header() -> String {
    let mut cols = vec!["t".to_string()];
    for prefix in ["obj", "goal"] {
        for suffix in ["px", "py", "pz", "qw", "qx", "qy", "qz"] {
            cols.push(format!("{prefix}_{suffix}"));
        }
    }
    for name in ["et_cm", "etheta_deg", "r_p", "r_q", "r_pen"] {
        cols.push(name.to_string());
    }
    for i in 0..NUM_JOINTS {
        cols.push(format!("q{i}"));
    }
    for i in 0..NUM_JOINTS {
        cols.push(format!("dq{i}"));
    }
    cols.join(",")
}

/// One episode: ordered per-tick rows plus episode-level metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn meta_bool(&self, key: &str) -> bool {
        self.meta.get(key).map(|v| v == "true").unwrap_or(false)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", column_header());
        for row in &self.rows {
            row.write_csv(&mut out);
        }
        out
    }

    pub fn parse(text: &str) -> Result<EpisodeTrace> {
        let mut trace = EpisodeTrace::default();
        let mut seen_header = false;
        let mut last_t = 0u64;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if seen_header {
                    return Err(Error::parse(
                        "trace",
                        lineno,
                        "metadata after column header".to_string(),
                    ));
                }
                let rest = rest.trim();
                let (k, v) = rest.split_once('=').ok_or_else(|| {
                    Error::parse("trace", lineno, format!("metadata without '=': {rest:?}"))
                })?;
                trace.meta.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            if !seen_header {
                if line != column_header() {
                    return Err(Error::parse(
                        "trace",
                        lineno,
                        "missing or mismatched column header".to_string(),
                    ));
                }
                seen_header = true;
                continue;
            }
            let row = TraceRow::parse_csv(line, lineno)?;
            if row.t <= last_t {
                return Err(Error::parse(
                    "trace",
                    lineno,
                    format!("tick index not increasing: {} after {last_t}", row.t),
                ));
            }
            last_t = row.t;
            trace.rows.push(row);
        }
        if !seen_header {
            return Err(Error::parse("trace", 0, "missing column header".to_string()));
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<EpisodeTrace> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// Index of the first row with a penalty, if any.
    pub fn first_penalty(&self) -> Option<usize> {
        self.rows.iter().position(|r| r.r_pen < 0.0)
    }

    /// Rows considered for error metrics: everything up to and including the
    /// first penalty tick; later ticks are post-slip and excluded.
    pub fn metric_rows(&self) -> &[TraceRow] {
        match self.first_penalty() {
            Some(i) => &self.rows[..=i],
            None => &self.rows,
        }
    }
}
