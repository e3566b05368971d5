//! Plain comma-separated tables and JSON summaries.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::integrator::Trajectory;

pub const TRAJECTORY_HEADER: &str =
    "t_s,x_m,v_mps,a_s_g,a_ns_g,a_nd_g,b_int_g,b_abs_g,w_g,e_g,absorbed_cum_g";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn row<I: IntoIterator<Item = f64>>(values: I) -> String {
    let mut line = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&float(v));
    }
    line
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.samples.len() * 270);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for s in &traj.samples {
        let line = row([
            s.t,
            s.x,
            s.v,
            s.a_s,
            s.a_ns,
            s.a_nd,
            s.b_int,
            s.b_abs,
            s.w,
            s.e,
            s.absorbed_cum,
        ]);
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ModelError::Analysis(format!("json: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |e: std::io::Error| ModelError::Analysis(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}
