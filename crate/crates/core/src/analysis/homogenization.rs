//! Pulse-resolved (M3) versus averaged (M4) transport.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::integrator::{run, IntegrationConfig, System, Trajectory};
use crate::state::{BolusState, ModelVariant, ParameterSet};

/// How the two runs are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonWindow {
    /// Length of the windows over which velocities are averaged, seconds.
    pub window: f64,
    /// Initial stretch excluded from the velocity comparison, seconds.
    pub transient: f64,
}

impl Default for ComparisonWindow {
    fn default() -> Self {
        ComparisonWindow {
            window: 10.0,
            transient: 1800.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiscrepancy {
    /// `sup_t |x_a - x_b| / L` over the common time span.
    pub sup_position_error: f64,
    /// Largest relative gap between window-mean velocities after the transient.
    pub mean_velocity_error: f64,
    /// Number of velocity windows compared.
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationRow {
    /// Factor applied to the pulse period and pulse width.
    pub scale: f64,
    pub period: f64,
    pub width_eps: f64,
    pub sup_position_error: f64,
    pub mean_velocity_error: f64,
    pub resolved_exit_time: Option<f64>,
    pub averaged_exit_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationTable {
    pub rows: Vec<HomogenizationRow>,
}

/// Samples of two trajectories taken at the same instants, up to the first
/// time either one stops.
pub fn aligned_samples<'a>(a: &'a Trajectory, b: &'a Trajectory) -> Vec<(&'a BolusState, &'a BolusState)> {
    a.samples
        .iter()
        .zip(&b.samples)
        .take_while(|(sa, sb)| (sa.t - sb.t).abs() <= 1e-9 * sa.t.abs().max(1.0))
        .collect()
}

/// Compares trajectory `a` against the reference `b`.
pub fn compare_trajectories(
    a: &Trajectory,
    b: &Trajectory,
    length: f64,
    cmp: &ComparisonWindow,
) -> Result<TrajectoryDiscrepancy> {
    let pairs = aligned_samples(a, b);
    if pairs.len() < 2 {
        return Err(ModelError::Analysis("trajectories share fewer than two sample times".into()));
    }
    let sup_position_error = pairs
        .iter()
        .map(|(sa, sb)| (sa.x - sb.x).abs() / length)
        .fold(0.0, f64::max);

    let stride = pairs[1].0.t - pairs[0].0.t;
    let per_window = (cmp.window / stride).round() as usize;
    if per_window == 0 || ((per_window as f64) * stride - cmp.window).abs() > 1e-9 * cmp.window {
        return Err(ModelError::Analysis(format!(
            "velocity window {} s is not a multiple of the output stride {stride} s",
            cmp.window
        )));
    }
    let mut mean_velocity_error: f64 = 0.0;
    let mut windows = 0;
    let mut i = pairs.iter().position(|(s, _)| s.t >= cmp.transient).unwrap_or(pairs.len());
    while i + per_window < pairs.len() {
        let (a0, b0) = pairs[i];
        let (a1, b1) = pairs[i + per_window];
        let dt = a1.t - a0.t;
        let va = (a1.x - a0.x) / dt;
        let vb = (b1.x - b0.x) / dt;
        if vb.abs() > 1e-12 {
            mean_velocity_error = mean_velocity_error.max((va - vb).abs() / vb.abs());
            windows += 1;
        }
        i += per_window;
    }
    Ok(TrajectoryDiscrepancy {
        sup_position_error,
        mean_velocity_error,
        windows,
    })
}

/// Largest `max - min` of the velocity over consecutive windows after the
/// transient.
pub fn max_velocity_swing(traj: &Trajectory, window: f64, transient: f64) -> f64 {
    let samples: Vec<_> = traj.samples.iter().filter(|s| s.t >= transient).collect();
    let mut swing: f64 = 0.0;
    let mut start = 0;
    while start < samples.len() {
        let t0 = samples[start].t;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut end = start;
        while end < samples.len() && samples[end].t < t0 + window {
            lo = lo.min(samples[end].v);
            hi = hi.max(samples[end].v);
            end += 1;
        }
        if end == samples.len() {
            break; // incomplete last window
        }
        swing = swing.max(hi - lo);
        start = end;
    }
    swing
}

/// Parameters with the pulse period and width multiplied by `scale` while
/// the mean pulse effect `tau` is held fixed, so each pulse carries
/// `tau * period` and the averaged equation is unchanged.
pub fn scaled_pulses(p: &ParameterSet, scale: f64) -> ParameterSet {
    ParameterSet {
        pulse_period: p.pulse_period * scale,
        pulse_width_eps: p.pulse_width_eps * scale,
        ..p.clone()
    }
}

/// Runs M3 and M4 side by side for the base system and returns both.
pub fn paired_runs(
    base: &System,
    initial: &BolusState,
    cfg: &IntegrationConfig,
) -> Result<(Trajectory, Trajectory)> {
    let mut resolved = base.clone();
    resolved.variant = ModelVariant::M3;
    let mut averaged = base.clone();
    averaged.variant = ModelVariant::M4;
    let (r, a) = rayon::join(|| run(initial, &resolved, cfg), || run(initial, &averaged, cfg));
    Ok((r?, a?))
}

/// Resolved-versus-averaged errors for each pulse-period scale.
pub fn homogenization_error(
    base: &System,
    initial: &BolusState,
    cfg: &IntegrationConfig,
    scales: &[f64],
    cmp: &ComparisonWindow,
) -> Result<HomogenizationTable> {
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        if !(scale > 0.0) {
            return Err(ModelError::config("homogenization.scales", "scales must be > 0"));
        }
        let sys = base.with_params(scaled_pulses(&base.params, scale))?;
        let cfg = IntegrationConfig {
            pulse_substep: cfg.pulse_substep * scale,
            ..cfg.clone()
        };
        let (m3, m4) = paired_runs(&sys, initial, &cfg)?;
        let d = compare_trajectories(&m3, &m4, sys.params.L, cmp)?;
        rows.push(HomogenizationRow {
            scale,
            period: sys.params.pulse_period,
            width_eps: sys.params.pulse_width_eps,
            sup_position_error: d.sup_position_error,
            mean_velocity_error: d.mean_velocity_error,
            resolved_exit_time: m3.exit_time,
            averaged_exit_time: m4.exit_time,
        });
    }
    Ok(HomogenizationTable { rows })
}
