//! Time stepping of the coupled transport and kinetics system.
//!
//! Pulse-resolved variants are stepped so that step boundaries land on the
//! edges of every pulse window in retarded time; inside a window the step is
//! capped at `pulse_substep`. Between windows and for the homogenized model
//! the base step (or the adaptive step, capped by it) is used.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::kinetics::{self, EnzymeActivityProfile, SecretionWindow};
use crate::state::{total_mass, BolusState, ModelVariant, ParameterSet, MASS_NAMES, STATE_LEN};
use crate::transport::{self, PulseTrain};

/// One fully specified model: variant, parameters, profiles and pulses.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub variant: ModelVariant,
    pub params: ParameterSet,
    pub profile: EnzymeActivityProfile,
    pub secretion: SecretionWindow,
    pub train: PulseTrain,
    /// Hold `x` and `v` fixed; only the kinetics evolve.
    pub frozen_transport: bool,
}

const RATE_NAMES: [&str; STATE_LEN] = [
    "dx/dt",
    "dv/dt",
    "d(a_s)/dt",
    "d(a_ns)/dt",
    "d(a_nd)/dt",
    "d(b_int)/dt",
    "d(b_abs)/dt",
    "d(w)/dt",
    "d(e)/dt",
    "d(absorbed_cum)/dt",
    "d(secreted_cum)/dt",
];

/// First index of the mass block in the state array.
const MASS_OFFSET: usize = 2;

impl System {
    pub fn new(variant: ModelVariant, params: ParameterSet) -> Result<Self> {
        params.validate()?;
        let train = PulseTrain::from_params(&params)?;
        let secretion = SecretionWindow::from_params(&params);
        Ok(System {
            variant,
            params,
            profile: EnzymeActivityProfile::default(),
            secretion,
            train,
            frozen_transport: false,
        })
    }

    /// Rebuilds the derived pulse train and secretion window after the
    /// parameters were edited in place.
    pub fn refresh(&mut self) -> Result<()> {
        self.params.validate()?;
        self.train = PulseTrain::from_params(&self.params)?;
        let SecretionWindow {
            chi,
            mode,
            feeds_enzyme,
            ..
        } = self.secretion;
        self.secretion = SecretionWindow {
            chi,
            mode,
            feeds_enzyme,
            ..SecretionWindow::from_params(&self.params)
        };
        Ok(())
    }

    pub fn with_params(&self, params: ParameterSet) -> Result<Self> {
        let mut sys = self.clone();
        sys.params = params;
        sys.refresh()?;
        Ok(sys)
    }

    /// Checks the preconditions of the variant on an initial state.
    pub fn check_initial(&self, s: &BolusState) -> Result<()> {
        for (name, value) in MASS_NAMES.iter().zip(s.masses()) {
            if !(value >= 0.0) {
                return Err(ModelError::config(
                    format!("initial.{name}"),
                    format!("mass must be >= 0, got {value}"),
                ));
            }
        }
        if s.x != 0.0 {
            return Err(ModelError::config("initial.x", "the bolus starts at the pylorus, x = 0"));
        }
        if s.v < 0.0 {
            return Err(ModelError::config("initial.v", "initial velocity must be >= 0"));
        }
        match self.variant {
            ModelVariant::M1 if s.a_ns > 0.0 || s.a_nd > 0.0 || s.b_int > 0.0 => {
                Err(ModelError::config(
                    "initial",
                    "M1 needs a fully solubilized bolus (a_ns = a_nd = b_int = 0)",
                ))
            }
            ModelVariant::M2 if s.a_ns > 0.0 || s.a_nd > 0.0 => Err(ModelError::config(
                "initial",
                "M2 needs a fully solubilized bolus (a_ns = a_nd = 0)",
            )),
            ModelVariant::M3 | ModelVariant::M4 => {
                let m = total_mass(s);
                if !(s.w > 0.0 && (s.w < m || s.dry_mass() == 0.0)) {
                    return Err(ModelError::config(
                        "initial.w",
                        "M3/M4 need a water proportion strictly between 0 and 1",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Right-hand side of the full system, in [`BolusState::to_array`] order.
    pub fn derivative(&self, s: &BolusState) -> Result<[f64; STATE_LEN]> {
        self.derivative_in_phase(s, None)
    }

    /// [`System::derivative`] with the pulse forcing held on or off.
    pub fn derivative_in_phase(&self, s: &BolusState, pulse_on: Option<bool>) -> Result<[f64; STATE_LEN]> {
        let p = &self.params;
        if self.variant.pulse_resolved() && !self.frozen_transport && s.v >= p.c {
            return Err(ModelError::DegenerateState {
                t: s.t,
                reason: format!(
                    "velocity {:e} m/s reached the wave speed {:e} m/s; the retarded pulse time is no longer monotone",
                    s.v, p.c
                ),
            });
        }
        let rates = match self.variant {
            ModelVariant::M1 => kinetics::rhs_m1(s, p, &self.profile),
            ModelVariant::M2 => kinetics::rhs_m2(s, p, &self.profile, &self.secretion)?,
            ModelVariant::M3 | ModelVariant::M4 => {
                kinetics::rhs_m3(s, p, &self.profile, &self.secretion)?
            }
        };
        let (dx, dv) = if self.frozen_transport {
            (0.0, 0.0)
        } else {
            (
                s.v,
                transport::acceleration_in_phase(s, self.variant, p, &self.train, pulse_on)?,
            )
        };
        let mut d = [0.0; STATE_LEN];
        d[0] = dx;
        d[1] = dv;
        d[MASS_OFFSET..].copy_from_slice(&rates.as_array());
        if let Some(i) = d.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NumericalFailure {
                t: s.t,
                term: RATE_NAMES[i],
            });
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Classical fixed-step fourth-order Runge-Kutta.
    #[default]
    Rk4,
    /// Dormand-Prince 5(4) with step-size control.
    Dopri5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub method: Method,
    pub base_step: f64,
    pub pulse_substep: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_time: f64,
    pub output_stride: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            method: Method::Rk4,
            base_step: 1.0,
            pulse_substep: 0.125,
            rtol: 1e-8,
            atol: 1e-9,
            max_time: 12.0 * 3600.0,
            output_stride: 10.0,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self, train: &PulseTrain) -> Result<()> {
        let positive = [
            ("integration.base_step", self.base_step),
            ("integration.pulse_substep", self.pulse_substep),
            ("integration.rtol", self.rtol),
            ("integration.atol", self.atol),
            ("integration.max_time", self.max_time),
            ("integration.output_stride", self.output_stride),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::config(field, format!("must be > 0, got {value}")));
            }
        }
        if self.pulse_substep > train.width_eps / 4.0 * (1.0 + 1e-12) {
            return Err(ModelError::config(
                "integration.pulse_substep",
                format!(
                    "must resolve each pulse with at least 4 steps (<= {} s)",
                    train.width_eps / 4.0
                ),
            ));
        }
        if self.output_stride < self.base_step {
            return Err(ModelError::config(
                "integration.output_stride",
                "must be >= base_step",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitFlag {
    Exited,
    TimeBudget,
    DegenerateState,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub rejected: usize,
    /// Distinct pulse windows the bolus was stepped through.
    pub pulses_seen: usize,
    /// Retarded time at the start and end of the run.
    pub retarded_start: f64,
    pub retarded_end: f64,
}

/// Conservation audit of `dry + absorbed - secreted`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerAudit {
    pub initial: f64,
    pub last: f64,
    pub drift: f64,
    pub relative_drift: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub variant: ModelVariant,
    pub samples: Vec<BolusState>,
    pub exit_time: Option<f64>,
    pub exit: ExitFlag,
    pub diagnostic: Option<String>,
    pub stats: RunStats,
    pub ledger: LedgerAudit,
}

impl Trajectory {
    pub fn last(&self) -> &BolusState {
        self.samples.last().expect("trajectory holds the initial sample")
    }
}

/// Next time at which the retarded time `t - x/c` reaches a multiple of the
/// pulse period, extrapolating the current velocity.
pub fn detect_pulse_windows(t: f64, x: f64, v: f64, p: &ParameterSet) -> f64 {
    let r = t - x / p.c;
    let rate = 1.0 - v / p.c;
    let target = if r <= 0.0 {
        0.0
    } else {
        (r / p.pulse_period).ceil() * p.pulse_period
    };
    t + (target - r) / rate
}

/// Smallest pulse-window edge (start or end) strictly after retarded time `r`.
fn next_edge(train: &PulseTrain, r: f64) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    let k = (r / train.period).floor();
    let start = k * train.period;
    let end = start + train.width_eps;
    if r < end {
        end
    } else {
        start + train.period
    }
}

/// Retarded-time tolerance, in seconds, for landing on a window edge. A state
/// this close to an edge belongs to the segment after it.
const MIN_STEP: f64 = 1e-9;

/// Whether the segment starting at retarded time `r` lies inside a pulse.
fn in_pulse(train: &PulseTrain, r: f64) -> bool {
    transport::pulse_rate(train, r + MIN_STEP) > 0.0
}

fn axpy(y: &[f64; STATE_LEN], h: f64, terms: &[(f64, &[f64; STATE_LEN])]) -> [f64; STATE_LEN] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

fn rk4_raw(sys: &System, s: &BolusState, dt: f64, pulse_on: Option<bool>) -> Result<BolusState> {
    let y = s.to_array();
    let k1 = sys.derivative_in_phase(s, pulse_on)?;
    let s2 = BolusState::from_array(s.t + 0.5 * dt, &axpy(&y, dt, &[(0.5, &k1)]));
    let k2 = sys.derivative_in_phase(&s2, pulse_on)?;
    let s3 = BolusState::from_array(s.t + 0.5 * dt, &axpy(&y, dt, &[(0.5, &k2)]));
    let k3 = sys.derivative_in_phase(&s3, pulse_on)?;
    let s4 = BolusState::from_array(s.t + dt, &axpy(&y, dt, &[(1.0, &k3)]));
    let k4 = sys.derivative_in_phase(&s4, pulse_on)?;
    let y1 = axpy(
        &y,
        dt,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    );
    Ok(BolusState::from_array(s.t + dt, &y1))
}

/// Clamps mass undershoot in `[-atol, 0)` to zero; deeper undershoot is an error.
fn settle_masses(s: &mut BolusState, atol: f64) -> Result<()> {
    let mut y = s.to_array();
    for (i, value) in y.iter_mut().enumerate().skip(MASS_OFFSET) {
        if !value.is_finite() {
            return Err(ModelError::NumericalFailure {
                t: s.t,
                term: RATE_NAMES[i],
            });
        }
        if *value < 0.0 {
            if *value >= -atol {
                *value = 0.0;
            } else {
                return Err(ModelError::NegativeMass {
                    component: MASS_NAMES[i - MASS_OFFSET],
                    value: *value,
                    t: s.t,
                });
            }
        }
    }
    if !(y[0].is_finite() && y[1].is_finite()) {
        return Err(ModelError::NumericalFailure {
            t: s.t,
            term: if y[0].is_finite() { "dv/dt" } else { "dx/dt" },
        });
    }
    *s = BolusState::from_array(s.t, &y);
    Ok(())
}

/// One classical RK4 step of the full coupled system.
pub fn step(sys: &System, s: &BolusState, dt: f64, atol: f64) -> Result<BolusState> {
    if !(dt > 0.0) {
        return Err(ModelError::Domain(format!("step size must be > 0, got {dt}")));
    }
    let pulse_on = sys.variant.pulse_resolved().then(|| in_pulse(&sys.train, transport::retarded_time(s, &sys.params)));
    let mut next = rk4_raw(sys, s, dt, pulse_on)?;
    settle_masses(&mut next, atol)?;
    Ok(next)
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince step; returns the 5th-order solution and the scaled
/// error norm (accept when <= 1).
fn dopri_step(
    sys: &System,
    s: &BolusState,
    dt: f64,
    pulse_on: Option<bool>,
    cfg: &IntegrationConfig,
) -> Result<(BolusState, f64)> {
    let y = s.to_array();
    let mut k = [[0.0; STATE_LEN]; 7];
    for stage in 0..7 {
        let mut yi = y;
        for (j, kj) in k.iter().enumerate().take(stage) {
            let a = DP_A[stage][j];
            if a != 0.0 {
                for i in 0..STATE_LEN {
                    yi[i] += dt * a * kj[i];
                }
            }
        }
        k[stage] = sys.derivative_in_phase(&BolusState::from_array(s.t + DP_C[stage] * dt, &yi), pulse_on)?;
    }
    let mut y5 = y;
    let mut err = 0.0;
    for i in 0..STATE_LEN {
        let mut inc5 = 0.0;
        let mut inc4 = 0.0;
        for stage in 0..7 {
            inc5 += DP_B5[stage] * k[stage][i];
            inc4 += DP_B4[stage] * k[stage][i];
        }
        y5[i] += dt * inc5;
        let scale = cfg.atol + cfg.rtol * y[i].abs().max(y5[i].abs());
        let e = dt * (inc5 - inc4) / scale;
        err += e * e;
    }
    Ok((BolusState::from_array(s.t + dt, &y5), (err / STATE_LEN as f64).sqrt()))
}

struct Stepper<'a> {
    sys: &'a System,
    cfg: &'a IntegrationConfig,
    adaptive_h: f64,
    rejected: usize,
}

impl Stepper<'_> {
    /// Advances by at most `dt_max`, returning the new state.
    fn advance(&mut self, s: &BolusState, dt_max: f64, pulse_on: Option<bool>) -> Result<BolusState> {
        match self.cfg.method {
            Method::Rk4 => {
                let mut next = rk4_raw(self.sys, s, dt_max, pulse_on)?;
                settle_masses(&mut next, self.cfg.atol)?;
                Ok(next)
            }
            Method::Dopri5 => loop {
                let dt = self.adaptive_h.min(dt_max);
                let (mut next, err) = dopri_step(self.sys, s, dt, pulse_on, self.cfg)?;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if err <= 1.0 {
                    // grow from the step actually taken, never past the base step
                    self.adaptive_h = (dt * factor).min(self.cfg.base_step);
                    settle_masses(&mut next, self.cfg.atol)?;
                    return Ok(next);
                }
                self.rejected += 1;
                self.adaptive_h = dt * factor;
                if self.adaptive_h < 1e-12 {
                    return Err(ModelError::NumericalFailure {
                        t: s.t,
                        term: "adaptive step size underflow",
                    });
                }
            },
        }
    }
}

/// Integrates from `initial` until the bolus leaves the intestine, the time
/// budget runs out, or the state degenerates.
pub fn run(initial: &BolusState, sys: &System, cfg: &IntegrationConfig) -> Result<Trajectory> {
    cfg.validate(&sys.train)?;
    sys.check_initial(initial)?;
    let p = &sys.params;
    let resolved = sys.variant.pulse_resolved() && !sys.frozen_transport;

    let mut s = *initial;
    let mut samples = vec![s];
    let mut stats = RunStats {
        retarded_start: transport::retarded_time(&s, p),
        ..RunStats::default()
    };
    let mut stepper = Stepper {
        sys,
        cfg,
        adaptive_h: cfg.base_step.min(cfg.pulse_substep * 4.0),
        rejected: 0,
    };
    let mut next_output_index: u64 = 1;
    let mut last_window: Option<i64> = None;
    let mut exit = ExitFlag::TimeBudget;
    let mut exit_time = None;
    let mut diagnostic = None;

    loop {
        if s.t >= cfg.max_time * (1.0 - 1e-15) {
            break;
        }
        let next_output = next_output_index as f64 * cfg.output_stride;
        let mut dt = cfg.base_step.min(next_output - s.t).min(cfg.max_time - s.t);

        let mut edge_target = None;
        let mut pulse_on = None;
        if resolved {
            if s.v >= p.c {
                exit = ExitFlag::DegenerateState;
                diagnostic = Some(format!(
                    "velocity {:e} m/s reached the wave speed at t = {} s",
                    s.v, s.t
                ));
                break;
            }
            let r = transport::retarded_time(&s, p);
            let rate = 1.0 - s.v / p.c;
            let on = in_pulse(&sys.train, r);
            if on {
                dt = dt.min(cfg.pulse_substep);
                let k = ((r + MIN_STEP) / sys.train.period).floor() as i64;
                if last_window != Some(k) {
                    stats.pulses_seen += 1;
                    last_window = Some(k);
                }
            }
            pulse_on = Some(on);
            let edge = next_edge(&sys.train, r + MIN_STEP);
            let to_edge = (edge - r) / rate;
            if to_edge <= dt {
                dt = to_edge;
                edge_target = Some(edge);
            }
        }

        let mut attempt = stepper.advance(&s, dt, pulse_on);
        // Land on the window edge: the step length was extrapolated from the
        // current velocity, so correct it with secant iterations.
        if let (Some(edge), Ok(next)) = (edge_target, &attempt) {
            let r0 = transport::retarded_time(&s, p);
            let mut next = *next;
            let mut dt_try = dt;
            for _ in 0..8 {
                let r1 = transport::retarded_time(&next, p);
                let full_step = (next.t - s.t - dt_try).abs() <= 1e-12 * dt_try.max(1.0);
                if (r1 - edge).abs() <= MIN_STEP || !full_step || r1 == r0 {
                    break;
                }
                dt_try *= (edge - r0) / (r1 - r0);
                match stepper.advance(&s, dt_try, pulse_on) {
                    Ok(n) => next = n,
                    Err(e) => {
                        attempt = Err(e);
                        break;
                    }
                }
            }
            if attempt.is_ok() {
                attempt = Ok(next);
            }
        }

        let next = match attempt {
            Ok(n) => n,
            Err(ModelError::DegenerateState { reason, .. }) => {
                exit = ExitFlag::DegenerateState;
                diagnostic = Some(reason);
                break;
            }
            Err(e) => return Err(e),
        };
        stats.steps += 1;

        if next.x >= p.L {
            let theta = if next.x > s.x { (p.L - s.x) / (next.x - s.x) } else { 1.0 };
            let a = s.to_array();
            let b = next.to_array();
            let mut y = [0.0; STATE_LEN];
            for i in 0..STATE_LEN {
                y[i] = a[i] + theta * (b[i] - a[i]);
            }
            y[0] = p.L;
            let t_exit = s.t + theta * (next.t - s.t);
            let exit_state = BolusState::from_array(t_exit, &y);
            if t_exit > samples.last().map_or(f64::NEG_INFINITY, |l| l.t) {
                samples.push(exit_state);
            }
            s = exit_state;
            exit = ExitFlag::Exited;
            exit_time = Some(t_exit);
            break;
        }

        s = next;
        if s.t >= next_output - 1e-9 * cfg.output_stride {
            s.t = next_output;
            samples.push(s);
            next_output_index += 1;
        }
    }
    if samples.last().map(|l| l.t) != Some(s.t) && s.t > samples.last().unwrap().t {
        samples.push(s);
    }

    stats.rejected = stepper.rejected;
    stats.retarded_end = transport::retarded_time(&s, p);
    let ledger = audit(initial, &s, cfg);
    Ok(Trajectory {
        variant: sys.variant,
        samples,
        exit_time,
        exit,
        diagnostic,
        stats,
        ledger,
    })
}

fn audit(initial: &BolusState, last: &BolusState, cfg: &IntegrationConfig) -> LedgerAudit {
    let start = initial.ledger();
    let end = last.ledger();
    let drift = (end - start).abs();
    let scale = total_mass(initial);
    let tolerance = (10.0 * cfg.rtol * scale).max(1e-12);
    LedgerAudit {
        initial: start,
        last: end,
        drift,
        relative_drift: if start > 0.0 { drift / start } else { drift },
        tolerance,
        passed: drift <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m4_system() -> System {
        System::new(ModelVariant::M4, ParameterSet::default()).unwrap()
    }

    fn wet_bolus(v: f64) -> BolusState {
        BolusState {
            v,
            a_s: 10.0,
            a_ns: 30.0,
            w: 60.0,
            e: 1.0,
            ..BolusState::default()
        }
    }

    #[test]
    fn step_keeps_a_stationary_state() {
        // nothing to degrade, no enzyme, frozen transport
        let mut sys = System::new(ModelVariant::M1, ParameterSet::default()).unwrap();
        sys.frozen_transport = true;
        let s = BolusState {
            x: 2.0,
            w: 10.0,
            ..BolusState::default()
        };
        let next = step(&sys, &s, 1.0, 1e-9).unwrap();
        assert_eq!(BolusState { t: s.t, ..next }, s);
        assert_eq!(next.t, 1.0);
    }

    #[test]
    fn step_rejects_non_positive_dt() {
        assert!(step(&m4_system(), &wet_bolus(1e-3), 0.0, 1e-9).is_err());
    }

    #[test]
    fn rk4_enzyme_decay_local_error_is_fifth_order() {
        let params = ParameterSet {
            k_e: 0.05,
            ..ParameterSet::default()
        };
        let mut sys = System::new(ModelVariant::M1, params).unwrap();
        sys.frozen_transport = true;
        let s = BolusState {
            e: 1.0,
            ..BolusState::default()
        };
        let err = |dt: f64| (step(&sys, &s, dt, 1e-9).unwrap().e - (-0.05 * dt).exp()).abs();
        let ratio = err(2.0) / err(1.0);
        // local error ~ dt^5 -> ratio ~ 32
        assert!((ratio - 32.0).abs() < 2.0, "{ratio}");
    }

    #[test]
    fn rk4_m1_step_doubling_is_fourth_order() {
        let params = ParameterSet {
            C: 0.05,
            k_abs: 0.01,
            ..ParameterSet::default()
        };
        let sys = System::new(ModelVariant::M1, params).unwrap();
        let s0 = BolusState {
            t: 5.0, // between pulses
            a_s: 20.0,
            w: 20.0,
            e: 1.0,
            v: 1e-3,
            x: 1.0,
            ..BolusState::default()
        };
        let diff = |h: f64| {
            let full = step(&sys, &s0, h, 1e-9).unwrap();
            let half = step(&sys, &step(&sys, &s0, h / 2.0, 1e-9).unwrap(), h / 2.0, 1e-9).unwrap();
            (full.a_s - half.a_s).abs()
        };
        let ratio = diff(4.0) / diff(2.0);
        assert!((ratio - 32.0).abs() < 3.0, "{ratio}");
    }

    #[test]
    fn negative_mass_beyond_tolerance_is_an_error() {
        let mut s = wet_bolus(0.0);
        s.b_abs = -1e-12;
        settle_masses(&mut s, 1e-9).unwrap();
        assert_eq!(s.b_abs, 0.0);
        s.b_abs = -1e-6;
        assert!(matches!(
            settle_masses(&mut s, 1e-9),
            Err(ModelError::NegativeMass { component: "b_abs", .. })
        ));
        s.b_abs = f64::NAN;
        assert!(matches!(
            settle_masses(&mut s, 1e-9),
            Err(ModelError::NumericalFailure { term: "d(b_abs)/dt", .. })
        ));
    }

    #[test]
    fn derivative_flags_non_finite_terms() {
        let params = ParameterSet {
            C: f64::MAX,
            ..ParameterSet::default()
        };
        let sys = System::new(ModelVariant::M1, params).unwrap();
        let s = BolusState {
            a_s: f64::MAX,
            e: 10.0,
            w: 1.0,
            ..BolusState::default()
        };
        assert!(matches!(
            sys.derivative(&s),
            Err(ModelError::NumericalFailure { term: "d(a_s)/dt", .. })
        ));
    }

    #[test]
    fn pulse_window_detection() {
        let p = ParameterSet::default();
        assert_eq!(detect_pulse_windows(0.0, 0.0, 0.0, &p), 0.0);
        assert_eq!(detect_pulse_windows(3.0, 0.0, 0.0, &p), 10.0);
        assert_eq!(detect_pulse_windows(13.0, 0.0, 0.0, &p), 20.0);
        // Doppler spacing: at constant v, successive starts period/(1 - v/c) apart
        let v = 0.6 * p.c;
        let spacing = p.pulse_period / (1.0 - v / p.c);
        let mut t = 100.0;
        let first = detect_pulse_windows(t, v * t, v, &p);
        t = first + 1e-6;
        let second = detect_pulse_windows(t, v * t, v, &p);
        assert!((second - first - spacing).abs() < 1e-6, "{}", second - first);
    }

    #[test]
    fn next_edge_walks_window_boundaries() {
        let train = PulseTrain::new(10.0, 0.5, 2.0).unwrap();
        assert_eq!(next_edge(&train, -3.0), 0.0);
        assert_eq!(next_edge(&train, 0.0), 0.5);
        assert_eq!(next_edge(&train, 0.5), 10.0);
        assert_eq!(next_edge(&train, 10.2), 10.5);
    }

    #[test]
    fn config_validation() {
        let train = PulseTrain::new(10.0, 0.5, 2.0).unwrap();
        IntegrationConfig::default().validate(&train).unwrap();
        let bad = IntegrationConfig {
            pulse_substep: 0.2,
            ..IntegrationConfig::default()
        };
        assert!(bad.validate(&train).is_err());
        let bad = IntegrationConfig {
            output_stride: 0.5,
            ..IntegrationConfig::default()
        };
        assert!(bad.validate(&train).is_err());
    }

    #[test]
    fn initial_state_preconditions() {
        let sys = System::new(ModelVariant::M2, ParameterSet::default()).unwrap();
        assert!(sys.check_initial(&wet_bolus(0.0)).is_err());
        let m4 = m4_system();
        m4.check_initial(&wet_bolus(0.0)).unwrap();
        let mut neg = wet_bolus(0.0);
        neg.a_s = -1.0;
        match m4.check_initial(&neg) {
            Err(ModelError::Config { field, .. }) => assert_eq!(field, "initial.a_s"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wave_speed_is_degenerate_for_resolved_models() {
        let sys = System::new(ModelVariant::M3, ParameterSet::default()).unwrap();
        let s = wet_bolus(ParameterSet::default().c * 1.01);
        let traj = run(&s, &sys, &IntegrationConfig::default()).unwrap();
        assert_eq!(traj.exit, ExitFlag::DegenerateState);
        assert!(traj.diagnostic.unwrap().contains("wave speed"));
    }

    fn short(max_time: f64) -> IntegrationConfig {
        IntegrationConfig {
            max_time,
            ..IntegrationConfig::default()
        }
    }

    #[test]
    fn no_pulse_is_skipped() {
        let sys = System::new(ModelVariant::M3, ParameterSet::default()).unwrap();
        let traj = run(&wet_bolus(1e-3), &sys, &short(3600.0)).unwrap();
        let span = traj.stats.retarded_end - traj.stats.retarded_start;
        let expected = (span / sys.train.period).floor() as i64;
        assert!((traj.stats.pulses_seen as i64 - expected).abs() <= 1, "{:?}", traj.stats);
    }

    #[test]
    fn resolved_run_converges_under_substep_refinement() {
        let sys = System::new(ModelVariant::M3, ParameterSet::default()).unwrap();
        let coarse = run(&wet_bolus(1e-3), &sys, &short(1800.0)).unwrap();
        let cfg = IntegrationConfig {
            pulse_substep: 0.03125,
            base_step: 0.25,
            ..short(1800.0)
        };
        let fine = run(&wet_bolus(1e-3), &sys, &cfg).unwrap();
        let (a, b) = (coarse.last(), fine.last());
        assert_eq!(a.t, b.t);
        assert!((a.x - b.x).abs() <= 1e-5 * b.x, "{} vs {}", a.x, b.x);
    }

    #[test]
    fn samples_sit_on_the_output_grid() {
        let traj = run(&wet_bolus(1e-3), &m4_system(), &short(1000.0)).unwrap();
        for (k, s) in traj.samples.iter().enumerate() {
            assert_eq!(s.t, k as f64 * 10.0);
        }
        assert_eq!(traj.exit, ExitFlag::TimeBudget);
    }

    #[test]
    fn exit_is_interpolated_onto_the_ileum() {
        let sys = m4_system();
        let traj = run(&wet_bolus(1e-3), &sys, &IntegrationConfig::default()).unwrap();
        assert_eq!(traj.exit, ExitFlag::Exited);
        let n = traj.samples.len();
        let (before, last) = (&traj.samples[n - 2], &traj.samples[n - 1]);
        assert_eq!(last.x, sys.params.L);
        assert_eq!(Some(last.t), traj.exit_time);
        assert!(before.t < last.t && last.t - before.t <= 10.0);
        assert!(traj.samples.windows(2).all(|w| w[1].x >= w[0].x));
    }

    #[test]
    fn adaptive_and_fixed_steps_agree() {
        let sys = m4_system();
        let rk4 = run(&wet_bolus(1e-3), &sys, &IntegrationConfig::default()).unwrap();
        let cfg = IntegrationConfig {
            method: Method::Dopri5,
            ..IntegrationConfig::default()
        };
        let dp = run(&wet_bolus(1e-3), &sys, &cfg).unwrap();
        let (a, b) = (rk4.exit_time.unwrap(), dp.exit_time.unwrap());
        assert!((a - b).abs() <= 1e-4 * a, "{a} vs {b}");
        assert!(dp.ledger.passed);
    }

    #[test]
    fn identical_inputs_replay_bitwise() {
        let sys = System::new(ModelVariant::M3, ParameterSet::default()).unwrap();
        let a = run(&wet_bolus(1e-3), &sys, &short(2000.0)).unwrap();
        let b = run(&wet_bolus(1e-3), &sys, &short(2000.0)).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn ledger_audit_passes_for_perturbed_kinetics(
            c_deg in 0.0f64..1e-4,
            c_abs in 0.0f64..20.0,
            k_abs in 1e-4f64..0.05,
            beta in 0.0f64..50.0,
            resolved in proptest::bool::ANY,
        ) {
            let params = ParameterSet { C: c_deg, C_abs: c_abs, k_abs, beta, ..ParameterSet::default() };
            let variant = if resolved { ModelVariant::M3 } else { ModelVariant::M4 };
            let sys = System::new(variant, params).unwrap();
            let traj = run(&wet_bolus(1e-3), &sys, &short(2400.0)).unwrap();
            proptest::prop_assert!(traj.ledger.passed, "{:?}", traj.ledger);
            proptest::prop_assert!(traj.samples.windows(2).all(|w| w[1].x >= w[0].x));
        }
    }
}
