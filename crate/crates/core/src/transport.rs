//! Bolus acceleration under peristaltic pulses and wall friction.
//!
//! Pulses are emitted at the duodenum and travel at the wave speed `c`, so
//! the pulse felt at time `t` by a bolus at `x` left at the retarded time
//! `t - x/c`. The pulse-resolved models differentiate `y(t - x/c)` in time,
//! which brings the factor `1 - v/c`; the homogenized model replaces the
//! pulse train by its mean `tau * (1 - v/c)`.

use crate::error::{ModelError, Result};
use crate::state::{volume, water_proportion, BolusState, ModelVariant, ParameterSet};

/// Periodic rectangular approximation of a Dirac comb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseTrain {
    pub period: f64,
    pub width_eps: f64,
    pub amplitude: f64,
}

impl PulseTrain {
    pub fn new(period: f64, width_eps: f64, amplitude: f64) -> Result<Self> {
        if !(width_eps > 0.0 && width_eps < period) {
            return Err(ModelError::config(
                "parameters.pulse_width_eps",
                format!("need 0 < eps < period, got eps = {width_eps}, period = {period}"),
            ));
        }
        Ok(PulseTrain {
            period,
            width_eps,
            amplitude,
        })
    }

    /// Each pulse carries `tau * period`, which is 1 for `tau = 1/period`.
    pub fn from_params(p: &ParameterSet) -> Result<Self> {
        let impulse = p.tau * p.pulse_period;
        Self::new(p.pulse_period, p.pulse_width_eps, impulse / p.pulse_width_eps)
    }

    /// Integral of the pulse function over one period.
    pub fn impulse(&self) -> f64 {
        self.amplitude * self.width_eps
    }

    /// Phase of `s` within the current period; `None` before the first pulse.
    pub fn phase(&self, s: f64) -> Option<f64> {
        if s < 0.0 {
            None
        } else {
            Some(s.rem_euclid(self.period))
        }
    }
}

/// `y'(s)`: the amplitude inside a pulse window, zero elsewhere and for `s < 0`.
pub fn pulse_rate(train: &PulseTrain, s: f64) -> f64 {
    match train.phase(s) {
        Some(phase) if phase < train.width_eps => train.amplitude,
        _ => 0.0,
    }
}

/// `(c0 + c1 V) / (a + b x)`
pub fn pulse_efficiency(x: f64, vol: f64, p: &ParameterSet) -> Result<f64> {
    let denom = p.a + p.b * x;
    if denom <= 0.0 {
        return Err(ModelError::config(
            "parameters.a",
            format!("pulse efficiency denominator a + b*x = {denom} at x = {x} m"),
        ));
    }
    Ok((p.c0 + p.c1 * vol) / denom)
}

/// Constant friction for M1/M2, `K_tilde / [W]` under the lubrication law.
pub fn friction_coefficient(s: &BolusState, variant: ModelVariant, p: &ParameterSet) -> Result<f64> {
    if !variant.lubricated() {
        return Ok(p.K_const);
    }
    let wp = water_proportion(s).map_err(|_| dry_bolus(s))?;
    if wp <= 0.0 {
        return Err(dry_bolus(s));
    }
    Ok(p.K_tilde / wp)
}

fn dry_bolus(s: &BolusState) -> ModelError {
    ModelError::DegenerateState {
        t: s.t,
        reason: "bolus has no water; lubrication friction is undefined".into(),
    }
}

/// Mean pulse forcing `tau * (1 - v/c)`.
pub fn averaged_pulse(v: f64, p: &ParameterSet) -> f64 {
    p.tau * (1.0 - v / p.c)
}

/// Retarded time at which the pulse felt now left the duodenum.
pub fn retarded_time(s: &BolusState, p: &ParameterSet) -> f64 {
    s.t - s.x / p.c
}

/// `d^2x/dt^2` for the given variant.
pub fn acceleration(
    s: &BolusState,
    variant: ModelVariant,
    p: &ParameterSet,
    train: &PulseTrain,
) -> Result<f64> {
    acceleration_in_phase(s, variant, p, train, None)
}

/// [`acceleration`] with the pulse state optionally forced on or off, so a
/// step that lies inside one smooth segment of the pulse train never sees
/// the discontinuity.
pub fn acceleration_in_phase(
    s: &BolusState,
    variant: ModelVariant,
    p: &ParameterSet,
    train: &PulseTrain,
    pulse_on: Option<bool>,
) -> Result<f64> {
    let eff = pulse_efficiency(s.x, volume(s, p), p)?;
    let friction = friction_coefficient(s, variant, p)?;
    let forcing = if variant.pulse_resolved() {
        let rate = match pulse_on {
            Some(true) => train.amplitude,
            Some(false) => 0.0,
            None => pulse_rate(train, retarded_time(s, p)),
        };
        // d/dt y(t - x/c) = y'(t - x/c) (1 - v/c)
        rate * (1.0 - s.v / p.c)
    } else {
        averaged_pulse(s.v, p)
    };
    Ok(forcing * eff - friction * s.v)
}

/// Velocity at which the homogenized forcing balances friction for a
/// frozen efficiency and friction coefficient.
pub fn homogenized_terminal_velocity(eff: f64, friction: f64, p: &ParameterSet) -> f64 {
    let drive = p.tau * eff;
    drive / (drive / p.c + friction)
}
