//! Mass balances: volumic and surfacic hydrolysis, solubilization, water,
//! pancreatic secretions, Michaelis-Menten absorption and enzyme decay.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::state::{total_mass, water_proportion, BolusState, ParameterSet};

/// Piecewise-linear function through `(x, y)` knots, held constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(ModelError::Domain("piecewise-linear map needs at least one knot".into()));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(ModelError::Domain("piecewise-linear knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ModelError::Domain(
                "piecewise-linear knots must have strictly increasing abscissae".into(),
            ));
        }
        Ok(PiecewiseLinear { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, x: f64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if x <= first.0 {
            return first.1;
        }
        if x >= last.0 {
            return last.1;
        }
        let i = self.knots.partition_point(|k| k.0 <= x);
        let (x0, y0) = self.knots[i - 1];
        let (x1, y1) = self.knots[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Position -> pH -> relative enzyme activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnzymeActivityProfile {
    pub ph_of_x: PiecewiseLinear,
    pub activity_of_ph: PiecewiseLinear,
}

impl EnzymeActivityProfile {
    pub fn new(ph_of_x: PiecewiseLinear, activity_of_ph: PiecewiseLinear) -> Result<Self> {
        if activity_of_ph
            .knots()
            .iter()
            .any(|&(_, a)| !(0.0..=1.0).contains(&a))
        {
            return Err(ModelError::config(
                "profile.activity",
                "relative activity must lie in [0, 1]",
            ));
        }
        Ok(EnzymeActivityProfile {
            ph_of_x,
            activity_of_ph,
        })
    }

    pub fn relative_activity(&self, x: f64) -> f64 {
        self.activity_of_ph.eval(self.ph_of_x.eval(x))
    }
}

impl Default for EnzymeActivityProfile {
    /// Linear pH ramp from 6.0 at the pylorus to 7.4 at the ileum, with a
    /// triangular activity peak at neutral pH.
    fn default() -> Self {
        EnzymeActivityProfile {
            ph_of_x: PiecewiseLinear::new(vec![(0.0, 6.0), (18.0, 7.4)]).unwrap(),
            activity_of_ph: PiecewiseLinear::new(vec![
                (0.0, 0.0),
                (4.0, 0.0),
                (7.0, 1.0),
                (10.0, 0.0),
                (14.0, 0.0),
            ])
            .unwrap(),
        }
    }
}

/// `k(x, e)`: active enzyme mass at position `x`.
pub fn enzyme_activity(x: f64, e: f64, profile: &EnzymeActivityProfile) -> f64 {
    profile.relative_activity(x) * e
}

/// Localization density of the secretion input, supported on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Localization {
    /// Indicator of [0, 1].
    #[default]
    Uniform,
    /// `2 sin^2(pi u)` on [0, 1].
    Bump,
}

impl Localization {
    pub fn chi(self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        match self {
            Localization::Uniform => 1.0,
            Localization::Bump => {
                let s = (PI * u).sin();
                2.0 * s * s
            }
        }
    }
}

/// What the pancreatic secretions bring into the bolus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SecretionMode {
    /// Secretions add to `a_s` and `b_int` (and to water under M3/M4).
    #[default]
    Substrate,
    /// Secretions only dilute the bolus.
    WaterOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecretionWindow {
    pub start: f64,
    pub alpha: f64,
    /// Secretion mass as a percentage of the bolus mass.
    pub beta: f64,
    pub chi: Localization,
    pub mode: SecretionMode,
    /// Secretions also carry pancreatic enzymes into `e`.
    pub feeds_enzyme: bool,
}

impl SecretionWindow {
    pub fn from_params(p: &ParameterSet) -> Self {
        SecretionWindow {
            start: p.secretion_start,
            alpha: p.alpha,
            beta: p.beta,
            chi: Localization::Uniform,
            mode: SecretionMode::Substrate,
            feeds_enzyme: false,
        }
    }

    /// `ln(1 + beta/100) (1/alpha) v chi((x - start)/alpha)`, per gram.
    pub fn specific_rate(&self, x: f64, v: f64) -> f64 {
        let chi = self.chi.chi((x - self.start) / self.alpha);
        if chi == 0.0 || v == 0.0 {
            return 0.0;
        }
        (1.0 + self.beta / 100.0).ln() / self.alpha * v * chi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.chi.chi((x - self.start) / self.alpha) > 0.0
    }
}

pub fn secretion_rate(x: f64, v: f64, mass_component: f64, win: &SecretionWindow) -> f64 {
    win.specific_rate(x, v) * mass_component
}

/// `k_abs B / (k + B)`
pub fn mm_absorption(b_abs: f64, p: &ParameterSet) -> f64 {
    if b_abs <= 0.0 {
        return 0.0;
    }
    p.k_abs * b_abs / (p.k_mm + b_abs)
}

/// Brush-border hydrolysis on the lateral surface:
/// `2 coeff sqrt(pi l / rho) m / sqrt(M) * water_factor`.
pub fn surfacic_rate(
    component_mass: f64,
    s: &BolusState,
    coeff: f64,
    p: &ParameterSet,
    water_factor: f64,
) -> Result<f64> {
    if component_mass == 0.0 || coeff == 0.0 {
        return Ok(0.0);
    }
    let m = total_mass(s);
    if m <= 0.0 {
        return Err(ModelError::Domain(format!(
            "surfacic rate of {component_mass} g with total bolus mass {m} g"
        )));
    }
    Ok(2.0 * coeff * (PI * p.l / p.rho).sqrt() * component_mass / m.sqrt() * water_factor)
}

/// Time derivatives of the mass components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MassRates {
    pub a_s: f64,
    pub a_ns: f64,
    pub a_nd: f64,
    pub b_int: f64,
    pub b_abs: f64,
    pub w: f64,
    pub e: f64,
    pub absorbed_cum: f64,
    pub secreted_cum: f64,
}

impl MassRates {
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.a_s,
            self.a_ns,
            self.a_nd,
            self.b_int,
            self.b_abs,
            self.w,
            self.e,
            self.absorbed_cum,
            self.secreted_cum,
        ]
    }

    pub fn dry(&self) -> f64 {
        self.a_s + self.a_ns + self.a_nd + self.b_int + self.b_abs
    }
}

fn enzyme_rate(s: &BolusState, p: &ParameterSet, win: Option<&SecretionWindow>) -> f64 {
    let mut de = -p.k_e * s.e;
    if let Some(win) = win.filter(|w| w.feeds_enzyme) {
        de += secretion_rate(s.x, s.v, s.e, win);
    }
    de
}

/// Mass action with linear absorption; all substrate in `a_s`, all product
/// in `b_abs`. Here `k_abs` acts as a first-order rate in 1/s.
pub fn rhs_m1(s: &BolusState, p: &ParameterSet, prof: &EnzymeActivityProfile) -> MassRates {
    let volumic = p.C * enzyme_activity(s.x, s.e, prof) * s.a_s;
    let absorbed = p.k_abs * s.b_abs;
    MassRates {
        a_s: -volumic,
        b_abs: volumic - absorbed,
        e: -p.k_e * s.e,
        absorbed_cum: absorbed,
        ..MassRates::default()
    }
}

/// Fully solubilized bolus with surfacic hydrolysis, secretions and
/// Michaelis-Menten absorption.
pub fn rhs_m2(
    s: &BolusState,
    p: &ParameterSet,
    prof: &EnzymeActivityProfile,
    win: &SecretionWindow,
) -> Result<MassRates> {
    hydrolysis(s, p, prof, win, 1.0)
}

fn hydrolysis(
    s: &BolusState,
    p: &ParameterSet,
    prof: &EnzymeActivityProfile,
    win: &SecretionWindow,
    water_factor: f64,
) -> Result<MassRates> {
    let volumic = p.C * enzyme_activity(s.x, s.e, prof) * s.a_s;
    let surf_a = surfacic_rate(s.a_s, s, p.C_abs, p, water_factor)?;
    let surf_b = surfacic_rate(s.b_int, s, p.C_iabs, p, water_factor)?;
    let (sec_a, sec_b) = match win.mode {
        SecretionMode::Substrate => (
            secretion_rate(s.x, s.v, s.a_s, win),
            secretion_rate(s.x, s.v, s.b_int, win),
        ),
        SecretionMode::WaterOnly => (0.0, 0.0),
    };
    let absorbed = mm_absorption(s.b_abs, p);
    Ok(MassRates {
        a_s: -volumic - surf_a + sec_a,
        b_int: volumic + sec_b - surf_b,
        b_abs: surf_a + surf_b - absorbed,
        e: enzyme_rate(s, p, Some(win)),
        absorbed_cum: absorbed,
        secreted_cum: sec_a + sec_b,
        ..MassRates::default()
    })
}

/// `mu([W])`, the equilibrium ratio `a_s / a_ns`.
pub fn solubilization_ratio(water: f64, p: &ParameterSet) -> f64 {
    p.mu_slope * water
}

/// Model with solubilization equilibrium, water regulation and water-scaled
/// surfacic hydrolysis. Shared by M3 and M4.
pub fn rhs_m3(
    s: &BolusState,
    p: &ParameterSet,
    prof: &EnzymeActivityProfile,
    win: &SecretionWindow,
) -> Result<MassRates> {
    let wp = water_proportion(s).map_err(|e| ModelError::DegenerateState {
        t: s.t,
        reason: e.to_string(),
    })?;
    // [W] = 1 only for a bolus of pure water, which has nothing to transform
    if !(wp > 0.0 && (wp < 1.0 || s.dry_mass() == 0.0)) {
        return Err(ModelError::DegenerateState {
            t: s.t,
            reason: format!("water proportion {wp} outside (0, 1)"),
        });
    }
    let mut rates = hydrolysis(s, p, prof, win, wp)?;
    let exchange = p.k_s * (solubilization_ratio(wp, p) * s.a_ns - s.a_s);
    rates.a_ns = -exchange;
    rates.a_s += exchange;
    rates.a_nd = 0.0;

    let d_wp = -p.k_w * (wp - p.w0) + win.specific_rate(s.x, s.v) * wp;
    rates.w = water_rate_for_proportion(s, d_wp, rates.dry());
    Ok(rates)
}

/// Water mass rate that makes `[W] = w / (D + w)` move at `d_wp` when the
/// dry mass `D` moves at `d_dry`: `dw = (d_wp M^2 + w dD) / D`.
pub fn water_rate_for_proportion(s: &BolusState, d_wp: f64, d_dry: f64) -> f64 {
    let dry = s.dry_mass();
    if dry <= 0.0 {
        return 0.0;
    }
    let m = total_mass(s);
    (d_wp * m * m + s.w * d_dry) / dry
}
