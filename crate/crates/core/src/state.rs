//! Bolus state, model parameters and the geometry derived from them.
//!
//! All masses are grams, lengths meters, times seconds. The bolus is a
//! homogeneous cylinder of fixed length `l` whose radius follows its volume.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Number of integrated scalar components (everything but `t`).
pub const STATE_LEN: usize = 11;

/// Full dynamical state of one bolus.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BolusState {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub a_s: f64,
    pub a_ns: f64,
    pub a_nd: f64,
    pub b_int: f64,
    pub b_abs: f64,
    pub w: f64,
    pub e: f64,
    /// Mass taken up by the intestinal wall since `t = 0`.
    pub absorbed_cum: f64,
    /// Substrate and product mass added by secretions since `t = 0`.
    pub secreted_cum: f64,
}

/// Names of the mass components, in the order of [`BolusState::masses`].
pub const MASS_NAMES: [&str; 9] = [
    "a_s",
    "a_ns",
    "a_nd",
    "b_int",
    "b_abs",
    "w",
    "e",
    "absorbed_cum",
    "secreted_cum",
];

impl BolusState {
    pub fn to_array(&self) -> [f64; STATE_LEN] {
        [
            self.x,
            self.v,
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

    pub fn from_array(t: f64, y: &[f64; STATE_LEN]) -> Self {
        BolusState {
            t,
            x: y[0],
            v: y[1],
            a_s: y[2],
            a_ns: y[3],
            a_nd: y[4],
            b_int: y[5],
            b_abs: y[6],
            w: y[7],
            e: y[8],
            absorbed_cum: y[9],
            secreted_cum: y[10],
        }
    }

    pub fn masses(&self) -> [f64; 9] {
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

    /// Substrate plus product mass: everything in the bolus except water.
    pub fn dry_mass(&self) -> f64 {
        self.a_s + self.a_ns + self.a_nd + self.b_int + self.b_abs
    }

    /// Mass still tracked by the conservation ledger: dry mass plus what
    /// has already been absorbed, minus what secretions brought in.
    pub fn ledger(&self) -> f64 {
        self.dry_mass() + self.absorbed_cum - self.secreted_cum
    }
}

/// `A + B + W`. Enzyme mass is not part of the bolus mass.
pub fn total_mass(s: &BolusState) -> f64 {
    s.dry_mass() + s.w
}

pub fn volume(s: &BolusState, p: &ParameterSet) -> f64 {
    total_mass(s) / p.rho
}

/// Lateral surface `2 pi R l` of the cylinder holding the bolus mass.
pub fn lateral_surface(s: &BolusState, p: &ParameterSet) -> f64 {
    2.0 * (PI * p.l / p.rho).sqrt() * total_mass(s).max(0.0).sqrt()
}

/// Water fraction `[W] = w / (A + B + W)`.
pub fn water_proportion(s: &BolusState) -> Result<f64> {
    let m = total_mass(s);
    if m > 0.0 {
        Ok(s.w / m)
    } else {
        Err(ModelError::Domain(format!(
            "water proportion undefined for total mass {m} g"
        )))
    }
}

/// Which of the four nested models drives the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    M1,
    M2,
    M3,
    M4,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [Self::M1, Self::M2, Self::M3, Self::M4];

    /// Friction depends on water content (lubrication law).
    pub fn lubricated(self) -> bool {
        matches!(self, Self::M3 | Self::M4)
    }

    /// Transport is driven by individual pulses rather than their average.
    pub fn pulse_resolved(self) -> bool {
        !matches!(self, Self::M4)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" | "1" => Ok(Self::M1),
            "M2" | "2" => Ok(Self::M2),
            "M3" | "3" => Ok(Self::M3),
            "M4" | "4" => Ok(Self::M4),
            other => Err(ModelError::config(
                "model",
                format!("unknown model variant `{other}` (expected M1..M4)"),
            )),
        }
    }
}

/// Physical dimension of a parameter, used to normalize unit suffixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Time,
    Velocity,
    Rate,
    Mass,
    MassRate,
    Density,
    /// Any other compound unit; accepted only as a bare SI number.
    Other(&'static str),
}

macro_rules! parameters {
    ($( $variant:ident => $field:ident, $name:literal, $dim:expr, $default:expr; )*) => {
        /// Every rate constant, length and coefficient of the model.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[allow(non_snake_case)]
        pub struct ParameterSet {
            $( pub $field: f64, )*
        }

        impl Default for ParameterSet {
            fn default() -> Self {
                ParameterSet { $( $field: $default, )* }
            }
        }

        /// Handle on a single named entry of [`ParameterSet`].
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Param {
            $( $variant, )*
        }

        impl Param {
            pub const ALL: &'static [Param] = &[ $( Param::$variant, )* ];

            pub fn name(self) -> &'static str {
                match self { $( Param::$variant => $name, )* }
            }

            pub fn dimension(self) -> Dimension {
                match self { $( Param::$variant => $dim, )* }
            }

            pub fn get(self, p: &ParameterSet) -> f64 {
                match self { $( Param::$variant => p.$field, )* }
            }

            pub fn set(self, p: &mut ParameterSet, value: f64) {
                match self { $( Param::$variant => p.$field = value, )* }
            }
        }
    };
}

parameters! {
    IntestineLength => L, "L", Dimension::Length, 18.0;
    BolusLength => l, "l", Dimension::Length, 0.04;
    Density => rho, "rho", Dimension::Density, 1.0e6;
    WaveSpeed => c, "c", Dimension::Velocity, 7.2 / 3600.0;
    PulsePeriod => pulse_period, "pulse_period", Dimension::Time, 10.0;
    PulseWidth => pulse_width_eps, "pulse_width_eps", Dimension::Time, 0.5;
    Tau => tau, "tau", Dimension::Rate, 0.1;
    C0 => c0, "c0", Dimension::Velocity, 9.0e-5;
    C1 => c1, "c1", Dimension::Other("m s^-1 m^-3"), 0.2;
    A => a, "a", Dimension::Other("1"), 1.0;
    B => b, "b", Dimension::Other("m^-1"), 0.05;
    KConst => K_const, "K_const", Dimension::Rate, 0.0035;
    KTilde => K_tilde, "K_tilde", Dimension::Rate, 0.0025;
    DegradationRate => C, "C", Dimension::Other("g^-1 s^-1"), 5.0e-6;
    CAbs => C_abs, "C_abs", Dimension::Other("g m^-2 s^-1"), 6.0;
    CIAbs => C_iabs, "C_iabs", Dimension::Other("g m^-2 s^-1"), 6.0;
    KAbs => k_abs, "k_abs", Dimension::MassRate, 0.005;
    KMm => k_mm, "k_mm", Dimension::Mass, 1.0;
    KE => k_e, "k_e", Dimension::Rate, 5.0e-5;
    KS => k_s, "k_s", Dimension::Rate, 0.01;
    KW => k_w, "k_w", Dimension::Rate, 0.005;
    W0 => w0, "w0", Dimension::Other("1"), 0.7;
    MuSlope => mu_slope, "mu_slope", Dimension::Other("1"), 1.0;
    SecretionStart => secretion_start, "secretion_start", Dimension::Length, 0.85;
    Alpha => alpha, "alpha", Dimension::Length, 1.0;
    Beta => beta, "beta", Dimension::Other("%"), 25.0;
    V0 => v0, "v0", Dimension::Velocity, 1.0e-3;
}

impl FromStr for Param {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| ModelError::config(s, "unknown parameter"))
    }
}

impl Serialize for Param {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Param {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ParameterSet {
    /// Checks positivity, `w0` in (0, 1), `beta >= 0` and a positive
    /// pulse-efficiency denominator over the whole intestine.
    pub fn validate(&self) -> Result<()> {
        let field = |p: Param, msg: &str| Err(ModelError::config(format!("parameters.{p}"), msg));
        for &p in Param::ALL {
            let value = p.get(self);
            if !value.is_finite() {
                return field(p, "must be finite");
            }
            match p {
                Param::Beta => {
                    if value < 0.0 {
                        return field(p, "must be >= 0");
                    }
                }
                // Zero rates switch a mechanism off; the oracles rely on that.
                Param::DegradationRate
                | Param::CAbs
                | Param::CIAbs
                | Param::KAbs
                | Param::KE
                | Param::KW
                | Param::KS
                | Param::C1
                | Param::B
                | Param::V0
                | Param::MuSlope => {
                    if value < 0.0 {
                        return field(p, "must be >= 0");
                    }
                }
                _ => {
                    if value <= 0.0 {
                        return field(p, "must be > 0");
                    }
                }
            }
        }
        if !(self.w0 > 0.0 && self.w0 < 1.0) {
            return field(Param::W0, "must lie in (0, 1)");
        }
        if self.pulse_width_eps >= self.pulse_period {
            return field(Param::PulseWidth, "must be shorter than pulse_period");
        }
        if self.a + self.b * self.L <= 0.0 || self.a <= 0.0 {
            return field(Param::A, "a + b*x must stay positive on [0, L]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bolus(a_s: f64, a_ns: f64, a_nd: f64, b_int: f64, b_abs: f64, w: f64) -> BolusState {
        BolusState {
            a_s,
            a_ns,
            a_nd,
            b_int,
            b_abs,
            w,
            ..BolusState::default()
        }
    }

    #[test]
    fn empty_bolus_has_zero_mass_volume_surface() {
        let s = BolusState::default();
        let p = ParameterSet::default();
        assert_eq!(total_mass(&s), 0.0);
        assert_eq!(volume(&s, &p), 0.0);
        assert_eq!(lateral_surface(&s, &p), 0.0);
        assert!(water_proportion(&s).is_err());
    }

    #[test]
    fn mass_is_additive_and_excludes_enzyme() {
        let mut s = bolus(10.0, 0.0, 0.0, 0.0, 0.0, 20.0);
        s.e = 3.0;
        assert_eq!(total_mass(&s), 30.0);
    }

    #[test]
    fn volume_is_mass_over_density() {
        let s = bolus(100.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let p = ParameterSet {
            rho: 1.0e6,
            ..ParameterSet::default()
        };
        assert!((volume(&s, &p) - 1.0e-4).abs() < 1e-18);
    }

    #[test]
    fn surface_scales_with_square_root_of_mass() {
        let p = ParameterSet::default();
        let s1 = bolus(10.0, 5.0, 0.0, 0.0, 0.0, 5.0);
        let s2 = bolus(20.0, 10.0, 0.0, 0.0, 0.0, 10.0);
        let ratio = lateral_surface(&s2, &p) / lateral_surface(&s1, &p);
        assert!((ratio - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn water_proportion_examples() {
        assert_eq!(water_proportion(&bolus(0.0, 0.0, 0.0, 0.0, 0.0, 7.0)).unwrap(), 1.0);
        let s = bolus(20.0, 30.0, 5.0, 10.0, 10.0, 25.0);
        assert_eq!(water_proportion(&s).unwrap(), 0.25);
    }

    #[test]
    fn default_parameters_are_valid() {
        ParameterSet::default().validate().unwrap();
    }

    #[test]
    fn invalid_parameters_name_the_field() {
        let p = ParameterSet {
            w0: 1.2,
            ..ParameterSet::default()
        };
        match p.validate() {
            Err(ModelError::Config { field, .. }) => assert_eq!(field, "parameters.w0"),
            other => panic!("unexpected {other:?}"),
        }
        let p = ParameterSet {
            a: 0.1,
            b: -0.1,
            ..ParameterSet::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn param_registry_round_trips_names() {
        for &p in Param::ALL {
            assert_eq!(p.name().parse::<Param>().unwrap(), p);
        }
        let mut ps = ParameterSet::default();
        Param::CAbs.set(&mut ps, 9.0);
        assert_eq!(ps.C_abs, 9.0);
        assert_eq!(Param::CAbs.get(&ps), 9.0);
    }

    fn arb_state() -> impl Strategy<Value = BolusState> {
        (0.0..100.0f64, 0.0..100.0f64, 0.0..10.0f64, 0.0..10.0f64, 0.0..10.0f64, 0.0..200.0f64)
            .prop_map(|(a, b, c, d, e, w)| bolus(a, b, c, d, e, w))
    }

    proptest! {
        #[test]
        fn total_mass_is_component_sum(s in arb_state()) {
            let sum = s.a_s + s.a_ns + s.a_nd + s.b_int + s.b_abs + s.w;
            prop_assert!((total_mass(&s) - sum).abs() <= 1e-12 * sum.max(1.0));
        }

        #[test]
        fn volume_times_density_is_mass(s in arb_state()) {
            let p = ParameterSet::default();
            let m = total_mass(&s);
            prop_assert!((volume(&s, &p) * p.rho - m).abs() <= 1e-12 * m.max(1.0));
        }

        #[test]
        fn surface_matches_cylinder_geometry(s in arb_state()) {
            let p = ParameterSet::default();
            let m = total_mass(&s);
            // R from V = pi R^2 l
            let radius = (m / (p.rho * PI * p.l)).sqrt();
            let cylinder = 2.0 * PI * radius * p.l;
            let surf = lateral_surface(&s, &p);
            prop_assert!((surf - cylinder).abs() <= 1e-12 * cylinder.max(1e-300));
            let sq = 4.0 * PI * p.l / p.rho * m;
            prop_assert!((surf * surf - sq).abs() <= 1e-12 * sq.max(1e-300));
            prop_assert!(surf >= 0.0);
        }

        #[test]
        fn water_proportion_in_unit_interval_and_scale_free(s in arb_state(), k in 0.01..100.0f64) {
            prop_assume!(total_mass(&s) > 1e-9);
            let wp = water_proportion(&s).unwrap();
            prop_assert!((0.0..=1.0).contains(&wp));
            let scaled = bolus(s.a_s * k, s.a_ns * k, s.a_nd * k, s.b_int * k, s.b_abs * k, s.w * k);
            prop_assert!((water_proportion(&scaled).unwrap() - wp).abs() < 1e-12);
        }
    }
}
