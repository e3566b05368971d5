//! Unit-suffixed quantities such as `"7.2 m/h"` or `"30 min"`.

use crate::error::{ModelError, Result};
use crate::state::Dimension;

fn factor(dim: Dimension, unit: &str) -> Option<f64> {
    let f = match (dim, unit) {
        (Dimension::Length, "m") => 1.0,
        (Dimension::Length, "cm") => 1e-2,
        (Dimension::Length, "mm") => 1e-3,
        (Dimension::Length, "km") => 1e3,

        (Dimension::Time, "s") => 1.0,
        (Dimension::Time, "min") => 60.0,
        (Dimension::Time, "h") => 3600.0,

        (Dimension::Velocity, "m/s") => 1.0,
        (Dimension::Velocity, "m/min") => 1.0 / 60.0,
        (Dimension::Velocity, "m/h") => 1.0 / 3600.0,
        (Dimension::Velocity, "cm/s") => 1e-2,
        (Dimension::Velocity, "cm/min") => 1e-2 / 60.0,
        (Dimension::Velocity, "mm/s") => 1e-3,

        (Dimension::Rate, "1/s" | "/s" | "s^-1") => 1.0,
        (Dimension::Rate, "1/min" | "/min" | "min^-1") => 1.0 / 60.0,
        (Dimension::Rate, "1/h" | "/h" | "h^-1") => 1.0 / 3600.0,

        (Dimension::Mass, "g") => 1.0,
        (Dimension::Mass, "kg") => 1e3,
        (Dimension::Mass, "mg") => 1e-3,

        (Dimension::MassRate, "g/s") => 1.0,
        (Dimension::MassRate, "g/min") => 1.0 / 60.0,
        (Dimension::MassRate, "g/h") => 1.0 / 3600.0,
        (Dimension::MassRate, "mg/s") => 1e-3,

        (Dimension::Density, "g/m3" | "g/m^3") => 1.0,
        (Dimension::Density, "kg/m3" | "kg/m^3") => 1e3,
        (Dimension::Density, "g/cm3" | "g/cm^3" | "g/ml" | "g/mL") => 1e6,
        _ => return None,
    };
    Some(f)
}

fn si_unit(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Length => "m",
        Dimension::Time => "s",
        Dimension::Velocity => "m/s",
        Dimension::Rate => "1/s",
        Dimension::Mass => "g",
        Dimension::MassRate => "g/s",
        Dimension::Density => "g/m3",
        Dimension::Other(u) => u,
    }
}

/// Parses `"<number> <unit>"` into the base units (g, m, s). Bare numbers
/// are taken as already in base units.
pub fn parse_quantity(field: &str, text: &str, dim: Dimension) -> Result<f64> {
    let text = text.trim();
    let (number, unit) = match text.split_once(char::is_whitespace) {
        Some((n, u)) => (n, u.trim()),
        None => (text, ""),
    };
    let value: f64 = number
        .parse()
        .map_err(|_| ModelError::config(field, format!("`{text}` is not a number with an optional unit")))?;
    if unit.is_empty() {
        return Ok(value);
    }
    match factor(dim, unit) {
        Some(f) => Ok(value * f),
        None => Err(ModelError::config(
            field,
            format!("unit `{unit}` does not match the dimension of this field (base unit {})", si_unit(dim)),
        )),
    }
}

/// A TOML number, or a string with a unit suffix.
pub fn quantity(field: &str, value: &toml::Value, dim: Dimension) -> Result<f64> {
    let v = match value {
        toml::Value::Float(f) => *f,
        toml::Value::Integer(i) => *i as f64,
        toml::Value::String(s) => parse_quantity(field, s, dim)?,
        other => {
            return Err(ModelError::config(
                field,
                format!("expected a number or a quantity string, got {}", other.type_str()),
            ))
        }
    };
    if !v.is_finite() {
        return Err(ModelError::config(field, "must be finite"));
    }
    Ok(v)
}
