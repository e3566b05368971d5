//! Scenario files: one TOML document per scenario, every field optional.
//!
//! ```toml
//! model = "M4"
//!
//! [parameters]
//! c = "7.2 m/h"
//! k_abs = 0.005          # bare numbers are in g, m, s
//!
//! [initial]
//! recipe = "figure2"     # a_ns = 3 a_s, water = 2 a_ns
//! a_s = "10 g"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use super::units::quantity;
use crate::analysis::homogenization::ComparisonWindow;
use crate::analysis::sensitivity::{default_study, Output};
use crate::analysis::starch::{StarchInputs, StarchReference};
use crate::error::{ModelError, Result};
use crate::integrator::{IntegrationConfig, Method, System};
use crate::kinetics::{EnzymeActivityProfile, Localization, PiecewiseLinear, SecretionMode};
use crate::state::{BolusState, Dimension, ModelVariant, Param, ParameterSet};

/// Perturbation factors for the over- and underestimation readings.
pub const OVERESTIMATE: [f64; 2] = [1.05, 1.5];
pub const UNDERESTIMATE: [f64; 2] = [0.05, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct SecretionSettings {
    pub mode: SecretionMode,
    pub chi: Localization,
    pub feeds_enzyme: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySettings {
    pub factors: Vec<f64>,
    pub study: BTreeMap<Output, Vec<Param>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizationSettings {
    pub scales: Vec<f64>,
    pub window: ComparisonWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarchSettings {
    pub inputs: StarchInputs,
    pub reference: StarchReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub model: ModelVariant,
    pub params: ParameterSet,
    pub initial: BolusState,
    pub secretion: SecretionSettings,
    pub profile: EnzymeActivityProfile,
    pub integration: IntegrationConfig,
    pub output_dir: Option<PathBuf>,
    pub sensitivity: SensitivitySettings,
    pub homogenization: HomogenizationSettings,
    pub starch: StarchSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::from_toml_str("").expect("the empty scenario is valid")
    }
}

/// Keys of one table, consumed as they are read so leftovers can be reported.
struct Section {
    path: String,
    table: Table,
}

impl Section {
    fn new(path: &str, table: Table) -> Self {
        Section {
            path: path.to_string(),
            table,
        }
    }

    fn field(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn sub(&mut self, key: &str) -> Result<Section> {
        let field = self.field(key);
        match self.take(key) {
            None => Ok(Section::new(&field, Table::new())),
            Some(Value::Table(t)) => Ok(Section::new(&field, t)),
            Some(other) => Err(ModelError::config(field, format!("expected a table, got {}", other.type_str()))),
        }
    }

    fn quantity(&mut self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        let field = self.field(key);
        self.take(key).map(|v| quantity(&field, &v, dim)).transpose()
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        let field = self.field(key);
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(ModelError::config(field, format!("expected a string, got {}", other.type_str()))),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>> {
        let field = self.field(key);
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(other) => Err(ModelError::config(field, format!("expected true or false, got {}", other.type_str()))),
        }
    }

    fn numbers(&mut self, key: &str, dim: Dimension) -> Result<Option<Vec<f64>>> {
        let field = self.field(key);
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| quantity(&format!("{field}[{i}]"), v, dim))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(ModelError::config(field, format!("expected an array, got {}", other.type_str()))),
        }
    }

    fn knots(&mut self, key: &str) -> Result<Option<PiecewiseLinear>> {
        let field = self.field(key);
        let Some(value) = self.take(key) else {
            return Ok(None);
        };
        let Value::Array(items) = value else {
            return Err(ModelError::config(field, "expected an array of [x, y] pairs"));
        };
        let mut knots = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let pair = match item {
                Value::Array(p) if p.len() == 2 => p,
                _ => return Err(ModelError::config(format!("{field}[{i}]"), "expected an [x, y] pair")),
            };
            let x = quantity(&format!("{field}[{i}][0]"), &pair[0], Dimension::Other("1"))?;
            let y = quantity(&format!("{field}[{i}][1]"), &pair[1], Dimension::Other("1"))?;
            knots.push((x, y));
        }
        PiecewiseLinear::new(knots)
            .map(Some)
            .map_err(|e| ModelError::config(field, e.to_string()))
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            None => Ok(()),
            Some(key) => Err(ModelError::config(self.field(key), "unknown field")),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(ModelError::config(field, format!("must be > 0, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ModelError::config("config", e.message().to_string()))?;
        let mut root = Section::new("", table);

        let model = match root.string("model")? {
            Some(s) => s.parse()?,
            None => ModelVariant::M4,
        };

        let mut params = ParameterSet::default();
        let mut section = root.sub("parameters")?;
        for p in Param::ALL {
            if let Some(v) = section.quantity(p.name(), p.dimension())? {
                p.set(&mut params, v);
            }
        }
        section.finish()?;
        params.validate()?;

        let mut section = root.sub("initial")?;
        let initial = parse_initial(&mut section, model, &params)?;
        section.finish()?;

        let mut section = root.sub("secretion")?;
        let secretion = SecretionSettings {
            mode: match section.string("mode")?.as_deref() {
                None | Some("substrate") => SecretionMode::Substrate,
                Some("water_only") => SecretionMode::WaterOnly,
                Some(other) => {
                    return Err(ModelError::config(
                        "secretion.mode",
                        format!("unknown mode `{other}` (substrate, water_only)"),
                    ))
                }
            },
            chi: match section.string("chi")?.as_deref() {
                None | Some("uniform") => Localization::Uniform,
                Some("bump") => Localization::Bump,
                Some(other) => {
                    return Err(ModelError::config(
                        "secretion.chi",
                        format!("unknown localization `{other}` (uniform, bump)"),
                    ))
                }
            },
            feeds_enzyme: section.boolean("feeds_enzyme")?.unwrap_or(false),
        };
        section.finish()?;

        let mut section = root.sub("profile")?;
        let default_profile = EnzymeActivityProfile::default();
        let ph = section.knots("ph")?.unwrap_or(default_profile.ph_of_x);
        let activity = section.knots("activity")?.unwrap_or(default_profile.activity_of_ph);
        section.finish()?;
        let profile = EnzymeActivityProfile::new(ph, activity)?;

        let mut section = root.sub("integration")?;
        let mut integration = IntegrationConfig::default();
        if let Some(m) = section.string("method")? {
            integration.method = match m.as_str() {
                "rk4" => Method::Rk4,
                "dopri5" => Method::Dopri5,
                other => {
                    return Err(ModelError::config(
                        "integration.method",
                        format!("unknown method `{other}` (rk4, dopri5)"),
                    ))
                }
            };
        }
        let fields: [(&str, Dimension, &mut f64); 6] = [
            ("base_step", Dimension::Time, &mut integration.base_step),
            ("pulse_substep", Dimension::Time, &mut integration.pulse_substep),
            ("rtol", Dimension::Other("1"), &mut integration.rtol),
            ("atol", Dimension::Mass, &mut integration.atol),
            ("max_time", Dimension::Time, &mut integration.max_time),
            ("output_stride", Dimension::Time, &mut integration.output_stride),
        ];
        for (key, dim, slot) in fields {
            if let Some(v) = section.quantity(key, dim)? {
                *slot = v;
            }
        }
        section.finish()?;

        let mut section = root.sub("output")?;
        let output_dir = section.string("dir")?.map(PathBuf::from);
        section.finish()?;

        let mut section = root.sub("sensitivity")?;
        let reading = section.string("reading")?;
        let mut factors = match reading.as_deref() {
            None | Some("overestimate") => OVERESTIMATE.to_vec(),
            Some("underestimate") => UNDERESTIMATE.to_vec(),
            Some(other) => {
                return Err(ModelError::config(
                    "sensitivity.reading",
                    format!("unknown reading `{other}` (overestimate, underestimate)"),
                ))
            }
        };
        if let Some(f) = section.numbers("factors", Dimension::Other("1"))? {
            for (i, &v) in f.iter().enumerate() {
                positive(&format!("sensitivity.factors[{i}]"), v)?;
            }
            factors = f;
        }
        let study = match section.take("study") {
            None => default_study(),
            Some(Value::Table(t)) => parse_study(t)?,
            Some(_) => return Err(ModelError::config("sensitivity.study", "expected a table of output = [parameters]")),
        };
        section.finish()?;
        let sensitivity = SensitivitySettings { factors, study };

        let mut section = root.sub("homogenization")?;
        let defaults = ComparisonWindow::default();
        let scales = section.numbers("scales", Dimension::Other("1"))?.unwrap_or(vec![1.0, 0.5, 0.25]);
        for (i, &s) in scales.iter().enumerate() {
            positive(&format!("homogenization.scales[{i}]"), s)?;
        }
        let window = ComparisonWindow {
            window: positive(
                "homogenization.window",
                section.quantity("window", Dimension::Time)?.unwrap_or(defaults.window),
            )?,
            transient: section.quantity("transient", Dimension::Time)?.unwrap_or(defaults.transient),
        };
        section.finish()?;
        let homogenization = HomogenizationSettings { scales, window };

        let mut section = root.sub("starch")?;
        let mut inputs = StarchInputs::default();
        let mut reference = StarchReference::default();
        let fields: [(&str, Dimension, &mut f64); 7] = [
            ("wet_digesta", Dimension::Mass, &mut inputs.wet_digesta),
            ("dry_matter", Dimension::Mass, &mut inputs.dry_matter),
            ("enzyme", Dimension::Mass, &mut inputs.enzyme),
            ("reference_wet_pct", Dimension::Other("%"), &mut reference.wet_output_pct),
            ("reference_dry", Dimension::Mass, &mut reference.dry_output_g),
            ("wet_tolerance_pct", Dimension::Other("%"), &mut reference.wet_tolerance_pct),
            ("dry_tolerance", Dimension::Mass, &mut reference.dry_tolerance_g),
        ];
        for (key, dim, slot) in fields {
            if let Some(v) = section.quantity(key, dim)? {
                *slot = v;
            }
        }
        section.finish()?;
        if !(inputs.dry_matter >= 0.0 && inputs.wet_digesta > inputs.dry_matter && inputs.enzyme >= 0.0) {
            return Err(ModelError::config("starch", "need 0 <= dry_matter < wet_digesta and enzyme >= 0"));
        }

        root.finish()?;
        let cfg = ScenarioConfig {
            model,
            params,
            initial,
            secretion,
            profile,
            integration,
            output_dir,
            sensitivity,
            homogenization,
            starch: StarchSettings { inputs, reference },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that depends on more than one section.
    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        self.integration.validate(&sys.train)?;
        sys.check_initial(&self.initial)
    }

    pub fn system(&self) -> Result<System> {
        let mut sys = System::new(self.model, self.params.clone())?;
        sys.profile = self.profile.clone();
        sys.secretion.mode = self.secretion.mode;
        sys.secretion.chi = self.secretion.chi;
        sys.secretion.feeds_enzyme = self.secretion.feeds_enzyme;
        Ok(sys)
    }
}

fn parse_initial(section: &mut Section, model: ModelVariant, p: &ParameterSet) -> Result<BolusState> {
    let recipe = section.string("recipe")?.unwrap_or_else(|| "figure2".into());
    let mass = |section: &mut Section, key: &str, default: f64| -> Result<f64> {
        let v = section.quantity(key, Dimension::Mass)?.unwrap_or(default);
        if v < 0.0 {
            return Err(ModelError::config(section.field(key), format!("mass must be >= 0, got {v}")));
        }
        Ok(v)
    };
    let mut s = match recipe.as_str() {
        // non-solubilized substrate three times the solubilized one, diluted
        // in twice its volume of water; M1 and M2 start fully solubilized
        "figure2" => {
            let a_s = mass(section, "a_s", 10.0)?;
            let e = mass(section, "e", 1.0)?;
            if model.lubricated() {
                let a_nd = mass(section, "a_nd", 2.0)?;
                BolusState {
                    a_s,
                    a_ns: 3.0 * a_s,
                    a_nd,
                    w: 6.0 * a_s,
                    e,
                    ..BolusState::default()
                }
            } else {
                BolusState {
                    a_s: 4.0 * a_s,
                    w: 6.0 * a_s,
                    e,
                    ..BolusState::default()
                }
            }
        }
        "explicit" => BolusState {
            a_s: mass(section, "a_s", 0.0)?,
            a_ns: mass(section, "a_ns", 0.0)?,
            a_nd: mass(section, "a_nd", 0.0)?,
            b_int: mass(section, "b_int", 0.0)?,
            b_abs: mass(section, "b_abs", 0.0)?,
            w: mass(section, "w", 0.0)?,
            e: mass(section, "e", 0.0)?,
            ..BolusState::default()
        },
        other => {
            return Err(ModelError::config(
                section.field("recipe"),
                format!("unknown recipe `{other}` (figure2, explicit)"),
            ))
        }
    };
    s.v = section.quantity("v", Dimension::Velocity)?.unwrap_or(p.v0);
    if s.v < 0.0 {
        return Err(ModelError::config(section.field("v"), "initial velocity must be >= 0"));
    }
    Ok(s)
}

fn parse_study(table: Table) -> Result<BTreeMap<Output, Vec<Param>>> {
    let mut study = BTreeMap::new();
    for (key, value) in table {
        let field = format!("sensitivity.study.{key}");
        let output = Output::parse(&key).map_err(|_| ModelError::config(&field, "unknown output (a_s, b_abs, v)"))?;
        let Value::Array(items) = value else {
            return Err(ModelError::config(field, "expected an array of parameter names"));
        };
        let mut params = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let name = item
                .as_str()
                .ok_or_else(|| ModelError::config(format!("{field}[{i}]"), "expected a parameter name"))?;
            let p: Param = name
                .parse()
                .map_err(|_| ModelError::config(format!("{field}[{i}]"), format!("unknown parameter `{name}`")))?;
            params.push(p);
        }
        study.insert(output, params);
    }
    Ok(study)
}
