//! One-at-a-time parameter perturbation.
//!
//! Each cell reruns the model with a single parameter multiplied by a factor
//! and reports `|y_base - y_perturbed| / y_base` on the shared output grid.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::integrator::{run, IntegrationConfig, System, Trajectory};
use crate::state::{BolusState, Param};

/// Baseline values at or below this are excluded from relative variations.
pub const ABS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    ASolubilized,
    BAbsorbable,
    Velocity,
}

impl Output {
    pub const ALL: [Output; 3] = [Output::ASolubilized, Output::BAbsorbable, Output::Velocity];

    pub fn name(self) -> &'static str {
        match self {
            Output::ASolubilized => "a_s",
            Output::BAbsorbable => "b_abs",
            Output::Velocity => "v",
        }
    }

    pub fn of(self, s: &BolusState) -> f64 {
        match self {
            Output::ASolubilized => s.a_s,
            Output::BAbsorbable => s.b_abs,
            Output::Velocity => s.v,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Output::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| ModelError::config("sensitivity.outputs", format!("unknown output `{s}`")))
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The parameters studied for each output in the reference analysis.
pub fn default_study() -> BTreeMap<Output, Vec<Param>> {
    BTreeMap::from([
        (Output::ASolubilized, vec![Param::DegradationRate, Param::CAbs]),
        (Output::BAbsorbable, vec![Param::CAbs, Param::CIAbs, Param::KAbs]),
        (
            Output::Velocity,
            vec![Param::A, Param::B, Param::C0, Param::C1, Param::KTilde],
        ),
    ])
}

/// Distinct parameters of a study, in first-appearance order.
pub fn study_targets(study: &BTreeMap<Output, Vec<Param>>) -> Vec<Param> {
    let mut out = Vec::new();
    for params in study.values() {
        for &p in params {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Relative variation of one output along the shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationSeries {
    pub output: Output,
    /// `None` where the baseline is below [`ABS_FLOOR`].
    pub values: Vec<Option<f64>>,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub param: Param,
    pub factor: f64,
    pub times: Vec<f64>,
    /// One series per output, or the failure message of the rerun.
    pub result: std::result::Result<Vec<VariationSeries>, String>,
}

impl SensitivityCell {
    pub fn series(&self, output: Output) -> Option<&VariationSeries> {
        self.result.as_ref().ok()?.iter().find(|s| s.output == output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub factors: Vec<f64>,
    pub cells: Vec<SensitivityCell>,
}

impl SensitivityReport {
    pub fn cell(&self, param: Param, factor: f64) -> Option<&SensitivityCell> {
        self.cells
            .iter()
            .find(|c| c.param == param && (c.factor - factor).abs() < 1e-12)
    }

    /// Maximum relative variation of `output` for `(param, factor)`.
    pub fn max_variation(&self, param: Param, factor: f64, output: Output) -> Option<f64> {
        self.cell(param, factor)?.series(output).map(|s| s.max)
    }
}

/// `|base - perturbed| / base` on the samples both runs share.
pub fn relative_variation(base: &Trajectory, perturbed: &Trajectory, output: Output) -> (Vec<f64>, VariationSeries) {
    let pairs = super::homogenization::aligned_samples(base, perturbed);
    let times = pairs.iter().map(|(b, _)| b.t).collect();
    let values: Vec<Option<f64>> = pairs
        .iter()
        .map(|(b, p)| {
            let yb = output.of(b);
            (yb.abs() > ABS_FLOOR).then(|| (yb - output.of(p)).abs() / yb.abs())
        })
        .collect();
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let max = defined.iter().copied().fold(0.0, f64::max);
    let mean = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    (times, VariationSeries { output, values, max, mean })
}

/// Reruns the model once per `(target, factor)` cell. Cells run on `jobs`
/// threads; the report order follows `targets` then `factors`.
pub fn sensitivity_sweep(
    base: &System,
    initial: &BolusState,
    targets: &[Param],
    factors: &[f64],
    cfg: &IntegrationConfig,
    jobs: usize,
) -> Result<SensitivityReport> {
    let baseline = run(initial, base, cfg)?;
    let grid: Vec<(Param, f64)> = targets
        .iter()
        .flat_map(|&p| factors.iter().map(move |&f| (p, f)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ModelError::Analysis(format!("thread pool: {e}")))?;

    let cells = pool.install(|| {
        grid.par_iter()
            .map(|&(param, factor)| perturbed_cell(base, initial, cfg, &baseline, param, factor))
            .collect::<Vec<_>>()
    });
    Ok(SensitivityReport {
        factors: factors.to_vec(),
        cells,
    })
}

fn perturbed_cell(
    base: &System,
    initial: &BolusState,
    cfg: &IntegrationConfig,
    baseline: &Trajectory,
    param: Param,
    factor: f64,
) -> SensitivityCell {
    let outcome = (|| {
        let mut params = base.params.clone();
        let scaled = param.get(&params) * factor;
        param.set(&mut params, scaled);
        let mut init = *initial;
        if param == Param::V0 {
            init.v = params.v0;
        }
        let sys = base.with_params(params)?;
        run(&init, &sys, cfg)
    })();
    match outcome {
        Ok(traj) => {
            let mut times = Vec::new();
            let series = Output::ALL
                .into_iter()
                .map(|o| {
                    let (t, s) = relative_variation(baseline, &traj, o);
                    times = t;
                    s
                })
                .collect();
            SensitivityCell {
                param,
                factor,
                times,
                result: Ok(series),
            }
        }
        Err(e) => SensitivityCell {
            param,
            factor,
            times: Vec::new(),
            result: Err(e.to_string()),
        },
    }
}
