//! File-in, file-out drivers behind the `bolus` binary.

pub mod config;
pub mod output;
pub mod units;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::homogenization::{self, max_velocity_swing, paired_runs, HomogenizationTable};
use crate::analysis::sensitivity::{self, study_targets, SensitivityReport};
use crate::analysis::starch::{self, EvaluationResult};
use crate::error::Result;
use crate::integrator::{run, ExitFlag, LedgerAudit, RunStats, Trajectory};
use crate::state::{BolusState, ModelVariant};
pub use config::ScenarioConfig;
use output::{float, json, row, trajectory_csv, write_atomic};

/// Overrides the output directory of every command (below `--out`).
pub const OUT_DIR_ENV: &str = "BOLUS_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Sensitivity,
    HomogCompare,
    EvaluateStarch,
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub validate_only: bool,
}

/// What a command did. `success` drives the exit status.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub success: bool,
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

pub fn load_config(opts: &Options) -> Result<ScenarioConfig> {
    match &opts.config {
        Some(path) => ScenarioConfig::load(path),
        None => ScenarioConfig::from_toml_str(""),
    }
}

pub fn output_dir(opts: &Options, cfg: &ScenarioConfig) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn execute(command: Command, opts: &Options) -> Result<Outcome> {
    let cfg = load_config(opts)?;
    if opts.validate_only {
        return Ok(Outcome {
            success: true,
            files: Vec::new(),
            lines: vec![format!("config ok: {} scenario", cfg.model)],
        });
    }
    let dir = output_dir(opts, &cfg);
    let jobs = opts
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match command {
        Command::Run => run_scenario(&cfg, &dir),
        Command::Sensitivity => run_sensitivity(&cfg, &dir, jobs),
        Command::HomogCompare => run_compare_homogenization(&cfg, &dir),
        Command::EvaluateStarch => run_evaluate_starch(&cfg, &dir),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub model: ModelVariant,
    pub exit: ExitFlag,
    pub exit_time_s: Option<f64>,
    pub diagnostic: Option<String>,
    pub ledger: LedgerAudit,
    pub stats: RunStats,
    pub position_non_decreasing: bool,
    pub absorbed_cum_g: f64,
    pub secreted_cum_g: f64,
    pub final_state: BolusState,
}

impl RunSummary {
    pub fn of(traj: &Trajectory) -> Self {
        let last = traj.last();
        RunSummary {
            model: traj.variant,
            exit: traj.exit,
            exit_time_s: traj.exit_time,
            diagnostic: traj.diagnostic.clone(),
            ledger: traj.ledger,
            stats: traj.stats,
            position_non_decreasing: traj.samples.windows(2).all(|w| w[1].x >= w[0].x),
            absorbed_cum_g: last.absorbed_cum,
            secreted_cum_g: last.secreted_cum,
            final_state: *last,
        }
    }

    pub fn passed(&self) -> bool {
        self.ledger.passed && self.exit != ExitFlag::DegenerateState
    }
}

pub fn run_scenario(cfg: &ScenarioConfig, dir: &Path) -> Result<Outcome> {
    let sys = cfg.system()?;
    let traj = run(&cfg.initial, &sys, &cfg.integration)?;
    let summary = RunSummary::of(&traj);
    let csv = dir.join("trajectory.csv");
    let js = dir.join("summary.json");
    write_atomic(&csv, &trajectory_csv(&traj))?;
    write_atomic(&js, &json(&summary)?)?;
    let mut lines = vec![format!(
        "{}: {:?}{} , ledger drift {:.3e} g (tolerance {:.3e} g)",
        traj.variant,
        traj.exit,
        traj.exit_time
            .map(|t| format!(" after {:.3} h", t / 3600.0))
            .unwrap_or_default(),
        traj.ledger.drift,
        traj.ledger.tolerance,
    )];
    if let Some(d) = &traj.diagnostic {
        lines.push(format!("diagnostic: {d}"));
    }
    Ok(Outcome {
        success: summary.passed(),
        files: vec![csv, js],
        lines,
    })
}

#[derive(Debug, Clone, Serialize)]
struct SensitivityRow {
    output: String,
    parameter: String,
    factor: f64,
    max_relative_variation: Option<f64>,
    mean_relative_variation: Option<f64>,
    error: Option<String>,
}

fn factor_label(f: f64) -> String {
    format!("{f}")
}

type SummaryRow = (String, String, f64, std::result::Result<(f64, f64), String>);

fn sensitivity_rows(cfg: &ScenarioConfig, report: &SensitivityReport) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (output, params) in &cfg.sensitivity.study {
        for &param in params {
            for &factor in &report.factors {
                let cell = report.cell(param, factor).expect("every (parameter, factor) cell was run");
                let value = match &cell.result {
                    Ok(_) => {
                        let s = cell.series(*output).expect("every output is tracked");
                        Ok((s.max, s.mean))
                    }
                    Err(e) => Err(e.clone()),
                };
                rows.push((output.to_string(), param.to_string(), factor, value));
            }
        }
    }
    rows
}

pub fn run_sensitivity(cfg: &ScenarioConfig, dir: &Path, jobs: usize) -> Result<Outcome> {
    let sys = cfg.system()?;
    let targets = study_targets(&cfg.sensitivity.study);
    let report = sensitivity::sensitivity_sweep(
        &sys,
        &cfg.initial,
        &targets,
        &cfg.sensitivity.factors,
        &cfg.integration,
        jobs,
    )?;

    let cell_dir = dir.join("sensitivity");
    let files = report
        .cells
        .par_iter()
        .map(|cell| {
            let path = cell_dir.join(format!("{}_x{}.csv", cell.param, factor_label(cell.factor)));
            let mut text = String::from("t_s,a_s_rel,b_abs_rel,v_rel\n");
            if let Ok(series) = &cell.result {
                for (i, &t) in cell.times.iter().enumerate() {
                    let values = series.iter().map(|s| s.values[i].unwrap_or(f64::NAN));
                    text.push_str(&row(std::iter::once(t).chain(values)));
                    text.push('\n');
                }
            }
            write_atomic(&path, &text).map(|_| path)
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = sensitivity_rows(cfg, &report);
    let mut table = String::from("output,parameter,factor,max_rel,mean_rel,status\n");
    let mut json_rows = Vec::new();
    let mut lines = Vec::new();
    let mut success = true;
    for (output, param, factor, value) in rows {
        let (max, mean, status) = match &value {
            Ok((max, mean)) => (float(*max), float(*mean), "ok".to_string()),
            Err(e) => {
                success = false;
                (String::new(), String::new(), format!("failed: {}", e.replace(',', ";")))
            }
        };
        table.push_str(&format!("{output},{param},{factor},{max},{mean},{status}\n"));
        if let Ok((m, _)) = &value {
            lines.push(format!("{output:>5} <- {param:<8} x{factor:<5} max relative variation {m:.4e}"));
        }
        json_rows.push(SensitivityRow {
            output,
            parameter: param,
            factor,
            max_relative_variation: value.as_ref().ok().map(|v| v.0),
            mean_relative_variation: value.as_ref().ok().map(|v| v.1),
            error: value.err(),
        });
    }
    let summary_csv = dir.join("sensitivity_summary.csv");
    let summary_json = dir.join("sensitivity_summary.json");
    write_atomic(&summary_csv, &table)?;
    write_atomic(&summary_json, &json(&json_rows)?)?;
    let mut all = vec![summary_csv, summary_json];
    all.extend(files);
    Ok(Outcome {
        success,
        files: all,
        lines,
    })
}

#[derive(Debug, Clone, Serialize)]
struct HomogenizationSummary {
    table: HomogenizationTable,
    window_s: f64,
    transient_s: f64,
    /// Largest velocity range over 60 s windows after the transient.
    m3_velocity_swing_mps: f64,
    m4_velocity_swing_mps: f64,
}

pub fn run_compare_homogenization(cfg: &ScenarioConfig, dir: &Path) -> Result<Outcome> {
    let sys = cfg.system()?;
    let h = &cfg.homogenization;
    let table = homogenization::homogenization_error(&sys, &cfg.initial, &cfg.integration, &h.scales, &h.window)?;
    let (m3, m4) = paired_runs(&sys, &cfg.initial, &cfg.integration)?;

    let mut traces = String::from("t_s,x_m3_m,v_m3_mps,x_m4_m,v_m4_mps\n");
    for (a, b) in homogenization::aligned_samples(&m3, &m4) {
        traces.push_str(&row([a.t, a.x, a.v, b.x, b.v]));
        traces.push('\n');
    }
    let mut errors = String::from(
        "scale,period_s,width_eps_s,sup_position_error,mean_velocity_error,m3_exit_time_s,m4_exit_time_s\n",
    );
    for r in &table.rows {
        errors.push_str(&row([
            r.scale,
            r.period,
            r.width_eps,
            r.sup_position_error,
            r.mean_velocity_error,
            r.resolved_exit_time.unwrap_or(f64::NAN),
            r.averaged_exit_time.unwrap_or(f64::NAN),
        ]));
        errors.push('\n');
    }
    let summary = HomogenizationSummary {
        m3_velocity_swing_mps: max_velocity_swing(&m3, 60.0, h.window.transient),
        m4_velocity_swing_mps: max_velocity_swing(&m4, 60.0, h.window.transient),
        window_s: h.window.window,
        transient_s: h.window.transient,
        table,
    };
    let lines = summary
        .table
        .rows
        .iter()
        .map(|r| {
            format!(
                "scale {:<5} period {:>6.3} s: sup |x_M3 - x_M4|/L = {:.3e}, window-mean velocity error = {:.3e}",
                r.scale, r.period, r.sup_position_error, r.mean_velocity_error
            )
        })
        .collect();
    let files = vec![
        dir.join("homogenization_errors.csv"),
        dir.join("velocity_traces.csv"),
        dir.join("homogenization.json"),
    ];
    write_atomic(&files[0], &errors)?;
    write_atomic(&files[1], &traces)?;
    write_atomic(&files[2], &json(&summary)?)?;
    let success = m3.exit != ExitFlag::DegenerateState && m4.exit != ExitFlag::DegenerateState;
    Ok(Outcome { success, files, lines })
}

pub fn run_evaluate_starch(cfg: &ScenarioConfig, dir: &Path) -> Result<Outcome> {
    let sys = cfg.system()?;
    let result: EvaluationResult =
        starch::evaluate_starch(&sys, &cfg.starch.inputs, &cfg.starch.reference, &cfg.integration)?;
    let path = dir.join("starch_evaluation.json");
    write_atomic(&path, &json(&result)?)?;
    let r = &result.reference;
    let verdict = |ok: bool| if ok { "ok" } else { "out of tolerance" };
    Ok(Outcome {
        success: result.passed(),
        files: vec![path],
        lines: vec![
            format!(
                "wet digesta at ileum: {:.3} % (reference {} +/- {}) {}",
                result.wet_output_pct,
                r.wet_output_pct,
                r.wet_tolerance_pct,
                verdict(result.wet_passed)
            ),
            format!(
                "dry matter at ileum: {:.4} g (reference {} +/- {}) {}",
                result.dry_output_g,
                r.dry_output_g,
                r.dry_tolerance_g,
                verdict(result.dry_passed)
            ),
        ],
    })
}
