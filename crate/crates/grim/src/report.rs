//! Run reports and trace serialization for the command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{SeparationReport, StepBoundReport};
use crate::error::{Error, Result};
use crate::grim::GrimTrace;

/// A scalar schedule broadcasts to every step; a list is used as given.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Scalar(usize),
    List(Vec<usize>),
}

impl ScheduleSpec {
    pub fn broadcast(&self, steps: usize) -> Result<Vec<usize>> {
        match self {
            ScheduleSpec::Scalar(k) => Ok(vec![*k; steps]),
            ScheduleSpec::List(v) => {
                if v.len() != steps {
                    return Err(Error::Config(format!(
                        "schedule has {} entries for {steps} steps",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// On-disk run configuration; every field beyond `mode` is optional and
/// falls back to the same defaults as the command-line flags.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub mode: String,
    pub epsilon: Option<f64>,
    pub epsilon0: Option<f64>,
    pub max_steps: Option<usize>,
    pub k_schedule: Option<ScheduleSpec>,
    pub s_schedule: Option<ScheduleSpec>,
    pub seed: Option<u64>,
    pub grouped: Option<bool>,
    pub evals: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub norms: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub points: Option<PathBuf>,
    pub weighted_points: Option<bool>,
    pub budget: Option<usize>,
    pub bandwidth: Option<f64>,
    pub max_sample: Option<usize>,
    pub degree: Option<usize>,
    pub n_grid: Option<usize>,
    pub functionals: Option<usize>,
    pub width: Option<f64>,
    pub shuffles: Option<usize>,
    pub geim_features: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub diagnostics: Option<bool>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Error metrics of the returned approximation; fields stay absent when the
/// mode does not define them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub achieved_sup: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wce_squared: Option<f64>,
    pub coefficient_mass: f64,
}

/// Side-by-side numbers for the greedy interpolation baseline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub geim_selected: usize,
    pub geim_l2_error: f64,
    pub geim_sup_error: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DiagnosticsBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<SeparationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_bound: Option<StepBoundReport>,
}

/// The JSON document written after every run. Identical configurations
/// reproduce it byte for byte except for `wall_time_ms`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub config: serde_json::Value,
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub metrics: Metrics,
    pub steps_completed: usize,
    pub terminated_early: bool,
    pub best_step: usize,
    pub wall_time_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<BaselineComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsBlock>,
}

/// Writes the JSON report and the step trace CSV. An empty trace produces a
/// header-only CSV.
pub fn write_results(
    report: &RunReport,
    trace: &GrimTrace,
    out_path: Option<&Path>,
    trace_path: Option<&Path>,
) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
    match out_path {
        Some(path) => {
            fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))?
        }
        None => println!("{json}"),
    }
    if let Some(path) = trace_path {
        let mut out = String::from("step,selected_indices,residual_sup,support_size,shuffle_winner\n");
        for step in &trace.steps {
            let joined = step
                .new_indices
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                step.step, joined, step.residual_sup, step.support_size, step.shuffle_winner
            ));
        }
        let mut file =
            fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}
