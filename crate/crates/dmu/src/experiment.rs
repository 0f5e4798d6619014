//! Multi-seed experiment runner and report emitter.
//!
//! An experiment trains `runs` independent seeded models per cell kind
//! on one task, then aggregates per-threshold cumulative-success
//! curves: for each loss threshold, the number of runs whose
//! validation loss has reached it in or before each epoch. Runs are
//! embarrassingly parallel; reports are written single-threaded after
//! the join and are byte-reproducible apart from one timestamp
//! metadata line.

use crate::cells::{count_weights, CellError, CellKind};
use crate::seed::derive_seed;
use crate::tasks::{AddingTask, NoiseSeqTask, Task, TaskError, TempOrdTask};
use crate::training::{build_model, run_until_stop, RunReport, RunStatus, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment needs at least one run")]
    NoRuns,
    #[error("experiment needs at least one cell")]
    NoCells,
    #[error("thresholds must be strictly decreasing")]
    BadThresholds,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Task selection as it appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskConfig {
    Adding {
        #[serde(default = "default_adding_t_min")]
        t_min: usize,
        #[serde(default = "default_adding_t_max")]
        t_max: usize,
    },
    TempOrd {
        #[serde(default)]
        scaled_down: bool,
    },
    NoiseSeq {
        #[serde(default = "default_noiseseq_n")]
        n: usize,
    },
}

fn default_adding_t_min() -> usize {
    AddingTask::full_scale().t_min
}

fn default_adding_t_max() -> usize {
    AddingTask::full_scale().t_max
}

fn default_noiseseq_n() -> usize {
    50
}

impl TaskConfig {
    /// Materialize the generator. `data_seed` fixes per-experiment
    /// randomness such as the NoiseSeq symbol table.
    pub fn build(&self, data_seed: u64) -> Result<Task, TaskError> {
        match self {
            TaskConfig::Adding { t_min, t_max } => {
                Ok(Task::Adding(AddingTask::new(*t_min, *t_max)?))
            }
            TaskConfig::TempOrd { scaled_down } => {
                let ranges = if *scaled_down {
                    TempOrdTask::scaled_down()
                } else {
                    TempOrdTask::full_scale()
                };
                ranges.validate()?;
                Ok(Task::TempOrd(ranges))
            }
            TaskConfig::NoiseSeq { n } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(data_seed, 3));
                Ok(Task::NoiseSeq(NoiseSeqTask::new(*n, &mut rng)?))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    pub arch: Vec<usize>,
}

impl CellConfig {
    pub fn label(&self) -> String {
        let widths: Vec<String> = self.arch.iter().map(|w| w.to_string()).collect();
        format!("{}({})", self.kind, widths.join(","))
    }
}

fn default_runs() -> usize {
    51
}

fn default_thresholds() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
}

/// Full description of one experiment; loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub task: TaskConfig,
    pub cells: Vec<CellConfig>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(ExperimentError::NoRuns);
        }
        if self.cells.is_empty() {
            return Err(ExperimentError::NoCells);
        }
        if self.thresholds.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ExperimentError::BadThresholds);
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)?;
        let spec: ExperimentSpec =
            toml::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Result of one seeded training run inside an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub cell_label: String,
    pub run_id: usize,
    pub seed: u64,
    pub report: RunReport,
    /// First epoch reaching each threshold, aligned with the spec's
    /// threshold list.
    pub first_reach: Vec<Option<usize>>,
}

/// Cumulative per-epoch count of runs at or below one threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub cell_label: String,
    pub threshold: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub runs: Vec<ExperimentRun>,
    pub curves: Vec<ThresholdCurve>,
}

fn first_reach(report: &RunReport, thresholds: &[f64]) -> Vec<Option<usize>> {
    thresholds
        .iter()
        .map(|&thr| {
            report
                .history
                .iter()
                .find(|r| r.val_loss <= thr)
                .map(|r| r.epoch)
        })
        .collect()
}

/// Train `runs` seeded models per cell and assemble threshold curves.
/// Runs execute in parallel on the current rayon pool; a failed run is
/// recorded as diverged and the experiment continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    spec.validate()?;
    let task = spec.task.build(spec.master_seed)?;
    let jobs: Vec<(usize, usize)> = (0..spec.cells.len())
        .flat_map(|c| (0..spec.runs).map(move |r| (c, r)))
        .collect();
    let runs: Vec<ExperimentRun> = jobs
        .par_iter()
        .map(|&(cell_idx, run_id)| {
            let cell = &spec.cells[cell_idx];
            let seed = derive_seed(spec.master_seed, ((cell_idx as u64) << 32) | run_id as u64);
            let config = TrainConfig {
                seed,
                ..spec.train.clone()
            };
            let report = build_model(cell.kind, &cell.arch, &task, seed)
                .and_then(|mut model| run_until_stop(&mut model, &task, &config))
                .unwrap_or_else(|_| RunReport {
                    history: Vec::new(),
                    status: RunStatus::Diverged,
                    test_loss: None,
                });
            let reach = first_reach(&report, &spec.thresholds);
            ExperimentRun {
                cell_label: cell.label(),
                run_id,
                seed,
                report,
                first_reach: reach,
            }
        })
        .collect();

    let mut curves = Vec::new();
    for cell in &spec.cells {
        let label = cell.label();
        for (t_idx, &threshold) in spec.thresholds.iter().enumerate() {
            let mut counts = vec![0usize; spec.train.max_epochs];
            for run in runs.iter().filter(|r| r.cell_label == label) {
                if let Some(epoch) = run.first_reach[t_idx] {
                    for slot in counts.iter_mut().skip(epoch - 1) {
                        *slot += 1;
                    }
                }
            }
            curves.push(ThresholdCurve {
                cell_label: label.clone(),
                threshold,
                counts,
            });
        }
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        runs,
        curves,
    })
}

/// Full-precision float formatting for the CSV reports (17 significant
/// digits, enough to round-trip an f64 bit-exactly).
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossStats {
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

fn loss_stats(values: &[f64]) -> Option<LossStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(LossStats { best, mean, std })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub runs: usize,
    pub diverged: usize,
    /// Final-epoch training loss over non-diverged runs.
    pub train_loss: Option<LossStats>,
    pub test_loss: Option<LossStats>,
}

/// Per-cell best/mean/std summary over non-diverged runs.
pub fn summarize(result: &ExperimentResult) -> BTreeMap<String, CellSummary> {
    let mut out = BTreeMap::new();
    for cell in &result.spec.cells {
        let label = cell.label();
        let cell_runs: Vec<&ExperimentRun> = result
            .runs
            .iter()
            .filter(|r| r.cell_label == label)
            .collect();
        let diverged = cell_runs
            .iter()
            .filter(|r| r.report.status == RunStatus::Diverged)
            .count();
        let train_losses: Vec<f64> = cell_runs
            .iter()
            .filter(|r| r.report.status != RunStatus::Diverged)
            .filter_map(|r| r.report.history.last().map(|e| e.train_loss))
            .collect();
        let test_losses: Vec<f64> = cell_runs
            .iter()
            .filter_map(|r| r.report.test_loss)
            .collect();
        out.insert(
            label,
            CellSummary {
                runs: cell_runs.len(),
                diverged,
                train_loss: loss_stats(&train_losses),
                test_loss: loss_stats(&test_losses),
            },
        );
    }
    out
}

fn metadata_line() -> String {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# generated_at_unix: {now}\n")
}

/// Write `runs.csv`, `curves.csv`, and `summary.json` into `dir`.
/// Cell labels like `dmu(5,5)` contain commas, so the cell column is
/// double-quoted.
/// Optionally emits gnuplot-ready `.dat` files per (cell, threshold).
/// Everything but the leading timestamp line is a pure function of the
/// experiment result.
pub fn emit_reports(
    result: &ExperimentResult,
    dir: &Path,
    gnuplot: bool,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;

    let mut runs_csv = String::new();
    runs_csv.push_str(&metadata_line());
    runs_csv.push_str("run_id,seed,cell,epoch,train_loss,val_loss,scale_S,status,test_loss\n");
    for run in &result.runs {
        let test = run
            .report
            .test_loss
            .map(fmt_float)
            .unwrap_or_else(|| "".to_string());
        for record in &run.report.history {
            runs_csv.push_str(&format!(
                "{},{},\"{}\",{},{},{},{},{},{}\n",
                run.run_id,
                run.seed,
                run.cell_label,
                record.epoch,
                fmt_float(record.train_loss),
                fmt_float(record.val_loss),
                fmt_float(record.scale_s),
                run.report.status.as_str(),
                test,
            ));
        }
    }
    fs::write(dir.join("runs.csv"), runs_csv)?;

    let mut curves_csv = String::new();
    curves_csv.push_str(&metadata_line());
    curves_csv.push_str("cell,threshold,epoch,cumulative_count\n");
    for curve in &result.curves {
        for (i, count) in curve.counts.iter().enumerate() {
            curves_csv.push_str(&format!(
                "\"{}\",{:e},{},{}\n",
                curve.cell_label,
                curve.threshold,
                i + 1,
                count
            ));
        }
    }
    fs::write(dir.join("curves.csv"), curves_csv)?;

    let summary = summarize(result);
    let file = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &summary)
        .map_err(|e| ExperimentError::Config(e.to_string()))?;

    if gnuplot {
        for curve in &result.curves {
            let name = format!(
                "curve_{}_{:e}.dat",
                curve.cell_label.replace(['(', ')', ','], "_"),
                curve.threshold
            );
            let mut body = String::from("# epoch cumulative_count\n");
            for (i, count) in curve.counts.iter().enumerate() {
                body.push_str(&format!("{} {}\n", i + 1, count));
            }
            fs::write(dir.join(name), body)?;
        }
    }
    Ok(())
}

/// Print the published-style weight-count line for a cell on a task.
pub fn weight_count_for_task(task: &Task, kind: CellKind, arch: &[usize]) -> usize {
    count_weights(kind, arch, task.input_width(), task.output_width())
}
