//! Evaluation records, CSV metrics and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, Selection};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "global_step,phase_task,eval_task,success_rate,mean_return,method,selection,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub global_step: u64,
    /// Task being trained when the evaluation ran.
    pub phase_task: usize,
    pub eval_task: usize,
    pub successes: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub method: Method,
    pub selection: Selection,
    pub seed: u64,
}

pub fn write_csv(mut w: impl Write, records: &[EvalRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.global_step, r.phase_task, r.eval_task, r.success_rate, r.mean_return, r.method, r.selection, r.seed
        )?;
    }
    Ok(())
}

pub fn write_csv_file(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_csv(&mut w, records).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Success rate at the last evaluation of each task, for one strategy.
pub fn final_performance(records: &[EvalRecord], selection: Selection) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    let mut last_step: BTreeMap<usize, u64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.selection == selection) {
        if last_step.get(&r.eval_task).map_or(true, |&s| r.global_step >= s) {
            last_step.insert(r.eval_task, r.global_step);
            out.insert(r.eval_task, r.success_rate);
        }
    }
    out
}

/// Mean success rate over every record of one strategy.
pub fn cumulative_performance(records: &[EvalRecord], selection: Selection) -> f64 {
    let rates: Vec<f64> = records
        .iter()
        .filter(|r| r.selection == selection)
        .map(|r| r.success_rate)
        .collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub selection: Selection,
    /// Keyed by task id.
    pub final_success: BTreeMap<usize, f64>,
    pub cumulative_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub seed: u64,
    pub summaries: Vec<SelectionSummary>,
    pub num_records: usize,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, seed: u64, records: &[EvalRecord], wall_clock_secs: f64) -> Self {
        let summaries = config
            .selections
            .iter()
            .map(|&selection| SelectionSummary {
                selection,
                final_success: final_performance(records, selection),
                cumulative_success: cumulative_performance(records, selection),
            })
            .collect();
        Self {
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            summaries,
            num_records: records.len(),
            wall_clock_secs,
        }
    }

    pub fn summary(&self, selection: Selection) -> Option<&SelectionSummary> {
        self.summaries.iter().find(|s| s.selection == selection)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}
