//! Line-delimited metrics records and the run summary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dpmpc_core::transport::ChannelMetrics;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub elapsed_ms: Option<u64>,
    pub rounds: u64,
    pub bytes_total: u64,
    /// `bytes_per_pair[i][j]`: bytes sent from party `i` to party `j`.
    pub bytes_per_pair: Vec<Vec<u64>>,
    pub epsilon_spent: Option<f64>,
}

impl MetricsRecord {
    pub fn traffic(metrics: &ChannelMetrics) -> (u64, u64, Vec<Vec<u64>>) {
        (metrics.rounds, metrics.total_bytes(), metrics.bytes_sent.clone())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InitSummary {
    pub chosen: String,
    pub chosen_accuracy: f64,
    pub random_accuracy: f64,
    pub average_accuracy: f64,
    pub local_accuracies: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub party: usize,
    pub mode: String,
    pub iterations: u64,
    pub final_test_accuracy: f64,
    pub final_train_accuracy: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub local_sigma: Option<f64>,
    pub global_sigma: f64,
    pub init: Option<InitSummary>,
    pub rounds: u64,
    pub bytes_total: u64,
    pub openings: BTreeMap<String, u64>,
    pub elapsed_ms: Option<u64>,
}

/// Appends one JSON object per line, flushing after each so that a failed
/// run leaves every completed record on disk.
pub struct MetricsSink {
    out: BufWriter<File>,
}

impl MetricsSink {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let f = File::create(path).map_err(|e| CliError::Output(format!("cannot create {}: {e}", path.display())))?;
        Ok(MetricsSink { out: BufWriter::new(f) })
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<(), CliError> {
        let line = serde_json::to_string(rec).map_err(|e| CliError::Output(e.to_string()))?;
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| CliError::Output(e.to_string()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}
