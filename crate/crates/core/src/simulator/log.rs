//! Per-round records and their newline-delimited JSON encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::{Direction, Rung};

/// Simulated seconds spent by one device in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimTimes {
    pub compute: f64,
    pub communication: f64,
    pub synchronization: f64,
    pub overhead: f64,
}

impl SimTimes {
    pub fn total(&self) -> f64 {
        self.compute + self.communication + self.synchronization + self.overhead
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRoundLog {
    pub device_id: usize,
    pub cluster: usize,
    pub rung_start: Rung,
    pub rung_end: Rung,
    pub loss: f64,
    pub grad_sq: f64,
    pub cpu_usage: f64,
    pub memory_usage: f64,
    pub adjustments: Vec<Direction>,
    pub utility: f64,
    pub n_samples: usize,
    pub sgd_steps: u64,
    /// Samples processed times parameters of the rung they were processed at.
    pub train_work: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub times: SimTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u64,
    /// Devices that trained and contributed an update.
    pub active: Vec<usize>,
    pub dropped: Vec<usize>,
    pub stragglers: Vec<usize>,
    pub devices: Vec<DeviceRoundLog>,
    /// Sample-weighted training loss per cluster; `None` when it sent nothing.
    pub cluster_losses: Vec<Option<f64>>,
    pub global_loss: f64,
    pub accuracy: f64,
    /// Test accuracy of the global model sliced to each rung.
    pub rung_accuracy: [f64; 3],
    pub objective: f64,
    pub resource_imbalance: f64,
    pub comm_ratio: f64,
    pub convergence_rate: Option<f64>,
    pub stopped: bool,
    pub reclustered: bool,
    pub retried: bool,
    pub bytes_total: u64,
    /// Bytes the same participants would have moved at the Complex rung.
    pub fedavg_bytes: u64,
    /// Distance evaluations spent on clustering this round.
    pub distance_computations: u64,
}

/// First line of every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl FileHeader {
    pub fn new(config_hash: u64) -> Self {
        Self {
            tool: "asa".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: format!("{config_hash:016x}"),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("header serializes")
    }
}

pub fn write_round<W: Write>(w: &mut W, log: &RoundLog) -> Result<()> {
    serde_json::to_writer(&mut *w, log).map_err(|e| invalid(format!("round log encoding: {e}")))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Reads round records, skipping a leading header line if present.
pub fn read_rounds<R: BufRead>(r: R) -> Result<Vec<RoundLog>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (i == 0 && serde_json::from_str::<FileHeader>(&line).is_ok()) {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| invalid(format!("round log line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
