use std::io::Write;

use serde::{Deserialize, Serialize};

use super::comms::ByteTotals;
use crate::error::Result;

pub const METRICS_CSV_HEADER: &str =
    "round,client_id,test_acc,private_loss,distill_loss,up_bytes,down_bytes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client_id: usize,
    pub test_acc: f64,
    pub private_loss: f64,
    pub distill_loss: f64,
    pub up_bytes: usize,
    pub down_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub clients: Vec<ClientMetrics>,
    pub avg_accuracy: f64,
    pub avg_private_loss: f64,
    pub avg_distill_loss: f64,
}

impl RoundMetrics {
    pub fn new(round: usize, clients: Vec<ClientMetrics>) -> Self {
        let n = clients.len().max(1) as f64;
        let mean = |f: fn(&ClientMetrics) -> f64| clients.iter().map(f).sum::<f64>() / n;
        Self {
            round,
            avg_accuracy: mean(|c| c.test_acc),
            avg_private_loss: mean(|c| c.private_loss),
            avg_distill_loss: mean(|c| c.distill_loss),
            clients,
        }
    }
}

/// Writes the header and one line per client per round.
pub fn write_metrics_csv<W: Write>(mut out: W, history: &[RoundMetrics]) -> Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in history {
        for c in &r.clients {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.round, c.client_id, c.test_acc, c.private_loss, c.distill_loss, c.up_bytes, c.down_bytes
            )?;
        }
    }
    Ok(())
}

/// End-of-run figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub rounds: usize,
    pub final_avg_accuracy: f64,
    pub best_avg_accuracy: f64,
    pub best_round: usize,
    pub bytes: ByteTotals,
}

impl RunOutcome {
    pub fn from_history(history: &[RoundMetrics], bytes: ByteTotals) -> Self {
        let final_avg_accuracy = history.last().map_or(0.0, |r| r.avg_accuracy);
        let (best_round, best_avg_accuracy) = history
            .iter()
            .fold((0, f64::NEG_INFINITY), |best, r| {
                if r.avg_accuracy > best.1 {
                    (r.round, r.avg_accuracy)
                } else {
                    best
                }
            });
        Self {
            rounds: history.len(),
            final_avg_accuracy,
            best_avg_accuracy: if history.is_empty() { 0.0 } else { best_avg_accuracy },
            best_round,
            bytes,
        }
    }
}
