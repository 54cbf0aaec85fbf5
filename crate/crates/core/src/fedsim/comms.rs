//! Byte accounting for every message exchanged in a run.

use serde::{Deserialize, Serialize};

use crate::nn::WIRE_BYTES_PER_VALUE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    SoftPrediction,
    Parameters,
    Coefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommsEntry {
    pub round: usize,
    pub client: usize,
    pub kind: PayloadKind,
    pub direction: Direction,
    pub bytes: usize,
}

/// `rows × classes` probabilities.
pub fn soft_prediction_bytes(rows: usize, classes: usize) -> usize {
    rows * classes * WIRE_BYTES_PER_VALUE
}

/// One model's worth of parameters.
pub fn parameter_bytes(param_count: usize) -> usize {
    param_count * WIRE_BYTES_PER_VALUE
}

/// One coefficient vector of length `n`.
pub fn coefficient_bytes(n: usize) -> usize {
    n * WIRE_BYTES_PER_VALUE
}

/// Append-only log of messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommsLedger {
    entries: Vec<CommsEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteTotals {
    pub soft_prediction: usize,
    pub parameters: usize,
    pub coefficients: usize,
    pub uplink: usize,
    pub downlink: usize,
    pub total: usize,
}

impl CommsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        round: usize,
        client: usize,
        kind: PayloadKind,
        direction: Direction,
        bytes: usize,
    ) {
        self.entries.push(CommsEntry {
            round,
            client,
            kind,
            direction,
            bytes,
        });
    }

    pub fn entries(&self) -> &[CommsEntry] {
        &self.entries
    }

    pub fn totals(&self) -> ByteTotals {
        self.totals_where(|_| true)
    }

    pub fn totals_for_round(&self, round: usize) -> ByteTotals {
        self.totals_where(|e| e.round == round)
    }

    /// `(uplink, downlink)` bytes of one client in one round.
    pub fn client_round(&self, round: usize, client: usize) -> (usize, usize) {
        let t = self.totals_where(|e| e.round == round && e.client == client);
        (t.uplink, t.downlink)
    }

    fn totals_where(&self, keep: impl Fn(&CommsEntry) -> bool) -> ByteTotals {
        let mut t = ByteTotals::default();
        for e in self.entries.iter().filter(|e| keep(e)) {
            match e.kind {
                PayloadKind::SoftPrediction => t.soft_prediction += e.bytes,
                PayloadKind::Parameters => t.parameters += e.bytes,
                PayloadKind::Coefficients => t.coefficients += e.bytes,
            }
            match e.direction {
                Direction::Uplink => t.uplink += e.bytes,
                Direction::Downlink => t.downlink += e.bytes,
            }
            t.total += e.bytes;
        }
        t
    }
}
