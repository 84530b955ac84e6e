//! Federated averaging protocol: FedAvg, the server round state machine,
//! client logic, wire messages and in-process / TCP transports.

mod client;
pub mod proto;
mod run;
mod server;
pub mod transport;

pub use client::{client_seed, client_step, global_accuracy, ClientData, ClientLogic, LocalClient};
pub use proto::Message;
pub use run::{run_client, run_federation, run_federation_with, run_server, FederationResult};
pub use server::{server_step, Emitted, Event, Phase, RoundRecord, RoundState, StopReason};
pub use transport::BIND_ENV;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detmetrics::MetricsError;
use crate::params::{ParamSet, ParamsError};
use crate::tinydet::DetError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("empty {split} set for client {client}")]
    EmptyDataset { client: String, split: &'static str },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("transport failure in round {round}: {message}")]
    TransportFailure { round: u32, message: String },
    #[error("invalid federation config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Detector(#[from] DetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, FedError>;

/// Weights a client returns at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub round: u32,
    pub weights: ParamSet,
    /// Training-set size `n_k`.
    pub num_samples: u64,
    /// mAP@0.5 of the received global on the local test split; absent in
    /// round 0, whose broadcast is the untrained initialization.
    pub reported_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub stop_threshold: f64,
    pub max_rounds: u32,
    pub local_epochs: usize,
    pub transport: Transport,
    /// TCP bind address; `FEDOD_BIND` overrides it.
    pub bind: String,
    pub seed: u64,
    /// Longest wait for any single message.
    pub timeout_secs: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            stop_threshold: 0.96,
            max_rounds: 10,
            local_epochs: 15,
            transport: Transport::InProcess,
            bind: "127.0.0.1:0".into(),
            seed: 0,
            timeout_secs: 600,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_threshold > 0.0 && self.stop_threshold <= 1.0) {
            return Err(FedError::ConfigInvalid(format!(
                "stop_threshold {} outside (0, 1]",
                self.stop_threshold
            )));
        }
        if self.max_rounds == 0 {
            return Err(FedError::ConfigInvalid("max_rounds must be >= 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(FedError::ConfigInvalid("timeout_secs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sample-weighted mean `Σ (n_k / n) w_k`, accumulated in f64 over updates
/// sorted by client id and rounded to f32 once, so the result does not
/// depend on the order of `updates`.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ParamSet> {
    let first = updates.first().ok_or(FedError::EmptyUpdateSet)?;
    for u in updates {
        u.weights.check_compatible(&first.weights)?;
        if u.num_samples == 0 {
            return Err(FedError::ProtocolViolation(format!(
                "client {} declares zero samples",
                u.client_id
            )));
        }
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| {
        a.client_id.cmp(&b.client_id).then_with(|| {
            a.num_samples.cmp(&b.num_samples).then_with(|| {
                let (x, y) = (a.weights.to_flat(), b.weights.to_flat());
                x.iter()
                    .zip(&y)
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
    });
    let total: f64 = sorted.iter().map(|u| u.num_samples as f64).sum();
    let mut acc = vec![0.0f64; first.weights.num_values()];
    for u in sorted {
        let share = u.num_samples as f64 / total;
        for (a, &v) in acc.iter_mut().zip(&u.weights.to_flat()) {
            *a += share * v as f64;
        }
    }
    let flat: Vec<f32> = acc.into_iter().map(|v| v as f32).collect();
    Ok(first.weights.with_flat(&flat)?)
}
