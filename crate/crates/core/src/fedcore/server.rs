//! The server's round state machine as a pure transition function.
//!
//! Round `r` broadcasts the global `G_r` (`G_0` is the shared initialization),
//! collects one update from every client, aggregates them into `G_{r+1}` and
//! then decides whether to stop. Updates in round `r` report the accuracy of
//! `G_r`, so when the mean of those accuracies exceeds the threshold the final
//! model is `G_r` and the just-aggregated `G_{r+1}` is discarded. When the
//! round cap is reached the final model is the latest aggregate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{fedavg, ClientUpdate, FedConfig, FedError, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Broadcasting,
    WaitingForUpdates,
    Aggregating,
    CheckingStop,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Mean reported accuracy exceeded the threshold.
    Threshold,
    /// `max_rounds` rounds completed.
    RoundCap,
}

/// Accuracies reported for the global broadcast in `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub accuracies: BTreeMap<String, f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    BroadcastComplete,
    Update(ClientUpdate),
    StopDecision,
}

/// Outgoing traffic produced by a transition.
#[derive(Debug, Clone, PartialEq)]
pub enum Emitted {
    Broadcast { round: u32, weights: ParamSet },
    StopNotice { round: u32, weights: ParamSet },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round_index: u32,
    pub phase: Phase,
    /// Client id → training-set size declared at join time.
    pub expected_clients: BTreeMap<String, u64>,
    pub received: BTreeMap<String, ClientUpdate>,
    /// `G_r` while round `r` is in flight; the final model once `Done`.
    pub global_weights: ParamSet,
    /// Aggregate of the current round, set in `CheckingStop`.
    pub pending_aggregate: Option<ParamSet>,
    /// One record per round that carried accuracy reports.
    pub accuracy_history: Vec<RoundRecord>,
    /// `G_0, G_1, ...`: every global produced so far.
    pub globals: Vec<ParamSet>,
    pub stop_threshold: f64,
    pub max_rounds: u32,
    pub stop_reason: Option<StopReason>,
}

impl RoundState {
    /// Round 0 in `Broadcasting` with `init` as the global.
    pub fn new(cfg: &FedConfig, init: ParamSet, clients: BTreeMap<String, u64>) -> Result<Self> {
        cfg.validate()?;
        if clients.is_empty() {
            return Err(FedError::ConfigInvalid("no clients".into()));
        }
        if let Some((id, _)) = clients.iter().find(|(_, &n)| n == 0) {
            return Err(FedError::ProtocolViolation(format!(
                "client {id} declares zero samples"
            )));
        }
        Ok(Self {
            round_index: 0,
            phase: Phase::Broadcasting,
            expected_clients: clients,
            received: BTreeMap::new(),
            globals: vec![init.clone()],
            global_weights: init,
            pending_aggregate: None,
            accuracy_history: Vec::new(),
            stop_threshold: cfg.stop_threshold,
            max_rounds: cfg.max_rounds,
            stop_reason: None,
        })
    }

    /// The broadcast owed to every client in the current round.
    pub fn broadcast(&self) -> Emitted {
        Emitted::Broadcast {
            round: self.round_index,
            weights: self.global_weights.clone(),
        }
    }

    /// Rounds whose updates were aggregated.
    pub fn rounds_used(&self) -> u32 {
        self.globals.len() as u32 - 1
    }

    fn check_update(&self, u: &ClientUpdate) -> Result<()> {
        let violation = |m: String| Err(FedError::ProtocolViolation(m));
        if self.phase != Phase::WaitingForUpdates {
            return violation(format!("update from {} while {:?}", u.client_id, self.phase));
        }
        let Some(&declared) = self.expected_clients.get(&u.client_id) else {
            return violation(format!("unknown client {}", u.client_id));
        };
        if u.round != self.round_index {
            return violation(format!(
                "update from {} for round {} during round {}",
                u.client_id, u.round, self.round_index
            ));
        }
        if self.received.contains_key(&u.client_id) {
            return violation(format!("duplicate update from {} in round {}", u.client_id, u.round));
        }
        if u.num_samples != declared {
            return violation(format!(
                "client {} declared {declared} samples at join but sent {}",
                u.client_id, u.num_samples
            ));
        }
        match (self.round_index, u.reported_accuracy) {
            (0, Some(_)) => return violation(format!("{} reported accuracy for the initial broadcast", u.client_id)),
            (r, None) if r > 0 => return violation(format!("{} sent no accuracy in round {r}", u.client_id)),
            (_, Some(a)) if !(0.0..=1.0).contains(&a) => {
                return violation(format!("{} reported accuracy {a} outside [0, 1]", u.client_id))
            }
            _ => {}
        }
        if u.weights.check_compatible(&self.global_weights).is_err() {
            return violation(format!("weights from {} do not match the agreed schema", u.client_id));
        }
        Ok(())
    }
}

/// Applies one event. On error the caller's state is untouched.
pub fn server_step(state: &RoundState, event: Event) -> Result<(RoundState, Vec<Emitted>)> {
    let mut s = state.clone();
    let mut out = Vec::new();
    match (state.phase, event) {
        (Phase::Broadcasting, Event::BroadcastComplete) => s.phase = Phase::WaitingForUpdates,
        (_, Event::Update(u)) => {
            state.check_update(&u)?;
            s.received.insert(u.client_id.clone(), u);
            if s.received.len() == s.expected_clients.len() {
                s.phase = Phase::Aggregating;
                let updates: Vec<ClientUpdate> = s.received.values().cloned().collect();
                s.pending_aggregate = Some(fedavg(&updates)?);
                s.phase = Phase::CheckingStop;
            }
        }
        (Phase::CheckingStop, Event::StopDecision) => {
            let aggregate = s
                .pending_aggregate
                .take()
                .expect("aggregate computed on entering CheckingStop");
            let accuracies: BTreeMap<String, f64> = s
                .received
                .iter()
                .filter_map(|(id, u)| u.reported_accuracy.map(|a| (id.clone(), a)))
                .collect();
            let mut threshold_hit = false;
            if !accuracies.is_empty() {
                let mean = accuracies.values().sum::<f64>() / accuracies.len() as f64;
                threshold_hit = mean > s.stop_threshold;
                s.accuracy_history.push(RoundRecord {
                    round: s.round_index,
                    accuracies,
                    mean,
                });
            }
            s.received.clear();
            s.globals.push(aggregate.clone());
            if threshold_hit {
                // the accuracies vouch for the global they were measured on
                s.stop_reason = Some(StopReason::Threshold);
                s.phase = Phase::Done;
            } else if s.round_index + 1 == s.max_rounds {
                s.stop_reason = Some(StopReason::RoundCap);
                s.global_weights = aggregate;
                s.phase = Phase::Done;
            } else {
                s.global_weights = aggregate;
                s.round_index += 1;
                s.phase = Phase::Broadcasting;
                out.push(s.broadcast());
            }
            if s.phase == Phase::Done {
                out.push(Emitted::StopNotice {
                    round: s.round_index,
                    weights: s.global_weights.clone(),
                });
            }
        }
        (phase, event) => {
            return Err(FedError::ProtocolViolation(format!(
                "{event:?} is not legal while {phase:?}"
            )));
        }
    }
    Ok((s, out))
}
