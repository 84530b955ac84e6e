//! Scripted federation participants.

#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use fedod::fedcore::{ClientLogic, ClientUpdate, Result};
use fedod::{ParamSet, Tensor};

pub type Ledger = Arc<Mutex<Vec<(String, u32)>>>;

/// Returns `value` everywhere and reports `accuracies[round - 1]` from round
/// 1 on (the last entry repeats).
pub struct Scripted {
    pub id: String,
    pub n: u64,
    pub value: f32,
    pub accuracies: Vec<f64>,
    pub ledger: Option<Ledger>,
}

impl Scripted {
    pub fn new(id: &str, n: u64, value: f32, accuracies: &[f64]) -> Self {
        Self {
            id: id.into(),
            n,
            value,
            accuracies: accuracies.to_vec(),
            ledger: None,
        }
    }
}

impl ClientLogic for Scripted {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn num_samples(&self) -> u64 {
        self.n
    }

    fn on_broadcast(&mut self, round: u32, global: &ParamSet) -> Result<ClientUpdate> {
        if let Some(l) = &self.ledger {
            l.lock().unwrap().push((self.id.clone(), round));
        }
        let reported_accuracy = match round {
            0 => None,
            r => Some(self.accuracies[(r as usize - 1).min(self.accuracies.len() - 1)]),
        };
        let flat = vec![self.value + round as f32; global.num_values()];
        Ok(ClientUpdate {
            client_id: self.id.clone(),
            round,
            weights: global.with_flat(&flat)?,
            num_samples: self.n,
            reported_accuracy,
        })
    }
}

pub fn vector(len: usize, v: f32) -> ParamSet {
    ParamSet::new(vec![Tensor::new("w", vec![len], vec![v; len]).unwrap()]).unwrap()
}
