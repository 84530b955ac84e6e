use super::{ClientUpdate, FedError, Result};
use crate::detmetrics::{evaluate_with, SizeBuckets};
use crate::exec::Execution;
use crate::params::{fnv1a, ParamSet, Rng};
use crate::synthdata::Sample;
use crate::tinydet::{infer_batch, train_local_with, DetectorConfig, DEFAULT_NMS_IOU, EVAL_CONF_THRESHOLD};

/// A client's private data; only its training-set size leaves the client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub client_id: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// What a participant does with each broadcast.
pub trait ClientLogic: Send {
    fn client_id(&self) -> &str;
    /// `n_k`, declared when joining.
    fn num_samples(&self) -> u64;
    fn on_broadcast(&mut self, round: u32, global: &ParamSet) -> Result<ClientUpdate>;
}

/// The stop-rule accuracy: mAP@0.5 of `p` on `test`.
pub fn global_accuracy(p: &ParamSet, test: &[Sample], cfg: &DetectorConfig, exec: Execution) -> Result<f64> {
    let images: Vec<_> = test.iter().map(|s| &s.image).collect();
    let dets = infer_batch(p, &images, cfg, EVAL_CONF_THRESHOLD, DEFAULT_NMS_IOU, exec)?;
    let truths: Vec<_> = test.iter().map(|s| s.boxes.clone()).collect();
    Ok(evaluate_with(&dets, &truths, cfg.num_classes, &SizeBuckets::default(), exec)?.map50)
}

/// Training seed of a client, independent of how many clients exist.
pub fn client_seed(federation_seed: u64, client_id: &str) -> u64 {
    Rng::derive_seed(federation_seed, fnv1a(0xcbf2_9ce4_8422_2325, client_id.as_bytes()))
}

/// One round on the client: score the incoming global on the local test
/// split (skipped for the round-0 initialization), then train `epochs`
/// epochs from it.
pub fn client_step(
    global: &ParamSet,
    round: u32,
    data: &ClientData,
    cfg: &DetectorConfig,
    epochs: usize,
    seed: u64,
    exec: Execution,
) -> Result<ClientUpdate> {
    for (split, set) in [("train", &data.train), ("test", &data.test)] {
        if set.is_empty() {
            return Err(FedError::EmptyDataset {
                client: data.client_id.clone(),
                split,
            });
        }
    }
    cfg.check_params(global)?;
    let reported_accuracy = if round == 0 {
        None
    } else {
        Some(global_accuracy(global, &data.test, cfg, exec)?)
    };
    let mut rng = Rng::new(Rng::derive_seed(seed, round as u64));
    let (weights, _) = train_local_with(global, &data.train, cfg, epochs, &mut rng, exec)?;
    Ok(ClientUpdate {
        client_id: data.client_id.clone(),
        round,
        weights,
        num_samples: data.train.len() as u64,
        reported_accuracy,
    })
}

/// A client that trains the detector on its own data.
#[derive(Debug, Clone)]
pub struct LocalClient {
    pub data: ClientData,
    pub cfg: DetectorConfig,
    pub epochs: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl LocalClient {
    pub fn new(data: ClientData, cfg: DetectorConfig, epochs: usize, federation_seed: u64) -> Self {
        let seed = client_seed(federation_seed, &data.client_id);
        Self {
            data,
            cfg,
            epochs,
            seed,
            exec: Execution::default(),
        }
    }
}

impl ClientLogic for LocalClient {
    fn client_id(&self) -> &str {
        &self.data.client_id
    }

    fn num_samples(&self) -> u64 {
        self.data.train.len() as u64
    }

    fn on_broadcast(&mut self, round: u32, global: &ParamSet) -> Result<ClientUpdate> {
        client_step(global, round, &self.data, &self.cfg, self.epochs, self.seed, self.exec)
    }
}
