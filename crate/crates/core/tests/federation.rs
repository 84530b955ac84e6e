#[path = "support/fakes.rs"]
mod fakes;

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use fakes::{vector, Ledger, Scripted};
use fedod::fedcore::transport::{ClientLink, TcpAcceptor, TcpLink};
use fedod::fedcore::{
    client_step, run_federation, run_federation_with, run_server, ClientData, ClientLogic, ClientUpdate, FedConfig,
    FedError, Message, StopReason, Transport,
};
use fedod::synthdata::{generate, BodyColor, Sample, SceneSpec, Windshield};
use fedod::tinydet::{init_params, DetectorConfig};
use fedod::{Execution, Rng};

fn cfg(max_rounds: u32, transport: Transport) -> FedConfig {
    FedConfig {
        max_rounds,
        transport,
        timeout_secs: 30,
        ..Default::default()
    }
}

fn pair(accs_a: &[f64], accs_b: &[f64]) -> Vec<Box<dyn ClientLogic>> {
    vec![
        Box::new(Scripted::new("a", 1, 0.0, accs_a)),
        Box::new(Scripted::new("b", 3, 4.0, accs_b)),
    ]
}

// With these fakes the aggregate of round r is (1·(0 + r) + 3·(4 + r)) / 4 = 3 + r.

#[test]
fn stops_at_first_mean_above_threshold_with_the_evaluated_global() {
    for transport in [Transport::InProcess, Transport::Tcp] {
        let r = run_federation_with(
            &cfg(10, transport),
            vector(3, 0.0),
            pair(&[0.90, 0.95, 0.99], &[0.90, 0.98, 0.99]),
        )
        .unwrap();
        assert_eq!(r.stop_reason, StopReason::Threshold);
        let means: Vec<f64> = r.accuracy_history.iter().map(|h| h.mean).collect();
        assert_eq!(means.len(), 2);
        assert!((means[0] - 0.90).abs() < 1e-12 && (means[1] - 0.965).abs() < 1e-12);
        // round 2 evaluated G_2 = 3 + 1; the fresh aggregate G_3 is discarded
        assert_eq!(r.final_weights, vector(3, 4.0));
        assert_eq!(r.rounds_used, 3);
        assert_eq!(r.globals.last().unwrap(), &vector(3, 5.0));
    }
}

#[test]
fn cap_returns_latest_aggregate() {
    let r = run_federation_with(&cfg(3, Transport::InProcess), vector(2, 0.0), pair(&[0.1], &[0.2])).unwrap();
    assert_eq!(r.stop_reason, StopReason::RoundCap);
    assert_eq!(r.rounds_used, 3);
    assert_eq!(r.final_weights, vector(2, 5.0));
    assert_eq!(r.accuracy_history.len(), 2);
    assert_eq!(r.globals.len(), 4);
}

#[test]
fn perfect_reports_stop_after_one_history_entry() {
    let r = run_federation_with(&cfg(10, Transport::InProcess), vector(2, 0.0), pair(&[1.0], &[1.0])).unwrap();
    assert_eq!(r.stop_reason, StopReason::Threshold);
    assert_eq!(r.accuracy_history.len(), 1);
    assert_eq!(r.accuracy_history[0].round, 1);
    assert_eq!(r.final_weights, vector(2, 3.0));
}

fn samples(n: usize, body: BodyColor, rng: &mut Rng) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let ws = if i % 2 == 0 { Windshield::A } else { Windshield::None };
            generate(&SceneSpec::standard(32, body, ws), rng)
        })
        .collect()
}

fn client(id: &str, body: BodyColor, seed: u64) -> ClientData {
    let mut rng = Rng::new(seed);
    ClientData {
        client_id: id.into(),
        train: samples(10, body, &mut rng),
        test: samples(4, body, &mut rng),
    }
}

#[test]
fn single_client_low_threshold_returns_its_first_training_output() {
    let det = DetectorConfig::default();
    let fed = FedConfig {
        stop_threshold: 0.01,
        local_epochs: 3,
        seed: 5,
        ..cfg(10, Transport::InProcess)
    };
    let data = client("solo", BodyColor::Blue, 1);
    let r = run_federation(&fed, &det, vec![data.clone()]).unwrap();
    let init = init_params(&det, &mut Rng::new(5)).unwrap();
    let seed = fedod::fedcore::client_seed(5, "solo");
    let first = client_step(&init, 0, &data, &det, 3, seed, Execution::Sequential).unwrap();
    assert_eq!(r.globals[0], init);
    assert_eq!(r.globals[1], first.weights);
    if r.stop_reason == StopReason::Threshold {
        assert!(r.accuracy_history[0].mean > 0.01);
        assert_eq!(r.final_weights, first.weights);
        assert_eq!(r.accuracy_history.len(), 1);
    }
}

#[test]
fn real_clients_agree_across_transports() {
    let det = DetectorConfig::default();
    let data = vec![
        client("client1", BodyColor::Blue, 1),
        client("client2", BodyColor::Red, 2),
    ];
    let mk = |t| FedConfig {
        local_epochs: 2,
        seed: 9,
        ..cfg(2, t)
    };
    let a = run_federation(&mk(Transport::InProcess), &det, data.clone()).unwrap();
    let b = run_federation(&mk(Transport::Tcp), &det, data).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rounds_used, 2);
}

#[test]
fn empty_client_split_is_reported() {
    let mut d = client("c", BodyColor::Blue, 1);
    d.train.clear();
    let err = run_federation(&cfg(1, Transport::InProcess), &DetectorConfig::default(), vec![d]).unwrap_err();
    assert!(matches!(err, FedError::EmptyDataset { split: "train", .. }));
}

struct Failing;

impl ClientLogic for Failing {
    fn client_id(&self) -> &str {
        "failing"
    }

    fn num_samples(&self) -> u64 {
        1
    }

    fn on_broadcast(&mut self, round: u32, global: &fedod::ParamSet) -> fedod::fedcore::Result<ClientUpdate> {
        if round == 1 {
            return Err(FedError::ConfigInvalid("scripted failure".into()));
        }
        Ok(ClientUpdate {
            client_id: "failing".into(),
            round,
            weights: global.clone(),
            num_samples: 1,
            reported_accuracy: None,
        })
    }
}

#[test]
fn client_failure_aborts_the_federation_with_its_cause() {
    for transport in [Transport::InProcess, Transport::Tcp] {
        let clients: Vec<Box<dyn ClientLogic>> = vec![Box::new(Scripted::new("a", 1, 0.0, &[0.1])), Box::new(Failing)];
        let err = run_federation_with(&cfg(5, transport), vector(1, 0.0), clients).unwrap_err();
        assert_eq!(err, FedError::ConfigInvalid("scripted failure".into()));
    }
}

fn tcp_server(
    fed: FedConfig,
    n: usize,
) -> (
    String,
    thread::JoinHandle<fedod::fedcore::Result<fedod::fedcore::FederationResult>>,
) {
    let acc = TcpAcceptor::bind("127.0.0.1:0").unwrap();
    let addr = acc.local_addr().unwrap().to_string();
    let h = thread::spawn(move || {
        let mut hub = acc.accept(n, Duration::from_secs(10))?;
        run_server(&mut hub, &fed, vector(2, 1.0))
    });
    (addr, h)
}

fn update(round: u32, v: f32) -> Message {
    Message::Update(ClientUpdate {
        client_id: "raw".into(),
        round,
        weights: vector(2, v),
        num_samples: 4,
        reported_accuracy: None,
    })
}

#[test]
fn stale_round_is_answered_with_error_and_the_run_continues() {
    let (addr, server) = tcp_server(cfg(1, Transport::Tcp), 1);
    let mut link = TcpLink::connect(&addr, Duration::from_secs(10)).unwrap();
    link.send(&Message::JoinReq {
        client_id: "raw".into(),
        num_samples: 4,
    })
    .unwrap();
    assert!(matches!(link.recv().unwrap(), Message::Broadcast { round: 0, .. }));
    link.send(&update(3, 7.0)).unwrap();
    match link.recv().unwrap() {
        Message::Error { round, message } => {
            assert_eq!(round, 0);
            assert!(message.contains("round 3"), "{message}");
        }
        other => panic!("expected Error, got {other:?}"),
    }
    link.send(&update(0, 7.0)).unwrap();
    let Message::StopNotice { weights, .. } = link.recv().unwrap() else {
        panic!()
    };
    assert_eq!(weights, vector(2, 7.0));
    let r = server.join().unwrap().unwrap();
    assert_eq!(r.final_weights, vector(2, 7.0));
}

#[test]
fn connection_loss_mid_round_aborts_with_round_context() {
    let (addr, server) = tcp_server(cfg(5, Transport::Tcp), 1);
    let mut link = TcpLink::connect(&addr, Duration::from_secs(10)).unwrap();
    link.send(&Message::JoinReq {
        client_id: "raw".into(),
        num_samples: 4,
    })
    .unwrap();
    link.recv().unwrap();
    link.send(&update(0, 2.0)).unwrap();
    assert!(matches!(link.recv().unwrap(), Message::Broadcast { round: 1, .. }));
    drop(link);
    let err = server.join().unwrap().unwrap_err();
    assert!(matches!(err, FedError::TransportFailure { round: 1, .. }), "{err:?}");
}

#[test]
fn three_concurrent_tcp_clients_are_each_counted_once_per_round() {
    let ledger: Ledger = Arc::new(Mutex::new(Vec::new()));
    let specs = [("c1", 2u64, 1.0f32), ("c2", 3, 2.0), ("c3", 5, 3.0)];
    let clients: Vec<Box<dyn ClientLogic>> = specs
        .iter()
        .map(|&(id, n, v)| {
            let mut s = Scripted::new(id, n, v, &[0.5]);
            s.ledger = Some(ledger.clone());
            Box::new(s) as Box<dyn ClientLogic>
        })
        .collect();
    let r = run_federation_with(&cfg(4, Transport::Tcp), vector(16, 0.0), clients).unwrap();
    assert_eq!(r.rounds_used, 4);
    let mut receipts = ledger.lock().unwrap().clone();
    receipts.sort();
    let expected: Vec<(String, u32)> = specs
        .iter()
        .flat_map(|&(id, _, _)| (0..4).map(move |r| (id.to_string(), r)))
        .collect();
    assert_eq!(receipts, expected);
    // independent weighted mean per round: any dropped or doubled update would move it
    for round in 0..4u32 {
        let total: f64 = specs.iter().map(|s| s.1 as f64).sum();
        let mean: f64 = specs
            .iter()
            .map(|s| s.1 as f64 * (s.2 + round as f32) as f64)
            .sum::<f64>()
            / total;
        assert_eq!(r.globals[round as usize + 1], vector(16, mean as f32));
    }
}
