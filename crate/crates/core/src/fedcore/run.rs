use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use log::{debug, info};

use super::client::{ClientData, ClientLogic, LocalClient};
use super::proto::Message;
use super::server::{server_step, Emitted, Event, Phase, RoundRecord, RoundState, StopReason};
use super::transport::{in_process, resolve_bind, ClientLink, ServerHub, TcpAcceptor, TcpLink};
use super::{FedConfig, FedError, Result, Transport};
use crate::params::{ParamSet, Rng};
use crate::tinydet::{init_params, DetectorConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FederationResult {
    pub final_weights: ParamSet,
    pub accuracy_history: Vec<RoundRecord>,
    /// Number of aggregations performed.
    pub rounds_used: u32,
    /// `G_0 ..= G_rounds_used`.
    pub globals: Vec<ParamSet>,
    pub stop_reason: StopReason,
}

fn send_all(hub: &mut ServerHub, order: &[usize], msg: &Message) -> Result<()> {
    for &peer in order {
        hub.send(peer, msg)?;
    }
    Ok(())
}

fn reject(hub: &mut ServerHub, peer: usize, round: u32, message: String) -> Result<()> {
    debug!("rejecting message from connection {peer}: {message}");
    hub.send(peer, &Message::Error { round, message })
}

/// Serves one federation over `hub`: collects a join from every connection,
/// then runs rounds until the stop rule fires. Invalid updates are answered
/// with `Error` and otherwise ignored; a lost connection aborts the run.
pub fn run_server(hub: &mut ServerHub, cfg: &FedConfig, init: ParamSet) -> Result<FederationResult> {
    cfg.validate()?;
    let n = hub.num_peers();
    let mut ids: Vec<Option<String>> = vec![None; n];
    let mut clients = BTreeMap::new();
    while clients.len() < n {
        let (peer, msg) = hub.recv(0)?;
        match msg {
            Message::JoinReq { client_id, num_samples } if ids[peer].is_none() => {
                if clients.insert(client_id.clone(), num_samples).is_some() {
                    return Err(FedError::ProtocolViolation(format!(
                        "client id {client_id} joined twice"
                    )));
                }
                ids[peer] = Some(client_id);
            }
            other => reject(
                hub,
                peer,
                0,
                format!("expected a single JoinReq, got type {}", other.type_code()),
            )?,
        }
    }
    let ids: Vec<String> = ids.into_iter().map(Option::unwrap).collect();
    // broadcast in client-id order regardless of connection order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    info!("{n} clients joined: {:?}", clients);

    let mut state = RoundState::new(cfg, init, clients)?;
    let mut pending = vec![state.broadcast()];
    loop {
        for e in pending.drain(..) {
            match e {
                Emitted::Broadcast { round, weights } => {
                    send_all(hub, &order, &Message::Broadcast { round, weights })?;
                    state = server_step(&state, Event::BroadcastComplete)?.0;
                }
                Emitted::StopNotice { round, weights } => {
                    send_all(hub, &order, &Message::StopNotice { round, weights })?;
                }
            }
        }
        if state.phase == Phase::Done {
            break;
        }
        let round = state.round_index;
        let (peer, msg) = hub.recv(round)?;
        let update = match msg {
            Message::Update(u) if u.client_id == ids[peer] => u,
            Message::Update(u) => {
                reject(
                    hub,
                    peer,
                    round,
                    format!("connection of {} sent an update as {}", ids[peer], u.client_id),
                )?;
                continue;
            }
            other => {
                reject(
                    hub,
                    peer,
                    round,
                    format!("unexpected message type {} from {}", other.type_code(), ids[peer]),
                )?;
                continue;
            }
        };
        match server_step(&state, Event::Update(update)) {
            Ok((s, _)) => state = s,
            Err(FedError::ProtocolViolation(m)) => {
                reject(hub, peer, round, m)?;
                continue;
            }
            Err(e) => return Err(e),
        }
        if state.phase == Phase::CheckingStop {
            let (s, out) = server_step(&state, Event::StopDecision)?;
            state = s;
            if let Some(rec) = state.accuracy_history.last().filter(|r| r.round == round) {
                info!("round {round}: mean accuracy {:.4}", rec.mean);
            } else {
                info!("round {round}: aggregated");
            }
            pending = out;
        }
    }
    Ok(FederationResult {
        rounds_used: state.rounds_used(),
        final_weights: state.global_weights,
        accuracy_history: state.accuracy_history,
        globals: state.globals,
        stop_reason: state.stop_reason.expect("Done implies a stop reason"),
    })
}

/// Runs one participant until the server's `StopNotice`, returning the final
/// global weights.
pub fn run_client(link: &mut dyn ClientLink, logic: &mut dyn ClientLogic) -> Result<ParamSet> {
    link.send(&Message::JoinReq {
        client_id: logic.client_id().to_string(),
        num_samples: logic.num_samples(),
    })?;
    loop {
        match link.recv()? {
            Message::Broadcast { round, weights } => {
                let u = logic.on_broadcast(round, &weights)?;
                link.send(&Message::Update(u))?;
            }
            Message::StopNotice { weights, .. } => return Ok(weights),
            Message::Error { round, message } => {
                return Err(FedError::ProtocolViolation(format!(
                    "server rejected round {round} message: {message}"
                )))
            }
            other => {
                return Err(FedError::ProtocolViolation(format!(
                    "client received message type {}",
                    other.type_code()
                )))
            }
        }
    }
}

/// Prefers a client's own failure over the transport failure it caused on
/// the server.
fn settle(server: Result<FederationResult>, clients: Vec<Result<ParamSet>>) -> Result<FederationResult> {
    match server {
        Ok(r) => {
            for c in clients {
                let w = c?;
                if w != r.final_weights {
                    return Err(FedError::ProtocolViolation(
                        "client final weights differ from the server's".into(),
                    ));
                }
            }
            Ok(r)
        }
        Err(e) => Err(clients
            .into_iter()
            .filter_map(|c| c.err())
            .find(|c| !matches!(c, FedError::TransportFailure { .. }))
            .unwrap_or(e)),
    }
}

/// Runs the server on this thread and every client on its own thread over
/// the configured transport.
pub fn run_federation_with(
    cfg: &FedConfig,
    init: ParamSet,
    clients: Vec<Box<dyn ClientLogic>>,
) -> Result<FederationResult> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(FedError::ConfigInvalid("no clients".into()));
    }
    let timeout = Duration::from_secs(cfg.timeout_secs);
    let n = clients.len();
    match cfg.transport {
        Transport::InProcess => {
            let (mut hub, links) = in_process(n, timeout);
            thread::scope(|sc| {
                let handles: Vec<_> = clients
                    .into_iter()
                    .zip(links)
                    .map(|(mut c, mut l)| sc.spawn(move || run_client(&mut l, c.as_mut())))
                    .collect();
                let server = run_server(&mut hub, cfg, init);
                drop(hub);
                let results = handles
                    .into_iter()
                    .map(|h| h.join().expect("client thread panicked"))
                    .collect();
                settle(server, results)
            })
        }
        Transport::Tcp => {
            let acceptor = TcpAcceptor::bind(&resolve_bind(&cfg.bind))?;
            let addr = acceptor.local_addr()?.to_string();
            info!("listening on {addr}");
            thread::scope(|sc| {
                let handles: Vec<_> = clients
                    .into_iter()
                    .map(|mut c| {
                        let addr = addr.clone();
                        sc.spawn(move || {
                            let mut l = TcpLink::connect(&addr, timeout)?;
                            run_client(&mut l, c.as_mut())
                        })
                    })
                    .collect();
                let server = acceptor
                    .accept(n, timeout)
                    .and_then(|mut hub| run_server(&mut hub, cfg, init));
                let results = handles
                    .into_iter()
                    .map(|h| h.join().expect("client thread panicked"))
                    .collect();
                settle(server, results)
            })
        }
    }
}

/// Federates detectors over `data`, one client per entry. The shared
/// initialization is drawn from `cfg.seed`.
pub fn run_federation(cfg: &FedConfig, det: &DetectorConfig, data: Vec<ClientData>) -> Result<FederationResult> {
    det.validate()?;
    for d in &data {
        for (split, set) in [("train", &d.train), ("test", &d.test)] {
            if set.is_empty() {
                return Err(FedError::EmptyDataset {
                    client: d.client_id.clone(),
                    split,
                });
            }
        }
    }
    let init = init_params(det, &mut Rng::new(cfg.seed))?;
    let clients = data
        .into_iter()
        .map(|d| Box::new(LocalClient::new(d, det.clone(), cfg.local_epochs, cfg.seed)) as Box<dyn ClientLogic>)
        .collect();
    run_federation_with(cfg, init, clients)
}
