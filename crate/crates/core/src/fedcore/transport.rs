//! Message transports. The server side is a [`ServerHub`]: one inbox fed by
//! every connection plus a sender per connection. Each client holds a
//! [`ClientLink`]. Delivery is in order and exactly once per connection.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::proto::{decode, read_frame, write_message, Message};
use super::{FedError, Result};

/// Overrides the configured TCP bind address.
pub const BIND_ENV: &str = "FEDOD_BIND";

/// The bind address after applying `FEDOD_BIND`.
pub fn resolve_bind(configured: &str) -> String {
    match std::env::var(BIND_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().to_string(),
        _ => configured.to_string(),
    }
}

#[derive(Debug)]
pub enum Inbound {
    Msg(Message),
    /// The connection ended or delivered an unreadable frame.
    Closed(String),
}

pub trait PeerSender: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
}

pub struct ServerHub {
    inbox: Receiver<(usize, Inbound)>,
    peers: Vec<Box<dyn PeerSender>>,
    timeout: Duration,
}

impl ServerHub {
    pub fn num_peers(&self) -> usize {
        self.peers.len()
    }

    /// Next message from any peer. Connection loss and silence longer than
    /// the timeout are transport failures attributed to `round`.
    pub fn recv(&self, round: u32) -> Result<(usize, Message)> {
        let fail = |message: String| FedError::TransportFailure { round, message };
        match self.inbox.recv_timeout(self.timeout) {
            Ok((peer, Inbound::Msg(m))) => Ok((peer, m)),
            Ok((peer, Inbound::Closed(why))) => Err(fail(format!("connection {peer} lost: {why}"))),
            Err(RecvTimeoutError::Timeout) => Err(fail(format!("no message within {:?}", self.timeout))),
            Err(RecvTimeoutError::Disconnected) => Err(fail("all connections closed".into())),
        }
    }

    pub fn send(&mut self, peer: usize, msg: &Message) -> Result<()> {
        self.peers[peer].send(msg)
    }
}

pub trait ClientLink: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
}

struct ChannelPeer {
    tx: Sender<Message>,
}

impl PeerSender for ChannelPeer {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx.send(msg.clone()).map_err(|_| FedError::TransportFailure {
            round: msg.round(),
            message: "in-process client is gone".into(),
        })
    }
}

/// In-process client end: channels carrying messages by value.
pub struct InProcessLink {
    id: usize,
    to_server: Sender<(usize, Inbound)>,
    from_server: Receiver<Message>,
    timeout: Duration,
    round: u32,
}

impl ClientLink for InProcessLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.to_server
            .send((self.id, Inbound::Msg(msg.clone())))
            .map_err(|_| FedError::TransportFailure {
                round: msg.round(),
                message: "server is gone".into(),
            })
    }

    fn recv(&mut self) -> Result<Message> {
        let m = self
            .from_server
            .recv_timeout(self.timeout)
            .map_err(|e| FedError::TransportFailure {
                round: self.round,
                message: match e {
                    RecvTimeoutError::Timeout => format!("no message within {:?}", self.timeout),
                    RecvTimeoutError::Disconnected => "server is gone".into(),
                },
            })?;
        self.round = m.round();
        Ok(m)
    }
}

impl Drop for InProcessLink {
    fn drop(&mut self) {
        let _ = self.to_server.send((self.id, Inbound::Closed("client closed".into())));
    }
}

/// A hub with `n` connected in-process clients.
pub fn in_process(n: usize, timeout: Duration) -> (ServerHub, Vec<InProcessLink>) {
    let (to_server, inbox) = mpsc::channel();
    let mut peers: Vec<Box<dyn PeerSender>> = Vec::with_capacity(n);
    let mut links = Vec::with_capacity(n);
    for id in 0..n {
        let (tx, from_server) = mpsc::channel();
        peers.push(Box::new(ChannelPeer { tx }));
        links.push(InProcessLink {
            id,
            to_server: to_server.clone(),
            from_server,
            timeout,
            round: 0,
        });
    }
    (ServerHub { inbox, peers, timeout }, links)
}

fn io_fail(round: u32, what: &str, e: impl std::fmt::Display) -> FedError {
    FedError::TransportFailure {
        round,
        message: format!("{what}: {e}"),
    }
}

struct TcpPeer {
    writer: BufWriter<TcpStream>,
}

impl PeerSender for TcpPeer {
    fn send(&mut self, msg: &Message) -> Result<()> {
        write_message(&mut self.writer, msg)
    }
}

impl Drop for TcpPeer {
    fn drop(&mut self) {
        // the reader thread holds a clone of the socket; shut both halves so
        // the client sees end of stream
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
    }
}

fn spawn_reader(peer: usize, stream: TcpStream, inbox: Sender<(usize, Inbound)>) {
    thread::spawn(move || {
        let mut r = BufReader::new(stream);
        loop {
            let item = match read_frame(&mut r) {
                Ok(Some(frame)) => match decode(&frame) {
                    Ok(m) => Inbound::Msg(m),
                    Err(e) => Inbound::Closed(e.to_string()),
                },
                Ok(None) => Inbound::Closed("end of stream".into()),
                Err(e) => Inbound::Closed(e.to_string()),
            };
            let last = matches!(item, Inbound::Closed(_));
            if inbox.send((peer, item)).is_err() || last {
                return;
            }
        }
    });
}

/// A bound TCP listener waiting for clients.
pub struct TcpAcceptor {
    listener: TcpListener,
}

impl TcpAcceptor {
    pub fn bind(addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| io_fail(0, &format!("bind {addr}"), e))?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(|e| io_fail(0, "local address", e))
    }

    /// Waits for `n` connections, giving up after `timeout`.
    pub fn accept(self, n: usize, timeout: Duration) -> Result<ServerHub> {
        let deadline = Instant::now() + timeout;
        self.listener
            .set_nonblocking(true)
            .map_err(|e| io_fail(0, "listener", e))?;
        let (to_server, inbox) = mpsc::channel();
        let mut peers: Vec<Box<dyn PeerSender>> = Vec::with_capacity(n);
        while peers.len() < n {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false).map_err(|e| io_fail(0, "socket", e))?;
                    stream.set_nodelay(true).map_err(|e| io_fail(0, "socket", e))?;
                    let reader = stream.try_clone().map_err(|e| io_fail(0, "socket", e))?;
                    spawn_reader(peers.len(), reader, to_server.clone());
                    peers.push(Box::new(TcpPeer {
                        writer: BufWriter::new(stream),
                    }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(io_fail(
                            0,
                            "accept",
                            format!("{} of {n} clients connected before the timeout", peers.len()),
                        ));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(io_fail(0, "accept", e)),
            }
        }
        Ok(ServerHub { inbox, peers, timeout })
    }
}

/// Client end of a TCP connection.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    round: u32,
}

impl TcpLink {
    /// Connects, retrying until `timeout` while the server comes up.
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let deadline = Instant::now() + timeout;
        let target: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| io_fail(0, &format!("resolve {addr}"), e))?
            .collect();
        let stream = loop {
            match TcpStream::connect(&target[..]) {
                Ok(s) => break s,
                Err(e) if Instant::now() >= deadline => return Err(io_fail(0, &format!("connect {addr}"), e)),
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        };
        let setup = |s: &TcpStream| -> std::io::Result<TcpStream> {
            s.set_nodelay(true)?;
            s.set_read_timeout(Some(timeout))?;
            s.try_clone()
        };
        let reader = setup(&stream).map_err(|e| io_fail(0, "socket", e))?;
        Ok(Self {
            reader: BufReader::new(reader),
            writer: BufWriter::new(stream),
            round: 0,
        })
    }
}

impl ClientLink for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        write_message(&mut self.writer, msg)
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = match read_frame(&mut self.reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Err(io_fail(self.round, "receive", "server closed the connection")),
            Err(e) => return Err(io_fail(self.round, "receive", e)),
        };
        let m = decode(&frame)?;
        self.round = m.round();
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedcore::ClientUpdate;
    use crate::params::{ParamSet, Tensor};

    fn weights() -> ParamSet {
        let vals = vec![f32::from_bits(1), -0.0, 1e-38, f32::MAX, 0.1, -7.25];
        ParamSet::new(vec![Tensor::new("w", vec![2, 3], vals).unwrap()]).unwrap()
    }

    #[test]
    fn tcp_broadcast_round_trips_bit_exactly() {
        let acc = TcpAcceptor::bind("127.0.0.1:0").unwrap();
        let addr = acc.local_addr().unwrap().to_string();
        let t = Duration::from_secs(10);
        let client = thread::spawn(move || {
            let mut link = TcpLink::connect(&addr, t).unwrap();
            let m = link.recv().unwrap();
            link.send(&m).unwrap();
            m
        });
        let mut hub = acc.accept(1, t).unwrap();
        let sent = Message::Broadcast {
            round: 7,
            weights: weights(),
        };
        hub.send(0, &sent).unwrap();
        let (peer, echoed) = hub.recv(7).unwrap();
        assert_eq!(peer, 0);
        let got = client.join().unwrap();
        for m in [got, echoed] {
            let Message::Broadcast { round, weights: w } = m else {
                panic!()
            };
            assert_eq!(round, 7);
            let bits: Vec<u32> = w.to_flat().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = weights().to_flat().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, want);
        }
    }

    #[test]
    fn lost_tcp_client_is_a_transport_failure() {
        let acc = TcpAcceptor::bind("127.0.0.1:0").unwrap();
        let addr = acc.local_addr().unwrap().to_string();
        let t = Duration::from_secs(10);
        let client = thread::spawn(move || drop(TcpLink::connect(&addr, t).unwrap()));
        let hub = acc.accept(1, t).unwrap();
        client.join().unwrap();
        assert!(matches!(hub.recv(3), Err(FedError::TransportFailure { round: 3, .. })));
    }

    #[test]
    fn in_process_delivers_in_order_and_reports_drops() {
        let (mut hub, mut links) = in_process(2, Duration::from_secs(5));
        for r in 0..3 {
            hub.send(
                1,
                &Message::Error {
                    round: r,
                    message: String::new(),
                },
            )
            .unwrap();
        }
        for r in 0..3 {
            assert_eq!(links[1].recv().unwrap().round(), r);
        }
        let u = ClientUpdate {
            client_id: "a".into(),
            round: 0,
            weights: weights(),
            num_samples: 1,
            reported_accuracy: None,
        };
        links[0].send(&Message::Update(u.clone())).unwrap();
        assert_eq!(hub.recv(0).unwrap(), (0, Message::Update(u)));
        links.remove(0);
        assert!(matches!(hub.recv(0), Err(FedError::TransportFailure { .. })));
    }

    #[test]
    fn accept_times_out() {
        let acc = TcpAcceptor::bind("127.0.0.1:0").unwrap();
        assert!(acc.accept(1, Duration::from_millis(50)).is_err());
    }
}
