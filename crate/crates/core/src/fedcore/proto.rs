//! Protocol messages and their "FDP1" framing.
//!
//! ```text
//! "FDP1"        4 bytes magic
//! u8            message type: 1 JoinReq, 2 Broadcast, 3 Update, 4 StopNotice, 5 Error
//! u32           round
//! u32           payload length
//! payload
//! u32           CRC-32 (IEEE) over every byte after the magic and before the CRC
//! ```
//!
//! Payloads, little-endian throughout:
//!
//! ```text
//! JoinReq     u16 id length, id bytes, u64 num_samples
//! Broadcast   FDW1 weights
//! Update      u16 id length, id bytes, u64 num_samples,
//!             u8 has_accuracy, f64 accuracy (0 when absent), FDW1 weights
//! StopNotice  FDW1 final weights
//! Error       UTF-8 message
//! ```

use std::io::{Read, Write};

use super::{ClientUpdate, FedError, Result};
use crate::params::{deserialize, serialize, ParamSet};

pub const FDP_MAGIC: &[u8; 4] = b"FDP1";
/// Frames announcing a larger payload are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    JoinReq { client_id: String, num_samples: u64 },
    Broadcast { round: u32, weights: ParamSet },
    Update(ClientUpdate),
    StopNotice { round: u32, weights: ParamSet },
    Error { round: u32, message: String },
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Message::JoinReq { .. } => 1,
            Message::Broadcast { .. } => 2,
            Message::Update(_) => 3,
            Message::StopNotice { .. } => 4,
            Message::Error { .. } => 5,
        }
    }

    pub fn round(&self) -> u32 {
        match self {
            Message::JoinReq { .. } => 0,
            Message::Broadcast { round, .. } | Message::StopNotice { round, .. } | Message::Error { round, .. } => {
                *round
            }
            Message::Update(u) => u.round,
        }
    }
}

fn bad(msg: impl Into<String>) -> FedError {
    FedError::ProtocolViolation(format!("malformed frame: {}", msg.into()))
}

fn put_id(out: &mut Vec<u8>, id: &str) -> Result<()> {
    let len = u16::try_from(id.len()).map_err(|_| bad("client id longer than 65535 bytes"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    Ok(())
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    match msg {
        Message::JoinReq { client_id, num_samples } => {
            put_id(&mut payload, client_id)?;
            payload.extend_from_slice(&num_samples.to_le_bytes());
        }
        Message::Broadcast { weights, .. } | Message::StopNotice { weights, .. } => {
            payload = serialize(weights);
        }
        Message::Update(u) => {
            put_id(&mut payload, &u.client_id)?;
            payload.extend_from_slice(&u.num_samples.to_le_bytes());
            payload.push(u.reported_accuracy.is_some() as u8);
            payload.extend_from_slice(&u.reported_accuracy.unwrap_or(0.0).to_le_bytes());
            payload.extend_from_slice(&serialize(&u.weights));
        }
        Message::Error { message, .. } => payload.extend_from_slice(message.as_bytes()),
    }
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_PAYLOAD)
        .ok_or_else(|| bad(format!("payload of {} bytes exceeds the frame limit", payload.len())))?;
    let mut out = Vec::with_capacity(payload.len() + 17);
    out.extend_from_slice(FDP_MAGIC);
    out.push(msg.type_code());
    out.extend_from_slice(&msg.round().to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(bad("payload truncated"));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn id(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| bad("client id is not UTF-8"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(bad("trailing payload bytes"));
        }
        Ok(())
    }
}

fn decode_payload(kind: u8, round: u32, payload: &[u8]) -> Result<Message> {
    let mut r = Reader { buf: payload, pos: 0 };
    let weights = |b: &[u8]| deserialize(b).map_err(|e| bad(e.to_string()));
    let msg = match kind {
        1 => Message::JoinReq {
            client_id: r.id()?,
            num_samples: r.u64()?,
        },
        2 => Message::Broadcast {
            round,
            weights: weights(r.rest())?,
        },
        3 => {
            let client_id = r.id()?;
            let num_samples = r.u64()?;
            let has = r.take(1)?[0];
            let acc = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let reported_accuracy = match has {
                0 => None,
                1 => Some(acc),
                v => return Err(bad(format!("accuracy flag {v}"))),
            };
            Message::Update(ClientUpdate {
                client_id,
                round,
                weights: weights(r.rest())?,
                num_samples,
                reported_accuracy,
            })
        }
        4 => Message::StopNotice {
            round,
            weights: weights(r.rest())?,
        },
        5 => Message::Error {
            round,
            message: String::from_utf8_lossy(r.rest()).into_owned(),
        },
        t => return Err(bad(format!("unknown message type {t}"))),
    };
    r.done()?;
    Ok(msg)
}

pub fn decode(frame: &[u8]) -> Result<Message> {
    if frame.len() < 17 {
        return Err(bad(format!("{} bytes is shorter than a frame header", frame.len())));
    }
    if &frame[..4] != FDP_MAGIC {
        return Err(bad("bad magic"));
    }
    let len = u32::from_le_bytes(frame[9..13].try_into().unwrap()) as usize;
    if frame.len() != 17 + len {
        return Err(bad(format!(
            "length field {len} disagrees with frame size {}",
            frame.len()
        )));
    }
    let (body, crc) = frame.split_at(frame.len() - 4);
    if crc32fast::hash(&body[4..]) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let round = u32::from_le_bytes(frame[5..9].try_into().unwrap());
    decode_payload(frame[4], round, &frame[13..13 + len])
}

/// Reads exactly one frame. `Ok(None)` on a clean end of stream before the
/// first byte.
pub fn read_frame(r: &mut impl Read) -> std::io::Result<Option<Vec<u8>>> {
    let mut head = [0u8; 13];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(head[9..13].try_into().unwrap());
    if &head[..4] != FDP_MAGIC || len > MAX_PAYLOAD {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "bad frame header"));
    }
    let mut frame = head.to_vec();
    frame.resize(13 + len as usize + 4, 0);
    r.read_exact(&mut frame[13..])?;
    Ok(Some(frame))
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<()> {
    let frame = encode(msg)?;
    w.write_all(&frame)
        .and_then(|_| w.flush())
        .map_err(|e| FedError::TransportFailure {
            round: msg.round(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Tensor;

    fn weights() -> ParamSet {
        ParamSet::new(vec![Tensor::new(
            "w",
            vec![2, 2],
            vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5],
        )
        .unwrap()])
        .unwrap()
    }

    fn samples() -> Vec<Message> {
        vec![
            Message::JoinReq {
                client_id: "client1".into(),
                num_samples: 140,
            },
            Message::Broadcast {
                round: 3,
                weights: weights(),
            },
            Message::Update(ClientUpdate {
                client_id: "c2".into(),
                round: 4,
                weights: weights(),
                num_samples: 7,
                reported_accuracy: Some(0.123_456_789_012_345),
            }),
            Message::Update(ClientUpdate {
                client_id: "c2".into(),
                round: 0,
                weights: weights(),
                num_samples: 7,
                reported_accuracy: None,
            }),
            Message::StopNotice {
                round: 9,
                weights: weights(),
            },
            Message::Error {
                round: 2,
                message: "stale round".into(),
            },
        ]
    }

    #[test]
    fn round_trips() {
        for m in samples() {
            let frame = encode(&m).unwrap();
            assert_eq!(&frame[..4], b"FDP1");
            assert_eq!(frame[4], m.type_code());
            assert_eq!(decode(&frame).unwrap(), m);
            let mut cursor = std::io::Cursor::new(frame.clone());
            assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), frame);
            assert!(read_frame(&mut cursor).unwrap().is_none());
        }
    }

    #[test]
    fn header_layout() {
        let frame = encode(&Message::Error {
            round: 0x0102_0304,
            message: "x".into(),
        })
        .unwrap();
        assert_eq!(frame[4], 5);
        assert_eq!(&frame[5..9], &[4, 3, 2, 1]);
        assert_eq!(&frame[9..13], &[1, 0, 0, 0]);
        assert_eq!(frame[13], b'x');
        assert_eq!(frame.len(), 18);
    }

    #[test]
    fn every_byte_flip_is_rejected() {
        for m in samples() {
            let frame = encode(&m).unwrap();
            for i in 0..frame.len() {
                let mut f = frame.clone();
                f[i] ^= 0x20;
                assert!(decode(&f).is_err(), "flip at {i} accepted for {m:?}");
            }
            assert!(decode(&frame[..frame.len() - 1]).is_err());
        }
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let frame = encode(&samples()[1]).unwrap();
        let mut cursor = std::io::Cursor::new(frame[..20].to_vec());
        assert!(read_frame(&mut cursor).is_err());
    }
}
