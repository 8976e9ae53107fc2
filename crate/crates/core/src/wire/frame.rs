//! Frame codec for the serial link.
//!
//! Every frame is `A5 5A | version u8 | msg_type u8 | payload_len u32 LE |
//! payload | crc u32 LE`, where the CRC-32 (IEEE) covers version through
//! payload. The decoder is total: any byte sequence either yields frames,
//! asks for more bytes, or skips garbage — it never panics and never reads
//! past the buffer.

use crate::transform::WINDOW_LEN;
use std::fmt;

pub const FRAME_MAGIC: [u8; 2] = [0xA5, 0x5A];
pub const WIRE_VERSION: u8 = 1;

/// Frame header bytes before the payload (magic + version + type + length).
pub const HEADER_LEN: usize = 8;
/// Largest payload any defined message uses (window data), plus slack to
/// reject absurd lengths without buffering them.
pub const MAX_PAYLOAD: usize = WINDOW_DATA_PAYLOAD + 64;

pub const MSG_WINDOW_DATA: u8 = 1;
pub const MSG_VERDICT: u8 = 2;
pub const MSG_HEARTBEAT: u8 = 3;
pub const MSG_SHUTDOWN: u8 = 4;

/// seq + sample interval + three 1024-value f32 channels.
pub const WINDOW_DATA_PAYLOAD: usize = 8 + 3 * WINDOW_LEN * 4;

/// Pre-normalization window channels: raw, integral, derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowData {
    pub seq: u32,
    pub sample_interval_us: u32,
    pub channels: [Vec<f32>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Window(WindowData),
    Verdict {
        seq: u32,
        label: u8,
        probability: f32,
    },
    Heartbeat {
        seq: u32,
    },
    Shutdown {
        seq: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameError {
    UnsupportedVersion { got: u8 },
    PayloadTooLong { got: u32 },
    CrcMismatch,
    UnknownType { got: u8 },
    WrongLength { msg_type: u8, got: u32 },
    BadLabel { got: u8 },
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::UnsupportedVersion { got } => write!(f, "unsupported frame version {got}"),
            FrameError::PayloadTooLong { got } => write!(f, "payload length {got} exceeds limit"),
            FrameError::CrcMismatch => write!(f, "frame checksum mismatch"),
            FrameError::UnknownType { got } => write!(f, "unknown message type {got}"),
            FrameError::WrongLength { msg_type, got } => {
                write!(f, "message type {msg_type} with invalid payload length {got}")
            }
            FrameError::BadLabel { got } => write!(f, "verdict label must be 0 or 1, got {got}"),
        }
    }
}

impl std::error::Error for FrameError {}

fn payload_of(msg: &Message) -> Vec<u8> {
    match msg {
        Message::Window(w) => {
            let mut p = Vec::with_capacity(WINDOW_DATA_PAYLOAD);
            p.extend_from_slice(&w.seq.to_le_bytes());
            p.extend_from_slice(&w.sample_interval_us.to_le_bytes());
            for channel in &w.channels {
                debug_assert_eq!(channel.len(), WINDOW_LEN);
                for &v in channel {
                    p.extend_from_slice(&v.to_le_bytes());
                }
            }
            p
        }
        Message::Verdict {
            seq,
            label,
            probability,
        } => {
            let mut p = Vec::with_capacity(9);
            p.extend_from_slice(&seq.to_le_bytes());
            p.push(*label);
            p.extend_from_slice(&probability.to_le_bytes());
            p
        }
        Message::Heartbeat { seq } | Message::Shutdown { seq } => seq.to_le_bytes().to_vec(),
    }
}

fn type_of(msg: &Message) -> u8 {
    match msg {
        Message::Window(_) => MSG_WINDOW_DATA,
        Message::Verdict { .. } => MSG_VERDICT,
        Message::Heartbeat { .. } => MSG_HEARTBEAT,
        Message::Shutdown { .. } => MSG_SHUTDOWN,
    }
}

/// Serializes one message as a complete frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let payload = payload_of(msg);
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    frame.extend_from_slice(&FRAME_MAGIC);
    frame.push(WIRE_VERSION);
    frame.push(type_of(msg));
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    let crc = crc32fast::hash(&frame[2..]);
    frame.extend_from_slice(&crc.to_le_bytes());
    frame
}

/// One decoding step against the front of a buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeStep {
    /// A complete valid frame; `consumed` bytes can be dropped.
    Frame { msg: Message, consumed: usize },
    /// The buffer may hold the start of a frame but not all of it.
    NeedMore,
    /// `discard` leading bytes cannot start a frame.
    Garbage { discard: usize },
    /// A frame candidate failed validation; skip `discard` bytes (past the
    /// bad magic, or the whole frame when it was CRC-valid) and rescan.
    Bad { error: FrameError, discard: usize },
}

fn parse_payload(msg_type: u8, payload: &[u8]) -> Result<Message, FrameError> {
    let u32_at = |at: usize| u32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
    match msg_type {
        MSG_WINDOW_DATA => {
            if payload.len() != WINDOW_DATA_PAYLOAD {
                return Err(FrameError::WrongLength {
                    msg_type,
                    got: payload.len() as u32,
                });
            }
            let seq = u32_at(0);
            let sample_interval_us = u32_at(4);
            let mut channels: [Vec<f32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            let mut pos = 8;
            for channel in &mut channels {
                channel.reserve(WINDOW_LEN);
                for _ in 0..WINDOW_LEN {
                    channel.push(f32::from_le_bytes(payload[pos..pos + 4].try_into().unwrap()));
                    pos += 4;
                }
            }
            Ok(Message::Window(WindowData {
                seq,
                sample_interval_us,
                channels,
            }))
        }
        MSG_VERDICT => {
            if payload.len() != 9 {
                return Err(FrameError::WrongLength {
                    msg_type,
                    got: payload.len() as u32,
                });
            }
            let label = payload[4];
            if label > 1 {
                return Err(FrameError::BadLabel { got: label });
            }
            Ok(Message::Verdict {
                seq: u32_at(0),
                label,
                probability: f32::from_le_bytes(payload[5..9].try_into().unwrap()),
            })
        }
        MSG_HEARTBEAT | MSG_SHUTDOWN => {
            if payload.len() != 4 {
                return Err(FrameError::WrongLength {
                    msg_type,
                    got: payload.len() as u32,
                });
            }
            let seq = u32_at(0);
            Ok(if msg_type == MSG_HEARTBEAT {
                Message::Heartbeat { seq }
            } else {
                Message::Shutdown { seq }
            })
        }
        other => Err(FrameError::UnknownType { got: other }),
    }
}

/// Examines the front of `buf` for one frame. Consumes nothing itself; the
/// caller drains bytes according to the returned step.
pub fn decode_step(buf: &[u8]) -> DecodeStep {
    // Resynchronize: find the first magic pair.
    let mut start = None;
    for p in 0..buf.len() {
        if buf[p] == FRAME_MAGIC[0] {
            if p + 1 >= buf.len() {
                // A lone leading magic byte at the very end: wait for more.
                return if p == 0 {
                    DecodeStep::NeedMore
                } else {
                    DecodeStep::Garbage { discard: p }
                };
            }
            if buf[p + 1] == FRAME_MAGIC[1] {
                start = Some(p);
                break;
            }
        }
    }
    let Some(start) = start else {
        return if buf.is_empty() {
            DecodeStep::NeedMore
        } else {
            DecodeStep::Garbage { discard: buf.len() }
        };
    };
    if start > 0 {
        return DecodeStep::Garbage { discard: start };
    }

    if buf.len() < HEADER_LEN {
        return DecodeStep::NeedMore;
    }
    let version = buf[2];
    if version != WIRE_VERSION {
        return DecodeStep::Bad {
            error: FrameError::UnsupportedVersion { got: version },
            discard: 2,
        };
    }
    let msg_type = buf[3];
    let payload_len = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if payload_len as usize > MAX_PAYLOAD {
        return DecodeStep::Bad {
            error: FrameError::PayloadTooLong { got: payload_len },
            discard: 2,
        };
    }
    let total = HEADER_LEN + payload_len as usize + 4;
    if buf.len() < total {
        return DecodeStep::NeedMore;
    }
    let body_end = HEADER_LEN + payload_len as usize;
    let stored = u32::from_le_bytes(buf[body_end..total].try_into().unwrap());
    let computed = crc32fast::hash(&buf[2..body_end]);
    if stored != computed {
        return DecodeStep::Bad {
            error: FrameError::CrcMismatch,
            discard: 2,
        };
    }
    match parse_payload(msg_type, &buf[HEADER_LEN..body_end]) {
        Ok(msg) => DecodeStep::Frame {
            msg,
            consumed: total,
        },
        // CRC-valid but semantically wrong: the frame is well-delimited, so
        // skip it whole and keep the connection alive.
        Err(error) => DecodeStep::Bad {
            error,
            discard: total,
        },
    }
}

/// Incremental decoder over a byte stream, with CRC-failure accounting for
/// the session abort policy.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    consecutive_crc_failures: u32,
}

/// What [`Decoder::next_event`] surfaced.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeEvent {
    Message(Message),
    Corrupt(FrameError),
}

impl Decoder {
    pub fn new() -> Self {
        Decoder::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// CRC failures since the last successfully decoded frame.
    pub fn consecutive_crc_failures(&self) -> u32 {
        self.consecutive_crc_failures
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Pulls the next event out of the buffer; `None` means more bytes are
    /// needed.
    pub fn next_event(&mut self) -> Option<DecodeEvent> {
        loop {
            match decode_step(&self.buf) {
                DecodeStep::Frame { msg, consumed } => {
                    self.buf.drain(..consumed);
                    self.consecutive_crc_failures = 0;
                    return Some(DecodeEvent::Message(msg));
                }
                DecodeStep::NeedMore => return None,
                DecodeStep::Garbage { discard } => {
                    self.buf.drain(..discard);
                }
                DecodeStep::Bad { error, discard } => {
                    self.buf.drain(..discard);
                    if error == FrameError::CrcMismatch {
                        self.consecutive_crc_failures += 1;
                    }
                    return Some(DecodeEvent::Corrupt(error));
                }
            }
        }
    }
}
