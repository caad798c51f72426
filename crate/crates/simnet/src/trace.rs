//! Event traces: one canonical-encoded event per line, hex.
//!
//! A trace is the complete observable record of a run. Two runs of the same
//! script under the same seed must produce byte-identical traces.

use std::fmt::Write as _;

use ops_core::codec::{CodecError, Decode, Encode, Reader, Writer};
use thiserror::Error;

/// Endpoint name used for the server in frame events.
pub const SERVER: &str = "server";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Delivered = 0,
    Dropped = 1,
    Tampered = 2,
    Held = 3,
}

impl Fate {
    fn from_tag(tag: u8) -> Option<Self> {
        [Fate::Delivered, Fate::Dropped, Fate::Tampered, Fate::Held]
            .get(usize::from(tag))
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Step {
        index: u32,
        text: String,
    },
    /// `kind` is the wire kind tag of the carried message, or 0 for a
    /// server abort.
    Frame {
        seq: u64,
        from: String,
        to: String,
        kind: u8,
        fate: Fate,
        bytes: Vec<u8>,
    },
    Outcome {
        index: u32,
        ok: bool,
        text: String,
    },
    Audit {
        index: u32,
        minted: u64,
        online: u64,
        offline: u64,
        inflight: u64,
        destroyed: u64,
    },
    Violation {
        index: u32,
        text: String,
    },
    Warning {
        index: u32,
        text: String,
    },
}

impl Encode for TraceEvent {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        match self {
            TraceEvent::Step { index, text } => {
                w.u8(1).u32(*index).bytes(text.as_bytes())?;
            }
            TraceEvent::Frame {
                seq,
                from,
                to,
                kind,
                fate,
                bytes,
            } => {
                w.u8(2)
                    .u64(*seq)
                    .bytes(from.as_bytes())?
                    .bytes(to.as_bytes())?
                    .u8(*kind)
                    .u8(*fate as u8)
                    .bytes(bytes)?;
            }
            TraceEvent::Outcome { index, ok, text } => {
                w.u8(3).u32(*index).bool(*ok).bytes(text.as_bytes())?;
            }
            TraceEvent::Audit {
                index,
                minted,
                online,
                offline,
                inflight,
                destroyed,
            } => {
                w.u8(4)
                    .u32(*index)
                    .u64(*minted)
                    .u64(*online)
                    .u64(*offline)
                    .u64(*inflight)
                    .u64(*destroyed);
            }
            TraceEvent::Violation { index, text } => {
                w.u8(5).u32(*index).bytes(text.as_bytes())?;
            }
            TraceEvent::Warning { index, text } => {
                w.u8(6).u32(*index).bytes(text.as_bytes())?;
            }
        }
        Ok(())
    }
}

impl Decode for TraceEvent {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(match r.u8()? {
            1 => TraceEvent::Step {
                index: r.u32()?,
                text: r.string()?,
            },
            2 => TraceEvent::Frame {
                seq: r.u64()?,
                from: r.string()?,
                to: r.string()?,
                kind: r.u8()?,
                fate: Fate::from_tag(r.u8()?).ok_or(CodecError::Malformed("unknown frame fate"))?,
                bytes: r.bytes()?.to_vec(),
            },
            3 => TraceEvent::Outcome {
                index: r.u32()?,
                ok: r.bool()?,
                text: r.string()?,
            },
            4 => TraceEvent::Audit {
                index: r.u32()?,
                minted: r.u64()?,
                online: r.u64()?,
                offline: r.u64()?,
                inflight: r.u64()?,
                destroyed: r.u64()?,
            },
            5 => TraceEvent::Violation {
                index: r.u32()?,
                text: r.string()?,
            },
            6 => TraceEvent::Warning {
                index: r.u32()?,
                text: r.string()?,
            },
            _ => return Err(CodecError::Malformed("unknown trace event")),
        })
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: not hex")]
    Hex { line: usize },
    #[error("line {line}: {source}")]
    Decode { line: usize, source: CodecError },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let bytes = e.encode().expect("trace events encode");
            let _ = writeln!(out, "{}", hex::encode(bytes));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bytes = hex::decode(line).map_err(|_| TraceError::Hex { line: i + 1 })?;
            let event = TraceEvent::decode(&bytes).map_err(|source| TraceError::Decode {
                line: i + 1,
                source,
            })?;
            events.push(event);
        }
        Ok(Self { events })
    }

    pub fn violations(&self) -> impl Iterator<Item = (u32, &str)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Violation { index, text } => Some((*index, text.as_str())),
            _ => None,
        })
    }

    pub fn warnings(&self) -> impl Iterator<Item = (u32, &str)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Warning { index, text } => Some((*index, text.as_str())),
            _ => None,
        })
    }

    pub fn frames(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Frame { .. }))
    }
}

/// Steps whose frames must never touch the server.
pub fn is_offline_step(text: &str) -> bool {
    text.starts_with("pay ") || text.starts_with("deliver ")
}

/// Independent re-check of a recorded trace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceCheck {
    pub steps: usize,
    pub audits: usize,
    pub offline_steps: usize,
    /// Audit events whose equation does not balance.
    pub unbalanced: Vec<u32>,
    /// Offline steps during which a frame touched the server.
    pub server_contact: Vec<u32>,
    pub recorded_violations: usize,
}

impl TraceCheck {
    pub fn is_clean(&self) -> bool {
        self.unbalanced.is_empty()
            && self.server_contact.is_empty()
            && self.recorded_violations == 0
    }
}

pub fn check_trace(trace: &Trace) -> TraceCheck {
    let mut c = TraceCheck::default();
    let mut open_offline: Option<u32> = None;
    for e in &trace.events {
        match e {
            TraceEvent::Step { index, text } => {
                c.steps += 1;
                open_offline = is_offline_step(text).then_some(*index);
                c.offline_steps += usize::from(open_offline.is_some());
            }
            TraceEvent::Frame { from, to, .. } => {
                if let Some(index) = open_offline {
                    if (from == SERVER || to == SERVER) && c.server_contact.last() != Some(&index) {
                        c.server_contact.push(index);
                    }
                }
            }
            TraceEvent::Outcome { .. } => open_offline = None,
            TraceEvent::Audit {
                index,
                minted,
                online,
                offline,
                inflight,
                destroyed,
            } => {
                c.audits += 1;
                let total = [online, offline, inflight, destroyed]
                    .iter()
                    .try_fold(0u64, |acc, v| acc.checked_add(**v));
                if total != Some(*minted) {
                    c.unbalanced.push(*index);
                }
            }
            TraceEvent::Violation { .. } => c.recorded_violations += 1,
            TraceEvent::Warning { .. } => {}
        }
    }
    c
}
