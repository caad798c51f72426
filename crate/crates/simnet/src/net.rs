//! The adversarial network: every frame passes through here, is captured,
//! and may be dropped or mutated by armed rules.

use std::collections::VecDeque;

use ops_core::codec::{AuthedRequest, Decode};
use ops_core::server::ServerReply;
use ops_core::wallet::{ChannelError, ServerChannel};
use ops_core::{Server, WireKind};

use crate::script::FrameRef;
use crate::trace::{Fate, Trace, TraceEvent, SERVER};

/// Label for frames injected by the adversary itself.
pub const ADVERSARY: &str = "adversary";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleAction {
    Drop,
    Tamper { offset: usize, xor: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    kind: Option<WireKind>,
    action: RuleAction,
    remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pub seq: u64,
    pub from: String,
    pub to: String,
    /// `None` for server aborts and undecodable frames.
    pub kind: Option<WireKind>,
    /// The bytes as sent, before any mutation.
    pub bytes: Vec<u8>,
    /// Payment record carried by a transfer frame.
    pub payment: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Net {
    seq: u64,
    rules: VecDeque<Rule>,
    frames: Vec<CapturedFrame>,
    pub trace: Trace,
}

impl Net {
    pub fn arm(&mut self, kind: Option<WireKind>, action: RuleAction, count: u32) {
        self.rules.push_back(Rule {
            kind,
            action,
            remaining: count,
        });
    }

    pub fn clear_rules(&mut self) {
        self.rules.clear();
    }

    pub fn armed_rules(&self) -> usize {
        self.rules.len()
    }

    fn take_rule(&mut self, kind: Option<WireKind>) -> Option<RuleAction> {
        let pos = self
            .rules
            .iter()
            .position(|r| r.kind.is_none() || r.kind == kind)?;
        let rule = &mut self.rules[pos];
        let action = rule.action;
        rule.remaining -= 1;
        if rule.remaining == 0 {
            self.rules.remove(pos);
        }
        Some(action)
    }

    fn record(&mut self, frame: CapturedFrame, fate: Fate, wire: &[u8]) {
        self.trace.push(TraceEvent::Frame {
            seq: frame.seq,
            from: frame.from.clone(),
            to: frame.to.clone(),
            kind: frame.kind.map_or(0, WireKind::tag),
            fate,
            bytes: wire.to_vec(),
        });
        self.frames.push(frame);
    }

    fn capture(
        &mut self,
        from: &str,
        to: &str,
        kind: Option<WireKind>,
        bytes: &[u8],
        payment: Option<usize>,
    ) -> CapturedFrame {
        self.seq += 1;
        CapturedFrame {
            seq: self.seq,
            from: from.to_owned(),
            to: to.to_owned(),
            kind,
            bytes: bytes.to_vec(),
            payment,
        }
    }

    /// Sends one frame across the adversarial link. Returns the bytes that
    /// arrive, or `None` if the frame was dropped.
    pub fn transmit(
        &mut self,
        from: &str,
        to: &str,
        kind: Option<WireKind>,
        bytes: &[u8],
        payment: Option<usize>,
    ) -> Option<Vec<u8>> {
        let frame = self.capture(from, to, kind, bytes, payment);
        match self.take_rule(kind) {
            None => {
                self.record(frame, Fate::Delivered, bytes);
                Some(bytes.to_vec())
            }
            Some(RuleAction::Drop) => {
                self.record(frame, Fate::Dropped, bytes);
                None
            }
            Some(RuleAction::Tamper { offset, xor }) => {
                let mut wire = bytes.to_vec();
                if !wire.is_empty() {
                    let i = offset % wire.len();
                    wire[i] ^= xor;
                }
                self.record(frame, Fate::Tampered, &wire);
                Some(wire)
            }
        }
    }

    /// Records a frame that bypasses the rules: adversary injections and
    /// transfers held back for reordering.
    pub fn inject(
        &mut self,
        from: &str,
        to: &str,
        kind: Option<WireKind>,
        bytes: &[u8],
        payment: Option<usize>,
        fate: Fate,
    ) {
        let frame = self.capture(from, to, kind, bytes, payment);
        self.record(frame, fate, bytes);
    }

    pub fn resolve(&self, r: FrameRef) -> Option<&CapturedFrame> {
        match r {
            FrameRef::Seq(n) => self.frames.iter().find(|f| f.seq == n),
            FrameRef::Last(k) => self.frames.iter().rev().find(|f| f.kind == Some(k)),
        }
    }

    pub fn frames(&self) -> &[CapturedFrame] {
        &self.frames
    }
}

pub fn request_kind(bytes: &[u8]) -> Option<WireKind> {
    AuthedRequest::decode(bytes).ok().map(|r| r.message.kind())
}

pub fn reply_kind(bytes: &[u8]) -> Option<WireKind> {
    match ServerReply::decode(bytes) {
        Ok(ServerReply::Ok(m)) => Some(m.kind()),
        _ => None,
    }
}

/// One actor's link to the server through the adversarial network.
pub struct SimChannel<'a> {
    pub server: &'a mut Server,
    pub net: &'a mut Net,
    pub actor: &'a str,
    pub online: bool,
}

impl ServerChannel for SimChannel<'_> {
    fn is_connected(&self) -> bool {
        self.online
    }

    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if !self.online {
            return Err(ChannelError::Offline);
        }
        let delivered = self
            .net
            .transmit(self.actor, SERVER, request_kind(request), request, None)
            .ok_or(ChannelError::Lost)?;
        let reply = self.server.handle_frame(&delivered);
        self.net
            .transmit(SERVER, self.actor, reply_kind(&reply), &reply, None)
            .ok_or(ChannelError::Lost)
    }
}
