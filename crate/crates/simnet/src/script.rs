//! Scenario scripts: a line-oriented description of actors, protocol
//! actions and adversary injections.
//!
//! ```text
//! # honest transfer
//! seed 7
//! actor alice tee model=pixel-9
//! actor bob plain
//! register alice
//! setup_ta alice
//! register bob
//! mint alice 100
//! deposit alice 40
//! pay alice bob 25
//! claim bob
//! ```
//!
//! Frame references are `#N` (sequence number) or `last:Kind`; payment
//! references are `pN` (N-th issued payment, from 1) or `plast`.

use std::collections::BTreeSet;
use std::fmt;

use ops_core::WireKind;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ScriptError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorDecl {
    pub name: String,
    pub tee: bool,
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRef {
    Seq(u64),
    Last(WireKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentRef {
    Index(usize),
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    PayAfterPersist,
    WithdrawBeforeSend,
    DepositBeforeApply,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 3] = [
        CrashPoint::PayAfterPersist,
        CrashPoint::WithdrawBeforeSend,
        CrashPoint::DepositBeforeApply,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrashPoint::PayAfterPersist => "pay_after_persist",
            CrashPoint::WithdrawBeforeSend => "withdraw_before_send",
            CrashPoint::DepositBeforeApply => "deposit_before_apply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Register(String),
    SetupTa(String),
    Mint(String, u64),
    Deposit(String, u64),
    Withdraw(String, u64),
    Pay {
        from: String,
        to: String,
        amount: u64,
        ua: bool,
    },
    Claim(String),
    Collect(String),
    GoOffline(String),
    GoOnline(String),
    Resume(String),
    Flush,
    /// Cancels armed network rules and crashes and delivers any payments
    /// held for reordering.
    ResetFaults,
    Drop {
        kind: Option<WireKind>,
        count: u32,
    },
    Tamper {
        kind: Option<WireKind>,
        offset: usize,
        xor: u8,
    },
    Replay(FrameRef),
    Forward {
        frame: FrameRef,
        to: String,
    },
    ForceClaim {
        actor: String,
        payment: PaymentRef,
    },
    ForceCollect {
        actor: String,
        payment: PaymentRef,
    },
    ForceWithdraw {
        actor: String,
        frame: FrameRef,
    },
    Reorder(u32),
    Snapshot {
        actor: String,
        name: String,
    },
    Rollback {
        actor: String,
        name: String,
        tamper_mic: bool,
    },
    Heal(String),
    TamperStore {
        actor: String,
        offset: usize,
    },
    Crash {
        actor: String,
        point: CrashPoint,
    },
}

impl Step {
    /// Injections are performed by the adversary rather than by an actor
    /// following the protocol.
    pub fn is_adversarial(&self) -> bool {
        matches!(
            self,
            Step::Drop { .. }
                | Step::Tamper { .. }
                | Step::Replay(_)
                | Step::Forward { .. }
                | Step::ForceClaim { .. }
                | Step::ForceCollect { .. }
                | Step::ForceWithdraw { .. }
                | Step::Reorder(_)
                | Step::Snapshot { .. }
                | Step::Rollback { .. }
                | Step::Heal(_)
                | Step::TamperStore { .. }
                | Step::Crash { .. }
        )
    }

    /// Attempts to extract value the attacker is not entitled to. Each must
    /// be refused.
    pub fn is_attack(&self) -> bool {
        matches!(
            self,
            Step::Replay(_)
                | Step::Forward { .. }
                | Step::ForceClaim { .. }
                | Step::ForceCollect { .. }
                | Step::ForceWithdraw { .. }
        )
    }

    pub fn actors(&self) -> Vec<&str> {
        match self {
            Step::Register(a)
            | Step::SetupTa(a)
            | Step::Mint(a, _)
            | Step::Deposit(a, _)
            | Step::Withdraw(a, _)
            | Step::Claim(a)
            | Step::Collect(a)
            | Step::GoOffline(a)
            | Step::GoOnline(a)
            | Step::Resume(a)
            | Step::Heal(a) => vec![a],
            Step::Pay { from, to, .. } => vec![from, to],
            Step::Forward { to, .. } => vec![to],
            Step::ForceClaim { actor, .. }
            | Step::ForceCollect { actor, .. }
            | Step::ForceWithdraw { actor, .. }
            | Step::Snapshot { actor, .. }
            | Step::Rollback { actor, .. }
            | Step::TamperStore { actor, .. }
            | Step::Crash { actor, .. } => vec![actor],
            Step::Flush
            | Step::ResetFaults
            | Step::Drop { .. }
            | Step::Tamper { .. }
            | Step::Replay(_)
            | Step::Reorder(_) => vec![],
        }
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameRef::Seq(n) => write!(f, "#{n}"),
            FrameRef::Last(k) => write!(f, "last:{}", k.name()),
        }
    }
}

impl fmt::Display for PaymentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PaymentRef::Index(n) => write!(f, "p{n}"),
            PaymentRef::Last => f.write_str("plast"),
        }
    }
}

fn kind_suffix(kind: &Option<WireKind>) -> String {
    kind.map(|k| format!(" {}", k.name())).unwrap_or_default()
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Register(a) => write!(f, "register {a}"),
            Step::SetupTa(a) => write!(f, "setup_ta {a}"),
            Step::Mint(a, x) => write!(f, "mint {a} {x}"),
            Step::Deposit(a, x) => write!(f, "deposit {a} {x}"),
            Step::Withdraw(a, x) => write!(f, "withdraw {a} {x}"),
            Step::Pay {
                from,
                to,
                amount,
                ua,
            } => {
                write!(
                    f,
                    "pay {from} {to} {amount}{}",
                    if *ua { " ua" } else { "" }
                )
            }
            Step::Claim(a) => write!(f, "claim {a}"),
            Step::Collect(a) => write!(f, "collect {a}"),
            Step::GoOffline(a) => write!(f, "go_offline {a}"),
            Step::GoOnline(a) => write!(f, "go_online {a}"),
            Step::Resume(a) => write!(f, "resume {a}"),
            Step::Flush => f.write_str("flush"),
            Step::ResetFaults => f.write_str("reset_faults"),
            Step::Drop { kind, count } => write!(f, "drop next{} {count}", kind_suffix(kind)),
            Step::Tamper { kind, offset, xor } => {
                write!(f, "tamper next{} {offset} {xor}", kind_suffix(kind))
            }
            Step::Replay(r) => write!(f, "replay {r}"),
            Step::Forward { frame, to } => write!(f, "forward {frame} {to}"),
            Step::ForceClaim { actor, payment } => write!(f, "force_claim {actor} {payment}"),
            Step::ForceCollect { actor, payment } => write!(f, "force_collect {actor} {payment}"),
            Step::ForceWithdraw { actor, frame } => write!(f, "force_withdraw {actor} {frame}"),
            Step::Reorder(n) => write!(f, "reorder {n}"),
            Step::Snapshot { actor, name } => write!(f, "snapshot {actor} {name}"),
            Step::Rollback {
                actor,
                name,
                tamper_mic,
            } => {
                write!(
                    f,
                    "rollback_ta_store {actor} {name}{}",
                    if *tamper_mic { " tamper_mic" } else { "" }
                )
            }
            Step::Heal(a) => write!(f, "heal_ta_store {a}"),
            Step::TamperStore { actor, offset } => write!(f, "tamper_ta_store {actor} {offset}"),
            Step::Crash { actor, point } => write!(f, "crash {actor} {}", point.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScenarioScript {
    pub seed: u64,
    pub actors: Vec<ActorDecl>,
    pub steps: Vec<Step>,
}

pub const DEFAULT_MODEL: &str = "generic-tee";

/// The built-in honest walkthrough: two handsets, one offline transfer,
/// everything withdrawn again at the end.
pub const DEMO_SCRIPT: &str = "\
actor alice tee model=handset-a1
actor bob tee model=handset-b2
register alice
register bob
setup_ta alice
setup_ta bob
mint alice 100
deposit alice 40
pay alice bob 25
collect bob
withdraw bob 25
withdraw alice 15
";

/// Endpoint labels used in traces.
const RESERVED_NAMES: [&str; 2] = [crate::trace::SERVER, crate::net::ADVERSARY];

struct LineParser<'a> {
    line: usize,
    words: Vec<&'a str>,
    pos: usize,
}

impl<'a> LineParser<'a> {
    fn err(&self, msg: impl Into<String>) -> ScriptError {
        ScriptError {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, ScriptError> {
        let w = self
            .words
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(format!("missing {what}")))?;
        self.pos += 1;
        Ok(w)
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.pos).copied()
    }

    fn amount(&mut self) -> Result<u64, ScriptError> {
        let w = self.next("amount")?;
        match w.parse::<u64>() {
            Ok(0) => Err(self.err("amount must be at least 1")),
            Ok(x) => Ok(x),
            Err(_) => Err(self.err(format!("bad amount '{w}'"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ScriptError> {
        let w = self.next(what)?;
        w.parse().map_err(|_| self.err(format!("bad {what} '{w}'")))
    }

    fn frame_ref(&mut self) -> Result<FrameRef, ScriptError> {
        let w = self.next("frame reference")?;
        if let Some(n) = w.strip_prefix('#') {
            return n
                .parse()
                .map(FrameRef::Seq)
                .map_err(|_| self.err(format!("bad frame reference '{w}'")));
        }
        if let Some(k) = w.strip_prefix("last:") {
            return WireKind::from_name(k)
                .map(FrameRef::Last)
                .ok_or_else(|| self.err(format!("unknown message kind '{k}'")));
        }
        Err(self.err(format!("bad frame reference '{w}'")))
    }

    fn payment_ref(&mut self) -> Result<PaymentRef, ScriptError> {
        let w = self.next("payment reference")?;
        if w == "plast" {
            return Ok(PaymentRef::Last);
        }
        match w.strip_prefix('p').and_then(|n| n.parse::<usize>().ok()) {
            Some(n) if n >= 1 => Ok(PaymentRef::Index(n)),
            _ => Err(self.err(format!("bad payment reference '{w}'"))),
        }
    }

    fn kind_opt(&mut self) -> Result<Option<WireKind>, ScriptError> {
        match self.peek() {
            Some(w) if w.parse::<u64>().is_err() => {
                self.pos += 1;
                WireKind::from_name(w)
                    .map(Some)
                    .ok_or_else(|| self.err(format!("unknown message kind '{w}'")))
            }
            _ => Ok(None),
        }
    }

    fn done(&self) -> Result<(), ScriptError> {
        match self.peek() {
            Some(w) => Err(self.err(format!("unexpected '{w}'"))),
            None => Ok(()),
        }
    }
}

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut script = ScenarioScript::default();
        let mut seed_seen = false;
        let mut snapshots: BTreeSet<(String, String)> = BTreeSet::new();

        for (i, raw) in text.lines().enumerate() {
            let content = strip_comment(raw);
            let words: Vec<&str> = content.split_whitespace().collect();
            if words.is_empty() {
                continue;
            }
            let mut p = LineParser {
                line: i + 1,
                words,
                pos: 0,
            };
            let verb = p.next("verb")?;
            match verb {
                "seed" => {
                    if seed_seen {
                        return Err(p.err("duplicate seed"));
                    }
                    script.seed = p.number("seed")?;
                    seed_seen = true;
                    p.done()?;
                    continue;
                }
                "actor" => {
                    if !script.steps.is_empty() {
                        return Err(p.err("actors must be declared before steps"));
                    }
                    let name = p.next("actor name")?.to_owned();
                    if script.actors.iter().any(|a| a.name == name) {
                        return Err(p.err(format!("duplicate actor '{name}'")));
                    }
                    if name.parse::<u64>().is_ok() || RESERVED_NAMES.contains(&name.as_str()) {
                        return Err(p.err(format!("invalid actor name '{name}'")));
                    }
                    let tee = match p.next("actor type")? {
                        "tee" => true,
                        "plain" => false,
                        other => {
                            return Err(
                                p.err(format!("actor type must be tee or plain, got '{other}'"))
                            )
                        }
                    };
                    let mut model = DEFAULT_MODEL.to_owned();
                    if let Some(w) = p.peek() {
                        model = w
                            .strip_prefix("model=")
                            .filter(|m| !m.is_empty())
                            .ok_or_else(|| p.err(format!("unexpected '{w}'")))?
                            .to_owned();
                        p.pos += 1;
                    }
                    p.done()?;
                    script.actors.push(ActorDecl { name, tee, model });
                    continue;
                }
                _ => {}
            }
            let step = parse_step(verb, &mut p)?;
            p.done()?;
            for a in step.actors() {
                if !script.actors.iter().any(|d| d.name == a) {
                    return Err(p.err(format!("unknown actor '{a}'")));
                }
            }
            match &step {
                Step::Snapshot { actor, name } => {
                    snapshots.insert((actor.clone(), name.clone()));
                }
                Step::Rollback { actor, name, .. }
                    if !snapshots.contains(&(actor.clone(), name.clone())) =>
                {
                    return Err(p.err(format!("no snapshot '{name}' of {actor} taken earlier")));
                }
                _ => {}
            }
            script.steps.push(step);
        }
        Ok(script)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for a in &self.actors {
            let kind = if a.tee { "tee" } else { "plain" };
            out.push_str(&format!("actor {} {kind} model={}\n", a.name, a.model));
        }
        for s in &self.steps {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out
    }

    pub fn actor(&self, name: &str) -> Option<&ActorDecl> {
        self.actors.iter().find(|a| a.name == name)
    }
}

/// Cuts a trailing comment. A `#` starts a comment when it begins a word
/// and is not followed by a digit, which would make it a frame reference.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'#' {
            continue;
        }
        let at_word_start = i == 0 || bytes[i - 1].is_ascii_whitespace();
        let digit_follows = bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        if at_word_start && !digit_follows {
            return &line[..i];
        }
    }
    line
}

fn parse_step(verb: &str, p: &mut LineParser<'_>) -> Result<Step, ScriptError> {
    let actor = |p: &mut LineParser<'_>| p.next("actor").map(str::to_owned);
    Ok(match verb {
        "register" => Step::Register(actor(p)?),
        "setup_ta" => Step::SetupTa(actor(p)?),
        "mint" => Step::Mint(actor(p)?, p.amount()?),
        "deposit" => Step::Deposit(actor(p)?, p.amount()?),
        "withdraw" => Step::Withdraw(actor(p)?, p.amount()?),
        "pay" => {
            let from = actor(p)?;
            let to = actor(p)?;
            let amount = p.amount()?;
            let ua = match p.peek() {
                Some("ua") => {
                    p.pos += 1;
                    true
                }
                _ => false,
            };
            Step::Pay {
                from,
                to,
                amount,
                ua,
            }
        }
        "claim" => Step::Claim(actor(p)?),
        "collect" => Step::Collect(actor(p)?),
        "go_offline" => Step::GoOffline(actor(p)?),
        "go_online" => Step::GoOnline(actor(p)?),
        "resume" => Step::Resume(actor(p)?),
        "flush" => Step::Flush,
        "reset_faults" => Step::ResetFaults,
        "drop" => {
            if p.next("'next'")? != "next" {
                return Err(p.err("expected 'drop next'"));
            }
            let kind = p.kind_opt()?;
            let count = if p.peek().is_some() {
                p.number("count")?
            } else {
                1
            };
            if count == 0 {
                return Err(p.err("count must be at least 1"));
            }
            Step::Drop { kind, count }
        }
        "tamper" => {
            if p.next("'next'")? != "next" {
                return Err(p.err("expected 'tamper next'"));
            }
            let kind = p.kind_opt()?;
            let offset = p.number("offset")?;
            let xor: u8 = p.number("xor mask")?;
            if xor == 0 {
                return Err(p.err("xor mask must be non-zero"));
            }
            Step::Tamper { kind, offset, xor }
        }
        "replay" => Step::Replay(p.frame_ref()?),
        "forward" => Step::Forward {
            frame: p.frame_ref()?,
            to: actor(p)?,
        },
        "force_claim" => Step::ForceClaim {
            actor: actor(p)?,
            payment: p.payment_ref()?,
        },
        "force_collect" => Step::ForceCollect {
            actor: actor(p)?,
            payment: p.payment_ref()?,
        },
        "force_withdraw" => Step::ForceWithdraw {
            actor: actor(p)?,
            frame: p.frame_ref()?,
        },
        "reorder" => {
            let n: u32 = p.number("window")?;
            if n < 2 {
                return Err(p.err("reorder window must be at least 2"));
            }
            Step::Reorder(n)
        }
        "snapshot" => Step::Snapshot {
            actor: actor(p)?,
            name: p.next("snapshot name")?.to_owned(),
        },
        "rollback_ta_store" => {
            let actor = actor(p)?;
            let name = p.next("snapshot name")?.to_owned();
            let tamper_mic = match p.peek() {
                Some("tamper_mic") => {
                    p.pos += 1;
                    true
                }
                _ => false,
            };
            Step::Rollback {
                actor,
                name,
                tamper_mic,
            }
        }
        "heal_ta_store" => Step::Heal(actor(p)?),
        "tamper_ta_store" => Step::TamperStore {
            actor: actor(p)?,
            offset: p.number("offset")?,
        },
        "crash" => {
            let actor = actor(p)?;
            let w = p.next("crash point")?;
            let point = CrashPoint::ALL
                .into_iter()
                .find(|c| c.name() == w)
                .ok_or_else(|| p.err(format!("unknown crash point '{w}'")))?;
            Step::Crash { actor, point }
        }
        other => return Err(p.err(format!("unknown action '{other}'"))),
    })
}
