//! The simulated world: one server, the declared actors, the adversarial
//! network, and an auditor that checks every step.
//!
//! Steps run strictly one after another. The only randomness after key
//! generation is the delivery order of reordered payments, drawn from the
//! same seeded generator, so a script and a seed fix the whole run.

use std::collections::BTreeMap;

use ops_core::codec::{AuthedRequest, Decode, Encode};
use ops_core::crypto::CertKind;
use ops_core::server::ServerReply;
use ops_core::ta::{StoreError, TaCrashPoint, TaView, BLOB_HEADER_LEN};
use ops_core::wallet::{OemAuthority, PayRequest, SecureDevice, WalletCrashPoint};
use ops_core::{
    Payment, SecurityConfig, Server, TaError, Wallet, WalletError, WireKind, WireMessage,
};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::net::{reply_kind, CapturedFrame, Net, RuleAction, SimChannel, ADVERSARY};
use crate::report::{AuditReport, Holding, Ledger, Property, Stats, Violation};
use crate::script::{ActorDecl, CrashPoint, FrameRef, PaymentRef, ScenarioScript, Step};
use crate::trace::{is_offline_step, Fate, Trace, TraceEvent, SERVER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok(String),
    Failed(String),
    /// A reference did not resolve; nothing happened.
    Skipped(String),
}

impl Outcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok(_))
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Outcome::Failed(_))
    }

    pub fn text(&self) -> &str {
        match self {
            Outcome::Ok(t) | Outcome::Failed(t) | Outcome::Skipped(t) => t,
        }
    }
}

fn fail(e: impl std::fmt::Display) -> Outcome {
    Outcome::Failed(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub index: u32,
    pub step: Step,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaymentStatus {
    InTransit,
    Held,
    Accepted,
    Rejected(String),
    Dropped,
}

impl PaymentStatus {
    fn is_live(&self) -> bool {
        matches!(
            self,
            PaymentStatus::InTransit | PaymentStatus::Held | PaymentStatus::Accepted
        )
    }
}

#[derive(Debug, Clone)]
pub struct PaymentRecord {
    pub payment: Payment,
    /// What the receiver asked for, before any tampering.
    pub request: PayRequest,
    pub from: usize,
    pub to: usize,
    pub status: PaymentStatus,
}

#[derive(Debug, Clone, Copy)]
struct Freeze {
    mic: u64,
    injection: usize,
}

#[derive(Debug, Clone)]
pub struct Actor {
    pub name: String,
    pub tee: bool,
    pub wallet: Wallet,
    pub online: bool,
    /// Last blob written by the TA itself.
    true_blob: Option<Vec<u8>>,
    freeze: Option<Freeze>,
    snapshots: BTreeMap<String, Option<Vec<u8>>>,
}

impl Actor {
    pub fn is_frozen(&self) -> bool {
        self.freeze.is_some()
    }
}

#[derive(Debug, Clone)]
struct Reorder {
    window: usize,
    held: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: AuditReport,
    pub trace: Trace,
    pub outcomes: Vec<StepOutcome>,
}

#[derive(Debug, Clone)]
pub struct World {
    seed: u64,
    rng: ChaCha20Rng,
    server: Server,
    actors: Vec<Actor>,
    net: Net,
    payments: Vec<PaymentRecord>,
    reorder: Option<Reorder>,
    crash_lost: u64,
    step: u32,
    outcomes: Vec<StepOutcome>,
    violations: Vec<Violation>,
    warnings: Vec<(u32, String)>,
    stats: Stats,
    /// Per store injection: still undetected-free.
    injections: Vec<bool>,
    last: Ledger,
}

impl World {
    pub fn new(seed: u64, decls: &[ActorDecl]) -> Self {
        let cfg = SecurityConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut server = Server::generate(cfg, &mut rng);
        let oem = OemAuthority::generate(&cfg, &mut rng);
        server.add_oem_root(oem.vk());
        let actors = decls
            .iter()
            .map(|d| {
                let mut wallet = Wallet::generate(cfg, server.vk(), &mut rng);
                if d.tee {
                    let device = SecureDevice::new(oem.manufacture(&cfg, &d.model, &mut rng));
                    wallet = wallet.with_device(device);
                }
                Actor {
                    name: d.name.clone(),
                    tee: d.tee,
                    wallet,
                    online: true,
                    true_blob: None,
                    freeze: None,
                    snapshots: BTreeMap::new(),
                }
            })
            .collect();
        let mut w = Self {
            seed,
            rng,
            server,
            actors,
            net: Net::default(),
            payments: Vec::new(),
            reorder: None,
            crash_lost: 0,
            step: 0,
            outcomes: Vec::new(),
            violations: Vec::new(),
            warnings: Vec::new(),
            stats: Stats::default(),
            injections: Vec::new(),
            last: Ledger::default(),
        };
        w.last = w.ledger().0;
        w
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn actor(&self, name: &str) -> Option<&Actor> {
        self.actors.iter().find(|a| a.name == name)
    }

    pub fn payments(&self) -> &[PaymentRecord] {
        &self.payments
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn trace(&self) -> &Trace {
        &self.net.trace
    }

    pub fn outcomes(&self) -> &[StepOutcome] {
        &self.outcomes
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    /// Ledger as of the last audit.
    pub fn ledger_now(&self) -> &Ledger {
        &self.last
    }

    fn index_of(&self, name: &str) -> usize {
        self.actors
            .iter()
            .position(|a| a.name == name)
            .expect("script validation resolves actor names")
    }

    fn warn(&mut self, text: String) {
        self.net.trace.push(TraceEvent::Warning {
            index: self.step,
            text: text.clone(),
        });
        self.warnings.push((self.step, text));
    }

    fn violate(&mut self, property: Property, detail: String) {
        self.net.trace.push(TraceEvent::Violation {
            index: self.step,
            text: format!("{property}: {detail}"),
        });
        self.violations.push(Violation {
            step: self.step,
            property,
            detail,
        });
    }

    /// Executes one step, then audits the world.
    pub fn apply(&mut self, step: &Step) -> Outcome {
        self.step += 1;
        let index = self.step;
        let before = step.is_adversarial().then(|| self.last.holdings.clone());
        let text = step.to_string();
        let start = self.net.trace.events.len();
        self.net.trace.push(TraceEvent::Step {
            index,
            text: text.clone(),
        });

        let (outcome, release) = self.execute(step);
        self.close_step(start, &text, &outcome);

        if step.is_attack() {
            self.stats.attack_steps += 1;
            self.stats.refused_attacks += u64::from(outcome.is_failed());
        }
        if release {
            self.release_held();
        }
        self.settle_stores();
        if outcome.is_ok() {
            if let Step::Deposit(a, _) | Step::Withdraw(a, _) | Step::Resume(a) = step {
                let i = self.index_of(a);
                self.check_counters(i);
            }
        }
        self.audit(before.as_ref(), &text);
        self.outcomes.push(StepOutcome {
            index,
            step: step.clone(),
            outcome: outcome.clone(),
        });
        outcome
    }

    fn close_step(&mut self, start: usize, text: &str, outcome: &Outcome) {
        let index = self.step;
        self.net.trace.push(TraceEvent::Outcome {
            index,
            ok: outcome.is_ok(),
            text: outcome.text().to_owned(),
        });
        if is_offline_step(text) {
            self.stats.offline_steps += 1;
            let contact = self.net.trace.events[start..].iter().any(|e| {
                matches!(e, TraceEvent::Frame { from, to, .. } if from == SERVER || to == SERVER)
            });
            if contact {
                self.violate(
                    Property::OfflineVerifiability,
                    format!("'{text}' exchanged frames with the server"),
                );
            }
        }
    }

    /// Returns the outcome and whether held payments are due for release.
    fn execute(&mut self, step: &Step) -> (Outcome, bool) {
        let out = match step {
            Step::Register(a) => {
                let i = self.index_of(a);
                self.with_channel(i, |w, ch, _| {
                    w.setup_client(ch).map(|_| "registered".to_owned())
                })
            }
            Step::SetupTa(a) => {
                let i = self.index_of(a);
                self.with_channel(i, |w, ch, rng| {
                    w.setup_ta(ch, rng).map(|_| "TA activated".to_owned())
                })
            }
            Step::Mint(a, x) => {
                let vk = self.actors[self.index_of(a)].wallet.vk();
                match self.server.mint(&vk, *x) {
                    Ok(()) => Outcome::Ok(format!("minted {x}")),
                    Err(e) => fail(e),
                }
            }
            Step::Deposit(a, x) => {
                let i = self.index_of(a);
                self.with_channel(i, |w, ch, _| {
                    w.do_deposit(ch, *x).map(|_| format!("deposited {x}"))
                })
            }
            Step::Withdraw(a, x) => {
                let i = self.index_of(a);
                let out = self.with_channel(i, |w, ch, _| {
                    w.do_withdraw(ch, *x).map(|_| format!("withdrew {x}"))
                });
                if out == fail(WalletError::Crashed) {
                    self.warn(format!("{a} crashed before sending its withdraw request"));
                }
                out
            }
            Step::Pay {
                from,
                to,
                amount,
                ua,
            } => return self.pay(from, to, *amount, *ua),
            Step::Claim(a) => self.claim(a),
            Step::Collect(a) => self.collect(a),
            Step::GoOffline(a) | Step::GoOnline(a) => {
                let i = self.index_of(a);
                let online = matches!(step, Step::GoOnline(_));
                self.actors[i].online = online;
                Outcome::Ok(if online { "online" } else { "offline" }.to_owned())
            }
            Step::Resume(a) => {
                let i = self.index_of(a);
                self.with_channel(i, |w, ch, _| w.resume(ch).map(|_| "resumed".to_owned()))
            }
            Step::Flush => {
                let n = self.reorder.as_ref().map_or(0, |r| r.held.len());
                return (Outcome::Ok(format!("releasing {n} held")), n > 0);
            }
            Step::ResetFaults => {
                self.net.clear_rules();
                for a in &mut self.actors {
                    a.wallet.disarm_crash();
                    if let Some(ta) = a.wallet.ta_mut() {
                        ta.disarm_crash();
                    }
                }
                let n = self.reorder.as_ref().map_or(0, |r| r.held.len());
                if n == 0 {
                    self.reorder = None;
                }
                return (Outcome::Ok("faults cleared".to_owned()), n > 0);
            }
            Step::Drop { kind, count } => {
                self.net.arm(*kind, RuleAction::Drop, *count);
                Outcome::Ok("armed".to_owned())
            }
            Step::Tamper { kind, offset, xor } => {
                self.net.arm(
                    *kind,
                    RuleAction::Tamper {
                        offset: *offset,
                        xor: *xor,
                    },
                    1,
                );
                Outcome::Ok("armed".to_owned())
            }
            Step::Replay(r) => self.replay(*r),
            Step::Forward { frame, to } => self.forward(*frame, to),
            Step::ForceClaim { actor, payment } => self.force_claim(actor, *payment),
            Step::ForceCollect { actor, payment } => self.force_collect(actor, *payment),
            Step::ForceWithdraw { actor, frame } => self.force_withdraw(actor, *frame),
            Step::Reorder(n) => {
                let held = self.reorder.take().map(|r| r.held).unwrap_or_default();
                let due = held.len() >= *n as usize;
                self.reorder = Some(Reorder {
                    window: *n as usize,
                    held,
                });
                return (Outcome::Ok(format!("holding the next {n} transfers")), due);
            }
            Step::Snapshot { actor, name } => {
                let i = self.index_of(actor);
                let blob = self.actors[i]
                    .wallet
                    .ta()
                    .and_then(|ta| ta.store().blob().map(<[u8]>::to_vec));
                let what = if blob.is_some() {
                    "store captured"
                } else {
                    "store is empty"
                };
                self.actors[i].snapshots.insert(name.clone(), blob);
                Outcome::Ok(what.to_owned())
            }
            Step::Rollback {
                actor,
                name,
                tamper_mic,
            } => self.rollback(actor, name, *tamper_mic),
            Step::Heal(actor) => self.heal(actor),
            Step::TamperStore { actor, offset } => {
                let i = self.index_of(actor);
                match self.actors[i]
                    .wallet
                    .ta()
                    .and_then(|ta| ta.store().blob().map(<[u8]>::to_vec))
                {
                    Some(mut blob) => {
                        let at = offset % blob.len();
                        blob[at] ^= 0x01;
                        self.inject_blob(i, blob)
                    }
                    None => Outcome::Skipped("store is empty".to_owned()),
                }
            }
            Step::Crash { actor, point } => {
                let i = self.index_of(actor);
                let w = &mut self.actors[i].wallet;
                match point {
                    CrashPoint::PayAfterPersist => match w.ta_mut() {
                        Some(ta) => {
                            ta.arm_crash(TaCrashPoint::PayAfterPersist);
                            Outcome::Ok("armed".to_owned())
                        }
                        None => Outcome::Failed("no TA".to_owned()),
                    },
                    CrashPoint::WithdrawBeforeSend => {
                        w.arm_crash(WalletCrashPoint::WithdrawBeforeSend);
                        Outcome::Ok("armed".to_owned())
                    }
                    CrashPoint::DepositBeforeApply => {
                        w.arm_crash(WalletCrashPoint::DepositBeforeApply);
                        Outcome::Ok("armed".to_owned())
                    }
                }
            }
        };
        (out, false)
    }

    fn with_channel<F>(&mut self, i: usize, f: F) -> Outcome
    where
        F: FnOnce(
            &mut Wallet,
            &mut SimChannel<'_>,
            &mut ChaCha20Rng,
        ) -> Result<String, WalletError>,
    {
        let Actor {
            name,
            wallet,
            online,
            ..
        } = &mut self.actors[i];
        let mut ch = SimChannel {
            server: &mut self.server,
            net: &mut self.net,
            actor: name,
            online: *online,
        };
        match f(wallet, &mut ch, &mut self.rng) {
            Ok(t) => Outcome::Ok(t),
            Err(e) => fail(e),
        }
    }

    fn pay(&mut self, from: &str, to: &str, amount: u64, ua: bool) -> (Outcome, bool) {
        let (a, b) = (self.index_of(from), self.index_of(to));
        let receiver = &self.actors[b].wallet;
        let req = if ua {
            receiver.request_payment_to_ua(amount)
        } else {
            receiver.request_payment(amount)
        };
        let req = match req {
            Ok(r) => r,
            Err(e) => {
                return (
                    Outcome::Failed(format!("receiver cannot request: {e}")),
                    false,
                )
            }
        };
        let msg = req.to_message().encode().expect("pay requests encode");
        let Some(wire) = self
            .net
            .transmit(to, from, Some(WireKind::PayReq), &msg, None)
        else {
            return (Outcome::Failed("pay request lost".to_owned()), false);
        };
        let seen = match WireMessage::decode_expecting(&wire, WireKind::PayReq) {
            Ok(WireMessage::PayReq { amount, receiver }) => PayRequest { amount, receiver },
            _ => return (Outcome::Failed("pay request garbled".to_owned()), false),
        };
        let payment = match self.actors[a]
            .wallet
            .make_payment(&seen, u64::from(self.step))
        {
            Ok(p) => p,
            Err(WalletError::Ta(TaError::Crashed)) => {
                self.crash_lost += seen.amount;
                self.warn(format!(
                    "{from} crashed after debiting {}: value destroyed",
                    seen.amount
                ));
                return (fail(TaError::Crashed), false);
            }
            Err(e) => return (fail(e), false),
        };
        self.payments.push(PaymentRecord {
            payment,
            request: req,
            from: a,
            to: b,
            status: PaymentStatus::InTransit,
        });
        let rec = self.payments.len() - 1;
        if let Some(r) = &mut self.reorder {
            r.held.push(rec);
            let due = r.held.len() >= r.window;
            self.payments[rec].status = PaymentStatus::Held;
            let bytes = self.transfer_bytes(rec);
            self.net.inject(
                from,
                to,
                Some(WireKind::PaymentTransfer),
                &bytes,
                Some(rec),
                Fate::Held,
            );
            return (Outcome::Ok(format!("p{} held", rec + 1)), due);
        }
        (self.deliver(rec), false)
    }

    fn transfer_bytes(&self, rec: usize) -> Vec<u8> {
        WireMessage::PaymentTransfer {
            payment: self.payments[rec].payment.clone(),
        }
        .encode()
        .expect("issued payments encode")
    }

    /// Sends a transfer across the network and offers it to its receiver.
    fn deliver(&mut self, rec: usize) -> Outcome {
        let r = &self.payments[rec];
        let (from, to) = (
            self.actors[r.from].name.clone(),
            self.actors[r.to].name.clone(),
        );
        let bytes = self.transfer_bytes(rec);
        match self.net.transmit(
            &from,
            &to,
            Some(WireKind::PaymentTransfer),
            &bytes,
            Some(rec),
        ) {
            Some(wire) => self.offer(rec, self.payments[rec].to, &wire),
            None => {
                self.mark_lost(rec, PaymentStatus::Dropped, "dropped in transit");
                Outcome::Failed(format!("p{} dropped", rec + 1))
            }
        }
    }

    fn mark_lost(&mut self, rec: usize, status: PaymentStatus, why: &str) {
        if matches!(
            self.payments[rec].status,
            PaymentStatus::InTransit | PaymentStatus::Held
        ) {
            self.payments[rec].status = status;
            let amount = self.payments[rec].payment.amount;
            self.warn(format!("p{} ({amount}) {why}: value destroyed", rec + 1));
        }
    }

    /// Hands transfer bytes to actor `b` as a response to record `rec`'s
    /// request.
    fn offer(&mut self, rec: usize, b: usize, wire: &[u8]) -> Outcome {
        let p = match WireMessage::decode_expecting(wire, WireKind::PaymentTransfer) {
            Ok(WireMessage::PaymentTransfer { payment }) => payment,
            _ => {
                self.mark_lost(
                    rec,
                    PaymentStatus::Rejected("garbled".to_owned()),
                    "garbled in transit",
                );
                return Outcome::Failed("transfer garbled".to_owned());
            }
        };
        let request = self.payments[rec].request.clone();
        match self.actors[b].wallet.accept_payment(&p, &request) {
            Ok(acc) => {
                self.payments[rec].status = PaymentStatus::Accepted;
                let (recv, payer) = (
                    self.actors[b].name.clone(),
                    self.actors[self.payments[rec].from].name.clone(),
                );
                let ack = WireMessage::PayConfirmed.encode().expect("acks encode");
                self.net
                    .transmit(&recv, &payer, Some(WireKind::PayConfirmed), &ack, None);
                Outcome::Ok(match acc.collected {
                    None => format!("accepted p{}", rec + 1),
                    Some(Ok(())) => format!("accepted and collected p{}", rec + 1),
                    Some(Err(e)) => format!("accepted p{}, collect deferred: {e}", rec + 1),
                })
            }
            Err(rej) => {
                self.mark_lost(
                    rec,
                    PaymentStatus::Rejected(rej.to_string()),
                    &format!("rejected ({rej})"),
                );
                fail(rej)
            }
        }
    }

    fn release_held(&mut self) {
        let Some(mut r) = self.reorder.take() else {
            return;
        };
        let mut held = std::mem::take(&mut r.held);
        held.shuffle(&mut self.rng);
        for rec in held {
            let text = format!("deliver p{}", rec + 1);
            let start = self.net.trace.events.len();
            self.net.trace.push(TraceEvent::Step {
                index: self.step,
                text: text.clone(),
            });
            let out = self.deliver(rec);
            self.close_step(start, &text, &out);
        }
        // the window applies to one batch
    }

    fn claim(&mut self, a: &str) -> Outcome {
        let i = self.index_of(a);
        let Actor {
            name,
            wallet,
            online,
            ..
        } = &mut self.actors[i];
        let mut ch = SimChannel {
            server: &mut self.server,
            net: &mut self.net,
            actor: name,
            online: *online,
        };
        let results = wallet.claim_all(&mut ch);
        summarize(
            "claimed",
            results
                .into_iter()
                .map(|(_, r)| r.map(|_| ()).map_err(|e| e.to_string())),
        )
    }

    fn collect(&mut self, a: &str) -> Outcome {
        let i = self.index_of(a);
        let results = self.actors[i].wallet.collect_inbox();
        summarize(
            "collected",
            results
                .into_iter()
                .map(|(_, r)| r.map_err(|e| e.to_string())),
        )
    }

    fn resolve_payment(&self, r: PaymentRef) -> Option<usize> {
        match r {
            PaymentRef::Index(n) => (n <= self.payments.len()).then(|| n - 1),
            PaymentRef::Last => self.payments.len().checked_sub(1),
        }
    }

    fn unresolved(&mut self, what: String) -> Outcome {
        self.warn(format!("unresolved reference {what}; step skipped"));
        Outcome::Skipped(format!("no {what}"))
    }

    fn replay(&mut self, r: FrameRef) -> Outcome {
        let Some(f) = self.net.resolve(r).cloned() else {
            return self.unresolved(format!("frame {r}"));
        };
        match f.kind {
            Some(k) if k.is_server_bound() => {
                self.net
                    .inject(ADVERSARY, SERVER, Some(k), &f.bytes, None, Fate::Delivered);
                let reply = self.server.handle_frame(&f.bytes);
                self.net.inject(
                    SERVER,
                    ADVERSARY,
                    reply_kind(&reply),
                    &reply,
                    None,
                    Fate::Delivered,
                );
                match ServerReply::decode(&reply) {
                    Ok(ServerReply::Ok(m)) => {
                        Outcome::Ok(format!("server replied {}", m.kind().name()))
                    }
                    Ok(ServerReply::Abort(e)) => Outcome::Failed(format!("server: {e}")),
                    Err(e) => fail(e),
                }
            }
            Some(WireKind::DepositConfirmed) => {
                let Some(b) = self.owner_of_reply(&f) else {
                    return Outcome::Skipped("frame belongs to no actor".to_owned());
                };
                let Ok(ServerReply::Ok(WireMessage::DepositConfirmed { amount, id, sig })) =
                    ServerReply::decode(&f.bytes)
                else {
                    return Outcome::Skipped("frame does not decode".to_owned());
                };
                let name = self.actors[b].name.clone();
                self.net
                    .inject(ADVERSARY, &name, f.kind, &f.bytes, None, Fate::Delivered);
                match self.actors[b].wallet.ta_mut() {
                    Some(ta) => match ta.deposit(amount, id, &sig) {
                        Ok(()) => Outcome::Ok("TA applied the deposit".to_owned()),
                        Err(e) => Outcome::Failed(format!("TA: {e}")),
                    },
                    None => Outcome::Failed("no TA".to_owned()),
                }
            }
            Some(WireKind::PaymentTransfer) => {
                let Some(rec) = f.payment else {
                    return Outcome::Skipped("frame carries no issued payment".to_owned());
                };
                let b = self.payments[rec].to;
                let name = self.actors[b].name.clone();
                self.net.inject(
                    ADVERSARY,
                    &name,
                    f.kind,
                    &f.bytes,
                    Some(rec),
                    Fate::Delivered,
                );
                self.offer(rec, b, &f.bytes)
            }
            other => Outcome::Skipped(format!(
                "no endpoint accepts a replayed {}",
                other.map_or("abort", WireKind::name)
            )),
        }
    }

    /// The client a server reply was meant for. Replies to replayed
    /// requests went to the adversary; they belong to the request's signer.
    fn owner_of_reply(&self, f: &CapturedFrame) -> Option<usize> {
        if let Some(i) = self.actors.iter().position(|a| a.name == f.to) {
            return Some(i);
        }
        let req = self
            .net
            .frames()
            .iter()
            .rev()
            .find(|g| g.seq < f.seq && g.to == SERVER)?;
        let sender = AuthedRequest::decode(&req.bytes).ok()?.sender_vk;
        self.actors.iter().position(|a| a.wallet.vk() == sender)
    }

    fn forward(&mut self, r: FrameRef, to: &str) -> Outcome {
        let Some(f) = self.net.resolve(r).cloned() else {
            return self.unresolved(format!("frame {r}"));
        };
        let (Some(rec), Some(WireKind::PaymentTransfer)) = (f.payment, f.kind) else {
            return Outcome::Skipped("only payment transfers can be forwarded".to_owned());
        };
        let c = self.index_of(to);
        let p = self.payments[rec].payment.clone();
        let req = match self.actors[c].wallet.request_payment(p.amount) {
            Ok(r) => r,
            Err(e) => return Outcome::Failed(format!("receiver cannot request: {e}")),
        };
        self.net
            .inject(ADVERSARY, to, f.kind, &f.bytes, Some(rec), Fate::Delivered);
        match self.actors[c].wallet.accept_payment(&p, &req) {
            Ok(_) => {
                self.payments[rec].status = PaymentStatus::Accepted;
                Outcome::Ok(format!("{to} accepted p{}", rec + 1))
            }
            Err(rej) => fail(rej),
        }
    }

    fn force_claim(&mut self, actor: &str, r: PaymentRef) -> Outcome {
        let Some(rec) = self.resolve_payment(r) else {
            return self.unresolved(format!("payment {r}"));
        };
        let i = self.index_of(actor);
        let payment = self.payments[rec].payment.clone();
        self.with_channel(i, |w, ch, _| {
            w.send_raw(ch, WireMessage::ClaimReq { payment })
                .map(|m| format!("server replied {}", m.kind().name()))
        })
    }

    fn force_collect(&mut self, actor: &str, r: PaymentRef) -> Outcome {
        let Some(rec) = self.resolve_payment(r) else {
            return self.unresolved(format!("payment {r}"));
        };
        let i = self.index_of(actor);
        let payment = self.payments[rec].payment.clone();
        match self.actors[i].wallet.ta_mut() {
            Some(ta) => match ta.collect(&payment) {
                Ok(()) => Outcome::Ok(format!("TA collected p{}", rec + 1)),
                Err(e) => Outcome::Failed(format!("TA: {e}")),
            },
            None => Outcome::Failed("no TA".to_owned()),
        }
    }

    fn force_withdraw(&mut self, actor: &str, r: FrameRef) -> Outcome {
        let Some(f) = self.net.resolve(r).cloned() else {
            return self.unresolved(format!("frame {r}"));
        };
        let message = match AuthedRequest::decode(&f.bytes) {
            Ok(
                req @ AuthedRequest {
                    message: WireMessage::WithdrawReq { .. },
                    ..
                },
            ) => req.message,
            _ => return Outcome::Skipped("frame is not a withdraw request".to_owned()),
        };
        let i = self.index_of(actor);
        self.with_channel(i, |w, ch, _| {
            w.send_raw(ch, message)
                .map(|m| format!("server replied {}", m.kind().name()))
        })
    }

    fn rollback(&mut self, actor: &str, name: &str, tamper_mic: bool) -> Outcome {
        let i = self.index_of(actor);
        let Some(snap) = self.actors[i].snapshots.get(name).cloned() else {
            return self.unresolved(format!("snapshot {name}"));
        };
        let Some(mut blob) = snap else {
            return Outcome::Skipped("snapshot of an empty store".to_owned());
        };
        if tamper_mic && blob.len() >= BLOB_HEADER_LEN {
            // low byte of the counter field
            blob[8] ^= 0x01;
        }
        self.inject_blob(i, blob)
    }

    /// Puts `blob` into the actor's untrusted storage and probes whether
    /// the TA notices.
    fn inject_blob(&mut self, i: usize, blob: Vec<u8>) -> Outcome {
        let actor = &mut self.actors[i];
        let Some(ta) = actor.wallet.ta_mut() else {
            return Outcome::Skipped("no TA".to_owned());
        };
        let mic = ta.store().mic();
        let is_true = actor.true_blob.as_deref() == Some(blob.as_slice());
        ta.store_mut().replace_blob(blob);
        if is_true {
            actor.freeze = None;
            return Outcome::Ok("restored the current blob".to_owned());
        }
        let probe = ta.view();
        let injection = self.injections.len();
        self.injections.push(probe.is_err());
        self.stats.store_injections += 1;
        match actor.freeze {
            Some(_) => {}
            None => actor.freeze = Some(Freeze { mic, injection }),
        }
        if let Some(f) = &mut actor.freeze {
            f.injection = injection;
        }
        match probe {
            Err(e) => Outcome::Ok(format!("blob replaced; TA reports {e}")),
            Ok(_) => {
                let name = actor.name.clone();
                self.violate(
                    Property::RollbackDefense,
                    format!("{name}'s TA accepted a foreign blob"),
                );
                Outcome::Ok("blob replaced; TA did not notice".to_owned())
            }
        }
    }

    fn heal(&mut self, actor: &str) -> Outcome {
        let i = self.index_of(actor);
        let a = &mut self.actors[i];
        if a.freeze.take().is_none() {
            return Outcome::Ok("store untouched".to_owned());
        }
        match (a.wallet.ta_mut(), a.true_blob.clone()) {
            (Some(ta), Some(blob)) => {
                ta.store_mut().replace_blob(blob);
                Outcome::Ok("true blob restored".to_owned())
            }
            _ => Outcome::Skipped("nothing to restore".to_owned()),
        }
    }

    /// Tracks the genuine blob of every healthy store and checks that no
    /// frozen TA changed state.
    fn settle_stores(&mut self) {
        let mut breaches = Vec::new();
        for a in &mut self.actors {
            let Some(ta) = a.wallet.ta() else { continue };
            match a.freeze {
                None => a.true_blob = ta.store().blob().map(<[u8]>::to_vec),
                Some(f) => {
                    if ta.store().mic() != f.mic || ta.view().is_ok() {
                        breaches.push((a.name.clone(), f.injection));
                        // track the new state so the audit stays meaningful
                        a.true_blob = ta.store().blob().map(<[u8]>::to_vec);
                        a.freeze = None;
                    }
                }
            }
        }
        for (name, injection) in breaches {
            self.injections[injection] = false;
            self.violate(
                Property::RollbackDefense,
                format!("{name}'s TA operated on a restored blob"),
            );
        }
    }

    fn true_view(&self, a: &Actor) -> Result<Option<TaView>, StoreError> {
        let Some(ta) = a.wallet.ta() else {
            return Ok(None);
        };
        let view = match (&a.freeze, &a.true_blob) {
            (Some(_), Some(blob)) => ta.view_of_blob(blob),
            (Some(_), None) => return Ok(None),
            (None, _) => ta.view(),
        };
        match view {
            Ok(v) => Ok(Some(v)),
            Err(StoreError::Empty) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn check_counters(&mut self, i: usize) {
        self.stats.counter_checks += 1;
        let a = &self.actors[i];
        let server_id = self.server.idctr(&a.wallet.vk());
        let ta_id = self.true_view(a).ok().flatten().map(|v| v.id);
        if server_id != ta_id {
            let name = a.name.clone();
            self.violate(
                Property::CounterSync,
                format!("{name}: server counter {server_id:?}, TA counter {ta_id:?}"),
            );
        }
    }

    /// Computes the value ledger from ground truth: server state, genuine
    /// TA state and the payment records.
    pub fn ledger(&self) -> (Ledger, Vec<String>) {
        let mut problems = Vec::new();
        let mut holdings = BTreeMap::new();
        let mut views = Vec::with_capacity(self.actors.len());
        let mut inflight: u128 = 0;
        let mut destroyed: u128 = u128::from(self.crash_lost);
        let mut offline: u128 = 0;

        for a in &self.actors {
            let vk = a.wallet.vk();
            let view = match self.true_view(a) {
                Ok(v) => v,
                Err(e) => {
                    problems.push(format!("{}'s store is unreadable: {e}", a.name));
                    None
                }
            };
            let mut h = Holding {
                online: self.server.onbal(&vk).unwrap_or(0),
                ..Holding::default()
            };
            let ta_id = view.as_ref().map_or(0, |v| v.id);
            h.offline = view.as_ref().map_or(0, |v| v.bal);
            if let Some(&(id, x)) = self.server.state().last_deposit.get(&vk) {
                if ta_id < id {
                    h.pending += x;
                }
            }
            if let Some(WireMessage::WithdrawReq { amount, id, .. }) =
                a.wallet.pending_withdraw().map(|r| &r.message)
            {
                if self.server.idctr(&vk).unwrap_or(0) < *id {
                    h.pending += amount;
                }
            }
            offline += u128::from(h.offline);
            inflight += u128::from(h.pending);
            holdings.insert(a.name.clone(), h);
            views.push(view);
        }

        for r in &self.payments {
            let p = &r.payment;
            let key = p.key();
            let redeemed = match p.receiver.kind {
                CertKind::Ua => self.server.is_claimed(&key),
                CertKind::Ta => views[r.to].as_ref().is_some_and(|v| v.iplog.contains(&key)),
            };
            if redeemed {
                continue;
            }
            holdings
                .get_mut(&self.actors[r.to].name)
                .expect("actor present")
                .receivable += p.amount;
            if r.status.is_live() {
                inflight += u128::from(p.amount);
            } else {
                destroyed += u128::from(p.amount);
            }
        }

        let clamp = |v: u128| u64::try_from(v).unwrap_or(u64::MAX);
        let ledger = Ledger {
            minted: self.server.minted(),
            online: self.server.total_online(),
            offline: clamp(offline),
            inflight: clamp(inflight),
            destroyed: clamp(destroyed),
            holdings,
        };
        (ledger, problems)
    }

    fn audit(&mut self, before: Option<&BTreeMap<String, Holding>>, text: &str) {
        let (ledger, problems) = self.ledger();
        self.stats.audits += 1;
        for p in problems {
            self.violate(Property::Conservation, p);
        }
        self.net.trace.push(TraceEvent::Audit {
            index: self.step,
            minted: ledger.minted,
            online: ledger.online,
            offline: ledger.offline,
            inflight: ledger.inflight,
            destroyed: ledger.destroyed,
        });
        if !ledger.balances() {
            self.violate(
                Property::Conservation,
                format!(
                    "minted {} != online {} + offline {} + in-flight {} + destroyed {}",
                    ledger.minted, ledger.online, ledger.offline, ledger.inflight, ledger.destroyed
                ),
            );
        }
        if let Some(before) = before {
            for (name, h) in &ledger.holdings {
                let was = before.get(name).map_or(0, Holding::wealth);
                if h.wealth() != was {
                    self.violate(
                        Property::NoDoubleSpend,
                        format!(
                            "'{text}' moved {name}'s holdings from {was} to {}",
                            h.wealth()
                        ),
                    );
                }
            }
        }
        self.last = ledger;
    }

    /// Final counter check for every idle actor with an active TA.
    fn final_checks(&mut self) {
        for i in 0..self.actors.len() {
            let a = &self.actors[i];
            let idle =
                a.wallet.pending_deposit().is_none() && a.wallet.pending_withdraw().is_none();
            if idle && a.freeze.is_none() && a.wallet.is_ta_active() {
                self.check_counters(i);
            }
        }
    }

    pub fn report(&self) -> AuditReport {
        let mut stats = self.stats.clone();
        stats.steps = u64::from(self.step);
        stats.store_detected = self.injections.iter().filter(|d| **d).count() as u64;
        AuditReport {
            minted_total: self.last.minted,
            sum_online: self.last.online,
            sum_offline: self.last.offline,
            sum_inflight: self.last.inflight,
            sum_destroyed: self.last.destroyed,
            holdings: self.last.holdings.clone(),
            violations: self.violations.clone(),
            warnings: self.warnings.clone(),
            stats,
        }
    }

    pub fn finish(mut self) -> RunResult {
        self.final_checks();
        RunResult {
            report: self.report(),
            trace: self.net.trace,
            outcomes: self.outcomes,
        }
    }
}

fn summarize(verb: &str, results: impl Iterator<Item = Result<(), String>>) -> Outcome {
    let (mut ok, mut errs) = (0usize, Vec::new());
    for r in results {
        match r {
            Ok(()) => ok += 1,
            Err(e) => errs.push(e),
        }
    }
    match (ok, errs.is_empty()) {
        (0, true) => Outcome::Ok(format!("nothing to {}", verb.trim_end_matches("ed"))),
        (n, true) => Outcome::Ok(format!("{verb} {n}")),
        (n, false) => Outcome::Failed(format!(
            "{verb} {n}, failed {}: {}",
            errs.len(),
            errs.join("; ")
        )),
    }
}

/// Runs every step of `script` and returns the report and trace.
pub fn run_scenario(script: &ScenarioScript) -> RunResult {
    let mut world = World::new(script.seed, &script.actors);
    for step in &script.steps {
        world.apply(step);
    }
    world.finish()
}
