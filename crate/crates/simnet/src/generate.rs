//! Seeded random scenario generation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ops_core::WireKind;

use crate::script::{ActorDecl, CrashPoint, FrameRef, PaymentRef, ScenarioScript, Step};

/// Which injections a generated scenario may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Protocol actions only.
    Honest,
    /// Actions plus attacks whose effect on value is fully predictable:
    /// replays, forwarding, forced claims and collects, store rollback.
    /// No lost, mutated or reordered traffic and no crashes.
    OracleSafe,
    /// Everything, including drops, tampering, reordering and crashes.
    Adversarial,
}

/// Three TEE handsets of different models and one plain client.
pub fn standard_actors() -> Vec<ActorDecl> {
    let tee = |name: &str, model: &str| ActorDecl {
        name: name.into(),
        tee: true,
        model: model.into(),
    };
    vec![
        tee("a", "handset-a1"),
        tee("b", "handset-b2"),
        tee("c", "handset-a1"),
        ActorDecl {
            name: "d".into(),
            tee: false,
            model: crate::script::DEFAULT_MODEL.into(),
        },
    ]
}

/// Registers everyone, activates every TA and hands out starting funds.
pub fn standard_preamble(actors: &[ActorDecl]) -> Vec<Step> {
    let mut steps: Vec<Step> = actors
        .iter()
        .map(|a| Step::Register(a.name.clone()))
        .collect();
    steps.extend(
        actors
            .iter()
            .filter(|a| a.tee)
            .map(|a| Step::SetupTa(a.name.clone())),
    );
    for (i, a) in actors.iter().enumerate() {
        let funds = 12 - 2 * i as u64;
        steps.push(Step::Mint(a.name.clone(), funds));
        if a.tee {
            steps.push(Step::Deposit(a.name.clone(), funds / 2));
        }
    }
    steps
}

const SERVER_BOUND: [WireKind; 4] = [
    WireKind::DepositReq,
    WireKind::WithdrawReq,
    WireKind::ClaimReq,
    WireKind::TaRegister,
];

fn pick<'a, R: Rng>(rng: &mut R, actors: &'a [ActorDecl]) -> &'a str {
    &actors.choose(rng).expect("at least one actor").name
}

fn honest_step<R: Rng>(rng: &mut R, actors: &[ActorDecl]) -> Step {
    let a = pick(rng, actors).to_owned();
    let x = rng.gen_range(1..=5);
    match rng.gen_range(0..100) {
        0..=34 => Step::Pay {
            from: a,
            to: pick(rng, actors).to_owned(),
            amount: x,
            ua: rng.gen_bool(0.3),
        },
        35..=46 => Step::Deposit(a, x),
        47..=58 => Step::Withdraw(a, x),
        59..=66 => Step::Mint(a, rng.gen_range(1..=10)),
        67..=78 => Step::Claim(a),
        79..=84 => Step::Collect(a),
        85..=92 => Step::GoOffline(a),
        _ => Step::GoOnline(a),
    }
}

fn safe_attack<R: Rng>(rng: &mut R, actors: &[ActorDecl]) -> Step {
    let a = pick(rng, actors).to_owned();
    let pref = if rng.gen_bool(0.7) {
        PaymentRef::Last
    } else {
        PaymentRef::Index(rng.gen_range(1..=6))
    };
    let snap = format!("s{}", rng.gen_range(0..2));
    match rng.gen_range(0..11) {
        0 => Step::Replay(FrameRef::Last(
            *SERVER_BOUND.choose(rng).expect("non-empty"),
        )),
        1 => Step::Replay(FrameRef::Last(WireKind::DepositConfirmed)),
        2 => Step::Replay(FrameRef::Last(WireKind::PaymentTransfer)),
        3 => Step::Forward {
            frame: FrameRef::Last(WireKind::PaymentTransfer),
            to: a,
        },
        4 => Step::ForceClaim {
            actor: a,
            payment: pref,
        },
        5 => Step::ForceCollect {
            actor: a,
            payment: pref,
        },
        6 => Step::ForceWithdraw {
            actor: a,
            frame: FrameRef::Last(WireKind::WithdrawReq),
        },
        7 => Step::Snapshot {
            actor: a,
            name: snap,
        },
        8 => Step::Rollback {
            actor: a,
            name: snap,
            tamper_mic: rng.gen_bool(0.25),
        },
        9 => Step::Heal(a),
        _ => Step::TamperStore {
            actor: a,
            offset: rng.gen_range(0..200),
        },
    }
}

fn fault<R: Rng>(rng: &mut R, actors: &[ActorDecl]) -> Step {
    let kinds = [
        None,
        Some(WireKind::DepositReq),
        Some(WireKind::DepositConfirmed),
        Some(WireKind::WithdrawReq),
        Some(WireKind::WithdrawConfirmed),
        Some(WireKind::ClaimReq),
        Some(WireKind::ClaimConfirmed),
        Some(WireKind::PaymentTransfer),
        Some(WireKind::PayReq),
    ];
    let kind = *kinds.choose(rng).expect("non-empty");
    match rng.gen_range(0..8) {
        0 | 1 => Step::Drop {
            kind,
            count: rng.gen_range(1..=2),
        },
        2 | 3 => Step::Tamper {
            kind,
            offset: rng.gen_range(0..160),
            xor: rng.gen_range(1..=255),
        },
        4 => Step::Reorder(rng.gen_range(2..=3)),
        5 => Step::Crash {
            actor: pick(rng, actors).to_owned(),
            point: *CrashPoint::ALL.choose(rng).expect("non-empty"),
        },
        6 => Step::Resume(pick(rng, actors).to_owned()),
        _ => Step::Flush,
    }
}

/// `n` random steps over `actors`.
pub fn random_steps<R: Rng>(rng: &mut R, actors: &[ActorDecl], n: usize, mode: Mode) -> Vec<Step> {
    let mut steps = Vec::with_capacity(n);
    let mut snapshots: Vec<(String, String)> = Vec::new();
    while steps.len() < n {
        let roll = rng.gen_range(0..100);
        let step = match mode {
            Mode::OracleSafe if roll < 30 => safe_attack(rng, actors),
            Mode::Adversarial if roll < 20 => safe_attack(rng, actors),
            Mode::Adversarial if roll < 40 => fault(rng, actors),
            _ => honest_step(rng, actors),
        };
        // scripts may only roll back to snapshots taken earlier
        match &step {
            Step::Snapshot { actor, name } => snapshots.push((actor.clone(), name.clone())),
            Step::Rollback { actor, name, .. }
                if !snapshots.contains(&(actor.clone(), name.clone())) =>
            {
                continue
            }
            _ => {}
        }
        steps.push(step);
    }
    steps
}

/// A complete random scenario: standard actors and preamble, then `len`
/// random steps.
pub fn random_script(seed: u64, len: usize, mode: Mode) -> ScenarioScript {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_0f5c_e4a7_10a5);
    let actors = standard_actors();
    let mut steps = standard_preamble(&actors);
    steps.extend(random_steps(&mut rng, &actors, len, mode));
    ScenarioScript {
        seed,
        actors,
        steps,
    }
}
