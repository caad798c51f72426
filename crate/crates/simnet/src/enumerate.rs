//! Exhaustive enumeration of short attack sequences.
//!
//! For each strategy a small alphabet of moves (honest actions that set the
//! attack up, and the attack moves themselves) is explored to a fixed depth
//! from a common starting world. Every node is a complete world state; the
//! visitor sees the path that produced it.

use ops_core::WireKind;

use crate::generate::{standard_actors, standard_preamble};
use crate::script::{ActorDecl, FrameRef, PaymentRef, Step};
use crate::strategies::Strategy;
use crate::world::World;

/// Bounds of the exhaustive search.
pub const MAX_DEPTH: usize = 6;
pub const AMOUNTS: [u64; 3] = [1, 2, 3];

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub strategy: Strategy,
    pub actors: Vec<ActorDecl>,
    pub preamble: Vec<Step>,
    pub alphabet: Vec<Step>,
    pub depth: usize,
}

fn s(v: &str) -> String {
    v.to_owned()
}

fn pay(from: &str, to: &str, amount: u64, ua: bool) -> Step {
    Step::Pay {
        from: s(from),
        to: s(to),
        amount,
        ua,
    }
}

fn last(kind: WireKind) -> FrameRef {
    FrameRef::Last(kind)
}

impl Enumeration {
    /// The search space for `strategy`: four actors, depth six, amounts
    /// drawn from [`AMOUNTS`].
    pub fn for_strategy(strategy: Strategy) -> Self {
        let actors = standard_actors();
        let mut preamble = standard_preamble(&actors);
        if strategy == Strategy::RollbackTa {
            preamble.push(Step::Snapshot {
                actor: s("a"),
                name: s("s"),
            });
        }
        let alphabet = match strategy {
            Strategy::ClaimClaim => vec![
                pay("a", "d", 2, true),
                pay("b", "d", 3, true),
                Step::Claim(s("d")),
                Step::ForceClaim {
                    actor: s("d"),
                    payment: PaymentRef::Last,
                },
                Step::ForceClaim {
                    actor: s("a"),
                    payment: PaymentRef::Last,
                },
            ],
            Strategy::CollectCollect => vec![
                pay("a", "b", 1, false),
                pay("b", "a", 3, false),
                Step::Collect(s("b")),
                Step::ForceCollect {
                    actor: s("b"),
                    payment: PaymentRef::Last,
                },
                Step::ForceCollect {
                    actor: s("a"),
                    payment: PaymentRef::Last,
                },
            ],
            Strategy::ClaimCollect => vec![
                pay("a", "b", 2, false),
                pay("a", "b", 3, true),
                Step::Claim(s("b")),
                Step::ForceClaim {
                    actor: s("b"),
                    payment: PaymentRef::Last,
                },
                Step::ForceCollect {
                    actor: s("b"),
                    payment: PaymentRef::Last,
                },
            ],
            Strategy::ReplayDeposit => vec![
                Step::Deposit(s("a"), 1),
                Step::Deposit(s("b"), 3),
                Step::Withdraw(s("a"), 2),
                Step::Replay(last(WireKind::DepositConfirmed)),
                Step::Replay(last(WireKind::DepositReq)),
            ],
            Strategy::ReplayWithdraw => vec![
                Step::Withdraw(s("a"), 1),
                Step::Withdraw(s("b"), 2),
                Step::Deposit(s("a"), 3),
                Step::Replay(last(WireKind::WithdrawReq)),
                Step::ForceWithdraw {
                    actor: s("a"),
                    frame: last(WireKind::WithdrawReq),
                },
            ],
            Strategy::ReplayPayment => vec![
                pay("a", "b", 1, false),
                pay("a", "d", 3, true),
                Step::Claim(s("d")),
                Step::Replay(last(WireKind::PaymentTransfer)),
                Step::Withdraw(s("b"), 2),
            ],
            Strategy::ForwardPayment => vec![
                pay("a", "b", 2, false),
                pay("a", "d", 3, true),
                Step::Forward {
                    frame: last(WireKind::PaymentTransfer),
                    to: s("c"),
                },
                Step::Forward {
                    frame: last(WireKind::PaymentTransfer),
                    to: s("b"),
                },
                Step::Claim(s("d")),
            ],
            Strategy::RollbackTa => vec![
                pay("a", "b", 1, false),
                Step::Rollback {
                    actor: s("a"),
                    name: s("s"),
                    tamper_mic: false,
                },
                Step::Heal(s("a")),
                Step::Withdraw(s("a"), 2),
                Step::Snapshot {
                    actor: s("a"),
                    name: s("s"),
                },
                pay("a", "c", 3, true),
            ],
        };
        Self {
            strategy,
            actors,
            preamble,
            alphabet,
            depth: MAX_DEPTH,
        }
    }

    /// Nodes in the full tree, root included.
    pub fn node_count(&self) -> u64 {
        let k = self.alphabet.len() as u64;
        (0..=self.depth as u32).map(|d| k.pow(d)).sum()
    }

    /// The world every path starts from.
    pub fn root(&self, seed: u64) -> World {
        let mut world = World::new(seed, &self.actors);
        for step in &self.preamble {
            world.apply(step);
        }
        world
    }
}

/// Visits every path of length `0..=e.depth` over `e.alphabet`, depth first
/// in alphabet order. Returns the number of nodes visited.
pub fn explore<F>(e: &Enumeration, seed: u64, mut visit: F) -> u64
where
    F: FnMut(&[Step], &World),
{
    let root = e.root(seed);
    let mut path = Vec::with_capacity(e.depth);
    let mut count = 0;
    walk(e, &root, &mut path, &mut visit, &mut count);
    count
}

fn walk<F>(e: &Enumeration, world: &World, path: &mut Vec<Step>, visit: &mut F, count: &mut u64)
where
    F: FnMut(&[Step], &World),
{
    *count += 1;
    visit(path, world);
    if path.len() == e.depth {
        return;
    }
    for step in &e.alphabet {
        let mut next = world.clone();
        next.apply(step);
        path.push(step.clone());
        walk(e, &next, path, visit, count);
        path.pop();
    }
}
