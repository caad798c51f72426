//! The double-spend catalogue.
//!
//! Each strategy is a short attack core embedded in random noise. A run
//! passes when the auditor records no violation (in particular, no
//! adversary step changes anyone's holdings) and every step marked
//! [`Role::MustFail`] is refused.

use std::fmt;
use std::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ops_core::WireKind;

use crate::generate::{random_steps, standard_actors, standard_preamble, Mode};
use crate::report::{AuditReport, Violation};
use crate::script::{FrameRef, PaymentRef, ScenarioScript, Step};
use crate::world::{Outcome, RunResult, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    ClaimClaim,
    CollectCollect,
    ClaimCollect,
    ReplayDeposit,
    ReplayWithdraw,
    ReplayPayment,
    ForwardPayment,
    RollbackTa,
}

/// How a core step is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Noise; anything goes.
    Free,
    /// Sets the attack up; the run is only conclusive if it succeeds.
    Setup,
    /// The attack itself; must be refused.
    MustFail,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::ClaimClaim,
        Strategy::CollectCollect,
        Strategy::ClaimCollect,
        Strategy::ReplayDeposit,
        Strategy::ReplayWithdraw,
        Strategy::ReplayPayment,
        Strategy::ForwardPayment,
        Strategy::RollbackTa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ClaimClaim => "claim-claim",
            Strategy::CollectCollect => "collect-collect",
            Strategy::ClaimCollect => "claim-collect",
            Strategy::ReplayDeposit => "replay-deposit",
            Strategy::ReplayWithdraw => "replay-withdraw",
            Strategy::ReplayPayment => "replay-payment",
            Strategy::ForwardPayment => "forward-payment",
            Strategy::RollbackTa => "rollback-ta",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// The attack core for amount `x` (1..=3).
    pub fn core(self, x: u64) -> Vec<(Step, Role)> {
        use Role::{Free, MustFail, Setup};
        let s = |v: &str| v.to_owned();
        let last = |k| FrameRef::Last(k);
        let fund = vec![
            (Step::Mint(s("a"), 10), Setup),
            (Step::Deposit(s("a"), 10), Setup),
        ];
        let pay = |to: &str, ua| Step::Pay {
            from: s("a"),
            to: s(to),
            amount: x,
            ua,
        };
        let mut core = fund;
        core.extend(match self {
            Strategy::ClaimClaim => vec![
                (pay("d", true), Setup),
                (Step::Claim(s("d")), Setup),
                (
                    Step::ForceClaim {
                        actor: s("d"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
                (
                    Step::ForceClaim {
                        actor: s("a"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
                (
                    Step::ForceClaim {
                        actor: s("b"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
                (Step::Replay(last(WireKind::ClaimReq)), Free),
                (Step::Claim(s("d")), Free),
            ],
            Strategy::CollectCollect => vec![
                (pay("b", false), Setup),
                (
                    Step::ForceCollect {
                        actor: s("b"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
                (Step::Replay(last(WireKind::PaymentTransfer)), MustFail),
                (Step::Collect(s("b")), Free),
                (
                    Step::ForceCollect {
                        actor: s("b"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
            ],
            Strategy::ClaimCollect => vec![
                (pay("b", false), Setup),
                (
                    Step::ForceClaim {
                        actor: s("b"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
                (
                    Step::ForceClaim {
                        actor: s("a"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
                (pay("b", true), Setup),
                (Step::Claim(s("b")), Setup),
                (
                    Step::ForceCollect {
                        actor: s("b"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
                (
                    Step::ForceCollect {
                        actor: s("c"),
                        payment: PaymentRef::Last,
                    },
                    MustFail,
                ),
            ],
            Strategy::ReplayDeposit => vec![
                (Step::Mint(s("a"), x), Setup),
                (Step::Deposit(s("a"), x), Setup),
                (Step::Replay(last(WireKind::DepositConfirmed)), MustFail),
                (Step::Replay(last(WireKind::DepositReq)), Free),
                (Step::Replay(last(WireKind::DepositConfirmed)), MustFail),
                (Step::Withdraw(s("a"), 1), Setup),
                (Step::Replay(last(WireKind::DepositConfirmed)), MustFail),
            ],
            Strategy::ReplayWithdraw => vec![
                (Step::Withdraw(s("a"), x), Setup),
                (Step::Replay(last(WireKind::WithdrawReq)), Free),
                (
                    Step::ForceWithdraw {
                        actor: s("a"),
                        frame: last(WireKind::WithdrawReq),
                    },
                    MustFail,
                ),
                (
                    Step::ForceWithdraw {
                        actor: s("b"),
                        frame: last(WireKind::WithdrawReq),
                    },
                    MustFail,
                ),
                (Step::Deposit(s("a"), 1), Setup),
                (
                    Step::ForceWithdraw {
                        actor: s("a"),
                        frame: last(WireKind::WithdrawReq),
                    },
                    MustFail,
                ),
            ],
            Strategy::ReplayPayment => vec![
                (pay("b", false), Setup),
                (Step::Replay(last(WireKind::PaymentTransfer)), MustFail),
                (pay("d", true), Setup),
                (Step::Replay(last(WireKind::PaymentTransfer)), MustFail),
                (Step::Claim(s("d")), Setup),
                (Step::Replay(last(WireKind::PaymentTransfer)), MustFail),
            ],
            Strategy::ForwardPayment => vec![
                (pay("b", false), Setup),
                (
                    Step::Forward {
                        frame: last(WireKind::PaymentTransfer),
                        to: s("c"),
                    },
                    MustFail,
                ),
                (
                    Step::Forward {
                        frame: last(WireKind::PaymentTransfer),
                        to: s("d"),
                    },
                    MustFail,
                ),
                (
                    Step::Forward {
                        frame: last(WireKind::PaymentTransfer),
                        to: s("a"),
                    },
                    MustFail,
                ),
                (pay("d", true), Setup),
                (
                    Step::Forward {
                        frame: last(WireKind::PaymentTransfer),
                        to: s("b"),
                    },
                    MustFail,
                ),
                (
                    Step::Forward {
                        frame: last(WireKind::PaymentTransfer),
                        to: s("c"),
                    },
                    MustFail,
                ),
            ],
            Strategy::RollbackTa => vec![
                (
                    Step::Snapshot {
                        actor: s("a"),
                        name: s("before"),
                    },
                    Setup,
                ),
                (pay("b", false), Setup),
                (
                    Step::Rollback {
                        actor: s("a"),
                        name: s("before"),
                        tamper_mic: false,
                    },
                    Setup,
                ),
                (
                    Step::Pay {
                        from: s("a"),
                        to: s("c"),
                        amount: x,
                        ua: false,
                    },
                    MustFail,
                ),
                (Step::Withdraw(s("a"), 1), MustFail),
                (Step::Deposit(s("a"), 1), MustFail),
                (Step::Heal(s("a")), Setup),
                (
                    Step::Pay {
                        from: s("a"),
                        to: s("c"),
                        amount: 1,
                        ua: false,
                    },
                    Setup,
                ),
                (
                    Step::Snapshot {
                        actor: s("a"),
                        name: s("now"),
                    },
                    Setup,
                ),
                (
                    Step::Rollback {
                        actor: s("a"),
                        name: s("now"),
                        tamper_mic: true,
                    },
                    Setup,
                ),
                (
                    Step::Pay {
                        from: s("a"),
                        to: s("b"),
                        amount: 1,
                        ua: true,
                    },
                    MustFail,
                ),
                (Step::Heal(s("a")), Setup),
            ],
        });
        core
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Steps that return every actor to a quiet, online, idle state.
fn calm_down(actors: &[crate::script::ActorDecl]) -> Vec<Step> {
    let mut steps = vec![Step::ResetFaults];
    steps.extend(
        actors
            .iter()
            .filter(|a| a.tee)
            .map(|a| Step::Heal(a.name.clone())),
    );
    steps.extend(actors.iter().map(|a| Step::GoOnline(a.name.clone())));
    steps.extend(actors.iter().map(|a| Step::Resume(a.name.clone())));
    steps
}

/// Builds the scenario for one strategy and seed. `noise` picks the
/// alphabet of the random prologue and epilogue.
pub fn build(strategy: Strategy, seed: u64, noise: Mode) -> (ScenarioScript, Vec<Role>) {
    let mut rng =
        ChaCha20Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ strategy as u64);
    let actors = standard_actors();
    let mut steps = standard_preamble(&actors);
    let prologue_len = rng.gen_range(2..=6);
    steps.extend(random_steps(&mut rng, &actors, prologue_len, noise));
    steps.extend(calm_down(&actors));
    let mut roles = vec![Role::Free; steps.len()];
    for (step, role) in strategy.core(rng.gen_range(1..=3)) {
        steps.push(step);
        roles.push(role);
    }
    let epilogue_len = rng.gen_range(0..=3);
    steps.extend(random_steps(&mut rng, &actors, epilogue_len, noise));
    roles.resize(steps.len(), Role::Free);
    (
        ScenarioScript {
            seed,
            actors,
            steps,
        },
        roles,
    )
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub result: RunResult,
    /// Every setup step succeeded, so the attack really was attempted.
    pub conclusive: bool,
    /// Attack steps that were not refused, as `(step index, outcome)`.
    pub unrefused: Vec<(u32, Outcome)>,
}

impl StrategyRun {
    pub fn passed(&self) -> bool {
        self.result.report.is_clean() && self.unrefused.is_empty()
    }
}

pub fn judge(result: RunResult, roles: &[Role]) -> StrategyRun {
    let mut conclusive = true;
    let mut unrefused = Vec::new();
    for (o, role) in result.outcomes.iter().zip(roles) {
        match role {
            Role::Setup if !o.outcome.is_ok() => conclusive = false,
            Role::MustFail if !o.outcome.is_failed() => {
                unrefused.push((o.index, o.outcome.clone()))
            }
            _ => {}
        }
    }
    StrategyRun {
        result,
        conclusive,
        unrefused,
    }
}

pub fn run_strategy(strategy: Strategy, seed: u64, noise: Mode) -> StrategyRun {
    let (script, roles) = build(strategy, seed, noise);
    let mut world = World::new(script.seed, &script.actors);
    for step in &script.steps {
        world.apply(step);
    }
    judge(world.finish(), &roles)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StrategyTally {
    pub runs: u64,
    pub conclusive: u64,
    pub failed_runs: u64,
    pub unrefused_attacks: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub tallies: Vec<(Strategy, StrategyTally)>,
    /// Totals across every run; violations carry strategy and seed.
    pub report: AuditReport,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.report.is_clean() && self.tallies.iter().all(|(_, t)| t.failed_runs == 0)
    }
}

/// Runs every strategy once per seed and aggregates the results.
pub fn double_spend_suite(seeds: Range<u64>, noise: Mode) -> SuiteReport {
    let mut suite = SuiteReport::default();
    for strategy in Strategy::ALL {
        let mut t = StrategyTally::default();
        for seed in seeds.clone() {
            let run = run_strategy(strategy, seed, noise);
            t.runs += 1;
            t.conclusive += u64::from(run.conclusive);
            t.failed_runs += u64::from(!run.passed());
            t.unrefused_attacks += run.unrefused.len() as u64;
            let r = &run.result.report;
            t.violations += r.violations.len() as u64;
            for v in &r.violations {
                suite.report.violations.push(Violation {
                    step: v.step,
                    property: v.property,
                    detail: format!("{strategy} seed {seed}: {}", v.detail),
                });
            }
            for (step, o) in &run.unrefused {
                suite.report.warnings.push((
                    *step,
                    format!("{strategy} seed {seed}: attack not refused: {}", o.text()),
                ));
            }
            suite.report.minted_total += r.minted_total;
            suite.report.sum_online += r.sum_online;
            suite.report.sum_offline += r.sum_offline;
            suite.report.sum_inflight += r.sum_inflight;
            suite.report.sum_destroyed += r.sum_destroyed;
            suite.report.stats.absorb(&r.stats);
        }
        suite.tallies.push((strategy, t));
    }
    suite
}
