//! Drivers shared by the integration suites and the acceptance target:
//! strategy runs and exhaustive enumeration, each cross-checked against the
//! reference ledger, with per-attack net-gain accounting.

use std::collections::BTreeMap;

use ops_simnet::enumerate::{explore, Enumeration};
use ops_simnet::generate::Mode;
use ops_simnet::strategies::{build, judge, StrategyRun};
use ops_simnet::trace::{check_trace, TraceCheck};
use ops_simnet::{Property, Step, Strategy, World};

use super::oracle::{matches, Oracle};

/// Per-actor wealth as the world measures it.
pub fn wealth(world: &World) -> BTreeMap<String, u64> {
    world
        .ledger_now()
        .holdings
        .iter()
        .map(|(n, h)| (n.clone(), h.wealth()))
        .collect()
}

/// Total increase in anyone's wealth from `before` to `after`.
pub fn gain(before: &BTreeMap<String, u64>, after: &BTreeMap<String, u64>) -> u64 {
    after
        .iter()
        .map(|(n, w)| w.saturating_sub(before.get(n).copied().unwrap_or(0)))
        .sum()
}

/// Aggregate evidence from many runs.
#[derive(Debug, Default, Clone)]
pub struct Evidence {
    pub runs: u64,
    pub conclusive: u64,
    pub steps: u64,
    pub attack_steps: u64,
    pub unrefused: u64,
    pub net_gain: u64,
    pub oracle_disagreements: Vec<String>,
    pub violations: Vec<String>,
    pub audits: u64,
    pub unbalanced_audits: u64,
    pub counter_checks: u64,
    pub counter_violations: u64,
    pub store_injections: u64,
    pub store_detected: u64,
    pub offline_steps: u64,
    pub server_contact: u64,
}

impl Evidence {
    pub fn absorb_world(&mut self, world: &World) {
        let report = world.report();
        self.steps += report.stats.steps;
        self.audits += report.stats.audits;
        self.counter_checks += report.stats.counter_checks;
        self.store_injections += report.stats.store_injections;
        self.store_detected += report.stats.store_detected;
        for v in world.violations() {
            if v.property == Property::CounterSync {
                self.counter_violations += 1;
            }
            self.violations.push(format!("seed {}: {v}", world.seed()));
        }
        self.absorb_trace(&check_trace(world.trace()));
    }

    pub fn absorb_trace(&mut self, c: &TraceCheck) {
        self.unbalanced_audits += c.unbalanced.len() as u64;
        self.offline_steps += c.offline_steps as u64;
        self.server_contact += c.server_contact.len() as u64;
    }

    pub fn merge(&mut self, o: &Evidence) {
        self.runs += o.runs;
        self.conclusive += o.conclusive;
        self.steps += o.steps;
        self.attack_steps += o.attack_steps;
        self.unrefused += o.unrefused;
        self.net_gain += o.net_gain;
        self.oracle_disagreements
            .extend(o.oracle_disagreements.iter().cloned());
        self.violations.extend(o.violations.iter().cloned());
        self.audits += o.audits;
        self.unbalanced_audits += o.unbalanced_audits;
        self.counter_checks += o.counter_checks;
        self.counter_violations += o.counter_violations;
        self.store_injections += o.store_injections;
        self.store_detected += o.store_detected;
        self.offline_steps += o.offline_steps;
        self.server_contact += o.server_contact;
    }

    /// No attack succeeded, nobody gained, and the model agreed throughout.
    pub fn no_gain(&self) -> bool {
        self.unrefused == 0
            && self.net_gain == 0
            && self.oracle_disagreements.is_empty()
            && self.violations.is_empty()
    }
}

/// One strategy run under reference-ledger-safe noise, checked against the
/// model after every step. Attack steps must be refused and must not raise
/// anyone's wealth.
pub fn strategy_run(strategy: Strategy, seed: u64) -> (StrategyRun, Evidence) {
    let (script, roles) = build(strategy, seed, Mode::OracleSafe);
    let mut world = World::new(script.seed, &script.actors);
    let mut oracle = Oracle::new(&script.actors);
    let mut ev = Evidence {
        runs: 1,
        ..Evidence::default()
    };
    for step in &script.steps {
        let before = wealth(&world);
        let outcome = world.apply(step);
        let expect = oracle.step(step);
        if step.is_attack() {
            ev.attack_steps += 1;
            ev.net_gain += gain(&before, &wealth(&world));
        }
        if !matches(expect, &outcome) {
            ev.oracle_disagreements.push(format!(
                "{strategy} seed {seed}: '{step}' expected {expect:?}, got {outcome:?}"
            ));
        }
        for d in oracle.diff(&world) {
            ev.oracle_disagreements
                .push(format!("{strategy} seed {seed}: after '{step}': {d}"));
        }
    }
    ev.absorb_world(&world);
    let run = judge(world.finish(), &roles);
    ev.conclusive += u64::from(run.conclusive);
    ev.unrefused += run.unrefused.len() as u64;
    (run, ev)
}

pub fn strategy_sweep(strategy: Strategy, seeds: std::ops::Range<u64>) -> Evidence {
    let mut total = Evidence::default();
    for seed in seeds {
        total.merge(&strategy_run(strategy, seed).1);
    }
    total
}

/// Every path of the strategy's bounded search space, checked node by node
/// against the model. `depth` overrides the default bound when given.
pub fn enumeration(strategy: Strategy, seed: u64, depth: Option<usize>) -> Evidence {
    let mut e = Enumeration::for_strategy(strategy);
    if let Some(d) = depth {
        e.depth = d;
    }
    let mut base = Oracle::new(&e.actors);
    for step in &e.preamble {
        base.step(step);
    }
    let mut ev = Evidence::default();
    // wealth along the current path, indexed by depth
    let mut stack: Vec<BTreeMap<String, u64>> = Vec::new();
    let nodes = explore(&e, seed, |path, world| {
        ev.steps += 1;
        let now = wealth(world);
        stack.truncate(path.len());
        if let (Some(step), Some(parent)) = (path.last(), stack.last()) {
            if step.is_attack() {
                ev.attack_steps += 1;
                ev.net_gain += gain(parent, &now);
            }
        }
        stack.push(now);

        let mut oracle = base.clone();
        let mut expect = None;
        for step in path {
            expect = Some(oracle.step(step));
        }
        if let (Some(expect), Some(last)) = (expect, world.outcomes().last()) {
            if !matches(expect, &last.outcome) {
                ev.oracle_disagreements
                    .push(format!("{strategy} {}: expected {expect:?}", show(path)));
            }
        }
        for d in oracle.diff(world) {
            ev.oracle_disagreements
                .push(format!("{strategy} {}: {d}", show(path)));
        }
        for v in world.violations() {
            if v.property == Property::CounterSync {
                ev.counter_violations += 1;
            }
            ev.violations
                .push(format!("{strategy} {}: {v}", show(path)));
        }
        if path.len() == e.depth {
            // leaves carry the whole path's history
            ev.absorb_trace(&check_trace(world.trace()));
            let stats = world.report().stats;
            ev.audits += stats.audits;
            ev.store_injections += stats.store_injections;
            ev.store_detected += stats.store_detected;
            ev.counter_checks += stats.counter_checks;
        }
    });
    ev.runs = nodes;
    ev
}

fn show(path: &[Step]) -> String {
    path.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" / ")
}
