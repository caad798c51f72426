//! Audit results.

use std::collections::BTreeMap;
use std::fmt;

/// Value attributable to one actor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Holding {
    pub online: u64,
    /// Genuine TA balance, read from the last blob the TA wrote itself.
    pub offline: u64,
    /// Released payments addressed to this actor and not yet redeemed,
    /// whatever happened to them in transit.
    pub receivable: u64,
    /// Own value inside an unfinished deposit or withdraw round.
    pub pending: u64,
}

impl Holding {
    pub fn wealth(&self) -> u64 {
        self.online + self.offline + self.receivable + self.pending
    }
}

/// Supply decomposition at one instant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    pub minted: u64,
    pub online: u64,
    pub offline: u64,
    /// Accepted or travelling payments not yet redeemed, plus unfinished
    /// deposit and withdraw rounds.
    pub inflight: u64,
    /// Payments rejected or lost in transit, and debits lost to crashes.
    pub destroyed: u64,
    pub holdings: BTreeMap<String, Holding>,
}

impl Ledger {
    pub fn balances(&self) -> bool {
        let total = u128::from(self.online)
            + u128::from(self.offline)
            + u128::from(self.inflight)
            + u128::from(self.destroyed);
        total == u128::from(self.minted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    Conservation,
    CounterSync,
    RollbackDefense,
    OfflineVerifiability,
    NoDoubleSpend,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Conservation => "conservation",
            Property::CounterSync => "counter-sync",
            Property::RollbackDefense => "rollback-defense",
            Property::OfflineVerifiability => "offline-verifiability",
            Property::NoDoubleSpend => "no-double-spend",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub step: u32,
    pub property: Property,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: {}: {}", self.step, self.property, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub steps: u64,
    pub audits: u64,
    pub attack_steps: u64,
    pub refused_attacks: u64,
    pub store_injections: u64,
    pub store_detected: u64,
    pub counter_checks: u64,
    pub offline_steps: u64,
}

impl Stats {
    pub fn absorb(&mut self, o: &Stats) {
        self.steps += o.steps;
        self.audits += o.audits;
        self.attack_steps += o.attack_steps;
        self.refused_attacks += o.refused_attacks;
        self.store_injections += o.store_injections;
        self.store_detected += o.store_detected;
        self.counter_checks += o.counter_checks;
        self.offline_steps += o.offline_steps;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub minted_total: u64,
    pub sum_online: u64,
    pub sum_offline: u64,
    pub sum_inflight: u64,
    pub sum_destroyed: u64,
    pub holdings: BTreeMap<String, Holding>,
    pub violations: Vec<Violation>,
    /// `(step, text)`; destroyed value and skipped references.
    pub warnings: Vec<(u32, String)>,
    pub stats: Stats,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "minted {}  online {}  offline {}  in-flight {}  destroyed {}\n",
            self.minted_total,
            self.sum_online,
            self.sum_offline,
            self.sum_inflight,
            self.sum_destroyed
        );
        for (name, h) in &self.holdings {
            out.push_str(&format!(
                "  {name}: online {} offline {} receivable {} pending {}\n",
                h.online, h.offline, h.receivable, h.pending
            ));
        }
        let s = &self.stats;
        out.push_str(&format!(
            "steps {}  attacks {} (refused {})  store injections {} (detected {})  counter checks {}\n",
            s.steps, s.attack_steps, s.refused_attacks, s.store_injections, s.store_detected, s.counter_checks
        ));
        for (step, w) in &self.warnings {
            out.push_str(&format!("warning: step {step}: {w}\n"));
        }
        for v in &self.violations {
            out.push_str(&format!("VIOLATION: {v}\n"));
        }
        out
    }
}
