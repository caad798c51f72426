//! Deterministic simulator for the offline payment protocol.
//!
//! A [`ScenarioScript`] declares actors and a sequence of protocol actions
//! and adversary injections. [`run_scenario`] executes it against real
//! server, wallet and TA state machines, routing every frame through an
//! adversarial network, and audits the world after each step:
//!
//! - supply conservation: minted = online + offline + in-flight (+ value
//!   destroyed by rejection, loss or crash, reported as warnings);
//! - counter synchronization after every completed deposit or withdraw;
//! - rollback defense: every foreign blob placed in a TA store is refused;
//! - offline verifiability: paying never touches the server;
//! - no double spend: adversary steps never change anyone's holdings.

pub mod enumerate;
pub mod generate;
pub mod net;
pub mod report;
pub mod script;
pub mod strategies;
pub mod trace;
pub mod world;

pub use report::{AuditReport, Holding, Ledger, Property, Violation};
pub use script::{ActorDecl, ScenarioScript, ScriptError, Step};
pub use strategies::{double_spend_suite, Strategy, SuiteReport};
pub use trace::{check_trace, Trace, TraceEvent};
pub use world::{run_scenario, Outcome, RunResult, World};
