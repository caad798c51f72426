//! `ops-sim`: run scenario scripts, audit traces, replay the attack
//! catalogue.
//!
//! Exit codes: 0 clean, 1 violations found, 2 usage or input error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ops_simnet::generate::Mode;
use ops_simnet::script::DEMO_SCRIPT;
use ops_simnet::strategies::run_strategy;
use ops_simnet::{check_trace, run_scenario, AuditReport, ScenarioScript, Strategy, Trace};

#[derive(Parser)]
#[command(
    name = "ops-sim",
    version,
    about = "Deterministic simulator for offline payments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario script and audit every step.
    Run {
        script: PathBuf,
        /// Overrides OPS_SEED and the script's own seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the binary trace (hex, one event per line) here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Re-check a recorded trace offline.
    Audit { trace: PathBuf },
    /// The built-in honest walkthrough.
    Demo {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one double-spend strategy over a range of seeds.
    Attack {
        /// Strategy name, or `all`.
        name: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Noise around the attack: honest, safe or adversarial.
        #[arg(long, default_value = "adversarial")]
        noise: String,
    },
}

fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var("OPS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("OPS_SEED is not a number: {v}")),
        Err(_) => Ok(None),
    }
}

fn execute(
    mut script: ScenarioScript,
    seed: Option<u64>,
    trace_out: Option<PathBuf>,
) -> Result<bool, String> {
    if let Some(s) = seed
        .map(Ok)
        .or_else(|| env_seed().transpose())
        .transpose()?
    {
        script.seed = s;
    }
    let result = run_scenario(&script);
    for o in &result.outcomes {
        let mark = if o.outcome.is_ok() {
            "ok"
        } else if o.outcome.is_failed() {
            "FAILED"
        } else {
            "skipped"
        };
        println!(
            "{:>4} {:<40} {mark}: {}",
            o.index,
            o.step.to_string(),
            o.outcome.text()
        );
    }
    print!("{}", result.report.render());
    if let Some(path) = trace_out {
        std::fs::write(&path, result.trace.to_text())
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(result.report.is_clean())
}

fn audit(path: PathBuf) -> Result<bool, String> {
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let trace = Trace::parse(&text).map_err(|e| e.to_string())?;
    let c = check_trace(&trace);
    println!(
        "steps {}  audits {}  offline steps {}  unbalanced audits {}  server contact during offline steps {}  recorded violations {}",
        c.steps,
        c.audits,
        c.offline_steps,
        c.unbalanced.len(),
        c.server_contact.len(),
        c.recorded_violations
    );
    for (step, v) in trace.violations() {
        println!("VIOLATION: step {step}: {v}");
    }
    Ok(c.is_clean())
}

fn attack(name: &str, seeds: u64, noise: &str) -> Result<bool, String> {
    let strategies: Vec<Strategy> = if name == "all" {
        Strategy::ALL.to_vec()
    } else {
        vec![Strategy::from_name(name).ok_or_else(|| {
            let known: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
            format!("unknown strategy {name}; known: {}", known.join(", "))
        })?]
    };
    let noise = match noise {
        "honest" => Mode::Honest,
        "safe" => Mode::OracleSafe,
        "adversarial" => Mode::Adversarial,
        other => return Err(format!("unknown noise level {other}")),
    };
    let mut clean = true;
    for s in strategies {
        let (mut conclusive, mut failed) = (0, 0);
        let mut total = AuditReport::default();
        for seed in 0..seeds {
            let run = run_strategy(s, seed, noise);
            conclusive += u64::from(run.conclusive);
            if !run.passed() {
                failed += 1;
                for v in &run.result.report.violations {
                    println!("{s} seed {seed}: VIOLATION: {v}");
                }
                for (i, o) in &run.unrefused {
                    println!("{s} seed {seed}: step {i} not refused: {}", o.text());
                }
            }
            total.stats.absorb(&run.result.report.stats);
        }
        clean &= failed == 0;
        println!(
            "{s:<16} runs {seeds}  conclusive {conclusive}  failed {failed}  attacks {} (refused {})",
            total.stats.attack_steps, total.stats.refused_attacks
        );
    }
    Ok(clean)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            script,
            seed,
            trace,
        } => std::fs::read_to_string(&script)
            .map_err(|e| format!("{}: {e}", script.display()))
            .and_then(|t| {
                ScenarioScript::parse(&t).map_err(|e| format!("{}: {e}", script.display()))
            })
            .and_then(|s| execute(s, seed, trace)),
        Cmd::Audit { trace } => audit(trace),
        Cmd::Demo { seed } => {
            let script = ScenarioScript::parse(DEMO_SCRIPT).expect("built-in demo parses");
            execute(script, seed, None)
        }
        Cmd::Attack { name, seeds, noise } => attack(&name, seeds, &noise),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
