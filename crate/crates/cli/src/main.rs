//! `exposure-sim`: runs contact traces through the protocol and reports
//! audit and attack verdicts. Exits 0 only when every check passes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use exposure_core::sim::attacks::{attack_linkability, attack_one_entry, attack_replay};
use exposure_core::sim::{run, AttackVerdict, ContactTrace, Mode};
use exposure_core::HarnessConfig;

#[derive(Parser)]
#[command(name = "exposure-sim", version, about = "Exposure-notification protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Stateful,
    Stateless,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackName {
    Replay,
    OneEntry,
    Linkability,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trace and write the report table.
    Run {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "stateful")]
        mode: ModeArg,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run one adversarial scenario on top of a trace.
    Attack {
        #[arg(long, value_enum)]
        name: AttackName,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional tab-separated verdict output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_trace(path: &Path) -> Result<ContactTrace> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ContactTrace::parse(&text).with_context(|| format!("in {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<HarnessConfig> {
    match path {
        Some(p) => HarnessConfig::load(p).with_context(|| format!("config {}", p.display())),
        None => Ok(HarnessConfig::default()),
    }
}

fn attack_table(v: &AttackVerdict) -> String {
    let mut out = format!("attack\t{}\t{}\t{}\n", v.name, v.verdict.label(), v.verdict.detail);
    for (k, val) in &v.metrics {
        out.push_str(&format!("attack_metric\t{}\t{k}\t{val}\n", v.name));
    }
    out
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            trace,
            config,
            seed,
            mode,
            report,
        } => {
            let trace = load_trace(&trace)?;
            let config = load_config(Some(&config))?;
            let mode = match mode {
                ModeArg::Stateful => Mode::Stateful,
                ModeArg::Stateless => Mode::Stateless,
            };
            let r = run(&trace, &config, seed, mode)?;
            std::fs::write(&report, r.to_table()).with_context(|| format!("writing {}", report.display()))?;
            print!("{}", r.summary());
            Ok(r.all_pass())
        }
        Command::Attack {
            name,
            trace,
            seed,
            config,
            report,
        } => {
            let trace = load_trace(&trace)?;
            let config = load_config(config.as_deref())?;
            let verdict = match name {
                AttackName::Replay => attack_replay(&trace, &config, seed)?.verdict(),
                AttackName::OneEntry => attack_one_entry(&trace, &config, seed)?.verdict(),
                AttackName::Linkability => attack_linkability(&trace, &config, seed)?.verdict(),
            };
            println!(
                "attack {}: {} ({})",
                verdict.name,
                verdict.verdict.label(),
                verdict.verdict.detail
            );
            for (k, v) in &verdict.metrics {
                println!("  {k} = {v}");
            }
            if let Some(path) = report {
                std::fs::write(&path, attack_table(&verdict)).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(verdict.verdict.pass)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
