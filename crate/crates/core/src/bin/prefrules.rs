use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prefrules::config::RunConfig;
use prefrules::forge::UnifyMode;
use prefrules::runner;
use prefrules::Result;

#[derive(Parser)]
#[command(
    name = "prefrules",
    version,
    about = "Elicit, apply and refine preference rules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set adaptive.alpha=2.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.set)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Request-type hierarchies (tabletop corpora).
    Hierarchy,
    /// Ranked unification rules (kitchen ambiguity corpora).
    Rules,
}

#[derive(Subcommand)]
enum Command {
    /// Run one elicitation session and write the synthesized rules.
    Elicit(ConfigArgs),
    /// Score one or more methods on the test set.
    Evaluate(ConfigArgs),
    /// Run the gated adaptive loop.
    Adapt(ConfigArgs),
    /// Merge run directories into one report.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
    },
    /// Dataset tools.
    Forge {
        #[command(subcommand)]
        command: ForgeCommand,
    },
    /// Serve the live session API.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: String,
    },
}

#[derive(Subcommand)]
enum ForgeCommand {
    /// Relabel raw scenarios to a single unified persona.
    Unify {
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Custom hierarchy table (JSON); defaults to the bundled one.
        #[arg(long)]
        hierarchies: Option<PathBuf>,
        /// Custom unification rule chain (JSON); defaults to the bundled one.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(short, long, default_value = "unified")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Elicit(args) => {
            let out = runner::cmd_elicit(&args.load()?)?;
            if let Some(rules) = &out.rules {
                println!("{}", rules.to_numbered_text());
            }
            eprintln!("run written to {}", out.dir.display());
        }
        Command::Evaluate(args) => {
            let out = runner::cmd_evaluate(&args.load()?)?;
            if let Some(r) = &out.report {
                print!("{}", r.to_text());
            }
            eprintln!("run written to {}", out.dir.display());
        }
        Command::Adapt(args) => {
            let out = runner::cmd_adapt(&args.load()?)?;
            if let Some(r) = &out.report {
                print!("{}", r.to_text());
            }
            if let Some(rules) = &out.rules {
                println!(
                    "final rules (v{}):\n{}",
                    rules.version,
                    rules.to_numbered_text()
                );
            }
            eprintln!("run written to {}", out.dir.display());
        }
        Command::Report { runs, out } => {
            let report = runner::cmd_report(&runs, &out)?;
            print!("{}", report.to_text());
        }
        Command::Forge {
            command:
                ForgeCommand::Unify {
                    input,
                    mode,
                    hierarchies,
                    rules,
                    out,
                },
        } => {
            let mode = match mode {
                ModeArg::Hierarchy => UnifyMode::Hierarchy,
                ModeArg::Rules => UnifyMode::Rules,
            };
            let reports = runner::cmd_forge_unify(
                &input,
                mode,
                hierarchies.as_deref(),
                rules.as_deref(),
                &out,
            )?;
            let fallbacks = reports.iter().filter(|r| r.fallback).count();
            println!(
                "{} scenarios unified, {} kept their original label; written to {}",
                reports.len(),
                fallbacks,
                out.display()
            );
        }
        Command::Serve { config, addr } => {
            let cfg = config.load()?;
            prefrules::service::serve(cfg, &addr)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
