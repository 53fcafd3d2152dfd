use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agentsim::config::{validate_file, ExperimentConfig, Severity};
use agentsim::runner::run_experiment;
use agentsim::workload::{generate_synthetic, write_trace};
use agentsim::PolicyKind;

/// Simulate agentic workloads on an LLM serving engine under different
/// KV-cache scheduling policies.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run {
        config: PathBuf,
        /// Replace the configured policy list (repeatable).
        #[arg(long = "policy")]
        policies: Vec<PolicyKind>,
        /// Replace the configured arrival-rate multipliers (repeatable).
        #[arg(long = "rate-mult")]
        rate_mults: Vec<f64>,
        /// Replace the configured seeds (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output root; defaults to the config's `output_dir`, then
        /// $AGENTSIM_OUT_DIR, then ./agentsim-out.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check a config file and show the defaults it relies on.
    Validate { config: PathBuf },
    /// Write the config's synthetic workload as a JSONL trace.
    Generate {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> agentsim::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            policies,
            rate_mults,
            seeds,
            out,
            workers,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !policies.is_empty() {
                cfg.policies = policies;
                if cfg.baseline.is_some_and(|b| !cfg.policies.contains(&b)) {
                    cfg.baseline = None;
                }
            }
            if !rate_mults.is_empty() {
                cfg.rate_multipliers = rate_mults;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let root = cfg.output_root(out.as_deref());
            let result = run_experiment(&cfg, &root)?;
            for e in &result.manifest.runs {
                let status = match (&e.error, e.complete) {
                    (Some(err), _) => format!("FAILED: {err}"),
                    (None, false) => "INCOMPLETE".to_string(),
                    (None, true) => "ok".to_string(),
                };
                println!(
                    "{:<22} rate x{:<5} k={} seed={}  {status}",
                    e.key.policy, e.key.rate_mult, e.key.turn_scale, e.key.seed
                );
            }
            println!("outputs in {}", result.out_dir.display());
            Ok(if result.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Validate { config } => {
            let diags = validate_file(&config);
            for d in &diags {
                println!("{d}");
            }
            let ok = diags.iter().all(|d| d.severity < Severity::Error);
            if ok {
                println!("{}: ok", config.display());
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Generate { config, seed, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let params = cfg.trace.synthetic.ok_or_else(|| {
                agentsim::Error::Config("config has no [trace.synthetic] section".into())
            })?;
            let programs = generate_synthetic(&params, seed)?;
            write_trace(&output, &programs)?;
            println!("wrote {} programs to {}", programs.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
