//! `nflbench` command line.
//!
//! Exit codes: 0 success, 1 bound violation (verify-nfl), 2 configuration or
//! run error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nflbench_core::attack::Attacker;
use nflbench_core::embedding::Prompt;
use nflbench_core::harness::export::{export_results, read_json, write_csv, Format};
use nflbench_core::harness::sweep::sweep_with_threads;
use nflbench_core::harness::{run_protocol, sweep, verify_nfl, Experiment, ExperimentConfig};
use nflbench_core::metrics::{recovery_extent, select_optimum};
use nflbench_core::protection::protect_prompt;

#[derive(Parser)]
#[command(name = "nflbench", version, about = "Privacy/utility trade-off lab for prompt perturbation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Experiment> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(Experiment::new(cfg)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Protect the client prompt with one grid point and run the mock round trip.
    Protect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Grid point to use.
        #[arg(long, default_value_t = 0)]
        point: usize,
    },
    /// Attack one protected client prompt and write the attack trace.
    Attack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        point: usize,
        /// Trace CSV (iter,mean_regret,cumulative); stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every grid point.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// CSV output; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the full records as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Sweep and certify the trade-off bound at every grid point.
    VerifyNfl {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write the per-point report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Convert saved JSON records to CSV or JSON.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Protect { cfg, point } => {
            let exp = cfg.load()?;
            let pc = *exp.config.grid.get(point).context("no such grid point")?;
            let key = exp.master_key().child(point as u64).child(pc.seed);
            let run = run_protocol(&exp.prompt, &pc, &exp.llm, &exp.table, key)?;
            let vocab = exp.table.vocab();
            let words = |ids: &[usize]| ids.iter().map(|&i| vocab.token(i)).collect::<Vec<_>>().join(" ");
            let out = serde_json::json!({
                "original": exp.prompt.to_text(vocab),
                "protected": words(&run.protected.token_ids),
                "response": words(&run.response),
                "steps": run.steps,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(0)
        }
        Command::Attack { cfg, point, out } => {
            let exp = cfg.load()?;
            let pc = *exp.config.grid.get(point).context("no such grid point")?;
            let key = exp.master_key().child(point as u64).child(pc.seed);
            let protected = protect_prompt(&exp.prompt, &pc, &exp.table, key)?;
            let trace = exp.attacker()?.attack(&protected.observed(&exp.table))?;
            let rec = recovery_extent(&trace, &exp.prompt, &exp.table, exp.omega)?;
            let recovered = Prompt::new(trace.final_recovered().to_vec(), exp.table.len())?;
            eprintln!(
                "protected: {}\nrecovered: {}\nR = {:.6} ({} clamped iterations)",
                Prompt::new(protected.token_ids.clone(), exp.table.len())?.to_text(exp.table.vocab()),
                recovered.to_text(exp.table.vocab()),
                rec.r,
                rec.clamped
            );
            match out {
                Some(p) => trace.write_csv(std::fs::File::create(&p)?)?,
                None => trace.write_csv(std::io::stdout().lock())?,
            }
            Ok(0)
        }
        Command::Sweep { cfg, out, json, threads } => {
            let exp = cfg.load()?;
            let records = match threads {
                Some(t) => sweep_with_threads(&exp, t)?,
                None => sweep(&exp),
            };
            let out = out.or_else(|| exp.config.output.as_ref().map(|o| exp.config.base_dir.join(o)));
            match out {
                Some(p) => export_results(&records, Format::Csv, &p)?,
                None => write_csv(&records, std::io::stdout().lock())?,
            }
            if let Some(j) = json {
                export_results(&records, Format::Json, &j)?;
            }
            for r in records.iter().filter(|r| r.error.is_some()) {
                eprintln!("point {}: {}", r.index, r.error.as_deref().unwrap_or_default());
            }
            match select_optimum(&records, exp.config.xi) {
                Some(i) => eprintln!("best point under xi = {}: {} (param {})", exp.config.xi, i, records[i].param),
                None => eprintln!("no point meets xi = {}", exp.config.xi),
            }
            Ok(0)
        }
        Command::VerifyNfl { cfg, report } => {
            let exp = cfg.load()?;
            let (_, rep) = verify_nfl(&exp)?;
            print!("{}", rep.render());
            if let Some(p) = report {
                std::fs::write(&p, serde_json::to_string_pretty(&rep)?)?;
            }
            Ok(rep.exit_code() as u8)
        }
        Command::Export { input, format, out } => {
            let records = read_json(&std::fs::read_to_string(&input)?)?;
            export_results(&records, format.parse()?, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
