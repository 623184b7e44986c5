//! `torsionworks`: conformer search, policy training and sample-complexity
//! experiments from the command line.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use torsionworks::search::DEFAULT_ORACLE_CAP;

use commands::{CompareParams, Method, SearchParams};

#[derive(Parser)]
#[command(name = "torsionworks", version = io::VERSION, about)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Largest number of bucket combinations the oracle will enumerate.
    #[arg(long, global = true, default_value_t = DEFAULT_ORACLE_CAP)]
    oracle_cap: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a molecule graph as JSON.
    #[command(subcommand)]
    Generate(Generate),
    /// Run one conformer search and write its conformers.
    Search(SearchArgs),
    /// Reference normalizers from one systematic run.
    Normalize {
        #[arg(long)]
        molecule: PathBuf,
        #[arg(long, default_value_t = commands::REFERENCE_BUDGET)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Curriculum training from a JSON config.
    Train(ConfigArgs),
    /// Sequential training on the T-branched alkanes with parameter transfer.
    Transfer(ConfigArgs),
    #[command(subcommand)]
    Analyze(Analyze),
    /// Sample-complexity experiments.
    #[command(subcommand)]
    Theory(Theory),
    /// Every search method at one budget, repeated over seeds.
    Compare(CompareArgs),
}

#[derive(Subcommand, Serialize)]
enum Generate {
    /// Random branched alkane.
    Alkane {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        atoms: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alkane whose backbone has exactly `t` rotatable bonds.
    TAlkane {
        #[arg(long)]
        t: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Graph JSON or a SMILES string.
    #[arg(long)]
    molecule: PathBuf,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Policy checkpoint for the agent method.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Normalizer JSON; computed from a reference run when absent.
    #[arg(long)]
    normalizers: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Analyze {
    /// Torsion correlation matrix of an episode log.
    Correlation {
        /// JSONL with a `theta` array per line.
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TheoryArgs {
    /// JSON overrides; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Theory {
    Lock(TheoryArgs),
    Coupon(TheoryArgs),
    Bandit(TheoryArgs),
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    molecule: PathBuf,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    normalizers: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(io::config_error("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let cap = cli.oracle_cap;
    match cli.command {
        Command::Generate(g) => {
            let graph = match &g {
                Generate::Alkane { seed, atoms, .. } => commands::generate_alkane(*seed, *atoms)?,
                Generate::TAlkane { t, .. } => commands::generate_t_alkane(*t)?,
            };
            let (Generate::Alkane { out, .. } | Generate::TAlkane { out, .. }) = &g;
            commands::generate(graph, out, &g)
        }
        Command::Search(a) => {
            let params = SearchParams {
                method: a.method,
                molecule: a.molecule,
                budget: a.budget,
                seed: a.seed,
                checkpoint: a.checkpoint,
                normalizers: a.normalizers,
                oracle_cap: cap,
            };
            commands::search(&params, &a.out)
        }
        Command::Normalize { molecule, budget, out } => commands::normalize(&molecule, budget, &out),
        Command::Train(a) => commands::train(&a.config, &a.out),
        Command::Transfer(a) => commands::transfer(&a.config, &a.out, cap),
        Command::Analyze(Analyze::Correlation { episodes, out }) => commands::correlation(&episodes, &out),
        Command::Theory(Theory::Lock(a)) => commands::theory_lock(a.config.as_deref(), &a.out),
        Command::Theory(Theory::Coupon(a)) => commands::theory_coupon(a.config.as_deref(), &a.out),
        Command::Theory(Theory::Bandit(a)) => commands::theory_bandit(a.config.as_deref(), &a.out, cap),
        Command::Compare(a) => {
            let params = CompareParams {
                molecule: a.molecule,
                budget: a.budget,
                runs: a.runs,
                seed: a.seed,
                checkpoint: a.checkpoint,
                normalizers: a.normalizers,
                oracle_cap: cap,
            };
            commands::compare(&params, &a.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(io::exit_code(&e))
        }
    }
}
