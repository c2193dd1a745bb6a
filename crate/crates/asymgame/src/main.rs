use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use asymgame::cli_runner::{run_command, Command, Overrides, RunManifest, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "asymgame", version, about = "Solve, check and simulate zero-sum games with one informed player")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Primal value iteration; writes the field and a plot table.
    Solve(Args),
    /// Dual value iteration and the duality gap against a primal field.
    SolveDual(Args),
    /// Variational residuals, regularity and uniqueness of a primal field.
    Check(Args),
    /// Trajectories, martingale probes and an open-loop payoff estimate.
    Simulate(Args),
    /// Solver strategy against a class of pure responses.
    Evaluate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Simplex grid resolution.
    #[arg(long)]
    n: Option<u32>,
    /// Time step.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Truncation parameter of the discounted payoff.
    #[arg(long)]
    eps: Option<f64>,
    /// Prior, comma separated (default uniform).
    #[arg(long, value_delimiter = ',')]
    belief: Option<Vec<f64>>,
    /// Monte-Carlo sample size.
    #[arg(long)]
    paths: Option<usize>,
    /// Primal field CSV to use instead of solving.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ASYMGAME_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| format!("ASYMGAME_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("ASYMGAME_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let (cmd, a) = match cli.command {
        Sub::Solve(a) => (Command::Solve, a),
        Sub::SolveDual(a) => (Command::SolveDual, a),
        Sub::Check(a) => (Command::Check, a),
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Evaluate(a) => (Command::Evaluate, a),
    };
    let overrides = Overrides { n: a.n, tau: a.tau, eps: a.eps, belief: a.belief, paths: a.paths, field: a.field };
    let manifest = RunManifest::new(cmd, a.spec, a.out, a.seed, overrides);
    match run_command(manifest) {
        Ok(m) => {
            match a.format {
                Format::Text => {
                    println!("{} finished; artifacts in {}", cmd.name(), m.out_dir.display());
                    for (name, hash) in &m.outputs {
                        println!("  {name}  {hash}");
                    }
                }
                Format::Json => println!("{}", serde_json::to_string_pretty(&m).unwrap_or_default()),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
