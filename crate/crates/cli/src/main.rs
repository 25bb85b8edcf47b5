use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use discrep::bench::{compare, parse_density_spec, write_outputs, RunConfig};
use discrep::dist::RngStream;
use discrep::gkk::{gkk_run, GkkConfig};
use discrep::instance::{discrepancy, VectorSet};
use discrep::reduce::{reduce as run_reduce, reduce_bound};
use discrep::theory::{
    c_delta, epsilon_threshold, first_moment_log, phi_profile, second_moment_log, MomentQuery,
};

/// Vector balancing: the generalized Karmarkar-Karp signer, its REDUCE
/// subroutine, baselines, and the moment/threshold calculator.
#[derive(Parser)]
#[command(name = "discrep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collapse an instance to a single signing with the m-largest-columns
    /// sup-norm guarantee.
    Reduce(ReduceArgs),
    /// The full multi-phase signer.
    #[command(subcommand)]
    Gkk(GkkCommand),
    /// Moment, profile, and constant computations.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Multi-trial signer comparisons.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct ReduceArgs {
    /// Instance CSV: one line per column, m comma-separated floats.
    #[arg(long)]
    instance: PathBuf,
}

#[derive(Subcommand)]
enum GkkCommand {
    /// Run the signer on an instance.
    Run(GkkRunArgs),
}

#[derive(Args)]
struct GkkRunArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Density spec, e.g. uniform:1.0, triangular:0.5,
    /// truncated_gaussian:3.0:1.0, tabulated:path.csv
    #[arg(long)]
    density: String,
    #[arg(long)]
    seed: u64,
    /// Override the clean-up radius multiplier (must stay >= 2/c*).
    #[arg(long)]
    gamma: Option<f64>,
    /// Override the phase cap.
    #[arg(long)]
    phases: Option<usize>,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// First and second moments of the solution count (natural logs).
    Moments {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        gamma: f64,
    },
    /// The exponent profile over the overlap fraction, as CSV (alpha, phi).
    Phi {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// The linear-regime constant: the x solving P(|Z| <= x) = 2^(-1/delta).
    Cdelta {
        #[arg(long)]
        delta: f64,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run every (cell, signer, trial) of a TOML config.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_instance(path: &PathBuf) -> Result<VectorSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(VectorSet::read_csv(BufReader::new(file))?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Reduce(args) => {
            let x = load_instance(&args.instance)?;
            let sigma = run_reduce(&x)?;
            let report = discrepancy(&x, &sigma)?;
            println!("{sigma}");
            println!("sup_norm {}", report.sup_norm);
            println!("bound {}", reduce_bound(&x));
        }
        Command::Gkk(GkkCommand::Run(args)) => {
            let x = load_instance(&args.instance)?;
            let rho = parse_density_spec(&args.density)?.build()?;
            let stream = RngStream::new(args.seed, 0);
            let mut cfg = GkkConfig::for_instance(x.count(), x.dim(), stream.derive(1))?;
            if let Some(g) = args.gamma {
                cfg = cfg.with_gamma(g)?;
            }
            if let Some(p) = args.phases {
                cfg = cfg.with_phase_cap(p);
            }
            let result = gkk_run(&x, &rho, &cfg, stream.derive(2))?;
            let json = serde_json::json!({
                "signing": result.signing.to_string(),
                "sup_norm": result.report.sup_norm,
                "alpha_trace": result.alpha_trace,
                "phases": result.phases,
                "retries": result.retries,
                "config": cfg,
            });
            std::fs::write(&args.out, serde_json::to_string_pretty(&json)?)?;
            println!("sup_norm {}", result.report.sup_norm);
        }
        Command::Theory(TheoryCommand::Moments { n, m, gamma }) => {
            let q = MomentQuery::with_gamma(n, m, gamma)?;
            let first = first_moment_log(&q);
            println!("epsilon {}", epsilon_threshold(n, m, gamma));
            println!("first_moment_log {}", first.log);
            if first.underflow {
                println!("first_moment_underflow true");
            }
            match second_moment_log(&q) {
                Ok(v) => println!("second_moment_log {v}"),
                Err(e) => println!("second_moment_log unavailable: {e}"),
            }
        }
        Command::Theory(TheoryCommand::Phi { n, m, eps, grid, out }) => {
            let q = MomentQuery::with_epsilon(n, m, eps)?;
            let profile = phi_profile(&q, grid)?;
            let mut f = File::create(&out)?;
            writeln!(f, "alpha,phi")?;
            for (a, v) in profile.alphas.iter().zip(&profile.values) {
                writeln!(f, "{a},{v}")?;
            }
            println!("wrote {} rows to {}", profile.alphas.len(), out.display());
        }
        Command::Theory(TheoryCommand::Cdelta { delta }) => {
            println!("{}", c_delta(delta)?);
        }
        Command::Bench(BenchCommand::Compare { config, out_dir }) => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = RunConfig::from_toml(&text)?;
            let records = compare(&cfg)?;
            write_outputs(&cfg, &records, &out_dir)?;
            println!("wrote {} records to {}", records.len(), out_dir.display());
        }
    }
    Ok(())
}
