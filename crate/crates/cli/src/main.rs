use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fairpair_core::experiment::{self, Method, Overrides, RunConfig};
use fairpair_core::Result;

/// Environment variable that overrides the configured output directory.
const OUT_ENV: &str = "FAIRPAIR_OUT";

#[derive(Parser)]
#[command(
    name = "fairpair",
    version,
    about = "Fair learning-to-rank by pair reweighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its truth sidecar.
    Generate(Args),
    /// Train a model and write model, history and reports.
    Train(Args),
    /// Retrain with scaled learned coefficients and evaluate each scale.
    Sweep(Args),
    /// Evaluate a saved model.
    Evaluate(Args),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Unconstrained,
    Pairwise,
    Pointwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    Statistical,
    Inter,
    Intra,
    Marginal,
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    constraint: Option<ConstraintArg>,
    /// Number of coefficient-update loops.
    #[arg(long = "T", value_name = "INT")]
    loops: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Args {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        let ov = Overrides {
            method: self.method.map(|m| match m {
                MethodArg::Unconstrained => Method::Unconstrained,
                MethodArg::Pairwise => Method::Pairwise,
                MethodArg::Pointwise => Method::Pointwise,
            }),
            constraint: self.constraint.map(|c| {
                match c {
                    ConstraintArg::Statistical => "statistical",
                    ConstraintArg::Inter => "inter",
                    ConstraintArg::Intra => "intra",
                    ConstraintArg::Marginal => "marginal",
                }
                .to_string()
            }),
            loops: self.loops,
            seed: self.seed,
            out_dir: self.out.clone(),
        };
        cfg.apply(&ov, std::env::var_os(OUT_ENV).map(PathBuf::from))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            for path in experiment::run_generate(&args.config()?)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let s = experiment::run_train(&cfg)?;
            for (name, r) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
                println!("{name}\tauc {:.6}\tfairness {:.6}", r.auc, r.fairness);
            }
            println!("artifacts in {}", cfg.out_dir().display());
        }
        Command::Sweep(args) => {
            println!("x\tauc\tfairness");
            for row in experiment::run_sweep(&args.config()?)? {
                println!("{}\t{:.6}\t{:.6}", row.x, row.auc, row.fairness);
            }
        }
        Command::Evaluate(args) => {
            let r = experiment::run_evaluate(&args.config()?)?;
            println!(
                "auc {:.6}\tfairness {:.6}\tqueries {}",
                r.auc, r.fairness, r.n_queries_evaluated
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad usage is a validation problem; help and version are not errors.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
