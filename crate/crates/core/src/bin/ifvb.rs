use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use ifvb::harness::{self, Experiment};
use ifvb::{Error, Family, FisherConfig};

/// Inversion-free natural-gradient variational Bayes experiments.
#[derive(Parser)]
#[command(name = "ifvb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every optimizer listed in a spec file, one after another.
    Run { spec: PathBuf },
    /// Run the optimizers of a spec file in parallel on shared data.
    Compare { spec: PathBuf },
    /// Check the recursive Fisher estimate against the analytic one.
    FisherCheck {
        /// beta, gaussian-invgamma
        family: Family,
        /// Comma-separated variational parameters.
        lambda: String,
        #[arg(long, default_value_t = 200_000)]
        smax: usize,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Write an experiment's standard dataset as CSV.
    Simulate {
        experiment: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_spec(path: &PathBuf) -> Result<harness::ExperimentSpec, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    harness::parse_spec(&text)
}

fn report(runs: &[harness::ExperimentRun]) -> Result<(), Error> {
    let mut first_err = None;
    for r in runs {
        let last = r.outcome.trace.last();
        let lambda: Vec<String> = r.outcome.estimate().iter().map(|v| format!("{v:.6}")).collect();
        println!(
            "{:<6} iters={:<6} elbo={:<14} lambda=[{}] -> {}",
            r.kind.as_str(),
            last.map_or(0, |t| t.iter),
            last.map_or("-".to_string(), |t| format!("{:.6}", t.elbo)),
            lambda.join(", "),
            r.path.display()
        );
        if let Err(e) = &r.outcome.status {
            eprintln!("{}: {e}", r.kind);
            first_err.get_or_insert_with(|| e.clone());
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn fisher_check(family: Family, lambda: &str, smax: usize, seeds: u64) -> Result<(), Error> {
    let values = lambda
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad lambda entry `{t}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != family.dim() {
        return Err(Error::Shape {
            expected: family.dim(),
            got: values.len(),
        });
    }
    let lambda = DVector::from_vec(values);
    let mut finals = Vec::new();
    let stdout = std::io::stdout();
    for seed in 0..seeds {
        let rows = harness::fisher_diagnostic(family, &lambda, smax, FisherConfig::default(), seed)?;
        println!("# seed={seed}");
        harness::write_diagnostic(stdout.lock(), &rows)?;
        if let Some(last) = rows.last() {
            finals.push(last.plain);
        }
    }
    finals.sort_by(f64::total_cmp);
    if let Some(m) = finals.get(finals.len() / 2) {
        println!("# median_final_rel_error_plain={m:.6e}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { spec } => report(&harness::run_experiment(&read_spec(&spec)?)?),
        Command::Compare { spec } => report(&harness::compare(&read_spec(&spec)?)?),
        Command::FisherCheck {
            family,
            lambda,
            smax,
            seeds,
        } => fisher_check(family, &lambda, smax, seeds),
        Command::Simulate { experiment, seed, out } => {
            let experiment: Experiment = experiment.parse()?;
            let data = harness::simulate(experiment, seed, &out)?;
            println!("wrote {} rows to {}", data.n(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
