use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairthresh::par::Exec;
use fairthresh::policy::utility_contour_with;
use fairthresh::scenario::{
    emit_outputs, run_scenario_with, scenario_sensitivity, write_contour_files,
    write_sensitivity_file, RunOptions,
};
use fairthresh::{Error, Scenario};
use log::info;

const DEFAULT_CONTOUR_CELLS: usize = 100;

#[derive(Parser)]
#[command(
    name = "fairthresh",
    version,
    about = "Fair threshold policies under biased training data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the bias levels and write the results table.
    Run(RunArgs),
    /// Write the utility contour over selection-rate pairs.
    Contour {
        #[command(flatten)]
        common: Common,
        /// Lattice cells per axis (defaults to the scenario's, else 100).
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Write analytic and finite-difference threshold sensitivities.
    Sensitivity {
        #[command(flatten)]
        common: Common,
    },
    /// Check the scenario and its population without solving anything.
    Validate { scenario: PathBuf },
}

#[derive(Args)]
struct Common {
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Auto
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the scenario seed (used for sampled training data).
    #[arg(long)]
    seed: Option<u64>,
    /// Add a lattice cross-check column.
    #[arg(long)]
    oracle: bool,
    /// Lattice step for the cross-check.
    #[arg(long)]
    grid_step: Option<f64>,
}

enum Failure {
    Invalid(String),
    Infeasible(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Infeasible(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let io = match &e {
            Error::Io(_) => true,
            Error::Csv(c) => c.is_io_error(),
            _ => false,
        };
        let msg = format!("{}: {e}", e.kind());
        if io {
            Failure::Io(msg)
        } else {
            Failure::Invalid(msg)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let s = Scenario::load(path).map_err(|e| match e {
        Error::Io(io) => Failure::Io(format!("cannot read {}: {io}", path.display())),
        other => Failure::from(other),
    })?;
    s.validate()?;
    Ok(s)
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let s = load(&args.common.scenario)?;
    if let Some(step) = args.grid_step {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Failure::Invalid(format!(
                "--grid-step must be positive (got {step})"
            )));
        }
    }
    let opts = RunOptions {
        exec: args.common.exec(),
        oracle: args.oracle.then_some(true),
        grid_step: args.grid_step,
        seed: args.seed,
    };
    let sr = run_scenario_with(&s, opts)?;
    let failed = sr.rows.iter().filter(|r| r.outcome.is_err()).count();
    if sr.all_failed() {
        return Err(Failure::Infeasible(format!(
            "all {} cells failed to solve",
            sr.rows.len()
        )));
    }
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} cells failed; see the solver column",
            sr.rows.len()
        );
    }
    let emitted = emit_outputs(&s, &sr, &args.common.out_dir, args.common.exec())?;
    print_files(&emitted.files);
    Ok(())
}

fn contour(common: Common, cells: Option<usize>) -> Result<(), Failure> {
    let s = load(&common.scenario)?;
    let n = cells.or(s.outputs.contour).unwrap_or(DEFAULT_CONTOUR_CELLS);
    let c = utility_contour_with(&s.population()?, n, common.exec())?;
    std::fs::create_dir_all(&common.out_dir).map_err(Error::from)?;
    let mut files = Vec::new();
    write_contour_files(&common.out_dir, &c, &mut files)?;
    let (sa, sb) = c.argmax();
    println!("utility argmax at s_a = {sa}, s_b = {sb}");
    print_files(&files);
    Ok(())
}

fn sensitivity(common: Common) -> Result<(), Failure> {
    let s = load(&common.scenario)?;
    let reports = scenario_sensitivity(&s)?;
    for r in &reports {
        println!(
            "{} {}: dθ_b/dβ = {:.6} (fd {:.6}), dθ_a/dβ = {:.6} (fd {:.6})",
            r.kind.as_str(),
            r.criterion,
            r.analytic.b,
            r.finite_difference.b,
            r.analytic.a,
            r.finite_difference.a
        );
    }
    std::fs::create_dir_all(&common.out_dir).map_err(Error::from)?;
    let mut files = Vec::new();
    write_sensitivity_file(&common.out_dir, &reports, &mut files)?;
    print_files(&files);
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let s = load(path)?;
    let pop = s.population()?;
    let d = pop.diagnostics();
    println!(
        "scenario ok: {} specs, {} sweep levels",
        s.fairness_specs().len(),
        s.bias.betas().len()
    );
    for g in [pop.a(), pop.b()] {
        println!(
            "group {}: n = {:.4}, alpha = {:.4}, monotone likelihood ratio: {}",
            g.id(),
            g.mass(),
            g.alpha(),
            d.mlr.get(g.id()).holds
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Contour { common, cells } => contour(common, cells),
        Command::Sensitivity { common } => sensitivity(common),
        Command::Validate { scenario } => validate(&scenario),
    };
    match result {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
