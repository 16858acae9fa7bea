use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smt_bench::config::{ExperimentConfig, Method, Target};
use smt_bench::run::{adapt_run, load_report, replay, run};
use smt_bench::Result;
use smt_core::sequential::Epsilon;
use smt_core::solver::solve_cached;
use smt_core::training::LrSchedule;

#[derive(Parser)]
#[command(
    name = "smt-bench",
    version,
    about = "Train, adapt and evaluate cure-simulation PINNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve (or load from cache) the reference solution of the task.
    Oracle(Overrides),
    /// Train the configured method, run its adaptation sweep and evaluate.
    Train(Overrides),
    /// Adapt the trained model of a finished run to a new task.
    Adapt {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        h_top: f64,
        #[arg(long)]
        h_bottom: f64,
        #[arg(long)]
        epochs: u64,
    },
    /// Recompute a run's metrics from its checkpoints and compare.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Tabulate the reports of finished runs.
    Report { run_dirs: Vec<PathBuf> },
}

/// Config file plus flags mirroring its keys; flags win.
#[derive(Args)]
struct Overrides {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    h_top: Option<f64>,
    #[arg(long)]
    h_bottom: Option<f64>,
    #[arg(long)]
    initial_n: Option<usize>,
    #[arg(long)]
    adaptive: Option<bool>,
    /// Absolute loss-jump threshold of the adaptive check.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    min_len: Option<f64>,
    /// Epochs per segment.
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    pinn_epochs: Option<u64>,
    #[arg(long)]
    n_support: Option<usize>,
    #[arg(long)]
    meta_epochs: Option<u64>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    adapt_epochs: Option<Vec<u64>>,
    #[arg(long)]
    oracle_nx: Option<usize>,
    #[arg(long)]
    oracle_dt: Option<f64>,
}

impl Overrides {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($field)+ = v;
                }
            };
        }
        set!(method => method);
        set!(seed => seed);
        set!(output_dir => output_dir);
        set!(h_top => task.h_top);
        set!(h_bottom => task.h_bottom);
        set!(initial_n => schedule.initial_n);
        set!(adaptive => schedule.adaptive);
        set!(epochs => budget.epochs);
        set!(n_support => distribution.n_support);
        set!(meta_epochs => meta.epochs);
        set!(inner_lr => meta.inner_lr);
        set!(adapt_epochs => adapt.epochs);
        set!(oracle_nx => oracle.nx);
        set!(oracle_dt => oracle.dt);
        if let Some(e) = self.epsilon {
            c.schedule.epsilon = Epsilon::Absolute(e);
        }
        if self.min_len.is_some() {
            c.schedule.min_len = self.min_len;
        }
        if let Some(lr) = self.lr {
            c.budget.lr = match c.budget.lr {
                LrSchedule::Constant { .. } => LrSchedule::Constant { lr },
                LrSchedule::ExpDecay { rate, every, .. } => LrSchedule::ExpDecay {
                    lr0: lr,
                    rate,
                    every,
                },
            };
        }
        if self.pinn_epochs.is_some() {
            c.pinn_epochs = self.pinn_epochs;
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Oracle(o) => {
            let cfg = o.resolve()?;
            let grid = cfg.oracle.grid(&cfg.task)?;
            let field = solve_cached(&cfg.task, &grid, &cfg.oracle_dir())?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("oracle.csv");
            field.write_csv(&path)?;
            println!(
                "{} x {} reference field written to {}",
                field.nt(),
                field.nx(),
                path.display()
            );
        }
        Command::Train(o) => {
            let cfg = o.resolve()?;
            let report = run(&cfg)?;
            print_table(&[report]);
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Adapt {
            run_dir,
            label,
            h_top,
            h_bottom,
            epochs,
        } => {
            let e = adapt_run(
                &run_dir,
                &Target {
                    label,
                    h_top,
                    h_bottom,
                },
                epochs,
            )?;
            let path = run_dir.join(format!("adapt-{}.json", e.label));
            std::fs::write(&path, serde_json::to_vec_pretty(&e)?)?;
            println!("{}", serde_json::to_string_pretty(&e)?);
        }
        Command::Eval { run_dir } => {
            let report = replay(&run_dir)?;
            println!(
                "replay matches report.json ({} evaluations)",
                report.evaluations.len()
            );
        }
        Command::Report { run_dirs } => {
            let reports = run_dirs
                .iter()
                .map(|d| load_report(d))
                .collect::<Result<Vec<_>>>()?;
            print_table(&reports);
        }
    }
    Ok(())
}

fn print_table(reports: &[smt_bench::MetricsReport]) {
    println!(
        "{:<7} {:>5} {:<14} {:>7} {:>11} {:>9} {:>11} {:>9} {:>10}",
        "method", "seed", "label", "epochs", "relL2 T", "max T", "relL2 a", "max a", "epochs/s"
    );
    for r in reports {
        for e in &r.evaluations {
            let epochs = e.adapt_epochs.map_or("-".to_string(), |n| n.to_string());
            println!(
                "{:<7} {:>5} {:<14} {:>7} {:>11.3e} {:>9.3} {:>11.3e} {:>9.3e} {:>10.1}",
                r.method.name(),
                r.seed,
                e.label,
                epochs,
                e.full.rel_l2_temp,
                e.full.max_abs_temp,
                e.full.rel_l2_alpha,
                e.full.max_abs_alpha,
                r.timing.epochs_per_s
            );
        }
    }
}
