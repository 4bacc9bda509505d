use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metalqr::diag::{diagnose, rollout_length_bound};
use metalqr::PolicyGain;
use metalqr_cli::config::{resolve, Mode, Overrides, Preset};
use metalqr_cli::format::save_tasks;
use metalqr_cli::run::{load_or_generate, run_experiment, write_diagnostics, DIAGNOSTICS_FILE, TASKS_FILE};
use metalqr_cli::verify::{verify, REPORT_FILE};
use metalqr_cli::{init_thread_pool, CliError, THREADS_ENV};

#[derive(Parser)]
#[command(name = "metalqr", version, about = "Zeroth-order meta-policy optimization for LQR task collections")]
#[command(after_help = format!("Set {THREADS_ENV} to choose the number of worker threads."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task set and write it to <out>/tasks.toml.
    GenTasks(Common),
    /// Run meta-optimization and write traces, diagnostics and a manifest.
    Train(Common),
    /// Run the cross-oracle property battery on the task set.
    Verify(Common),
    /// Report stability and sample-size diagnostics at K = 0.
    Diag {
        #[command(flatten)]
        common: Common,
        /// Accuracy target for the rollout-length bound.
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for task generation and optimization (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            preset: self.preset,
            seed: self.seed,
            mode: self.mode,
            out: self.out.clone(),
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    init_thread_pool()?;
    match command {
        Command::GenTasks(c) => {
            let spec = resolve(&c.overrides())?;
            let tasks = load_or_generate(&spec)?;
            std::fs::create_dir_all(&spec.outputs).map_err(|e| CliError::io(&spec.outputs, e))?;
            let path = spec.outputs.join(TASKS_FILE);
            save_tasks(&tasks, &path)?;
            println!("wrote {} tasks to {}", tasks.len(), path.display());
        }
        Command::Train(c) => {
            let spec = resolve(&c.overrides())?;
            let summary = run_experiment(&spec)?;
            let first = summary.trace.records.first().expect("nonempty trace");
            let last = summary.trace.records.last().expect("nonempty trace");
            println!(
                "{} iterations: ratio {:.6e} -> {:.6e}; outputs in {}",
                last.iteration,
                first.ratio,
                last.ratio,
                spec.outputs.display()
            );
        }
        Command::Verify(c) => {
            let spec = resolve(&c.overrides())?;
            let outcome = verify(&spec);
            let report = spec.outputs.join(REPORT_FILE);
            match outcome {
                Ok(results) => {
                    for r in &results {
                        let status = if r.informational { "info" } else { "pass" };
                        println!("{status:>4}  {:<40} {:.3e}", r.name, r.measured);
                    }
                    println!("report: {}", report.display());
                }
                Err(e) => {
                    eprintln!("report: {}", report.display());
                    return Err(e);
                }
            }
        }
        Command::Diag { common, epsilon } => {
            let spec = resolve(&common.overrides())?;
            let tasks = load_or_generate(&spec)?;
            let k0 = PolicyGain::zeros(tasks.control_dim(), tasks.state_dim());
            let report = diagnose(&tasks, &k0, &k0, spec.meta.adaptation_rate, 1.0).map_err(CliError::Run)?;
            std::fs::create_dir_all(&spec.outputs).map_err(|e| CliError::io(&spec.outputs, e))?;
            write_diagnostics(&spec.outputs.join(DIAGNOSTICS_FILE), &[("initial", &report)])?;
            for (i, t) in report.tasks.iter().enumerate() {
                println!(
                    "task {i}: stable {} maml {} lambda(Sigma0) {:.4e} lambda(Psi) {:.4e}",
                    t.stable, t.maml_stabilizing, t.domination.lambda_initial, t.domination.lambda_noise
                );
            }
            if let Some(h) = report.trust_radius {
                println!("trust radius at K = 0: {h:.6e}");
            }
            match rollout_length_bound(&tasks, &k0, epsilon) {
                Ok(l) => println!("rollout length for epsilon = {epsilon}: {l}"),
                Err(e) => println!("rollout length bound unavailable: {e}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
