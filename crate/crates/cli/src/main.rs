use std::path::PathBuf;
use std::process::ExitCode;

use ccnn::gradcheck::suite;
use ccnn_cli::bench::{bench_conv, growth_ratios, write_bench};
use ccnn_cli::export::export_kernels;
use ccnn_cli::{run_eval, run_train, CliError, CliResult, EvalOverride, ExperimentConfig, Representation};
use ccnn::ckconv::ConvBackend;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccnn", version, about = "Train and inspect continuous convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. `--set epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, summary.json and checkpoint/.
    Train(RunArgs),
    /// Test metrics of a checkpoint, optionally at another length or
    /// representation.
    Eval {
        /// Run directory or checkpoint directory.
        checkpoint: PathBuf,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        representation: Option<Representation>,
    },
    /// Sample every layer's kernels on a regular lattice.
    ExportKernels {
        checkpoint: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Time direct and FFT convolutions with global kernels.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1024, 2048, 4096, 8192])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only operations whose name contains this.
        #[arg(long)]
        only: Option<String>,
    },
}

fn backend_name(b: ConvBackend) -> &'static str {
    match b {
        ConvBackend::Direct => "direct",
        ConvBackend::Fft => "fft",
        ConvBackend::Auto => "auto",
    }
}

fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Train(a) => {
            let mut sets = a.sets;
            if let Some(s) = a.seed {
                sets.push(format!("seed={s}"));
            }
            if let Some(t) = a.threads {
                sets.push(format!("threads={t}"));
            }
            let cfg = ExperimentConfig::load(a.config.as_deref(), &sets)?;
            let r = run_train(&cfg, &a.out)?;
            println!(
                "test loss {:.4}  accuracy {:.4}  (best epoch {}, {:.0}s) -> {}",
                r.test.loss,
                r.test.accuracy,
                r.best_epoch,
                r.wall_time_s,
                a.out.display()
            );
        }
        Command::Eval {
            checkpoint,
            length,
            representation,
        } => {
            let m = run_eval(&checkpoint, EvalOverride { length, representation })?;
            println!("{}", serde_json::json!({ "loss": m.loss, "accuracy": m.accuracy }));
        }
        Command::ExportKernels {
            checkpoint,
            layer,
            resolution,
            out,
        } => {
            for f in export_kernels(&checkpoint, layer, resolution, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Bench {
            lengths,
            channels,
            repeats,
            out,
        } => {
            let rows = bench_conv(&lengths, channels, repeats)?;
            write_bench(&rows, &out)?;
            println!("backend,length,channels,median_ms,p90_ms");
            for r in &rows {
                println!("{},{},{},{:.3},{:.3}", backend_name(r.backend), r.length, r.channels, r.median_ms, r.p90_ms);
            }
            for backend in [ConvBackend::Direct, ConvBackend::Fft] {
                for (l, ratio) in growth_ratios(&rows, backend) {
                    println!("# {} t({})/t({}) = {ratio:.2}", backend_name(backend), 2 * l, l);
                }
            }
        }
        Command::Gradcheck { instances, seed, only } => {
            let results = suite::run(instances, seed, only.as_deref())?;
            let mut ok = true;
            for r in &results {
                println!("{:<20} {:>4} instances  worst rel err {:.2e}  {}", r.name, r.instances, r.worst, if r.passed { "ok" } else { "FAIL" });
                ok &= r.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
