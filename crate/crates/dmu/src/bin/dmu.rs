//! Command-line front end: single runs, multi-seed experiments, weight
//! counting, dataset dumps, and the scaling-chain diagnostic.

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmu::cells::CellKind;
use dmu::experiment::{
    emit_reports, run_experiment, weight_count_for_task, ExperimentSpec, TaskConfig,
};
use dmu::scaling::interpolation_chain;
use dmu::tasks::dump_samples;
use dmu::training::{build_model, run_until_stop, ScalingConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dmu", version, about = "Deep Memory Update experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskName {
    Adding,
    Tempord,
    Noiseseq,
}

#[derive(Debug, Args)]
struct TaskArgs {
    /// Which synthetic benchmark to use.
    #[arg(long, value_enum)]
    task: TaskName,
    /// Use the desk-scale task variant instead of the full-scale one.
    #[arg(long)]
    scaled: bool,
    /// Adding: minimum sequence length.
    #[arg(long)]
    t_min: Option<usize>,
    /// Adding: maximum sequence length.
    #[arg(long)]
    t_max: Option<usize>,
    /// NoiseSeq: alphabet size n (sequence length is n-1).
    #[arg(long, default_value_t = 50)]
    n: usize,
}

impl TaskArgs {
    fn to_config(&self) -> TaskConfig {
        match self.task {
            TaskName::Adding => {
                let (lo, hi) = if self.scaled { (20, 30) } else { (100, 110) };
                TaskConfig::Adding {
                    t_min: self.t_min.unwrap_or(lo),
                    t_max: self.t_max.unwrap_or(hi),
                }
            }
            TaskName::Tempord => TaskConfig::TempOrd {
                scaled_down: self.scaled,
            },
            TaskName::Noiseseq => TaskConfig::NoiseSeq { n: self.n },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a single seeded model and print per-epoch losses.
    Train {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, value_enum)]
        cell: CellKind,
        /// Architecture widths, e.g. 5,5 (for DMU the last entry is the
        /// memory width).
        #[arg(long, value_delimiter = ',', required = true)]
        arch: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1024)]
        samples_per_epoch: usize,
        #[arg(long, default_value_t = 1e-6)]
        stop_threshold: f64,
        /// Disable the memory-scaling controller (S stays 1).
        #[arg(long)]
        no_scaling: bool,
        /// Save trained parameters to this JSON file.
        #[arg(long)]
        save_params: Option<PathBuf>,
    },
    /// Run a multi-seed experiment from a TOML config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Override the number of runs per cell.
        #[arg(long)]
        runs: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker thread count (default: DMU_WORKERS or all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Also emit gnuplot-ready .dat files per curve.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Print the trainable-weight count of a cell plus readout.
    CountWeights {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, value_enum)]
        cell: CellKind,
        #[arg(long, value_delimiter = ',', required = true)]
        arch: Vec<usize>,
    },
    /// Dump generated samples as line-delimited JSON.
    GenData {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the scaling-factor interpolation chain on a norm list.
    CheckScaling {
        /// Gradient norms in time order, e.g. 4,2,1.
        #[arg(long, value_delimiter = ',', required = true)]
        norms: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train {
            task,
            cell,
            arch,
            seed,
            epochs,
            lr,
            batch_size,
            samples_per_epoch,
            stop_threshold,
            no_scaling,
            save_params,
        } => {
            let generator = task.to_config().build(seed).map_err(|e| e.to_string())?;
            let config = TrainConfig {
                batch_size,
                max_epochs: epochs,
                samples_per_epoch,
                stop_threshold,
                learning_rate: lr,
                scaling: ScalingConfig {
                    enabled: !no_scaling,
                    ..ScalingConfig::default()
                },
                seed,
                ..TrainConfig::default()
            };
            let mut model =
                build_model(cell, &arch, &generator, seed).map_err(|e| e.to_string())?;
            let report =
                run_until_stop(&mut model, &generator, &config).map_err(|e| e.to_string())?;
            println!("epoch\ttrain_loss\tval_loss\tscale_S");
            for record in &report.history {
                println!(
                    "{}\t{:.6e}\t{:.6e}\t{:.6}",
                    record.epoch, record.train_loss, record.val_loss, record.scale_s
                );
            }
            println!("status: {}", report.status.as_str());
            if let Some(test) = report.test_loss {
                println!("test_loss: {test:.6e}");
            }
            if let Some(path) = save_params {
                let params: Vec<_> = model.params().into_iter().cloned().collect();
                dmu::cells::save_params(&path, &params).map_err(|e| e.to_string())?;
                println!("saved parameters to {}", path.display());
            }
            Ok(())
        }
        Command::Experiment {
            config,
            runs,
            out,
            workers,
            gnuplot,
        } => {
            let workers = workers.or_else(|| {
                std::env::var("DMU_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            });
            if let Some(n) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| e.to_string())?;
            }
            let mut spec = ExperimentSpec::load(&config).map_err(|e| e.to_string())?;
            if let Some(r) = runs {
                spec.runs = r;
            }
            let out_dir = out
                .or_else(|| spec.output.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("experiment-out"));
            let result = run_experiment(&spec).map_err(|e| e.to_string())?;
            emit_reports(&result, &out_dir, gnuplot).map_err(|e| e.to_string())?;
            for (label, summary) in dmu::experiment::summarize(&result) {
                println!(
                    "{label}: {} runs, {} diverged",
                    summary.runs, summary.diverged
                );
            }
            println!("reports written to {}", out_dir.display());
            Ok(())
        }
        Command::CountWeights { task, cell, arch } => {
            let generator = task.to_config().build(0).map_err(|e| e.to_string())?;
            println!("{}", weight_count_for_task(&generator, cell, &arch));
            Ok(())
        }
        Command::GenData {
            task,
            count,
            seed,
            out,
        } => {
            let generator = task.to_config().build(seed).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<_> = (0..count).map(|_| generator.sample(&mut rng)).collect();
            let file = File::create(&out).map_err(|e| e.to_string())?;
            let mut writer = BufWriter::new(file);
            dump_samples(&samples, &mut writer).map_err(|e| e.to_string())?;
            println!("wrote {count} samples to {}", out.display());
            Ok(())
        }
        Command::CheckScaling { norms, p, epsilon } => {
            let factors = interpolation_chain(&norms, p, epsilon).map_err(|e| e.to_string())?;
            println!("S0 factor (inverse mean ratio):      {:.12}", factors.s0);
            println!("S1 factor (inverse p-mean ratio):    {:.12}", factors.s1);
            println!("S2 factor (weighted sum ratio):      {:.12}", factors.s2);
            println!("S3 factor (softened toward 1):       {:.12}", factors.s3);
            println!("S4 factor (entering the average):    {:.12}", factors.s4);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
