use std::path::PathBuf;
use std::process::ExitCode;

use bytecnn::pipeline::{self, PipelineConfig, PipelineError};
use bytecnn::synth::SynthSpec;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bytecnn", version, about = "Raw-byte traffic classification with a 1D CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config layered over the built-in defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set training.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// session, flow or packet.
    #[arg(long)]
    representation: Option<String>,
    /// all-headers, only-eth, without-eth or no-headers.
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut sets = self.overrides.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        if let Some(r) = &self.representation {
            sets.push(format!("representation=\"{r}\""));
        }
        if let Some(c) = &self.category {
            sets.push(format!("category=\"{c}\""));
        }
        if let Some(e) = self.epochs {
            sets.push(format!("training.epochs={e}"));
        }
        let mut cfg = PipelineConfig::load(self.config.as_deref(), &sets)?;
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split captures into units and write per-scenario manifests.
    Split(Common),
    /// Build the labeled dataset and export it as hex.
    Encode(Common),
    /// Train a model and write it with its per-epoch history.
    Train(Common),
    /// Evaluate a saved model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        model: PathBuf,
    },
    /// Time inference of a saved model on the test split.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        model: PathBuf,
    },
    /// Train and evaluate every representation and header category.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also time each representation's all-headers model.
        #[arg(long)]
        bench: bool,
    },
    /// Generate labeled synthetic captures and a matching config.
    Synth {
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 1000)]
        packets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check that artifacts were produced by the given config.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
    },
    /// Print the resolved config and its hash.
    Config(Common),
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Split(c) => {
            for s in pipeline::run_split(&c.load()?)? {
                println!(
                    "{}: {} packets -> {} {} units (excluded: {} unparsable, {} without five-tuple)",
                    s.scenario,
                    s.packets,
                    s.units,
                    s.representation,
                    s.unparsable,
                    s.no_five_tuple
                );
            }
        }
        Command::Encode(c) => {
            let cfg = c.load()?;
            let ds = pipeline::run_encode(&cfg)?;
            println!(
                "{} samples, {} classes, train/val/test {}/{}/{} -> {}",
                ds.samples.len(),
                ds.n_classes(),
                ds.splits.train.len(),
                ds.splits.val.len(),
                ds.splits.test.len(),
                cfg.output_dir.join("dataset.hex").display()
            );
        }
        Command::Train(c) => {
            let out = pipeline::run_train(&c.load()?)?;
            if let Some(best) = out.history.best() {
                println!(
                    "best epoch {} val accuracy {:.4} -> {}",
                    best.epoch,
                    best.val_accuracy,
                    out.model_path.display()
                );
            }
        }
        Command::Eval { common, model } => {
            let m = pipeline::run_eval(&common.load()?, &model)?;
            println!("accuracy {:.4} f1 {:.4} on {} samples", m.accuracy, m.weighted_f1, m.total);
        }
        Command::Bench { common, model } => {
            let r = pipeline::run_bench(&common.load()?, &model)?;
            println!(
                "wall {:.6}s cpu {:.6}s user {:.6}s system utilization {:.2} ({} samples, {} reps)",
                r.wall_test_seconds,
                r.cpu_user_seconds,
                r.cpu_system_seconds,
                r.utilization,
                r.sample_count,
                r.repetitions
            );
        }
        Command::Sweep { common, bench } => {
            let cfg = common.load()?;
            let out = pipeline::run_sweep(&cfg, bench)?;
            println!(
                "{} cells -> {}",
                out.cells.len(),
                cfg.output_dir.join("sweep.txt").display()
            );
        }
        Command::Synth {
            classes,
            packets,
            seed,
            out,
        } => {
            let spec = SynthSpec::with_classes(classes, packets, seed);
            let scenarios = pipeline::run_synth(&spec, &out)?;
            for s in &scenarios {
                println!("{} {}", s.label, s.path.display());
            }
            println!("config {}", out.join("pipeline.toml").display());
        }
        Command::Verify { common, artifacts } => {
            let hash = pipeline::verify(&common.load()?, &artifacts)?;
            println!("{} artifacts match config {hash}", artifacts.len());
        }
        Command::Config(c) => {
            let cfg = c.load()?;
            print!("{}", cfg.to_toml());
            println!("# config_hash={}", cfg.config_hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
