use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trajformer_cli::pipeline::{self, EvaluateOptions, Method, PredictOptions};
use trajformer_cli::synth::Scenario;
use trajformer_cli::{configure_threads, CliError, RunConfig};

/// Context-augmented transformer for pedestrian trajectory prediction.
#[derive(Parser)]
#[command(name = "trajformer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (flat key=value).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set model.d_model=32.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset under <output_dir>/data/<name>.
    Synth {
        #[command(flatten)]
        common: Common,
        /// linear, turn, stop_go, obstacle or crossing.
        #[arg(long)]
        scenario: String,
        /// Number of scenes.
        #[arg(long, short, default_value_t = 1)]
        n: usize,
        /// Dataset directory name; defaults to the scenario name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Resample tracks, cut windows and cache context features.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: String,
    },
    /// Train one method on one dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: String,
        /// context_tf or vanilla_tf.
        #[arg(long, default_value = "context_tf")]
        method: String,
        /// Continue from the existing checkpoint up to train.epochs.
        #[arg(long)]
        resume: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Score methods on held-out datasets and write reports/metrics.{csv,md}.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Test dataset (repeatable); all configured datasets by default.
        #[arg(long)]
        test: Vec<String>,
        /// Dataset the models were trained on; the other dataset by default.
        #[arg(long)]
        train: Option<String>,
        /// Comma-separated subset of context_tf, vanilla_tf, cv_kalman, oracle.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Add the ground-truth predictor as a pipeline self-test.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        allow_same_dataset: bool,
        /// Also write per-window predictions for every method.
        #[arg(long)]
        dump_predictions: bool,
    },
    /// Dump a trained model's predictions and optionally plot them.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Dataset whose windows are predicted.
        #[arg(long)]
        test: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        train: Option<String>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        /// Write one SVG per window over the scene map.
        #[arg(long)]
        plot: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth { common, scenario, n, name } => {
            let cfg = common.load()?;
            let scenario: Scenario = scenario.parse()?;
            let name = name.unwrap_or_else(|| scenario.to_string());
            let r = pipeline::cmd_synth(&cfg, scenario, n, cfg.seed, &name)?;
            println!("wrote {} scenes with {} tracks to {}", r.scenes, r.tracks, r.root.display());
        }
        Command::Preprocess { common, dataset } => {
            let cfg = common.load()?;
            let r = pipeline::cmd_preprocess(&cfg, &dataset)?;
            for (scene, n) in &r.scenes {
                println!("{scene}: {n} windows");
            }
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("{dataset}: {} windows in {} scenes, cache at {}", r.total_windows(), r.scenes.len(), r.cache_dir.display());
        }
        Command::Train {
            common,
            dataset,
            method,
            resume,
            quiet,
        } => {
            let cfg = common.load()?;
            let method: Method = method.parse()?;
            let r = pipeline::cmd_train(&cfg, &dataset, method, resume, |log| {
                if !quiet {
                    let val = log.val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
                    println!("epoch {:>4}  train {:.6}  val {val}  {:.1}s", log.epoch, log.train_loss, log.wall_seconds);
                }
            })?;
            let last = r.history.last();
            println!(
                "trained {method} on {dataset}: {} epochs, {} train / {} val windows, final train loss {}, val loss {}; checkpoint {}",
                r.history.len(),
                r.train_windows,
                r.val_windows,
                last.map(|l| format!("{:.6}", l.train_loss)).unwrap_or_else(|| "-".into()),
                last.and_then(|l| l.val_loss).map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
                r.checkpoint.display()
            );
        }
        Command::Evaluate {
            common,
            test,
            train,
            methods,
            oracle,
            allow_same_dataset,
            dump_predictions,
        } => {
            let cfg = common.load()?;
            let opts = EvaluateOptions {
                tests: test,
                train,
                methods: methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?,
                oracle,
                allow_same_dataset,
                dump_predictions,
            };
            let r = pipeline::cmd_evaluate(&cfg, &opts)?;
            print!("{}", trajformer::evaluation::format_markdown(&r.table));
            println!("wrote {} and {}", r.csv.display(), r.markdown.display());
        }
        Command::Predict {
            common,
            test,
            checkpoint,
            train,
            method,
            limit,
            plot,
        } => {
            let cfg = common.load()?;
            let opts = PredictOptions {
                test,
                checkpoint,
                train,
                method: method.map(|m| m.parse()).transpose()?,
                limit,
                plot,
            };
            let r = pipeline::cmd_predict(&cfg, &opts)?;
            println!("{} predictions for {} windows in {}", r.method, r.windows, r.dump.display());
            if plot {
                println!("{} plots written", r.plots.len());
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
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
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
