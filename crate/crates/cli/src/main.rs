use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lexhyper::pipeline;
use lexhyper::{Error, RunConfig, Topology};

/// Joint entity and relation extraction over character-tokenised text.
#[derive(Parser, Debug)]
#[command(name = "lexhyper", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

/// Settings layered over the JSON config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Relative paths go under $LEXHYPER_OUTPUT_ROOT when set.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Directory holding the generated corpus, lexicon and schema.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fraction of tokens kept as candidate spans.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Fixed scale on the blended encoder output.
    #[arg(long, global = true)]
    omega: Option<f64>,
    /// Initial weight of the general encoder in the blend.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    topology: Option<Topology>,
    /// Hypergraph layers.
    #[arg(long, global = true)]
    layers: Option<usize>,
    /// Hidden size of the classifier heads.
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    max_span_width: Option<usize>,
    /// Encoder width.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Context window of the encoder.
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Epochs for the stage being trained.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Batch size for the stage being trained.
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    encoder_lr: Option<f64>,
    #[arg(long, global = true)]
    task_lr: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with train/dev/test splits, lexicon and schema.
    Generate {
        #[arg(long)]
        num_docs: Option<usize>,
        /// Seed for the generator; defaults to the configured generator seed.
        #[arg(long)]
        corpus_seed: Option<u64>,
    },
    /// Train the candidate span generator and report dev recall.
    TrainSpangen,
    /// Train the joint model on top of a trained span generator.
    Train {
        /// Start the joint encoder from the span generator's weights.
        #[arg(long)]
        warm_start: bool,
    },
    /// Score a corpus split with a trained pipeline.
    Eval {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test, conflicts_with = "corpus")]
        split: Split,
        /// Any corpus file in the training format.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Label raw text, one sentence per line.
    Predict {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare topologies and hypergraph depths on the dev split.
    Ablate {
        /// Small grid: fewer documents and epochs per run.
        #[arg(long)]
        reduced: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Spangen,
    Joint,
    None,
}

fn build_config(o: &Overrides, stage: Stage) -> Result<RunConfig, Error> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(o.output_dir => cfg.output_dir);
    if o.data_dir.is_some() {
        cfg.data_dir = o.data_dir.clone();
    }
    set!(o.seed => cfg.seed);
    set!(o.gamma => cfg.joint.gamma);
    set!(o.omega => cfg.joint.omega);
    set!(o.lambda => cfg.joint.lambda_init);
    set!(o.topology => cfg.joint.topology);
    set!(o.layers => cfg.joint.hgnn_layers);
    set!(o.hidden => cfg.joint.head_hidden);
    if o.max_span_width.is_some() {
        cfg.max_span_width = o.max_span_width;
    }
    set!(o.dim => cfg.encoder.dim);
    set!(o.window => cfg.encoder.window);
    let train = match stage {
        Stage::Spangen => Some(&mut cfg.spangen_train),
        Stage::Joint => Some(&mut cfg.joint_train),
        Stage::None => None,
    };
    if let Some(t) = train {
        set!(o.epochs => t.epochs);
        set!(o.batch_size => t.batch_size);
        set!(o.encoder_lr => t.optimizer.encoder_lr);
        set!(o.task_lr => t.optimizer.task_lr);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let stage = match cli.command {
        Command::TrainSpangen => Stage::Spangen,
        Command::Train { .. } | Command::Ablate { .. } => Stage::Joint,
        _ => Stage::None,
    };
    let mut cfg = build_config(&cli.overrides, stage)?;
    match cli.command {
        Command::Generate { num_docs, corpus_seed } => {
            if let Some(n) = num_docs {
                cfg.generator.num_docs = n;
            }
            if let Some(s) = corpus_seed {
                cfg.generator.seed = s;
            }
            let s = pipeline::cmd_generate(&cfg)?;
            println!("wrote {} train, {} dev, {} test documents to {}", s.train, s.dev, s.test, s.data_dir.display());
            println!("{}", serde_json::to_string(&s.tallies)?);
        }
        Command::TrainSpangen => {
            let r = pipeline::cmd_train_spangen(&cfg)?;
            println!(
                "dev recall@P (gamma {}): {:.4} ({} of {} gold spans); random selection {:.4}",
                r.gamma, r.dev.recall, r.dev.covered, r.dev.gold, r.dev.random_baseline
            );
        }
        Command::Train { warm_start } => {
            cfg.warm_start |= warm_start;
            let r = pipeline::cmd_train(&cfg)?;
            print!("{}", r.dev.table());
        }
        Command::Eval { bundle, split, corpus, json } => {
            let resolved = cfg.resolve();
            let corpus = corpus.unwrap_or_else(|| {
                let slot = match split {
                    Split::Train => &resolved.train_file,
                    Split::Dev => &resolved.dev_file,
                    Split::Test => &resolved.test_file,
                };
                slot.clone().expect("resolved")
            });
            let r = pipeline::cmd_eval(&cfg, bundle.as_deref(), &corpus)?;
            if json {
                println!("{}", r.to_json());
            } else {
                print!("{}", r.table());
            }
        }
        Command::Predict { bundle, input, output } => {
            let n = pipeline::cmd_predict(&cfg, bundle.as_deref(), &input, &output)?;
            println!("labelled {n} sentences into {}", output.display());
        }
        Command::Ablate { reduced } => {
            cfg.ablation.reduced |= reduced;
            let r = pipeline::cmd_ablate(&cfg)?;
            print!("{}", r.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
