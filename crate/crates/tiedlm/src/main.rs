use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use tiedlm_core::experiment::{SweepSpec, SweepVariable, Variant};
use tiedlm_core::trainer::TrainConfig;

use tiedlm::commands::{
    cmd_eval, cmd_grid, cmd_predict, cmd_subspace, cmd_sweep, cmd_train, EvalRequest, GridRequest,
    PredictRequest, SubspaceRequest, SweepRequest, TrainRequest,
};
use tiedlm::config::{apply_config_text, apply_env, apply_kv, default_config, preset};

/// LSTM language models with tied input/output embeddings and an
/// embedding-driven augmented loss.
///
/// Configuration resolves in layers: built-in defaults, then --preset,
/// then --config FILE (key=value lines), then TIEDLM_<KEY> environment
/// variables (the key upper-cased, e.g. TIEDLM_LR_INIT), then individual
/// flags.  The resolved config is echoed into the output directory.
#[derive(Parser)]
#[command(name = "tiedlm", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, vocabulary, and a log CSV.
    Train(TrainArgs),
    /// Report perplexity of a checkpoint on one or more corpus files.
    Eval(EvalArgs),
    /// Show the top next-token predictions after a prompt.
    Predict(PredictArgs),
    /// Print the input/output embedding subspace distance of a checkpoint.
    Subspace(SubspaceArgs),
    /// Sweep the mixture weight or the temperature and record subspace distances.
    Sweep(SweepArgs),
    /// Train the four variants (baseline, al, re, real) and tabulate them.
    Grid(GridArgs),
}

/// Config layering shared by train/grid.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Named preset: ptb-small, ptb-medium, ptb-large, wt2-small, wt2-medium, tiny.
    #[arg(long)]
    preset: Option<String>,
    /// key=value config file (unknown keys are errors).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variant shorthand: baseline, al, re, real (sets mode and tie_weights).
    #[arg(long)]
    variant: Option<String>,

    /// Vocabulary size; 0 derives it from the training corpus.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Word embedding width.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// LSTM hidden width.
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Number of stacked LSTM layers.
    #[arg(long)]
    num_layers: Option<usize>,
    /// Share the output projection with the embedding (true/false).
    #[arg(long)]
    tie_weights: Option<bool>,
    /// Dropout probability in [0, 1).
    #[arg(long)]
    dropout_p: Option<f64>,
    /// Renormalize embedding vectors to unit norm after each step (true/false).
    #[arg(long)]
    unit_norm_embeddings: Option<bool>,
    /// Loss mode: baseline, alpha, beta.
    #[arg(long)]
    mode: Option<String>,
    /// Softmax temperature for the augmented loss.
    #[arg(long)]
    tau: Option<f64>,
    /// Explicit augmented-loss weight (overrides gamma when set).
    #[arg(long)]
    alpha: Option<f64>,
    /// Augmented-loss weight ratio; the effective weight is gamma*tau.
    #[arg(long)]
    gamma: Option<f64>,
    /// Mixture weight for beta mode.
    #[arg(long)]
    beta: Option<f64>,
    /// Treat the target distribution as a constant in the backward pass (true/false).
    #[arg(long)]
    stop_gradient_through_target: Option<bool>,
    /// Initial learning rate.
    #[arg(long)]
    lr_init: Option<f64>,
    /// Epoch after which the learning rate starts decaying.
    #[arg(long)]
    decay_start_epoch: Option<usize>,
    /// Multiplicative learning-rate decay per epoch past the start.
    #[arg(long)]
    decay_rate: Option<f64>,
    /// Global-norm clipping threshold.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// BPTT window length.
    #[arg(long)]
    bptt_steps: Option<usize>,
    /// Number of parallel sequences per batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Root seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Record the subspace distance every epoch (true/false).
    #[arg(long)]
    log_subspace: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.preset {
            Some(name) => preset(name)?,
            None => default_config(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
            apply_config_text(&mut cfg, &text)?;
        }
        apply_env(&mut cfg)?;
        if let Some(v) = &self.variant {
            let variant: Variant = v.parse()?;
            variant.apply(&mut cfg);
        }
        macro_rules! flag {
            ($field:ident, $key:literal) => {
                if let Some(v) = &self.$field {
                    apply_kv(&mut cfg, $key, &v.to_string())?;
                }
            };
        }
        flag!(vocab_size, "vocab_size");
        flag!(embed_dim, "embed_dim");
        flag!(hidden_dim, "hidden_dim");
        flag!(num_layers, "num_layers");
        flag!(tie_weights, "tie_weights");
        flag!(dropout_p, "dropout_p");
        flag!(unit_norm_embeddings, "unit_norm_embeddings");
        flag!(mode, "mode");
        flag!(tau, "tau");
        flag!(alpha, "alpha");
        flag!(gamma, "gamma");
        flag!(beta, "beta");
        flag!(stop_gradient_through_target, "stop_gradient_through_target");
        flag!(lr_init, "lr_init");
        flag!(decay_start_epoch, "decay_start_epoch");
        flag!(decay_rate, "decay_rate");
        flag!(clip_norm, "clip_norm");
        flag!(epochs, "epochs");
        flag!(bptt_steps, "bptt_steps");
        flag!(batch_size, "batch_size");
        flag!(seed, "seed");
        flag!(log_subspace, "log_subspace");
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (one sentence per line, whitespace-tokenized).
    #[arg(long)]
    train: PathBuf,
    /// Validation corpus; enables per-epoch validation and best-checkpoint tracking.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Output directory for checkpoints, vocabulary, log, and resolved config.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary sidecar; defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Training split to score.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation split to score.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test split to score.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Evaluation window length (the perplexity is window-split invariant).
    #[arg(long, default_value_t = 35)]
    bptt_steps: usize,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint to predict with.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary sidecar; defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Prompt text; out-of-vocabulary words map to <unk>.
    #[arg(long)]
    prompt: String,
    /// How many top predictions to print.
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct SubspaceArgs {
    /// Checkpoint to analyze.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Training corpus the sweep slices draw from.
    #[arg(long)]
    train: PathBuf,
    /// Output directory for the runs and aggregate CSV files.
    #[arg(long)]
    out: PathBuf,
    /// Which knob to sweep: beta or tau.
    #[arg(long)]
    sweep: SweepVariableArg,
    /// Swept values, comma-separated; defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Fixed temperature while sweeping beta.
    #[arg(long)]
    tau: Option<f64>,
    /// Fixed mixture weight while sweeping tau.
    #[arg(long)]
    beta: Option<f64>,
    /// Runs (seeds) per swept value.
    #[arg(long)]
    runs: Option<usize>,
    /// Contiguous training-slice length per run.
    #[arg(long)]
    slice_len: Option<usize>,
    /// Hidden (and embedding) width of the swept models.
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Training epochs per run.
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size per run.
    #[arg(long)]
    batch_size: Option<usize>,
    /// BPTT window length per run.
    #[arg(long)]
    bptt_steps: Option<usize>,
    /// Initial learning rate per run.
    #[arg(long)]
    lr_init: Option<f64>,
    /// Global-norm clipping threshold per run.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Root seed; run seeds derive from it, the value, and the run index.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full-size sweep defaults (300 units, 20k-token slices, 10 runs).
    #[arg(long)]
    full_scale: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SweepVariableArg {
    Beta,
    Tau,
}

impl From<SweepVariableArg> for SweepVariable {
    fn from(v: SweepVariableArg) -> SweepVariable {
        match v {
            SweepVariableArg::Beta => SweepVariable::Beta,
            SweepVariableArg::Tau => SweepVariable::Tau,
        }
    }
}

impl SweepArgs {
    fn spec(&self) -> SweepSpec {
        let variable = SweepVariable::from(self.sweep);
        let mut spec = if self.full_scale {
            SweepSpec::full_scale(variable)
        } else {
            SweepSpec::desk(variable)
        };
        if let Some(v) = &self.values {
            spec.values = v.clone();
        }
        if let Some(v) = self.tau {
            spec.fixed_tau = v;
        }
        if let Some(v) = self.beta {
            spec.fixed_beta = v;
        }
        if let Some(v) = self.runs {
            spec.runs_per_value = v;
        }
        if let Some(v) = self.slice_len {
            spec.slice_len = v;
        }
        if let Some(v) = self.hidden_dim {
            spec.hidden_dim = v;
        }
        if let Some(v) = self.epochs {
            spec.epochs = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        if let Some(v) = self.bptt_steps {
            spec.bptt_steps = v;
        }
        if let Some(v) = self.lr_init {
            spec.lr_init = v;
        }
        if let Some(v) = self.clip_norm {
            spec.clip_norm = v;
        }
        if let Some(v) = self.seed {
            spec.base_seed = v;
        }
        spec
    }
}

#[derive(Args)]
struct GridArgs {
    /// Training corpus.
    #[arg(long)]
    train: PathBuf,
    /// Validation corpus (drives best-checkpoint selection).
    #[arg(long)]
    valid: PathBuf,
    /// Test corpus scored with each variant's best checkpoint.
    #[arg(long)]
    test: PathBuf,
    /// Output directory for the table, logs, and best checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(TrainRequest {
            config: args.config.resolve()?,
            train: args.train,
            valid: args.valid,
            out: args.out,
        }),
        Command::Eval(args) => {
            let mut splits = Vec::new();
            for (name, path) in [
                ("train", &args.train),
                ("valid", &args.valid),
                ("test", &args.test),
            ] {
                if let Some(p) = path {
                    splits.push((name.to_string(), p.clone()));
                }
            }
            cmd_eval(EvalRequest {
                checkpoint: args.checkpoint,
                vocab: args.vocab,
                splits,
                bptt_steps: args.bptt_steps,
            })
        }
        Command::Predict(args) => cmd_predict(PredictRequest {
            checkpoint: args.checkpoint,
            vocab: args.vocab,
            prompt: args.prompt,
            k: args.k,
        }),
        Command::Subspace(args) => cmd_subspace(SubspaceRequest {
            checkpoint: args.checkpoint,
        }),
        Command::Sweep(args) => cmd_sweep(SweepRequest {
            spec: args.spec(),
            train: args.train,
            out: args.out,
        }),
        Command::Grid(args) => cmd_grid(GridRequest {
            config: args.config.resolve()?,
            train: args.train,
            valid: args.valid,
            test: args.test,
            out: args.out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
