//! The work behind each CLI subcommand, kept apart from argument parsing
//! so integration tests can drive it directly.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use tiedlm_core::corpus::{batchify, TokenStream, Vocabulary};
use tiedlm_core::experiment::{run_sweep_point, RunRecord, SweepResult, SweepSpec, Variant};
use tiedlm_core::linalg::softmax_with_temperature;
use tiedlm_core::net::{forward, LstmState, ModelConfig, ModelParams};
use tiedlm_core::subspace::{model_subspace_distance, principal_cosines};
use tiedlm_core::trainer::{
    evaluate_perplexity, train, EpochRecord, TrainConfig, TrainHooks,
};
use tiedlm_core::Error;

use crate::checkpoint::{load_checkpoint, load_vocab, save_checkpoint, save_vocab};
use crate::config::render_config;
use crate::report;

/// Wall-clock hooks with per-epoch progress on stderr (timestamped output
/// stays off stdout so command output is deterministic).
pub struct Progress {
    start: Instant,
    quiet: bool,
}

impl Progress {
    pub fn new(quiet: bool) -> Progress {
        Progress {
            start: Instant::now(),
            quiet,
        }
    }
}

impl TrainHooks for Progress {
    fn now_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        if self.quiet {
            return;
        }
        let valid = r
            .valid_ppl
            .map_or_else(String::new, |p| format!(" valid_ppl {p:.2}"));
        let dist = r
            .subspace_distance
            .map_or_else(String::new, |d| format!(" subspace {d:.4}"));
        eprintln!(
            "# epoch {} lr {:.4} train_ppl {:.2}{valid}{dist} ({:.1}s)",
            r.epoch, r.lr, r.train_ppl, r.seconds
        );
    }
}

fn load_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn encode(vocab: &Vocabulary, lines: &[String]) -> TokenStream {
    TokenStream::encode(vocab, lines.iter().map(String::as_str))
}

/// Fill in `vocab_size` from the corpus (or check it against it) and stamp
/// the run seed into the model config.
fn finalize_config(cfg: &mut TrainConfig, vocab: &Vocabulary) -> Result<()> {
    if cfg.model.vocab_size == 0 {
        cfg.model.vocab_size = vocab.size();
    } else if cfg.model.vocab_size != vocab.size() {
        bail!(
            "config says vocab_size={} but the training corpus has {} types",
            cfg.model.vocab_size,
            vocab.size()
        );
    }
    cfg.model.seed = cfg.seed;
    cfg.validate()?;
    Ok(())
}

pub struct TrainRequest {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub out: PathBuf,
    pub config: TrainConfig,
}

pub fn cmd_train(req: TrainRequest) -> Result<()> {
    let mut cfg = req.config;
    let train_lines = load_lines(&req.train)?;
    let vocab = Vocabulary::build(train_lines.iter().map(String::as_str));
    let train_stream = encode(&vocab, &train_lines);
    let valid_stream = match &req.valid {
        Some(path) => Some(encode(&vocab, &load_lines(path)?)),
        None => None,
    };
    finalize_config(&mut cfg, &vocab)?;

    fs::create_dir_all(&req.out)
        .with_context(|| format!("creating output directory {}", req.out.display()))?;
    fs::write(req.out.join("config.txt"), render_config(&cfg))?;

    let mut hooks = Progress::new(false);
    let outcome = train(&train_stream, valid_stream.as_ref(), &cfg, &mut hooks)?;

    save_checkpoint(&req.out.join("final.ckpt"), &cfg.model, &outcome.final_params)?;
    save_checkpoint(&req.out.join("best.ckpt"), &cfg.model, &outcome.best_params)?;
    save_vocab(&req.out.join("vocab.txt"), &vocab)?;
    report::write_train_log(&req.out.join("log.csv"), &outcome.log)?;

    let last = outcome
        .log
        .records
        .last()
        .ok_or_else(|| anyhow!("training produced no epochs"))?;
    println!("final_train_ppl,{}", last.train_ppl);
    if let Some(v) = last.valid_ppl {
        println!("final_valid_ppl,{v}");
    }
    if let Some(best) = outcome.best_epoch {
        println!("best_epoch,{best}");
    }
    Ok(())
}

/// Load a checkpoint together with its vocabulary sidecar; the sidecar
/// must agree with the model's vocabulary size.
fn load_model(
    checkpoint: &Path,
    vocab_path: Option<&Path>,
) -> Result<(ModelConfig, ModelParams, Vocabulary)> {
    let (cfg, params) = load_checkpoint(checkpoint)?;
    let sidecar = match vocab_path {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("vocab.txt"),
    };
    let vocab = load_vocab(&sidecar)?;
    if vocab.size() != cfg.vocab_size {
        bail!(
            "vocabulary {} has {} entries but the checkpoint was trained with {}",
            sidecar.display(),
            vocab.size(),
            cfg.vocab_size
        );
    }
    Ok((cfg, params, vocab))
}

pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub vocab: Option<PathBuf>,
    pub splits: Vec<(String, PathBuf)>,
    pub bptt_steps: usize,
}

pub fn cmd_eval(req: EvalRequest) -> Result<()> {
    if req.splits.is_empty() {
        bail!("nothing to evaluate: pass at least one corpus path");
    }
    let (_, params, vocab) = load_model(&req.checkpoint, req.vocab.as_deref())?;
    for (name, path) in &req.splits {
        let stream = encode(&vocab, &load_lines(path)?);
        let ppl = evaluate_perplexity(&params, &stream, req.bptt_steps)?;
        println!("{name},{ppl}");
    }
    Ok(())
}

pub struct PredictRequest {
    pub checkpoint: PathBuf,
    pub vocab: Option<PathBuf>,
    pub prompt: String,
    pub k: usize,
}

pub fn cmd_predict(req: PredictRequest) -> Result<()> {
    let (cfg, params, vocab) = load_model(&req.checkpoint, req.vocab.as_deref())?;
    let tokens: Vec<&str> = req.prompt.split_whitespace().collect();
    if tokens.is_empty() {
        bail!("empty prompt");
    }
    let mut k = req.k;
    if k == 0 {
        bail!("k must be positive");
    }
    if k > vocab.size() {
        eprintln!("# k={k} exceeds the vocabulary; clamping to {}", vocab.size());
        k = vocab.size();
    }

    // Feed the prompt as one batch-1 window; the appended filler token
    // only provides the unused final target.
    let mut ids: Vec<u32> = tokens.iter().map(|t| vocab.id(t)).collect();
    let steps = ids.len();
    ids.push(vocab.unk_id());
    let stream = TokenStream::from_ids(ids, vocab.size())?;
    let windows = batchify(&stream, 1, steps)?;
    let init = LstmState::zeros(cfg.num_layers, cfg.hidden_dim, 1);
    let fwd = forward(&params, &windows[0], None, &init)?;
    let logits = fwd.logits.last().expect("prompt produced no steps").col(0);
    let probs = softmax_with_temperature(&logits, 1.0)?;

    let mut order: Vec<usize> = (0..vocab.size()).collect();
    order.sort_by(|&a, &b| {
        probs.values()[b]
            .partial_cmp(&probs.values()[a])
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    });

    let context: Vec<&str> = tokens
        .iter()
        .map(|t| {
            if vocab.id(t) == vocab.unk_id() {
                "<unk>"
            } else {
                *t
            }
        })
        .collect();
    println!("context,{}", context.join(" "));
    for &i in order.iter().take(k) {
        println!("{},{}", vocab.token(i as u32)?, probs.values()[i]);
    }
    Ok(())
}

pub struct SubspaceRequest {
    pub checkpoint: PathBuf,
}

pub fn cmd_subspace(req: SubspaceRequest) -> Result<()> {
    let (_, params) = load_checkpoint(&req.checkpoint)?;
    let rep = model_subspace_distance(&params)?;
    println!("{}", rep.distance);
    if rep.tied {
        println!("tied: the output projection is the embedding transpose, distance 0 by construction");
    } else {
        let out = params
            .output
            .as_ref()
            .expect("untied model has an output projection");
        let cosines = principal_cosines(&params.embedding.transpose(), &out.weight)?;
        let rendered: Vec<String> = cosines.iter().map(f64::to_string).collect();
        println!("principal_cosines,{}", rendered.join(","));
    }
    Ok(())
}

pub struct SweepRequest {
    pub train: PathBuf,
    pub out: PathBuf,
    pub spec: SweepSpec,
}

/// Run (or resume) a sweep: completed (value, seed) pairs found in the
/// runs file are skipped, every newly finished run is appended and
/// flushed immediately, and the aggregate file is rebuilt at the end.
pub fn cmd_sweep(req: SweepRequest) -> Result<()> {
    let spec = req.spec;
    spec.validate()?;
    let train_lines = load_lines(&req.train)?;
    let vocab = Vocabulary::build(train_lines.iter().map(String::as_str));
    let stream = encode(&vocab, &train_lines);

    fs::create_dir_all(&req.out)
        .with_context(|| format!("creating output directory {}", req.out.display()))?;
    let runs_path = req.out.join(format!("sweep_{}_runs.csv", spec.variable.name()));
    let agg_path = req.out.join(format!("sweep_{}_agg.csv", spec.variable.name()));

    let existing = if runs_path.exists() {
        report::read_sweep_runs(&runs_path, spec.variable)?
    } else {
        Vec::new()
    };
    let done: HashSet<(u64, u64)> = existing
        .iter()
        .map(|r| (r.value.to_bits(), r.seed))
        .collect();

    let mut by_key: Vec<RunRecord> = existing;
    for &value in &spec.values {
        for run in 0..spec.runs_per_value {
            let seed = spec.run_seed(value, run);
            if done.contains(&(value.to_bits(), seed)) {
                continue;
            }
            let mut hooks = Progress::new(true);
            let distance = match run_sweep_point(&spec, &stream, value, run, &mut hooks) {
                Ok(d) => Some(d),
                Err(Error::NonFiniteLoss { .. }) | Err(Error::NonFinite(_)) => None,
                Err(other) => return Err(other.into()),
            };
            let rec = RunRecord {
                value,
                seed,
                distance,
            };
            report::append_sweep_run(&runs_path, spec.variable, &rec)?;
            eprintln!(
                "# {}={} run {} seed {}: {}",
                spec.variable.name(),
                value,
                run,
                seed,
                rec.distance
                    .map_or_else(|| "diverged".to_string(), |d| format!("{d:.4}")),
            );
            by_key.push(rec);
        }
    }

    // Aggregate in spec order regardless of completion order.
    let mut ordered = Vec::new();
    for &value in &spec.values {
        for run in 0..spec.runs_per_value {
            let seed = spec.run_seed(value, run);
            if let Some(rec) = by_key
                .iter()
                .find(|r| r.value.to_bits() == value.to_bits() && r.seed == seed)
            {
                ordered.push(rec.clone());
            }
        }
    }
    let result = SweepResult {
        variable: spec.variable,
        records: ordered,
    };
    let points = result.aggregate();
    report::write_sweep_agg(&agg_path, spec.variable, &points)?;
    for p in &points {
        println!(
            "{},{},{},{},{}",
            spec.variable.name(),
            p.value,
            p.mean,
            p.std,
            p.runs_ok
        );
    }
    Ok(())
}

pub struct GridRequest {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub out: PathBuf,
    pub config: TrainConfig,
}

/// Train the four variants from one base config and write the comparison
/// table plus each variant's training log.
pub fn cmd_grid(req: GridRequest) -> Result<()> {
    let mut cfg = req.config;
    let train_lines = load_lines(&req.train)?;
    let vocab = Vocabulary::build(train_lines.iter().map(String::as_str));
    let train_stream = encode(&vocab, &train_lines);
    let valid_stream = encode(&vocab, &load_lines(&req.valid)?);
    let test_stream = encode(&vocab, &load_lines(&req.test)?);
    finalize_config(&mut cfg, &vocab)?;

    fs::create_dir_all(&req.out)
        .with_context(|| format!("creating output directory {}", req.out.display()))?;
    fs::write(req.out.join("config.txt"), render_config(&cfg))?;

    let mut rows = Vec::new();
    for variant in Variant::all() {
        let mut vcfg = cfg.clone();
        variant.apply(&mut vcfg);
        eprintln!("# training variant {}", variant.name());
        let mut hooks = Progress::new(false);
        let outcome = train(&train_stream, Some(&valid_stream), &vcfg, &mut hooks)?;
        let best_valid_ppl = outcome
            .log
            .records
            .iter()
            .filter_map(|r| r.valid_ppl)
            .fold(f64::INFINITY, f64::min);
        let test_ppl = evaluate_perplexity(&outcome.best_params, &test_stream, vcfg.bptt_steps)?;
        report::write_train_log(
            &req.out.join(format!("log_{}.csv", variant.name())),
            &outcome.log,
        )?;
        save_checkpoint(
            &req.out.join(format!("best_{}.ckpt", variant.name())),
            &vcfg.model,
            &outcome.best_params,
        )?;
        rows.push(tiedlm_core::experiment::VariantOutcome {
            variant,
            parameter_count: vcfg.model.parameter_count(),
            best_valid_ppl,
            test_ppl,
            log: outcome.log,
        });
    }
    save_vocab(&req.out.join("vocab.txt"), &vocab)?;
    report::write_grid(&req.out.join("grid.csv"), &rows)?;
    print!("{}", report::render_grid(&rows));
    Ok(())
}
