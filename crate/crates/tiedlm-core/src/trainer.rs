//! The SGD training loop: truncated BPTT with hidden-state carry inside an
//! epoch, global-norm gradient clipping, a step learning-rate decay, and
//! optional per-epoch validation perplexity.
//!
//! The loop itself is deterministic given the config; anything that needs
//! a clock or wants to stream progress goes through [`TrainHooks`], whose
//! default implementations keep the crate free of wall-time dependencies.

use alloc::format;
use alloc::vec::Vec;

use crate::corpus::{batchify, TokenStream};
use crate::error::{Error, Result};
use crate::linalg::{global_norm, Matrix};
use crate::loss::{total_loss, LossConfig};
use crate::net::{
    forward, renormalize_embedding, DropoutMasks, LstmState, ModelConfig, ModelParams,
};
use crate::rng::{child_seed, fold};
use crate::subspace::model_subspace_distance;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub lr_init: f64,
    /// Last epoch (1-based) that still uses the initial rate; from the
    /// next epoch on the rate is multiplied by `decay_rate` per epoch.
    pub decay_start_epoch: usize,
    pub decay_rate: f64,
    /// Global gradient-norm ceiling; infinity disables clipping.
    pub clip_norm: f64,
    pub epochs: usize,
    pub bptt_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Record the input/output subspace distance each epoch (untied
    /// models; tied models log 0).
    pub log_subspace: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(self.lr_init > 0.0) || !self.lr_init.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lr_init must be positive and finite, got {}",
                self.lr_init
            )));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay_rate must be in (0, 1], got {}",
                self.decay_rate
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.batch_size == 0 || self.bptt_steps == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and bptt_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch index: `lr_init * decay_rate^k` with
/// `k = max(0, epoch - decay_start_epoch)`.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    let k = epoch.saturating_sub(cfg.decay_start_epoch);
    let mut lr = cfg.lr_init;
    for _ in 0..k {
        lr *= cfg.decay_rate;
    }
    lr
}

fn all_tensors_mut(p: &mut ModelParams) -> Vec<&mut Matrix> {
    p.tensors_mut().into_iter().map(|(_, m)| m).collect()
}

/// Scale gradients so their global norm is min(norm, clip); returns the
/// pre-clip norm.  A non-finite norm is an error (diverged training).
pub fn clip_global_norm(grads: &mut ModelParams, clip: f64) -> Result<f64> {
    let tensors: Vec<&Matrix> = grads.tensors().into_iter().map(|(_, m)| m).collect();
    let norm = global_norm(&tensors);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm"));
    }
    if norm > clip {
        let scale = clip / norm;
        for m in all_tensors_mut(grads) {
            m.scale(scale);
        }
    }
    Ok(norm)
}

/// One SGD update: clip, then `p -= lr * g`.  Returns the pre-clip norm.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &mut ModelParams,
    lr: f64,
    clip: f64,
) -> Result<f64> {
    let norm = clip_global_norm(grads, clip)?;
    let gs = grads.tensors();
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(gs) {
        p.add_scaled(g, -lr)?;
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_ppl: f64,
    pub valid_ppl: Option<f64>,
    pub subspace_distance: Option<f64>,
    /// Wall-clock seconds as reported by the hooks (0 with [`NoHooks`]).
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    pub final_params: ModelParams,
    /// Parameters at the best validation epoch; the final parameters when
    /// no validation stream was given.
    pub best_params: ModelParams,
    pub best_epoch: Option<usize>,
    pub log: TrainLog,
}

/// Side-channel for time and progress; the numerics never depend on it.
pub trait TrainHooks {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

/// The do-nothing hooks: zero timestamps, no streaming.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Train a fresh model on `train`, optionally tracking perplexity on
/// `valid` after each epoch.  Hidden state carries across BPTT windows
/// within an epoch and resets at epoch boundaries.  Fully deterministic
/// for a given config: parameter init, dropout masks and everything else
/// derive from `cfg.seed` through named child streams.
pub fn train(
    train_stream: &TokenStream,
    valid_stream: Option<&TokenStream>,
    cfg: &TrainConfig,
    hooks: &mut impl TrainHooks,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_stream.vocab_size() != cfg.model.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "stream vocabulary {} does not match model vocab_size {}",
            train_stream.vocab_size(),
            cfg.model.vocab_size
        )));
    }
    if let Some(v) = valid_stream {
        if v.vocab_size() != cfg.model.vocab_size {
            return Err(Error::InvalidConfig(
                "validation stream vocabulary does not match the model".into(),
            ));
        }
    }

    let windows = batchify(train_stream, cfg.batch_size, cfg.bptt_steps)?;
    let mut params = ModelParams::init(&cfg.model, child_seed(cfg.seed, "init"))?;
    let dropout_root = child_seed(cfg.seed, "dropout");

    let mut log = TrainLog::default();
    let mut best_params = params.clone();
    let mut best_epoch = None;
    let mut best_valid = f64::INFINITY;

    for epoch in 1..=cfg.epochs {
        let t0 = hooks.now_seconds();
        let lr = lr_schedule(cfg, epoch);
        let mut state = LstmState::zeros(
            cfg.model.num_layers,
            cfg.model.hidden_dim,
            cfg.batch_size,
        );
        let mut ce_sum = 0.0;
        let mut positions = 0usize;

        for (w, window) in windows.iter().enumerate() {
            let masks = if cfg.model.dropout_p > 0.0 {
                Some(DropoutMasks::sample(
                    &cfg.model,
                    cfg.batch_size,
                    fold(fold(dropout_root, epoch as u64), w as u64),
                )?)
            } else {
                None
            };
            let fwd = forward(&params, window, masks.as_ref(), &state)?;
            let bd = total_loss(&fwd.logits, window, &params.embedding, &cfg.loss)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFiniteLoss { epoch, window: w },
                    other => other,
                })?;
            let mut grads = crate::net::backward(&params, &fwd.tape, &bd.d_logits)?;
            if let Some(de) = &bd.d_embedding {
                grads.embedding.add_scaled(de, 1.0)?;
            }
            sgd_step(&mut params, &mut grads, lr, cfg.clip_norm).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { epoch, window: w },
                other => other,
            })?;
            if cfg.model.unit_norm_embeddings {
                renormalize_embedding(&mut params);
            }
            state = fwd.final_state;
            ce_sum += bd.ce * window.positions() as f64;
            positions += window.positions();
        }

        let train_ppl = libm::exp(ce_sum / positions as f64);
        let valid_ppl = match valid_stream {
            Some(v) => Some(evaluate_perplexity(&params, v, cfg.bptt_steps)?),
            None => None,
        };
        let subspace_distance = if cfg.log_subspace {
            Some(model_subspace_distance(&params)?.distance)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_ppl,
            valid_ppl,
            subspace_distance,
            seconds: hooks.now_seconds() - t0,
        };
        hooks.on_epoch(&record);
        log.records.push(record);

        if let Some(vp) = valid_ppl {
            if vp < best_valid {
                best_valid = vp;
                best_params = params.clone();
                best_epoch = Some(epoch);
            }
        }
    }

    if valid_stream.is_none() {
        best_params = params.clone();
    }
    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_epoch,
        log,
    })
}

/// exp(mean negative log-likelihood) over the whole stream, batch 1, full
/// state carry, no dropout.  Any window split gives the same answer, so
/// `bptt_steps` only bounds memory.  Read-only: evaluating never perturbs
/// the model.
pub fn evaluate_perplexity(
    params: &ModelParams,
    stream: &TokenStream,
    bptt_steps: usize,
) -> Result<f64> {
    if stream.vocab_size() != params.vocab_size() {
        return Err(Error::InvalidConfig(format!(
            "stream vocabulary {} does not match model vocab {}",
            stream.vocab_size(),
            params.vocab_size()
        )));
    }
    let windows = batchify(stream, 1, bptt_steps)?;
    let mut state = LstmState::zeros(params.num_layers(), params.hidden_dim(), 1);
    let mut nll_sum = 0.0;
    let mut count = 0usize;
    let vocab = params.vocab_size();
    let mut col = alloc::vec![0.0f64; vocab];
    for window in &windows {
        let fwd = forward(params, window, None, &state)?;
        for (t, z) in fwd.logits.iter().enumerate() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = z.get(i, 0);
            }
            let g = window.target(0, t) as usize;
            nll_sum += crate::linalg::log_sum_exp(&col) - col[g];
            count += 1;
        }
        state = fwd.final_state;
    }
    if count == 0 {
        return Err(Error::StreamTooShort {
            len: stream.len(),
            need: 2,
        });
    }
    let ppl = libm::exp(nll_sum / count as f64);
    if !ppl.is_finite() {
        return Err(Error::NonFinite("perplexity"));
    }
    Ok(ppl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenStream;
    use crate::loss::LossMode;
    use crate::net::OutputProjection;
    use crate::rng::rng_from;
    use rand::RngExt;

    fn tiny_cfg(vocab: usize, dim: usize) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                vocab_size: vocab,
                embed_dim: dim,
                hidden_dim: dim,
                num_layers: 2,
                tie_weights: false,
                dropout_p: 0.0,
                unit_norm_embeddings: false,
                seed: 0,
            },
            loss: LossConfig::default(),
            lr_init: 1.0,
            decay_start_epoch: 5,
            decay_rate: 0.9,
            clip_norm: 5.0,
            epochs: 2,
            bptt_steps: 5,
            batch_size: 2,
            seed: 13,
            log_subspace: false,
        }
    }

    fn random_stream(vocab: u32, len: usize, seed: u64) -> TokenStream {
        let mut rng = rng_from(seed);
        TokenStream::from_ids(
            (0..len).map(|_| rng.random_range(0..vocab)).collect(),
            vocab as usize,
        )
        .unwrap()
    }

    #[test]
    fn lr_schedule_trajectories() {
        let mut cfg = tiny_cfg(10, 4);
        cfg.lr_init = 1.0;
        cfg.decay_start_epoch = 5;
        cfg.decay_rate = 0.9;
        for e in 1..=5 {
            assert_eq!(lr_schedule(&cfg, e), 1.0);
        }
        assert!((lr_schedule(&cfg, 6) - 0.9).abs() < 1e-15);
        let expect_10 = 0.9f64 * 0.9 * 0.9 * 0.9 * 0.9;
        assert!((lr_schedule(&cfg, 10) - expect_10).abs() < 1e-15);

        cfg.decay_start_epoch = 1;
        cfg.decay_rate = 0.97;
        assert_eq!(lr_schedule(&cfg, 1), 1.0);
        assert!((lr_schedule(&cfg, 2) - 0.97).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let cfg = tiny_cfg(10, 4).model;
        let mut grads = ModelParams::zeros(&cfg).unwrap();
        grads.embedding.fill(1.0); // norm = sqrt(40)
        let pre = clip_global_norm(&mut grads, 2.0).unwrap();
        assert!((pre - libm::sqrt(40.0)).abs() < 1e-12);
        let tensors: Vec<&Matrix> = grads.tensors().into_iter().map(|(_, m)| m).collect();
        assert!((global_norm(&tensors) - 2.0).abs() < 1e-9);

        // Below the ceiling: untouched.
        let mut small = ModelParams::zeros(&cfg).unwrap();
        small.embedding.set(0, 0, 0.5);
        let pre = clip_global_norm(&mut small, 2.0).unwrap();
        assert!((pre - 0.5).abs() < 1e-15);
        assert_eq!(small.embedding.get(0, 0), 0.5);

        let mut bad = ModelParams::zeros(&cfg).unwrap();
        bad.embedding.set(0, 0, f64::NAN);
        assert!(clip_global_norm(&mut bad, 2.0).is_err());
    }

    #[test]
    fn sgd_step_applies_scaled_gradients() {
        let cfg = tiny_cfg(6, 3).model;
        let mut params = ModelParams::zeros(&cfg).unwrap();
        let mut grads = ModelParams::zeros(&cfg).unwrap();
        grads.embedding.set(1, 2, 2.0);
        sgd_step(&mut params, &mut grads, 0.5, 100.0).unwrap();
        assert_eq!(params.embedding.get(1, 2), -1.0);
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let cfg = tiny_cfg(9, 4).model;
        let params = ModelParams::zeros(&cfg).unwrap();
        let stream = random_stream(9, 50, 3);
        let ppl = evaluate_perplexity(&params, &stream, 7).unwrap();
        assert!((ppl - 9.0).abs() < 1e-9);
    }

    #[test]
    fn handcrafted_memorizer_has_perplexity_one() {
        // Zero recurrent weights and a huge output bias on one word: the
        // model predicts that word with probability ~1.
        let cfg = tiny_cfg(5, 3).model;
        let mut params = ModelParams::zeros(&cfg).unwrap();
        params.output = Some(OutputProjection {
            weight: Matrix::zeros(5, 3),
            bias: {
                let mut b = Matrix::zeros(5, 1);
                b.set(2, 0, 200.0);
                b
            },
        });
        let stream = TokenStream::from_ids(alloc::vec![2; 40], 5).unwrap();
        let ppl = evaluate_perplexity(&params, &stream, 8).unwrap();
        assert!((ppl - 1.0).abs() < 1e-9, "ppl {ppl}");
    }

    #[test]
    fn perplexity_is_window_split_invariant() {
        let cfg = tiny_cfg(11, 4).model;
        let params = ModelParams::init(&cfg, 5).unwrap();
        let stream = random_stream(11, 90, 7);
        let a = evaluate_perplexity(&params, &stream, 89).unwrap();
        let b = evaluate_perplexity(&params, &stream, 10).unwrap();
        let c = evaluate_perplexity(&params, &stream, 1).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!((a - c).abs() < 1e-10);
    }

    #[test]
    fn evaluation_is_side_effect_free() {
        let cfg = tiny_cfg(8, 3).model;
        let params = ModelParams::init(&cfg, 9).unwrap();
        let snapshot = params.clone();
        let stream = random_stream(8, 40, 11);
        evaluate_perplexity(&params, &stream, 6).unwrap();
        assert_eq!(params, snapshot);
    }

    #[test]
    fn independent_two_pass_perplexity_oracle() {
        // Recompute the mean NLL with explicit softmaxes, one token at a
        // time, and compare against evaluate_perplexity.
        let cfg = tiny_cfg(7, 3).model;
        let params = ModelParams::init(&cfg, 23).unwrap();
        let stream = random_stream(7, 30, 29);
        let ppl = evaluate_perplexity(&params, &stream, 4).unwrap();

        let windows = batchify(&stream, 1, stream.len() - 1).unwrap();
        let fwd = forward(&params, &windows[0], None, &LstmState::zeros(2, 3, 1)).unwrap();
        let mut nll = 0.0;
        for (t, z) in fwd.logits.iter().enumerate() {
            let col: Vec<f64> = (0..7).map(|i| z.get(i, 0)).collect();
            let p = crate::linalg::softmax_with_temperature(&col, 1.0).unwrap();
            nll -= libm::log(p.values()[windows[0].target(0, t) as usize]);
        }
        let expect = libm::exp(nll / fwd.logits.len() as f64);
        assert!((ppl - expect).abs() < 1e-9, "{ppl} vs {expect}");
    }

    #[test]
    fn training_reduces_perplexity_and_is_deterministic() {
        // A highly predictable stream: random walk on a small cycle.
        let mut ids = Vec::new();
        let mut x = 0u32;
        let mut rng = rng_from(31);
        for _ in 0..400 {
            x = (x + 1 + rng.random_range(0..2) * 5) % 12;
            ids.push(x);
        }
        let stream = TokenStream::from_ids(ids, 12).unwrap();
        let mut cfg = tiny_cfg(12, 8);
        cfg.epochs = 4;
        cfg.lr_init = 0.5;
        let out1 = train(&stream, Some(&stream), &cfg, &mut NoHooks).unwrap();
        let first = out1.log.records.first().unwrap().train_ppl;
        let last = out1.log.records.last().unwrap().train_ppl;
        assert!(last < first, "train ppl should fall: {first} -> {last}");
        assert!(out1.best_epoch.is_some());

        let out2 = train(&stream, Some(&stream), &cfg, &mut NoHooks).unwrap();
        assert_eq!(out1.final_params, out2.final_params);
        assert_eq!(out1.log, out2.log);
    }

    #[test]
    fn train_smoke_all_modes_and_tying() {
        let stream = random_stream(10, 120, 37);
        for (tied, mode) in [
            (false, LossMode::Baseline),
            (true, LossMode::Baseline),
            (false, LossMode::AlphaForm),
            (true, LossMode::BetaMixture),
        ] {
            let mut cfg = tiny_cfg(10, 6);
            cfg.epochs = 1;
            cfg.model.tie_weights = tied;
            cfg.model.dropout_p = 0.3;
            cfg.model.unit_norm_embeddings = true;
            cfg.loss = LossConfig {
                mode,
                tau: 4.0,
                gamma: Some(0.5),
                beta: 0.5,
                ..LossConfig::default()
            };
            let out = train(&stream, None, &cfg, &mut NoHooks).unwrap();
            assert!(out.final_params.is_finite());
            assert!(out.best_epoch.is_none());
            assert_eq!(out.log.records.len(), 1);
        }
    }

    #[test]
    fn train_rejects_vocab_mismatch() {
        let stream = random_stream(9, 60, 41);
        let cfg = tiny_cfg(10, 4);
        assert!(train(&stream, None, &cfg, &mut NoHooks).is_err());
    }

    #[test]
    fn hooks_receive_every_epoch() {
        struct Counter(usize);
        impl TrainHooks for Counter {
            fn on_epoch(&mut self, r: &EpochRecord) {
                self.0 += 1;
                assert_eq!(r.epoch, self.0);
            }
        }
        let stream = random_stream(8, 80, 43);
        let mut cfg = tiny_cfg(8, 4);
        cfg.epochs = 3;
        let mut hooks = Counter(0);
        train(&stream, None, &cfg, &mut hooks).unwrap();
        assert_eq!(hooks.0, 3);
    }
}
