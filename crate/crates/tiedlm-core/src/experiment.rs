//! Canned experiments: the mixture-weight and temperature sweeps that
//! trace how far the augmented loss pulls an *untied* model's output
//! subspace toward its embedding subspace, and the four-variant
//! comparison grid (baseline / augmented loss / reuse / both).
//!
//! Each sweep run trains a small two-layer model on a seeded contiguous
//! slice of the corpus and reports the final input/output subspace
//! distance.  Runs are keyed by (value, derived seed) so partial results
//! can be persisted and resumed; a diverged run is recorded as failed
//! rather than aborting the sweep.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{take_contiguous, TokenStream};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossMode};
use crate::net::ModelConfig;
use crate::rng::{child_seed, fold};
use crate::subspace::model_subspace_distance;
use crate::trainer::{evaluate_perplexity, train, TrainConfig, TrainHooks, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVariable {
    Beta,
    Tau,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Beta => "beta",
            SweepVariable::Tau => "tau",
        }
    }
}

impl core::str::FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<SweepVariable> {
        match s {
            "beta" => Ok(SweepVariable::Beta),
            "tau" => Ok(SweepVariable::Tau),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown sweep variable {other:?} (expected beta or tau)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Temperature used while sweeping beta.
    pub fixed_tau: f64,
    /// Mixture weight used while sweeping tau.
    pub fixed_beta: f64,
    pub runs_per_value: usize,
    /// Length of the contiguous training slice drawn per run.
    pub slice_len: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub bptt_steps: usize,
    pub lr_init: f64,
    pub clip_norm: f64,
    pub base_seed: u64,
}

impl SweepSpec {
    /// Small-budget defaults that still show the effect clearly: 100-unit
    /// untied models on a 3500-token slice. Small batches and a short
    /// unroll buy the update count a 100-unit net needs to leave the
    /// flat start; at long unrolls the hidden states stay near zero and
    /// every step is close to rank one, so the output subspace never
    /// rotates no matter what the loss asks for.
    pub fn desk(variable: SweepVariable) -> SweepSpec {
        SweepSpec {
            variable,
            values: match variable {
                SweepVariable::Beta => alloc::vec![0.0, 0.25, 0.5, 0.75, 1.0],
                SweepVariable::Tau => alloc::vec![2.0, 10.0, 20.0],
            },
            fixed_tau: 10.0,
            fixed_beta: 1.0,
            runs_per_value: 3,
            slice_len: 3500,
            hidden_dim: 100,
            epochs: 30,
            batch_size: 5,
            bptt_steps: 5,
            lr_init: 2.0,
            clip_norm: 5.0,
            base_seed: 0,
        }
    }

    /// The full-size probe: 300-unit models on a 20000-token slice,
    /// averaged over 10 runs.
    pub fn full_scale(variable: SweepVariable) -> SweepSpec {
        SweepSpec {
            runs_per_value: 10,
            slice_len: 20_000,
            hidden_dim: 300,
            ..SweepSpec::desk(variable)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one value".into()));
        }
        if self.runs_per_value == 0 {
            return Err(Error::InvalidConfig("runs_per_value must be positive".into()));
        }
        for &v in &self.values {
            if !v.is_finite() {
                return Err(Error::NonFinite("sweep value"));
            }
            if self.variable == SweepVariable::Beta && !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "beta value {v} outside [0, 1]"
                )));
            }
            if self.variable == SweepVariable::Tau && v <= 0.0 {
                return Err(Error::BadTemperature { tau: v });
            }
        }
        Ok(())
    }

    /// The seed of one run, stable under reordering: a child of the base
    /// seed keyed by the swept value's bits and the run index.
    pub fn run_seed(&self, value: f64, run: usize) -> u64 {
        fold(
            fold(child_seed(self.base_seed, "sweep"), value.to_bits()),
            run as u64,
        )
    }

    /// The full training config of one run.
    pub fn train_config(&self, value: f64, vocab_size: usize, run: usize) -> TrainConfig {
        let (tau, beta) = match self.variable {
            SweepVariable::Beta => (self.fixed_tau, value),
            SweepVariable::Tau => (value, self.fixed_beta),
        };
        TrainConfig {
            model: ModelConfig {
                vocab_size,
                embed_dim: self.hidden_dim,
                hidden_dim: self.hidden_dim,
                num_layers: 2,
                tie_weights: false,
                dropout_p: 0.0,
                unit_norm_embeddings: true,
                seed: self.run_seed(value, run),
            },
            loss: LossConfig {
                mode: LossMode::BetaMixture,
                tau,
                beta,
                ..LossConfig::default()
            },
            lr_init: self.lr_init,
            decay_start_epoch: 1,
            decay_rate: 1.0,
            clip_norm: self.clip_norm,
            epochs: self.epochs,
            bptt_steps: self.bptt_steps,
            batch_size: self.batch_size,
            seed: self.run_seed(value, run),
            log_subspace: false,
        }
    }
}

/// One sweep run; `distance` is `None` when training failed (divergence).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub value: f64,
    pub seed: u64,
    pub distance: Option<f64>,
}

/// Mean/std of the successful runs at one swept value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: f64,
    /// Sample standard deviation (n-1); 0 with fewer than two runs.
    pub std: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub records: Vec<RunRecord>,
}

impl SweepResult {
    /// Group records by swept value, in first-appearance order.
    pub fn aggregate(&self) -> Vec<SweepPoint> {
        let mut order: Vec<f64> = Vec::new();
        for r in &self.records {
            if !order.iter().any(|v| v.to_bits() == r.value.to_bits()) {
                order.push(r.value);
            }
        }
        order
            .into_iter()
            .map(|value| {
                let ok: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.value.to_bits() == value.to_bits())
                    .filter_map(|r| r.distance)
                    .collect();
                let failed = self
                    .records
                    .iter()
                    .filter(|r| r.value.to_bits() == value.to_bits() && r.distance.is_none())
                    .count();
                let n = ok.len();
                let mean = if n > 0 {
                    ok.iter().sum::<f64>() / n as f64
                } else {
                    f64::NAN
                };
                let std = if n > 1 {
                    let var =
                        ok.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
                    libm::sqrt(var)
                } else {
                    0.0
                };
                SweepPoint {
                    value,
                    mean,
                    std,
                    runs_ok: n,
                    runs_failed: failed,
                }
            })
            .collect()
    }
}

/// Train one sweep run and return its final subspace distance.
pub fn run_sweep_point(
    spec: &SweepSpec,
    stream: &TokenStream,
    value: f64,
    run: usize,
    hooks: &mut impl TrainHooks,
) -> Result<f64> {
    spec.validate()?;
    let seed = spec.run_seed(value, run);
    let slice = take_contiguous(stream, spec.slice_len, child_seed(seed, "data-offset"))?;
    let cfg = spec.train_config(value, stream.vocab_size(), run);
    let outcome = train(&slice, None, &cfg, hooks)?;
    Ok(model_subspace_distance(&outcome.final_params)?.distance)
}

/// Run the whole sweep, converting per-run divergence into failed records.
/// `skip` filters out runs already persisted (resume); it receives
/// (value, seed).
pub fn run_sweep(
    spec: &SweepSpec,
    stream: &TokenStream,
    mut skip: impl FnMut(f64, u64) -> bool,
    hooks: &mut impl TrainHooks,
) -> Result<SweepResult> {
    spec.validate()?;
    let mut records = Vec::new();
    for &value in &spec.values {
        for run in 0..spec.runs_per_value {
            let seed = spec.run_seed(value, run);
            if skip(value, seed) {
                continue;
            }
            let distance = match run_sweep_point(spec, stream, value, run, hooks) {
                Ok(d) => Some(d),
                Err(Error::NonFiniteLoss { .. }) | Err(Error::NonFinite(_)) => None,
                Err(other) => return Err(other),
            };
            records.push(RunRecord {
                value,
                seed,
                distance,
            });
        }
    }
    Ok(SweepResult {
        variable: spec.variable,
        records,
    })
}

pub fn run_beta_sweep(
    spec: &SweepSpec,
    stream: &TokenStream,
    hooks: &mut impl TrainHooks,
) -> Result<SweepResult> {
    if spec.variable != SweepVariable::Beta {
        return Err(Error::InvalidConfig(String::from(
            "run_beta_sweep needs a beta-variable spec",
        )));
    }
    run_sweep(spec, stream, |_, _| false, hooks)
}

pub fn run_tau_sweep(
    spec: &SweepSpec,
    stream: &TokenStream,
    hooks: &mut impl TrainHooks,
) -> Result<SweepResult> {
    if spec.variable != SweepVariable::Tau {
        return Err(Error::InvalidConfig(String::from(
            "run_tau_sweep needs a tau-variable spec",
        )));
    }
    run_sweep(spec, stream, |_, _| false, hooks)
}

/// The four model variants compared throughout: plain LSTM, augmented
/// loss only, weight reuse (tying) only, and both together.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    AugmentedLoss,
    Reuse,
    ReuseWithAugmentedLoss,
}

impl Variant {
    pub fn all() -> [Variant; 4] {
        [
            Variant::Baseline,
            Variant::AugmentedLoss,
            Variant::Reuse,
            Variant::ReuseWithAugmentedLoss,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AugmentedLoss => "al",
            Variant::Reuse => "re",
            Variant::ReuseWithAugmentedLoss => "real",
        }
    }

    pub fn ties_weights(self) -> bool {
        matches!(self, Variant::Reuse | Variant::ReuseWithAugmentedLoss)
    }

    pub fn uses_augmented_loss(self) -> bool {
        matches!(self, Variant::AugmentedLoss | Variant::ReuseWithAugmentedLoss)
    }

    /// Rewrite a base config for this variant: tying on or off, and the
    /// loss mode switched between baseline and the alpha form (the tau /
    /// alpha / gamma values come from the base config).
    pub fn apply(self, cfg: &mut TrainConfig) {
        cfg.model.tie_weights = self.ties_weights();
        cfg.loss.mode = if self.uses_augmented_loss() {
            LossMode::AlphaForm
        } else {
            LossMode::Baseline
        };
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "al" => Ok(Variant::AugmentedLoss),
            "re" => Ok(Variant::Reuse),
            "real" => Ok(Variant::ReuseWithAugmentedLoss),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown variant {other:?} (expected baseline, al, re or real)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub parameter_count: usize,
    pub best_valid_ppl: f64,
    /// Test perplexity of the best-validation model.
    pub test_ppl: f64,
    pub log: TrainLog,
}

/// Train all four variants from one base config and score each best
/// model on the test stream.
pub fn run_variant_grid(
    train_stream: &TokenStream,
    valid_stream: &TokenStream,
    test_stream: &TokenStream,
    base: &TrainConfig,
    hooks: &mut impl TrainHooks,
) -> Result<Vec<VariantOutcome>> {
    let mut out = Vec::with_capacity(4);
    for variant in Variant::all() {
        let mut cfg = base.clone();
        variant.apply(&mut cfg);
        let outcome = train(train_stream, Some(valid_stream), &cfg, hooks)?;
        let best_valid_ppl = outcome
            .log
            .records
            .iter()
            .filter_map(|r| r.valid_ppl)
            .fold(f64::INFINITY, f64::min);
        let test_ppl = evaluate_perplexity(&outcome.best_params, test_stream, cfg.bptt_steps)?;
        out.push(VariantOutcome {
            variant,
            parameter_count: cfg.model.parameter_count(),
            best_valid_ppl,
            test_ppl,
            log: outcome.log,
        });
    }
    Ok(out)
}
