//! Training objectives.
//!
//! Besides plain cross entropy, models can be trained with an augmented
//! term: the KL divergence from a *target distribution* derived by pushing
//! the true next word's embedding back through the (transposed) embedding
//! at a temperature, to the model's own temperature-softened prediction.
//! Two equivalent weightings are supported:
//!
//! * `AlphaForm`: `total = ce + alpha * aug` (alpha may be given directly
//!   or as `gamma * tau`),
//! * `BetaMixture`: `total = (1 - beta) * ce + beta * tau^2 * |V| * aug`,
//!   which keeps gradient magnitudes comparable across temperatures so
//!   `beta` can be swept on a fixed scale.
//!
//! By default the target distribution is treated as a constant (gradients
//! do not flow through it); `stop_gradient_through_target = false` enables
//! the extra embedding-gradient term for the models that tie embeddings.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::BpttBatch;
use crate::error::{Error, Result};
use crate::linalg::{self, log_sum_exp, matvec, matvec_t, softmax_with_lse, Matrix, ProbVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    Baseline,
    AlphaForm,
    BetaMixture,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Baseline => "baseline",
            LossMode::AlphaForm => "alpha",
            LossMode::BetaMixture => "beta",
        }
    }
}

impl core::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<LossMode> {
        match s {
            "baseline" => Ok(LossMode::Baseline),
            "alpha" => Ok(LossMode::AlphaForm),
            "beta" => Ok(LossMode::BetaMixture),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown loss mode {other:?} (expected baseline, alpha or beta)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Temperature for both the model and target distributions.
    pub tau: f64,
    /// Direct augmented-loss weight; takes precedence over `gamma`.
    pub alpha: Option<f64>,
    /// Alternative weight parameterization: `alpha = gamma * tau`.
    pub gamma: Option<f64>,
    /// Mixture weight in [0, 1] for `BetaMixture`.
    pub beta: f64,
    /// When true (the default) the target distribution is a constant.
    pub stop_gradient_through_target: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mode: LossMode::Baseline,
            tau: 1.0,
            alpha: None,
            gamma: None,
            beta: 0.0,
            stop_gradient_through_target: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::BadTemperature { tau: self.tau });
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(alloc::format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "{name} must be finite and non-negative, got {v}"
                    )));
                }
            }
        }
        if self.mode == LossMode::AlphaForm && self.effective_alpha().is_none() {
            return Err(Error::InvalidConfig(String::from(
                "alpha mode needs alpha or gamma",
            )));
        }
        Ok(())
    }

    /// The weight actually applied to the augmented term in `AlphaForm`.
    pub fn effective_alpha(&self) -> Option<f64> {
        self.alpha.or_else(|| self.gamma.map(|g| g * self.tau))
    }

    /// (cross-entropy weight, augmented weight) for a vocabulary size.
    pub fn weights(&self, vocab_size: usize) -> (f64, f64) {
        match self.mode {
            LossMode::Baseline => (1.0, 0.0),
            LossMode::AlphaForm => (1.0, self.effective_alpha().unwrap_or(0.0)),
            LossMode::BetaMixture => (
                1.0 - self.beta,
                self.beta * self.tau * self.tau * vocab_size as f64,
            ),
        }
    }
}

/// softmax(z / tau) of a logit column: the model's tempered prediction.
pub fn model_distribution(logits: &[f64], tau: f64) -> Result<ProbVector> {
    linalg::softmax_with_temperature(logits, tau)
}

/// The embedding-derived target: softmax(E^T e_g / tau) where e_g is the
/// true next word's embedding column.
pub fn target_distribution(embedding: &Matrix, target: u32, tau: f64) -> Result<ProbVector> {
    let v = embedding.cols();
    if target as usize >= v {
        return Err(Error::TokenOutOfRange { id: target, vocab: v });
    }
    let u = embedding.col(target as usize);
    let scores = matvec_t(embedding, &u)?;
    linalg::softmax_with_temperature(&scores, tau)
}

/// KL(p || q).  Terms with p_i = 0 contribute nothing; q_i = 0 against
/// p_i > 0 yields infinity.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::BadLength {
            rows: p.len(),
            cols: 1,
            len: q.len(),
        });
    }
    let mut sum = 0.0;
    for (&pi, &qi) in p.values().iter().zip(q.values()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        sum += pi * libm::log(pi / qi);
    }
    Ok(sum)
}

/// Gradient of KL(target || prediction) w.r.t. the logits, closed form:
/// (prediction - target) / tau.
pub fn aug_gradient(prediction: &ProbVector, target: &ProbVector, tau: f64) -> Result<Vec<f64>> {
    if prediction.len() != target.len() {
        return Err(Error::BadLength {
            rows: prediction.len(),
            cols: 1,
            len: target.len(),
        });
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::BadTemperature { tau });
    }
    Ok(prediction
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| (p - t) / tau)
        .collect())
}

/// The same gradient written as an expectation over the target: the
/// target-weighted sum of per-class cross-entropy gradients,
/// sum_i t_i (prediction - one_hot_i) / tau.  Quadratic in the vocabulary
/// size; exists to pin the algebraic identity with [`aug_gradient`].
pub fn aug_gradient_expanded(
    prediction: &ProbVector,
    target: &ProbVector,
    tau: f64,
) -> Result<Vec<f64>> {
    if prediction.len() != target.len() {
        return Err(Error::BadLength {
            rows: prediction.len(),
            cols: 1,
            len: target.len(),
        });
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::BadTemperature { tau });
    }
    let n = prediction.len();
    let mut out = vec![0.0; n];
    for (i, &ti) in target.values().iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            let e_ij = if i == j { 1.0 } else { 0.0 };
            *o += ti * (prediction.values()[j] - e_ij) / tau;
        }
    }
    Ok(out)
}

/// Comparison of the scaled augmented gradient against plain logit
/// matching.  Both vectors are mean-centered before the residual is taken;
/// as tau grows the scaled gradient converges to the centered difference
/// between the logits and the target scores.
#[derive(Clone, Debug)]
pub struct LogitMatchReport {
    /// tau^2 |V| times the augmented gradient, mean-centered.
    pub grad_scaled: Vec<f64>,
    /// logits - E^T e_g, mean-centered.
    pub reference: Vec<f64>,
    /// ||grad_scaled - reference|| / ||reference||.
    pub rel_err: f64,
    /// Set when the reference has (numerically) zero norm; `rel_err` is 0
    /// if the scaled gradient vanishes too, infinity otherwise.
    pub degenerate_reference: bool,
}

pub fn logit_matching_residual(
    logits: &[f64],
    embedding: &Matrix,
    target: u32,
    tau: f64,
) -> Result<LogitMatchReport> {
    let v = embedding.cols();
    if logits.len() != v {
        return Err(Error::BadLength {
            rows: v,
            cols: 1,
            len: logits.len(),
        });
    }
    if target as usize >= v {
        return Err(Error::TokenOutOfRange { id: target, vocab: v });
    }
    let prediction = model_distribution(logits, tau)?;
    let tilde = target_distribution(embedding, target, tau)?;
    let scale = tau * tau * v as f64;
    let mut grad_scaled: Vec<f64> = prediction
        .values()
        .iter()
        .zip(tilde.values())
        .map(|(&p, &t)| scale * (p - t) / tau)
        .collect();

    let u = embedding.col(target as usize);
    let scores = matvec_t(embedding, &u)?;
    let mut reference: Vec<f64> = logits.iter().zip(&scores).map(|(&z, &s)| z - s).collect();

    center(&mut grad_scaled);
    center(&mut reference);
    let ref_norm = libm::sqrt(linalg::dot(&reference, &reference));
    let diff_sq: f64 = grad_scaled
        .iter()
        .zip(&reference)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let degenerate = ref_norm <= 1e-12;
    let rel_err = if degenerate {
        let g_norm = libm::sqrt(linalg::dot(&grad_scaled, &grad_scaled));
        if g_norm <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        libm::sqrt(diff_sq) / ref_norm
    };
    Ok(LogitMatchReport {
        grad_scaled,
        reference,
        rel_err,
        degenerate_reference: degenerate,
    })
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Cached target distribution for one word: the probabilities, the negated
/// entropy (sum t ln t, so the KL needs no per-element logs), and
/// optionally the log-probabilities for the full-differentiation path.
#[derive(Clone, Debug)]
pub struct TildeEntry {
    pub probs: ProbVector,
    pub neg_entropy: f64,
    pub log_probs: Option<Vec<f64>>,
}

/// Target distributions for each distinct id in `targets`.
pub struct TildeTable {
    entries: BTreeMap<u32, TildeEntry>,
    tau: f64,
}

impl TildeTable {
    pub fn build(
        embedding: &Matrix,
        targets: &[u32],
        tau: f64,
        with_log_probs: bool,
    ) -> Result<TildeTable> {
        let mut entries = BTreeMap::new();
        for &g in targets {
            if entries.contains_key(&g) {
                continue;
            }
            let v = embedding.cols();
            if g as usize >= v {
                return Err(Error::TokenOutOfRange { id: g, vocab: v });
            }
            let u = embedding.col(g as usize);
            let scores = matvec_t(embedding, &u)?;
            let (probs, lse) = softmax_with_lse(&scores, tau)?;
            // ln t_i = s_i / tau - lse, so sum t ln t needs only a dot.
            let neg_entropy = linalg::dot(probs.values(), &scores) / tau - lse;
            let log_probs = with_log_probs
                .then(|| scores.iter().map(|&s| s / tau - lse).collect::<Vec<f64>>());
            entries.insert(
                g,
                TildeEntry {
                    probs,
                    neg_entropy,
                    log_probs,
                },
            );
        }
        Ok(TildeTable { entries, tau })
    }

    pub fn get(&self, id: u32) -> Option<&TildeEntry> {
        self.entries.get(&id)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Loss values averaged over every prediction in the window, plus the
/// matching gradients.
///
/// `ce` is always the temperature-1 cross entropy (it is what perplexity
/// reports measure)  `aug` is the mean KL term, computed only when its
/// weight is nonzero.  `d_logits` is d total / d logits including the 1/P
/// averaging; `d_embedding` is the extra direct term through the target
/// distribution, present only when `stop_gradient_through_target` is off
/// and the augmented weight is positive.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub ce: f64,
    pub aug: f64,
    pub total: f64,
    pub d_logits: Vec<Matrix>,
    pub d_embedding: Option<Matrix>,
}

/// Full objective for one window.  Builds the target-distribution table
/// from `embedding` and defers to [`total_loss_given_tilde`]; adds the
/// direct embedding gradient when configured to differentiate through the
/// target.
pub fn total_loss(
    logits: &[Matrix],
    batch: &BpttBatch,
    embedding: &Matrix,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let vocab = embedding.cols();
    let (_, aug_w) = cfg.weights(vocab);
    let full_diff = !cfg.stop_gradient_through_target && aug_w > 0.0;
    let table = if aug_w > 0.0 {
        Some(TildeTable::build(embedding, batch.targets(), cfg.tau, full_diff)?)
    } else {
        None
    };
    loss_inner(
        logits,
        batch,
        table.as_ref(),
        full_diff.then_some(embedding),
        cfg,
    )
}

/// The objective with the target distributions supplied (and thus frozen):
/// exactly the `stop_gradient_through_target` semantics.  This is the
/// function finite-difference checks probe, holding the table fixed while
/// parameters move.
pub fn total_loss_given_tilde(
    logits: &[Matrix],
    batch: &BpttBatch,
    table: &TildeTable,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    loss_inner(logits, batch, Some(table), None, cfg)
}

fn loss_inner(
    logits: &[Matrix],
    batch: &BpttBatch,
    table: Option<&TildeTable>,
    full_diff_embedding: Option<&Matrix>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let steps = batch.steps();
    let b = batch.batch();
    if logits.len() != steps {
        return Err(Error::BadLength {
            rows: steps,
            cols: 1,
            len: logits.len(),
        });
    }
    let vocab = logits.first().map_or(0, Matrix::rows);
    if vocab == 0 {
        return Err(Error::InvalidConfig("empty logits".into()));
    }
    let (ce_w, aug_w) = cfg.weights(vocab);
    if aug_w > 0.0 && table.is_none() {
        return Err(Error::InvalidConfig(
            "augmented loss requires target distributions".into(),
        ));
    }
    if let Some(t) = table {
        if t.tau != cfg.tau {
            return Err(Error::InvalidConfig(alloc::format!(
                "target table built at tau {}, loss configured at tau {}",
                t.tau,
                cfg.tau
            )));
        }
    }

    let inv_p = 1.0 / batch.positions() as f64;
    let mut ce_sum = 0.0;
    let mut aug_sum = 0.0;
    let mut d_logits: Vec<Matrix> = Vec::with_capacity(steps);
    let mut d_embedding = full_diff_embedding
        .map(|e| Matrix::zeros(e.rows(), e.cols()));
    let mut z_col = vec![0.0f64; vocab];
    let mut t_vec = vec![0.0f64; vocab];

    for (t, z) in logits.iter().enumerate() {
        if z.rows() != vocab || z.cols() != b {
            return Err(Error::ShapeMismatch {
                ctx: "loss logits",
                a_rows: z.rows(),
                a_cols: z.cols(),
                b_rows: vocab,
                b_cols: b,
            });
        }
        let mut dz = Matrix::zeros(vocab, b);
        for col in 0..b {
            let g = batch.target(col, t) as usize;
            if g >= vocab {
                return Err(Error::TokenOutOfRange {
                    id: g as u32,
                    vocab,
                });
            }
            for (i, zi) in z_col.iter_mut().enumerate() {
                *zi = z.get(i, col);
            }

            // Temperature-1 cross entropy, reported in every mode.
            if ce_w > 0.0 {
                let (y, lse1) = softmax_with_lse(&z_col, 1.0)?;
                ce_sum += lse1 - z_col[g];
                let w = ce_w * inv_p;
                for i in 0..vocab {
                    let e_i = if i == g { 1.0 } else { 0.0 };
                    dz.set(i, col, w * (y.values()[i] - e_i));
                }
            } else {
                ce_sum += log_sum_exp(&z_col) - z_col[g];
            }

            if aug_w > 0.0 {
                let entry = table
                    .expect("checked above")
                    .get(g as u32)
                    .ok_or(Error::TokenOutOfRange {
                        id: g as u32,
                        vocab,
                    })?;
                let (y_hat, lse_t) = softmax_with_lse(&z_col, cfg.tau)?;
                let tilde = entry.probs.values();
                // KL(tilde || y_hat) without elementwise logs:
                // sum t ln t - sum_i t_i (z_i/tau - lse).
                let dot_tz = linalg::dot(tilde, &z_col);
                let aug = entry.neg_entropy - dot_tz / cfg.tau + lse_t;
                aug_sum += aug;
                let w = aug_w * inv_p / cfg.tau;
                for i in 0..vocab {
                    let cur = dz.get(i, col);
                    dz.set(i, col, cur + w * (y_hat.values()[i] - tilde[i]));
                }

                if let (Some(de), Some(emb)) = (&mut d_embedding, full_diff_embedding) {
                    // Direct dependence through the target distribution:
                    // t_k = tilde_k (ln tilde_k - ln y_hat_k - aug); then
                    // dE += w (e_g t^T + (E t) e_g^T).
                    let log_tilde = entry
                        .log_probs
                        .as_ref()
                        .expect("log probs requested for full diff");
                    for k in 0..vocab {
                        let ln_yhat = z_col[k] / cfg.tau - lse_t;
                        t_vec[k] = tilde[k] * (log_tilde[k] - ln_yhat - aug);
                    }
                    let e_t = matvec(emb, &t_vec)?;
                    let u = emb.col(g);
                    for i in 0..de.rows() {
                        let row = de.row_mut(i);
                        let ui = u[i] * w;
                        for (rj, &tj) in row.iter_mut().zip(&t_vec) {
                            *rj += ui * tj;
                        }
                        row[g] += w * e_t[i];
                    }
                }
            }
        }
        d_logits.push(dz);
    }

    let ce = ce_sum * inv_p;
    let aug = aug_sum * inv_p;
    let total = match cfg.mode {
        LossMode::Baseline => ce,
        LossMode::AlphaForm => ce + aug_w * aug,
        LossMode::BetaMixture => ce_w * ce + aug_w * aug,
    };
    if !total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(LossBreakdown {
        ce,
        aug,
        total,
        d_logits,
        d_embedding,
    })
}
