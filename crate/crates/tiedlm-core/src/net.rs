//! The LSTM language model: parameters, forward pass with a replay tape,
//! and exact reverse-mode gradients (manual truncated BPTT).
//!
//! Shapes follow a column-per-example convention: activations are
//! `dim x batch`, the embedding is `embed_dim x vocab`, and logits are
//! `vocab x batch`.  With tied weights the output projection *is* the
//! transposed embedding and has no bias; untied models carry a separate
//! `vocab x hidden` projection plus bias.
//!
//! Gate layout inside the fused `4h x batch` pre-activation: input,
//! forget, cell candidate, output — rows `[0,h) [h,2h) [2h,3h) [3h,4h)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::BpttBatch;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::rng_from;
use rand::RngExt;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub tie_weights: bool,
    /// Probability of zeroing a unit (variational dropout between layers
    /// and on recurrent states); 0 disables dropout.
    pub dropout_p: f64,
    /// Renormalize embedding columns to unit L2 norm after every update.
    pub unit_norm_embeddings: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim, hidden_dim and num_layers must be positive".into(),
            ));
        }
        if self.tie_weights && self.embed_dim != self.hidden_dim {
            return Err(Error::InvalidConfig(format!(
                "tied weights require embed_dim == hidden_dim, got {} and {}",
                self.embed_dim, self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let (v, d, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        let mut n = v * d;
        let mut input = d;
        for _ in 0..self.num_layers {
            n += 4 * h * input + 4 * h * h + 4 * h;
            input = h;
        }
        if !self.tie_weights {
            n += v * h + v;
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// `4h x in`: applied to the layer input.
    pub w_input: Matrix,
    /// `4h x h`: applied to the previous hidden state.
    pub w_hidden: Matrix,
    /// `4h x 1`.
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputProjection {
    /// `vocab x hidden`.
    pub weight: Matrix,
    /// `vocab x 1`.
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `embed_dim x vocab`; one column per word.
    pub embedding: Matrix,
    pub layers: Vec<LstmLayer>,
    /// `None` when tied: the projection is the transposed embedding.
    pub output: Option<OutputProjection>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<ModelParams> {
        cfg.validate()?;
        let (v, d, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut input = d;
        for _ in 0..cfg.num_layers {
            layers.push(LstmLayer {
                w_input: Matrix::zeros(4 * h, input),
                w_hidden: Matrix::zeros(4 * h, h),
                bias: Matrix::zeros(4 * h, 1),
            });
            input = h;
        }
        let output = (!cfg.tie_weights).then(|| OutputProjection {
            weight: Matrix::zeros(v, h),
            bias: Matrix::zeros(v, 1),
        });
        Ok(ModelParams {
            embedding: Matrix::zeros(d, v),
            layers,
            output,
        })
    }

    /// Weights uniform in [-0.05, 0.05), biases zero, drawn in tensor
    /// order from a dedicated generator: the same seed and config always
    /// produce bitwise identical parameters.  Honors
    /// `unit_norm_embeddings`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
        let mut params = Self::zeros(cfg)?;
        let mut rng = rng_from(seed);
        let mut fill = |m: &mut Matrix| {
            m.data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-0.05..0.05));
        };
        fill(&mut params.embedding);
        for layer in &mut params.layers {
            fill(&mut layer.w_input);
            fill(&mut layer.w_hidden);
            // biases stay zero and consume no draws
        }
        if let Some(out) = &mut params.output {
            fill(&mut out.weight);
        }
        if cfg.unit_norm_embeddings {
            renormalize_embedding(&mut params);
        }
        Ok(params)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w_hidden.cols())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_tied(&self) -> bool {
        self.output.is_none()
    }

    /// Named tensors in a fixed order (the checkpoint order).
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![(String::from("embedding"), &self.embedding)];
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm{i}.w_input"), &layer.w_input));
            out.push((format!("lstm{i}.w_hidden"), &layer.w_hidden));
            out.push((format!("lstm{i}.bias"), &layer.bias));
        }
        if let Some(o) = &self.output {
            out.push((String::from("output.weight"), &o.weight));
            out.push((String::from("output.bias"), &o.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![(String::from("embedding"), &mut self.embedding)];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("lstm{i}.w_input"), &mut layer.w_input));
            out.push((format!("lstm{i}.w_hidden"), &mut layer.w_hidden));
            out.push((format!("lstm{i}.bias"), &mut layer.bias));
        }
        if let Some(o) = &mut self.output {
            out.push((String::from("output.weight"), &mut o.weight));
            out.push((String::from("output.bias"), &mut o.bias));
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors()
            .iter()
            .map(|(_, m)| m.rows() * m.cols())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Scale every embedding column to unit L2 norm (zero columns are left
/// alone).  With tied weights this also renormalizes the output rows.
pub fn renormalize_embedding(params: &mut ModelParams) {
    let (d, v) = (params.embedding.rows(), params.embedding.cols());
    let mut norms = vec![0.0f64; v];
    for i in 0..d {
        for (nj, &x) in norms.iter_mut().zip(params.embedding.row(i)) {
            *nj += x * x;
        }
    }
    for n in &mut norms {
        *n = if *n > 0.0 { 1.0 / libm::sqrt(*n) } else { 1.0 };
    }
    for i in 0..d {
        for (&nj, x) in norms.iter().zip(params.embedding.row_mut(i)) {
            *x *= nj;
        }
    }
}

/// Hidden and cell state per layer, `hidden x batch` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    h: Vec<Matrix>,
    c: Vec<Matrix>,
}

impl LstmState {
    pub fn zeros(num_layers: usize, hidden_dim: usize, batch: usize) -> LstmState {
        LstmState {
            h: (0..num_layers)
                .map(|_| Matrix::zeros(hidden_dim, batch))
                .collect(),
            c: (0..num_layers)
                .map(|_| Matrix::zeros(hidden_dim, batch))
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.h.len()
    }

    pub fn batch(&self) -> usize {
        self.h.first().map_or(0, Matrix::cols)
    }

    pub fn hidden_dim(&self) -> usize {
        self.h.first().map_or(0, Matrix::rows)
    }

    pub fn h(&self, layer: usize) -> &Matrix {
        &self.h[layer]
    }

    pub fn c(&self, layer: usize) -> &Matrix {
        &self.c[layer]
    }

    fn check(&self, params: &ModelParams, batch: usize, ctx: &'static str) -> Result<()> {
        if self.h.len() != params.num_layers()
            || self.hidden_dim() != params.hidden_dim()
            || self.batch() != batch
        {
            return Err(Error::ShapeMismatch {
                ctx,
                a_rows: self.hidden_dim(),
                a_cols: self.batch(),
                b_rows: params.hidden_dim(),
                b_cols: batch,
            });
        }
        Ok(())
    }
}

/// Variational dropout masks: one `hidden x batch` mask per layer, sampled
/// once per BPTT window and reused at every step inside it, both for the
/// recurrent state and for the same values fed upward (or into the output
/// projection from the top layer).  Entries are 0 or 1/(1-p), so the
/// expected activation is unchanged and evaluation needs no rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    layer_masks: Vec<Matrix>,
}

impl DropoutMasks {
    pub fn sample(cfg: &ModelConfig, batch: usize, seed: u64) -> Result<DropoutMasks> {
        cfg.validate()?;
        let p = cfg.dropout_p;
        let h = cfg.hidden_dim;
        let mut rng = rng_from(seed);
        let keep_scale = 1.0 / (1.0 - p);
        let layer_masks = (0..cfg.num_layers)
            .map(|_| {
                if p == 0.0 {
                    let mut m = Matrix::zeros(h, batch);
                    m.fill(1.0);
                    m
                } else {
                    Matrix::from_fn(h, batch, |_, _| {
                        if rng.random_range(0.0..1.0) < p {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                }
            })
            .collect();
        Ok(DropoutMasks { layer_masks })
    }

    pub fn mask(&self, layer: usize) -> &Matrix {
        &self.layer_masks[layer]
    }

    fn check(&self, params: &ModelParams, batch: usize) -> Result<()> {
        let ok = self.layer_masks.len() == params.num_layers()
            && self
                .layer_masks
                .iter()
                .all(|m| m.rows() == params.hidden_dim() && m.cols() == batch);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                ctx: "dropout masks",
                a_rows: self.layer_masks.first().map_or(0, Matrix::rows),
                a_cols: self.layer_masks.first().map_or(0, Matrix::cols),
                b_rows: params.hidden_dim(),
                b_cols: batch,
            })
        }
    }
}

/// Everything the backward pass needs to replay one window.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    inputs: Vec<u32>,
    batch: usize,
    steps: usize,
    init: LstmState,
    masks: Option<DropoutMasks>,
    /// `[step][layer]` activations.
    trace: Vec<Vec<LayerTrace>>,
}

#[derive(Clone, Debug)]
struct LayerTrace {
    /// `4h x batch`, post-activation gates (i, f, g, o stacked).
    gates: Matrix,
    /// `h x batch` cell state after the step.
    c: Matrix,
    /// tanh of the above.
    tanh_c: Matrix,
    /// `h x batch` hidden state after the step.
    h: Matrix,
}

pub struct Forward {
    /// One `vocab x batch` logit matrix per step.
    pub logits: Vec<Matrix>,
    pub final_state: LstmState,
    pub tape: ForwardTape,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Broadcast a `n x 1` column across `batch` columns.
fn broadcast_col(col: &Matrix, batch: usize) -> Matrix {
    let mut m = Matrix::zeros(col.rows(), batch);
    for i in 0..col.rows() {
        let v = col.get(i, 0);
        m.row_mut(i).iter_mut().for_each(|x| *x = v);
    }
    m
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(x, &y)| *x *= y);
    out
}

/// Columns of the embedding gathered by token id: `embed_dim x ids.len()`.
fn gather_embedding(embedding: &Matrix, ids: &[u32]) -> Result<Matrix> {
    let v = embedding.cols();
    for &id in ids {
        if id as usize >= v {
            return Err(Error::TokenOutOfRange { id, vocab: v });
        }
    }
    let mut x = Matrix::zeros(embedding.rows(), ids.len());
    for i in 0..embedding.rows() {
        let src = embedding.row(i);
        let dst = x.row_mut(i);
        for (b, &id) in ids.iter().enumerate() {
            dst[b] = src[id as usize];
        }
    }
    Ok(x)
}

/// Run one BPTT window, recording the tape.  `masks` of `None` means no
/// dropout (identity); `init` is the carried-in state, untouched.
pub fn forward(
    params: &ModelParams,
    batch: &BpttBatch,
    masks: Option<&DropoutMasks>,
    init: &LstmState,
) -> Result<Forward> {
    let b = batch.batch();
    let steps = batch.steps();
    init.check(params, b, "initial state")?;
    if let Some(m) = masks {
        m.check(params, b)?;
    }

    let h_dim = params.hidden_dim();
    let mut state = init.clone();
    let mut logits = Vec::with_capacity(steps);
    let mut trace: Vec<Vec<LayerTrace>> = Vec::with_capacity(steps);

    // Step-major id layout for the tape.
    let mut ids_by_step: Vec<u32> = Vec::with_capacity(b * steps);
    for t in 0..steps {
        for row in 0..b {
            ids_by_step.push(batch.input(row, t));
        }
    }

    for t in 0..steps {
        let ids = &ids_by_step[t * b..(t + 1) * b];
        let mut input = gather_embedding(&params.embedding, ids)?;
        let mut step_trace = Vec::with_capacity(params.num_layers());

        for (l, layer) in params.layers.iter().enumerate() {
            let h_prev_eff = match masks {
                Some(m) => hadamard(&state.h[l], m.mask(l)),
                None => state.h[l].clone(),
            };
            let mut z = broadcast_col(&layer.bias, b);
            linalg::matmul_acc(&mut z, &layer.w_input, &input)?;
            linalg::matmul_acc(&mut z, &layer.w_hidden, &h_prev_eff)?;

            // Activate in place: sigmoid on i, f, o; tanh on g.
            {
                let data = z.data_mut();
                let row_len = b;
                for r in 0..4 * h_dim {
                    let seg = &mut data[r * row_len..(r + 1) * row_len];
                    if r / h_dim == 2 {
                        seg.iter_mut().for_each(|x| *x = libm::tanh(*x));
                    } else {
                        seg.iter_mut().for_each(|x| *x = sigmoid(*x));
                    }
                }
            }

            let mut c = Matrix::zeros(h_dim, b);
            let mut h = Matrix::zeros(h_dim, b);
            let mut tanh_c = Matrix::zeros(h_dim, b);
            for r in 0..h_dim {
                let gi = z.row(r);
                let gf = z.row(h_dim + r);
                let gg = z.row(2 * h_dim + r);
                let go = z.row(3 * h_dim + r);
                let c_prev = state.c[l].row(r);
                let c_row = c.row_mut(r);
                for col in 0..b {
                    c_row[col] = gf[col] * c_prev[col] + gi[col] * gg[col];
                }
                let tc_row = tanh_c.row_mut(r);
                for col in 0..b {
                    tc_row[col] = libm::tanh(c_row[col]);
                }
                let h_row = h.row_mut(r);
                for col in 0..b {
                    h_row[col] = go[col] * tc_row[col];
                }
            }

            state.h[l] = h.clone();
            state.c[l] = c.clone();
            step_trace.push(LayerTrace {
                gates: z,
                c,
                tanh_c,
                h: h.clone(),
            });

            input = match masks {
                Some(m) => hadamard(&h, m.mask(l)),
                None => h,
            };
        }

        // `input` now holds the (masked) top hidden state.
        let z_out = match &params.output {
            Some(out) => {
                let mut logit = broadcast_col(&out.bias, b);
                linalg::matmul_acc(&mut logit, &out.weight, &input)?;
                logit
            }
            None => linalg::mul_at(&params.embedding, &input)?,
        };
        logits.push(z_out);
        trace.push(step_trace);
    }

    Ok(Forward {
        logits,
        final_state: state,
        tape: ForwardTape {
            inputs: ids_by_step,
            batch: b,
            steps,
            init: init.clone(),
            masks: masks.cloned(),
            trace,
        },
    })
}

/// Reverse-mode BPTT through a taped window.  `d_logits` is the loss
/// gradient per step (`vocab x batch`); gradients flow only inside the
/// window (the carried-in state is treated as constant).  Returns
/// gradients shaped exactly like the parameters; with tied weights the
/// projection contribution is accumulated straight into the embedding
/// gradient.
pub fn backward(params: &ModelParams, tape: &ForwardTape, d_logits: &[Matrix]) -> Result<ModelParams> {
    let b = tape.batch;
    let steps = tape.steps;
    let h_dim = params.hidden_dim();
    let v = params.vocab_size();
    if d_logits.len() != steps {
        return Err(Error::BadLength {
            rows: steps,
            cols: 1,
            len: d_logits.len(),
        });
    }
    for d in d_logits {
        if d.rows() != v || d.cols() != b {
            return Err(Error::ShapeMismatch {
                ctx: "d_logits",
                a_rows: d.rows(),
                a_cols: d.cols(),
                b_rows: v,
                b_cols: b,
            });
        }
    }

    let cfg_layers = params.num_layers();
    let mut grads = ModelParams {
        embedding: Matrix::zeros(params.embed_dim(), v),
        layers: params
            .layers
            .iter()
            .map(|l| LstmLayer {
                w_input: Matrix::zeros(l.w_input.rows(), l.w_input.cols()),
                w_hidden: Matrix::zeros(l.w_hidden.rows(), l.w_hidden.cols()),
                bias: Matrix::zeros(l.bias.rows(), 1),
            })
            .collect(),
        output: params.output.as_ref().map(|o| OutputProjection {
            weight: Matrix::zeros(o.weight.rows(), o.weight.cols()),
            bias: Matrix::zeros(o.bias.rows(), 1),
        }),
    };

    // Carried gradients w.r.t. h_{t} and c_{t} per layer, from step t+1.
    let mut dh_carry: Vec<Matrix> = (0..cfg_layers).map(|_| Matrix::zeros(h_dim, b)).collect();
    let mut dc_carry: Vec<Matrix> = (0..cfg_layers).map(|_| Matrix::zeros(h_dim, b)).collect();

    let mask = |l: usize| tape.masks.as_ref().map(|m| m.mask(l));

    for t in (0..steps).rev() {
        let ids = &tape.inputs[t * b..(t + 1) * b];
        let step = &tape.trace[t];

        // Projection backward; d_top is w.r.t. the *masked* top state.
        let top = cfg_layers - 1;
        let top_h = &step[top].h;
        let top_eff = match mask(top) {
            Some(m) => hadamard(top_h, m),
            None => top_h.clone(),
        };
        let d_top_eff = match (&params.output, &mut grads.output) {
            (Some(out), Some(g_out)) => {
                linalg::mul_bt_acc(&mut g_out.weight, &d_logits[t], &top_eff)?;
                for i in 0..v {
                    let s: f64 = d_logits[t].row(i).iter().sum();
                    let cur = g_out.bias.get(i, 0);
                    g_out.bias.set(i, 0, cur + s);
                }
                linalg::mul_at(&out.weight, &d_logits[t])?
            }
            _ => {
                // logits = E^T h  =>  dE += h dlogits^T, dh = E dlogits
                linalg::mul_bt_acc(&mut grads.embedding, &top_eff, &d_logits[t])?;
                linalg::matmul(&params.embedding, &d_logits[t])?
            }
        };

        // Gradient w.r.t. the raw top hidden state.
        let mut dh_from_above = match mask(top) {
            Some(m) => hadamard(&d_top_eff, m),
            None => d_top_eff,
        };

        for l in (0..cfg_layers).rev() {
            let lt = &step[l];
            // The compiler can't see that the reassignment below always
            // happens before the next read; swap in a placeholder.
            let mut dh_total = core::mem::replace(&mut dh_from_above, Matrix::zeros(0, 0));
            dh_total.add_scaled(&dh_carry[l], 1.0)?;

            let c_prev = if t == 0 {
                &tape.init.c[l]
            } else {
                &tape.trace[t - 1][l].c
            };
            let h_prev = if t == 0 {
                &tape.init.h[l]
            } else {
                &tape.trace[t - 1][l].h
            };

            // Per-row gate gradient assembly into dz (pre-activation).
            let mut dz = Matrix::zeros(4 * h_dim, b);
            let mut dc_next = Matrix::zeros(h_dim, b); // becomes dc_carry
            for r in 0..h_dim {
                let gi = lt.gates.row(r);
                let gf = lt.gates.row(h_dim + r);
                let gg = lt.gates.row(2 * h_dim + r);
                let go = lt.gates.row(3 * h_dim + r);
                let tc = lt.tanh_c.row(r);
                let cp = c_prev.row(r);
                let dht = dh_total.row(r);
                let dcc = dc_carry[l].row(r);
                // Borrow checker: fill the four dz segments via raw index math.
                for col in 0..b {
                    let d_o = dht[col] * tc[col];
                    let dc = dht[col] * go[col] * (1.0 - tc[col] * tc[col]) + dcc[col];
                    let d_i = dc * gg[col];
                    let d_f = dc * cp[col];
                    let d_g = dc * gi[col];
                    dz.set(r, col, d_i * gi[col] * (1.0 - gi[col]));
                    dz.set(h_dim + r, col, d_f * gf[col] * (1.0 - gf[col]));
                    dz.set(2 * h_dim + r, col, d_g * (1.0 - gg[col] * gg[col]));
                    dz.set(3 * h_dim + r, col, d_o * go[col] * (1.0 - go[col]));
                    dc_next.set(r, col, dc * gf[col]);
                }
            }

            // Weight gradients.
            let input_below = if l == 0 {
                gather_embedding(&params.embedding, ids)?
            } else {
                let below = &step[l - 1].h;
                match mask(l - 1) {
                    Some(m) => hadamard(below, m),
                    None => below.clone(),
                }
            };
            let h_prev_eff = match mask(l) {
                Some(m) => hadamard(h_prev, m),
                None => h_prev.clone(),
            };
            let g = &mut grads.layers[l];
            linalg::mul_bt_acc(&mut g.w_input, &dz, &input_below)?;
            linalg::mul_bt_acc(&mut g.w_hidden, &dz, &h_prev_eff)?;
            for r in 0..4 * h_dim {
                let s: f64 = dz.row(r).iter().sum();
                let cur = g.bias.get(r, 0);
                g.bias.set(r, 0, cur + s);
            }

            // Downstream gradients.
            let d_input_below = linalg::mul_at(&params.layers[l].w_input, &dz)?;
            let dh_prev_eff = linalg::mul_at(&params.layers[l].w_hidden, &dz)?;
            dh_carry[l] = match mask(l) {
                Some(m) => hadamard(&dh_prev_eff, m),
                None => dh_prev_eff,
            };
            dc_carry[l] = dc_next;

            if l == 0 {
                // Scatter into embedding columns by input id.
                for i in 0..grads.embedding.rows() {
                    let src = d_input_below.row(i);
                    // Row borrow juggling: copy out, then write.
                    for (col, &id) in ids.iter().enumerate() {
                        let cur = grads.embedding.get(i, id as usize);
                        grads.embedding.set(i, id as usize, cur + src[col]);
                    }
                }
            } else {
                dh_from_above = match mask(l - 1) {
                    Some(m) => hadamard(&d_input_below, m),
                    None => d_input_below,
                };
            }
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{batchify, TokenStream};

    fn cfg(vocab: usize, dim: usize, tied: bool, dropout: f64) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            embed_dim: dim,
            hidden_dim: dim,
            num_layers: 2,
            tie_weights: tied,
            dropout_p: dropout,
            unit_norm_embeddings: false,
            seed: 7,
        }
    }

    fn toy_batch(vocab: u32, batch: usize, steps: usize, seed: u64) -> BpttBatch {
        use rand::RngExt;
        let mut rng = rng_from(seed);
        let n = batch * (steps + 1) + batch;
        let ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let stream = TokenStream::from_ids(ids, vocab as usize).unwrap();
        batchify(&stream, batch, steps).unwrap().remove(0)
    }

    #[test]
    fn config_validation_catches_bad_settings() {
        assert!(cfg(10, 4, true, 0.0).validate().is_ok());
        let mut c = cfg(10, 4, true, 0.0);
        c.hidden_dim = 5;
        assert!(c.validate().is_err());
        let mut c = cfg(10, 4, false, 1.0);
        assert!(c.validate().is_err());
        c.dropout_p = 0.5;
        c.num_layers = 0;
        assert!(c.validate().is_err());
        c.num_layers = 1;
        c.vocab_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn parameter_count_matches_allocated_scalars() {
        for tied in [false, true] {
            let c = cfg(50, 12, tied, 0.0);
            let p = ModelParams::init(&c, 3).unwrap();
            assert_eq!(p.num_scalars(), c.parameter_count());
        }
    }

    #[test]
    fn tying_saves_vocab_times_dim_plus_one() {
        let untied = cfg(10_000, 200, false, 0.0);
        let tied = cfg(10_000, 200, true, 0.0);
        assert_eq!(
            untied.parameter_count() - tied.parameter_count(),
            10_000 * 201
        );
    }

    #[test]
    fn init_is_deterministic_and_biases_are_zero() {
        let c = cfg(30, 8, false, 0.0);
        let a = ModelParams::init(&c, 11).unwrap();
        let b = ModelParams::init(&c, 11).unwrap();
        assert_eq!(a, b);
        let other = ModelParams::init(&c, 12).unwrap();
        assert_ne!(a, other);
        for layer in &a.layers {
            assert!(layer.bias.data().iter().all(|&x| x == 0.0));
        }
        assert!(a.output.as_ref().unwrap().bias.data().iter().all(|&x| x == 0.0));
        assert!(a
            .embedding
            .data()
            .iter()
            .all(|&x| (-0.05..0.05).contains(&x)));
    }

    #[test]
    fn renormalize_gives_unit_columns() {
        let c = cfg(20, 6, false, 0.0);
        let mut p = ModelParams::init(&c, 5).unwrap();
        renormalize_embedding(&mut p);
        for j in 0..20 {
            let col = p.embedding.col(j);
            let norm: f64 = col.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let c = cfg(17, 6, true, 0.0);
        let p = ModelParams::init(&c, 1).unwrap();
        let batch = toy_batch(17, 3, 4, 2);
        let init = LstmState::zeros(2, 6, 3);
        let f = forward(&p, &batch, None, &init).unwrap();
        assert_eq!(f.logits.len(), 4);
        for l in &f.logits {
            assert_eq!((l.rows(), l.cols()), (17, 3));
            assert!(l.is_finite());
        }
        assert_eq!(f.final_state.batch(), 3);
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let c = cfg(9, 5, true, 0.0);
        let p = ModelParams::zeros(&c).unwrap();
        let batch = toy_batch(9, 2, 3, 4);
        let f = forward(&p, &batch, None, &LstmState::zeros(2, 5, 2)).unwrap();
        for l in &f.logits {
            assert!(l.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn tied_logits_match_explicit_projection() {
        let c = cfg(13, 7, true, 0.0);
        let p = ModelParams::init(&c, 9).unwrap();
        let batch = toy_batch(13, 2, 3, 5);
        let f = forward(&p, &batch, None, &LstmState::zeros(2, 7, 2)).unwrap();
        // Recompute the last step's logits from the tape's top h.
        let top_h = &f.tape.trace[2][1].h;
        let expect = linalg::mul_at(&p.embedding, top_h).unwrap();
        assert!(f.logits[2].max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn tied_and_untied_agree_when_weights_are_copied() {
        let tied_cfg = cfg(11, 6, true, 0.0);
        let tied = ModelParams::init(&tied_cfg, 3).unwrap();
        let mut untied = ModelParams::zeros(&cfg(11, 6, false, 0.0)).unwrap();
        untied.embedding = tied.embedding.clone();
        untied.layers = tied.layers.clone();
        untied.output = Some(OutputProjection {
            weight: tied.embedding.transpose(),
            bias: Matrix::zeros(11, 1),
        });
        let batch = toy_batch(11, 2, 4, 8);
        let init = LstmState::zeros(2, 6, 2);
        let a = forward(&tied, &batch, None, &init).unwrap();
        let b = forward(&untied, &batch, None, &init).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert!(x.max_abs_diff(y) < 1e-12);
        }
    }

    #[test]
    fn state_carry_is_equivalent_to_one_long_window() {
        let c = cfg(15, 5, true, 0.0);
        let p = ModelParams::init(&c, 21).unwrap();
        let ids: Vec<u32> = (0..31).map(|i| (i * 7 + 3) % 15).collect();
        let stream = TokenStream::from_ids(ids, 15).unwrap();
        let long = batchify(&stream, 2, 14).unwrap();
        let short = batchify(&stream, 2, 5).unwrap();
        assert_eq!(long.len(), 1);
        assert_eq!(short.len(), 3);

        let init = LstmState::zeros(2, 5, 2);
        let full = forward(&p, &long[0], None, &init).unwrap();

        let mut state = init;
        let mut chained: Vec<Matrix> = Vec::new();
        for w in &short {
            let f = forward(&p, w, None, &state).unwrap();
            chained.extend(f.logits);
            state = f.final_state;
        }
        assert_eq!(chained.len(), full.logits.len());
        for (a, b) in chained.iter().zip(&full.logits) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        for l in 0..2 {
            assert!(state.h(l).max_abs_diff(full.final_state.h(l)) < 1e-12);
            assert!(state.c(l).max_abs_diff(full.final_state.c(l)) < 1e-12);
        }
    }

    #[test]
    fn masks_p_zero_are_identity() {
        let c = cfg(9, 4, true, 0.0);
        let m = DropoutMasks::sample(&c, 3, 77).unwrap();
        for l in 0..2 {
            assert!(m.mask(l).data().iter().all(|&x| x == 1.0));
        }
        let p = ModelParams::init(&c, 2).unwrap();
        let batch = toy_batch(9, 3, 2, 6);
        let init = LstmState::zeros(2, 4, 3);
        let with = forward(&p, &batch, Some(&m), &init).unwrap();
        let without = forward(&p, &batch, None, &init).unwrap();
        for (a, b) in with.logits.iter().zip(&without.logits) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
    }

    #[test]
    fn mask_values_and_keep_rate() {
        let mut c = cfg(9, 40, true, 0.35);
        c.hidden_dim = 40;
        c.embed_dim = 40;
        let m = DropoutMasks::sample(&c, 250, 123).unwrap();
        let scale = 1.0 / 0.65;
        let mut kept = 0usize;
        let mut total = 0usize;
        for l in 0..2 {
            for &x in m.mask(l).data() {
                assert!(x == 0.0 || (x - scale).abs() < 1e-15);
                kept += (x != 0.0) as usize;
                total += 1;
            }
        }
        let rate = kept as f64 / total as f64;
        assert!((rate - 0.65).abs() < 0.01, "keep rate {rate}");
        // Same seed, same masks.
        assert_eq!(m, DropoutMasks::sample(&c, 250, 123).unwrap());
    }

    #[test]
    fn forward_rejects_mismatched_state_and_ids() {
        let c = cfg(9, 4, true, 0.0);
        let p = ModelParams::init(&c, 2).unwrap();
        let batch = toy_batch(9, 3, 2, 6);
        let bad_state = LstmState::zeros(2, 4, 2);
        assert!(forward(&p, &batch, None, &bad_state).is_err());
        let big = toy_batch(50, 3, 2, 6);
        assert!(forward(&p, &big, None, &LstmState::zeros(2, 4, 3)).is_err());
    }
}
