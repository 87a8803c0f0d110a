//! Distance between the column spaces of two matrices.
//!
//! Both inputs are orthonormalized with QR; the squared distance is the
//! normalized residual of projecting one basis onto the other's span,
//! `||V - U (U^T V)||_F^2 / C`.  That equals `(1/C) sum_i (1 - rho_i^2)`
//! over the principal cosines `rho_i` (the singular values of `U^T V`),
//! but summing the residual directly is forward-stable near zero, where
//! the cosine form loses half the significant digits to cancellation.
//! The distance is symmetric, basis-invariant, and ranges from 0 (same
//! span) to 1 (orthogonal spans).  For C-dimensional random subspaces of
//! R^n the expected squared distance is `1 - C/n`, which is the yardstick
//! the experiment reports are read against.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{matmul, mul_at, qr_orthonormalize, singular_values, Matrix};
use crate::net::ModelParams;

/// Distance between the column spans of `x` and `y` (same row count, same
/// column count, both full column rank).
pub fn subspace_distance(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            ctx: "subspace_distance",
            a_rows: x.rows(),
            a_cols: x.cols(),
            b_rows: y.rows(),
            b_cols: y.cols(),
        });
    }
    let u = qr_orthonormalize(x)?;
    let v = qr_orthonormalize(y)?;
    let overlap = mul_at(&u, &v)?;
    let projected = matmul(&u, &overlap)?;
    let mut residual = v;
    residual.add_scaled(&projected, -1.0)?;
    let dist_sq = residual.frobenius_norm_sq() / x.cols() as f64;
    Ok(libm::sqrt(dist_sq.clamp(0.0, 1.0)))
}

/// The principal cosines between the column spans of `x` and `y`: the
/// singular values of `U^T V`, descending, clamped into [0, 1].  The
/// distance above equals the RMS of the matching sines.
pub fn principal_cosines(x: &Matrix, y: &Matrix) -> Result<Vec<f64>> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            ctx: "principal_cosines",
            a_rows: x.rows(),
            a_cols: x.cols(),
            b_rows: y.rows(),
            b_cols: y.cols(),
        });
    }
    let u = qr_orthonormalize(x)?;
    let v = qr_orthonormalize(y)?;
    let overlap = mul_at(&u, &v)?;
    let mut cosines = singular_values(&overlap)?;
    for c in cosines.iter_mut() {
        *c = c.clamp(0.0, 1.0);
    }
    Ok(cosines)
}

/// The distance between a model's input and output embedding subspaces.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceReport {
    pub distance: f64,
    /// Subspace dimension (the embedding width).
    pub dim: usize,
    /// Ambient dimension (the vocabulary size).
    pub ambient: usize,
    /// Tied models share the matrix, so the distance is identically zero.
    pub tied: bool,
}

/// Compare span(E^T) against span(W) for a model with output projection W;
/// for tied models the answer is 0 by construction and no decomposition
/// runs.
pub fn model_subspace_distance(params: &ModelParams) -> Result<SubspaceReport> {
    let dim = params.embed_dim();
    let ambient = params.vocab_size();
    match &params.output {
        None => Ok(SubspaceReport {
            distance: 0.0,
            dim,
            ambient,
            tied: true,
        }),
        Some(out) => {
            let x = params.embedding.transpose();
            if out.weight.cols() != dim {
                return Err(Error::ShapeMismatch {
                    ctx: "model subspaces",
                    a_rows: ambient,
                    a_cols: dim,
                    b_rows: out.weight.rows(),
                    b_cols: out.weight.cols(),
                });
            }
            let distance = subspace_distance(&x, &out.weight)?;
            Ok(SubspaceReport {
                distance,
                dim,
                ambient,
                tied: false,
            })
        }
    }
}
