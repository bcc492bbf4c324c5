//! Selector construction from batch activations.
//!
//! SK picks the `k` most active input and output features by mean absolute
//! activation and turns the first `r` of each into one-hot columns. SC keeps
//! the SK input selector and mixes the output selector through a ridge fit
//! from selected inputs to selected outputs. Hybrid runs SC when a gradient
//! signal is present and SK otherwise.

use serde::Serialize;

use crate::config::BuilderKind;
use crate::error::{shape_err, Result, VpsError};
use crate::linalg::{ridge_solve, top_k_indices, IndexList, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SelectorKind {
    Sk,
    Sc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorPair {
    /// `d_in × r`, one-hot columns.
    pub u: Matrix,
    /// `d_out × r`; one-hot for SK, unit-norm (or zero) columns for SC.
    pub v: Matrix,
    /// Full top-k input list; the first `r` entries feed `u`.
    pub in_indices: IndexList,
    pub out_indices: IndexList,
    pub kind: SelectorKind,
    /// The `r × r` ridge solution, SC only.
    pub coupling: Option<Matrix>,
}

impl SelectorPair {
    pub fn rank(&self) -> usize {
        self.u.cols()
    }
}

/// Whether a gradient-like signal is available for this call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradSignal {
    pub present: bool,
    pub magnitude: Option<f64>,
}

impl GradSignal {
    pub const ABSENT: Self = Self {
        present: false,
        magnitude: None,
    };

    pub fn present(magnitude: Option<f64>) -> Self {
        Self {
            present: true,
            magnitude: magnitude.map(f64::abs),
        }
    }
}

fn check_dims(x: &Matrix, h: &Matrix, k: usize, r: usize) -> Result<()> {
    if x.rows() != h.rows() {
        return Err(shape_err(
            "selector",
            format!("x has {} rows, h has {}", x.rows(), h.rows()),
        ));
    }
    let max_k = x.cols().min(h.cols());
    if r == 0 || r > k || k > max_k {
        return Err(VpsError::Argument(format!(
            "need 1 <= r <= k <= {max_k}, got r={r} k={k}"
        )));
    }
    Ok(())
}

/// Mean absolute activation per input column.
pub fn input_scores(x: &Matrix) -> Vec<f64> {
    x.mean_abs_cols()
}

fn one_hot(dim: usize, indices: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(dim, indices.len());
    for (c, &i) in indices.iter().enumerate() {
        m.set(i, c, 1.0);
    }
    m
}

/// One-hot selectors from precomputed top-k lists.
pub fn sk_from_indices(
    in_indices: IndexList,
    out_indices: IndexList,
    d_in: usize,
    d_out: usize,
    r: usize,
) -> Result<SelectorPair> {
    if r == 0 || r > in_indices.len() || r > out_indices.len() {
        return Err(VpsError::Argument(format!(
            "rank {r} exceeds selected index counts ({}, {})",
            in_indices.len(),
            out_indices.len()
        )));
    }
    Ok(SelectorPair {
        u: one_hot(d_in, &in_indices[..r]),
        v: one_hot(d_out, &out_indices[..r]),
        in_indices,
        out_indices,
        kind: SelectorKind::Sk,
        coupling: None,
    })
}

pub fn sk_build(x: &Matrix, h: &Matrix, k: usize, r: usize) -> Result<SelectorPair> {
    check_dims(x, h, k, r)?;
    let ins = top_k_indices(&input_scores(x), k)?;
    let outs = top_k_indices(&h.mean_abs_cols(), k)?;
    sk_from_indices(ins, outs, x.cols(), h.cols(), r)
}

/// Replaces the output selector of an SK pair by `V Tᵀ` with
/// `T = (X_AᵀX_A + αI)⁻¹ X_AᵀY`, then unit-normalises its columns.
pub fn sc_refine(sk: SelectorPair, x: &Matrix, h: &Matrix, alpha: f64) -> Result<SelectorPair> {
    let r = sk.rank();
    let xa = x.select_cols(&sk.in_indices[..r]);
    let y = h.select_cols(&sk.out_indices[..r]);
    let g = xa.t_matmul(&xa)?;
    let c = xa.t_matmul(&y)?;
    let t = ridge_solve(&g, &c, alpha)?;
    let mut v = sk.v.matmul_t(&t)?;
    for col in 0..r {
        let norm = v.col_norm(col);
        // Zero columns stay zero.
        if norm > 0.0 {
            for i in 0..v.rows() {
                v.set(i, col, v.get(i, col) / norm);
            }
        }
    }
    Ok(SelectorPair {
        v,
        kind: SelectorKind::Sc,
        coupling: Some(t),
        ..sk
    })
}

pub fn sc_build(x: &Matrix, h: &Matrix, k: usize, r: usize, alpha: f64) -> Result<SelectorPair> {
    let sk = sk_build(x, h, k, r)?;
    sc_refine(sk, x, h, alpha)
}

pub fn hybrid_build(
    x: &Matrix,
    h: &Matrix,
    k: usize,
    r: usize,
    alpha: f64,
    grad: GradSignal,
) -> Result<SelectorPair> {
    if grad.present {
        sc_build(x, h, k, r, alpha)
    } else {
        sk_build(x, h, k, r)
    }
}

/// Dispatches on the builder kind. When `shared_in` is given it replaces
/// the layer's own input selection (Q/K coupling).
#[allow(clippy::too_many_arguments)]
pub fn build(
    kind: BuilderKind,
    x: &Matrix,
    h: &Matrix,
    k: usize,
    r: usize,
    alpha: f64,
    grad: GradSignal,
    shared_in: Option<&IndexList>,
) -> Result<SelectorPair> {
    check_dims(x, h, k, r)?;
    let ins = match shared_in {
        Some(ins) => ins.clone(),
        None => top_k_indices(&input_scores(x), k)?,
    };
    let outs = top_k_indices(&h.mean_abs_cols(), k)?;
    let sk = sk_from_indices(ins, outs, x.cols(), h.cols(), r)?;
    let use_sc = match kind {
        BuilderKind::Sk => false,
        BuilderKind::Sc => true,
        BuilderKind::Hybrid => grad.present,
    };
    if use_sc {
        sc_refine(sk, x, h, alpha)
    } else {
        Ok(sk)
    }
}
