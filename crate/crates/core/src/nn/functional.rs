//! Tape-free numeric kernels shared by the graph ops and by callers that only
//! need a forward value.

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::shape("softmax", "non-empty input", 0));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `W·x + b` for a weight matrix stored as `(out_dim, in_dim)`.
pub fn linear_forward(x: &[f64], weight: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    if x.len() != weight.cols() {
        return Err(Error::shape("linear_forward input", weight.cols(), x.len()));
    }
    if bias.len() != weight.rows() {
        return Err(Error::shape("linear_forward bias", weight.rows(), bias.len()));
    }
    Ok((0..weight.rows())
        .map(|o| dot(weight.row(o), x) + bias[o])
        .collect())
}

/// Row-stochastic weights `SoftMax(Q·Kᵀ/√d_k)`.
pub fn attention_weights(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::shape("attention Q/K width", q.cols(), k.cols()));
    }
    if k.rows() == 0 {
        return Err(Error::shape("attention keys", "at least one key", 0));
    }
    let mut scores = q.matmul_t(k)?;
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    for r in 0..scores.rows() {
        softmax_in_place(scores.row_mut(r));
    }
    Ok(scores)
}

/// Scaled dot-product attention `SoftMax(Q·Kᵀ/√d_k)·V`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if v.rows() != k.rows() {
        return Err(Error::shape("attention V rows", k.rows(), v.rows()));
    }
    attention_weights(q, k)?.matmul(v)
}

/// Layout of a batch of independent attention problems packed into three
/// matrices: group `g` owns query rows `g*queries..(g+1)*queries` and key/value
/// rows `g*keys..(g+1)*keys`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    pub groups: usize,
    pub queries: usize,
    pub keys: usize,
}

/// Returns `(output, probabilities)`; probabilities are `(groups*queries, keys)`.
pub(crate) fn grouped_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    layout: GroupLayout,
) -> (Matrix, Matrix) {
    let GroupLayout {
        groups,
        queries,
        keys,
    } = layout;
    assert_eq!(q.rows(), groups * queries, "grouped attention query rows");
    assert_eq!(k.rows(), groups * keys, "grouped attention key rows");
    assert_eq!(v.rows(), groups * keys, "grouped attention value rows");
    assert_eq!(q.cols(), k.cols(), "grouped attention Q/K width");
    assert!(keys > 0, "grouped attention needs at least one key");
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut probs = Matrix::zeros(groups * queries, keys);
    let mut out = Matrix::zeros(groups * queries, v.cols());
    for g in 0..groups {
        for qi in 0..queries {
            let qr = g * queries + qi;
            let qrow = q.row(qr);
            let prow = probs.row_mut(qr);
            for (j, p) in prow.iter_mut().enumerate() {
                *p = dot(qrow, k.row(g * keys + j)) * scale;
            }
            softmax_in_place(prow);
            let prow = probs.row(qr).to_vec();
            let orow = out.row_mut(qr);
            for (j, &p) in prow.iter().enumerate() {
                axpy(p, v.row(g * keys + j), orow);
            }
        }
    }
    (out, probs)
}

/// Gradients `(dQ, dK, dV)` of grouped attention given upstream `d_out`.
pub(crate) fn grouped_attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    probs: &Matrix,
    d_out: &Matrix,
    layout: GroupLayout,
) -> (Matrix, Matrix, Matrix) {
    let GroupLayout {
        groups,
        queries,
        keys,
    } = layout;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut dq = Matrix::zeros(q.rows(), q.cols());
    let mut dk = Matrix::zeros(k.rows(), k.cols());
    let mut dv = Matrix::zeros(v.rows(), v.cols());
    let mut dp = vec![0.0; keys];
    for g in 0..groups {
        for qi in 0..queries {
            let qr = g * queries + qi;
            let prow = probs.row(qr);
            let go = d_out.row(qr);
            for j in 0..keys {
                let kr = g * keys + j;
                dp[j] = dot(go, v.row(kr));
                axpy(prow[j], go, dv.row_mut(kr));
            }
            let inner: f64 = prow.iter().zip(&dp).map(|(p, d)| p * d).sum();
            for j in 0..keys {
                let kr = g * keys + j;
                let ds = prow[j] * (dp[j] - inner) * scale;
                if ds != 0.0 {
                    axpy(ds, k.row(kr), dq.row_mut(qr));
                    axpy(ds, q.row(qr), dk.row_mut(kr));
                }
            }
        }
    }
    (dq, dk, dv)
}
