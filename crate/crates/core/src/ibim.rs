//! Behavioral multi-interest extraction from item id sequences.
//!
//! A user's truncated click prefix is embedded (item plus learned positional
//! rows), a self-attentive extractor condenses it into a small set of
//! interest vectors, target-aware attention collapses those into one vector
//! during training, and a full softmax over the catalog scores the next
//! click. Every forward pass returns the state its backward pass needs, so
//! the trainer can run reverse-mode gradients without a tape.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, softmax_backward, softmax_inplace, Mat};

/// Forward state of the multi-interest extractor.
pub struct MiForward {
    /// The extracted interests, one row per interest head.
    pub interests: Mat,
    /// Dense item indices actually used, oldest first (truncated prefix).
    positions: Vec<usize>,
    /// Position representations: item embedding plus positional embedding.
    h: Mat,
    /// tanh(H W1), kept for the backward pass.
    tanh_out: Mat,
    /// Attention of each interest head over positions; rows sum to 1.
    weights: Mat,
}

impl MiForward {
    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }
}

/// Extracts per-head interest vectors from an item prefix.
///
/// Only the last `pos_emb.rows()` items participate. Position `j` of the
/// truncated prefix contributes its item row plus positional row `j`; each
/// head then attends over positions with weights
/// `softmax_j(tanh(H W1) W2)` and mixes the position representations.
pub fn mi_extract(
    prefix: &[usize],
    item_emb: &Mat,
    pos_emb: &Mat,
    w1: &Mat,
    w2: &Mat,
) -> Result<MiForward> {
    if prefix.is_empty() {
        return Err(Error::InvalidInput("interest extraction needs a non-empty prefix".into()));
    }
    let n = item_emb.rows();
    if let Some(&bad) = prefix.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!(
            "item index {bad} is out of range for a catalog of {n}"
        )));
    }
    let d = item_emb.cols();
    let l_max = pos_emb.rows();
    if pos_emb.cols() != d {
        return Err(Error::Shape(format!(
            "positional embeddings have width {}, items {d}",
            pos_emb.cols()
        )));
    }
    if w1.rows() != d {
        return Err(Error::Shape(format!("w1 has {} rows, expected {d}", w1.rows())));
    }
    if w2.rows() != w1.cols() {
        return Err(Error::Shape(format!(
            "w2 has {} rows, w1 has {} columns",
            w2.rows(),
            w1.cols()
        )));
    }
    let start = prefix.len().saturating_sub(l_max);
    let positions: Vec<usize> = prefix[start..].to_vec();
    let len = positions.len();
    let d_a = w1.cols();
    let m_im = w2.cols();

    let mut h = Mat::zeros(len, d);
    for (j, &item) in positions.iter().enumerate() {
        let row = h.row_mut(j);
        row.copy_from_slice(item_emb.row(item));
        axpy(1.0, pos_emb.row(j), row);
    }

    let mut tanh_out = Mat::zeros(len, d_a);
    for j in 0..len {
        w1.matvec_t(h.row(j), tanh_out.row_mut(j));
        for v in tanh_out.row_mut(j) {
            *v = v.tanh();
        }
    }

    // Head logits live in a len x m_im layout; attention normalizes each
    // head's column over positions.
    let mut logits = Mat::zeros(len, m_im);
    for j in 0..len {
        w2.matvec_t(tanh_out.row(j), logits.row_mut(j));
    }
    let mut weights = Mat::zeros(m_im, len);
    let mut column = vec![0.0; len];
    for m in 0..m_im {
        for j in 0..len {
            column[j] = logits.get(j, m);
        }
        softmax_inplace(&mut column);
        weights.row_mut(m).copy_from_slice(&column);
    }

    let mut interests = Mat::zeros(m_im, d);
    for m in 0..m_im {
        for j in 0..len {
            axpy(weights.get(m, j), h.row(j), interests.row_mut(m));
        }
    }
    Ok(MiForward {
        interests,
        positions,
        h,
        tanh_out,
        weights,
    })
}

/// Accumulates extractor gradients given the upstream interest gradient.
pub fn mi_extract_backward(
    fwd: &MiForward,
    w1: &Mat,
    w2: &Mat,
    d_interests: &Mat,
    d_item_emb: &mut Mat,
    d_pos_emb: &mut Mat,
    d_w1: &mut Mat,
    d_w2: &mut Mat,
) {
    let len = fwd.positions.len();
    let m_im = fwd.weights.rows();
    let d = fwd.h.cols();
    let d_a = fwd.tanh_out.cols();

    let mut d_h = Mat::zeros(len, d);
    // dG holds gradients of the pre-softmax head logits, len x m_im.
    let mut d_logits = Mat::zeros(len, m_im);
    let mut d_weights_row = vec![0.0; len];
    let mut d_logits_col = vec![0.0; len];
    for m in 0..m_im {
        let d_int = d_interests.row(m);
        for j in 0..len {
            axpy(fwd.weights.get(m, j), d_int, d_h.row_mut(j));
            d_weights_row[j] = dot(d_int, fwd.h.row(j));
        }
        softmax_backward(fwd.weights.row(m), &d_weights_row, &mut d_logits_col);
        for j in 0..len {
            d_logits.add_at(j, m, d_logits_col[j]);
        }
    }

    let mut d_tanh = vec![0.0; d_a];
    let mut d_pre = vec![0.0; d_a];
    for j in 0..len {
        // Through the head projection: G[j] = tanh_out[j] W2.
        let dg = d_logits.row(j);
        for (r, slot) in d_tanh.iter_mut().enumerate() {
            *slot = dot(w2.row(r), dg);
        }
        for (r, &t) in fwd.tanh_out.row(j).iter().enumerate() {
            axpy(t, dg, d_w2.row_mut(r));
            d_pre[r] = d_tanh[r] * (1.0 - t * t);
        }
        // Through the first projection: U[j] = h[j] W1.
        let h_row = fwd.h.row(j);
        let d_h_row = d_h.row_mut(j);
        for (p, &hp) in h_row.iter().enumerate() {
            axpy(hp, &d_pre, d_w1.row_mut(p));
            d_h_row[p] += dot(w1.row(p), &d_pre);
        }
    }

    for (j, &item) in fwd.positions.iter().enumerate() {
        axpy(1.0, d_h.row(j), d_item_emb.row_mut(item));
        axpy(1.0, d_h.row(j), d_pos_emb.row_mut(j));
    }
}

/// Forward state of target-aware attention over the interest rows.
pub struct TargetForward {
    /// The refined single-vector user representation.
    pub output: Vec<f64>,
    weights: Vec<f64>,
}

impl TargetForward {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Collapses interest rows into one vector, weighted by scaled inner
/// product with the target item embedding.
pub fn target_attention(e_tar: &[f64], interests: &Mat) -> TargetForward {
    let d = interests.cols();
    debug_assert_eq!(e_tar.len(), d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights: Vec<f64> = (0..interests.rows())
        .map(|j| dot(e_tar, interests.row(j)) * scale)
        .collect();
    softmax_inplace(&mut weights);
    let mut output = vec![0.0; d];
    for (j, &w) in weights.iter().enumerate() {
        axpy(w, interests.row(j), &mut output);
    }
    TargetForward { output, weights }
}

/// Accumulates target-attention gradients into the interest rows and the
/// target embedding (both trainable here, unlike the semantic variant).
pub fn target_attention_backward(
    fwd: &TargetForward,
    e_tar: &[f64],
    interests: &Mat,
    d_output: &[f64],
    d_interests: &mut Mat,
    d_e_tar: &mut [f64],
) {
    let m = interests.rows();
    let scale = 1.0 / (interests.cols() as f64).sqrt();
    let d_weights: Vec<f64> = (0..m).map(|j| dot(d_output, interests.row(j))).collect();
    let mut d_logits = vec![0.0; m];
    softmax_backward(&fwd.weights, &d_weights, &mut d_logits);
    for j in 0..m {
        axpy(fwd.weights[j], d_output, d_interests.row_mut(j));
        axpy(d_logits[j] * scale, e_tar, d_interests.row_mut(j));
        axpy(d_logits[j] * scale, interests.row(j), d_e_tar);
    }
}

/// Next-click distribution: softmax over the inner products of the refined
/// user vector with every catalog row.
pub fn score_items(h_prime: &[f64], item_emb: &Mat) -> Vec<f64> {
    debug_assert_eq!(h_prime.len(), item_emb.cols());
    let mut probs: Vec<f64> = (0..item_emb.rows())
        .map(|k| dot(h_prime, item_emb.row(k)))
        .collect();
    softmax_inplace(&mut probs);
    probs
}

/// Accumulates scoring gradients given the gradient of the pre-softmax
/// logits (for cross-entropy that is `probs - onehot(target)`).
pub fn score_items_backward(
    d_logits: &[f64],
    h_prime: &[f64],
    item_emb: &Mat,
    d_h_prime: &mut [f64],
    d_item_emb: &mut Mat,
) {
    for (k, &g) in d_logits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        axpy(g, item_emb.row(k), d_h_prime);
        axpy(g, h_prime, d_item_emb.row_mut(k));
    }
}
