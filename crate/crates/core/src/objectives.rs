//! Training losses: next-click cross-entropy, its text-space counterpart,
//! and the cross-modal alignment terms (contrastive plus cosine) that pull
//! projected semantic vectors toward their behavioral counterparts.
//!
//! Every loss ships a matching backward function that accumulates scaled
//! gradients into caller-owned sinks, so the trainer composes them freely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, softmax_inplace, Mat};

/// Floor applied to probabilities before taking logarithms.
const PROB_FLOOR: f64 = 1e-12;

/// Mixing weights of the auxiliary objectives.
///
/// `alpha` scales the contrastive terms and `beta` the cosine terms of the
/// alignment loss; their doubled sum must be exactly one. `gamma` scales
/// both auxiliary losses against the recommendation loss, and `tau` is the
/// contrastive temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.4,
            beta: 0.1,
            gamma: 0.1,
            tau: 0.1,
        }
    }
}

impl LossConfig {
    /// Checks the ratio constraint and the admissible ranges.
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        let doubled = 2.0 * (self.alpha + self.beta);
        if (doubled - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "modal ratio constraint violated: 2*(alpha+beta) must be 1, got {doubled} \
                 from alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Negative log-likelihood of the target under a probability vector.
pub fn rec_loss(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(PROB_FLOOR).ln()
}

/// Text-space next-click distribution: softmax over the inner products of
/// the semantic user vector with every item-name embedding.
pub fn semantic_scores(h_ex_prime: &[f64], item_text: &Mat) -> Vec<f64> {
    debug_assert_eq!(h_ex_prime.len(), item_text.cols());
    let mut scores: Vec<f64> = (0..item_text.rows())
        .map(|k| dot(h_ex_prime, item_text.row(k)))
        .collect();
    softmax_inplace(&mut scores);
    scores
}

/// Accumulates the semantic-score gradient into the user vector. Item-name
/// embeddings are frozen and receive none.
pub fn semantic_scores_backward(d_logits: &[f64], item_text: &Mat, d_h: &mut [f64]) {
    for (k, &g) in d_logits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        axpy(g, item_text.row(k), d_h);
    }
}

fn row_norms(m: &Mat, side: &str) -> Result<Vec<f64>> {
    (0..m.rows())
        .map(|r| {
            let n = norm(m.row(r));
            if n == 0.0 {
                Err(Error::InvalidInput(format!("zero-norm row {r} in {side} batch")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// In-batch contrastive loss over cosine similarities at temperature `tau`.
///
/// Row `k` of `a` is attracted to row `k` of `b` and repelled from the other
/// rows of `b`.
pub fn contrastive(a: &Mat, b: &Mat, tau: f64) -> Result<f64> {
    contrastive_impl(a, b, tau, None)
}

/// Gradient of [`contrastive`] times `weight`, accumulated into the sinks.
pub fn contrastive_backward(
    a: &Mat,
    b: &Mat,
    tau: f64,
    weight: f64,
    d_a: &mut Mat,
    d_b: &mut Mat,
) -> Result<()> {
    contrastive_impl(a, b, tau, Some((weight, d_a, d_b)))?;
    Ok(())
}

fn contrastive_impl(
    a: &Mat,
    b: &Mat,
    tau: f64,
    mut backward: Option<(f64, &mut Mat, &mut Mat)>,
) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "contrastive batches disagree: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::InvalidInput("contrastive batch is empty".into()));
    }
    let batch = a.rows();
    let na = row_norms(a, "left")?;
    let nb = row_norms(b, "right")?;
    let mut sims = Mat::zeros(batch, batch);
    for k in 0..batch {
        for j in 0..batch {
            sims.set(k, j, dot(a.row(k), b.row(j)) / (na[k] * nb[j]));
        }
    }
    let mut loss = 0.0;
    let mut probs = Mat::zeros(batch, batch);
    for k in 0..batch {
        let row = probs.row_mut(k);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = sims.get(k, j) / tau;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logsum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += logsum - sims.get(k, k) / tau;
        softmax_inplace(row);
    }
    loss /= batch as f64;

    if let Some((weight, d_a, d_b)) = backward.as_mut() {
        let scale = *weight / (batch as f64 * tau);
        for k in 0..batch {
            for j in 0..batch {
                let mut g = probs.get(k, j) * scale;
                if j == k {
                    g -= scale;
                }
                if g == 0.0 {
                    continue;
                }
                let s = sims.get(k, j);
                // d cos / d a_k and d cos / d b_j.
                let ca = 1.0 / (na[k] * nb[j]);
                axpy(g * ca, b.row(j), d_a.row_mut(k));
                axpy(-g * s / (na[k] * na[k]), a.row(k), d_a.row_mut(k));
                axpy(g * ca, a.row(k), d_b.row_mut(j));
                axpy(-g * s / (nb[j] * nb[j]), b.row(j), d_b.row_mut(j));
            }
        }
    }
    Ok(loss)
}

/// Mean cosine distance between paired rows.
pub fn cosine_loss(a: &Mat, b: &Mat) -> Result<f64> {
    cosine_impl(a, b, None)
}

/// Gradient of [`cosine_loss`] times `weight`, accumulated into the sinks.
pub fn cosine_loss_backward(
    a: &Mat,
    b: &Mat,
    weight: f64,
    d_a: &mut Mat,
    d_b: &mut Mat,
) -> Result<()> {
    cosine_impl(a, b, Some((weight, d_a, d_b)))?;
    Ok(())
}

fn cosine_impl(a: &Mat, b: &Mat, mut backward: Option<(f64, &mut Mat, &mut Mat)>) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "cosine batches disagree: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::InvalidInput("cosine batch is empty".into()));
    }
    let batch = a.rows();
    let na = row_norms(a, "left")?;
    let nb = row_norms(b, "right")?;
    let mut loss = 0.0;
    for k in 0..batch {
        let c = dot(a.row(k), b.row(k)) / (na[k] * nb[k]);
        loss += 1.0 - c;
        if let Some((weight, d_a, d_b)) = backward.as_mut() {
            let g = -*weight / batch as f64;
            let ca = 1.0 / (na[k] * nb[k]);
            axpy(g * ca, b.row(k), d_a.row_mut(k));
            axpy(-g * c / (na[k] * na[k]), a.row(k), d_a.row_mut(k));
            axpy(g * ca, a.row(k), d_b.row_mut(k));
            axpy(-g * c / (nb[k] * nb[k]), b.row(k), d_b.row_mut(k));
        }
    }
    Ok(loss / batch as f64)
}

/// The learned affine bridge from text space (`d_t`) into id space (`d`).
pub struct Projection<'a> {
    pub w: &'a Mat,
    pub b: &'a [f64],
}

impl Projection<'_> {
    /// Applies the projection to one text-space vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.w.rows()];
        self.w.matvec(x, &mut out);
        axpy(1.0, self.b, &mut out);
        out
    }

    fn apply_rows(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros(x.rows(), self.w.rows());
        for r in 0..x.rows() {
            self.w.matvec(x.row(r), out.row_mut(r));
            axpy(1.0, self.b, out.row_mut(r));
        }
        out
    }
}

/// Accumulates projection gradients: `d_out` rows are upstream gradients of
/// `proj.apply(x)` rows. The input gradient sink is optional because text
/// vectors are frozen while semantic user vectors are not.
pub fn projection_backward(
    proj: &Projection,
    x: &Mat,
    d_out: &Mat,
    mut d_x: Option<&mut Mat>,
    d_w: &mut Mat,
    d_b: &mut [f64],
) {
    for r in 0..x.rows() {
        let g = d_out.row(r);
        for (i, &gi) in g.iter().enumerate() {
            axpy(gi, x.row(r), d_w.row_mut(i));
        }
        axpy(1.0, g, d_b);
        if let Some(dx) = d_x.as_deref_mut() {
            proj.w.matvec_t(g, dx.row_mut(r));
        }
    }
}

/// Projected batches kept around for the alignment backward pass.
pub struct AlignmentForward {
    pub loss: f64,
    proj_ex: Mat,
    proj_tar: Mat,
}

/// Cross-modal alignment loss over one batch.
///
/// Both text-space batches are projected into id space; contrastive terms
/// (weight `alpha`) and cosine terms (weight `beta`) then compare the
/// projected semantic user vector with the behavioral one, and the
/// projected target name embedding with the target id embedding.
pub fn alignment_forward(
    h_ex_prime: &Mat,
    h_im_prime: &Mat,
    t_tar: &Mat,
    e_tar: &Mat,
    proj: &Projection,
    cfg: &LossConfig,
) -> Result<AlignmentForward> {
    let batch = h_ex_prime.rows();
    if h_im_prime.rows() != batch || t_tar.rows() != batch || e_tar.rows() != batch {
        return Err(Error::Shape(format!(
            "alignment batches disagree: {batch}, {}, {}, {}",
            h_im_prime.rows(),
            t_tar.rows(),
            e_tar.rows()
        )));
    }
    let proj_ex = proj.apply_rows(h_ex_prime);
    let proj_tar = proj.apply_rows(t_tar);
    let loss = cfg.alpha
        * (contrastive(&proj_ex, h_im_prime, cfg.tau)? + contrastive(&proj_tar, e_tar, cfg.tau)?)
        + cfg.beta * (cosine_loss(&proj_ex, h_im_prime)? + cosine_loss(&proj_tar, e_tar)?);
    Ok(AlignmentForward {
        loss,
        proj_ex,
        proj_tar,
    })
}

/// Convenience wrapper returning only the loss value.
pub fn alignment_loss(
    h_ex_prime: &Mat,
    h_im_prime: &Mat,
    t_tar: &Mat,
    e_tar: &Mat,
    proj: &Projection,
    cfg: &LossConfig,
) -> Result<f64> {
    alignment_forward(h_ex_prime, h_im_prime, t_tar, e_tar, proj, cfg).map(|f| f.loss)
}

/// Gradient of the alignment loss times `weight`.
///
/// Sinks cover every trainable input: the semantic user batch, the
/// behavioral user batch, the target id embeddings, and the projection.
/// Target name embeddings are frozen.
#[allow(clippy::too_many_arguments)]
pub fn alignment_backward(
    fwd: &AlignmentForward,
    h_ex_prime: &Mat,
    h_im_prime: &Mat,
    t_tar: &Mat,
    e_tar: &Mat,
    proj: &Projection,
    cfg: &LossConfig,
    weight: f64,
    d_h_ex_prime: &mut Mat,
    d_h_im_prime: &mut Mat,
    d_e_tar: &mut Mat,
    d_w: &mut Mat,
    d_b: &mut [f64],
) -> Result<()> {
    let mut d_proj_ex = Mat::zeros(fwd.proj_ex.rows(), fwd.proj_ex.cols());
    let mut d_proj_tar = Mat::zeros(fwd.proj_tar.rows(), fwd.proj_tar.cols());
    contrastive_backward(
        &fwd.proj_ex,
        h_im_prime,
        cfg.tau,
        weight * cfg.alpha,
        &mut d_proj_ex,
        d_h_im_prime,
    )?;
    contrastive_backward(
        &fwd.proj_tar,
        e_tar,
        cfg.tau,
        weight * cfg.alpha,
        &mut d_proj_tar,
        d_e_tar,
    )?;
    cosine_loss_backward(
        &fwd.proj_ex,
        h_im_prime,
        weight * cfg.beta,
        &mut d_proj_ex,
        d_h_im_prime,
    )?;
    cosine_loss_backward(
        &fwd.proj_tar,
        e_tar,
        weight * cfg.beta,
        &mut d_proj_tar,
        d_e_tar,
    )?;
    projection_backward(proj, h_ex_prime, &d_proj_ex, Some(d_h_ex_prime), d_w, d_b);
    projection_backward(proj, t_tar, &d_proj_tar, None, d_w, d_b);
    Ok(())
}

/// Joint objective: recommendation loss plus `gamma` times the auxiliaries.
pub fn total_loss(l_r: f64, l_s: f64, l_a: f64, gamma: f64) -> f64 {
    l_r + gamma * (l_s + l_a)
}
