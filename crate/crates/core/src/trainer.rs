//! Joint training over the behavioral and semantic towers.
//!
//! One batch runs three phases: forward passes per example (interest
//! extraction, target attention, catalog scoring, and optionally the
//! semantic stack), a batch-level alignment pass over the surviving rows,
//! and a combined backward sweep that accumulates every gradient before a
//! single adaptive-moment update. All arithmetic is f64; checkpoints store
//! f32, and evaluation always consumes the rounded values so that saving
//! and reloading cannot change a result.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_training_examples, SplitDataset, TrainingExample, UserSequence};
use crate::error::{Error, Result};
use crate::esim::{
    semantic_self_attention, semantic_self_attention_backward, semantic_target_attention,
    semantic_target_attention_backward, SelfAttentionForward, SelfAttentionGrads,
    SelfAttentionParams, SemanticInterestSet, TargetAttentionForward,
};
use crate::ibim::{
    mi_extract, mi_extract_backward, score_items, score_items_backward, target_attention,
    target_attention_backward, MiForward, TargetForward,
};
use crate::linalg::{axpy, dot, norm, Mat};
use crate::objectives::{
    alignment_backward, alignment_forward, rec_loss, semantic_scores, semantic_scores_backward,
    total_loss, LossConfig, Projection,
};

/// Everything the training loop needs to know, and nothing path-shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Width of the behavioral (id) space.
    pub d: usize,
    /// Width of the text space.
    pub d_t: usize,
    /// Hidden width of the interest extractor.
    pub d_a: usize,
    /// Number of behavioral interest heads.
    pub m_im: usize,
    /// Cap on semantic interests per user.
    pub m_ex: usize,
    /// Maximum prefix length fed to the extractor.
    pub l_max: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Learned projections in the semantic self-attention block; the
    /// parameter-free variant attends over the raw text vectors.
    pub semantic_projections: bool,
    /// Exemplar preference used by the clustering stage.
    pub preference: f64,
    /// Message damping used by the clustering stage.
    pub damping: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            d: 32,
            d_t: 384,
            d_a: 32,
            m_im: 4,
            m_ex: 20,
            l_max: 20,
            lr: 0.001,
            max_steps: 5000,
            seed: 0,
            loss: LossConfig::default(),
            semantic_projections: true,
            preference: -10.0,
            damping: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("d", self.d),
            ("d_t", self.d_t),
            ("d_a", self.d_a),
            ("m_im", self.m_im),
            ("m_ex", self.m_ex),
            ("l_max", self.l_max),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        self.loss.validate()
    }
}

/// All trainable arrays. The same struct doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub item_emb: Mat,
    pub pos_emb: Mat,
    pub extractor_w1: Mat,
    pub extractor_w2: Mat,
    pub sem_wq: Mat,
    pub sem_wk: Mat,
    pub sem_wv: Mat,
    pub sem_bq: Vec<f64>,
    pub sem_bk: Vec<f64>,
    pub sem_bv: Vec<f64>,
    pub proj_w: Mat,
    pub proj_b: Vec<f64>,
}

/// Canonical array order used by initialization, updates, and checkpoints.
pub const ARRAY_NAMES: [&str; 12] = [
    "item_emb",
    "pos_emb",
    "extractor_w1",
    "extractor_w2",
    "sem_wq",
    "sem_wk",
    "sem_wv",
    "sem_bq",
    "sem_bk",
    "sem_bv",
    "proj_w",
    "proj_b",
];

impl ModelParams {
    /// All-zero arrays shaped for `cfg` and a catalog of `n_items`.
    pub fn zeros(cfg: &TrainConfig, n_items: usize) -> Self {
        ModelParams {
            item_emb: Mat::zeros(n_items, cfg.d),
            pos_emb: Mat::zeros(cfg.l_max, cfg.d),
            extractor_w1: Mat::zeros(cfg.d, cfg.d_a),
            extractor_w2: Mat::zeros(cfg.d_a, cfg.m_im),
            sem_wq: Mat::zeros(cfg.d_t, cfg.d_t),
            sem_wk: Mat::zeros(cfg.d_t, cfg.d_t),
            sem_wv: Mat::zeros(cfg.d_t, cfg.d_t),
            sem_bq: vec![0.0; cfg.d_t],
            sem_bk: vec![0.0; cfg.d_t],
            sem_bv: vec![0.0; cfg.d_t],
            proj_w: Mat::zeros(cfg.d, cfg.d_t),
            proj_b: vec![0.0; cfg.d],
        }
    }

    /// Array views in canonical order with their shapes.
    pub fn arrays(&self) -> [(&'static str, &[f64], [usize; 2]); 12] {
        [
            ("item_emb", self.item_emb.data(), [self.item_emb.rows(), self.item_emb.cols()]),
            ("pos_emb", self.pos_emb.data(), [self.pos_emb.rows(), self.pos_emb.cols()]),
            (
                "extractor_w1",
                self.extractor_w1.data(),
                [self.extractor_w1.rows(), self.extractor_w1.cols()],
            ),
            (
                "extractor_w2",
                self.extractor_w2.data(),
                [self.extractor_w2.rows(), self.extractor_w2.cols()],
            ),
            ("sem_wq", self.sem_wq.data(), [self.sem_wq.rows(), self.sem_wq.cols()]),
            ("sem_wk", self.sem_wk.data(), [self.sem_wk.rows(), self.sem_wk.cols()]),
            ("sem_wv", self.sem_wv.data(), [self.sem_wv.rows(), self.sem_wv.cols()]),
            ("sem_bq", &self.sem_bq, [1, self.sem_bq.len()]),
            ("sem_bk", &self.sem_bk, [1, self.sem_bk.len()]),
            ("sem_bv", &self.sem_bv, [1, self.sem_bv.len()]),
            ("proj_w", self.proj_w.data(), [self.proj_w.rows(), self.proj_w.cols()]),
            ("proj_b", &self.proj_b, [1, self.proj_b.len()]),
        ]
    }

    /// Mutable array views in canonical order.
    pub fn arrays_mut(&mut self) -> [(&'static str, &mut [f64]); 12] {
        let ModelParams {
            item_emb,
            pos_emb,
            extractor_w1,
            extractor_w2,
            sem_wq,
            sem_wk,
            sem_wv,
            sem_bq,
            sem_bk,
            sem_bv,
            proj_w,
            proj_b,
        } = self;
        [
            ("item_emb", item_emb.data_mut()),
            ("pos_emb", pos_emb.data_mut()),
            ("extractor_w1", extractor_w1.data_mut()),
            ("extractor_w2", extractor_w2.data_mut()),
            ("sem_wq", sem_wq.data_mut()),
            ("sem_wk", sem_wk.data_mut()),
            ("sem_wv", sem_wv.data_mut()),
            ("sem_bq", sem_bq.as_mut_slice()),
            ("sem_bk", sem_bk.as_mut_slice()),
            ("sem_bv", sem_bv.as_mut_slice()),
            ("proj_w", proj_w.data_mut()),
            ("proj_b", proj_b.as_mut_slice()),
        ]
    }
}

fn fnv1a_str(s: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x1_0000_0001_b3);
    }
    hash
}

/// Initializes every weight matrix uniformly in (-1/sqrt(fan_in),
/// +1/sqrt(fan_in)) and every bias to zero.
///
/// Each array draws from its own generator seeded by the run seed and the
/// array name, so adding or removing arrays elsewhere never shifts another
/// array's values. That is what makes the auxiliary-free ablation
/// bit-reproducible against a build with the semantic tower absent.
pub fn init_params(cfg: &TrainConfig, n_items: usize) -> ModelParams {
    let mut params = ModelParams::zeros(cfg, n_items);
    let seed = cfg.seed;
    let fan_in = |name: &str| -> Option<usize> {
        match name {
            "item_emb" | "pos_emb" => Some(cfg.d),
            "extractor_w1" => Some(cfg.d),
            "extractor_w2" => Some(cfg.d_a),
            "sem_wq" | "sem_wk" | "sem_wv" | "proj_w" => Some(cfg.d_t),
            // Biases stay zero.
            _ => None,
        }
    };
    for (name, data) in params.arrays_mut() {
        let Some(fan) = fan_in(name) else { continue };
        let bound = 1.0 / (fan as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a_str(name));
        for v in data {
            *v = rng.gen_range(-bound..bound);
        }
    }
    params
}

/// Frozen text-space inputs of the auxiliary objectives.
pub struct SemanticInputs {
    /// Interest set per training user, indexed like the training user list.
    pub per_user: Vec<Arc<SemanticInterestSet>>,
    /// Item-name embeddings, one row per catalog item.
    pub item_text: Mat,
}

/// Loss components of one batch. `total` applies the configured gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub rec: f64,
    pub semantic: f64,
    pub alignment: f64,
    pub total: f64,
}

struct ExampleCache<'a> {
    example: &'a TrainingExample,
    mi: MiForward,
    tgt: TargetForward,
    d_logits: Vec<f64>,
    semantic: Option<SemanticCache>,
    /// Row of the alignment batch this example landed in, if it survived
    /// the zero-norm filter.
    alignment_row: Option<usize>,
}

struct SemanticCache {
    self_attn: SelfAttentionForward,
    tgt_attn: TargetAttentionForward,
    d_score_logits: Vec<f64>,
}

/// Computes losses and gradients of `w_r * L_rec + w_s * L_sem + w_a *
/// L_align` over one batch. The returned gradients live in a `ModelParams`
/// of the same shapes. Loss components are reported unweighted.
///
/// With both auxiliary weights at zero the semantic tower is never touched,
/// which keeps the recommendation-only path bit-identical to a build that
/// has no semantic tower at all.
pub fn compute_batch(
    params: &ModelParams,
    batch: &[TrainingExample],
    semantic: Option<&SemanticInputs>,
    cfg: &TrainConfig,
    weights: (f64, f64, f64),
) -> Result<(LossValues, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let (w_r, w_s, w_a) = weights;
    let aux = semantic.filter(|_| w_s != 0.0 || w_a != 0.0);
    let batch_len = batch.len() as f64;
    let n_items = params.item_emb.rows();
    let mut grads = ModelParams::zeros(cfg, n_items);

    let mut rec_sum = 0.0;
    let mut sem_sum = 0.0;
    let mut caches: Vec<ExampleCache> = Vec::with_capacity(batch.len());
    let mut align_ex_rows: Vec<Vec<f64>> = Vec::new();
    let mut align_im_rows: Vec<Vec<f64>> = Vec::new();
    let mut align_t_rows: Vec<Vec<f64>> = Vec::new();
    let mut align_e_rows: Vec<Vec<f64>> = Vec::new();

    for example in batch {
        let mi = mi_extract(
            &example.prefix,
            &params.item_emb,
            &params.pos_emb,
            &params.extractor_w1,
            &params.extractor_w2,
        )?;
        let e_tar = params.item_emb.row(example.target);
        let tgt = target_attention(e_tar, &mi.interests);
        if !tgt.output.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("recommendation loss".into()));
        }
        let probs = score_items(&tgt.output, &params.item_emb);
        if !probs[example.target].is_finite() {
            return Err(Error::NonFinite("recommendation loss".into()));
        }
        rec_sum += rec_loss(&probs, example.target);
        let mut d_logits = probs;
        d_logits[example.target] -= 1.0;
        for g in &mut d_logits {
            *g *= w_r / batch_len;
        }

        let semantic_cache = match aux {
            Some(inputs) => {
                let set = inputs
                    .per_user
                    .get(example.user)
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "no semantic interests for user index {}",
                            example.user
                        ))
                    })?
                    .as_ref();
                let sa_params = SelfAttentionParams {
                    w_q: &params.sem_wq,
                    w_k: &params.sem_wk,
                    w_v: &params.sem_wv,
                    b_q: &params.sem_bq,
                    b_k: &params.sem_bk,
                    b_v: &params.sem_bv,
                };
                let self_attn = semantic_self_attention(
                    set,
                    cfg.semantic_projections.then_some(&sa_params),
                )?;
                let t_tar = inputs.item_text.row(example.target);
                let tgt_attn = semantic_target_attention(t_tar, &self_attn.output, &set.mask)?;
                if !tgt_attn.output.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("semantic loss".into()));
                }
                let scores = semantic_scores(&tgt_attn.output, &inputs.item_text);
                if !scores[example.target].is_finite() {
                    return Err(Error::NonFinite("semantic loss".into()));
                }
                sem_sum += rec_loss(&scores, example.target);
                let mut d_score_logits = scores;
                d_score_logits[example.target] -= 1.0;
                for g in &mut d_score_logits {
                    *g *= w_s / batch_len;
                }

                // Alignment rows survive only with every vector nonzero;
                // an all-masked interest set yields a zero semantic vector
                // that no cosine can compare.
                let row = if w_a != 0.0
                    && norm(&tgt_attn.output) > 0.0
                    && norm(&tgt.output) > 0.0
                    && norm(t_tar) > 0.0
                    && norm(e_tar) > 0.0
                {
                    align_ex_rows.push(tgt_attn.output.clone());
                    align_im_rows.push(tgt.output.clone());
                    align_t_rows.push(t_tar.to_vec());
                    align_e_rows.push(e_tar.to_vec());
                    Some(align_ex_rows.len() - 1)
                } else {
                    None
                };
                caches.push(ExampleCache {
                    example,
                    mi,
                    tgt,
                    d_logits,
                    semantic: Some(SemanticCache {
                        self_attn,
                        tgt_attn,
                        d_score_logits,
                    }),
                    alignment_row: row,
                });
                continue;
            }
            None => None,
        };
        caches.push(ExampleCache {
            example,
            mi,
            tgt,
            d_logits,
            semantic: semantic_cache,
            alignment_row: None,
        });
    }

    let rec = rec_sum / batch_len;
    if !rec.is_finite() {
        return Err(Error::NonFinite("recommendation loss".into()));
    }
    let sem = if aux.is_some() { sem_sum / batch_len } else { 0.0 };
    if !sem.is_finite() {
        return Err(Error::NonFinite("semantic loss".into()));
    }

    // Batch-level alignment over the surviving rows.
    let mut align = 0.0;
    let mut d_align_ex: Option<Mat> = None;
    let mut d_align_im: Option<Mat> = None;
    let mut d_align_e: Option<Mat> = None;
    if aux.is_some() && !align_ex_rows.is_empty() {
        let rows = align_ex_rows.len();
        let stack = |rows_vec: &[Vec<f64>]| {
            Mat::from_vec(
                rows_vec.len(),
                rows_vec[0].len(),
                rows_vec.concat(),
            )
            .expect("stacked alignment rows are rectangular")
        };
        let ex = stack(&align_ex_rows);
        let im = stack(&align_im_rows);
        let t = stack(&align_t_rows);
        let e = stack(&align_e_rows);
        let proj = Projection {
            w: &params.proj_w,
            b: &params.proj_b,
        };
        let fwd = alignment_forward(&ex, &im, &t, &e, &proj, &cfg.loss)?;
        align = fwd.loss;
        if !align.is_finite() {
            return Err(Error::NonFinite("alignment loss".into()));
        }
        if w_a != 0.0 {
            let mut d_ex = Mat::zeros(rows, cfg.d_t);
            let mut d_im = Mat::zeros(rows, cfg.d);
            let mut d_e = Mat::zeros(rows, cfg.d);
            alignment_backward(
                &fwd,
                &ex,
                &im,
                &t,
                &e,
                &proj,
                &cfg.loss,
                w_a,
                &mut d_ex,
                &mut d_im,
                &mut d_e,
                &mut grads.proj_w,
                &mut grads.proj_b,
            )?;
            d_align_ex = Some(d_ex);
            d_align_im = Some(d_im);
            d_align_e = Some(d_e);
        }
    }

    // Backward sweep per example with every upstream contribution known.
    let mut d_h_prime = vec![0.0; cfg.d];
    let mut d_e_tar = vec![0.0; cfg.d];
    let mut d_h_ex = vec![0.0; cfg.d_t];
    for cache in &caches {
        let example = cache.example;
        let e_tar = params.item_emb.row(example.target);

        d_h_prime.fill(0.0);
        d_e_tar.fill(0.0);
        score_items_backward(
            &cache.d_logits,
            &cache.tgt.output,
            &params.item_emb,
            &mut d_h_prime,
            &mut grads.item_emb,
        );
        if let (Some(row), Some(d_im)) = (cache.alignment_row, d_align_im.as_ref()) {
            axpy(1.0, d_im.row(row), &mut d_h_prime);
        }
        if let (Some(row), Some(d_e)) = (cache.alignment_row, d_align_e.as_ref()) {
            axpy(1.0, d_e.row(row), &mut d_e_tar);
        }

        let mut d_interests = Mat::zeros(cfg.m_im, cfg.d);
        target_attention_backward(
            &cache.tgt,
            e_tar,
            &cache.mi.interests,
            &d_h_prime,
            &mut d_interests,
            &mut d_e_tar,
        );
        axpy(1.0, &d_e_tar, grads.item_emb.row_mut(example.target));
        mi_extract_backward(
            &cache.mi,
            &params.extractor_w1,
            &params.extractor_w2,
            &d_interests,
            &mut grads.item_emb,
            &mut grads.pos_emb,
            &mut grads.extractor_w1,
            &mut grads.extractor_w2,
        );

        if let (Some(sem_cache), Some(inputs)) = (&cache.semantic, aux) {
            let set = inputs.per_user[example.user].as_ref();
            d_h_ex.fill(0.0);
            semantic_scores_backward(&sem_cache.d_score_logits, &inputs.item_text, &mut d_h_ex);
            if let (Some(row), Some(d_ex)) = (cache.alignment_row, d_align_ex.as_ref()) {
                axpy(1.0, d_ex.row(row), &mut d_h_ex);
            }
            let t_tar = inputs.item_text.row(example.target);
            let mut d_stack = Mat::zeros(cfg.m_ex, cfg.d_t);
            semantic_target_attention_backward(
                &sem_cache.tgt_attn,
                t_tar,
                &sem_cache.self_attn.output,
                &d_h_ex,
                &mut d_stack,
            );
            let mut sinks = SelfAttentionGrads {
                w_q: &mut grads.sem_wq,
                w_k: &mut grads.sem_wk,
                w_v: &mut grads.sem_wv,
                b_q: &mut grads.sem_bq,
                b_k: &mut grads.sem_bk,
                b_v: &mut grads.sem_bv,
            };
            semantic_self_attention_backward(&sem_cache.self_attn, set, &d_stack, &mut sinks);
        }
    }

    let values = LossValues {
        rec,
        semantic: sem,
        alignment: align,
        total: total_loss(rec, sem, align, cfg.loss.gamma),
    };
    Ok((values, grads))
}

/// Adaptive-moment optimizer state (first/second moments per array).
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    lr: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let m = params.arrays().iter().map(|(_, d, _)| vec![0.0; d.len()]).collect();
        let v = params.arrays().iter().map(|(_, d, _)| vec![0.0; d.len()]).collect();
        Adam { m, v, t: 0, lr }
    }

    /// One in-place update from accumulated gradients.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let grad_arrays = grads.arrays();
        for (idx, (_, data)) in params.arrays_mut().into_iter().enumerate() {
            let g = grad_arrays[idx].1;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..data.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// A trained model frozen to its serialized precision.
///
/// Arrays are stored as f32 in canonical order; turning a checkpoint back
/// into parameters widens losslessly, so any evaluation gives the same
/// answer before and after a save/load round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub n_items: usize,
    arrays: Vec<(String, [usize; 2], Vec<f32>)>,
}

#[derive(Serialize, Deserialize)]
struct ManifestArray {
    name: String,
    shape: [usize; 2],
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    step: usize,
    n_items: usize,
    config: TrainConfig,
    arrays: Vec<ManifestArray>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, cfg: &TrainConfig, step: usize) -> Self {
        let arrays = params
            .arrays()
            .iter()
            .map(|(name, data, shape)| {
                (
                    name.to_string(),
                    *shape,
                    data.iter().map(|&v| v as f32).collect(),
                )
            })
            .collect();
        Checkpoint {
            config: cfg.clone(),
            step,
            n_items: params.item_emb.rows(),
            arrays,
        }
    }

    /// Widens the stored f32 arrays back into a parameter struct.
    pub fn to_params(&self) -> Result<ModelParams> {
        let mut params = ModelParams::zeros(&self.config, self.n_items);
        for (name, data) in params.arrays_mut() {
            let stored = self
                .arrays
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Corrupt {
                    path: String::new(),
                    msg: format!("checkpoint is missing array {name}"),
                })?;
            if stored.2.len() != data.len() {
                return Err(Error::Corrupt {
                    path: String::new(),
                    msg: format!(
                        "array {name} has {} values, expected {}",
                        stored.2.len(),
                        data.len()
                    ),
                });
            }
            for (slot, &v) in data.iter_mut().zip(&stored.2) {
                *slot = f64::from(v);
            }
        }
        Ok(params)
    }

    pub fn array(&self, name: &str) -> Option<&[f32]> {
        self.arrays.iter().find(|(n, _, _)| n == name).map(|(_, _, d)| d.as_slice())
    }

    /// Writes `manifest.json` plus `params.bin` (little-endian f32, in
    /// manifest order) into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let manifest = Manifest {
            step: self.step,
            n_items: self.n_items,
            config: self.config.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, shape, _)| ManifestArray {
                    name: name.clone(),
                    shape: *shape,
                    dtype: "f32".to_string(),
                })
                .collect(),
        };
        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Config(format!("unencodable manifest: {e}")))?;
        fs::write(&manifest_path, text.as_bytes())
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        let mut blob = Vec::new();
        for (_, _, data) in &self.arrays {
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin_path = dir.join("params.bin");
        fs::write(&bin_path, blob).map_err(|e| Error::io(bin_path.display().to_string(), e))
    }

    /// Loads a checkpoint written by [`Checkpoint::save`].
    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: manifest_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let bin_path = dir.join("params.bin");
        let blob = fs::read(&bin_path).map_err(|e| Error::io(bin_path.display().to_string(), e))?;
        let expected: usize = manifest.arrays.iter().map(|a| a.shape[0] * a.shape[1] * 4).sum();
        if blob.len() != expected {
            return Err(Error::Corrupt {
                path: bin_path.display().to_string(),
                msg: format!("expected {expected} bytes of parameters, found {}", blob.len()),
            });
        }
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        let mut offset = 0;
        for entry in &manifest.arrays {
            if entry.dtype != "f32" {
                return Err(Error::Corrupt {
                    path: bin_path.display().to_string(),
                    msg: format!("array {} has unsupported dtype {}", entry.name, entry.dtype),
                });
            }
            let count = entry.shape[0] * entry.shape[1];
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                let bytes: [u8; 4] = blob[offset..offset + 4].try_into().expect("length checked");
                data.push(f32::from_le_bytes(bytes));
                offset += 4;
            }
            arrays.push((entry.name.clone(), entry.shape, data));
        }
        Ok(Checkpoint {
            config: manifest.config,
            step: manifest.step,
            n_items: manifest.n_items,
            arrays,
        })
    }
}

/// Final state of a training run.
#[derive(Debug)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    /// Loss components per optimization step.
    pub losses: Vec<LossValues>,
}

/// Recall@k of the current parameters over held-out users; used for the
/// periodic validation log line.
fn validation_recall(params: &ModelParams, users: &[UserSequence], k: usize) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for user in users {
        let Ok((profile, targets)) = crate::dataset::profile_target_split(user) else {
            continue;
        };
        if targets.is_empty() {
            continue;
        }
        let Ok(mi) = mi_extract(
            profile,
            &params.item_emb,
            &params.pos_emb,
            &params.extractor_w1,
            &params.extractor_w2,
        ) else {
            continue;
        };
        let n = params.item_emb.rows();
        let mut scores: Vec<(usize, f64)> = (0..n)
            .filter(|item| !profile.contains(item))
            .map(|item| {
                let best = (0..mi.interests.rows())
                    .map(|m| dot(mi.interests.row(m), params.item_emb.row(item)))
                    .fold(f64::NEG_INFINITY, f64::max);
                (item, best)
            })
            .collect();
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        let top: Vec<usize> = scores.iter().take(k).map(|(i, _)| *i).collect();
        let hits = targets.iter().filter(|t| top.contains(t)).count();
        total += hits as f64 / targets.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Runs the training loop and returns the final checkpoint.
///
/// Batches are drawn from seeded epoch shuffles (the shuffle stream is
/// independent of initialization so both are reproducible in isolation).
/// Every 500 steps the current Recall@20 on the validation users is logged.
pub fn train(
    split: &SplitDataset,
    n_items: usize,
    semantic: Option<&SemanticInputs>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if cfg.loss.gamma > 0.0 && semantic.is_none() {
        return Err(Error::Config(
            "gamma > 0 requires semantic interests; train the ablation with gamma = 0".into(),
        ));
    }
    let examples = make_training_examples(&split.train, cfg.l_max);
    if examples.is_empty() {
        return Err(Error::InvalidInput("no training examples after splitting".into()));
    }
    let mut params = init_params(cfg, n_items);
    let mut adam = Adam::new(&params, cfg.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a_str("shuffle"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let weights = (1.0, cfg.loss.gamma, cfg.loss.gamma);
    let mut losses = Vec::with_capacity(cfg.max_steps);

    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.max_steps {
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        let (values, grads) = compute_batch(&params, &batch, semantic, cfg, weights)?;
        adam.step(&mut params, &grads);
        losses.push(values);
        if (step + 1) % 500 == 0 {
            let recall = validation_recall(&params, &split.valid, 20);
            log::info!(
                "step {}: loss {:.4} (rec {:.4}, sem {:.4}, align {:.4}), validation recall@20 {:.4}",
                step + 1,
                values.total,
                values.rec,
                values.semantic,
                values.alignment,
                recall
            );
        }
    }
    Ok(TrainResult {
        checkpoint: Checkpoint::from_params(&params, cfg, cfg.max_steps),
        losses,
    })
}

/// Central-difference validation of the analytic gradients.
///
/// Checks the recommendation, semantic, and alignment losses in isolation
/// and jointly, over every parameter array, and returns the worst relative
/// error observed.
pub fn grad_check(
    params: &ModelParams,
    batch: &[TrainingExample],
    semantic: &SemanticInputs,
    cfg: &TrainConfig,
) -> Result<f64> {
    let step = 1e-5;
    let gamma = if cfg.loss.gamma > 0.0 { cfg.loss.gamma } else { 0.1 };
    let weightings = [
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
        (1.0, gamma, gamma),
    ];
    let mut worst = 0.0f64;
    for weights in weightings {
        let (_, grads) = compute_batch(params, batch, Some(semantic), cfg, weights)?;
        let scalar = |p: &ModelParams| -> Result<f64> {
            let (v, _) = compute_batch(p, batch, Some(semantic), cfg, weights)?;
            Ok(weights.0 * v.rec + weights.1 * v.semantic + weights.2 * v.alignment)
        };
        let grad_arrays = grads.arrays();
        for (idx, (name, g, _)) in grad_arrays.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = params.clone();
                plus.arrays_mut()[idx].1[i] += step;
                let mut minus = params.clone();
                minus.arrays_mut()[idx].1[i] -= step;
                let fd = (scalar(&plus)? - scalar(&minus)?) / (2.0 * step);
                let analytic = g[i];
                let rel = (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-3);
                if rel > worst {
                    worst = rel;
                    if rel > 1e-4 {
                        log::warn!("gradient mismatch at {name}[{i}]: analytic {analytic}, fd {fd}");
                    }
                }
            }
        }
    }
    Ok(worst)
}
