//! Affinity propagation over sequence embeddings.
//!
//! Similarity is negative squared Euclidean distance with a constant
//! preference on the diagonal; exemplars emerge from damped responsibility
//! and availability message passing. The preference controls cluster count:
//! lower values yield fewer exemplars.
//!
//! The availability update sums max{0, r(k,j)} in ascending k, skipping
//! {i, j}, exactly as written in the update equation. Reformulating it as a
//! precomputed column sum minus own terms would change the floating-point
//! result, and downstream tests require bit-equality with a direct
//! transcription of the equations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Pairwise similarities: s(i,j) = −‖x_i − x_j‖² off the diagonal, s(i,i)
/// = preference.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    s: Mat,
    preference: f64,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.s.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s.get(i, j)
    }

    pub fn preference(&self) -> f64 {
        self.preference
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.s.row(i)
    }
}

/// Responsibility and availability messages.
#[derive(Debug, Clone)]
pub struct MessageState {
    pub r: Mat,
    pub a: Mat,
    pub iteration: usize,
}

impl MessageState {
    pub fn zeros(n: usize) -> Self {
        MessageState {
            r: Mat::zeros(n, n),
            a: Mat::zeros(n, n),
            iteration: 0,
        }
    }
}

/// Clustering outcome. `assignment[i]` is the exemplar index member `i`
/// belongs to; exemplars map to themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub exemplars: Vec<usize>,
    pub assignment: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl ClusterResult {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }
}

/// Message-passing knobs. Damping under 0.5 tends to oscillate on
/// symmetric inputs; 0.5 is the standard default.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ApOptions {
    pub damping: f64,
    pub max_iter: usize,
    pub conv_window: usize,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            damping: 0.5,
            max_iter: 200,
            conv_window: 15,
        }
    }
}

impl ApOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!(
                "damping must satisfy 0 <= damping < 1, got {}",
                self.damping
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.conv_window == 0 {
            return Err(Error::Config("conv_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Builds the similarity matrix from points of equal dimension.
pub fn build_similarity(points: &[Vec<f64>], preference: f64) -> Result<SimilarityMatrix> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidInput("no points to cluster".into()));
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Shape(format!(
                "point {i} has dimension {}, expected {dim}",
                p.len()
            )));
        }
    }
    let mut s = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                s.set(i, j, preference);
            } else {
                let mut d2 = 0.0;
                for (xi, xj) in points[i].iter().zip(&points[j]) {
                    d2 += (xi - xj) * (xi - xj);
                }
                s.set(i, j, -d2);
            }
        }
    }
    Ok(SimilarityMatrix { s, preference })
}

/// One damped responsibility update:
/// r(i,j) ← λ·r(i,j) + (1−λ)·[s(i,j) − max_{k≠j}(a(i,k)+s(i,k))].
///
/// The max over k≠j is served from the row's two largest values of
/// a(i,·)+s(i,·); a max over any subset of the same floats is exact, so
/// this matches the per-pair recomputation bit for bit.
pub fn update_responsibility(sim: &SimilarityMatrix, a: &Mat, r: &mut Mat, damping: f64) {
    let n = sim.n();
    let r_rows: Vec<&mut [f64]> = r.data_mut().chunks_mut(n).collect();
    r_rows.into_par_iter().enumerate().for_each(|(i, r_row)| {
        let a_row = a.row(i);
        let s_row = sim.row(i);
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0usize;
        let mut second = f64::NEG_INFINITY;
        for k in 0..n {
            let v = a_row[k] + s_row[k];
            if v > best {
                second = best;
                best = v;
                best_idx = k;
            } else if v > second {
                second = v;
            }
        }
        for j in 0..n {
            let alt = if j == best_idx { second } else { best };
            let raw = s_row[j] - alt;
            r_row[j] = damping * r_row[j] + (1.0 - damping) * raw;
        }
    });
}

/// One damped availability update:
/// a(i,j) ← λ·a(i,j) + (1−λ)·min{0, r(j,j) + Σ_{k∉{i,j}} max{0, r(k,j)}}
/// for i≠j, and a(j,j) ← λ·a(j,j) + (1−λ)·Σ_{k≠j} max{0, r(k,j)}.
pub fn update_availability(r: &Mat, a: &mut Mat, damping: f64) {
    let n = r.rows();
    // Column-parallel: each column's new values land in a scratch vector,
    // then one serial pass applies the damped blend.
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut clipped = vec![0.0; n];
            for k in 0..n {
                clipped[k] = r.get(k, j).max(0.0);
            }
            let r_jj = r.get(j, j);
            let mut col = vec![0.0; n];
            for i in 0..n {
                if i == j {
                    let mut sum = 0.0;
                    for (k, &c) in clipped.iter().enumerate() {
                        if k != j {
                            sum += c;
                        }
                    }
                    col[i] = sum;
                } else {
                    let mut sum = 0.0;
                    for (k, &c) in clipped.iter().enumerate() {
                        if k != i && k != j {
                            sum += c;
                        }
                    }
                    col[i] = (r_jj + sum).min(0.0);
                }
            }
            col
        })
        .collect();
    for (j, col) in columns.iter().enumerate() {
        for i in 0..n {
            let old = a.get(i, j);
            a.set(i, j, damping * old + (1.0 - damping) * col[i]);
        }
    }
}

fn exemplars_of(state: &MessageState) -> Vec<usize> {
    (0..state.r.rows())
        .filter(|&i| state.r.get(i, i) + state.a.get(i, i) > 0.0)
        .collect()
}

/// Runs damped message passing to convergence or `max_iter`.
pub fn run_ap(sim: &SimilarityMatrix, opts: &ApOptions) -> Result<ClusterResult> {
    opts.validate()?;
    let n = sim.n();
    if n == 1 {
        return Ok(ClusterResult {
            exemplars: vec![0],
            assignment: vec![0],
            converged: true,
            iterations: 0,
        });
    }

    let mut state = MessageState::zeros(n);
    let mut prev: Option<Vec<usize>> = None;
    let mut stable = 0usize;
    let mut converged = false;

    for it in 1..=opts.max_iter {
        update_responsibility(sim, &state.a, &mut state.r, opts.damping);
        update_availability(&state.r, &mut state.a, opts.damping);
        state.iteration = it;
        if !state.r.is_finite() || !state.a.is_finite() {
            return Err(Error::NonFinite(format!("ap messages at iteration {it}")));
        }
        let exemplars = exemplars_of(&state);
        if prev.as_ref() == Some(&exemplars) {
            stable += 1;
        } else {
            stable = 0;
        }
        prev = Some(exemplars);
        if stable >= opts.conv_window {
            converged = true;
            break;
        }
    }

    let mut exemplars = prev.unwrap_or_default();
    if exemplars.is_empty() {
        let mut best = 0;
        for i in 1..n {
            let score = state.r.get(i, i) + state.a.get(i, i);
            if score > state.r.get(best, best) + state.a.get(best, best) {
                best = i;
            }
        }
        exemplars = vec![best];
    }

    let assignment = assign_members(sim, &exemplars)?;
    Ok(ClusterResult {
        exemplars,
        assignment,
        converged,
        iterations: state.iteration,
    })
}

/// Assigns each member to its highest-similarity exemplar; exemplars map
/// to themselves; ties go to the lowest exemplar index.
pub fn assign_members(sim: &SimilarityMatrix, exemplars: &[usize]) -> Result<Vec<usize>> {
    if exemplars.is_empty() {
        return Err(Error::InvalidInput("empty exemplar list".into()));
    }
    let n = sim.n();
    let mut assignment = vec![0usize; n];
    for i in 0..n {
        if exemplars.contains(&i) {
            assignment[i] = i;
            continue;
        }
        let mut best = exemplars[0];
        for &e in &exemplars[1..] {
            if sim.get(i, e) > sim.get(i, best) {
                best = e;
            }
        }
        assignment[i] = best;
    }
    Ok(assignment)
}

/// Member closest to the coordinate-wise mean; ties go to the lowest index.
pub fn typical_sample(member_embs: &[Vec<f64>]) -> Result<usize> {
    if member_embs.is_empty() {
        return Err(Error::InvalidInput("no members".into()));
    }
    let dim = member_embs[0].len();
    let mut mean = vec![0.0; dim];
    for emb in member_embs {
        for (m, v) in mean.iter_mut().zip(emb) {
            *m += v;
        }
    }
    let n = member_embs.len() as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (i, emb) in member_embs.iter().enumerate() {
        let d2: f64 = emb.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum();
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    Ok(best)
}

// ── Artifact io ──────────────────────────────────────────────────────────

/// Serialized clustering artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClustersFile {
    pub preference: f64,
    pub exemplars: Vec<usize>,
    /// Member index (as string, JSON object keys) → exemplar index.
    pub assignment: std::collections::BTreeMap<String, usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl ClustersFile {
    pub fn from_result(result: &ClusterResult, preference: f64) -> Self {
        ClustersFile {
            preference,
            exemplars: result.exemplars.clone(),
            assignment: result
                .assignment
                .iter()
                .enumerate()
                .map(|(i, &e)| (i.to_string(), e))
                .collect(),
            converged: result.converged,
            iterations: result.iterations,
        }
    }

    pub fn to_result(&self) -> Result<ClusterResult> {
        let n = self.assignment.len();
        let mut assignment = vec![usize::MAX; n];
        for (key, &e) in &self.assignment {
            let i: usize = key
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad member key {key}")))?;
            if i >= n {
                return Err(Error::InvalidInput(format!(
                    "member key {i} out of range for {n} members"
                )));
            }
            assignment[i] = e;
        }
        if assignment.iter().any(|&e| e == usize::MAX) {
            return Err(Error::InvalidInput("missing member keys".into()));
        }
        Ok(ClusterResult {
            exemplars: self.exemplars.clone(),
            assignment,
            converged: self.converged,
            iterations: self.iterations,
        })
    }
}

pub fn save_clusters(file: &ClustersFile, path: &std::path::Path) -> Result<()> {
    let json = serde_json::to_string_pretty(file)
        .map_err(|e| Error::InvalidInput(format!("clusters serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_clusters(path: &std::path::Path) -> Result<ClustersFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}
