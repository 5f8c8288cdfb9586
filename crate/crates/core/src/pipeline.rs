//! Offline pipeline stages and their on-disk artifacts.
//!
//! Each stage reads the artifacts of earlier stages from a workspace
//! directory and writes its own under a fixed name, so stages can run as
//! separate processes. The stages are: prepare (ingest and split), embed
//! (user history embeddings), cluster (group users and pick exemplars),
//! infer (language-model interests for exemplars only), train, and eval.
//! Serving consumes just the checkpoint and catalog through
//! [`crate::retrieval`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apcluster::{build_similarity, run_ap, save_clusters, ApOptions, ClusterResult, ClustersFile};
use crate::dataset::{
    load_dataset, load_split_file, resolve_split, save_dataset, save_split, split_users,
    InteractionDataset, SplitDataset,
};
use crate::error::{Error, Result};
use crate::esim::{
    build_prompt, encode_interests, infer_for_exemplars, load_interests, propagate_to_users,
    save_interests, ExemplarInterestTable, LlmClient, Prompt,
};
use crate::linalg::Mat;
use crate::metrics::{evaluate, save_report, EvalReport};
use crate::retrieval::RetrievalIndex;
use crate::textenc::{load_embeddings, save_embeddings, EmbeddingTable, Provider};
use crate::trainer::{train, Checkpoint, SemanticInputs, TrainConfig, TrainResult};

/// Items per prompt or per history embedding are capped to this many of
/// the most recent interactions to bound prompt sizes.
pub const HISTORY_CAP: usize = 50;

/// Fixed artifact locations inside a working directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    pub fn split_path(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn clusters_path(&self) -> PathBuf {
        self.root.join("clusters.json")
    }

    pub fn interests_path(&self) -> PathBuf {
        self.root.join("interests.json")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoint")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

/// Settings shared across pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// Seed of the built-in text encoder.
    pub text_seed: u64,
    /// Retries for interest inference before falling back.
    pub retries: u32,
    /// Concurrent language-model completions during inference.
    pub max_in_flight: usize,
    /// Evaluation cutoffs.
    pub ks: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            text_seed: 42,
            retries: crate::esim::DEFAULT_RETRIES,
            max_in_flight: crate::esim::DEFAULT_MAX_IN_FLIGHT,
            ks: vec![10, 20],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0) {
            return Err(Error::Config("ks must list positive cutoffs".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }

    fn provider(&self) -> Provider {
        Provider::builtin(self.text_seed, self.train.d_t)
    }
}

/// Counts produced by the prepare stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareSummary {
    pub n_items: usize,
    pub n_users: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

/// Ingests the raw interaction and catalog files, then writes the
/// normalized dataset and the user split.
pub fn run_prepare(
    interactions: &Path,
    catalog: &Path,
    ws: &Workspace,
    seed: u64,
) -> Result<PrepareSummary> {
    let dataset = crate::dataset::load_interactions(interactions, catalog)?;
    std::fs::create_dir_all(ws.root()).map_err(|e| Error::io(ws.root().display().to_string(), e))?;
    save_dataset(&dataset, &ws.dataset_path())?;
    let split = split_users(&dataset, seed);
    save_split(&split, &ws.split_path())?;
    Ok(PrepareSummary {
        n_items: dataset.catalog.len(),
        n_users: dataset.users.len(),
        n_train: split.train.len(),
        n_valid: split.valid.len(),
        n_test: split.test.len(),
    })
}

fn load_prepared(ws: &Workspace) -> Result<(InteractionDataset, SplitDataset)> {
    let dataset = load_dataset(&ws.dataset_path())?;
    let split_file = load_split_file(&ws.split_path())?;
    let split = resolve_split(&dataset, &split_file)?;
    Ok((dataset, split))
}

/// Recent item names of one user, newest last.
fn history_names<'a>(
    dataset: &'a InteractionDataset,
    items: &[usize],
) -> Vec<&'a str> {
    let start = items.len().saturating_sub(HISTORY_CAP);
    items[start..]
        .iter()
        .map(|&item| dataset.catalog.name(item))
        .collect()
}

/// Embeds every training user's recent history and writes the table.
///
/// Keys are user ids in training-list order, which later stages rely on:
/// row `i` of the similarity matrix is training user `i`.
pub fn run_embed(ws: &Workspace, cfg: &PipelineConfig) -> Result<usize> {
    let (dataset, split) = load_prepared(ws)?;
    let provider = cfg.provider();
    let mut entries = Vec::with_capacity(split.train.len());
    for user in &split.train {
        let names = history_names(&dataset, &user.items);
        let emb = provider.encode_sequence(&names)?;
        entries.push((user.user_id.clone(), emb));
    }
    let table = EmbeddingTable::new(cfg.train.d_t, entries)?;
    save_embeddings(&table, &ws.embeddings_dir())?;
    Ok(table.len())
}

/// Clusters the training users by embedding distance and writes the
/// exemplar assignment.
pub fn run_cluster(ws: &Workspace, cfg: &PipelineConfig) -> Result<ClusterResult> {
    let table = load_embeddings(&ws.embeddings_dir())?;
    let points: Vec<Vec<f64>> = (0..table.len()).map(|i| table.by_index(i).to_f64()).collect();
    let sim = build_similarity(&points, cfg.train.preference)?;
    let opts = ApOptions {
        damping: cfg.train.damping,
        ..ApOptions::default()
    };
    let result = run_ap(&sim, &opts)?;
    if !result.converged {
        log::warn!(
            "clustering did not converge in {} iterations; using the final state",
            result.iterations
        );
    }
    save_clusters(&ClustersFile::from_result(&result, cfg.train.preference), &ws.clusters_path())?;
    Ok(result)
}

/// Raw ids become numeric prompt ids when they parse; otherwise the dense
/// index stands in, so prompts are well formed for any catalog.
fn prompt_ids(dataset: &InteractionDataset, items: &[usize]) -> Vec<u64> {
    let start = items.len().saturating_sub(HISTORY_CAP);
    items[start..]
        .iter()
        .map(|&item| {
            dataset
                .catalog
                .raw_id(item)
                .parse::<u64>()
                .unwrap_or(item as u64)
        })
        .collect()
}

/// Builds the interest prompt for one training user.
pub fn prompt_for_user(dataset: &InteractionDataset, items: &[usize]) -> Result<Prompt> {
    build_prompt(&history_names(dataset, items), &prompt_ids(dataset, items))
}

/// Queries the language model for every exemplar's interests and writes
/// them, keyed by training-list index.
pub fn run_infer(
    ws: &Workspace,
    client: &dyn LlmClient,
    cfg: &PipelineConfig,
) -> Result<BTreeMap<usize, Vec<String>>> {
    let (dataset, split) = load_prepared(ws)?;
    let clusters = crate::apcluster::load_clusters(&ws.clusters_path())?.to_result()?;
    let mut prompts = Vec::with_capacity(clusters.exemplars.len());
    for &exemplar in &clusters.exemplars {
        let user = split.train.get(exemplar).ok_or_else(|| {
            Error::InvalidInput(format!(
                "cluster exemplar {exemplar} is out of range for {} training users",
                split.train.len()
            ))
        })?;
        prompts.push((exemplar, prompt_for_user(&dataset, &user.items)?));
    }
    let inferred = infer_for_exemplars(
        client,
        &prompts,
        cfg.train.m_ex,
        cfg.retries,
        cfg.max_in_flight,
    )?;
    let interests: BTreeMap<usize, Vec<String>> = inferred.into_iter().collect();
    save_interests(&ws.interests_path(), &interests)?;
    Ok(interests)
}

/// Encodes per-item name embeddings, one row per catalog entry.
pub fn encode_item_text(dataset: &InteractionDataset, provider: &Provider) -> Result<Mat> {
    let n = dataset.catalog.len();
    let mut item_text = Mat::zeros(n, provider.dim());
    for i in 0..n {
        let emb = provider.encode_text(dataset.catalog.name(i))?;
        item_text.row_mut(i).copy_from_slice(&emb.to_f64());
    }
    Ok(item_text)
}

/// Loads cluster assignments and exemplar interests, encodes them, and
/// spreads each exemplar's interests to its cluster members.
pub fn build_semantic_inputs(
    ws: &Workspace,
    dataset: &InteractionDataset,
    cfg: &PipelineConfig,
) -> Result<SemanticInputs> {
    let provider = cfg.provider();
    let clusters = crate::apcluster::load_clusters(&ws.clusters_path())?.to_result()?;
    let interests = load_interests(&ws.interests_path())?;
    let mut table = ExemplarInterestTable::new();
    for (exemplar, texts) in &interests {
        let set = encode_interests(texts, &provider, cfg.train.m_ex)?;
        table.insert(*exemplar, set);
    }
    let per_user = propagate_to_users(&clusters, &table)?;
    let item_text = encode_item_text(dataset, &provider)?;
    Ok(SemanticInputs { per_user, item_text })
}

/// Trains the model and writes the checkpoint. With `gamma` at zero the
/// semantic artifacts are not read at all.
pub fn run_train(ws: &Workspace, cfg: &PipelineConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let (dataset, split) = load_prepared(ws)?;
    let semantic = if cfg.train.loss.gamma > 0.0 {
        Some(build_semantic_inputs(ws, &dataset, cfg)?)
    } else {
        None
    };
    let result = train(&split, dataset.catalog.len(), semantic.as_ref(), &cfg.train)?;
    result.checkpoint.save(&ws.checkpoint_dir())?;
    Ok(result)
}

/// Builds the retrieval index from the stored checkpoint and catalog.
pub fn load_index(ws: &Workspace) -> Result<RetrievalIndex> {
    let dataset = load_dataset(&ws.dataset_path())?;
    let checkpoint = Checkpoint::load(&ws.checkpoint_dir())?;
    RetrievalIndex::new(&checkpoint, dataset.catalog)
}

/// Evaluates the stored checkpoint on the held-out test users and writes
/// the report.
pub fn run_eval(ws: &Workspace, cfg: &PipelineConfig) -> Result<EvalReport> {
    let (_, split) = load_prepared(ws)?;
    let index = load_index(ws)?;
    let report = evaluate(&index, &split.test, &cfg.ks)?;
    save_report(&report, &ws.report_path())?;
    Ok(report)
}

/// Runs every offline stage in order and returns the final report.
pub fn run_all(
    interactions: &Path,
    catalog: &Path,
    ws: &Workspace,
    cfg: &PipelineConfig,
    client: &dyn LlmClient,
) -> Result<EvalReport> {
    run_prepare(interactions, catalog, ws, cfg.train.seed)?;
    run_embed(ws, cfg)?;
    run_cluster(ws, cfg)?;
    if cfg.train.loss.gamma > 0.0 {
        run_infer(ws, client, cfg)?;
    }
    run_train(ws, cfg)?;
    run_eval(ws, cfg)
}
