//! Synthetic interaction data with known topical structure.
//!
//! Items belong to topics whose names carry the topic word, and each user
//! samples from a two-topic mixture plus uniform noise. Because the topic
//! is readable from the item name, the text side of the model has real
//! signal to contribute, which makes the generator suitable for measuring
//! the value of the auxiliary objectives as well as for end-to-end tests.
//!
//! Sequences never repeat an item: each user draws without replacement.
//! Held-out items therefore never appear in the observed prefix, so a
//! model cannot score well by replaying the history and evaluation
//! measures actual ranking structure.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{InteractionDataset, ItemCatalog, UserSequence};
use crate::error::{Error, Result};

/// Topic vocabulary; each topic word appears in its items' names.
pub const TOPIC_WORDS: [&str; 8] = [
    "garden", "guitar", "coffee", "yoga", "camera", "novel", "skincare", "cycling",
];

/// Shape of the generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Number of topics, at most [`TOPIC_WORDS`] entries.
    pub n_topics: usize,
    /// Inclusive bounds on sequence length.
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that an interaction ignores the user's topic mixture.
    pub noise: f64,
    /// Within-topic popularity skew. Item number `r` of its topic is drawn
    /// with weight `1 / (r + 1)^popularity_exponent`, so 0 is uniform and
    /// larger values leave a long tail of rarely seen items.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            n_items: 300,
            n_topics: 8,
            min_len: 10,
            max_len: 18,
            noise: 0.1,
            popularity_exponent: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_topics == 0 || self.n_topics > TOPIC_WORDS.len() {
            return Err(Error::Config(format!(
                "n_topics must be in 1..={}, got {}",
                TOPIC_WORDS.len(),
                self.n_topics
            )));
        }
        if self.n_items < self.n_topics {
            return Err(Error::Config(format!(
                "need at least one item per topic: {} items, {} topics",
                self.n_items, self.n_topics
            )));
        }
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be positive".into()));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "sequence length bounds must satisfy 2 <= min <= max, got {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.max_len > self.n_items {
            return Err(Error::Config(format!(
                "sequences draw items without replacement, so max_len must not \
                 exceed n_items: got {} > {}",
                self.max_len, self.n_items
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise must be a probability, got {}",
                self.noise
            )));
        }
        if !self.popularity_exponent.is_finite() || self.popularity_exponent < 0.0 {
            return Err(Error::Config(format!(
                "popularity_exponent must be a non-negative number, got {}",
                self.popularity_exponent
            )));
        }
        Ok(())
    }
}

/// Topic of a generated item, by construction of the catalog.
pub fn item_topic(dense: usize, n_topics: usize) -> usize {
    dense % n_topics
}

/// Generates the catalog and user sequences for `cfg`.
///
/// Item `i` belongs to topic `i % n_topics` and is named
/// "{topic} item {i}". Each user draws two distinct topics and a mixture
/// weight in (0.3, 0.7); every interaction comes from the mixture except
/// for a `noise` fraction drawn from the whole catalog with the same
/// per-item popularity weights (uniform at exponent zero). Within a
/// topic, items follow the configured popularity skew. Draws are
/// without replacement: a topic draw falls back to the other topic once
/// its pool is spent, then to the remaining catalog. Timestamps are the
/// position within the sequence.
pub fn generate(cfg: &SynthConfig) -> Result<InteractionDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let raw_ids: Vec<String> = (0..cfg.n_items).map(|i| format!("{}", 1000 + i)).collect();
    let names: Vec<String> = (0..cfg.n_items)
        .map(|i| format!("{} item {i}", TOPIC_WORDS[item_topic(i, cfg.n_topics)]))
        .collect();
    let catalog = ItemCatalog::new(raw_ids, names)?;

    // Items grouped by topic for mixture draws, with a popularity weight
    // per item: item number r of its topic carries 1 / (r + 1)^exponent.
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_topics];
    let mut base_weight = vec![0.0; cfg.n_items];
    for item in 0..cfg.n_items {
        let pool = &mut by_topic[item_topic(item, cfg.n_topics)];
        base_weight[item] = 1.0 / ((pool.len() + 1) as f64).powf(cfg.popularity_exponent);
        pool.push(item);
    }

    let mut users = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let topic_a = rng.gen_range(0..cfg.n_topics);
        let mut topic_b = rng.gen_range(0..cfg.n_topics - 1);
        if topic_b >= topic_a {
            topic_b += 1;
        }
        let weight_a = rng.gen_range(0.3..0.7);
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut used = vec![false; cfg.n_items];
        let mut items = Vec::with_capacity(len);

        // Weighted draw among the unused items of one pool, if any remain.
        let draw = |pool: &[usize], used: &[bool], rng: &mut ChaCha8Rng| {
            let open: Vec<usize> = pool.iter().copied().filter(|&i| !used[i]).collect();
            if open.is_empty() {
                return None;
            }
            let dist = WeightedIndex::new(open.iter().map(|&i| base_weight[i]))
                .expect("weights are positive");
            Some(open[dist.sample(rng)])
        };

        let all: Vec<usize> = (0..cfg.n_items).collect();
        for _ in 0..len {
            let item = if rng.gen_bool(cfg.noise) {
                draw(&all, &used, &mut rng)
            } else {
                let first = if rng.gen_bool(weight_a) { topic_a } else { topic_b };
                let second = topic_a + topic_b - first;
                draw(&by_topic[first], &used, &mut rng)
                    .or_else(|| draw(&by_topic[second], &used, &mut rng))
                    .or_else(|| draw(&all, &used, &mut rng))
            }
            .expect("max_len <= n_items keeps the catalog from running out");
            used[item] = true;
            items.push(item);
        }
        let timestamps = (0..len as i64).collect();
        users.push(UserSequence {
            user_id: format!("user{u}"),
            items,
            timestamps: Some(timestamps),
        });
    }
    Ok(InteractionDataset { catalog, users })
}

/// Writes the dataset in the raw on-disk format (catalog.jsonl plus
/// interactions.tsv) that the ingestion step consumes.
pub fn write_raw(dataset: &InteractionDataset, dir: &std::path::Path) -> Result<()> {
    let catalog: Vec<(String, String)> = (0..dataset.catalog.len())
        .map(|i| {
            (
                dataset.catalog.raw_id(i).to_string(),
                dataset.catalog.name(i).to_string(),
            )
        })
        .collect();
    let mut interactions = Vec::new();
    for user in &dataset.users {
        for (pos, &item) in user.items.iter().enumerate() {
            let ts = user
                .timestamps
                .as_ref()
                .map(|t| t[pos])
                .unwrap_or(pos as i64);
            interactions.push((
                user.user_id.clone(),
                dataset.catalog.raw_id(item).to_string(),
                ts,
            ));
        }
    }
    crate::dataset::save_raw_files(dir, &catalog, &interactions)
}
