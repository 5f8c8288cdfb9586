//! Interaction log ingestion, user splits, and training example assembly.
//!
//! Interactions arrive as `user_id \t item_id \t timestamp` lines (timestamp
//! optional), the item catalog as JSONL `{"id": ..., "name": ...}` records.
//! Items are reindexed densely in catalog order; all downstream code works
//! with dense indices and maps back to raw ids only at the edges.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Item catalog with dense ids assigned in file order.
#[derive(Debug, Clone)]
pub struct ItemCatalog {
    raw_ids: Vec<String>,
    names: Vec<String>,
    by_raw: HashMap<String, usize>,
}

impl ItemCatalog {
    pub fn new(raw_ids: Vec<String>, names: Vec<String>) -> Result<Self> {
        if raw_ids.len() != names.len() {
            return Err(Error::Shape("catalog id/name count mismatch".into()));
        }
        let mut by_raw = HashMap::with_capacity(raw_ids.len());
        for (i, raw) in raw_ids.iter().enumerate() {
            if names[i].is_empty() {
                return Err(Error::InvalidInput(format!("item {raw} has an empty name")));
            }
            if by_raw.insert(raw.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate item id {raw}")));
            }
        }
        Ok(ItemCatalog {
            raw_ids,
            names,
            by_raw,
        })
    }

    pub fn len(&self) -> usize {
        self.raw_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_ids.is_empty()
    }

    pub fn name(&self, dense: usize) -> &str {
        &self.names[dense]
    }

    pub fn raw_id(&self, dense: usize) -> &str {
        &self.raw_ids[dense]
    }

    pub fn dense(&self, raw: &str) -> Option<usize> {
        self.by_raw.get(raw).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One user's interaction history in time order, as dense item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSequence {
    pub user_id: String,
    pub items: Vec<usize>,
    /// Present only when every interaction line carried a timestamp.
    pub timestamps: Option<Vec<i64>>,
}

/// Catalog plus every user's sequence, in first-appearance order.
#[derive(Debug, Clone)]
pub struct InteractionDataset {
    pub catalog: ItemCatalog,
    pub users: Vec<UserSequence>,
}

/// Disjoint train/valid/test user lists produced by [`split_users`].
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<UserSequence>,
    pub valid: Vec<UserSequence>,
    pub test: Vec<UserSequence>,
    pub seed: u64,
}

/// One next-item prediction task: `prefix` observed, `target` comes next.
/// `user` indexes the originating sequence in the train list.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub user: usize,
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// Reads the catalog (JSONL) and interaction log (TSV) into a dataset.
///
/// Lines must have 2 or 3 tab-separated fields; a third field must parse as
/// an integer timestamp. Per user, events are stably sorted by timestamp so
/// that ties and timestamp-free logs keep file order.
pub fn load_interactions(
    interactions_path: &Path,
    catalog_path: &Path,
) -> Result<InteractionDataset> {
    let catalog = load_catalog(catalog_path)?;
    let path_str = interactions_path.display().to_string();
    let file = fs::File::open(interactions_path).map_err(|e| Error::io(&path_str, e))?;

    let mut order: Vec<String> = Vec::new();
    let mut events: HashMap<String, Vec<(usize, Option<i64>)>> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(&path_str, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let (user, raw_item) = (fields[0], fields[1]);
        if user.is_empty() {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: "empty user id".into(),
            });
        }
        let dense = catalog.dense(raw_item).ok_or_else(|| Error::Parse {
            path: path_str.clone(),
            line: lineno,
            msg: format!("item id {raw_item} not in catalog"),
        })?;
        let ts = match fields.get(2) {
            Some(f) => Some(f.parse::<i64>().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: format!("bad timestamp {f}"),
            })?),
            None => None,
        };
        if !events.contains_key(user) {
            order.push(user.to_string());
        }
        events.entry(user.to_string()).or_default().push((dense, ts));
    }

    let users = order
        .into_iter()
        .map(|uid| {
            let mut evs = events.remove(&uid).unwrap();
            evs.sort_by_key(|(_, ts)| ts.unwrap_or(0));
            let all_timestamped = evs.iter().all(|(_, ts)| ts.is_some());
            let items: Vec<usize> = evs.iter().map(|(i, _)| *i).collect();
            let timestamps =
                all_timestamped.then(|| evs.iter().map(|(_, ts)| ts.unwrap()).collect());
            UserSequence {
                user_id: uid,
                items,
                timestamps,
            }
        })
        .collect();

    Ok(InteractionDataset { catalog, users })
}

fn load_catalog(path: &Path) -> Result<ItemCatalog> {
    let path_str = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(&path_str, e))?;
    let mut raw_ids = Vec::new();
    let mut names = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(&path_str, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: format!("bad json: {e}"),
            })?;
        let id = match value.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: lineno,
                    msg: "missing or non-scalar \"id\"".into(),
                })
            }
        };
        let name = match value.get("name") {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: lineno,
                    msg: "missing \"name\"".into(),
                })
            }
        };
        raw_ids.push(id);
        names.push(name);
    }
    ItemCatalog::new(raw_ids, names)
}

/// Splits users 8:1:1 by count under a seeded shuffle; the remainder after
/// two floor(n/10) holdouts stays in train.
pub fn split_users(dataset: &InteractionDataset, seed: u64) -> SplitDataset {
    let n = dataset.users.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);

    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;

    let pick = |range: &[usize]| -> Vec<UserSequence> {
        range.iter().map(|&i| dataset.users[i].clone()).collect()
    };
    SplitDataset {
        train: pick(&idx[..n_train]),
        valid: pick(&idx[n_train..n_train + n_valid]),
        test: pick(&idx[n_train + n_valid..]),
        seed,
    }
}

/// Splits a sequence into a profile (first ceil(0.8 L) items, capped so the
/// target side keeps at least one) and the remaining targets.
pub fn profile_target_split(seq: &UserSequence) -> Result<(&[usize], &[usize])> {
    let len = seq.items.len();
    if len < 2 {
        return Err(Error::InvalidInput(format!(
            "sequence for user {} has length {len}, need at least 2",
            seq.user_id
        )));
    }
    let profile_len = ((4 * len + 4) / 5).min(len - 1).max(1);
    Ok((&seq.items[..profile_len], &seq.items[profile_len..]))
}

/// Expands sequences into next-item examples: one per position `t >= 1`,
/// with the prefix truncated to the last `l_max` items before `t`.
pub fn make_training_examples(users: &[UserSequence], l_max: usize) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for (u, seq) in users.iter().enumerate() {
        for t in 1..seq.items.len() {
            let start = t - t.min(l_max);
            out.push(TrainingExample {
                user: u,
                prefix: seq.items[start..t].to_vec(),
                target: seq.items[t],
            });
        }
    }
    out
}

// ── Artifact io ──────────────────────────────────────────────────────────

const DATASET_MAGIC: &[u8; 8] = b"EIMFDS01";

/// Serialized form of a user split: id lists per part plus the seed.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn from_split(split: &SplitDataset) -> Self {
        let ids = |part: &[UserSequence]| part.iter().map(|u| u.user_id.clone()).collect();
        SplitFile {
            seed: split.seed,
            train: ids(&split.train),
            valid: ids(&split.valid),
            test: ids(&split.test),
        }
    }
}

pub fn save_split(split: &SplitDataset, path: &Path) -> Result<()> {
    let file = SplitFile::from_split(split);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::InvalidInput(format!("split serialization: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_split_file(path: &Path) -> Result<SplitFile> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Rebuilds a [`SplitDataset`] from a dataset and a saved split file.
pub fn resolve_split(dataset: &InteractionDataset, file: &SplitFile) -> Result<SplitDataset> {
    let by_id: HashMap<&str, &UserSequence> = dataset
        .users
        .iter()
        .map(|u| (u.user_id.as_str(), u))
        .collect();
    let resolve = |ids: &[String]| -> Result<Vec<UserSequence>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|u| (*u).clone())
                    .ok_or_else(|| Error::InvalidInput(format!("split user {id} not in dataset")))
            })
            .collect()
    };
    Ok(SplitDataset {
        train: resolve(&file.train)?,
        valid: resolve(&file.valid)?,
        test: resolve(&file.test)?,
        seed: file.seed,
    })
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Writes the dataset as a little-endian binary blob.
pub fn save_dataset(dataset: &InteractionDataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(dataset.catalog.len() as u32).to_le_bytes());
    for i in 0..dataset.catalog.len() {
        write_str(&mut out, dataset.catalog.raw_id(i));
        write_str(&mut out, dataset.catalog.name(i));
    }
    out.extend_from_slice(&(dataset.users.len() as u32).to_le_bytes());
    for user in &dataset.users {
        write_str(&mut out, &user.user_id);
        out.extend_from_slice(&(user.items.len() as u32).to_le_bytes());
        for &item in &user.items {
            out.extend_from_slice(&(item as u32).to_le_bytes());
        }
        match &user.timestamps {
            Some(ts) => {
                out.push(1);
                for t in ts {
                    out.extend_from_slice(&t.to_le_bytes());
                }
            }
            None => out.push(0),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt {
                path: self.path.to_string(),
                msg: "truncated file".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt {
            path: self.path.to_string(),
            msg: "invalid utf-8".into(),
        })
    }
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<InteractionDataset> {
    let path_str = path.display().to_string();
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(&path_str, e))?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        path: &path_str,
    };
    if cur.take(8)? != DATASET_MAGIC {
        return Err(Error::Corrupt {
            path: path_str.clone(),
            msg: "bad magic".into(),
        });
    }
    let n_items = cur.u32()? as usize;
    let mut raw_ids = Vec::with_capacity(n_items);
    let mut names = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        raw_ids.push(cur.string()?);
        names.push(cur.string()?);
    }
    let catalog = ItemCatalog::new(raw_ids, names)?;
    let n_users = cur.u32()? as usize;
    let mut users = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let user_id = cur.string()?;
        let len = cur.u32()? as usize;
        let mut items = Vec::with_capacity(len);
        for _ in 0..len {
            let idx = cur.u32()? as usize;
            if idx >= catalog.len() {
                return Err(Error::Corrupt {
                    path: path_str.clone(),
                    msg: format!("item index {idx} out of range"),
                });
            }
            items.push(idx);
        }
        let has_ts = cur.take(1)?[0] == 1;
        let timestamps = if has_ts {
            let mut ts = Vec::with_capacity(len);
            for _ in 0..len {
                ts.push(cur.i64()?);
            }
            Some(ts)
        } else {
            None
        };
        users.push(UserSequence {
            user_id,
            items,
            timestamps,
        });
    }
    Ok(InteractionDataset { catalog, users })
}

/// Convenience writer: `dir/interactions.tsv` and `dir/catalog.jsonl`.
pub fn save_raw_files(
    dir: &Path,
    catalog: &[(String, String)],
    interactions: &[(String, String, i64)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let cat_path = dir.join("catalog.jsonl");
    let mut cat = Vec::new();
    for (id, name) in catalog {
        let line = serde_json::json!({"id": id, "name": name});
        writeln!(cat, "{line}").unwrap();
    }
    fs::write(&cat_path, cat).map_err(|e| Error::io(cat_path.display().to_string(), e))?;

    let int_path = dir.join("interactions.tsv");
    let mut tsv = Vec::new();
    for (user, item, ts) in interactions {
        writeln!(tsv, "{user}\t{item}\t{ts}").unwrap();
    }
    fs::write(&int_path, tsv).map_err(|e| Error::io(int_path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_temp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn toy_catalog() -> String {
        (0..5)
            .map(|i| format!("{{\"id\": \"i{i}\", \"name\": \"item {i}\"}}\n"))
            .collect()
    }

    #[test]
    fn loads_and_sorts_by_timestamp() {
        let cat = write_temp(&toy_catalog(), ".jsonl");
        let tsv = write_temp("u1\ti2\t30\nu1\ti0\t10\nu1\ti1\t20\n", ".tsv");
        let ds = load_interactions(tsv.path(), cat.path()).unwrap();
        assert_eq!(ds.users.len(), 1);
        assert_eq!(ds.users[0].items, vec![0, 1, 2]);
        assert_eq!(ds.users[0].timestamps, Some(vec![10, 20, 30]));
    }

    #[test]
    fn keeps_file_order_without_timestamps() {
        let cat = write_temp(&toy_catalog(), ".jsonl");
        let tsv = write_temp("u1\ti2\nu1\ti0\nu1\ti2\n", ".tsv");
        let ds = load_interactions(tsv.path(), cat.path()).unwrap();
        assert_eq!(ds.users[0].items, vec![2, 0, 2]);
        assert!(ds.users[0].timestamps.is_none());
    }

    #[test]
    fn ties_keep_file_order() {
        let cat = write_temp(&toy_catalog(), ".jsonl");
        let tsv = write_temp("u1\ti3\t5\nu1\ti1\t5\nu1\ti4\t5\n", ".tsv");
        let ds = load_interactions(tsv.path(), cat.path()).unwrap();
        assert_eq!(ds.users[0].items, vec![3, 1, 4]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let cat = write_temp(&toy_catalog(), ".jsonl");
        let tsv = write_temp("u1\ti0\t1\nu1\n", ".tsv");
        let err = load_interactions(tsv.path(), cat.path()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_item_is_rejected() {
        let cat = write_temp(&toy_catalog(), ".jsonl");
        let tsv = write_temp("u1\tmissing\t1\n", ".tsv");
        let err = load_interactions(tsv.path(), cat.path()).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn bad_timestamp_is_rejected() {
        let cat = write_temp(&toy_catalog(), ".jsonl");
        let tsv = write_temp("u1\ti0\tnot-a-number\n", ".tsv");
        assert!(load_interactions(tsv.path(), cat.path()).is_err());
    }

    fn synthetic_dataset(n_users: usize) -> InteractionDataset {
        let catalog = ItemCatalog::new(
            (0..4).map(|i| format!("i{i}")).collect(),
            (0..4).map(|i| format!("item {i}")).collect(),
        )
        .unwrap();
        let users = (0..n_users)
            .map(|u| UserSequence {
                user_id: format!("u{u}"),
                items: vec![u % 4, (u + 1) % 4, (u + 2) % 4],
                timestamps: None,
            })
            .collect();
        InteractionDataset { catalog, users }
    }

    #[test]
    fn split_counts_follow_8_1_1_with_remainder_to_train() {
        let ds = synthetic_dataset(23);
        let split = split_users(&ds, 42);
        assert_eq!(split.train.len(), 19);
        assert_eq!(split.valid.len(), 2);
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = synthetic_dataset(30);
        let a = split_users(&ds, 7);
        let b = split_users(&ds, 7);
        let ids = |s: &SplitDataset| {
            let mut v: Vec<String> = s
                .train
                .iter()
                .chain(&s.valid)
                .chain(&s.test)
                .map(|u| u.user_id.clone())
                .collect();
            v.sort();
            v
        };
        assert_eq!(
            a.train.iter().map(|u| &u.user_id).collect::<Vec<_>>(),
            b.train.iter().map(|u| &u.user_id).collect::<Vec<_>>()
        );
        let mut all = ids(&a);
        let before = all.len();
        all.dedup();
        assert_eq!(all.len(), before, "duplicate user across splits");
        assert_eq!(before, 30, "user lost by split");
    }

    #[test]
    fn different_seeds_differ() {
        let ds = synthetic_dataset(30);
        let a = split_users(&ds, 1);
        let b = split_users(&ds, 2);
        let ta: Vec<&String> = a.train.iter().map(|u| &u.user_id).collect();
        let tb: Vec<&String> = b.train.iter().map(|u| &u.user_id).collect();
        assert_ne!(ta, tb);
    }

    #[test]
    fn profile_split_examples() {
        let seq = |n: usize| UserSequence {
            user_id: "u".into(),
            items: (0..n).collect(),
            timestamps: None,
        };
        let s10 = seq(10);
        let (p, t) = profile_target_split(&s10).unwrap();
        assert_eq!((p.len(), t.len()), (8, 2));
        let s2 = seq(2);
        let (p, t) = profile_target_split(&s2).unwrap();
        assert_eq!((p.len(), t.len()), (1, 1));
        let s5 = seq(5);
        let (p, t) = profile_target_split(&s5).unwrap();
        assert_eq!((p.len(), t.len()), (4, 1));
        assert!(profile_target_split(&seq(1)).is_err());
    }

    proptest! {
        #[test]
        fn profile_and_targets_partition_the_sequence(len in 2usize..200) {
            let seq = UserSequence {
                user_id: "u".into(),
                items: (0..len).collect(),
                timestamps: None,
            };
            let (p, t) = profile_target_split(&seq).unwrap();
            prop_assert!(!p.is_empty() && !t.is_empty());
            let mut joined = p.to_vec();
            joined.extend_from_slice(t);
            prop_assert_eq!(joined, seq.items);
        }

        #[test]
        fn example_count_is_len_minus_one(len in 2usize..50, l_max in 1usize..25) {
            let users = vec![UserSequence {
                user_id: "u".into(),
                items: (0..len).map(|i| i % 3).collect(),
                timestamps: None,
            }];
            let examples = make_training_examples(&users, l_max);
            prop_assert_eq!(examples.len(), len - 1);
            for ex in &examples {
                prop_assert!(!ex.prefix.is_empty());
                prop_assert!(ex.prefix.len() <= l_max);
            }
        }
    }

    #[test]
    fn training_examples_match_hand_expansion() {
        let users = vec![UserSequence {
            user_id: "u".into(),
            items: vec![3, 1, 2],
            timestamps: None,
        }];
        let examples = make_training_examples(&users, 20);
        assert_eq!(examples.len(), 2);
        assert_eq!(examples[0].prefix, vec![3]);
        assert_eq!(examples[0].target, 1);
        assert_eq!(examples[1].prefix, vec![3, 1]);
        assert_eq!(examples[1].target, 2);
    }

    #[test]
    fn prefix_truncates_to_l_max() {
        let users = vec![UserSequence {
            user_id: "u".into(),
            items: (0..10).collect(),
            timestamps: None,
        }];
        let examples = make_training_examples(&users, 3);
        let last = examples.last().unwrap();
        assert_eq!(last.prefix, vec![6, 7, 8]);
        assert_eq!(last.target, 9);
    }

    #[test]
    fn dataset_binary_roundtrip() {
        let ds = synthetic_dataset(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.bin");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.users, ds.users);
        assert_eq!(loaded.catalog.len(), ds.catalog.len());
        for i in 0..ds.catalog.len() {
            assert_eq!(loaded.catalog.raw_id(i), ds.catalog.raw_id(i));
            assert_eq!(loaded.catalog.name(i), ds.catalog.name(i));
        }
        // Byte-identical on rewrite.
        let path2 = dir.path().join("dataset2.bin");
        save_dataset(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn split_file_roundtrip() {
        let ds = synthetic_dataset(12);
        let split = split_users(&ds, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        save_split(&split, &path).unwrap();
        let file = load_split_file(&path).unwrap();
        let resolved = resolve_split(&ds, &file).unwrap();
        assert_eq!(resolved.train, split.train);
        assert_eq!(resolved.valid, split.valid);
        assert_eq!(resolved.test, split.test);
        assert_eq!(resolved.seed, 3);
    }

    #[test]
    fn duplicate_catalog_id_rejected() {
        let cat = write_temp(
            "{\"id\": \"a\", \"name\": \"x\"}\n{\"id\": \"a\", \"name\": \"y\"}\n",
            ".jsonl",
        );
        let tsv = write_temp("", ".tsv");
        assert!(load_interactions(tsv.path(), cat.path()).is_err());
    }
}
