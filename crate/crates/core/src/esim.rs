//! Semantic interest extraction for cluster exemplars.
//!
//! Builds the inference prompt from an exemplar's click sequence, queries a
//! chat-completion endpoint (or a deterministic offline mock), parses the
//! returned interest list, encodes each interest with the shared text
//! encoder, and propagates exemplar interests to every member of the
//! exemplar's cluster. Also hosts the semantic attention stack that turns an
//! interest set into a single target-aware vector during training.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::apcluster::ClusterResult;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, softmax_backward, softmax_inplace, Mat};
use crate::textenc::{tokenize, Provider};

/// Default cap on interests kept per exemplar.
pub const MAX_INTERESTS: usize = 20;

/// Default number of retries after a first unparseable completion.
pub const DEFAULT_RETRIES: u32 = 2;

/// Interests emitted by the frequency fallback when parsing keeps failing.
pub const FALLBACK_INTERESTS: usize = 5;

/// Default bound on concurrent in-flight completions.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

static LLM_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of completion requests issued so far (any client), process-wide.
///
/// Serving must never move this counter; tests assert on deltas.
pub fn llm_call_count() -> u64 {
    LLM_CALLS.load(Ordering::Relaxed)
}

/// Tokens too generic to ever count as an interest on their own.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "in",
    "is", "it", "its", "of", "on", "or", "that", "the", "this", "to", "was", "were", "will",
    "with",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

fn is_numeric(token: &str) -> bool {
    token.chars().all(|c| c.is_ascii_digit())
}

/// A fully assembled inference prompt plus the item names it was built from
/// (kept so the fallback path can work without re-parsing the text).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub item_names: Vec<String>,
}

/// Assembles the interest-inference prompt for one click sequence.
///
/// The output is byte-stable for identical input: a context sentence, the
/// bracketed `name (id)` list joined by `, `, and the task sentence.
pub fn build_prompt(item_names: &[impl AsRef<str>], item_ids: &[u64]) -> Result<Prompt> {
    if item_names.is_empty() || item_ids.is_empty() {
        return Err(Error::InvalidInput("prompt needs at least one item".into()));
    }
    if item_names.len() != item_ids.len() {
        return Err(Error::InvalidInput(format!(
            "prompt got {} names but {} ids",
            item_names.len(),
            item_ids.len()
        )));
    }
    let listed = item_names
        .iter()
        .zip(item_ids)
        .map(|(name, id)| format!("{} ({})", name.as_ref(), id))
        .collect::<Vec<_>>()
        .join(", ");
    let text = format!(
        "The user's historical click sequence is as follows: [{listed}]; \
         please infer the user's interest preference and output it in the format of JSON, \
         such as {{interest sequence number: interest content;}}"
    );
    Ok(Prompt {
        text,
        item_names: item_names.iter().map(|n| n.as_ref().to_string()).collect(),
    })
}

/// A chat-completion backend. Implementations must be shareable across the
/// worker threads that fan out per-exemplar requests.
pub trait LlmClient: Send + Sync {
    /// Sends one prompt and returns the raw completion text.
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Client for an OpenAI-style chat-completion HTTP endpoint.
pub struct HttpLlmClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpLlmClient {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Self {
        HttpLlmClient {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| Error::Llm(format!("request to {} failed: {e}", self.endpoint)))?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Llm(format!(
                "endpoint {} returned status {status}",
                self.endpoint
            )));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| Error::Llm(format!("invalid JSON from {}: {e}", self.endpoint)))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| {
                Error::Llm("completion response missing choices[0].message.content".into())
            })
    }
}

/// Deterministic offline stand-in for the real model.
///
/// It reads the item names back out of the prompt, tokenizes them, discards
/// stopwords, bare numbers, and tokens so common they appear in more than
/// half of the names, then groups the survivors into co-occurrence
/// components (tokens sharing a name share a component). Each component
/// becomes one interest, ordered by total token frequency and then first
/// appearance, and the result is emitted as a numbered JSON object.
pub struct MockLlm;

/// Recovers the `name (id)` entries from a prompt's bracketed list.
fn prompt_item_names(prompt: &str) -> Vec<String> {
    let Some(start) = prompt.find('[') else {
        return Vec::new();
    };
    let Some(end) = prompt.rfind(']') else {
        return Vec::new();
    };
    if end <= start {
        return Vec::new();
    }
    let listed = &prompt[start + 1..end];
    // Entries look like `name (id)`. Splitting on the `), ` separator keeps
    // names containing commas intact.
    listed
        .split("), ")
        .map(|entry| {
            let entry = entry.strip_suffix(')').unwrap_or(entry);
            match entry.rfind(" (") {
                Some(pos) => entry[..pos].to_string(),
                None => entry.to_string(),
            }
        })
        .collect()
}

impl LlmClient for MockLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        let names = prompt_item_names(prompt);
        let per_name_tokens: Vec<Vec<String>> = names
            .iter()
            .map(|n| {
                tokenize(n)
                    .into_iter()
                    .filter(|t| !is_stopword(t) && !is_numeric(t))
                    .collect()
            })
            .collect();

        // Document frequency over names; tokens in more than half of the
        // names carry no interest signal (catalog boilerplate).
        let mut doc_freq: HashMap<&str, usize> = HashMap::new();
        for tokens in &per_name_tokens {
            let mut seen: Vec<&str> = Vec::new();
            for t in tokens {
                if !seen.contains(&t.as_str()) {
                    seen.push(t);
                    *doc_freq.entry(t).or_insert(0) += 1;
                }
            }
        }
        let mut df_cap = names.len().div_ceil(2);
        let any_kept = per_name_tokens
            .iter()
            .flatten()
            .any(|t| doc_freq.get(t.as_str()).is_some_and(|&df| df <= df_cap));
        if !any_kept {
            // A uniform sequence puts its one theme in every name, so the
            // boilerplate cap would drop everything. Answer with the full
            // vocabulary instead of an empty object.
            df_cap = names.len();
        }
        let keep = |t: &str| doc_freq.get(t).is_some_and(|&df| df <= df_cap);

        // First-appearance order assigns each surviving token an index.
        let mut order: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut freq: Vec<usize> = Vec::new();
        for tokens in &per_name_tokens {
            for t in tokens {
                if !keep(t) {
                    continue;
                }
                match index.get(t.as_str()) {
                    Some(&i) => freq[i] += 1,
                    None => {
                        index.insert(t.clone(), order.len());
                        order.push(t.clone());
                        freq.push(1);
                    }
                }
            }
        }

        // Union tokens that co-occur within one name.
        let mut parent: Vec<usize> = (0..order.len()).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for tokens in &per_name_tokens {
            let ids: Vec<usize> = tokens
                .iter()
                .filter(|t| keep(t))
                .map(|t| index[t.as_str()])
                .collect();
            for pair in ids.windows(2) {
                let a = find(&mut parent, pair[0]);
                let b = find(&mut parent, pair[1]);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }

        // Collect components keyed by root, tokens in first-appearance order.
        let mut components: BTreeMap<usize, (Vec<usize>, usize)> = BTreeMap::new();
        for i in 0..order.len() {
            let root = find(&mut parent, i);
            let entry = components.entry(root).or_insert((Vec::new(), 0));
            entry.0.push(i);
            entry.1 += freq[i];
        }
        let mut ranked: Vec<(Vec<usize>, usize)> = components.into_values().collect();
        // Total frequency descending, then earliest member ascending. The
        // BTreeMap walk already yields components ordered by earliest member.
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0[0].cmp(&b.0[0])));

        let mut obj = String::from("{");
        for (k, (members, _)) in ranked.iter().enumerate() {
            if k > 0 {
                obj.push_str(", ");
            }
            let text = members
                .iter()
                .map(|&i| order[i].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            obj.push_str(&format!("\"{}\": \"{}\"", k + 1, text));
        }
        obj.push('}');
        Ok(obj)
    }
}

/// Finds the first balanced `{...}` region in `text`, respecting strings.
fn first_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Pulls numbered string entries out of one completion, ascending by key.
fn parse_interest_object(response: &str) -> Option<Vec<String>> {
    let object = first_json_object(response)?;
    let value: serde_json::Value = serde_json::from_str(object).ok()?;
    let map = value.as_object()?;
    let mut entries: Vec<(i64, String)> = Vec::new();
    for (key, val) in map {
        let Ok(k) = key.trim().parse::<i64>() else {
            continue;
        };
        let Some(text) = val.as_str() else {
            continue;
        };
        let text = text.trim();
        if !text.is_empty() {
            entries.push((k, text.to_string()));
        }
    }
    if entries.is_empty() {
        return None;
    }
    entries.sort_by_key(|(k, _)| *k);
    Some(entries.into_iter().map(|(_, t)| t).collect())
}

/// Most frequent non-stopword tokens of the item names, one interest each.
fn frequency_fallback(item_names: &[String], limit: usize) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for name in item_names {
        for token in tokenize(name) {
            if is_stopword(&token) || is_numeric(&token) {
                continue;
            }
            if !counts.contains_key(&token) {
                order.push(token.clone());
            }
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(usize, String)> = order
        .iter()
        .enumerate()
        .map(|(first, t)| (first, t.clone()))
        .collect();
    ranked.sort_by(|a, b| counts[&b.1].cmp(&counts[&a.1]).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(limit).map(|(_, t)| t).collect()
}

/// Queries the client and parses the interest list out of the completion.
///
/// Unparseable completions are retried `retries` more times; when every
/// attempt fails the most frequent item-name tokens stand in as interests.
/// Transport errors abort immediately. Entries are ordered by their numeric
/// key, whitespace-trimmed, and truncated to `max_interests`.
pub fn infer_interests(
    client: &dyn LlmClient,
    prompt: &Prompt,
    max_interests: usize,
    retries: u32,
) -> Result<Vec<String>> {
    for _ in 0..=retries {
        LLM_CALLS.fetch_add(1, Ordering::Relaxed);
        let response = client.complete(&prompt.text)?;
        if let Some(mut interests) = parse_interest_object(&response) {
            interests.truncate(max_interests);
            return Ok(interests);
        }
    }
    log::warn!(
        "no parseable interest object after {} attempts; falling back to token frequency",
        retries + 1
    );
    let mut interests = frequency_fallback(&prompt.item_names, FALLBACK_INTERESTS);
    interests.truncate(max_interests);
    Ok(interests)
}

/// One exemplar's encoded interests: up to `m_ex` rows of text vectors with
/// a validity mask. Masked-out rows stay exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticInterestSet {
    pub vectors: Mat,
    pub mask: Vec<bool>,
    pub texts: Vec<String>,
}

impl SemanticInterestSet {
    /// A set with no valid interests.
    pub fn empty(m_ex: usize, d_t: usize) -> Self {
        SemanticInterestSet {
            vectors: Mat::zeros(m_ex, d_t),
            mask: vec![false; m_ex],
            texts: Vec::new(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Encodes interest texts into a fixed-size masked matrix.
pub fn encode_interests(
    texts: &[String],
    provider: &Provider,
    m_ex: usize,
) -> Result<SemanticInterestSet> {
    if texts.len() > m_ex {
        return Err(Error::InvalidInput(format!(
            "{} interests exceed the cap of {m_ex}",
            texts.len()
        )));
    }
    let d_t = provider.dim();
    let mut vectors = Mat::zeros(m_ex, d_t);
    let mut mask = vec![false; m_ex];
    for (k, text) in texts.iter().enumerate() {
        let embedding = provider.encode_text(text)?;
        vectors.row_mut(k).copy_from_slice(&embedding.to_f64());
        mask[k] = true;
    }
    Ok(SemanticInterestSet {
        vectors,
        mask,
        texts: texts.to_vec(),
    })
}

/// Encoded interests for every exemplar of one clustering.
#[derive(Debug, Clone, Default)]
pub struct ExemplarInterestTable {
    sets: BTreeMap<usize, Arc<SemanticInterestSet>>,
}

impl ExemplarInterestTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, exemplar: usize, set: SemanticInterestSet) {
        self.sets.insert(exemplar, Arc::new(set));
    }

    pub fn get(&self, exemplar: usize) -> Option<&Arc<SemanticInterestSet>> {
        self.sets.get(&exemplar)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Arc<SemanticInterestSet>)> {
        self.sets.iter().map(|(&e, s)| (e, s))
    }
}

/// Hands every user its cluster exemplar's interest set (shared, not copied).
pub fn propagate_to_users(
    cluster: &ClusterResult,
    table: &ExemplarInterestTable,
) -> Result<Vec<Arc<SemanticInterestSet>>> {
    cluster
        .assignment
        .iter()
        .map(|&exemplar| {
            table
                .get(exemplar)
                .cloned()
                .ok_or(Error::MissingExemplar(exemplar))
        })
        .collect()
}

/// Runs `infer_interests` for a list of exemplars with a bounded number of
/// in-flight completions. Results come back in input order regardless of
/// scheduling, so the output is deterministic for deterministic clients.
pub fn infer_for_exemplars(
    client: &dyn LlmClient,
    prompts: &[(usize, Prompt)],
    max_interests: usize,
    retries: u32,
    max_in_flight: usize,
) -> Result<Vec<(usize, Vec<String>)>> {
    let workers = max_in_flight.max(1).min(prompts.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Vec<String>>>>> =
        (0..prompts.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= prompts.len() {
                    break;
                }
                let outcome = infer_interests(client, &prompts[i].1, max_interests, retries);
                *slots[i].lock().expect("interest slot poisoned") = Some(outcome);
            });
        }
    });
    prompts
        .iter()
        .zip(slots)
        .map(|((exemplar, _), slot)| {
            let outcome = slot
                .into_inner()
                .expect("interest slot poisoned")
                .expect("worker filled every claimed slot");
            outcome.map(|texts| (*exemplar, texts))
        })
        .collect()
}

/// One line of the interests artifact: an exemplar and its interest texts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InterestRecord {
    pub exemplar: usize,
    pub texts: Vec<String>,
}

/// Writes exemplar interests as JSON Lines, ascending by exemplar index.
pub fn save_interests(path: &Path, interests: &BTreeMap<usize, Vec<String>>) -> Result<()> {
    let mut out = Vec::new();
    for (&exemplar, texts) in interests {
        let record = InterestRecord {
            exemplar,
            texts: texts.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::InvalidInput(format!("unencodable interests: {e}")))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads an interests artifact written by `save_interests`.
pub fn load_interests(path: &Path) -> Result<BTreeMap<usize, Vec<String>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut interests = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InterestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        interests.insert(record.exemplar, record.texts);
    }
    Ok(interests)
}

/// Learned projections of the semantic self-attention block. All matrices
/// are `d_t` by `d_t`; biases have length `d_t`.
pub struct SelfAttentionParams<'a> {
    pub w_q: &'a Mat,
    pub w_k: &'a Mat,
    pub w_v: &'a Mat,
    pub b_q: &'a [f64],
    pub b_k: &'a [f64],
    pub b_v: &'a [f64],
}

/// Gradient accumulators matching [`SelfAttentionParams`].
pub struct SelfAttentionGrads<'a> {
    pub w_q: &'a mut Mat,
    pub w_k: &'a mut Mat,
    pub w_v: &'a mut Mat,
    pub b_q: &'a mut [f64],
    pub b_k: &'a mut [f64],
    pub b_v: &'a mut [f64],
}

/// Forward state of the semantic self-attention block, kept for backward.
pub struct SelfAttentionForward {
    /// Full-size output; masked rows are exactly zero.
    pub output: Mat,
    /// Indices of the valid rows, ascending.
    valid: Vec<usize>,
    /// Projected queries/keys/values over the valid rows.
    q: Mat,
    k: Mat,
    v: Mat,
    /// Attention weights over the valid rows (rows sum to 1).
    weights: Mat,
    learned: bool,
}

impl SelfAttentionForward {
    /// Attention rows over valid positions; for inspection in tests.
    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn valid_rows(&self) -> &[usize] {
        &self.valid
    }
}

fn project_rows(x: &Mat, rows: &[usize], w: &Mat, b: &[f64]) -> Mat {
    let mut out = Mat::zeros(rows.len(), w.cols());
    for (i, &r) in rows.iter().enumerate() {
        w.matvec_t(x.row(r), out.row_mut(i));
        axpy(1.0, b, out.row_mut(i));
    }
    out
}

/// Single-head scaled dot-product self-attention over the valid interests.
///
/// With `params` the queries, keys, and values are affine projections of the
/// interest rows; without, the rows attend to themselves unprojected. Masked
/// rows receive no weight and produce zero output rows.
pub fn semantic_self_attention(
    set: &SemanticInterestSet,
    params: Option<&SelfAttentionParams>,
) -> Result<SelfAttentionForward> {
    let d_t = set.vectors.cols();
    if set.mask.len() != set.vectors.rows() {
        return Err(Error::Shape(format!(
            "mask length {} does not match {} interest rows",
            set.mask.len(),
            set.vectors.rows()
        )));
    }
    if let Some(p) = params {
        for (name, m) in [("w_q", p.w_q), ("w_k", p.w_k), ("w_v", p.w_v)] {
            if m.rows() != d_t || m.cols() != d_t {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {d_t}x{d_t}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
    }
    let valid: Vec<usize> = (0..set.vectors.rows()).filter(|&i| set.mask[i]).collect();
    let m = valid.len();
    let learned = params.is_some();
    let (q, k, v) = match params {
        Some(p) => (
            project_rows(&set.vectors, &valid, p.w_q, p.b_q),
            project_rows(&set.vectors, &valid, p.w_k, p.b_k),
            project_rows(&set.vectors, &valid, p.w_v, p.b_v),
        ),
        None => {
            let mut x = Mat::zeros(m, d_t);
            for (i, &r) in valid.iter().enumerate() {
                x.row_mut(i).copy_from_slice(set.vectors.row(r));
            }
            (x.clone(), x.clone(), x)
        }
    };
    let scale = 1.0 / (d_t as f64).sqrt();
    let mut weights = Mat::zeros(m, m);
    for i in 0..m {
        let row = weights.row_mut(i);
        for (j, w) in row.iter_mut().enumerate() {
            *w = dot(q.row(i), k.row(j)) * scale;
        }
        softmax_inplace(row);
    }
    let mut output = Mat::zeros(set.vectors.rows(), d_t);
    for i in 0..m {
        for j in 0..m {
            axpy(weights.get(i, j), v.row(j), output.row_mut(valid[i]));
        }
    }
    Ok(SelfAttentionForward {
        output,
        valid,
        q,
        k,
        v,
        weights,
        learned,
    })
}

/// Accumulates projection gradients for the self-attention block.
///
/// `d_output` is the upstream gradient of the full-size output matrix;
/// gradients never flow into the frozen interest vectors, so only the
/// projection parameters receive contributions. A parameter-free forward
/// has nothing to train and leaves the sinks untouched.
pub fn semantic_self_attention_backward(
    fwd: &SelfAttentionForward,
    set: &SemanticInterestSet,
    d_output: &Mat,
    grads: &mut SelfAttentionGrads,
) {
    if !fwd.learned {
        return;
    }
    let m = fwd.valid.len();
    if m == 0 {
        return;
    }
    let d_t = set.vectors.cols();
    let scale = 1.0 / (d_t as f64).sqrt();

    let mut d_q = Mat::zeros(m, d_t);
    let mut d_k = Mat::zeros(m, d_t);
    let mut d_v = Mat::zeros(m, d_t);
    let mut d_weights_row = vec![0.0; m];
    let mut d_logits_row = vec![0.0; m];
    for i in 0..m {
        let d_out = d_output.row(fwd.valid[i]);
        for j in 0..m {
            // Value path: out_i += a_ij * v_j.
            axpy(fwd.weights.get(i, j), d_out, d_v.row_mut(j));
            d_weights_row[j] = dot(d_out, fwd.v.row(j));
        }
        softmax_backward(fwd.weights.row(i), &d_weights_row, &mut d_logits_row);
        for j in 0..m {
            let g = d_logits_row[j] * scale;
            axpy(g, fwd.k.row(j), d_q.row_mut(i));
            axpy(g, fwd.q.row(i), d_k.row_mut(j));
        }
    }

    for (i, &r) in fwd.valid.iter().enumerate() {
        let x = set.vectors.row(r);
        for (d_proj, w_grad, b_grad) in [
            (d_q.row(i), &mut *grads.w_q, &mut *grads.b_q),
            (d_k.row(i), &mut *grads.w_k, &mut *grads.b_k),
            (d_v.row(i), &mut *grads.w_v, &mut *grads.b_v),
        ] {
            for (row_idx, &xr) in x.iter().enumerate() {
                axpy(xr, d_proj, w_grad.row_mut(row_idx));
            }
            axpy(1.0, d_proj, b_grad);
        }
    }
}

/// Forward state of target attention over an interest matrix.
pub struct TargetAttentionForward {
    pub output: Vec<f64>,
    valid: Vec<usize>,
    weights: Vec<f64>,
}

impl TargetAttentionForward {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn valid_rows(&self) -> &[usize] {
        &self.valid
    }
}

/// Collapses the refined interest rows into one vector, weighted by their
/// scaled inner product with the target text embedding. An all-masked input
/// yields the zero vector.
pub fn semantic_target_attention(
    t_tar: &[f64],
    h: &Mat,
    mask: &[bool],
) -> Result<TargetAttentionForward> {
    let d_t = h.cols();
    if t_tar.len() != d_t {
        return Err(Error::Shape(format!(
            "target embedding has {} components, rows have {d_t}",
            t_tar.len()
        )));
    }
    if mask.len() != h.rows() {
        return Err(Error::Shape(format!(
            "mask length {} does not match {} rows",
            mask.len(),
            h.rows()
        )));
    }
    let valid: Vec<usize> = (0..h.rows()).filter(|&i| mask[i]).collect();
    let scale = 1.0 / (d_t as f64).sqrt();
    let mut weights: Vec<f64> = valid.iter().map(|&j| dot(t_tar, h.row(j)) * scale).collect();
    softmax_inplace(&mut weights);
    let mut output = vec![0.0; d_t];
    for (&j, &w) in valid.iter().zip(&weights) {
        axpy(w, h.row(j), &mut output);
    }
    Ok(TargetAttentionForward {
        output,
        valid,
        weights,
    })
}

/// Accumulates the gradient of target attention into `d_h`.
///
/// The target text embedding is frozen, so only the interest rows receive
/// gradient. `d_h` must be full-size; masked rows stay untouched.
pub fn semantic_target_attention_backward(
    fwd: &TargetAttentionForward,
    t_tar: &[f64],
    h: &Mat,
    d_output: &[f64],
    d_h: &mut Mat,
) {
    let m = fwd.valid.len();
    if m == 0 {
        return;
    }
    let scale = 1.0 / (h.cols() as f64).sqrt();
    let d_weights: Vec<f64> = fwd.valid.iter().map(|&j| dot(d_output, h.row(j))).collect();
    let mut d_logits = vec![0.0; m];
    softmax_backward(&fwd.weights, &d_weights, &mut d_logits);
    for (i, &j) in fwd.valid.iter().enumerate() {
        axpy(fwd.weights[i], d_output, d_h.row_mut(j));
        axpy(d_logits[i] * scale, t_tar, d_h.row_mut(j));
    }
}
