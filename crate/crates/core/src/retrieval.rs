//! Low-latency serving path.
//!
//! Retrieval never touches the language model or the text encoder: a
//! trained checkpoint plus the item catalog is everything the index needs.
//! Queries run interest extraction over the id embeddings and then an
//! exact maximum-inner-product scan, merging the per-interest rankings by
//! taking each item's best score across interests. A small HTTP service
//! wraps the index for online use.

use std::net::SocketAddr;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::oneshot;

use crate::dataset::ItemCatalog;
use crate::error::{Error, Result};
use crate::ibim::mi_extract;
use crate::linalg::{dot, Mat};
use crate::trainer::Checkpoint;

/// One retrieved item with its best score across interest heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub dense: usize,
    pub score: f64,
}

/// Everything needed to answer retrieval queries.
#[derive(Debug)]
pub struct RetrievalIndex {
    catalog: ItemCatalog,
    item_emb: Mat,
    pos_emb: Mat,
    extractor_w1: Mat,
    extractor_w2: Mat,
}

impl RetrievalIndex {
    /// Builds an index from a trained checkpoint and the catalog it was
    /// trained against.
    pub fn new(checkpoint: &Checkpoint, catalog: ItemCatalog) -> Result<Self> {
        if checkpoint.n_items != catalog.len() {
            return Err(Error::InvalidInput(format!(
                "checkpoint covers {} items, catalog has {}",
                checkpoint.n_items,
                catalog.len()
            )));
        }
        let params = checkpoint.to_params()?;
        Ok(RetrievalIndex {
            catalog,
            item_emb: params.item_emb,
            pos_emb: params.pos_emb,
            extractor_w1: params.extractor_w1,
            extractor_w2: params.extractor_w2,
        })
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn len(&self) -> usize {
        self.catalog.len()
    }

    pub fn is_empty(&self) -> bool {
        self.catalog.is_empty()
    }

    /// Maps raw item ids to dense indices, collecting every unknown id in
    /// input order (first occurrence only) rather than stopping at the
    /// first offender.
    pub fn resolve_sequence(&self, raw: &[String]) -> Result<Vec<usize>> {
        let mut dense = Vec::with_capacity(raw.len());
        let mut unknown: Vec<String> = Vec::new();
        for id in raw {
            match self.catalog.dense(id) {
                Some(ix) => dense.push(ix),
                None if unknown.iter().any(|u| u == id) => {}
                None => unknown.push(id.clone()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownItems(unknown));
        }
        Ok(dense)
    }

    /// Runs the interest extractor over a dense id sequence.
    pub fn extract_interests(&self, sequence: &[usize]) -> Result<Mat> {
        let fwd = mi_extract(
            sequence,
            &self.item_emb,
            &self.pos_emb,
            &self.extractor_w1,
            &self.extractor_w2,
        )?;
        Ok(fwd.interests)
    }

    /// Returns the top `n` items by best inner product across interests.
    ///
    /// Ties rank the lower dense index first. Items listed in `exclude`
    /// are dropped before ranking, so fewer than `n` results can come
    /// back when the exclusion list is large. `n` must be positive and at
    /// most the catalog size.
    pub fn retrieve(&self, interests: &Mat, n: usize, exclude: &[usize]) -> Result<Vec<ScoredItem>> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        if n > self.catalog.len() {
            return Err(Error::InvalidInput(format!(
                "n = {n} exceeds the catalog size {}",
                self.catalog.len()
            )));
        }
        if interests.cols() != self.item_emb.cols() {
            return Err(Error::Shape(format!(
                "interests have width {}, items {}",
                interests.cols(),
                self.item_emb.cols()
            )));
        }
        if interests.rows() == 0 {
            return Err(Error::InvalidInput("no interest vectors to retrieve with".into()));
        }
        let mut scored: Vec<ScoredItem> = (0..self.catalog.len())
            .filter(|item| !exclude.contains(item))
            .map(|item| {
                let emb = self.item_emb.row(item);
                let best = (0..interests.rows())
                    .map(|m| dot(interests.row(m), emb))
                    .fold(f64::NEG_INFINITY, f64::max);
                ScoredItem {
                    dense: item,
                    score: best,
                }
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.dense.cmp(&b.dense))
        });
        scored.truncate(n);
        Ok(scored)
    }

    /// Full query path: raw ids in, ranked items out.
    pub fn query(&self, raw: &[String], n: usize, exclude_seen: bool) -> Result<Vec<ScoredItem>> {
        let dense = self.resolve_sequence(raw)?;
        let interests = self.extract_interests(&dense)?;
        let exclude = if exclude_seen { dense } else { Vec::new() };
        self.retrieve(&interests, n, &exclude)
    }
}

/// Service tuning knobs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ServeOptions {
    /// Drop items already present in the query sequence.
    pub exclude_seen: bool,
}

struct ServerState {
    index: RetrievalIndex,
    exclude_seen: bool,
}

#[derive(Serialize)]
struct ItemPayload {
    id: String,
    name: String,
    score: f64,
}

#[derive(Serialize)]
struct RetrievePayload {
    items: Vec<ItemPayload>,
}

#[derive(Serialize)]
struct ErrorPayload {
    error: String,
}

fn error_response(status: StatusCode, msg: impl Into<String>) -> Response {
    let body = serde_json::to_string(&ErrorPayload { error: msg.into() })
        .unwrap_or_else(|_| "{\"error\":\"internal\"}".to_string());
    (status, [("content-type", "application/json")], body).into_response()
}

/// Parses {"sequence": [...], "n": ...} accepting raw ids as JSON strings
/// or integers.
fn parse_request(body: &[u8]) -> std::result::Result<(Vec<String>, usize), String> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| format!("malformed JSON body: {e}"))?;
    let obj = value.as_object().ok_or("request body must be a JSON object")?;
    let seq = obj
        .get("sequence")
        .ok_or("missing field: sequence")?
        .as_array()
        .ok_or("sequence must be an array")?;
    let mut raw = Vec::with_capacity(seq.len());
    for entry in seq {
        match entry {
            Value::String(s) => raw.push(s.clone()),
            Value::Number(n) => raw.push(n.to_string()),
            other => return Err(format!("sequence entries must be ids, got {other}")),
        }
    }
    if raw.is_empty() {
        return Err("sequence must not be empty".to_string());
    }
    let n = obj
        .get("n")
        .ok_or("missing field: n")?
        .as_u64()
        .ok_or("n must be a non-negative integer")? as usize;
    Ok((raw, n))
}

async fn retrieve_handler(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    let (raw, n) = match parse_request(&body) {
        Ok(parsed) => parsed,
        Err(msg) => return error_response(StatusCode::BAD_REQUEST, msg),
    };
    match state.index.query(&raw, n, state.exclude_seen) {
        Ok(items) => {
            let payload = RetrievePayload {
                items: items
                    .into_iter()
                    .map(|item| ItemPayload {
                        id: state.index.catalog().raw_id(item.dense).to_string(),
                        name: state.index.catalog().name(item.dense).to_string(),
                        score: item.score,
                    })
                    .collect(),
            };
            match serde_json::to_string(&payload) {
                Ok(body) => {
                    (StatusCode::OK, [("content-type", "application/json")], body).into_response()
                }
                Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            }
        }
        Err(Error::UnknownItems(ids)) => error_response(
            StatusCode::UNPROCESSABLE_ENTITY,
            Error::UnknownItems(ids).to_string(),
        ),
        Err(e) => error_response(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn healthz_handler() -> &'static str {
    "ok"
}

fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/retrieve", post(retrieve_handler))
        .route("/healthz", get(healthz_handler))
        .with_state(state)
}

/// A background retrieval service bound to a local address.
///
/// Dropping the handle shuts the service down; [`RunningServer::wait`]
/// keeps it up until the process ends instead.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        // Keep the shutdown side alive while waiting, otherwise dropping
        // it would stop the server immediately.
        let _keep = self.shutdown.take();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }

    /// Stops the service and waits for the thread to finish.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts the retrieval service on `bind` (use port 0 for an ephemeral
/// port) and returns once it is accepting connections.
pub fn start_server(
    index: RetrievalIndex,
    bind: SocketAddr,
    opts: ServeOptions,
) -> Result<RunningServer> {
    let state = Arc::new(ServerState {
        index,
        exclude_seen: opts.exclude_seen,
    });
    let (addr_tx, addr_rx) = mpsc::channel::<std::io::Result<SocketAddr>>();
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let handle = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("tokio runtime");
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::bind(bind).await {
                Ok(listener) => listener,
                Err(e) => {
                    let _ = addr_tx.send(Err(e));
                    return;
                }
            };
            let addr = listener.local_addr().expect("bound listener has an address");
            let _ = addr_tx.send(Ok(addr));
            let app = router(state);
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                })
                .await;
        });
    });
    let addr = addr_rx
        .recv()
        .map_err(|_| Error::InvalidInput("server thread exited before binding".into()))?
        .map_err(|e| Error::io(bind.to_string(), e))?;
    Ok(RunningServer {
        addr,
        shutdown: Some(shutdown_tx),
        handle: Some(handle),
    })
}
