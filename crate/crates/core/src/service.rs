//! HTTP service for annotation campaigns.
//!
//! Serves intruder items and component profiles to annotators and records
//! their answers and component labels in append-only JSON Lines logs
//! (`responses.jsonl`, `labels.jsonl`) inside the store directory. The logs
//! are the source of truth: restarting the service replays them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

use crate::analysis::{self, ComponentProfile, Direction, DEFAULT_TOP_K};
use crate::embedding_io::load_model;
use crate::error::{Error, Result};
use crate::intruder::{read_jsonl, score_responses, AnnotationRecord, IntruderItem, IntruderStats, ItemSet};
use crate::stability::LabelClass;

pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";

/// Annotator verdict on one end of a component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLabel {
    pub component_id: usize,
    pub direction: Direction,
    pub label: String,
    pub metacategory: String,
    pub class: LabelClass,
    pub annotator: String,
    pub timestamp: String,
}

/// Latest label per (component, direction, annotator).
pub fn effective_labels(labels: &[ComponentLabel]) -> Vec<&ComponentLabel> {
    let mut latest: BTreeMap<(usize, Direction, &str), &ComponentLabel> = BTreeMap::new();
    for label in labels {
        latest.insert((label.component_id, label.direction, label.annotator.as_str()), label);
    }
    latest.into_values().collect()
}

/// Collapses labels to one class per component: interpretable if any
/// effective label says so, else unsure if any does, else noise.
pub fn component_classes(labels: &[ComponentLabel]) -> BTreeMap<usize, LabelClass> {
    let mut classes: BTreeMap<usize, LabelClass> = BTreeMap::new();
    let rank = |c: LabelClass| match c {
        LabelClass::Interpretable => 0,
        LabelClass::Unsure => 1,
        LabelClass::Noise => 2,
        LabelClass::Unlabeled => 3,
    };
    for label in effective_labels(labels) {
        let entry = classes.entry(label.component_id).or_insert(label.class);
        if rank(label.class) < rank(*entry) {
            *entry = label.class;
        }
    }
    classes
}

pub fn read_labels_jsonl(path: impl AsRef<Path>) -> Result<Vec<ComponentLabel>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCoverage {
    pub n_components: usize,
    pub n_labels: usize,
    pub labeled_components: usize,
    pub by_class: BTreeMap<LabelClass, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsView {
    pub intruder: IntruderStats,
    pub labels: LabelCoverage,
}

/// What `/api/intruder/next` returns: the five words, never the intruder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPresentation {
    pub done: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<String>>,
    pub answered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSubmission {
    pub item_id: String,
    pub annotator: String,
    pub choice_index: usize,
    pub chosen_word: String,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    #[serde(default)]
    pub component_id: Option<usize>,
    pub direction: Direction,
    pub label: String,
    #[serde(default)]
    pub metacategory: String,
    pub class: LabelClass,
    pub annotator: String,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    NotFound(String),
    Conflict(String),
    Invalid(String),
    Internal(String),
}

impl Rejection {
    fn status(&self) -> StatusCode {
        match self {
            Rejection::NotFound(_) => StatusCode::NOT_FOUND,
            Rejection::Conflict(_) => StatusCode::CONFLICT,
            Rejection::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Rejection::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn message(&self) -> &str {
        match self {
            Rejection::NotFound(m) | Rejection::Conflict(m) | Rejection::Invalid(m) | Rejection::Internal(m) => m,
        }
    }
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message() });
        (self.status(), Json(body)).into_response()
    }
}

fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Seed for an annotator's item order, derived from the campaign seed and
/// the annotator id.
fn annotator_seed(campaign_seed: u64, annotator: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(campaign_seed.to_le_bytes());
    hasher.update(annotator.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug)]
struct Session {
    order: Vec<usize>,
    answered: HashSet<usize>,
    pending: Option<usize>,
}

struct AppendLog {
    path: PathBuf,
    file: File,
}

impl AppendLog {
    fn open(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(AppendLog { path, file })
    }

    /// Appends one JSON line and syncs it to disk.
    fn append<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut line = serde_json::to_string(value)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Campaign state behind the HTTP handlers.
pub struct Campaign {
    items: Vec<IntruderItem>,
    index: HashMap<String, usize>,
    seed: u64,
    profiles: Vec<ComponentProfile>,
    vocab_tokens: Vec<String>,
    responses: Vec<AnnotationRecord>,
    labels: Vec<ComponentLabel>,
    sessions: HashMap<String, Session>,
    responses_log: AppendLog,
    labels_log: AppendLog,
    cached_stats: Option<IntruderStats>,
}

impl Campaign {
    /// Opens (or creates) the store and replays its logs. A log line that
    /// fails to parse or validate aborts with the line number.
    pub fn open(
        items: ItemSet,
        profiles: Vec<ComponentProfile>,
        vocab_tokens: Vec<String>,
        store_dir: impl AsRef<Path>,
    ) -> Result<Self> {
        let store_dir = store_dir.as_ref();
        fs::create_dir_all(store_dir).map_err(|e| Error::io(store_dir, e))?;
        let index: HashMap<String, usize> = items
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.item_id.clone(), i))
            .collect();

        let responses_path = store_dir.join(RESPONSES_FILE);
        let labels_path = store_dir.join(LABELS_FILE);
        let responses: Vec<AnnotationRecord> = if responses_path.exists() {
            read_jsonl(&responses_path)?
        } else {
            Vec::new()
        };
        let labels: Vec<ComponentLabel> = if labels_path.exists() {
            read_jsonl(&labels_path)?
        } else {
            Vec::new()
        };

        let mut campaign = Campaign {
            items: items.items,
            index,
            seed: items.seed,
            profiles,
            vocab_tokens,
            responses: Vec::new(),
            labels: Vec::new(),
            sessions: HashMap::new(),
            responses_log: AppendLog::open(responses_path.clone())?,
            labels_log: AppendLog::open(labels_path.clone())?,
            cached_stats: None,
        };

        let corrupt = |path: &Path, line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (n, record) in responses.into_iter().enumerate() {
            let item = campaign
                .index
                .get(&record.item_id)
                .copied()
                .ok_or_else(|| corrupt(&responses_path, n + 1, format!("unknown item {}", record.item_id)))?;
            record
                .check_against(&campaign.items[item])
                .map_err(|e| corrupt(&responses_path, n + 1, e.to_string()))?;
            let session = campaign.session(&record.annotator);
            if !session.answered.insert(item) {
                return Err(corrupt(
                    &responses_path,
                    n + 1,
                    format!("duplicate answer by {} to {}", record.annotator, record.item_id),
                ));
            }
            campaign.responses.push(record);
        }
        for (n, label) in labels.into_iter().enumerate() {
            if label.component_id >= campaign.profiles.len() {
                return Err(corrupt(
                    &labels_path,
                    n + 1,
                    format!("unknown component {}", label.component_id),
                ));
            }
            campaign.labels.push(label);
        }
        Ok(campaign)
    }

    fn session(&mut self, annotator: &str) -> &mut Session {
        let n = self.items.len();
        let seed = self.seed;
        self.sessions.entry(annotator.to_string()).or_insert_with(|| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(annotator_seed(seed, annotator)));
            Session {
                order,
                answered: HashSet::new(),
                pending: None,
            }
        })
    }

    pub fn items(&self) -> &[IntruderItem] {
        &self.items
    }

    pub fn responses(&self) -> &[AnnotationRecord] {
        &self.responses
    }

    pub fn labels(&self) -> &[ComponentLabel] {
        &self.labels
    }

    pub fn profiles(&self) -> &[ComponentProfile] {
        &self.profiles
    }

    /// Next unanswered item in the annotator's order. An item that was served
    /// but not yet answered is served again (a page reload resumes it).
    pub fn next_item(&mut self, annotator: &str) -> std::result::Result<ItemPresentation, Rejection> {
        if annotator.trim().is_empty() {
            return Err(Rejection::Invalid("annotator id must not be empty".into()));
        }
        let total = self.items.len();
        let session = self.session(annotator);
        let next = match session.pending {
            Some(p) if !session.answered.contains(&p) => Some(p),
            _ => session.order.iter().copied().find(|i| !session.answered.contains(i)),
        };
        session.pending = next;
        let answered = session.answered.len();
        Ok(match next {
            Some(i) => ItemPresentation {
                done: false,
                item_id: Some(self.items[i].item_id.clone()),
                words: Some(self.items[i].presented_words()),
                answered,
                total,
            },
            None => ItemPresentation {
                done: true,
                item_id: None,
                words: None,
                answered,
                total,
            },
        })
    }

    pub fn submit_response(&mut self, sub: ResponseSubmission) -> std::result::Result<AnnotationRecord, Rejection> {
        let item = *self
            .index
            .get(&sub.item_id)
            .ok_or_else(|| Rejection::NotFound(format!("unknown item {}", sub.item_id)))?;
        let record = AnnotationRecord {
            item_id: sub.item_id,
            annotator: sub.annotator,
            choice_index: sub.choice_index,
            chosen_word: sub.chosen_word,
            timestamp: sub.timestamp.unwrap_or_else(now_iso8601),
        };
        record
            .check_against(&self.items[item])
            .map_err(|e| Rejection::Invalid(e.to_string()))?;

        let session = self
            .sessions
            .get(&record.annotator)
            .ok_or_else(|| Rejection::Conflict(format!("item {} was not served to {}", record.item_id, record.annotator)))?;
        if session.answered.contains(&item) {
            return Err(Rejection::Conflict(format!(
                "{} already answered {}",
                record.annotator, record.item_id
            )));
        }
        if session.pending != Some(item) {
            return Err(Rejection::Conflict(format!(
                "item {} was not served to {}",
                record.item_id, record.annotator
            )));
        }

        self.responses_log
            .append(&record)
            .map_err(|e| Rejection::Internal(e.to_string()))?;
        let session = self.sessions.get_mut(&record.annotator).expect("checked above");
        session.answered.insert(item);
        session.pending = None;
        self.responses.push(record.clone());
        self.cached_stats = None;
        Ok(record)
    }

    pub fn submit_label(
        &mut self,
        component_id: usize,
        sub: LabelSubmission,
    ) -> std::result::Result<ComponentLabel, Rejection> {
        if component_id >= self.profiles.len() {
            return Err(Rejection::NotFound(format!("unknown component {component_id}")));
        }
        if let Some(body_id) = sub.component_id {
            if body_id != component_id {
                return Err(Rejection::Invalid(format!(
                    "body names component {body_id} but the URL names {component_id}"
                )));
            }
        }
        if sub.annotator.trim().is_empty() {
            return Err(Rejection::Invalid("annotator id must not be empty".into()));
        }
        if sub.class == LabelClass::Unlabeled {
            return Err(Rejection::Invalid("class must be interpretable, unsure or noise".into()));
        }
        let label = ComponentLabel {
            component_id,
            direction: sub.direction,
            label: sub.label,
            metacategory: sub.metacategory,
            class: sub.class,
            annotator: sub.annotator,
            timestamp: sub.timestamp.unwrap_or_else(now_iso8601),
        };
        self.labels_log
            .append(&label)
            .map_err(|e| Rejection::Internal(e.to_string()))?;
        self.labels.push(label.clone());
        Ok(label)
    }

    pub fn stats(&mut self) -> Result<StatsView> {
        let intruder = match &self.cached_stats {
            Some(s) => s.clone(),
            None => {
                let s = score_responses(&self.items, &self.responses)?;
                self.cached_stats = Some(s.clone());
                s
            }
        };
        let classes = component_classes(&self.labels);
        let mut by_class = BTreeMap::new();
        for class in classes.values() {
            *by_class.entry(*class).or_insert(0) += 1;
        }
        Ok(StatsView {
            intruder,
            labels: LabelCoverage {
                n_components: self.profiles.len(),
                n_labels: self.labels.len(),
                labeled_components: classes.len(),
                by_class,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component_id: usize,
    pub n_dominant: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub one_sidedness: Option<f64>,
    pub dominant_direction: Option<Direction>,
    pub preview_positive: Vec<String>,
    pub preview_negative: Vec<String>,
    pub n_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDetail {
    pub profile: ComponentProfile,
    pub dominant_tokens: Vec<String>,
    pub labels: Vec<ComponentLabel>,
}

type Shared = Arc<Mutex<Campaign>>;

fn lock(state: &Shared) -> std::sync::MutexGuard<'_, Campaign> {
    state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

async fn list_components(State(state): State<Shared>) -> Json<Vec<ComponentSummary>> {
    let campaign = lock(&state);
    let mut label_counts: HashMap<usize, usize> = HashMap::new();
    for label in effective_labels(&campaign.labels) {
        *label_counts.entry(label.component_id).or_default() += 1;
    }
    let preview = |words: &[analysis::ScoredWord]| words.iter().take(10).map(|w| w.token.clone()).collect();
    Json(
        campaign
            .profiles
            .iter()
            .map(|p| ComponentSummary {
                component_id: p.component_id,
                n_dominant: p.dominant_words.len(),
                n_positive: p.n_positive,
                n_negative: p.n_negative,
                one_sidedness: p.one_sidedness,
                dominant_direction: p.dominant_direction,
                preview_positive: preview(&p.top_positive),
                preview_negative: preview(&p.top_negative),
                n_labels: label_counts.get(&p.component_id).copied().unwrap_or(0),
            })
            .collect(),
    )
}

async fn component_detail(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<usize>,
) -> std::result::Result<Json<ComponentDetail>, Rejection> {
    let campaign = lock(&state);
    let profile = campaign
        .profiles
        .get(id)
        .cloned()
        .ok_or_else(|| Rejection::NotFound(format!("unknown component {id}")))?;
    let dominant_tokens = profile
        .dominant_words
        .iter()
        .map(|&w| campaign.vocab_tokens[w].clone())
        .collect();
    let labels = effective_labels(&campaign.labels)
        .into_iter()
        .filter(|l| l.component_id == id)
        .cloned()
        .collect();
    Ok(Json(ComponentDetail {
        profile,
        dominant_tokens,
        labels,
    }))
}

async fn post_label(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    Json(sub): Json<LabelSubmission>,
) -> std::result::Result<Json<ComponentLabel>, Rejection> {
    lock(&state).submit_label(id, sub).map(Json)
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_item(
    State(state): State<Shared>,
    Query(q): Query<NextQuery>,
) -> std::result::Result<Json<ItemPresentation>, Rejection> {
    lock(&state).next_item(&q.annotator).map(Json)
}

async fn post_response(
    State(state): State<Shared>,
    Json(sub): Json<ResponseSubmission>,
) -> std::result::Result<Json<serde_json::Value>, Rejection> {
    let record = lock(&state).submit_response(sub)?;
    Ok(Json(serde_json::json!({ "ok": true, "item_id": record.item_id })))
}

async fn get_stats(State(state): State<Shared>) -> std::result::Result<Json<StatsView>, Rejection> {
    lock(&state)
        .stats()
        .map(Json)
        .map_err(|e| Rejection::Internal(e.to_string()))
}

/// Routes for the JSON API, plus static files from `ui_dir` at `/` when
/// given.
pub fn router(campaign: Campaign, ui_dir: Option<&Path>) -> Router {
    let state: Shared = Arc::new(Mutex::new(campaign));
    let api = Router::new()
        .route("/api/components", get(list_components))
        .route("/api/components/{id}", get(component_detail))
        .route("/api/components/{id}/label", post(post_label))
        .route("/api/intruder/next", get(next_item))
        .route("/api/intruder/response", post(post_response))
        .route("/api/stats", get(get_stats))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async {
            (StatusCode::NOT_FOUND, "annotation UI bundle is not installed")
        }),
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub model_dir: PathBuf,
    pub items_file: PathBuf,
    pub store_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub ui_dir: Option<PathBuf>,
}

/// Loads the model and items and replays the store.
pub fn open_campaign(config: &ServeConfig) -> Result<Campaign> {
    let model = load_model(&config.model_dir)?;
    let items = ItemSet::load(&config.items_file)?;
    let c = model.n_components();
    if let Some(item) = items.items.iter().find(|i| i.component_id >= c || i.intruder_component >= c) {
        return Err(Error::InvalidArgument(format!(
            "item {} refers to a component outside the model (C = {c})",
            item.item_id
        )));
    }
    let profiles = analysis::profiles(model.s.view(), &model.vocab, DEFAULT_TOP_K);
    Campaign::open(items, profiles, model.vocab.tokens().to_vec(), &config.store_dir)
}

/// Runs the service until Ctrl-C. The bound address is reported on stderr
/// as `listening on http://ADDR`.
pub async fn serve(config: ServeConfig) -> Result<()> {
    let campaign = open_campaign(&config)?;
    let ui_dir = config.ui_dir.as_deref().filter(|d| d.is_dir());
    if config.ui_dir.is_some() && ui_dir.is_none() {
        log::warn!("UI directory {:?} not found; serving the API only", config.ui_dir);
    }
    let app = router(campaign, ui_dir);
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::io(PathBuf::from(&addr), e))?;
    let local: SocketAddr = listener.local_addr().map_err(|e| Error::io(PathBuf::from(&addr), e))?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(PathBuf::from(&addr), e))
}
