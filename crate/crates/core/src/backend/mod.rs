//! Wire protocol for every model-dependent request (detection, relations,
//! caption consolidation, frame analysis, field-of-view tags, room scoring,
//! reasoning) and the validating client that sits in front of a transport.
//!
//! A transport returns raw JSON; [`BackendClient::call`] validates it into a
//! [`BackendResponse`] before anything else sees it.

mod scripted;
mod validate;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::api::ApiCall;
use crate::geometry::{BBox, MaskRun};
use crate::ids::{FrameId, TrackId};
use crate::scene_graph::{Embedding, EmbeddingKind, Relation};

pub use scripted::{
    DetectorNoise, FrameTruth, ObjectTruth, OracleQuestion, ReasonScript, RelationTruth, SceneTruth,
    ScriptedBackend, ScriptedFile, VisibleObject,
};
pub use validate::{validate_response, FrameBounds, BBOX_CLAMP_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Detect,
    Relations,
    Consolidate,
    Analyze,
    Fov,
    Reason,
    Classify,
}

impl RequestKind {
    pub const ALL: [RequestKind; 7] = [
        RequestKind::Detect,
        RequestKind::Relations,
        RequestKind::Consolidate,
        RequestKind::Analyze,
        RequestKind::Fov,
        RequestKind::Reason,
        RequestKind::Classify,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RequestKind::Detect => "detect",
            RequestKind::Relations => "relations",
            RequestKind::Consolidate => "consolidate",
            RequestKind::Analyze => "analyze",
            RequestKind::Fov => "fov",
            RequestKind::Reason => "reason",
            RequestKind::Classify => "classify",
        }
    }

    /// HTTP path of the endpoint serving this kind.
    pub fn endpoint(&self) -> String {
        format!("/{}", self.name())
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("backend cannot serve request: {0}")]
    Unavailable(String),
}

impl BackendError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        BackendError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Only transport-level failures are worth a second attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<FrameId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub payload: Value,
}

/// Node reference inside frame-bound payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleNode {
    pub node_id: TrackId,
    pub bbox: BBox,
    pub caption: String,
}

fn bbox_json(b: &BBox) -> Value {
    json!([b.u_min, b.v_min, b.u_max, b.v_max])
}

fn nodes_json(nodes: &[VisibleNode]) -> Value {
    Value::Array(
        nodes
            .iter()
            .map(|n| json!({"node_id": n.node_id.0, "bbox": bbox_json(&n.bbox), "caption": n.caption}))
            .collect(),
    )
}

/// Identifies the image a frame-bound request is about.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContext<'a> {
    pub frame_id: FrameId,
    pub image: &'a str,
    pub width: u32,
    pub height: u32,
}

impl FrameContext<'_> {
    fn base(&self) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("image".into(), Value::String(self.image.to_string()));
        m.insert("image_size".into(), json!([self.width, self.height]));
        m
    }
}

/// Everything the reasoner sees on one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonPayload {
    pub question: String,
    /// Canonical SSM text.
    pub ssm: String,
    /// Frame memory as `(frame id, image locator)` in memory order.
    pub frames: Vec<(FrameId, String)>,
    pub history: Vec<ApiCall>,
    pub calls_used: usize,
    pub calls_remaining: usize,
    pub force_answer: bool,
    pub turn: usize,
    pub api_mode: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl BackendRequest {
    pub fn detect(frame: &FrameContext<'_>, query: Option<&str>) -> Self {
        BackendRequest {
            kind: RequestKind::Detect,
            frame_id: Some(frame.frame_id),
            query: query.map(ToString::to_string),
            payload: Value::Object(frame.base()),
        }
    }

    pub fn relations(frame: &FrameContext<'_>, visible: &[VisibleNode]) -> Self {
        let mut p = frame.base();
        p.insert("visible".into(), nodes_json(visible));
        BackendRequest {
            kind: RequestKind::Relations,
            frame_id: Some(frame.frame_id),
            query: None,
            payload: Value::Object(p),
        }
    }

    pub fn consolidate(captions: &[String]) -> Self {
        BackendRequest {
            kind: RequestKind::Consolidate,
            frame_id: None,
            query: None,
            payload: json!({ "captions": captions }),
        }
    }

    pub fn analyze_frame(frame: &FrameContext<'_>, query: &str, known: &[VisibleNode]) -> Self {
        let mut p = frame.base();
        p.insert("mode".into(), Value::String("frame".into()));
        p.insert("known".into(), nodes_json(known));
        BackendRequest {
            kind: RequestKind::Analyze,
            frame_id: Some(frame.frame_id),
            query: Some(query.to_string()),
            payload: Value::Object(p),
        }
    }

    pub fn analyze_node(frame: &FrameContext<'_>, query: &str, node: &VisibleNode) -> Self {
        let mut p = frame.base();
        p.insert("mode".into(), Value::String("node".into()));
        p.insert("node_id".into(), json!(node.node_id.0));
        p.insert("bbox".into(), bbox_json(&node.bbox));
        p.insert("caption".into(), Value::String(node.caption.clone()));
        BackendRequest {
            kind: RequestKind::Analyze,
            frame_id: Some(frame.frame_id),
            query: Some(query.to_string()),
            payload: Value::Object(p),
        }
    }

    pub fn fov(frame: &FrameContext<'_>, visible_captions: &[String]) -> Self {
        let mut p = frame.base();
        p.insert("visible_captions".into(), json!(visible_captions));
        BackendRequest {
            kind: RequestKind::Fov,
            frame_id: Some(frame.frame_id),
            query: None,
            payload: Value::Object(p),
        }
    }

    pub fn classify(captions: &[String], classes: &[String]) -> Self {
        BackendRequest {
            kind: RequestKind::Classify,
            frame_id: None,
            query: None,
            payload: json!({ "captions": captions, "classes": classes }),
        }
    }

    pub fn reason(payload: &ReasonPayload) -> Self {
        BackendRequest {
            kind: RequestKind::Reason,
            frame_id: None,
            query: Some(payload.question.clone()),
            payload: serde_json::to_value(payload).unwrap_or(Value::Null),
        }
    }

    /// Image bounds carried by frame-bound payloads.
    pub fn frame_bounds(&self) -> Option<FrameBounds> {
        let size = self.payload.get("image_size")?.as_array()?;
        Some(FrameBounds {
            width: size.first()?.as_u64()? as u32,
            height: size.get(1)?.as_u64()? as u32,
        })
    }

    /// SHA-256 over the compact JSON form (keys are sorted by `serde_json`).
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One detected or discovered object as reported by a model.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectItem {
    pub bbox: BBox,
    pub caption: String,
    pub mask: Option<Vec<MaskRun>>,
    pub visual: Option<Vec<f64>>,
    pub language: Option<Vec<f64>>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationItem {
    pub subject_id: TrackId,
    pub object_id: TrackId,
    pub relation: Relation,
    pub justification: String,
}

/// Endpoint of a relation returned by frame analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemRef {
    /// An existing scene-graph node.
    Node(TrackId),
    /// The n-th newly discovered item of the same response or patch.
    Item(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeRelation {
    pub subject: ItemRef,
    pub object: ItemRef,
    pub relation: Relation,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyzeItem {
    Known { node_id: TrackId, note: String },
    New(DetectItem),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalyzeResult {
    pub items: Vec<AnalyzeItem>,
    pub relations: Vec<AnalyzeRelation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoteRef {
    pub node_id: TrackId,
    pub note_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: String,
    pub evidence_frames: Vec<FrameId>,
    pub evidence_notes: Vec<NoteRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReasonDecision {
    Action(ApiCall),
    Final(FinalAnswer),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendResponse {
    Detect(Vec<DetectItem>),
    Relations(Vec<RelationItem>),
    Consolidate(String),
    Analyze(AnalyzeResult),
    Fov(String),
    Reason(ReasonDecision),
    Classify(Vec<f64>),
}

/// Moves requests to a model server and back as raw JSON.
pub trait Transport {
    fn send(&mut self, request: &BackendRequest) -> Result<Value, BackendError>;
}

/// One request/response pair as seen on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub request: BackendRequest,
    pub response: Result<Value, BackendError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KindStats {
    pub requests: usize,
    pub failures: usize,
}

/// Validating front end of a transport: one retry on transport errors,
/// none on schema errors.
pub struct BackendClient {
    transport: Box<dyn Transport>,
    stats: BTreeMap<RequestKind, KindStats>,
    recording: Option<Vec<Exchange>>,
}

impl BackendClient {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Self::from_box(Box::new(transport))
    }

    pub fn from_box(transport: Box<dyn Transport>) -> Self {
        BackendClient {
            transport,
            stats: BTreeMap::new(),
            recording: None,
        }
    }

    /// Starts keeping every wire exchange.
    pub fn start_recording(&mut self) {
        self.recording = Some(Vec::new());
    }

    pub fn take_recording(&mut self) -> Vec<Exchange> {
        self.recording.take().unwrap_or_default()
    }

    pub fn stats(&self, kind: RequestKind) -> KindStats {
        self.stats.get(&kind).copied().unwrap_or_default()
    }

    pub fn reset_stats(&mut self) {
        self.stats.clear();
    }

    fn send_once(&mut self, request: &BackendRequest) -> Result<Value, BackendError> {
        let res = self.transport.send(request);
        let s = self.stats.entry(request.kind).or_default();
        s.requests += 1;
        if res.is_err() {
            s.failures += 1;
        }
        if let Some(rec) = &mut self.recording {
            rec.push(Exchange {
                request: request.clone(),
                response: res.clone(),
            });
        }
        res
    }

    pub fn call(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let raw = match self.send_once(request) {
            Err(e) if e.is_retryable() => self.send_once(request)?,
            other => other?,
        };
        validate_response(request.kind, &raw, request.frame_bounds())
    }
}

/// Replays recorded exchanges, matching requests by digest in order.
pub struct ReplayTransport {
    queue: BTreeMap<String, Vec<Result<Value, BackendError>>>,
}

impl ReplayTransport {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        let mut queue: BTreeMap<String, Vec<Result<Value, BackendError>>> = BTreeMap::new();
        for ex in exchanges.into_iter().rev() {
            queue.entry(ex.request.digest()).or_default().push(ex.response);
        }
        ReplayTransport { queue }
    }
}

impl Transport for ReplayTransport {
    fn send(&mut self, request: &BackendRequest) -> Result<Value, BackendError> {
        self.queue
            .get_mut(&request.digest())
            .and_then(Vec::pop)
            .unwrap_or_else(|| Err(BackendError::Unavailable("request not in recording".into())))
    }
}

/// Deterministic bag-of-words embedding used when a model supplies none.
pub fn fallback_embedding(text: &str, kind: EmbeddingKind, dim: usize) -> Embedding {
    let dim = dim.max(1);
    let mut v = alloc::vec![0.0f64; dim];
    let salt: &[u8] = match kind {
        EmbeddingKind::Visual => b"visual:",
        EmbeddingKind::Language => b"language:",
    };
    let lower = text.to_lowercase();
    let mut tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        tokens.push("");
    }
    for t in tokens {
        let h = Sha256::new().chain_update(salt).chain_update(t.as_bytes()).finalize();
        let idx = u64::from_le_bytes(h[..8].try_into().unwrap_or([0; 8])) as usize % dim;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    // Non-zero by construction.
    Embedding::new(kind, v).expect("fallback embedding is non-zero")
}
