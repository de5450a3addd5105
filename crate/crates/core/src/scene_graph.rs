//! Object tracks and relation edges: voting association, EMA pooling of
//! embeddings, caption history and consolidation, visibility bookkeeping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendClient, BackendError, BackendRequest, BackendResponse};
use crate::error::{Error, Result};
use crate::geometry::{geometric_overlap, voxel_downsample, BBox, CloudSummary, PointCloud};
use crate::ids::{FrameId, TrackId};

/// Every third processed keyframe triggers relation discovery.
pub const EDGE_DISCOVERY_INTERVAL: usize = 3;

/// Unit-norm tolerance for pooled embeddings.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Visual,
    Language,
}

/// Unit-length feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    kind: EmbeddingKind,
    vector: Vec<f64>,
}

impl Embedding {
    /// Normalizes `vector`; zero or non-finite input is rejected.
    pub fn new(kind: EmbeddingKind, vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() || vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("embedding must be a non-empty finite vector"));
        }
        let norm = libm::sqrt(vector.iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            return Err(Error::contract("embedding has zero norm"));
        }
        Ok(Embedding {
            kind,
            vector: vector.into_iter().map(|x| x / norm).collect(),
        })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() || self.kind != other.kind {
            return Err(Error::contract(format!(
                "embedding mismatch: {:?}/{} vs {:?}/{}",
                self.kind,
                self.dim(),
                other.kind,
                other.dim()
            )));
        }
        Ok(self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum())
    }

    /// `normalize(alpha * new + (1 - alpha) * self)`.
    pub fn ema(&self, new: &Embedding, alpha: f64) -> Result<Embedding> {
        self.cosine(new)?;
        let mixed: Vec<f64> = self
            .vector
            .iter()
            .zip(&new.vector)
            .map(|(old, n)| alpha * n + (1.0 - alpha) * old)
            .collect();
        // Antipodal inputs at alpha = 0.5 cancel; keep the newer direction.
        Embedding::new(self.kind, mixed).or_else(|_| Ok(new.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: FrameId,
    pub bbox: BBox,
    pub caption: String,
    pub cloud: PointCloud,
    pub visual: Embedding,
    pub language: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub cloud: PointCloud,
    /// Kept in sync with `cloud`; the only geometry left after a
    /// geometry-light reload.
    pub summary: CloudSummary,
    pub visual: Option<Embedding>,
    pub language: Option<Embedding>,
    pub caption: String,
    pub caption_history: Vec<String>,
    pub room_id: Option<u32>,
    pub floor_id: Option<u32>,
    /// Ordered set of frames the object was seen in.
    pub visible_frames: Vec<FrameId>,
    pub frame_boxes: BTreeMap<FrameId, BBox>,
}

impl Track {
    pub fn from_detection(id: TrackId, d: &Detection) -> Track {
        let mut frame_boxes = BTreeMap::new();
        frame_boxes.insert(d.frame_id, d.bbox);
        Track {
            id,
            summary: d.cloud.summary(),
            cloud: d.cloud.clone(),
            visual: Some(d.visual.clone()),
            language: Some(d.language.clone()),
            caption: d.caption.clone(),
            caption_history: alloc::vec![d.caption.clone()],
            room_id: None,
            floor_id: None,
            visible_frames: alloc::vec![d.frame_id],
            frame_boxes,
        }
    }

    pub fn set_cloud(&mut self, cloud: PointCloud) {
        self.summary = cloud.summary();
        self.cloud = cloud;
    }

    pub fn is_visible_in(&self, frame: FrameId) -> bool {
        self.visible_frames.contains(&frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    OnTopOf,
    SubpartOf,
    ContainedIn,
    AttachedTo,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::OnTopOf,
        Relation::SubpartOf,
        Relation::ContainedIn,
        Relation::AttachedTo,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Relation::OnTopOf => "on_top_of",
            Relation::SubpartOf => "subpart_of",
            Relation::ContainedIn => "contained_in",
            Relation::AttachedTo => "attached_to",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Relation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::contract(format!("unknown relation label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationEdge {
    pub subject_id: TrackId,
    pub object_id: TrackId,
    pub relation: Relation,
    pub justification: String,
    pub source_frame: FrameId,
}

impl RelationEdge {
    pub fn key(&self) -> (TrackId, TrackId, Relation) {
        (self.subject_id, self.object_id, self.relation)
    }
}

/// An edge as proposed by a model, before label and id checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeProposal {
    pub subject_id: TrackId,
    pub object_id: TrackId,
    pub relation: String,
    pub justification: String,
    pub source_frame: FrameId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeRejection {
    UnknownSubject,
    UnknownObject,
    SelfLoop,
    UnknownRelation,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeReport {
    pub accepted: Vec<RelationEdge>,
    pub rejected: Vec<(EdgeProposal, EdgeRejection)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    pub tau_v: f64,
    pub tau_l: f64,
    pub tau_g: f64,
    pub delta_g: f64,
    pub vote_min: u8,
    pub alpha: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            tau_v: 0.7,
            tau_l: 0.8,
            tau_g: 0.4,
            delta_g: 0.05,
            vote_min: 2,
            alpha: 0.5,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !(unit.contains(&self.tau_v) && unit.contains(&self.tau_l) && unit.contains(&self.tau_g)) {
            return Err(Error::contract("association thresholds must lie in [0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::contract("alpha must lie in (0, 1]"));
        }
        if !(1..=3).contains(&self.vote_min) {
            return Err(Error::contract("vote_min must be 1, 2 or 3"));
        }
        if !(self.delta_g > 0.0) {
            return Err(Error::contract("delta_g must be positive"));
        }
        Ok(())
    }
}

/// The three indicators of the association vote.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub visual: bool,
    pub language: bool,
    pub geometric: bool,
    pub overlap: f64,
}

impl Vote {
    pub fn score(&self) -> u8 {
        self.visual as u8 + self.language as u8 + self.geometric as u8
    }
}

/// Evaluates the three strict-threshold indicators for `d` against `t`.
///
/// A track without a pooled embedding of some kind (geometry-light reload)
/// votes 0 on that indicator.
pub fn vote(d: &Detection, t: &Track, cfg: &AssociationConfig) -> Result<Vote> {
    let visual = match &t.visual {
        Some(v) => d.visual.cosine(v)? > cfg.tau_v,
        None => false,
    };
    let language = match &t.language {
        Some(l) => d.language.cosine(l)? > cfg.tau_l,
        None => false,
    };
    let overlap = geometric_overlap(&d.cloud, &t.cloud, cfg.delta_g)?;
    Ok(Vote {
        visual,
        language,
        geometric: overlap > cfg.tau_g,
        overlap,
    })
}

pub fn vote_score(d: &Detection, t: &Track, cfg: &AssociationConfig) -> Result<u8> {
    vote(d, t, cfg).map(|v| v.score())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Track(TrackId),
    New,
}

/// Greedy one-to-one matching of one frame's detections to tracks.
///
/// Candidates with a vote of at least `vote_min` are taken in order of
/// descending vote, descending overlap, ascending track id and ascending
/// detection index.
pub fn associate<'a>(
    detections: &[Detection],
    tracks: impl IntoIterator<Item = &'a Track>,
    cfg: &AssociationConfig,
) -> Result<Vec<Assignment>> {
    let tracks: Vec<&Track> = tracks.into_iter().collect();
    let mut candidates = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        for t in &tracks {
            let v = vote(d, t, cfg)?;
            if v.score() >= cfg.vote_min {
                candidates.push((v.score(), v.overlap, t.id, di));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| b.1.total_cmp(&a.1))
            .then_with(|| a.2.cmp(&b.2))
            .then_with(|| a.3.cmp(&b.3))
    });
    let mut out = alloc::vec![Assignment::New; detections.len()];
    let mut taken: Vec<TrackId> = Vec::new();
    for (_, _, tid, di) in candidates {
        if out[di] == Assignment::New && !taken.contains(&tid) {
            out[di] = Assignment::Track(tid);
            taken.push(tid);
        }
    }
    Ok(out)
}

/// Folds a matched detection into its track.
pub fn merge_detection(t: &Track, d: &Detection, cfg: &AssociationConfig, voxel: f64) -> Result<Track> {
    let mut out = t.clone();
    out.visual = Some(match &t.visual {
        Some(v) => v.ema(&d.visual, cfg.alpha)?,
        None => d.visual.clone(),
    });
    out.language = Some(match &t.language {
        Some(l) => l.ema(&d.language, cfg.alpha)?,
        None => d.language.clone(),
    });
    let mut cloud = t.cloud.clone();
    cloud.extend(&d.cloud);
    out.set_cloud(voxel_downsample(&cloud, voxel)?);
    out.caption_history.push(d.caption.clone());
    if !out.visible_frames.contains(&d.frame_id) {
        out.visible_frames.push(d.frame_id);
    }
    out.frame_boxes.insert(d.frame_id, d.bbox);
    Ok(out)
}

pub fn edge_discovery_due(frame_index: usize) -> bool {
    frame_index % EDGE_DISCOVERY_INTERVAL == 0
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    tracks: BTreeMap<TrackId, Track>,
    edges: Vec<RelationEdge>,
    next_id: u32,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    pub fn track(&self, id: TrackId) -> Option<&Track> {
        self.tracks.get(&id)
    }

    pub fn track_mut(&mut self, id: TrackId) -> Option<&mut Track> {
        self.tracks.get_mut(&id)
    }

    pub fn contains(&self, id: TrackId) -> bool {
        self.tracks.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn track_ids(&self) -> Vec<TrackId> {
        self.tracks.keys().copied().collect()
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    /// Creates a track for an unmatched detection.
    pub fn insert_detection(&mut self, d: &Detection) -> TrackId {
        let id = TrackId(self.next_id);
        self.next_id += 1;
        self.tracks.insert(id, Track::from_detection(id, d));
        id
    }

    /// Inserts a fully formed track (reload paths); ids must be fresh.
    pub fn insert_track(&mut self, track: Track) -> Result<()> {
        if self.tracks.contains_key(&track.id) {
            return Err(Error::invariant(format!("duplicate track id {}", track.id)));
        }
        self.next_id = self.next_id.max(track.id.0 + 1);
        self.tracks.insert(track.id, track);
        Ok(())
    }

    pub fn replace_track(&mut self, track: Track) -> Result<()> {
        match self.tracks.get_mut(&track.id) {
            Some(slot) => {
                *slot = track;
                Ok(())
            }
            None => Err(Error::contract(format!("unknown track {}", track.id))),
        }
    }

    pub fn set_next_id(&mut self, next: u32) {
        self.next_id = self.next_id.max(next);
    }

    /// Inserts proposals that pass the label, id and duplicate checks.
    pub fn add_edges(&mut self, proposals: impl IntoIterator<Item = EdgeProposal>) -> EdgeReport {
        let mut report = EdgeReport::default();
        for p in proposals {
            let relation = match p.relation.parse::<Relation>() {
                Ok(r) => r,
                Err(_) => {
                    report.rejected.push((p, EdgeRejection::UnknownRelation));
                    continue;
                }
            };
            let why = if !self.contains(p.subject_id) {
                Some(EdgeRejection::UnknownSubject)
            } else if !self.contains(p.object_id) {
                Some(EdgeRejection::UnknownObject)
            } else if p.subject_id == p.object_id {
                Some(EdgeRejection::SelfLoop)
            } else {
                None
            };
            if let Some(why) = why {
                report.rejected.push((p, why));
                continue;
            }
            let edge = RelationEdge {
                subject_id: p.subject_id,
                object_id: p.object_id,
                relation,
                justification: p.justification.clone(),
                source_frame: p.source_frame,
            };
            if self.edges.iter().any(|e| e.key() == edge.key()) {
                report.rejected.push((p, EdgeRejection::Duplicate));
                continue;
            }
            self.edges.push(edge.clone());
            report.accepted.push(edge);
        }
        report
    }

    /// Edges in `(subject, object, relation)` order.
    pub fn sorted_edges(&self) -> Vec<&RelationEdge> {
        let mut e: Vec<&RelationEdge> = self.edges.iter().collect();
        e.sort_by(|a, b| a.key().cmp(&b.key()).then(Ordering::Equal));
        e
    }
}

/// Compresses a long caption history into one sentence.
///
/// Returns whether consolidation happened. On backend failure the track is
/// left untouched and the error is returned.
pub fn consolidate_captions(
    track: &mut Track,
    client: &mut BackendClient,
    threshold: usize,
) -> core::result::Result<bool, BackendError> {
    if track.caption_history.len() < threshold.max(2) {
        if let [only] = track.caption_history.as_slice() {
            track.caption = only.clone();
        }
        return Ok(false);
    }
    let req = BackendRequest::consolidate(&track.caption_history);
    match client.call(&req)? {
        BackendResponse::Consolidate(sentence) => {
            track.caption = sentence.clone();
            track.caption_history = alloc::vec![sentence];
            Ok(true)
        }
        _ => Err(BackendError::schema("$", "expected a consolidate response")),
    }
}
