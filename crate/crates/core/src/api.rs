//! The three memory-editing APIs and atomic patch application.
//!
//! Each API turns one backend exchange about one frame into a [`Patch`];
//! [`apply_patch`] folds a patch into the memory all-or-nothing.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{
    AnalyzeItem, BackendClient, BackendRequest, BackendResponse, FrameContext, ItemRef, VisibleNode,
};
use crate::canonical::Canon;
use crate::config::EngineConfig;
use crate::episode::{Episode, Keyframe};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::ids::{FrameId, TrackId};
use crate::memory::{EpisodeMeta, Note, Ssm};
use crate::pipeline::{make_detection, place_track};
use crate::scene_graph::{associate, merge_detection, Assignment, Detection, EdgeProposal, EdgeReport, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiKind {
    FindObjects,
    AnalyzeObjects,
    AnalyzeFrame,
}

impl ApiKind {
    pub const ALL: [ApiKind; 3] = [ApiKind::FindObjects, ApiKind::AnalyzeObjects, ApiKind::AnalyzeFrame];

    pub fn name(&self) -> &'static str {
        match self {
            ApiKind::FindObjects => "find_objects",
            ApiKind::AnalyzeObjects => "analyze_objects",
            ApiKind::AnalyzeFrame => "analyze_frame",
        }
    }

    pub fn parse(s: &str) -> Option<ApiKind> {
        ApiKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A reasoner's request to edit memory through one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCall {
    #[serde(rename = "api")]
    pub kind: ApiKind,
    pub frame_id: FrameId,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_ids: Option<Vec<TrackId>>,
}

impl ApiCall {
    pub fn new(kind: ApiKind, frame_id: FrameId, query: impl Into<String>) -> Self {
        ApiCall {
            kind,
            frame_id,
            query: query.into(),
            node_ids: None,
        }
    }

    pub fn analyze_objects(frame_id: FrameId, query: impl Into<String>, nodes: Vec<TrackId>) -> Self {
        ApiCall {
            kind: ApiKind::AnalyzeObjects,
            frame_id,
            query: query.into(),
            node_ids: Some(nodes),
        }
    }

    pub fn validate(&self, episode: &EpisodeMeta) -> Result<()> {
        if !episode.contains(self.frame_id) {
            return Err(Error::contract(format!("frame {} is not in the episode", self.frame_id)));
        }
        if self.query.trim().is_empty() {
            return Err(Error::contract("query is empty"));
        }
        match (self.kind, &self.node_ids) {
            (ApiKind::AnalyzeObjects, Some(ids)) if !ids.is_empty() => Ok(()),
            (ApiKind::AnalyzeObjects, _) => Err(Error::contract("analyze_objects needs node ids")),
            (_, Some(_)) => Err(Error::contract("node ids are only allowed for analyze_objects")),
            (_, None) => Ok(()),
        }
    }

    pub fn to_canon(&self) -> Canon {
        let mut b = Canon::object()
            .field("api", Canon::str(self.kind.name()))
            .field("frame_id", Canon::Int(self.frame_id.0 as i64))
            .field("query", Canon::str(&self.query));
        if let Some(ids) = &self.node_ids {
            b = b.field("node_ids", Canon::Array(ids.iter().map(|i| Canon::Int(i.0 as i64)).collect()));
        }
        b.build()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchNote {
    /// An existing node or the n-th detection of the same patch.
    pub target: ItemRef,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEdge {
    pub subject: ItemRef,
    pub object: ItemRef,
    pub relation: Relation,
    pub justification: String,
}

/// One memory edit produced by an API call.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub call: ApiCall,
    pub detections: Vec<Detection>,
    pub edges: Vec<PatchEdge>,
    pub notes: Vec<PatchNote>,
    pub evidence: Vec<(FrameId, BBox)>,
    /// Height of the camera that saw the frame; used to place new tracks.
    pub camera_height: Option<f64>,
    /// Listed nodes that do not exist.
    pub skipped_nodes: Vec<TrackId>,
    /// Backend failure that emptied the patch.
    pub failure: Option<String>,
}

impl Patch {
    pub fn empty(call: ApiCall) -> Self {
        Patch {
            call,
            detections: Vec::new(),
            edges: Vec::new(),
            notes: Vec::new(),
            evidence: Vec::new(),
            camera_height: None,
            skipped_nodes: Vec::new(),
            failure: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty() && self.edges.is_empty() && self.notes.is_empty()
    }

    fn failed(call: ApiCall, why: impl ToString) -> Self {
        let mut p = Patch::empty(call);
        p.failure = Some(why.to_string());
        p
    }

    /// Loggable canonical form; clouds appear as summaries.
    pub fn to_canon(&self) -> Canon {
        let item = |r: &ItemRef| match r {
            ItemRef::Node(id) => Canon::object().field("node", Canon::Int(id.0 as i64)).build(),
            ItemRef::Item(i) => Canon::object().field("item", Canon::Int(*i as i64)).build(),
        };
        let bbox = |b: &BBox| {
            Canon::Array(
                [b.u_min, b.v_min, b.u_max, b.v_max]
                    .iter()
                    .map(|x| Canon::Int(*x as i64))
                    .collect(),
            )
        };
        let detections = self
            .detections
            .iter()
            .map(|d| {
                let s = d.cloud.summary();
                Canon::object()
                    .field("frame_id", Canon::Int(d.frame_id.0 as i64))
                    .field("caption", Canon::str(&d.caption))
                    .field("bbox", bbox(&d.bbox))
                    .field(
                        "cloud",
                        Canon::object()
                            .field("centroid", Canon::vec3(s.centroid))
                            .field("extent", Canon::vec3(s.extent))
                            .field("count", Canon::Int(s.count as i64))
                            .build(),
                    )
                    .build()
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                Canon::object()
                    .field("subject", item(&e.subject))
                    .field("object", item(&e.object))
                    .field("relation", Canon::str(e.relation.label()))
                    .field("justification", Canon::str(&e.justification))
                    .build()
            })
            .collect();
        let notes = self
            .notes
            .iter()
            .map(|n| {
                Canon::object()
                    .field("target", item(&n.target))
                    .field("text", Canon::str(&n.text))
                    .build()
            })
            .collect();
        let evidence = self
            .evidence
            .iter()
            .map(|(f, b)| {
                Canon::object()
                    .field("frame_id", Canon::Int(f.0 as i64))
                    .field("bbox", bbox(b))
                    .build()
            })
            .collect();
        Canon::object()
            .field("call", self.call.to_canon())
            .field("detections", Canon::Array(detections))
            .field("edges", Canon::Array(edges))
            .field("notes", Canon::Array(notes))
            .field("evidence", Canon::Array(evidence))
            .field(
                "skipped_nodes",
                Canon::Array(self.skipped_nodes.iter().map(|i| Canon::Int(i.0 as i64)).collect()),
            )
            .field("failure", Canon::opt(self.failure.as_ref(), Canon::str))
            .build()
    }
}

fn context(frame: &Keyframe) -> FrameContext<'_> {
    FrameContext {
        frame_id: frame.id,
        image: &frame.image,
        width: frame.intrinsics.width,
        height: frame.intrinsics.height,
    }
}

fn frame_of<'a>(call: &ApiCall, episode: &'a Episode) -> Result<&'a Keyframe> {
    episode
        .frame(call.frame_id)
        .ok_or_else(|| Error::contract(format!("frame {} is not in the episode", call.frame_id)))
}

/// Nodes whose recorded box places them in `frame`.
pub fn visible_nodes(ssm: &Ssm, frame: FrameId) -> Vec<VisibleNode> {
    ssm.graph()
        .tracks()
        .filter_map(|t| {
            t.frame_boxes.get(&frame).map(|b| VisibleNode {
                node_id: t.id,
                bbox: *b,
                caption: t.caption.clone(),
            })
        })
        .collect()
}

/// Adds new detections of `items`, remembering where each item landed.
fn push_items<'a>(
    patch: &mut Patch,
    items: impl IntoIterator<Item = &'a crate::backend::DetectItem>,
    frame: &Keyframe,
    cfg: &EngineConfig,
) -> Vec<Option<usize>> {
    let mut slots = Vec::new();
    for item in items {
        match make_detection(item, frame, cfg) {
            Ok(d) => {
                let idx = patch.detections.len();
                patch.evidence.push((frame.id, d.bbox));
                if let Some(note) = &item.note {
                    patch.notes.push(PatchNote {
                        target: ItemRef::Item(idx),
                        text: note.clone(),
                    });
                }
                patch.detections.push(d);
                slots.push(Some(idx));
            }
            Err(e) => {
                log::warn!("frame {}: dropping detection {:?}: {e}", frame.id, item.caption);
                slots.push(None);
            }
        }
    }
    slots
}

/// Detects instances relevant to the query that memory may be missing.
pub fn find_objects(call: &ApiCall, ssm: &Ssm, episode: &Episode, client: &mut BackendClient, cfg: &EngineConfig) -> Result<Patch> {
    call.validate(ssm.episode())?;
    let frame = frame_of(call, episode)?;
    let req = BackendRequest::detect(&context(frame), Some(&call.query));
    let items = match client.call(&req) {
        Ok(BackendResponse::Detect(items)) => items,
        Ok(_) => return Ok(Patch::failed(call.clone(), "unexpected response kind")),
        Err(e) => return Ok(Patch::failed(call.clone(), e)),
    };
    let mut patch = Patch::empty(call.clone());
    patch.camera_height = Some(frame.pose.translation.z);
    push_items(&mut patch, &items, frame, cfg);
    Ok(patch)
}

/// Answers the query about listed nodes seen in the frame; falls back to
/// [`find_objects`] when none of them is.
pub fn analyze_objects(
    call: &ApiCall,
    ssm: &Ssm,
    episode: &Episode,
    client: &mut BackendClient,
    cfg: &EngineConfig,
) -> Result<Patch> {
    call.validate(ssm.episode())?;
    let frame = frame_of(call, episode)?;
    let ids = call.node_ids.as_deref().unwrap_or_default();
    let mut skipped = Vec::new();
    let mut visible = Vec::new();
    for id in ids {
        match ssm.graph().track(*id) {
            None => skipped.push(*id),
            Some(t) => {
                if let Some(b) = t.frame_boxes.get(&frame.id) {
                    if !visible.iter().any(|v: &VisibleNode| v.node_id == *id) {
                        visible.push(VisibleNode {
                            node_id: *id,
                            bbox: *b,
                            caption: t.caption.clone(),
                        });
                    }
                }
            }
        }
    }
    if visible.is_empty() {
        let mut fallback = call.clone();
        fallback.kind = ApiKind::FindObjects;
        fallback.node_ids = None;
        let mut patch = find_objects(&fallback, ssm, episode, client, cfg)?;
        patch.call = call.clone();
        patch.skipped_nodes = skipped;
        return Ok(patch);
    }
    let mut patch = Patch::empty(call.clone());
    patch.camera_height = Some(frame.pose.translation.z);
    patch.skipped_nodes = skipped;
    let ctx = context(frame);
    let mut failures = Vec::new();
    for node in &visible {
        match client.call(&BackendRequest::analyze_node(&ctx, &call.query, node)) {
            Ok(BackendResponse::Analyze(res)) => {
                for item in res.items {
                    if let AnalyzeItem::Known { node_id, note } = item {
                        if node_id == node.node_id {
                            patch.notes.push(PatchNote {
                                target: ItemRef::Node(node_id),
                                text: note,
                            });
                        }
                    }
                }
                patch.evidence.push((frame.id, node.bbox));
            }
            Ok(_) => failures.push(format!("node {}: unexpected response kind", node.node_id)),
            Err(e) => failures.push(format!("node {}: {e}", node.node_id)),
        }
    }
    if !failures.is_empty() {
        patch.failure = Some(failures.join("; "));
    }
    Ok(patch)
}

/// Discovers new objects and annotates known ones in one request.
pub fn analyze_frame(call: &ApiCall, ssm: &Ssm, episode: &Episode, client: &mut BackendClient, cfg: &EngineConfig) -> Result<Patch> {
    call.validate(ssm.episode())?;
    let frame = frame_of(call, episode)?;
    let known = visible_nodes(ssm, frame.id);
    let req = BackendRequest::analyze_frame(&context(frame), &call.query, &known);
    let res = match client.call(&req) {
        Ok(BackendResponse::Analyze(res)) => res,
        Ok(_) => return Ok(Patch::failed(call.clone(), "unexpected response kind")),
        Err(e) => return Ok(Patch::failed(call.clone(), e)),
    };
    let mut patch = Patch::empty(call.clone());
    patch.camera_height = Some(frame.pose.translation.z);
    let new_items: Vec<_> = res
        .items
        .iter()
        .filter_map(|i| match i {
            AnalyzeItem::New(d) => Some(d),
            AnalyzeItem::Known { .. } => None,
        })
        .collect();
    let slots = push_items(&mut patch, new_items.iter().copied(), frame, cfg);
    for item in &res.items {
        if let AnalyzeItem::Known { node_id, note } = item {
            if ssm.graph().contains(*node_id) {
                patch.notes.push(PatchNote {
                    target: ItemRef::Node(*node_id),
                    text: note.clone(),
                });
                if let Some(b) = known.iter().find(|k| k.node_id == *node_id).map(|k| k.bbox) {
                    patch.evidence.push((frame.id, b));
                }
            } else {
                patch.skipped_nodes.push(*node_id);
            }
        }
    }
    let remap = |r: ItemRef| -> Option<ItemRef> {
        match r {
            ItemRef::Node(id) => Some(ItemRef::Node(id)),
            ItemRef::Item(i) => slots.get(i).copied().flatten().map(ItemRef::Item),
        }
    };
    for rel in res.relations {
        if let (Some(subject), Some(object)) = (remap(rel.subject), remap(rel.object)) {
            patch.edges.push(PatchEdge {
                subject,
                object,
                relation: rel.relation,
                justification: rel.justification,
            });
        }
    }
    Ok(patch)
}

/// Runs `call` through the API it names.
pub fn execute(call: &ApiCall, ssm: &Ssm, episode: &Episode, client: &mut BackendClient, cfg: &EngineConfig) -> Result<Patch> {
    match call.kind {
        ApiKind::FindObjects => find_objects(call, ssm, episode, client, cfg),
        ApiKind::AnalyzeObjects => analyze_objects(call, ssm, episode, client, cfg),
        ApiKind::AnalyzeFrame => analyze_frame(call, ssm, episode, client, cfg),
    }
}

/// Points at which [`apply_patch_with`] consults its fault hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyStage {
    /// Before folding in the n-th detection.
    Detection(usize),
    Edges,
    Notes,
    FrameMemory,
    NavLog,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchReport {
    /// Track each detection landed in, in detection order.
    pub landed: Vec<TrackId>,
    pub created: Vec<TrackId>,
    pub merged: Vec<TrackId>,
    pub edges: EdgeReport,
    /// Edges naming a detection index the patch does not have.
    pub unresolved_edges: usize,
    /// `(node, note index)` of every appended note.
    pub notes: Vec<(TrackId, usize)>,
    pub rejected_notes: Vec<String>,
    pub frame_appended: bool,
    pub skipped_nodes: Vec<TrackId>,
}

impl PatchReport {
    pub fn to_canon(&self) -> Canon {
        let ids = |v: &[TrackId]| Canon::Array(v.iter().map(|i| Canon::Int(i.0 as i64)).collect());
        Canon::object()
            .field("landed", ids(&self.landed))
            .field("created", ids(&self.created))
            .field("merged", ids(&self.merged))
            .field("edges_accepted", Canon::Int(self.edges.accepted.len() as i64))
            .field(
                "edges_rejected",
                Canon::Int((self.edges.rejected.len() + self.unresolved_edges) as i64),
            )
            .field(
                "notes",
                Canon::Array(
                    self.notes
                        .iter()
                        .map(|(n, i)| Canon::Array(alloc::vec![Canon::Int(n.0 as i64), Canon::Int(*i as i64)]))
                        .collect(),
                ),
            )
            .field(
                "rejected_notes",
                Canon::Array(self.rejected_notes.iter().map(Canon::str).collect()),
            )
            .field("frame_appended", Canon::Bool(self.frame_appended))
            .field("skipped_nodes", ids(&self.skipped_nodes))
            .build()
    }
}

pub fn apply_patch(ssm: &mut Ssm, patch: &Patch, cfg: &EngineConfig) -> Result<PatchReport> {
    apply_patch_with(ssm, patch, cfg, &mut |_| Ok(()))
}

/// Applies `patch` to a copy of the memory and swaps the copy in only if
/// every stage succeeds; `fault` may abort at any stage.
pub fn apply_patch_with(
    ssm: &mut Ssm,
    patch: &Patch,
    cfg: &EngineConfig,
    fault: &mut dyn FnMut(ApplyStage) -> Result<()>,
) -> Result<PatchReport> {
    let frame = patch.call.frame_id;
    if !ssm.episode().contains(frame) {
        return Err(Error::contract(format!("patch frame {frame} is not in the episode")));
    }
    let mut next = ssm.clone();
    let mut report = PatchReport {
        skipped_nodes: patch.skipped_nodes.clone(),
        ..PatchReport::default()
    };

    let assignments = associate(&patch.detections, next.graph().tracks(), &cfg.association)?;
    for (i, (d, a)) in patch.detections.iter().zip(assignments).enumerate() {
        fault(ApplyStage::Detection(i))?;
        let id = match a {
            Assignment::Track(id) => {
                let t = next
                    .graph()
                    .track(id)
                    .ok_or_else(|| Error::invariant(format!("matched track {id} vanished")))?;
                let merged = merge_detection(t, d, &cfg.association, cfg.voxel_size)?;
                next.graph_mut().replace_track(merged)?;
                report.merged.push(id);
                id
            }
            Assignment::New => {
                let id = next.create_track(d);
                if let Some(z) = patch.camera_height {
                    place_track(&mut next, id, z, cfg);
                }
                report.created.push(id);
                id
            }
        };
        report.landed.push(id);
    }

    fault(ApplyStage::Edges)?;
    let resolve = |r: ItemRef| -> Option<TrackId> {
        match r {
            ItemRef::Node(id) => Some(id),
            ItemRef::Item(i) => report.landed.get(i).copied(),
        }
    };
    let mut proposals = Vec::new();
    let mut unresolved = 0;
    for e in &patch.edges {
        match (resolve(e.subject), resolve(e.object)) {
            (Some(s), Some(o)) => proposals.push(EdgeProposal {
                subject_id: s,
                object_id: o,
                relation: e.relation.label().to_string(),
                justification: e.justification.clone(),
                source_frame: frame,
            }),
            _ => unresolved += 1,
        }
    }
    report.unresolved_edges = unresolved;
    report.edges = next.graph_mut().add_edges(proposals);

    fault(ApplyStage::Notes)?;
    for n in &patch.notes {
        let Some(node) = resolve(n.target).filter(|id| next.graph().contains(*id)) else {
            report.rejected_notes.push(format!("{:?}: no such node", n.target));
            continue;
        };
        let idx = next.add_note(
            node,
            Note {
                text: n.text.clone(),
                source_api: patch.call.kind,
                query: patch.call.query.clone(),
                evidence_frame: frame,
            },
        )?;
        report.notes.push((node, idx));
    }

    fault(ApplyStage::FrameMemory)?;
    report.frame_appended = next.append_frame(frame)?;

    fault(ApplyStage::NavLog)?;
    if let Some(entry) = next.nav_entry_mut(frame) {
        for id in &report.landed {
            entry.add_visible(*id);
        }
    }

    next.check_invariants()?;
    *ssm = next;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn call_json_uses_api_field() {
        let c = ApiCall::analyze_objects(FrameId(3), "color", alloc::vec![TrackId(1)]);
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["api"], "analyze_objects");
        assert_eq!(v["node_ids"][0], 1);
        let back: ApiCall = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn node_ids_only_for_analyze_objects() {
        let meta = EpisodeMeta {
            scene_id: "s".into(),
            k: 1,
            frames: alloc::vec![crate::memory::FrameRef {
                id: FrameId(0),
                image: "a".into()
            }],
        };
        assert!(ApiCall::new(ApiKind::AnalyzeFrame, FrameId(0), "q").validate(&meta).is_ok());
        assert!(ApiCall::new(ApiKind::AnalyzeObjects, FrameId(0), "q").validate(&meta).is_err());
        assert!(ApiCall::new(ApiKind::AnalyzeFrame, FrameId(1), "q").validate(&meta).is_err());
        assert!(ApiCall::new(ApiKind::AnalyzeFrame, FrameId(0), " ").validate(&meta).is_err());
        let mut c = ApiCall::new(ApiKind::FindObjects, FrameId(0), "q");
        c.node_ids = Some(alloc::vec![TrackId(0)]);
        assert!(c.validate(&meta).is_err());
    }
}
