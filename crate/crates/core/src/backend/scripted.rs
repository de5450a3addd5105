//! Deterministic model stand-in driven by scene ground truth, recorded
//! fixtures and reasoning scripts. Used for tests, the synthetic harness and
//! offline runs of the CLI.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendRequest, RequestKind, Transport};
use crate::geometry::{BBox, MaskRun};
use crate::ids::FrameId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub id: u32,
    pub class: String,
    pub color: String,
    pub room: u32,
    /// Axis-aligned bounds in world coordinates.
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub visual: Vec<f64>,
    pub language: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTruth {
    pub subject: u32,
    pub object: u32,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub object_id: u32,
    pub bbox: BBox,
    pub pixels: usize,
    pub mask: Vec<MaskRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: FrameId,
    pub width: u32,
    pub height: u32,
    pub visible: Vec<VisibleObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SceneTruth {
    pub scene_id: String,
    pub objects: Vec<ObjectTruth>,
    pub relations: Vec<RelationTruth>,
    pub frames: Vec<FrameTruth>,
}

impl SceneTruth {
    pub fn object(&self, id: u32) -> Option<&ObjectTruth> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn frame(&self, id: FrameId) -> Option<&FrameTruth> {
        self.frames.iter().find(|f| f.frame_id == id)
    }
}

/// Detector degradation. A (frame, object) pair is missed when its hash
/// falls below `miss_probability`, so missed sets are nested as the
/// probability grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DetectorNoise {
    pub miss_probability: f64,
    pub seed: u64,
}

impl DetectorNoise {
    pub fn misses(&self, frame: FrameId, object: u32) -> bool {
        self.miss_probability > 0.0 && unit_hash(self.seed, frame.0, object) < self.miss_probability
    }
}

fn unit_hash(seed: u64, frame: u32, object: u32) -> f64 {
    let h = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(frame.to_le_bytes())
        .chain_update(object.to_le_bytes())
        .finalize();
    let x = u64::from_le_bytes(h[..8].try_into().unwrap_or([0; 8]));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// How the reasoning endpoint behaves for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReasonScript {
    /// Answers from the memory it is shown, calling APIs when it lacks notes.
    #[default]
    Oracle,
    /// Raw responses replayed by turn; the last one repeats.
    Steps { steps: Vec<Value> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScriptedFile {
    #[serde(default)]
    pub truth: Option<SceneTruth>,
    /// Raw responses keyed by request digest; consulted first.
    #[serde(default)]
    pub fixtures: BTreeMap<String, Value>,
    /// Reasoning scripts keyed by question text.
    #[serde(default)]
    pub reason: BTreeMap<String, ReasonScript>,
    #[serde(default)]
    pub default_reason: ReasonScript,
    #[serde(default)]
    pub noise: DetectorNoise,
}

pub struct ScriptedBackend {
    file: ScriptedFile,
    fail: BTreeSet<RequestKind>,
    fail_frames: BTreeSet<FrameId>,
}

const ROOM_HINTS: [(&str, &str); 15] = [
    ("stove", "kitchen"),
    ("refrigerator", "kitchen"),
    ("toilet", "bathroom"),
    ("bed", "bedroom"),
    ("wardrobe", "bedroom"),
    ("dresser", "bedroom"),
    ("sofa", "living room"),
    ("plant", "living room"),
    ("desk", "office"),
    ("monitor", "office"),
    ("shelf", "office"),
    ("table", "dining room"),
    ("cup", "dining room"),
    ("chair", "dining room"),
    ("bin", "hallway"),
];

fn words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(ToString::to_string)
        .collect()
}

fn bbox_json(b: &BBox) -> Value {
    json!([b.u_min, b.v_min, b.u_max, b.v_max])
}

fn parse_bbox(v: &Value) -> Option<BBox> {
    let a = v.as_array()?;
    let c: Vec<u32> = a.iter().filter_map(|x| x.as_f64()).map(|x| x.max(0.0) as u32).collect();
    (c.len() == 4).then(|| BBox::new(c[0], c[1], c[2], c[3]))
}

fn note_text(o: &ObjectTruth) -> String {
    format!("the {} is {}", o.class, o.color)
}

impl ScriptedBackend {
    pub fn new(file: ScriptedFile) -> Self {
        ScriptedBackend {
            file,
            fail: BTreeSet::new(),
            fail_frames: BTreeSet::new(),
        }
    }

    pub fn from_truth(truth: SceneTruth, noise: DetectorNoise) -> Self {
        Self::new(ScriptedFile {
            truth: Some(truth),
            noise,
            ..ScriptedFile::default()
        })
    }

    /// Every request of `kind` now times out.
    pub fn fail_kind(&mut self, kind: RequestKind) {
        self.fail.insert(kind);
    }

    /// Every request about `frame` now times out.
    pub fn fail_frame(&mut self, frame: FrameId) {
        self.fail_frames.insert(frame);
    }

    pub fn set_reason(&mut self, question: impl Into<String>, script: ReasonScript) {
        self.file.reason.insert(question.into(), script);
    }

    pub fn file(&self) -> &ScriptedFile {
        &self.file
    }

    fn truth(&self) -> Result<&SceneTruth, BackendError> {
        self.file
            .truth
            .as_ref()
            .ok_or_else(|| BackendError::Unavailable("no scene truth loaded".into()))
    }

    fn frame_truth(&self, req: &BackendRequest) -> Result<&FrameTruth, BackendError> {
        let id = req
            .frame_id
            .ok_or_else(|| BackendError::Unavailable("request names no frame".into()))?;
        self.truth()?
            .frame(id)
            .ok_or_else(|| BackendError::Unavailable(format!("frame {id} unknown to the scripted backend")))
    }

    /// Pairs the nodes of a payload list with truth objects by box overlap.
    fn map_nodes(&self, ft: &FrameTruth, nodes: &[Value]) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for n in nodes {
            let (Some(id), Some(b)) = (n.get("node_id").and_then(Value::as_u64), n.get("bbox").and_then(parse_bbox))
            else {
                continue;
            };
            let best = ft
                .visible
                .iter()
                .map(|v| (v.bbox.iou(&b), v.object_id))
                .filter(|(iou, _)| *iou >= 0.5)
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            if let Some((_, obj)) = best {
                out.push((id as u32, obj));
            }
        }
        out
    }

    fn detect_json(o: &ObjectTruth, v: &VisibleObject) -> Value {
        json!({
            "bbox": bbox_json(&v.bbox),
            "caption": o.class,
            "mask": v.mask.iter().map(|r| json!([r.v, r.u_start, r.u_end])).collect::<Vec<_>>(),
            "visual": o.visual,
            "language": o.language,
        })
    }

    fn detect(&self, req: &BackendRequest) -> Result<Value, BackendError> {
        let truth = self.truth()?;
        let ft = self.frame_truth(req)?;
        let query = req.query.as_deref().map(words).unwrap_or_default();
        let named: Vec<&VisibleObject> = ft
            .visible
            .iter()
            .filter(|v| truth.object(v.object_id).is_some_and(|o| query.contains(&o.class)))
            .collect();
        let candidates: Vec<&VisibleObject> = if named.is_empty() {
            ft.visible.iter().collect()
        } else {
            named
        };
        let detections: Vec<Value> = candidates
            .into_iter()
            .filter(|v| !self.file.noise.misses(ft.frame_id, v.object_id))
            .filter_map(|v| truth.object(v.object_id).map(|o| Self::detect_json(o, v)))
            .collect();
        Ok(json!({ "detections": detections }))
    }

    fn relations(&self, req: &BackendRequest) -> Result<Value, BackendError> {
        let truth = self.truth()?;
        let ft = self.frame_truth(req)?;
        let empty = Vec::new();
        let nodes = req.payload.get("visible").and_then(Value::as_array).unwrap_or(&empty);
        let mapping = self.map_nodes(ft, nodes);
        let mut out = Vec::new();
        for r in &truth.relations {
            for (s_node, s_obj) in &mapping {
                for (o_node, o_obj) in &mapping {
                    if *s_obj == r.subject && *o_obj == r.object && s_node != o_node {
                        out.push(json!({
                            "subject_id": s_node,
                            "object_id": o_node,
                            "relation": r.relation,
                            "justification": "observed in frame",
                        }));
                    }
                }
            }
        }
        Ok(json!({ "relations": out }))
    }

    fn analyze(&self, req: &BackendRequest) -> Result<Value, BackendError> {
        let truth = self.truth()?;
        let ft = self.frame_truth(req)?;
        let mode = req.payload.get("mode").and_then(Value::as_str).unwrap_or("frame");
        if mode == "node" {
            let node = json!([{
                "node_id": req.payload.get("node_id").cloned().unwrap_or(Value::Null),
                "bbox": req.payload.get("bbox").cloned().unwrap_or(Value::Null),
            }]);
            let items: Vec<Value> = self
                .map_nodes(ft, node.as_array().map(Vec::as_slice).unwrap_or_default())
                .into_iter()
                .filter_map(|(n, obj)| truth.object(obj).map(|o| json!({"node_id": n, "note": note_text(o)})))
                .collect();
            return Ok(json!({ "items": items, "relations": [] }));
        }

        let empty = Vec::new();
        let known = req.payload.get("known").and_then(Value::as_array).unwrap_or(&empty);
        let mapping = self.map_nodes(ft, known);
        let mut items = Vec::new();
        let mut refs: BTreeMap<u32, Value> = BTreeMap::new();
        let mut new_count = 0usize;
        for v in &ft.visible {
            let Some(o) = truth.object(v.object_id) else {
                continue;
            };
            if let Some((node, _)) = mapping.iter().find(|(_, obj)| *obj == o.id) {
                items.push(json!({"node_id": node, "note": note_text(o)}));
                refs.insert(o.id, json!({ "node": node }));
            } else {
                let mut d = Self::detect_json(o, v);
                d["note"] = Value::String(note_text(o));
                items.push(d);
                refs.insert(o.id, json!({ "item": new_count }));
                new_count += 1;
            }
        }
        let relations: Vec<Value> = truth
            .relations
            .iter()
            .filter_map(|r| {
                Some(json!({
                    "subject": refs.get(&r.subject)?,
                    "object": refs.get(&r.object)?,
                    "relation": r.relation,
                    "justification": "observed in frame",
                }))
            })
            .collect();
        Ok(json!({ "items": items, "relations": relations }))
    }

    fn consolidate(req: &BackendRequest) -> Value {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in req.payload.get("captions").and_then(Value::as_array).into_iter().flatten() {
            if let Some(s) = c.as_str() {
                *counts.entry(s).or_insert(0) += 1;
            }
        }
        // Most frequent, earliest in sort order on ties.
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(s, _)| *s)
            .unwrap_or("object");
        json!({ "caption": best })
    }

    fn fov(req: &BackendRequest) -> Value {
        let mut caps: Vec<&str> = req
            .payload
            .get("visible_captions")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .filter_map(Value::as_str)
            .collect();
        caps.sort_unstable();
        caps.dedup();
        let tag = if caps.is_empty() {
            String::from("facing open space")
        } else {
            format!("facing {}", caps.join(", "))
        };
        json!({ "tag": tag })
    }

    fn classify(req: &BackendRequest) -> Value {
        let classes: Vec<&str> = req
            .payload
            .get("classes")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .filter_map(Value::as_str)
            .collect();
        let mut scores = alloc::vec![0.0f64; classes.len()];
        for c in req.payload.get("captions").and_then(Value::as_array).into_iter().flatten() {
            let Some(c) = c.as_str() else { continue };
            for w in words(c) {
                for (obj, room) in ROOM_HINTS {
                    if w == obj {
                        if let Some(i) = classes.iter().position(|k| *k == room) {
                            scores[i] += 1.0;
                        }
                    }
                }
            }
        }
        if scores.iter().all(|s| *s == 0.0) {
            if let Some(i) = classes.iter().position(|k| *k == "unknown") {
                scores[i] = 1.0;
            }
        }
        json!({ "scores": scores })
    }

    fn reason(&self, req: &BackendRequest) -> Result<Value, BackendError> {
        let question = req.payload.get("question").and_then(Value::as_str).unwrap_or_default();
        let script = self.file.reason.get(question).unwrap_or(&self.file.default_reason);
        match script {
            ReasonScript::Steps { steps } => {
                let turn = req.payload.get("turn").and_then(Value::as_u64).unwrap_or(0) as usize;
                steps
                    .get(turn)
                    .or_else(|| steps.last())
                    .cloned()
                    .ok_or_else(|| BackendError::Unavailable("empty reasoning script".into()))
            }
            ReasonScript::Oracle => Ok(oracle_decision(&req.payload)),
        }
    }
}

impl Transport for ScriptedBackend {
    fn send(&mut self, req: &BackendRequest) -> Result<Value, BackendError> {
        if self.fail.contains(&req.kind) || req.frame_id.is_some_and(|f| self.fail_frames.contains(&f)) {
            return Err(BackendError::Timeout);
        }
        if let Some(v) = self.file.fixtures.get(&req.digest()) {
            return Ok(v.clone());
        }
        match req.kind {
            RequestKind::Detect => self.detect(req),
            RequestKind::Relations => self.relations(req),
            RequestKind::Consolidate => Ok(Self::consolidate(req)),
            RequestKind::Analyze => self.analyze(req),
            RequestKind::Fov => Ok(Self::fov(req)),
            RequestKind::Classify => Ok(Self::classify(req)),
            RequestKind::Reason => self.reason(req),
        }
    }
}

/// Question forms the oracle reasoner understands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleQuestion {
    Color { class: String },
    Relation { class: String, relation: String },
}

const RELATION_PHRASES: [(&str, &str); 4] = [
    ("on top of", "on_top_of"),
    ("a part of", "subpart_of"),
    ("inside", "contained_in"),
    ("attached to", "attached_to"),
];

impl OracleQuestion {
    pub fn parse(q: &str) -> Option<Self> {
        let q = q.trim().trim_end_matches('?').to_lowercase();
        if let Some(class) = q.strip_prefix("what color is the ") {
            return Some(OracleQuestion::Color {
                class: class.trim().to_string(),
            });
        }
        let rest = q.strip_prefix("what is the ")?;
        RELATION_PHRASES.iter().find_map(|(phrase, label)| {
            rest.strip_suffix(phrase).map(|class| OracleQuestion::Relation {
                class: class.trim().to_string(),
                relation: label.to_string(),
            })
        })
    }

    pub fn class(&self) -> &str {
        match self {
            OracleQuestion::Color { class } | OracleQuestion::Relation { class, .. } => class,
        }
    }

    pub fn color(class: &str) -> String {
        format!("What color is the {class}?")
    }

    pub fn relation(class: &str, relation: &str) -> Option<String> {
        RELATION_PHRASES
            .iter()
            .find(|(_, l)| *l == relation)
            .map(|(p, _)| format!("What is the {class} {p}?"))
    }
}

fn final_answer(answer: &str, frames: Vec<u64>, notes: Vec<(u64, usize)>) -> Value {
    json!({
        "final_answer": answer,
        "evidence_frames": frames,
        "evidence_notes": notes
            .into_iter()
            .map(|(n, i)| json!({"node_id": n, "note_index": i}))
            .collect::<Vec<_>>(),
    })
}

/// Grounded reasoning over the serialized memory in `payload`.
fn oracle_decision(payload: &Value) -> Value {
    let question = payload.get("question").and_then(Value::as_str).unwrap_or_default();
    let force = payload.get("force_answer").and_then(Value::as_bool).unwrap_or(true);
    let mode = payload.get("api_mode").and_then(Value::as_str).unwrap_or("frame");
    let ssm: Value = payload
        .get("ssm")
        .and_then(Value::as_str)
        .and_then(|s| serde_json::from_str(s).ok())
        .unwrap_or(Value::Null);
    let history: Vec<(String, u64)> = payload
        .get("history")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|c| {
            Some((
                c.get("api")?.as_str()?.to_string(),
                c.get("frame_id")?.as_u64()?,
            ))
        })
        .collect();
    let tried = |api: &str, f: u64| history.iter().any(|(a, g)| a == api && *g == f);
    let memory: Vec<u64> = payload
        .get("frames")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|f| f.get(0).and_then(Value::as_u64))
        .collect();

    let Some(q) = OracleQuestion::parse(question) else {
        return final_answer("unknown", Vec::new(), Vec::new());
    };
    let empty = Vec::new();
    let tracks = ssm["scene_graph"]["tracks"].as_array().unwrap_or(&empty);
    let track = tracks
        .iter()
        .find(|t| t["caption"].as_str().is_some_and(|c| c.eq_ignore_ascii_case(q.class())));
    let track_id = track.and_then(|t| t["id"].as_u64());

    let notes: Vec<(usize, String, u64)> = track_id
        .and_then(|id| {
            ssm["scratchpad"]
                .as_array()?
                .iter()
                .find(|e| e["node_id"].as_u64() == Some(id))
        })
        .and_then(|e| e["notes"].as_array())
        .into_iter()
        .flatten()
        .enumerate()
        .filter_map(|(i, n)| Some((i, n["text"].as_str()?.to_string(), n["evidence_frame"].as_u64()?)))
        .collect();
    let usable = notes.iter().find(|(_, _, f)| memory.contains(f));

    if let (Some(id), Some((idx, text, frame))) = (track_id, usable) {
        let answer = match &q {
            OracleQuestion::Color { class } => {
                let prefix = format!("the {} is ", class.to_lowercase());
                text.to_lowercase().strip_prefix(&prefix).map(|s| s.trim().to_string())
            }
            OracleQuestion::Relation { relation, .. } => ssm["scene_graph"]["edges"]
                .as_array()
                .into_iter()
                .flatten()
                .find(|e| e["subject_id"].as_u64() == Some(id) && e["relation"].as_str() == Some(relation))
                .and_then(|e| e["object_id"].as_u64())
                .and_then(|o| tracks.iter().find(|t| t["id"].as_u64() == Some(o)))
                .and_then(|t| t["caption"].as_str())
                .map(ToString::to_string),
        };
        if let Some(a) = answer {
            return final_answer(&a, alloc::vec![*frame], alloc::vec![(id, *idx)]);
        }
        if force || mode != "frame" {
            return final_answer("unknown", alloc::vec![*frame], alloc::vec![(id, *idx)]);
        }
        // Relation missing: look at the node's frames for it.
        let frames: Vec<u64> = track
            .and_then(|t| t["visible_frames"].as_array())
            .into_iter()
            .flatten()
            .filter_map(Value::as_u64)
            .collect();
        if let Some(f) = frames.iter().find(|f| !tried("analyze_frame", **f)) {
            return json!({"action": {"api": "analyze_frame", "frame_id": f, "query": question}});
        }
        return final_answer("unknown", alloc::vec![*frame], alloc::vec![(id, *idx)]);
    }

    if force {
        return final_answer("unknown", Vec::new(), Vec::new());
    }
    let episode_frames: Vec<u64> = ssm["episode"]["frames"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|f| f["id"].as_u64())
        .collect();
    if let Some(id) = track_id {
        let frames: Vec<u64> = track
            .and_then(|t| t["boxes"].as_array())
            .into_iter()
            .flatten()
            .filter_map(|b| b["frame_id"].as_u64())
            .collect();
        if let Some(f) = frames.iter().find(|f| !tried("analyze_objects", **f)) {
            return json!({"action": {"api": "analyze_objects", "frame_id": f, "query": question, "node_ids": [id]}});
        }
        return final_answer("unknown", Vec::new(), Vec::new());
    }
    let api = if mode == "node" { "find_objects" } else { "analyze_frame" };
    match episode_frames.iter().find(|f| !tried(api, **f)) {
        Some(f) => json!({"action": {"api": api, "frame_id": f, "query": question}}),
        None => final_answer("unknown", Vec::new(), Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miss_sets_are_nested() {
        let lo = DetectorNoise {
            miss_probability: 0.2,
            seed: 7,
        };
        let hi = DetectorNoise {
            miss_probability: 0.4,
            seed: 7,
        };
        let mut missed = 0;
        for f in 0..50 {
            for o in 0..10 {
                if lo.misses(FrameId(f), o) {
                    assert!(hi.misses(FrameId(f), o));
                    missed += 1;
                }
            }
        }
        assert!(missed > 50 && missed < 150, "{missed}");
    }

    #[test]
    fn question_forms_round_trip() {
        let q = OracleQuestion::relation("cup", "on_top_of").unwrap();
        assert_eq!(q, "What is the cup on top of?");
        assert_eq!(
            OracleQuestion::parse(&q),
            Some(OracleQuestion::Relation {
                class: "cup".into(),
                relation: "on_top_of".into()
            })
        );
        assert_eq!(
            OracleQuestion::parse(&OracleQuestion::color("sofa")),
            Some(OracleQuestion::Color { class: "sofa".into() })
        );
        assert_eq!(OracleQuestion::parse("how many rooms?"), None);
    }

    #[test]
    fn consolidate_picks_most_frequent() {
        let r = BackendRequest::consolidate(&["mug".into(), "cup".into(), "cup".into()]);
        assert_eq!(ScriptedBackend::consolidate(&r), json!({"caption": "cup"}));
    }

    #[test]
    fn steps_repeat_the_last_response() {
        let mut b = ScriptedBackend::new(ScriptedFile::default());
        b.set_reason(
            "q",
            ReasonScript::Steps {
                steps: alloc::vec![json!({"final_answer": "a"}), json!({"final_answer": "b"})],
            },
        );
        let mut req = BackendRequest {
            kind: RequestKind::Reason,
            frame_id: None,
            query: None,
            payload: json!({"question": "q", "turn": 5}),
        };
        assert_eq!(b.send(&req).unwrap(), json!({"final_answer": "b"}));
        req.payload["turn"] = json!(0);
        assert_eq!(b.send(&req).unwrap(), json!({"final_answer": "a"}));
    }
}
