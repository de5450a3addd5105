//! Strict schema validation of raw backend responses.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};

use super::{
    AnalyzeItem, AnalyzeRelation, AnalyzeResult, BackendError, BackendResponse, DetectItem,
    FinalAnswer, ItemRef, NoteRef, ReasonDecision, RelationItem, RequestKind,
};
use crate::api::{ApiCall, ApiKind};
use crate::geometry::{BBox, MaskRun};
use crate::ids::{FrameId, TrackId};
use crate::scene_graph::Relation;

/// Boxes overshooting the image by at most this many pixels are clamped.
pub const BBOX_CLAMP_TOLERANCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameBounds {
    pub width: u32,
    pub height: u32,
}

type VResult<T> = Result<T, BackendError>;

fn err<T>(path: &str, msg: impl Into<String>) -> VResult<T> {
    Err(BackendError::schema(path, msg))
}

fn object<'a>(v: &'a Value, path: &str) -> VResult<&'a Map<String, Value>> {
    v.as_object().map_or_else(|| err(path, "expected an object"), Ok)
}

fn field<'a>(o: &'a Map<String, Value>, key: &str, path: &str) -> VResult<&'a Value> {
    o.get(key)
        .map_or_else(|| err(&format!("{path}.{key}"), "missing field"), Ok)
}

fn array<'a>(v: &'a Value, path: &str) -> VResult<&'a Vec<Value>> {
    v.as_array().map_or_else(|| err(path, "expected an array"), Ok)
}

fn string(v: &Value, path: &str) -> VResult<String> {
    v.as_str()
        .map(ToString::to_string)
        .map_or_else(|| err(path, "expected a string"), Ok)
}

fn uint(v: &Value, path: &str) -> VResult<u64> {
    v.as_u64()
        .map_or_else(|| err(path, "expected a non-negative integer"), Ok)
}

fn id32(v: &Value, path: &str) -> VResult<u32> {
    u32::try_from(uint(v, path)?).or_else(|_| err(path, "id out of range"))
}

fn opt_string(o: &Map<String, Value>, key: &str, path: &str) -> VResult<Option<String>> {
    match o.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => string(v, &format!("{path}.{key}")).map(Some),
    }
}

fn relation(v: &Value, path: &str) -> VResult<Relation> {
    let label = string(v, path)?;
    label
        .parse::<Relation>()
        .or_else(|_| err(path, format!("unknown relation label {label:?}")))
}

fn bbox(v: &Value, path: &str, bounds: Option<FrameBounds>) -> VResult<BBox> {
    let a = array(v, path)?;
    if a.len() != 4 {
        return err(path, "bbox must have four numbers");
    }
    let mut c = [0.0f64; 4];
    for (i, x) in a.iter().enumerate() {
        c[i] = match x.as_f64() {
            Some(f) if f.is_finite() => libm::round(f),
            _ => return err(&format!("{path}[{i}]"), "expected a finite number"),
        };
    }
    let (w, h) = bounds.map_or((f64::INFINITY, f64::INFINITY), |b| (b.width as f64, b.height as f64));
    let t = BBOX_CLAMP_TOLERANCE;
    if c[0] < -t || c[1] < -t || c[2] > w + t || c[3] > h + t {
        return err(path, "bbox exceeds the frame by more than the clamp tolerance");
    }
    let b = BBox::new(
        c[0].clamp(0.0, w) as u32,
        c[1].clamp(0.0, h) as u32,
        c[2].clamp(0.0, w) as u32,
        c[3].clamp(0.0, h) as u32,
    );
    if !b.is_well_formed() {
        return err(path, "bbox is empty or inverted");
    }
    Ok(b)
}

fn vector(o: &Map<String, Value>, key: &str, path: &str) -> VResult<Option<Vec<f64>>> {
    let Some(v) = o.get(key) else {
        return Ok(None);
    };
    if v.is_null() {
        return Ok(None);
    }
    let p = format!("{path}.{key}");
    let a = array(v, &p)?;
    let out: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(i, x)| match x.as_f64() {
            Some(f) if f.is_finite() => Ok(f),
            _ => err(&format!("{p}[{i}]"), "expected a finite number"),
        })
        .collect::<VResult<_>>()?;
    if out.is_empty() || out.iter().all(|x| *x == 0.0) {
        return err(&p, "embedding must be a non-zero vector");
    }
    Ok(Some(out))
}

fn mask(o: &Map<String, Value>, path: &str, bounds: Option<FrameBounds>) -> VResult<Option<Vec<MaskRun>>> {
    let Some(v) = o.get("mask") else {
        return Ok(None);
    };
    if v.is_null() {
        return Ok(None);
    }
    let p = format!("{path}.mask");
    let mut runs = Vec::new();
    for (i, r) in array(v, &p)?.iter().enumerate() {
        let rp = format!("{p}[{i}]");
        let a = array(r, &rp)?;
        if a.len() != 3 {
            return err(&rp, "mask run must be [v, u_start, u_end]");
        }
        let run = MaskRun {
            v: id32(&a[0], &rp)?,
            u_start: id32(&a[1], &rp)?,
            u_end: id32(&a[2], &rp)?,
        };
        let inside = bounds.is_none_or(|b| run.v < b.height && run.u_end <= b.width);
        if run.u_start >= run.u_end || !inside {
            return err(&rp, "mask run empty or outside the frame");
        }
        runs.push(run);
    }
    Ok(Some(runs))
}

fn detect_item(v: &Value, path: &str, bounds: Option<FrameBounds>) -> VResult<DetectItem> {
    let o = object(v, path)?;
    let caption = string(field(o, "caption", path)?, &format!("{path}.caption"))?;
    if caption.trim().is_empty() {
        return err(&format!("{path}.caption"), "caption is empty");
    }
    Ok(DetectItem {
        bbox: bbox(field(o, "bbox", path)?, &format!("{path}.bbox"), bounds)?,
        caption,
        mask: mask(o, path, bounds)?,
        visual: vector(o, "visual", path)?,
        language: vector(o, "language", path)?,
        note: opt_string(o, "note", path)?,
    })
}

fn item_ref(v: &Value, path: &str) -> VResult<ItemRef> {
    let o = object(v, path)?;
    match (o.get("node"), o.get("item")) {
        (Some(n), None) => Ok(ItemRef::Node(TrackId(id32(n, &format!("{path}.node"))?))),
        (None, Some(i)) => Ok(ItemRef::Item(uint(i, &format!("{path}.item"))? as usize)),
        _ => err(path, "expected exactly one of node or item"),
    }
}

fn api_call(v: &Value, path: &str) -> VResult<ApiCall> {
    let o = object(v, path)?;
    let api = string(field(o, "api", path)?, &format!("{path}.api"))?;
    let kind = match api.as_str() {
        "find_objects" => ApiKind::FindObjects,
        "analyze_objects" => ApiKind::AnalyzeObjects,
        "analyze_frame" => ApiKind::AnalyzeFrame,
        other => return err(&format!("{path}.api"), format!("unknown api {other:?}")),
    };
    let node_ids = match o.get("node_ids") {
        None | Some(Value::Null) => None,
        Some(a) => Some(
            array(a, &format!("{path}.node_ids"))?
                .iter()
                .enumerate()
                .map(|(i, x)| id32(x, &format!("{path}.node_ids[{i}]")).map(TrackId))
                .collect::<VResult<Vec<_>>>()?,
        ),
    };
    Ok(ApiCall {
        kind,
        frame_id: FrameId(id32(field(o, "frame_id", path)?, &format!("{path}.frame_id"))?),
        query: string(field(o, "query", path)?, &format!("{path}.query"))?,
        node_ids,
    })
}

fn reason(o: &Map<String, Value>) -> VResult<ReasonDecision> {
    match (o.get("action"), o.get("final_answer")) {
        (Some(a), None) => Ok(ReasonDecision::Action(api_call(a, "$.action")?)),
        (None, Some(ans)) => {
            let answer = string(ans, "$.final_answer")?;
            let frames = match o.get("evidence_frames") {
                None => Vec::new(),
                Some(v) => array(v, "$.evidence_frames")?
                    .iter()
                    .enumerate()
                    .map(|(i, x)| id32(x, &format!("$.evidence_frames[{i}]")).map(FrameId))
                    .collect::<VResult<_>>()?,
            };
            let notes = match o.get("evidence_notes") {
                None => Vec::new(),
                Some(v) => array(v, "$.evidence_notes")?
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let p = format!("$.evidence_notes[{i}]");
                        let n = object(x, &p)?;
                        Ok(NoteRef {
                            node_id: TrackId(id32(field(n, "node_id", &p)?, &format!("{p}.node_id"))?),
                            note_index: uint(field(n, "note_index", &p)?, &format!("{p}.note_index"))?
                                as usize,
                        })
                    })
                    .collect::<VResult<_>>()?,
            };
            Ok(ReasonDecision::Final(FinalAnswer {
                answer,
                evidence_frames: frames,
                evidence_notes: notes,
            }))
        }
        (Some(_), Some(_)) => err("$", "response carries both an action and a final answer"),
        (None, None) => err("$", "response carries neither an action nor a final answer"),
    }
}

/// Checks `raw` against the schema of `kind` and converts it.
///
/// Node ids are not checked against any graph here; that is the caller's
/// job. Boxes are clamped when they overshoot `bounds` by at most
/// [`BBOX_CLAMP_TOLERANCE`] pixels and rejected otherwise.
pub fn validate_response(
    kind: RequestKind,
    raw: &Value,
    bounds: Option<FrameBounds>,
) -> Result<BackendResponse, BackendError> {
    let o = object(raw, "$")?;
    match kind {
        RequestKind::Detect => {
            let items = array(field(o, "detections", "$")?, "$.detections")?
                .iter()
                .enumerate()
                .map(|(i, v)| detect_item(v, &format!("$.detections[{i}]"), bounds))
                .collect::<VResult<_>>()?;
            Ok(BackendResponse::Detect(items))
        }
        RequestKind::Relations => {
            let mut out = Vec::new();
            for (i, v) in array(field(o, "relations", "$")?, "$.relations")?.iter().enumerate() {
                let p = format!("$.relations[{i}]");
                let r = object(v, &p)?;
                out.push(RelationItem {
                    subject_id: TrackId(id32(field(r, "subject_id", &p)?, &format!("{p}.subject_id"))?),
                    object_id: TrackId(id32(field(r, "object_id", &p)?, &format!("{p}.object_id"))?),
                    relation: relation(field(r, "relation", &p)?, &format!("{p}.relation"))?,
                    justification: opt_string(r, "justification", &p)?.unwrap_or_default(),
                });
            }
            Ok(BackendResponse::Relations(out))
        }
        RequestKind::Consolidate => {
            let s = string(field(o, "caption", "$")?, "$.caption")?;
            if s.trim().is_empty() {
                return err("$.caption", "caption is empty");
            }
            Ok(BackendResponse::Consolidate(s))
        }
        RequestKind::Analyze => {
            let mut result = AnalyzeResult::default();
            for (i, v) in array(field(o, "items", "$")?, "$.items")?.iter().enumerate() {
                let p = format!("$.items[{i}]");
                let it = object(v, &p)?;
                if let Some(n) = it.get("node_id") {
                    result.items.push(AnalyzeItem::Known {
                        node_id: TrackId(id32(n, &format!("{p}.node_id"))?),
                        note: string(field(it, "note", &p)?, &format!("{p}.note"))?,
                    });
                } else {
                    result.items.push(AnalyzeItem::New(detect_item(v, &p, bounds)?));
                }
            }
            if let Some(rels) = o.get("relations") {
                for (i, v) in array(rels, "$.relations")?.iter().enumerate() {
                    let p = format!("$.relations[{i}]");
                    let r = object(v, &p)?;
                    result.relations.push(AnalyzeRelation {
                        subject: item_ref(field(r, "subject", &p)?, &format!("{p}.subject"))?,
                        object: item_ref(field(r, "object", &p)?, &format!("{p}.object"))?,
                        relation: relation(field(r, "relation", &p)?, &format!("{p}.relation"))?,
                        justification: opt_string(r, "justification", &p)?.unwrap_or_default(),
                    });
                }
            }
            let new_items = result
                .items
                .iter()
                .filter(|i| matches!(i, AnalyzeItem::New(_)))
                .count();
            for (i, r) in result.relations.iter().enumerate() {
                for end in [r.subject, r.object] {
                    if let ItemRef::Item(k) = end {
                        if k >= new_items {
                            return err(&format!("$.relations[{i}]"), "item index out of range");
                        }
                    }
                }
            }
            Ok(BackendResponse::Analyze(result))
        }
        RequestKind::Fov => Ok(BackendResponse::Fov(string(field(o, "tag", "$")?, "$.tag")?)),
        RequestKind::Reason => Ok(BackendResponse::Reason(reason(o)?)),
        RequestKind::Classify => {
            let scores = array(field(o, "scores", "$")?, "$.scores")?
                .iter()
                .enumerate()
                .map(|(i, x)| match x.as_f64() {
                    Some(f) if f.is_finite() => Ok(f),
                    _ => err(&format!("$.scores[{i}]"), "expected a finite number"),
                })
                .collect::<VResult<_>>()?;
            Ok(BackendResponse::Classify(scores))
        }
    }
}
