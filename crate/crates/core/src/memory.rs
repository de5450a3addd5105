//! The structured scene memory: scene graph, scratch-pad, frame memory and
//! navigation log, plus their canonical JSON form.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};

use crate::api::ApiKind;
use crate::canonical::Canon;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::geometry::{BBox, CloudSummary, PointCloud};
use crate::ids::{FrameId, TrackId};
use crate::math::Vec3;
use crate::scene_graph::{Detection, EdgeProposal, RelationEdge, SceneGraph, Track};
use crate::spatial::{Floor, FloorModel, MotionLabel, NavLogEntry, RoomInfo, RoomModel};

/// One scratch-pad note with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub text: String,
    pub source_api: ApiKind,
    pub query: String,
    pub evidence_frame: FrameId,
}

/// Append-only notes per scene-graph node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scratchpad {
    entries: BTreeMap<TrackId, Vec<Note>>,
}

impl Scratchpad {
    pub fn node_ids(&self) -> impl Iterator<Item = TrackId> + '_ {
        self.entries.keys().copied()
    }

    pub fn notes(&self, node: TrackId) -> Option<&[Note]> {
        self.entries.get(&node).map(Vec::as_slice)
    }

    pub fn note(&self, node: TrackId, index: usize) -> Option<&Note> {
        self.entries.get(&node)?.get(index)
    }

    pub fn note_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    fn add_entry(&mut self, node: TrackId) {
        self.entries.entry(node).or_default();
    }

    /// Appends a note; returns its index within the node's notes.
    pub fn add_note(&mut self, node: TrackId, note: Note) -> Result<usize> {
        let notes = self
            .entries
            .get_mut(&node)
            .ok_or_else(|| Error::contract(format!("no scratch-pad entry for node {node}")))?;
        notes.push(note);
        Ok(notes.len() - 1)
    }
}

/// Frames available to the reasoner: an evenly spaced initial block followed
/// by API-requested frames in request order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMemory {
    frames: Vec<FrameId>,
    initial_count: usize,
}

/// Evenly spaced indices `round(i·(N−1)/(n−1))`, halves rounding up,
/// computed in integers. A single frame takes the middle index.
pub fn evenly_spaced_indices(total: usize, n: usize) -> Vec<usize> {
    if total == 0 || n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return alloc::vec![(total - 1 + 1) / 2];
    }
    let (last, steps) = (total - 1, n - 1);
    let mut out: Vec<usize> = (0..n).map(|i| (2 * i * last + steps) / (2 * steps)).collect();
    out.dedup();
    out
}

impl FrameMemory {
    pub fn init(episode_frames: &[FrameId], n_img: usize) -> Result<Self> {
        if episode_frames.is_empty() {
            return Err(Error::contract("episode has no frames"));
        }
        if n_img == 0 {
            return Err(Error::contract("n_img must be at least 1"));
        }
        let frames: Vec<FrameId> = evenly_spaced_indices(episode_frames.len(), n_img)
            .into_iter()
            .map(|i| episode_frames[i])
            .collect();
        Ok(FrameMemory {
            initial_count: frames.len(),
            frames,
        })
    }

    pub fn frames(&self) -> &[FrameId] {
        &self.frames
    }

    /// Size of the initial evenly spaced block.
    pub fn initial_count(&self) -> usize {
        self.initial_count
    }

    pub fn contains(&self, id: FrameId) -> bool {
        self.frames.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Appends `id` unless present; returns whether it was added.
    pub fn append(&mut self, id: FrameId, episode: &EpisodeMeta) -> Result<bool> {
        if !episode.contains(id) {
            return Err(Error::contract(format!("frame {id} is not part of the episode")));
        }
        if self.contains(id) {
            return Ok(false);
        }
        self.frames.push(id);
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub id: FrameId,
    pub image: String,
}

/// What the memory keeps about the episode itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeMeta {
    pub scene_id: String,
    pub k: u32,
    pub frames: Vec<FrameRef>,
}

impl EpisodeMeta {
    pub fn of(ep: &Episode) -> Self {
        EpisodeMeta {
            scene_id: ep.scene_id.clone(),
            k: ep.k,
            frames: ep
                .frames
                .iter()
                .map(|f| FrameRef {
                    id: f.id,
                    image: f.image.clone(),
                })
                .collect(),
        }
    }

    pub fn contains(&self, id: FrameId) -> bool {
        self.frames.binary_search_by_key(&id, |f| f.id).is_ok()
    }

    pub fn image(&self, id: FrameId) -> Option<&str> {
        let i = self.frames.binary_search_by_key(&id, |f| f.id).ok()?;
        Some(&self.frames[i].image)
    }

    pub fn frame_ids(&self) -> Vec<FrameId> {
        self.frames.iter().map(|f| f.id).collect()
    }
}

/// The four linked memory structures plus floor and room context.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ssm {
    pub(crate) graph: SceneGraph,
    pub(crate) scratchpad: Scratchpad,
    pub(crate) frame_memory: FrameMemory,
    pub(crate) nav_log: Vec<NavLogEntry>,
    pub(crate) episode: EpisodeMeta,
    pub(crate) floors: FloorModel,
    pub(crate) rooms: RoomModel,
}

fn frame_ids_canon(v: &[FrameId]) -> Canon {
    Canon::Array(v.iter().map(|i| Canon::Int(i.0 as i64)).collect())
}

fn opt_u32_canon(v: Option<u32>) -> Canon {
    Canon::opt(v, |x| Canon::Int(x as i64))
}

fn track_canon(t: &Track) -> Canon {
    let boxes = t
        .frame_boxes
        .iter()
        .map(|(f, b)| {
            Canon::object()
                .field("frame_id", Canon::Int(f.0 as i64))
                .field("bbox", bbox_canon(b))
                .build()
        })
        .collect();
    Canon::object()
        .field("id", Canon::Int(t.id.0 as i64))
        .field("caption", Canon::str(&t.caption))
        .field(
            "caption_history",
            Canon::Array(t.caption_history.iter().map(Canon::str).collect()),
        )
        .field("room_id", opt_u32_canon(t.room_id))
        .field("floor_id", opt_u32_canon(t.floor_id))
        .field("visible_frames", frame_ids_canon(&t.visible_frames))
        .field("boxes", Canon::Array(boxes))
        .field(
            "cloud",
            Canon::object()
                .field("centroid", Canon::vec3(t.summary.centroid))
                .field("extent", Canon::vec3(t.summary.extent))
                .field("count", Canon::Int(t.summary.count as i64))
                .build(),
        )
        .build()
}

fn edge_canon(e: &RelationEdge) -> Canon {
    Canon::object()
        .field("subject_id", Canon::Int(e.subject_id.0 as i64))
        .field("object_id", Canon::Int(e.object_id.0 as i64))
        .field("relation", Canon::str(e.relation.label()))
        .field("justification", Canon::str(&e.justification))
        .field("source_frame", Canon::Int(e.source_frame.0 as i64))
        .build()
}

fn note_canon(n: &Note) -> Canon {
    Canon::object()
        .field("text", Canon::str(&n.text))
        .field("source_api", Canon::str(n.source_api.name()))
        .field("query", Canon::str(&n.query))
        .field("evidence_frame", Canon::Int(n.evidence_frame.0 as i64))
        .build()
}

fn nav_canon(e: &NavLogEntry) -> Canon {
    Canon::object()
        .field("frame_id", Canon::Int(e.frame_id.0 as i64))
        .field("room", Canon::str(&e.room_label))
        .field("fov", Canon::str(&e.fov_tag))
        .field("motion", Canon::str(e.motion.label()))
        .field(
            "visible_node_ids",
            Canon::Array(e.visible_node_ids.iter().map(|i| Canon::Int(i.0 as i64)).collect()),
        )
        .build()
}

impl Ssm {
    /// Empty memory over an episode with its initial frame memory.
    pub fn new(episode: EpisodeMeta, n_img: usize) -> Result<Self> {
        let frame_memory = FrameMemory::init(&episode.frame_ids(), n_img)?;
        Ok(Ssm {
            episode,
            frame_memory,
            ..Ssm::default()
        })
    }

    pub fn graph(&self) -> &SceneGraph {
        &self.graph
    }

    pub fn scratchpad(&self) -> &Scratchpad {
        &self.scratchpad
    }

    pub fn frame_memory(&self) -> &FrameMemory {
        &self.frame_memory
    }

    pub fn nav_log(&self) -> &[NavLogEntry] {
        &self.nav_log
    }

    pub fn nav_entry(&self, frame: FrameId) -> Option<&NavLogEntry> {
        self.nav_log.iter().find(|e| e.frame_id == frame)
    }

    pub fn episode(&self) -> &EpisodeMeta {
        &self.episode
    }

    pub fn floors(&self) -> &FloorModel {
        &self.floors
    }

    pub fn rooms(&self) -> &RoomModel {
        &self.rooms
    }

    /// Creates a track and its empty scratch-pad entry together.
    pub fn create_track(&mut self, d: &Detection) -> TrackId {
        let id = self.graph.insert_detection(d);
        self.scratchpad.add_entry(id);
        id
    }

    pub(crate) fn insert_track(&mut self, t: Track) -> Result<()> {
        let id = t.id;
        self.graph.insert_track(t)?;
        self.scratchpad.add_entry(id);
        Ok(())
    }

    pub fn add_note(&mut self, node: TrackId, note: Note) -> Result<usize> {
        if !self.graph.contains(node) {
            return Err(Error::contract(format!("unknown node {node}")));
        }
        self.scratchpad.add_note(node, note)
    }

    pub fn append_frame(&mut self, id: FrameId) -> Result<bool> {
        self.frame_memory.append(id, &self.episode)
    }

    pub fn graph_mut(&mut self) -> &mut SceneGraph {
        &mut self.graph
    }

    pub(crate) fn nav_entry_mut(&mut self, frame: FrameId) -> Option<&mut NavLogEntry> {
        self.nav_log.iter_mut().find(|e| e.frame_id == frame)
    }

    /// Restores raw clouds and embeddings after a geometry-light load.
    pub fn restore_geometry(&mut self, id: TrackId, f: impl FnOnce(&mut Track)) -> Result<()> {
        let t = self
            .graph
            .track_mut(id)
            .ok_or_else(|| Error::contract(format!("unknown node {id}")))?;
        f(t);
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let graph_ids = self.graph.track_ids();
        let pad_ids: Vec<TrackId> = self.scratchpad.node_ids().collect();
        if graph_ids != pad_ids {
            return Err(Error::invariant("scratch-pad nodes differ from scene-graph nodes"));
        }
        for t in self.graph.tracks() {
            if t.visible_frames.is_empty() {
                return Err(Error::invariant(format!("track {} has no visible frames", t.id)));
            }
            if let Some(f) = t.visible_frames.iter().find(|f| !self.episode.contains(**f)) {
                return Err(Error::invariant(format!("track {} seen in unknown frame {f}", t.id)));
            }
        }
        let mut keys = Vec::new();
        for e in self.graph.edges() {
            if !self.graph.contains(e.subject_id) || !self.graph.contains(e.object_id) {
                return Err(Error::invariant(format!(
                    "edge {} -> {} has a dangling endpoint",
                    e.subject_id, e.object_id
                )));
            }
            if e.subject_id == e.object_id {
                return Err(Error::invariant(format!("self-loop on {}", e.subject_id)));
            }
            keys.push(e.key());
        }
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invariant("duplicate edge"));
        }
        for w in self.episode.frames.windows(2) {
            if w[1].id <= w[0].id {
                return Err(Error::invariant("episode frame ids not strictly increasing"));
            }
        }
        let fm = self.frame_memory.frames();
        if let Some(f) = fm.iter().find(|f| !self.episode.contains(**f)) {
            return Err(Error::invariant(format!("frame memory holds unknown frame {f}")));
        }
        let mut sorted = fm.to_vec();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invariant("frame memory holds a duplicate frame"));
        }
        if self.frame_memory.initial_count > fm.len() {
            return Err(Error::invariant("frame memory initial block exceeds its size"));
        }
        for w in self.nav_log.windows(2) {
            if w[1].frame_id <= w[0].frame_id {
                return Err(Error::invariant("navigation log out of episode order"));
            }
        }
        for e in &self.nav_log {
            if !self.episode.contains(e.frame_id) {
                return Err(Error::invariant(format!("navigation entry for unknown frame {}", e.frame_id)));
            }
            if let Some(id) = e.visible_node_ids.iter().find(|id| !self.graph.contains(**id)) {
                return Err(Error::invariant(format!("navigation entry lists unknown node {id}")));
            }
        }
        Ok(())
    }

    /// Canonical JSON text plus the frame-memory images in memory order.
    pub fn serialize(&self) -> Result<(String, Vec<(FrameId, String)>)> {
        self.check_invariants()?;
        let text = self.to_canon().to_text()?;
        let frames = self
            .frame_memory
            .frames()
            .iter()
            .map(|f| (*f, self.episode.image(*f).unwrap_or_default().to_string()))
            .collect();
        Ok((text, frames))
    }

    pub fn to_json(&self) -> Result<String> {
        self.serialize().map(|(t, _)| t)
    }

    /// Canonical view of one node: the track, its notes and every edge
    /// touching it. `None` for an unknown id.
    pub fn track_json(&self, id: TrackId) -> Result<Option<String>> {
        let Some(t) = self.graph.track(id) else {
            return Ok(None);
        };
        let notes = self.scratchpad.notes(id).unwrap_or_default();
        let edges = self
            .graph
            .sorted_edges()
            .into_iter()
            .filter(|e| e.subject_id == id || e.object_id == id)
            .map(edge_canon)
            .collect();
        Canon::object()
            .field("track", track_canon(t))
            .field("notes", Canon::Array(notes.iter().map(note_canon).collect()))
            .field("edges", Canon::Array(edges))
            .build()
            .to_text()
            .map(Some)
    }

    /// The navigation log alone, in canonical form.
    pub fn nav_log_json(&self) -> Result<String> {
        Canon::Array(self.nav_log.iter().map(nav_canon).collect()).to_text()
    }

    fn to_canon(&self) -> Canon {
        let tracks = self.graph.tracks().map(track_canon).collect();
        let edges = self
            .graph
            .sorted_edges()
            .into_iter()
            .map(edge_canon)
            .collect();
        let rooms = self
            .rooms
            .rooms
            .iter()
            .map(|r| {
                Canon::object()
                    .field("room_id", Canon::Int(r.room_id as i64))
                    .field("floor_id", Canon::Int(r.floor_id as i64))
                    .field("label", Canon::str(&r.label))
                    .field("cells", Canon::Int(r.cells as i64))
                    .build()
            })
            .collect();
        let floors = self
            .floors
            .floors
            .iter()
            .map(|f| {
                Canon::object()
                    .field("floor_id", Canon::Int(f.floor_id as i64))
                    .field("z_min", Canon::Real(f.z_min))
                    .field("z_max", Canon::Real(f.z_max))
                    .build()
            })
            .collect();
        let scratchpad = self
            .scratchpad
            .entries
            .iter()
            .map(|(id, notes)| {
                let notes = notes.iter().map(note_canon).collect();
                Canon::object()
                    .field("node_id", Canon::Int(id.0 as i64))
                    .field("notes", Canon::Array(notes))
                    .build()
            })
            .collect();
        let nav = self.nav_log.iter().map(nav_canon).collect();
        let frames = self
            .episode
            .frames
            .iter()
            .map(|f| {
                Canon::object()
                    .field("id", Canon::Int(f.id.0 as i64))
                    .field("image", Canon::str(&f.image))
                    .build()
            })
            .collect();
        Canon::object()
            .field(
                "scene_graph",
                Canon::object()
                    .field("tracks", Canon::Array(tracks))
                    .field("edges", Canon::Array(edges))
                    .field("rooms", Canon::Array(rooms))
                    .field("floors", Canon::Array(floors))
                    .build(),
            )
            .field("scratchpad", Canon::Array(scratchpad))
            .field("navigation_log", Canon::Array(nav))
            .field(
                "episode",
                Canon::object()
                    .field("scene_id", Canon::str(&self.episode.scene_id))
                    .field("k", Canon::Int(self.episode.k as i64))
                    .field("frame_count", Canon::Int(self.episode.frames.len() as i64))
                    .field("frames", Canon::Array(frames))
                    .field(
                        "frame_memory",
                        Canon::object()
                            .field("frames", frame_ids_canon(self.frame_memory.frames()))
                            .field("initial_count", Canon::Int(self.frame_memory.initial_count as i64))
                            .build(),
                    )
                    .build(),
            )
            .build()
    }

    /// Parses canonical text back into a geometry-light memory: clouds keep
    /// only their summaries and embeddings are absent.
    pub fn deserialize(text: &str) -> Result<Ssm> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
        let r = obj(&root, "$")?;
        let sg = obj(get(r, "scene_graph", "$")?, "$.scene_graph")?;
        let ep = obj(get(r, "episode", "$")?, "$.episode")?;

        let mut ssm = Ssm::default();

        // Episode first: everything else refers to its frames.
        ssm.episode.scene_id = string(get(ep, "scene_id", "$.episode")?, "$.episode.scene_id")?;
        ssm.episode.k = u32_of(get(ep, "k", "$.episode")?, "$.episode.k")?;
        for (i, f) in arr(get(ep, "frames", "$.episode")?, "$.episode.frames")?.iter().enumerate() {
            let p = format!("$.episode.frames[{i}]");
            let o = obj(f, &p)?;
            let id = FrameId(u32_of(get(o, "id", &p)?, &format!("{p}.id"))?);
            if ssm.episode.frames.last().is_some_and(|l| l.id >= id) {
                return Err(Error::parse(format!("{p}.id"), "frame ids must strictly increase"));
            }
            ssm.episode.frames.push(FrameRef {
                id,
                image: string(get(o, "image", &p)?, &format!("{p}.image"))?,
            });
        }
        let count = u32_of(get(ep, "frame_count", "$.episode")?, "$.episode.frame_count")? as usize;
        if count != ssm.episode.frames.len() {
            return Err(Error::parse("$.episode.frame_count", "does not match the frame list"));
        }
        let fm = obj(get(ep, "frame_memory", "$.episode")?, "$.episode.frame_memory")?;
        for (i, f) in arr(get(fm, "frames", "$.episode.frame_memory")?, "$.episode.frame_memory.frames")?
            .iter()
            .enumerate()
        {
            let p = format!("$.episode.frame_memory.frames[{i}]");
            let id = ssm.frame_id(f, &p)?;
            if ssm.frame_memory.contains(id) {
                return Err(Error::parse(p, "duplicate frame"));
            }
            ssm.frame_memory.frames.push(id);
        }
        ssm.frame_memory.initial_count = u32_of(
            get(fm, "initial_count", "$.episode.frame_memory")?,
            "$.episode.frame_memory.initial_count",
        )? as usize;
        if ssm.frame_memory.initial_count > ssm.frame_memory.len() {
            return Err(Error::parse("$.episode.frame_memory.initial_count", "exceeds the frame count"));
        }

        for (i, f) in arr(get(sg, "floors", "$.scene_graph")?, "$.scene_graph.floors")?.iter().enumerate() {
            let p = format!("$.scene_graph.floors[{i}]");
            let o = obj(f, &p)?;
            ssm.floors.floors.push(Floor {
                floor_id: u32_of(get(o, "floor_id", &p)?, &format!("{p}.floor_id"))?,
                z_min: real(get(o, "z_min", &p)?, &format!("{p}.z_min"))?,
                z_max: real(get(o, "z_max", &p)?, &format!("{p}.z_max"))?,
            });
        }
        for (i, room) in arr(get(sg, "rooms", "$.scene_graph")?, "$.scene_graph.rooms")?.iter().enumerate() {
            let p = format!("$.scene_graph.rooms[{i}]");
            let o = obj(room, &p)?;
            ssm.rooms.rooms.push(RoomInfo {
                room_id: u32_of(get(o, "room_id", &p)?, &format!("{p}.room_id"))?,
                floor_id: u32_of(get(o, "floor_id", &p)?, &format!("{p}.floor_id"))?,
                label: string(get(o, "label", &p)?, &format!("{p}.label"))?,
                cells: u32_of(get(o, "cells", &p)?, &format!("{p}.cells"))? as usize,
            });
        }

        for (i, t) in arr(get(sg, "tracks", "$.scene_graph")?, "$.scene_graph.tracks")?.iter().enumerate() {
            let p = format!("$.scene_graph.tracks[{i}]");
            let track = ssm.parse_track(t, &p)?;
            if ssm.graph.contains(track.id) {
                return Err(Error::parse(format!("{p}.id"), "duplicate track id"));
            }
            if ssm.graph.track_ids().last().is_some_and(|l| *l > track.id) {
                return Err(Error::parse(format!("{p}.id"), "tracks must be in id order"));
            }
            ssm.insert_track(track).map_err(|e| Error::parse(&p, e.to_string()))?;
        }

        for (i, e) in arr(get(sg, "edges", "$.scene_graph")?, "$.scene_graph.edges")?.iter().enumerate() {
            let p = format!("$.scene_graph.edges[{i}]");
            let o = obj(e, &p)?;
            let subject = TrackId(u32_of(get(o, "subject_id", &p)?, &format!("{p}.subject_id"))?);
            let object = TrackId(u32_of(get(o, "object_id", &p)?, &format!("{p}.object_id"))?);
            if !ssm.graph.contains(subject) {
                return Err(Error::parse(format!("{p}.subject_id"), format!("unknown node {subject}")));
            }
            if !ssm.graph.contains(object) {
                return Err(Error::parse(format!("{p}.object_id"), format!("unknown node {object}")));
            }
            let proposal = EdgeProposal {
                subject_id: subject,
                object_id: object,
                relation: string(get(o, "relation", &p)?, &format!("{p}.relation"))?,
                justification: string(get(o, "justification", &p)?, &format!("{p}.justification"))?,
                source_frame: ssm.frame_id(get(o, "source_frame", &p)?, &format!("{p}.source_frame"))?,
            };
            let report = ssm.graph.add_edges([proposal]);
            if let Some((_, why)) = report.rejected.first() {
                return Err(Error::parse(p, format!("edge rejected: {why:?}")));
            }
        }

        for (i, s) in arr(get(r, "scratchpad", "$")?, "$.scratchpad")?.iter().enumerate() {
            let p = format!("$.scratchpad[{i}]");
            let o = obj(s, &p)?;
            let node = TrackId(u32_of(get(o, "node_id", &p)?, &format!("{p}.node_id"))?);
            if !ssm.graph.contains(node) {
                return Err(Error::parse(format!("{p}.node_id"), format!("unknown node {node}")));
            }
            for (j, n) in arr(get(o, "notes", &p)?, &format!("{p}.notes"))?.iter().enumerate() {
                let np = format!("{p}.notes[{j}]");
                let no = obj(n, &np)?;
                let api = string(get(no, "source_api", &np)?, &format!("{np}.source_api"))?;
                let note = Note {
                    text: string(get(no, "text", &np)?, &format!("{np}.text"))?,
                    source_api: ApiKind::parse(&api)
                        .ok_or_else(|| Error::parse(format!("{np}.source_api"), format!("unknown api {api:?}")))?,
                    query: string(get(no, "query", &np)?, &format!("{np}.query"))?,
                    evidence_frame: ssm.frame_id(get(no, "evidence_frame", &np)?, &format!("{np}.evidence_frame"))?,
                };
                ssm.scratchpad.add_note(node, note)?;
            }
        }

        for (i, e) in arr(get(r, "navigation_log", "$")?, "$.navigation_log")?.iter().enumerate() {
            let p = format!("$.navigation_log[{i}]");
            let o = obj(e, &p)?;
            let motion = string(get(o, "motion", &p)?, &format!("{p}.motion"))?;
            let mut visible = Vec::new();
            for (j, v) in arr(get(o, "visible_node_ids", &p)?, &format!("{p}.visible_node_ids"))?
                .iter()
                .enumerate()
            {
                let vp = format!("{p}.visible_node_ids[{j}]");
                let id = TrackId(u32_of(v, &vp)?);
                if !ssm.graph.contains(id) {
                    return Err(Error::parse(vp, format!("unknown node {id}")));
                }
                visible.push(id);
            }
            let mut entry = NavLogEntry {
                frame_id: ssm.frame_id(get(o, "frame_id", &p)?, &format!("{p}.frame_id"))?,
                room_label: string(get(o, "room", &p)?, &format!("{p}.room"))?,
                fov_tag: string(get(o, "fov", &p)?, &format!("{p}.fov"))?,
                motion: MotionLabel::parse(&motion)
                    .ok_or_else(|| Error::parse(format!("{p}.motion"), format!("unknown motion {motion:?}")))?,
                visible_node_ids: Vec::new(),
            };
            for id in visible {
                entry.add_visible(id);
            }
            ssm.nav_log.push(entry);
        }

        ssm.check_invariants().map_err(|e| Error::parse("$", e.to_string()))?;
        Ok(ssm)
    }

    fn frame_id(&self, v: &Value, path: &str) -> Result<FrameId> {
        let id = FrameId(u32_of(v, path)?);
        if !self.episode.contains(id) {
            return Err(Error::parse(path, format!("frame {id} is not in the episode")));
        }
        Ok(id)
    }

    fn parse_track(&self, v: &Value, p: &str) -> Result<Track> {
        let o = obj(v, p)?;
        let mut visible_frames = Vec::new();
        for (i, f) in arr(get(o, "visible_frames", p)?, &format!("{p}.visible_frames"))?
            .iter()
            .enumerate()
        {
            let fp = format!("{p}.visible_frames[{i}]");
            let id = self.frame_id(f, &fp)?;
            if visible_frames.contains(&id) {
                return Err(Error::parse(fp, "duplicate frame"));
            }
            visible_frames.push(id);
        }
        if visible_frames.is_empty() {
            return Err(Error::parse(format!("{p}.visible_frames"), "must not be empty"));
        }
        let mut frame_boxes = BTreeMap::new();
        for (i, b) in arr(get(o, "boxes", p)?, &format!("{p}.boxes"))?.iter().enumerate() {
            let bp = format!("{p}.boxes[{i}]");
            let bo = obj(b, &bp)?;
            let f = self.frame_id(get(bo, "frame_id", &bp)?, &format!("{bp}.frame_id"))?;
            frame_boxes.insert(f, parse_bbox(get(bo, "bbox", &bp)?, &format!("{bp}.bbox"))?);
        }
        let c = obj(get(o, "cloud", p)?, &format!("{p}.cloud"))?;
        let cp = format!("{p}.cloud");
        let summary = CloudSummary {
            centroid: parse_vec3(get(c, "centroid", &cp)?, &format!("{cp}.centroid"))?,
            extent: parse_vec3(get(c, "extent", &cp)?, &format!("{cp}.extent"))?,
            count: u32_of(get(c, "count", &cp)?, &format!("{cp}.count"))? as usize,
        };
        let opt = |key: &str| -> Result<Option<u32>> {
            match get(o, key, p)? {
                Value::Null => Ok(None),
                v => u32_of(v, &format!("{p}.{key}")).map(Some),
            }
        };
        let mut history = Vec::new();
        for (i, h) in arr(get(o, "caption_history", p)?, &format!("{p}.caption_history"))?
            .iter()
            .enumerate()
        {
            history.push(string(h, &format!("{p}.caption_history[{i}]"))?);
        }
        Ok(Track {
            id: TrackId(u32_of(get(o, "id", p)?, &format!("{p}.id"))?),
            cloud: PointCloud::default(),
            summary,
            visual: None,
            language: None,
            caption: string(get(o, "caption", p)?, &format!("{p}.caption"))?,
            caption_history: history,
            room_id: opt("room_id")?,
            floor_id: opt("floor_id")?,
            visible_frames,
            frame_boxes,
        })
    }
}

fn bbox_canon(b: &BBox) -> Canon {
    Canon::Array(
        [b.u_min, b.v_min, b.u_max, b.v_max]
            .iter()
            .map(|x| Canon::Int(*x as i64))
            .collect(),
    )
}

fn get<'a>(o: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    o.get(key)
        .ok_or_else(|| Error::parse(format!("{path}.{key}"), "missing field"))
}

fn obj<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::parse(path, "expected an object"))
}

fn arr<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::parse(path, "expected an array"))
}

fn string(v: &Value, path: &str) -> Result<String> {
    v.as_str()
        .map(ToString::to_string)
        .ok_or_else(|| Error::parse(path, "expected a string"))
}

fn u32_of(v: &Value, path: &str) -> Result<u32> {
    v.as_u64()
        .and_then(|x| u32::try_from(x).ok())
        .ok_or_else(|| Error::parse(path, "expected a non-negative 32-bit integer"))
}

fn real(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::parse(path, "expected a finite number"))
}

fn parse_vec3(v: &Value, path: &str) -> Result<Vec3> {
    let a = arr(v, path)?;
    if a.len() != 3 {
        return Err(Error::parse(path, "expected three numbers"));
    }
    Ok(Vec3::new(
        real(&a[0], &format!("{path}[0]"))?,
        real(&a[1], &format!("{path}[1]"))?,
        real(&a[2], &format!("{path}[2]"))?,
    ))
}

fn parse_bbox(v: &Value, path: &str) -> Result<BBox> {
    let a = arr(v, path)?;
    if a.len() != 4 {
        return Err(Error::parse(path, "expected four integers"));
    }
    let mut c = [0u32; 4];
    for (i, x) in a.iter().enumerate() {
        c[i] = u32_of(x, &format!("{path}[{i}]"))?;
    }
    let b = BBox::new(c[0], c[1], c[2], c[3]);
    if !b.is_well_formed() {
        return Err(Error::parse(path, "empty or inverted box"));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::{Embedding, EmbeddingKind};

    fn meta(n: u32) -> EpisodeMeta {
        EpisodeMeta {
            scene_id: "s".into(),
            k: 1,
            frames: (0..n)
                .map(|i| FrameRef {
                    id: FrameId(i * 2),
                    image: format!("f{i}.png"),
                })
                .collect(),
        }
    }

    #[test]
    fn evenly_spaced_examples() {
        assert_eq!(evenly_spaced_indices(25, 5), [0, 6, 12, 18, 24]);
        assert_eq!(evenly_spaced_indices(1, 5), [0]);
        assert_eq!(evenly_spaced_indices(100, 4), [0, 33, 66, 99]);
        assert_eq!(evenly_spaced_indices(7, 1), [3]);
    }

    #[test]
    fn frame_memory_appends_once_and_rejects_unknown() {
        let m = meta(10);
        let mut fm = FrameMemory::init(&m.frame_ids(), 3).unwrap();
        assert_eq!(fm.frames(), [FrameId(0), FrameId(10), FrameId(18)]);
        assert!(fm.append(FrameId(2), &m).unwrap());
        assert!(!fm.append(FrameId(2), &m).unwrap());
        assert!(fm.append(FrameId(3), &m).is_err());
        assert_eq!(fm.len(), 4);
        assert!(FrameMemory::init(&[], 3).is_err());
    }

    fn one_track() -> Ssm {
        let mut ssm = Ssm::new(meta(3), 2).unwrap();
        let d = Detection {
            frame_id: FrameId(2),
            bbox: BBox::new(1, 2, 30, 40),
            caption: "mug".into(),
            cloud: PointCloud::new(alloc::vec![Vec3::new(1.0, 2.0, 0.5), Vec3::new(1.1, 2.0, 0.6)]),
            visual: Embedding::new(EmbeddingKind::Visual, alloc::vec![1.0, 0.0]).unwrap(),
            language: Embedding::new(EmbeddingKind::Language, alloc::vec![0.0, 1.0]).unwrap(),
        };
        let id = ssm.create_track(&d);
        ssm.add_note(
            id,
            Note {
                text: "the mug is red".into(),
                source_api: ApiKind::AnalyzeFrame,
                query: "color".into(),
                evidence_frame: FrameId(2),
            },
        )
        .unwrap();
        ssm
    }

    #[test]
    fn notes_require_a_node_and_keep_duplicates() {
        let mut ssm = one_track();
        let n = ssm.scratchpad().note(TrackId(0), 0).unwrap().clone();
        let mut again = n.clone();
        again.evidence_frame = FrameId(4);
        assert_eq!(ssm.add_note(TrackId(0), again).unwrap(), 1);
        assert!(ssm.add_note(TrackId(9), n).is_err());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ssm = one_track();
        let a = ssm.to_json().unwrap();
        let back = Ssm::deserialize(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
        assert_eq!(ssm.to_json().unwrap(), a);
    }

    #[test]
    fn dangling_edge_names_its_path() {
        let text = one_track().to_json().unwrap().replace(
            r#""edges":[]"#,
            r#""edges":[{"justification":"","object_id":7,"relation":"on_top_of","source_frame":0,"subject_id":0}]"#,
        );
        match Ssm::deserialize(&text) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "$.scene_graph.edges[0].object_id"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
