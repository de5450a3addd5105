//! Initial memory construction from an episode of keyframes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::{
    fallback_embedding, BackendClient, BackendRequest, BackendResponse, DetectItem, FrameContext, VisibleNode,
};
use crate::config::EngineConfig;
use crate::episode::{Episode, Keyframe};
use crate::error::{Error, Result};
use crate::geometry::{backproject, largest_cluster, voxel_downsample, PixelMask};
use crate::ids::{FrameId, TrackId};
use crate::memory::{EpisodeMeta, FrameMemory, Ssm};
use crate::scene_graph::{
    associate, consolidate_captions, edge_discovery_due, merge_detection, Assignment, Detection, EdgeProposal,
    Embedding, EmbeddingKind,
};
use crate::spatial::{
    build_nav_entry, detect_floors, label_rooms, occupancy_from_depth, segment_rooms, RoomModel,
};

fn embedding(v: &Option<Vec<f64>>, caption: &str, kind: EmbeddingKind, dim: usize) -> Result<Embedding> {
    match v {
        Some(v) => Embedding::new(kind, v.clone()),
        None => Ok(fallback_embedding(caption, kind, dim)),
    }
}

/// Turns a model's detection into a cleaned world-frame detection: mask (or
/// box) → back-projection → voxel downsampling → largest cluster.
pub fn make_detection(item: &DetectItem, frame: &Keyframe, cfg: &EngineConfig) -> Result<Detection> {
    let (w, h) = (frame.intrinsics.width, frame.intrinsics.height);
    if !item.bbox.is_well_formed() || !item.bbox.fits(w, h) {
        return Err(Error::contract(format!("box {:?} outside the {w}x{h} frame", item.bbox)));
    }
    let mask = match &item.mask {
        Some(runs) => PixelMask::from_runs(w, h, runs)?,
        None => PixelMask::from_bbox(w, h, &item.bbox)?,
    };
    let raw = backproject(&frame.depth, &mask, &frame.intrinsics, &frame.pose)?;
    let down = voxel_downsample(&raw, cfg.voxel_size)?;
    let cloud = largest_cluster(&down, cfg.dbscan_eps, cfg.dbscan_min_points)?;
    Ok(Detection {
        frame_id: frame.id,
        bbox: item.bbox,
        caption: item.caption.clone(),
        cloud,
        visual: embedding(&item.visual, &item.caption, EmbeddingKind::Visual, cfg.embedding_dim)?,
        language: embedding(&item.language, &item.caption, EmbeddingKind::Language, cfg.embedding_dim)?,
    })
}

/// Assigns floor and room to a track seen from a camera at `camera_z`.
pub fn place_track(ssm: &mut Ssm, id: TrackId, camera_z: f64, cfg: &EngineConfig) {
    let floor = ssm.floors.floor_of(camera_z);
    let Some(t) = ssm.graph.track(id) else {
        return;
    };
    let c = t.summary.centroid;
    let room = floor.and_then(|f| {
        ssm.rooms
            .nearest_room(f, c.x, c.y, cfg.spatial.room_lookup_radius)
    });
    if let Some(t) = ssm.graph.track_mut(id) {
        t.floor_id = floor;
        t.room_id = room;
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

/// Outcome of construction besides the memory itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildReport {
    pub failed_frames: Vec<FrameId>,
    pub dropped_detections: usize,
    pub edges_accepted: usize,
    pub edges_rejected: usize,
    pub consolidations: usize,
}

pub fn build_ssm(episode: &Episode, client: &mut BackendClient, cfg: &EngineConfig) -> Result<Ssm> {
    build_ssm_with_report(episode, client, cfg).map(|(s, _)| s)
}

/// Full initial construction: per-frame detection and association, edge
/// discovery every third frame, caption consolidation, floors and rooms,
/// navigation log and the initial frame memory.
pub fn build_ssm_with_report(
    episode: &Episode,
    client: &mut BackendClient,
    cfg: &EngineConfig,
) -> Result<(Ssm, BuildReport)> {
    if episode.frames.is_empty() {
        return Err(Error::contract("episode has no frames"));
    }
    episode.validate()?;
    cfg.validate()?;
    let mut ssm = Ssm::new(EpisodeMeta::of(episode), cfg.n_img)?;
    let mut report = BuildReport::default();

    for (idx, frame) in episode.frames.iter().enumerate() {
        let ctx = context(frame);
        let items = match client.call(&BackendRequest::detect(&ctx, None)) {
            Ok(BackendResponse::Detect(items)) => items,
            Ok(_) => {
                log::warn!("frame {}: unexpected detect response, skipping", frame.id);
                report.failed_frames.push(frame.id);
                continue;
            }
            Err(e) => {
                log::warn!("frame {}: detect failed ({e}), skipping", frame.id);
                report.failed_frames.push(frame.id);
                continue;
            }
        };
        let mut detections = Vec::with_capacity(items.len());
        for item in &items {
            match make_detection(item, frame, cfg) {
                Ok(d) => detections.push(d),
                Err(e) => {
                    log::warn!("frame {}: dropping detection {:?}: {e}", frame.id, item.caption);
                    report.dropped_detections += 1;
                }
            }
        }
        let assignments = associate(&detections, ssm.graph.tracks(), &cfg.association)?;
        let mut touched = Vec::with_capacity(detections.len());
        for (d, a) in detections.iter().zip(assignments) {
            let id = match a {
                Assignment::Track(id) => {
                    let t = ssm
                        .graph
                        .track(id)
                        .ok_or_else(|| Error::invariant(format!("matched track {id} vanished")))?;
                    let merged = merge_detection(t, d, &cfg.association, cfg.voxel_size)?;
                    ssm.graph.replace_track(merged)?;
                    id
                }
                Assignment::New => ssm.create_track(d),
            };
            touched.push(id);
        }

        if edge_discovery_due(idx) && touched.len() >= 2 {
            let visible: Vec<VisibleNode> = touched
                .iter()
                .filter_map(|id| ssm.graph.track(*id))
                .filter_map(|t| {
                    t.frame_boxes.get(&frame.id).map(|b| VisibleNode {
                        node_id: t.id,
                        bbox: *b,
                        caption: t.caption.clone(),
                    })
                })
                .collect();
            match client.call(&BackendRequest::relations(&ctx, &visible)) {
                Ok(BackendResponse::Relations(rels)) => {
                    let proposals = rels.into_iter().map(|r| EdgeProposal {
                        subject_id: r.subject_id,
                        object_id: r.object_id,
                        relation: String::from(r.relation.label()),
                        justification: r.justification,
                        source_frame: frame.id,
                    });
                    let rep = ssm.graph.add_edges(proposals);
                    report.edges_accepted += rep.accepted.len();
                    report.edges_rejected += rep.rejected.len();
                }
                Ok(_) => log::warn!("frame {}: unexpected relations response", frame.id),
                Err(e) => log::warn!("frame {}: relation discovery failed: {e}", frame.id),
            }
        }

        for id in &touched {
            if let Some(t) = ssm.graph.track_mut(*id) {
                match consolidate_captions(t, client, cfg.consolidation_threshold) {
                    Ok(true) => report.consolidations += 1,
                    Ok(false) => {}
                    Err(e) => log::warn!("track {id}: caption consolidation failed: {e}"),
                }
            }
        }
    }

    let n = episode.frames.len();
    if report.failed_frames.len() as f64 > cfg.max_frame_failure_ratio * n as f64 {
        return Err(Error::Other(format!(
            "{} of {n} frames failed detection; aborting construction",
            report.failed_frames.len()
        )));
    }

    // Floors and rooms.
    let heights: Vec<f64> = episode.frames.iter().map(|f| f.pose.translation.z).collect();
    ssm.floors = detect_floors(&heights, cfg.spatial.floor_bin, cfg.spatial.floor_mode_separation)?;
    let mut rooms = RoomModel::default();
    for floor in ssm.floors.floors.clone() {
        let frames: Vec<&Keyframe> = episode
            .frames
            .iter()
            .filter(|f| ssm.floors.floor_of(f.pose.translation.z) == Some(floor.floor_id))
            .collect();
        if let Some(grid) = occupancy_from_depth(&frames, &cfg.spatial)? {
            let seg = segment_rooms(&grid, cfg.spatial.room_peak_separation);
            rooms.add_floor(floor.floor_id, grid, seg);
        }
    }
    ssm.rooms = rooms;
    for id in ssm.graph.track_ids() {
        let first = ssm.graph.track(id).and_then(|t| t.visible_frames.first().copied());
        if let Some(z) = first.and_then(|f| episode.frame(f)).map(|f| f.pose.translation.z) {
            place_track(&mut ssm, id, z, cfg);
        }
    }
    let mut members: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for t in ssm.graph.tracks() {
        if let Some(r) = t.room_id {
            members.entry(r).or_default().push(t.caption.clone());
        }
    }
    label_rooms(&mut ssm.rooms, &members, client, &cfg.room_classes)?;

    // Navigation log: one entry per keyframe, in episode order.
    let mut prev: Option<&Keyframe> = None;
    for frame in &episode.frames {
        let visible: Vec<TrackId> = ssm
            .graph
            .tracks()
            .filter(|t| t.frame_boxes.contains_key(&frame.id))
            .map(|t| t.id)
            .collect();
        let captions: Vec<String> = visible
            .iter()
            .filter_map(|id| ssm.graph.track(*id))
            .map(|t| t.caption.clone())
            .collect();
        let entry = build_nav_entry(frame, prev, &ssm.rooms, &ssm.floors, visible, &captions, client, &cfg.spatial);
        ssm.nav_log.push(entry);
        prev = Some(frame);
    }

    ssm.frame_memory = FrameMemory::init(&episode.frame_ids(), cfg.n_img)?;
    ssm.check_invariants()?;
    Ok((ssm, report))
}
