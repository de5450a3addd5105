//! Episode datasets: a JSON-lines manifest, one keyframe per line, with
//! depth stored as 16-bit millimetre PNGs.
//!
//! ```text
//! {"scene_id":"apt-3","id":0,"image":"rgb/00000.jpg","depth":"depth/00000.png",
//!  "pose":{"rotation":[r00,r01,r02,r10,r11,r12,r20,r21,r22],"translation":[x,y,z]},
//!  "intrinsics":{"fx":..,"fy":..,"cx":..,"cy":..,"width":640,"height":480},
//!  "timestamp":0.0}
//! ```
//!
//! Locators are relative to the manifest's directory. Image locators with a
//! URL scheme (`synthetic://…`, `https://…`) are passed through unchecked;
//! depth locators must name a readable file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssm_core::episode::{Episode, Keyframe};
use ssm_core::geometry::{CameraIntrinsics, DepthMap, Pose};
use ssm_core::math::{Mat3, Vec3};
use ssm_core::FrameId;

use crate::{io_err, read_text, Error, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major world-from-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub scene_id: String,
    pub id: u32,
    pub image: String,
    pub depth: String,
    pub pose: PoseRecord,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub timestamp: f64,
}

/// Accepts either the manifest file or a directory holding `manifest.jsonl`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<FrameRecord>> {
    let path = manifest_path(path);
    let text = read_text(&path)?;
    let mut out: Vec<FrameRecord> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(&path, format!("line {}: {e}", n + 1)))?;
        if let Some(first) = out.first() {
            if rec.scene_id != first.scene_id {
                return Err(Error::format(
                    &path,
                    format!("frame {}: scene id {:?} differs from {:?}", rec.id, rec.scene_id, first.scene_id),
                ));
            }
        }
        if out.last().is_some_and(|l| l.id >= rec.id) {
            return Err(Error::format(&path, format!("frame {}: ids must be strictly increasing", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

fn has_scheme(locator: &str) -> bool {
    locator.contains("://")
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = png::Decoder::new(file)
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, "depth must be a 16-bit grayscale PNG"));
    }
    let values = buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 1000.0)
        .collect();
    Ok(DepthMap::new(info.width, info.height, values)?)
}

/// Millimetre quantisation; depths beyond 65.535 m saturate.
pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), depth.width, depth.height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    let bytes: Vec<u8> = depth
        .values
        .iter()
        .flat_map(|z| {
            let mm = if z.is_finite() && *z > 0.0 {
                (z * 1000.0).round().clamp(0.0, u16::MAX as f32) as u16
            } else {
                0
            };
            mm.to_be_bytes()
        })
        .collect();
    writer.write_image_data(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::format(path, e.to_string()))
}

fn keyframe(rec: &FrameRecord, base: &Path, manifest: &Path) -> Result<Keyframe> {
    let named = |e: &dyn std::fmt::Display| Error::format(manifest, format!("frame {}: {e}", rec.id));
    if !has_scheme(&rec.image) && !base.join(&rec.image).is_file() {
        return Err(named(&format!("image locator {:?} does not resolve", rec.image)));
    }
    let depth_path = base.join(&rec.depth);
    if !depth_path.is_file() {
        return Err(named(&format!("depth locator {:?} does not resolve", rec.depth)));
    }
    let depth = read_depth_png(&depth_path).map_err(|e| named(&e))?;
    let rotation = Mat3::from_row_major(&rec.pose.rotation);
    let pose = Pose::new(rotation, Vec3::from(rec.pose.translation)).map_err(|e| named(&e))?;
    rec.intrinsics.validate().map_err(|e| named(&e))?;
    if (depth.width, depth.height) != (rec.intrinsics.width, rec.intrinsics.height) {
        return Err(named(&"depth size differs from intrinsics"));
    }
    Ok(Keyframe {
        id: FrameId(rec.id),
        image: rec.image.clone(),
        depth,
        intrinsics: rec.intrinsics,
        pose,
        timestamp: rec.timestamp,
    })
}

/// Every `k`-th manifest record (the first, the (k+1)-th, …) as an episode.
pub fn load_dataset(path: &Path, k: u32) -> Result<Episode> {
    let manifest = manifest_path(path);
    if k < 1 {
        return Err(Error::format(&manifest, "stride k must be at least 1"));
    }
    let records = read_manifest(&manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let frames = records
        .iter()
        .step_by(k as usize)
        .map(|r| keyframe(r, base, &manifest))
        .collect::<Result<Vec<_>>>()?;
    let scene_id = records.first().map(|r| r.scene_id.clone()).unwrap_or_default();
    Ok(Episode::new(scene_id, k, frames)?)
}

/// Writes `episode` as a dataset under `dir`: `manifest.jsonl` plus
/// `depth/<id>.png`. Image locators are copied as they are.
pub fn write_dataset(dir: &Path, episode: &Episode) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = dir.join(MANIFEST_NAME);
    let mut out = BufWriter::new(File::create(&manifest).map_err(io_err(&manifest))?);
    for f in &episode.frames {
        let depth = format!("depth/{:05}.png", f.id.0);
        write_depth_png(&dir.join(&depth), &f.depth)?;
        let rec = FrameRecord {
            scene_id: episode.scene_id.clone(),
            id: f.id.0,
            image: f.image.clone(),
            depth,
            pose: PoseRecord {
                rotation: f.pose.rotation.to_row_major(),
                translation: f.pose.translation.to_array(),
            },
            intrinsics: f.intrinsics,
            timestamp: f.timestamp,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::format(&manifest, e.to_string()))?;
        writeln!(out, "{line}").map_err(io_err(&manifest))?;
    }
    out.flush().map_err(io_err(&manifest))
}
