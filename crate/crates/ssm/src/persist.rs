//! Persistence directory:
//!
//! * `ssm.json` — canonical text, the source of truth for everything but
//!   raw geometry and embeddings;
//! * `clouds.bin` — `"SSMC"`, then per track: id `u32`, count `u32`,
//!   `count` × (x, y, z) `f32`;
//! * `embeddings.bin` — `"SSME"`, then per vector: track id `u32`, kind
//!   `u8` (0 visual, 1 language), dimension `u32`, `dim` × `f32`;
//! * `source.json` — optional: the dataset and stride the memory was built
//!   from, so later `ask` calls can reach the keyframes.
//!
//! All integers and floats are little-endian.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssm_core::geometry::PointCloud;
use ssm_core::math::Vec3;
use ssm_core::scene_graph::{Embedding, EmbeddingKind};
use ssm_core::{Ssm, TrackId};

use crate::{io_err, read_text, write_file, Error, Result};

pub const SSM_FILE: &str = "ssm.json";
pub const CLOUDS_FILE: &str = "clouds.bin";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const SOURCE_FILE: &str = "source.json";
pub const METRICS_FILE: &str = "metrics.json";

const CLOUDS_MAGIC: &[u8; 4] = b"SSMC";
const EMBEDDINGS_MAGIC: &[u8; 4] = b"SSME";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub dataset: PathBuf,
    pub k: u32,
}

pub fn encode_clouds(ssm: &Ssm) -> Vec<u8> {
    let mut out = CLOUDS_MAGIC.to_vec();
    for t in ssm.graph().tracks() {
        out.extend(t.id.0.to_le_bytes());
        out.extend((t.cloud.len() as u32).to_le_bytes());
        for p in &t.cloud.points {
            for c in p.to_array() {
                out.extend((c as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn encode_embeddings(ssm: &Ssm) -> Vec<u8> {
    let mut out = EMBEDDINGS_MAGIC.to_vec();
    for t in ssm.graph().tracks() {
        for (tag, e) in [(0u8, &t.visual), (1u8, &t.language)] {
            let Some(e) = e else { continue };
            out.extend(t.id.0.to_le_bytes());
            out.push(tag);
            out.extend((e.dim() as u32).to_le_bytes());
            for x in e.vector() {
                out.extend((*x as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4], path: &'a Path) -> Result<Self> {
        if bytes.get(..4) != Some(magic.as_slice()) {
            return Err(Error::format(path, "bad magic"));
        }
        Ok(Reader { bytes, at: 4, path })
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.at..self.at + N)
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.at)))?;
        self.at += N;
        Ok(s.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f64> {
        self.take().map(|b| f32::from_le_bytes(b) as f64)
    }
}

pub fn decode_clouds(bytes: &[u8], path: &Path) -> Result<Vec<(TrackId, PointCloud)>> {
    let mut r = Reader::new(bytes, CLOUDS_MAGIC, path)?;
    let mut out = Vec::new();
    while !r.done() {
        let id = TrackId(r.u32()?);
        let n = r.u32()? as usize;
        let mut points = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            points.push(Vec3::new(r.f32()?, r.f32()?, r.f32()?));
        }
        out.push((id, PointCloud::new(points)));
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<Vec<(TrackId, Embedding)>> {
    let mut r = Reader::new(bytes, EMBEDDINGS_MAGIC, path)?;
    let mut out = Vec::new();
    while !r.done() {
        let id = TrackId(r.u32()?);
        let kind = match r.take::<1>()?[0] {
            0 => EmbeddingKind::Visual,
            1 => EmbeddingKind::Language,
            k => return Err(Error::format(path, format!("track {id}: unknown embedding kind {k}"))),
        };
        let dim = r.u32()? as usize;
        let v = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let e = Embedding::new(kind, v).map_err(|e| Error::format(path, format!("track {id}: {e}")))?;
        out.push((id, e));
    }
    Ok(out)
}

pub fn save(dir: &Path, ssm: &Ssm, source: Option<&Source>) -> Result<()> {
    let text = ssm.to_json()?;
    write_file(&dir.join(SSM_FILE), text)?;
    write_file(&dir.join(CLOUDS_FILE), encode_clouds(ssm))?;
    write_file(&dir.join(EMBEDDINGS_FILE), encode_embeddings(ssm))?;
    if let Some(s) = source {
        let json = serde_json::to_string_pretty(s).expect("source serializes");
        write_file(&dir.join(SOURCE_FILE), json + "\n")?;
    }
    Ok(())
}

/// Reloads a saved memory. Raw clouds and embeddings come back when their
/// files are present; the serialized summaries are kept as written so the
/// canonical text is unchanged by a save/load cycle.
pub fn load(dir: &Path) -> Result<Ssm> {
    let mut ssm = Ssm::deserialize(&read_text(&dir.join(SSM_FILE))?)?;
    let clouds = dir.join(CLOUDS_FILE);
    if clouds.is_file() {
        let bytes = std::fs::read(&clouds).map_err(io_err(&clouds))?;
        for (id, cloud) in decode_clouds(&bytes, &clouds)? {
            ssm.restore_geometry(id, |t| t.cloud = cloud)?;
        }
    }
    let embeddings = dir.join(EMBEDDINGS_FILE);
    if embeddings.is_file() {
        let bytes = std::fs::read(&embeddings).map_err(io_err(&embeddings))?;
        for (id, e) in decode_embeddings(&bytes, &embeddings)? {
            ssm.restore_geometry(id, |t| match e.kind() {
                EmbeddingKind::Visual => t.visual = Some(e),
                EmbeddingKind::Language => t.language = Some(e),
            })?;
        }
    }
    Ok(ssm)
}

pub fn load_source(dir: &Path) -> Result<Option<Source>> {
    let path = dir.join(SOURCE_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    serde_json::from_str(&read_text(&path)?)
        .map(Some)
        .map_err(|e| Error::format(&path, e.to_string()))
}
