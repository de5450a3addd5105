//! Posed RGB-D keyframes of one pre-recorded scan.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::ids::FrameId;

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: FrameId,
    /// Opaque image locator (path or URL); never decoded here.
    pub image: String,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub scene_id: String,
    /// Stride the keyframes were sampled with.
    pub k: u32,
    pub frames: Vec<Keyframe>,
}

impl Episode {
    pub fn new(scene_id: impl Into<String>, k: u32, frames: Vec<Keyframe>) -> Result<Self> {
        let ep = Episode {
            scene_id: scene_id.into(),
            k,
            frames,
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::contract("stride k must be at least 1"));
        }
        for w in self.frames.windows(2) {
            if w[1].id <= w[0].id {
                return Err(Error::contract(alloc::format!(
                    "frame ids not strictly increasing at frame {}",
                    w[1].id
                )));
            }
        }
        for f in &self.frames {
            f.intrinsics.validate()?;
            f.pose.validate()?;
            if f.depth.width != f.intrinsics.width || f.depth.height != f.intrinsics.height {
                return Err(Error::contract(alloc::format!(
                    "frame {}: depth size differs from intrinsics",
                    f.id
                )));
            }
        }
        Ok(())
    }

    pub fn frame(&self, id: FrameId) -> Option<&Keyframe> {
        self.frames
            .binary_search_by_key(&id, |f| f.id)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn frame_ids(&self) -> Vec<FrameId> {
        self.frames.iter().map(|f| f.id).collect()
    }
}
