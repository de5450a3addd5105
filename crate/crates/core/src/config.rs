//! Engine configuration and its flat `key = value` form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scene_graph::AssociationConfig;
use crate::spatial::SpatialConfig;

pub const DEFAULT_ROOM_CLASSES: [&str; 8] = [
    "kitchen",
    "bathroom",
    "bedroom",
    "living room",
    "hallway",
    "office",
    "dining room",
    "unknown",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub association: AssociationConfig,
    pub voxel_size: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_points: usize,
    /// Caption history length that triggers consolidation.
    pub consolidation_threshold: usize,
    /// Dimension of the fallback hashed embeddings.
    pub embedding_dim: usize,
    pub spatial: SpatialConfig,
    pub room_classes: Vec<String>,
    pub n_img: usize,
    /// Construction aborts when more than this fraction of frames fail.
    pub max_frame_failure_ratio: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            association: AssociationConfig::default(),
            voxel_size: 0.02,
            dbscan_eps: 0.5,
            dbscan_min_points: 5,
            consolidation_threshold: 5,
            embedding_dim: 32,
            spatial: SpatialConfig::default(),
            room_classes: DEFAULT_ROOM_CLASSES.iter().map(|s| s.to_string()).collect(),
            n_img: 5,
            max_frame_failure_ratio: 0.5,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::parse(key, format!("expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::parse(key, format!("expected a non-negative integer, got {v:?}")))
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.association.validate()?;
        self.spatial.validate()?;
        if !(self.voxel_size > 0.0) || !(self.dbscan_eps > 0.0) || self.dbscan_min_points < 1 {
            return Err(Error::contract("voxel_size, dbscan_eps and dbscan_min_points must be positive"));
        }
        if self.consolidation_threshold < 2 {
            return Err(Error::contract("consolidation_threshold must be at least 2"));
        }
        if self.embedding_dim == 0 || self.n_img == 0 {
            return Err(Error::contract("embedding_dim and n_img must be positive"));
        }
        if self.room_classes.is_empty() {
            return Err(Error::contract("room_classes must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.max_frame_failure_ratio) {
            return Err(Error::contract("max_frame_failure_ratio must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let a = &mut self.association;
        let s = &mut self.spatial;
        match key {
            "tau_v" => a.tau_v = parse_f64(key, v)?,
            "tau_l" => a.tau_l = parse_f64(key, v)?,
            "tau_g" => a.tau_g = parse_f64(key, v)?,
            "delta_g" => a.delta_g = parse_f64(key, v)?,
            "vote_min" => {
                a.vote_min = parse_usize(key, v)?
                    .try_into()
                    .map_err(|_| Error::parse(key, "out of range"))?
            }
            "alpha" => a.alpha = parse_f64(key, v)?,
            "voxel_size" => self.voxel_size = parse_f64(key, v)?,
            "dbscan_eps" => self.dbscan_eps = parse_f64(key, v)?,
            "dbscan_min_points" => self.dbscan_min_points = parse_usize(key, v)?,
            "consolidation_threshold" => self.consolidation_threshold = parse_usize(key, v)?,
            "embedding_dim" => self.embedding_dim = parse_usize(key, v)?,
            "n_img" => self.n_img = parse_usize(key, v)?,
            "max_frame_failure_ratio" => self.max_frame_failure_ratio = parse_f64(key, v)?,
            "floor_bin" => s.floor_bin = parse_f64(key, v)?,
            "floor_mode_separation" => s.floor_mode_separation = parse_f64(key, v)?,
            "grid_cell" => s.grid_cell = parse_f64(key, v)?,
            "room_peak_separation" => s.room_peak_separation = parse_f64(key, v)?,
            "yaw_threshold_deg" => s.yaw_threshold_deg = parse_f64(key, v)?,
            "translation_threshold" => s.translation_threshold = parse_f64(key, v)?,
            "vertical_threshold" => s.vertical_threshold = parse_f64(key, v)?,
            "floor_band" => s.floor_band = parse_f64(key, v)?,
            "wall_band_low" => s.wall_band_low = parse_f64(key, v)?,
            "wall_band_high" => s.wall_band_high = parse_f64(key, v)?,
            "room_lookup_radius" => s.room_lookup_radius = parse_f64(key, v)?,
            "depth_stride" => s.depth_stride = parse_usize(key, v)?,
            "room_classes" => {
                self.room_classes = v
                    .split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect()
            }
            _ => return Err(Error::parse(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Every settable field with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.association;
        let s = &self.spatial;
        vec![
            ("tau_v", a.tau_v.to_string()),
            ("tau_l", a.tau_l.to_string()),
            ("tau_g", a.tau_g.to_string()),
            ("delta_g", a.delta_g.to_string()),
            ("vote_min", a.vote_min.to_string()),
            ("alpha", a.alpha.to_string()),
            ("voxel_size", self.voxel_size.to_string()),
            ("dbscan_eps", self.dbscan_eps.to_string()),
            ("dbscan_min_points", self.dbscan_min_points.to_string()),
            ("consolidation_threshold", self.consolidation_threshold.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("n_img", self.n_img.to_string()),
            ("max_frame_failure_ratio", self.max_frame_failure_ratio.to_string()),
            ("floor_bin", s.floor_bin.to_string()),
            ("floor_mode_separation", s.floor_mode_separation.to_string()),
            ("grid_cell", s.grid_cell.to_string()),
            ("room_peak_separation", s.room_peak_separation.to_string()),
            ("yaw_threshold_deg", s.yaw_threshold_deg.to_string()),
            ("translation_threshold", s.translation_threshold.to_string()),
            ("vertical_threshold", s.vertical_threshold.to_string()),
            ("floor_band", s.floor_band.to_string()),
            ("wall_band_low", s.wall_band_low.to_string()),
            ("wall_band_high", s.wall_band_high.to_string()),
            ("room_lookup_radius", s.room_lookup_radius.to_string()),
            ("depth_stride", s.depth_stride.to_string()),
            ("room_classes", self.room_classes.join(", ")),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip_through_set() {
        let mut cfg = EngineConfig::default();
        cfg.association.tau_v = 0.65;
        cfg.room_classes = vec!["kitchen".into(), "garage".into()];
        let mut back = EngineConfig::default();
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.validate().is_ok());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(EngineConfig::default().set("tau_x", "1").is_err());
        assert!(EngineConfig::default().set("tau_v", "high").is_err());
    }
}
