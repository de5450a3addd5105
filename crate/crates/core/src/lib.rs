//! Editable structured scene memory for embodied question answering.
//!
//! The crate builds a scene graph, a per-node scratch-pad, a frame memory and
//! a navigation log from posed RGB-D keyframes, and lets a reasoning agent
//! patch that memory through three language-callable APIs inside a bounded
//! loop. Everything model-dependent goes through [`backend`].
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! network transports live in the companion `ssm` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod api;
pub mod backend;
pub mod canonical;
pub mod config;
pub mod episode;
pub mod error;
pub mod geometry;
pub mod ids;
pub mod math;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod reasoning;
pub mod scene_graph;
pub mod spatial;
pub mod synth;

pub use config::EngineConfig;
pub use error::{Error, Result};
pub use ids::{FrameId, TrackId};
pub use memory::Ssm;
