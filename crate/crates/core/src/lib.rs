//! Trajectory-language benchmark toolkit.
//!
//! Deterministic machinery for pairing map-matched urban trajectories with
//! natural-language annotations: phase-based trajectory compression, intent
//! sampling, prompt assembly and quality control, three proof-of-concept
//! models (anchor-based routing, fused retrieval, retrieval-augmented
//! captioning), and the three-task evaluation protocol that scores them.
//! Everything runs offline on synthetic or user-supplied inputs; remote
//! LLM/embedding providers plug in behind the interfaces in [`provider`].

pub mod geo;
pub mod roadnet;
pub mod traj;
pub mod intent;
pub mod provider;
pub mod metrics;
pub mod annotate;
pub mod anchor;
pub mod bm25;
pub mod fuse;
pub mod harness;
pub mod rap;
pub(crate) mod jsonl;

pub use geo::{CellId, CellIndex, CellMeta, Compass8, GeoPoint, HexConfig};
