//! Orthogonal transform knowledge-graph embeddings (OTE) with directed graph context (GC-OTE).

pub mod config;
pub mod data;
pub mod eval;
pub mod gc;
pub mod numeric;
pub mod ote;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod train;
pub mod verify;
