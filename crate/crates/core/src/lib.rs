//! Core engine for living, machine-readable research publications.

pub mod clock;
pub mod config;
pub mod digest;
pub mod engine;
pub mod graph;
pub mod index;
pub mod ingest;
pub mod providers;
pub mod query;
pub mod store;
pub mod synth;
pub mod text;
pub mod verify;
