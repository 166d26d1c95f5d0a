//! Hierarchically modular agent system for long-form survey generation.
//!
//! Functional stages (grouping, skeleton initialization, digest
//! construction, skeleton refinement, ...) run as independent tool servers
//! speaking the model context protocol. Three agents with enforced server
//! access drive them, and an LLM-backed planner picks the next tool sequence
//! from the execution history.

pub mod agents;
pub mod config;
pub mod events;
pub mod model;
pub mod orchestra;
pub mod protocol;
pub mod service;
pub mod servers;
pub mod state;
pub mod text;
