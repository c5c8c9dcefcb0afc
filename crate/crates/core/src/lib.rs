//! Geographically grounded safety-critical driving scenario synthesis.
//!
//! The pipeline turns a coordinate (or a local OSM extract) into a scenario package:
//! a lane-level map in three formats, traffic demand, multi-agent trajectories with
//! injected adversities, six-camera HDMap conditioning frames and per-view prompts.

pub mod geo;
pub mod geom;
pub mod class;
pub mod map;
pub mod demand;
pub mod adversity;
pub mod sim;
pub mod hdmap;
pub mod prompt;
pub mod pipeline;

pub use class::AgentClass;
