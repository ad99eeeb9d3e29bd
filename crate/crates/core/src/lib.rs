//! Deterministic discrete-event simulator for multi-RAT vehicular networks.
//!
//! A city is partitioned into fog areas, each managed by a fog orchestrator
//! that hosts a service engine (stream classification and admission) and an
//! access controller (RAT selection). Connected vehicles generate layered
//! data streams (a safety base layer plus two enhancement layers) that are
//! mapped onto DSRC, C-V2X and mmWave link models and reported as per-message
//! KPI records.

pub mod control_plane;
pub mod data_plane;
pub mod engine;
pub mod fog;
pub mod kpi;
pub mod rat;
pub mod report;
pub mod scenario;
pub mod topology;
pub mod world;

pub use scenario::{parse_config, parse_config_str, Scenario};
pub use world::{run_scenario, RunOutput};
