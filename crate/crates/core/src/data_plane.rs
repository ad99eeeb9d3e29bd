//! The scalable data plane: per-service stream generation, classification
//! into base / enhancement layers, and BSM scheduling.
//!
//! Every service exchanges streams that comprise up to three independent
//! layers: the base layer carries SAE J2735 safety messages, the first
//! enhancement layer carries processed feature streams, and the second
//! enhancement layer carries raw sensor streams with no reliability
//! constraints.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::engine::SimRng;
use rand::Rng;

/// BSMs are broadcast up to every 0.1 s; smaller base-layer periods are
/// rejected.
pub const MIN_BASE_PERIOD_S: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerId {
    Base,
    Enh1,
    Enh2,
}

impl LayerId {
    pub const ALL: [LayerId; 3] = [LayerId::Base, LayerId::Enh1, LayerId::Enh2];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerId::Base => "base",
            LayerId::Enh1 => "enh1",
            LayerId::Enh2 => "enh2",
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    TrafficPlanning,
    EmergencyRouting,
    MultimodalCommuting,
    SafetyCore,
}

impl Service {
    pub fn as_str(&self) -> &'static str {
        match self {
            Service::TrafficPlanning => "traffic_planning",
            Service::EmergencyRouting => "emergency_routing",
            Service::MultimodalCommuting => "multimodal_commuting",
            Service::SafetyCore => "safety_core",
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoRelevance {
    Local,
    FogArea,
    City,
}

#[derive(Debug, Error, PartialEq)]
pub enum DataPlaneError {
    #[error("unknown message type `{0}`")]
    UnknownMsgType(String),
    #[error("inverted rate interval [{0}, {1}]")]
    InvertedInterval(f64, f64),
    #[error("invalid stream descriptor `{msg_type}`: {reason}")]
    InvalidDescriptor { msg_type: String, reason: String },
}

/// One ITS data stream generated by a vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamDescriptor {
    pub service: Service,
    pub msg_type: String,
    pub layer: LayerId,
    /// Stream rate, drawn once per run within the catalog interval.
    pub rate_bps: f64,
    pub geo_relevance: GeoRelevance,
    pub reliable: bool,
    /// Message emission period: payload_bytes * 8 / rate.
    pub period_s: f64,
    pub payload_bytes: u64,
}

impl StreamDescriptor {
    pub fn validate(&self) -> Result<(), DataPlaneError> {
        let bad = |reason: String| DataPlaneError::InvalidDescriptor {
            msg_type: self.msg_type.clone(),
            reason,
        };
        if self.layer == LayerId::Enh2 && self.reliable {
            return Err(bad(
                "second-enhancement-layer streams carry no reliability constraint".into(),
            ));
        }
        if self.layer == LayerId::Base && self.geo_relevance != GeoRelevance::Local {
            return Err(bad("base-layer streams are locally relevant".into()));
        }
        if self.layer == LayerId::Base && self.period_s < MIN_BASE_PERIOD_S {
            return Err(bad(format!(
                "base-layer period {} s is below the {} s floor",
                self.period_s, MIN_BASE_PERIOD_S
            )));
        }
        if self.rate_bps <= 0.0 || self.payload_bytes == 0 {
            return Err(bad("rate and payload must be positive".into()));
        }
        Ok(())
    }
}

/// Message catalog row: what a message type is, which service emits it, and
/// the estimated rate interval for one vehicle's stream.
#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub msg_type: String,
    pub service: Service,
    pub layer: LayerId,
    pub rate_bps: (f64, f64),
    pub geo_relevance: GeoRelevance,
    /// Instantiated by `service_streams` when its service is enabled;
    /// opt-in sources (raw camera/radar) are listed but not default.
    pub default_enabled: bool,
    /// Per-type payload override; defaults to the layer payload.
    pub payload_bytes: Option<u64>,
}

/// Default payload sizes per layer, bytes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayloadDefaults {
    pub base: u64,
    pub enh1: u64,
    pub enh2: u64,
}

impl Default for PayloadDefaults {
    fn default() -> Self {
        PayloadDefaults {
            base: 300,
            enh1: 1_500,
            enh2: 65_536,
        }
    }
}

impl PayloadDefaults {
    pub fn for_layer(&self, layer: LayerId) -> u64 {
        match layer {
            LayerId::Base => self.base,
            LayerId::Enh1 => self.enh1,
            LayerId::Enh2 => self.enh2,
        }
    }
}

fn entry(
    msg_type: &str,
    service: Service,
    rate_bps: (f64, f64),
    geo_relevance: GeoRelevance,
    default_enabled: bool,
) -> CatalogEntry {
    CatalogEntry {
        msg_type: msg_type.to_string(),
        service,
        layer: classify_layer(msg_type).expect("builtin type classifies"),
        rate_bps,
        geo_relevance,
        default_enabled,
        payload_bytes: None,
    }
}

/// The built-in message catalog. `bsm_rate_bps` is derived from the
/// configured BSM payload and period.
pub fn builtin_catalog(bsm_rate_bps: f64) -> Vec<CatalogEntry> {
    use GeoRelevance::*;
    use Service::*;
    vec![
        entry("map_grid", TrafficPlanning, (10e3, 10e6), City, true),
        entry("cav_positions", TrafficPlanning, (10e3, 800e3), City, true),
        entry("routes", TrafficPlanning, (80e3, 800e3), City, true),
        entry("lidar_raw", EmergencyRouting, (50e6, 250e6), FogArea, true),
        entry(
            "bounding_boxes",
            EmergencyRouting,
            (80e3, 800e3),
            FogArea,
            true,
        ),
        entry("trajectory", EmergencyRouting, (80e3, 800e3), FogArea, true),
        entry("parking", MultimodalCommuting, (10e3, 10e6), City, true),
        entry(
            "cav_positions",
            MultimodalCommuting,
            (10e3, 800e3),
            City,
            true,
        ),
        entry("disruption", MultimodalCommuting, (30e3, 100e3), City, true),
        entry("bsm", SafetyCore, (bsm_rate_bps, bsm_rate_bps), Local, true),
        // Opt-in raw sensor sources.
        entry(
            "camera_raw",
            EmergencyRouting,
            (400e6, 500e6),
            FogArea,
            false,
        ),
        entry(
            "radar_raw",
            EmergencyRouting,
            (1_400e6, 2_800e6),
            FogArea,
            false,
        ),
    ]
}

/// Maps a message type onto its scalable layer: SAE J2735 safety types form
/// the base layer, processed feature/position/route/map streams the first
/// enhancement layer, and raw sensor streams the second.
pub fn classify_layer(msg_type: &str) -> Result<LayerId, DataPlaneError> {
    match msg_type {
        "bsm" => Ok(LayerId::Base),
        "map_grid" | "cav_positions" | "routes" | "bounding_boxes" | "trajectory" | "parking"
        | "disruption" => Ok(LayerId::Enh1),
        "lidar_raw" | "camera_raw" | "radar_raw" => Ok(LayerId::Enh2),
        other => Err(DataPlaneError::UnknownMsgType(other.to_string())),
    }
}

/// Uniform rate draw within a catalog interval.
pub fn sample_stream_rate(interval: (f64, f64), rng: &mut SimRng) -> Result<f64, DataPlaneError> {
    let (lo, hi) = interval;
    if lo > hi {
        return Err(DataPlaneError::InvertedInterval(lo, hi));
    }
    Ok(if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    })
}

/// Instantiates one catalog entry into a concrete stream: the rate is drawn
/// once and fixed for the run, the period follows from the payload size.
pub fn instantiate_stream(
    entry: &CatalogEntry,
    payloads: &PayloadDefaults,
    rng: &mut SimRng,
) -> Result<StreamDescriptor, DataPlaneError> {
    let rate_bps = sample_stream_rate(entry.rate_bps, rng)?;
    let payload_bytes = entry
        .payload_bytes
        .unwrap_or(payloads.for_layer(entry.layer));
    let descriptor = StreamDescriptor {
        service: entry.service,
        msg_type: entry.msg_type.clone(),
        layer: entry.layer,
        rate_bps,
        geo_relevance: entry.geo_relevance,
        reliable: entry.layer != LayerId::Enh2,
        period_s: payload_bytes as f64 * 8.0 / rate_bps,
        payload_bytes,
    };
    descriptor.validate()?;
    Ok(descriptor)
}

/// The streams a vehicle runs for one enabled service: every default catalog
/// row of that service, rates drawn within their catalog intervals.
pub fn service_streams(
    service: Service,
    catalog: &[CatalogEntry],
    payloads: &PayloadDefaults,
    rng: &mut SimRng,
) -> Result<Vec<StreamDescriptor>, DataPlaneError> {
    catalog
        .iter()
        .filter(|e| e.service == service && e.default_enabled)
        .map(|e| instantiate_stream(e, payloads, rng))
        .collect()
}

/// Where a message is headed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Destination {
    /// Unicast to an RSU (index into the world RSU table).
    Rsu(u32),
    Broadcast,
}

/// Terminal disposition of a message. Transitions only run
/// created -> {delivered, erased, dropped_no_coverage, dropped_policy,
/// deferred}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MsgStatus {
    Delivered,
    Erased,
    DroppedNoCoverage,
    DroppedPolicy,
    Deferred,
}

impl MsgStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MsgStatus::Delivered => "delivered",
            MsgStatus::Erased => "erased",
            MsgStatus::DroppedNoCoverage => "dropped_no_coverage",
            MsgStatus::DroppedPolicy => "dropped_policy",
            MsgStatus::Deferred => "deferred",
        }
    }
}

impl fmt::Display for MsgStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An individual transmission unit.
#[derive(Clone, Copy, Debug)]
pub struct Message {
    pub id: u64,
    /// Index into the world stream table.
    pub stream: u32,
    /// Index into the world vehicle table.
    pub src_vehicle: u32,
    pub dst: Destination,
    pub bytes: u64,
    pub created_at_s: f64,
}
