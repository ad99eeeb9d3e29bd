//! Scenario configuration: JSON schema, strict parsing, validation and
//! defaults. Unknown keys are rejected so a typo cannot silently change an
//! experiment; validation errors name the offending config path.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::control_plane::PolicyConfig;
use crate::data_plane::{
    classify_layer, CatalogEntry, GeoRelevance, LayerId, PayloadDefaults, Service,
    MIN_BASE_PERIOD_S,
};
use crate::rat::{profile_of, MmwaveChannelConfig, RatName, RatProfile, RatProfilePatch};
use crate::topology::{assign_fog_area, FogArea, Position};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FogAreaConfig {
    pub id: String,
    pub center: Position,
    #[serde(default = "default_cloud_link_ms")]
    pub cloud_link_ms: f64,
}

fn default_cloud_link_ms() -> f64 {
    50.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsuConfig {
    pub id: String,
    pub rat: RatName,
    pub position: Position,
    pub area: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub waypoints: Vec<Position>,
    pub speed_mps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RouteConfig>,
    /// Trace CSV path, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default)]
    pub services: Vec<Service>,
    /// Opt-in catalog message types (raw sensor sources) this vehicle emits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensors: Vec<String>,
}

/// Additional message types merged into the built-in catalog.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogExtraConfig {
    pub msg_type: String,
    pub service: Service,
    pub layer: LayerId,
    pub rate_bps: (f64, f64),
    pub geo_relevance: GeoRelevance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bytes: Option<u64>,
    #[serde(default = "default_true")]
    pub default_enabled: bool,
}

fn default_true() -> bool {
    true
}

/// Control-plane policy plus run-level knobs (assist, periods, payloads).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub layer_rat_map: BTreeMap<LayerId, RatName>,
    pub priority: Vec<LayerId>,
    pub px_enabled: bool,
    pub escalation_enabled: bool,
    pub rat_caps_bps: BTreeMap<RatName, f64>,
    pub defer_limit: u32,
    /// BSM-assisted mmWave beamforming on/off.
    pub assist: bool,
    pub assist_sectors: u32,
    pub bsm_period_s: f64,
    pub bsm_payload_bytes: u64,
    pub mobility_step_s: f64,
    pub handover_period_s: f64,
    pub cloud_sync_period_s: f64,
    pub track_staleness_s: f64,
    /// Maximum backlog a shared-channel transmission may queue before it is
    /// dropped as a channel loss.
    pub channel_queue_limit_s: f64,
    pub payload_bytes: PayloadDefaults,
}

impl Default for PolicySection {
    fn default() -> Self {
        let control = PolicyConfig::default();
        PolicySection {
            layer_rat_map: control.layer_rat_map,
            priority: control.priority,
            px_enabled: control.px_enabled,
            escalation_enabled: control.escalation_enabled,
            rat_caps_bps: control.rat_caps_bps,
            defer_limit: control.defer_limit,
            assist: true,
            assist_sectors: 16,
            bsm_period_s: 0.1,
            bsm_payload_bytes: 300,
            mobility_step_s: 0.1,
            handover_period_s: 0.1,
            cloud_sync_period_s: 1.0,
            track_staleness_s: 1.0,
            channel_queue_limit_s: 0.1,
            payload_bytes: PayloadDefaults::default(),
        }
    }
}

impl PolicySection {
    /// Partial maps in the config patch the defaults instead of replacing
    /// them wholesale.
    fn merge_map_defaults(&mut self) {
        let defaults = PolicyConfig::default();
        let mut map = defaults.layer_rat_map;
        map.extend(self.layer_rat_map.clone());
        self.layer_rat_map = map;
        let mut caps = defaults.rat_caps_bps;
        caps.extend(self.rat_caps_bps.clone());
        self.rat_caps_bps = caps;
    }

    /// Projects the control-plane policy out of the section.
    pub fn control(&self) -> PolicyConfig {
        PolicyConfig {
            layer_rat_map: self.layer_rat_map.clone(),
            priority: self.priority.clone(),
            px_enabled: self.px_enabled,
            escalation_enabled: self.escalation_enabled,
            rat_caps_bps: self.rat_caps_bps.clone(),
            defer_limit: self.defer_limit,
        }
    }

    pub fn bsm_rate_bps(&self) -> f64 {
        self.bsm_payload_bytes as f64 * 8.0 / self.bsm_period_s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub fog_areas: Vec<FogAreaConfig>,
    #[serde(default)]
    pub rsus: Vec<RsuConfig>,
    pub vehicles: Vec<VehicleConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rat_overrides: BTreeMap<RatName, RatProfilePatch>,
    #[serde(default)]
    pub mmwave_channel: MmwaveChannelConfig,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub catalog_extra: Vec<CatalogExtraConfig>,
    /// Directory the config was loaded from; trace paths resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    /// Effective RAT profiles: built-in defaults with scenario patches applied.
    pub fn profiles(&self) -> Result<BTreeMap<RatName, RatProfile>, ConfigError> {
        let mut out = BTreeMap::new();
        for rat in RatName::ALL {
            let mut profile = profile_of(rat);
            if let Some(patch) = self.rat_overrides.get(&rat) {
                patch.apply(&mut profile);
            }
            profile
                .validate()
                .map_err(|e| invalid(format!("rat_overrides.{rat}"), e.to_string()))?;
            out.insert(rat, profile);
        }
        Ok(out)
    }

    /// Fog areas in config order.
    pub fn areas(&self) -> Vec<FogArea> {
        self.fog_areas
            .iter()
            .map(|a| FogArea {
                id: a.id.clone(),
                center: a.center,
                rsu_ids: self
                    .rsus
                    .iter()
                    .filter(|r| r.area == a.id)
                    .map(|r| r.id.clone())
                    .collect(),
                cloud_link_ms: a.cloud_link_ms,
            })
            .collect()
    }

    /// Message catalog: built-ins plus scenario extras.
    pub fn catalog(&self) -> Vec<CatalogEntry> {
        let mut catalog = crate::data_plane::builtin_catalog(self.policy.bsm_rate_bps());
        for extra in &self.catalog_extra {
            catalog.push(CatalogEntry {
                msg_type: extra.msg_type.clone(),
                service: extra.service,
                layer: extra.layer,
                rate_bps: extra.rate_bps,
                geo_relevance: extra.geo_relevance,
                default_enabled: extra.default_enabled,
                payload_bytes: extra.payload_bytes,
            });
        }
        catalog
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration_s <= 0.0 || !self.duration_s.is_finite() {
            return Err(invalid("duration_s", "must be a positive finite number"));
        }
        if self.fog_areas.is_empty() {
            return Err(invalid("fog_areas", "at least one fog area is required"));
        }

        let mut area_ids = Vec::new();
        for (i, a) in self.fog_areas.iter().enumerate() {
            if !a.center.is_finite() {
                return Err(invalid(format!("fog_areas[{i}].center"), "must be finite"));
            }
            if a.cloud_link_ms < 0.0 {
                return Err(invalid(
                    format!("fog_areas[{i}].cloud_link_ms"),
                    "must be non-negative",
                ));
            }
            if area_ids.contains(&a.id) {
                return Err(invalid(
                    format!("fog_areas[{i}].id"),
                    format!("duplicate fog area id `{}`", a.id),
                ));
            }
            area_ids.push(a.id.clone());
        }

        let areas = self.areas();
        let mut node_ids: Vec<&str> = Vec::new();
        for (i, r) in self.rsus.iter().enumerate() {
            if node_ids.contains(&r.id.as_str()) {
                return Err(invalid(
                    format!("rsus[{i}].id"),
                    format!("duplicate node id `{}`", r.id),
                ));
            }
            node_ids.push(&r.id);
            if !r.position.is_finite() {
                return Err(invalid(format!("rsus[{i}].position"), "must be finite"));
            }
            if !area_ids.contains(&r.area) {
                return Err(invalid(
                    format!("rsus[{i}].area"),
                    format!("unknown fog area `{}`", r.area),
                ));
            }
            let assigned = &areas[assign_fog_area(r.position, &areas)].id;
            if assigned != &r.area {
                return Err(invalid(
                    format!("rsus[{i}].area"),
                    format!(
                        "RSU at ({}, {}) lies in fog area `{assigned}`, not `{}`",
                        r.position.x, r.position.y, r.area
                    ),
                ));
            }
        }

        let catalog = self.catalog();
        if self.vehicles.is_empty() {
            return Err(invalid("vehicles", "at least one vehicle is required"));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if node_ids.contains(&v.id.as_str()) {
                return Err(invalid(
                    format!("vehicles[{i}].id"),
                    format!("duplicate node id `{}`", v.id),
                ));
            }
            node_ids.push(&v.id);
            match (&v.route, &v.trace) {
                (Some(route), None) => {
                    if route.waypoints.is_empty() {
                        return Err(invalid(
                            format!("vehicles[{i}].route.waypoints"),
                            "route needs at least one waypoint",
                        ));
                    }
                    if route.waypoints.iter().any(|w| !w.is_finite()) {
                        return Err(invalid(
                            format!("vehicles[{i}].route.waypoints"),
                            "waypoints must be finite",
                        ));
                    }
                    if route.speed_mps < 0.0 || !route.speed_mps.is_finite() {
                        return Err(invalid(
                            format!("vehicles[{i}].route.speed_mps"),
                            "must be non-negative and finite",
                        ));
                    }
                }
                (None, Some(_)) => {}
                (Some(_), Some(_)) => {
                    return Err(invalid(
                        format!("vehicles[{i}]"),
                        "route and trace are mutually exclusive",
                    ));
                }
                (None, None) => {
                    return Err(invalid(
                        format!("vehicles[{i}]"),
                        "either route or trace is required",
                    ));
                }
            }
            for (j, sensor) in v.sensors.iter().enumerate() {
                if !catalog.iter().any(|e| &e.msg_type == sensor) {
                    return Err(invalid(
                        format!("vehicles[{i}].sensors[{j}]"),
                        format!("unknown message type `{sensor}`"),
                    ));
                }
            }
        }

        self.policy
            .control()
            .validate()
            .map_err(|e| invalid("policy", e.to_string()))?;
        let p = &self.policy;
        if p.bsm_period_s < MIN_BASE_PERIOD_S {
            return Err(invalid(
                "policy.bsm_period_s",
                format!("below the {MIN_BASE_PERIOD_S} s BSM period floor"),
            ));
        }
        for (name, value) in [
            ("policy.mobility_step_s", p.mobility_step_s),
            ("policy.handover_period_s", p.handover_period_s),
            ("policy.cloud_sync_period_s", p.cloud_sync_period_s),
            ("policy.track_staleness_s", p.track_staleness_s),
        ] {
            if value <= 0.0 || !value.is_finite() {
                return Err(invalid(name, "must be a positive finite number"));
            }
        }
        if p.channel_queue_limit_s < 0.0 {
            return Err(invalid(
                "policy.channel_queue_limit_s",
                "must be non-negative",
            ));
        }
        if p.assist_sectors < 2 {
            return Err(invalid("policy.assist_sectors", "must be at least 2"));
        }
        if p.bsm_payload_bytes == 0 {
            return Err(invalid("policy.bsm_payload_bytes", "must be positive"));
        }

        self.mmwave_channel
            .validate()
            .map_err(|e| invalid("mmwave_channel", e.to_string()))?;

        let builtin_count = crate::data_plane::builtin_catalog(1.0).len();
        for (i, extra) in self.catalog_extra.iter().enumerate() {
            let path = format!("catalog_extra[{i}]");
            if classify_layer(&extra.msg_type).is_ok() {
                return Err(invalid(
                    format!("{path}.msg_type"),
                    format!("`{}` collides with a built-in message type", extra.msg_type),
                ));
            }
            if self.catalog_extra[..i]
                .iter()
                .any(|e| e.msg_type == extra.msg_type)
            {
                return Err(invalid(
                    format!("{path}.msg_type"),
                    format!("duplicate message type `{}`", extra.msg_type),
                ));
            }
            let (lo, hi) = extra.rate_bps;
            if lo <= 0.0 || !lo.is_finite() || lo > hi || !hi.is_finite() {
                return Err(invalid(
                    format!("{path}.rate_bps"),
                    format!("invalid rate interval [{lo}, {hi}]"),
                ));
            }
            if extra.layer == LayerId::Base {
                if extra.geo_relevance != GeoRelevance::Local {
                    return Err(invalid(
                        format!("{path}.geo_relevance"),
                        "base-layer streams are locally relevant",
                    ));
                }
                let payload = extra
                    .payload_bytes
                    .unwrap_or(p.payload_bytes.for_layer(LayerId::Base));
                let min_period = payload as f64 * 8.0 / hi;
                if min_period < MIN_BASE_PERIOD_S {
                    return Err(invalid(
                        format!("{path}.rate_bps"),
                        format!(
                            "base-layer period {min_period} s at the interval top is below the {MIN_BASE_PERIOD_S} s floor"
                        ),
                    ));
                }
            }
        }
        let _ = builtin_count;

        self.profiles()?;
        Ok(())
    }
}

/// Parses and validates a scenario file.
pub fn parse_config(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let mut scenario = parse_config_str(&text)?;
    scenario.base_dir = path.parent().map(|p| p.to_path_buf());
    Ok(scenario)
}

/// Parses and validates a scenario from a JSON string.
pub fn parse_config_str(text: &str) -> Result<Scenario, ConfigError> {
    let mut scenario: Scenario = serde_json::from_str(text)?;
    scenario.policy.merge_map_defaults();
    scenario.validate()?;
    Ok(scenario)
}
