//! Per-fog-area orchestrator state: vehicle registry, BSM track table,
//! inter-area handover, cloud sync batches, and the BSM-assisted mmWave
//! beam selection.
//!
//! The orchestrator tracks vehicles from their delivered BSMs and hands the
//! mmWave RSU a pre-computed beam sector for the predicted position. A fresh
//! and correct prediction shrinks the beamforming share of the beacon
//! interval from 1/3 to the assisted residual.

use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::control_plane::FogLoadState;
use crate::data_plane::LayerId;
use crate::rat::BEAMFORMING_OVERHEAD_NO_ASSIST;
use crate::topology::Position;

#[derive(Debug, Error, PartialEq)]
pub enum FogError {
    #[error("track entry is stale: age {age_s} s exceeds the {bound_s} s bound")]
    StaleTrack { age_s: f64, bound_s: f64 },
    #[error("query time {query_s} precedes the last BSM at {last_s}")]
    QueryBeforeTrack { query_s: f64, last_s: f64 },
    #[error("beam sector undefined for coincident RSU and target positions")]
    CoincidentPoints,
    #[error("sector count must be at least 2, got {0}")]
    InvalidSectorCount(u32),
}

/// Last known kinematic state of a vehicle, learned from its BSMs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackEntry {
    pub vehicle: u32,
    pub last_bsm_time: f64,
    pub position: Position,
    pub speed: f64,
    pub heading: f64,
}

/// Dead-reckoned position at `t_query`: the stored position advanced by
/// `speed * (t_query - last_bsm_time)` along the stored heading. Entries
/// older than `staleness_s` produce no prediction.
pub fn predict_position(
    entry: &TrackEntry,
    t_query: f64,
    staleness_s: f64,
) -> Result<Position, FogError> {
    if t_query < entry.last_bsm_time {
        return Err(FogError::QueryBeforeTrack {
            query_s: t_query,
            last_s: entry.last_bsm_time,
        });
    }
    let age = t_query - entry.last_bsm_time;
    if age > staleness_s {
        return Err(FogError::StaleTrack {
            age_s: age,
            bound_s: staleness_s,
        });
    }
    let d = entry.speed * age;
    Ok(Position::new(
        entry.position.x + d * entry.heading.cos(),
        entry.position.y + d * entry.heading.sin(),
    ))
}

/// Index of the azimuth sector (out of `n_sectors` equal slices of the full
/// circle) that contains the direction from the RSU to the target.
pub fn beam_sector(rsu: Position, target: Position, n_sectors: u32) -> Result<u32, FogError> {
    if n_sectors < 2 {
        return Err(FogError::InvalidSectorCount(n_sectors));
    }
    let (dx, dy) = (target.x - rsu.x, target.y - rsu.y);
    if dx == 0.0 && dy == 0.0 {
        return Err(FogError::CoincidentPoints);
    }
    let azimuth = dy.atan2(dx).rem_euclid(TAU);
    let width = TAU / n_sectors as f64;
    Ok(((azimuth / width) as u32).min(n_sectors - 1))
}

/// Pending city-scale records accumulated between cloud syncs. Only
/// aggregates ever leave the area; per-message payloads stay local.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudRecord {
    Admitted(LayerId),
    Dropped(LayerId),
    Escalated,
}

/// One flushed batch, serialized as a single JSON-lines object.
#[derive(Clone, Debug, Serialize)]
pub struct CloudBatch {
    pub t_s: f64,
    pub area: String,
    pub vehicles: usize,
    pub admitted: BTreeMap<&'static str, u64>,
    pub dropped: BTreeMap<&'static str, u64>,
    pub escalated: u64,
}

/// Fog orchestrator state for one area.
#[derive(Clone, Debug, Default)]
pub struct FogOrchestratorState {
    pub area: usize,
    pub registered: BTreeSet<u32>,
    pub tracks: BTreeMap<u32, TrackEntry>,
    pub load: FogLoadState,
    cloud_buffer: Vec<CloudRecord>,
}

impl FogOrchestratorState {
    pub fn new(area: usize) -> Self {
        FogOrchestratorState {
            area,
            ..Default::default()
        }
    }

    pub fn register(&mut self, vehicle: u32) {
        self.registered.insert(vehicle);
    }

    /// Upserts the track entry for a delivered BSM.
    pub fn register_bsm(&mut self, entry: TrackEntry) {
        self.tracks.insert(entry.vehicle, entry);
    }

    pub fn push_cloud_record(&mut self, record: CloudRecord) {
        self.cloud_buffer.push(record);
    }

    pub fn pending_cloud_records(&self) -> usize {
        self.cloud_buffer.len()
    }

    /// Beamforming overhead fraction for the next mmWave transmission to
    /// `vehicle` from the RSU at `rsu_pos`: the assisted residual when a
    /// fresh track entry predicts the sector that contains the vehicle's
    /// true position, the full 1/3 otherwise.
    #[allow(clippy::too_many_arguments)]
    pub fn assist_overhead(
        &self,
        vehicle: u32,
        true_position: Position,
        rsu_pos: Position,
        t: f64,
        staleness_s: f64,
        n_sectors: u32,
        overhead_with_assist: f64,
    ) -> f64 {
        let Some(entry) = self.tracks.get(&vehicle) else {
            return BEAMFORMING_OVERHEAD_NO_ASSIST;
        };
        let Ok(predicted) = predict_position(entry, t, staleness_s) else {
            return BEAMFORMING_OVERHEAD_NO_ASSIST;
        };
        match (
            beam_sector(rsu_pos, predicted, n_sectors),
            beam_sector(rsu_pos, true_position, n_sectors),
        ) {
            (Ok(a), Ok(b)) if a == b => overhead_with_assist,
            _ => BEAMFORMING_OVERHEAD_NO_ASSIST,
        }
    }

    /// Flushes the cloud buffer into one aggregate batch. `t_s` is the
    /// cloud-side arrival time (sync time plus the area's cloud latency).
    pub fn cloud_sync(&mut self, t_sync_s: f64, area_id: &str, cloud_link_ms: f64) -> CloudBatch {
        let mut admitted: BTreeMap<&'static str, u64> = BTreeMap::new();
        let mut dropped: BTreeMap<&'static str, u64> = BTreeMap::new();
        let mut escalated = 0u64;
        for layer in LayerId::ALL {
            admitted.insert(layer.as_str(), 0);
            dropped.insert(layer.as_str(), 0);
        }
        for record in self.cloud_buffer.drain(..) {
            match record {
                CloudRecord::Admitted(layer) => {
                    *admitted.get_mut(layer.as_str()).unwrap() += 1;
                }
                CloudRecord::Dropped(layer) => {
                    *dropped.get_mut(layer.as_str()).unwrap() += 1;
                }
                CloudRecord::Escalated => escalated += 1,
            }
        }
        CloudBatch {
            t_s: t_sync_s + cloud_link_ms / 1e3,
            area: area_id.to_string(),
            vehicles: self.registered.len(),
            admitted,
            dropped,
            escalated,
        }
    }
}

/// Moves a vehicle's registration from one orchestrator to another: the old
/// area drops its registration and track entry, the new area registers it.
pub fn handover(old: &mut FogOrchestratorState, new: &mut FogOrchestratorState, vehicle: u32) {
    old.registered.remove(&vehicle);
    old.tracks.remove(&vehicle);
    new.register(vehicle);
}
