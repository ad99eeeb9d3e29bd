//! World assembly and run orchestration: builds the topology, streams and
//! orchestrators from a scenario, drives the event loop, and writes the
//! output artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::control_plane::{
    access_controller_select, service_engine_admit, should_escalate, AdmitDecision, PolicyConfig,
    RatAvailability, SelectDecision,
};
use crate::data_plane::{LayerId, MsgStatus, Service, StreamDescriptor};
use crate::engine::{self, substream, EventQueue, ScheduleError, SimRng};
use crate::fog::{handover, CloudBatch, CloudRecord, FogOrchestratorState, TrackEntry};
use crate::kpi::{
    summarize, write_outputs, Endpoint, KpiError, KpiRecord, KpiSink, NodeTable, OutputFormats,
    Summary,
};
use crate::rat::{
    self, BusyChannel, Channel, LinkState, MmwaveChannelConfig, RatError, RatName, RatProfile,
    TxMode, TxRequest, TxStatus, WindowRegulator, BEAMFORMING_OVERHEAD_NO_ASSIST,
};
use crate::scenario::{ConfigError, PolicySection, Scenario};
use crate::topology::{
    assign_fog_area, load_trace, FogArea, Position, Rsu, TraceError, Vehicle, VehicleTrace,
};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace `{path}`: {source}")]
    Trace {
        path: String,
        #[source]
        source: TraceError,
    },
    #[error("vehicle `{vehicle}` not found in trace `{path}`")]
    VehicleNotInTrace { vehicle: String, path: String },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
    #[error(transparent)]
    Rat(#[from] RatError),
    #[error(transparent)]
    DataPlane(#[from] crate::data_plane::DataPlaneError),
    #[error("output I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("event {seq} at t={time} s: {source}")]
    Handler {
        time: f64,
        seq: u64,
        #[source]
        source: Box<WorldError>,
    },
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Ev {
    MobilityStep {
        k: u64,
    },
    HandoverCheck {
        k: u64,
    },
    CloudSync {
        k: u64,
    },
    BsmTick {
        stream: u32,
        k: u64,
    },
    StreamTick {
        stream: u32,
        k: u64,
    },
    TxComplete(Delivery),
    LinkEstablished {
        vehicle: u32,
        rat: RatName,
        peer: LinkPeer,
    },
    SimEnd,
}

#[derive(Debug, Clone, Copy)]
struct Delivery {
    kind: DeliveryKind,
}

#[derive(Debug, Clone, Copy)]
enum DeliveryKind {
    /// A BSM heard by the fog area's own DSRC-family RSU feeds the track
    /// table on arrival.
    Bsm { area: u32, track: TrackEntry },
    /// A delivered stream message that may need geographic escalation.
    Stream { stream: u32, carried_on: RatName },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LinkPeer {
    /// The cellular attachment; persists across fog areas.
    Cell,
    /// A specific RSU (mmWave beam context).
    Rsu(u32),
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

struct VehState {
    topo: Vehicle,
    node: u32,
    streams: Vec<u32>,
}

struct RsuState {
    rsu: Rsu,
    node: u32,
}

struct Pending {
    msg_id: u64,
    created_at: f64,
}

struct StreamState {
    descriptor: StreamDescriptor,
    vehicle: u32,
    is_bsm: bool,
    admitted: bool,
    /// Area where enhancement capacity is reserved.
    reserved_in: Option<u32>,
    pending: Option<Pending>,
    defers: u32,
    rng: SimRng,
}

/// Registration and track-table timeline recorded for verification.
#[derive(Debug, Default, Clone)]
pub struct RunAudit {
    pub area_ids: Vec<String>,
    pub vehicle_ids: Vec<String>,
    /// (t_s, vehicle, from_area, to_area)
    pub handovers: Vec<(f64, u32, u32, u32)>,
    /// (t_s, area, vehicle) for every track-table insert.
    pub track_inserts: Vec<(f64, u32, u32)>,
    pub registration_checks: u64,
    pub registration_violations: u64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub summary: Summary,
    pub audit: RunAudit,
    pub events_processed: u64,
    pub written: Vec<PathBuf>,
}

struct World {
    duration_s: f64,
    policy: PolicyConfig,
    knobs: PolicySection,
    profiles: BTreeMap<RatName, RatProfile>,
    mmw: MmwaveChannelConfig,
    areas: Vec<FogArea>,
    fos: Vec<FogOrchestratorState>,
    vehicles: Vec<VehState>,
    rsus: Vec<RsuState>,
    /// Per area, per RAT: RSU indices sorted by id.
    area_rat_rsus: Vec<BTreeMap<RatName, Vec<u32>>>,
    streams: Vec<StreamState>,
    dsrc_chan: Vec<WindowRegulator>,
    px_chan: Vec<WindowRegulator>,
    mm_chan: BTreeMap<u32, BusyChannel>,
    links: BTreeMap<(u32, RatName, LinkPeer), LinkState>,
    sink: KpiSink,
    cloud_batches: Vec<CloudBatch>,
    next_msg_id: u64,
    deferral_events: u64,
    audit: RunAudit,
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

impl World {
    fn build(scenario: &Scenario) -> Result<(World, EventQueue<Ev>), WorldError> {
        scenario.validate()?;
        let knobs = scenario.policy.clone();
        let policy = knobs.control();
        let profiles = scenario.profiles()?;
        let mmw = scenario.mmwave_channel.clone();

        // Canonical ordering: areas, RSUs and vehicles sorted by id.
        let mut areas = scenario.areas();
        areas.sort_by(|a, b| a.id.cmp(&b.id));
        let area_index: BTreeMap<&str, usize> = areas
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.as_str(), i))
            .collect();

        let mut nodes = NodeTable::default();

        let mut rsu_cfgs = scenario.rsus.clone();
        rsu_cfgs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rsus = Vec::with_capacity(rsu_cfgs.len());
        let mut area_rat_rsus: Vec<BTreeMap<RatName, Vec<u32>>> =
            vec![BTreeMap::new(); areas.len()];
        for cfg in &rsu_cfgs {
            let fog_area = area_index[cfg.area.as_str()];
            let node = nodes.intern(&cfg.id);
            let idx = rsus.len() as u32;
            area_rat_rsus[fog_area]
                .entry(cfg.rat)
                .or_default()
                .push(idx);
            rsus.push(RsuState {
                rsu: Rsu {
                    id: cfg.id.clone(),
                    rat: cfg.rat,
                    position: cfg.position,
                    fog_area,
                },
                node,
            });
        }

        let mut vehicle_cfgs = scenario.vehicles.clone();
        vehicle_cfgs.sort_by(|a, b| a.id.cmp(&b.id));

        // Traces are loaded once per file and shared between vehicles.
        let mut trace_files: BTreeMap<String, Vec<crate::topology::TraceRow>> = BTreeMap::new();
        let mut vehicles = Vec::with_capacity(vehicle_cfgs.len());
        for cfg in &vehicle_cfgs {
            let mut topo = if let Some(route) = &cfg.route {
                Vehicle::from_route(cfg.id.clone(), route.waypoints.clone(), route.speed_mps)
            } else {
                let rel = cfg.trace.as_ref().unwrap();
                let path = match &scenario.base_dir {
                    Some(dir) => dir.join(rel),
                    None => PathBuf::from(rel),
                };
                let key = path.to_string_lossy().to_string();
                if !trace_files.contains_key(&key) {
                    let file = File::open(&path).map_err(|e| WorldError::Trace {
                        path: key.clone(),
                        source: TraceError::Io(e),
                    })?;
                    let rows = load_trace(BufReader::new(file)).map_err(|e| WorldError::Trace {
                        path: key.clone(),
                        source: e,
                    })?;
                    trace_files.insert(key.clone(), rows);
                }
                let rows: Vec<_> = trace_files[&key]
                    .iter()
                    .filter(|r| r.vehicle == cfg.id)
                    .cloned()
                    .collect();
                if rows.is_empty() {
                    return Err(WorldError::VehicleNotInTrace {
                        vehicle: cfg.id.clone(),
                        path: key,
                    });
                }
                Vehicle::from_trace(cfg.id.clone(), VehicleTrace::new(rows))
            };
            topo.fog_area = assign_fog_area(topo.position, &areas);
            let node = nodes.intern(&cfg.id);
            vehicles.push(VehState {
                topo,
                node,
                streams: Vec::new(),
            });
        }

        let mut fos: Vec<FogOrchestratorState> =
            (0..areas.len()).map(FogOrchestratorState::new).collect();
        for (vi, v) in vehicles.iter().enumerate() {
            fos[v.topo.fog_area].register(vi as u32);
        }

        // Streams: every vehicle broadcasts BSMs; enabled services and
        // opt-in sensors add their catalog rows.
        let catalog = scenario.catalog();
        let payloads = knobs.payload_bytes;
        let mut streams: Vec<StreamState> = Vec::new();
        for (vi, cfg) in vehicle_cfgs.iter().enumerate() {
            let mut wanted: Vec<(Service, String)> = vec![(Service::SafetyCore, "bsm".to_string())];
            for service in &cfg.services {
                for entry in catalog
                    .iter()
                    .filter(|e| e.service == *service && e.default_enabled)
                {
                    let key = (*service, entry.msg_type.clone());
                    if !wanted.contains(&key) {
                        wanted.push(key);
                    }
                }
            }
            for sensor in &cfg.sensors {
                let entry = catalog.iter().find(|e| &e.msg_type == sensor).unwrap();
                let key = (entry.service, entry.msg_type.clone());
                if !wanted.contains(&key) {
                    wanted.push(key);
                }
            }
            for (service, msg_type) in wanted {
                let entry = catalog
                    .iter()
                    .find(|e| e.service == service && e.msg_type == msg_type)
                    .unwrap();
                let label = format!("{}/{}/{}", cfg.id, service, msg_type);
                let mut rate_rng = substream(scenario.seed, &format!("rate/{label}"));
                let descriptor =
                    crate::data_plane::instantiate_stream(entry, &payloads, &mut rate_rng)?;
                let si = streams.len() as u32;
                vehicles[vi].streams.push(si);
                streams.push(StreamState {
                    is_bsm: msg_type == "bsm",
                    descriptor,
                    vehicle: vi as u32,
                    admitted: false,
                    reserved_in: None,
                    pending: None,
                    defers: 0,
                    rng: substream(scenario.seed, &format!("tx/{label}")),
                });
            }
        }

        let queue_limit = knobs.channel_queue_limit_s;
        let dsrc_chan = (0..areas.len())
            .map(|_| WindowRegulator::new(profiles[&RatName::Dsrc].net_cap_bps, 1.0, queue_limit))
            .collect();
        let px_chan = (0..areas.len())
            .map(|_| WindowRegulator::new(profiles[&RatName::DsrcPx].net_cap_bps, 1.0, queue_limit))
            .collect();
        let mm_chan = rsus
            .iter()
            .enumerate()
            .filter(|(_, r)| r.rsu.rat == RatName::Mmwave)
            .map(|(i, _)| (i as u32, BusyChannel::new(queue_limit)))
            .collect();

        let audit = RunAudit {
            area_ids: areas.iter().map(|a| a.id.clone()).collect(),
            vehicle_ids: vehicles.iter().map(|v| v.topo.id.clone()).collect(),
            ..Default::default()
        };

        let world = World {
            duration_s: scenario.duration_s,
            policy,
            knobs,
            profiles,
            mmw,
            areas,
            fos,
            vehicles,
            rsus,
            area_rat_rsus,
            streams,
            dsrc_chan,
            px_chan,
            mm_chan,
            links: BTreeMap::new(),
            sink: KpiSink::new(nodes),
            cloud_batches: Vec::new(),
            next_msg_id: 0,
            deferral_events: 0,
            audit,
        };

        let mut queue = EventQueue::new();
        queue.schedule(0.0, Ev::MobilityStep { k: 0 })?;
        queue.schedule(0.0, Ev::HandoverCheck { k: 0 })?;
        // Stream ticks in strict priority order, then vehicle, then type, so
        // same-instant contention resolves safety-first.
        let mut tick_order: Vec<u32> = (0..world.streams.len() as u32).collect();
        tick_order.sort_by(|&a, &b| {
            let (sa, sb) = (&world.streams[a as usize], &world.streams[b as usize]);
            world
                .policy
                .priority_rank(sa.descriptor.layer)
                .cmp(&world.policy.priority_rank(sb.descriptor.layer))
                .then_with(|| sa.vehicle.cmp(&sb.vehicle))
                .then_with(|| sa.descriptor.msg_type.cmp(&sb.descriptor.msg_type))
        });
        for si in tick_order {
            let ev = if world.streams[si as usize].is_bsm {
                Ev::BsmTick { stream: si, k: 0 }
            } else {
                Ev::StreamTick { stream: si, k: 0 }
            };
            queue.schedule(0.0, ev)?;
        }
        if world.knobs.cloud_sync_period_s < world.duration_s {
            queue.schedule(world.knobs.cloud_sync_period_s, Ev::CloudSync { k: 1 })?;
        }
        queue.schedule(world.duration_s, Ev::SimEnd)?;

        Ok((world, queue))
    }

    fn profile(&self, rat: RatName) -> &RatProfile {
        &self.profiles[&rat]
    }

    // -- Geometry helpers -----------------------------------------------------

    /// Nearest RSU of `rat` within the vehicle's fog area; ties break toward
    /// the smaller RSU id (the index lists are id-sorted).
    fn nearest_area_rsu(&self, area: usize, rat: RatName, pos: Position) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for &ri in self.area_rat_rsus[area].get(&rat)? {
            let d = pos.distance(self.rsus[ri as usize].rsu.position);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((ri, d));
            }
        }
        best
    }

    /// Vehicles inside `range_m` of vehicle `vi` (contention density) and
    /// the distance to the nearest one.
    fn neighbor_scan(&self, vi: usize, range_m: f64) -> (u32, Option<f64>) {
        let pos = self.vehicles[vi].topo.position;
        let mut count = 0u32;
        let mut nearest: Option<f64> = None;
        for (i, other) in self.vehicles.iter().enumerate() {
            if i == vi {
                continue;
            }
            let d = pos.distance(other.topo.position);
            if d <= range_m {
                count += 1;
                if nearest.is_none_or(|n| d < n) {
                    nearest = Some(d);
                }
            }
        }
        (count, nearest)
    }

    fn speed_kmh(&self, vi: usize) -> f64 {
        self.vehicles[vi].topo.speed * 3.6
    }

    /// Per-RAT availability for one vehicle. Broadcast (base-layer) traffic
    /// over the OCB radios can also be served by a neighbor in range;
    /// infrastructure traffic needs an in-area RSU of that RAT.
    fn availability(&self, vi: usize, for_broadcast: bool) -> RatAvailability {
        let pos = self.vehicles[vi].topo.position;
        let area = self.vehicles[vi].topo.fog_area;
        let speed = self.speed_kmh(vi);
        let check = |rat: RatName| -> bool {
            let p = self.profile(rat);
            if speed > p.mobility_limit_kmh {
                return false;
            }
            let rsu_ok = self
                .nearest_area_rsu(area, rat, pos)
                .is_some_and(|(_, d)| d <= p.range_m);
            if rsu_ok {
                return true;
            }
            if for_broadcast && matches!(rat, RatName::Dsrc | RatName::DsrcPx) {
                let (_, nearest) = self.neighbor_scan(vi, p.range_m);
                return nearest.is_some();
            }
            false
        };
        RatAvailability {
            dsrc: check(RatName::Dsrc),
            dsrc_px: check(RatName::DsrcPx),
            cv2x: check(RatName::Cv2x),
            mmwave: check(RatName::Mmwave),
        }
    }

    // -- KPI plumbing -----------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        msg_id: u64,
        created_at: f64,
        si: u32,
        dst: Endpoint,
        rat: Option<RatName>,
        status: MsgStatus,
        rx_s: Option<f64>,
    ) -> Result<(), WorldError> {
        let s = &self.streams[si as usize];
        let rec = KpiRecord {
            msg_id,
            t_tx_ms: created_at * 1e3,
            t_rx_ms: rx_s.map(|t| t * 1e3),
            src: self.vehicles[s.vehicle as usize].node,
            dst,
            rat,
            layer: s.descriptor.layer,
            service: s.descriptor.service,
            bytes: s.descriptor.payload_bytes,
            status,
        };
        self.sink.record_outcome(rec)?;
        Ok(())
    }

    fn push_cloud(&mut self, area: usize, record: CloudRecord) {
        self.fos[area].push_cloud_record(record);
    }

    // -- Stream pipeline --------------------------------------------------------

    fn stream_attempt(
        &mut self,
        si: u32,
        t: f64,
        q: &mut EventQueue<Ev>,
    ) -> Result<(), WorldError> {
        let s = &self.streams[si as usize];
        let vi = s.vehicle as usize;
        let area = self.vehicles[vi].topo.fog_area;
        let layer = s.descriptor.layer;
        let rate = s.descriptor.rate_bps;

        let (msg_id, created_at) = match &s.pending {
            Some(p) => (p.msg_id, p.created_at),
            None => {
                let id = self.next_msg_id;
                self.next_msg_id += 1;
                (id, t)
            }
        };

        // Service-engine admission (re-evaluated after handover).
        if !self.streams[si as usize].admitted {
            let decision = service_engine_admit(
                &self.streams[si as usize].descriptor,
                &self.fos[area].load,
                &self.policy,
            );
            match decision {
                AdmitDecision::Admit => {
                    if layer != LayerId::Base {
                        let target = self.policy.primary_rat(layer);
                        self.fos[area].load.reserve(target, rate);
                        self.streams[si as usize].reserved_in = Some(area as u32);
                    }
                    self.streams[si as usize].admitted = true;
                }
                AdmitDecision::Defer => return self.defer_message(si, msg_id, created_at, area),
                AdmitDecision::Reject => {
                    self.push_cloud(area, CloudRecord::Dropped(layer));
                    return self.record(
                        msg_id,
                        created_at,
                        si,
                        Endpoint::Unassigned,
                        None,
                        MsgStatus::DroppedPolicy,
                        None,
                    );
                }
            }
        }

        // Access-controller RAT selection.
        let availability = self.availability(vi, layer == LayerId::Base);
        let decision = access_controller_select(
            layer,
            rate,
            &availability,
            &self.fos[area].load,
            &self.policy,
        );
        match decision {
            SelectDecision::Assign { rat, mode } => {
                self.dispatch(si, msg_id, created_at, rat, mode, t, q)?;
                let s = &mut self.streams[si as usize];
                s.pending = None;
                s.defers = 0;
                Ok(())
            }
            SelectDecision::Defer => self.defer_message(si, msg_id, created_at, area),
            SelectDecision::Drop => {
                let intended = self.policy.primary_rat(layer);
                self.push_cloud(area, CloudRecord::Dropped(layer));
                let s = &mut self.streams[si as usize];
                s.pending = None;
                s.defers = 0;
                self.record(
                    msg_id,
                    created_at,
                    si,
                    Endpoint::Unassigned,
                    Some(intended),
                    MsgStatus::DroppedNoCoverage,
                    None,
                )
            }
        }
    }

    fn defer_message(
        &mut self,
        si: u32,
        msg_id: u64,
        created_at: f64,
        area: usize,
    ) -> Result<(), WorldError> {
        self.deferral_events += 1;
        let limit = self.policy.defer_limit;
        let s = &mut self.streams[si as usize];
        s.defers += 1;
        if s.defers >= limit {
            let layer = s.descriptor.layer;
            s.pending = None;
            s.defers = 0;
            self.push_cloud(area, CloudRecord::Dropped(layer));
            self.record(
                msg_id,
                created_at,
                si,
                Endpoint::Unassigned,
                None,
                MsgStatus::Deferred,
                None,
            )
        } else {
            s.pending = Some(Pending { msg_id, created_at });
            Ok(())
        }
    }

    /// Runs the transmission pipeline for a message that the access
    /// controller bound to `rat`.
    #[allow(clippy::too_many_arguments)]
    fn dispatch(
        &mut self,
        si: u32,
        msg_id: u64,
        created_at: f64,
        rat: RatName,
        mode: TxMode,
        t: f64,
        q: &mut EventQueue<Ev>,
    ) -> Result<(), WorldError> {
        let s = &self.streams[si as usize];
        let vi = s.vehicle as usize;
        let layer = s.descriptor.layer;
        let bytes = s.descriptor.payload_bytes;
        let relevance = s.descriptor.geo_relevance;
        let is_bsm = s.is_bsm;
        let area = self.vehicles[vi].topo.fog_area;
        let pos = self.vehicles[vi].topo.position;
        let speed_kmh = self.speed_kmh(vi);
        let profile = self.profile(rat).clone();

        // Destination and transmitter-receiver distance.
        let nearest_rsu = self.nearest_area_rsu(area, rat, pos);
        let rsu_in_range = nearest_rsu.filter(|&(_, d)| d <= profile.range_m);
        let (dst, distance, heard_by_area_rsu, dst_rsu) = if layer == LayerId::Base {
            let mut distance = rsu_in_range.map(|(_, d)| d);
            if matches!(rat, RatName::Dsrc | RatName::DsrcPx) {
                let (_, nearest_neighbor) = self.neighbor_scan(vi, profile.range_m);
                distance = match (distance, nearest_neighbor) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            (
                Endpoint::Broadcast,
                distance.unwrap_or(f64::INFINITY),
                rsu_in_range.is_some() && matches!(rat, RatName::Dsrc | RatName::DsrcPx),
                None,
            )
        } else {
            match rsu_in_range {
                Some((ri, d)) => (
                    Endpoint::Node(self.rsus[ri as usize].node),
                    d,
                    false,
                    Some(ri),
                ),
                None => (Endpoint::Unassigned, f64::INFINITY, false, None),
            }
        };

        // Contention density around the transmitter (OCB radios only).
        let density = if matches!(rat, RatName::Dsrc | RatName::DsrcPx) {
            self.neighbor_scan(vi, profile.range_m).0
        } else {
            0
        };

        // Beamforming assistance for mmWave.
        let assist = if rat == RatName::Mmwave && self.knobs.assist {
            match dst_rsu {
                Some(ri) => {
                    let overhead = self.fos[area].assist_overhead(
                        vi as u32,
                        pos,
                        self.rsus[ri as usize].rsu.position,
                        t,
                        self.knobs.track_staleness_s,
                        self.knobs.assist_sectors,
                        self.mmw.overhead_with_assist,
                    );
                    overhead < BEAMFORMING_OVERHEAD_NO_ASSIST
                }
                None => false,
            }
        } else {
            false
        };

        // Link state (cellular attachment or mmWave beam context).
        let link_key = match rat {
            RatName::Cv2x => Some((vi as u32, rat, LinkPeer::Cell)),
            RatName::Mmwave => dst_rsu.map(|ri| (vi as u32, rat, LinkPeer::Rsu(ri))),
            _ => None,
        };
        let mut link = link_key
            .and_then(|k| self.links.get(&k).copied())
            .unwrap_or_default();
        let establishment_fresh = link.establish_done_at.is_none();

        let req = TxRequest {
            now_s: t,
            bytes,
            mode,
            distance_m: distance,
            speed_kmh,
            density,
            assist,
        };
        let channel = match rat {
            RatName::Dsrc => Channel::Windowed(&mut self.dsrc_chan[area]),
            RatName::DsrcPx => Channel::Windowed(&mut self.px_chan[area]),
            RatName::Mmwave => match dst_rsu.and_then(|ri| self.mm_chan.get_mut(&ri)) {
                Some(chan) => Channel::Serial(chan),
                None => Channel::Unlimited,
            },
            RatName::Cv2x => Channel::Unlimited,
        };
        let outcome = rat::transmit(
            &profile,
            &self.mmw,
            &mut link,
            channel,
            req,
            &mut self.streams[si as usize].rng,
        )?;

        if let Some(key) = link_key {
            if establishment_fresh && !link.established {
                if let Some(done) = link.establish_done_at {
                    q.schedule(
                        done,
                        Ev::LinkEstablished {
                            vehicle: key.0,
                            rat,
                            peer: key.2,
                        },
                    )?;
                }
            }
            self.links.insert(key, link);
        }

        match outcome.status {
            TxStatus::Delivered => {
                let rx = outcome.rx_time_s.unwrap();
                self.push_cloud(area, CloudRecord::Admitted(layer));
                self.record(
                    msg_id,
                    created_at,
                    si,
                    dst,
                    Some(rat),
                    MsgStatus::Delivered,
                    Some(rx),
                )?;
                if is_bsm && heard_by_area_rsu {
                    let v = &self.vehicles[vi].topo;
                    q.schedule(
                        rx,
                        Ev::TxComplete(Delivery {
                            kind: DeliveryKind::Bsm {
                                area: area as u32,
                                track: TrackEntry {
                                    vehicle: vi as u32,
                                    last_bsm_time: rx,
                                    position: v.position,
                                    speed: v.speed,
                                    heading: v.heading,
                                },
                            },
                        }),
                    )?;
                } else if should_escalate(&self.policy, relevance, rat) {
                    q.schedule(
                        rx,
                        Ev::TxComplete(Delivery {
                            kind: DeliveryKind::Stream {
                                stream: si,
                                carried_on: rat,
                            },
                        }),
                    )?;
                }
            }
            TxStatus::Erased => {
                self.push_cloud(area, CloudRecord::Admitted(layer));
                self.record(
                    msg_id,
                    created_at,
                    si,
                    dst,
                    Some(rat),
                    MsgStatus::Erased,
                    None,
                )?;
            }
            TxStatus::DroppedNoCoverage => {
                self.push_cloud(area, CloudRecord::Dropped(layer));
                self.record(
                    msg_id,
                    created_at,
                    si,
                    dst,
                    Some(rat),
                    MsgStatus::DroppedNoCoverage,
                    None,
                )?;
            }
        }
        Ok(())
    }

    /// Duplicates a delivered city-relevant message onto the C-V2X broadcast
    /// (eMBMS) toward all fog areas.
    fn escalate(&mut self, si: u32, t: f64) -> Result<(), WorldError> {
        let s = &self.streams[si as usize];
        let vi = s.vehicle as usize;
        let bytes = s.descriptor.payload_bytes;
        let area = self.vehicles[vi].topo.fog_area;
        let profile = self.profile(RatName::Cv2x).clone();
        let dup_id = self.next_msg_id;
        self.next_msg_id += 1;

        let serialization_s = bytes as f64 * 8.0 / profile.net_cap_bps;
        let latency_s = rat::latency_sample(
            &profile,
            TxMode::Broadcast,
            &mut self.streams[si as usize].rng,
        )? / 1e3;
        let rx = t + serialization_s + latency_s;
        self.push_cloud(area, CloudRecord::Escalated);
        self.record(
            dup_id,
            t,
            si,
            Endpoint::Broadcast,
            Some(RatName::Cv2x),
            MsgStatus::Delivered,
            Some(rx),
        )
    }

    // -- Event handlers -----------------------------------------------------

    fn handle(&mut self, ev: engine::Event<Ev>, q: &mut EventQueue<Ev>) -> Result<(), WorldError> {
        let t = ev.time;
        match ev.kind {
            Ev::MobilityStep { k } => {
                if k > 0 {
                    let dt = self.knobs.mobility_step_s;
                    for v in &mut self.vehicles {
                        v.topo.advance(dt, t);
                    }
                }
                let next = (k + 1) as f64 * self.knobs.mobility_step_s;
                if next < self.duration_s {
                    q.schedule(next, Ev::MobilityStep { k: k + 1 })?;
                }
            }
            Ev::HandoverCheck { k } => {
                self.handover_check(t)?;
                let next = (k + 1) as f64 * self.knobs.handover_period_s;
                if next < self.duration_s {
                    q.schedule(next, Ev::HandoverCheck { k: k + 1 })?;
                }
            }
            Ev::CloudSync { k } => {
                self.cloud_sync_all(t);
                let next = (k + 1) as f64 * self.knobs.cloud_sync_period_s;
                if next < self.duration_s {
                    q.schedule(next, Ev::CloudSync { k: k + 1 })?;
                }
            }
            Ev::BsmTick { stream, k } | Ev::StreamTick { stream, k } => {
                let period = self.streams[stream as usize].descriptor.period_s;
                let next = (k + 1) as f64 * period;
                if next < self.duration_s {
                    let kind = if self.streams[stream as usize].is_bsm {
                        Ev::BsmTick { stream, k: k + 1 }
                    } else {
                        Ev::StreamTick { stream, k: k + 1 }
                    };
                    q.schedule(next, kind)?;
                }
                self.stream_attempt(stream, t, q)?;
            }
            Ev::TxComplete(delivery) => match delivery.kind {
                DeliveryKind::Bsm { area, track } => {
                    // Ignore stale arrivals for vehicles that left the area.
                    if self.fos[area as usize].registered.contains(&track.vehicle) {
                        self.fos[area as usize].register_bsm(track);
                        self.audit.track_inserts.push((t, area, track.vehicle));
                    }
                }
                DeliveryKind::Stream { stream, carried_on } => {
                    let relevance = self.streams[stream as usize].descriptor.geo_relevance;
                    if should_escalate(&self.policy, relevance, carried_on) {
                        self.escalate(stream, t)?;
                    }
                }
            },
            Ev::LinkEstablished { vehicle, rat, peer } => {
                if let Some(link) = self.links.get_mut(&(vehicle, rat, peer)) {
                    if link.establish_done_at.is_some_and(|d| d <= t) {
                        link.established = true;
                    }
                }
            }
            Ev::SimEnd => {
                self.cloud_sync_all(t);
            }
        }
        Ok(())
    }

    fn handover_check(&mut self, t: f64) -> Result<(), WorldError> {
        // Vehicles processed in id order (the vehicle table is id-sorted).
        for vi in 0..self.vehicles.len() {
            let new_area = assign_fog_area(self.vehicles[vi].topo.position, &self.areas);
            let old_area = self.vehicles[vi].topo.fog_area;
            if new_area != old_area {
                self.do_handover(vi, old_area, new_area, t)?;
            }
        }
        // Registration audit: every vehicle registered with exactly one FO,
        // the one matching its assigned area.
        self.audit.registration_checks += 1;
        for (vi, v) in self.vehicles.iter().enumerate() {
            let count = self
                .fos
                .iter()
                .filter(|fo| fo.registered.contains(&(vi as u32)))
                .count();
            if count != 1 || !self.fos[v.topo.fog_area].registered.contains(&(vi as u32)) {
                self.audit.registration_violations += 1;
            }
        }
        for fo in &mut self.fos {
            fo.load.dsrc_density = fo.registered.len() as u32;
        }
        Ok(())
    }

    fn do_handover(&mut self, vi: usize, old: usize, new: usize, t: f64) -> Result<(), WorldError> {
        {
            let (old_fo, new_fo) = two_mut(&mut self.fos, old, new);
            handover(old_fo, new_fo, vi as u32);
        }
        self.vehicles[vi].topo.fog_area = new;
        self.audit
            .handovers
            .push((t, vi as u32, old as u32, new as u32));

        // Release reservations, cancel in-flight deferrals, drop beam
        // contexts; streams re-admit in the new area at their next tick.
        let stream_ids = self.vehicles[vi].streams.clone();
        for si in stream_ids {
            let (layer, rate) = {
                let s = &self.streams[si as usize];
                (s.descriptor.layer, s.descriptor.rate_bps)
            };
            if let Some(area) = self.streams[si as usize].reserved_in.take() {
                let target = self.policy.primary_rat(layer);
                self.fos[area as usize].load.release(target, rate);
            }
            if layer != LayerId::Base {
                self.streams[si as usize].admitted = false;
            }
            if let Some(p) = self.streams[si as usize].pending.take() {
                self.streams[si as usize].defers = 0;
                self.push_cloud(new, CloudRecord::Dropped(layer));
                self.record(
                    p.msg_id,
                    p.created_at,
                    si,
                    Endpoint::Unassigned,
                    None,
                    MsgStatus::Deferred,
                    None,
                )?;
            }
        }
        self.links
            .retain(|&(v, rat, _), _| !(v == vi as u32 && rat == RatName::Mmwave));
        Ok(())
    }

    fn cloud_sync_all(&mut self, t: f64) {
        for ai in 0..self.areas.len() {
            let batch =
                self.fos[ai].cloud_sync(t, &self.areas[ai].id, self.areas[ai].cloud_link_ms);
            self.cloud_batches.push(batch);
        }
    }
}

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

/// Builds the world from a validated scenario, runs it to `duration_s`, and
/// writes the output artifacts into `out_dir`.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: &Path,
    formats: OutputFormats,
) -> Result<RunOutput, WorldError> {
    let (mut world, mut queue) = World::build(scenario)?;
    let duration = world.duration_s;
    let events_processed = engine::run_until(&mut queue, duration, |ev, q| world.handle(ev, q))
        .map_err(|e| WorldError::Handler {
            time: e.time,
            seq: e.seq,
            source: Box::new(e.source),
        })?;

    fs::create_dir_all(out_dir)?;
    let deferral_events = world.deferral_events;
    let audit = world.audit.clone();
    let cloud_batches = std::mem::take(&mut world.cloud_batches);
    let (nodes, mut records) = world.sink.into_parts();
    let summary = summarize(&records, duration, deferral_events);
    let mut written = write_outputs(&nodes, &mut records, &summary, out_dir, formats)?;

    if formats.json {
        let path = out_dir.join("cloud.jsonl");
        let mut out = BufWriter::new(File::create(&path)?);
        for batch in &cloud_batches {
            serde_json::to_writer(&mut out, batch).map_err(KpiError::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        written.push(path);
    }

    let path = out_dir.join("effective_config.json");
    let mut out = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut out, scenario).map_err(KpiError::from)?;
    out.write_all(b"\n")?;
    out.flush()?;
    written.push(path);

    Ok(RunOutput {
        summary,
        audit,
        events_processed,
        written,
    })
}
