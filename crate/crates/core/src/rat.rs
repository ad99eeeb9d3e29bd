//! Abstract link models for the four candidate V2X radio access
//! technologies: availability, link establishment, end-to-end latency,
//! erasures, capacity, and the mmWave path-loss / beamforming-overhead model.
//!
//! PHY and MAC internals are out of scope; each RAT is reduced to a
//! rate/latency/erasure contract parameterized by its profile.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use thiserror::Error;

use crate::engine::SimRng;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatName {
    Dsrc,
    DsrcPx,
    Cv2x,
    Mmwave,
}

impl RatName {
    pub const ALL: [RatName; 4] = [
        RatName::Dsrc,
        RatName::DsrcPx,
        RatName::Cv2x,
        RatName::Mmwave,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RatName::Dsrc => "dsrc",
            RatName::DsrcPx => "dsrc_px",
            RatName::Cv2x => "cv2x",
            RatName::Mmwave => "mmwave",
        }
    }
}

impl fmt::Display for RatName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Ubiquitous,
    Intermittent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V2vMode {
    Direct,
    Pc5,
    None,
}

/// Link mode of a transmission. `Broadcast` is one-hop on OCB-style radios
/// and network-mediated (eMBMS) on the cellular RAT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxMode {
    V2i,
    V2v,
    Broadcast,
}

impl fmt::Display for TxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxMode::V2i => "v2i",
            TxMode::V2v => "v2v",
            TxMode::Broadcast => "broadcast",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RatError {
    #[error("unknown RAT `{0}`")]
    UnknownRat(String),
    #[error("{rat} does not support {mode} transmissions")]
    UnsupportedMode { rat: RatName, mode: &'static str },
    #[error("mmWave path loss undefined below the 1 m reference distance (d = {0} m)")]
    BelowReferenceDistance(f64),
    #[error("invalid profile for {rat}: {reason}")]
    InvalidProfile { rat: RatName, reason: String },
}

/// One RAT's parameter set: ranges, rates, latency bounds, coverage class,
/// mobility limit and broadcast capability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatProfile {
    pub name: RatName,
    pub freq_band_ghz: (f64, f64),
    pub channel_bw_mhz: f64,
    pub range_m: f64,
    /// Maximum PHY transmission rate.
    pub phy_rate_bps: f64,
    /// Usable throughput after protocol overhead; admission and
    /// serialization work against this figure.
    pub net_cap_bps: f64,
    /// Closed end-to-end latency interval for infrastructure links, ms.
    pub v2i_latency_ms: (f64, f64),
    /// Closed end-to-end latency interval for direct/sidelink V2V, ms.
    pub v2v_latency_ms: (f64, f64),
    pub establishment_ms: (f64, f64),
    pub coverage: Coverage,
    pub mobility_limit_kmh: f64,
    pub broadcast: bool,
    pub v2v_mode: V2vMode,
}

/// Bounded latencies are sampled uniformly within their interval; "<= X"
/// figures get this lower bound.
pub const TACTILE_LATENCY_FLOOR_MS: f64 = 1.0;

/// Fraction of the beacon interval consumed by legacy beamforming training
/// when no positioning assistance is available.
pub const BEAMFORMING_OVERHEAD_NO_ASSIST: f64 = 1.0 / 3.0;

/// Default profile for a RAT. Values can be overridden per scenario.
pub fn profile_of(name: RatName) -> RatProfile {
    match name {
        RatName::Dsrc => RatProfile {
            name,
            freq_band_ghz: (5.85, 5.925),
            channel_bw_mhz: 10.0,
            range_m: 1_000.0,
            phy_rate_bps: 27e6,
            net_cap_bps: 15e6,
            v2i_latency_ms: (TACTILE_LATENCY_FLOOR_MS, 10.0),
            v2v_latency_ms: (TACTILE_LATENCY_FLOOR_MS, 10.0),
            establishment_ms: (0.0, 0.0),
            coverage: Coverage::Intermittent,
            mobility_limit_kmh: 130.0,
            broadcast: true,
            v2v_mode: V2vMode::Direct,
        },
        // The px amendment keeps the legacy band and OCB operation; the net
        // cap scales the 60 Mbps peak by the legacy PHY-to-net efficiency.
        RatName::DsrcPx => RatProfile {
            name,
            freq_band_ghz: (5.85, 5.925),
            channel_bw_mhz: 10.0,
            range_m: 1_000.0,
            phy_rate_bps: 60e6,
            net_cap_bps: 60e6 * (15.0 / 27.0),
            v2i_latency_ms: (TACTILE_LATENCY_FLOOR_MS, 10.0),
            v2v_latency_ms: (TACTILE_LATENCY_FLOOR_MS, 10.0),
            establishment_ms: (0.0, 0.0),
            coverage: Coverage::Intermittent,
            mobility_limit_kmh: 130.0,
            broadcast: true,
            v2v_mode: V2vMode::Direct,
        },
        RatName::Cv2x => RatProfile {
            name,
            freq_band_ghz: (0.45, 5.765),
            channel_bw_mhz: 640.0,
            range_m: 30_000.0,
            phy_rate_bps: 3e9,
            // Per-cell capacity reserved for V2X traffic; shared and
            // configurable, enforced by admission.
            net_cap_bps: 100e6,
            v2i_latency_ms: (30.0, 50.0),
            v2v_latency_ms: (20.0, 80.0),
            establishment_ms: (40.0, 110.0),
            coverage: Coverage::Ubiquitous,
            mobility_limit_kmh: 350.0,
            broadcast: true,
            v2v_mode: V2vMode::Pc5,
        },
        RatName::Mmwave => RatProfile {
            name,
            freq_band_ghz: (57.05, 64.0),
            channel_bw_mhz: 2_160.0,
            range_m: 50.0,
            phy_rate_bps: 7e9,
            net_cap_bps: 7e9,
            v2i_latency_ms: (TACTILE_LATENCY_FLOOR_MS, 10.0),
            v2v_latency_ms: (TACTILE_LATENCY_FLOOR_MS, 10.0),
            // Covers beam training.
            establishment_ms: (10.0, 20.0),
            coverage: Coverage::Intermittent,
            mobility_limit_kmh: 100.0,
            broadcast: false,
            v2v_mode: V2vMode::Direct,
        },
    }
}

impl RatProfile {
    pub fn validate(&self) -> Result<(), RatError> {
        let iv = |name: &str, (lo, hi): (f64, f64)| -> Result<(), RatError> {
            if lo > hi || lo < 0.0 || !lo.is_finite() || !hi.is_finite() {
                return Err(RatError::InvalidProfile {
                    rat: self.name,
                    reason: format!("{name} interval [{lo}, {hi}] is invalid"),
                });
            }
            Ok(())
        };
        iv("v2i_latency_ms", self.v2i_latency_ms)?;
        iv("v2v_latency_ms", self.v2v_latency_ms)?;
        iv("establishment_ms", self.establishment_ms)?;
        if self.net_cap_bps > self.phy_rate_bps {
            return Err(RatError::InvalidProfile {
                rat: self.name,
                reason: format!(
                    "net_cap_bps {} exceeds phy_rate_bps {}",
                    self.net_cap_bps, self.phy_rate_bps
                ),
            });
        }
        if self.range_m <= 0.0 || self.net_cap_bps <= 0.0 {
            return Err(RatError::InvalidProfile {
                rat: self.name,
                reason: "range_m and net_cap_bps must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Partial profile patch applied over the built-in defaults by scenario config.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatProfilePatch {
    pub range_m: Option<f64>,
    pub phy_rate_bps: Option<f64>,
    pub net_cap_bps: Option<f64>,
    pub v2i_latency_ms: Option<(f64, f64)>,
    pub v2v_latency_ms: Option<(f64, f64)>,
    pub establishment_ms: Option<(f64, f64)>,
    pub mobility_limit_kmh: Option<f64>,
}

impl RatProfilePatch {
    pub fn apply(&self, profile: &mut RatProfile) {
        if let Some(v) = self.range_m {
            profile.range_m = v;
        }
        if let Some(v) = self.phy_rate_bps {
            profile.phy_rate_bps = v;
        }
        if let Some(v) = self.net_cap_bps {
            profile.net_cap_bps = v;
        }
        if let Some(v) = self.v2i_latency_ms {
            profile.v2i_latency_ms = v;
        }
        if let Some(v) = self.v2v_latency_ms {
            profile.v2v_latency_ms = v;
        }
        if let Some(v) = self.establishment_ms {
            profile.establishment_ms = v;
        }
        if let Some(v) = self.mobility_limit_kmh {
            profile.mobility_limit_kmh = v;
        }
    }
}

// ---------------------------------------------------------------------------
// mmWave channel model
// ---------------------------------------------------------------------------

/// Log-distance path loss and blockage parameters for the 60 GHz channel,
/// plus beamforming overhead fractions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmwaveChannelConfig {
    /// Path loss at the 1 m reference distance (free space at 60 GHz).
    pub pl0_db: f64,
    pub n_los: f64,
    pub n_nlos: f64,
    /// Blockage probability grows linearly with distance, clamped at
    /// `blockage_max`: p(d) = min(blockage_max, d / blockage_scale_m).
    pub blockage_max: f64,
    pub blockage_scale_m: f64,
    pub bi_length_ms: f64,
    /// Residual beamforming overhead when position assistance succeeds.
    pub overhead_with_assist: f64,
}

impl Default for MmwaveChannelConfig {
    fn default() -> Self {
        MmwaveChannelConfig {
            pl0_db: 68.0,
            n_los: 2.4,
            n_nlos: 4.0,
            blockage_max: 0.5,
            blockage_scale_m: 100.0,
            bi_length_ms: 100.0,
            overhead_with_assist: 0.05,
        }
    }
}

impl MmwaveChannelConfig {
    pub fn validate(&self) -> Result<(), RatError> {
        let bad = |reason: String| RatError::InvalidProfile {
            rat: RatName::Mmwave,
            reason,
        };
        if self.n_los.is_nan() || self.n_los >= 2.8 {
            return Err(bad(format!("n_los must be < 2.8, got {}", self.n_los)));
        }
        if !(3.8..=5.6).contains(&self.n_nlos) {
            return Err(bad(format!(
                "n_nlos must be within [3.8, 5.6], got {}",
                self.n_nlos
            )));
        }
        if !(0.0..=BEAMFORMING_OVERHEAD_NO_ASSIST).contains(&self.overhead_with_assist) {
            return Err(bad(format!(
                "overhead_with_assist must be within [0, 1/3], got {}",
                self.overhead_with_assist
            )));
        }
        if !(0.0..=1.0).contains(&self.blockage_max) || self.blockage_scale_m <= 0.0 {
            return Err(bad("blockage parameters out of range".into()));
        }
        if self.bi_length_ms <= 0.0 {
            return Err(bad("bi_length_ms must be positive".into()));
        }
        Ok(())
    }

    /// Blockage probability at distance `d`, nondecreasing in `d`.
    pub fn p_blockage(&self, d_m: f64) -> f64 {
        (d_m / self.blockage_scale_m).clamp(0.0, self.blockage_max)
    }
}

/// Log-distance path loss in dB: PL = pl0 + 10 n log10(d).
pub fn mmwave_path_loss(cfg: &MmwaveChannelConfig, d_m: f64, los: bool) -> Result<f64, RatError> {
    if d_m < 1.0 {
        return Err(RatError::BelowReferenceDistance(d_m));
    }
    let n = if los { cfg.n_los } else { cfg.n_nlos };
    Ok(cfg.pl0_db + 10.0 * n * d_m.log10())
}

/// Throughput left after beamforming training consumes its share of each
/// beacon interval.
pub fn mmwave_effective_rate(cfg: &MmwaveChannelConfig, peak_bps: f64, assist: bool) -> f64 {
    debug_assert!(peak_bps > 0.0);
    let overhead = if assist {
        cfg.overhead_with_assist
    } else {
        BEAMFORMING_OVERHEAD_NO_ASSIST
    };
    peak_bps * (1.0 - overhead)
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

fn uniform_in(interval: (f64, f64), rng: &mut SimRng) -> f64 {
    debug_assert!(interval.0 <= interval.1);
    if interval.0 == interval.1 {
        interval.0
    } else {
        rng.random_range(interval.0..=interval.1)
    }
}

/// End-to-end latency sample in milliseconds for the given link mode.
pub fn latency_sample(
    profile: &RatProfile,
    mode: TxMode,
    rng: &mut SimRng,
) -> Result<f64, RatError> {
    match mode {
        TxMode::V2i => Ok(uniform_in(profile.v2i_latency_ms, rng)),
        TxMode::V2v => {
            if profile.v2v_mode == V2vMode::None {
                return Err(RatError::UnsupportedMode {
                    rat: profile.name,
                    mode: "v2v",
                });
            }
            Ok(uniform_in(profile.v2v_latency_ms, rng))
        }
        TxMode::Broadcast => {
            if !profile.broadcast {
                return Err(RatError::UnsupportedMode {
                    rat: profile.name,
                    mode: "broadcast",
                });
            }
            // Network-mediated broadcast on the cellular RAT, one-hop on the
            // OCB radios.
            if profile.name == RatName::Cv2x {
                Ok(uniform_in(profile.v2i_latency_ms, rng))
            } else {
                Ok(uniform_in(profile.v2v_latency_ms, rng))
            }
        }
    }
}

/// Per-endpoint-pair link state. `established` implies the establishment
/// handshake completed at or before the current clock.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinkState {
    pub established: bool,
    /// Simulated time the in-flight establishment completes, if one started.
    pub establish_done_at: Option<f64>,
}

/// Establishment cost in ms for a transmission on this link: zero when
/// established, a fresh uniform draw otherwise.
pub fn establishment_delay(profile: &RatProfile, link: &LinkState, rng: &mut SimRng) -> f64 {
    if link.established {
        0.0
    } else {
        uniform_in(profile.establishment_ms, rng)
    }
}

impl LinkState {
    /// Establishment delay in ms seen by a message sent at `now_s`, starting
    /// the handshake if none is in flight. Messages sent while establishment
    /// is pending wait out the remainder.
    pub fn establishment_cost_ms(
        &mut self,
        profile: &RatProfile,
        now_s: f64,
        rng: &mut SimRng,
    ) -> f64 {
        if self.established {
            return 0.0;
        }
        match self.establish_done_at {
            Some(done) if done > now_s => (done - now_s) * 1e3,
            Some(_) => {
                self.established = true;
                0.0
            }
            None => {
                let ms = establishment_delay(profile, &*self, rng);
                self.establish_done_at = Some(now_s + ms / 1e3);
                if ms == 0.0 {
                    self.established = true;
                }
                ms
            }
        }
    }
}

/// DSRC channel erasure probability driven by local vehicle density:
/// p(n) = min(0.9, 0.01 * (n / 10)^1.5), super-linear in n.
pub fn dsrc_erasure_prob(density: u32) -> f64 {
    const P0: f64 = 0.01;
    const N0: f64 = 10.0;
    const GAMMA: f64 = 1.5;
    const CLAMP: f64 = 0.9;
    (P0 * (density as f64 / N0).powf(GAMMA)).min(CLAMP)
}

/// Packet delivery ratio at transmitter-receiver distance `d`. The px
/// amendment improves on the legacy curve by a constant factor, clamped
/// at 1; RATs without a distance curve deliver within range.
pub fn pdr_at_distance(name: RatName, d_m: f64) -> f64 {
    const D0: f64 = 350.0;
    const PX_GAIN: f64 = 1.4;
    debug_assert!(d_m >= 0.0);
    let legacy = (-(d_m / D0).powi(2)).exp();
    match name {
        RatName::Dsrc => legacy,
        RatName::DsrcPx => (PX_GAIN * legacy).min(1.0),
        RatName::Cv2x | RatName::Mmwave => 1.0,
    }
}

/// Availability of a link: in range, within the RAT's mobility limit and,
/// for intermittently covered RATs, passing the availability draw (blockage
/// for mmWave).
pub fn link_available(
    profile: &RatProfile,
    mmw: &MmwaveChannelConfig,
    distance_m: f64,
    speed_kmh: f64,
    rng: &mut SimRng,
) -> bool {
    if distance_m > profile.range_m || speed_kmh > profile.mobility_limit_kmh {
        return false;
    }
    match profile.coverage {
        Coverage::Ubiquitous => true,
        Coverage::Intermittent => match profile.name {
            RatName::Mmwave => rng.random::<f64>() >= mmw.p_blockage(distance_m),
            _ => true,
        },
    }
}

// ---------------------------------------------------------------------------
// Shared-channel capacity models
// ---------------------------------------------------------------------------

/// Sliding-window delivery regulator for a contention-based shared channel:
/// total delivered bits in any window of `window_s` seconds never exceed the
/// window budget. Deliveries are FIFO; a message whose regulated delivery
/// would lag its nominal time by more than `max_queue_s` is rejected.
///
/// Times are handled as integer microseconds so the window bound is exact
/// under any sliding-window accounting at the same resolution (KPI output
/// carries millisecond values with three decimals, i.e. microseconds).
#[derive(Clone, Debug)]
pub struct WindowRegulator {
    window_us: u64,
    budget_bits: u64,
    max_queue_us: u64,
    entries: VecDeque<(u64, u64)>,
    sum_bits: u64,
    last_delivery_us: u64,
}

const US_PER_S: f64 = 1e6;

impl WindowRegulator {
    pub fn new(budget_bps: f64, window_s: f64, max_queue_s: f64) -> Self {
        WindowRegulator {
            window_us: (window_s * US_PER_S).round() as u64,
            budget_bits: (budget_bps * window_s).floor() as u64,
            max_queue_us: (max_queue_s * US_PER_S).round() as u64,
            entries: VecDeque::new(),
            sum_bits: 0,
            last_delivery_us: 0,
        }
    }

    /// Earliest admissible delivery time for `bits` no earlier than
    /// `nominal_s`, or None when the backlog exceeds the queue bound (or the
    /// message alone exceeds the window budget).
    pub fn admit(&mut self, nominal_s: f64, bits: u64) -> Option<f64> {
        if bits > self.budget_bits {
            return None;
        }
        let nominal_us = (nominal_s * US_PER_S).ceil() as u64;
        let mut t = nominal_us.max(self.last_delivery_us);
        // Only entries outside the window of the last committed delivery are
        // provably dead: every future delivery lands at or after it.
        // Expiring against the candidate time would be wrong, because a
        // rejected message must not unconstrain later, earlier-nominal ones.
        let horizon = self.last_delivery_us;
        while let Some(&(at, b)) = self.entries.front() {
            if horizon >= self.window_us && at <= horizon - self.window_us {
                self.entries.pop_front();
                self.sum_bits -= b;
            } else {
                break;
            }
        }
        // Push the delivery past enough old entries to fit the budget.
        let mut evict = 0usize;
        let mut sum = self.sum_bits;
        while sum + bits > self.budget_bits {
            let (at, b) = self.entries[evict];
            evict += 1;
            sum -= b;
            t = t.max(at + self.window_us);
        }
        if t - nominal_us > self.max_queue_us {
            return None;
        }
        for _ in 0..evict {
            let (_, b) = self.entries.pop_front().unwrap();
            self.sum_bits -= b;
        }
        self.entries.push_back((t, bits));
        self.sum_bits += bits;
        self.last_delivery_us = t;
        Some(t as f64 / US_PER_S)
    }
}

/// Single-server serialization model for a point-to-point link (one mmWave
/// RSU front-haul): transmissions are served back to back at the effective
/// rate; arrivals that would wait longer than `max_queue_s` are rejected.
#[derive(Clone, Copy, Debug)]
pub struct BusyChannel {
    busy_until: f64,
    max_queue_s: f64,
}

impl BusyChannel {
    pub fn new(max_queue_s: f64) -> Self {
        BusyChannel {
            busy_until: 0.0,
            max_queue_s,
        }
    }

    /// Completion time of a transmission ready at `ready_s` taking
    /// `service_s` seconds, or None if the queueing delay exceeds the bound.
    pub fn try_serve(&mut self, ready_s: f64, service_s: f64) -> Option<f64> {
        let start = ready_s.max(self.busy_until);
        if start - ready_s > self.max_queue_s {
            return None;
        }
        self.busy_until = start + service_s;
        Some(self.busy_until)
    }
}

/// Capacity model backing a transmission.
pub enum Channel<'a> {
    /// Shared contention channel with a hard windowed throughput cap.
    Windowed(&'a mut WindowRegulator),
    /// Dedicated serialized link.
    Serial(&'a mut BusyChannel),
    /// Admission-controlled medium with no per-message channel state.
    Unlimited,
}

// ---------------------------------------------------------------------------
// Transmission pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxStatus {
    Delivered,
    Erased,
    DroppedNoCoverage,
}

#[derive(Clone, Copy, Debug)]
pub struct TxOutcome {
    pub status: TxStatus,
    /// Arrival time in simulated seconds; set iff delivered.
    pub rx_time_s: Option<f64>,
}

/// Per-transmission context assembled by the caller.
#[derive(Clone, Copy, Debug)]
pub struct TxRequest {
    pub now_s: f64,
    pub bytes: u64,
    pub mode: TxMode,
    /// Distance to the destination (nearest receiver for broadcasts).
    pub distance_m: f64,
    pub speed_kmh: f64,
    /// Vehicles inside the contention range of the transmitter.
    pub density: u32,
    /// Whether beamforming assistance applies to this mmWave transmission.
    pub assist: bool,
}

/// Runs the delivery pipeline for one message on an established RAT choice:
/// availability, establishment, erasure draw, serialization and latency.
/// Failures are statuses, not errors; exactly one outcome is returned per
/// message.
pub fn transmit(
    profile: &RatProfile,
    mmw: &MmwaveChannelConfig,
    link: &mut LinkState,
    channel: Channel<'_>,
    req: TxRequest,
    rng: &mut SimRng,
) -> Result<TxOutcome, RatError> {
    if req.distance_m > profile.range_m || req.speed_kmh > profile.mobility_limit_kmh {
        return Ok(TxOutcome {
            status: TxStatus::DroppedNoCoverage,
            rx_time_s: None,
        });
    }

    let establishment_s = link.establishment_cost_ms(profile, req.now_s, rng) / 1e3;

    // Erasure draw.
    let erased = match profile.name {
        RatName::Dsrc | RatName::DsrcPx => {
            let p_deliver = pdr_at_distance(profile.name, req.distance_m)
                * (1.0 - dsrc_erasure_prob(req.density));
            rng.random::<f64>() >= p_deliver
        }
        RatName::Mmwave => rng.random::<f64>() < mmw.p_blockage(req.distance_m),
        RatName::Cv2x => false,
    };
    if erased {
        return Ok(TxOutcome {
            status: TxStatus::Erased,
            rx_time_s: None,
        });
    }

    let effective_bps = match profile.name {
        RatName::Mmwave => mmwave_effective_rate(mmw, profile.net_cap_bps, req.assist),
        _ => profile.net_cap_bps,
    };
    let serialization_s = req.bytes as f64 * 8.0 / effective_bps;
    let latency_s = latency_sample(profile, req.mode, rng)? / 1e3;

    let rx_time = match channel {
        Channel::Unlimited => Some(req.now_s + establishment_s + serialization_s + latency_s),
        Channel::Windowed(reg) => {
            let nominal = req.now_s + establishment_s + serialization_s + latency_s;
            reg.admit(nominal, req.bytes * 8)
        }
        Channel::Serial(chan) => chan
            .try_serve(req.now_s + establishment_s, serialization_s)
            .map(|done| done + latency_s),
    };

    Ok(match rx_time {
        Some(t) => TxOutcome {
            status: TxStatus::Delivered,
            rx_time_s: Some(t),
        },
        // Backlog overflow on the shared medium is a channel loss.
        None => TxOutcome {
            status: TxStatus::Erased,
            rx_time_s: None,
        },
    })
}
