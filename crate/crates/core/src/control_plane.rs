//! The fog orchestrator's control plane: a service engine that classifies
//! and admits data streams, and an access controller that picks the RAT for
//! each admitted message.
//!
//! Admission is strict-priority with capacity reservation: base-layer
//! streams are always admitted, enhancement streams reserve capacity on
//! their target RAT and are deferred (first enhancement) or rejected
//! (second enhancement) when the residual cannot cover their rate.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::data_plane::{GeoRelevance, LayerId, StreamDescriptor};
use crate::rat::{RatName, TxMode};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("layer_rat_map must map every layer exactly once; `{0}` is missing")]
    MissingLayer(LayerId),
    #[error("base-layer messages are broadcasts; `{0}` has no broadcast support")]
    BaseNeedsBroadcast(RatName),
    #[error("priority must be a strict total order over the three layers")]
    BadPriority,
    #[error("defer_limit must be at least 1")]
    BadDeferLimit,
}

fn default_layer_rat_map() -> BTreeMap<LayerId, RatName> {
    BTreeMap::from([
        (LayerId::Base, RatName::Dsrc),
        (LayerId::Enh1, RatName::Cv2x),
        (LayerId::Enh2, RatName::Mmwave),
    ])
}

fn default_priority() -> Vec<LayerId> {
    vec![LayerId::Base, LayerId::Enh1, LayerId::Enh2]
}

fn default_rat_caps() -> BTreeMap<RatName, f64> {
    BTreeMap::from([
        (RatName::Dsrc, 15e6),
        (RatName::DsrcPx, 60e6 * (15.0 / 27.0)),
        (RatName::Cv2x, 100e6),
        // Usable mmWave capacity under full beamforming overhead.
        (RatName::Mmwave, 7e9 * (2.0 / 3.0)),
    ])
}

fn default_true() -> bool {
    true
}

fn default_defer_limit() -> u32 {
    10
}

/// Control-plane policy knobs; all defaults are overridable per scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Primary RAT per layer.
    pub layer_rat_map: BTreeMap<LayerId, RatName>,
    /// Strict admission priority, highest first.
    pub priority: Vec<LayerId>,
    pub px_enabled: bool,
    pub escalation_enabled: bool,
    /// Admission caps per RAT, bps of committed enhancement-stream rate.
    pub rat_caps_bps: BTreeMap<RatName, f64>,
    /// A deferred first-enhancement message is dropped after this many
    /// consecutive deferrals.
    pub defer_limit: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            layer_rat_map: default_layer_rat_map(),
            priority: default_priority(),
            px_enabled: default_true(),
            escalation_enabled: default_true(),
            rat_caps_bps: default_rat_caps(),
            defer_limit: default_defer_limit(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        for layer in LayerId::ALL {
            if !self.layer_rat_map.contains_key(&layer) {
                return Err(PolicyError::MissingLayer(layer));
            }
        }
        if self.layer_rat_map[&LayerId::Base] == RatName::Mmwave {
            return Err(PolicyError::BaseNeedsBroadcast(RatName::Mmwave));
        }
        let mut seen = self.priority.clone();
        seen.sort();
        seen.dedup();
        if self.priority.len() != 3 || seen.len() != 3 {
            return Err(PolicyError::BadPriority);
        }
        if self.defer_limit == 0 {
            return Err(PolicyError::BadDeferLimit);
        }
        Ok(())
    }

    pub fn primary_rat(&self, layer: LayerId) -> RatName {
        self.layer_rat_map[&layer]
    }

    pub fn cap_bps(&self, rat: RatName) -> f64 {
        self.rat_caps_bps
            .get(&rat)
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    /// Position in the priority order, 0 = served first.
    pub fn priority_rank(&self, layer: LayerId) -> usize {
        self.priority.iter().position(|&l| l == layer).unwrap_or(3)
    }
}

/// Per-fog-area load bookkeeping: committed enhancement-stream rate per RAT
/// and the local DSRC density estimate. Base traffic is carried without
/// reservation.
#[derive(Clone, Debug, Default)]
pub struct FogLoadState {
    committed_bps: BTreeMap<RatName, f64>,
    pub dsrc_density: u32,
}

impl FogLoadState {
    pub fn committed(&self, rat: RatName) -> f64 {
        self.committed_bps.get(&rat).copied().unwrap_or(0.0)
    }

    /// Committed LTE load of this area's cell.
    pub fn lte_cell_load_bps(&self) -> f64 {
        self.committed(RatName::Cv2x)
    }

    pub fn residual(&self, rat: RatName, policy: &PolicyConfig) -> f64 {
        policy.cap_bps(rat) - self.committed(rat)
    }

    pub fn reserve(&mut self, rat: RatName, bps: f64) {
        *self.committed_bps.entry(rat).or_insert(0.0) += bps;
    }

    pub fn release(&mut self, rat: RatName, bps: f64) {
        let slot = self.committed_bps.entry(rat).or_insert(0.0);
        *slot = (*slot - bps).max(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitDecision {
    Admit,
    Defer,
    Reject,
}

/// Service-engine admission for one classified stream. Base streams are
/// always admitted; enhancement streams need the target RAT's residual to
/// cover their rate and are otherwise deferred (first enhancement) or
/// rejected (second enhancement, which carries no reliability contract).
pub fn service_engine_admit(
    descriptor: &StreamDescriptor,
    load: &FogLoadState,
    policy: &PolicyConfig,
) -> AdmitDecision {
    match descriptor.layer {
        LayerId::Base => AdmitDecision::Admit,
        LayerId::Enh1 => {
            if load.residual(policy.primary_rat(LayerId::Enh1), policy) >= descriptor.rate_bps {
                AdmitDecision::Admit
            } else {
                AdmitDecision::Defer
            }
        }
        LayerId::Enh2 => {
            if load.residual(policy.primary_rat(LayerId::Enh2), policy) >= descriptor.rate_bps {
                AdmitDecision::Admit
            } else {
                AdmitDecision::Reject
            }
        }
    }
}

/// Per-RAT availability as seen from one vehicle: in range of a suitable
/// receiver and within the RAT's mobility limit.
#[derive(Clone, Copy, Debug, Default)]
pub struct RatAvailability {
    pub dsrc: bool,
    pub dsrc_px: bool,
    pub cv2x: bool,
    pub mmwave: bool,
}

impl RatAvailability {
    pub fn get(&self, rat: RatName) -> bool {
        match rat {
            RatName::Dsrc => self.dsrc,
            RatName::DsrcPx => self.dsrc_px,
            RatName::Cv2x => self.cv2x,
            RatName::Mmwave => self.mmwave,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectDecision {
    Assign { rat: RatName, mode: TxMode },
    Defer,
    Drop,
}

/// Access-controller RAT selection for one admitted message.
///
/// Fallbacks: base-layer broadcasts fall back from DSRC to the C-V2X PC5
/// sidelink; first-enhancement streams fall back from C-V2X to 802.11px when
/// enabled and the px residual covers the stream rate, else defer; the
/// second enhancement has no fallback and is dropped.
pub fn access_controller_select(
    layer: LayerId,
    rate_bps: f64,
    availability: &RatAvailability,
    load: &FogLoadState,
    policy: &PolicyConfig,
) -> SelectDecision {
    let primary = policy.primary_rat(layer);
    match layer {
        LayerId::Base => {
            if availability.get(primary) {
                let mode = if primary == RatName::Cv2x {
                    TxMode::V2v // PC5 sidelink
                } else {
                    TxMode::Broadcast
                };
                return SelectDecision::Assign { rat: primary, mode };
            }
            if primary != RatName::Cv2x && availability.cv2x {
                return SelectDecision::Assign {
                    rat: RatName::Cv2x,
                    mode: TxMode::V2v,
                };
            }
            SelectDecision::Drop
        }
        LayerId::Enh1 => {
            if availability.get(primary) {
                return SelectDecision::Assign {
                    rat: primary,
                    mode: TxMode::V2i,
                };
            }
            if policy.px_enabled
                && availability.dsrc_px
                && rate_bps <= load.residual(RatName::DsrcPx, policy)
            {
                return SelectDecision::Assign {
                    rat: RatName::DsrcPx,
                    mode: TxMode::V2i,
                };
            }
            SelectDecision::Defer
        }
        LayerId::Enh2 => {
            if availability.get(primary) {
                SelectDecision::Assign {
                    rat: primary,
                    mode: TxMode::V2i,
                }
            } else {
                SelectDecision::Drop
            }
        }
    }
}

/// Whether a delivered message must be duplicated onto the C-V2X broadcast
/// (eMBMS) toward all fog areas: city-relevant payloads that travelled on a
/// locally scoped RAT.
pub fn should_escalate(
    policy: &PolicyConfig,
    relevance: GeoRelevance,
    carried_on: RatName,
) -> bool {
    policy.escalation_enabled && relevance == GeoRelevance::City && carried_on != RatName::Cv2x
}
