//! Per-message outcome recording and aggregation into PDR, latency
//! percentiles and per-layer/per-RAT goodput.
//!
//! Exactly one record exists per message id; the run-level conservation
//! check `sent = delivered + erased + dropped_no_coverage + dropped_policy
//! + deferred` is exact by construction and re-verified at summary time.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::data_plane::{LayerId, MsgStatus, Service};
use crate::rat::RatName;

pub const MESSAGES_CSV_HEADER: &str =
    "msg_id,t_tx_ms,t_rx_ms,src,dst,rat,layer,service,bytes,status";

#[derive(Debug, Error)]
pub enum KpiError {
    #[error("duplicate KPI record for message {0}")]
    DuplicateMsgId(u64),
    #[error("message {msg_id}: delivered at {t_rx_ms} ms before transmission at {t_tx_ms} ms")]
    RxBeforeTx {
        msg_id: u64,
        t_tx_ms: f64,
        t_rx_ms: f64,
    },
    #[error("message {0}: delivered status requires a reception time")]
    MissingRxTime(u64),
    #[error("message {0}: non-delivered status cannot carry a reception time")]
    UnexpectedRxTime(u64),
    #[error("KPI output I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("KPI output serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Interned node names (vehicles, RSUs) for compact records.
#[derive(Clone, Debug, Default)]
pub struct NodeTable {
    names: Vec<String>,
}

impl NodeTable {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return i as u32;
        }
        self.names.push(name.to_string());
        (self.names.len() - 1) as u32
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }
}

/// Message destination as it appears in KPI output. Messages the control
/// plane never assigned to a RAT have no destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Node(u32),
    Broadcast,
    Unassigned,
}

/// One per-message outcome row.
#[derive(Clone, Copy, Debug)]
pub struct KpiRecord {
    pub msg_id: u64,
    pub t_tx_ms: f64,
    /// Present iff delivered.
    pub t_rx_ms: Option<f64>,
    pub src: u32,
    pub dst: Endpoint,
    /// RAT that carried (or was chosen for) the message; absent when the
    /// control plane never assigned one.
    pub rat: Option<RatName>,
    pub layer: LayerId,
    pub service: Service,
    pub bytes: u64,
    pub status: MsgStatus,
}

impl KpiRecord {
    fn check(&self) -> Result<(), KpiError> {
        match (self.status, self.t_rx_ms) {
            (MsgStatus::Delivered, None) => Err(KpiError::MissingRxTime(self.msg_id)),
            (MsgStatus::Delivered, Some(rx)) if rx < self.t_tx_ms => Err(KpiError::RxBeforeTx {
                msg_id: self.msg_id,
                t_tx_ms: self.t_tx_ms,
                t_rx_ms: rx,
            }),
            (MsgStatus::Delivered, Some(_)) => Ok(()),
            (_, Some(_)) => Err(KpiError::UnexpectedRxTime(self.msg_id)),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Default)]
struct IdSet {
    words: Vec<u64>,
}

impl IdSet {
    /// Inserts the id, returning false if it was already present.
    fn insert(&mut self, id: u64) -> bool {
        let (word, bit) = ((id / 64) as usize, id % 64);
        if word >= self.words.len() {
            self.words.resize(word + 1, 0);
        }
        let mask = 1u64 << bit;
        if self.words[word] & mask != 0 {
            return false;
        }
        self.words[word] |= mask;
        true
    }
}

/// Append-only record sink owned by the event loop.
#[derive(Default)]
pub struct KpiSink {
    pub nodes: NodeTable,
    records: Vec<KpiRecord>,
    seen: IdSet,
}

impl KpiSink {
    pub fn new(nodes: NodeTable) -> Self {
        KpiSink {
            nodes,
            ..Default::default()
        }
    }

    pub fn record_outcome(&mut self, record: KpiRecord) -> Result<(), KpiError> {
        record.check()?;
        if !self.seen.insert(record.msg_id) {
            return Err(KpiError::DuplicateMsgId(record.msg_id));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[KpiRecord] {
        &self.records
    }

    pub fn into_parts(self) -> (NodeTable, Vec<KpiRecord>) {
        (self.nodes, self.records)
    }
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct GroupSummary {
    pub sent: u64,
    pub delivered: u64,
    pub pdr: f64,
    pub goodput_bps: f64,
    pub latency_ms_p50: Option<f64>,
    pub latency_ms_p95: Option<f64>,
    pub latency_ms_p99: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunTotals {
    pub duration_s: f64,
    pub sent: u64,
    pub delivered: u64,
    pub erased: u64,
    pub dropped_no_coverage: u64,
    pub dropped_policy: u64,
    pub deferred: u64,
    /// Deferral events including retried attempts that later resolved.
    pub deferral_events: u64,
    pub conservation_ok: bool,
}

#[derive(Clone, Debug)]
pub struct Summary {
    /// Keyed by "layer:rat"; groups with zero sent messages are omitted.
    pub groups: BTreeMap<String, GroupSummary>,
    pub run: RunTotals,
}

impl Summary {
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (key, group) in &self.groups {
            map.insert(key.clone(), serde_json::to_value(group).unwrap());
        }
        map.insert("run".to_string(), serde_json::to_value(&self.run).unwrap());
        serde_json::Value::Object(map)
    }
}

pub fn group_key(layer: LayerId, rat: Option<RatName>) -> String {
    match rat {
        Some(r) => format!("{layer}:{r}"),
        None => format!("{layer}:none"),
    }
}

/// Nearest-rank percentile over an ascending slice (no interpolation).
fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0 * sorted.len() as f64).ceil() as usize).max(1);
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Aggregates records into per-(layer, RAT) groups and run totals. The
/// result is independent of record order.
pub fn summarize(records: &[KpiRecord], duration_s: f64, deferral_events: u64) -> Summary {
    #[derive(Default)]
    struct Acc {
        sent: u64,
        delivered: u64,
        bytes_delivered: u64,
        latencies: Vec<f64>,
    }

    let mut groups: BTreeMap<(LayerId, Option<RatName>), Acc> = BTreeMap::new();
    let mut totals = RunTotals {
        duration_s,
        sent: 0,
        delivered: 0,
        erased: 0,
        dropped_no_coverage: 0,
        dropped_policy: 0,
        deferred: 0,
        deferral_events,
        conservation_ok: false,
    };

    for r in records {
        totals.sent += 1;
        match r.status {
            MsgStatus::Delivered => totals.delivered += 1,
            MsgStatus::Erased => totals.erased += 1,
            MsgStatus::DroppedNoCoverage => totals.dropped_no_coverage += 1,
            MsgStatus::DroppedPolicy => totals.dropped_policy += 1,
            MsgStatus::Deferred => totals.deferred += 1,
        }
        let acc = groups.entry((r.layer, r.rat)).or_default();
        acc.sent += 1;
        if r.status == MsgStatus::Delivered {
            acc.delivered += 1;
            acc.bytes_delivered += r.bytes;
            acc.latencies.push(r.t_rx_ms.unwrap() - r.t_tx_ms);
        }
    }
    totals.conservation_ok = totals.sent
        == totals.delivered
            + totals.erased
            + totals.dropped_no_coverage
            + totals.dropped_policy
            + totals.deferred;

    let groups = groups
        .into_iter()
        .map(|((layer, rat), mut acc)| {
            acc.latencies.sort_by(f64::total_cmp);
            let summary = GroupSummary {
                sent: acc.sent,
                delivered: acc.delivered,
                pdr: acc.delivered as f64 / acc.sent as f64,
                goodput_bps: acc.bytes_delivered as f64 * 8.0 / duration_s,
                latency_ms_p50: nearest_rank(&acc.latencies, 50.0),
                latency_ms_p95: nearest_rank(&acc.latencies, 95.0),
                latency_ms_p99: nearest_rank(&acc.latencies, 99.0),
            };
            (group_key(layer, rat), summary)
        })
        .collect();

    Summary {
        groups,
        run: totals,
    }
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct OutputFormats {
    pub csv: bool,
    pub json: bool,
}

impl Default for OutputFormats {
    fn default() -> Self {
        OutputFormats {
            csv: true,
            json: true,
        }
    }
}

/// Fixed 3-decimal millisecond field, written as integer microseconds split
/// around the decimal point (faster than float formatting and bit-stable).
fn write_ms(out: &mut impl Write, ms: f64) -> std::io::Result<()> {
    let us = (ms * 1000.0).round() as i64;
    write!(out, "{}.{:03}", us / 1000, (us % 1000).abs())
}

/// Writes `messages.csv` and/or `summary.json` into `dir`. Rows are emitted
/// in `(t_tx_ms, msg_id)` order; running the same records twice produces
/// byte-identical files.
pub fn write_outputs(
    nodes: &NodeTable,
    records: &mut [KpiRecord],
    summary: &Summary,
    dir: &Path,
    formats: OutputFormats,
) -> Result<Vec<PathBuf>, KpiError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    if formats.csv {
        records.sort_by(|a, b| {
            a.t_tx_ms
                .total_cmp(&b.t_tx_ms)
                .then_with(|| a.msg_id.cmp(&b.msg_id))
        });
        let path = dir.join("messages.csv");
        let mut out = BufWriter::with_capacity(1 << 20, File::create(&path)?);
        writeln!(out, "{MESSAGES_CSV_HEADER}")?;
        for r in records.iter() {
            write!(out, "{},", r.msg_id)?;
            write_ms(&mut out, r.t_tx_ms)?;
            out.write_all(b",")?;
            if let Some(rx) = r.t_rx_ms {
                write_ms(&mut out, rx)?;
            }
            write!(out, ",{},", nodes.name(r.src))?;
            match r.dst {
                Endpoint::Node(n) => write!(out, "{}", nodes.name(n))?,
                Endpoint::Broadcast => write!(out, "broadcast")?,
                Endpoint::Unassigned => {}
            }
            match r.rat {
                Some(rat) => write!(out, ",{rat}")?,
                None => write!(out, ",")?,
            }
            writeln!(out, ",{},{},{},{}", r.layer, r.service, r.bytes, r.status)?;
        }
        out.flush()?;
        written.push(path);
    }

    if formats.json {
        let path = dir.join("summary.json");
        let mut out = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut out, &summary.to_json_value())?;
        out.write_all(b"\n")?;
        out.flush()?;
        written.push(path);
    }

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u64, t_tx: f64, t_rx: Option<f64>, status: MsgStatus) -> KpiRecord {
        KpiRecord {
            msg_id: id,
            t_tx_ms: t_tx,
            t_rx_ms: t_rx,
            src: 0,
            dst: Endpoint::Broadcast,
            rat: Some(RatName::Dsrc),
            layer: LayerId::Base,
            service: Service::SafetyCore,
            bytes: 300,
            status,
        }
    }

    fn sink() -> KpiSink {
        let mut nodes = NodeTable::default();
        nodes.intern("v1");
        KpiSink::new(nodes)
    }

    #[test]
    fn record_and_reject_duplicates() {
        let mut s = sink();
        s.record_outcome(record(1, 0.0, Some(5.0), MsgStatus::Delivered))
            .unwrap();
        assert_eq!(s.len(), 1);
        let err = s
            .record_outcome(record(1, 1.0, None, MsgStatus::Erased))
            .unwrap_err();
        assert!(matches!(err, KpiError::DuplicateMsgId(1)));
    }

    #[test]
    fn invariant_violations_rejected() {
        let mut s = sink();
        assert!(matches!(
            s.record_outcome(record(1, 10.0, Some(5.0), MsgStatus::Delivered)),
            Err(KpiError::RxBeforeTx { .. })
        ));
        assert!(matches!(
            s.record_outcome(record(2, 0.0, None, MsgStatus::Delivered)),
            Err(KpiError::MissingRxTime(2))
        ));
        assert!(matches!(
            s.record_outcome(record(3, 0.0, Some(1.0), MsgStatus::Erased)),
            Err(KpiError::UnexpectedRxTime(3))
        ));
    }

    #[test]
    fn pdr_ratio() {
        let mut records = Vec::new();
        for i in 0..10 {
            let delivered = i != 0;
            records.push(record(
                i,
                i as f64,
                delivered.then_some(i as f64 + 3.0),
                if delivered {
                    MsgStatus::Delivered
                } else {
                    MsgStatus::Erased
                },
            ));
        }
        let summary = summarize(&records, 1.0, 0);
        let g = &summary.groups["base:dsrc"];
        assert_eq!(g.sent, 10);
        assert!((g.pdr - 0.9).abs() < 1e-12);
        assert!(summary.run.conservation_ok);
    }

    #[test]
    fn empty_groups_omitted() {
        let records = vec![record(1, 0.0, Some(2.0), MsgStatus::Delivered)];
        let summary = summarize(&records, 1.0, 0);
        assert_eq!(summary.groups.len(), 1);
        assert!(summary.groups.contains_key("base:dsrc"));
    }

    #[test]
    fn nearest_rank_percentiles() {
        // Latencies 1..=100 ms: p50 = 50 by nearest rank.
        let records: Vec<KpiRecord> = (1..=100)
            .map(|i| record(i, 0.0, Some(i as f64), MsgStatus::Delivered))
            .collect();
        let summary = summarize(&records, 1.0, 0);
        let g = &summary.groups["base:dsrc"];
        assert_eq!(g.latency_ms_p50, Some(50.0));
        assert_eq!(g.latency_ms_p95, Some(95.0));
        assert_eq!(g.latency_ms_p99, Some(99.0));
    }

    #[test]
    fn percentiles_nondecreasing_and_order_insensitive() {
        let mut records: Vec<KpiRecord> = (0..57)
            .map(|i| {
                record(
                    i,
                    0.0,
                    Some(((i * 37) % 91) as f64 + 1.0),
                    MsgStatus::Delivered,
                )
            })
            .collect();
        let a = summarize(&records, 2.0, 0);
        records.reverse();
        records.swap(3, 40);
        let b = summarize(&records, 2.0, 0);
        let (ga, gb) = (&a.groups["base:dsrc"], &b.groups["base:dsrc"]);
        assert_eq!(ga.latency_ms_p50, gb.latency_ms_p50);
        assert_eq!(ga.latency_ms_p95, gb.latency_ms_p95);
        assert_eq!(ga.goodput_bps, gb.goodput_bps);
        assert!(ga.latency_ms_p50 <= ga.latency_ms_p95);
        assert!(ga.latency_ms_p95 <= ga.latency_ms_p99);
    }

    #[test]
    fn goodput_counts_delivered_bytes_only() {
        let records = vec![
            record(1, 0.0, Some(1.0), MsgStatus::Delivered),
            record(2, 0.0, None, MsgStatus::Erased),
        ];
        let summary = summarize(&records, 2.0, 0);
        let g = &summary.groups["base:dsrc"];
        assert_eq!(g.goodput_bps, 300.0 * 8.0 / 2.0);
    }

    #[test]
    fn write_outputs_empty_run() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = NodeTable::default();
        let summary = summarize(&[], 1.0, 0);
        let written = write_outputs(
            &nodes,
            &mut [],
            &summary,
            dir.path(),
            OutputFormats::default(),
        )
        .unwrap();
        assert_eq!(written.len(), 2);
        let csv = fs::read_to_string(dir.path().join("messages.csv")).unwrap();
        assert_eq!(csv, format!("{MESSAGES_CSV_HEADER}\n"));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(json["run"]["sent"], 0);
    }

    #[test]
    fn write_outputs_deterministic_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let mut nodes = NodeTable::default();
        nodes.intern("v1");
        let mut records = vec![
            record(5, 7.25, Some(9.125), MsgStatus::Delivered),
            record(2, 1.0, None, MsgStatus::Deferred),
            record(3, 1.0, None, MsgStatus::Erased),
        ];
        let summary = summarize(&records, 1.0, 0);
        write_outputs(
            &nodes,
            &mut records,
            &summary,
            dir.path(),
            OutputFormats::default(),
        )
        .unwrap();
        let first = fs::read(dir.path().join("messages.csv")).unwrap();
        write_outputs(
            &nodes,
            &mut records,
            &summary,
            dir.path(),
            OutputFormats::default(),
        )
        .unwrap();
        let second = fs::read(dir.path().join("messages.csv")).unwrap();
        assert_eq!(first, second);

        let text = String::from_utf8(first).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MESSAGES_CSV_HEADER);
        // Sorted by (t_tx_ms, msg_id); empty t_rx for non-delivered.
        assert!(lines[1].starts_with("2,1.000,,"));
        assert!(lines[2].starts_with("3,1.000,,"));
        assert!(lines[3].starts_with("5,7.250,9.125,"));
    }

    #[test]
    fn json_only_emits_no_csv() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = NodeTable::default();
        let summary = summarize(&[], 1.0, 0);
        write_outputs(
            &nodes,
            &mut [],
            &summary,
            dir.path(),
            OutputFormats {
                csv: false,
                json: true,
            },
        )
        .unwrap();
        assert!(!dir.path().join("messages.csv").exists());
        assert!(dir.path().join("summary.json").exists());
    }
}
