//! Discrete-event core: simulated clock, ordered event queue, seeded
//! randomness.
//!
//! Events are processed in `(time, seq)` order, where `seq` is assigned
//! monotonically at scheduling time. Two events at the same simulated time
//! therefore dequeue in the order they were scheduled, which makes every run
//! with the same scenario and seed replay the exact same event sequence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// RNG handed to simulation consumers. ChaCha is used so that draw sequences
/// are reproducible across platforms.
pub type SimRng = ChaCha8Rng;

/// Derives an independent random substream from the run seed and a consumer
/// label. Identical `(seed, label)` pairs yield identical draw sequences, and
/// streams for distinct labels never perturb each other.
pub fn substream(seed: u64, label: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// A scheduled simulation event.
#[derive(Debug, Clone)]
pub struct Event<K> {
    /// Simulated seconds, non-negative and finite.
    pub time: f64,
    /// Scheduling order, unique per queue.
    pub seq: u64,
    pub kind: K,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("event time {time} s precedes current clock {clock} s")]
    CausalityViolation { time: f64, clock: f64 },
    #[error("event time must be finite, got {0}")]
    NonFiniteTime(f64),
}

/// Failure of an event handler, with the event context attached.
#[derive(Debug, Error)]
#[error("event {seq} at t={time} s: {source}")]
pub struct RunError<E: std::error::Error> {
    pub time: f64,
    pub seq: u64,
    #[source]
    pub source: E,
}

struct HeapEntry<K> {
    time: f64,
    seq: u64,
    kind: K,
}

// Min-heap on (time, seq). Times are validated finite at scheduling, so
// total_cmp never sees a NaN.
impl<K> Ord for HeapEntry<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<K> PartialOrd for HeapEntry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> PartialEq for HeapEntry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<K> Eq for HeapEntry<K> {}

/// Time-ordered event queue with an attached simulated clock.
pub struct EventQueue<K> {
    heap: BinaryHeap<HeapEntry<K>>,
    next_seq: u64,
    clock: f64,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            clock: 0.0,
        }
    }

    /// Current simulated time in seconds.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues an event. Scheduling into the past is a causality bug and is
    /// rejected rather than silently reordered.
    pub fn schedule(&mut self, time: f64, kind: K) -> Result<u64, ScheduleError> {
        if !time.is_finite() {
            return Err(ScheduleError::NonFiniteTime(time));
        }
        if time < self.clock {
            return Err(ScheduleError::CausalityViolation {
                time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry { time, seq, kind });
        Ok(seq)
    }

    /// Time of the earliest pending event, if any.
    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    /// Removes and returns the globally minimum `(time, seq)` event,
    /// advancing the clock to its time.
    pub fn next_event(&mut self) -> Option<Event<K>> {
        let entry = self.heap.pop()?;
        self.clock = entry.time;
        Some(Event {
            time: entry.time,
            seq: entry.seq,
            kind: entry.kind,
        })
    }
}

/// Drains the queue in `(time, seq)` order up to and including `t_end`,
/// dispatching each event to `handler`. Handlers may schedule further events.
/// Returns the number of events processed; the clock ends at `t_end` (or at
/// the last processed event if the queue ran dry earlier than `t_end`).
pub fn run_until<K, E, F>(
    queue: &mut EventQueue<K>,
    t_end: f64,
    mut handler: F,
) -> Result<u64, RunError<E>>
where
    E: std::error::Error,
    F: FnMut(Event<K>, &mut EventQueue<K>) -> Result<(), E>,
{
    let mut processed = 0u64;
    while let Some(t) = queue.peek_time() {
        if t > t_end {
            break;
        }
        let event = queue.next_event().expect("peeked event vanished");
        let (time, seq) = (event.time, event.seq);
        handler(event, queue).map_err(|source| RunError { time, seq, source })?;
        processed += 1;
    }
    if queue.clock < t_end {
        queue.clock = t_end;
    }
    Ok(processed)
}
