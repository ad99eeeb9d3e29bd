//! City topology (RSUs, fog areas) and vehicle kinematics.
//!
//! Geometry is a planar frame in meters; traces are expected pre-projected.
//! Fog areas are the Voronoi cells of their orchestrator anchor points, so
//! every position maps to exactly one area.

use std::f64::consts::TAU;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rat::RatName;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// True iff the Euclidean distance between the endpoints is within `range_m`.
pub fn in_range(tx: Position, rx: Position, range_m: f64) -> bool {
    tx.distance(rx) <= range_m
}

#[derive(Clone, Debug)]
pub struct FogArea {
    pub id: String,
    /// Anchor of the fog orchestrator; the area is its Voronoi cell.
    pub center: Position,
    pub rsu_ids: Vec<String>,
    pub cloud_link_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Rsu {
    pub id: String,
    pub rat: RatName,
    pub position: Position,
    /// Index into the area list; every RSU belongs to exactly one fog area.
    pub fog_area: usize,
}

/// Index of the fog area whose center is nearest to `position` (Euclidean),
/// ties broken by the smallest area id. The result is invariant under
/// permutation of the area list.
pub fn assign_fog_area(position: Position, areas: &[FogArea]) -> usize {
    assert!(!areas.is_empty(), "at least one fog area must be defined");
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, area) in areas.iter().enumerate() {
        let d = position.distance(area.center);
        if d < best_d || (d == best_d && area.id < areas[best].id) {
            best = i;
            best_d = d;
        }
    }
    best
}

/// How a vehicle moves between mobility steps.
#[derive(Clone, Debug)]
pub enum Motion {
    /// Constant-speed travel along a waypoint polyline; heading updates at
    /// waypoints and the vehicle parks at the final one.
    Route(RouteMotion),
    /// States replayed from an external trace, position linearly
    /// interpolated between rows.
    Trace(VehicleTrace),
}

#[derive(Clone, Debug)]
pub struct RouteMotion {
    waypoints: Vec<Position>,
    /// Cumulative polyline length up to each waypoint.
    cum_len: Vec<f64>,
    dist_along: f64,
}

impl RouteMotion {
    pub fn new(waypoints: Vec<Position>) -> Self {
        assert!(!waypoints.is_empty(), "route needs at least one waypoint");
        let mut cum_len = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        cum_len.push(0.0);
        for w in waypoints.windows(2) {
            acc += w[0].distance(w[1]);
            cum_len.push(acc);
        }
        RouteMotion {
            waypoints,
            cum_len,
            dist_along: 0.0,
        }
    }

    fn total_len(&self) -> f64 {
        *self.cum_len.last().unwrap()
    }

    fn exhausted(&self) -> bool {
        self.dist_along >= self.total_len()
    }

    /// Position and segment heading at the current arc distance.
    fn state(&self) -> (Position, f64) {
        let d = self.dist_along.min(self.total_len());
        if self.waypoints.len() == 1 {
            return (self.waypoints[0], 0.0);
        }
        // Segment containing d; the final waypoint keeps the last heading.
        let seg = match self.cum_len.iter().position(|&c| c > d) {
            Some(i) => i - 1,
            None => self.waypoints.len() - 2,
        };
        let a = self.waypoints[seg];
        let b = self.waypoints[seg + 1];
        let seg_len = self.cum_len[seg + 1] - self.cum_len[seg];
        let frac = if seg_len > 0.0 {
            (d - self.cum_len[seg]) / seg_len
        } else {
            0.0
        };
        let pos = Position::new(a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac);
        let heading = (b.y - a.y).atan2(b.x - a.x).rem_euclid(TAU);
        (pos, heading)
    }
}

#[derive(Clone, Debug)]
pub struct Vehicle {
    pub id: String,
    pub position: Position,
    /// m/s, ≥ 0.
    pub speed: f64,
    /// Radians in [0, 2π).
    pub heading: f64,
    /// Index of the fog area the vehicle is registered with.
    pub fog_area: usize,
    pub motion: Motion,
}

impl Vehicle {
    pub fn from_route(id: String, waypoints: Vec<Position>, speed: f64) -> Self {
        assert!(speed >= 0.0, "speed must be non-negative");
        let route = RouteMotion::new(waypoints);
        let (position, heading) = route.state();
        let effective = if route.waypoints.len() < 2 {
            0.0
        } else {
            speed
        };
        Vehicle {
            id,
            position,
            speed: effective,
            heading,
            fog_area: 0,
            motion: Motion::Route(route),
        }
    }

    pub fn from_trace(id: String, trace: VehicleTrace) -> Self {
        let (position, speed, heading) = trace.state_at(0.0);
        Vehicle {
            id,
            position,
            speed,
            heading,
            fog_area: 0,
            motion: Motion::Trace(trace),
        }
    }

    /// Advances the vehicle by `dt` seconds of travel. Route vehicles move
    /// `dt * speed` along the polyline; trace vehicles jump to their
    /// interpolated state. `target_t` is the absolute simulated time the
    /// vehicle ends at (traces are indexed by absolute time).
    pub fn advance(&mut self, dt: f64, target_t: f64) {
        debug_assert!(dt >= 0.0);
        match &mut self.motion {
            Motion::Route(route) => {
                if self.speed > 0.0 && !route.exhausted() {
                    route.dist_along += self.speed * dt;
                    let (pos, heading) = route.state();
                    self.position = pos;
                    self.heading = heading;
                    if route.exhausted() {
                        self.speed = 0.0; // parked at final waypoint
                    }
                }
            }
            Motion::Trace(trace) => {
                let (pos, speed, heading) = trace.state_at(target_t);
                self.position = pos;
                self.speed = speed;
                self.heading = heading;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Trace ingestion
// ---------------------------------------------------------------------------

pub const TRACE_HEADER: &str = "t_s,vehicle,x_m,y_m,speed_mps,heading_rad";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t_s: f64,
    pub vehicle: String,
    pub x_m: f64,
    pub y_m: f64,
    pub speed_mps: f64,
    pub heading_rad: f64,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace header must be `{TRACE_HEADER}`, got `{0}`")]
    BadHeader(String),
    #[error("trace line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

fn trace_field(line: usize, name: &str, raw: &str) -> Result<f64, TraceError> {
    let v: f64 = raw.trim().parse().map_err(|_| TraceError::Malformed {
        line,
        reason: format!("{name} is not a number: `{raw}`"),
    })?;
    if !v.is_finite() {
        return Err(TraceError::Malformed {
            line,
            reason: format!("{name} must be finite"),
        });
    }
    Ok(v)
}

/// Reads a mobility trace, returning rows sorted by `(time, vehicle)`.
/// Timestamps must be strictly increasing per vehicle and speeds
/// non-negative; violations report the offending line number.
pub fn load_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    if header.trim_end() != TRACE_HEADER {
        return Err(TraceError::BadHeader(header));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2; // header is line 1
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 6 {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let t_s = trace_field(line_no, "t_s", fields[0])?;
        let vehicle = fields[1].trim().to_string();
        if vehicle.is_empty() {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: "vehicle id is empty".into(),
            });
        }
        let x_m = trace_field(line_no, "x_m", fields[2])?;
        let y_m = trace_field(line_no, "y_m", fields[3])?;
        let speed_mps = trace_field(line_no, "speed_mps", fields[4])?;
        if speed_mps < 0.0 {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: format!("speed_mps must be >= 0, got {speed_mps}"),
            });
        }
        let heading_rad = trace_field(line_no, "heading_rad", fields[5])?.rem_euclid(TAU);
        rows.push(TraceRow {
            t_s,
            vehicle,
            x_m,
            y_m,
            speed_mps,
            heading_rad,
        });
    }
    // Per-vehicle monotonicity, checked in file order with line context.
    let mut last_t: std::collections::HashMap<&str, f64> = std::collections::HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        if let Some(&prev) = last_t.get(row.vehicle.as_str()) {
            if row.t_s <= prev {
                return Err(TraceError::Malformed {
                    line: i + 2,
                    reason: format!(
                        "non-monotonic timestamp for vehicle `{}`: {} after {}",
                        row.vehicle, row.t_s, prev
                    ),
                });
            }
        }
        last_t.insert(row.vehicle.as_str(), row.t_s);
    }
    rows.sort_by(|a, b| {
        a.t_s
            .total_cmp(&b.t_s)
            .then_with(|| a.vehicle.cmp(&b.vehicle))
    });
    Ok(rows)
}

/// Time-sorted trace rows for a single vehicle.
#[derive(Clone, Debug)]
pub struct VehicleTrace {
    rows: Vec<TraceRow>,
}

impl VehicleTrace {
    pub fn new(mut rows: Vec<TraceRow>) -> Self {
        assert!(!rows.is_empty(), "vehicle trace needs at least one row");
        rows.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
        VehicleTrace { rows }
    }

    /// State at time `t`: position linearly interpolated between the
    /// bracketing rows, speed and heading from the earlier row. Before the
    /// first row and after the last the vehicle holds that row's position.
    pub fn state_at(&self, t: f64) -> (Position, f64, f64) {
        let rows = &self.rows;
        if t <= rows[0].t_s {
            let r = &rows[0];
            return (Position::new(r.x_m, r.y_m), r.speed_mps, r.heading_rad);
        }
        if t >= rows[rows.len() - 1].t_s {
            let r = &rows[rows.len() - 1];
            // Past the trace end the vehicle is parked.
            return (Position::new(r.x_m, r.y_m), 0.0, r.heading_rad);
        }
        let hi = rows.partition_point(|r| r.t_s <= t);
        let (a, b) = (&rows[hi - 1], &rows[hi]);
        let frac = (t - a.t_s) / (b.t_s - a.t_s);
        let pos = Position::new(
            a.x_m + (b.x_m - a.x_m) * frac,
            a.y_m + (b.y_m - a.y_m) * frac,
        );
        (pos, a.speed_mps, a.heading_rad)
    }
}
