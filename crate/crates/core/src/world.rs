//! Mesoscopic traffic world: FIFO road segments with free-flow traversal,
//! signal-controlled crossings, shared single-vehicle sections and Poisson
//! demand.
//!
//! Vehicles move between segments only at step ends. A vehicle at the head
//! of a segment leaves once its free-flow traversal is complete, the
//! discharge headway since the previous departure has passed, the signal
//! (if any) enables its approach and the next segment has room; a shared
//! next segment must be empty.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::fmt::sig;
use crate::itu::{Direction, SignalState};

/// Default step length in seconds.
pub const DEFAULT_DT: f64 = 0.1;
/// Default minimum time between departures from one segment.
pub const DEFAULT_HEADWAY: f64 = 2.0;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("network has no segments")]
    Empty,
    #[error("duplicate {kind} id {id}")]
    Duplicate { kind: &'static str, id: String },
    #[error("segment {segment} references unknown intersection {intersection}")]
    DanglingEndpoint { segment: String, intersection: String },
    #[error("segment {0}: length, speed and headway must be positive and capacity at least 1")]
    BadSegment(String),
    #[error("segment {0} has a signal direction but does not end at a signalized intersection")]
    StrayDirection(String),
    #[error("segment {0} approaches a signalized intersection without a direction")]
    MissingDirection(String),
    #[error("network is not connected ({0} unreachable)")]
    Disconnected(String),
    #[error("unknown segment {0}")]
    UnknownSegment(String),
    #[error("unknown zone {0}")]
    UnknownZone(String),
    #[error("route {route}: {msg}")]
    BadRoute { route: String, msg: String },
    #[error("demand for {0}: rates must be non-negative and windows must tile the horizon")]
    BadWindows(String),
    #[error("entry {0} has no routes")]
    NoRoutes(String),
    #[error("initial vehicles exceed capacity of segment {0}")]
    InitialOverflow(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: String,
    pub length: f64,
    pub free_flow_speed: f64,
    pub capacity: usize,
    pub shared: bool,
    /// `None` for entry segments.
    pub from: Option<String>,
    /// `None` for exit segments.
    pub to: Option<String>,
    /// Approach direction at a signalized `to` intersection.
    pub direction: Option<Direction>,
    pub headway: f64,
}

impl RoadSegment {
    pub fn new(id: impl Into<String>, length: f64, speed: f64, capacity: usize) -> Self {
        RoadSegment {
            id: id.into(),
            length,
            free_flow_speed: speed,
            capacity,
            shared: false,
            from: None,
            to: None,
            direction: None,
            headway: DEFAULT_HEADWAY,
        }
    }

    pub fn between(mut self, from: Option<&str>, to: Option<&str>) -> Self {
        self.from = from.map(Into::into);
        self.to = to.map(Into::into);
        self
    }

    pub fn approach(mut self, direction: Direction) -> Self {
        self.direction = Some(direction);
        self
    }

    pub fn shared(mut self) -> Self {
        self.shared = true;
        self
    }

    pub fn free_flow_time(&self) -> f64 {
        self.length / self.free_flow_speed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub signalized: bool,
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
}

/// Accounting region: vehicles enter through `entries` and leave through
/// `exits`; `members` are the segments counted as inside.
#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: String,
    pub entries: Vec<usize>,
    pub exits: Vec<usize>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreetNetwork {
    segments: Vec<RoadSegment>,
    intersections: Vec<Intersection>,
    entries: Vec<usize>,
    exits: Vec<usize>,
    zones: Vec<Zone>,
}

/// Zone description by segment ids; empty `members` means all segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZoneSpec {
    pub id: String,
    pub entries: Vec<String>,
    pub exits: Vec<String>,
    pub members: Vec<String>,
}

impl StreetNetwork {
    /// `intersections` are `(id, signalized)` pairs.
    pub fn new(
        segments: Vec<RoadSegment>,
        intersections: Vec<(String, bool)>,
        zones: Vec<ZoneSpec>,
    ) -> Result<Self, WorldError> {
        if segments.is_empty() {
            return Err(WorldError::Empty);
        }
        let mut ids = BTreeSet::new();
        for s in &segments {
            if !ids.insert(s.id.clone()) {
                return Err(WorldError::Duplicate {
                    kind: "segment",
                    id: s.id.clone(),
                });
            }
            let ok = s.length > 0.0 && s.free_flow_speed > 0.0 && s.capacity >= 1 && s.headway > 0.0;
            if !ok || !s.length.is_finite() || !s.free_flow_speed.is_finite() {
                return Err(WorldError::BadSegment(s.id.clone()));
            }
        }
        let mut nodes: Vec<Intersection> = Vec::new();
        for (id, signalized) in intersections {
            if nodes.iter().any(|n| n.id == id) {
                return Err(WorldError::Duplicate {
                    kind: "intersection",
                    id,
                });
            }
            nodes.push(Intersection {
                id,
                signalized,
                incoming: Vec::new(),
                outgoing: Vec::new(),
            });
        }
        let mut entries = Vec::new();
        let mut exits = Vec::new();
        for (k, s) in segments.iter().enumerate() {
            let find = |nodes: &[Intersection], id: &String| {
                nodes.iter().position(|n| &n.id == id).ok_or_else(|| WorldError::DanglingEndpoint {
                    segment: s.id.clone(),
                    intersection: id.clone(),
                })
            };
            match &s.from {
                Some(f) => {
                    let n = find(&nodes, f)?;
                    nodes[n].outgoing.push(k);
                }
                None => entries.push(k),
            }
            match &s.to {
                Some(t) => {
                    let n = find(&nodes, t)?;
                    nodes[n].incoming.push(k);
                    match (nodes[n].signalized, s.direction) {
                        (true, None) => return Err(WorldError::MissingDirection(s.id.clone())),
                        (false, Some(_)) => return Err(WorldError::StrayDirection(s.id.clone())),
                        _ => {}
                    }
                }
                None => {
                    if s.direction.is_some() {
                        return Err(WorldError::StrayDirection(s.id.clone()));
                    }
                    exits.push(k);
                }
            }
        }
        let mut net = StreetNetwork {
            segments,
            intersections: nodes,
            entries,
            exits,
            zones: Vec::new(),
        };
        net.check_connected()?;
        for z in zones {
            let idx = |ids: &[String]| -> Result<Vec<usize>, WorldError> {
                ids.iter()
                    .map(|id| net.segment_index(id).ok_or_else(|| WorldError::UnknownSegment(id.clone())))
                    .collect()
            };
            let members = if z.members.is_empty() {
                (0..net.segments.len()).collect()
            } else {
                idx(&z.members)?
            };
            let zone = Zone {
                id: z.id.clone(),
                entries: idx(&z.entries)?,
                exits: idx(&z.exits)?,
                members,
            };
            if net.zones.iter().any(|x| x.id == zone.id) {
                return Err(WorldError::Duplicate { kind: "zone", id: z.id });
            }
            net.zones.push(zone);
        }
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), WorldError> {
        // undirected reachability over segments via shared intersections
        let n = self.segments.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            let seg = &self.segments[s];
            for end in [&seg.from, &seg.to].into_iter().flatten() {
                let node = self.intersections.iter().find(|x| &x.id == end).expect("validated");
                for &k in node.incoming.iter().chain(&node.outgoing) {
                    if !seen[k] {
                        seen[k] = true;
                        stack.push(k);
                    }
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(WorldError::Disconnected(self.segments[k].id.clone()));
        }
        if let Some(node) = self
            .intersections
            .iter()
            .find(|x| x.incoming.is_empty() && x.outgoing.is_empty())
        {
            return Err(WorldError::Disconnected(node.id.clone()));
        }
        Ok(())
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, id: &str) -> Option<&RoadSegment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn signalized(&self) -> impl Iterator<Item = &Intersection> {
        self.intersections.iter().filter(|n| n.signalized)
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn exits(&self) -> &[usize] {
        &self.exits
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone(&self, id: &str) -> Option<&Zone> {
        self.zones.iter().find(|z| z.id == id)
    }
}

/// Path through the network; cyclic routes repeat forever.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub id: String,
    pub segments: Vec<usize>,
    pub cyclic: bool,
    /// Route-choice action this route belongs to.
    pub action: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateWindow {
    pub start: f64,
    pub end: f64,
    /// Vehicles per second.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryDemand {
    pub segment: usize,
    pub windows: Vec<RateWindow>,
    /// `(route index, weight)`.
    pub routes: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub routes: Vec<Route>,
    pub entries: Vec<EntryDemand>,
    /// Vehicles placed at time zero: `(segment, route, count)`.
    pub initial: Vec<(usize, usize, usize)>,
    pub seed: u64,
}

/// Route description by segment ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RouteSpec {
    pub id: String,
    pub segments: Vec<String>,
    pub cyclic: bool,
    pub action: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntrySpec {
    pub segment: String,
    /// `(start, end, rate)`.
    pub windows: Vec<(f64, f64, f64)>,
    /// `(route id, weight)`.
    pub routes: Vec<(String, f64)>,
}

impl DemandProfile {
    /// Validates routes against the network; windows must tile
    /// `[0, horizon]` when a horizon is given.
    pub fn new(
        net: &StreetNetwork,
        routes: Vec<RouteSpec>,
        entries: Vec<EntrySpec>,
        initial: Vec<(String, String, usize)>,
        seed: u64,
        horizon: Option<f64>,
    ) -> Result<Self, WorldError> {
        let seg = |id: &str| net.segment_index(id).ok_or_else(|| WorldError::UnknownSegment(id.to_string()));
        let mut rs: Vec<Route> = Vec::new();
        for r in routes {
            if rs.iter().any(|x| x.id == r.id) {
                return Err(WorldError::Duplicate { kind: "route", id: r.id });
            }
            let bad = |msg: &str| WorldError::BadRoute {
                route: r.id.clone(),
                msg: msg.to_string(),
            };
            if r.segments.is_empty() {
                return Err(bad("empty"));
            }
            let path: Vec<usize> = r.segments.iter().map(|s| seg(s)).collect::<Result<_, _>>()?;
            let n = path.len();
            let links = if r.cyclic { n } else { n - 1 };
            for k in 0..links {
                let (a, b) = (&net.segments[path[k]], &net.segments[path[(k + 1) % n]]);
                if a.to.is_none() || a.to != b.from {
                    return Err(bad(&format!("{} does not lead to {}", a.id, b.id)));
                }
            }
            if !r.cyclic && net.segments[path[n - 1]].to.is_some() {
                return Err(bad("does not end on an exit segment"));
            }
            rs.push(Route {
                id: r.id,
                segments: path,
                cyclic: r.cyclic,
                action: r.action,
            });
        }
        let route = |id: &str| {
            rs.iter().position(|r| r.id == id).ok_or_else(|| WorldError::BadRoute {
                route: id.to_string(),
                msg: "unknown".into(),
            })
        };
        let mut es = Vec::new();
        for e in entries {
            let s = seg(&e.segment)?;
            let mut windows: Vec<RateWindow> = e
                .windows
                .iter()
                .map(|&(start, end, rate)| RateWindow { start, end, rate })
                .collect();
            windows.sort_by(|a, b| a.start.total_cmp(&b.start));
            let mut t = 0.0;
            for w in &windows {
                if !(w.rate >= 0.0) || !(w.end > w.start) || (w.start - t).abs() > TIME_EPS {
                    return Err(WorldError::BadWindows(e.segment.clone()));
                }
                t = w.end;
            }
            if let Some(h) = horizon {
                if t + TIME_EPS < h {
                    return Err(WorldError::BadWindows(e.segment.clone()));
                }
            }
            if e.routes.is_empty() {
                return Err(WorldError::NoRoutes(e.segment));
            }
            let mut routes = Vec::new();
            for (rid, w) in &e.routes {
                let k = route(rid)?;
                if rs[k].segments[0] != s || !(*w >= 0.0) {
                    return Err(WorldError::BadRoute {
                        route: rid.clone(),
                        msg: format!("does not start at entry {}", e.segment),
                    });
                }
                routes.push((k, *w));
            }
            es.push(EntryDemand {
                segment: s,
                windows,
                routes,
            });
        }
        let mut init = Vec::new();
        for (s, r, count) in initial {
            let (si, ri) = (seg(&s)?, route(&r)?);
            if !rs[ri].segments.contains(&si) {
                return Err(WorldError::BadRoute {
                    route: r,
                    msg: format!("does not pass {s}"),
                });
            }
            init.push((si, ri, count));
        }
        Ok(DemandProfile {
            routes: rs,
            entries: es,
            initial: init,
            seed,
        })
    }

    pub fn rate_at(&self, entry: usize, t: f64) -> f64 {
        self.entries[entry]
            .windows
            .iter()
            .find(|w| w.start <= t && t < w.end)
            .map(|w| w.rate)
            .unwrap_or(0.0)
    }

    /// Demand with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DemandProfile {
        let mut d = self.clone();
        for e in &mut d.entries {
            for w in &mut e.windows {
                w.rate *= factor;
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Vehicle {
    id: u64,
    route: usize,
    pos: usize,
    entered_at: f64,
    ready_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct EntryStream {
    rng: ChaCha8Rng,
    next: f64,
}

/// Completed traversal of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Traversal {
    pub left_at: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ZoneSnapshot {
    t: f64,
    entered: u64,
    exited: u64,
    inside: u64,
}

/// Vehicles counted over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub n: u64,
    /// Mean traversal time; `None` when `n == 0`.
    pub t_ex: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counters {
    pub arrived: u64,
    pub dropped: u64,
    pub exited: u64,
}

/// Mutable simulation state; cheap to clone for parallel what-if runs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    net: StreetNetwork,
    demand: DemandProfile,
    clock: f64,
    steps: u64,
    queues: Vec<VecDeque<Vehicle>>,
    last_departure: Vec<f64>,
    streams: Vec<EntryStream>,
    next_id: u64,
    traversals: Vec<Vec<Traversal>>,
    counters: Counters,
    zone_entered: Vec<u64>,
    zone_exited: Vec<u64>,
    snapshots: Vec<Vec<ZoneSnapshot>>,
    signals: BTreeMap<String, SignalState>,
    /// Route-choice probabilities per action, per entry segment index.
    route_choice: BTreeMap<usize, Vec<(String, f64)>>,
    log: Option<String>,
}

impl WorldState {
    pub fn new(net: StreetNetwork, demand: DemandProfile) -> Result<Self, WorldError> {
        let n = net.segments.len();
        let mut queues = vec![VecDeque::new(); n];
        let mut next_id = 0;
        for &(s, r, count) in &demand.initial {
            let seg = &net.segments[s];
            let pos = demand.routes[r].segments.iter().position(|&x| x == s).expect("validated");
            for _ in 0..count {
                queues[s].push_back(Vehicle {
                    id: next_id,
                    route: r,
                    pos,
                    entered_at: 0.0,
                    ready_at: seg.free_flow_time(),
                });
                next_id += 1;
            }
            let limit = if seg.shared { 1 } else { seg.capacity };
            if queues[s].len() > limit {
                return Err(WorldError::InitialOverflow(seg.id.clone()));
            }
        }
        let streams = demand
            .entries
            .iter()
            .enumerate()
            .map(|(k, e)| {
                // one independent stream per entry, derived from the seed
                let mut rng = ChaCha8Rng::seed_from_u64(demand.seed);
                rng.set_stream(k as u64 + 1);
                let mut s = EntryStream { rng, next: 0.0 };
                s.next = next_arrival(e, &mut s.rng, 0.0);
                s
            })
            .collect();
        let zones = net.zones.len();
        let signals = net
            .signalized()
            .map(|n| (n.id.clone(), SignalState::Red))
            .collect();
        let mut w = WorldState {
            traversals: vec![Vec::new(); n],
            last_departure: vec![f64::NEG_INFINITY; n],
            queues,
            streams,
            next_id,
            clock: 0.0,
            steps: 0,
            counters: Counters {
                arrived: 0,
                dropped: 0,
                exited: 0,
            },
            zone_entered: vec![0; zones],
            zone_exited: vec![0; zones],
            snapshots: vec![Vec::new(); zones],
            signals,
            route_choice: BTreeMap::new(),
            log: None,
            net,
            demand,
        };
        w.snapshot();
        Ok(w)
    }

    /// Starts recording the event log.
    pub fn with_event_log(mut self) -> Self {
        self.log = Some(String::new());
        self
    }

    pub fn network(&self) -> &StreetNetwork {
        &self.net
    }

    pub fn demand(&self) -> &DemandProfile {
        &self.demand
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn event_log(&self) -> Option<&str> {
        self.log.as_deref()
    }

    pub fn take_event_log(&mut self) -> String {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Appends a free-form record (already tab-separated) at the current
    /// clock.
    pub fn log_record(&mut self, fields: &str) {
        if let Some(log) = &mut self.log {
            let _ = writeln!(log, "{}\t{}", sig(self.clock), fields);
        }
    }

    /// Appends a complete record (timestamp included).
    pub fn append_log(&mut self, line: &str) {
        if let Some(log) = &mut self.log {
            log.push_str(line);
            log.push('\n');
        }
    }

    pub fn total_vehicles(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn queue_len(&self, segment: &str) -> Option<usize> {
        self.net.segment_index(segment).map(|k| self.queues[k].len())
    }

    /// Vehicles waiting at the head of segments approaching `intersection`
    /// from `direction` (those whose traversal is complete).
    pub fn waiting(&self, intersection: &str, direction: Direction) -> usize {
        let Some(node) = self.net.intersections.iter().find(|n| n.id == intersection) else {
            return 0;
        };
        node.incoming
            .iter()
            .filter(|&&s| self.net.segments[s].direction == Some(direction))
            .map(|&s| {
                self.queues[s]
                    .iter()
                    .filter(|v| v.ready_at <= self.clock + TIME_EPS)
                    .count()
            })
            .sum()
    }

    /// Overrides route choice at an entry: probability per route action.
    pub fn set_route_choice(&mut self, entry_segment: &str, probs: Vec<(String, f64)>) -> Result<(), WorldError> {
        let k = self
            .net
            .segment_index(entry_segment)
            .ok_or_else(|| WorldError::UnknownSegment(entry_segment.to_string()))?;
        self.route_choice.insert(k, probs);
        Ok(())
    }

    pub fn traversals(&self, segment: &str) -> Option<&[Traversal]> {
        self.net.segment_index(segment).map(|k| self.traversals[k].as_slice())
    }

    fn snapshot(&mut self) {
        for (z, zone) in self.net.zones.iter().enumerate() {
            let inside = zone.members.iter().map(|&s| self.queues[s].len() as u64).sum();
            self.snapshots[z].push(ZoneSnapshot {
                t: self.clock,
                entered: self.zone_entered[z],
                exited: self.zone_exited[z],
                inside,
            });
        }
    }

    fn event(&mut self, t: f64, kind: &str, rest: std::fmt::Arguments<'_>) {
        if let Some(log) = &mut self.log {
            let _ = writeln!(log, "{}\t{}\t{}", sig(t), kind, rest);
        }
    }

    fn count_zone_entry(&mut self, seg: usize) {
        for (z, zone) in self.net.zones.iter().enumerate() {
            if zone.entries.contains(&seg) {
                self.zone_entered[z] += 1;
            }
        }
    }

    fn count_zone_exit(&mut self, seg: usize) {
        for (z, zone) in self.net.zones.iter().enumerate() {
            if zone.exits.contains(&seg) {
                self.zone_exited[z] += 1;
            }
        }
    }

    fn admits(&self, seg: usize) -> bool {
        let s = &self.net.segments[seg];
        if s.shared {
            self.queues[seg].is_empty()
        } else {
            self.queues[seg].len() < s.capacity
        }
    }

    fn choose_route(&mut self, entry: usize) -> usize {
        let e = &self.demand.entries[entry];
        let u: f64 = rand::Rng::random(&mut self.streams[entry].rng);
        let mut weights: Vec<(usize, f64)> = e.routes.clone();
        if let Some(probs) = self.route_choice.get(&e.segment) {
            // weight of each route = action probability shared among the
            // routes of that action, proportionally to their own weights
            let group_total = |action: &Option<String>| -> f64 {
                e.routes
                    .iter()
                    .filter(|(r, _)| &self.demand.routes[*r].action == action)
                    .map(|(_, w)| w)
                    .sum()
            };
            let adjusted: Vec<(usize, f64)> = e
                .routes
                .iter()
                .map(|&(r, w)| {
                    let action = &self.demand.routes[r].action;
                    let p = action
                        .as_ref()
                        .and_then(|a| probs.iter().find(|(x, _)| x == a))
                        .map(|(_, p)| *p);
                    match p {
                        Some(p) if group_total(action) > 0.0 => (r, p * w / group_total(action)),
                        _ => (r, 0.0),
                    }
                })
                .collect();
            if adjusted.iter().map(|(_, w)| w).sum::<f64>() > 0.0 {
                weights = adjusted;
            }
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut x = u * total;
        for &(r, w) in &weights {
            if x < w {
                return r;
            }
            x -= w;
        }
        weights.iter().rev().find(|(_, w)| *w > 0.0).map(|(r, _)| *r).unwrap_or(weights[0].0)
    }

    /// Advances the world by `dt` seconds under the given signal states.
    /// Intersections missing from `controls` stop all approaches.
    pub fn step(&mut self, controls: &BTreeMap<String, SignalState>, dt: f64) {
        assert!(dt > 0.0, "step length must be positive");
        let t1 = self.clock + dt;

        for node in self.net.signalized() {
            let state = controls.get(&node.id).copied();
            let old = self.signals.get(&node.id).copied();
            if state != old {
                if let (Some(s), Some(log)) = (state, &mut self.log) {
                    let _ = writeln!(log, "{}\tsignal\t{}\t{}", sig(self.clock), node.id, s);
                }
            }
        }
        for node in self.net.signalized() {
            match controls.get(&node.id) {
                Some(&s) => {
                    self.signals.insert(node.id.clone(), s);
                }
                None => {
                    self.signals.remove(&node.id);
                }
            }
        }

        // arrivals within [clock, t1)
        for e in 0..self.streams.len() {
            while self.streams[e].next < t1 - TIME_EPS {
                let at = self.streams[e].next;
                let seg = self.demand.entries[e].segment;
                self.counters.arrived += 1;
                if self.admits(seg) {
                    let route = self.choose_route(e);
                    let id = self.next_id;
                    self.next_id += 1;
                    let ready = at + self.net.segments[seg].free_flow_time();
                    self.queues[seg].push_back(Vehicle {
                        id,
                        route,
                        pos: 0,
                        entered_at: at,
                        ready_at: ready,
                    });
                    self.count_zone_entry(seg);
                    let sid = self.net.segments[seg].id.clone();
                    self.event(at, "arrive", format_args!("{sid}\t{id}"));
                } else {
                    // consume the route draw so streams stay aligned
                    let _ = self.choose_route(e);
                    self.counters.dropped += 1;
                    let sid = self.net.segments[seg].id.clone();
                    self.event(at, "drop", format_args!("{sid}"));
                }
                let entry = self.demand.entries[e].clone();
                self.streams[e].next = next_arrival(&entry, &mut self.streams[e].rng, at);
            }
        }

        // departures at t1, one per segment, in segment order
        for s in 0..self.net.segments.len() {
            let Some(v) = self.queues[s].front() else { continue };
            let seg = &self.net.segments[s];
            if v.ready_at > t1 + TIME_EPS || t1 - self.last_departure[s] < seg.headway - TIME_EPS {
                continue;
            }
            if let Some(to) = &seg.to {
                let node = self.net.intersections.iter().find(|n| &n.id == to).expect("validated");
                if node.signalized {
                    let dir = seg.direction.expect("validated");
                    match self.signals.get(to) {
                        Some(state) if state.enables(dir) => {}
                        _ => continue,
                    }
                }
            }
            let route = &self.demand.routes[v.route];
            let next_pos = if v.pos + 1 < route.segments.len() {
                Some(v.pos + 1)
            } else if route.cyclic {
                Some(0)
            } else {
                None
            };
            match next_pos {
                Some(p) => {
                    let next = route.segments[p];
                    if next == s || !self.admits(next) {
                        continue;
                    }
                    let mut v = self.queues[s].pop_front().expect("front");
                    self.finish_traversal(s, &v, t1);
                    v.pos = p;
                    v.entered_at = t1;
                    v.ready_at = t1 + self.net.segments[next].free_flow_time();
                    let (id, nid) = (v.id, self.net.segments[next].id.clone());
                    self.queues[next].push_back(v);
                    self.count_zone_entry(next);
                    self.event(t1, "enter", format_args!("{nid}\t{id}"));
                }
                None => {
                    let v = self.queues[s].pop_front().expect("front");
                    self.finish_traversal(s, &v, t1);
                    self.counters.exited += 1;
                    let sid = self.net.segments[s].id.clone();
                    self.event(t1, "exit", format_args!("{sid}\t{}", v.id));
                }
            }
            self.last_departure[s] = t1;
        }

        self.clock = t1;
        self.steps += 1;
        self.snapshot();
    }

    fn finish_traversal(&mut self, s: usize, v: &Vehicle, t: f64) {
        let duration = t - v.entered_at;
        self.traversals[s].push(Traversal { left_at: t, duration });
        self.count_zone_exit(s);
        let sid = self.net.segments[s].id.clone();
        self.event(t, "leave", format_args!("{sid}\t{}\t{}", v.id, sig(duration)));
    }

    /// Traversals of `site` completed in `[t0, t1)`.
    pub fn observe_cycle(&self, site: &str, t0: f64, t1: f64) -> Result<Observation, WorldError> {
        let k = self
            .net
            .segment_index(site)
            .ok_or_else(|| WorldError::UnknownSegment(site.to_string()))?;
        let done: Vec<f64> = self.traversals[k]
            .iter()
            .filter(|t| t.left_at >= t0 - TIME_EPS && t.left_at < t1 - TIME_EPS)
            .map(|t| t.duration)
            .collect();
        let n = done.len() as u64;
        Ok(Observation {
            n,
            t_ex: (n > 0).then(|| done.iter().sum::<f64>() / n as f64),
        })
    }

    /// `entered - exited - (inside(t1) - inside(t0))` over `[t0, t1]`,
    /// from the zone counters and queue contents at step boundaries.
    pub fn check_zone_balance(&self, zone: &str, t0: f64, t1: f64) -> Result<i64, WorldError> {
        let z = self
            .net
            .zones
            .iter()
            .position(|x| x.id == zone)
            .ok_or_else(|| WorldError::UnknownZone(zone.to_string()))?;
        let at = |t: f64| -> ZoneSnapshot {
            let snaps = &self.snapshots[z];
            let k = snaps.partition_point(|s| s.t <= t + TIME_EPS);
            snaps[k.saturating_sub(1)]
        };
        let (a, b) = (at(t0), at(t1));
        Ok(balance_residual(
            (b.entered - a.entered) as i64,
            (b.exited - a.exited) as i64,
            b.inside as i64 - a.inside as i64,
        ))
    }
}

/// The flow identity `entered - exited - delta_inside`.
pub fn balance_residual(entered: i64, exited: i64, delta_inside: i64) -> i64 {
    entered - exited - delta_inside
}

/// Next arrival strictly after `t` for a piecewise-constant Poisson rate.
fn next_arrival(e: &EntryDemand, rng: &mut ChaCha8Rng, t: f64) -> f64 {
    let mut now = t;
    for w in &e.windows {
        if w.end <= now {
            continue;
        }
        now = now.max(w.start);
        if w.rate > 0.0 {
            let gap = Exp::new(w.rate).expect("positive rate").sample(rng);
            if now + gap < w.end {
                return now + gap;
            }
        }
        now = w.end;
    }
    f64::INFINITY
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> StreetNetwork {
        StreetNetwork::new(
            vec![
                RoadSegment::new("a", 100.0, 10.0, 10).between(None, Some("X")),
                RoadSegment::new("b", 50.0, 10.0, 10).between(Some("X"), None),
            ],
            vec![("X".into(), false)],
            vec![ZoneSpec {
                id: "Z".into(),
                entries: vec!["a".into()],
                exits: vec!["b".into()],
                members: vec![],
            }],
        )
        .unwrap()
    }

    fn route(net: &StreetNetwork) -> Vec<RouteSpec> {
        let _ = net;
        vec![RouteSpec {
            id: "r".into(),
            segments: vec!["a".into(), "b".into()],
            ..Default::default()
        }]
    }

    #[test]
    fn topology_errors() {
        assert_eq!(StreetNetwork::new(vec![], vec![], vec![]), Err(WorldError::Empty));
        let r = StreetNetwork::new(
            vec![RoadSegment::new("a", 1.0, 1.0, 1).between(None, Some("Q"))],
            vec![],
            vec![],
        );
        assert!(matches!(r, Err(WorldError::DanglingEndpoint { .. })));
        let r = StreetNetwork::new(
            vec![
                RoadSegment::new("a", 1.0, 1.0, 1).between(None, Some("X")),
                RoadSegment::new("a", 1.0, 1.0, 1).between(Some("X"), None),
            ],
            vec![("X".into(), false)],
            vec![],
        );
        assert!(matches!(r, Err(WorldError::Duplicate { .. })));
    }

    #[test]
    fn single_vehicle_free_flow() {
        let net = line();
        let d = DemandProfile::new(&net, route(&net), vec![], vec![("a".into(), "r".into(), 1)], 1, None).unwrap();
        let mut w = WorldState::new(net, d).unwrap();
        let c = BTreeMap::new();
        for _ in 0..99 {
            w.step(&c, 0.1);
        }
        assert_eq!(w.queue_len("a"), Some(1));
        w.step(&c, 0.1);
        assert_eq!(w.queue_len("a"), Some(0));
        let o = w.observe_cycle("a", 0.0, 20.0).unwrap();
        assert_eq!(o.n, 1);
        assert!((o.t_ex.unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(w.observe_cycle("b", 0.0, 5.0).unwrap(), Observation { n: 0, t_ex: None });
    }

    #[test]
    fn poisson_demand_is_deterministic_and_balanced() {
        let run = || {
            let net = line();
            let d = DemandProfile::new(
                &net,
                route(&net),
                vec![EntrySpec {
                    segment: "a".into(),
                    windows: vec![(0.0, 100.0, 0.3), (100.0, 200.0, 0.05)],
                    routes: vec![("r".into(), 1.0)],
                }],
                vec![],
                7,
                Some(200.0),
            )
            .unwrap();
            let mut w = WorldState::new(net, d).unwrap().with_event_log();
            for _ in 0..2000 {
                w.step(&BTreeMap::new(), 0.1);
            }
            w
        };
        let (a, b) = (run(), run());
        assert_eq!(a.event_log(), b.event_log());
        assert!(a.counters().arrived > 0);
        for k in 0..20 {
            let t0 = k as f64 * 10.0;
            assert_eq!(a.check_zone_balance("Z", t0, t0 + 10.0).unwrap(), 0);
        }
        assert!(a.check_zone_balance("nope", 0.0, 1.0).is_err());
    }

    #[test]
    fn windows_must_tile() {
        let net = line();
        let r = DemandProfile::new(
            &net,
            route(&net),
            vec![EntrySpec {
                segment: "a".into(),
                windows: vec![(0.0, 10.0, 1.0), (20.0, 30.0, 1.0)],
                routes: vec![("r".into(), 1.0)],
            }],
            vec![],
            1,
            None,
        );
        assert!(matches!(r, Err(WorldError::BadWindows(_))));
    }

    #[test]
    fn balance_identity() {
        assert_eq!(balance_residual(2 + 3 + 5, 10, 0), 0);
        assert_eq!(balance_residual(2 + 3 + 5, 9, 0), 1);
    }
}
