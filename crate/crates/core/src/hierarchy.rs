//! Joint top-down / bottom-up constraint transformation across the control
//! levels.
//!
//! Upper levels push constraints exactly one level down ([`ConstraintMsg`]);
//! lower levels report how far they miss them exactly one level up
//! ([`ViolationMsg`]). [`Engine::reconcile`] alternates the two directions
//! until a pass is violation-free or the iteration budget runs out, in which
//! case the affected signal controllers fall back to their default
//! behaviour.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::atcu::{build_lp, extract_policy, solve, state_name, Ctmdp, LinearProgram, LpStatus, Policy};
use crate::fmt::{sig, Csv};
use crate::itu::{ItuController, SignalFsm, SignalState, TimingConstraint};
use crate::registry::{DmModule, GoalDirection, InteractionKind, LinkRole, Registry, RegistryError};
use crate::tcu::{distribute_goals_with_override, FunctionGraph, GlobalGoal, GoalAllocation};
use crate::ztcu::{
    derive_timing_constraints, enumerate_scenarios, resolve_with, schedule, Ctg, Fallback, FallbackPlan, Objective,
    Scenario, Schedule,
};

/// Default number of passes per reconcile call.
pub const DEFAULT_BUDGET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Implementation,
    Itu,
    Ztcu,
    Atcu,
    Tcu,
}

impl Level {
    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(k: u32) -> Option<Level> {
        [Level::Implementation, Level::Itu, Level::Ztcu, Level::Atcu, Level::Tcu]
            .get(k as usize)
            .copied()
    }

    pub fn below(self) -> Option<Level> {
        self.index().checked_sub(1).and_then(Level::from_index)
    }

    pub fn above(self) -> Option<Level> {
        Level::from_index(self.index() + 1)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Implementation => "IMPL",
            Level::Itu => "ITU",
            Level::Ztcu => "ZTCU",
            Level::Atcu => "ATCU",
            Level::Tcu => "TCU",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("constraint messages go exactly one level down, not {0} -> {1}")]
    ConstraintDirection(Level, Level),
    #[error("violation messages go exactly one level up, not {0} -> {1}")]
    ViolationDirection(Level, Level),
    #[error("shortfall must be positive, got {0}")]
    NonPositiveShortfall(f64),
    #[error("no {kind} link {src} -> {dst}")]
    Route {
        src: String,
        dst: String,
        kind: InteractionKind,
    },
    #[error("unknown module {0}")]
    UnknownModule(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Area goals set by the top level.
    Area { throughput: u64, deadline: f64 },
    /// Bound on a zone's schedule makespan and its share of the area target.
    TableBound { max_area_delay: f64, throughput: f64 },
    /// Signal timing constraints for one controller.
    Timing(Vec<TimingConstraint>),
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Area { throughput, deadline } => write!(f, "throughput={throughput};deadline={}", sig(*deadline)),
            Payload::TableBound {
                max_area_delay,
                throughput,
            } => write!(f, "max_area_delay={};throughput={}", sig(*max_area_delay), sig(*throughput)),
            Payload::Timing(cs) => {
                let parts: Vec<String> = cs.iter().map(|c| format!("{}@{}", c.required, sig(c.deadline()))).collect();
                write!(f, "timing={}", parts.join(";"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMsg {
    pub source: Level,
    pub target: Level,
    pub from: String,
    pub to: String,
    pub payload: Payload,
    pub issued_at: f64,
}

impl ConstraintMsg {
    pub fn new(
        source: Level,
        target: Level,
        from: impl Into<String>,
        to: impl Into<String>,
        payload: Payload,
        issued_at: f64,
    ) -> Result<Self, HierarchyError> {
        if source.below() != Some(target) {
            return Err(HierarchyError::ConstraintDirection(source, target));
        }
        Ok(ConstraintMsg {
            source,
            target,
            from: from.into(),
            to: to.into(),
            payload,
            issued_at,
        })
    }

    pub fn log_line(&self) -> String {
        format!(
            "{}\tconstraint\t{}\t{}\t{}\t{}\t{}",
            sig(self.issued_at),
            self.source,
            self.from,
            self.target,
            self.to,
            self.payload
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationMsg {
    pub source: Level,
    pub target: Level,
    pub reporter: String,
    pub quantity: String,
    pub shortfall: f64,
    pub occurred_at: f64,
}

impl ViolationMsg {
    pub fn new(
        source: Level,
        target: Level,
        reporter: impl Into<String>,
        quantity: impl Into<String>,
        shortfall: f64,
        occurred_at: f64,
    ) -> Result<Self, HierarchyError> {
        if source.above() != Some(target) {
            return Err(HierarchyError::ViolationDirection(source, target));
        }
        if !(shortfall > 0.0) {
            return Err(HierarchyError::NonPositiveShortfall(shortfall));
        }
        Ok(ViolationMsg {
            source,
            target,
            reporter: reporter.into(),
            quantity: quantity.into(),
            shortfall,
            occurred_at,
        })
    }

    pub fn log_line(&self, parent: &str) -> String {
        format!(
            "{}\tviolation\t{}\t{}\t{}\t{}\t{}={}",
            sig(self.occurred_at),
            self.source,
            self.reporter,
            self.target,
            parent,
            self.quantity,
            sig(self.shortfall)
        )
    }
}

/// Freshly computed output of an upper level.
#[derive(Debug, Clone, Copy)]
pub enum UpperOutput<'a> {
    /// Top-level allocation; entry nodes are area controller ids.
    Allocation { tcu: &'a str, allocation: &'a GoalAllocation },
    /// Per-zone `(zone, max area delay, throughput share)`.
    Bounds { atcu: &'a str, bounds: &'a [(String, f64, f64)] },
    /// The schedule column in force at a zone and its signal controllers.
    Column {
        ztcu: &'a str,
        schedule: &'a Schedule,
        itus: &'a [String],
    },
}

/// One constraint message per child module.
pub fn push_down(out: UpperOutput<'_>, at: f64) -> Vec<ConstraintMsg> {
    let msg = |s, t, from: &str, to: &str, p| ConstraintMsg::new(s, t, from, to, p, at).expect("one level down");
    match out {
        UpperOutput::Allocation { tcu, allocation } => allocation
            .entries
            .iter()
            .map(|e| {
                msg(
                    Level::Tcu,
                    Level::Atcu,
                    tcu,
                    &e.node,
                    Payload::Area {
                        throughput: e.throughput,
                        deadline: e.deadline,
                    },
                )
            })
            .collect(),
        UpperOutput::Bounds { atcu, bounds } => bounds
            .iter()
            .map(|(zone, bound, share)| {
                msg(
                    Level::Atcu,
                    Level::Ztcu,
                    atcu,
                    zone,
                    Payload::TableBound {
                        max_area_delay: *bound,
                        throughput: *share,
                    },
                )
            })
            .collect(),
        UpperOutput::Column { ztcu, schedule, itus } => itus
            .iter()
            .map(|itu| {
                msg(
                    Level::Ztcu,
                    Level::Itu,
                    ztcu,
                    itu,
                    Payload::Timing(derive_timing_constraints(schedule, itu)),
                )
            })
            .collect(),
    }
}

/// Aggregated shortfalls reported to one parent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerformanceNeeds {
    pub level: Option<Level>,
    /// Sum of shortfalls per quantity name.
    pub totals: BTreeMap<String, f64>,
    pub reporters: BTreeSet<String>,
    pub recompute: bool,
}

/// Aggregates violations from children of a common parent.
pub fn push_up(violations: &[ViolationMsg]) -> PerformanceNeeds {
    let mut needs = PerformanceNeeds::default();
    for v in violations {
        needs.level = Some(v.target);
        *needs.totals.entry(v.quantity.clone()).or_insert(0.0) += v.shortfall;
        needs.reporters.insert(v.reporter.clone());
    }
    needs.recompute = !violations.is_empty();
    needs
}

/// Zone coordinator state.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneUnit {
    pub id: String,
    ctg: Ctg,
    objective: Objective,
    itus: Vec<String>,
    observed: Scenario,
    column: Scenario,
    plan: FallbackPlan,
    tried: BTreeSet<Scenario>,
    schedule: Schedule,
    throughput_target: f64,
    bound: f64,
}

impl ZoneUnit {
    pub fn new(id: impl Into<String>, ctg: Ctg, objective: Objective, itus: Vec<String>) -> Self {
        let first = enumerate_scenarios(&ctg).into_iter().next().expect("at least one scenario");
        let sched = schedule(&resolve_with(&ctg, &first, &FallbackPlan::default()), objective);
        ZoneUnit {
            id: id.into(),
            ctg,
            objective,
            itus,
            observed: first.clone(),
            column: first,
            plan: FallbackPlan::default(),
            tried: BTreeSet::new(),
            schedule: sched,
            throughput_target: 0.0,
            bound: f64::INFINITY,
        }
    }

    pub fn ctg(&self) -> &Ctg {
        &self.ctg
    }

    pub fn itus(&self) -> &[String] {
        &self.itus
    }

    pub fn observed(&self) -> &Scenario {
        &self.observed
    }

    /// Column whose schedule is currently in force.
    pub fn column(&self) -> &Scenario {
        &self.column
    }

    pub fn plan(&self) -> &FallbackPlan {
        &self.plan
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// New observed scenario; clears any degradation.
    pub fn set_scenario(&mut self, s: Scenario) {
        if s == self.observed && self.column == s && self.plan.is_empty() {
            return;
        }
        self.observed = s.clone();
        self.column = s;
        self.plan = FallbackPlan::default();
        self.tried.clear();
        self.reschedule();
    }

    fn reschedule(&mut self) {
        self.schedule = schedule(&resolve_with(&self.ctg, &self.column, &self.plan), self.objective);
    }

    /// One recomputation step: first the shaded fallback tasks, then the
    /// next lighter column. Returns false when nothing is left to try.
    fn degrade(&mut self) -> bool {
        let mut plan = self.plan.clone();
        for t in self.ctg.tasks() {
            if t.shaded || t.fallback.is_none() || plan.active.contains(&t.id) {
                continue;
            }
            if resolve_with(&self.ctg, &self.column, &plan).index_of(&t.id).is_none() {
                continue;
            }
            let mut trial = plan.clone();
            trial.active.insert(t.id.clone());
            let g = resolve_with(&self.ctg, &self.column, &trial);
            if t.fallback == Some(Fallback::Skip) {
                let served = schedule(&g, self.objective).total_vehicles();
                if served < self.throughput_target {
                    log::info!("zone {}: skipping {} rejected by throughput target", self.id, t.id);
                    continue;
                }
            }
            plan = trial;
        }
        if plan != self.plan {
            self.plan = plan;
            self.reschedule();
            return true;
        }
        self.tried.insert(self.column.clone());
        let rank = |s: &Scenario| -> Option<Vec<usize>> {
            self.ctg
                .sites()
                .iter()
                .zip(&s.labels)
                .map(|(site, l)| site.labels.iter().position(|x| x == l))
                .collect()
        };
        let current = rank(&self.column).expect("valid column");
        let lighter = enumerate_scenarios(&self.ctg)
            .into_iter()
            .filter(|s| !self.tried.contains(s))
            .filter_map(|s| {
                let r = rank(&s)?;
                let below = r.iter().zip(&current).all(|(a, b)| a <= b);
                let moved: usize = r.iter().zip(&current).map(|(a, b)| b - a.min(b)).sum();
                (below && moved > 0).then_some((moved, s))
            })
            .min_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        match lighter {
            Some((_, s)) => {
                log::info!("zone {}: rescheduling under column {}", self.id, s);
                self.column = s;
                self.reschedule();
                true
            }
            None => false,
        }
    }
}

/// Area coordinator state.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaUnit {
    pub id: String,
    ctmdp: Option<Ctmdp>,
    zones: Vec<ZoneUnit>,
    deadline: f64,
    throughput: u64,
    bounds: BTreeMap<String, f64>,
    policy: Option<Policy>,
    min_delay: Option<f64>,
}

impl AreaUnit {
    pub fn new(id: impl Into<String>, ctmdp: Option<Ctmdp>, zones: Vec<ZoneUnit>) -> Self {
        AreaUnit {
            id: id.into(),
            ctmdp,
            zones,
            deadline: f64::INFINITY,
            throughput: 0,
            bounds: BTreeMap::new(),
            policy: None,
            min_delay: None,
        }
    }

    pub fn zones(&self) -> &[ZoneUnit] {
        &self.zones
    }

    pub fn ctmdp(&self) -> Option<&Ctmdp> {
        self.ctmdp.as_ref()
    }

    pub fn policy(&self) -> Option<&Policy> {
        self.policy.as_ref()
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    fn bound(&self, zone: &str) -> f64 {
        self.bounds.get(zone).copied().unwrap_or(self.deadline)
    }

    fn set_goals(&mut self, throughput: u64, deadline: f64) {
        if deadline != self.deadline {
            self.bounds.clear();
        }
        self.deadline = deadline;
        self.throughput = throughput;
    }

    fn delay_lp(&self, m: &Ctmdp) -> LinearProgram {
        build_lp(&m.clone().with_delay_bound(self.deadline))
    }

    /// Solves the area's constrained problem; returns the shortfall of the
    /// expected delay when the deadline cannot be met.
    fn run(&mut self) -> Option<f64> {
        let m = self.ctmdp.as_ref()?;
        if !self.deadline.is_finite() {
            let sol = solve(&build_lp(m));
            self.policy = extract_policy(&sol, m).ok();
            return None;
        }
        let constrained = m.clone().with_delay_bound(self.deadline);
        let sol = solve(&self.delay_lp(m));
        if sol.status == LpStatus::Optimal {
            self.policy = extract_policy(&sol, &constrained).ok();
            return None;
        }
        // least achievable expected delay
        let mut lp = build_lp(m);
        lp.objective = lp.vars.iter().map(|&(i, _)| -m.area_delay()[i]).collect();
        let best = solve(&lp);
        let min_delay = if best.status == LpStatus::Optimal {
            -best.objective
        } else {
            f64::INFINITY
        };
        self.min_delay = Some(min_delay);
        Some((min_delay - self.deadline).max(f64::MIN_POSITIVE))
    }

    /// Raises a zone's bound to the heaviest state the current policy
    /// occupies while the expected delay still meets the deadline.
    fn relax(&mut self, zone: &str) -> bool {
        let (Some(m), Some(_)) = (&self.ctmdp, &self.policy) else {
            return false;
        };
        let sol = solve(&self.delay_lp(m));
        if sol.status != LpStatus::Optimal {
            return false;
        }
        let lp = self.delay_lp(m);
        let prefix = format!("{zone}:");
        let mut heaviest: f64 = 0.0;
        for (v, &(i, _)) in lp.vars.iter().enumerate() {
            if sol.x[v] > 0.0 && m.states()[i].starts_with(&prefix) {
                heaviest = heaviest.max(m.area_delay()[i]);
            }
        }
        let old = self.bound(zone);
        if heaviest > old {
            self.bounds.insert(zone.to_string(), heaviest);
            true
        } else {
            false
        }
    }

    /// Action probabilities of the current policy in the zone's observed
    /// state.
    pub fn route_probabilities(&self, zone: &str) -> Option<Vec<(String, f64)>> {
        let m = self.ctmdp.as_ref()?;
        let p = self.policy.as_ref()?;
        let z = self.zones.iter().find(|z| z.id == zone)?;
        let i = m.state_index(&state_name(zone, &z.observed.key()))?;
        Some(p.probs[i].iter().map(|&(a, pr)| (m.actions()[a].clone(), pr)).collect())
    }
}

/// Outcome of one reconcile call.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconcileReport {
    pub at: f64,
    pub passes: usize,
    pub converged: bool,
    /// Violations of every pass, in order.
    pub violations: Vec<(usize, ViolationMsg)>,
    /// Aggregated shortfalls per parent when the budget ran out.
    pub unresolved: BTreeMap<String, PerformanceNeeds>,
    /// Controllers switched to their default behaviour.
    pub safe_engaged: Vec<String>,
}

impl ReconcileReport {
    pub fn csv_header() -> Csv {
        Csv::new(&["at", "pass", "module", "quantity", "shortfall", "status"])
    }

    pub fn write_rows(&self, csv: &mut Csv) {
        for (pass, v) in &self.violations {
            csv.row([
                sig(self.at),
                pass.to_string(),
                v.reporter.clone(),
                v.quantity.clone(),
                sig(v.shortfall),
                "violation".to_string(),
            ]);
        }
        let status = if self.converged { "converged" } else { "exhausted" };
        csv.row([
            sig(self.at),
            self.passes.to_string(),
            "-".into(),
            "-".into(),
            "0".into(),
            status.to_string(),
        ]);
    }

    pub fn to_csv(&self) -> String {
        let mut csv = Self::csv_header();
        self.write_rows(&mut csv);
        csv.finish()
    }
}

/// Coordinator owning every level of one traffic hierarchy.
#[derive(Debug, Clone)]
pub struct Engine {
    registry: Registry,
    tcu: String,
    fg: FunctionGraph,
    global: GlobalGoal,
    overrides: BTreeMap<String, u64>,
    areas: Vec<AreaUnit>,
    itus: BTreeMap<String, ItuController>,
    /// Configured green/yellow/red of every signal controller; timing
    /// constraints rebalance from these rather than from earlier results.
    nominal: BTreeMap<String, (u64, u64, u64)>,
    pub budget: usize,
    log: Vec<String>,
}

impl Engine {
    /// Function-graph nodes must be the area ids.
    pub fn new(
        fg: FunctionGraph,
        global: GlobalGoal,
        areas: Vec<AreaUnit>,
        itus: Vec<ItuController>,
    ) -> Result<Self, HierarchyError> {
        let tcu = "TCU".to_string();
        let mut reg = Registry::new();
        let ports = |m: DmModule| m.ports(&["goals", "needs", "peer"], &["goals", "needs", "peer"]);
        reg.register(ports(DmModule::new(&tcu, Level::Tcu.index()).goal("throughput", GoalDirection::Maximize)))?;
        let itu_ids: BTreeSet<String> = itus.iter().map(|c| c.id.clone()).collect();
        for node in fg.nodes() {
            if !areas.iter().any(|a| a.id == node.id) {
                return Err(HierarchyError::UnknownModule(node.id.clone()));
            }
        }
        for a in &areas {
            reg.register(ports(DmModule::new(&a.id, Level::Atcu.index()).goal("throughput", GoalDirection::Maximize)))?;
            reg.wire((&tcu, "goals"), (&a.id, "goals"), LinkRole::GoalSetting)?;
            reg.wire((&a.id, "needs"), (&tcu, "needs"), LinkRole::CapabilityReport)?;
            for z in &a.zones {
                reg.register(ports(DmModule::new(&z.id, Level::Ztcu.index()).goal("throughput", GoalDirection::Maximize)))?;
                reg.wire((&a.id, "goals"), (&z.id, "goals"), LinkRole::GoalSetting)?;
                reg.wire((&z.id, "needs"), (&a.id, "needs"), LinkRole::CapabilityReport)?;
                for i in &z.itus {
                    if !itu_ids.contains(i) {
                        return Err(HierarchyError::UnknownModule(i.clone()));
                    }
                    if reg.get(i).is_none() {
                        reg.register(ports(DmModule::new(i, Level::Itu.index()).goal("throughput", GoalDirection::Maximize)))?;
                    }
                    reg.wire((&z.id, "goals"), (i, "goals"), LinkRole::GoalSetting)?;
                    reg.wire((i, "needs"), (&z.id, "needs"), LinkRole::CapabilityReport)?;
                }
                for (k, a1) in z.itus.iter().enumerate() {
                    for a2 in &z.itus[k + 1..] {
                        reg.wire((a1, "peer"), (a2, "peer"), LinkRole::Data)?;
                        reg.wire((a2, "peer"), (a1, "peer"), LinkRole::Data)?;
                    }
                }
            }
        }
        Ok(Engine {
            registry: reg,
            tcu,
            fg,
            global,
            overrides: BTreeMap::new(),
            areas,
            nominal: itus
                .iter()
                .map(|c| {
                    let f = &c.fsm;
                    let split = |s| f.split_ms(s);
                    (c.id.clone(), (split(SignalState::Green), split(SignalState::Yellow), split(SignalState::Red)))
                })
                .collect(),
            itus: itus.into_iter().map(|c| (c.id.clone(), c)).collect(),
            budget: DEFAULT_BUDGET,
            log: Vec::new(),
        })
    }

    pub fn with_overrides(mut self, overrides: BTreeMap<String, u64>) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn areas(&self) -> &[AreaUnit] {
        &self.areas
    }

    pub fn itu(&self, id: &str) -> Option<&ItuController> {
        self.itus.get(id)
    }

    pub fn itu_mut(&mut self, id: &str) -> Option<&mut ItuController> {
        self.itus.get_mut(id)
    }

    pub fn itus(&self) -> impl Iterator<Item = &ItuController> {
        self.itus.values()
    }

    pub fn zone(&self, id: &str) -> Option<&ZoneUnit> {
        self.areas.iter().flat_map(|a| &a.zones).find(|z| z.id == id)
    }

    pub fn set_scenario(&mut self, zone: &str, s: Scenario) -> Result<(), HierarchyError> {
        let z = self
            .areas
            .iter_mut()
            .flat_map(|a| a.zones.iter_mut())
            .find(|z| z.id == zone)
            .ok_or_else(|| HierarchyError::UnknownModule(zone.to_string()))?;
        z.set_scenario(s);
        Ok(())
    }

    pub fn route_probabilities(&self, zone: &str) -> Option<Vec<(String, f64)>> {
        self.areas
            .iter()
            .find(|a| a.zones.iter().any(|z| z.id == zone))?
            .route_probabilities(zone)
    }

    /// Replaces an area's CTMDP, e.g. after re-estimating its rates.
    pub fn set_ctmdp(&mut self, area: &str, m: Option<Ctmdp>) -> Result<(), HierarchyError> {
        let a = self
            .areas
            .iter_mut()
            .find(|a| a.id == area)
            .ok_or_else(|| HierarchyError::UnknownModule(area.to_string()))?;
        a.ctmdp = m;
        Ok(())
    }

    fn nominal_fsm(&self, itu: &str) -> SignalFsm {
        let ctl = &self.itus[itu];
        let (g, y, r) = self.nominal[itu];
        ctl.fsm.with_splits_ms(g, y, r).unwrap_or(ctl.fsm)
    }

    /// Message log lines accumulated since the last call.
    pub fn take_log(&mut self) -> Vec<String> {
        std::mem::take(&mut self.log)
    }

    fn send(&mut self, msg: &ConstraintMsg) -> Result<(), HierarchyError> {
        if msg.source.below() != Some(msg.target) {
            return Err(HierarchyError::ConstraintDirection(msg.source, msg.target));
        }
        if !self.registry.has_link(&msg.from, &msg.to, InteractionKind::Guiding) {
            return Err(HierarchyError::Route {
                src: msg.from.clone(),
                dst: msg.to.clone(),
                kind: InteractionKind::Guiding,
            });
        }
        self.log.push(msg.log_line());
        Ok(())
    }

    fn report(&mut self, v: &ViolationMsg, parent: &str) -> Result<(), HierarchyError> {
        if v.source.above() != Some(v.target) {
            return Err(HierarchyError::ViolationDirection(v.source, v.target));
        }
        if !self.registry.has_link(&v.reporter, parent, InteractionKind::Enabling) {
            return Err(HierarchyError::Route {
                src: v.reporter.clone(),
                dst: parent.to_string(),
                kind: InteractionKind::Enabling,
            });
        }
        self.log.push(v.log_line(parent));
        Ok(())
    }

    /// Runs propagation passes until one is violation-free or the budget is
    /// spent. Flagged parents are recomputed deepest first.
    pub fn reconcile(&mut self, now: f64) -> Result<ReconcileReport, HierarchyError> {
        let mut report = ReconcileReport {
            at: now,
            passes: 0,
            converged: false,
            violations: Vec::new(),
            unresolved: BTreeMap::new(),
            safe_engaged: Vec::new(),
        };
        let mut last: Vec<(String, ViolationMsg)> = Vec::new();
        let mut staged: BTreeMap<String, SignalFsm> = BTreeMap::new();
        for pass in 1..=self.budget.max(1) {
            report.passes = pass;
            staged.clear();
            let mut violations: Vec<(String, ViolationMsg)> = Vec::new();

            // top level
            let allocation = match distribute_goals_with_override(&self.fg, self.global, &self.overrides) {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("goal distribution failed: {e}; areas keep the global deadline");
                    GoalAllocation {
                        entries: self
                            .fg
                            .nodes()
                            .iter()
                            .map(|n| crate::tcu::Allocation {
                                node: n.id.clone(),
                                throughput: 0,
                                deadline: self.global.deadline,
                            })
                            .collect(),
                    }
                }
            };
            let tcu = self.tcu.clone();
            for msg in push_down(
                UpperOutput::Allocation {
                    tcu: &tcu,
                    allocation: &allocation,
                },
                now,
            ) {
                self.send(&msg)?;
                if let Payload::Area { throughput, deadline } = msg.payload {
                    if let Some(a) = self.areas.iter_mut().find(|a| a.id == msg.to) {
                        a.set_goals(throughput, deadline);
                    }
                }
            }

            // areas
            for k in 0..self.areas.len() {
                if let Some(short) = self.areas[k].run() {
                    let id = self.areas[k].id.clone();
                    let v = ViolationMsg::new(Level::Atcu, Level::Tcu, id, "expected_delay", short, now)?;
                    violations.push((tcu.clone(), v));
                }
                let area = &self.areas[k];
                let share = area.throughput as f64 / area.zones.len().max(1) as f64;
                let bounds: Vec<(String, f64, f64)> =
                    area.zones.iter().map(|z| (z.id.clone(), area.bound(&z.id), share)).collect();
                let atcu = area.id.clone();
                for msg in push_down(UpperOutput::Bounds { atcu: &atcu, bounds: &bounds }, now) {
                    self.send(&msg)?;
                    if let Payload::TableBound {
                        max_area_delay,
                        throughput,
                    } = msg.payload
                    {
                        let z = self.areas[k].zones.iter_mut().find(|z| z.id == msg.to).expect("zone");
                        z.bound = max_area_delay;
                        z.throughput_target = throughput;
                    }
                }
            }

            // zones and their signal controllers
            for k in 0..self.areas.len() {
                for zi in 0..self.areas[k].zones.len() {
                    let zone = self.areas[k].zones[zi].clone();
                    for msg in push_down(
                        UpperOutput::Column {
                            ztcu: &zone.id,
                            schedule: &zone.schedule,
                            itus: &zone.itus,
                        },
                        now,
                    ) {
                        self.send(&msg)?;
                        let Payload::Timing(cs) = &msg.payload else { continue };
                        let base = match staged.get(&msg.to) {
                            Some(f) => *f,
                            None => self.nominal_fsm(&msg.to),
                        };
                        match base.apply_timing_constraints(cs) {
                            Ok(f) => {
                                staged.insert(msg.to.clone(), f);
                            }
                            Err(rep) => {
                                let short = rep.total_shortfall().max(f64::MIN_POSITIVE);
                                let v = ViolationMsg::new(Level::Itu, Level::Ztcu, &msg.to, "timing", short, now)?;
                                violations.push((zone.id.clone(), v));
                            }
                        }
                    }
                    if zone.schedule.makespan > zone.bound {
                        let v = ViolationMsg::new(
                            Level::Ztcu,
                            Level::Atcu,
                            &zone.id,
                            "area_delay",
                            zone.schedule.makespan - zone.bound,
                            now,
                        )?;
                        violations.push((self.areas[k].id.clone(), v));
                    }
                }
            }

            for (parent, v) in &violations {
                self.report(v, parent)?;
                report.violations.push((pass, v.clone()));
            }
            if violations.is_empty() {
                report.converged = true;
                break;
            }

            // bottom-up: aggregate per parent, recompute deepest first
            let mut by_parent: BTreeMap<(Level, String), Vec<ViolationMsg>> = BTreeMap::new();
            for (parent, v) in &violations {
                by_parent.entry((v.target, parent.clone())).or_default().push(v.clone());
            }
            for ((level, parent), vs) in &by_parent {
                let needs = push_up(vs);
                if !needs.recompute {
                    continue;
                }
                match level {
                    Level::Ztcu => {
                        let z = self
                            .areas
                            .iter_mut()
                            .flat_map(|a| a.zones.iter_mut())
                            .find(|z| &z.id == parent)
                            .expect("zone");
                        if !z.degrade() {
                            log::info!("zone {parent}: no further recomputation available");
                        }
                    }
                    Level::Atcu => {
                        let a = self.areas.iter_mut().find(|a| &a.id == parent).expect("area");
                        for zone in &needs.reporters {
                            a.relax(zone);
                        }
                    }
                    _ => {
                        // The global goal is fixed; a fresh distribution
                        // happens at the start of the next pass.
                    }
                }
            }
            last = violations;
        }

        if report.converged {
            for (id, f) in staged {
                self.itus.get_mut(&id).expect("itu").fsm = f;
            }
            return Ok(report);
        }

        for (id, f) in &staged {
            self.itus.get_mut(id).expect("itu").fsm = *f;
        }
        let mut affected: BTreeSet<String> = BTreeSet::new();
        let mut by_parent: BTreeMap<String, Vec<ViolationMsg>> = BTreeMap::new();
        for (parent, v) in &last {
            by_parent.entry(parent.clone()).or_default().push(v.clone());
            match v.source {
                Level::Itu => {
                    affected.insert(v.reporter.clone());
                }
                Level::Ztcu => {
                    if let Some(z) = self.zone(&v.reporter) {
                        affected.extend(z.itus.iter().cloned());
                    }
                }
                Level::Atcu => {
                    if let Some(a) = self.areas.iter().find(|a| a.id == v.reporter) {
                        for z in &a.zones {
                            affected.extend(z.itus.iter().cloned());
                        }
                    }
                }
                _ => {}
            }
        }
        for (parent, vs) in by_parent {
            report.unresolved.insert(parent, push_up(&vs));
        }
        for id in affected {
            let total: f64 = last
                .iter()
                .map(|(_, v)| v.shortfall)
                .sum::<f64>()
                .max(f64::MIN_POSITIVE);
            let v = ViolationMsg::new(Level::Itu, Level::Ztcu, &id, "reconcile_budget", total, now)?;
            let ctl = self.itus.get_mut(&id).expect("itu");
            ctl.engage_default(&v);
            self.log.push(format!("{}\tsafe_mode\t{}\t{}", sig(now), id, ctl.active_mode().id));
            report.safe_engaged.push(id);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::itu::Direction;
    use crate::tcu::{FgNode, PerfDistribution};
    use crate::ztcu::{ConditionSite, CtgTask, TaskAttr};

    #[test]
    fn message_direction_is_enforced() {
        assert!(ConstraintMsg::new(Level::Tcu, Level::Atcu, "a", "b", Payload::Timing(vec![]), 0.0).is_ok());
        assert_eq!(
            ConstraintMsg::new(Level::Tcu, Level::Ztcu, "a", "b", Payload::Timing(vec![]), 0.0),
            Err(HierarchyError::ConstraintDirection(Level::Tcu, Level::Ztcu))
        );
        assert!(ViolationMsg::new(Level::Itu, Level::Ztcu, "i", "q", 1.0, 0.0).is_ok());
        assert!(ViolationMsg::new(Level::Itu, Level::Atcu, "i", "q", 1.0, 0.0).is_err());
        assert_eq!(
            ViolationMsg::new(Level::Itu, Level::Ztcu, "i", "q", 0.0, 0.0),
            Err(HierarchyError::NonPositiveShortfall(0.0))
        );
    }

    #[test]
    fn push_up_aggregates() {
        assert!(!push_up(&[]).recompute);
        let v = |r: &str, q: &str, s: f64| ViolationMsg::new(Level::Itu, Level::Ztcu, r, q, s, 0.0).unwrap();
        let n = push_up(&[v("a", "cars", 5.0), v("b", "cars", 5.0), v("b", "seconds", 2.0)]);
        assert!(n.recompute);
        assert_eq!(n.totals["cars"], 10.0);
        assert_eq!(n.totals["seconds"], 2.0);
        assert_eq!(n.totals.len(), 2);
    }

    #[test]
    fn push_down_allocation() {
        let alloc = GoalAllocation {
            entries: vec![
                crate::tcu::Allocation {
                    node: "A1".into(),
                    throughput: 50,
                    deadline: 60.0,
                },
                crate::tcu::Allocation {
                    node: "A2".into(),
                    throughput: 50,
                    deadline: 60.0,
                },
            ],
        };
        let msgs = push_down(
            UpperOutput::Allocation {
                tcu: "TCU",
                allocation: &alloc,
            },
            0.0,
        );
        assert_eq!(msgs.len(), 2);
        assert!(msgs
            .iter()
            .all(|m| matches!(m.payload, Payload::Area { throughput: 50, .. })));
        let empty = GoalAllocation { entries: vec![] };
        assert!(push_down(
            UpperOutput::Allocation {
                tcu: "TCU",
                allocation: &empty
            },
            0.0
        )
        .is_empty());
    }

    /// One ITU whose heavy column needs Green at an instant that the fixed
    /// 40 s cycle cannot provide; the light column keeps one direction.
    fn fixture(deadline: f64) -> Engine {
        let heavy = TaskAttr::new(8.0, 12.0);
        let light = TaskAttr::new(2.0, 4.0);
        let tasks = vec![
            CtgTask::new("P", TaskAttr::new(4.0, 6.0))
                .with_resources(["I1"])
                .at_itu("I1", Direction::Primary),
            CtgTask::new("S", light)
                .with_resources(["I1"])
                .at_itu("I1", Direction::Secondary)
                .guarded("S1", "H")
                .by_label("S1", &[("L", light), ("H", heavy)]),
        ];
        let ctg = Ctg::new(tasks, &[], vec![ConditionSite::binary("S1", 5.0)], &[]).unwrap();
        let zone = ZoneUnit::new("Z1", ctg, Objective::MinMakespan, vec!["I1".into()]);
        let area = AreaUnit::new("A1", None, vec![zone]);
        let fg = FunctionGraph::new(vec![FgNode::new("A1", PerfDistribution::point(20.0), 10.0)], &[]).unwrap();
        // Green window [0, 2): too short for the minimum phase when rebalanced
        let fsm = SignalFsm::from_ms(2_000, 3_000, 35_000, SignalState::Green).unwrap();
        let ctl = ItuController::with_default_modes("I1", fsm);
        Engine::new(
            fg,
            GlobalGoal {
                throughput: 10,
                deadline,
            },
            vec![area],
            vec![ctl],
        )
        .unwrap()
    }

    #[test]
    fn converges_in_one_pass_when_satisfiable() {
        let mut e = fixture(100.0);
        let r = e.reconcile(0.0).unwrap();
        assert!(r.converged);
        assert_eq!(r.passes, 1);
        let again = e.reconcile(0.0).unwrap();
        assert!(again.converged && again.violations.is_empty());
    }

    #[test]
    fn contradictory_deadline_engages_safe_mode() {
        let mut e = fixture(1.0);
        let r = e.reconcile(0.0).unwrap();
        assert!(!r.converged);
        assert_eq!(r.passes, DEFAULT_BUDGET);
        assert!(!r.unresolved.is_empty());
        assert_eq!(r.safe_engaged, vec!["I1".to_string()]);
        assert!(e.itu("I1").unwrap().in_safe_mode());
    }

    #[test]
    fn registry_routes_are_typed() {
        let e = fixture(100.0);
        assert!(e.registry().has_link("TCU", "A1", InteractionKind::Guiding));
        assert!(e.registry().has_link("I1", "Z1", InteractionKind::Enabling));
        assert!(!e.registry().has_link("TCU", "I1", InteractionKind::Guiding));
    }
}
