//! Closed-loop runs of the traffic world under fixed-time or hierarchical
//! signal control.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::atcu::{from_schedule_tables, state_name, CtmdpError, ShiftLog};
use crate::config::{CtgConfig, NetworkConfig, ZoneSetup};
use crate::fmt::{sig, Csv};
use crate::hierarchy::{AreaUnit, Engine, HierarchyError, ReconcileReport, ZoneUnit};
use crate::itu::{Direction, ItuController, SignalState};
use crate::tcu::{FgNode, FunctionGraph, GlobalGoal, PerfDistribution, TcuError};
use crate::world::{DemandProfile, WorldError, WorldState, DEFAULT_DT};
use crate::ztcu::{build_table, Ctg, ScenarioClassifier, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every signal runs its configured plan.
    Fixed,
    /// Signals follow the zone schedule through the full hierarchy.
    Hierarchical,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::Hierarchical => "hierarchical",
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("hierarchical mode needs a task graph with a [zone] section")]
    MissingZone,
    #[error("zone lists unknown signal controller {0}")]
    UnknownItu(String),
    #[error("condition site {0} has no observed segment")]
    UnobservedSite(String),
    #[error("horizon and step must be positive")]
    BadHorizon,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Ctmdp(#[from] CtmdpError),
    #[error(transparent)]
    Tcu(#[from] TcuError),
}

#[derive(Debug, Clone)]
pub struct SimSetup {
    pub network: NetworkConfig,
    pub demand: DemandProfile,
    pub ctg: Option<CtgConfig>,
    pub horizon: f64,
    pub dt: f64,
    pub mode: Mode,
    /// Record the per-vehicle event log.
    pub trace: bool,
}

impl SimSetup {
    pub fn new(network: NetworkConfig, demand: DemandProfile, ctg: Option<CtgConfig>, horizon: f64, mode: Mode) -> Self {
        SimSetup {
            network,
            demand,
            ctg,
            horizon,
            dt: DEFAULT_DT,
            mode,
            trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mode: Mode,
    pub horizon: f64,
    pub seed: u64,
    pub arrived: u64,
    pub dropped: u64,
    /// Vehicles that left the network within the horizon.
    pub serviced: u64,
    pub in_network: u64,
    pub event_log: String,
    pub reconcile_csv: String,
    /// Scenario observed in every cycle (hierarchical mode).
    pub scenarios: Vec<(f64, Scenario)>,
    pub safe_mode_engaged: usize,
}

impl SimResult {
    /// Header `mode,horizon,seed,arrived,dropped,serviced,in_network`.
    pub fn summary_csv(&self) -> String {
        let mut csv = Csv::new(&["mode", "horizon", "seed", "arrived", "dropped", "serviced", "in_network"]);
        csv.row([
            self.mode.name().to_string(),
            sig(self.horizon),
            self.seed.to_string(),
            self.arrived.to_string(),
            self.dropped.to_string(),
            self.serviced.to_string(),
            self.in_network.to_string(),
        ]);
        csv.finish()
    }
}

pub fn run(setup: &SimSetup) -> Result<SimResult, SimError> {
    if !(setup.horizon > 0.0) || !(setup.dt > 0.0) {
        return Err(SimError::BadHorizon);
    }
    let mut world = WorldState::new(setup.network.network.clone(), setup.demand.clone())?;
    if setup.trace {
        world = world.with_event_log();
    }
    let steps = (setup.horizon / setup.dt).round() as u64;
    match setup.mode {
        Mode::Fixed => run_fixed(setup, world, steps),
        Mode::Hierarchical => run_hierarchical(setup, world, steps),
    }
}

fn controls(itus: &BTreeMap<String, ItuController>) -> BTreeMap<String, SignalState> {
    itus.iter().map(|(id, c)| (id.clone(), c.fsm.current())).collect()
}

fn tick_all<'a>(world: &WorldState, dt: f64, itus: impl Iterator<Item = &'a mut ItuController>) {
    for c in itus {
        let p = world.waiting(&c.id, Direction::Primary);
        let s = world.waiting(&c.id, Direction::Secondary);
        c.tick(dt, p, s);
    }
}

fn finish(
    setup: &SimSetup,
    mut world: WorldState,
    reconcile_csv: String,
    scenarios: Vec<(f64, Scenario)>,
    safe: usize,
) -> SimResult {
    let c = world.counters();
    SimResult {
        mode: setup.mode,
        horizon: setup.horizon,
        seed: setup.demand.seed,
        arrived: c.arrived,
        dropped: c.dropped,
        serviced: c.exited,
        in_network: world.total_vehicles() as u64,
        event_log: world.take_event_log(),
        reconcile_csv,
        scenarios,
        safe_mode_engaged: safe,
    }
}

fn run_fixed(setup: &SimSetup, mut world: WorldState, steps: u64) -> Result<SimResult, SimError> {
    let mut itus: BTreeMap<String, ItuController> = setup
        .network
        .signals
        .iter()
        .map(|(id, fsm)| (id.clone(), ItuController::with_default_modes(id, *fsm)))
        .collect();
    for _ in 0..steps {
        world.step(&controls(&itus), setup.dt);
        tick_all(&world, setup.dt, itus.values_mut());
    }
    let csv = ReconcileReport::csv_header().finish();
    Ok(finish(setup, world, csv, Vec::new(), 0))
}

struct Hierarchy {
    zone: ZoneSetup,
    engine: Engine,
    others: BTreeMap<String, ItuController>,
    /// Local copy whose thresholds follow the observed medians.
    ctg: Ctg,
    classifier: ScenarioClassifier,
    shifts: ShiftLog,
    current: Scenario,
    action: Option<String>,
}

impl Hierarchy {
    fn new(setup: &SimSetup) -> Result<Self, SimError> {
        let cfg = setup.ctg.as_ref().ok_or(SimError::MissingZone)?;
        let zone = cfg.zone.clone().ok_or(SimError::MissingZone)?;
        for site in cfg.ctg.sites() {
            if site.segment.is_none() {
                return Err(SimError::UnobservedSite(site.id.clone()));
            }
        }
        let mut itus = Vec::new();
        for id in &zone.itus {
            let fsm = setup
                .network
                .signals
                .get(id)
                .ok_or_else(|| SimError::UnknownItu(id.clone()))?;
            itus.push(ItuController::with_default_modes(id, *fsm));
        }
        // signalized intersections outside the zone keep their own plan
        let others = setup
            .network
            .signals
            .iter()
            .filter(|(id, _)| !zone.itus.contains(id))
            .map(|(id, fsm)| (id.clone(), ItuController::with_default_modes(id, *fsm)))
            .collect();
        let unit = ZoneUnit::new(&zone.id, cfg.ctg.clone(), cfg.objective, zone.itus.clone());
        let current = unit.observed().clone();
        let shifts = ShiftLog::default();
        let ctmdp = if zone.actions.is_empty() {
            None
        } else {
            let table = build_table(&cfg.ctg, cfg.objective);
            Some(from_schedule_tables(&[(&zone.id, &table)], &zone.actions, &shifts, prior_rate(setup))?)
        };
        let area = AreaUnit::new(&zone.area, ctmdp, vec![unit]);
        let fg = FunctionGraph::new(
            vec![FgNode::new(&zone.area, PerfDistribution::point(zone.deadline), zone.throughput as f64)],
            &[],
        )?;
        let engine = Engine::new(
            fg,
            GlobalGoal {
                throughput: zone.throughput,
                deadline: zone.deadline,
            },
            vec![area],
            itus,
        )?;
        Ok(Hierarchy {
            zone,
            engine,
            others,
            ctg: cfg.ctg.clone(),
            classifier: ScenarioClassifier::default(),
            shifts,
            current,
            action: None,
        })
    }

    fn cycle(&self) -> f64 {
        self.engine.itus().map(|c| c.fsm.cycle()).fold(0.0, f64::max)
    }

    /// Observes the finished cycle, re-estimates the area model and
    /// reconciles all levels.
    fn on_cycle(
        &mut self,
        setup: &SimSetup,
        world: &mut WorldState,
        t0: f64,
        t1: f64,
        cycles: usize,
    ) -> Result<ReconcileReport, SimError> {
        if t1 > t0 {
            let mut counts = BTreeMap::new();
            for site in self.ctg.sites() {
                let seg = site.segment.as_deref().expect("checked");
                let n = world.observe_cycle(seg, t0, t1)?.n as f64;
                counts.insert(site.id.clone(), n);
                self.classifier.observe(&site.id, n);
            }
            if cycles >= self.zone.refine_after {
                self.classifier.refine(&mut self.ctg, self.zone.refine_after);
            }
            let next = self.classifier.classify(&self.ctg, &counts);
            if let Some(a) = &self.action {
                let from = state_name(&self.zone.id, &self.current.key());
                self.shifts.record_dwell(&from, a, t1 - t0);
                if next != self.current {
                    self.shifts.record_shift(&from, &state_name(&self.zone.id, &next.key()), a);
                }
            }
            self.current = next.clone();
            self.engine.set_scenario(&self.zone.id, next)?;
            if !self.zone.actions.is_empty() {
                let table = build_table(self.engine.zone(&self.zone.id).expect("zone").ctg(), setup.ctg.as_ref().expect("ctg").objective);
                let m = from_schedule_tables(&[(&self.zone.id, &table)], &self.zone.actions, &self.shifts, prior_rate(setup))?;
                self.engine.set_ctmdp(&self.zone.area, Some(m))?;
            }
        }
        let report = self.engine.reconcile(t1)?;
        for line in self.engine.take_log() {
            world.append_log(&line);
        }
        if let Some(probs) = self.engine.route_probabilities(&self.zone.id) {
            self.action = probs
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|(a, _)| a.clone());
            for entry in &self.zone.routed_entries {
                world.set_route_choice(entry, probs.clone())?;
            }
        } else if !self.zone.actions.is_empty() {
            self.action = Some(self.zone.actions[0].clone());
        }
        Ok(report)
    }
}

fn prior_rate(setup: &SimSetup) -> f64 {
    let cycle = setup.network.signals.values().map(|f| f.cycle()).fold(0.0, f64::max);
    if cycle > 0.0 {
        1.0 / cycle
    } else {
        1.0
    }
}

fn run_hierarchical(setup: &SimSetup, mut world: WorldState, steps: u64) -> Result<SimResult, SimError> {
    let mut h = Hierarchy::new(setup)?;
    let cycle_steps = ((h.cycle() / setup.dt).round() as u64).max(1);
    let mut csv = ReconcileReport::csv_header();
    let mut scenarios = Vec::new();
    let mut safe = 0;
    let mut cycles = 0;
    let mut t_prev = 0.0;
    for k in 0..steps {
        if k % cycle_steps == 0 {
            let t = world.clock();
            let report = h.on_cycle(setup, &mut world, t_prev, t, cycles)?;
            safe += report.safe_engaged.len();
            report.write_rows(&mut csv);
            scenarios.push((t, h.current.clone()));
            if t > t_prev {
                cycles += 1;
            }
            t_prev = t;
        }
        let mut ctl = controls(&h.others);
        ctl.extend(h.engine.itus().map(|c| (c.id.clone(), c.fsm.current())));
        world.step(&ctl, setup.dt);
        tick_all(&world, setup.dt, h.others.values_mut());
        let waits: Vec<(String, usize, usize)> = h
            .engine
            .itus()
            .map(|c| {
                (
                    c.id.clone(),
                    world.waiting(&c.id, Direction::Primary),
                    world.waiting(&c.id, Direction::Secondary),
                )
            })
            .collect();
        for (id, p, s) in waits {
            h.engine.itu_mut(&id).expect("itu").tick(setup.dt, p, s);
        }
    }
    Ok(finish(setup, world, csv.finish(), scenarios, safe))
}
