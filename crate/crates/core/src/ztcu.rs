//! Zone traffic coordination: conditional task graphs and their schedules.
//!
//! A [`Ctg`] describes the activities of one area cycle. Tasks guarded by a
//! condition site label (light / heavy traffic on a road section) are
//! alternatives; fixing one label per site gives a [`Scenario`], and
//! resolving the graph under it gives a plain task graph with per-scenario
//! vehicle counts and traversal times. Tasks that share a road resource are
//! mutually exclusive. The schedule table holds one optimised schedule per
//! scenario; each schedule is mapped down to timing constraints for the
//! signal controllers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::fmt::{sig, Csv};
use crate::itu::{replay_violations, Direction, SignalFsm, SignalState, TimingConstraint};

/// Resolved graphs up to this size are scheduled exactly.
pub const EXACT_LIMIT: usize = 10;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtgError {
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error("duplicate condition site {0}")]
    DuplicateSite(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown condition site {0}")]
    UnknownSite(String),
    #[error("site {site} has no label {label}")]
    UnknownLabel { site: String, label: String },
    #[error("condition site {0} needs at least two labels and one increasing threshold per boundary")]
    BadSite(String),
    #[error("precedence graph has a cycle through {0}")]
    Cycle(String),
    #[error("task {task} has non-positive traversal time in scenario label {label}")]
    NonPositiveTime { task: String, label: String },
    #[error("task {0} lacks attributes for some label of its site")]
    MissingAttrs(String),
    #[error("fallback of {task} refers to {target}, which is not a shaded task")]
    BadFallback { task: String, target: String },
}

/// Vehicles per cycle and traversal time of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskAttr {
    pub n: f64,
    pub t_ex: f64,
}

impl TaskAttr {
    pub fn new(n: f64, t_ex: f64) -> Self {
        TaskAttr { n, t_ex }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskAttrs {
    Fixed(TaskAttr),
    /// Attributes depend on the label observed at `site`.
    ByLabel {
        site: String,
        by_label: BTreeMap<String, TaskAttr>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Guard {
    pub site: String,
    pub label: String,
}

/// Shaded alternative applied when the zone is flagged for recomputation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fallback {
    Skip,
    Reroute(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtgTask {
    pub id: String,
    pub guard: Option<Guard>,
    pub resources: BTreeSet<String>,
    pub attrs: TaskAttrs,
    pub dummy: bool,
    /// Signal controller crossed by this task and the approach used.
    pub itu: Option<String>,
    pub direction: Option<Direction>,
    /// Road segment whose observations refine this task.
    pub segment: Option<String>,
    pub fallback: Option<Fallback>,
    /// Shaded tasks run only as a fallback replacement.
    pub shaded: bool,
}

impl CtgTask {
    pub fn new(id: impl Into<String>, attr: TaskAttr) -> Self {
        CtgTask {
            id: id.into(),
            guard: None,
            resources: BTreeSet::new(),
            attrs: TaskAttrs::Fixed(attr),
            dummy: false,
            itu: None,
            direction: None,
            segment: None,
            fallback: None,
            shaded: false,
        }
    }

    pub fn with_resources<I, S>(mut self, resources: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.resources = resources.into_iter().map(Into::into).collect();
        self
    }

    pub fn guarded(mut self, site: &str, label: &str) -> Self {
        self.guard = Some(Guard {
            site: site.into(),
            label: label.into(),
        });
        self
    }

    pub fn at_itu(mut self, itu: &str, direction: Direction) -> Self {
        self.itu = Some(itu.into());
        self.direction = Some(direction);
        self
    }

    pub fn by_label(mut self, site: &str, attrs: &[(&str, TaskAttr)]) -> Self {
        self.attrs = TaskAttrs::ByLabel {
            site: site.into(),
            by_label: attrs.iter().map(|(l, a)| (l.to_string(), *a)).collect(),
        };
        self
    }

    pub fn dummy(mut self) -> Self {
        self.dummy = true;
        self
    }
}

/// A road section whose traffic is classified into ordered labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSite {
    pub id: String,
    pub labels: Vec<String>,
    /// `thresholds[k]` separates `labels[k]` from `labels[k + 1]`
    /// (label k when N <= threshold).
    pub thresholds: Vec<f64>,
    pub segment: Option<String>,
}

impl ConditionSite {
    /// Binary light/heavy site.
    pub fn binary(id: impl Into<String>, threshold: f64) -> Self {
        ConditionSite {
            id: id.into(),
            labels: vec!["L".into(), "H".into()],
            thresholds: vec![threshold],
            segment: None,
        }
    }

    pub fn label_for(&self, n: f64) -> &str {
        let k = self.thresholds.iter().take_while(|&&t| n > t).count();
        &self.labels[k]
    }

    fn validate(&self) -> Result<(), CtgError> {
        let ok = self.labels.len() >= 2
            && self.thresholds.len() == self.labels.len() - 1
            && self.thresholds.windows(2).all(|w| w[0] < w[1])
            && self.labels.iter().collect::<BTreeSet<_>>().len() == self.labels.len();
        if ok {
            Ok(())
        } else {
            Err(CtgError::BadSite(self.id.clone()))
        }
    }
}

/// One label per condition site, in site declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scenario {
    pub labels: Vec<String>,
}

impl Scenario {
    /// Compact name used in CSV files, e.g. `L-H-L`; `-` for no sites.
    pub fn key(&self) -> String {
        if self.labels.is_empty() {
            "-".into()
        } else {
            self.labels.join("-")
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.labels.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ctg {
    tasks: Vec<CtgTask>,
    arcs: Vec<(usize, usize)>,
    sites: Vec<ConditionSite>,
    exclusions: BTreeSet<(usize, usize)>,
}

impl Ctg {
    /// Builds and validates a graph. Tasks sharing a resource are exclusive;
    /// `extra_exclusions` adds pairs by id.
    pub fn new(
        tasks: Vec<CtgTask>,
        arcs: &[(&str, &str)],
        sites: Vec<ConditionSite>,
        extra_exclusions: &[(&str, &str)],
    ) -> Result<Self, CtgError> {
        let owned: Vec<(String, String)> = arcs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let ex: Vec<(String, String)> = extra_exclusions
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Self::from_parts(tasks, &owned, sites, &ex)
    }

    pub fn from_parts(
        tasks: Vec<CtgTask>,
        arcs: &[(String, String)],
        sites: Vec<ConditionSite>,
        extra_exclusions: &[(String, String)],
    ) -> Result<Self, CtgError> {
        let mut index = BTreeMap::new();
        for (k, t) in tasks.iter().enumerate() {
            if index.insert(t.id.clone(), k).is_some() {
                return Err(CtgError::DuplicateTask(t.id.clone()));
            }
        }
        let mut site_ids = BTreeSet::new();
        for s in &sites {
            s.validate()?;
            if !site_ids.insert(s.id.clone()) {
                return Err(CtgError::DuplicateSite(s.id.clone()));
            }
        }
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| CtgError::UnknownTask(id.into()));
        let arcs = arcs
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>, CtgError>>()?;

        let site = |id: &str| sites.iter().find(|s| s.id == id);
        for t in &tasks {
            if let Some(g) = &t.guard {
                let s = site(&g.site).ok_or_else(|| CtgError::UnknownSite(g.site.clone()))?;
                if !s.labels.contains(&g.label) {
                    return Err(CtgError::UnknownLabel {
                        site: g.site.clone(),
                        label: g.label.clone(),
                    });
                }
            }
            match &t.attrs {
                TaskAttrs::Fixed(a) => {
                    if !t.dummy && !(a.t_ex > 0.0) {
                        return Err(CtgError::NonPositiveTime {
                            task: t.id.clone(),
                            label: "*".into(),
                        });
                    }
                }
                TaskAttrs::ByLabel { site: sid, by_label } => {
                    let s = site(sid).ok_or_else(|| CtgError::UnknownSite(sid.clone()))?;
                    for l in &s.labels {
                        let a = by_label.get(l).ok_or_else(|| CtgError::MissingAttrs(t.id.clone()))?;
                        if !t.dummy && !(a.t_ex > 0.0) {
                            return Err(CtgError::NonPositiveTime {
                                task: t.id.clone(),
                                label: l.clone(),
                            });
                        }
                    }
                }
            }
            if let Some(Fallback::Reroute(target)) = &t.fallback {
                let ok = index.get(target).map(|&k| tasks[k].shaded).unwrap_or(false);
                if !ok {
                    return Err(CtgError::BadFallback {
                        task: t.id.clone(),
                        target: target.clone(),
                    });
                }
            }
        }

        let mut exclusions = BTreeSet::new();
        for a in 0..tasks.len() {
            for b in a + 1..tasks.len() {
                if !tasks[a].resources.is_disjoint(&tasks[b].resources) {
                    exclusions.insert((a, b));
                }
            }
        }
        for (x, y) in extra_exclusions {
            let (a, b) = (lookup(x)?, lookup(y)?);
            if a != b {
                exclusions.insert((a.min(b), a.max(b)));
            }
        }

        let ctg = Ctg {
            tasks,
            arcs,
            sites,
            exclusions,
        };
        if let Some(k) = ctg.find_cycle() {
            return Err(CtgError::Cycle(ctg.tasks[k].id.clone()));
        }
        Ok(ctg)
    }

    fn find_cycle(&self) -> Option<usize> {
        let n = self.tasks.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.arcs {
            indeg[b] += 1;
        }
        let mut stack: Vec<usize> = (0..n).filter(|&k| indeg[k] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for &(a, b) in &self.arcs {
                if a == v {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        stack.push(b);
                    }
                }
            }
        }
        if seen == n {
            None
        } else {
            (0..n).find(|&k| indeg[k] > 0)
        }
    }

    pub fn tasks(&self) -> &[CtgTask] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&CtgTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn sites(&self) -> &[ConditionSite] {
        &self.sites
    }

    pub fn sites_mut(&mut self) -> &mut [ConditionSite] {
        &mut self.sites
    }

    pub fn arcs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.arcs
            .iter()
            .map(|&(a, b)| (self.tasks[a].id.as_str(), self.tasks[b].id.as_str()))
    }

    pub fn exclusion_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.exclusions
            .iter()
            .map(|&(a, b)| (self.tasks[a].id.as_str(), self.tasks[b].id.as_str()))
    }

    pub fn is_exclusive(&self, a: &str, b: &str) -> bool {
        self.exclusion_pairs().any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    fn label_of<'a>(&self, s: &'a Scenario, site: &str) -> Option<&'a str> {
        self.sites
            .iter()
            .position(|x| x.id == site)
            .and_then(|k| s.labels.get(k))
            .map(String::as_str)
    }

    fn attr_in(&self, task: &CtgTask, s: &Scenario) -> TaskAttr {
        match &task.attrs {
            TaskAttrs::Fixed(a) => *a,
            TaskAttrs::ByLabel { site, by_label } => {
                let label = self.label_of(s, site).expect("complete scenario");
                by_label[label]
            }
        }
    }
}

/// Cartesian product of site labels, lexicographic in declaration order.
pub fn enumerate_scenarios(ctg: &Ctg) -> Vec<Scenario> {
    let mut out = vec![Scenario { labels: Vec::new() }];
    for site in &ctg.sites {
        out = out
            .into_iter()
            .flat_map(|s| {
                site.labels.iter().map(move |l| {
                    let mut labels = s.labels.clone();
                    labels.push(l.clone());
                    Scenario { labels }
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTask {
    pub id: String,
    pub n: f64,
    pub t_ex: f64,
    pub resources: BTreeSet<String>,
    pub itu: Option<String>,
    pub direction: Option<Direction>,
    pub dummy: bool,
}

/// Concrete task graph for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedGraph {
    pub scenario: Scenario,
    pub tasks: Vec<ResolvedTask>,
    pub preds: Vec<Vec<usize>>,
    /// Symmetric exclusion matrix.
    pub exclusive: Vec<Vec<bool>>,
}

impl ResolvedGraph {
    /// A bare graph (used for generated instances and tests).
    pub fn new(tasks: Vec<ResolvedTask>, arcs: &[(usize, usize)], exclusions: &[(usize, usize)]) -> Self {
        let n = tasks.len();
        let mut preds = vec![Vec::new(); n];
        for &(a, b) in arcs {
            preds[b].push(a);
        }
        let mut exclusive = vec![vec![false; n]; n];
        for &(a, b) in exclusions {
            exclusive[a][b] = true;
            exclusive[b][a] = true;
        }
        for a in 0..n {
            for b in a + 1..n {
                if !tasks[a].resources.is_disjoint(&tasks[b].resources) {
                    exclusive[a][b] = true;
                    exclusive[b][a] = true;
                }
            }
        }
        ResolvedGraph {
            scenario: Scenario { labels: Vec::new() },
            tasks,
            preds,
            exclusive,
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    fn succs(&self) -> Vec<Vec<usize>> {
        let mut s = vec![Vec::new(); self.len()];
        for (b, ps) in self.preds.iter().enumerate() {
            for &a in ps {
                s[a].push(b);
            }
        }
        s
    }

    fn topo_order(&self) -> Vec<usize> {
        let n = self.len();
        let succs = self.succs();
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&k| indeg[k] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&v) = ready.iter().next() {
            ready.remove(&v);
            order.push(v);
            for &w in &succs[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.insert(w);
                }
            }
        }
        order
    }

    /// Longest chain of `weight` starting at each task (inclusive).
    fn bottom_levels(&self, weight: impl Fn(&ResolvedTask) -> f64) -> Vec<f64> {
        let succs = self.succs();
        let mut bl = vec![0.0; self.len()];
        for &v in self.topo_order().iter().rev() {
            let down = succs[v].iter().map(|&w| bl[w]).fold(0.0, f64::max);
            bl[v] = weight(&self.tasks[v]) + down;
        }
        bl
    }
}

/// Which tasks of a zone are replaced by their shaded fallbacks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FallbackPlan {
    pub active: BTreeSet<String>,
}

impl FallbackPlan {
    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

pub fn resolve(ctg: &Ctg, s: &Scenario) -> ResolvedGraph {
    resolve_with(ctg, s, &FallbackPlan::default())
}

/// Resolves `ctg` under `s`, then applies the fallbacks in `plan`: skipped
/// tasks are removed with their predecessors linked to their successors,
/// rerouted tasks are replaced by their shaded alternative.
pub fn resolve_with(ctg: &Ctg, s: &Scenario, plan: &FallbackPlan) -> ResolvedGraph {
    let n = ctg.tasks.len();
    let guard_ok = |t: &CtgTask| match &t.guard {
        None => true,
        Some(g) => ctg.label_of(s, &g.site) == Some(g.label.as_str()),
    };
    // Shaded tasks that stand in for an active reroute.
    let mut substitute: BTreeMap<usize, usize> = BTreeMap::new();
    let mut skipped = BTreeSet::new();
    for (k, t) in ctg.tasks.iter().enumerate() {
        if !plan.active.contains(&t.id) || t.shaded || !guard_ok(t) {
            continue;
        }
        match &t.fallback {
            Some(Fallback::Skip) => {
                skipped.insert(k);
            }
            Some(Fallback::Reroute(target)) => {
                let j = ctg.tasks.iter().position(|x| &x.id == target).expect("validated");
                substitute.insert(k, j);
            }
            None => {}
        }
    }
    let keep: Vec<bool> = (0..n)
        .map(|k| {
            let t = &ctg.tasks[k];
            guard_ok(t) && !t.shaded && !skipped.contains(&k)
        })
        .collect();

    // Transitive precedence through skipped tasks.
    let mut preds_full: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in &ctg.arcs {
        preds_full[b].insert(a);
    }
    let order = {
        let g = ResolvedGraph::new(
            ctg.tasks.iter().map(|t| blank(&t.id)).collect(),
            &ctg.arcs,
            &[],
        );
        g.topo_order()
    };
    let mut eff_preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &v in &order {
        let mut set = BTreeSet::new();
        for &p in &preds_full[v] {
            if skipped.contains(&p) {
                set.extend(eff_preds[p].iter().copied());
            } else {
                set.insert(p);
            }
        }
        eff_preds[v] = set;
    }

    let mut new_index = vec![usize::MAX; n];
    let mut tasks = Vec::new();
    for k in 0..n {
        if !keep[k] {
            continue;
        }
        let src = substitute.get(&k).map(|&j| &ctg.tasks[j]).unwrap_or(&ctg.tasks[k]);
        let a = ctg.attr_in(src, s);
        new_index[k] = tasks.len();
        tasks.push(ResolvedTask {
            id: src.id.clone(),
            n: a.n,
            t_ex: if src.dummy { a.t_ex.max(0.0) } else { a.t_ex },
            resources: src.resources.clone(),
            itu: src.itu.clone(),
            direction: src.direction,
            dummy: src.dummy,
        });
    }
    let mut arcs = Vec::new();
    for k in 0..n {
        if !keep[k] {
            continue;
        }
        for &p in &eff_preds[k] {
            if keep[p] {
                arcs.push((new_index[p], new_index[k]));
            }
        }
    }
    let mut exclusions = Vec::new();
    for &(a, b) in &ctg.exclusions {
        if keep[a] && keep[b] && !substitute.contains_key(&a) && !substitute.contains_key(&b) {
            exclusions.push((new_index[a], new_index[b]));
        }
    }
    let mut g = ResolvedGraph::new(tasks, &arcs, &exclusions);
    g.scenario = s.clone();
    g
}

fn blank(id: &str) -> ResolvedTask {
    ResolvedTask {
        id: id.into(),
        n: 0.0,
        t_ex: 0.0,
        resources: BTreeSet::new(),
        itu: None,
        direction: None,
        dummy: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    MinMakespan,
    /// Minimum makespan, ties broken towards finishing high-volume tasks
    /// early (sum of N x finish).
    MaxThroughput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledTask {
    pub task: String,
    pub start: f64,
    pub finish: f64,
    pub n: f64,
    pub resources: BTreeSet<String>,
    pub itu: Option<String>,
    pub direction: Option<Direction>,
    pub dummy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub scenario: Scenario,
    pub entries: Vec<ScheduledTask>,
    pub makespan: f64,
    /// Idle intervals per resource within `[0, makespan]`.
    pub idle: BTreeMap<String, Vec<(f64, f64)>>,
}

impl Schedule {
    fn from_starts(g: &ResolvedGraph, starts: &[f64]) -> Schedule {
        let mut entries: Vec<ScheduledTask> = g
            .tasks
            .iter()
            .zip(starts)
            .map(|(t, &s)| ScheduledTask {
                task: t.id.clone(),
                start: s,
                finish: s + t.t_ex,
                n: t.n,
                resources: t.resources.clone(),
                itu: t.itu.clone(),
                direction: t.direction,
                dummy: t.dummy,
            })
            .collect();
        entries.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.task.cmp(&b.task)));
        let makespan = entries.iter().map(|e| e.finish).fold(0.0, f64::max);
        let mut busy: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for e in &entries {
            for r in &e.resources {
                busy.entry(r.clone()).or_default().push((e.start, e.finish));
            }
        }
        let idle = busy
            .into_iter()
            .map(|(r, mut iv)| {
                iv.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut gaps = Vec::new();
                let mut t = 0.0;
                for (s, f) in iv {
                    if s > t + EPS {
                        gaps.push((t, s));
                    }
                    t = f64::max(t, f);
                }
                if makespan > t + EPS {
                    gaps.push((t, makespan));
                }
                (r, gaps)
            })
            .collect();
        Schedule {
            scenario: g.scenario.clone(),
            entries,
            makespan,
            idle,
        }
    }

    pub fn entry(&self, task: &str) -> Option<&ScheduledTask> {
        self.entries.iter().find(|e| e.task == task)
    }

    pub fn total_vehicles(&self) -> f64 {
        self.entries.iter().map(|e| e.n).sum()
    }

    fn weighted_finish(&self) -> f64 {
        self.entries.iter().map(|e| e.n * e.finish).sum()
    }
}

/// Non-preemptive list scheduling: at every decision instant, ready tasks
/// are started in priority order (longest downstream chain first, then
/// smaller id) unless an exclusive task is still running.
pub fn list_schedule(g: &ResolvedGraph, objective: Objective) -> Schedule {
    let n = g.len();
    let bl = g.bottom_levels(|t| t.t_ex);
    let bl_n = g.bottom_levels(|t| t.n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let primary = match objective {
            Objective::MinMakespan => bl[b].total_cmp(&bl[a]),
            Objective::MaxThroughput => bl_n[b].total_cmp(&bl_n[a]).then(bl[b].total_cmp(&bl[a])),
        };
        primary.then_with(|| g.tasks[a].id.cmp(&g.tasks[b].id))
    });

    let mut start = vec![f64::NAN; n];
    let mut finish = vec![f64::INFINITY; n];
    let mut started = 0;
    let mut t = 0.0;
    while started < n {
        let mut progress = true;
        while progress {
            progress = false;
            for &v in &order {
                if !start[v].is_nan() {
                    continue;
                }
                let ready = g.preds[v].iter().all(|&p| finish[p] <= t + EPS);
                if !ready {
                    continue;
                }
                let blocked = (0..n).any(|w| {
                    g.exclusive[v][w] && !start[w].is_nan() && start[w] <= t + EPS && finish[w] > t + EPS
                });
                if blocked {
                    continue;
                }
                start[v] = t;
                finish[v] = t + g.tasks[v].t_ex;
                started += 1;
                progress = true;
            }
        }
        if started == n {
            break;
        }
        // next finish strictly after t
        let next = (0..n)
            .filter(|&w| !start[w].is_nan() && finish[w] > t + EPS)
            .map(|w| finish[w])
            .fold(f64::INFINITY, f64::min);
        debug_assert!(next.is_finite(), "list scheduler stalled");
        t = next;
    }
    Schedule::from_starts(g, &start)
}

/// Exact minimum-makespan schedule by branch and bound over serial
/// insertion orders; `incumbent` is a known feasible schedule.
pub fn exact_schedule(g: &ResolvedGraph, objective: Objective, incumbent: Schedule) -> Schedule {
    let n = g.len();
    if n == 0 {
        return incumbent;
    }
    let bl = g.bottom_levels(|t| t.t_ex);
    let mut best_starts: Option<Vec<f64>> = None;
    let mut best_key = (incumbent.makespan, incumbent.weighted_finish());
    let mut state = Search {
        g,
        bl: &bl,
        objective,
        placed: vec![false; n],
        start: vec![0.0; n],
        finish: vec![0.0; n],
        seq: Vec::with_capacity(n),
    };
    state.dfs(&mut best_key, &mut best_starts);
    match best_starts {
        Some(s) => Schedule::from_starts(g, &s),
        None => incumbent,
    }
}

struct Search<'a> {
    g: &'a ResolvedGraph,
    bl: &'a [f64],
    objective: Objective,
    placed: Vec<bool>,
    start: Vec<f64>,
    finish: Vec<f64>,
    seq: Vec<usize>,
}

impl Search<'_> {
    fn dfs(&mut self, best: &mut (f64, f64), best_starts: &mut Option<Vec<f64>>) {
        let n = self.g.len();
        if self.seq.len() == n {
            let makespan = self.finish.iter().copied().fold(0.0, f64::max);
            let weighted: f64 = (0..n).map(|k| self.g.tasks[k].n * self.finish[k]).sum();
            let better = match self.objective {
                Objective::MinMakespan => makespan < best.0 - EPS,
                Objective::MaxThroughput => {
                    makespan < best.0 - EPS || (makespan <= best.0 + EPS && weighted < best.1 - EPS)
                }
            };
            if better {
                *best = (makespan, weighted);
                *best_starts = Some(self.start.clone());
            }
            return;
        }
        for v in 0..n {
            if self.placed[v] || !self.g.preds[v].iter().all(|&p| self.placed[p]) {
                continue;
            }
            let mut s = self.g.preds[v].iter().map(|&p| self.finish[p]).fold(0.0, f64::max);
            for &w in &self.seq {
                if self.g.exclusive[v][w] {
                    s = s.max(self.finish[w]);
                }
            }
            // lower bound: this task's chain plus everything already fixed
            let current = self.seq.iter().map(|&w| self.finish[w]).fold(0.0, f64::max);
            let bound = current.max(s + self.bl[v]);
            let prune = match self.objective {
                Objective::MinMakespan => bound >= best.0 - EPS,
                Objective::MaxThroughput => bound > best.0 + EPS,
            };
            if prune {
                continue;
            }
            self.placed[v] = true;
            self.start[v] = s;
            self.finish[v] = s + self.g.tasks[v].t_ex;
            self.seq.push(v);
            self.dfs(best, best_starts);
            self.seq.pop();
            self.placed[v] = false;
        }
    }
}

/// List schedule, improved to the exact optimum when the graph is small.
pub fn schedule(g: &ResolvedGraph, objective: Objective) -> Schedule {
    let list = list_schedule(g, objective);
    if g.len() <= EXACT_LIMIT {
        exact_schedule(g, objective, list)
    } else {
        list
    }
}

/// Per-scenario schedules of one zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    pub columns: Vec<Schedule>,
}

impl ScheduleTable {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, s: &Scenario) -> Option<&Schedule> {
        self.columns.iter().find(|c| &c.scenario == s)
    }

    /// Area delay of each column (its makespan).
    pub fn area_delays(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.makespan).collect()
    }

    /// Header `scenario,task,start,finish,resource`; resources `;`-joined.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["scenario", "task", "start", "finish", "resource"]);
        for col in &self.columns {
            for e in &col.entries {
                let res = if e.resources.is_empty() {
                    "-".to_string()
                } else {
                    e.resources.iter().cloned().collect::<Vec<_>>().join(";")
                };
                csv.row([col.scenario.key(), e.task.clone(), sig(e.start), sig(e.finish), res]);
            }
        }
        csv.finish()
    }

    /// Header `scenario,t_area,vehicles`.
    pub fn summary_csv(&self) -> String {
        let mut csv = Csv::new(&["scenario", "t_area", "vehicles"]);
        for col in &self.columns {
            csv.row([col.scenario.key(), sig(col.makespan), sig(col.total_vehicles())]);
        }
        csv.finish()
    }
}

pub fn build_table(ctg: &Ctg, objective: Objective) -> ScheduleTable {
    build_table_with(ctg, objective, &FallbackPlan::default())
}

pub fn build_table_with(ctg: &Ctg, objective: Objective, plan: &FallbackPlan) -> ScheduleTable {
    let columns = enumerate_scenarios(ctg)
        .par_iter()
        .map(|s| schedule(&resolve_with(ctg, s, plan), objective))
        .collect();
    ScheduleTable { columns }
}

/// Timing constraints that make `itu` follow the direction changes of
/// `sched`: at the start of every run of tasks on a new approach the FSM
/// must show the state enabling that approach.
pub fn derive_timing_constraints(sched: &Schedule, itu: &str) -> Vec<TimingConstraint> {
    let mut at: Vec<&ScheduledTask> = sched
        .entries
        .iter()
        .filter(|e| !e.dummy && e.itu.as_deref() == Some(itu) && e.direction.is_some())
        .collect();
    at.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.task.cmp(&b.task)));
    let mut out = Vec::new();
    for w in at.windows(2) {
        let (prev, next) = (w[0], w[1]);
        if prev.direction != next.direction {
            // finish of the previous run plus the idle gap up to the next
            let idle = (next.start - prev.finish).max(0.0);
            let deadline = prev.finish.min(next.start) + idle;
            let state = SignalState::enabling(next.direction.expect("filtered"));
            out.push(TimingConstraint::new(deadline, state, sched.scenario.key()).expect("non-negative"));
        }
    }
    out
}

/// Constraints of `sched` at `itu` that `fsm` fails on replay.
pub fn admission_violations(fsm: &SignalFsm, sched: &Schedule, itu: &str) -> Vec<TimingConstraint> {
    replay_violations(fsm, &derive_timing_constraints(sched, itu))
}

/// Online refinement of light/heavy semantics: each site's threshold
/// tracks the running median of the vehicle counts observed there.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioClassifier {
    history: BTreeMap<String, Vec<f64>>,
}

impl ScenarioClassifier {
    pub fn observe(&mut self, site: &str, n: f64) {
        self.history.entry(site.to_string()).or_default().push(n);
    }

    pub fn median(&self, site: &str) -> Option<f64> {
        let h = self.history.get(site)?;
        if h.is_empty() {
            return None;
        }
        let mut v = h.clone();
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }

    /// Re-estimates binary thresholds once a site has `min_samples`.
    pub fn refine(&self, ctg: &mut Ctg, min_samples: usize) {
        for site in ctg.sites_mut() {
            if site.thresholds.len() != 1 {
                continue;
            }
            let enough = self.history.get(&site.id).map(|h| h.len() >= min_samples).unwrap_or(false);
            if enough {
                if let Some(m) = self.median(&site.id) {
                    site.thresholds[0] = m;
                }
            }
        }
    }

    /// Scenario for the latest counts per site.
    pub fn classify(&self, ctg: &Ctg, counts: &BTreeMap<String, f64>) -> Scenario {
        Scenario {
            labels: ctg
                .sites()
                .iter()
                .map(|s| s.label_for(counts.get(&s.id).copied().unwrap_or(0.0)).to_string())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rt(id: &str, t: f64, res: &[&str]) -> ResolvedTask {
        ResolvedTask {
            id: id.into(),
            n: 1.0,
            t_ex: t,
            resources: res.iter().map(|s| s.to_string()).collect(),
            itu: None,
            direction: None,
            dummy: false,
        }
    }

    #[test]
    fn exclusion_serializes() {
        let g = ResolvedGraph::new(vec![rt("a", 3.0, &["r"]), rt("b", 4.0, &["r"])], &[], &[]);
        assert_eq!(schedule(&g, Objective::MinMakespan).makespan, 7.0);
        assert_eq!(list_schedule(&g, Objective::MinMakespan).makespan, 7.0);
    }

    #[test]
    fn disjoint_resources_run_in_parallel() {
        let g = ResolvedGraph::new(vec![rt("a", 3.0, &["r"]), rt("b", 4.0, &["s"])], &[], &[]);
        assert_eq!(schedule(&g, Objective::MinMakespan).makespan, 4.0);
    }

    #[test]
    fn precedence_respected() {
        let g = ResolvedGraph::new(
            vec![rt("a", 2.0, &[]), rt("b", 3.0, &[]), rt("c", 1.0, &[])],
            &[(0, 1), (1, 2)],
            &[],
        );
        let s = schedule(&g, Objective::MinMakespan);
        assert_eq!(s.makespan, 6.0);
        assert_eq!(s.entry("c").unwrap().start, 5.0);
    }

    #[test]
    fn idle_intervals() {
        let g = ResolvedGraph::new(
            vec![rt("a", 2.0, &["r"]), rt("b", 5.0, &["s"]), rt("c", 1.0, &["r"])],
            &[(1, 2)],
            &[],
        );
        let s = schedule(&g, Objective::MinMakespan);
        assert_eq!(s.makespan, 6.0);
        assert_eq!(s.idle["r"], vec![(2.0, 5.0)]);
        assert!(s.idle["s"].is_empty() || s.idle["s"] == vec![(5.0, 6.0)]);
    }

    #[test]
    fn list_scheduler_can_be_suboptimal_but_exact_is_not() {
        // Greedy start of the long exclusive task delays the critical chain.
        let g = ResolvedGraph::new(
            vec![rt("a", 1.0, &["r"]), rt("b", 5.0, &["r"]), rt("c", 5.0, &[])],
            &[(0, 2)],
            &[],
        );
        let exact = schedule(&g, Objective::MinMakespan);
        assert_eq!(exact.makespan, 6.0);
        assert!(list_schedule(&g, Objective::MinMakespan).makespan >= 6.0);
    }

    fn small_ctg(sites: usize) -> Ctg {
        let mut tasks = vec![CtgTask::new("A", TaskAttr::new(1.0, 2.0))];
        let mut site_list = Vec::new();
        for k in 0..sites {
            let s = format!("S{k}");
            site_list.push(ConditionSite::binary(&s, 3.0));
            tasks.push(CtgTask::new(format!("L{k}"), TaskAttr::new(1.0, 1.0)).guarded(&s, "L"));
            tasks.push(CtgTask::new(format!("H{k}"), TaskAttr::new(2.0, 3.0)).guarded(&s, "H"));
        }
        Ctg::new(tasks, &[], site_list, &[]).unwrap()
    }

    #[test]
    fn scenario_enumeration() {
        assert_eq!(enumerate_scenarios(&small_ctg(0)).len(), 1);
        assert_eq!(enumerate_scenarios(&small_ctg(3)).len(), 8);
        let keys: Vec<String> = enumerate_scenarios(&small_ctg(2)).iter().map(|s| s.to_string()).collect();
        assert_eq!(keys, ["(L,L)", "(L,H)", "(H,L)", "(H,H)"]);
        assert_eq!(build_table(&small_ctg(0), Objective::MinMakespan).len(), 1);
    }

    #[test]
    fn resolve_picks_branch() {
        let ctg = small_ctg(1);
        let ids = |s: &str| -> Vec<String> {
            resolve(&ctg, &Scenario { labels: vec![s.into()] })
                .tasks
                .iter()
                .map(|t| t.id.clone())
                .collect()
        };
        assert_eq!(ids("L"), ["A", "L0"]);
        assert_eq!(ids("H"), ["A", "H0"]);
    }

    #[test]
    fn resolve_without_guards_is_identity() {
        let ctg = small_ctg(0);
        let g = resolve(&ctg, &Scenario { labels: vec![] });
        assert_eq!(g.tasks.len(), ctg.tasks().len());
    }

    #[test]
    fn validation_errors() {
        let t = |id: &str| CtgTask::new(id, TaskAttr::new(1.0, 1.0));
        assert_eq!(
            Ctg::new(vec![t("a"), t("a")], &[], vec![], &[]),
            Err(CtgError::DuplicateTask("a".into()))
        );
        assert!(matches!(
            Ctg::new(vec![t("a"), t("b")], &[("a", "b"), ("b", "a")], vec![], &[]),
            Err(CtgError::Cycle(_))
        ));
        assert_eq!(
            Ctg::new(vec![t("a").guarded("X", "L")], &[], vec![], &[]),
            Err(CtgError::UnknownSite("X".into()))
        );
        assert!(matches!(
            Ctg::new(vec![CtgTask::new("a", TaskAttr::new(1.0, 0.0))], &[], vec![], &[]),
            Err(CtgError::NonPositiveTime { .. })
        ));
        assert!(Ctg::new(vec![CtgTask::new("d", TaskAttr::new(0.0, 0.0)).dummy()], &[], vec![], &[]).is_ok());
    }

    #[test]
    fn single_direction_gives_no_constraints() {
        let mut a = rt("a", 2.0, &["I"]);
        a.itu = Some("I1".into());
        a.direction = Some(Direction::Primary);
        let mut b = rt("b", 2.0, &["I"]);
        b.itu = Some("I1".into());
        b.direction = Some(Direction::Primary);
        let g = ResolvedGraph::new(vec![a, b], &[], &[]);
        let s = schedule(&g, Objective::MinMakespan);
        assert!(derive_timing_constraints(&s, "I1").is_empty());
    }

    #[test]
    fn direction_change_constraint() {
        let mut a = rt("a", 2.0, &["I"]);
        a.itu = Some("I1".into());
        a.direction = Some(Direction::Primary);
        let mut b = rt("b", 3.0, &["I"]);
        b.itu = Some("I1".into());
        b.direction = Some(Direction::Secondary);
        let c = rt("c", 4.0, &[]);
        // b waits for c, leaving idle time after a
        let g = ResolvedGraph::new(vec![a, b, c], &[(2, 1)], &[]);
        let s = schedule(&g, Objective::MinMakespan);
        let cs = derive_timing_constraints(&s, "I1");
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].deadline(), 4.0);
        assert_eq!(cs[0].required, SignalState::Green);
    }

    #[test]
    fn classifier_median_threshold() {
        let mut ctg = small_ctg(1);
        let mut c = ScenarioClassifier::default();
        for n in [1.0, 9.0, 5.0] {
            c.observe("S0", n);
        }
        c.refine(&mut ctg, 3);
        assert_eq!(ctg.sites()[0].thresholds, vec![5.0]);
        let mut counts = BTreeMap::new();
        counts.insert("S0".to_string(), 5.0);
        assert_eq!(c.classify(&ctg, &counts).labels, ["L"]);
        counts.insert("S0".to_string(), 6.0);
        assert_eq!(c.classify(&ctg, &counts).labels, ["H"]);
    }

    #[test]
    fn skip_fallback_links_through() {
        let mut b = CtgTask::new("b", TaskAttr::new(1.0, 5.0));
        b.fallback = Some(Fallback::Skip);
        let ctg = Ctg::new(
            vec![
                CtgTask::new("a", TaskAttr::new(1.0, 1.0)),
                b,
                CtgTask::new("c", TaskAttr::new(1.0, 1.0)),
            ],
            &[("a", "b"), ("b", "c")],
            vec![],
            &[],
        )
        .unwrap();
        let s = Scenario { labels: vec![] };
        let mut plan = FallbackPlan::default();
        assert_eq!(schedule(&resolve_with(&ctg, &s, &plan), Objective::MinMakespan).makespan, 7.0);
        plan.active.insert("b".into());
        let g = resolve_with(&ctg, &s, &plan);
        assert_eq!(g.tasks.len(), 2);
        let sch = schedule(&g, Objective::MinMakespan);
        assert_eq!(sch.makespan, 2.0);
        assert_eq!(sch.entry("c").unwrap().start, 1.0);
    }
}
