//! TOML input files: street network, demand, conditional task graph,
//! module registry and metric inputs. See `docs/formats.md` for the grammar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::fuzzy::{FuzzyError, FuzzyParams, MembershipRow};
use crate::itu::{Direction, ItuError, SignalFsm, SignalState};
use crate::registry::{DmModule, GoalDirection, LinkRole, Registry, RegistryError};
use crate::ztcu::{ConditionSite, Ctg, CtgError, CtgTask, Fallback, Objective, TaskAttr, TaskAttrs};
use crate::world::{
    DemandProfile, EntrySpec, RoadSegment, RouteSpec, StreetNetwork, WorldError, ZoneSpec, DEFAULT_HEADWAY,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Ctg(#[from] CtgError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Itu(#[from] ItuError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

pub fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|source| ConfigError::Parse {
        path: origin.to_string(),
        source,
    })
}

fn direction(n: u8, what: &str) -> Result<Direction, ConfigError> {
    Direction::from_number(n).ok_or_else(|| invalid(format!("{what}: direction must be 1 or 2, got {n}")))
}

// ---- network -------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default, rename = "intersection")]
    intersections: Vec<IntersectionDef>,
    #[serde(rename = "segment")]
    segments: Vec<SegmentDef>,
    #[serde(default, rename = "zone")]
    zones: Vec<ZoneDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntersectionDef {
    id: String,
    #[serde(default)]
    signalized: bool,
    signal: Option<SignalDef>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalDef {
    green: f64,
    yellow: f64,
    red: f64,
    #[serde(default)]
    offset: f64,
    #[serde(default = "default_first")]
    first: String,
}

fn default_first() -> String {
    "green".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentDef {
    id: String,
    length: f64,
    speed: f64,
    #[serde(default = "one")]
    capacity: usize,
    #[serde(default)]
    shared: bool,
    from: Option<String>,
    to: Option<String>,
    direction: Option<u8>,
    headway: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ZoneDef {
    id: String,
    entries: Vec<String>,
    exits: Vec<String>,
    #[serde(default)]
    members: Vec<String>,
}

/// A street network and the signal plans of its signalized intersections.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub network: StreetNetwork,
    /// Configured plan per signalized intersection; the fixed 30/5/25
    /// fallback when none is given.
    pub signals: BTreeMap<String, SignalFsm>,
}

pub fn parse_network(text: &str, origin: &str) -> Result<NetworkConfig, ConfigError> {
    let file: NetworkFile = parse(text, origin)?;
    let mut segments = Vec::new();
    for s in file.segments {
        let mut seg = RoadSegment::new(&s.id, s.length, s.speed, s.capacity).between(s.from.as_deref(), s.to.as_deref());
        seg.shared = s.shared;
        seg.headway = s.headway.unwrap_or(DEFAULT_HEADWAY);
        if let Some(d) = s.direction {
            seg.direction = Some(direction(d, &format!("segment {}", s.id))?);
        }
        segments.push(seg);
    }
    let mut signals = BTreeMap::new();
    for n in &file.intersections {
        match (&n.signal, n.signalized) {
            (Some(_), false) => {
                return Err(invalid(format!("intersection {} has a signal plan but is not signalized", n.id)));
            }
            (Some(p), true) => {
                let first = SignalState::parse(&p.first)
                    .ok_or_else(|| invalid(format!("intersection {}: unknown state {}", n.id, p.first)))?;
                let fsm = SignalFsm::new(p.green, p.yellow, p.red, first)?.set_offset(p.offset)?;
                signals.insert(n.id.clone(), fsm);
            }
            (None, true) => {
                signals.insert(n.id.clone(), SignalFsm::fallback());
            }
            (None, false) => {}
        }
    }
    let zones = file
        .zones
        .into_iter()
        .map(|z| ZoneSpec {
            id: z.id,
            entries: z.entries,
            exits: z.exits,
            members: z.members,
        })
        .collect();
    let network = StreetNetwork::new(
        segments,
        file.intersections.iter().map(|n| (n.id.clone(), n.signalized)).collect(),
        zones,
    )?;
    Ok(NetworkConfig { network, signals })
}

// ---- demand --------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandFile {
    #[serde(default)]
    seed: u64,
    #[serde(default, rename = "route")]
    routes: Vec<RouteDef>,
    #[serde(default, rename = "entry")]
    entries: Vec<EntryDef>,
    #[serde(default, rename = "initial")]
    initial: Vec<InitialDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteDef {
    id: String,
    segments: Vec<String>,
    #[serde(default)]
    cyclic: bool,
    action: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDef {
    segment: String,
    /// `[start, end, rate]` triples.
    windows: Vec<(f64, f64, f64)>,
    /// `[route, weight]` pairs.
    routes: Vec<(String, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialDef {
    segment: String,
    route: String,
    count: usize,
}

/// Parses demand; `seed` overrides the file's seed when given. Rate windows
/// must cover `[0, horizon]` when a horizon is given.
pub fn parse_demand(
    text: &str,
    origin: &str,
    net: &StreetNetwork,
    seed: Option<u64>,
    horizon: Option<f64>,
) -> Result<DemandProfile, ConfigError> {
    let file: DemandFile = parse(text, origin)?;
    let routes = file
        .routes
        .into_iter()
        .map(|r| RouteSpec {
            id: r.id,
            segments: r.segments,
            cyclic: r.cyclic,
            action: r.action,
        })
        .collect();
    let entries = file
        .entries
        .into_iter()
        .map(|e| EntrySpec {
            segment: e.segment,
            windows: e.windows,
            routes: e.routes,
        })
        .collect();
    let initial = file
        .initial
        .into_iter()
        .map(|i| (i.segment, i.route, i.count))
        .collect();
    Ok(DemandProfile::new(
        net,
        routes,
        entries,
        initial,
        seed.unwrap_or(file.seed),
        horizon,
    )?)
}

// ---- conditional task graph ----------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CtgFile {
    #[serde(default)]
    objective: Option<String>,
    zone: Option<ZoneSetup>,
    #[serde(default, rename = "site")]
    sites: Vec<SiteDef>,
    #[serde(rename = "task")]
    tasks: Vec<TaskDef>,
    #[serde(default)]
    arcs: Vec<(String, String)>,
    #[serde(default)]
    exclusions: Vec<(String, String)>,
}

/// Where the task graph sits in the control hierarchy.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSetup {
    pub id: String,
    pub area: String,
    pub itus: Vec<String>,
    /// Vehicles to serve per horizon.
    pub throughput: u64,
    /// Seconds within which the area should complete one cycle of work.
    pub deadline: f64,
    /// Route-choice actions available to the area controller.
    #[serde(default)]
    pub actions: Vec<String>,
    /// Entry segments whose route choice follows the area policy.
    #[serde(default)]
    pub routed_entries: Vec<String>,
    /// Cycles observed before thresholds follow the running median.
    #[serde(default = "default_refine")]
    pub refine_after: usize,
}

fn default_refine() -> usize {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteDef {
    id: String,
    #[serde(default = "binary_labels")]
    labels: Vec<String>,
    thresholds: Vec<f64>,
    segment: Option<String>,
}

fn binary_labels() -> Vec<String> {
    vec!["L".into(), "H".into()]
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Num {
    Fixed(f64),
    ByLabel(BTreeMap<String, f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDef {
    id: String,
    n: Option<Num>,
    t_ex: Num,
    /// Site whose label selects `n` and `t_ex` when they are tables.
    varies_with: Option<String>,
    #[serde(default)]
    resources: Vec<String>,
    itu: Option<String>,
    direction: Option<u8>,
    segment: Option<String>,
    /// `"SITE=LABEL"`.
    guard: Option<String>,
    #[serde(default)]
    dummy: bool,
    #[serde(default)]
    shaded: bool,
    /// `"skip"` or `"reroute:TASK"`.
    fallback: Option<String>,
}

/// Task graph plus its optional place in the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct CtgConfig {
    pub ctg: Ctg,
    pub objective: Objective,
    pub zone: Option<ZoneSetup>,
}

pub fn parse_objective(s: &str) -> Result<Objective, ConfigError> {
    match s {
        "min-makespan" => Ok(Objective::MinMakespan),
        "max-throughput" => Ok(Objective::MaxThroughput),
        _ => Err(invalid(format!("unknown objective {s}"))),
    }
}

pub fn parse_ctg(text: &str, origin: &str) -> Result<CtgConfig, ConfigError> {
    let file: CtgFile = parse(text, origin)?;
    let objective = file.objective.as_deref().map(parse_objective).transpose()?.unwrap_or_default();
    let mut tasks = Vec::new();
    for t in file.tasks {
        let what = format!("task {}", t.id);
        let n = t.n.unwrap_or(Num::Fixed(0.0));
        let attrs = match (n, t.t_ex, &t.varies_with) {
            (Num::Fixed(n), Num::Fixed(te), None) => TaskAttrs::Fixed(TaskAttr::new(n, te)),
            (n, te, Some(site)) => {
                let labels: Vec<String> = match (&n, &te) {
                    (Num::ByLabel(m), _) | (_, Num::ByLabel(m)) => m.keys().cloned().collect(),
                    _ => return Err(invalid(format!("{what}: varies_with needs per-label n or t_ex"))),
                };
                let pick = |v: &Num, l: &str| -> Result<f64, ConfigError> {
                    match v {
                        Num::Fixed(x) => Ok(*x),
                        Num::ByLabel(m) => m
                            .get(l)
                            .copied()
                            .ok_or_else(|| invalid(format!("{what}: no value for label {l}"))),
                    }
                };
                let mut by_label = BTreeMap::new();
                for l in labels {
                    by_label.insert(l.clone(), TaskAttr::new(pick(&n, &l)?, pick(&te, &l)?));
                }
                TaskAttrs::ByLabel {
                    site: site.clone(),
                    by_label,
                }
            }
            _ => return Err(invalid(format!("{what}: per-label values need varies_with"))),
        };
        let mut task = CtgTask::new(&t.id, TaskAttr::new(0.0, 0.0)).with_resources(t.resources);
        task.attrs = attrs;
        task.dummy = t.dummy;
        task.shaded = t.shaded;
        task.segment = t.segment;
        match (t.itu, t.direction) {
            (Some(itu), Some(d)) => task = task.at_itu(&itu, direction(d, &what)?),
            (None, None) => {}
            _ => return Err(invalid(format!("{what}: itu and direction go together"))),
        }
        if let Some(g) = t.guard {
            let (site, label) = g
                .split_once('=')
                .ok_or_else(|| invalid(format!("{what}: guard must read SITE=LABEL")))?;
            task = task.guarded(site.trim(), label.trim());
        }
        task.fallback = match t.fallback.as_deref() {
            None => None,
            Some("skip") => Some(Fallback::Skip),
            Some(f) => match f.strip_prefix("reroute:") {
                Some(target) => Some(Fallback::Reroute(target.trim().to_string())),
                None => return Err(invalid(format!("{what}: unknown fallback {f}"))),
            },
        };
        tasks.push(task);
    }
    let sites = file
        .sites
        .into_iter()
        .map(|s| ConditionSite {
            id: s.id,
            labels: s.labels,
            thresholds: s.thresholds,
            segment: s.segment,
        })
        .collect();
    let ctg = Ctg::from_parts(tasks, &file.arcs, sites, &file.exclusions)?;
    Ok(CtgConfig {
        ctg,
        objective,
        zone: file.zone,
    })
}

// ---- registry -------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(rename = "module")]
    modules: Vec<ModuleDef>,
    #[serde(default, rename = "link")]
    links: Vec<LinkDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModuleDef {
    id: String,
    level: u32,
    /// `[quantity, direction]` pairs.
    #[serde(default)]
    goals: Vec<(String, String)>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    outputs: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDef {
    /// `module.port`
    from: String,
    to: String,
    role: String,
}

fn endpoint(s: &str) -> Result<(&str, &str), ConfigError> {
    s.split_once('.')
        .ok_or_else(|| invalid(format!("link endpoint {s} must read module.port")))
}

pub fn parse_registry(text: &str, origin: &str) -> Result<Registry, ConfigError> {
    let file: RegistryFile = parse(text, origin)?;
    let mut reg = Registry::new();
    for m in file.modules {
        let mut module = DmModule::new(&m.id, m.level);
        for (q, d) in &m.goals {
            module = module.goal(q, GoalDirection::parse(d)?);
        }
        module.inputs = m.inputs;
        module.outputs = m.outputs;
        reg.register(module)?;
    }
    for l in file.links {
        reg.wire(endpoint(&l.from)?, endpoint(&l.to)?, LinkRole::parse(&l.role)?)?;
    }
    Ok(reg)
}

// ---- fuzzy parameters -----------------------------------------------------

/// `"m,M,limit"` for all three variables.
pub fn parse_fuzzy_params(s: &str) -> Result<FuzzyParams, ConfigError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(format!("fuzzy parameters must be three numbers m,M,limit, got {s}")))?;
    match parts[..] {
        [m, big, limit] => {
            let row = MembershipRow::new(m, big, limit)?;
            Ok(FuzzyParams::new(row, row, row)?)
        }
        _ => Err(invalid(format!("fuzzy parameters must be three numbers m,M,limit, got {s}"))),
    }
}

// ---- metric inputs --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub seed: Option<u64>,
    pub flexibility: Option<FlexibilityDef>,
    pub scalability: Option<ScalabilityDef>,
    pub autonomy: Option<AutonomyDef>,
    pub efficiency: Option<EfficiencyDef>,
    pub predictability: Option<PredictabilityDef>,
}

/// Feasible region `{x : a . x <= b}` for every `[a..., b]` row, sampled
/// over the box.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexibilityDef {
    pub ranges: Vec<(f64, f64)>,
    pub constraints: Vec<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalabilityDef {
    pub p1: f64,
    pub cost1: f64,
    pub p2: f64,
    pub cost2: f64,
}

/// Piecewise-constant effort: one value per cell, performance-major.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutonomyDef {
    pub performance: Vec<f64>,
    pub area: Vec<f64>,
    pub time: Vec<f64>,
    pub effort: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyDef {
    pub grid: Vec<f64>,
    pub adaptive: Vec<f64>,
    pub single_value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictabilityDef {
    /// `[estimated, actual]` pairs.
    pub records: Vec<(f64, f64)>,
    pub limit: f64,
}

pub fn parse_metrics(text: &str, origin: &str) -> Result<MetricsFile, ConfigError> {
    parse(text, origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NET: &str = r#"
[[intersection]]
id = "X"
signalized = true
signal = { green = 20, yellow = 4, red = 16, offset = 3 }

[[segment]]
id = "a"
length = 100
speed = 10
capacity = 5
to = "X"
direction = 1

[[segment]]
id = "b"
length = 50
speed = 10
from = "X"
"#;

    #[test]
    fn network_and_demand_round_trip() {
        let cfg = parse_network(NET, "net").unwrap();
        assert_eq!(cfg.network.segments().len(), 2);
        let fsm = cfg.signals["X"];
        assert_eq!(fsm.cycle(), 40.0);
        assert_eq!(fsm.offset(), 3.0);
        let demand = r#"
seed = 9
[[route]]
id = "r"
segments = ["a", "b"]
[[entry]]
segment = "a"
windows = [[0, 100, 0.25]]
routes = [["r", 1]]
"#;
        let d = parse_demand(demand, "demand", &cfg.network, None, Some(100.0)).unwrap();
        assert_eq!(d.seed, 9);
        assert_eq!(parse_demand(demand, "demand", &cfg.network, Some(4), None).unwrap().seed, 4);
        assert!(parse_demand(demand, "demand", &cfg.network, None, Some(200.0)).is_err());
    }

    #[test]
    fn malformed_inputs_are_errors() {
        assert!(matches!(parse_network("segment = 3", "x"), Err(ConfigError::Parse { .. })));
        let bad_dir = NET.replace("direction = 1", "direction = 3");
        assert!(matches!(parse_network(&bad_dir, "x"), Err(ConfigError::Invalid(_))));
        assert!(parse_fuzzy_params("0.5,1").is_err());
        assert!(parse_fuzzy_params("1,0.5,1.2").is_err());
        assert!(parse_fuzzy_params("0.5,1,1.2").is_ok());
    }

    #[test]
    fn ctg_with_labels_and_guards() {
        let text = r#"
arcs = [["A", "B"]]

[[site]]
id = "S"
thresholds = [3]

[[task]]
id = "A"
t_ex = { L = 4, H = 9 }
n = { L = 2, H = 6 }
varies_with = "S"
resources = ["X"]
itu = "X"
direction = 2

[[task]]
id = "B"
t_ex = 5
guard = "S=H"
fallback = "skip"
"#;
        let c = parse_ctg(text, "ctg").unwrap();
        assert_eq!(c.ctg.tasks().len(), 2);
        assert_eq!(c.ctg.task("B").unwrap().fallback, Some(Fallback::Skip));
        assert!(parse_ctg(&text.replace("S=H", "S"), "ctg").is_err());
    }

    #[test]
    fn registry_links() {
        let text = r#"
[[module]]
id = "top"
level = 2
outputs = ["goals"]
[[module]]
id = "low"
level = 1
inputs = ["goals"]
[[link]]
from = "top.goals"
to = "low.goals"
role = "goal-setting"
"#;
        let r = parse_registry(text, "reg").unwrap();
        assert_eq!(r.links().len(), 1);
        assert!(parse_registry(&text.replace("goal-setting", "bribe"), "reg").is_err());
    }
}
