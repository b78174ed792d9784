//! Goal-oriented description of decision-making modules and classification
//! of the links between them into the four interaction kinds.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::fmt::Csv;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("duplicate module {0}")]
    DuplicateModule(String),
    #[error("module {module} declares port {port} twice")]
    DuplicatePort { module: String, port: String },
    #[error("unknown module {0}")]
    UnknownModule(String),
    #[error("module {module} has no {side} port {port}")]
    UnknownPort {
        module: String,
        port: String,
        side: &'static str,
    },
    #[error("{role} link {src} -> {dst} must join consecutive levels ({src_level} -> {dst_level})")]
    LevelGap {
        src: String,
        dst: String,
        role: LinkRole,
        src_level: u32,
        dst_level: u32,
    },
    #[error("{role} link {src} -> {dst} does not match any interaction kind")]
    Unclassifiable { src: String, dst: String, role: LinkRole },
    #[error("unknown {what} '{value}'")]
    Parse { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GoalDirection {
    Maximize,
    Minimize,
    /// Keep the quantity at its bound; never in conflict.
    Hold,
}

impl GoalDirection {
    pub fn parse(s: &str) -> Result<Self, RegistryError> {
        match s {
            "maximize" | "max" => Ok(GoalDirection::Maximize),
            "minimize" | "min" => Ok(GoalDirection::Minimize),
            "hold" => Ok(GoalDirection::Hold),
            _ => Err(RegistryError::Parse {
                what: "goal direction",
                value: s.into(),
            }),
        }
    }

    fn opposes(self, other: GoalDirection) -> bool {
        matches!(
            (self, other),
            (GoalDirection::Maximize, GoalDirection::Minimize) | (GoalDirection::Minimize, GoalDirection::Maximize)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub quantity: String,
    pub direction: GoalDirection,
    pub bound: Option<f64>,
}

impl Goal {
    pub fn new(quantity: impl Into<String>, direction: GoalDirection) -> Self {
        Goal {
            quantity: quantity.into(),
            direction,
            bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capability {
    pub quantity: String,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmModule {
    pub id: String,
    pub level: u32,
    pub goals: Vec<Goal>,
    pub capabilities: Vec<Capability>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl DmModule {
    pub fn new(id: impl Into<String>, level: u32) -> Self {
        DmModule {
            id: id.into(),
            level,
            goals: Vec::new(),
            capabilities: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn goal(mut self, quantity: &str, direction: GoalDirection) -> Self {
        self.goals.push(Goal::new(quantity, direction));
        self
    }

    pub fn ports(mut self, inputs: &[&str], outputs: &[&str]) -> Self {
        self.inputs = inputs.iter().map(|s| s.to_string()).collect();
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self
    }

    fn validate(&self) -> Result<(), RegistryError> {
        for ports in [&self.inputs, &self.outputs] {
            let mut seen = BTreeSet::new();
            for p in ports {
                if !seen.insert(p) {
                    return Err(RegistryError::DuplicatePort {
                        module: self.id.clone(),
                        port: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Whether the two modules pursue opposing goals on a shared quantity.
    pub fn conflicts_with(&self, other: &DmModule) -> bool {
        self.goals.iter().any(|a| {
            other
                .goals
                .iter()
                .any(|b| a.quantity == b.quantity && a.direction.opposes(b.direction))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkRole {
    Data,
    GoalSetting,
    CapabilityReport,
}

impl LinkRole {
    pub fn parse(s: &str) -> Result<Self, RegistryError> {
        match s {
            "data" => Ok(LinkRole::Data),
            "goal-setting" | "goal" => Ok(LinkRole::GoalSetting),
            "capability-report" | "capability" => Ok(LinkRole::CapabilityReport),
            _ => Err(RegistryError::Parse {
                what: "link role",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for LinkRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkRole::Data => "data",
            LinkRole::GoalSetting => "goal-setting",
            LinkRole::CapabilityReport => "capability-report",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InteractionKind {
    Collaborative,
    Competing,
    Guiding,
    Enabling,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 4] = [
        InteractionKind::Collaborative,
        InteractionKind::Competing,
        InteractionKind::Guiding,
        InteractionKind::Enabling,
    ];
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InteractionKind::Collaborative => "Collaborative",
            InteractionKind::Competing => "Competing",
            InteractionKind::Guiding => "Guiding",
            InteractionKind::Enabling => "Enabling",
        })
    }
}

/// Interaction kind of a link from `src` to `dst`.
pub fn classify(src: &DmModule, dst: &DmModule, role: LinkRole) -> Result<InteractionKind, RegistryError> {
    let gap = |_: ()| RegistryError::LevelGap {
        src: src.id.clone(),
        dst: dst.id.clone(),
        role,
        src_level: src.level,
        dst_level: dst.level,
    };
    if src.level == dst.level {
        if src.conflicts_with(dst) {
            return Ok(InteractionKind::Competing);
        }
        return match role {
            LinkRole::Data => Ok(InteractionKind::Collaborative),
            _ => Err(gap(())),
        };
    }
    match role {
        LinkRole::GoalSetting if src.level == dst.level + 1 => Ok(InteractionKind::Guiding),
        LinkRole::CapabilityReport if src.level + 1 == dst.level => Ok(InteractionKind::Enabling),
        LinkRole::GoalSetting | LinkRole::CapabilityReport => Err(gap(())),
        LinkRole::Data => Err(RegistryError::Unclassifiable {
            src: src.id.clone(),
            dst: dst.id.clone(),
            role,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub id: usize,
    pub src: String,
    pub src_port: String,
    pub dst: String,
    pub dst_port: String,
    pub role: LinkRole,
    pub kind: InteractionKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    modules: Vec<DmModule>,
    links: Vec<Link>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register(&mut self, m: DmModule) -> Result<String, RegistryError> {
        if self.get(&m.id).is_some() {
            return Err(RegistryError::DuplicateModule(m.id));
        }
        m.validate()?;
        let id = m.id.clone();
        self.modules.push(m);
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<&DmModule> {
        self.modules.iter().find(|m| m.id == id)
    }

    pub fn modules(&self) -> &[DmModule] {
        &self.modules
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    fn module(&self, id: &str) -> Result<&DmModule, RegistryError> {
        self.get(id).ok_or_else(|| RegistryError::UnknownModule(id.to_string()))
    }

    /// Records a link from an output port to an input port.
    pub fn wire(
        &mut self,
        src: (&str, &str),
        dst: (&str, &str),
        role: LinkRole,
    ) -> Result<usize, RegistryError> {
        let s = self.module(src.0)?;
        let d = self.module(dst.0)?;
        if !s.outputs.iter().any(|p| p == src.1) {
            return Err(RegistryError::UnknownPort {
                module: src.0.into(),
                port: src.1.into(),
                side: "output",
            });
        }
        if !d.inputs.iter().any(|p| p == dst.1) {
            return Err(RegistryError::UnknownPort {
                module: dst.0.into(),
                port: dst.1.into(),
                side: "input",
            });
        }
        let kind = classify(s, d, role)?;
        let id = self.links.len();
        self.links.push(Link {
            id,
            src: src.0.into(),
            src_port: src.1.into(),
            dst: dst.0.into(),
            dst_port: dst.1.into(),
            role,
            kind,
        });
        Ok(id)
    }

    /// Whether a link of `kind` runs from `src` to `dst`.
    pub fn has_link(&self, src: &str, dst: &str, kind: InteractionKind) -> bool {
        self.links.iter().any(|l| l.src == src && l.dst == dst && l.kind == kind)
    }

    pub fn kinds_present(&self) -> BTreeSet<InteractionKind> {
        self.links.iter().map(|l| l.kind).collect()
    }

    /// Header `src,dst,role,kind`; endpoints as `module.port`.
    pub fn report_csv(&self) -> String {
        let mut csv = Csv::new(&["src", "dst", "role", "kind"]);
        for l in &self.links {
            csv.row([
                format!("{}.{}", l.src, l.src_port),
                format!("{}.{}", l.dst, l.dst_port),
                l.role.to_string(),
                l.kind.to_string(),
            ]);
        }
        csv.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GoalDirection::*;

    #[test]
    fn four_kinds() {
        let itu1 = DmModule::new("ITU1", 1).goal("throughput", Maximize);
        let itu2 = DmModule::new("ITU2", 1).goal("throughput", Maximize);
        let ztcu = DmModule::new("ZTCU", 2).goal("throughput", Maximize);
        let light = DmModule::new("ZLCU", 1).goal("zone energy", Maximize);
        let power = DmModule::new("PWR", 1).goal("zone energy", Minimize);
        assert_eq!(classify(&itu1, &itu2, LinkRole::Data), Ok(InteractionKind::Collaborative));
        assert_eq!(classify(&light, &power, LinkRole::Data), Ok(InteractionKind::Competing));
        assert_eq!(classify(&power, &light, LinkRole::Data), Ok(InteractionKind::Competing));
        assert_eq!(classify(&ztcu, &itu1, LinkRole::GoalSetting), Ok(InteractionKind::Guiding));
        assert_eq!(classify(&itu1, &ztcu, LinkRole::CapabilityReport), Ok(InteractionKind::Enabling));
    }

    #[test]
    fn hold_never_conflicts() {
        let a = DmModule::new("a", 1).goal("q", Hold);
        let b = DmModule::new("b", 1).goal("q", Minimize);
        assert_eq!(classify(&a, &b, LinkRole::Data), Ok(InteractionKind::Collaborative));
    }

    #[test]
    fn level_skip_rejected() {
        let tcu = DmModule::new("TCU", 4);
        let itu = DmModule::new("ITU", 1);
        assert!(matches!(
            classify(&tcu, &itu, LinkRole::GoalSetting),
            Err(RegistryError::LevelGap { .. })
        ));
        assert!(matches!(
            classify(&itu, &tcu, LinkRole::GoalSetting),
            Err(RegistryError::LevelGap { .. })
        ));
    }

    #[test]
    fn register_and_wire() {
        let mut r = Registry::new();
        r.register(DmModule::new("Z", 2).ports(&["up"], &["goals"])).unwrap();
        r.register(DmModule::new("I", 1).ports(&["goals"], &["report"])).unwrap();
        assert_eq!(
            r.register(DmModule::new("I", 1)),
            Err(RegistryError::DuplicateModule("I".into()))
        );
        assert!(matches!(
            r.register(DmModule::new("X", 1).ports(&["a", "a"], &[])),
            Err(RegistryError::DuplicatePort { .. })
        ));
        r.wire(("Z", "goals"), ("I", "goals"), LinkRole::GoalSetting).unwrap();
        r.wire(("I", "report"), ("Z", "up"), LinkRole::CapabilityReport).unwrap();
        assert!(r.has_link("Z", "I", InteractionKind::Guiding));
        assert!(r.has_link("I", "Z", InteractionKind::Enabling));
        assert!(matches!(
            r.wire(("Z", "nope"), ("I", "goals"), LinkRole::GoalSetting),
            Err(RegistryError::UnknownPort { .. })
        ));
        assert_eq!(r.report_csv().lines().count(), 3);
    }
}
