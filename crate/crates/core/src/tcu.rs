//! Top-level traffic coordination: a function graph of areas whose
//! performances are discrete distributions, exact end-to-end evaluation and
//! proportional goal distribution.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::atcu::{build_lp, state_marginals, Ctmdp, LpSolution, LpStatus};
use crate::fmt::{sig, Csv};

/// Probabilities must sum to one within this tolerance.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TcuError {
    #[error("probabilities must be non-negative and sum to 1 (sum {0})")]
    BadDistribution(f64),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("function graph has a cycle through {0}")]
    Cycle(String),
    #[error("solution is not optimal")]
    NotOptimal,
    #[error("total throughput capability is zero")]
    ZeroCapability,
    #[error("overrides allocate {0} cars, more than the global target {1}")]
    OverrideExceeds(u64, u64),
}

/// Finite discrete distribution, support sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfDistribution {
    support: Vec<(f64, f64)>,
}

impl PerfDistribution {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self, TcuError> {
        let total: f64 = pairs.iter().map(|(_, p)| p).sum();
        if pairs.is_empty() || pairs.iter().any(|&(v, p)| !(p >= 0.0) || !v.is_finite()) || (total - 1.0).abs() > PROB_TOL {
            return Err(TcuError::BadDistribution(total));
        }
        Ok(Self::merged(pairs))
    }

    pub fn point(v: f64) -> Self {
        PerfDistribution { support: vec![(v, 1.0)] }
    }

    fn merged(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            match support.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => support.push((v, p)),
            }
        }
        PerfDistribution { support }
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn prob(&self, v: f64) -> f64 {
        self.support.iter().find(|(x, _)| *x == v).map(|(_, p)| *p).unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    pub fn expectation(&self) -> f64 {
        self.support.iter().map(|(v, p)| v * p).sum()
    }

    /// Distribution of `X + Y` for independent X, Y.
    pub fn convolve(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a + b)
    }

    /// Distribution of `max(X, Y)` for independent X, Y.
    pub fn max(&self, other: &Self) -> Self {
        self.combine(other, f64::max)
    }

    fn combine(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut pairs = Vec::with_capacity(self.support.len() * other.support.len());
        for &(a, p) in &self.support {
            for &(b, q) in &other.support {
                pairs.push((f(a, b), p * q));
            }
        }
        let d = Self::merged(pairs);
        debug_assert!((d.total() - self.total() * other.total()).abs() < 1e-9);
        d
    }

    fn scaled_into(&self, weight: f64, acc: &mut Vec<(f64, f64)>) {
        acc.extend(self.support.iter().map(|&(v, p)| (v, p * weight)));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgNode {
    pub id: String,
    pub dist: PerfDistribution,
    /// Expected throughput capability (cars per period).
    pub capability: f64,
}

impl FgNode {
    pub fn new(id: impl Into<String>, dist: PerfDistribution, capability: f64) -> Self {
        FgNode {
            id: id.into(),
            dist,
            capability,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionGraph {
    nodes: Vec<FgNode>,
    preds: Vec<Vec<usize>>,
}

impl FunctionGraph {
    pub fn new(nodes: Vec<FgNode>, arcs: &[(&str, &str)]) -> Result<Self, TcuError> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.id.clone()) {
                return Err(TcuError::DuplicateNode(n.id.clone()));
            }
        }
        let idx = |id: &str| {
            nodes
                .iter()
                .position(|n| n.id == id)
                .ok_or_else(|| TcuError::UnknownNode(id.to_string()))
        };
        let mut preds = vec![Vec::new(); nodes.len()];
        for (a, b) in arcs {
            let (a, b) = (idx(a)?, idx(b)?);
            if !preds[b].contains(&a) {
                preds[b].push(a);
            }
        }
        let g = FunctionGraph { nodes, preds };
        if g.topo_order().len() != g.nodes.len() {
            let order: BTreeSet<usize> = g.topo_order().into_iter().collect();
            let k = (0..g.nodes.len()).find(|k| !order.contains(k)).expect("cycle node");
            return Err(TcuError::Cycle(g.nodes[k].id.clone()));
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[FgNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&FgNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn arcs(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (b, ps) in self.preds.iter().enumerate() {
            for &a in ps {
                out.push((self.nodes[a].id.as_str(), self.nodes[b].id.as_str()));
            }
        }
        out
    }

    fn succs(&self) -> Vec<Vec<usize>> {
        let mut s = vec![Vec::new(); self.nodes.len()];
        for (b, ps) in self.preds.iter().enumerate() {
            for &a in ps {
                s[a].push(b);
            }
        }
        s
    }

    fn topo_order(&self) -> Vec<usize> {
        let succs = self.succs();
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.nodes.len()).filter(|&k| indeg[k] == 0).collect();
        let mut order = Vec::new();
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

    /// Weakly connected components, each sorted, in order of first node.
    fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut comp = vec![usize::MAX; n];
        let succs = self.succs();
        let mut out = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let c = out.len();
            let mut stack = vec![s];
            let mut members = Vec::new();
            comp[s] = c;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &w in self.preds[v].iter().chain(&succs[v]) {
                    if comp[w] == usize::MAX {
                        comp[w] = c;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Replaces a node's distribution with the state-occupation mixture of
    /// area delays and its capability with the LP objective.
    pub fn attach(&mut self, node: &str, sol: &LpSolution, m: &Ctmdp) -> Result<(), TcuError> {
        if sol.status != LpStatus::Optimal {
            return Err(TcuError::NotOptimal);
        }
        let k = self
            .nodes
            .iter()
            .position(|n| n.id == node)
            .ok_or_else(|| TcuError::UnknownNode(node.to_string()))?;
        let dist = occupation_distribution(sol, m)?;
        self.nodes[k].dist = dist;
        self.nodes[k].capability = sol.objective;
        Ok(())
    }
}

/// Mixture over states of their area delay, weighted by `sum_a x_{i,a}`.
pub fn occupation_distribution(sol: &LpSolution, m: &Ctmdp) -> Result<PerfDistribution, TcuError> {
    let lp = build_lp(m);
    let marg = state_marginals(sol, &lp, m.states().len());
    let total: f64 = marg.iter().sum();
    let pairs = marg
        .iter()
        .zip(m.area_delay())
        .filter(|(p, _)| **p > 0.0)
        .map(|(&p, &v)| (v, p / total))
        .collect();
    PerfDistribution::new(pairs)
}

/// Completion-time distributions of a function graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Per sink (node without successors).
    pub sinks: Vec<(String, PerfDistribution)>,
    /// Per weakly connected component: latest completion over its sinks.
    pub components: Vec<(Vec<String>, PerfDistribution)>,
    /// Latest completion over every sink.
    pub end_to_end: PerfDistribution,
}

impl Evaluation {
    pub fn expectation(&self) -> f64 {
        self.end_to_end.expectation()
    }
}

/// Exact evaluation: a node completes its own time after its latest
/// predecessor. Nodes feeding more than one successor (and their
/// ancestors) are enumerated jointly; what remains is a forest of
/// independent chains composed by convolution and maximum.
pub fn evaluate(fg: &FunctionGraph) -> Evaluation {
    let n = fg.nodes.len();
    let succs = fg.succs();
    let order = fg.topo_order();
    let mut fixed = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&v| succs[v].len() >= 2).collect();
    while let Some(v) = stack.pop() {
        if !fixed[v] {
            fixed[v] = true;
            stack.extend(fg.preds[v].iter().copied());
        }
    }
    let fixed_nodes: Vec<usize> = (0..n).filter(|&v| fixed[v]).collect();
    let sinks: Vec<usize> = (0..n).filter(|&v| succs[v].is_empty()).collect();
    let comps = fg.components();

    let mut sink_acc: Vec<Vec<(f64, f64)>> = vec![Vec::new(); sinks.len()];
    let mut comp_acc: Vec<Vec<(f64, f64)>> = vec![Vec::new(); comps.len()];
    let mut all_acc: Vec<(f64, f64)> = Vec::new();

    let mut digits = vec![0usize; fixed_nodes.len()];
    loop {
        let mut weight = 1.0;
        let mut value = vec![0.0; n];
        for (k, &v) in fixed_nodes.iter().enumerate() {
            let (x, p) = fg.nodes[v].dist.support[digits[k]];
            value[v] = x;
            weight *= p;
        }
        if weight > 0.0 {
            let mut done: Vec<Option<PerfDistribution>> = vec![None; n];
            for &v in &order {
                let mut start = PerfDistribution::point(0.0);
                for &p in &fg.preds[v] {
                    start = start.max(done[p].as_ref().expect("topological"));
                }
                let own = if fixed[v] {
                    PerfDistribution::point(value[v])
                } else {
                    fg.nodes[v].dist.clone()
                };
                done[v] = Some(start.convolve(&own));
            }
            let latest = |set: &[usize]| {
                set.iter()
                    .filter(|v| succs[**v].is_empty())
                    .fold(PerfDistribution::point(0.0), |acc, &v| acc.max(done[v].as_ref().expect("done")))
            };
            for (k, &s) in sinks.iter().enumerate() {
                done[s].as_ref().expect("done").scaled_into(weight, &mut sink_acc[k]);
            }
            for (k, c) in comps.iter().enumerate() {
                latest(c).scaled_into(weight, &mut comp_acc[k]);
            }
            latest(&sinks).scaled_into(weight, &mut all_acc);
        }
        // odometer over the joint support of fixed nodes
        let mut k = 0;
        loop {
            if k == digits.len() {
                let name = |set: &[usize]| set.iter().map(|&v| fg.nodes[v].id.clone()).collect();
                return Evaluation {
                    sinks: sinks
                        .iter()
                        .zip(sink_acc)
                        .map(|(&s, acc)| (fg.nodes[s].id.clone(), PerfDistribution::merged(acc)))
                        .collect(),
                    components: comps
                        .iter()
                        .zip(comp_acc)
                        .map(|(c, acc)| (name(c), PerfDistribution::merged(acc)))
                        .collect(),
                    end_to_end: PerfDistribution::merged(all_acc),
                };
            }
            digits[k] += 1;
            if digits[k] < fg.nodes[fixed_nodes[k]].dist.support.len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalGoal {
    pub throughput: u64,
    pub deadline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub node: String,
    pub throughput: u64,
    pub deadline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalAllocation {
    pub entries: Vec<Allocation>,
}

impl GoalAllocation {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.throughput).sum()
    }

    pub fn get(&self, node: &str) -> Option<&Allocation> {
        self.entries.iter().find(|e| e.node == node)
    }

    /// Header `node,throughput,deadline`.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["node", "throughput", "deadline"]);
        for e in &self.entries {
            csv.row([e.node.clone(), e.throughput.to_string(), sig(e.deadline)]);
        }
        csv.finish()
    }
}

/// Splits `total` in proportion to `weights` with largest-remainder
/// rounding (ties go to the earlier entry).
pub fn largest_remainder(total: u64, weights: &[f64]) -> Option<Vec<u64>> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return None;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        out[k] += 1;
    }
    Some(out)
}

pub fn distribute_goals(fg: &FunctionGraph, global: GlobalGoal) -> Result<GoalAllocation, TcuError> {
    distribute_goals_with_override(fg, global, &BTreeMap::new())
}

/// As [`distribute_goals`], with manually fixed targets for some nodes; the
/// rest of the global target is split among the others.
pub fn distribute_goals_with_override(
    fg: &FunctionGraph,
    global: GlobalGoal,
    overrides: &BTreeMap<String, u64>,
) -> Result<GoalAllocation, TcuError> {
    for id in overrides.keys() {
        if fg.node(id).is_none() {
            return Err(TcuError::UnknownNode(id.clone()));
        }
    }
    let fixed: u64 = overrides.values().sum();
    if fixed > global.throughput {
        return Err(TcuError::OverrideExceeds(fixed, global.throughput));
    }
    let free: Vec<usize> = (0..fg.nodes.len())
        .filter(|&k| !overrides.contains_key(&fg.nodes[k].id))
        .collect();
    let weights: Vec<f64> = free.iter().map(|&k| fg.nodes[k].capability.max(0.0)).collect();
    let rest = global.throughput - fixed;
    let split = if free.is_empty() {
        Vec::new()
    } else {
        largest_remainder(rest, &weights).ok_or(TcuError::ZeroCapability)?
    };
    let e2e = evaluate(fg).expectation();
    let entries = fg
        .nodes
        .iter()
        .enumerate()
        .map(|(k, node)| {
            let throughput = overrides
                .get(&node.id)
                .copied()
                .unwrap_or_else(|| split[free.iter().position(|&f| f == k).expect("free node")]);
            let share = if e2e > 0.0 { node.dist.expectation() / e2e } else { 0.0 };
            Allocation {
                node: node.id.clone(),
                throughput,
                deadline: global.deadline * share,
            }
        })
        .collect();
    Ok(GoalAllocation { entries })
}

/// Header `node,value,p`.
pub fn distribution_csv(rows: &[(String, PerfDistribution)]) -> String {
    let mut csv = Csv::new(&["node", "value", "p"]);
    for (id, d) in rows {
        for &(v, p) in d.support() {
            csv.row([id.clone(), sig(v), sig(p)]);
        }
    }
    csv.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(pairs: &[(f64, f64)]) -> PerfDistribution {
        PerfDistribution::new(pairs.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_distribution() {
        assert!(PerfDistribution::new(vec![(1.0, 0.5)]).is_err());
        assert!(PerfDistribution::new(vec![(1.0, -0.5), (2.0, 1.5)]).is_err());
        assert!(PerfDistribution::new(vec![]).is_err());
    }

    #[test]
    fn single_node() {
        let fg = FunctionGraph::new(vec![FgNode::new("a", d(&[(10.0, 1.0)]), 1.0)], &[]).unwrap();
        assert_eq!(evaluate(&fg).expectation(), 10.0);
    }

    #[test]
    fn chain_with_point_mass() {
        let fg = FunctionGraph::new(
            vec![
                FgNode::new("a", d(&[(10.0, 0.5), (20.0, 0.5)]), 1.0),
                FgNode::new("b", d(&[(5.0, 1.0)]), 1.0),
            ],
            &[("a", "b")],
        )
        .unwrap();
        let e = evaluate(&fg);
        assert_eq!(e.end_to_end, d(&[(15.0, 0.5), (25.0, 0.5)]));
        assert_eq!(e.expectation(), 20.0);
    }

    #[test]
    fn unconnected_nodes_are_separate_components() {
        let fg = FunctionGraph::new(
            vec![FgNode::new("a", d(&[(3.0, 1.0)]), 1.0), FgNode::new("b", d(&[(7.0, 1.0)]), 1.0)],
            &[],
        )
        .unwrap();
        let e = evaluate(&fg);
        assert_eq!(e.components.len(), 2);
        assert_eq!(e.components[0].1.expectation(), 3.0);
        assert_eq!(e.sinks.len(), 2);
    }

    #[test]
    fn cycle_rejected() {
        let n = |id: &str| FgNode::new(id, PerfDistribution::point(1.0), 1.0);
        assert!(matches!(
            FunctionGraph::new(vec![n("a"), n("b")], &[("a", "b"), ("b", "a")]),
            Err(TcuError::Cycle(_))
        ));
    }

    #[test]
    fn proportional_split() {
        let n = |id: &str, c: f64| FgNode::new(id, PerfDistribution::point(10.0), c);
        let g = GlobalGoal {
            throughput: 100,
            deadline: 60.0,
        };
        let fg = FunctionGraph::new(vec![n("a", 1.0), n("b", 1.0)], &[]).unwrap();
        let a = distribute_goals(&fg, g).unwrap();
        assert_eq!((a.entries[0].throughput, a.entries[1].throughput), (50, 50));
        let fg = FunctionGraph::new(vec![n("a", 30.0), n("b", 10.0)], &[]).unwrap();
        let a = distribute_goals(&fg, g).unwrap();
        assert_eq!((a.entries[0].throughput, a.entries[1].throughput), (75, 25));
        let fg = FunctionGraph::new(vec![n("a", 0.0), n("b", 0.0)], &[]).unwrap();
        assert_eq!(distribute_goals(&fg, g), Err(TcuError::ZeroCapability));
    }

    #[test]
    fn override_takes_precedence() {
        let n = |id: &str, c: f64| FgNode::new(id, PerfDistribution::point(10.0), c);
        let fg = FunctionGraph::new(vec![n("a", 1.0), n("b", 1.0), n("c", 2.0)], &[]).unwrap();
        let mut o = BTreeMap::new();
        o.insert("a".to_string(), 40);
        let g = GlobalGoal {
            throughput: 100,
            deadline: 60.0,
        };
        let a = distribute_goals_with_override(&fg, g, &o).unwrap();
        assert_eq!(a.total(), 100);
        assert_eq!(a.get("a").unwrap().throughput, 40);
        assert_eq!(a.get("c").unwrap().throughput, 40);
        o.insert("b".to_string(), 70);
        assert!(matches!(
            distribute_goals_with_override(&fg, g, &o),
            Err(TcuError::OverrideExceeds(110, 100))
        ));
    }

    #[test]
    fn chain_deadlines_sum_to_global() {
        let fg = FunctionGraph::new(
            vec![
                FgNode::new("a", PerfDistribution::point(10.0), 1.0),
                FgNode::new("b", PerfDistribution::point(30.0), 1.0),
            ],
            &[("a", "b")],
        )
        .unwrap();
        let a = distribute_goals(
            &fg,
            GlobalGoal {
                throughput: 10,
                deadline: 80.0,
            },
        )
        .unwrap();
        assert_eq!(a.get("a").unwrap().deadline, 20.0);
        assert_eq!(a.get("b").unwrap().deadline, 60.0);
    }
}
