//! Area traffic control: a constrained continuous-time Markov decision
//! process over traffic scenarios, its occupation-measure linear program,
//! a dense two-phase simplex solver and policy extraction.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::fmt::{parse_csv, sig, Csv};
use crate::ztcu::ScheduleTable;

/// Pivot tolerance of the simplex.
pub const PIVOT_TOL: f64 = 1e-10;
/// Phase-one objective above this means the LP is infeasible.
pub const FEAS_TOL: f64 = 1e-9;
pub const DEFAULT_ITERATION_LIMIT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmdpError {
    #[error("negative rate q({i},{j},{a}) = {q}")]
    NegativeRate { i: String, j: String, a: String, q: f64 },
    #[error("state {0} has no admissible action")]
    NoAction(String),
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error("unknown action {0}")]
    UnknownAction(String),
    #[error("action {a} is not admissible in state {i}")]
    NotAdmissible { i: String, a: String },
    #[error("reward rows must be k x states x actions and finite")]
    BadRewards,
    #[error("{0} reward bounds given for {1} criteria")]
    BadBounds(usize, usize),
    #[error("malformed CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("solution is not optimal")]
    NotOptimal,
}

/// The tuple {I, A, A(i), q, k, r} plus constraint bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Ctmdp {
    states: Vec<String>,
    actions: Vec<String>,
    admissible: Vec<Vec<usize>>,
    /// `q[a][i][j]`, diagonal holds minus the exit rate.
    q: Vec<Vec<Vec<f64>>>,
    /// `rewards[k][i][a]`.
    rewards: Vec<Vec<Vec<f64>>>,
    /// `bounds[k - 1]` is c_k for criteria k >= 2.
    bounds: Vec<f64>,
    /// Makespan of the schedule behind each state.
    area_delay: Vec<f64>,
    /// (state, action) pairs whose rates come from the uniform prior.
    prior: Vec<(usize, usize)>,
}

impl Ctmdp {
    /// `rates` lists off-diagonal entries `(i, j, a, q)`; missing entries are
    /// zero. `rewards[k][i][a]` with k = 0 the objective; `bounds` holds one
    /// lower bound per extra criterion.
    pub fn new(
        states: Vec<String>,
        actions: Vec<String>,
        admissible: Vec<Vec<usize>>,
        rates: &[(usize, usize, usize, f64)],
        rewards: Vec<Vec<Vec<f64>>>,
        bounds: Vec<f64>,
    ) -> Result<Self, CtmdpError> {
        let (ni, na) = (states.len(), actions.len());
        for (i, adm) in admissible.iter().enumerate() {
            if adm.is_empty() || adm.iter().any(|&a| a >= na) {
                return Err(CtmdpError::NoAction(states[i].clone()));
            }
        }
        if admissible.len() != ni {
            return Err(CtmdpError::BadRewards);
        }
        let mut q = vec![vec![vec![0.0; ni]; ni]; na];
        for &(i, j, a, rate) in rates {
            if i >= ni || j >= ni {
                return Err(CtmdpError::UnknownState(format!("#{}", i.max(j))));
            }
            if a >= na {
                return Err(CtmdpError::UnknownAction(format!("#{a}")));
            }
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(CtmdpError::NegativeRate {
                    i: states[i].clone(),
                    j: states[j].clone(),
                    a: actions[a].clone(),
                    q: rate,
                });
            }
            if !admissible[i].contains(&a) {
                return Err(CtmdpError::NotAdmissible {
                    i: states[i].clone(),
                    a: actions[a].clone(),
                });
            }
            if i != j {
                q[a][i][j] += rate;
            }
        }
        for qa in q.iter_mut() {
            for (i, row) in qa.iter_mut().enumerate() {
                row[i] = 0.0;
                let out: f64 = row.iter().sum();
                row[i] = -out;
            }
        }
        let shape_ok = !rewards.is_empty()
            && rewards
                .iter()
                .all(|rk| rk.len() == ni && rk.iter().all(|r| r.len() == na && r.iter().all(|v| v.is_finite())));
        if !shape_ok {
            return Err(CtmdpError::BadRewards);
        }
        if bounds.len() + 1 != rewards.len() {
            return Err(CtmdpError::BadBounds(bounds.len(), rewards.len()));
        }
        Ok(Ctmdp {
            states,
            actions,
            admissible,
            q,
            rewards,
            bounds,
            area_delay: vec![0.0; ni],
            prior: Vec::new(),
        })
    }

    pub fn with_area_delay(mut self, delay: Vec<f64>) -> Self {
        assert_eq!(delay.len(), self.states.len());
        self.area_delay = delay;
        self
    }

    /// Adds the criterion `expected area delay <= max_delay`.
    pub fn with_delay_bound(mut self, max_delay: f64) -> Self {
        let ni = self.states.len();
        let na = self.actions.len();
        let row = (0..ni).map(|i| vec![-self.area_delay[i]; na]).collect();
        self.rewards.push(row);
        self.bounds.push(-max_delay);
        self
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn admissible(&self, i: usize) -> &[usize] {
        &self.admissible[i]
    }

    pub fn rate(&self, i: usize, j: usize, a: usize) -> f64 {
        self.q[a][i][j]
    }

    pub fn exit_rate(&self, i: usize, a: usize) -> f64 {
        -self.q[a][i][i]
    }

    pub fn reward(&self, k: usize, i: usize, a: usize) -> f64 {
        self.rewards[k][i][a]
    }

    pub fn criteria(&self) -> usize {
        self.rewards.len()
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn area_delay(&self) -> &[f64] {
        &self.area_delay
    }

    /// State-action pairs whose rates were filled from the prior.
    pub fn prior_pairs(&self) -> &[(usize, usize)] {
        &self.prior
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Largest absolute generator row sum.
    pub fn max_row_sum(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, adm) in self.admissible.iter().enumerate() {
            for &a in adm {
                worst = worst.max(self.q[a][i].iter().sum::<f64>().abs());
            }
        }
        worst
    }

    /// Exports `(rates, rewards, states)` CSV texts.
    pub fn to_csv(&self) -> (String, String, String) {
        let mut rates = Csv::new(&["i", "j", "a", "q"]);
        for (i, adm) in self.admissible.iter().enumerate() {
            for &a in adm {
                for j in 0..self.states.len() {
                    if j != i && self.q[a][i][j] > 0.0 {
                        rates.row([
                            self.states[i].clone(),
                            self.states[j].clone(),
                            self.actions[a].clone(),
                            sig(self.q[a][i][j]),
                        ]);
                    }
                }
            }
        }
        let mut rewards = Csv::new(&["i", "a", "k", "r", "c"]);
        for k in 0..self.criteria() {
            let c = if k == 0 { "-".to_string() } else { sig(self.bounds[k - 1]) };
            for (i, adm) in self.admissible.iter().enumerate() {
                for &a in adm {
                    rewards.row([
                        self.states[i].clone(),
                        self.actions[a].clone(),
                        (k + 1).to_string(),
                        sig(self.rewards[k][i][a]),
                        c.clone(),
                    ]);
                }
            }
        }
        let mut states = Csv::new(&["i", "t_area", "prior"]);
        for (i, s) in self.states.iter().enumerate() {
            let flagged = self.prior.iter().any(|&(p, _)| p == i);
            states.row([s.clone(), sig(self.area_delay[i]), u8::from(flagged).to_string()]);
        }
        (rates.finish(), rewards.finish(), states.finish())
    }

    /// Inverse of [`Ctmdp::to_csv`]. States and actions appear in first-seen
    /// order of the rewards file; admissible pairs are those with a k = 1 row.
    pub fn from_csv(rates: &str, rewards: &str, states_csv: &str) -> Result<Self, CtmdpError> {
        let bad = |line: usize, msg: &str| CtmdpError::Csv {
            line,
            msg: msg.to_string(),
        };
        let num = |s: &str, line: usize| s.parse::<f64>().map_err(|_| bad(line, "number expected"));
        let mut states: Vec<String> = Vec::new();
        let mut delays = Vec::new();
        let mut flagged = Vec::new();
        for (n, row) in parse_csv(states_csv).iter().enumerate() {
            if row.len() != 3 {
                return Err(bad(n + 2, "expected i,t_area,prior"));
            }
            states.push(row[0].clone());
            delays.push(num(&row[1], n + 2)?);
            flagged.push(row[2] == "1");
        }
        let sidx = |s: &str| {
            states
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| CtmdpError::UnknownState(s.to_string()))
        };
        let reward_rows = parse_csv(rewards);
        let mut actions: Vec<String> = Vec::new();
        for row in &reward_rows {
            if row.len() == 5 && !actions.contains(&row[1]) {
                actions.push(row[1].clone());
            }
        }
        let aidx = |s: &str| {
            actions
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| CtmdpError::UnknownAction(s.to_string()))
        };
        let ni = states.len();
        let na = actions.len();
        let mut admissible = vec![Vec::new(); ni];
        let mut rw: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut bounds: BTreeMap<usize, f64> = BTreeMap::new();
        for (n, row) in reward_rows.iter().enumerate() {
            if row.len() != 5 {
                return Err(bad(n + 2, "expected i,a,k,r,c"));
            }
            let (i, a) = (sidx(&row[0])?, aidx(&row[1])?);
            let k: usize = row[2].parse().map_err(|_| bad(n + 2, "criterion index expected"))?;
            if k == 0 {
                return Err(bad(n + 2, "criteria are numbered from 1"));
            }
            while rw.len() < k {
                rw.push(vec![vec![0.0; na]; ni]);
            }
            rw[k - 1][i][a] = num(&row[3], n + 2)?;
            if k == 1 {
                if !admissible[i].contains(&a) {
                    admissible[i].push(a);
                }
            } else {
                bounds.insert(k, num(&row[4], n + 2)?);
            }
        }
        let mut triples = Vec::new();
        for (n, row) in parse_csv(rates).iter().enumerate() {
            if row.len() != 4 {
                return Err(bad(n + 2, "expected i,j,a,q"));
            }
            triples.push((sidx(&row[0])?, sidx(&row[1])?, aidx(&row[2])?, num(&row[3], n + 2)?));
        }
        let bounds: Vec<f64> = (2..=rw.len()).map(|k| bounds.get(&k).copied().unwrap_or(f64::NEG_INFINITY)).collect();
        let mut m = Ctmdp::new(states, actions, admissible, &triples, rw, bounds)?.with_area_delay(delays);
        for (i, f) in flagged.into_iter().enumerate() {
            if f {
                for a in m.admissible[i].clone() {
                    m.prior.push((i, a));
                }
            }
        }
        Ok(m)
    }
}

/// Observed scenario shifts and dwell times, keyed by state name and action.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShiftLog {
    pub shifts: BTreeMap<(String, String, String), u64>,
    pub dwell: BTreeMap<(String, String), f64>,
}

impl ShiftLog {
    pub fn record_shift(&mut self, from: &str, to: &str, action: &str) {
        *self
            .shifts
            .entry((from.to_string(), to.to_string(), action.to_string()))
            .or_insert(0) += 1;
    }

    pub fn record_dwell(&mut self, state: &str, action: &str, seconds: f64) {
        *self.dwell.entry((state.to_string(), action.to_string())).or_insert(0.0) += seconds;
    }

    /// Header `i,j,a,count` rows, then a blank line, then `i,a,dwell` rows.
    pub fn to_csv(&self) -> String {
        let mut s = Csv::new(&["i", "j", "a", "count"]);
        for ((i, j, a), n) in &self.shifts {
            s.row([i.clone(), j.clone(), a.clone(), n.to_string()]);
        }
        let mut d = Csv::new(&["i", "a", "dwell"]);
        for ((i, a), t) in &self.dwell {
            d.row([i.clone(), a.clone(), sig(*t)]);
        }
        format!("{}\n{}", s.finish(), d.finish())
    }

    pub fn from_csv(text: &str) -> Result<Self, CtmdpError> {
        let mut log = ShiftLog::default();
        let mut parts = text.split("\n\n");
        let shifts = parts.next().unwrap_or("");
        let dwell = parts.next().unwrap_or("");
        for (n, row) in parse_csv(shifts).iter().enumerate() {
            let count = row
                .get(3)
                .and_then(|c| c.parse::<u64>().ok())
                .filter(|_| row.len() == 4)
                .ok_or(CtmdpError::Csv {
                    line: n + 2,
                    msg: "expected i,j,a,count".into(),
                })?;
            *log
                .shifts
                .entry((row[0].clone(), row[1].clone(), row[2].clone()))
                .or_insert(0) += count;
        }
        for (n, row) in parse_csv(dwell).iter().enumerate() {
            let t = row
                .get(2)
                .and_then(|c| c.parse::<f64>().ok())
                .filter(|t| row.len() == 3 && *t >= 0.0)
                .ok_or(CtmdpError::Csv {
                    line: n + 2,
                    msg: "expected i,a,dwell".into(),
                })?;
            log.record_dwell(&row[0], &row[1], t);
        }
        Ok(log)
    }
}

/// Name of the state for one column of a zone's table.
pub fn state_name(zone: &str, scenario_key: &str) -> String {
    format!("{zone}:{scenario_key}")
}

/// One state per table column across all tables. Rewards are the vehicles
/// served by the column's schedule; rates are shift counts over dwell time.
/// State-action pairs never observed get `prior_rate` spread uniformly over
/// the other states and are flagged.
pub fn from_schedule_tables(
    tables: &[(&str, &ScheduleTable)],
    actions: &[String],
    log: &ShiftLog,
    prior_rate: f64,
) -> Result<Ctmdp, CtmdpError> {
    let mut states = Vec::new();
    let mut served = Vec::new();
    let mut delay = Vec::new();
    for (zone, table) in tables {
        for col in &table.columns {
            states.push(state_name(zone, &col.scenario.key()));
            served.push(col.total_vehicles());
            delay.push(col.makespan);
        }
    }
    let ni = states.len();
    let na = actions.len();
    for ((i, j, a), _) in &log.shifts {
        for s in [i, j] {
            if !states.contains(s) {
                return Err(CtmdpError::UnknownState(s.clone()));
            }
        }
        if !actions.contains(a) {
            return Err(CtmdpError::UnknownAction(a.clone()));
        }
    }
    let mut rates = Vec::new();
    let mut prior = Vec::new();
    for i in 0..ni {
        for a in 0..na {
            let dwell = log
                .dwell
                .get(&(states[i].clone(), actions[a].clone()))
                .copied()
                .unwrap_or(0.0);
            if dwell > 0.0 {
                for j in 0..ni {
                    if j == i {
                        continue;
                    }
                    let n = log
                        .shifts
                        .get(&(states[i].clone(), states[j].clone(), actions[a].clone()))
                        .copied()
                        .unwrap_or(0);
                    if n > 0 {
                        rates.push((i, j, a, n as f64 / dwell));
                    }
                }
            } else {
                prior.push((i, a));
                if ni > 1 {
                    let each = prior_rate / (ni - 1) as f64;
                    for j in (0..ni).filter(|&j| j != i) {
                        rates.push((i, j, a, each));
                    }
                }
            }
        }
    }
    let admissible = vec![(0..na).collect(); ni];
    let rewards = vec![served.iter().map(|&n| vec![n; na]).collect()];
    let mut m = Ctmdp::new(states, actions.to_vec(), admissible, &rates, rewards, Vec::new())?.with_area_delay(delay);
    if !prior.is_empty() {
        log::debug!("{} state-action pairs use the uniform prior rate", prior.len());
    }
    m.prior = prior;
    Ok(m)
}

/// `maximize c.x  s.t.  eq rows = b, ge rows >= b, x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    /// `(state, action)` of each variable.
    pub vars: Vec<(usize, usize)>,
    pub objective: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub ge: Vec<(Vec<f64>, f64)>,
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Plain LP without an attached CTMDP.
    pub fn new(objective: Vec<f64>, eq: Vec<(Vec<f64>, f64)>, ge: Vec<(Vec<f64>, f64)>) -> Self {
        let vars = (0..objective.len()).map(|k| (k, 0)).collect();
        LinearProgram { vars, objective, eq, ge }
    }
}

/// Occupation-measure LP: one balance row per state, the normalization row,
/// then one `>=` row per extra criterion.
pub fn build_lp(m: &Ctmdp) -> LinearProgram {
    let ni = m.states.len();
    let mut vars = Vec::new();
    for i in 0..ni {
        for &a in &m.admissible[i] {
            vars.push((i, a));
        }
    }
    let nv = vars.len();
    let mut eq = Vec::with_capacity(ni + 1);
    for j in 0..ni {
        let mut row = vec![0.0; nv];
        for (v, &(i, a)) in vars.iter().enumerate() {
            if i == j {
                row[v] += m.exit_rate(j, a);
            } else {
                row[v] -= m.q[a][i][j];
            }
        }
        eq.push((row, 0.0));
    }
    eq.push((vec![1.0; nv], 1.0));
    let ge = (1..m.criteria())
        .map(|k| (vars.iter().map(|&(i, a)| m.rewards[k][i][a]).collect(), m.bounds[k - 1]))
        .collect();
    let objective = vars.iter().map(|&(i, a)| m.rewards[0][i][a]).collect();
    LinearProgram {
        vars,
        objective,
        eq,
        ge,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per row: equality rows first, then `>=` rows.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, iterations: usize) -> Self {
        LpSolution {
            status,
            x: Vec::new(),
            objective: f64::NAN,
            duals: Vec::new(),
            iterations,
        }
    }

    /// `b . y` for the problem this solution came from.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        lp.eq.iter().chain(&lp.ge).zip(&self.duals).map(|((_, b), y)| b * y).sum()
    }
}

pub fn solve(lp: &LinearProgram) -> LpSolution {
    solve_with_limit(lp, DEFAULT_ITERATION_LIMIT)
}

/// Two-phase primal simplex on a dense tableau with Bland's rule.
///
/// Every row gets an artificial column; their final reduced costs are the
/// dual multipliers. Redundant rows keep a zero artificial in the basis.
pub fn solve_with_limit(lp: &LinearProgram, limit: usize) -> LpSolution {
    let n = lp.n_vars();
    let rows: Vec<(&Vec<f64>, f64, bool)> = lp
        .eq
        .iter()
        .map(|(r, b)| (r, *b, false))
        .chain(lp.ge.iter().map(|(r, b)| (r, *b, true)))
        .collect();
    let m = rows.len();
    let n_surplus = lp.ge.len();
    // columns: structural | surplus | artificial | rhs
    let art0 = n + n_surplus;
    let width = art0 + m + 1;
    let mut t = vec![vec![0.0; width]; m];
    let mut sign = vec![1.0; m];
    let mut surplus = 0;
    for (r, (coef, b, is_ge)) in rows.iter().enumerate() {
        t[r][..n].copy_from_slice(coef);
        if *is_ge {
            t[r][n + surplus] = -1.0;
            surplus += 1;
        }
        t[r][width - 1] = *b;
        if *b < 0.0 {
            sign[r] = -1.0;
            for v in t[r].iter_mut() {
                *v = -*v;
            }
        }
        t[r][art0 + r] = 1.0;
    }
    let mut basis: Vec<usize> = (art0..art0 + m).collect();
    let mut iterations = 0;

    // Phase one: minimize the sum of artificials.
    let phase1: Vec<f64> = (0..width - 1).map(|j| if j >= art0 { 1.0 } else { 0.0 }).collect();
    match run_simplex(&mut t, &mut basis, &phase1, width - 1, &mut iterations, limit) {
        Pivoting::Optimal => {}
        Pivoting::Unbounded => unreachable!("phase one is bounded below"),
        Pivoting::Limit => return LpSolution::failed(LpStatus::IterationLimit, iterations),
    }
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= art0)
        .map(|(r, _)| t[r][width - 1])
        .sum();
    if infeas > FEAS_TOL {
        return LpSolution::failed(LpStatus::Infeasible, iterations);
    }
    // Drive zero artificials out where a structural pivot exists.
    for r in 0..m {
        if basis[r] >= art0 {
            if let Some(j) = (0..art0).find(|&j| t[r][j].abs() > PIVOT_TOL) {
                pivot(&mut t, &mut basis, r, j);
            }
        }
    }

    // Phase two: minimize -c.x with artificials barred from entering.
    let mut cost = vec![0.0; width - 1];
    for j in 0..n {
        cost[j] = -lp.objective[j];
    }
    match run_simplex(&mut t, &mut basis, &cost, art0, &mut iterations, limit) {
        Pivoting::Optimal => {}
        Pivoting::Unbounded => return LpSolution::failed(LpStatus::Unbounded, iterations),
        Pivoting::Limit => return LpSolution::failed(LpStatus::IterationLimit, iterations),
    }

    let mut x = vec![0.0; n];
    for (r, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = t[r][width - 1];
        }
    }
    for v in x.iter_mut() {
        if v.abs() < 1e-13 {
            *v = 0.0;
        }
    }
    let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    let reduced = reduced_costs(&t, &basis, &cost);
    // reduced cost of artificial r equals minus the min-form multiplier,
    // i.e. the max-form dual of the (possibly negated) row
    let duals = (0..m).map(|r| reduced[art0 + r] * sign[r]).collect();
    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        iterations,
    }
}

enum Pivoting {
    Optimal,
    Unbounded,
    Limit,
}

fn reduced_costs(t: &[Vec<f64>], basis: &[usize], cost: &[f64]) -> Vec<f64> {
    let mut r = cost.to_vec();
    for (row, &b) in t.iter().zip(basis) {
        let cb = cost[b];
        if cb != 0.0 {
            for (j, v) in r.iter_mut().enumerate() {
                *v -= cb * row[j];
            }
        }
    }
    r
}

/// Minimizes `cost` over the current tableau; only columns below
/// `enter_limit` may enter the basis.
fn run_simplex(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    enter_limit: usize,
    iterations: &mut usize,
    limit: usize,
) -> Pivoting {
    let rhs = t.first().map(|r| r.len() - 1).unwrap_or(0);
    loop {
        let reduced = reduced_costs(t, basis, cost);
        let entering = (0..enter_limit).find(|&j| reduced[j] < -PIVOT_TOL && !basis.contains(&j));
        let Some(j) = entering else {
            return Pivoting::Optimal;
        };
        if *iterations >= limit {
            return Pivoting::Limit;
        }
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..t.len() {
            let a = t[r][j];
            if a > PIVOT_TOL {
                let ratio = t[r][rhs] / a;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => ratio < best - 1e-12 || (ratio <= best + 1e-12 && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return Pivoting::Unbounded;
        };
        pivot(t, basis, r, j);
        *iterations += 1;
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, j: usize) {
    let p = t[r][j];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[r].clone();
    for (k, row) in t.iter_mut().enumerate() {
        if k != r {
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[j] = 0.0;
            }
        }
    }
    basis[r] = j;
}

/// Largest absolute residual of the equality rows at `x`.
pub fn balance_residual(lp: &LinearProgram, x: &[f64]) -> f64 {
    lp.eq
        .iter()
        .map(|(row, b)| (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b).abs())
        .fold(0.0, f64::max)
}

/// Randomized stationary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// `probs[i]` lists `(action, probability)` over A(i).
    pub probs: Vec<Vec<(usize, f64)>>,
    /// States with zero occupation (uniform by convention).
    pub unvisited: Vec<usize>,
}

impl Policy {
    pub fn prob(&self, i: usize, a: usize) -> f64 {
        self.probs[i].iter().find(|(b, _)| *b == a).map(|(_, p)| *p).unwrap_or(0.0)
    }
}

/// Occupation measure per state: `sum_a x_{i,a}`.
pub fn state_marginals(sol: &LpSolution, lp: &LinearProgram, n_states: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_states];
    for (v, &(i, _)) in lp.vars.iter().enumerate() {
        p[i] += sol.x[v];
    }
    p
}

pub fn extract_policy(sol: &LpSolution, m: &Ctmdp) -> Result<Policy, CtmdpError> {
    if sol.status != LpStatus::Optimal {
        return Err(CtmdpError::NotOptimal);
    }
    let lp = build_lp(m);
    let mut probs = Vec::with_capacity(m.states.len());
    let mut unvisited = Vec::new();
    for i in 0..m.states.len() {
        let mass: Vec<(usize, f64)> = lp
            .vars
            .iter()
            .zip(&sol.x)
            .filter(|((s, _), _)| *s == i)
            .map(|(&(_, a), &x)| (a, x))
            .collect();
        let total: f64 = mass.iter().map(|(_, x)| x).sum();
        if total > 0.0 {
            probs.push(mass.into_iter().map(|(a, x)| (a, x / total)).collect());
        } else {
            unvisited.push(i);
            let k = m.admissible[i].len() as f64;
            probs.push(m.admissible[i].iter().map(|&a| (a, 1.0 / k)).collect());
        }
    }
    Ok(Policy { probs, unvisited })
}

/// Header `i,a,x,pi`.
pub fn solution_csv(sol: &LpSolution, m: &Ctmdp, policy: &Policy) -> String {
    let lp = build_lp(m);
    let mut csv = Csv::new(&["i", "a", "x", "pi"]);
    for (v, &(i, a)) in lp.vars.iter().enumerate() {
        csv.row([
            m.states[i].clone(),
            m.actions[a].clone(),
            sig(sol.x[v]),
            sig(policy.prob(i, a)),
        ]);
    }
    csv.finish()
}

/// Long-run average of criterion 0 when the process runs under the mixed
/// generator of `policy` for `horizon` seconds.
pub fn simulate_policy(m: &Ctmdp, policy: &Policy, start: usize, horizon: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ni = m.states.len();
    let mut i = start;
    let mut t = 0.0;
    let mut acc = 0.0;
    while t < horizon {
        let out: Vec<f64> = (0..ni)
            .map(|j| {
                if j == i {
                    0.0
                } else {
                    policy.probs[i].iter().map(|&(a, p)| p * m.q[a][i][j]).sum()
                }
            })
            .collect();
        let rate: f64 = out.iter().sum();
        let r: f64 = policy.probs[i].iter().map(|&(a, p)| p * m.rewards[0][i][a]).sum();
        if rate <= 0.0 {
            acc += r * (horizon - t);
            break;
        }
        let dwell = Exp::new(rate).expect("positive rate").sample(&mut rng).min(horizon - t);
        acc += r * dwell;
        t += dwell;
        let mut u = rng.random::<f64>() * rate;
        let mut next = i;
        for (j, &o) in out.iter().enumerate() {
            if o > 0.0 {
                next = j;
                if u < o {
                    break;
                }
                u -= o;
            }
        }
        i = next;
    }
    acc / horizon
}
