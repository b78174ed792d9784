//! Acceptance criteria. Each criterion prints one PASS/FAIL line with the
//! measured quantities; the process exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use civitas::atcu::{balance_residual, build_lp, solve, Ctmdp, LpStatus};
use civitas::config::{parse_ctg, parse_demand, parse_network, parse_registry};
use civitas::fuzzy::{
    activations, fuzzify, surface, surface_with_resolution, FuzzyParams, Label, MembershipRow, RuleBase, OUTPUT_SAMPLES,
};
use civitas::hierarchy::{Level, ViolationMsg};
use civitas::itu::{replay_violations, ItuController, TimingConstraint};
use civitas::metrics::{autonomy, efficiency, flexibility, scalability, CurvePair, EffortField, SpecBox};
use civitas::registry::InteractionKind;
use civitas::sim::{run, Mode, SimSetup};
use civitas::world::WorldState;
use civitas::ztcu::{
    build_table, derive_timing_constraints, list_schedule, schedule, Objective, ResolvedGraph, ResolvedTask,
};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(data(name)).expect("shipped data file")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// 1 ------------------------------------------------------------------------

fn scenario_cardinality() -> Outcome {
    let cfg = parse_ctg(&read("case_study.ctg.toml"), "case_study.ctg.toml").unwrap();
    let table = build_table(&cfg.ctg, cfg.objective);
    outcome(table.len() == 8, format!("columns = {} (expected 8)", table.len()))
}

// 2 ------------------------------------------------------------------------

fn random_graph(rng: &mut ChaCha8Rng) -> ResolvedGraph {
    let n = rng.random_range(2..=8);
    let pool = ["r1", "r2", "r3"];
    let tasks = (0..n)
        .map(|k| {
            let mut resources = std::collections::BTreeSet::new();
            for r in pool {
                if rng.random_bool(0.35) {
                    resources.insert(r.to_string());
                }
            }
            ResolvedTask {
                id: format!("T{k}"),
                n: rng.random_range(1..=10) as f64,
                t_ex: rng.random_range(1..=10) as f64,
                resources,
                itu: None,
                direction: None,
                dummy: false,
            }
        })
        .collect();
    let mut arcs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.25) {
                arcs.push((a, b));
            }
        }
    }
    ResolvedGraph::new(tasks, &arcs, &[])
}

/// Every permutation, each task appended at the earliest instant after its
/// predecessors and after every earlier exclusive task. The optimum is
/// reached by the permutation that sorts an optimal schedule by start time.
fn brute_force_makespan(g: &ResolvedGraph) -> f64 {
    fn rec(g: &ResolvedGraph, seq: &mut Vec<usize>, finish: &mut [f64], used: &mut [bool], best: &mut f64) {
        let n = g.len();
        if seq.len() == n {
            *best = best.min(finish.iter().copied().fold(0.0, f64::max));
            return;
        }
        for v in 0..n {
            if used[v] {
                continue;
            }
            let mut s: f64 = 0.0;
            for &p in &g.preds[v] {
                if !used[p] {
                    s = f64::NAN;
                    break;
                }
                s = s.max(finish[p]);
            }
            if s.is_nan() {
                continue;
            }
            for &w in seq.iter() {
                if g.exclusive[v][w] {
                    s = s.max(finish[w]);
                }
            }
            used[v] = true;
            finish[v] = s + g.tasks[v].t_ex;
            seq.push(v);
            rec(g, seq, finish, used, best);
            seq.pop();
            used[v] = false;
            finish[v] = 0.0;
        }
    }
    let n = g.len();
    let mut best = f64::INFINITY;
    rec(g, &mut Vec::new(), &mut vec![0.0; n], &mut vec![false; n], &mut best);
    best
}

fn feasible(g: &ResolvedGraph, starts: &BTreeMap<String, (f64, f64)>) -> bool {
    let span = |k: usize| starts[&g.tasks[k].id];
    for b in 0..g.len() {
        for &a in &g.preds[b] {
            if span(a).1 > span(b).0 + 1e-9 {
                return false;
            }
        }
        for a in 0..b {
            let (sa, fa) = span(a);
            let (sb, fb) = span(b);
            if g.exclusive[a][b] && sa < fb - 1e-9 && sb < fa - 1e-9 {
                return false;
            }
        }
    }
    true
}

fn scheduler_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut equal, mut worst, mut infeasible) = (0, 1.0f64, 0);
    let (mut greedy_equal, mut greedy_worst) = (0, 1.0f64);
    let instances = 200;
    for _ in 0..instances {
        let g = random_graph(&mut rng);
        let opt = brute_force_makespan(&g);
        let sched = schedule(&g, Objective::MinMakespan);
        let spans = sched.entries.iter().map(|e| (e.task.clone(), (e.start, e.finish))).collect();
        if !feasible(&g, &spans) {
            infeasible += 1;
        }
        if sched.makespan == opt {
            equal += 1;
        }
        worst = worst.max(sched.makespan / opt);
        let greedy = list_schedule(&g, Objective::MinMakespan).makespan;
        if greedy == opt {
            greedy_equal += 1;
        }
        greedy_worst = greedy_worst.max(greedy / opt);
    }
    let share = equal as f64 / instances as f64;
    outcome(
        share >= 0.95 && worst <= 1.5 && infeasible == 0,
        format!(
            "optimal on {equal}/{instances}, worst ratio {worst:.3}, infeasible {infeasible}; \
             greedy pass alone optimal on {greedy_equal}/{instances}, worst ratio {greedy_worst:.3}"
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn random_ctmdp(rng: &mut ChaCha8Rng) -> Ctmdp {
    let ni = rng.random_range(2..=4);
    let na = rng.random_range(1..=3);
    let states = (0..ni).map(|i| format!("s{i}")).collect();
    let actions = (0..na).map(|a| format!("a{a}")).collect();
    let admissible: Vec<Vec<usize>> = (0..ni)
        .map(|_| {
            let adm: Vec<usize> = (0..na).filter(|_| rng.random_bool(0.7)).collect();
            if adm.is_empty() {
                vec![rng.random_range(0..na)]
            } else {
                adm
            }
        })
        .collect();
    let mut rates = Vec::new();
    for i in 0..ni {
        for j in 0..ni {
            if i != j {
                for &a in &admissible[i] {
                    rates.push((i, j, a, rng.random_range(0.1..2.0)));
                }
            }
        }
    }
    let rewards = vec![(0..ni)
        .map(|_| (0..na).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect()];
    Ctmdp::new(states, actions, admissible, &rates, rewards, vec![]).unwrap()
}

/// Long-run average reward of the best deterministic stationary policy,
/// from the stationary distribution of each policy's generator.
fn brute_force_gain(m: &Ctmdp) -> f64 {
    let ni = m.states().len();
    let choices: Vec<&[usize]> = (0..ni).map(|i| m.admissible(i)).collect();
    let mut pick = vec![0usize; ni];
    let mut best = f64::NEG_INFINITY;
    loop {
        let act: Vec<usize> = (0..ni).map(|i| choices[i][pick[i]]).collect();
        // pi Q = 0 and sum pi = 1, as Q^T pi = 0 with one row replaced
        let mut a = DMatrix::<f64>::zeros(ni, ni);
        for i in 0..ni {
            for j in 0..ni {
                a[(j, i)] = if i == j {
                    -m.exit_rate(i, act[i])
                } else {
                    m.rate(i, j, act[i])
                };
            }
        }
        for i in 0..ni {
            a[(ni - 1, i)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(ni);
        b[ni - 1] = 1.0;
        let pi = a.lu().solve(&b).expect("irreducible chain");
        let gain: f64 = (0..ni).map(|i| pi[i] * m.reward(0, i, act[i])).sum();
        best = best.max(gain);

        let mut k = 0;
        loop {
            if k == ni {
                return best;
            }
            pick[k] += 1;
            if pick[k] < choices[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

fn ctmdp_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut obj_err, mut norm_err, mut bal, mut gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut not_optimal = 0;
    for _ in 0..100 {
        let m = random_ctmdp(&mut rng);
        let lp = build_lp(&m);
        let sol = solve(&lp);
        if sol.status != LpStatus::Optimal {
            not_optimal += 1;
            continue;
        }
        obj_err = obj_err.max((sol.objective - brute_force_gain(&m)).abs());
        norm_err = norm_err.max((sol.x.iter().sum::<f64>() - 1.0).abs());
        bal = bal.max(balance_residual(&lp, &sol.x));
        gap = gap.max((sol.objective - sol.dual_objective(&lp)).abs());
    }
    outcome(
        not_optimal == 0 && obj_err <= 1e-6 && norm_err <= 1e-9 && bal <= 1e-9 && gap <= 1e-8,
        format!(
            "objective err {obj_err:.2e} (<= 1e-6), normalization {norm_err:.2e} (<= 1e-9), \
             balance {bal:.2e} (<= 1e-9), duality gap {gap:.2e} (<= 1e-8), non-optimal {not_optimal}"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn fuzzy_surface() -> Outcome {
    let params = FuzzyParams::uniform(0.5, 1.0, 1.2).unwrap();
    let rules = RuleBase::default();
    let n = 121;
    let s = surface(&params, &rules, n).unwrap();

    let in_range = s.u.iter().flatten().all(|&u| (0.0..=1.2).contains(&u));

    // (grid line kind, index, position, drop)
    let mut worst_i: (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut worst_d: (f64, f64, f64) = (0.0, 0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            if a + 1 < n {
                let rise = s.u[a + 1][b] - s.u[a][b];
                if rise > worst_i.0 {
                    worst_i = (rise, s.i_axis[a + 1], s.d_axis[b]);
                }
            }
            if b + 1 < n {
                let fall = s.u[a][b] - s.u[a][b + 1];
                if fall > worst_d.0 {
                    worst_d = (fall, s.i_axis[a], s.d_axis[b + 1]);
                }
            }
        }
    }
    let monotone = worst_i.0 == 0.0 && worst_d.0 == 0.0;

    let row = MembershipRow::new(0.5, 1.0, 1.2).unwrap();
    let partition = (0..=10_000).all(|k| {
        let x = 1.0 * k as f64 / 10_000.0;
        fuzzify(x, &row).unwrap().sum() == 1.0
    });

    let fine = surface_with_resolution(&params, &rules, n, 10 * (OUTPUT_SAMPLES - 1) + 1).unwrap();
    let resolution = s
        .u
        .iter()
        .flatten()
        .zip(fine.u.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    outcome(
        in_range && monotone && partition && resolution <= 1e-3,
        format!(
            "range ok {in_range}, partition exact {partition}, finer-grid diff {resolution:.2e} (<= 1e-3), \
             monotone {monotone}: largest rise along i {:.4} at (i={:.2}, d={:.2}), \
             largest fall along d {:.4} at (i={:.2}, d={:.2})",
            worst_i.0, worst_i.1, worst_i.2, worst_d.0, worst_d.1, worst_d.2
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn table_fidelity() -> Outcome {
    use Label::*;
    let expected = [
        (Small, [Medium, Big, Big]),
        (Medium, [Small, Medium, Medium]),
        (Big, [Small, Small, Small]),
    ];
    let rules = RuleBase::default();
    let row = MembershipRow::new(0.5, 1.0, 1.2).unwrap();
    let crisp = |l: Label| match l {
        Small => 0.0,
        Medium => 0.5,
        Big => 1.0,
    };
    let mut bad = Vec::new();
    let mut pure = 0;
    for (li, outs) in expected {
        for (k, ld) in [Small, Medium, Big].into_iter().enumerate() {
            let w = activations(&fuzzify(crisp(li), &row).unwrap(), &fuzzify(crisp(ld), &row).unwrap());
            let mut ok = rules.consequent(li, ld) == outs[k];
            for a in Label::ALL {
                for b in Label::ALL {
                    let want = if (a, b) == (li, ld) { 1.0 } else { 0.0 };
                    ok &= w[a.index()][b.index()] == want;
                }
            }
            if ok {
                pure += 1;
            } else {
                bad.push(format!("({li:?},{ld:?})"));
            }
        }
    }
    outcome(pure == 9, format!("pure cells {pure}/9 {}", bad.join(" ")))
}

// 6 ------------------------------------------------------------------------

fn fsm_contract() -> Outcome {
    let net = parse_network(&read("case_study_network.toml"), "case_study_network.toml").unwrap();
    let cfg = parse_ctg(&read("case_study.ctg.toml"), "case_study.ctg.toml").unwrap();
    let table = build_table(&cfg.ctg, cfg.objective);

    let mut periodic = true;
    for fsm in net.signals.values() {
        let period = fsm.cycle();
        for k in 0..(10.0 * period / 0.1).round() as u64 {
            let t = k as f64 * 0.1;
            periodic &= fsm.state_at(t + period) == fsm.state_at(t);
        }
        // stepping agrees with the closed form
        let mut f = *fsm;
        for k in 0..(10.0 * period / 0.1).round() as u64 {
            periodic &= f.current() == fsm.state_at(k as f64 * 0.1);
            f = f.advance(0.1);
        }
    }

    let mut violations = 0;
    let mut found = Vec::new();
    for key in ["L-L-L", "H-L-L"] {
        let col = table.columns.iter().find(|c| c.scenario.key() == key).unwrap();
        for (itu, fsm) in &net.signals {
            let cs: Vec<TimingConstraint> = derive_timing_constraints(col, itu);
            for c in &cs {
                found.push(format!("{key}:{itu}:{:?}@{}", c.required, c.deadline()));
            }
            match fsm.apply_timing_constraints(&cs) {
                Ok(adjusted) => violations += replay_violations(&adjusted, &cs).len(),
                Err(_) => violations += cs.len(),
            }
        }
    }
    let has_x = found.iter().any(|s| s.starts_with("L-L-L:I1:Green"));
    let has_y = found.iter().any(|s| s.starts_with("H-L-L:I1:Red"));

    let mut ctl = ItuController::with_default_modes("I1", net.signals["I1"]);
    let v = ViolationMsg::new(Level::Itu, Level::Ztcu, "I1", "seconds", 3.0, 42.0).unwrap();
    ctl.shortcut_to_safe(&v);
    let safe = ctl.in_safe_mode() && ctl.mode_log().last().is_some_and(|e| e.at == 42.0);

    outcome(
        periodic && violations == 0 && has_x && has_y && safe,
        format!(
            "periodic {periodic}, replay violations {violations}, constraints [{}], safe mode {safe}",
            found.join(" ")
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn conservation() -> Outcome {
    let net = parse_network(&read("ring_network.toml"), "ring_network.toml").unwrap();
    let demand = parse_demand(&read("ring_demand.toml"), "ring_demand.toml", &net.network, None, None).unwrap();
    let mut world = WorldState::new(net.network.clone(), demand).unwrap();
    let mut signals = net.signals.clone();
    let start = world.total_vehicles();
    let caps: Vec<(String, usize, bool)> = net
        .network
        .segments()
        .iter()
        .map(|s| (s.id.clone(), s.capacity, s.shared))
        .collect();
    let (mut conserved, mut shared_ok, mut cap_ok) = (true, true, true);
    let (steps, dt, window) = (100_000, 0.1, 1_000);
    let mut max_residual = 0i64;
    let mut windows = 0;
    let mut t0 = 0.0;
    for k in 1..=steps {
        let controls: BTreeMap<_, _> = signals.iter().map(|(id, f)| (id.clone(), f.current())).collect();
        world.step(&controls, dt);
        for f in signals.values_mut() {
            *f = f.advance(dt);
        }
        conserved &= world.total_vehicles() == start;
        for (id, cap, shared) in &caps {
            let len = world.queue_len(id).unwrap();
            cap_ok &= len <= *cap;
            if *shared {
                shared_ok &= len <= 1;
            }
        }
        if k % window == 0 {
            let t1 = world.clock();
            for z in net.network.zones() {
                max_residual = max_residual.max(world.check_zone_balance(&z.id, t0, t1).unwrap().abs());
                windows += 1;
            }
            t0 = t1;
        }
    }
    for z in net.network.zones() {
        max_residual = max_residual.max(world.check_zone_balance(&z.id, 0.0, world.clock()).unwrap().abs());
        windows += 1;
    }
    let moved = world.traversals("b").map_or(0, |t| t.len());
    outcome(
        conserved && shared_ok && cap_ok && max_residual == 0 && moved > 0,
        format!(
            "vehicles {start} -> {}, max balance residual {max_residual} over {windows} windows, \
             shared occupancy <= 1 {shared_ok}, capacities respected {cap_ok}, traversals of shared segment {moved}",
            world.total_vehicles()
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn metric_identities() -> Outcome {
    let s = scalability(250.0, 80.0, 250.0, 80.0).unwrap();
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let same = CurvePair::new(grid.clone(), grid.iter().map(|p| 1.0 + p).collect(), grid.iter().map(|p| 1.0 + p).collect()).unwrap();
    let e0 = efficiency(&same);
    let c = 0.8;
    let linear = CurvePair::new(grid.clone(), grid.iter().map(|p| 2.0 + c * p).collect(), vec![2.0; grid.len()]).unwrap();
    let e1 = efficiency(&linear);
    let bx = SpecBox::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
    let f = flexibility(|x: &[f64]| x[0] <= 0.5, &bx, 100_000, 5);
    let e = 0.37;
    let field = EffortField::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 1.0], vec![0.0, 0.5, 1.0], vec![e; 8]).unwrap();
    let a = autonomy(&field);
    let pass = s == 1.0 && e0 == 0.0 && (e1 - c / 2.0).abs() <= 1e-9 && (f - 0.5).abs() <= 0.02 && (a - e).abs() <= 1e-9;
    outcome(
        pass,
        format!("scalability {s}, efficiency identical {e0}, linear {e1} (c/2 = {}), flexibility {f}, autonomy {a} (e = {e})", c / 2.0),
    )
}

// 9 ------------------------------------------------------------------------

fn interaction_taxonomy() -> Outcome {
    use InteractionKind::*;
    let expected = [
        ("lighting_zone", "lamp_1", Guiding),
        ("lighting_zone", "lamp_2", Guiding),
        ("lamp_1", "lighting_zone", Enabling),
        ("lamp_2", "lighting_zone", Enabling),
        ("lamp_1", "lamp_2", Collaborative),
        ("traffic_zone", "itu_1", Guiding),
        ("traffic_zone", "itu_2", Guiding),
        ("itu_1", "traffic_zone", Enabling),
        ("itu_2", "traffic_zone", Enabling),
        ("itu_1", "itu_2", Collaborative),
        ("itu_2", "itu_1", Collaborative),
        ("lighting_zone", "power_grid", Competing),
        ("power_grid", "lighting_zone", Competing),
        ("traffic_zone", "lighting_zone", Collaborative),
        ("itu_1", "lamp_1", Collaborative),
    ];
    let reg = parse_registry(&read("city_registry.toml"), "city_registry.toml").unwrap();
    let mut mismatches = 0;
    if reg.links().len() != expected.len() {
        mismatches += 1;
    }
    for (link, (src, dst, kind)) in reg.links().iter().zip(expected) {
        if link.src != src || link.dst != dst || link.kind != kind {
            mismatches += 1;
        }
    }
    let kinds = reg.kinds_present().len();
    outcome(
        mismatches == 0 && kinds == 4,
        format!("links {}, mismatches {mismatches}, kinds present {kinds}/4", reg.links().len()),
    )
}

// 10 -----------------------------------------------------------------------

fn end_to_end_benefit() -> Outcome {
    let net = parse_network(&read("case_study_network.toml"), "case_study_network.toml").unwrap();
    let ctg = parse_ctg(&read("case_study.ctg.toml"), "case_study.ctg.toml").unwrap();
    let horizon = 3600.0;
    let demand = parse_demand(&read("case_study_demand.toml"), "case_study_demand.toml", &net.network, None, Some(horizon)).unwrap();
    let go = |mode| {
        let mut s = SimSetup::new(net.clone(), demand.clone(), Some(ctg.clone()), horizon, mode);
        s.trace = false;
        run(&s).unwrap()
    };
    let fixed = go(Mode::Fixed);
    let hier = go(Mode::Hierarchical);
    let saturated = fixed.dropped > 0;
    outcome(
        saturated && hier.serviced >= fixed.serviced,
        format!(
            "seed {}: fixed serviced {} (dropped {} of {}), hierarchical serviced {} (dropped {})",
            fixed.seed, fixed.serviced, fixed.dropped, fixed.arrived, hier.serviced, hier.dropped
        ),
    )
}

// 11 -----------------------------------------------------------------------

fn determinism() -> Outcome {
    let run_once = || {
        let dir = tempfile::tempdir().unwrap();
        let args: Vec<String> = [
            "civitas",
            "simulate",
            "--network",
            data("case_study_network.toml").to_str().unwrap(),
            "--demand",
            data("case_study_demand.toml").to_str().unwrap(),
            "--ctg",
            data("case_study.ctg.toml").to_str().unwrap(),
            "--horizon",
            "1800",
            "--seed",
            "9",
            "--out",
            dir.path().to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let code = civitas::cli::run(args);
        let files: Vec<Vec<u8>> = ["events.tsv", "summary.csv", "reconcile.csv"]
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap_or_default())
            .collect();
        (code, files)
    };
    let (c1, a) = run_once();
    let (c2, b) = run_once();
    let nonempty = a.iter().all(|f| !f.is_empty());
    outcome(
        c1 == 0 && c2 == 0 && nonempty && a == b,
        format!(
            "exit codes {c1}/{c2}, event log {} bytes, identical {}",
            a[0].len(),
            a == b
        ),
    )
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 11] = [
        ("scenario cardinality", 1, scenario_cardinality),
        ("scheduler optimality", 60, scheduler_optimality),
        ("CTMDP LP correctness", 30, ctmdp_correctness),
        ("fuzzy control surface", 5, fuzzy_surface),
        ("rule table fidelity", 1, table_fidelity),
        ("signal FSM contract", 5, fsm_contract),
        ("closed-network conservation", 30, conservation),
        ("metric identities", 10, metric_identities),
        ("interaction taxonomy", 1, interaction_taxonomy),
        ("hierarchical vs fixed-time", 60, end_to_end_benefit),
        ("determinism", 120, determinism),
    ];
    let mut failed = 0;
    for (k, (name, budget, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let took = t.elapsed();
        let in_time = took <= Duration::from_secs(*budget);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<28} {}  [{:.2} s of {budget} s] {}",
            k + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
