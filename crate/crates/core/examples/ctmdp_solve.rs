//! Area-level decision model: estimates a CTMDP from the case-study schedule
//! table and a shift log, solves the occupation-measure LP and prints the
//! resulting routing policy.

use civitas::atcu::{build_lp, extract_policy, from_schedule_tables, simulate_policy, solve, ShiftLog};
use civitas::config::parse_ctg;
use civitas::ztcu::build_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_ctg(include_str!("../data/case_study.ctg.toml"), "case_study.ctg.toml")?;
    let table = build_table(&cfg.ctg, cfg.objective);
    let actions = vec!["direct".to_string(), "bypass".to_string()];

    // Routing over the bypass relieves the heavy scenarios faster.
    let mut log = ShiftLog::default();
    for (from, to, action, n) in [
        ("Z1:H-H-H", "Z1:L-H-H", "bypass", 6),
        ("Z1:H-H-H", "Z1:H-H-L", "direct", 2),
        ("Z1:L-L-L", "Z1:H-L-L", "direct", 3),
        ("Z1:L-L-L", "Z1:L-H-L", "bypass", 1),
    ] {
        for _ in 0..n {
            log.record_shift(from, to, action);
        }
    }
    log.record_dwell("Z1:H-H-H", "bypass", 120.0);
    log.record_dwell("Z1:H-H-H", "direct", 120.0);
    log.record_dwell("Z1:L-L-L", "direct", 300.0);
    log.record_dwell("Z1:L-L-L", "bypass", 300.0);

    let m = from_schedule_tables(&[("Z1", &table)], &actions, &log, 1.0 / 60.0)?;
    let lp = build_lp(&m);
    let sol = solve(&lp);
    println!("status {:?}, objective {:.4} vehicles per cycle", sol.status, sol.objective);
    println!("dual objective {:.4}", sol.dual_objective(&lp));
    let policy = extract_policy(&sol, &m)?;
    for (i, s) in m.states().iter().enumerate() {
        let probs: Vec<String> = policy.probs[i]
            .iter()
            .map(|&(a, p)| format!("{}={p:.3}", m.actions()[a]))
            .collect();
        println!("  {s:<10} {}", probs.join(" "));
    }
    let simulated = simulate_policy(&m, &policy, 0, 1e6, 3);
    println!("simulated long-run reward {simulated:.4}");
    Ok(())
}
