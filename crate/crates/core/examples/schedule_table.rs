//! Builds the zone schedule table of the case study: one column per
//! scenario of the condition sites, each a resource-feasible schedule.

use civitas::config::parse_ctg;
use civitas::ztcu::{build_table, derive_timing_constraints};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_ctg(include_str!("../data/case_study.ctg.toml"), "case_study.ctg.toml")?;
    let table = build_table(&cfg.ctg, cfg.objective);
    println!("{} columns", table.len());
    print!("{}", table.summary_csv());

    let first = &table.columns[0];
    println!("\nscenario {}", first.scenario.key());
    let mut entries = first.entries.clone();
    entries.sort_by(|a, b| a.start.total_cmp(&b.start));
    for e in &entries {
        println!("  {:<4} start {:>5.1}  finish {:>5.1}", e.task, e.start, e.finish);
    }
    for itu in ["I1", "I2"] {
        for c in derive_timing_constraints(first, itu) {
            println!("  {itu} must show {:?} at {} s", c.required, c.deadline());
        }
    }
    Ok(())
}
