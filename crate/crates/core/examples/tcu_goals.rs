//! City-level function graph: completion-time distributions of three areas
//! and the split of a global throughput goal among them.

use civitas::tcu::{distribute_goals, evaluate, FgNode, FunctionGraph, GlobalGoal, PerfDistribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let north = PerfDistribution::new(vec![(40.0, 0.5), (60.0, 0.5)])?;
    let south = PerfDistribution::new(vec![(30.0, 0.8), (90.0, 0.2)])?;
    let centre = PerfDistribution::new(vec![(20.0, 0.7), (30.0, 0.3)])?;
    let fg = FunctionGraph::new(
        vec![
            FgNode::new("north", north, 300.0),
            FgNode::new("south", south, 500.0),
            FgNode::new("centre", centre, 200.0),
        ],
        &[("north", "centre"), ("south", "centre")],
    )?;
    let ev = evaluate(&fg);
    println!("end-to-end completion time:");
    for &(v, p) in ev.end_to_end.support() {
        println!("  {v:>5} s  p = {p:.3}");
    }
    println!("expected {:.2} s", ev.expectation());

    let alloc = distribute_goals(
        &fg,
        GlobalGoal {
            throughput: 1001,
            deadline: 120.0,
        },
    )?;
    print!("{}", alloc.to_csv());
    Ok(())
}
