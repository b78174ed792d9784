//! Four-level reconciliation for one zone with one intersection: a loose
//! goal converges in one pass, a contradictory one exhausts the budget and
//! puts the intersection into its safe mode.

use civitas::hierarchy::{AreaUnit, Engine, ZoneUnit};
use civitas::itu::{Direction, ItuController, SignalFsm, SignalState};
use civitas::tcu::{FgNode, FunctionGraph, GlobalGoal, PerfDistribution};
use civitas::ztcu::{ConditionSite, Ctg, CtgTask, Objective, Scenario, TaskAttr};

fn engine(deadline: f64) -> Result<Engine, Box<dyn std::error::Error>> {
    let light = TaskAttr::new(2.0, 4.0);
    let heavy = TaskAttr::new(8.0, 12.0);
    let tasks = vec![
        CtgTask::new("P", TaskAttr::new(4.0, 6.0))
            .with_resources(["I1"])
            .at_itu("I1", Direction::Primary),
        CtgTask::new("S", light)
            .with_resources(["I1"])
            .at_itu("I1", Direction::Secondary)
            .by_label("S1", &[("L", light), ("H", heavy)]),
    ];
    let ctg = Ctg::new(tasks, &[], vec![ConditionSite::binary("S1", 5.0)], &[])?;
    let zone = ZoneUnit::new("Z1", ctg, Objective::MinMakespan, vec!["I1".into()]);
    let area = AreaUnit::new("A1", None, vec![zone]);
    let fg = FunctionGraph::new(vec![FgNode::new("A1", PerfDistribution::point(20.0), 10.0)], &[])?;
    let fsm = SignalFsm::new(30.0, 5.0, 25.0, SignalState::Green)?;
    let goal = GlobalGoal { throughput: 10, deadline };
    Ok(Engine::new(fg, goal, vec![area], vec![ItuController::with_default_modes("I1", fsm)])?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for deadline in [100.0, 1.0] {
        let mut e = engine(deadline)?;
        let heavy = Scenario { labels: vec!["H".into()] };
        e.set_scenario("Z1", heavy)?;
        let r = e.reconcile(0.0)?;
        println!(
            "deadline {deadline:>5} s: converged {} after {} passes, safe mode {:?}",
            r.converged, r.passes, r.safe_engaged
        );
        print!("{}", r.to_csv());
        for line in e.take_log() {
            println!("  {line}");
        }
    }
    Ok(())
}
