//! Signal FSM: cyclic behaviour, rebalancing against timing constraints from
//! a schedule, and the safe-mode shortcut on a violation.

use civitas::hierarchy::{Level, ViolationMsg};
use civitas::itu::{replay_violations, ItuController, SignalFsm, SignalState, TimingConstraint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fsm = SignalFsm::new(30.0, 5.0, 25.0, SignalState::Green)?;
    println!("cycle {} s", fsm.cycle());
    for t in [0.0, 29.9, 30.0, 34.9, 35.0, 59.9, 60.0, 600.0] {
        println!("  t = {t:>5}: {:?}", fsm.state_at(t));
    }

    // The schedule needs Green at 40 s and Red at 55 s.
    let constraints = vec![
        TimingConstraint::new(40.0, SignalState::Green, "L-H-L")?,
        TimingConstraint::new(55.0, SignalState::Red, "L-H-L")?,
    ];
    println!("violations before: {}", replay_violations(&fsm, &constraints).len());
    match fsm.apply_timing_constraints(&constraints) {
        Ok(adjusted) => println!(
            "rebalanced to green {} / yellow {} / red {}; violations after: {}",
            adjusted.split(SignalState::Green),
            adjusted.split(SignalState::Yellow),
            adjusted.split(SignalState::Red),
            replay_violations(&adjusted, &constraints).len()
        ),
        Err(report) => println!("infeasible, total shortfall {} s", report.total_shortfall()),
    }

    // A deadline past the cycle cannot be met by any split.
    let late = [TimingConstraint::new(75.0, SignalState::Green, "H-H-H")?];
    if let Err(report) = fsm.apply_timing_constraints(&late) {
        println!("late deadline: shortfall {} s", report.total_shortfall());
    }

    let mut ctl = ItuController::with_default_modes("I1", fsm);
    println!("active mode: {}", ctl.active_mode().id);
    let v = ViolationMsg::new(Level::Itu, Level::Ztcu, "I1", "seconds", 2.5, 120.0)?;
    ctl.shortcut_to_safe(&v);
    println!("after violation: {} (safe = {})", ctl.active_mode().id, ctl.in_safe_mode());
    Ok(())
}
