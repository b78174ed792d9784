//! Street-lighting controller: the control surface over illumination and
//! traffic density, and a few LCU adaptation steps.

use civitas::fuzzy::{control, surface, FuzzyParams, Lcu, LightingFeedback, RuleBase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rules = RuleBase::default();
    let mut params = FuzzyParams::uniform(0.5, 1.0, 1.2)?;
    let s = surface(&params, &rules, 11)?;
    print!("{:>6}", "i \\ d");
    for d in &s.d_axis {
        print!("{d:>6.2}");
    }
    println!();
    for (a, i) in s.i_axis.iter().enumerate() {
        print!("{i:>6.2}");
        for u in &s.u[a] {
            print!("{u:>6.3}");
        }
        println!();
    }

    // The zone stays darker than requested; the LCU widens the command.
    let mut lcu = Lcu::default();
    for step in 0..5 {
        let u = control(0.2, 0.6, &params, &rules)?;
        let feedback = LightingFeedback {
            target: 1.0,
            achieved: 0.8 * u / 0.7,
            over_budget: false,
        };
        params = lcu.update(&params, &feedback);
        println!("step {step}: u = {u:.4}, smoothed error {:.4}", lcu.smoothed_error());
    }
    Ok(())
}
