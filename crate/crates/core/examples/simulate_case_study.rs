//! Runs the two-intersection case study for one hour under the fixed plans
//! and under hierarchical control, and compares vehicles serviced.

use civitas::config::{parse_ctg, parse_demand, parse_network};
use civitas::sim::{run, Mode, SimSetup};

const NETWORK: &str = include_str!("../data/case_study_network.toml");
const DEMAND: &str = include_str!("../data/case_study_demand.toml");
const CTG: &str = include_str!("../data/case_study.ctg.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = parse_network(NETWORK, "case_study_network.toml")?;
    let ctg = parse_ctg(CTG, "case_study.ctg.toml")?;
    let horizon = 3600.0;
    let demand = parse_demand(DEMAND, "case_study_demand.toml", &net.network, None, Some(horizon))?;

    for mode in [Mode::Fixed, Mode::Hierarchical] {
        let mut setup = SimSetup::new(net.clone(), demand.clone(), Some(ctg.clone()), horizon, mode);
        setup.trace = false;
        let r = run(&setup)?;
        println!(
            "{:<12} arrived {:>5}  dropped {:>4}  serviced {:>5}  in network {:>3}",
            mode.name(),
            r.arrived,
            r.dropped,
            r.serviced,
            r.in_network
        );
        if mode == Mode::Hierarchical {
            let mut seen: Vec<String> = r.scenarios.iter().map(|(_, s)| s.key()).collect();
            seen.sort();
            seen.dedup();
            println!("scenarios visited: {}", seen.join(" "));
        }
    }
    Ok(())
}
