//! A closed ring with a single-vehicle shared segment: over a long run the
//! vehicle count never changes and every zone balances exactly.

use std::collections::BTreeMap;

use civitas::config::{parse_demand, parse_network};
use civitas::world::WorldState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = parse_network(include_str!("../data/ring_network.toml"), "ring_network.toml")?;
    let demand = parse_demand(include_str!("../data/ring_demand.toml"), "ring_demand.toml", &net.network, None, None)?;
    let mut world = WorldState::new(net.network.clone(), demand)?;
    let mut signals = net.signals.clone();
    let start = world.total_vehicles();
    let steps = 20_000;
    let dt = 0.1;
    let mut worst_shared = 0;
    for _ in 0..steps {
        let controls: BTreeMap<_, _> = signals.iter().map(|(id, f)| (id.clone(), f.current())).collect();
        world.step(&controls, dt);
        for f in signals.values_mut() {
            *f = f.advance(dt);
        }
        worst_shared = worst_shared.max(world.queue_len("b").unwrap_or(0));
    }
    println!("vehicles: {start} at start, {} after {:.0} s", world.total_vehicles(), world.clock());
    println!("peak occupancy of shared segment b: {worst_shared}");
    for zone in ["BC", "loop", "all"] {
        let r = world.check_zone_balance(zone, 0.0, world.clock())?;
        println!("zone {zone:<5} balance residual {r}");
    }
    println!("traversals of b: {}", world.traversals("b").map_or(0, |t| t.len()));
    Ok(())
}
