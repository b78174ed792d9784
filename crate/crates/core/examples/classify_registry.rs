//! Registers lighting, traffic and power modules and classifies every link.

use civitas::config::parse_registry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = parse_registry(include_str!("../data/city_registry.toml"), "city_registry.toml")?;
    print!("{}", reg.report_csv());
    let kinds: Vec<String> = reg.kinds_present().iter().map(|k| format!("{k:?}")).collect();
    println!("kinds present: {}", kinds.join(", "));
    Ok(())
}
