//! Evaluates the design metrics of a hand-written input file.

use civitas::config::parse_metrics;
use civitas::metrics::{autonomy, efficiency, flexibility, predictability, scalability, CurvePair, EffortField, SpecBox};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = parse_metrics(include_str!("../data/metrics.toml"), "metrics.toml")?;
    if let Some(f) = &m.flexibility {
        let bx = SpecBox::new(f.ranges.clone())?;
        let feasible = |x: &[f64]| {
            f.constraints.iter().all(|row| {
                let (a, b) = row.split_at(row.len() - 1);
                a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() <= b[0]
            })
        };
        println!("flexibility    {:.4}", flexibility(feasible, &bx, f.samples, m.seed.unwrap_or(0)));
    }
    if let Some(s) = &m.scalability {
        println!("scalability    {:.4}", scalability(s.p1, s.cost1, s.p2, s.cost2)?);
    }
    if let Some(a) = &m.autonomy {
        let field = EffortField::new(a.performance.clone(), a.area.clone(), a.time.clone(), a.effort.clone())?;
        println!("autonomy       {:.4}", autonomy(&field));
    }
    if let Some(e) = &m.efficiency {
        let c = CurvePair::new(e.grid.clone(), e.adaptive.clone(), e.single_value.clone())?;
        println!("efficiency     {:.4}", efficiency(&c));
    }
    if let Some(p) = &m.predictability {
        let r = predictability(&p.records, p.limit)?;
        println!(
            "predictability max error {:.3}, rmse {:.3}, within limit {}",
            r.max_abs_error, r.rmse, r.within_limit
        );
    }
    Ok(())
}
