//! Evaluation metrics for decision-making systems: flexibility, scalability,
//! autonomy, efficiency and predictability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fmt::{sig, Csv};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("specification range for attribute {0} is empty or inverted")]
    EmptyRange(usize),
    #[error("scalability inputs must all be positive")]
    NonPositive,
    #[error("degenerate grid on axis {0}")]
    DegenerateAxis(&'static str),
    #[error("effort field has {got} values, grid needs {expected}")]
    FieldSize { expected: usize, got: usize },
    #[error("negative effort value {0}")]
    NegativeEffort(f64),
    #[error("curves are not sampled on a common grid")]
    GridMismatch,
    #[error("no records")]
    Empty,
}

/// Specification ranges `[P_L, P_U]`, one per performance attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecBox {
    ranges: Vec<(f64, f64)>,
}

impl SpecBox {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self, MetricError> {
        for (k, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo < hi) {
                return Err(MetricError::EmptyRange(k));
            }
        }
        Ok(SpecBox { ranges })
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }
}

/// Sample points drawn uniformly from `bx`; deterministic for a seed.
pub fn box_samples(bx: &SpecBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            bx.ranges
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect()
        })
        .collect()
}

/// Fraction of the specification box that is feasible, by Monte Carlo.
pub fn flexibility<F>(feasible: F, bx: &SpecBox, n: usize, seed: u64) -> f64
where
    F: Fn(&[f64]) -> bool,
{
    if n == 0 {
        return 0.0;
    }
    let hits = box_samples(bx, n, seed)
        .iter()
        .filter(|p| feasible(p))
        .count();
    hits as f64 / n as f64
}

/// `P1 * Cost2 / (P2 * Cost1)`.
pub fn scalability(p1: f64, cost1: f64, p2: f64, cost2: f64) -> Result<f64, MetricError> {
    if [p1, cost1, p2, cost2].iter().any(|&v| !(v > 0.0)) {
        return Err(MetricError::NonPositive);
    }
    Ok(p1 * cost2 / (p2 * cost1))
}

/// Human-effort values on a 3-D grid of cells over performance x area x time.
///
/// `*_edges` are strictly increasing cell boundaries; `values` holds one
/// effort per cell (sampled at the cell midpoint), performance-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EffortField {
    pub perf_edges: Vec<f64>,
    pub area_edges: Vec<f64>,
    pub time_edges: Vec<f64>,
    pub values: Vec<f64>,
}

impl EffortField {
    pub fn new(
        perf_edges: Vec<f64>,
        area_edges: Vec<f64>,
        time_edges: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, MetricError> {
        for (name, axis) in [
            ("performance", &perf_edges),
            ("area", &area_edges),
            ("time", &time_edges),
        ] {
            if axis.len() < 2 || axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(MetricError::DegenerateAxis(name));
            }
        }
        let expected = (perf_edges.len() - 1) * (area_edges.len() - 1) * (time_edges.len() - 1);
        if values.len() != expected {
            return Err(MetricError::FieldSize {
                expected,
                got: values.len(),
            });
        }
        if let Some(&v) = values.iter().find(|&&v| !(v >= 0.0)) {
            return Err(MetricError::NegativeEffort(v));
        }
        Ok(EffortField {
            perf_edges,
            area_edges,
            time_edges,
            values,
        })
    }

    /// Samples `effort(p, v, t)` at cell midpoints of a uniform `n^3` grid.
    pub fn sample<F>(
        effort: F,
        perf: (f64, f64),
        area: (f64, f64),
        time: (f64, f64),
        n: usize,
    ) -> Result<Self, MetricError>
    where
        F: Fn(f64, f64, f64) -> f64,
    {
        let edges = |(lo, hi): (f64, f64)| -> Vec<f64> {
            (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
        };
        let (pe, ae, te) = (edges(perf), edges(area), edges(time));
        let mid = |e: &[f64], k: usize| 0.5 * (e[k] + e[k + 1]);
        let mut values = Vec::with_capacity(n * n * n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    values.push(effort(mid(&pe, a), mid(&ae, b), mid(&te, c)));
                }
            }
        }
        EffortField::new(pe, ae, te, values)
    }
}

/// Midpoint-rule integral of human effort over the field's grid.
pub fn autonomy(field: &EffortField) -> f64 {
    let widths = |e: &[f64]| -> Vec<f64> { e.windows(2).map(|w| w[1] - w[0]).collect() };
    let (wp, wa, wt) = (
        widths(&field.perf_edges),
        widths(&field.area_edges),
        widths(&field.time_edges),
    );
    let mut total = 0.0;
    let mut idx = 0;
    for &dp in &wp {
        for &da in &wa {
            for &dt in &wt {
                total += field.values[idx] * dp * da * dt;
                idx += 1;
            }
        }
    }
    total
}

/// Overheads of the adaptive and the single-value (dedicated) design,
/// sampled on a common performance grid `[P_L, P_H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePair {
    pub grid: Vec<f64>,
    pub adaptive: Vec<f64>,
    pub single_value: Vec<f64>,
}

impl CurvePair {
    pub fn new(grid: Vec<f64>, adaptive: Vec<f64>, single_value: Vec<f64>) -> Result<Self, MetricError> {
        if grid.len() < 2
            || adaptive.len() != grid.len()
            || single_value.len() != grid.len()
            || grid.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(MetricError::GridMismatch);
        }
        Ok(CurvePair {
            grid,
            adaptive,
            single_value,
        })
    }
}

/// Average overhead of the adaptive system over the performance range.
pub fn efficiency(curves: &CurvePair) -> f64 {
    let g = &curves.grid;
    let diff: Vec<f64> = curves
        .adaptive
        .iter()
        .zip(&curves.single_value)
        .map(|(a, s)| a - s)
        .collect();
    let integral: f64 = (0..g.len() - 1)
        .map(|k| 0.5 * (diff[k] + diff[k + 1]) * (g[k + 1] - g[k]))
        .sum();
    integral / (g[g.len() - 1] - g[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictabilityReport {
    pub max_abs_error: f64,
    pub rmse: f64,
    pub within_limit: bool,
}

/// Error statistics over `(estimated, actual)` pairs.
pub fn predictability(records: &[(f64, f64)], limit: f64) -> Result<PredictabilityReport, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut max_abs: f64 = 0.0;
    let mut sq = 0.0;
    for &(est, act) in records {
        let e = est - act;
        max_abs = max_abs.max(e.abs());
        sq += e * e;
    }
    let rmse = (sq / records.len() as f64).sqrt();
    Ok(PredictabilityReport {
        max_abs_error: max_abs,
        rmse,
        within_limit: max_abs <= limit,
    })
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub parameters: String,
}

/// CSV with header `metric,value,parameters`; parameters are `;`-joined.
pub fn report_csv(rows: &[MetricRow]) -> String {
    let mut csv = Csv::new(&["metric", "value", "parameters"]);
    for r in rows {
        csv.row([r.metric.clone(), sig(r.value), r.parameters.replace(',', ";")]);
    }
    csv.finish()
}
