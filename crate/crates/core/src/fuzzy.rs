//! Two-level ambient lighting control.
//!
//! The lower level is a Mamdani controller (ZLCU): both inputs, ambient
//! illumination `i` and traffic density `d`, are fuzzified into the
//! qualitative values small / medium / big, a 3x3 rule base is evaluated with
//! max-min inference and the aggregated output set is defuzzified by its
//! centroid to give the lamp command `u`.
//!
//! The upper level (LCU) owns the 3x3 parameter matrix and adapts the command
//! row from illumination feedback.
//!
//! Membership shapes for a row `(m, M, MI)`:
//!
//! ```text
//!  1 |S         M         B_________
//!    |  \     /   \     /
//!    |    \ /       \ /
//!    |    / \       / \
//!  0 +---------------------------|
//!    0        m         M        MI
//! ```
//!
//! `S` is a left shoulder falling to zero at `m`, `M` a triangle peaking at
//! `m` and vanishing at `0` and `M`, and `B` a right shoulder rising from `m`
//! and saturating on `[M, MI]`. On `[0, M]` the three degrees sum to one.

use std::fmt;

use thiserror::Error;

use crate::fmt::{sig, Csv};

/// Samples on the output universe used by [`control`].
pub const OUTPUT_SAMPLES: usize = 1201;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("value {value} outside universe [0, {max}]")]
    OutOfUniverse { value: f64, max: f64 },
    #[error("invalid membership row (m={m}, M={big}, MI={limit}): need 0 < m < M <= MI")]
    InvalidRow { m: f64, big: f64, limit: f64 },
    #[error("grid size must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("output resolution must be at least 2 samples, got {0}")]
    ResolutionTooSmall(usize),
}

/// Qualitative value of a fuzzy variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Small,
    Medium,
    Big,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Small, Label::Medium, Label::Big];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Small => "S",
            Label::Medium => "M",
            Label::Big => "B",
        })
    }
}

/// One row of the parameter matrix: medium value, maximum value and limited
/// maximum value of a universe of discourse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipRow {
    pub m: f64,
    pub big: f64,
    pub limit: f64,
}

impl MembershipRow {
    pub fn new(m: f64, big: f64, limit: f64) -> Result<Self, FuzzyError> {
        let row = MembershipRow { m, big, limit };
        row.validate()?;
        Ok(row)
    }

    fn validate(&self) -> Result<(), FuzzyError> {
        let ok = self.m.is_finite()
            && self.big.is_finite()
            && self.limit.is_finite()
            && 0.0 < self.m
            && self.m < self.big
            && self.big <= self.limit;
        if ok {
            Ok(())
        } else {
            Err(FuzzyError::InvalidRow {
                m: self.m,
                big: self.big,
                limit: self.limit,
            })
        }
    }

    /// Degree of `label` at `x`, without range checking (zero outside the
    /// universe on the left, saturated on the right).
    pub fn degree(&self, label: Label, x: f64) -> f64 {
        let small = if x <= 0.0 {
            1.0
        } else if x < self.m {
            (self.m - x) / self.m
        } else {
            0.0
        };
        match label {
            Label::Small => small,
            Label::Medium => {
                if x <= 0.0 || x >= self.big {
                    0.0
                } else if x < self.m {
                    // complement keeps S + M == 1 exactly on [0, m]
                    1.0 - small
                } else if x == self.m {
                    1.0
                } else {
                    (self.big - x) / (self.big - self.m)
                }
            }
            Label::Big => {
                if x <= self.m {
                    0.0
                } else if x >= self.big {
                    1.0
                } else {
                    1.0 - (self.big - x) / (self.big - self.m)
                }
            }
        }
    }
}

/// The 3x3 parameter matrix handed down by the LCU; rows are illumination,
/// traffic density and lamp command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyParams {
    pub illumination: MembershipRow,
    pub density: MembershipRow,
    pub command: MembershipRow,
}

impl FuzzyParams {
    pub fn new(
        illumination: MembershipRow,
        density: MembershipRow,
        command: MembershipRow,
    ) -> Result<Self, FuzzyError> {
        for row in [&illumination, &density, &command] {
            row.validate()?;
        }
        Ok(FuzzyParams {
            illumination,
            density,
            command,
        })
    }

    /// Same row for all three variables.
    pub fn uniform(m: f64, big: f64, limit: f64) -> Result<Self, FuzzyError> {
        let row = MembershipRow::new(m, big, limit)?;
        Ok(FuzzyParams {
            illumination: row,
            density: row,
            command: row,
        })
    }

    pub fn as_matrix(&self) -> [[f64; 3]; 3] {
        [self.illumination, self.density, self.command].map(|r| [r.m, r.big, r.limit])
    }
}

impl Default for FuzzyParams {
    /// `(0.5; 1; 1.2)` on every variable.
    fn default() -> Self {
        FuzzyParams::uniform(0.5, 1.0, 1.2).expect("valid default row")
    }
}

/// Degrees of membership of a crisp value in S, M and B.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MembershipDegrees {
    pub small: f64,
    pub medium: f64,
    pub big: f64,
}

impl MembershipDegrees {
    pub fn new(small: f64, medium: f64, big: f64) -> Self {
        MembershipDegrees { small, medium, big }
    }

    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Small => self.small,
            Label::Medium => self.medium,
            Label::Big => self.big,
        }
    }

    pub fn sum(&self) -> f64 {
        self.small + self.medium + self.big
    }
}

pub fn fuzzify(x: f64, row: &MembershipRow) -> Result<MembershipDegrees, FuzzyError> {
    if !(0.0..=row.limit).contains(&x) {
        return Err(FuzzyError::OutOfUniverse {
            value: x,
            max: row.limit,
        });
    }
    Ok(MembershipDegrees {
        small: row.degree(Label::Small, x),
        medium: row.degree(Label::Medium, x),
        big: row.degree(Label::Big, x),
    })
}

/// Rule matrix indexed by (illumination label, density label).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleBase {
    cells: [[Label; 3]; 3],
}

impl RuleBase {
    /// `cells[i][d]` with labels ordered S, M, B on both axes.
    pub fn new(cells: [[Label; 3]; 3]) -> Self {
        RuleBase { cells }
    }

    pub fn consequent(&self, illumination: Label, density: Label) -> Label {
        self.cells[illumination.index()][density.index()]
    }
}

impl Default for RuleBase {
    /// Dark streets with traffic get bright light; bright ambient light keeps
    /// lamps dim regardless of traffic.
    fn default() -> Self {
        use Label::*;
        RuleBase::new([
            // i = S
            [Medium, Big, Big],
            // i = M
            [Small, Medium, Medium],
            // i = B
            [Small, Small, Small],
        ])
    }
}

/// Rule activation weights `w[i][d] = min(mu_i, mu_d)`.
pub fn activations(deg_i: &MembershipDegrees, deg_d: &MembershipDegrees) -> [[f64; 3]; 3] {
    let mut w = [[0.0; 3]; 3];
    for li in Label::ALL {
        for ld in Label::ALL {
            w[li.index()][ld.index()] = deg_i.get(li).min(deg_d.get(ld));
        }
    }
    w
}

/// Sampled membership function on the command universe `[0, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyOutputSet {
    max: f64,
    values: Vec<f64>,
}

impl FuzzyOutputSet {
    pub fn from_fn(max: f64, samples: usize, f: impl Fn(f64) -> f64) -> Self {
        let samples = samples.max(2);
        let step = max / (samples - 1) as f64;
        let values = (0..samples).map(|k| f(k as f64 * step)).collect();
        FuzzyOutputSet { max, values }
    }

    pub fn universe_max(&self) -> f64 {
        self.max
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, k: usize) -> f64 {
        self.max * k as f64 / (self.values.len() - 1) as f64
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

pub fn infer(
    deg_i: &MembershipDegrees,
    deg_d: &MembershipDegrees,
    rules: &RuleBase,
    command: &MembershipRow,
) -> FuzzyOutputSet {
    infer_with_resolution(deg_i, deg_d, rules, command, OUTPUT_SAMPLES)
}

pub fn infer_with_resolution(
    deg_i: &MembershipDegrees,
    deg_d: &MembershipDegrees,
    rules: &RuleBase,
    command: &MembershipRow,
    samples: usize,
) -> FuzzyOutputSet {
    let w = activations(deg_i, deg_d);
    // Clip level per output label: max over rules that conclude it.
    let mut clip = [0.0f64; 3];
    for li in Label::ALL {
        for ld in Label::ALL {
            let out = rules.consequent(li, ld);
            clip[out.index()] = clip[out.index()].max(w[li.index()][ld.index()]);
        }
    }
    FuzzyOutputSet::from_fn(command.limit, samples, |u| {
        Label::ALL
            .iter()
            .map(|&l| clip[l.index()].min(command.degree(l, u)))
            .fold(0.0, f64::max)
    })
}

/// Centre of mass of the sampled set; an identically zero set yields the
/// universe midpoint.
pub fn defuzzify_centroid(set: &FuzzyOutputSet) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &mu) in set.values.iter().enumerate() {
        num += set.point(k) * mu;
        den += mu;
    }
    if den == 0.0 {
        log::debug!("empty output set, defuzzifying to the universe midpoint");
        return set.max / 2.0;
    }
    num / den
}

pub fn control(
    i: f64,
    d: f64,
    params: &FuzzyParams,
    rules: &RuleBase,
) -> Result<f64, FuzzyError> {
    control_with_resolution(i, d, params, rules, OUTPUT_SAMPLES)
}

pub fn control_with_resolution(
    i: f64,
    d: f64,
    params: &FuzzyParams,
    rules: &RuleBase,
    samples: usize,
) -> Result<f64, FuzzyError> {
    if samples < 2 {
        return Err(FuzzyError::ResolutionTooSmall(samples));
    }
    let deg_i = fuzzify(i, &params.illumination)?;
    let deg_d = fuzzify(d, &params.density)?;
    let set = infer_with_resolution(&deg_i, &deg_d, rules, &params.command, samples);
    Ok(defuzzify_centroid(&set))
}

/// Control surface `u = f(i, d)` sampled on an `n x n` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub i_axis: Vec<f64>,
    pub d_axis: Vec<f64>,
    /// `u[a][b]` at `(i_axis[a], d_axis[b])`.
    pub u: Vec<Vec<f64>>,
}

impl Surface {
    /// Header `i,d,u`, row-major with `i` as the outer index.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["i", "d", "u"]);
        for (a, &i) in self.i_axis.iter().enumerate() {
            for (b, &d) in self.d_axis.iter().enumerate() {
                csv.row([sig(i), sig(d), sig(self.u[a][b])]);
            }
        }
        csv.finish()
    }

    /// Whitespace-separated blocks for `splot ... with lines`.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from("# i d u\n");
        for (a, &i) in self.i_axis.iter().enumerate() {
            for (b, &d) in self.d_axis.iter().enumerate() {
                out.push_str(&format!("{} {} {}\n", sig(i), sig(d), sig(self.u[a][b])));
            }
            out.push('\n');
        }
        out
    }
}

pub fn surface(params: &FuzzyParams, rules: &RuleBase, n: usize) -> Result<Surface, FuzzyError> {
    surface_with_resolution(params, rules, n, OUTPUT_SAMPLES)
}

pub fn surface_with_resolution(
    params: &FuzzyParams,
    rules: &RuleBase,
    n: usize,
    samples: usize,
) -> Result<Surface, FuzzyError> {
    if n < 2 {
        return Err(FuzzyError::GridTooSmall(n));
    }
    let axis = |max: f64| -> Vec<f64> {
        (0..n)
            .map(|k| if k == n - 1 { max } else { max * k as f64 / (n - 1) as f64 })
            .collect()
    };
    let i_axis = axis(params.illumination.limit);
    let d_axis = axis(params.density.limit);
    let u = i_axis
        .iter()
        .map(|&i| {
            d_axis
                .iter()
                .map(|&d| control_with_resolution(i, d, params, rules, samples))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Surface { i_axis, d_axis, u })
}

/// Illumination feedback reported to the LCU after a control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightingFeedback {
    pub target: f64,
    pub achieved: f64,
    /// The zone's energy budget is exhausted; brightening is not allowed.
    pub over_budget: bool,
}

/// Upper-level parameter adaptation.
///
/// The smoothed relative illumination error drives a multiplicative step on
/// the command row's `m` and `M`, clamped to +/-5% per update. Positive error
/// (under-illumination) widens the command memberships, which moves the
/// centroid towards brighter output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lcu {
    pub smoothing: f64,
    pub gain: f64,
    pub max_step: f64,
    smoothed_error: f64,
}

impl Default for Lcu {
    fn default() -> Self {
        Lcu {
            smoothing: 0.5,
            gain: 1.0,
            max_step: 0.05,
            smoothed_error: 0.0,
        }
    }
}

impl Lcu {
    pub fn new(smoothing: f64, gain: f64) -> Self {
        Lcu {
            smoothing: smoothing.clamp(0.0, 1.0),
            gain,
            ..Lcu::default()
        }
    }

    pub fn smoothed_error(&self) -> f64 {
        self.smoothed_error
    }

    pub fn update(&mut self, params: &FuzzyParams, feedback: &LightingFeedback) -> FuzzyParams {
        let scale = if feedback.target.abs() > 0.0 {
            feedback.target.abs()
        } else {
            1.0
        };
        let error = (feedback.target - feedback.achieved) / scale;
        self.smoothed_error = self.smoothing * error + (1.0 - self.smoothing) * self.smoothed_error;
        let mut step = (self.gain * self.smoothed_error).clamp(-self.max_step, self.max_step);
        if feedback.over_budget && step > 0.0 {
            step = 0.0;
        }
        if step == 0.0 {
            return *params;
        }
        let old = params.command;
        let mut row = MembershipRow {
            m: old.m * (1.0 + step),
            big: (old.big * (1.0 + step)).min(old.limit),
            limit: old.limit,
        };
        if row.m >= row.big {
            // would break m < M: keep m just below the clamped M
            row.m = old.m.max(row.big * (1.0 - self.max_step)).min(row.big);
            if row.m >= row.big {
                row = old;
            }
        }
        if row.validate().is_err() {
            row = old;
        }
        FuzzyParams {
            command: row,
            ..*params
        }
    }
}

/// Stateless LCU step (no smoothing memory).
pub fn lcu_update(params: &FuzzyParams, feedback: &LightingFeedback) -> FuzzyParams {
    Lcu::new(1.0, 1.0).update(params, feedback)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> MembershipRow {
        MembershipRow::new(0.5, 1.0, 1.2).unwrap()
    }

    #[test]
    fn fuzzify_reference_points() {
        assert_eq!(fuzzify(0.0, &row()).unwrap(), MembershipDegrees::new(1.0, 0.0, 0.0));
        assert_eq!(fuzzify(0.5, &row()).unwrap(), MembershipDegrees::new(0.0, 1.0, 0.0));
        assert_eq!(fuzzify(0.75, &row()).unwrap(), MembershipDegrees::new(0.0, 0.5, 0.5));
        assert_eq!(fuzzify(1.1, &row()).unwrap(), MembershipDegrees::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn fuzzify_rejects_outside_universe() {
        assert!(matches!(
            fuzzify(1.3, &row()),
            Err(FuzzyError::OutOfUniverse { .. })
        ));
        assert!(fuzzify(-0.01, &row()).is_err());
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(MembershipRow::new(0.0, 1.0, 1.2).is_err());
        assert!(MembershipRow::new(1.0, 1.0, 1.2).is_err());
        assert!(MembershipRow::new(0.5, 1.3, 1.2).is_err());
        assert!(MembershipRow::new(0.5, 1.2, 1.2).is_ok());
    }

    #[test]
    fn single_rule_outputs() {
        let p = FuzzyParams::default();
        let rules = RuleBase::default();
        let set = infer(
            &MembershipDegrees::new(0.0, 0.0, 1.0),
            &MembershipDegrees::new(1.0, 0.0, 0.0),
            &rules,
            &p.command,
        );
        let expected = FuzzyOutputSet::from_fn(1.2, OUTPUT_SAMPLES, |u| p.command.degree(Label::Small, u));
        assert_eq!(set, expected);

        let set = infer(
            &MembershipDegrees::new(0.0, 1.0, 0.0),
            &MembershipDegrees::new(0.0, 1.0, 0.0),
            &rules,
            &p.command,
        );
        let expected = FuzzyOutputSet::from_fn(1.2, OUTPUT_SAMPLES, |u| p.command.degree(Label::Medium, u));
        assert_eq!(set, expected);
    }

    #[test]
    fn zero_degrees_give_zero_set_and_midpoint() {
        let p = FuzzyParams::default();
        let zero = MembershipDegrees::default();
        let set = infer(&zero, &zero, &RuleBase::default(), &p.command);
        assert!(set.is_zero());
        assert_eq!(defuzzify_centroid(&set), 0.6);
    }

    #[test]
    fn symmetric_triangle_centroid() {
        let set = FuzzyOutputSet::from_fn(1.0, 1001, |u| (1.0 - (u - 0.5).abs() / 0.25).max(0.0));
        assert!((defuzzify_centroid(&set) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_cells() {
        let r = RuleBase::default();
        use Label::*;
        assert_eq!(r.consequent(Big, Small), Small);
        assert_eq!(r.consequent(Big, Big), Small);
        assert_eq!(r.consequent(Medium, Small), Small);
        assert_eq!(r.consequent(Medium, Medium), Medium);
        assert_eq!(r.consequent(Small, Small), Medium);
        assert_eq!(r.consequent(Small, Big), Big);
    }

    #[test]
    fn corners_of_two_by_two_surface() {
        let p = FuzzyParams::default();
        let r = RuleBase::default();
        let s = surface(&p, &r, 2).unwrap();
        for (a, &i) in [0.0, 1.2].iter().enumerate() {
            for (b, &d) in [0.0, 1.2].iter().enumerate() {
                assert_eq!(s.u[a][b], control(i, d, &p, &r).unwrap());
            }
        }
        assert!(surface(&p, &r, 1).is_err());
    }

    #[test]
    fn lcu_zero_error_is_identity() {
        let p = FuzzyParams::default();
        let fb = LightingFeedback {
            target: 1.0,
            achieved: 1.0,
            over_budget: false,
        };
        assert_eq!(lcu_update(&p, &fb), p);
    }

    #[test]
    fn lcu_step_is_clamped() {
        let p = FuzzyParams::default();
        let fb = LightingFeedback {
            target: 1.0,
            achieved: 0.0,
            over_budget: false,
        };
        let q = lcu_update(&p, &fb);
        assert!((q.command.m - 0.525).abs() < 1e-12);
        assert!((q.command.big - 1.05).abs() < 1e-12);
        let fb = LightingFeedback { over_budget: true, ..fb };
        assert_eq!(lcu_update(&p, &fb), p);
    }

    #[test]
    fn lcu_keeps_row_ordering() {
        // m close to M: a growing step cannot cross M which is pinned at MI
        let tight = FuzzyParams {
            command: MembershipRow::new(1.15, 1.2, 1.2).unwrap(),
            ..FuzzyParams::default()
        };
        let fb = LightingFeedback {
            target: 1.0,
            achieved: 0.0,
            over_budget: false,
        };
        let mut p = tight;
        for _ in 0..20 {
            p = lcu_update(&p, &fb);
            assert!(p.command.validate().is_ok(), "{:?}", p.command);
        }
    }
}
