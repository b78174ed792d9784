//! Intersection traffic unit: the cyclic three-state signal controller and
//! its abstract implementation modes.
//!
//! A signalized intersection has two conflicting approach directions. The
//! FSM state is the aspect shown to the secondary direction; the primary
//! direction runs while the secondary sees red. Yellow is clearance for
//! both. Phase order is fixed: Green -> Yellow -> Red -> Green.
//!
//! All FSM timing is kept in integer milliseconds so that the split sum and
//! periodicity are exact.

use std::fmt;

use thiserror::Error;

use crate::hierarchy::ViolationMsg;

/// Minimum yellow enforced when splits are rebalanced.
pub const MIN_YELLOW_MS: u64 = 3_000;
/// Minimum green and red dwell kept by rebalancing.
pub const MIN_PHASE_MS: u64 = 5_000;

pub fn secs_to_ms(secs: f64) -> u64 {
    (secs * 1000.0).round().max(0.0) as u64
}

pub fn ms_to_secs(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ItuError {
    #[error("split for {0} must be positive")]
    ZeroSplit(SignalState),
    #[error("offset {offset}s outside [0, {cycle}s)")]
    OffsetOutOfRange { offset: f64, cycle: f64 },
    #[error("controller {0} declares {1} safe implementation modes, expected exactly one")]
    SafeModeCount(String, usize),
    #[error("deadline {0}s is negative")]
    NegativeDeadline(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SignalState {
    Green,
    Yellow,
    Red,
}

impl SignalState {
    pub fn next(self) -> SignalState {
        match self {
            SignalState::Green => SignalState::Yellow,
            SignalState::Yellow => SignalState::Red,
            SignalState::Red => SignalState::Green,
        }
    }

    /// Whether vehicles on `direction` may enter the intersection.
    pub fn enables(self, direction: Direction) -> bool {
        matches!(
            (self, direction),
            (SignalState::Green, Direction::Secondary) | (SignalState::Red, Direction::Primary)
        )
    }

    /// The state that lets `direction` proceed.
    pub fn enabling(direction: Direction) -> SignalState {
        match direction {
            Direction::Primary => SignalState::Red,
            Direction::Secondary => SignalState::Green,
        }
    }

    pub fn parse(s: &str) -> Option<SignalState> {
        match s.to_ascii_lowercase().as_str() {
            "green" | "g" => Some(SignalState::Green),
            "yellow" | "y" => Some(SignalState::Yellow),
            "red" | "r" => Some(SignalState::Red),
            _ => None,
        }
    }
}

impl fmt::Display for SignalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalState::Green => "Green",
            SignalState::Yellow => "Yellow",
            SignalState::Red => "Red",
        })
    }
}

/// Approach direction at a signalized intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Primary,
    Secondary,
}

impl Direction {
    pub fn number(self) -> u8 {
        match self {
            Direction::Primary => 1,
            Direction::Secondary => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Direction> {
        match n {
            1 => Some(Direction::Primary),
            2 => Some(Direction::Secondary),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Cyclic signal controller with split, cycle and offset times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalFsm {
    green: u64,
    yellow: u64,
    red: u64,
    /// State entered at cycle time zero.
    first: SignalState,
    offset: u64,
    /// Reference clock modulo the cycle.
    clock: u64,
}

impl SignalFsm {
    /// Splits in seconds; the cycle is their sum.
    pub fn new(green: f64, yellow: f64, red: f64, first: SignalState) -> Result<Self, ItuError> {
        Self::from_ms(secs_to_ms(green), secs_to_ms(yellow), secs_to_ms(red), first)
    }

    pub fn from_ms(green: u64, yellow: u64, red: u64, first: SignalState) -> Result<Self, ItuError> {
        for (s, v) in [
            (SignalState::Green, green),
            (SignalState::Yellow, yellow),
            (SignalState::Red, red),
        ] {
            if v == 0 {
                return Err(ItuError::ZeroSplit(s));
            }
        }
        Ok(SignalFsm {
            green,
            yellow,
            red,
            first,
            offset: 0,
            clock: 0,
        })
    }

    /// 30 / 5 / 25 on a 60 s cycle, starting in Green.
    pub fn fallback() -> Self {
        SignalFsm::from_ms(30_000, 5_000, 25_000, SignalState::Green).expect("valid fallback")
    }

    pub fn cycle_ms(&self) -> u64 {
        self.green + self.yellow + self.red
    }

    pub fn cycle(&self) -> f64 {
        ms_to_secs(self.cycle_ms())
    }

    pub fn split_ms(&self, state: SignalState) -> u64 {
        match state {
            SignalState::Green => self.green,
            SignalState::Yellow => self.yellow,
            SignalState::Red => self.red,
        }
    }

    pub fn split(&self, state: SignalState) -> f64 {
        ms_to_secs(self.split_ms(state))
    }

    pub fn first(&self) -> SignalState {
        self.first
    }

    pub fn offset(&self) -> f64 {
        ms_to_secs(self.offset)
    }

    pub fn offset_ms(&self) -> u64 {
        self.offset
    }

    /// Position inside the (offset-shifted) cycle.
    pub fn cycle_time_ms(&self) -> u64 {
        let c = self.cycle_ms();
        (self.clock + c - self.offset % c) % c
    }

    pub fn current(&self) -> SignalState {
        self.state_at_cycle_time(self.cycle_time_ms()).0
    }

    /// Seconds already spent in the current state.
    pub fn phase_clock(&self) -> f64 {
        ms_to_secs(self.state_at_cycle_time(self.cycle_time_ms()).1)
    }

    fn sequence(&self) -> [SignalState; 3] {
        let a = self.first;
        [a, a.next(), a.next().next()]
    }

    /// State at cycle time `tau` and the time already spent in it.
    pub fn state_at_cycle_time(&self, tau: u64) -> (SignalState, u64) {
        let mut t = tau % self.cycle_ms();
        for s in self.sequence() {
            let d = self.split_ms(s);
            if t < d {
                return (s, t);
            }
            t -= d;
        }
        unreachable!("cycle time below cycle length")
    }

    /// Interval `[start, end)` of `state` in cycle time.
    pub fn window_ms(&self, state: SignalState) -> (u64, u64) {
        let mut start = 0;
        for s in self.sequence() {
            let d = self.split_ms(s);
            if s == state {
                return (start, start + d);
            }
            start += d;
        }
        unreachable!()
    }

    /// State at reference time `t` (seconds) for a controller whose clock
    /// started at zero.
    pub fn state_at(&self, t: f64) -> SignalState {
        let c = self.cycle_ms();
        let t = secs_to_ms(t) % c;
        self.state_at_cycle_time((t + c - self.offset % c) % c).0
    }

    pub fn advance(&self, dt: f64) -> SignalFsm {
        self.advance_ms(secs_to_ms(dt))
    }

    pub fn advance_ms(&self, dt: u64) -> SignalFsm {
        let mut next = *self;
        next.clock = (self.clock + dt % self.cycle_ms()) % self.cycle_ms();
        next
    }

    pub fn set_offset(&self, offset: f64) -> Result<SignalFsm, ItuError> {
        let ms = secs_to_ms(offset);
        if !(offset >= 0.0) || ms >= self.cycle_ms() {
            return Err(ItuError::OffsetOutOfRange {
                offset,
                cycle: self.cycle(),
            });
        }
        Ok(SignalFsm { offset: ms, ..*self })
    }

    /// Replaces the splits, keeping first state, offset and clock.
    pub fn with_splits_ms(&self, green: u64, yellow: u64, red: u64) -> Result<SignalFsm, ItuError> {
        let fresh = SignalFsm::from_ms(green, yellow, red, self.first)?;
        let c = fresh.cycle_ms();
        Ok(SignalFsm {
            offset: self.offset % c,
            clock: self.clock % c,
            ..fresh
        })
    }

    /// Immediately switches to `state` (lone-vehicle early switching),
    /// shifting the phase so that `state` starts now.
    pub fn jump_to(&self, state: SignalState) -> SignalFsm {
        let (start, _) = self.window_ms(state);
        let c = self.cycle_ms();
        let mut next = *self;
        // cycle_time = clock - offset = start
        next.clock = (start + self.offset) % c;
        next
    }

    fn with_green(&self, green: u64, yellow: u64) -> SignalFsm {
        let red = self.cycle_ms() - yellow - green;
        SignalFsm {
            green,
            yellow,
            red,
            ..*self
        }
    }

    /// Rebalances green against red (yellow fixed, at least
    /// [`MIN_YELLOW_MS`]) so that every constraint holds at its deadline.
    ///
    /// With a fixed phase order the admissible greens of one constraint form
    /// an interval, so the search is a sweep over green durations; among the
    /// feasible ones the closest to the current green is chosen.
    pub fn apply_timing_constraints(
        &self,
        constraints: &[TimingConstraint],
    ) -> Result<SignalFsm, InfeasibilityReport> {
        let cycle = self.cycle_ms();
        if constraints.iter().all(|c| c.holds(self)) {
            return Ok(*self);
        }

        let mut out_of_range = Vec::new();
        let mut in_range = Vec::new();
        for c in constraints {
            if c.deadline_ms >= cycle {
                out_of_range.push(Shortfall {
                    constraint: c.clone(),
                    seconds: ms_to_secs(c.deadline_ms - cycle + 1),
                });
            } else {
                in_range.push(c);
            }
        }

        let yellow = self.yellow.max(MIN_YELLOW_MS);
        let candidates = self.green_candidates(yellow);
        let feasible_for = |c: &TimingConstraint| -> Vec<bool> {
            candidates
                .iter()
                .map(|&g| c.distance_ms(&self.with_green(g, yellow)) == 0)
                .collect()
        };
        let masks: Vec<Vec<bool>> = in_range.iter().map(|c| feasible_for(c)).collect();

        if out_of_range.is_empty() && !candidates.is_empty() {
            let best = candidates
                .iter()
                .enumerate()
                .filter(|(k, _)| masks.iter().all(|m| m[*k]))
                .min_by_key(|(_, &g)| (g.abs_diff(self.green), g))
                .map(|(_, &g)| g);
            if let Some(g) = best {
                return Ok(self.with_green(g, yellow));
            }
        }

        // Infeasible: charge every constraint that cannot be met together
        // with the rest.
        let mut entries = out_of_range;
        let mut blamed = Vec::new();
        for (ci, c) in in_range.iter().enumerate() {
            let others: Vec<usize> = (0..candidates.len())
                .filter(|&k| masks.iter().enumerate().all(|(j, m)| j == ci || m[k]))
                .collect();
            let pool: Vec<usize> = if others.is_empty() {
                (0..candidates.len()).collect()
            } else {
                others
            };
            let d = pool
                .iter()
                .map(|&k| c.distance_ms(&self.with_green(candidates[k], yellow)))
                .min()
                .unwrap_or_else(|| c.distance_ms(self));
            if d > 0 {
                blamed.push(ci);
                entries.push(Shortfall {
                    constraint: (*c).clone(),
                    seconds: ms_to_secs(d),
                });
            }
        }
        if entries.is_empty() {
            // No single constraint is to blame; report all at the best
            // compromise green.
            let best = candidates
                .iter()
                .map(|&g| {
                    let f = self.with_green(g, yellow);
                    in_range.iter().map(|c| c.distance_ms(&f)).max().unwrap_or(0)
                })
                .min()
                .unwrap_or(1)
                .max(1);
            entries = in_range
                .iter()
                .map(|c| Shortfall {
                    constraint: (*c).clone(),
                    seconds: ms_to_secs(best),
                })
                .collect();
        }
        Err(InfeasibilityReport { entries })
    }

    fn green_candidates(&self, yellow: u64) -> Vec<u64> {
        let cycle = self.cycle_ms();
        if cycle < yellow + 2 * MIN_PHASE_MS {
            // Too short to rebalance; only the current green is admissible.
            return if self.green + yellow < cycle {
                vec![self.green]
            } else {
                vec![]
            };
        }
        (MIN_PHASE_MS..=cycle - yellow - MIN_PHASE_MS).collect()
    }
}

/// "At `deadline` seconds into the cycle the FSM must be in `required`."
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TimingConstraint {
    deadline_ms: u64,
    pub required: SignalState,
    pub scenario: String,
}

impl TimingConstraint {
    pub fn new(deadline: f64, required: SignalState, scenario: impl Into<String>) -> Result<Self, ItuError> {
        if !(deadline >= 0.0) {
            return Err(ItuError::NegativeDeadline(deadline));
        }
        Ok(TimingConstraint {
            deadline_ms: secs_to_ms(deadline),
            required,
            scenario: scenario.into(),
        })
    }

    pub fn deadline(&self) -> f64 {
        ms_to_secs(self.deadline_ms)
    }

    pub fn deadline_ms(&self) -> u64 {
        self.deadline_ms
    }

    pub fn holds(&self, fsm: &SignalFsm) -> bool {
        self.deadline_ms < fsm.cycle_ms() && fsm.state_at_cycle_time(self.deadline_ms).0 == self.required
    }

    /// Cyclic distance (ms) from the deadline to the nearest instant where
    /// the required state holds.
    fn distance_ms(&self, fsm: &SignalFsm) -> u64 {
        let c = fsm.cycle_ms();
        let tau = self.deadline_ms % c;
        let (a, b) = fsm.window_ms(self.required);
        if (a..b).contains(&tau) {
            return 0;
        }
        let before = (a + c - tau) % c;
        let after = (tau + c - (b - 1)) % c;
        before.min(after)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shortfall {
    pub constraint: TimingConstraint,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityReport {
    pub entries: Vec<Shortfall>,
}

impl InfeasibilityReport {
    pub fn total_shortfall(&self) -> f64 {
        self.entries.iter().map(|e| e.seconds).sum()
    }
}

/// Replays `fsm` over one cycle and lists the constraints violated at their
/// deadlines.
pub fn replay_violations(fsm: &SignalFsm, constraints: &[TimingConstraint]) -> Vec<TimingConstraint> {
    // Step the FSM itself rather than evaluating windows.
    let mut f = SignalFsm { clock: fsm.offset % fsm.cycle_ms(), ..*fsm };
    let mut violated = Vec::new();
    let mut sorted: Vec<&TimingConstraint> = constraints.iter().collect();
    sorted.sort_by_key(|c| c.deadline_ms);
    let mut t = 0;
    for c in sorted {
        if c.deadline_ms >= fsm.cycle_ms() {
            violated.push(c.clone());
            continue;
        }
        f = f.advance_ms(c.deadline_ms - t);
        t = c.deadline_ms;
        if f.current() != c.required {
            violated.push(c.clone());
        }
    }
    violated
}

/// Abstract implementation of a controller (reconfigurable realisation).
#[derive(Debug, Clone, PartialEq)]
pub struct ImplementationMode {
    pub id: String,
    pub latency: f64,
    pub cost: f64,
    pub safe: bool,
}

impl ImplementationMode {
    pub fn new(id: impl Into<String>, latency: f64, cost: f64, safe: bool) -> Self {
        ImplementationMode {
            id: id.into(),
            latency,
            cost: cost.max(0.0),
            safe,
        }
    }
}

/// Entry of a controller's mode log.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeEvent {
    pub at: f64,
    pub from: String,
    pub to: String,
    pub changed: bool,
    pub cause: String,
    pub shortfall: f64,
}

/// A signal FSM together with its implementation modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ItuController {
    pub id: String,
    pub fsm: SignalFsm,
    modes: Vec<ImplementationMode>,
    active: usize,
    /// Switch early to Green for a lone secondary vehicle facing an empty
    /// primary approach.
    pub early_green: bool,
    log: Vec<ModeEvent>,
}

impl ItuController {
    pub fn new(id: impl Into<String>, fsm: SignalFsm, modes: Vec<ImplementationMode>) -> Result<Self, ItuError> {
        let id = id.into();
        let safe = modes.iter().filter(|m| m.safe).count();
        if safe != 1 {
            return Err(ItuError::SafeModeCount(id, safe));
        }
        // Start in the most capable (fastest) mode.
        let active = modes
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.latency.total_cmp(&b.1.latency).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k)
            .unwrap_or(0);
        Ok(ItuController {
            id,
            fsm,
            modes,
            active,
            early_green: false,
            log: Vec::new(),
        })
    }

    /// Two-mode controller: a fast, costly adaptive mode and a safe one.
    pub fn with_default_modes(id: impl Into<String>, fsm: SignalFsm) -> Self {
        ItuController::new(
            id,
            fsm,
            vec![
                ImplementationMode::new("adaptive", 0.1, 3.0, false),
                ImplementationMode::new("reduced", 0.5, 2.0, false),
                ImplementationMode::new("safe", 1.0, 1.0, true),
            ],
        )
        .expect("exactly one safe mode")
    }

    pub fn modes(&self) -> &[ImplementationMode] {
        &self.modes
    }

    pub fn active_mode(&self) -> &ImplementationMode {
        &self.modes[self.active]
    }

    pub fn in_safe_mode(&self) -> bool {
        self.modes[self.active].safe
    }

    pub fn mode_log(&self) -> &[ModeEvent] {
        &self.log
    }

    fn safe_index(&self) -> usize {
        self.modes.iter().position(|m| m.safe).expect("validated")
    }

    /// Performance-constraint shortcut: jump straight to the safe mode,
    /// skipping intermediate modes. Returns whether the mode changed.
    pub fn shortcut_to_safe(&mut self, violation: &ViolationMsg) -> bool {
        let safe = self.safe_index();
        let from = self.modes[self.active].id.clone();
        let changed = self.active != safe;
        self.active = safe;
        self.log.push(ModeEvent {
            at: violation.occurred_at,
            from,
            to: self.modes[safe].id.clone(),
            changed,
            cause: violation.quantity.clone(),
            shortfall: violation.shortfall,
        });
        changed
    }

    /// Default behaviour when coordination does not converge: safe mode and
    /// the fixed fallback split, keeping the offset when it still fits.
    pub fn engage_default(&mut self, violation: &ViolationMsg) {
        self.shortcut_to_safe(violation);
        let fallback = SignalFsm::fallback();
        let offset = self.fsm.offset_ms() % fallback.cycle_ms();
        self.fsm = SignalFsm {
            offset,
            clock: self.fsm.clock % fallback.cycle_ms(),
            ..fallback
        };
    }

    /// Gradual adaptation: one step towards a faster mode when the active
    /// latency misses `budget`, one step towards a cheaper mode when it
    /// beats the budget by more than half.
    pub fn adapt(&mut self, budget: f64, at: f64) -> bool {
        let mut order: Vec<usize> = (0..self.modes.len()).collect();
        order.sort_by(|&a, &b| self.modes[a].latency.total_cmp(&self.modes[b].latency).then(a.cmp(&b)));
        let pos = order.iter().position(|&k| k == self.active).expect("active mode");
        let lat = self.modes[self.active].latency;
        let target = if lat > budget && pos > 0 {
            Some(order[pos - 1])
        } else if lat < budget * 0.5 && pos + 1 < order.len() && self.modes[order[pos + 1]].latency <= budget {
            Some(order[pos + 1])
        } else {
            None
        };
        match target {
            Some(k) => {
                self.log.push(ModeEvent {
                    at,
                    from: self.modes[self.active].id.clone(),
                    to: self.modes[k].id.clone(),
                    changed: true,
                    cause: "latency".into(),
                    shortfall: (lat - budget).abs(),
                });
                self.active = k;
                true
            }
            None => false,
        }
    }

    /// Advances the FSM by `dt` seconds, applying the early-green rule when
    /// enabled.
    pub fn tick(&mut self, dt: f64, primary_waiting: usize, secondary_waiting: usize) {
        self.fsm = self.fsm.advance(dt);
        if self.early_green
            && self.fsm.current() == SignalState::Red
            && primary_waiting == 0
            && secondary_waiting > 0
        {
            self.fsm = self.fsm.jump_to(SignalState::Green);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::Level;

    fn fsm() -> SignalFsm {
        SignalFsm::new(30.0, 5.0, 25.0, SignalState::Green).unwrap()
    }

    #[test]
    fn advance_zero_is_identity() {
        let f = fsm().advance(12.3);
        assert_eq!(f.advance(0.0), f);
    }

    #[test]
    fn advance_through_split() {
        let f = fsm();
        assert_eq!(f.current(), SignalState::Green);
        assert_eq!(f.advance(30.0).current(), SignalState::Yellow);
        assert_eq!(f.advance(29.9).current(), SignalState::Green);
        assert_eq!(f.advance(35.0).current(), SignalState::Red);
        assert_eq!(f.advance(60.0).current(), SignalState::Green);
    }

    #[test]
    fn full_cycle_is_identity_from_any_phase() {
        for k in 0..600 {
            let f = fsm().advance(k as f64 * 0.1);
            let g = f.advance(60.0);
            assert_eq!(f, g);
            assert_eq!(f.current(), g.current());
            assert_eq!(f.phase_clock(), g.phase_clock());
        }
    }

    #[test]
    fn phase_clock_within_split() {
        let f = fsm().advance(47.5);
        assert_eq!(f.current(), SignalState::Red);
        assert_eq!(f.phase_clock(), 12.5);
    }

    #[test]
    fn zero_split_rejected() {
        assert_eq!(
            SignalFsm::new(0.0, 5.0, 25.0, SignalState::Green),
            Err(ItuError::ZeroSplit(SignalState::Green))
        );
    }

    #[test]
    fn offsets() {
        let f = fsm();
        assert_eq!(f.set_offset(0.0).unwrap(), f);
        assert!(matches!(f.set_offset(60.0), Err(ItuError::OffsetOutOfRange { .. })));
        assert!(f.set_offset(-1.0).is_err());
        let shifted = f.set_offset(10.0).unwrap();
        for k in 0..1200 {
            let t = k as f64 * 0.1;
            assert_eq!(shifted.state_at(t), f.state_at(t - 10.0 + 60.0), "t={t}");
        }
    }

    #[test]
    fn satisfied_constraint_keeps_fsm() {
        let f = fsm();
        let c = TimingConstraint::new(10.0, SignalState::Green, "s").unwrap();
        assert_eq!(f.apply_timing_constraints(&[c]).unwrap(), f);
    }

    #[test]
    fn rebalance_to_meet_green_deadline() {
        let f = SignalFsm::new(30.0, 5.0, 25.0, SignalState::Red).unwrap();
        // Red [0,25) Green [25,55): Green at 20 needs red <= 20.
        let c = TimingConstraint::new(20.0, SignalState::Green, "s").unwrap();
        assert!(!c.holds(&f));
        let g = f.apply_timing_constraints(std::slice::from_ref(&c)).unwrap();
        assert_eq!(g.cycle_ms(), f.cycle_ms());
        assert!(replay_violations(&g, &[c]).is_empty());
        assert_eq!(g.split(SignalState::Yellow), 5.0);
        assert_eq!(g.split(SignalState::Red), 20.0);
    }

    #[test]
    fn contradictory_constraints_reported() {
        let f = fsm();
        let a = TimingConstraint::new(35.0, SignalState::Red, "s").unwrap();
        let b = TimingConstraint::new(35.0, SignalState::Green, "s").unwrap();
        let report = f.apply_timing_constraints(&[a.clone(), b.clone()]).unwrap_err();
        assert_eq!(report.entries.len(), 2);
        assert!(report.entries.iter().all(|e| e.seconds > 0.0));
        let named: Vec<_> = report.entries.iter().map(|e| e.constraint.clone()).collect();
        assert!(named.contains(&a) && named.contains(&b));
    }

    #[test]
    fn deadline_beyond_cycle_is_infeasible() {
        let c = TimingConstraint::new(65.0, SignalState::Green, "s").unwrap();
        let report = fsm().apply_timing_constraints(&[c]).unwrap_err();
        assert_eq!(report.entries.len(), 1);
        assert!((report.entries[0].seconds - 5.001).abs() < 1e-9);
    }

    #[test]
    fn rebalancing_enforces_min_yellow() {
        let f = SignalFsm::new(30.0, 1.0, 29.0, SignalState::Green).unwrap();
        let c = TimingConstraint::new(45.0, SignalState::Green, "s").unwrap();
        let g = f.apply_timing_constraints(&[c]).unwrap();
        assert_eq!(g.split(SignalState::Yellow), 3.0);
        assert_eq!(g.cycle_ms(), 60_000);
    }

    fn violation(at: f64) -> ViolationMsg {
        ViolationMsg::new(Level::Itu, Level::Ztcu, "I1", "budget", 2.0, at).unwrap()
    }

    #[test]
    fn shortcut_jumps_directly_to_safe() {
        let mut c = ItuController::with_default_modes("I1", fsm());
        assert_eq!(c.active_mode().id, "adaptive");
        assert!(c.shortcut_to_safe(&violation(3.0)));
        assert!(c.in_safe_mode());
        let log = c.mode_log();
        assert_eq!(log.len(), 1);
        assert_eq!((log[0].from.as_str(), log[0].to.as_str()), ("adaptive", "safe"));
        assert_eq!(log[0].at, 3.0);
        // repeated: no further change, still logged
        assert!(!c.shortcut_to_safe(&violation(4.0)));
        assert!(!c.shortcut_to_safe(&violation(5.0)));
        assert_eq!(c.mode_log().iter().filter(|e| e.changed).count(), 1);
        assert_eq!(c.mode_log().len(), 3);
    }

    #[test]
    fn adapt_moves_one_step() {
        let mut c = ItuController::with_default_modes("I1", fsm());
        c.shortcut_to_safe(&violation(0.0));
        assert!(c.adapt(0.2, 1.0));
        assert_eq!(c.active_mode().id, "reduced");
        assert!(c.adapt(0.2, 2.0));
        assert_eq!(c.active_mode().id, "adaptive");
        assert!(!c.adapt(0.2, 3.0));
    }

    #[test]
    fn safe_mode_count_validated() {
        let r = ItuController::new("x", fsm(), vec![ImplementationMode::new("a", 1.0, 1.0, false)]);
        assert_eq!(r, Err(ItuError::SafeModeCount("x".into(), 0)));
    }

    #[test]
    fn early_green_for_lone_vehicle() {
        let mut c = ItuController::with_default_modes("I1", fsm());
        c.tick(40.0, 3, 1);
        assert_eq!(c.fsm.current(), SignalState::Red);
        c.early_green = true;
        c.tick(0.1, 0, 1);
        assert_eq!(c.fsm.current(), SignalState::Green);
    }
}
