//! Fuzzy adaptive selection of the motion model.
//!
//! Each step the positional and rotational innovation magnitudes are
//! fuzzified into Low/Medium/High, every rule whose third antecedent matches
//! the current model fires with the product of its two memberships, and the
//! consequent of the strongest rule becomes the model for the next
//! prediction.

mod rulebase;

pub use rulebase::{
    generated_next, RuleBase, RuleBaseError, RuleFileReport, Violation, DEFAULT_RULE_FILE, PRINTED_RULES,
};

use crate::fusion::Innovation;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FammError {
    #[error("innovation magnitude must be non-negative and finite, got {0}")]
    NegativeMagnitude(f64),
    #[error("no rule fired with positive strength")]
    ControllerStall,
    #[error("invalid motion model {0:?}")]
    BadModel(String),
    #[error("invalid linguistic level {0:?}")]
    BadLevel(String),
    #[error("breakpoints must be non-negative and strictly increasing: {0:?}")]
    BadBreakpoints([f64; 3]),
}

/// Motion model `PiRj`: position advances by `i * V * dt`, rotation by
/// `j * Omega * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MotionModel {
    i: u8,
    j: u8,
}

impl MotionModel {
    /// The constant motion model.
    pub const CMM: MotionModel = MotionModel { i: 1, j: 1 };
    pub const STATIONARY: MotionModel = MotionModel { i: 0, j: 0 };

    pub fn new(i: u8, j: u8) -> Result<Self, FammError> {
        if i > 2 || j > 2 {
            return Err(FammError::BadModel(format!("P{i}R{j}")));
        }
        Ok(Self { i, j })
    }

    pub fn all() -> impl Iterator<Item = MotionModel> {
        (0..9u8).map(MotionModel::from_index)
    }

    /// `3 i + j`.
    pub fn index(self) -> usize {
        (self.i * 3 + self.j) as usize
    }

    pub fn from_index(k: u8) -> MotionModel {
        MotionModel { i: k / 3, j: k % 3 }
    }

    pub fn i(self) -> u8 {
        self.i
    }

    pub fn j(self) -> u8 {
        self.j
    }

    pub fn position_coefficient(self) -> f64 {
        self.i as f64
    }

    pub fn rotation_coefficient(self) -> f64 {
        self.j as f64
    }

    fn distance(self, other: MotionModel) -> u8 {
        self.i.abs_diff(other.i) + self.j.abs_diff(other.j)
    }
}

impl fmt::Display for MotionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}R{}", self.i, self.j)
    }
}

impl FromStr for MotionModel {
    type Err = FammError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.trim().as_bytes();
        if b.len() == 4 && b[0].eq_ignore_ascii_case(&b'P') && b[2].eq_ignore_ascii_case(&b'R') {
            let (i, j) = (b[1].wrapping_sub(b'0'), b[3].wrapping_sub(b'0'));
            if i <= 2 && j <= 2 {
                return Ok(MotionModel { i, j });
            }
        }
        Err(FammError::BadModel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Medium, Level::High];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Low => "Low",
            Level::Medium => "Medium",
            Level::High => "High",
        })
    }
}

impl FromStr for Level {
    type Err = FammError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Level::Low),
            "medium" | "med" => Ok(Level::Medium),
            "high" => Ok(Level::High),
            _ => Err(FammError::BadLevel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipDegrees {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl MembershipDegrees {
    pub fn crisp(level: Level) -> Self {
        let mut d = Self {
            low: 0.0,
            medium: 0.0,
            high: 0.0,
        };
        *d.get_mut(level) = 1.0;
        d
    }

    pub fn get(&self, level: Level) -> f64 {
        match level {
            Level::Low => self.low,
            Level::Medium => self.medium,
            Level::High => self.high,
        }
    }

    fn get_mut(&mut self, level: Level) -> &mut f64 {
        match level {
            Level::Low => &mut self.low,
            Level::Medium => &mut self.medium,
            Level::High => &mut self.high,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            low: self.low * alpha,
            medium: self.medium * alpha,
            high: self.high * alpha,
        }
    }
}

/// Triangular partition of one input axis.
///
/// Low is a left shoulder (1 up to `low_peak`, 0 from `med_peak`), Medium a
/// triangle with apex at `med_peak` and feet at `low_peak` and `high_sat`,
/// and High a right shoulder saturating at `high_sat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBreakpoints {
    pub low_peak: f64,
    pub med_peak: f64,
    pub high_sat: f64,
}

impl AxisBreakpoints {
    pub fn new(low_peak: f64, med_peak: f64, high_sat: f64) -> Result<Self, FammError> {
        let b = Self {
            low_peak,
            med_peak,
            high_sat,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), FammError> {
        let v = [self.low_peak, self.med_peak, self.high_sat];
        if v.iter().all(|x| x.is_finite() && *x >= 0.0) && v[0] < v[1] && v[1] < v[2] {
            Ok(())
        } else {
            Err(FammError::BadBreakpoints(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipConfig {
    /// Meters.
    pub positional: AxisBreakpoints,
    /// Radians.
    pub rotational: AxisBreakpoints,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        Self {
            positional: AxisBreakpoints {
                low_peak: 6.0,
                med_peak: 18.0,
                high_sat: 30.0,
            },
            rotational: AxisBreakpoints {
                low_peak: 2f64.to_radians(),
                med_peak: 5f64.to_radians(),
                high_sat: 10f64.to_radians(),
            },
        }
    }
}

pub fn fuzzify(mag: f64, axis: &AxisBreakpoints) -> Result<MembershipDegrees, FammError> {
    if !(mag >= 0.0 && mag.is_finite()) {
        return Err(FammError::NegativeMagnitude(mag));
    }
    let AxisBreakpoints {
        low_peak: a,
        med_peak: b,
        high_sat: c,
    } = *axis;
    let d = if mag <= a {
        MembershipDegrees { low: 1.0, medium: 0.0, high: 0.0 }
    } else if mag < b {
        let up = (mag - a) / (b - a);
        MembershipDegrees { low: 1.0 - up, medium: up, high: 0.0 }
    } else if mag < c {
        let up = (mag - b) / (c - b);
        MembershipDegrees { low: 0.0, medium: 1.0 - up, high: up }
    } else {
        MembershipDegrees { low: 0.0, medium: 0.0, high: 1.0 }
    };
    Ok(d)
}

/// One row of the rule base: `IF y_p is yp AND y_r is yr AND model is
/// current THEN next`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rule {
    pub yp: Level,
    pub yr: Level,
    pub current: MotionModel,
    pub next: MotionModel,
}

impl Rule {
    /// Position of this rule's antecedent key in the lookup table.
    pub fn key_index(&self) -> usize {
        key_index(self.yp, self.yr, self.current)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.yp, self.yr, self.current, self.next)
    }
}

pub fn key_index(yp: Level, yr: Level, current: MotionModel) -> usize {
    yp.index() * 27 + yr.index() * 9 + current.index()
}

/// Fire strength of every rule: the product of the two antecedent
/// memberships, or zero when the rule is about a different current model.
pub fn fire_rules(
    yp: &MembershipDegrees,
    yr: &MembershipDegrees,
    current: MotionModel,
    rb: &RuleBase,
) -> Vec<(Rule, f64)> {
    rb.rules()
        .map(|rule| {
            let strength = if rule.current == current {
                yp.get(rule.yp) * yr.get(rule.yr)
            } else {
                0.0
            };
            (rule, strength)
        })
        .collect()
}

/// Consequent of the strongest rule.
///
/// Equal strengths prefer the consequent closest to the current model
/// (`|di| + |dj|`), then the earlier table entry.
pub fn select_model(fired: &[(Rule, f64)]) -> Result<MotionModel, FammError> {
    let max = fired.iter().map(|(_, s)| *s).fold(0.0_f64, f64::max);
    // The fold starts at zero and skips NaN, so max is never NaN here.
    if max <= 0.0 {
        return Err(FammError::ControllerStall);
    }
    fired
        .iter()
        .filter(|(_, s)| *s == max)
        .min_by_key(|(rule, _)| (rule.next.distance(rule.current), rule.key_index()))
        .map(|(rule, _)| rule.next)
        .ok_or(FammError::ControllerStall)
}

/// Stateful controller wrapping the rule base, memberships and the model
/// currently in use.
#[derive(Debug, Clone)]
pub struct FammController {
    rules: Arc<RuleBase>,
    membership: MembershipConfig,
    current: MotionModel,
}

impl FammController {
    pub fn new(rules: Arc<RuleBase>, membership: MembershipConfig, initial: MotionModel) -> Self {
        Self {
            rules,
            membership,
            current: initial,
        }
    }

    pub fn current(&self) -> MotionModel {
        self.current
    }

    pub fn membership(&self) -> &MembershipConfig {
        &self.membership
    }

    /// Picks the model for the next prediction from the latest innovation.
    pub fn step(&mut self, innov: &Innovation) -> Result<MotionModel, FammError> {
        self.step_magnitudes(innov.yp_mag, innov.yr_mag)
    }

    pub fn step_magnitudes(&mut self, yp_mag: f64, yr_mag: f64) -> Result<MotionModel, FammError> {
        let yp = fuzzify(yp_mag, &self.membership.positional)?;
        let yr = fuzzify(yr_mag, &self.membership.rotational)?;
        self.current = select_model(&fire_rules(&yp, &yr, self.current, &self.rules))?;
        Ok(self.current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(s: &str) -> MotionModel {
        s.parse().unwrap()
    }

    fn axis() -> AxisBreakpoints {
        AxisBreakpoints::new(0.5, 1.5, 3.0).unwrap()
    }

    #[test]
    fn model_parse_and_display() {
        assert_eq!(m("P1R1"), MotionModel::CMM);
        assert_eq!(m("p0r2").to_string(), "P0R2");
        assert!("P3R0".parse::<MotionModel>().is_err());
        assert!("P1".parse::<MotionModel>().is_err());
        assert_eq!(MotionModel::all().count(), 9);
    }

    #[test]
    fn fuzzify_shoulders_and_apex() {
        assert_eq!(fuzzify(0.0, &axis()).unwrap(), MembershipDegrees::crisp(Level::Low));
        assert_eq!(fuzzify(3.0, &axis()).unwrap(), MembershipDegrees::crisp(Level::High));
        assert_eq!(fuzzify(50.0, &axis()).unwrap(), MembershipDegrees::crisp(Level::High));
        assert_eq!(fuzzify(1.5, &axis()).unwrap(), MembershipDegrees::crisp(Level::Medium));
        assert!(fuzzify(-0.1, &axis()).is_err());
        assert!(fuzzify(f64::NAN, &axis()).is_err());
    }

    #[test]
    fn breakpoints_must_increase() {
        assert!(AxisBreakpoints::new(1.0, 1.0, 2.0).is_err());
        assert!(AxisBreakpoints::new(-1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn product_t_norm() {
        let rb = RuleBase::default_rules();
        let yp = MembershipDegrees { low: 0.5, medium: 0.5, high: 0.0 };
        let yr = MembershipDegrees { low: 0.6, medium: 0.4, high: 0.0 };
        let fired = fire_rules(&yp, &yr, m("P0R0"), &rb);
        let rule = fired
            .iter()
            .find(|(r, _)| r.yp == Level::Low && r.yr == Level::Medium && r.current == m("P0R0"))
            .unwrap();
        assert!((rule.1 - 0.2).abs() < 1e-15);
        assert!(fired.iter().filter(|(r, _)| r.current != m("P0R0")).all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn crisp_corner_fires_one_rule() {
        let rb = RuleBase::default_rules();
        let low = MembershipDegrees::crisp(Level::Low);
        let fired = fire_rules(&low, &low, m("P2R0"), &rb);
        let nonzero: Vec<_> = fired.iter().filter(|(_, s)| *s > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!((nonzero[0].0.yp, nonzero[0].0.yr), (Level::Low, Level::Low));
    }

    fn select_crisp(yp: Level, yr: Level, current: &str) -> MotionModel {
        let rb = RuleBase::default_rules();
        let fired = fire_rules(&MembershipDegrees::crisp(yp), &MembershipDegrees::crisp(yr), m(current), &rb);
        select_model(&fired).unwrap()
    }

    #[test]
    fn printed_rows_select() {
        assert_eq!(select_crisp(Level::Low, Level::Medium, "P0R0"), m("P0R1"));
        assert_eq!(select_crisp(Level::High, Level::High, "P2R2"), m("P0R0"));
        assert_eq!(select_crisp(Level::Medium, Level::Low, "P1R0"), m("P2R0"));
    }

    #[test]
    fn all_zero_strength_stalls() {
        let rb = RuleBase::default_rules();
        let zero = MembershipDegrees { low: 0.0, medium: 0.0, high: 0.0 };
        let fired = fire_rules(&zero, &zero, MotionModel::CMM, &rb);
        assert_eq!(select_model(&fired), Err(FammError::ControllerStall));
    }

    #[test]
    fn ties_prefer_nearest_consequent() {
        let rb = RuleBase::default_rules();
        // Low/Low keeps P1R0, Medium/Low moves it to P2R0; equal strengths.
        let yp = MembershipDegrees { low: 0.5, medium: 0.5, high: 0.0 };
        let yr = MembershipDegrees::crisp(Level::Low);
        let fired = fire_rules(&yp, &yr, m("P1R0"), &rb);
        assert_eq!(select_model(&fired).unwrap(), m("P1R0"));
    }

    #[test]
    fn controller_walks_models() {
        let rb = Arc::new(RuleBase::default_rules());
        let mut c = FammController::new(rb, MembershipConfig {
            positional: axis(),
            rotational: axis(),
        }, MotionModel::STATIONARY);
        assert_eq!(c.step_magnitudes(0.0, 1.5).unwrap(), m("P0R1"));
        assert_eq!(c.step_magnitudes(0.0, 0.0).unwrap(), m("P0R1"));
        assert!(c.step_magnitudes(-1.0, 0.0).is_err());
    }

    fn level() -> impl Strategy<Value = Level> {
        prop_oneof![Just(Level::Low), Just(Level::Medium), Just(Level::High)]
    }

    proptest! {
        #[test]
        fn memberships_partition_unity(mag in 0.0f64..10.0) {
            let d = fuzzify(mag, &axis()).unwrap();
            prop_assert!((d.low + d.medium + d.high - 1.0).abs() < 1e-9);
            for v in [d.low, d.medium, d.high] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn crisp_selection_invariant_under_scaling(
            yp in level(), yr in level(), k in 0u8..9, alpha in 1e-6f64..=1.0
        ) {
            let rb = RuleBase::default_rules();
            let current = MotionModel::from_index(k);
            let a = MembershipDegrees::crisp(yp);
            let b = MembershipDegrees::crisp(yr);
            let base = select_model(&fire_rules(&a, &b, current, &rb)).unwrap();
            let scaled = select_model(&fire_rules(&a.scaled(alpha), &b.scaled(alpha), current, &rb)).unwrap();
            prop_assert_eq!(base, scaled);
        }
    }
}
