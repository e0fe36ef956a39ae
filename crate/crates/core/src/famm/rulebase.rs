//! The 81-entry rule table, its text format and validation.
//!
//! Rule files hold one rule per line, `yp_level,yr_level,current,next`
//! (e.g. `Low,Medium,P0R0,P0R1`), with `#` starting a comment. A file is
//! accepted only if every `(yp, yr, current)` key appears exactly once and
//! the 54 published rows are reproduced verbatim.

use super::{key_index, FammError, Level, MotionModel, Rule};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// The shipped rule file.
pub const DEFAULT_RULE_FILE: &str = include_str!("../../rules/default.rules");

/// The published subset: every rule whose current model is not `PxR1`.
#[rustfmt::skip]
pub const PRINTED_RULES: [(&str, &str, &str, &str); 54] = [
    ("Low", "Low", "P0R0", "P0R0"), ("Low", "Medium", "P0R0", "P0R1"), ("Low", "High", "P0R0", "P0R2"),
    ("Low", "Low", "P0R2", "P0R2"), ("Low", "Medium", "P0R2", "P0R1"), ("Low", "High", "P0R2", "P0R0"),
    ("Low", "Low", "P1R0", "P1R0"), ("Low", "Medium", "P1R0", "P1R1"), ("Low", "High", "P1R0", "P1R2"),
    ("Low", "Low", "P1R2", "P1R2"), ("Low", "Medium", "P1R2", "P1R1"), ("Low", "High", "P1R2", "P1R0"),
    ("Low", "Low", "P2R0", "P2R0"), ("Low", "Medium", "P2R0", "P2R1"), ("Low", "High", "P2R0", "P2R2"),
    ("Low", "Low", "P2R2", "P2R2"), ("Low", "Medium", "P2R2", "P2R1"), ("Low", "High", "P2R2", "P2R0"),
    ("Medium", "Low", "P0R0", "P1R0"), ("Medium", "Medium", "P0R0", "P1R1"), ("Medium", "High", "P0R0", "P1R2"),
    ("Medium", "Low", "P0R2", "P1R2"), ("Medium", "Medium", "P0R2", "P1R1"), ("Medium", "High", "P0R2", "P1R0"),
    ("Medium", "Low", "P1R0", "P2R0"), ("Medium", "Medium", "P1R0", "P2R1"), ("Medium", "High", "P1R0", "P2R2"),
    ("Medium", "Low", "P1R2", "P2R2"), ("Medium", "Medium", "P1R2", "P2R1"), ("Medium", "High", "P1R2", "P2R0"),
    ("Medium", "Low", "P2R0", "P1R0"), ("Medium", "Medium", "P2R0", "P1R1"), ("Medium", "High", "P2R0", "P1R2"),
    ("Medium", "Low", "P2R2", "P1R2"), ("Medium", "Medium", "P2R2", "P1R1"), ("Medium", "High", "P2R2", "P1R0"),
    ("High", "Low", "P0R0", "P2R0"), ("High", "Medium", "P0R0", "P2R1"), ("High", "High", "P0R0", "P2R2"),
    ("High", "Low", "P0R2", "P2R2"), ("High", "Medium", "P0R2", "P2R1"), ("High", "High", "P0R2", "P2R0"),
    ("High", "Low", "P1R0", "P0R0"), ("High", "Medium", "P1R0", "P0R1"), ("High", "High", "P1R0", "P0R2"),
    ("High", "Low", "P1R2", "P0R2"), ("High", "Medium", "P1R2", "P0R1"), ("High", "High", "P1R2", "P0R0"),
    ("High", "Low", "P2R0", "P0R0"), ("High", "Medium", "P2R0", "P0R1"), ("High", "High", "P2R0", "P0R2"),
    ("High", "Low", "P2R2", "P0R2"), ("High", "Medium", "P2R2", "P0R1"), ("High", "High", "P2R2", "P0R0"),
];

/// Completion pattern for the full table.
///
/// Position: Low keeps `i`; Medium maps 0->1, 1->2, 2->1; High maps 0->2,
/// 1->0, 2->0. Rotation: Low keeps `j`; Medium sets `j = 1`; High swaps 0
/// and 2 and leaves 1 alone.
pub fn generated_next(yp: Level, yr: Level, current: MotionModel) -> MotionModel {
    let i = match (yp, current.i()) {
        (Level::Low, i) => i,
        (Level::Medium, 0) => 1,
        (Level::Medium, 1) => 2,
        (Level::Medium, _) => 1,
        (Level::High, 0) => 2,
        (Level::High, _) => 0,
    };
    let j = match (yr, current.j()) {
        (Level::Low, j) => j,
        (Level::Medium, _) => 1,
        (Level::High, 0) => 2,
        (Level::High, 2) => 0,
        (Level::High, j) => j,
    };
    MotionModel::new(i, j).expect("pattern stays within 0..=2")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Syntax { line: usize, message: String },
    Duplicate { key: (Level, Level, MotionModel), first_line: usize, line: usize },
    Missing { key: (Level, Level, MotionModel) },
    PrintedMismatch { key: (Level, Level, MotionModel), expected: MotionModel, found: MotionModel, line: usize },
}

fn fmt_key(key: &(Level, Level, MotionModel)) -> String {
    format!("({}, {}, {})", key.0, key.1, key.2)
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Syntax { line, message } => write!(f, "line {line}: {message}"),
            Violation::Duplicate { key, first_line, line } => {
                write!(f, "duplicate key {} on lines {first_line} and {line}", fmt_key(key))
            }
            Violation::Missing { key } => write!(f, "missing key {}", fmt_key(key)),
            Violation::PrintedMismatch { key, expected, found, line } => write!(
                f,
                "line {line}: key {} must map to {expected} (published rule), found {found}",
                fmt_key(key)
            ),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("rule base rejected: {}", .violations.first().map(|v| v.to_string()).unwrap_or_default())]
pub struct RuleBaseError {
    pub violations: Vec<Violation>,
}

/// Outcome of checking a rule file without building the table.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleFileReport {
    pub rule_count: usize,
    pub violations: Vec<Violation>,
    /// Models that no rule leads to.
    pub unreachable: Vec<MotionModel>,
}

impl RuleFileReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lookup table indexed by [`key_index`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleBase {
    table: [MotionModel; 81],
}

fn key_of(index: usize) -> (Level, Level, MotionModel) {
    (
        Level::ALL[index / 27],
        Level::ALL[(index / 9) % 3],
        MotionModel::from_index((index % 9) as u8),
    )
}

fn parse_line(text: &str) -> Result<Rule, FammError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(FammError::BadModel(format!("expected 4 comma-separated fields, got {}", parts.len())));
    }
    Ok(Rule {
        yp: parts[0].parse()?,
        yr: parts[1].parse()?,
        current: parts[2].parse()?,
        next: parts[3].parse()?,
    })
}

impl RuleBase {
    /// The table produced by [`generated_next`].
    pub fn generated() -> Self {
        let mut table = [MotionModel::STATIONARY; 81];
        for (k, slot) in table.iter_mut().enumerate() {
            let (yp, yr, current) = key_of(k);
            *slot = generated_next(yp, yr, current);
        }
        Self { table }
    }

    /// The shipped rule file, parsed.
    pub fn default_rules() -> Self {
        Self::from_text(DEFAULT_RULE_FILE).expect("shipped rule file is valid")
    }

    pub fn from_text(text: &str) -> Result<Self, RuleBaseError> {
        let (table, report) = Self::check(text);
        if report.passed() {
            Ok(Self {
                table: table.map(|slot| slot.expect("validated table is total").0),
            })
        } else {
            Err(RuleBaseError {
                violations: report.violations,
            })
        }
    }

    pub fn validate_text(text: &str) -> RuleFileReport {
        Self::check(text).1
    }

    fn check(text: &str) -> ([Option<(MotionModel, usize)>; 81], RuleFileReport) {
        let mut table: [Option<(MotionModel, usize)>; 81] = [None; 81];
        let mut violations = Vec::new();
        let mut rule_count = 0;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or_default().trim();
            if content.is_empty() {
                continue;
            }
            let rule = match parse_line(content) {
                Ok(rule) => rule,
                Err(e) => {
                    violations.push(Violation::Syntax {
                        line,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            rule_count += 1;
            let key = rule.key_index();
            match table[key] {
                Some((_, first_line)) => violations.push(Violation::Duplicate {
                    key: key_of(key),
                    first_line,
                    line,
                }),
                None => table[key] = Some((rule.next, line)),
            }
        }
        for (k, slot) in table.iter().enumerate() {
            if slot.is_none() {
                violations.push(Violation::Missing { key: key_of(k) });
            }
        }
        for (yp, yr, current, next) in PRINTED_RULES {
            let parsed = (
                yp.parse::<Level>().expect("printed level"),
                yr.parse::<Level>().expect("printed level"),
                current.parse::<MotionModel>().expect("printed model"),
            );
            let expected: MotionModel = next.parse().expect("printed model");
            if let Some((found, line)) = table[key_index(parsed.0, parsed.1, parsed.2)] {
                if found != expected {
                    violations.push(Violation::PrintedMismatch {
                        key: parsed,
                        expected,
                        found,
                        line,
                    });
                }
            }
        }
        let reached: BTreeSet<MotionModel> = table.iter().flatten().map(|(m, _)| *m).collect();
        let unreachable = MotionModel::all().filter(|m| !reached.contains(m)).collect();
        (
            table,
            RuleFileReport {
                rule_count,
                violations,
                unreachable,
            },
        )
    }

    pub fn lookup(&self, yp: Level, yr: Level, current: MotionModel) -> MotionModel {
        self.table[key_index(yp, yr, current)]
    }

    /// All 81 rules in table order.
    pub fn rules(&self) -> impl Iterator<Item = Rule> + '_ {
        self.table.iter().enumerate().map(|(k, next)| {
            let (yp, yr, current) = key_of(k);
            Rule { yp, yr, current, next: *next }
        })
    }

    /// Renders the table in the rule-file format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# yp_level,yr_level,current,next\n");
        for rule in self.rules() {
            out.push_str(&rule.to_string());
            out.push('\n');
        }
        out
    }
}

impl Default for RuleBase {
    fn default() -> Self {
        Self::default_rules()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::famm::{fire_rules, select_model, MembershipDegrees};

    #[test]
    fn generator_reproduces_every_printed_row() {
        for (yp, yr, current, next) in PRINTED_RULES {
            let got = generated_next(yp.parse().unwrap(), yr.parse().unwrap(), current.parse().unwrap());
            assert_eq!(got.to_string(), next, "{yp},{yr},{current}");
        }
    }

    #[test]
    fn printed_rows_cover_all_but_rotation_one_models() {
        let keys: BTreeSet<_> = PRINTED_RULES.iter().map(|r| (r.0, r.1, r.2)).collect();
        assert_eq!(keys.len(), 54);
        assert!(PRINTED_RULES.iter().all(|r| !r.2.ends_with("R1")));
    }

    #[test]
    fn shipped_file_matches_generator() {
        assert_eq!(RuleBase::default_rules(), RuleBase::generated());
        let report = RuleBase::validate_text(DEFAULT_RULE_FILE);
        assert!(report.passed());
        assert_eq!(report.rule_count, 81);
    }

    // Zero innovation never moves the controller: every model is a fixed
    // point of the Low/Low column, so only a run that starts in P0R0 can
    // settle there.
    #[test]
    fn low_low_column_is_all_fixed_points() {
        let rb = RuleBase::default_rules();
        for m in MotionModel::all() {
            assert_eq!(rb.lookup(Level::Low, Level::Low, m), m);
        }
    }

    #[test]
    fn missing_key_is_named() {
        let text: String = DEFAULT_RULE_FILE
            .lines()
            .filter(|l| !l.starts_with("Medium,High,P1R1,"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = RuleBase::from_text(&text).unwrap_err();
        assert_eq!(
            err.violations,
            vec![Violation::Missing {
                key: (Level::Medium, Level::High, MotionModel::CMM)
            }]
        );
        assert!(err.to_string().contains("(Medium, High, P1R1)"));
    }

    #[test]
    fn duplicate_reports_both_lines() {
        let text = format!("{DEFAULT_RULE_FILE}Low,Low,P0R0,P0R0\n");
        let report = RuleBase::validate_text(&text);
        let dup = report
            .violations
            .iter()
            .find_map(|v| match v {
                Violation::Duplicate { first_line, line, .. } => Some((*first_line, *line)),
                _ => None,
            })
            .unwrap();
        assert!(dup.0 < dup.1);
        assert_eq!(dup.1, text.lines().count());
    }

    #[test]
    fn printed_mismatch_rejected() {
        let text = DEFAULT_RULE_FILE.replace("High,High,P2R2,P0R0", "High,High,P2R2,P1R1");
        let err = RuleBase::from_text(&text).unwrap_err();
        assert!(matches!(err.violations[0], Violation::PrintedMismatch { .. }));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = format!("{DEFAULT_RULE_FILE}Low,Sideways,P0R0,P0R0\n");
        let report = RuleBase::validate_text(&text);
        assert!(matches!(report.violations[0], Violation::Syntax { line, .. } if line == text.lines().count()));
    }

    #[test]
    fn text_round_trip() {
        let rb = RuleBase::generated();
        assert_eq!(RuleBase::from_text(&rb.to_text()).unwrap(), rb);
    }

    #[test]
    fn every_model_is_reachable() {
        assert!(RuleBase::validate_text(DEFAULT_RULE_FILE).unreachable.is_empty());
    }

    #[test]
    fn crisp_corners_match_lookup() {
        let rb = RuleBase::default_rules();
        for yp in Level::ALL {
            for yr in Level::ALL {
                for current in MotionModel::all() {
                    let fired = fire_rules(&MembershipDegrees::crisp(yp), &MembershipDegrees::crisp(yr), current, &rb);
                    assert_eq!(select_model(&fired).unwrap(), rb.lookup(yp, yr, current));
                }
            }
        }
    }

    #[test]
    fn low_low_is_a_fixed_point_for_every_model() {
        let rb = RuleBase::default_rules();
        for m in MotionModel::all() {
            assert_eq!(rb.lookup(Level::Low, Level::Low, m), m);
        }
    }
}
