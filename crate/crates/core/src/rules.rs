//! The five implicit workspace preference rules and the facts every module
//! shares about them: activation day, canonical checker feedback and the
//! feedback signatures used to map failures back onto a rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl RuleId {
    pub const ALL: [RuleId; 5] = [RuleId::P1, RuleId::P2, RuleId::P3, RuleId::P4, RuleId::P5];

    /// First workday (1-based) on which the rule is enforced.
    pub fn active_from(self) -> u32 {
        match self {
            RuleId::P1 => 1,
            RuleId::P2 => 4,
            RuleId::P3 => 6,
            RuleId::P4 => 8,
            RuleId::P5 => 10,
        }
    }

    pub fn is_active_on(self, day: u32) -> bool {
        day >= self.active_from()
    }

    /// Rules enforced on `day`, in rule order.
    pub fn active_on(day: u32) -> Vec<RuleId> {
        RuleId::ALL.into_iter().filter(|r| r.is_active_on(day)).collect()
    }

    pub fn category(self) -> &'static str {
        match self {
            RuleId::P1 => "timestamp",
            RuleId::P2 => "file naming",
            RuleId::P3 => "metadata",
            RuleId::P4 => "backup",
            RuleId::P5 => "completion log",
        }
    }

    /// Feedback text the checker attaches when this rule fails.
    pub fn feedback(self) -> &'static str {
        match self {
            RuleId::P1 => "Time/date fields must use ISO 8601 with +08:00 timezone: YYYY-MM-DDTHH:MM:SS+08:00.",
            RuleId::P2 => "Output files must follow the naming convention YYYYMMDD_description.ext in snake_case.",
            RuleId::P3 => "Every output file must include the metadata fields created_at, author and status.",
            RuleId::P4 => "Create a <file>.bak backup before modifying any existing file.",
            RuleId::P5 => "Append a [DONE] <timestamp> | <task_id> | <summary> line to done.log after finishing the task.",
        }
    }

    /// Lowercase substrings that identify this rule in free text.
    pub fn signatures(self) -> &'static [&'static str] {
        match self {
            RuleId::P1 => &["iso 8601", "timezone"],
            RuleId::P2 => &["yyyymmdd", "naming"],
            RuleId::P3 => &["created_at", "metadata"],
            RuleId::P4 => &[".bak", "backup"],
            RuleId::P5 => &["done.log", "[done]"],
        }
    }

    /// Every rule mentioned in `text`, ordered by where its first signature
    /// occurs. Ties (same position) fall back to rule order.
    pub fn mentioned_in(text: &str) -> Vec<RuleId> {
        let lower = text.to_lowercase();
        let mut hits: Vec<(usize, RuleId)> = RuleId::ALL
            .into_iter()
            .filter_map(|rule| {
                rule.signatures()
                    .iter()
                    .filter_map(|sig| lower.find(sig))
                    .min()
                    .map(|pos| (pos, rule))
            })
            .collect();
        hits.sort();
        hits.into_iter().map(|(_, r)| r).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::P1 => "P1",
            RuleId::P2 => "P2",
            RuleId::P3 => "P3",
            RuleId::P4 => "P4",
            RuleId::P5 => "P5",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P1" => Ok(RuleId::P1),
            "P2" => Ok(RuleId::P2),
            "P3" => Ok(RuleId::P3),
            "P4" => Ok(RuleId::P4),
            "P5" => Ok(RuleId::P5),
            other => Err(format!("unknown rule id {other:?}")),
        }
    }
}
