//! Canonical skills the rule-based evolver can emit, one per workspace rule.

use chrono::{DateTime, Utc};

use crate::rules::RuleId;
use crate::skill_store::{Skill, SkillCategory};

pub fn canonical_name(rule: RuleId) -> &'static str {
    match rule {
        RuleId::P1 => "iso8601-timezone-format",
        RuleId::P2 => "naming-convention-dateprefix",
        RuleId::P3 => "required-metadata-fields",
        RuleId::P4 => "backup-before-modify",
        RuleId::P5 => "completion-log-append",
    }
}

fn description(rule: RuleId) -> &'static str {
    match rule {
        RuleId::P1 => "Use when writing any date/time field to a file.",
        RuleId::P2 => "Use when choosing the file name of any output file.",
        RuleId::P3 => "Use when producing any output file so it carries the required metadata fields.",
        RuleId::P4 => "Always create a .bak copy before modifying any existing file.",
        RuleId::P5 => "Append a [DONE] line to done.log after finishing each task.",
    }
}

fn content(rule: RuleId) -> &'static str {
    match rule {
        RuleId::P1 => "## ISO 8601 Timestamp with Timezone\n\
\n\
Always format timestamps as: YYYY-MM-DDTHH:MM:SS+08:00\n\
\n\
- Correct:   2026-03-16T09:30:00+08:00\n\
- Incorrect: 2026-03-16, March 16 at 3pm,\n\
             2026-03-16T09:30:00Z\n\
\n\
**Anti-pattern:** Omitting the timezone offset or using\n\
natural-language date expressions.\n",
        RuleId::P2 => "## YYYYMMDD Prefix and Snake Case File Names\n\
\n\
1. Take the workday date as YYYYMMDD.\n\
2. Describe the file in snake_case.\n\
3. Join them: YYYYMMDD_description.ext\n\
\n\
- Correct:   20260408_decision_log.json\n\
- Incorrect: decision_log_20260408.json, DecisionLog.json\n\
\n\
**Anti-pattern:** Reusing the name from the instructions without the date prefix.\n",
        RuleId::P3 => "## Required Metadata Fields\n\
\n\
1. Every output file carries `created_at`, `author` and `status`.\n\
2. `created_at` follows the timestamp rule.\n\
3. Add the fields even when the instructions list other fields only.\n\
\n\
Example: {\"created_at\": \"2026-03-16T09:30:00+08:00\", \"author\": \"agent\", \"status\": \"draft\"}\n\
\n\
**Anti-pattern:** Writing only the fields named in the request.\n",
        RuleId::P4 => "## Backup Before Modify\n\
\n\
1. Before editing any file, create a backup:\n\
   cp <filename> <filename>.bak\n\
2. Verify the backup exists before proceeding.\n\
3. Apply all modifications to the original file.\n\
\n\
**Anti-pattern:** Overwriting a file without a backup,\n\
leaving no recovery path if the edit is incorrect.\n",
        RuleId::P5 => "## Completion Log Entry\n\
\n\
1. Finish the task and verify the outputs.\n\
2. Append one line to done.log:\n\
   [DONE] <timestamp> | <task_id> | <summary>\n\
3. Never rewrite earlier lines.\n\
\n\
Example: [DONE] 2026-03-25T17:05:00+08:00 | d10-r07 | wrote weekly summary\n\
\n\
**Anti-pattern:** Reporting completion only in the chat reply.\n",
    }
}

pub fn canonical_skill(rule: RuleId, generation: u64, created_at: DateTime<Utc>) -> Skill {
    Skill {
        name: canonical_name(rule).to_string(),
        description: description(rule).to_string(),
        content: content(rule).to_string(),
        category: SkillCategory::CommonMistakes,
        created_generation: generation,
        created_at,
    }
}

/// The rule a skill addresses, judged from its name and description first
/// and its content only if those carry no signature.
pub fn rule_for_skill(skill: &Skill) -> Option<RuleId> {
    if let Some(rule) = RuleId::ALL.into_iter().find(|r| canonical_name(*r) == skill.name) {
        return Some(rule);
    }
    let head = format!("{} {}", skill.name.replace('-', " "), skill.description);
    RuleId::mentioned_in(&head)
        .first()
        .copied()
        .or_else(|| RuleId::mentioned_in(&skill.content).first().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn canonical_skills_are_valid_and_map_back() {
        let at = Utc.with_ymd_and_hms(2026, 3, 16, 0, 0, 0).unwrap();
        for rule in RuleId::ALL {
            let s = canonical_skill(rule, 1, at);
            s.validate().unwrap();
            assert_eq!(rule_for_skill(&s), Some(rule));
        }
    }

    #[test]
    fn foreign_skills_are_classified_by_text() {
        let at = Utc.with_ymd_and_hms(2026, 3, 16, 0, 0, 0).unwrap();
        let mut s = canonical_skill(RuleId::P4, 1, at);
        s.name = "dyn-001".into();
        s.description = "Keep a backup copy of files you edit.".into();
        assert_eq!(rule_for_skill(&s), Some(RuleId::P4));
        s.description = "Verify file existence first.".into();
        s.content = "check paths".into();
        assert_eq!(rule_for_skill(&s), None);
    }
}
