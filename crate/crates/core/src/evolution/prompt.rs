use crate::skill_store::SkillLibrary;

use super::{EvolutionError, FailureRecord};

pub const MAX_RENDERED_FAILURES: usize = 6;

const HEADER: &str = "You are a skill engineer for an AI assistant trained with RL.
Your job: analyze the failed conversations below and generate
NEW skills that would have prevented those failures.
";

const FORMAT_RULES: &str = "Each skill must follow Claude skill format:
- `name`: a lowercase hyphenated slug
- `description`: one sentence saying when to trigger this skill
  and what it achieves
- `content`: 6-15 lines of actionable Markdown. Include:
  a heading, numbered steps or bullet points, a concrete
  example or code snippet, and an Anti-pattern section.
- `category`: one of [coding, research, data_analysis,
  security, communication, automation, productivity, agentic]
  or \"general\" or \"common_mistakes\"

**Output:** Return ONLY a valid JSON array.

**Example output:**
[
  {
    \"name\": \"dyn-001\",
    \"description\": \"Always verify file existence before reading or writing.\",
    \"content\": \"## Verify File Existence Before Acting\\n\\n1. Check: os.path.exists(path)\\n2. If missing, ask the user for the correct path.\\n**Anti-pattern:** Calling open(path) without checking.\",
    \"category\": \"coding\"
  }
]
";

/// Builds the evolver request. Only the first six failures are shown.
pub fn render_evolver_prompt(
    library: &SkillLibrary,
    failures: &[FailureRecord],
    max_new: usize,
) -> Result<String, EvolutionError> {
    if failures.is_empty() {
        return Err(EvolutionError::EmptyFailures);
    }
    let mut out = String::from(HEADER);
    out.push_str("\n---\n## Failed Conversations\n");
    for (i, f) in failures.iter().take(MAX_RENDERED_FAILURES).enumerate() {
        out.push_str(&format!("\n### Failure {}  (reward={:?})\n", i + 1, f.reward));
        out.push_str(&format!("**Checker feedback:** {}\n", f.feedback));
        out.push_str("**Conversation context (last 600 chars):**\n```\n");
        out.push_str(&f.trajectory_excerpt);
        out.push_str("\n```\n**Assistant response (first 500 chars):**\n```\n");
        out.push_str(&f.response_excerpt);
        out.push_str("\n```\n");
    }
    let names: Vec<String> = library
        .names()
        .into_iter()
        .map(|n| serde_json::to_string(n).expect("string serializes"))
        .collect();
    out.push_str("\n---\n## Existing Skills (do NOT duplicate any of these)\n");
    out.push_str(&format!("[{}]\n", names.join(", ")));
    out.push_str("\n---\n## Instructions\n\n");
    out.push_str(&format!(
        "Generate **1 to {max_new}** new skills that directly\naddress the failure patterns observed above. Focus on\nactionable, concrete guidance for future conversations.\n\n"
    ));
    out.push_str(FORMAT_RULES);
    Ok(out)
}
