//! The skill library: validated natural-language skills, top-k retrieval by
//! cosine similarity, prompt injection and on-disk persistence.

mod embed;
mod persist;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{cosine, Embedder, HashingEmbedder, SkillEmbedding, DEFAULT_DIM};
pub use persist::{load, save, INDEX_FILE, SKILLS_SUBDIR};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("invalid skill {name:?}: {reason}")]
    InvalidSkill { name: String, reason: String },
    #[error("corrupt skill library: {0}")]
    CorruptLibrary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillCategory {
    Coding,
    Research,
    DataAnalysis,
    Security,
    Communication,
    Automation,
    Productivity,
    Agentic,
    General,
    CommonMistakes,
}

impl SkillCategory {
    pub const ALL: [SkillCategory; 10] = [
        SkillCategory::Coding,
        SkillCategory::Research,
        SkillCategory::DataAnalysis,
        SkillCategory::Security,
        SkillCategory::Communication,
        SkillCategory::Automation,
        SkillCategory::Productivity,
        SkillCategory::Agentic,
        SkillCategory::General,
        SkillCategory::CommonMistakes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillCategory::Coding => "coding",
            SkillCategory::Research => "research",
            SkillCategory::DataAnalysis => "data_analysis",
            SkillCategory::Security => "security",
            SkillCategory::Communication => "communication",
            SkillCategory::Automation => "automation",
            SkillCategory::Productivity => "productivity",
            SkillCategory::Agentic => "agentic",
            SkillCategory::General => "general",
            SkillCategory::CommonMistakes => "common_mistakes",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SkillCategory::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for SkillCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A behavioral instruction injected into the agent prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    pub description: String,
    pub content: String,
    pub category: SkillCategory,
    pub created_generation: u64,
    pub created_at: DateTime<Utc>,
}

fn slug_pattern() -> &'static Regex {
    static SLUG: OnceLock<Regex> = OnceLock::new();
    SLUG.get_or_init(|| Regex::new(r"^[a-z0-9]+(-[a-z0-9]+)*$").unwrap())
}

pub fn is_valid_slug(name: &str) -> bool {
    slug_pattern().is_match(name)
}

impl Skill {
    pub fn validate(&self) -> Result<(), SkillError> {
        let fail = |reason: &str| {
            Err(SkillError::InvalidSkill {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !is_valid_slug(&self.name) {
            return fail("name must be a lowercase hyphenated slug");
        }
        if self.description.trim().is_empty() {
            return fail("description is empty");
        }
        if self.description.contains('\n') {
            return fail("description must be a single line");
        }
        if self.content.is_empty() {
            return fail("content is empty");
        }
        if self.content.lines().any(|l| l.starts_with("### ")) {
            return fail("content lines must not start with a skill heading");
        }
        Ok(())
    }

    /// Text the embedder sees for this skill.
    pub fn retrieval_text(&self) -> String {
        format!("{} {} {}", self.name, self.description, self.content)
    }
}

/// The skill set together with its generation counter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillLibrary {
    skills: Vec<Skill>,
    generation: u64,
}

/// Library shared between retrieval readers and the single evolution writer.
pub type SharedLibrary = Arc<RwLock<SkillLibrary>>;

impl SkillLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a library from stored parts, rejecting invalid or duplicate skills.
    pub fn from_parts(skills: Vec<Skill>, generation: u64) -> Result<Self, SkillError> {
        let mut lib = SkillLibrary { skills: Vec::with_capacity(skills.len()), generation };
        for skill in skills {
            skill.validate()?;
            if lib.contains(&skill.name) {
                return Err(SkillError::CorruptLibrary(format!("duplicate skill {:?}", skill.name)));
            }
            lib.skills.push(skill);
        }
        Ok(lib)
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.skills.iter().any(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Skill> {
        self.skills.iter().find(|s| s.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.skills.iter().map(|s| s.name.as_str()).collect()
    }

    /// Union with `new`. Existing names win over incoming duplicates, and the
    /// whole call is rejected if any incoming skill is invalid. Returns the
    /// names that were actually added. The generation is left untouched.
    pub fn add_skills(&mut self, new: Vec<Skill>) -> Result<Vec<String>, SkillError> {
        for skill in &new {
            skill.validate()?;
        }
        let mut added = Vec::new();
        for skill in new {
            if self.contains(&skill.name) {
                continue;
            }
            added.push(skill.name.clone());
            self.skills.push(skill);
        }
        Ok(added)
    }

    /// Moves the generation forward. Going backwards is refused.
    pub fn set_generation(&mut self, generation: u64) -> bool {
        if generation < self.generation {
            return false;
        }
        self.generation = generation;
        true
    }

    /// Top-`k` skills by cosine similarity to `task_text`.
    pub fn retrieve(&self, embedder: &dyn Embedder, task_text: &str, k: usize) -> Vec<&Skill> {
        let query = embedder.embed(task_text);
        let scored = self
            .skills
            .iter()
            .map(|s| (cosine(&query, &embedder.embed(&s.retrieval_text())), s))
            .collect();
        top_k(scored, k)
    }
}

fn rank(a: &(f64, &Skill), b: &(f64, &Skill)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.created_at.cmp(&b.1.created_at))
        .then_with(|| a.1.name.cmp(&b.1.name))
}

fn top_k(mut scored: Vec<(f64, &Skill)>, k: usize) -> Vec<&Skill> {
    scored.sort_by(rank);
    scored.into_iter().take(k).map(|(_, s)| s).collect()
}

/// Retrieval with a per-skill embedding cache. Skills are never edited in
/// place, so a cached vector stays valid for the lifetime of the name.
pub struct Retriever<E: Embedder> {
    embedder: E,
    cache: HashMap<String, SkillEmbedding>,
}

impl<E: Embedder> Retriever<E> {
    pub fn new(embedder: E) -> Self {
        Retriever { embedder, cache: HashMap::new() }
    }

    pub fn embedder(&self) -> &E {
        &self.embedder
    }

    pub fn retrieve<'a>(&mut self, library: &'a SkillLibrary, task_text: &str, k: usize) -> Vec<&'a Skill> {
        let query = self.embedder.embed(task_text);
        let mut scored = Vec::with_capacity(library.len());
        for skill in library.skills() {
            let emb = self
                .cache
                .entry(skill.name.clone())
                .or_insert_with(|| self.embedder.embed(&skill.retrieval_text()));
            scored.push((cosine(&query, emb), skill));
        }
        top_k(scored, k)
    }
}

/// Renders the prompt block listing the active skills. Empty input renders
/// as the empty string.
pub fn format_injection(skills: &[&Skill]) -> String {
    if skills.is_empty() {
        return String::new();
    }
    let mut out = String::from("## Active Skills\n");
    for skill in skills {
        out.push_str("\n### ");
        out.push_str(&skill.name);
        out.push_str("\n_");
        out.push_str(&skill.description);
        out.push_str("_\n\n");
        out.push_str(&skill.content);
        if !skill.content.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

/// Skill names listed in an injection block, in order.
pub fn injected_names(block: &str) -> Vec<String> {
    block.lines().filter_map(|l| l.strip_prefix("### ")).map(str::to_string).collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use chrono::TimeZone;

    pub fn skill(name: &str, description: &str, content: &str, minute: u32) -> Skill {
        Skill {
            name: name.to_string(),
            description: description.to_string(),
            content: content.to_string(),
            category: SkillCategory::General,
            created_generation: 0,
            created_at: Utc.with_ymd_and_hms(2026, 3, 16, 9, minute, 0).unwrap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::skill;
    use super::*;

    #[test]
    fn validation_rejects_bad_names_and_empty_fields() {
        for bad in ["", "Bad", "a--b", "-a", "a-", "a_b", "a b"] {
            assert!(skill(bad, "d", "c", 0).validate().is_err(), "{bad:?}");
        }
        assert!(skill("ok-1", "", "c", 0).validate().is_err());
        assert!(skill("ok-1", "two\nlines", "c", 0).validate().is_err());
        assert!(skill("ok-1", "d", "", 0).validate().is_err());
        assert!(skill("ok-1", "d", "x\n### y", 0).validate().is_err());
        assert!(skill("dyn-001", "d", "c", 0).validate().is_ok());
    }

    #[test]
    fn retrieve_on_empty_library_is_empty() {
        let lib = SkillLibrary::new();
        assert!(lib.retrieve(&HashingEmbedder::default(), "fix the timestamps", 3).is_empty());
    }

    #[test]
    fn retrieve_single_candidate() {
        let mut lib = SkillLibrary::new();
        lib.add_skills(vec![skill("only-one", "d", "c", 0)]).unwrap();
        let got = lib.retrieve(&HashingEmbedder::default(), "anything at all", 1);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].name, "only-one");
    }

    #[test]
    fn empty_query_falls_back_to_creation_order_then_name() {
        let mut lib = SkillLibrary::new();
        lib.add_skills(vec![
            skill("zeta", "d", "c", 1),
            skill("beta", "d", "c", 2),
            skill("alpha", "d", "c", 2),
        ])
        .unwrap();
        let names: Vec<_> = lib
            .retrieve(&HashingEmbedder::default(), "", 3)
            .into_iter()
            .map(|s| s.name.as_str())
            .collect();
        assert_eq!(names, ["zeta", "alpha", "beta"]);
    }

    #[test]
    fn cached_retriever_agrees_with_direct_retrieval() {
        let mut lib = SkillLibrary::new();
        lib.add_skills(vec![
            skill("backup-files", "keep a backup copy", "cp a a.bak", 0),
            skill("timestamps", "use timezone offsets", "2026-03-16T09:30:00+08:00", 1),
            skill("naming", "date prefixed names", "20260408_report.json", 2),
        ])
        .unwrap();
        let mut r = Retriever::new(HashingEmbedder::default());
        for text in ["backup before edit", "timezone", "", "report json naming"] {
            let a: Vec<_> = lib.retrieve(&HashingEmbedder::default(), text, 2).iter().map(|s| &s.name).collect();
            let b: Vec<_> = r.retrieve(&lib, text, 2).iter().map(|s| &s.name).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn add_skills_unions_and_drops_duplicates() {
        let mut lib = SkillLibrary::new();
        lib.add_skills(vec![skill("dyn-001", "first", "c", 0), skill("b", "d", "c", 0)]).unwrap();
        let before = lib.clone();

        assert!(lib.add_skills(vec![]).unwrap().is_empty());
        assert_eq!(lib, before);

        let added = lib.add_skills(vec![skill("dyn-001", "second", "c", 5)]).unwrap();
        assert!(added.is_empty());
        assert_eq!(lib.get("dyn-001").unwrap().description, "first");

        lib.add_skills(vec![skill("fresh", "d", "c", 0)]).unwrap();
        assert_eq!(lib.len(), 3);
        assert!(before.names().iter().all(|n| lib.contains(n)));
        assert_eq!(lib.generation(), 0);
    }

    #[test]
    fn add_skills_is_all_or_nothing_on_invalid_input() {
        let mut lib = SkillLibrary::new();
        let err = lib.add_skills(vec![skill("good", "d", "c", 0), skill("Bad Name", "d", "c", 0)]);
        assert!(matches!(err, Err(SkillError::InvalidSkill { .. })));
        assert!(lib.is_empty());
    }

    #[test]
    fn generation_never_decreases() {
        let mut lib = SkillLibrary::new();
        assert!(lib.set_generation(2));
        assert!(!lib.set_generation(1));
        assert_eq!(lib.generation(), 2);
    }

    #[test]
    fn injection_of_nothing_is_empty() {
        assert_eq!(format_injection(&[]), "");
    }

    #[test]
    fn injection_preserves_order() {
        let a = skill("alpha", "A desc.", "## A\nbody a", 0);
        let b = skill("beta", "B desc.", "## B\nbody b\n", 1);
        let text = format_injection(&[&a, &b]);
        let pa = text.find("### alpha").unwrap();
        let pb = text.find("### beta").unwrap();
        assert!(pa < pb);
        assert!(text.contains("body a\n\n### beta"));
    }
}
