use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{SimError, TaskKind, TaskSpec};
use crate::buffer::Step;
use crate::rules::RuleId;

pub const DONE_LOG: &str = "done.log";

/// A file operation carried in a trajectory step's `action` text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileOp {
    Write { path: String, content: String },
    Copy { from: String, to: String },
    Append { path: String, line: String },
    Answer(String),
    Note(String),
}

impl FileOp {
    pub fn to_action(&self) -> String {
        match self {
            FileOp::Write { path, content } => format!("write {path}\n{content}"),
            FileOp::Copy { from, to } => format!("copy {from} {to}"),
            FileOp::Append { path, line } => format!("append {path}\n{line}"),
            FileOp::Answer(text) => format!("answer\n{text}"),
            FileOp::Note(text) => format!("note\n{text}"),
        }
    }

    pub fn parse(action: &str) -> Result<FileOp, SimError> {
        let (head, body) = action.split_once('\n').unwrap_or((action, ""));
        let mut words = head.split(' ');
        let bad = || SimError::BadAction(action.chars().take(80).collect());
        let op = match (words.next(), words.next(), words.next(), words.next()) {
            (Some("write"), Some(path), None, None) => FileOp::Write { path: path.into(), content: body.into() },
            (Some("copy"), Some(from), Some(to), None) => FileOp::Copy { from: from.into(), to: to.into() },
            (Some("append"), Some(path), None, None) if !body.contains('\n') => {
                FileOp::Append { path: path.into(), line: body.into() }
            }
            (Some("answer"), None, None, None) => FileOp::Answer(body.into()),
            (Some("note"), None, None, None) => FileOp::Note(body.into()),
            _ => return Err(bad()),
        };
        Ok(op)
    }
}

/// In-memory file tree for one workday.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    files: BTreeMap<String, String>,
    #[serde(skip)]
    before: BTreeMap<String, String>,
    #[serde(skip)]
    done_mark: usize,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn insert(&mut self, path: impl Into<String>, content: impl Into<String>) {
        self.files.insert(path.into(), content.into());
    }

    /// Places the task's input file and remembers what existed beforehand.
    pub fn begin_task(&mut self, task: &TaskSpec) {
        if let Some(seed) = task.file.as_ref().and_then(|f| f.source.as_ref()) {
            self.files.insert(seed.path.clone(), seed.content.clone());
        }
        self.before = self.files.clone();
        self.done_mark = self.read(DONE_LOG).map_or(0, |log| log.lines().count());
    }

    pub fn existed_before(&self, path: &str) -> bool {
        self.before.contains_key(path)
    }

    pub fn apply(&mut self, op: &FileOp) {
        match op {
            FileOp::Write { path, content } => {
                self.files.insert(path.clone(), content.clone());
            }
            FileOp::Copy { from, to } => {
                if let Some(content) = self.files.get(from).cloned() {
                    self.files.insert(to.clone(), content);
                }
            }
            FileOp::Append { path, line } => {
                let file = self.files.entry(path.clone()).or_default();
                file.push_str(line);
                file.push('\n');
            }
            FileOp::Answer(_) | FileOp::Note(_) => {}
        }
    }

    pub fn apply_steps(&mut self, steps: &[Step]) -> Result<(), SimError> {
        for step in steps {
            self.apply(&FileOp::parse(&step.action)?);
        }
        Ok(())
    }

    /// Lines appended to the completion log since the current task began.
    fn new_done_lines(&self) -> impl Iterator<Item = &str> {
        self.read(DONE_LOG).unwrap_or("").lines().skip(self.done_mark)
    }

    fn modified_existing(&self) -> impl Iterator<Item = &str> {
        self.before.iter().filter_map(|(path, old)| {
            let skip = path == DONE_LOG || path.ends_with(".bak");
            (!skip && self.files.get(path) != Some(old)).then_some(path.as_str())
        })
    }

    pub fn save_to(&self, dir: &Path) -> Result<(), SimError> {
        for (path, content) in &self.files {
            let target = dir.join(path);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(target, content)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub per_rule: BTreeMap<RuleId, bool>,
    pub feedback: String,
    pub output_path: Option<String>,
}

impl CheckResult {
    fn from_rules(per_rule: BTreeMap<RuleId, bool>, output_path: Option<String>) -> Self {
        let feedback = per_rule
            .iter()
            .filter(|(_, ok)| !**ok)
            .map(|(r, _)| r.feedback())
            .collect::<Vec<_>>()
            .join(" ");
        CheckResult { passed: per_rule.values().all(|ok| *ok), per_rule, feedback, output_path }
    }

    /// The outcome recorded when no output file was produced.
    pub fn missing(task: &TaskSpec) -> Self {
        let expected = task.expected_output_path.clone().unwrap_or_default();
        CheckResult {
            passed: false,
            per_rule: task.applicable_rules.iter().map(|r| (*r, false)).collect(),
            feedback: format!("Expected output file {expected} was not produced."),
            output_path: None,
        }
    }
}

fn iso_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\+08:00$").expect("valid regex"))
}

fn name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{8}_[a-z0-9]+(?:_[a-z0-9]+)*\.[a-z0-9]+$").expect("valid regex"))
}

fn done_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\[DONE\] (\S+) \| (\S+) \| \S.*$").expect("valid regex"))
}

fn date_like_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}[-/]\d{2}[-/]\d{2}").expect("valid regex"))
}

fn is_time_key(key: &str) -> bool {
    matches!(key, "at" | "date" | "time" | "timestamp" | "datetime")
        || key.ends_with("_at")
        || key.ends_with("_date")
        || key.ends_with("_time")
}

fn times_well_formed(value: &Value) -> bool {
    match value {
        Value::Object(map) => map.iter().all(|(k, v)| {
            if is_time_key(k) {
                v.as_str().is_some_and(|s| iso_re().is_match(s))
            } else {
                times_well_formed(v)
            }
        }),
        Value::String(s) if date_like_re().is_match(s) => iso_re().is_match(s),
        Value::Array(items) => items.iter().all(times_well_formed),
        _ => true,
    }
}

fn has_metadata(value: &Value) -> bool {
    ["created_at", "author", "status"]
        .iter()
        .all(|k| value.get(k).is_some_and(|v| !v.is_null()))
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn locate_output(task: &TaskSpec, ws: &Workspace) -> Option<String> {
    let expected = task.expected_output_path.as_deref()?;
    if ws.read(expected).is_some() {
        return Some(expected.to_string());
    }
    let stem = task.file.as_ref()?.stem.as_str();
    let dir = expected.rsplit_once('/').map_or("", |(d, _)| d);
    ws.files().keys().find_map(|path| {
        let (parent, name) = path.rsplit_once('/').unwrap_or(("", path));
        let fresh = ws.before.get(path) != ws.files.get(path);
        (parent == dir && name.contains(stem) && name.ends_with(".json") && fresh).then(|| path.clone())
    })
}

/// Runs every applicable rule checker against the task's output.
pub fn check_file(task: &TaskSpec, ws: &Workspace) -> Result<CheckResult, SimError> {
    if task.kind != TaskKind::FileCheck {
        return Err(SimError::NotFileCheck(task.id.clone()));
    }
    let path = locate_output(task, ws)
        .ok_or_else(|| SimError::MissingOutput(task.expected_output_path.clone().unwrap_or_default()))?;
    let parsed: Option<Value> = ws.read(&path).and_then(|body| serde_json::from_str(body).ok());
    let mut per_rule = BTreeMap::new();
    for &rule in &task.applicable_rules {
        let ok = match rule {
            RuleId::P1 => parsed.as_ref().is_some_and(times_well_formed),
            RuleId::P2 => name_re().is_match(file_name(&path)),
            RuleId::P3 => parsed.as_ref().is_some_and(has_metadata),
            RuleId::P4 => ws.modified_existing().all(|p| ws.read(&format!("{p}.bak")).is_some()),
            RuleId::P5 => ws
                .new_done_lines()
                .filter_map(|line| done_re().captures(line))
                .any(|c| c[2] == task.id),
        };
        per_rule.insert(rule, ok);
    }
    Ok(CheckResult::from_rules(per_rule, Some(path)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simbench::{generate_stream, StreamConfig};

    fn day10_task(with_source: bool) -> TaskSpec {
        let tasks = generate_stream(&StreamConfig::default());
        tasks
            .into_iter()
            .find(|t| {
                t.day_index == 10
                    && t.kind == TaskKind::FileCheck
                    && t.file.as_ref().unwrap().source.is_some() == with_source
            })
            .unwrap()
    }

    fn compliant(task: &TaskSpec, ws: &mut Workspace) {
        ws.begin_task(task);
        let file = task.file.as_ref().unwrap();
        if let Some(src) = &file.source {
            ws.apply(&FileOp::Copy { from: src.path.clone(), to: format!("{}.bak", src.path) });
            ws.apply(&FileOp::Write { path: src.path.clone(), content: "{\"title\": \"x\", \"items\": [1]}".into() });
        }
        let body = r#"{"title":"t","date":"2026-03-25T09:30:00+08:00","created_at":"2026-03-25T09:30:00+08:00","author":"agent","status":"done"}"#;
        ws.apply(&FileOp::Write { path: task.expected_output_path.clone().unwrap(), content: body.into() });
        ws.apply(&FileOp::Append {
            path: DONE_LOG.into(),
            line: format!("[DONE] 2026-03-25T09:30:00+08:00 | {} | wrote report", task.id),
        });
    }

    #[test]
    fn compliant_output_passes_everything() {
        let task = day10_task(true);
        let mut ws = Workspace::new();
        compliant(&task, &mut ws);
        let r = check_file(&task, &ws).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.per_rule.len(), 5);
        assert!(r.feedback.is_empty());
    }

    #[test]
    fn missing_backup_fails_only_p4() {
        let task = day10_task(true);
        let mut ws = Workspace::new();
        compliant(&task, &mut ws);
        let src = &task.file.as_ref().unwrap().source.as_ref().unwrap().path;
        ws.files.remove(&format!("{src}.bak"));
        let r = check_file(&task, &ws).unwrap();
        assert!(!r.passed);
        assert_eq!(r.per_rule.iter().filter(|(_, ok)| !**ok).map(|(r, _)| *r).collect::<Vec<_>>(), vec![RuleId::P4]);
        assert_eq!(r.feedback, RuleId::P4.feedback());
    }

    #[test]
    fn p4_is_vacuous_without_modification() {
        let task = day10_task(false);
        let mut ws = Workspace::new();
        compliant(&task, &mut ws);
        assert!(check_file(&task, &ws).unwrap().per_rule[&RuleId::P4]);
    }

    #[test]
    fn missing_output_is_an_error() {
        let task = day10_task(false);
        let mut ws = Workspace::new();
        ws.begin_task(&task);
        assert!(matches!(check_file(&task, &ws), Err(SimError::MissingOutput(_))));
        let m = CheckResult::missing(&task);
        assert!(!m.passed && m.per_rule.values().all(|ok| !ok));
    }

    #[test]
    fn stale_done_lines_do_not_count() {
        let task = day10_task(false);
        let mut ws = Workspace::new();
        ws.insert(DONE_LOG, format!("[DONE] 2026-03-25T09:00:00+08:00 | {} | earlier\n", task.id));
        ws.begin_task(&task);
        let body = r#"{"date":"2026-03-25T09:30:00+08:00","created_at":"2026-03-25T09:30:00+08:00","author":"a","status":"s"}"#;
        ws.apply(&FileOp::Write { path: task.expected_output_path.clone().unwrap(), content: body.into() });
        assert!(!check_file(&task, &ws).unwrap().per_rule[&RuleId::P5]);
    }

    #[test]
    fn actions_round_trip() {
        let ops = [
            FileOp::Write { path: "a/b.json".into(), content: "{\n}".into() },
            FileOp::Copy { from: "a".into(), to: "a.bak".into() },
            FileOp::Append { path: DONE_LOG.into(), line: "[DONE] x | y | z".into() },
            FileOp::Answer("\\bbox{A}".into()),
            FileOp::Note("nothing".into()),
        ];
        for op in ops {
            assert_eq!(FileOp::parse(&op.to_action()).unwrap(), op);
        }
        assert!(FileOp::parse("delete everything").is_err());
    }
}
