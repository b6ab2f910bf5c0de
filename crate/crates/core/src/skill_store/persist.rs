//! Directory layout: `<dir>/index.json` holds the generation and the skill
//! order; each skill lives in `<dir>/skills/<name>.md` as a `key: value`
//! header, a `---` terminator line, then the content verbatim.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{Skill, SkillCategory, SkillError, SkillLibrary};

pub const INDEX_FILE: &str = "index.json";
pub const SKILLS_SUBDIR: &str = "skills";

#[derive(Serialize, Deserialize)]
struct Index {
    generation: u64,
    names: Vec<String>,
}

fn render_skill(skill: &Skill) -> String {
    format!(
        "name: {}\ndescription: {}\ncategory: {}\ncreated_generation: {}\ncreated_at: {}\n---\n{}",
        skill.name,
        skill.description,
        skill.category,
        skill.created_generation,
        skill.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        skill.content
    )
}

fn parse_skill(text: &str, origin: &str) -> Result<Skill, SkillError> {
    let corrupt = |msg: String| SkillError::CorruptLibrary(format!("{origin}: {msg}"));
    let mut name = None;
    let mut description = None;
    let mut category = None;
    let mut created_generation = None;
    let mut created_at = None;
    let mut rest = text;
    loop {
        let (line, tail) = match rest.find('\n') {
            Some(i) => (&rest[..i], &rest[i + 1..]),
            None => return Err(corrupt("header is not terminated by ---".into())),
        };
        rest = tail;
        if line == "---" {
            break;
        }
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| corrupt(format!("malformed header line {line:?}")))?;
        match key {
            "name" => name = Some(value.to_string()),
            "description" => description = Some(value.to_string()),
            "category" => {
                category = Some(SkillCategory::parse(value).ok_or_else(|| corrupt(format!("unknown category {value:?}")))?)
            }
            "created_generation" => {
                created_generation = Some(value.parse::<u64>().map_err(|e| corrupt(e.to_string()))?)
            }
            "created_at" => {
                created_at = Some(
                    DateTime::parse_from_rfc3339(value)
                        .map_err(|e| corrupt(e.to_string()))?
                        .with_timezone(&Utc),
                )
            }
            other => return Err(corrupt(format!("unknown header key {other:?}"))),
        }
    }
    let missing = |k: &str| corrupt(format!("missing header key {k}"));
    Ok(Skill {
        name: name.ok_or_else(|| missing("name"))?,
        description: description.ok_or_else(|| missing("description"))?,
        category: category.ok_or_else(|| missing("category"))?,
        created_generation: created_generation.ok_or_else(|| missing("created_generation"))?,
        created_at: created_at.ok_or_else(|| missing("created_at"))?,
        content: rest.to_string(),
    })
}

pub fn save(library: &SkillLibrary, dir: &Path) -> Result<(), SkillError> {
    let skills_dir = dir.join(SKILLS_SUBDIR);
    fs::create_dir_all(&skills_dir)?;
    for skill in library.skills() {
        fs::write(skills_dir.join(format!("{}.md", skill.name)), render_skill(skill))?;
    }
    let keep: BTreeSet<String> = library.skills().iter().map(|s| format!("{}.md", s.name)).collect();
    for entry in fs::read_dir(&skills_dir)? {
        let entry = entry?;
        let file_name = entry.file_name().to_string_lossy().into_owned();
        if file_name.ends_with(".md") && !keep.contains(&file_name) {
            fs::remove_file(entry.path())?;
        }
    }
    let index = Index {
        generation: library.generation(),
        names: library.skills().iter().map(|s| s.name.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(dir.join(INDEX_FILE), json)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<SkillLibrary, SkillError> {
    let raw = fs::read_to_string(dir.join(INDEX_FILE))?;
    let index: Index =
        serde_json::from_str(&raw).map_err(|e| SkillError::CorruptLibrary(format!("{INDEX_FILE}: {e}")))?;
    let skills_dir = dir.join(SKILLS_SUBDIR);
    let mut skills = Vec::with_capacity(index.names.len());
    for name in &index.names {
        let path = skills_dir.join(format!("{name}.md"));
        if !path.is_file() {
            return Err(SkillError::CorruptLibrary(format!("index lists {name:?} but {} is missing", path.display())));
        }
        let skill = parse_skill(&fs::read_to_string(&path)?, &path.display().to_string())?;
        if &skill.name != name {
            return Err(SkillError::CorruptLibrary(format!(
                "{} declares name {:?}, index says {name:?}",
                path.display(),
                skill.name
            )));
        }
        skills.push(skill);
    }
    if skills_dir.is_dir() {
        for entry in fs::read_dir(&skills_dir)? {
            let file_name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = file_name.strip_suffix(".md") {
                if !index.names.iter().any(|n| n == stem) {
                    return Err(SkillError::CorruptLibrary(format!("skill file {file_name} is not in the index")));
                }
            }
        }
    }
    SkillLibrary::from_parts(skills, index.generation)
}
