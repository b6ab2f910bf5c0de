use std::collections::BTreeSet;

use super::SimError;

pub fn option_label(index: usize) -> String {
    char::from(b'A' + index as u8).to_string()
}

fn label_index(label: &str) -> Option<usize> {
    let mut chars = label.chars();
    match (chars.next(), chars.next()) {
        (Some(c @ 'A'..='Z'), None) => Some(c as usize - 'A' as usize),
        _ => None,
    }
}

/// `max(0, 1 - (FP + FN) / n_options)`.
pub fn score_multichoice(
    truth: &BTreeSet<String>,
    predicted: &BTreeSet<String>,
    n_options: usize,
) -> Result<f64, SimError> {
    for label in truth.iter().chain(predicted) {
        if !label_index(label).is_some_and(|i| i < n_options) {
            return Err(SimError::InvalidOption { label: label.clone(), n_options });
        }
    }
    let fp = predicted.difference(truth).count();
    let fn_ = truth.difference(predicted).count();
    Ok((1.0 - (fp + fn_) as f64 / n_options as f64).max(0.0))
}

pub fn format_options(options: &BTreeSet<String>) -> String {
    let joined: Vec<&str> = options.iter().map(String::as_str).collect();
    format!("\\bbox{{{}}}", joined.join(","))
}

/// Reads the last `\bbox{...}` in an answer. No box means no options chosen.
pub fn parse_options(answer: &str) -> BTreeSet<String> {
    let Some(start) = answer.rfind("\\bbox{") else {
        return BTreeSet::new();
    };
    let rest = &answer[start + 6..];
    let inner = rest.split('}').next().unwrap_or("");
    inner.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}
