use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SimError, TaskKind, TaskSpec};

/// One graded task, flattened for aggregation and export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTask {
    pub task_id: String,
    pub day_index: u32,
    pub round_index: u32,
    pub kind: TaskKind,
    pub value: f64,
}

impl ScoredTask {
    pub fn new(task: &TaskSpec, value: f64) -> Self {
        ScoredTask {
            task_id: task.id.clone(),
            day_index: task.day_index,
            round_index: task.round_index,
            kind: task.kind,
            value,
        }
    }

    pub fn completed(&self) -> bool {
        self.kind == TaskKind::FileCheck && self.value >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub day: u32,
    pub accuracy: f64,
    /// None on a day without file-check tasks.
    pub completion: Option<f64>,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_accuracy: f64,
    /// 0 when the results hold no file-check task.
    pub completion_rate: f64,
    pub per_day: Vec<DayMetrics>,
    pub rolling_3day: Vec<f64>,
}

impl Metrics {
    pub fn day(&self, day: u32) -> Option<&DayMetrics> {
        self.per_day.iter().find(|d| d.day == day)
    }

    /// Completion over the file-check tasks of the selected days.
    pub fn completion_over(results: &[ScoredTask], mut keep: impl FnMut(u32) -> bool) -> Option<f64> {
        let (n, done) = results
            .iter()
            .filter(|r| r.kind == TaskKind::FileCheck && keep(r.day_index))
            .fold((0usize, 0usize), |(n, d), r| (n + 1, d + usize::from(r.completed())));
        (n > 0).then(|| done as f64 / n as f64)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn aggregate(results: &[ScoredTask]) -> Result<Metrics, SimError> {
    if results.is_empty() {
        return Err(SimError::EmptyResults);
    }
    let mut by_day: BTreeMap<u32, Vec<&ScoredTask>> = BTreeMap::new();
    for r in results {
        by_day.entry(r.day_index).or_default().push(r);
    }
    let per_day: Vec<DayMetrics> = by_day
        .iter()
        .map(|(&day, rows)| {
            let fc: Vec<_> = rows.iter().filter(|r| r.kind == TaskKind::FileCheck).collect();
            DayMetrics {
                day,
                accuracy: mean(rows.iter().map(|r| r.value)),
                completion: (!fc.is_empty()).then(|| mean(fc.iter().map(|r| f64::from(u8::from(r.completed()))))),
                tasks: rows.len(),
            }
        })
        .collect();
    let rolling_3day = per_day
        .iter()
        .map(|d| mean(per_day.iter().filter(|e| e.day + 2 >= d.day && e.day <= d.day).map(|e| e.accuracy)))
        .collect();
    Ok(Metrics {
        overall_accuracy: mean(results.iter().map(|r| r.value)),
        completion_rate: Metrics::completion_over(results, |_| true).unwrap_or(0.0),
        per_day,
        rolling_3day,
    })
}

pub fn write_scores_csv<W: Write>(results: &[ScoredTask], out: W) -> Result<(), SimError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["task_id", "day", "round", "kind", "value", "completed"])?;
    for r in results {
        writer.write_record([
            r.task_id.clone(),
            r.day_index.to_string(),
            r.round_index.to_string(),
            r.kind.as_str().to_string(),
            r.value.to_string(),
            r.completed().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
