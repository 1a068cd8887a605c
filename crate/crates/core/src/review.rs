//! Human reviewer scores: loading, per-graph aggregation and per-model
//! averages.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Read;
use thiserror::Error;
use tracing::warn;

pub const EXPECTED_REVIEWERS: usize = 3;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error("{file} line {line}: {field} score {value} outside [1, 4] or not a multiple of 0.5")]
    Score {
        file: String,
        line: u64,
        field: &'static str,
        value: f64,
    },
    #[error("{file} line {line}: unknown {kind} {value:?}")]
    Unknown {
        file: String,
        line: u64,
        kind: &'static str,
        value: String,
    },
    #[error("no review records")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub condition: String,
    pub model: String,
    pub reviewer_id: String,
    pub accuracy: f64,
    pub comprehensiveness: f64,
}

/// Allowed models and conditions for strict loading.
#[derive(Debug, Clone, Default)]
pub struct Roster {
    pub models: BTreeSet<String>,
    pub conditions: BTreeSet<String>,
}

fn valid_score(x: f64) -> bool {
    (1.0..=4.0).contains(&x) && (x * 2.0).fract() == 0.0
}

/// Reads `condition,model,reviewer_id,accuracy,comprehensiveness` rows.
/// With a roster, rows naming anything outside it are rejected.
pub fn load_reviews(input: impl Read, file: &str, roster: Option<&Roster>) -> Result<Vec<ReviewRecord>, ReviewError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let fmt = |message: String| ReviewError::Format {
        file: file.into(),
        message,
    };
    let header = reader.headers().map_err(|e| fmt(e.to_string()))?.clone();
    let expected = ["condition", "model", "reviewer_id", "accuracy", "comprehensiveness"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(fmt(format!("header must be {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| fmt(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let score = |i: usize, field: &'static str| -> Result<f64, ReviewError> {
            let raw = &row[i];
            let value: f64 = raw
                .parse()
                .map_err(|_| fmt(format!("line {line}: {field} {raw:?} is not a number")))?;
            if !valid_score(value) {
                return Err(ReviewError::Score {
                    file: file.into(),
                    line,
                    field,
                    value,
                });
            }
            Ok(value)
        };
        let rec = ReviewRecord {
            condition: row[0].to_string(),
            model: row[1].to_string(),
            reviewer_id: row[2].to_string(),
            accuracy: score(3, "accuracy")?,
            comprehensiveness: score(4, "comprehensiveness")?,
        };
        if let Some(r) = roster {
            if !r.models.contains(&rec.model) {
                return Err(ReviewError::Unknown {
                    file: file.into(),
                    line,
                    kind: "model",
                    value: rec.model,
                });
            }
            if !r.conditions.contains(&rec.condition) {
                return Err(ReviewError::Unknown {
                    file: file.into(),
                    line,
                    kind: "condition",
                    value: rec.condition,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub mean: f64,
    /// Sample variance (n - 1 denominator); 0 for a single score.
    pub variance: f64,
    pub n: usize,
}

impl AggregateCell {
    pub fn of(scores: &[f64]) -> Option<Self> {
        let n = scores.len();
        if n == 0 {
            return None;
        }
        let mean = scores.iter().sum::<f64>() / n as f64;
        let variance = if n < 2 {
            0.0
        } else {
            scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        };
        Some(Self { mean, variance, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub condition: String,
    pub model: String,
    pub accuracy: AggregateCell,
    pub comprehensiveness: AggregateCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAverage {
    pub model: String,
    pub accuracy_score: f64,
    pub comprehensiveness_score: f64,
    pub accuracy_variance: f64,
    pub comprehensiveness_variance: f64,
    pub graphs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAverage {
    pub condition: String,
    pub accuracy: f64,
    pub comprehensiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSummary {
    /// In order of first appearance.
    pub cells: Vec<CellSummary>,
    pub models: Vec<ModelAverage>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-(condition, model) means and variances, then per-model averages of
/// those cell statistics.
pub fn aggregate(records: &[ReviewRecord]) -> Result<ReviewSummary, ReviewError> {
    if records.is_empty() {
        return Err(ReviewError::Empty);
    }
    let mut groups: IndexMap<(&str, &str), Vec<&ReviewRecord>> = IndexMap::new();
    for r in records {
        groups.entry((&r.condition, &r.model)).or_default().push(r);
    }
    let mut cells = Vec::with_capacity(groups.len());
    for ((condition, model), rs) in &groups {
        if rs.len() != EXPECTED_REVIEWERS {
            warn!(condition, model, reviewers = rs.len(), "unexpected reviewer count");
        }
        let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
        let comp: Vec<f64> = rs.iter().map(|r| r.comprehensiveness).collect();
        cells.push(CellSummary {
            condition: condition.to_string(),
            model: model.to_string(),
            accuracy: AggregateCell::of(&acc).expect("non-empty group"),
            comprehensiveness: AggregateCell::of(&comp).expect("non-empty group"),
        });
    }
    let mut model_order: IndexMap<&str, ()> = IndexMap::new();
    for c in &cells {
        model_order.insert(&c.model, ());
    }
    let models = model_order
        .keys()
        .map(|m| {
            let mine: Vec<&CellSummary> = cells.iter().filter(|c| c.model == *m).collect();
            ModelAverage {
                model: m.to_string(),
                accuracy_score: mean(mine.iter().map(|c| c.accuracy.mean)),
                comprehensiveness_score: mean(mine.iter().map(|c| c.comprehensiveness.mean)),
                accuracy_variance: mean(mine.iter().map(|c| c.accuracy.variance)),
                comprehensiveness_variance: mean(mine.iter().map(|c| c.comprehensiveness.variance)),
                graphs: mine.len(),
            }
        })
        .collect();
    Ok(ReviewSummary { cells, models })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortKey {
    Accuracy,
    Comprehensiveness,
}

impl ReviewSummary {
    pub fn cell(&self, condition: &str, model: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.condition == condition && c.model == model)
    }

    pub fn model(&self, model: &str) -> Option<&ModelAverage> {
        self.models.iter().find(|m| m.model == model)
    }

    /// Each condition's mean of cell means across models, sorted descending
    /// by `key` with ties broken by condition name.
    pub fn conditions_sorted(&self, key: SortKey) -> Vec<ConditionAverage> {
        let mut by_condition: IndexMap<&str, Vec<&CellSummary>> = IndexMap::new();
        for c in &self.cells {
            by_condition.entry(&c.condition).or_default().push(c);
        }
        let mut rows: Vec<ConditionAverage> = by_condition
            .into_iter()
            .map(|(condition, cs)| ConditionAverage {
                condition: condition.to_string(),
                accuracy: mean(cs.iter().map(|c| c.accuracy.mean)),
                comprehensiveness: mean(cs.iter().map(|c| c.comprehensiveness.mean)),
            })
            .collect();
        let value = |r: &ConditionAverage| match key {
            SortKey::Accuracy => r.accuracy,
            SortKey::Comprehensiveness => r.comprehensiveness,
        };
        rows.sort_by(|a, b| {
            value(b)
                .total_cmp(&value(a))
                .then_with(|| a.condition.cmp(&b.condition))
        });
        rows
    }

    /// One row per cell: means and variances rounded to two places.
    pub fn cells_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "condition",
            "model",
            "accuracy_mean",
            "accuracy_variance",
            "comprehensiveness_mean",
            "comprehensiveness_variance",
        ])
        .expect("in-memory write");
        for c in &self.cells {
            w.write_record([
                c.condition.clone(),
                c.model.clone(),
                format!("{:.2}", c.accuracy.mean),
                format!("{:.2}", c.accuracy.variance),
                format!("{:.2}", c.comprehensiveness.mean),
                format!("{:.2}", c.comprehensiveness.variance),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    pub fn models_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "accuracy_score",
            "comprehensiveness_score",
            "accuracy_variance",
            "comprehensiveness_variance",
        ])
        .expect("in-memory write");
        for m in &self.models {
            w.write_record([
                m.model.clone(),
                format!("{:.2}", m.accuracy_score),
                format!("{:.2}", m.comprehensiveness_score),
                format!("{:.2}", m.accuracy_variance),
                format!("{:.2}", m.comprehensiveness_variance),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    /// Both sorted views side by side.
    pub fn sorted_csv(&self) -> String {
        let by_acc = self.conditions_sorted(SortKey::Accuracy);
        let by_comp = self.conditions_sorted(SortKey::Comprehensiveness);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "condition_by_accuracy",
            "accuracy",
            "comprehensiveness",
            "condition_by_comprehensiveness",
            "accuracy",
            "comprehensiveness",
        ])
        .expect("in-memory write");
        for (a, c) in by_acc.iter().zip(&by_comp) {
            w.write_record([
                a.condition.clone(),
                format!("{:.2}", a.accuracy),
                format!("{:.2}", a.comprehensiveness),
                c.condition.clone(),
                format!("{:.2}", c.accuracy),
                format!("{:.2}", c.comprehensiveness),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::json!({
            "cells": self.cells,
            "models": self.models,
            "sorted_by_accuracy": self.conditions_sorted(SortKey::Accuracy),
            "sorted_by_comprehensiveness": self.conditions_sorted(SortKey::Comprehensiveness),
        });
        let mut s = serde_json::to_string_pretty(&value).expect("summary serializes");
        s.push('\n');
        s
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
