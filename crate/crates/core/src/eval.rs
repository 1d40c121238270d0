//! Exact-match micro precision / recall / F1 over mention sets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Mention;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }

    fn add(&mut self, tp: usize, predicted: usize, gold: usize) {
        *self = Self::from_counts(self.tp + tp, self.predicted + predicted, self.gold + gold);
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Score,
    pub per_category: BTreeMap<String, Score>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("report name must not be empty")]
    EmptyName,
    #[error("no reports to compare")]
    NoReports,
}

/// Scores aligned per-sentence mention sets. Duplicate predictions count
/// once.
pub fn score(gold: &[Vec<Mention>], pred: &[Vec<Mention>]) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut report = EvalReport::default();
    for (g, p) in gold.iter().zip(pred) {
        let g: BTreeSet<&Mention> = g.iter().collect();
        let p: BTreeSet<&Mention> = p.iter().collect();
        for m in &g {
            report.per_category.entry(m.category.clone()).or_default().add(0, 0, 1);
        }
        for m in &p {
            let hit = usize::from(g.contains(m));
            report
                .per_category
                .entry(m.category.clone())
                .or_default()
                .add(hit, 1, 0);
        }
        let tp = p.iter().filter(|m| g.contains(*m)).count();
        report.micro.add(tp, p.len(), g.len());
    }
    Ok(report)
}

impl EvalReport {
    pub fn to_table(&self, name: &str) -> String {
        compare(&[(name.to_string(), self.clone())]).unwrap_or_default()
    }
}

/// Fixed-column text table, one row per report in the given order.
pub fn compare(reports: &[(String, EvalReport)]) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    if reports.iter().any(|(n, _)| n.trim().is_empty()) {
        return Err(EvalError::EmptyName);
    }
    let width = reports.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "system", "P", "R", "F1", "TP", "pred", "gold"
    );
    for (name, r) in reports {
        let s = &r.micro;
        out.push_str(&format!(
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7}  {:>7}  {:>7}\n",
            name,
            100.0 * s.precision,
            100.0 * s.recall,
            100.0 * s.f1,
            s.tp,
            s.predicted,
            s.gold
        ));
    }
    Ok(out)
}
