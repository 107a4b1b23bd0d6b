//! Detection and group-fairness metrics.
//!
//! Predictions are `1[score > threshold]`; a score exactly at the threshold is
//! predicted real. Rates that would divide by zero are errors, never zeros.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;
use crate::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no records{}", scope(.group))]
    Empty { group: Option<String> },
    #[error("{metric} is undefined{}: no {missing} samples", scope(.group))]
    Undefined {
        metric: &'static str,
        group: Option<String>,
        missing: &'static str,
    },
    #[error("record {index} has score {score}, expected a finite value in [0, 1]")]
    InvalidScore { index: usize, score: f64 },
}

fn scope(group: &Option<String>) -> String {
    group.as_ref().map(|g| format!(" for group `{g}`")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord<T> {
    pub score: T,
    pub label: Label,
    pub group: String,
}

/// Confusion counts at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn n_real(&self) -> usize {
        self.fp + self.tn
    }

    pub fn n_fake(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn total(&self) -> usize {
        self.n_real() + self.n_fake()
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.n_real())
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.n_fake())
    }

    pub fn acc(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn in_scope<T>(restrict: Option<&str>) -> impl Fn(&&EvalRecord<T>) -> bool + '_ {
    move |r| restrict.is_none_or(|g| r.group == g)
}

/// Confusion counts over the records of `restrict` (all records if `None`).
pub fn confusion<T: Scalar>(
    records: &[EvalRecord<T>],
    threshold: f64,
    restrict: Option<&str>,
) -> Result<Confusion, MetricsError> {
    let threshold = T::from_f64_lossy(threshold);
    let mut c = Confusion::default();
    for r in records.iter().filter(in_scope(restrict)) {
        let predicted_fake = r.score > threshold;
        match (r.label, predicted_fake) {
            (Label::Fake, true) => c.tp += 1,
            (Label::Fake, false) => c.fn_ += 1,
            (Label::Real, true) => c.fp += 1,
            (Label::Real, false) => c.tn += 1,
        }
    }
    if c.total() == 0 {
        return Err(MetricsError::Empty {
            group: restrict.map(str::to_string),
        });
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub fpr: f64,
    pub tpr: f64,
    pub acc: f64,
}

/// FPR, TPR and ACC; both classes must be present.
pub fn confusion_rates<T: Scalar>(
    records: &[EvalRecord<T>],
    threshold: f64,
    restrict: Option<&str>,
) -> Result<Rates, MetricsError> {
    let c = confusion(records, threshold, restrict)?;
    let group = || restrict.map(str::to_string);
    Ok(Rates {
        fpr: c.fpr().ok_or_else(|| MetricsError::Undefined {
            metric: "FPR",
            group: group(),
            missing: "real",
        })?,
        tpr: c.tpr().ok_or_else(|| MetricsError::Undefined {
            metric: "TPR",
            group: group(),
            missing: "fake",
        })?,
        acc: c.acc().expect("non-empty"),
    })
}

/// Mann–Whitney estimate of P(score_fake > score_real), ties counting one half.
pub fn auc<T: Scalar>(records: &[EvalRecord<T>], restrict: Option<&str>) -> Result<f64, MetricsError> {
    let mut scored: Vec<(T, Label)> = records
        .iter()
        .filter(in_scope(restrict))
        .map(|r| (r.score, r.label))
        .collect();
    let n_fake = scored.iter().filter(|(_, l)| l.is_fake()).count();
    let n_real = scored.len() - n_fake;
    let group = || restrict.map(str::to_string);
    if n_real == 0 {
        return Err(MetricsError::Undefined {
            metric: "AUC",
            group: group(),
            missing: "real",
        });
    }
    if n_fake == 0 {
        return Err(MetricsError::Undefined {
            metric: "AUC",
            group: group(),
            missing: "fake",
        });
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));
    // Walk tie blocks in ascending order; each fake beats every real strictly
    // below its block and ties with the reals inside it.
    let mut wins = 0.0f64;
    let mut reals_below = 0usize;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let block = &scored[i..j];
        let fakes = block.iter().filter(|(_, l)| l.is_fake()).count();
        let reals = block.len() - fakes;
        wins += fakes as f64 * (reals_below as f64 + 0.5 * reals as f64);
        reals_below += reals;
        i = j;
    }
    Ok(wins / (n_real as f64 * n_fake as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessMetrics {
    pub g_fpr: f64,
    pub f_fpr: f64,
    pub f_eo: f64,
}

fn group_labels<T>(records: &[EvalRecord<T>]) -> Vec<String> {
    let mut labels: Vec<String> = records.iter().map(|r| r.group.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
}

/// G_FPR, F_FPR and F_EO over the groups named in `records`.
///
/// Every group needs real samples; F_EO also needs fake samples in every group.
pub fn fairness_metrics<T: Scalar>(records: &[EvalRecord<T>], threshold: f64) -> Result<FairnessMetrics, MetricsError> {
    let overall = confusion(records, threshold, None)?;
    let overall_fpr = overall.fpr().ok_or(MetricsError::Undefined {
        metric: "FPR",
        group: None,
        missing: "real",
    })?;
    let overall_tpr = overall.tpr().ok_or(MetricsError::Undefined {
        metric: "TPR",
        group: None,
        missing: "fake",
    })?;
    let mut fprs = Vec::new();
    let mut f_fpr = 0.0;
    let mut f_eo = 0.0;
    for g in group_labels(records) {
        let c = confusion(records, threshold, Some(&g))?;
        let fpr = c.fpr().ok_or_else(|| MetricsError::Undefined {
            metric: "FPR",
            group: Some(g.clone()),
            missing: "real",
        })?;
        let tpr = c.tpr().ok_or_else(|| MetricsError::Undefined {
            metric: "TPR",
            group: Some(g.clone()),
            missing: "fake",
        })?;
        f_fpr += (fpr - overall_fpr).abs();
        f_eo += (fpr - overall_fpr).abs() + (tpr - overall_tpr).abs();
        fprs.push(fpr);
    }
    Ok(FairnessMetrics {
        g_fpr: max_gap(&fprs),
        f_fpr,
        f_eo,
    })
}

fn max_gap(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub fpr: f64,
    pub tpr: f64,
    pub acc: f64,
    pub auc: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub fpr: f64,
    pub tpr: f64,
    pub acc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessBlock {
    pub g_fpr: f64,
    pub f_fpr: f64,
    pub f_eo: f64,
    /// Largest pairwise gap between group AUCs.
    pub g_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_group: BTreeMap<String, GroupMetrics>,
    pub overall: OverallMetrics,
    pub fairness: FairnessBlock,
}

pub fn overall_metrics<T: Scalar>(records: &[EvalRecord<T>], threshold: f64) -> Result<OverallMetrics, MetricsError> {
    let rates = confusion_rates(records, threshold, None)?;
    Ok(OverallMetrics {
        fpr: rates.fpr,
        tpr: rates.tpr,
        acc: rates.acc,
        auc: auc(records, None)?,
    })
}

/// Full report; every group must contain both classes.
pub fn metrics_report<T: Scalar>(records: &[EvalRecord<T>], threshold: f64) -> Result<MetricsReport, MetricsError> {
    if let Some((index, r)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.score >= T::zero() && r.score <= T::one()))
    {
        return Err(MetricsError::InvalidScore {
            index,
            score: r.score.to_f64_lossy(),
        });
    }
    let overall = overall_metrics(records, threshold)?;
    let fair = fairness_metrics(records, threshold)?;
    let mut per_group = BTreeMap::new();
    for g in group_labels(records) {
        let c = confusion(records, threshold, Some(&g))?;
        let rates = confusion_rates(records, threshold, Some(&g))?;
        per_group.insert(
            g.clone(),
            GroupMetrics {
                fpr: rates.fpr,
                tpr: rates.tpr,
                acc: rates.acc,
                auc: auc(records, Some(&g))?,
                n_real: c.n_real(),
                n_fake: c.n_fake(),
            },
        );
    }
    let aucs: Vec<f64> = per_group.values().map(|m| m.auc).collect();
    Ok(MetricsReport {
        per_group,
        overall,
        fairness: FairnessBlock {
            g_fpr: fair.g_fpr,
            f_fpr: fair.f_fpr,
            f_eo: fair.f_eo,
            g_auc: max_gap(&aucs),
        },
    })
}

impl MetricsReport {
    /// `metric,group,value` rows. Overall metrics use group `overall`; the
    /// fairness block leaves the group column empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,group,value\n");
        for (g, m) in &self.per_group {
            let g = csv_field(g);
            for (name, v) in [("fpr", m.fpr), ("tpr", m.tpr), ("acc", m.acc), ("auc", m.auc)] {
                let _ = writeln!(out, "{name},{g},{v}");
            }
            let _ = writeln!(out, "n_real,{g},{}", m.n_real);
            let _ = writeln!(out, "n_fake,{g},{}", m.n_fake);
        }
        let o = &self.overall;
        for (name, v) in [("fpr", o.fpr), ("tpr", o.tpr), ("acc", o.acc), ("auc", o.auc)] {
            let _ = writeln!(out, "{name},overall,{v}");
        }
        let f = &self.fairness;
        for (name, v) in [
            ("g_fpr", f.g_fpr),
            ("f_fpr", f.f_fpr),
            ("f_eo", f.f_eo),
            ("g_auc", f.g_auc),
        ] {
            let _ = writeln!(out, "{name},,{v}");
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
