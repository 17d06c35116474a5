//! Cross-run consistency of components.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub a: usize,
    pub b: usize,
    pub abs_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// C_a×C_b Pearson correlations; omitted from serialized reports of
    /// large models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corr: Option<Vec<Vec<f64>>>,
    pub row_order: Vec<usize>,
    pub max_abs: Vec<f64>,
    pub matching: Vec<MatchedPair>,
}

impl StabilityReport {
    pub fn from_sources(s_a: ArrayView2<'_, f64>, s_b: ArrayView2<'_, f64>) -> Result<Self> {
        let corr = component_correlation(s_a, s_b)?;
        Ok(Self::from_correlation(&corr))
    }

    pub fn from_correlation(corr: &Array2<f64>) -> Self {
        StabilityReport {
            row_order: sort_rows_by_argmax(corr.view()),
            max_abs: max_abs_per_row(corr.view()),
            matching: match_components(corr.view()),
            corr: Some(corr.rows().into_iter().map(|r| r.to_vec()).collect()),
        }
    }

    /// CSV with one `component,max_abs_corr` line per run-A component.
    pub fn max_abs_csv(&self) -> String {
        let mut out = String::from("component,max_abs_corr\n");
        for (i, v) in self.max_abs.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }
}

/// Pearson correlation between every column of `s_a` and every column of
/// `s_b`. Columns with zero variance correlate 0 with everything.
pub fn component_correlation(s_a: ArrayView2<'_, f64>, s_b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if s_a.nrows() != s_b.nrows() {
        return Err(Error::Shape(format!(
            "runs cover different vocabularies ({} vs {} words)",
            s_a.nrows(),
            s_b.nrows()
        )));
    }
    if s_a.nrows() == 0 {
        return Err(Error::Shape("empty source matrices".into()));
    }
    let standardize = |s: ArrayView2<'_, f64>, run: &str| {
        let mean = s.mean_axis(Axis(0)).expect("non-empty");
        let mut z = &s - &mean;
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col /= norm;
            } else {
                log::warn!("run {run} component {j} has zero variance; its correlations are set to 0");
            }
        }
        z
    };
    let za = standardize(s_a, "A");
    let zb = standardize(s_b, "B");
    Ok(za.t().dot(&zb).mapv(|r| r.clamp(-1.0, 1.0)))
}

fn argmax_abs(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = j;
        }
    }
    best
}

pub fn max_abs_per_row(corr: ArrayView2<'_, f64>) -> Vec<f64> {
    corr.rows()
        .into_iter()
        .map(|r| r.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
        .collect()
}

/// Run-A row order sorted by the column index of each row's largest |corr|;
/// ties keep row order.
pub fn sort_rows_by_argmax(corr: ArrayView2<'_, f64>) -> Vec<usize> {
    let keys: Vec<usize> = corr.rows().into_iter().map(argmax_abs).collect();
    let mut order: Vec<usize> = (0..corr.nrows()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    order
}

/// Greedy one-to-one matching: repeatedly take the largest remaining |corr|
/// whose row and column are both free. Ties go to the lower row, then column.
/// This is not an optimal assignment.
pub fn match_components(corr: ArrayView2<'_, f64>) -> Vec<MatchedPair> {
    let (rows, cols) = corr.dim();
    let mut entries: Vec<(usize, usize, f64)> = corr
        .indexed_iter()
        .map(|((i, j), v)| (i, j, v.abs()))
        .collect();
    entries.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::with_capacity(rows.min(cols));
    for (i, j, abs_corr) in entries {
        if row_used[i] || col_used[j] {
            continue;
        }
        row_used[i] = true;
        col_used[j] = true;
        pairs.push(MatchedPair { a: i, b: j, abs_corr });
        if pairs.len() == rows.min(cols) {
            break;
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelClass {
    Interpretable,
    Unsure,
    Noise,
    Unlabeled,
}

impl fmt::Display for LabelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelClass::Interpretable => "interpretable",
            LabelClass::Unsure => "unsure",
            LabelClass::Noise => "noise",
            LabelClass::Unlabeled => "unlabeled",
        })
    }
}

/// Groups `max_abs` values by each run-A component's class; components
/// missing from `labels` fall into [`LabelClass::Unlabeled`].
pub fn stability_by_label(
    report: &StabilityReport,
    labels: &BTreeMap<usize, LabelClass>,
) -> BTreeMap<LabelClass, Vec<f64>> {
    let mut groups: BTreeMap<LabelClass, Vec<f64>> = BTreeMap::new();
    for (component, &value) in report.max_abs.iter().enumerate() {
        let class = labels.get(&component).copied().unwrap_or(LabelClass::Unlabeled);
        groups.entry(class).or_default().push(value);
    }
    groups
}
