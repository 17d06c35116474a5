//! Per-component statistics: dominant-word sets, one-sidedness, sign
//! normalization, top-word lists and histogram data.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding_io::Vocabulary;
use crate::error::{Error, Result};
use crate::fastica::IcaModel;

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Positive, Direction::Negative];

    pub fn short(self) -> &'static str {
        match self {
            Direction::Positive => "pos",
            Direction::Negative => "neg",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "pos" | "+" => Ok(Direction::Positive),
            "negative" | "neg" | "-" => Ok(Direction::Negative),
            other => Err(Error::InvalidArgument(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWord {
    pub index: usize,
    pub token: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentProfile {
    pub component_id: usize,
    /// Vocabulary indices, ascending.
    pub dominant_words: Vec<usize>,
    pub n_positive: usize,
    pub n_negative: usize,
    /// `None` when the dominant set is empty.
    pub one_sidedness: Option<f64>,
    pub dominant_direction: Option<Direction>,
    pub top_positive: Vec<ScoredWord>,
    pub top_negative: Vec<ScoredWord>,
}

impl ComponentProfile {
    /// Empty dominant sets mark a component as noise-like.
    pub fn is_noise_like(&self) -> bool {
        self.dominant_words.is_empty()
    }
}

/// Index of the component with the largest absolute value for each word;
/// ties go to the lowest component index.
pub fn dominant_assignment(s: ArrayView2<'_, f64>) -> Vec<usize> {
    s.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_abs = f64::NEG_INFINITY;
            for (c, v) in row.iter().enumerate() {
                if v.abs() > best_abs {
                    best = c;
                    best_abs = v.abs();
                }
            }
            best
        })
        .collect()
}

/// Dominant-word sets for every component; together they partition the
/// vocabulary.
pub fn dominant_words(s: ArrayView2<'_, f64>) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); s.ncols()];
    for (word, c) in dominant_assignment(s).into_iter().enumerate() {
        sets[c].push(word);
    }
    sets
}

/// Share of the larger sign class among `values`, with its direction.
/// Zeros count as positive.
pub fn sidedness_of(values: impl IntoIterator<Item = f64>) -> (usize, usize, Option<f64>, Option<Direction>) {
    let (mut pos, mut neg) = (0usize, 0usize);
    for v in values {
        if v >= 0.0 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    let total = pos + neg;
    if total == 0 {
        return (0, 0, None, None);
    }
    let (larger, direction) = if pos >= neg {
        (pos, Direction::Positive)
    } else {
        (neg, Direction::Negative)
    };
    (pos, neg, Some(larger as f64 / total as f64), Some(direction))
}

/// One-sidedness ratio and majority direction of a component's dominant
/// words.
pub fn one_sidedness(s: ArrayView2<'_, f64>, component: usize) -> (Option<f64>, Option<Direction>) {
    let assignment = dominant_assignment(s);
    let column = s.column(component);
    let values = assignment
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c == component)
        .map(|(w, _)| column[w]);
    let (_, _, ratio, direction) = sidedness_of(values);
    (ratio, direction)
}

/// Flips every component whose dominant-word mean is negative, negating the
/// source column and the unmixing row. Flips accumulate in `sign_flips`, so
/// re-applying the operation is a no-op.
pub fn normalize_signs(model: &IcaModel) -> IcaModel {
    let mut out = model.clone();
    let c = model.n_components();
    let mut flips = model.sign_flips.clone().unwrap_or_else(|| vec![1; c]);
    for (component, words) in dominant_words(model.s.view()).iter().enumerate() {
        if words.is_empty() {
            continue;
        }
        let column = model.s.column(component);
        let mean = words.iter().map(|&w| column[w]).sum::<f64>() / words.len() as f64;
        if mean < 0.0 {
            out.s.column_mut(component).mapv_inplace(|v| -v);
            out.w.row_mut(component).mapv_inplace(|v| -v);
            flips[component] = -flips[component];
        }
    }
    out.sign_flips = Some(flips);
    out
}

/// The `k` words with the largest (positive) or smallest (negative) values of
/// a component. Ties keep vocabulary order; `k > V` truncates.
pub fn top_words(
    s: ArrayView2<'_, f64>,
    vocab: &Vocabulary,
    component: usize,
    direction: Direction,
    k: usize,
) -> Vec<ScoredWord> {
    let column = s.column(component);
    top_indices(column, direction, k)
        .into_iter()
        .map(|index| ScoredWord {
            index,
            token: vocab.token(index).to_string(),
            value: column[index],
        })
        .collect()
}

/// Word indices of [`top_words`] without the token lookup.
pub fn top_indices(column: ArrayView1<'_, f64>, direction: Direction, k: usize) -> Vec<usize> {
    let k = k.min(column.len());
    if k == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..column.len()).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        let by_value = match direction {
            Direction::Positive => column[*b].total_cmp(&column[*a]),
            Direction::Negative => column[*a].total_cmp(&column[*b]),
        };
        by_value.then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub component_id: usize,
    pub min: f64,
    pub max: f64,
    /// `bins + 1` equally spaced edges from `min` to `max`.
    pub edges: Vec<f64>,
    pub dominant: Vec<usize>,
    pub rest: Vec<usize>,
}

/// Equal-width histograms of a component's values over its dominant words
/// and over the rest of the vocabulary. A constant column lands in bin 0.
pub fn histogram_data(s: ArrayView2<'_, f64>, component: usize, bins: usize) -> Result<Histogram> {
    let assignment = dominant_assignment(s);
    histogram_with_assignment(s, &assignment, component, bins)
}

fn histogram_with_assignment(
    s: ArrayView2<'_, f64>,
    assignment: &[usize],
    component: usize,
    bins: usize,
) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    if component >= s.ncols() {
        return Err(Error::InvalidArgument(format!(
            "component {component} out of range (C = {})",
            s.ncols()
        )));
    }
    let column = s.column(component);
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut dominant = vec![0; bins];
    let mut rest = vec![0; bins];
    for (word, &v) in column.iter().enumerate() {
        let bin = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        if assignment[word] == component {
            dominant[bin] += 1;
        } else {
            rest[bin] += 1;
        }
    }
    let edges = (0..=bins).map(|i| min + width * i as f64).collect();
    Ok(Histogram {
        component_id: component,
        min,
        max,
        edges,
        dominant,
        rest,
    })
}

/// Profiles for all components, with `top_k` words per direction.
pub fn profiles(s: ArrayView2<'_, f64>, vocab: &Vocabulary, top_k: usize) -> Vec<ComponentProfile> {
    let sets = dominant_words(s);
    sets.into_iter()
        .enumerate()
        .map(|(component, words)| build_profile(s, vocab, component, words, top_k))
        .collect()
}

pub fn profile(s: ArrayView2<'_, f64>, vocab: &Vocabulary, component: usize, top_k: usize) -> ComponentProfile {
    let words = dominant_words(s).swap_remove(component);
    build_profile(s, vocab, component, words, top_k)
}

fn build_profile(
    s: ArrayView2<'_, f64>,
    vocab: &Vocabulary,
    component: usize,
    words: Vec<usize>,
    top_k: usize,
) -> ComponentProfile {
    let column = s.column(component);
    let (n_positive, n_negative, one_sidedness, dominant_direction) =
        sidedness_of(words.iter().map(|&w| column[w]));
    ComponentProfile {
        component_id: component,
        dominant_words: words,
        n_positive,
        n_negative,
        one_sidedness,
        dominant_direction,
        top_positive: top_words(s, vocab, component, Direction::Positive, top_k),
        top_negative: top_words(s, vocab, component, Direction::Negative, top_k),
    }
}

/// Output of the `analyze` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_words: usize,
    pub n_components: usize,
    pub sign_normalized: bool,
    pub components: Vec<ComponentProfile>,
    pub histograms: Vec<Histogram>,
}

pub fn analyze(model: &IcaModel, top_k: usize, bins: usize) -> Result<AnalysisReport> {
    let s = model.s.view();
    let assignment = dominant_assignment(s);
    let histograms = (0..s.ncols())
        .map(|c| histogram_with_assignment(s, &assignment, c, bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisReport {
        n_words: s.len_of(Axis(0)),
        n_components: s.ncols(),
        sign_normalized: model.is_sign_normalized(),
        components: profiles(s, &model.vocab, top_k),
        histograms,
    })
}
