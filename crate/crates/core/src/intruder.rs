//! Word intruder test: item generation and response scoring.
//!
//! Each item shows the top four words of one component direction plus one
//! intruder drawn from the top fraction of a different, randomly chosen
//! component.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{top_indices, Direction};
use crate::embedding_io::Vocabulary;
use crate::error::{Error, Result};

pub const WORDS_PER_ITEM: usize = 5;
pub const TOP_WORDS_PER_ITEM: usize = WORDS_PER_ITEM - 1;
pub const DEFAULT_TOP_FRACTION: f64 = 0.1;
pub const MIN_VOCABULARY: usize = 50;
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Independent components of a fitted model.
    Ica,
    /// Raw embedding dimensions.
    Raw,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Ica => "ica",
            SourceKind::Raw => "raw",
        })
    }
}

/// Which direction of the other component the intruder pool is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolDirection {
    /// Same direction as the item (raw dimensions, unnormalized models).
    MatchItem,
    /// Always the positive end (sign-normalized models).
    Positive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntruderItem {
    pub item_id: String,
    pub source_kind: SourceKind,
    pub component_id: usize,
    pub direction: Direction,
    pub top_words: Vec<String>,
    pub intruder: String,
    pub intruder_component: usize,
    /// Permutation of `0..5` indexing into `top_words ++ [intruder]`;
    /// position `i` of the display shows candidate `presentation_order[i]`.
    pub presentation_order: Vec<usize>,
}

impl IntruderItem {
    fn candidate(&self, i: usize) -> &str {
        if i < self.top_words.len() {
            &self.top_words[i]
        } else {
            &self.intruder
        }
    }

    /// The five words in display order.
    pub fn presented_words(&self) -> Vec<String> {
        self.presentation_order
            .iter()
            .map(|&i| self.candidate(i).to_string())
            .collect()
    }

    /// Display position of the intruder.
    pub fn intruder_position(&self) -> usize {
        self.presentation_order
            .iter()
            .position(|&i| i == TOP_WORDS_PER_ITEM)
            .expect("valid presentation order")
    }

    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Intruder(format!("item {}: {m}", self.item_id)));
        if self.top_words.len() != TOP_WORDS_PER_ITEM {
            return fail(format!("has {} top words", self.top_words.len()));
        }
        if self.top_words.contains(&self.intruder) {
            return fail("intruder is one of the top words".into());
        }
        if self.intruder_component == self.component_id {
            return fail("intruder drawn from the item's own component".into());
        }
        let mut order = self.presentation_order.clone();
        order.sort_unstable();
        if order != (0..WORDS_PER_ITEM).collect::<Vec<_>>() {
            return fail(format!("presentation order {:?} is not a permutation", self.presentation_order));
        }
        Ok(())
    }
}

/// Generated items together with the parameters that reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSet {
    pub seed: u64,
    pub top_fraction: f64,
    pub source_kind: SourceKind,
    pub pool_direction: PoolDirection,
    pub items: Vec<IntruderItem>,
}

impl ItemSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: ItemSet = serde_json::from_str(&raw)?;
        let mut ids = BTreeSet::new();
        for item in &set.items {
            item.check_invariants()?;
            if !ids.insert(item.item_id.as_str()) {
                return Err(Error::Intruder(format!("duplicate item id {}", item.item_id)));
            }
        }
        Ok(set)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub source_kind: SourceKind,
    pub pool_direction: PoolDirection,
    pub top_fraction: f64,
    pub seed: u64,
}

impl GenerateOptions {
    pub fn new(source_kind: SourceKind, seed: u64) -> Self {
        GenerateOptions {
            source_kind,
            pool_direction: PoolDirection::MatchItem,
            top_fraction: DEFAULT_TOP_FRACTION,
            seed,
        }
    }

    pub fn pool_direction(mut self, pool: PoolDirection) -> Self {
        self.pool_direction = pool;
        self
    }

    pub fn top_fraction(mut self, fraction: f64) -> Self {
        self.top_fraction = fraction;
        self
    }
}

/// One item per (component, direction), components in index order with the
/// positive direction first. `values` is V×C: source values of a model or
/// raw embedding columns.
pub fn generate_items(values: ArrayView2<'_, f64>, vocab: &Vocabulary, opts: &GenerateOptions) -> Result<ItemSet> {
    let (v, c) = values.dim();
    if v != vocab.len() {
        return Err(Error::Shape(format!("{} rows but {} tokens", v, vocab.len())));
    }
    if v < MIN_VOCABULARY {
        return Err(Error::InvalidArgument(format!(
            "intruder items need at least {MIN_VOCABULARY} words, got {v}"
        )));
    }
    if c < 2 {
        return Err(Error::InvalidArgument(format!("intruder items need at least 2 components, got {c}")));
    }
    if !(opts.top_fraction > 0.0 && opts.top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_fraction must lie in (0, 1], got {}",
            opts.top_fraction
        )));
    }
    let pool_size = ((opts.top_fraction * v as f64).ceil() as usize).clamp(1, v);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pools: HashMap<(usize, Direction), Vec<usize>> = HashMap::new();
    let mut items = Vec::with_capacity(2 * c);

    for component in 0..c {
        for direction in Direction::BOTH {
            let top = top_indices(values.column(component), direction, TOP_WORDS_PER_ITEM);
            let pool_dir = match opts.pool_direction {
                PoolDirection::MatchItem => direction,
                PoolDirection::Positive => Direction::Positive,
            };

            let mut chosen = None;
            for _ in 0..MAX_RESAMPLES {
                let mut other = rng.random_range(0..c - 1);
                if other >= component {
                    other += 1;
                }
                let pool = pools
                    .entry((other, pool_dir))
                    .or_insert_with(|| top_indices(values.column(other), pool_dir, pool_size));
                let word = pool[rng.random_range(0..pool.len())];
                if !top.contains(&word) {
                    chosen = Some((other, word));
                    break;
                }
            }
            let (intruder_component, intruder) = chosen.ok_or_else(|| {
                Error::Intruder(format!(
                    "component {component} ({direction}): no intruder outside its top words after {MAX_RESAMPLES} draws"
                ))
            })?;

            let mut presentation_order: Vec<usize> = (0..WORDS_PER_ITEM).collect();
            presentation_order.shuffle(&mut rng);

            items.push(IntruderItem {
                item_id: format!("{}-c{component:04}-{}", opts.source_kind, direction.short()),
                source_kind: opts.source_kind,
                component_id: component,
                direction,
                top_words: top.iter().map(|&i| vocab.token(i).to_string()).collect(),
                intruder: vocab.token(intruder).to_string(),
                intruder_component,
                presentation_order,
            });
        }
    }

    Ok(ItemSet {
        seed: opts.seed,
        top_fraction: opts.top_fraction,
        source_kind: opts.source_kind,
        pool_direction: opts.pool_direction,
        items,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub annotator: String,
    /// Display position (0..5) the annotator picked.
    pub choice_index: usize,
    pub chosen_word: String,
    pub timestamp: String,
}

impl AnnotationRecord {
    /// Checks the record against its item: the chosen word must be the one
    /// shown at `choice_index`.
    pub fn check_against(&self, item: &IntruderItem) -> Result<()> {
        if self.annotator.trim().is_empty() {
            return Err(Error::Record("annotator id is empty".into()));
        }
        if self.choice_index >= WORDS_PER_ITEM {
            return Err(Error::Record(format!(
                "choice_index {} out of range for item {}",
                self.choice_index, self.item_id
            )));
        }
        let shown = item.candidate(item.presentation_order[self.choice_index]);
        if shown != self.chosen_word {
            return Err(Error::Record(format!(
                "item {}: position {} shows {shown:?}, record says {:?}",
                self.item_id, self.choice_index, self.chosen_word
            )));
        }
        Ok(())
    }

    pub fn is_correct(&self, item: &IntruderItem) -> bool {
        self.chosen_word == item.intruder
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorScore {
    pub answered: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntruderStats {
    pub n_items: usize,
    pub n_responses: usize,
    pub n_annotators: usize,
    pub per_annotator: BTreeMap<String, AnnotatorScore>,
    pub overall_correct: usize,
    pub overall_fraction: f64,
    /// Items answered by at least two annotators.
    pub items_with_multiple_annotators: usize,
    /// Items answered by at least two annotators, all of whom found the
    /// intruder.
    pub full_agreement_correct: usize,
    /// Expected full-agreement count for annotators guessing uniformly.
    pub baseline_expected_agreement: f64,
}

/// `n_items · (1/5)^n_annotators`, evaluated as `n_items / 5^n` so that
/// exact decimal results such as 1024/125 come out exactly.
pub fn baseline_expected_agreement(n_items: usize, n_annotators: usize) -> f64 {
    if n_annotators == 0 {
        return 0.0;
    }
    let denominator = (WORDS_PER_ITEM as f64).powi(n_annotators as i32);
    n_items as f64 / denominator
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Aggregates responses. Fails on unknown items, records inconsistent with
/// their item, and repeated (item, annotator) pairs.
pub fn score_responses(items: &[IntruderItem], records: &[AnnotationRecord]) -> Result<IntruderStats> {
    let by_id: HashMap<&str, &IntruderItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut per_annotator: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut per_item: HashMap<&str, (usize, bool)> = HashMap::new();
    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();

    for record in records {
        let item = by_id
            .get(record.item_id.as_str())
            .ok_or_else(|| Error::Record(format!("unknown item {}", record.item_id)))?;
        record.check_against(item)?;
        if !seen.insert((record.item_id.as_str(), record.annotator.as_str())) {
            return Err(Error::Record(format!(
                "annotator {} answered item {} more than once",
                record.annotator, record.item_id
            )));
        }
        let correct = record.is_correct(item);
        let entry = per_annotator.entry(record.annotator.clone()).or_default();
        entry.0 += 1;
        entry.1 += usize::from(correct);
        let item_entry = per_item.entry(item.item_id.as_str()).or_insert((0, true));
        item_entry.0 += 1;
        item_entry.1 &= correct;
    }

    let overall_correct = per_annotator.values().map(|&(_, c)| c).sum();
    let items_with_multiple_annotators = per_item.values().filter(|(n, _)| *n >= 2).count();
    let full_agreement_correct = per_item.values().filter(|(n, all)| *n >= 2 && *all).count();
    let n_annotators = per_annotator.len();

    Ok(IntruderStats {
        n_items: items.len(),
        n_responses: records.len(),
        n_annotators,
        per_annotator: per_annotator
            .into_iter()
            .map(|(name, (answered, correct))| {
                (
                    name,
                    AnnotatorScore {
                        answered,
                        correct,
                        accuracy: fraction(correct, answered),
                    },
                )
            })
            .collect(),
        overall_correct,
        overall_fraction: fraction(overall_correct, records.len()),
        items_with_multiple_annotators,
        full_agreement_correct,
        baseline_expected_agreement: baseline_expected_agreement(items.len(), n_annotators),
    })
}

/// Reads JSON Lines of [`AnnotationRecord`]; blank lines are skipped and
/// malformed lines are reported with their line number.
pub fn read_records_jsonl(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    read_jsonl(path)
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}
