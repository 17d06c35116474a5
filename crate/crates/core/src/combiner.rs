//! Ranking words by the product of selected component values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastica::IcaModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationQuery {
    pub component_ids: Vec<usize>,
    pub top_n: usize,
    /// Clamp negative component values to zero before multiplying.
    #[serde(default)]
    pub clamp_negative: bool,
}

impl CombinationQuery {
    pub fn new(component_ids: Vec<usize>, top_n: usize) -> Self {
        CombinationQuery {
            component_ids,
            top_n,
            clamp_negative: false,
        }
    }

    pub fn clamp_negative(mut self, clamp: bool) -> Self {
        self.clamp_negative = clamp;
        self
    }

    fn validate(&self, n_components: usize) -> Result<()> {
        if self.component_ids.is_empty() {
            return Err(Error::InvalidArgument("combination needs at least one component".into()));
        }
        if self.top_n == 0 {
            return Err(Error::InvalidArgument("top_n must be at least 1".into()));
        }
        for (i, &c) in self.component_ids.iter().enumerate() {
            if c >= n_components {
                return Err(Error::InvalidArgument(format!(
                    "component {c} out of range (model has {n_components})"
                )));
            }
            if self.component_ids[..i].contains(&c) {
                return Err(Error::InvalidArgument(format!("component {c} listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedWord {
    pub index: usize,
    pub token: String,
    pub score: f64,
}

/// Top `q.top_n` words by the product of the selected components, highest
/// first, ties by vocabulary index. Requires a sign-normalized model.
pub fn combine_query(model: &IcaModel, q: &CombinationQuery) -> Result<Vec<CombinedWord>> {
    if !model.is_sign_normalized() {
        return Err(Error::NotSignNormalized);
    }
    q.validate(model.n_components())?;

    // Multiply in ascending component order so any permutation of the ids
    // yields bit-identical scores.
    let mut ids = q.component_ids.clone();
    ids.sort_unstable();
    let scores: Vec<f64> = model
        .s
        .rows()
        .into_iter()
        .map(|row| {
            ids.iter()
                .map(|&c| if q.clamp_negative { row[c].max(0.0) } else { row[c] })
                .product()
        })
        .collect();

    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = q.top_n.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    Ok(order
        .into_iter()
        .map(|index| CombinedWord {
            index,
            token: model.vocab.token(index).to_string(),
            score: scores[index],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row_component: usize,
    pub col_component: usize,
    pub words: Vec<CombinedWord>,
}

/// Every pairing of a row component with a column component, in row-major
/// order.
pub fn combine_grid(
    model: &IcaModel,
    rows: &[usize],
    cols: &[usize],
    top_n: usize,
    clamp_negative: bool,
) -> Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        for &c in cols {
            let q = CombinationQuery::new(vec![r, c], top_n).clamp_negative(clamp_negative);
            cells.push(GridCell {
                row_component: r,
                col_component: c,
                words: combine_query(model, &q)?,
            });
        }
    }
    Ok(cells)
}
