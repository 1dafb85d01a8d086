//! Greedy decoding and mean-reward evaluation.

use crate::models::ParamTable;
use crate::reward::payoff;
use crate::seq::{Prefix, SeqError, SeqSpace};

use super::Dataset;

/// Repeatedly takes the argmax token among allowed tokens until
/// termination; ties break toward the lowest token id. Works for both
/// policy-logit and q-value tables since the argmax of a softmax is the
/// argmax of its inputs. The enforcement rule guarantees termination
/// within the horizon.
pub fn greedy_decode(
    table: &ParamTable,
    space: &SeqSpace,
    example: u64,
) -> Result<Prefix, SeqError> {
    let mut prefix = Prefix::empty();
    loop {
        let allowed = space.allowed_tokens(&prefix)?;
        let row = table.row(space, example, &prefix)?;
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        prefix = space.transition(&prefix, allowed[best])?;
        if prefix.is_terminated() {
            return Ok(prefix);
        }
    }
}

/// Mean pay-off of greedy decodes over a dataset.
pub fn corpus_eval(table: &ParamTable, dataset: &Dataset) -> Result<f64, SeqError> {
    debug_assert!(!dataset.pairs.is_empty());
    let space = dataset.space();
    let mut total = 0.0;
    for pair in &dataset.pairs {
        let decoded = greedy_decode(table, &space, pair.example_id)?;
        total += payoff(&dataset.reward, &decoded, &pair.reference);
    }
    Ok(total / dataset.pairs.len() as f64)
}
