use std::collections::BTreeMap;

use crate::data::CopyEvalSample;
use crate::error::{Error, Result};
use crate::model::{argmax, next_token_logits, ModelWeights};
use crate::numeric::Real;
use crate::train::QueryAccuracy;

/// Exact-match copy accuracy per queried sequence and averaged over them.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyAccuracy {
    pub overall: f64,
    pub by_query: Vec<QueryAccuracy>,
    pub n_samples: usize,
}

/// Greedy continuation stopped at the first token that disagrees with
/// `gold`. Returns whether all of `gold` was reproduced.
pub fn copies_gold<T: Real>(w: &ModelWeights<T>, prompt: &[u32], gold: &[u32]) -> Result<bool> {
    if prompt.len() + gold.len() > w.config.ctx_len {
        return Err(Error::Input(format!(
            "prompt of {} plus a {}-token completion exceeds the context length {}",
            prompt.len(),
            gold.len(),
            w.config.ctx_len
        )));
    }
    let mut seq = prompt.to_vec();
    for &want in gold {
        let next = argmax(&next_token_logits(w, &seq)?);
        if next != want {
            return Ok(false);
        }
        seq.push(next);
    }
    Ok(true)
}

/// A sample is correct iff greedy decoding reproduces its gold suffix
/// exactly. Stopping at the first wrong token gives the same verdict as
/// generating the whole suffix.
pub fn eval_copy_accuracy<T: Real>(
    w: &ModelWeights<T>,
    samples: &[CopyEvalSample],
) -> Result<CopyAccuracy> {
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in samples {
        let ok = copies_gold(w, &s.tokens, &s.gold_suffix)?;
        let e = tally.entry(s.query_index).or_default();
        e.0 += ok as usize;
        e.1 += 1;
    }
    let by_query: Vec<QueryAccuracy> = tally
        .iter()
        .map(|(&q, &(hit, n))| QueryAccuracy {
            query_index: q,
            accuracy: hit as f64 / n as f64,
        })
        .collect();
    let overall = if by_query.is_empty() {
        0.0
    } else {
        by_query.iter().map(|q| q.accuracy).sum::<f64>() / by_query.len() as f64
    };
    Ok(CopyAccuracy {
        overall,
        by_query,
        n_samples: samples.len(),
    })
}
