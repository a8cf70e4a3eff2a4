//! Context-copying benchmark.
//!
//! A context is `n_sequences` random-token sequences concatenated without
//! separators. A sample appends the prefix of the `i`-th sequence (1-based)
//! to the context; the model should continue with the `suffix_len` tokens
//! that followed that prefix inside the context.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyEvalSpec {
    pub n_sequences: usize,
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub mean_seq_len: usize,
    /// Sequence lengths are uniform on `[mean - jitter, mean + jitter]`.
    pub jitter: usize,
    /// Number of independent contexts.
    pub n_samples: usize,
    /// Queried sequences are `stride, 2·stride, …` up to `n_sequences`.
    pub query_stride: usize,
    pub vocab_size: usize,
}

/// Resampling attempts per context before uniqueness is declared unsatisfiable.
pub const MAX_RESAMPLE_ROUNDS: usize = 1000;

impl CopyEvalSpec {
    /// 50 sequences of 16–20 tokens, 12-token prefixes, 6-token suffixes,
    /// 500 contexts, every fifth sequence queried, 32k vocabulary.
    pub fn paper() -> Self {
        Self {
            n_sequences: 50,
            prefix_len: 12,
            suffix_len: 6,
            mean_seq_len: 18,
            jitter: 2,
            n_samples: 500,
            query_stride: 5,
            vocab_size: 32_000,
        }
    }

    /// Same layout shrunk to a 256-token context and 512-token vocabulary.
    pub fn desk() -> Self {
        Self {
            n_sequences: 10,
            prefix_len: 6,
            suffix_len: 3,
            mean_seq_len: 10,
            jitter: 1,
            n_samples: 500,
            query_stride: 5,
            vocab_size: 512,
        }
    }

    pub fn query_indices(&self) -> Vec<usize> {
        (1..=self.n_sequences / self.query_stride.max(1))
            .map(|k| k * self.query_stride)
            .collect()
    }

    /// Longest possible model input for one sample.
    pub fn max_input_len(&self) -> usize {
        self.n_sequences * (self.mean_seq_len + self.jitter) + self.prefix_len
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_sequences == 0 || self.prefix_len == 0 || self.suffix_len == 0 {
            return fail("copy benchmark needs sequences, a prefix and a suffix".into());
        }
        if self.query_stride == 0 || self.query_stride > self.n_sequences {
            return fail(format!(
                "query_stride must lie in [1, {}], got {}",
                self.n_sequences, self.query_stride
            ));
        }
        if self.jitter > self.mean_seq_len {
            return fail("jitter exceeds the mean sequence length".into());
        }
        let shortest = self.mean_seq_len - self.jitter;
        if shortest < self.prefix_len.max(self.suffix_len) {
            return fail(format!(
                "sequences as short as {shortest} cannot hold a {}-token prefix and a {}-token suffix",
                self.prefix_len, self.suffix_len
            ));
        }
        if self.prefix_len + self.suffix_len > self.mean_seq_len + self.jitter {
            return fail("prefix and suffix exceed the longest sequence".into());
        }
        if self.vocab_size < 2 {
            return fail("vocabulary must hold at least 2 tokens".into());
        }
        Ok(())
    }

    /// Checks that every sample fits a model context of `ctx_len`, reserving
    /// room for the generated suffix.
    pub fn check_fits(&self, ctx_len: usize) -> Result<()> {
        let need = self.max_input_len() + self.suffix_len;
        if need > ctx_len {
            return Err(Error::Config(format!(
                "copy benchmark inputs need up to {need} positions, context is {ctx_len}"
            )));
        }
        Ok(())
    }
}

/// One benchmark input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyEvalSample {
    /// Concatenated sequences followed by the queried prefix.
    pub tokens: Vec<u32>,
    /// 1-based index of the queried sequence.
    pub query_index: usize,
    pub gold_suffix: Vec<u32>,
    /// Start offset of each sequence in `tokens`, plus the offset where the
    /// appended prefix begins.
    pub boundaries: Vec<usize>,
}

impl CopyEvalSample {
    /// Re-derives the gold continuation from `tokens` and `boundaries`.
    pub fn extract_gold(&self, prefix_len: usize, suffix_len: usize) -> Option<Vec<u32>> {
        let start = *self.boundaries.get(self.query_index - 1)?;
        let from = start + prefix_len;
        self.tokens.get(from..from + suffix_len).map(<[u32]>::to_vec)
    }
}

/// Draws the sequences of one context with pairwise-distinct prefixes and
/// pairwise-distinct suffixes, resampling colliding sequences.
fn draw_context(spec: &CopyEvalSpec, rng: &mut Rng) -> Result<Vec<Vec<u32>>> {
    let lo = spec.mean_seq_len - spec.jitter;
    let hi = spec.mean_seq_len + spec.jitter;
    let fresh = |rng: &mut Rng| -> Vec<u32> {
        let len = rng.range_inclusive(lo, hi);
        (0..len).map(|_| rng.below(spec.vocab_size) as u32).collect()
    };
    let mut seqs: Vec<Vec<u32>> = (0..spec.n_sequences).map(|_| fresh(rng)).collect();
    for _ in 0..MAX_RESAMPLE_ROUNDS {
        let mut prefixes = HashSet::new();
        let mut suffixes = HashSet::new();
        let mut clash = Vec::new();
        for (k, s) in seqs.iter().enumerate() {
            let p = &s[..spec.prefix_len];
            let q = &s[s.len() - spec.suffix_len..];
            if !prefixes.insert(p.to_vec()) | !suffixes.insert(q.to_vec()) {
                clash.push(k);
            }
        }
        if clash.is_empty() {
            return Ok(seqs);
        }
        for k in clash {
            seqs[k] = fresh(rng);
        }
    }
    Err(Error::Generation(format!(
        "no context with unique {}-token prefixes and {}-token suffixes after {} rounds; vocabulary {} is too small",
        spec.prefix_len, spec.suffix_len, MAX_RESAMPLE_ROUNDS, spec.vocab_size
    )))
}

/// Builds `n_samples` contexts and one sample per (context, query index),
/// grouped by context in query order.
pub fn gen_copy_eval(spec: &CopyEvalSpec, rng: &mut Rng) -> Result<Vec<CopyEvalSample>> {
    spec.validate()?;
    let queries = spec.query_indices();
    let mut out = Vec::with_capacity(spec.n_samples * queries.len());
    for _ in 0..spec.n_samples {
        let seqs = draw_context(spec, rng)?;
        let mut context = Vec::new();
        let mut boundaries = Vec::with_capacity(seqs.len() + 1);
        for s in &seqs {
            boundaries.push(context.len());
            context.extend_from_slice(s);
        }
        boundaries.push(context.len());
        for &i in &queries {
            let mut tokens = context.clone();
            tokens.extend_from_slice(&seqs[i - 1][..spec.prefix_len]);
            let from = boundaries[i - 1] + spec.prefix_len;
            let gold_suffix = tokens[from..from + spec.suffix_len].to_vec();
            out.push(CopyEvalSample {
                tokens,
                query_index: i,
                gold_suffix,
                boundaries: boundaries.clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, samples: &[CopyEvalSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CopyEvalSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
