//! Per-head induction scores: `I = Ā · EP`.
//!
//! `Ā` is the mean attention a head pays, on sequences whose second half
//! repeats the first, from 1-based position `s+i-1` to position `i` for
//! `i ∈ [1, s-1]`. `EP = Σλ / Σ|λ|` over the eigenvalues of the OV circuit
//! `W_U · W_O · W_V · W_E`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ProbeSequence;
use crate::error::{Error, Result};
use crate::model::{forward, ModelWeights, Mode};
use crate::numeric::{eig_unsymmetric, matmul, Real, Rng, Tensor};

/// `Ā` for one `2s × 2s` attention pattern.
pub fn a_bar_from_attention<T: Real>(att: &Tensor<T>, half: usize) -> f64 {
    let mut sum = 0.0;
    for i in 1..half {
        // 1-based query s+i-1 → 0-based s+i-2; 1-based key i → i-1.
        sum += att.at(half + i - 2, i - 1).as_f64();
    }
    sum / (half - 1) as f64
}

/// Mean attention from each position to its predecessor.
pub fn prev_token_from_attention<T: Real>(att: &Tensor<T>) -> f64 {
    let n = att.shape()[0];
    let sum: f64 = (1..n).map(|j| att.at(j, j - 1).as_f64()).sum();
    sum / (n - 1) as f64
}

fn mean_over_probes<T: Real>(
    w: &ModelWeights<T>,
    seqs: &[&[u32]],
    score: impl Fn(&Tensor<T>) -> f64,
) -> Result<Vec<Vec<f64>>> {
    let cfg = &w.config;
    let mut acc = vec![vec![0.0; cfg.n_heads]; cfg.n_layers];
    let mut rng = Rng::new(0);
    for tokens in seqs {
        let trace = forward(w, tokens, Mode::Eval, &mut rng, true)?;
        for (l, layer) in trace.attention.iter().enumerate() {
            for (h, att) in layer.iter().enumerate() {
                acc[l][h] += score(att);
            }
        }
    }
    for row in &mut acc {
        for v in row.iter_mut() {
            *v /= seqs.len() as f64;
        }
    }
    Ok(acc)
}

/// `Ā[layer][head]`, averaged over `probes`.
pub fn attention_induction_score<T: Real>(
    w: &ModelWeights<T>,
    probes: &[ProbeSequence],
) -> Result<Vec<Vec<f64>>> {
    let half = probes
        .first()
        .ok_or_else(|| Error::Input("no probe sequences".into()))?
        .half;
    if half < 2 || probes.iter().any(|p| p.half != half) {
        return Err(Error::Input("probes must share a half length of at least 2".into()));
    }
    let seqs: Vec<&[u32]> = probes.iter().map(|p| p.tokens.as_slice()).collect();
    mean_over_probes(w, &seqs, |att| a_bar_from_attention(att, half))
}

/// Previous-token score per head on the given (non-repeating) sequences.
pub fn prev_token_score<T: Real>(w: &ModelWeights<T>, seqs: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
    if seqs.is_empty() || seqs.iter().any(|s| s.len() < 2) {
        return Err(Error::Input("previous-token scoring needs sequences of 2+ tokens".into()));
    }
    mean_over_probes(w, seqs, prev_token_from_attention)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpOptions {
    /// Scale `W_V` by the layer's attention-norm gains and `W_U` by the
    /// final-norm gains before forming the circuit.
    pub fold_norms: bool,
}

fn ov_factors<T: Real>(
    w: &ModelWeights<T>,
    layer: usize,
    head: usize,
    opts: EpOptions,
) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    let mut wv = w.w_v(layer, head)?.cast::<f64>();
    let wo = w.w_o(layer, head)?.cast::<f64>();
    let we = w.embed.cast::<f64>();
    let mut wu = w.unembed.cast::<f64>();
    if opts.fold_norms {
        let g = w.layers[layer].attn_norm.cast::<f64>();
        let d = g.len();
        for r in 0..wv.shape()[0] {
            for c in 0..d {
                let v = wv.at(r, c) * g.data()[c];
                wv.set(r, c, v);
            }
        }
        let gf = w.final_norm.cast::<f64>();
        for r in 0..wu.shape()[0] {
            for c in 0..d {
                let v = wu.at(r, c) * gf.data()[c];
                wu.set(r, c, v);
            }
        }
    }
    Ok((wu, wo, wv, we))
}

/// `(W_V·W_E)·(W_U·W_O)`, `d_head × d_head`. Its nonzero spectrum equals
/// that of the `vocab × vocab` circuit `W_U·W_O·W_V·W_E`.
pub fn reduced_ov_circuit<T: Real>(
    w: &ModelWeights<T>,
    layer: usize,
    head: usize,
    opts: EpOptions,
) -> Result<Tensor<f64>> {
    let (wu, wo, wv, we) = ov_factors(w, layer, head, opts)?;
    matmul(&matmul(&wv, &we)?, &matmul(&wu, &wo)?)
}

/// The full `vocab × vocab` circuit `W_U·W_O·W_V·W_E`.
pub fn full_ov_circuit<T: Real>(
    w: &ModelWeights<T>,
    layer: usize,
    head: usize,
    opts: EpOptions,
) -> Result<Tensor<f64>> {
    let (wu, wo, wv, we) = ov_factors(w, layer, head, opts)?;
    matmul(&matmul(&wu, &wo)?, &matmul(&wv, &we)?)
}

/// Eigenvalue positivity of one head's OV circuit, via the reduced matrix.
pub fn ov_eigenvalue_positivity<T: Real>(
    w: &ModelWeights<T>,
    layer: usize,
    head: usize,
    opts: EpOptions,
) -> Result<f64> {
    let c = reduced_ov_circuit(w, layer, head, opts)?;
    Ok(eig_unsymmetric(&c)?.positivity())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    pub a_bar: f64,
    pub ep: f64,
    /// `a_bar · ep`.
    pub induction: f64,
    pub prev_token: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadScoreTable {
    pub step: u64,
    pub heads: Vec<HeadScore>,
}

impl HeadScoreTable {
    pub fn get(&self, layer: usize, head: usize) -> Option<&HeadScore> {
        self.heads.iter().find(|h| h.layer == layer && h.head == head)
    }

    /// Largest induction score among heads of `layer`.
    pub fn max_induction(&self, layer: usize) -> f64 {
        self.heads
            .iter()
            .filter(|h| h.layer == layer)
            .map(|h| h.induction)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_prev_token(&self, layer: usize) -> f64 {
        self.heads
            .iter()
            .filter(|h| h.layer == layer)
            .map(|h| h.prev_token)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Ā, EP, I and the previous-token score for every head. Previous-token
/// scores use the first (non-repeating) half of each probe.
pub fn induction_score_table<T: Real>(
    w: &ModelWeights<T>,
    probes: &[ProbeSequence],
    step: u64,
    opts: EpOptions,
) -> Result<HeadScoreTable> {
    let a_bar = attention_induction_score(w, probes)?;
    let halves: Vec<&[u32]> = probes.iter().map(|p| &p.tokens[..p.half]).collect();
    let prev = prev_token_score(w, &halves)?;
    let mut heads = Vec::new();
    for layer in 0..w.config.n_layers {
        for head in 0..w.config.n_heads {
            let ep = ov_eigenvalue_positivity(w, layer, head, opts)?;
            let a = a_bar[layer][head];
            heads.push(HeadScore {
                layer,
                head,
                a_bar: a,
                ep,
                induction: a * ep,
                prev_token: prev[layer][head],
            });
        }
    }
    Ok(HeadScoreTable { step, heads })
}

pub const HEAD_CSV_HEADER: &str = "step,layer,head,a_bar,ep,i,prev_token_score";

/// Writes tables as CSV rows (0-based layer and head indices).
pub fn write_head_csv(path: &Path, tables: &[HeadScoreTable]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from(HEAD_CSV_HEADER);
    out.push('\n');
    for t in tables {
        for h in &t.heads {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.step, h.layer, h.head, h.a_bar, h.ep, h.induction, h.prev_token
            ));
        }
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
