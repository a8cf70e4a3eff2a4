//! Forward and hand-written backward passes.
//!
//! Activations are kept as row-major `[rows, features]` buffers where a row is
//! one position of one sequence. Per-head attention blocks are gathered into
//! contiguous `[seq, d_head]` scratch buffers; only the causal (lower) triangle
//! of each score block is ever computed.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::numeric::ops::{causal_softmax_inplace, gemm_nn, gemm_nt, gemm_tn, transpose_into};
use crate::numeric::{Real, Rng, Tensor};

/// `Train` enables attention dropout; `Eval` is fully deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Output of [`forward`] on a single sequence.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `seq × vocab`.
    pub logits: Tensor<T>,
    /// `attention[layer][head]` is the `seq × seq` post-softmax pattern
    /// (before dropout). Empty unless capture was requested.
    pub attention: Vec<Vec<Tensor<T>>>,
    /// Residual stream after the embedding and after each layer.
    pub hidden: Vec<Tensor<T>>,
    /// Attention entries zeroed by dropout and the number considered.
    pub dropout_counts: (u64, u64),
}

/// Equal-length token rows. Each row of length `seq_len` yields
/// `seq_len - 1` next-token prediction pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub rows: usize,
    pub seq_len: usize,
    pub tokens: Vec<u32>,
}

impl TokenBatch {
    pub fn new(rows: usize, seq_len: usize, tokens: Vec<u32>) -> Result<Self> {
        if tokens.len() != rows * seq_len {
            return Err(Error::Shape(format!(
                "{rows} rows of {seq_len} tokens need {} ids, got {}",
                rows * seq_len,
                tokens.len()
            )));
        }
        Ok(Self {
            rows,
            seq_len,
            tokens,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let seq_len = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != seq_len) {
            return Err(Error::Shape("batch rows differ in length".into()));
        }
        Self::new(rows.len(), seq_len, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.seq_len..(i + 1) * self.seq_len]
    }
}

pub(crate) fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.len() > cfg.ctx_len {
        return Err(Error::Input(format!(
            "sequence of {} tokens exceeds the context length {}",
            tokens.len(),
            cfg.ctx_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} is outside the vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

struct Rope<T> {
    cos: Vec<T>,
    sin: Vec<T>,
    half: usize,
}

impl<T: Real> Rope<T> {
    /// Rotation angles `pos · θ^(-2p/d_head)` for adjacent dimension pairs
    /// `(2p, 2p+1)`.
    fn new(seq: usize, d_head: usize, theta: f64) -> Self {
        let half = d_head / 2;
        let mut cos = Vec::with_capacity(seq * half);
        let mut sin = Vec::with_capacity(seq * half);
        for pos in 0..seq {
            for p in 0..half {
                let freq = theta.powf(-2.0 * p as f64 / d_head as f64);
                let angle = pos as f64 * freq;
                cos.push(T::lit(angle.cos()));
                sin.push(T::lit(angle.sin()));
            }
        }
        Self { cos, sin, half }
    }

    fn rotate(&self, x: &mut [T], pos: usize) {
        let (c, s) = self.tables(pos);
        for p in 0..self.half {
            let (a, b) = (x[2 * p], x[2 * p + 1]);
            x[2 * p] = a * c[p] - b * s[p];
            x[2 * p + 1] = a * s[p] + b * c[p];
        }
    }

    fn unrotate(&self, x: &mut [T], pos: usize) {
        let (c, s) = self.tables(pos);
        for p in 0..self.half {
            let (a, b) = (x[2 * p], x[2 * p + 1]);
            x[2 * p] = a * c[p] + b * s[p];
            x[2 * p + 1] = b * c[p] - a * s[p];
        }
    }

    fn tables(&self, pos: usize) -> (&[T], &[T]) {
        let r = pos * self.half..(pos + 1) * self.half;
        (&self.cos[r.clone()], &self.sin[r])
    }
}

/// `y[n×out] = x[n×in] · wᵀ` for `w` stored `out × in`.
fn linear<T: Real>(x: &[T], w: &Tensor<T>, n: usize, scratch: &mut Vec<T>) -> Vec<T> {
    let (dout, din) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![T::zero(); n * dout];
    gemm_nt(x, w.data(), &mut y, n, din, dout, scratch);
    y
}

/// Returns normalized rows and the per-row inverse RMS.
fn rms_norm<T: Real>(x: &[T], gain: &[T], d: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(n);
    let dn = T::lit(d as f64);
    let eps = T::lit(eps);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / dn;
        let ir = T::one() / (ms + eps).sqrt();
        inv.push(ir);
        for ((o, &v), &g) in y[r * d..(r + 1) * d].iter_mut().zip(row).zip(gain) {
            *o = v * ir * g;
        }
    }
    (y, inv)
}

/// Accumulates the gain gradient into `dgain` and returns `dx`.
fn rms_norm_backward<T: Real>(
    dy: &[T],
    x: &[T],
    inv: &[T],
    gain: &[T],
    d: usize,
    dgain: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    let dn = T::lit(d as f64);
    for (r, &ir) in inv.iter().enumerate() {
        let xs = &x[r * d..(r + 1) * d];
        let dys = &dy[r * d..(r + 1) * d];
        let mut dot = T::zero();
        for c in 0..d {
            let xhat = xs[c] * ir;
            dgain[c] += dys[c] * xhat;
            dot += dys[c] * gain[c] * xhat;
        }
        let mean = dot / dn;
        for c in 0..d {
            let xhat = xs[c] * ir;
            dx[r * d + c] = ir * (dys[c] * gain[c] - xhat * mean);
        }
    }
    dx
}

#[inline]
fn sigmoid<T: Real>(a: T) -> T {
    T::one() / (T::one() + (-a).exp())
}

struct LayerCache<T> {
    x_in: Vec<T>,
    inv1: Vec<T>,
    r1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[rows, heads, seq, seq]`, before dropout.
    probs: Vec<T>,
    /// Probabilities after dropout and rescaling, when dropout ran.
    dropped: Option<Vec<T>>,
    att: Vec<T>,
    x_mid: Vec<T>,
    inv2: Vec<T>,
    r2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    hmid: Vec<T>,
}

struct Pass<T> {
    rows: usize,
    seq: usize,
    tokens: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    inv_f: Vec<T>,
    rf: Vec<T>,
    dropout_counts: (u64, u64),
}

fn run_forward<T: Real>(
    w: &ModelWeights<T>,
    tokens: &[u32],
    rows: usize,
    seq: usize,
    mut dropout: Option<&mut Rng>,
) -> Pass<T> {
    let cfg = &w.config;
    let (d, nh, dh, vocab) = (cfg.d_model, cfg.n_heads, cfg.d_head(), cfg.vocab_size);
    let n = rows * seq;
    let rope = Rope::<T>::new(seq, dh, cfg.rope_theta);
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let p_drop = cfg.attn_dropout;
    let keep_scale = T::lit(1.0 / (1.0 - p_drop));
    let mut scratch = Vec::new();
    let mut counts = (0u64, 0u64);

    let mut x = vec![T::zero(); n * d];
    let emb = w.embed.data();
    for (r, &tok) in tokens.iter().enumerate() {
        for c in 0..d {
            x[r * d + c] = emb[c * vocab + tok as usize];
        }
    }

    let mut caches = Vec::with_capacity(cfg.n_layers);
    let mut qh = vec![T::zero(); seq * dh];
    let mut kt = vec![T::zero(); dh * seq];
    let mut vh = vec![T::zero(); seq * dh];
    let mut oh = vec![T::zero(); seq * dh];
    for lw in &w.layers {
        let (r1, inv1) = rms_norm(&x, lw.attn_norm.data(), d, cfg.norm_eps);
        let mut q = linear(&r1, &lw.wq, n, &mut scratch);
        let mut k = linear(&r1, &lw.wk, n, &mut scratch);
        let v = linear(&r1, &lw.wv, n, &mut scratch);
        for r in 0..n {
            let pos = r % seq;
            for h in 0..nh {
                let off = r * d + h * dh;
                rope.rotate(&mut q[off..off + dh], pos);
                rope.rotate(&mut k[off..off + dh], pos);
            }
        }

        let mut probs = vec![T::zero(); rows * nh * seq * seq];
        let mut dropped = dropout
            .as_ref()
            .filter(|_| p_drop > 0.0)
            .map(|_| vec![T::zero(); probs.len()]);
        let mut att = vec![T::zero(); n * d];
        for b in 0..rows {
            for h in 0..nh {
                for i in 0..seq {
                    let src = (b * seq + i) * d + h * dh;
                    qh[i * dh..(i + 1) * dh].copy_from_slice(&q[src..src + dh]);
                    vh[i * dh..(i + 1) * dh].copy_from_slice(&v[src..src + dh]);
                    for c in 0..dh {
                        kt[c * seq + i] = k[src + c];
                    }
                }
                let blk = (b * nh + h) * seq * seq;
                let s = &mut probs[blk..blk + seq * seq];
                for i in 0..seq {
                    let row = &mut s[i * seq..i * seq + i + 1];
                    for c in 0..dh {
                        let qv = qh[i * dh + c] * scale;
                        for (sj, &kj) in row.iter_mut().zip(&kt[c * seq..c * seq + i + 1]) {
                            *sj += qv * kj;
                        }
                    }
                }
                causal_softmax_inplace(s, seq);
                let used: &[T] = match (dropped.as_mut(), dropout.as_mut()) {
                    (Some(pd), Some(rng)) => {
                        let pd = &mut pd[blk..blk + seq * seq];
                        for i in 0..seq {
                            for j in 0..=i {
                                counts.1 += 1;
                                if rng.bernoulli(p_drop) {
                                    counts.0 += 1;
                                } else {
                                    pd[i * seq + j] = s[i * seq + j] * keep_scale;
                                }
                            }
                        }
                        pd
                    }
                    _ => s,
                };
                oh.fill(T::zero());
                for i in 0..seq {
                    let o = &mut oh[i * dh..(i + 1) * dh];
                    for j in 0..=i {
                        let pij = used[i * seq + j];
                        for (oc, &vc) in o.iter_mut().zip(&vh[j * dh..(j + 1) * dh]) {
                            *oc += pij * vc;
                        }
                    }
                }
                for i in 0..seq {
                    let dst = (b * seq + i) * d + h * dh;
                    att[dst..dst + dh].copy_from_slice(&oh[i * dh..(i + 1) * dh]);
                }
            }
        }

        let proj = linear(&att, &lw.wo, n, &mut scratch);
        let x_mid: Vec<T> = x.iter().zip(&proj).map(|(&a, &b)| a + b).collect();
        let (r2, inv2) = rms_norm(&x_mid, lw.mlp_norm.data(), d, cfg.norm_eps);
        let gate = linear(&r2, &lw.w_gate, n, &mut scratch);
        let up = linear(&r2, &lw.w_up, n, &mut scratch);
        let hmid: Vec<T> = gate
            .iter()
            .zip(&up)
            .map(|(&a, &u)| a * sigmoid(a) * u)
            .collect();
        let down = linear(&hmid, &lw.w_down, n, &mut scratch);
        let x_out: Vec<T> = x_mid.iter().zip(&down).map(|(&a, &b)| a + b).collect();
        caches.push(LayerCache {
            x_in: std::mem::replace(&mut x, x_out),
            inv1,
            r1,
            q,
            k,
            v,
            probs,
            dropped,
            att,
            x_mid,
            inv2,
            r2,
            gate,
            up,
            hmid,
        });
    }
    let (rf, inv_f) = rms_norm(&x, w.final_norm.data(), d, cfg.norm_eps);
    Pass {
        rows,
        seq,
        tokens: tokens.to_vec(),
        layers: caches,
        x_final: x,
        inv_f,
        rf,
        dropout_counts: counts,
    }
}

fn backward<T: Real>(w: &ModelWeights<T>, pass: &Pass<T>, dlogits: &[T]) -> ModelWeights<T> {
    let cfg = &w.config;
    let (d, nh, dh, vocab, ff) = (cfg.d_model, cfg.n_heads, cfg.d_head(), cfg.vocab_size, cfg.d_ff);
    let (rows, seq) = (pass.rows, pass.seq);
    let n = rows * seq;
    let rope = Rope::<T>::new(seq, dh, cfg.rope_theta);
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let keep_scale = T::lit(1.0 / (1.0 - cfg.attn_dropout));
    let mut g = w.zeros_like();

    gemm_tn(dlogits, &pass.rf, g.unembed.data_mut(), vocab, n, d);
    let mut drf = vec![T::zero(); n * d];
    gemm_nn(dlogits, w.unembed.data(), &mut drf, n, vocab, d);
    let mut dx = rms_norm_backward(
        &drf,
        &pass.x_final,
        &pass.inv_f,
        w.final_norm.data(),
        d,
        g.final_norm.data_mut(),
    );

    let mut qh = vec![T::zero(); seq * dh];
    let mut kh = vec![T::zero(); seq * dh];
    let mut vh = vec![T::zero(); seq * dh];
    let mut doh = vec![T::zero(); seq * dh];
    let mut dqh = vec![T::zero(); seq * dh];
    let mut dkh = vec![T::zero(); seq * dh];
    let mut dvh = vec![T::zero(); seq * dh];
    let mut vt = vec![T::zero(); dh * seq];
    let mut dp = vec![T::zero(); seq * seq];
    for (lw, (c, gl)) in w
        .layers
        .iter()
        .zip(pass.layers.iter().zip(g.layers.iter_mut()))
        .rev()
    {
        // MLP
        let mut dhmid = vec![T::zero(); n * ff];
        gemm_nn(&dx, lw.w_down.data(), &mut dhmid, n, d, ff);
        gemm_tn(&dx, &c.hmid, gl.w_down.data_mut(), d, n, ff);
        let mut dgate = vec![T::zero(); n * ff];
        let mut dup = vec![T::zero(); n * ff];
        for i in 0..n * ff {
            let a = c.gate[i];
            let sg = sigmoid(a);
            let silu = a * sg;
            dup[i] = dhmid[i] * silu;
            dgate[i] = dhmid[i] * c.up[i] * sg * (T::one() + a * (T::one() - sg));
        }
        gemm_tn(&dgate, &c.r2, gl.w_gate.data_mut(), ff, n, d);
        gemm_tn(&dup, &c.r2, gl.w_up.data_mut(), ff, n, d);
        let mut dr2 = vec![T::zero(); n * d];
        gemm_nn(&dgate, lw.w_gate.data(), &mut dr2, n, ff, d);
        gemm_nn(&dup, lw.w_up.data(), &mut dr2, n, ff, d);
        let dmid = rms_norm_backward(&dr2, &c.x_mid, &c.inv2, lw.mlp_norm.data(), d, gl.mlp_norm.data_mut());
        let dx_mid: Vec<T> = dx.iter().zip(&dmid).map(|(&a, &b)| a + b).collect();

        // Attention
        let mut datt = vec![T::zero(); n * d];
        gemm_nn(&dx_mid, lw.wo.data(), &mut datt, n, d, d);
        gemm_tn(&dx_mid, &c.att, gl.wo.data_mut(), d, n, d);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        for b in 0..rows {
            for h in 0..nh {
                for i in 0..seq {
                    let src = (b * seq + i) * d + h * dh;
                    qh[i * dh..(i + 1) * dh].copy_from_slice(&c.q[src..src + dh]);
                    kh[i * dh..(i + 1) * dh].copy_from_slice(&c.k[src..src + dh]);
                    vh[i * dh..(i + 1) * dh].copy_from_slice(&c.v[src..src + dh]);
                    doh[i * dh..(i + 1) * dh].copy_from_slice(&datt[src..src + dh]);
                }
                transpose_into(&vh, seq, dh, &mut vt);
                let blk = (b * nh + h) * seq * seq;
                let p = &c.probs[blk..blk + seq * seq];
                let used = c.dropped.as_ref().map_or(p, |pd| &pd[blk..blk + seq * seq]);
                dvh.fill(T::zero());
                dqh.fill(T::zero());
                dkh.fill(T::zero());
                // dP_used = dO · vᵀ and dv = P_usedᵀ · dO, lower triangle only.
                for i in 0..seq {
                    let row = &mut dp[i * seq..i * seq + i + 1];
                    row.fill(T::zero());
                    for cc in 0..dh {
                        let dov = doh[i * dh + cc];
                        for (dpj, &vj) in row.iter_mut().zip(&vt[cc * seq..cc * seq + i + 1]) {
                            *dpj += dov * vj;
                        }
                    }
                    let dor = &doh[i * dh..(i + 1) * dh];
                    for j in 0..=i {
                        let pij = used[i * seq + j];
                        for (dvc, &doc) in dvh[j * dh..(j + 1) * dh].iter_mut().zip(dor) {
                            *dvc += pij * doc;
                        }
                    }
                }
                for i in 0..seq {
                    let prow = &p[i * seq..i * seq + i + 1];
                    let dprow = &mut dp[i * seq..i * seq + i + 1];
                    if c.dropped.is_some() {
                        let urow = &used[i * seq..i * seq + i + 1];
                        for (dpj, &uj) in dprow.iter_mut().zip(urow) {
                            *dpj = if uj == T::zero() { T::zero() } else { *dpj * keep_scale };
                        }
                    }
                    let dot = prow.iter().zip(dprow.iter()).fold(T::zero(), |a, (&pj, &dj)| a + pj * dj);
                    // dS = P ⊙ (dP − rowdot), folded with the score scale.
                    for (dpj, &pj) in dprow.iter_mut().zip(prow) {
                        *dpj = pj * (*dpj - dot) * scale;
                    }
                    let qi = &qh[i * dh..(i + 1) * dh];
                    for j in 0..=i {
                        let ds = dprow[j];
                        let kj = &kh[j * dh..(j + 1) * dh];
                        for (dqc, &kc) in dqh[i * dh..(i + 1) * dh].iter_mut().zip(kj) {
                            *dqc += ds * kc;
                        }
                        for (dkc, &qc) in dkh[j * dh..(j + 1) * dh].iter_mut().zip(qi) {
                            *dkc += ds * qc;
                        }
                    }
                }
                for i in 0..seq {
                    rope.unrotate(&mut dqh[i * dh..(i + 1) * dh], i);
                    rope.unrotate(&mut dkh[i * dh..(i + 1) * dh], i);
                    let dst = (b * seq + i) * d + h * dh;
                    dq[dst..dst + dh].copy_from_slice(&dqh[i * dh..(i + 1) * dh]);
                    dk[dst..dst + dh].copy_from_slice(&dkh[i * dh..(i + 1) * dh]);
                    dv[dst..dst + dh].copy_from_slice(&dvh[i * dh..(i + 1) * dh]);
                }
            }
        }
        gemm_tn(&dq, &c.r1, gl.wq.data_mut(), d, n, d);
        gemm_tn(&dk, &c.r1, gl.wk.data_mut(), d, n, d);
        gemm_tn(&dv, &c.r1, gl.wv.data_mut(), d, n, d);
        let mut dr1 = vec![T::zero(); n * d];
        gemm_nn(&dq, lw.wq.data(), &mut dr1, n, d, d);
        gemm_nn(&dk, lw.wk.data(), &mut dr1, n, d, d);
        gemm_nn(&dv, lw.wv.data(), &mut dr1, n, d, d);
        let din = rms_norm_backward(&dr1, &c.x_in, &c.inv1, lw.attn_norm.data(), d, gl.attn_norm.data_mut());
        dx = dx_mid.iter().zip(&din).map(|(&a, &b)| a + b).collect();
    }

    let ge = g.embed.data_mut();
    for (r, &tok) in pass.tokens.iter().enumerate() {
        for cc in 0..d {
            ge[cc * vocab + tok as usize] += dx[r * d + cc];
        }
    }
    g
}

fn logits_rows<T: Real>(w: &ModelWeights<T>, rf: &[T], n: usize, scratch: &mut Vec<T>) -> Vec<T> {
    let (d, vocab) = (w.config.d_model, w.config.vocab_size);
    let mut logits = vec![T::zero(); n * vocab];
    gemm_nt(rf, w.unembed.data(), &mut logits, n, d, vocab, scratch);
    logits
}

/// Runs one sequence through the model.
///
/// In `Train` mode with a positive `attn_dropout`, attention probabilities
/// are zeroed with that probability (draws come from `rng`) and survivors
/// are scaled by `1/(1-p)`. `Eval` mode never touches `rng`.
pub fn forward<T: Real>(
    w: &ModelWeights<T>,
    tokens: &[u32],
    mode: Mode,
    rng: &mut Rng,
    capture: bool,
) -> Result<ForwardTrace<T>> {
    check_tokens(&w.config, tokens)?;
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    let seq = tokens.len();
    let dropout = match mode {
        Mode::Train => Some(rng),
        Mode::Eval => None,
    };
    let pass = run_forward(w, tokens, 1, seq, dropout);
    let mut scratch = Vec::new();
    let logits = logits_rows(w, &pass.rf, seq, &mut scratch);
    let cfg = &w.config;
    let d = cfg.d_model;
    let mut attention = Vec::new();
    let mut hidden = Vec::new();
    if capture {
        for c in &pass.layers {
            let heads = (0..cfg.n_heads)
                .map(|h| {
                    let blk = h * seq * seq;
                    Tensor::from_vec(&[seq, seq], c.probs[blk..blk + seq * seq].to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            attention.push(heads);
            hidden.push(Tensor::from_vec(&[seq, d], c.x_in.clone())?);
        }
        hidden.push(Tensor::from_vec(&[seq, d], pass.x_final.clone())?);
    }
    Ok(ForwardTrace {
        logits: Tensor::from_vec(&[seq, cfg.vocab_size], logits)?,
        attention,
        hidden,
        dropout_counts: pass.dropout_counts,
    })
}

fn check_batch(cfg: &ModelConfig, batch: &TokenBatch) -> Result<()> {
    if batch.seq_len < 2 || batch.rows == 0 {
        return Err(Error::Input(
            "a training batch needs at least one row of two or more tokens".into(),
        ));
    }
    if batch.seq_len - 1 > cfg.ctx_len {
        return Err(Error::Input(format!(
            "rows of {} tokens need a context of {}, model has {}",
            batch.seq_len,
            batch.seq_len - 1,
            cfg.ctx_len
        )));
    }
    if let Some(&bad) = batch.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} is outside the vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn split_inputs(batch: &TokenBatch) -> (Vec<u32>, Vec<u32>) {
    let mut inputs = Vec::with_capacity(batch.rows * (batch.seq_len - 1));
    let mut targets = Vec::with_capacity(inputs.capacity());
    for r in 0..batch.rows {
        let row = batch.row(r);
        inputs.extend_from_slice(&row[..row.len() - 1]);
        targets.extend_from_slice(&row[1..]);
    }
    (inputs, targets)
}

/// Mean cross-entropy; when `dlogits` is given it receives the gradient of
/// the mean with respect to the logits.
fn cross_entropy<T: Real>(
    logits: &[T],
    targets: &[u32],
    vocab: usize,
    mut dlogits: Option<&mut [T]>,
) -> f64 {
    let count = targets.len();
    let inv_count = T::lit(1.0 / count as f64);
    let mut total = 0.0f64;
    for (r, &tgt) in targets.iter().enumerate() {
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        let sum = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let lse = max + sum.ln();
        total += (lse - row[tgt as usize]).as_f64();
        if let Some(dl) = dlogits.as_deref_mut() {
            let drow = &mut dl[r * vocab..(r + 1) * vocab];
            let inv_sum = T::one() / sum;
            for (dv, &v) in drow.iter_mut().zip(row) {
                *dv = (v - max).exp() * inv_sum * inv_count;
            }
            drow[tgt as usize] -= inv_count;
        }
    }
    total / count as f64
}

/// Mean next-token cross-entropy over every `(t → t+1)` pair of the batch,
/// with gradients shaped like `w`. Dropout runs only when `dropout_rng` is
/// given and the model's `attn_dropout` is positive.
pub fn loss_and_grads<T: Real>(
    w: &ModelWeights<T>,
    batch: &TokenBatch,
    dropout_rng: Option<&mut Rng>,
) -> Result<(f64, ModelWeights<T>)> {
    check_batch(&w.config, batch)?;
    let (inputs, targets) = split_inputs(batch);
    let seq = batch.seq_len - 1;
    let pass = run_forward(w, &inputs, batch.rows, seq, dropout_rng);
    let n = inputs.len();
    let vocab = w.config.vocab_size;
    let mut scratch = Vec::new();
    let logits = logits_rows(w, &pass.rf, n, &mut scratch);
    let mut dlogits = vec![T::zero(); n * vocab];
    let loss = cross_entropy(&logits, &targets, vocab, Some(&mut dlogits));
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss is {loss}")));
    }
    let grads = backward(w, &pass, &dlogits);
    Ok((loss, grads))
}

/// Mean next-token cross-entropy without gradients (eval mode).
pub fn loss<T: Real>(w: &ModelWeights<T>, batch: &TokenBatch) -> Result<f64> {
    check_batch(&w.config, batch)?;
    let (inputs, targets) = split_inputs(batch);
    let pass = run_forward(w, &inputs, batch.rows, batch.seq_len - 1, None);
    let mut scratch = Vec::new();
    let logits = logits_rows(w, &pass.rf, inputs.len(), &mut scratch);
    Ok(cross_entropy(&logits, &targets, w.config.vocab_size, None))
}

/// Eval-mode logits for the position after the last token.
pub fn next_token_logits<T: Real>(w: &ModelWeights<T>, tokens: &[u32]) -> Result<Vec<T>> {
    check_tokens(&w.config, tokens)?;
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    let pass = run_forward(w, tokens, 1, tokens.len(), None);
    let d = w.config.d_model;
    let last = &pass.rf[(tokens.len() - 1) * d..];
    let mut scratch = Vec::new();
    Ok(logits_rows(w, last, 1, &mut scratch))
}

/// Index of the largest logit; ties go to the lowest token id.
pub fn argmax<T: Real>(logits: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Appends the argmax token `n_new` times.
pub fn generate_greedy<T: Real>(w: &ModelWeights<T>, prompt: &[u32], n_new: usize) -> Result<Vec<u32>> {
    if prompt.len() + n_new > w.config.ctx_len {
        return Err(Error::Input(format!(
            "prompt of {} plus {n_new} new tokens exceeds the context length {}",
            prompt.len(),
            w.config.ctx_len
        )));
    }
    check_tokens(&w.config, prompt)?;
    let mut out = prompt.to_vec();
    for _ in 0..n_new {
        let logits = next_token_logits(w, &out)?;
        out.push(argmax(&logits));
    }
    Ok(out)
}
