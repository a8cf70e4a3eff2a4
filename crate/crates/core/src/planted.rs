//! A hand-built two-layer induction circuit, used as a known-answer fixture
//! for the head scores and the copy benchmark.
//!
//! Residual layout (`V` = vocabulary): `cur | prev | prevprev | out | 1`.
//! Layer 0 holds two positional heads that copy the token one and two
//! positions back into `prev` and `prevprev`, using only the high-frequency
//! rotary pairs. Layer 1 head 0 scores key `j` for query `i` as
//!
//! ```text
//! c · (σ·[cur_i = prev_j] + σ·[prev_i = prevprev_j] − τ·[cur_i = cur_j] − cos(ω·(i − j)))
//! ```
//!
//! with the content terms on rotary pairs slow enough to be position
//! independent. The last term is a weak preference for distant keys, which
//! sends queries without any match to position 0. The head copies `cur` of
//! the attended key into `out`, and `W_U` reads `out`, so its OV circuit is
//! the identity on the vocabulary. All MLPs are zero.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::numeric::Tensor;

pub const PLANTED_VOCAB: usize = 128;
pub const PLANTED_CTX: usize = 256;
const D_HEAD: usize = 424;
const N_HEADS: usize = 2;
const ROPE_THETA: f64 = 1e60;
/// Rotary pairs used by the positional heads.
const POS_PAIRS: std::ops::Range<usize> = 0..8;
/// Slowest pair still turning by less than π over the context.
const SINK_PAIR: usize = 7;
/// First pair of the content blocks.
const CONTENT_PAIR: usize = 20;
const SIGMA: f64 = 8.0;
const TAU: f64 = 3.0;
const INDUCTION_SCALE: f64 = 1e5;
/// Target logit margin of the positional heads, in nats.
const POSITIONAL_MARGIN: f64 = 100.0;

/// The induction head's location.
pub const PLANTED_HEAD: (usize, usize) = (1, 0);

pub fn planted_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: N_HEADS,
        d_model: N_HEADS * D_HEAD,
        d_ff: 4,
        vocab_size: PLANTED_VOCAB,
        ctx_len: PLANTED_CTX,
        rope_theta: ROPE_THETA,
        attn_dropout: 0.0,
        norm_eps: 1e-5,
    }
}

fn omega(p: usize) -> f64 {
    ROPE_THETA.powf(-2.0 * p as f64 / D_HEAD as f64)
}

/// `Σ_p cos((Δ − δ₀)·ω_p)` over the positional pairs.
fn positional_kernel(delta: usize, peak: usize) -> f64 {
    POS_PAIRS
        .map(|p| ((delta as f64 - peak as f64) * omega(p)).cos())
        .sum()
}

/// Smallest drop of the positional kernel away from its peak.
fn positional_gap(peak: usize) -> f64 {
    let top = positional_kernel(peak, peak);
    (0..PLANTED_CTX)
        .filter(|&d| d != peak)
        .map(|d| top - positional_kernel(d, peak))
        .fold(f64::INFINITY, f64::min)
}

pub fn planted_induction_model() -> Result<ModelWeights<f64>> {
    let cfg = planted_config();
    cfg.validate()?;
    let v = cfg.vocab_size;
    let d = cfg.d_model;
    let (cur, prev, prevprev, out, one) = (0, v, 2 * v, 3 * v, 4 * v);
    if one >= d || 2 * CONTENT_PAIR + 3 * v > D_HEAD {
        return Err(Error::Config("planted layout does not fit the model".into()));
    }
    if omega(SINK_PAIR) * PLANTED_CTX as f64 >= std::f64::consts::PI {
        return Err(Error::Config("sink pair turns too far over the context".into()));
    }
    let mut w = ModelWeights::<f64>::zeros(&cfg);
    let root_dh = (D_HEAD as f64).sqrt();
    for a in 0..v {
        w.embed.set(cur + a, a, 1.0);
        w.embed.set(one, a, 1.0);
        w.unembed.set(a, out + a, 1.0);
    }
    w.final_norm = Tensor::full(&[d], 1.0);

    // Normalization is undone by gains: the residual holds 2 unit entries
    // entering layer 0 and 4 entering layer 1.
    let gain = |units: f64| ((units / d as f64) + cfg.norm_eps).sqrt();
    for (layer, units) in [(0, 2.0), (1, 4.0)] {
        w.layers[layer].attn_norm = Tensor::full(&[d], gain(units));
        w.layers[layer].mlp_norm = Tensor::full(&[d], 1.0);
    }

    let l0 = &mut w.layers[0];
    for (head, peak, dst) in [(0, 1, prev), (1, 2, prevprev)] {
        let scale = POSITIONAL_MARGIN / positional_gap(peak);
        let base = head * D_HEAD;
        for p in POS_PAIRS {
            let angle = peak as f64 * omega(p);
            l0.wq.set(base + 2 * p, one, scale * root_dh);
            l0.wk.set(base + 2 * p, one, angle.cos());
            l0.wk.set(base + 2 * p + 1, one, angle.sin());
        }
        for a in 0..v {
            l0.wv.set(base + a, cur + a, 1.0);
            l0.wo.set(dst + a, base + a, 1.0);
        }
    }

    let l1 = &mut w.layers[1];
    let q = INDUCTION_SCALE * root_dh;
    let (m1, m2, m0) = (2 * CONTENT_PAIR, 2 * CONTENT_PAIR + v, 2 * CONTENT_PAIR + 2 * v);
    for a in 0..v {
        l1.wq.set(m1 + a, cur + a, q * SIGMA);
        l1.wk.set(m1 + a, prev + a, 1.0);
        l1.wq.set(m2 + a, prev + a, q * SIGMA);
        l1.wk.set(m2 + a, prevprev + a, 1.0);
        l1.wq.set(m0 + a, cur + a, q * TAU);
        l1.wk.set(m0 + a, cur + a, -1.0);
        l1.wv.set(a, cur + a, 1.0);
        l1.wo.set(out + a, a, 1.0);
    }
    l1.wq.set(2 * SINK_PAIR, one, q);
    l1.wk.set(2 * SINK_PAIR, one, -1.0);
    Ok(w)
}
