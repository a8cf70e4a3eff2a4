use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a Llama-style decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub ctx_len: usize,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
    /// Dropout probability on post-softmax attention weights (train mode only).
    #[serde(default)]
    pub attn_dropout: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

fn default_rope_theta() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Two layers of four heads; the smallest setting where induction
    /// circuits (which need cross-layer composition) can form.
    pub fn desk() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            vocab_size: 512,
            ctx_len: 256,
            rope_theta: default_rope_theta(),
            attn_dropout: 0.0,
            norm_eps: default_norm_eps(),
        }
    }

    /// 12 layers × 12 heads, hidden 768, MLP 3072, 32k vocabulary, 1024
    /// context. Kept for reference; far too large to train here.
    pub fn paper_scale() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_ff: 3072,
            vocab_size: 32_000,
            ctx_len: 1024,
            rope_theta: default_rope_theta(),
            attn_dropout: 0.0,
            norm_eps: default_norm_eps(),
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return fail("layer, head, model and MLP sizes must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_head() % 2 != 0 {
            return fail(format!("rotary embeddings need an even head size, got {}", self.d_head()));
        }
        if self.ctx_len < 2 {
            return fail(format!("ctx_len must be at least 2, got {}", self.ctx_len));
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return fail(format!("attn_dropout must lie in [0, 1), got {}", self.attn_dropout));
        }
        if !(self.rope_theta > 0.0) || !(self.norm_eps > 0.0) {
            return fail("rope_theta and norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Closed-form number of learnable scalars:
    /// `2·V·d + L·(4·d² + 3·d·ff + 2·d) + d`.
    pub fn param_count(&self) -> usize {
        let (v, d, ff, l) = (self.vocab_size, self.d_model, self.d_ff, self.n_layers);
        2 * v * d + l * (4 * d * d + 3 * d * ff + 2 * d) + d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::paper_scale().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_heads: 3,
            ..ModelConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_dropout() {
        let cfg = ModelConfig {
            attn_dropout: 1.0,
            ..ModelConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn closed_form_count() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: 512,
            ..ModelConfig::desk()
        };
        assert_eq!(cfg.param_count(), 196_928);
    }
}
