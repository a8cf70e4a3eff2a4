use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numeric::{Real, Rng, Tensor};

/// Learnable tensors of one decoder block. Attention projections keep all
/// heads stacked: rows `h·d_head..(h+1)·d_head` of `wq`/`wk`/`wv` and the
/// matching columns of `wo` belong to head `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w_gate: Tensor<T>,
    pub w_up: Tensor<T>,
    pub w_down: Tensor<T>,
}

/// All learnable tensors. Embedding and unembedding are separate (untied).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub config: ModelConfig,
    /// `d_model × vocab`; column `v` embeds token `v`.
    pub embed: Tensor<T>,
    /// `vocab × d_model`.
    pub unembed: Tensor<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Tensor<T>,
}

const LAYER_PARTS: [&str; 9] = [
    "attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_gate", "w_up", "w_down",
];

impl<T: Real> LayerWeights<T> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        Self {
            attn_norm: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::zeros(&[d, d]),
            wo: Tensor::zeros(&[d, d]),
            mlp_norm: Tensor::zeros(&[d]),
            w_gate: Tensor::zeros(&[ff, d]),
            w_up: Tensor::zeros(&[ff, d]),
            w_down: Tensor::zeros(&[d, ff]),
        }
    }

    fn parts(&self) -> [&Tensor<T>; 9] {
        [
            &self.attn_norm,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.mlp_norm,
            &self.w_gate,
            &self.w_up,
            &self.w_down,
        ]
    }

    fn parts_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.attn_norm,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.mlp_norm,
            &mut self.w_gate,
            &mut self.w_up,
            &mut self.w_down,
        ]
    }
}

/// Whether decoupled weight decay applies to the named tensor. Norm gains
/// and the token embedding are exempt.
pub fn decays(name: &str) -> bool {
    !(name == "embed" || name.ends_with("norm"))
}

impl<T: Real> ModelWeights<T> {
    /// All-zero tensors with the shapes `cfg` implies (also used for gradients).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, v) = (cfg.d_model, cfg.vocab_size);
        Self {
            config: cfg.clone(),
            embed: Tensor::zeros(&[d, v]),
            unembed: Tensor::zeros(&[v, d]),
            layers: (0..cfg.n_layers).map(|_| LayerWeights::zeros(cfg)).collect(),
            final_norm: Tensor::zeros(&[d]),
        }
    }

    /// Truncated-normal (±2σ) entries with σ = 0.02; norm gains set to 1.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut w = Self::zeros(cfg);
        let std = 0.02;
        for (name, t) in w.named_mut() {
            if name.ends_with("norm") {
                t.data_mut().fill(T::one());
            } else {
                for x in t.data_mut() {
                    *x = T::lit(std * rng.truncated_normal());
                }
            }
        }
        Ok(w)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Canonical tensor order, shared by checkpoints, the optimizer and
    /// gradient checks.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (part, t) in LAYER_PARTS.iter().zip(layer.parts()) {
                out.push((format!("layers.{l}.{part}"), t));
            }
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("unembed".into(), &self.unembed));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![("embed".to_string(), &mut self.embed)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (part, t) in LAYER_PARTS.iter().zip(layer.parts_mut()) {
                out.push((format!("layers.{l}.{part}"), t));
            }
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        out.push(("unembed".into(), &mut self.unembed));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Global L2 norm over every tensor, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let mut out = ModelWeights::<U>::zeros(&self.config);
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    fn check_head(&self, layer: usize, head: usize) -> Result<()> {
        if layer >= self.config.n_layers || head >= self.config.n_heads {
            return Err(Error::Input(format!(
                "no head ({layer}, {head}) in a {}x{} model",
                self.config.n_layers, self.config.n_heads
            )));
        }
        Ok(())
    }

    fn head_rows(t: &Tensor<T>, head: usize, dh: usize) -> Tensor<T> {
        let d = t.shape()[1];
        let data = t.data()[head * dh * d..(head + 1) * dh * d].to_vec();
        Tensor::from_vec(&[dh, d], data).expect("head slice shape")
    }

    /// `W_Q` of one head, `d_head × d_model`.
    pub fn w_q(&self, layer: usize, head: usize) -> Result<Tensor<T>> {
        self.check_head(layer, head)?;
        Ok(Self::head_rows(&self.layers[layer].wq, head, self.config.d_head()))
    }

    pub fn w_k(&self, layer: usize, head: usize) -> Result<Tensor<T>> {
        self.check_head(layer, head)?;
        Ok(Self::head_rows(&self.layers[layer].wk, head, self.config.d_head()))
    }

    /// `W_V` of one head, `d_head × d_model`.
    pub fn w_v(&self, layer: usize, head: usize) -> Result<Tensor<T>> {
        self.check_head(layer, head)?;
        Ok(Self::head_rows(&self.layers[layer].wv, head, self.config.d_head()))
    }

    /// `W_O` of one head, `d_model × d_head`.
    pub fn w_o(&self, layer: usize, head: usize) -> Result<Tensor<T>> {
        self.check_head(layer, head)?;
        let dh = self.config.d_head();
        let wo = &self.layers[layer].wo;
        let d = self.config.d_model;
        let mut out = Tensor::zeros(&[d, dh]);
        for r in 0..d {
            for c in 0..dh {
                out.set(r, c, wo.at(r, head * dh + c));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: 512,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelWeights::<f32>::init(&small(), &mut Rng::new(5)).unwrap();
        let b = ModelWeights::<f32>::init(&small(), &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        let c = ModelWeights::<f32>::init(&small(), &mut Rng::new(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn norm_gains_are_one_and_others_bounded() {
        let w = ModelWeights::<f64>::init(&small(), &mut Rng::new(1)).unwrap();
        for (name, t) in w.named() {
            if name.ends_with("norm") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else {
                assert!(t.data().iter().all(|v| v.abs() <= 0.04), "{name}");
            }
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let w = ModelWeights::<f32>::zeros(&small());
        assert_eq!(w.param_count(), 196_928);
        for cfg in [ModelConfig::desk(), ModelConfig { n_layers: 3, d_ff: 96, ..small() }] {
            assert_eq!(ModelWeights::<f32>::zeros(&cfg).param_count(), cfg.param_count());
        }
    }

    #[test]
    fn head_accessors_slice_the_stacked_matrices() {
        let w = ModelWeights::<f64>::init(&small(), &mut Rng::new(2)).unwrap();
        let dh = w.config.d_head();
        let wv = w.w_v(1, 2).unwrap();
        assert_eq!(wv.shape(), &[dh, 64]);
        assert_eq!(wv.at(3, 7), w.layers[1].wv.at(2 * dh + 3, 7));
        let wo = w.w_o(0, 3).unwrap();
        assert_eq!(wo.shape(), &[64, dh]);
        assert_eq!(wo.at(5, 1), w.layers[0].wo.at(5, 3 * dh + 1));
        assert!(w.w_o(2, 0).is_err());
    }

    #[test]
    fn decay_exemptions() {
        assert!(!decays("embed"));
        assert!(!decays("layers.0.attn_norm"));
        assert!(!decays("final_norm"));
        assert!(decays("unembed"));
        assert!(decays("layers.1.w_down"));
    }
}
