//! Llama-style decoder: RMSNorm, rotary position embeddings, SwiGLU MLPs, no
//! biases, untied embedding and unembedding.

mod config;
mod engine;
mod weights;

pub use config::ModelConfig;
pub use engine::{
    argmax, forward, generate_greedy, loss, loss_and_grads, next_token_logits, ForwardTrace, Mode,
    TokenBatch,
};
pub use weights::{decays, LayerWeights, ModelWeights};
