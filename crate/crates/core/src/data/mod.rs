//! Synthetic data: pretraining corpora, the copy benchmark and induction probes.

mod copy_eval;
mod corpus;
mod probe;

pub use copy_eval::{
    gen_copy_eval, read_jsonl, write_jsonl, CopyEvalSample, CopyEvalSpec, MAX_RESAMPLE_ROUNDS,
};
pub use corpus::{gen_corpus_batch, repeated_ngrams, Corpus, CorpusGenerator, CorpusSpec};
pub use probe::{gen_probe, ProbeSequence, DEFAULT_PROBE_HALF};
