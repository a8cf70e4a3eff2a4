//! Synthetic pretraining corpora.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenBatch;
use crate::numeric::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusGenerator {
    /// Every document samples its own sparse bigram table and walks it.
    PerDocMarkov,
    /// Independent draws from a Zipf distribution over token ids.
    ZipfUnigram,
    /// Random windows over the bytes of a file (byte value = token id).
    FileIngest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    /// Tokens per document; equal to the model context length.
    pub doc_len: usize,
    pub generator: CorpusGenerator,
    /// Successors per token in a per-document transition table.
    #[serde(default = "default_branching")]
    pub branching: usize,
    /// Distinct tokens a per-document chain may visit; the whole vocabulary
    /// when absent.
    #[serde(default)]
    pub states_per_doc: Option<usize>,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    #[serde(default)]
    pub ingest_path: Option<PathBuf>,
}

fn default_branching() -> usize {
    4
}

fn default_zipf() -> f64 {
    1.1
}

impl CorpusSpec {
    pub fn per_doc_markov(vocab_size: usize, doc_len: usize, branching: usize) -> Self {
        Self {
            vocab_size,
            doc_len,
            generator: CorpusGenerator::PerDocMarkov,
            branching,
            states_per_doc: None,
            zipf_exponent: default_zipf(),
            ingest_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 4 {
            return fail(format!("corpus vocabulary must be at least 4, got {}", self.vocab_size));
        }
        if self.doc_len < 2 {
            return fail(format!("documents need at least 2 tokens, got {}", self.doc_len));
        }
        match self.generator {
            CorpusGenerator::PerDocMarkov => {
                let states = self.states_per_doc.unwrap_or(self.vocab_size);
                if states < 2 || states > self.vocab_size {
                    return fail(format!(
                        "states_per_doc must lie in [2, {}], got {states}",
                        self.vocab_size
                    ));
                }
                if self.branching == 0 || self.branching > states {
                    return fail(format!(
                        "branching must lie in [1, {states}], got {}",
                        self.branching
                    ));
                }
            }
            CorpusGenerator::ZipfUnigram => {
                if !(self.zipf_exponent > 0.0) {
                    return fail("zipf_exponent must be positive".into());
                }
            }
            CorpusGenerator::FileIngest => {
                if self.ingest_path.is_none() {
                    return fail("file-ingest corpus needs ingest_path".into());
                }
                if self.vocab_size < 256 {
                    return fail("byte-level ingestion needs a vocabulary of at least 256".into());
                }
            }
        }
        Ok(())
    }
}

/// Stateful sampler; holds the Zipf table or the ingested bytes.
#[derive(Clone, Debug)]
pub struct Corpus {
    spec: CorpusSpec,
    zipf_cdf: Vec<f64>,
    bytes: Vec<u8>,
}

impl Corpus {
    pub fn new(spec: &CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let mut zipf_cdf = Vec::new();
        let mut bytes = Vec::new();
        match spec.generator {
            CorpusGenerator::ZipfUnigram => {
                let mut acc = 0.0;
                for rank in 1..=spec.vocab_size {
                    acc += (rank as f64).powf(-spec.zipf_exponent);
                    zipf_cdf.push(acc);
                }
                for c in &mut zipf_cdf {
                    *c /= acc;
                }
            }
            CorpusGenerator::FileIngest => {
                let path = spec.ingest_path.as_ref().expect("validated");
                bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                if bytes.len() < spec.doc_len {
                    return Err(Error::Config(format!(
                        "{} holds {} bytes, fewer than one document of {}",
                        path.display(),
                        bytes.len(),
                        spec.doc_len
                    )));
                }
            }
            CorpusGenerator::PerDocMarkov => {}
        }
        Ok(Self {
            spec: spec.clone(),
            zipf_cdf,
            bytes,
        })
    }

    pub fn spec(&self) -> &CorpusSpec {
        &self.spec
    }

    pub fn document(&self, rng: &mut Rng) -> Vec<u32> {
        match self.spec.generator {
            CorpusGenerator::PerDocMarkov => self.markov_document(rng),
            CorpusGenerator::ZipfUnigram => (0..self.spec.doc_len)
                .map(|_| {
                    let u = rng.uniform();
                    self.zipf_cdf.partition_point(|&c| c <= u).min(self.spec.vocab_size - 1) as u32
                })
                .collect(),
            CorpusGenerator::FileIngest => {
                let start = rng.below(self.bytes.len() - self.spec.doc_len + 1);
                self.bytes[start..start + self.spec.doc_len]
                    .iter()
                    .map(|&b| b as u32)
                    .collect()
            }
        }
    }

    fn markov_document(&self, rng: &mut Rng) -> Vec<u32> {
        let spec = &self.spec;
        let states: Vec<u32> = match spec.states_per_doc {
            Some(k) if k < spec.vocab_size => {
                let mut all: Vec<u32> = (0..spec.vocab_size as u32).collect();
                // Partial Fisher-Yates: the first k entries become the state set.
                for i in 0..k {
                    let j = i + rng.below(spec.vocab_size - i);
                    all.swap(i, j);
                }
                all.truncate(k);
                all
            }
            _ => (0..spec.vocab_size as u32).collect(),
        };
        let k = states.len();
        // Successor rows are drawn lazily, the first time a state is visited.
        let mut table: Vec<Option<Vec<u32>>> = vec![None; k];
        let mut scratch: Vec<usize> = (0..k).collect();
        let mut cur = rng.below(k);
        let mut doc = Vec::with_capacity(spec.doc_len);
        doc.push(states[cur]);
        while doc.len() < spec.doc_len {
            let row = table[cur].get_or_insert_with(|| {
                for i in 0..spec.branching {
                    let j = i + rng.below(k - i);
                    scratch.swap(i, j);
                }
                scratch[..spec.branching].iter().map(|&s| s as u32).collect()
            });
            cur = row[rng.below(spec.branching)] as usize;
            doc.push(states[cur]);
        }
        doc
    }

    pub fn batch(&self, rng: &mut Rng, n_docs: usize) -> TokenBatch {
        let mut tokens = Vec::with_capacity(n_docs * self.spec.doc_len);
        for _ in 0..n_docs {
            tokens.extend(self.document(rng));
        }
        TokenBatch::new(n_docs, self.spec.doc_len, tokens).expect("documents have doc_len tokens")
    }

    /// Entropy (nats) of the corpus-wide unigram distribution.
    ///
    /// Per-document chains start uniformly and use uniformly random tables,
    /// so their marginal is uniform over the vocabulary. Ingested files use
    /// the empirical byte histogram.
    pub fn unigram_entropy(&self) -> f64 {
        match self.spec.generator {
            CorpusGenerator::PerDocMarkov => (self.spec.vocab_size as f64).ln(),
            CorpusGenerator::ZipfUnigram => {
                let mut prev = 0.0;
                let mut h = 0.0;
                for &c in &self.zipf_cdf {
                    let p = c - prev;
                    prev = c;
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
                h
            }
            CorpusGenerator::FileIngest => {
                let mut counts = [0u64; 256];
                for &b in &self.bytes {
                    counts[b as usize] += 1;
                }
                let n = self.bytes.len() as f64;
                counts
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / n;
                        -p * p.ln()
                    })
                    .sum()
            }
        }
    }
}

/// Convenience wrapper around [`Corpus::batch`].
pub fn gen_corpus_batch(spec: &CorpusSpec, rng: &mut Rng, n_docs: usize) -> Result<TokenBatch> {
    Ok(Corpus::new(spec)?.batch(rng, n_docs))
}

/// Positions whose `n`-gram already occurred earlier in the document.
pub fn repeated_ngrams(doc: &[u32], n: usize) -> usize {
    let mut seen = std::collections::HashSet::new();
    let mut repeats = 0;
    for w in doc.windows(n) {
        if !seen.insert(w) {
            repeats += 1;
        }
    }
    repeats
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branching_one_cycles() {
        let spec = CorpusSpec::per_doc_markov(64, 200, 1);
        let corpus = Corpus::new(&spec).unwrap();
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let doc = corpus.document(&mut rng);
            // A deterministic chain over 64 states revisits a state within 65
            // steps; from then on it repeats with a fixed period.
            let first_repeat = (1..doc.len())
                .find(|&i| doc[..i].contains(&doc[i]))
                .expect("pigeonhole");
            assert!(first_repeat <= 64);
            let start = doc.iter().position(|&t| t == doc[first_repeat]).unwrap();
            let period = first_repeat - start;
            for i in first_repeat..doc.len() {
                assert_eq!(doc[i], doc[i - period]);
            }
        }
    }

    #[test]
    fn tokens_in_range() {
        let mut rng = Rng::new(11);
        for generator in [CorpusGenerator::PerDocMarkov, CorpusGenerator::ZipfUnigram] {
            let spec = CorpusSpec {
                generator,
                ..CorpusSpec::per_doc_markov(97, 1000, 4)
            };
            let corpus = Corpus::new(&spec).unwrap();
            for _ in 0..100 {
                assert!(corpus.document(&mut rng).iter().all(|&t| t < 97));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = CorpusSpec::per_doc_markov(512, 256, 4);
        let a = gen_corpus_batch(&spec, &mut Rng::new(9), 4).unwrap();
        let b = gen_corpus_batch(&spec, &mut Rng::new(9), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn state_subsets_limit_distinct_tokens() {
        let spec = CorpusSpec {
            states_per_doc: Some(12),
            ..CorpusSpec::per_doc_markov(512, 256, 3)
        };
        let corpus = Corpus::new(&spec).unwrap();
        let doc = corpus.document(&mut Rng::new(1));
        let distinct: std::collections::HashSet<_> = doc.iter().collect();
        assert!(distinct.len() <= 12);
    }

    #[test]
    fn zipf_entropy_below_uniform() {
        let spec = CorpusSpec {
            generator: CorpusGenerator::ZipfUnigram,
            ..CorpusSpec::per_doc_markov(512, 16, 4)
        };
        let h = Corpus::new(&spec).unwrap().unigram_entropy();
        assert!(h > 0.0 && h < (512f64).ln());
    }

    #[test]
    fn file_ingest_windows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.txt");
        std::fs::write(&path, b"abcabcabcabcabcabc").unwrap();
        let spec = CorpusSpec {
            generator: CorpusGenerator::FileIngest,
            ingest_path: Some(path),
            ..CorpusSpec::per_doc_markov(256, 6, 4)
        };
        let corpus = Corpus::new(&spec).unwrap();
        let doc = corpus.document(&mut Rng::new(0));
        assert_eq!(doc.len(), 6);
        assert!(doc.iter().all(|&t| (b'a' as u32..=b'c' as u32).contains(&t)));
        assert!((corpus.unigram_entropy() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        assert!(Corpus::new(&CorpusSpec::per_doc_markov(3, 10, 1)).is_err());
        assert!(Corpus::new(&CorpusSpec::per_doc_markov(16, 10, 0)).is_err());
        let missing = CorpusSpec {
            generator: CorpusGenerator::FileIngest,
            ..CorpusSpec::per_doc_markov(256, 10, 1)
        };
        assert!(Corpus::new(&missing).is_err());
    }

    #[test]
    fn repeated_ngram_count() {
        assert_eq!(repeated_ngrams(&[1, 2, 3, 1, 2, 3, 1], 2), 3);
        assert_eq!(repeated_ngrams(&[1, 2, 3, 4], 2), 0);
    }
}
