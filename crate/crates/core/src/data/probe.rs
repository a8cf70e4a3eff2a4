use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;

/// `2·half` tokens whose second half repeats the first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSequence {
    pub tokens: Vec<u32>,
    pub half: usize,
}

impl ProbeSequence {
    pub fn from_half(first: &[u32]) -> Self {
        let mut tokens = first.to_vec();
        tokens.extend_from_slice(first);
        Self {
            tokens,
            half: first.len(),
        }
    }
}

/// Half length used for induction probes unless configured otherwise.
pub const DEFAULT_PROBE_HALF: usize = 100;

/// First halves draw distinct tokens when the vocabulary allows, so every
/// induction target is unambiguous.
pub fn gen_probe(half: usize, vocab: usize, rng: &mut Rng) -> Result<ProbeSequence> {
    if half < 2 || vocab < 2 {
        return Err(Error::Input(format!(
            "probes need half length ≥ 2 and vocabulary ≥ 2, got {half} and {vocab}"
        )));
    }
    let first: Vec<u32> = if vocab >= half {
        let mut ids: Vec<u32> = (0..vocab as u32).collect();
        for i in 0..half {
            let j = i + rng.below(vocab - i);
            ids.swap(i, j);
        }
        ids.truncate(half);
        ids
    } else {
        (0..half).map(|_| rng.below(vocab) as u32).collect()
    };
    Ok(ProbeSequence::from_half(&first))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplication() {
        assert_eq!(ProbeSequence::from_half(&[7, 2, 9]).tokens, vec![7, 2, 9, 7, 2, 9]);
    }

    #[test]
    fn halves_match_and_length() {
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let p = gen_probe(DEFAULT_PROBE_HALF, 512, &mut rng).unwrap();
            assert_eq!(p.tokens.len(), 200);
            for j in 0..p.half {
                assert_eq!(p.tokens[p.half + j], p.tokens[j]);
            }
        }
        assert!(gen_probe(1, 10, &mut rng).is_err());
    }

    #[test]
    fn distinct_when_possible() {
        let mut rng = Rng::new(2);
        let p = gen_probe(100, 128, &mut rng).unwrap();
        let set: std::collections::HashSet<_> = p.tokens[..100].iter().collect();
        assert_eq!(set.len(), 100);
        let q = gen_probe(50, 8, &mut rng).unwrap();
        assert!(q.tokens.iter().all(|&t| t < 8));
    }
}
