use crate::hash::fnv1a64;

use super::{Embedder, ProviderFault};

/// Offline embedder: hashed bag-of-words projected to a fixed number of
/// buckets, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    dims: usize,
}

impl HashedBagOfWords {
    pub const DEFAULT_DIMS: usize = 256;

    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "embedding dimensionality must be positive");
        HashedBagOfWords { dims }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        for token in tokens(text) {
            let bucket = (fnv1a64(token.as_bytes()) % self.dims as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMS)
    }
}

impl Embedder for HashedBagOfWords {
    fn model_id(&self) -> &str {
        "hashed-bow-256"
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderFault> {
        Ok(self.vector(text))
    }
}

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
