use serde::{Deserialize, Serialize};

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillEmbedding {
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl SkillEmbedding {
    pub fn zero(dim: usize) -> Self {
        SkillEmbedding { vector: vec![0.0; dim], norm: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Text to fixed-dimension vector. Swappable so a sentence-embedding client
/// can replace the default hashing embedder.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> SkillEmbedding;
}

/// Bag-of-tokens feature hashing: lowercase, split on non-alphanumerics,
/// FNV-1a each token into one of `dim` buckets, count, L2-normalize.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_DIM)
    }
}

pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> SkillEmbedding {
        let mut vector = vec![0.0; self.dim];
        for token in tokens(text) {
            vector[self.bucket(&token)] += 1.0;
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SkillEmbedding { vector, norm: 0.0 };
        }
        for v in &mut vector {
            *v /= norm;
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        SkillEmbedding { vector, norm }
    }
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &SkillEmbedding, b: &SkillEmbedding) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    dot / (a.norm * b.norm)
}
