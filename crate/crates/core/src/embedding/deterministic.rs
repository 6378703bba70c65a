//! Offline embedder: token feature hashing with count weights, then L2
//! normalization. Shared vocabulary means higher cosine; token-disjoint
//! inputs score zero unless two tokens collide in a bucket.

use std::collections::{BTreeMap, HashMap};

use super::{normalize, Embedder};
use crate::error::{Error, Result};
use crate::media;
use crate::text::tokenize;

pub const TEXT_SALT: &str = "text";
/// Image embeddings and cross-modal text embeddings share this bucket space.
pub const IMAGE_SALT: &str = "visual";

/// FNV-1a over `salt ‖ 0xff ‖ token`, reduced modulo `dim`.
pub fn feature_bucket(salt: &str, token: &str, dim: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in salt.bytes().chain(std::iter::once(0xff)).chain(token.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % dim as u64) as usize
}

#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    text_dim: usize,
    image_dim: usize,
    captions: HashMap<String, String>,
}

impl Default for DeterministicEmbedder {
    fn default() -> Self {
        Self::new(384, 768)
    }
}

impl DeterministicEmbedder {
    pub fn new(text_dim: usize, image_dim: usize) -> Self {
        Self {
            text_dim,
            image_dim,
            captions: HashMap::new(),
        }
    }

    /// Registers a fixture caption for images whose bytes hash to `content_hash`.
    pub fn register_caption(&mut self, content_hash: &str, caption: &str) {
        self.captions.insert(content_hash.to_string(), caption.to_string());
    }

    /// Registers a caption for the image currently stored at `image_ref`.
    pub fn register_caption_for(&mut self, image_ref: &str, caption: &str) -> Result<()> {
        let hash = media::content_hash(&media::load_image_bytes(image_ref)?);
        self.register_caption(&hash, caption);
        Ok(())
    }

    fn text_features(text: &str) -> Result<Vec<String>> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::EmptyInput);
        }
        let tokens = tokenize(trimmed);
        Ok(if tokens.is_empty() {
            vec![trimmed.to_lowercase()]
        } else {
            tokens
        })
    }

    fn image_features(bytes: &[u8]) -> Vec<String> {
        let mut features = tokenize(&String::from_utf8_lossy(bytes));
        features.push(format!("#{}", media::content_hash(bytes)));
        features
    }

    fn hashed(salt: &str, features: &[String], dim: usize) -> BTreeMap<usize, f64> {
        let mut buckets = BTreeMap::new();
        for f in features {
            *buckets.entry(feature_bucket(salt, f, dim)).or_insert(0.0) += 1.0;
        }
        buckets
    }

    fn densify(buckets: &BTreeMap<usize, f64>, dim: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; dim];
        for (&i, &w) in buckets {
            v[i] = w;
        }
        normalize(v)
    }

    /// Unnormalized bucket counts behind `embed_text`.
    pub fn text_buckets(&self, text: &str) -> Result<BTreeMap<usize, f64>> {
        Ok(Self::hashed(TEXT_SALT, &Self::text_features(text)?, self.text_dim))
    }

    /// Unnormalized bucket counts behind `embed_text_crossmodal`.
    pub fn crossmodal_buckets(&self, text: &str) -> Result<BTreeMap<usize, f64>> {
        Ok(Self::hashed(IMAGE_SALT, &Self::text_features(text)?, self.image_dim))
    }

    /// Unnormalized bucket counts behind `embed_image`.
    pub fn image_buckets(&self, image_ref: &str) -> Result<BTreeMap<usize, f64>> {
        let bytes = media::load_image_bytes(image_ref)?;
        Ok(Self::hashed(IMAGE_SALT, &Self::image_features(&bytes), self.image_dim))
    }
}

impl Embedder for DeterministicEmbedder {
    fn text_dim(&self) -> usize {
        self.text_dim
    }

    fn image_dim(&self) -> usize {
        self.image_dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Self::densify(&self.text_buckets(text)?, self.text_dim)
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        Self::densify(&self.image_buckets(image_ref)?, self.image_dim)
    }

    fn embed_text_crossmodal(&self, text: &str) -> Result<Vec<f64>> {
        Self::densify(&self.crossmodal_buckets(text)?, self.image_dim)
    }

    fn caption_image(&self, image_ref: &str) -> Result<String> {
        let hash = media::content_hash(&media::load_image_bytes(image_ref)?);
        Ok(self
            .captions
            .get(&hash)
            .cloned()
            .unwrap_or_else(|| format!("image {}", &hash[..8])))
    }
}
