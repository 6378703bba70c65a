//! Text, image and cross-modal encoders plus the image captioner.

mod cache;
mod deterministic;
mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::DiskCache;
pub use deterministic::{feature_bucket, DeterministicEmbedder, IMAGE_SALT, TEXT_SALT};
pub use remote::{RemoteEmbedder, RemoteEmbedderConfig};

pub trait Embedder: Send + Sync {
    fn text_dim(&self) -> usize;
    fn image_dim(&self) -> usize;
    /// Dense text embedding, unit norm, dimension `text_dim`.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    /// Image embedding, unit norm, dimension `image_dim`.
    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>>;
    /// Text embedded into the image space, for text-to-image similarity.
    fn embed_text_crossmodal(&self, text: &str) -> Result<Vec<f64>>;
    fn caption_image(&self, image_ref: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    #[serde(default = "default_text_dim")]
    pub text_dim: usize,
    #[serde(default = "default_image_dim")]
    pub image_dim: usize,
    #[serde(default = "default_provider")]
    pub provider: ProviderKind,
    /// On-disk cache for remote embeddings and captions.
    #[serde(default)]
    pub cache_dir: Option<std::path::PathBuf>,
}

fn default_text_dim() -> usize {
    384
}
fn default_image_dim() -> usize {
    768
}
fn default_provider() -> ProviderKind {
    ProviderKind::Deterministic
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            text_dim: default_text_dim(),
            image_dim: default_image_dim(),
            provider: default_provider(),
            cache_dir: None,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.text_dim == 0 {
            return Err(Error::Config("embedder.text_dim must be positive".into()));
        }
        if self.image_dim == 0 {
            return Err(Error::Config("embedder.image_dim must be positive".into()));
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit length. Fails on the zero vector.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = l2_norm(&v);
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::EmbedFailure("cannot normalize a zero or non-finite vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}
