use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{normalize, DiskCache, Embedder};
use crate::error::{Error, Result};
use crate::llm::{ChatTurnMessage, Completion, Gateway};
use crate::media;
use crate::transport::Transport;

const CAPTION_PROMPT: &str =
    "Describe this image in one concise sentence, naming the main subject and its notable attributes.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub text_model: String,
    /// Model for image embeddings and cross-modal text embeddings.
    pub image_model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl RemoteEmbedderConfig {
    /// Reads `M2A_EMBED_BASE_URL`, `M2A_EMBED_TEXT_MODEL`,
    /// `M2A_EMBED_IMAGE_MODEL` and `M2A_EMBED_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let var = |n: &str| std::env::var(n).map_err(|_| Error::Config(format!("{n} is not set")));
        Ok(Self {
            base_url: var("M2A_EMBED_BASE_URL")?,
            text_model: var("M2A_EMBED_TEXT_MODEL")?,
            image_model: var("M2A_EMBED_IMAGE_MODEL")?,
            api_key: std::env::var("M2A_EMBED_API_KEY").ok(),
        })
    }
}

/// Client for a JSON embeddings endpoint (`{"model", "input": [..]}` →
/// `{"data": [{"embedding": [..]}]}`). Images are sent as data URIs.
/// Captions come from a vision-capable chat model through the gateway.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    text_dim: usize,
    image_dim: usize,
    transport: Arc<dyn Transport>,
    captioner: Gateway,
    cache: Option<DiskCache>,
}

impl RemoteEmbedder {
    pub fn new(
        config: RemoteEmbedderConfig,
        text_dim: usize,
        image_dim: usize,
        transport: Arc<dyn Transport>,
        captioner: Gateway,
    ) -> Self {
        Self {
            config,
            text_dim,
            image_dim,
            transport,
            captioner,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn cached<T>(&self, key: String, compute: impl FnOnce() -> Result<T>) -> Result<T>
    where
        T: Serialize + serde::de::DeserializeOwned,
    {
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        let value = compute()?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&key, &value) {
                log::warn!("embedding cache write failed: {e}");
            }
        }
        Ok(value)
    }

    fn call(&self, model: &str, input: Value, dim: usize) -> Result<Vec<f64>> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let resp = self
            .transport
            .post_json(&url, self.config.api_key.as_deref(), &json!({"model": model, "input": [input]}))
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        let raw = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::EmbedFailure("response lacks data[0].embedding".into()))?;
        let v: Vec<f64> = raw
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| Error::EmbedFailure("non-numeric component".into())))
            .collect::<Result<_>>()?;
        if v.len() != dim {
            return Err(Error::EmbedFailure(format!("expected dimension {dim}, got {}", v.len())));
        }
        normalize(v)
    }

    fn text_call(&self, model: &str, kind: &str, text: &str, dim: usize) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        let key = DiskCache::key(&[kind.as_bytes(), model.as_bytes(), text.as_bytes()]);
        self.cached(key, || self.call(model, json!(text), dim))
    }
}

impl Embedder for RemoteEmbedder {
    fn text_dim(&self) -> usize {
        self.text_dim
    }

    fn image_dim(&self) -> usize {
        self.image_dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.text_call(&self.config.text_model, "text", text, self.text_dim)
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        let bytes = media::load_image_bytes(image_ref)?;
        let key = DiskCache::key(&[b"image", self.config.image_model.as_bytes(), media::content_hash(&bytes).as_bytes()]);
        self.cached(key, || {
            let url = media::to_model_url(image_ref)?;
            self.call(&self.config.image_model, json!(url), self.image_dim)
        })
    }

    fn embed_text_crossmodal(&self, text: &str) -> Result<Vec<f64>> {
        self.text_call(&self.config.image_model, "crossmodal", text, self.image_dim)
    }

    fn caption_image(&self, image_ref: &str) -> Result<String> {
        let bytes = media::load_image_bytes(image_ref)?;
        let key = DiskCache::key(&[b"caption", self.captioner.backend_name().as_bytes(), media::content_hash(&bytes).as_bytes()]);
        self.cached(key, || {
            let msgs = [
                ChatTurnMessage::system("You write short, factual image captions."),
                ChatTurnMessage::user_with_images(CAPTION_PROMPT, vec![image_ref.to_string()]),
            ];
            match self.captioner.complete(&msgs, &[]) {
                Ok(Completion::Text { text }) if !text.trim().is_empty() => Ok(text.trim().to_string()),
                Ok(_) => Err(Error::EmbedFailure("captioner returned no text".into())),
                Err(Error::TransportError(e)) => Err(Error::ProviderUnavailable(e)),
                Err(e) => Err(e),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::l2_norm;
    use crate::llm::RuleSet;
    use crate::transport::FnTransport;

    fn embedder(cache: Option<DiskCache>) -> (RemoteEmbedder, Arc<std::sync::atomic::AtomicUsize>) {
        let calls = Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let counter = calls.clone();
        let transport = FnTransport(move |url: &str, body: &Value| {
            counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            assert!(url.ends_with("/embeddings"));
            let dim = if body["model"] == "txt" { 4 } else { 3 };
            Ok(json!({"data": [{"embedding": vec![2.0; dim]}]}))
        });
        let captioner = Gateway::scripted(RuleSet::from_json(r#"{"default": {"text": "a corgi on grass"}}"#).unwrap());
        let mut e = RemoteEmbedder::new(
            RemoteEmbedderConfig {
                base_url: "http://emb.local/v1".into(),
                text_model: "txt".into(),
                image_model: "img".into(),
                api_key: None,
            },
            4,
            3,
            Arc::new(transport),
            captioner,
        );
        if let Some(c) = cache {
            e = e.with_cache(c);
        }
        (e, calls)
    }

    #[test]
    fn normalizes_and_checks_dims() {
        let (e, _) = embedder(None);
        let v = e.embed_text("hello").unwrap();
        assert!((l2_norm(&v) - 1.0).abs() < 1e-12);
        assert_eq!(e.embed_text_crossmodal("hello").unwrap().len(), 3);
        assert!(matches!(e.embed_text(" "), Err(Error::EmptyInput)));
    }

    #[test]
    fn caption_passes_through_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("x.jpg");
        std::fs::write(&img, b"bytes").unwrap();
        let img = img.to_string_lossy().to_string();
        let (e, calls) = embedder(Some(DiskCache::open(dir.path().join("cache")).unwrap()));
        assert_eq!(e.caption_image(&img).unwrap(), "a corgi on grass");
        e.embed_text("hello").unwrap();
        e.embed_text("hello").unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 1);
    }

    #[test]
    fn transport_failure_is_provider_unavailable() {
        let e = RemoteEmbedder::new(
            RemoteEmbedderConfig {
                base_url: "http://x".into(),
                text_model: "t".into(),
                image_model: "i".into(),
                api_key: None,
            },
            2,
            2,
            Arc::new(FnTransport(|_: &str, _: &Value| Err(Error::TransportError("down".into())))),
            Gateway::scripted(RuleSet::default()),
        );
        assert!(matches!(e.embed_text("x"), Err(Error::ProviderUnavailable(_))));
    }
}
