//! Image references are URIs: `file://` paths, bare paths, `data:` URIs, or
//! `http(s)://` URLs. Bytes are never stored inline in either memory layer.

use std::path::Path;

use base64::Engine;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::transport::HttpTransport;

pub fn load_image_bytes(uri: &str) -> Result<Vec<u8>> {
    if let Some(rest) = uri.strip_prefix("data:") {
        let (_, payload) = rest
            .split_once(";base64,")
            .ok_or_else(|| Error::ImageUnreadable(format!("{uri}: unsupported data URI")))?;
        return base64::engine::general_purpose::STANDARD
            .decode(payload)
            .map_err(|e| Error::ImageUnreadable(format!("data URI: {e}")));
    }
    if uri.starts_with("http://") || uri.starts_with("https://") {
        return HttpTransport::new()
            .get_bytes(uri)
            .map_err(|e| Error::ImageUnreadable(format!("{uri}: {e}")));
    }
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    std::fs::read(path).map_err(|e| Error::ImageUnreadable(format!("{uri}: {e}")))
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn mime_for(uri: &str) -> &'static str {
    let ext = Path::new(uri)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

/// Converts an image reference into something a remote model can consume:
/// remote URLs pass through, everything else is inlined as a data URI.
pub fn to_model_url(uri: &str) -> Result<String> {
    if uri.starts_with("http://") || uri.starts_with("https://") || uri.starts_with("data:") {
        return Ok(uri.to_string());
    }
    let bytes = load_image_bytes(uri)?;
    Ok(format!(
        "data:{};base64,{}",
        mime_for(uri),
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}
