//! Tri-path hybrid retrieval over the semantic store, fused with Reciprocal
//! Rank Fusion.
//!
//! Each path ranks candidates independently (best rank = 1):
//! - dense: cosine of the query text embedding with every entry's dense vector;
//! - sparse: BM25 of the query terms, entries with a zero score are not hits;
//! - visual: cosine in image space, over image-bearing entries only, using the
//!   query image when present and the cross-modal text embedding otherwise.
//!
//! Each ranking is cut to `top_k_per_path`, then an entry's fused score is
//! `Σ 1/(k + rank)` over the paths where it survived the cut. Ties on any
//! ranking are broken by `created_at` (newest first), then `entry_id`.

pub mod bm25;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::dot;
use crate::error::{Error, Result};
use crate::semantic_store::{CorpusStats, SemanticEntry, SemanticStore, StoredEntry};

pub use bm25::Bm25Params;

pub const DEFAULT_RRF_K: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalPath {
    Dense,
    Sparse,
    Visual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathToggles {
    pub dense: bool,
    pub sparse: bool,
    pub visual: bool,
}

impl Default for PathToggles {
    fn default() -> Self {
        Self {
            dense: true,
            sparse: true,
            visual: true,
        }
    }
}

impl PathToggles {
    pub fn dense_only() -> Self {
        Self {
            dense: true,
            sparse: false,
            visual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_rrf_k")]
    pub rrf_k: f64,
    #[serde(default = "default_top_k")]
    pub top_k_per_path: usize,
    #[serde(default = "default_top_k")]
    pub final_k: usize,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub paths: PathToggles,
    /// Append the query image's caption to `q_text` on the dense path.
    #[serde(default)]
    pub query_caption_augmentation: bool,
}

fn default_rrf_k() -> f64 {
    DEFAULT_RRF_K
}
fn default_top_k() -> usize {
    10
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            rrf_k: DEFAULT_RRF_K,
            top_k_per_path: 10,
            final_k: 10,
            bm25: Bm25Params::default(),
            paths: PathToggles::default(),
            query_caption_augmentation: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rrf_k.is_finite() && self.rrf_k >= 0.0) {
            return Err(Error::Config("retrieval.rrf_k must be a non-negative number".into()));
        }
        if self.top_k_per_path == 0 {
            return Err(Error::Config("retrieval.top_k_per_path must be positive".into()));
        }
        if self.final_k == 0 {
            return Err(Error::Config("retrieval.final_k must be positive".into()));
        }
        if self.bm25.k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25.b) {
            return Err(Error::Config("retrieval.bm25: k1 must be >= 0 and b within [0, 1]".into()));
        }
        if !(self.paths.dense || self.paths.sparse || self.paths.visual) {
            return Err(Error::Config("retrieval.paths: at least one path must be enabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub q_text: String,
    #[serde(default)]
    pub q_image: Option<String>,
    pub top_k_per_path: usize,
    pub final_k: usize,
}

impl Query {
    pub fn text(q_text: impl Into<String>) -> Self {
        Self {
            q_text: q_text.into(),
            q_image: None,
            top_k_per_path: 10,
            final_k: 10,
        }
    }

    pub fn with_image(mut self, image_ref: impl Into<String>) -> Self {
        self.q_image = Some(image_ref.into());
        self
    }

    pub fn with_final_k(mut self, k: usize) -> Self {
        self.final_k = k;
        self
    }

    pub fn has_text(&self) -> bool {
        !self.q_text.trim().is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.has_text() && self.q_image.is_none() {
            return Err(Error::InvalidRequest("query needs text or an image".into()));
        }
        if self.top_k_per_path == 0 || self.final_k == 0 {
            return Err(Error::InvalidRequest("top_k_per_path and final_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub entry_id: String,
    pub rank_dense: Option<usize>,
    pub rank_sparse: Option<usize>,
    pub rank_visual: Option<usize>,
    pub score_rrf: f64,
    pub score_dense: Option<f64>,
    pub score_sparse: Option<f64>,
    pub score_visual: Option<f64>,
    pub entry: SemanticEntry,
}

pub fn score_dense(query_vec: &[f64], entry: &StoredEntry) -> f64 {
    dot(query_vec, &entry.vectors.v_text_dense)
}

pub fn score_sparse(terms: &BTreeSet<String>, stats: &CorpusStats, entry: &StoredEntry, params: Bm25Params) -> f64 {
    bm25::score(terms, stats, &entry.vectors.sparse_terms, params)
}

/// `None` when the entry has no image, which removes it from the visual path.
pub fn score_visual(query_img_vec: &[f64], entry: &StoredEntry) -> Option<f64> {
    entry.vectors.v_img.as_ref().map(|v| dot(query_img_vec, v))
}

fn tie_break(a: &StoredEntry, b: &StoredEntry) -> Ordering {
    b.entry
        .created_at
        .cmp(&a.entry.created_at)
        .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
}

/// Orders `(index, score)` pairs best-first and keeps the top `k`.
pub fn rank_path(mut scored: Vec<(usize, f64)>, entries: &[Arc<StoredEntry>], k: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then_with(|| tie_break(&entries[*ia], &entries[*ib])));
    scored.truncate(k);
    scored
}

/// Fused score and 1-based ranks per candidate index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fused {
    pub score: f64,
    pub ranks: [Option<usize>; 3],
    pub raw: [Option<f64>; 3],
}

fn path_slot(p: RetrievalPath) -> usize {
    match p {
        RetrievalPath::Dense => 0,
        RetrievalPath::Sparse => 1,
        RetrievalPath::Visual => 2,
    }
}

/// Reciprocal rank fusion of already-truncated rankings.
pub fn rrf_fuse(rankings: &[(RetrievalPath, Vec<(usize, f64)>)], k: f64) -> HashMap<usize, Fused> {
    let mut fused: HashMap<usize, Fused> = HashMap::new();
    for (path, ranking) in rankings {
        let slot = path_slot(*path);
        for (pos, &(idx, raw)) in ranking.iter().enumerate() {
            let rank = pos + 1;
            let f = fused.entry(idx).or_default();
            f.score += 1.0 / (k + rank as f64);
            f.ranks[slot] = Some(rank);
            f.raw[slot] = Some(raw);
        }
    }
    fused
}

pub struct HybridRetriever {
    store: Arc<SemanticStore>,
    config: RetrievalConfig,
    calls: AtomicU64,
}

impl std::fmt::Debug for HybridRetriever {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridRetriever").field("config", &self.config).finish()
    }
}

impl HybridRetriever {
    pub fn new(store: Arc<SemanticStore>, config: RetrievalConfig) -> Self {
        Self {
            store,
            config,
            calls: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<SemanticStore> {
        &self.store
    }

    /// Number of `retrieve` calls served so far.
    pub fn call_count(&self) -> u64 {
        self.calls.load(AtomicOrdering::Relaxed)
    }

    /// A query with this retriever's default cut-offs.
    pub fn query(&self, q_text: impl Into<String>) -> Query {
        Query {
            top_k_per_path: self.config.top_k_per_path,
            final_k: self.config.final_k,
            ..Query::text(q_text)
        }
    }

    pub fn retrieve(&self, conversation_id: &str, q: &Query) -> Result<Vec<RankedResult>> {
        self.calls.fetch_add(1, AtomicOrdering::Relaxed);
        q.validate()?;
        let snapshot = self.store.snapshot(conversation_id)?;
        let entries = &snapshot.entries;
        if entries.is_empty() {
            return Ok(Vec::new());
        }
        let embedder = self.store.embedder();
        let paths = self.config.paths;
        let mut rankings = Vec::new();

        if q.has_text() && paths.dense {
            let mut text = q.q_text.clone();
            if let (true, Some(img)) = (self.config.query_caption_augmentation, &q.q_image) {
                text = format!("{text} {}", embedder.caption_image(img)?);
            }
            let qv = embedder.embed_text(&text)?;
            let scored = entries.iter().enumerate().map(|(i, e)| (i, score_dense(&qv, e))).collect();
            rankings.push((RetrievalPath::Dense, rank_path(scored, entries, q.top_k_per_path)));
        }
        if q.has_text() && paths.sparse {
            let terms = bm25::query_terms(&q.q_text);
            let scored = entries
                .iter()
                .enumerate()
                .map(|(i, e)| (i, score_sparse(&terms, &snapshot.stats, e, self.config.bm25)))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            rankings.push((RetrievalPath::Sparse, rank_path(scored, entries, q.top_k_per_path)));
        }
        if paths.visual && entries.iter().any(|e| e.vectors.v_img.is_some()) {
            let qv = match &q.q_image {
                Some(img) => Some(embedder.embed_image(img)?),
                None if q.has_text() => Some(embedder.embed_text_crossmodal(&q.q_text)?),
                None => None,
            };
            if let Some(qv) = qv {
                let scored = entries
                    .iter()
                    .enumerate()
                    .filter_map(|(i, e)| score_visual(&qv, e).map(|s| (i, s)))
                    .collect();
                rankings.push((RetrievalPath::Visual, rank_path(scored, entries, q.top_k_per_path)));
            }
        }

        let fused = rrf_fuse(&rankings, self.config.rrf_k);
        let mut results: Vec<(usize, Fused)> = fused.into_iter().collect();
        results.sort_by(|(ia, fa), (ib, fb)| {
            fb.score
                .total_cmp(&fa.score)
                .then_with(|| tie_break(&entries[*ia], &entries[*ib]))
        });
        results.truncate(q.final_k);
        Ok(results
            .into_iter()
            .map(|(i, f)| RankedResult {
                entry_id: entries[i].entry.entry_id.clone(),
                rank_dense: f.ranks[0],
                rank_sparse: f.ranks[1],
                rank_visual: f.ranks[2],
                score_rrf: f.score,
                score_dense: f.raw[0],
                score_sparse: f.raw[1],
                score_visual: f.raw[2],
                entry: entries[i].entry.clone(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_first_scores_three_over_61() {
        let lists = vec![
            (RetrievalPath::Dense, vec![(7, 0.9)]),
            (RetrievalPath::Sparse, vec![(7, 2.0)]),
            (RetrievalPath::Visual, vec![(7, 0.5)]),
        ];
        let f = rrf_fuse(&lists, 60.0);
        assert_eq!(f[&7].score, 3.0 / 61.0);
        assert_eq!(f[&7].ranks, [Some(1), Some(1), Some(1)]);
    }

    #[test]
    fn triple_second_beats_single_first() {
        let lists = vec![
            (RetrievalPath::Dense, vec![(1, 0.9), (2, 0.8)]),
            (RetrievalPath::Sparse, vec![(3, 2.0), (2, 1.0)]),
            (RetrievalPath::Visual, vec![(4, 0.5), (2, 0.4)]),
        ];
        let f = rrf_fuse(&lists, 60.0);
        assert_eq!(f[&1].score, 1.0 / 61.0);
        assert_eq!(f[&2].score, 3.0 / 62.0);
        assert!(f[&2].score > f[&1].score);
    }

    #[test]
    fn query_validation() {
        assert!(Query::text("  ").validate().is_err());
        assert!(Query::text("").with_image("x.png").validate().is_ok());
        assert!(Query::text("a").with_final_k(0).validate().is_err());
    }
}
