//! Okapi BM25 over the sparse term maps of semantic entries.
//!
//! score(q, d) = Σ_{t ∈ unique(q) ∩ d} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − n_t + 0.5) / (n_t + 0.5))
//!
//! The `1 +` inside the logarithm keeps idf positive even when a term occurs
//! in more than half the documents, so no extra floor is applied.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::semantic_store::CorpusStats;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

pub fn idf(doc_count: u64, doc_freq: u64) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Distinct query terms; repeated words count once.
pub fn query_terms(q_text: &str) -> BTreeSet<String> {
    tokenize(q_text).into_iter().collect()
}

pub fn score(
    terms: &BTreeSet<String>,
    stats: &CorpusStats,
    doc_terms: &BTreeMap<String, u32>,
    params: Bm25Params,
) -> f64 {
    if stats.doc_count == 0 || stats.avg_doc_len <= 0.0 {
        return 0.0;
    }
    let doc_len: f64 = doc_terms.values().map(|&n| n as f64).sum();
    let norm = params.k1 * (1.0 - params.b + params.b * doc_len / stats.avg_doc_len);
    terms
        .iter()
        .filter_map(|t| {
            let tf = *doc_terms.get(t)? as f64;
            let df = stats.term_doc_freq.get(t).copied().unwrap_or(0);
            Some(idf(stats.doc_count, df) * tf * (params.k1 + 1.0) / (tf + norm))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::term_frequencies;

    fn single_doc_stats(doc: &BTreeMap<String, u32>) -> CorpusStats {
        CorpusStats {
            doc_count: 1,
            avg_doc_len: doc.values().sum::<u32>() as f64,
            term_doc_freq: doc.keys().map(|k| (k.clone(), 1)).collect(),
        }
    }

    #[test]
    fn hand_derived_single_entry() {
        // N=1, n_t=1: idf = ln(1 + 0.5/1.5) = ln(4/3); |d| = avgdl so the
        // tf factor is 2.2/2.2 = 1.
        let doc = term_frequencies("bobo corgi likes blue toys");
        let s = score(&query_terms("bobo"), &single_doc_stats(&doc), &doc, Bm25Params::default());
        assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-12, "{s}");
        assert!((s - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn duplicate_query_terms_count_once() {
        let doc = term_frequencies("bobo corgi likes blue toys");
        let stats = single_doc_stats(&doc);
        let p = Bm25Params::default();
        assert_eq!(score(&query_terms("bobo bobo"), &stats, &doc, p), score(&query_terms("bobo"), &stats, &doc, p));
    }

    #[test]
    fn no_overlap_is_zero() {
        let doc = term_frequencies("bobo corgi");
        assert_eq!(score(&query_terms("cat"), &single_doc_stats(&doc), &doc, Bm25Params::default()), 0.0);
    }

    #[test]
    fn idf_positive_for_common_terms() {
        assert!(idf(10, 10) > 0.0);
        assert!(idf(10, 9) > 0.0);
        assert!(idf(10, 1) > idf(10, 5));
    }
}
