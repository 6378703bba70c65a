use std::io::Write as _;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use m2a_core::corpus::apportion;
use m2a_core::embedding::l2_norm;
use m2a_core::retrieval::{rrf_fuse, RetrievalPath};
use m2a_core::synthesis::interpolate;
use m2a_core::{
    AgentSettings, DeterministicEmbedder, Embedder, EvidenceRange, Gateway, ManualEdit, NewMessage, Query,
    RawMessageStore, RuleSet, System,
};
use proptest::prelude::*;

fn msg(i: usize) -> NewMessage {
    NewMessage {
        session_id: "s".into(),
        timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        speaker: "A".into(),
        text: format!("message number {i}"),
        image_refs: vec![],
    }
}

fn words() -> impl Strategy<Value = String> {
    proptest::collection::vec("[a-z]{1,8}", 1..12).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn text_embeddings_have_unit_norm(text in words(), dim in 8usize..512) {
        let v = DeterministicEmbedder::new(dim, 16).embed_text(&text).unwrap();
        prop_assert_eq!(v.len(), dim);
        prop_assert!((l2_norm(&v) - 1.0).abs() < 1e-9);
    }

    /// Fusion sees ranks only: rescaling or shifting the raw scores changes nothing.
    #[test]
    fn rrf_ignores_score_magnitudes(
        dense in proptest::collection::vec(0usize..30, 0..10),
        sparse in proptest::collection::vec(0usize..30, 0..10),
        scale in 1e-6f64..1e6,
        shift in -100.0f64..100.0,
    ) {
        let ranked = |ids: &[usize], f: &dyn Fn(f64) -> f64| -> Vec<(usize, f64)> {
            let mut seen = std::collections::BTreeSet::new();
            ids.iter()
                .filter(|i| seen.insert(**i))
                .enumerate()
                .map(|(pos, &i)| (i, f(10.0 - pos as f64)))
                .collect()
        };
        let a = rrf_fuse(&[
            (RetrievalPath::Dense, ranked(&dense, &|s| s)),
            (RetrievalPath::Sparse, ranked(&sparse, &|s| s)),
        ], 60.0);
        let b = rrf_fuse(&[
            (RetrievalPath::Dense, ranked(&dense, &|s| s * scale + shift)),
            (RetrievalPath::Sparse, ranked(&sparse, &|s| s * scale)),
        ], 60.0);
        prop_assert_eq!(a.len(), b.len());
        for (idx, fa) in &a {
            let fb = &b[idx];
            prop_assert_eq!(fa.score, fb.score);
            prop_assert_eq!(fa.ranks, fb.ranks);
        }
    }

    #[test]
    fn fetch_range_concatenates(n in 2usize..40, cuts in proptest::collection::vec(0u64..40, 3)) {
        let raw = RawMessageStore::in_memory();
        for i in 0..n {
            raw.append("c", msg(i)).unwrap();
        }
        let mut c: Vec<u64> = cuts.iter().map(|x| x % n as u64).collect();
        c.sort();
        let (a, m, b) = (c[0], c[1], c[2]);
        prop_assume!(m < b);
        let whole = raw.fetch_range("c", EvidenceRange::new(a, b).unwrap()).unwrap();
        let mut parts = raw.fetch_range("c", EvidenceRange::new(a, m).unwrap()).unwrap();
        parts.extend(raw.fetch_range("c", EvidenceRange::new(m + 1, b).unwrap()).unwrap());
        prop_assert_eq!(&whole, &parts);
        prop_assert_eq!(whole.len() as u64, b - a + 1);
        prop_assert!(whole.iter().zip(a..).all(|(m, id)| m.id == id));
    }

    /// Cutting the log file anywhere leaves a readable prefix of what was written.
    #[test]
    fn truncated_log_recovers_a_prefix(n in 1usize..20, cut_frac in 0.0f64..1.0, garbage in proptest::collection::vec(any::<u8>(), 0..8)) {
        let dir = tempfile::tempdir().unwrap();
        let original = {
            let raw = RawMessageStore::open(dir.path()).unwrap();
            for i in 0..n {
                raw.append("c", msg(i)).unwrap();
            }
            raw.read_all("c").unwrap()
        };
        let path = RawMessageStore::open(dir.path()).unwrap().log_path("c").unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        let cut = (len as f64 * cut_frac) as u64;
        let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(cut).unwrap();
        drop(f);
        // A torn write may leave a partial, non-newline-terminated record.
        if !garbage.contains(&b'\n') {
            std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(&garbage).unwrap();
        }
        let raw = RawMessageStore::open(dir.path()).unwrap();
        let recovered = raw.read_all("c").unwrap();
        prop_assert!(recovered.len() <= original.len());
        prop_assert_eq!(&recovered[..], &original[..recovered.len()]);
        let next = raw.append("c", msg(99)).unwrap();
        prop_assert_eq!(next, recovered.len() as u64);
    }

    #[test]
    fn interpolation_is_strictly_inside_and_increasing(start in -1_000_000i128..1_000_000, width in 1i128..1_000_000, n in 0usize..12) {
        match interpolate(start, start + width, n) {
            Ok(taus) => {
                prop_assert_eq!(taus.len(), n);
                let mut prev = start;
                for (j, &t) in taus.iter().enumerate() {
                    prop_assert!(t > prev);
                    prop_assert_eq!(t, start + ((j as i128 + 1) * width).div_euclid(n as i128 + 1));
                    prev = t;
                }
                prop_assert!(prev < start + width || n == 0);
            }
            Err(_) => prop_assert!(width < n as i128 + 1),
        }
    }

    #[test]
    fn apportion_conserves_and_stays_near_quota(total in 0usize..200, weights in proptest::collection::vec(0usize..10, 1..6)) {
        let got = apportion(total, &weights);
        let sum: usize = weights.iter().sum();
        prop_assert_eq!(got.len(), weights.len());
        if sum == 0 {
            prop_assert!(got.iter().all(|&g| g == 0));
        } else {
            prop_assert_eq!(got.iter().sum::<usize>(), total);
            for (g, w) in got.iter().zip(&weights) {
                let quota = total as f64 * *w as f64 / sum as f64;
                prop_assert!((*g as f64 - quota).abs() < 1.0, "{} vs {}", g, quota);
            }
        }
    }

    #[test]
    fn apportion_is_exact_on_multiples(m in 0usize..20) {
        prop_assert_eq!(apportion(20 * m, &[2, 3, 1, 4]), vec![4 * m, 6 * m, 2 * m, 8 * m]);
    }
}

fn system_with(facts: &[String]) -> System {
    let e: Arc<dyn Embedder> = Arc::new(DeterministicEmbedder::new(128, 32));
    let sys = System::in_memory(e, Gateway::scripted(RuleSet::default()), &AgentSettings::default()).unwrap();
    for (i, f) in facts.iter().enumerate() {
        sys.raw.append("c", msg(i)).unwrap();
        sys.memory
            .apply_manual(
                "c",
                ManualEdit::Add {
                    content: f.clone(),
                    evidence_ids: vec![EvidenceRange::single(i as u64)],
                    kind: None,
                    image_ref: None,
                },
            )
            .unwrap();
    }
    sys
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn retrieval_is_deterministic(facts in proptest::collection::vec(words(), 1..15), q in words()) {
        let a = system_with(&facts);
        let b = system_with(&facts);
        let query = Query::text(q);
        let first = a.retriever.retrieve("c", &query).unwrap();
        prop_assert_eq!(&first, &a.retriever.retrieve("c", &query).unwrap());
        prop_assert_eq!(&first, &b.retriever.retrieve("c", &query).unwrap());
        prop_assert!(first.len() <= 10);
        prop_assert!(first.windows(2).all(|w| w[0].score_rrf >= w[1].score_rrf));
    }
}
