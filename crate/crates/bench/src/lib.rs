//! Seeded workloads shared by the benchmarks.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use m2a_core::{
    AgentSettings, DeterministicEmbedder, EvidenceRange, Gateway, ManualEdit, NewMessage, RuleSet, System,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONVERSATION: &str = "bench";

const VOCAB: [&str; 40] = [
    "alpine", "bakery", "cobalt", "dune", "ember", "fjord", "garnet", "harbor", "indigo", "jasmine", "kelp", "lantern",
    "meadow", "nectar", "orchid", "pebble", "quartz", "raven", "saffron", "tundra", "umber", "violet", "willow", "yarrow",
    "dog", "sister", "train", "garden", "concert", "recipe", "museum", "office", "beach", "camera", "guitar", "novel",
    "bicycle", "market", "winter", "festival",
];

pub fn sentence(rng: &mut impl Rng, words: usize) -> String {
    (0..words).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn message(i: u64, text: String) -> NewMessage {
    NewMessage {
        session_id: "session_1".into(),
        timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(i as i64),
        speaker: "user".into(),
        text,
        image_refs: vec![],
    }
}

/// An in-memory system holding `entries` memories, a tenth of them with images.
pub fn populated_system(entries: usize, seed: u64) -> System {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedder = Arc::new(DeterministicEmbedder::new(384, 128));
    let sys = System::in_memory(embedder, Gateway::scripted(RuleSet::default()), &AgentSettings::default())
        .expect("default settings are valid");
    for i in 0..entries as u64 {
        sys.memory
            .ingest_turn(CONVERSATION, message(i, sentence(&mut rng, 12)))
            .expect("append");
        let image_ref = (i % 10 == 0).then(|| format!("data:image/png;base64,{}", ["AAAA", "AQID", "BAUG"][i as usize % 3]));
        sys.memory
            .apply_manual(
                CONVERSATION,
                ManualEdit::Add {
                    content: sentence(&mut rng, 8),
                    evidence_ids: vec![EvidenceRange::single(i)],
                    kind: None,
                    image_ref,
                },
            )
            .expect("add");
    }
    sys
}
