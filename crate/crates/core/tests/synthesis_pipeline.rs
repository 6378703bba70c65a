use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use m2a_core::corpus::{
    self, dia_id, BaseCategory, Conversation, Corpus, QaCategory, QaItem, QaSource, Session, Turn, VisualSubtype,
};
use m2a_core::synthesis::{
    generate_bundle, inject_vqa, merge_into_host, turn_positions, validate_bundle, CatalogConcept, ConceptGroup,
    GeneratedBundle, GeneratedQa, GeneratedSession, GeneratedTurn, GenerationSpec, VqaBank, VqaPair,
};
use m2a_core::{Error, Gateway, RuleSet};
use serde_json::json;

fn host() -> Conversation {
    let day = |d| Utc.with_ymd_and_hms(2023, 5, d, 10, 0, 0).unwrap();
    let session = |s: usize, d: u32, n: usize| Session {
        date_time: day(d),
        turns: (1..=n)
            .map(|t| Turn {
                dia_id: dia_id(s, t),
                speaker: if t % 2 == 1 { "Ann" } else { "Ben" }.into(),
                text: format!("host session {s} turn {t}"),
                img_url: vec![],
                blip_caption: None,
            })
            .collect(),
    };
    Conversation {
        sample_id: "host-1".into(),
        speaker_a: "Ann".into(),
        speaker_b: "Ben".into(),
        sessions: vec![session(1, 1, 3), session(2, 9, 2), session(3, 10, 2)],
        qa: vec![QaItem {
            question: "What did Ben say last?".into(),
            answer: "host session 3 turn 2".into(),
            evidence: vec!["D3:2".into()],
            category: QaCategory::Base(BaseCategory::SingleHop),
            source: QaSource::Host,
        }],
        synthesis: None,
    }
}

fn group() -> ConceptGroup {
    ConceptGroup {
        concepts: ["mochi", "kiki", "bolt"]
            .iter()
            .map(|n| CatalogConcept {
                name: n.to_string(),
                images: vec![format!("cat/{n}/a.jpg"), format!("cat/{n}/b.jpg")],
            })
            .collect(),
    }
}

/// A bundle with `sessions` sessions of `turns` turns and QA split per `counts`
/// (multi_hop, temporal, open_domain, single_hop).
fn bundle(sessions: usize, turns: usize, counts: [usize; 4], grounded: bool) -> GeneratedBundle {
    let tags = if grounded { "<mochi> <kiki> <bolt>" } else { "<mochi> <kiki>" };
    let sessions: Vec<GeneratedSession> = (1..=sessions)
        .map(|s| GeneratedSession {
            turns: (1..=turns)
                .map(|t| GeneratedTurn {
                    speaker: if t % 2 == 1 { "Ann" } else { "Ben" }.into(),
                    text: if s == 1 && t == 1 {
                        format!("Look who I met: {tags}")
                    } else {
                        format!("bundle {s}.{t}")
                    },
                    images: if t == 2 { vec![format!("cat/mochi/{}.jpg", if s % 2 == 0 { "a" } else { "b" })] } else { vec![] },
                })
                .collect(),
        })
        .collect();
    let mut qa = Vec::new();
    for (cat, n) in BaseCategory::ALL.iter().zip(counts) {
        for i in 0..n {
            qa.push(GeneratedQa {
                question: format!("{} question {i}?", cat.as_str()),
                answer: format!("answer {i}"),
                category: *cat,
                evidence: vec![dia_id(1, 2)],
            });
        }
    }
    GeneratedBundle { sessions, qa }
}

fn scripted(bundle: &GeneratedBundle) -> Gateway {
    let rules = json!({"default": {"text": serde_json::to_string(bundle).unwrap()}});
    Gateway::scripted(RuleSet::from_json(&rules.to_string()).unwrap())
}

fn spec() -> GenerationSpec {
    GenerationSpec::new("Ann", "Ben")
}

#[test]
fn ratio_4_6_2_8_bundle_accepted() {
    let b = bundle(5, 6, [4, 6, 2, 8], true);
    assert_eq!(generate_bundle(&group(), &spec(), &scripted(&b)).unwrap(), b);
}

#[test]
fn seven_sessions_rejected() {
    let b = bundle(7, 6, [4, 6, 2, 8], true);
    match generate_bundle(&group(), &spec(), &scripted(&b)) {
        Err(Error::GenerationInvalid(v)) => assert!(v.iter().any(|m| m.contains("session count")), "{v:?}"),
        other => panic!("expected GenerationInvalid, got {other:?}"),
    }
}

#[test]
fn missing_concept_tag_rejected() {
    let b = bundle(5, 6, [4, 6, 2, 8], false);
    match generate_bundle(&group(), &spec(), &scripted(&b)) {
        Err(Error::GenerationInvalid(v)) => assert!(v.iter().any(|m| m.contains("grounding") && m.contains("<bolt>")), "{v:?}"),
        other => panic!("expected GenerationInvalid, got {other:?}"),
    }
}

#[test]
fn corrective_reask_can_recover() {
    let good = bundle(5, 6, [4, 6, 2, 8], true);
    let bad = bundle(5, 6, [8, 6, 2, 4], true);
    let rules = json!({"rules": [
        {"when": {"last_contains": "rejected"}, "respond": {"text": serde_json::to_string(&good).unwrap()}}
    ], "default": {"text": serde_json::to_string(&bad).unwrap()}});
    let g = Gateway::scripted(RuleSet::from_json(&rules.to_string()).unwrap());
    assert_eq!(generate_bundle(&group(), &spec(), &g).unwrap(), good);
}

#[test]
fn validator_reports_turn_bounds_and_foreign_images() {
    let mut b = bundle(5, 4, [4, 6, 2, 8], true);
    b.sessions[1].turns[0].images = vec!["elsewhere.jpg".into()];
    let v = validate_bundle(&b, &group(), &spec());
    assert_eq!(v.iter().filter(|m| m.contains("turns, outside")).count(), 5, "{v:?}");
    assert!(v.iter().any(|m| m.contains("elsewhere.jpg")));
}

#[test]
fn merge_conserves_turns_and_orders_sessions() {
    let h = host();
    let b = bundle(6, 5, [4, 6, 2, 8], true);
    let m = merge_into_host(&h, &b, None).unwrap();
    // Widest gap is day 1 -> day 9.
    assert_eq!(m.gap_index, 0);
    assert_eq!(m.injected_sessions, vec![2, 3, 4, 5, 6, 7]);
    let c = &m.conversation;
    assert_eq!(c.turn_count(), h.turn_count() + 30);
    assert!(c.sessions.windows(2).all(|w| w[0].date_time < w[1].date_time));
    // Day offsets follow 1 + j * 8/7.
    for (j, s) in c.sessions[1..7].iter().enumerate() {
        let days = (s.date_time - h.sessions[0].date_time).num_nanoseconds().unwrap() as f64 / 86_400e9;
        assert!((days - (j + 1) as f64 * 8.0 / 7.0).abs() < 1e-9, "session {j}: {days}");
    }
    let mut errors = Vec::new();
    corpus::validate_conversation(c, &mut errors);
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn merge_remaps_evidence_to_the_same_text() {
    let h = host();
    let b = bundle(5, 5, [4, 6, 2, 8], true);
    let c = merge_into_host(&h, &b, Some(1)).unwrap().conversation;
    let texts: BTreeMap<&str, &str> = c.turns().map(|(_, _, t)| (t.dia_id.as_str(), t.text.as_str())).collect();
    // Host QA cited D3:2, which moved behind the five injected sessions.
    assert_eq!(c.qa[0].evidence, vec!["D8:2".to_string()]);
    assert_eq!(texts["D8:2"], "host session 3 turn 2");
    for qa in &c.qa[1..] {
        assert_eq!(qa.source, QaSource::Generated);
        assert!(matches!(qa.category, QaCategory::VisualCentric(VisualSubtype::Aligned(_))));
        assert_eq!(texts[qa.evidence[0].as_str()], "bundle 1.2");
    }
    let pos = turn_positions(&c);
    assert_eq!(pos["D1:1"], 0);
    assert_eq!(pos.len(), c.turn_count());
}

#[test]
fn merging_an_empty_bundle_is_identity() {
    let merged = merge_into_host(&host(), &bundle(5, 5, [4, 6, 2, 8], true), None).unwrap().conversation;
    let again = merge_into_host(&merged, &GeneratedBundle::default(), None).unwrap().conversation;
    assert_eq!(again, merged);
}

#[test]
fn merge_into_a_one_second_gap_fails() {
    let mut h = host();
    h.sessions[1].date_time = h.sessions[0].date_time + chrono::Duration::nanoseconds(3);
    let b = bundle(5, 5, [4, 6, 2, 8], true);
    assert!(matches!(merge_into_host(&h, &b, Some(0)), Err(Error::DegenerateWindow { .. })));
}

fn bank(images: &[&str]) -> VqaBank {
    VqaBank(
        images
            .iter()
            .map(|i| {
                (
                    i.to_string(),
                    VqaPair {
                        question: format!("What is shown in {i}?"),
                        answer: "a cat".into(),
                    },
                )
            })
            .collect(),
    )
}

#[test]
fn vqa_single_match_cites_its_turn() {
    let mut c = host();
    c.sessions[1].turns[1].img_url = vec!["pics/x.jpg".into()];
    let before = c.qa.len();
    assert_eq!(inject_vqa(&mut c, &bank(&["pics/x.jpg", "pics/unused.jpg"])), 1);
    let q = &c.qa[before];
    assert_eq!(q.evidence, vec!["D2:2".to_string()]);
    assert_eq!(q.source, QaSource::InjectedVqa);
    assert_eq!(q.category, QaCategory::VisualCentric(VisualSubtype::VisualRetrieval));
}

#[test]
fn vqa_without_matches_changes_nothing() {
    let mut c = host();
    let orig = c.clone();
    assert_eq!(inject_vqa(&mut c, &bank(&["pics/none.jpg"])), 0);
    assert_eq!(c, orig);
}

#[test]
fn vqa_duplicate_image_yields_one_question_per_turn() {
    let mut c = host();
    c.sessions[0].turns[0].img_url = vec!["pics/x.jpg".into()];
    c.sessions[2].turns[1].img_url = vec!["pics/x.jpg".into()];
    assert_eq!(inject_vqa(&mut c, &bank(&["pics/x.jpg"])), 2);
    let cited: Vec<_> = c.qa[1..].iter().map(|q| q.evidence[0].clone()).collect();
    assert_eq!(cited, vec!["D1:1", "D3:2"]);
}

#[test]
fn vqa_bank_accepts_both_layouts() {
    let map = VqaBank::from_json(&json!({"a.jpg": {"question": "q", "answer": "x"}})).unwrap();
    let list = VqaBank::from_json(&json!([{"image": "a.jpg", "question": "q", "answer": "x"}])).unwrap();
    assert_eq!(map, list);
}

#[test]
fn written_corpus_reloads_without_warnings() {
    let c = merge_into_host(&host(), &bundle(5, 5, [4, 6, 2, 8], true), None).unwrap().conversation;
    let dir = tempfile::tempdir().unwrap();
    Corpus {
        conversations: vec![c.clone()],
        warnings: vec![],
    }
    .write(dir.path())
    .unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    assert!(back.warnings.is_empty(), "{:?}", back.warnings);
    assert_eq!(back.conversations, vec![c]);
}
