//! Concept-grounded benchmark synthesis: sample a concept group, generate a
//! multi-session bundle with QA in one structured completion, splice it into
//! a host conversation between two of its sessions, and attach VQA questions
//! for images that appear in the dialogue.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{
    dia_id, expected_category_counts, parse_dia_id, BaseCategory, Conversation, QaCategory, QaItem, QaSource,
    Session, SynthesisInfo, Turn, VisualSubtype, SESSION_BOUNDS, TURN_BOUNDS,
};
use crate::error::{Error, Result};
use crate::llm::{ChatTurnMessage, Gateway};

pub const GROUP_SIZE: (usize, usize) = (3, 4);
pub const IMAGES_PER_CONCEPT: (usize, usize) = (2, 3);

const IMAGE_EXTENSIONS: [&str; 6] = ["jpg", "jpeg", "png", "webp", "gif", "bmp"];

const GENERATOR_PROMPT: &str = "You write realistic multi-session chat dialogues between two people together with \
question-answer pairs about them. Reply with a single JSON object and nothing else.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogConcept {
    pub name: String,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub concepts: Vec<CatalogConcept>,
}

impl Catalog {
    /// Reads `catalog.json` in `dir` if present (relative image paths are
    /// resolved against `dir`), else treats each subdirectory as a concept
    /// whose images are the image files inside it.
    pub fn load(dir: &Path) -> Result<Self> {
        let index = dir.join("catalog.json");
        let mut catalog = if index.exists() {
            let text = std::fs::read_to_string(&index)?;
            let mut c: Catalog =
                serde_json::from_str(&text).map_err(|e| Error::Corpus(format!("{}: {e}", index.display())))?;
            for concept in &mut c.concepts {
                for img in &mut concept.images {
                    if !img.contains("://") && !img.starts_with("data:") && Path::new(img.as_str()).is_relative() {
                        *img = dir.join(img.as_str()).to_string_lossy().into_owned();
                    }
                }
            }
            c
        } else {
            let mut concepts = Vec::new();
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                if !path.is_dir() {
                    continue;
                }
                let mut images: Vec<String> = std::fs::read_dir(&path)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.extension()
                            .and_then(|x| x.to_str())
                            .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
                    })
                    .map(|p| p.to_string_lossy().into_owned())
                    .collect();
                images.sort();
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                concepts.push(CatalogConcept { name, images });
            }
            Catalog { concepts }
        };
        catalog.concepts.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(catalog)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptGroup {
    pub concepts: Vec<CatalogConcept>,
}

impl ConceptGroup {
    pub fn names(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.name.clone()).collect()
    }

    fn images(&self) -> BTreeSet<&str> {
        self.concepts.iter().flat_map(|c| c.images.iter().map(String::as_str)).collect()
    }
}

/// Samples `k ∈ [3, 4]` concepts and `m ∈ [2, 3]` images for each.
/// Only concepts with at least three images are eligible.
pub fn sample_concept_group(catalog: &Catalog, seed: u64) -> Result<ConceptGroup> {
    let eligible: Vec<&CatalogConcept> = catalog
        .concepts
        .iter()
        .filter(|c| c.images.len() >= IMAGES_PER_CONCEPT.1)
        .collect();
    let names: BTreeSet<&str> = eligible.iter().map(|c| c.name.as_str()).collect();
    if names.len() != eligible.len() {
        return Err(Error::InsufficientCatalog("concept names must be unique".into()));
    }
    if eligible.len() < GROUP_SIZE.1 {
        return Err(Error::InsufficientCatalog(format!(
            "{} concepts with at least {} images; need {}",
            eligible.len(),
            IMAGES_PER_CONCEPT.1,
            GROUP_SIZE.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(GROUP_SIZE.0..=GROUP_SIZE.1);
    let picked = sample(&mut rng, eligible.len(), k).into_vec();
    let concepts = picked
        .into_iter()
        .map(|i| {
            let c = eligible[i];
            let m = rng.random_range(IMAGES_PER_CONCEPT.0..=IMAGES_PER_CONCEPT.1);
            let images = sample(&mut rng, c.images.len(), m)
                .into_iter()
                .map(|j| c.images[j].clone())
                .collect();
            CatalogConcept {
                name: c.name.clone(),
                images,
            }
        })
        .collect();
    Ok(ConceptGroup { concepts })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedTurn {
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedSession {
    pub turns: Vec<GeneratedTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedQa {
    pub question: String,
    pub answer: String,
    pub category: BaseCategory,
    /// Turn ids local to the bundle, `D{session}:{turn}`.
    #[serde(default)]
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedBundle {
    pub sessions: Vec<GeneratedSession>,
    pub qa: Vec<GeneratedQa>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationSpec {
    pub speakers: [String; 2],
    pub qa_count: usize,
}

impl GenerationSpec {
    pub fn new(speaker_a: impl Into<String>, speaker_b: impl Into<String>) -> Self {
        Self {
            speakers: [speaker_a.into(), speaker_b.into()],
            qa_count: 20,
        }
    }
}

/// Every constraint the bundle breaks, in a stable order.
pub fn validate_bundle(bundle: &GeneratedBundle, group: &ConceptGroup, spec: &GenerationSpec) -> Vec<String> {
    let mut v = Vec::new();
    let n = bundle.sessions.len();
    if !(SESSION_BOUNDS.0..=SESSION_BOUNDS.1).contains(&n) {
        v.push(format!("session count {n} is outside {}-{}", SESSION_BOUNDS.0, SESSION_BOUNDS.1));
    }
    let images = group.images();
    let mut local_ids = BTreeSet::new();
    for (si, s) in bundle.sessions.iter().enumerate() {
        let t = s.turns.len();
        if !(TURN_BOUNDS.0..=TURN_BOUNDS.1).contains(&t) {
            v.push(format!("session {} has {t} turns, outside {}-{}", si + 1, TURN_BOUNDS.0, TURN_BOUNDS.1));
        }
        for (ti, turn) in s.turns.iter().enumerate() {
            local_ids.insert(dia_id(si + 1, ti + 1));
            if !spec.speakers.contains(&turn.speaker) {
                v.push(format!("D{}:{} speaker `{}` is not one of {:?}", si + 1, ti + 1, turn.speaker, spec.speakers));
            }
            if turn.text.trim().is_empty() {
                v.push(format!("D{}:{} has empty text", si + 1, ti + 1));
            }
            for img in &turn.images {
                if !images.contains(img.as_str()) {
                    v.push(format!("D{}:{} uses image `{img}` outside the concept group", si + 1, ti + 1));
                }
            }
        }
    }
    let first = bundle.sessions.first().and_then(|s| s.turns.first());
    for name in group.names() {
        if !first.is_some_and(|t| t.text.contains(&format!("<{name}>"))) {
            v.push(format!("grounding: first message does not reference <{name}>"));
        }
    }
    if bundle.qa.len() != spec.qa_count {
        v.push(format!("{} questions, expected {}", bundle.qa.len(), spec.qa_count));
    }
    let mut counts: BTreeMap<BaseCategory, usize> = BTreeMap::new();
    for (i, qa) in bundle.qa.iter().enumerate() {
        *counts.entry(qa.category).or_default() += 1;
        if qa.question.trim().is_empty() || qa.answer.trim().is_empty() {
            v.push(format!("qa[{i}] needs a question and an answer"));
        }
        if qa.evidence.is_empty() {
            v.push(format!("qa[{i}] cites no evidence"));
        }
        for e in &qa.evidence {
            if !local_ids.contains(e) {
                v.push(format!("qa[{i}] cites unknown turn {e}"));
            }
        }
    }
    let expected = expected_category_counts(bundle.qa.len());
    for (cat, want) in expected {
        let got = counts.get(&cat).copied().unwrap_or(0);
        if got != want {
            v.push(format!("ratio: {got} {} questions, expected {want}", cat.as_str()));
        }
    }
    v
}

/// One structured completion producing the whole bundle; the violation list
/// goes back to the model once before giving up.
pub fn generate_bundle(group: &ConceptGroup, spec: &GenerationSpec, gateway: &Gateway) -> Result<GeneratedBundle> {
    let counts: BTreeMap<&str, usize> = expected_category_counts(spec.qa_count)
        .into_iter()
        .map(|(c, n)| (c.as_str(), n))
        .collect();
    let tags: Vec<String> = group.names().iter().map(|n| format!("<{n}>")).collect();
    let request = json!({
        "task": "generate_bundle",
        "concepts": group.concepts,
        "concept_tags": tags.join(" "),
        "speakers": spec.speakers,
        "sessions": {"min": SESSION_BOUNDS.0, "max": SESSION_BOUNDS.1},
        "turns_per_session": {"min": TURN_BOUNDS.0, "max": TURN_BOUNDS.1},
        "qa_count": spec.qa_count,
        "category_counts": counts,
        "instructions": [
            "The very first message must mention every concept by its tag, e.g. <name>.",
            "Attach concept images to turns through the `images` list, using the given URIs only.",
            "Evidence ids are D{session}:{turn}, both 1-based, local to this bundle.",
            "Questions must be answerable from the dialogue, mostly requiring the images."
        ],
        "output_format": {
            "sessions": [{"turns": [{"speaker": "one of speakers", "text": "...", "images": ["uri"]}]}],
            "qa": [{"question": "...", "answer": "...", "category": "multi_hop|temporal|open_domain|single_hop", "evidence": ["D1:2"]}]
        }
    });
    let messages = [ChatTurnMessage::system(GENERATOR_PROMPT), ChatTurnMessage::user(request.to_string())];
    let outcome = gateway.complete_json(&messages, |value: Value| {
        let bundle: GeneratedBundle =
            serde_json::from_value(value).map_err(|e| vec![format!("schema: {e}")])?;
        let problems = validate_bundle(&bundle, group, spec);
        if problems.is_empty() {
            Ok(bundle)
        } else {
            Err(problems)
        }
    })?;
    outcome.map_err(Error::GenerationInvalid)
}

/// `τ_j = t_start + j/(n+1)·(t_end − t_start)` for `j = 1..=n`, on integer
/// instants with floor division.
pub fn interpolate(t_start: i128, t_end: i128, n: usize) -> Result<Vec<i128>> {
    if t_start >= t_end {
        return Err(Error::DegenerateWindow {
            start: t_start.to_string(),
            end: t_end.to_string(),
        });
    }
    let width = t_end - t_start;
    let parts = n as i128 + 1;
    let taus: Vec<i128> = (1..=n as i128).map(|j| t_start + (j * width).div_euclid(parts)).collect();
    // A window narrower than n+1 units cannot hold n distinct interior instants.
    let strict = taus.first().is_none_or(|&f| f > t_start)
        && taus.windows(2).all(|w| w[0] < w[1])
        && taus.last().is_none_or(|&l| l < t_end);
    if !strict {
        return Err(Error::DegenerateWindow {
            start: t_start.to_string(),
            end: t_end.to_string(),
        });
    }
    Ok(taus)
}

fn to_nanos(t: DateTime<Utc>) -> i128 {
    t.timestamp() as i128 * 1_000_000_000 + t.timestamp_subsec_nanos() as i128
}

fn from_nanos(n: i128) -> DateTime<Utc> {
    let secs = n.div_euclid(1_000_000_000) as i64;
    let nanos = n.rem_euclid(1_000_000_000) as u32;
    DateTime::from_timestamp(secs, nanos).expect("interpolated instant lies between two valid instants")
}

pub fn interpolate_timestamps(t_start: DateTime<Utc>, t_end: DateTime<Utc>, n: usize) -> Result<Vec<DateTime<Utc>>> {
    interpolate(to_nanos(t_start), to_nanos(t_end), n)
        .map(|v| v.into_iter().map(from_nanos).collect())
        .map_err(|_| Error::DegenerateWindow {
            start: t_start.to_rfc3339(),
            end: t_end.to_rfc3339(),
        })
}

/// Index `i` of the widest gap between sessions `i` and `i+1` (earliest on ties).
pub fn widest_gap(host: &Conversation) -> Option<usize> {
    host.sessions
        .windows(2)
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            (a[1].date_time - a[0].date_time)
                .cmp(&(b[1].date_time - b[0].date_time))
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merged {
    pub conversation: Conversation,
    pub gap_index: usize,
    /// 1-based session numbers of the inserted sessions.
    pub injected_sessions: Vec<usize>,
}

/// Splices the bundle's sessions into gap `gap_index` of the host (between
/// its sessions `gap_index` and `gap_index + 1`, 0-based), renumbers every
/// turn and remaps QA evidence.
pub fn merge_into_host(host: &Conversation, bundle: &GeneratedBundle, gap_index: Option<usize>) -> Result<Merged> {
    if host.sessions.len() < 2 {
        return Err(Error::Corpus(format!("host {} needs at least two sessions", host.sample_id)));
    }
    let gap = match gap_index {
        Some(g) if g + 1 < host.sessions.len() => g,
        Some(g) => {
            return Err(Error::InvalidRequest(format!(
                "gap index {g} out of range for {} sessions",
                host.sessions.len()
            )))
        }
        None => widest_gap(host).expect("at least two sessions"),
    };
    let (start, end) = (host.sessions[gap].date_time, host.sessions[gap + 1].date_time);
    let taus = interpolate_timestamps(start, end, bundle.sessions.len())?;

    let tmp_id = |s: usize, t: usize| format!("bundle:{}", dia_id(s, t));
    let inserted: Vec<Session> = bundle
        .sessions
        .iter()
        .zip(&taus)
        .enumerate()
        .map(|(si, (s, &tau))| Session {
            date_time: tau,
            turns: s
                .turns
                .iter()
                .enumerate()
                .map(|(ti, t)| Turn {
                    dia_id: tmp_id(si + 1, ti + 1),
                    speaker: t.speaker.clone(),
                    text: t.text.clone(),
                    img_url: t.images.clone(),
                    blip_caption: None,
                })
                .collect(),
        })
        .collect();

    let mut conv = host.clone();
    let tail = conv.sessions.split_off(gap + 1);
    conv.sessions.extend(inserted);
    conv.sessions.extend(tail);
    for qa in &bundle.qa {
        conv.qa.push(QaItem {
            question: qa.question.clone(),
            answer: qa.answer.clone(),
            evidence: qa
                .evidence
                .iter()
                .map(|e| match parse_dia_id(e) {
                    Some((s, t)) => tmp_id(s, t),
                    None => e.clone(),
                })
                .collect(),
            category: QaCategory::VisualCentric(VisualSubtype::Aligned(qa.category)),
            source: QaSource::Generated,
        });
    }
    conv.renumber();
    Ok(Merged {
        conversation: conv,
        gap_index: gap,
        injected_sessions: (gap + 2..gap + 2 + bundle.sessions.len()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaPair {
    pub question: String,
    pub answer: String,
}

/// VQA pairs keyed by image URI.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VqaBank(pub BTreeMap<String, VqaPair>);

impl VqaBank {
    /// Accepts `{"<uri>": {"question", "answer"}}` or
    /// `[{"image", "question", "answer"}]`.
    pub fn from_json(value: &Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            image: String,
            question: String,
            answer: String,
        }
        let bad = |e: serde_json::Error| Error::Corpus(format!("vqa bank: {e}"));
        match value {
            Value::Array(_) => {
                let rows: Vec<Row> = serde_json::from_value(value.clone()).map_err(bad)?;
                Ok(VqaBank(
                    rows.into_iter()
                        .map(|r| (r.image, VqaPair { question: r.question, answer: r.answer }))
                        .collect(),
                ))
            }
            _ => Ok(VqaBank(serde_json::from_value(value.clone()).map_err(bad)?)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
        Self::from_json(&v)
    }
}

/// Adds one visual-retrieval question per image occurrence that has a bank
/// entry, citing the turn that carries it. Returns the number added.
pub fn inject_vqa(conv: &mut Conversation, bank: &VqaBank) -> usize {
    let mut added = Vec::new();
    for s in &conv.sessions {
        for t in &s.turns {
            for img in &t.img_url {
                if let Some(pair) = bank.0.get(img) {
                    added.push(QaItem {
                        question: pair.question.clone(),
                        answer: pair.answer.clone(),
                        evidence: vec![t.dia_id.clone()],
                        category: QaCategory::VisualCentric(VisualSubtype::VisualRetrieval),
                        source: QaSource::InjectedVqa,
                    });
                }
            }
        }
    }
    let n = added.len();
    conv.qa.extend(added);
    n
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthesisOptions {
    pub gap_index: Option<usize>,
    pub qa_count: Option<usize>,
    pub vqa: Option<VqaBank>,
}

/// The full pipeline for one host conversation.
pub fn synthesize(
    catalog: &Catalog,
    host: &Conversation,
    seed: u64,
    gateway: &Gateway,
    opts: &SynthesisOptions,
) -> Result<Conversation> {
    let group = sample_concept_group(catalog, seed)?;
    let mut spec = GenerationSpec::new(host.speaker_a.clone(), host.speaker_b.clone());
    if let Some(n) = opts.qa_count {
        spec.qa_count = n;
    }
    let bundle = generate_bundle(&group, &spec, gateway)?;
    let merged = merge_into_host(host, &bundle, opts.gap_index)?;
    let mut conv = merged.conversation;
    conv.sample_id = format!("{}-synth-{seed}", host.sample_id);
    conv.synthesis = Some(SynthesisInfo {
        seed,
        host_sample_id: host.sample_id.clone(),
        concepts: group.names(),
        injected_sessions: merged.injected_sessions,
        gap_index: merged.gap_index,
    });
    if let Some(bank) = &opts.vqa {
        inject_vqa(&mut conv, bank);
    }
    Ok(conv)
}

/// Position of each turn in log order, keyed by dia id.
pub fn turn_positions(conv: &Conversation) -> HashMap<String, usize> {
    conv.turns().enumerate().map(|(i, (_, _, t))| (t.dia_id.clone(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn catalog(n: usize, images: usize) -> Catalog {
        Catalog {
            concepts: (0..n)
                .map(|i| CatalogConcept {
                    name: format!("c{i}"),
                    images: (0..images).map(|j| format!("img/c{i}_{j}.jpg")).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn group_bounds_over_many_seeds() {
        let cat = catalog(6, 4);
        for seed in 0..1000 {
            let g = sample_concept_group(&cat, seed).unwrap();
            assert!((3..=4).contains(&g.concepts.len()));
            assert!(g.concepts.iter().all(|c| (2..=3).contains(&c.images.len())));
            let names: BTreeSet<_> = g.names().into_iter().collect();
            assert_eq!(names.len(), g.concepts.len());
        }
        assert_eq!(sample_concept_group(&cat, 7).unwrap(), sample_concept_group(&cat, 7).unwrap());
    }

    #[test]
    fn small_catalog_rejected() {
        assert!(matches!(sample_concept_group(&catalog(2, 5), 1), Err(Error::InsufficientCatalog(_))));
        assert!(matches!(sample_concept_group(&catalog(5, 2), 1), Err(Error::InsufficientCatalog(_))));
    }

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate(0, 700, 6).unwrap(), vec![100, 200, 300, 400, 500, 600]);
        assert_eq!(interpolate(0, 700, 1).unwrap(), vec![350]);
        assert!(matches!(interpolate(5, 5, 3), Err(Error::DegenerateWindow { .. })));
        assert!(matches!(interpolate(0, 3, 6), Err(Error::DegenerateWindow { .. })));
    }

    #[test]
    fn day_gap_interpolation() {
        let d1 = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        let d9 = Utc.with_ymd_and_hms(2023, 1, 9, 0, 0, 0).unwrap();
        let taus = interpolate_timestamps(d1, d9, 6).unwrap();
        // 8 days / 7 ≈ 1.142857 days per step.
        let first = (taus[0] - d1).num_nanoseconds().unwrap() as f64 / 86_400e9;
        assert!((first - 8.0 / 7.0).abs() < 1e-12);
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
    }
}
