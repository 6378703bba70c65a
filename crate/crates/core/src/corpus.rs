//! LoCoMo-compatible conversation corpus: reader, writer and validator.
//!
//! One sample per document:
//!
//! ```json
//! { "sample_id": "conv-1",
//!   "conversation": {
//!     "speaker_a": "Ana", "speaker_b": "Ben",
//!     "session_1_date_time": "2023-05-08T13:56:00Z",
//!     "session_1": [ { "dia_id": "D1:1", "speaker": "Ana", "text": "...",
//!                      "img_url": ["images/x.jpg"], "blip_caption": "..." } ] },
//!   "qa": [ { "question": "...", "answer": "...", "evidence": ["D1:1"],
//!             "category": "single_hop", "source": "host" } ],
//!   "synthesis": { ... } }
//! ```
//!
//! The reader also accepts the original files: a top-level array of samples,
//! integer categories (1 multi-hop, 2 temporal, 3 open-domain, 4 single-hop,
//! 5 adversarial) and session times such as `1:56 pm on 8 May, 2023`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseCategory {
    MultiHop,
    Temporal,
    OpenDomain,
    SingleHop,
}

impl BaseCategory {
    /// Generation order, matching the 2:3:1:4 weights.
    pub const ALL: [BaseCategory; 4] = [
        BaseCategory::MultiHop,
        BaseCategory::Temporal,
        BaseCategory::OpenDomain,
        BaseCategory::SingleHop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseCategory::MultiHop => "multi_hop",
            BaseCategory::Temporal => "temporal",
            BaseCategory::OpenDomain => "open_domain",
            BaseCategory::SingleHop => "single_hop",
        }
    }
}

impl FromStr for BaseCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        BaseCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| Error::Corpus(format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VisualSubtype {
    Aligned(BaseCategory),
    /// Recognition questions taken from an external VQA bank.
    VisualRetrieval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QaCategory {
    Base(BaseCategory),
    VisualCentric(VisualSubtype),
    Adversarial,
}

impl QaCategory {
    /// Report column: the base category, `visual` or `adversarial`.
    pub fn column(&self) -> &'static str {
        match self {
            QaCategory::Base(b) => b.as_str(),
            QaCategory::VisualCentric(_) => "visual",
            QaCategory::Adversarial => "adversarial",
        }
    }

    fn from_locomo_int(n: i64) -> Option<Self> {
        Some(match n {
            1 => QaCategory::Base(BaseCategory::MultiHop),
            2 => QaCategory::Base(BaseCategory::Temporal),
            3 => QaCategory::Base(BaseCategory::OpenDomain),
            4 => QaCategory::Base(BaseCategory::SingleHop),
            5 => QaCategory::Adversarial,
            _ => return None,
        })
    }
}

impl fmt::Display for QaCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QaCategory::Base(b) => f.write_str(b.as_str()),
            QaCategory::VisualCentric(VisualSubtype::Aligned(b)) => write!(f, "visual_centric:{}", b.as_str()),
            QaCategory::VisualCentric(VisualSubtype::VisualRetrieval) => f.write_str("visual_centric:visual_retrieval"),
            QaCategory::Adversarial => f.write_str("adversarial"),
        }
    }
}

impl FromStr for QaCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(sub) = s.strip_prefix("visual_centric:") {
            return if sub == "visual_retrieval" {
                Ok(QaCategory::VisualCentric(VisualSubtype::VisualRetrieval))
            } else {
                Ok(QaCategory::VisualCentric(VisualSubtype::Aligned(sub.parse()?)))
            };
        }
        if s == "adversarial" {
            return Ok(QaCategory::Adversarial);
        }
        if let Ok(n) = s.parse::<i64>() {
            return QaCategory::from_locomo_int(n).ok_or_else(|| Error::Corpus(format!("unknown category {n}")));
        }
        Ok(QaCategory::Base(s.parse()?))
    }
}

impl Serialize for QaCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QaCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match Value::deserialize(d)? {
            Value::Number(n) => n
                .as_i64()
                .and_then(QaCategory::from_locomo_int)
                .ok_or_else(|| D::Error::custom(format!("unknown category {n}"))),
            Value::String(s) => s.parse().map_err(D::Error::custom),
            other => Err(D::Error::custom(format!("category must be a string or integer, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaSource {
    Generated,
    InjectedVqa,
    #[default]
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    /// Gold answer. Missing for adversarial items in the original data.
    #[serde(default, deserialize_with = "string_like")]
    pub answer: String,
    #[serde(default)]
    pub evidence: Vec<String>,
    pub category: QaCategory,
    #[serde(default)]
    pub source: QaSource,
}

/// Accepts numbers (some gold answers are years) as strings.
fn string_like<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    Ok(match Value::deserialize(d)? {
        Value::String(s) => s,
        Value::Null => String::new(),
        other => other.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub dia_id: String,
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub img_url: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blip_caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub date_time: DateTime<Utc>,
    pub turns: Vec<Turn>,
}

/// Provenance of a synthesized conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisInfo {
    pub seed: u64,
    pub host_sample_id: String,
    pub concepts: Vec<String>,
    /// 1-based session numbers that came from the generated bundle.
    pub injected_sessions: Vec<usize>,
    pub gap_index: usize,
}

/// In-memory form; [`Conversation::to_json`] gives the on-disk layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub sample_id: String,
    pub speaker_a: String,
    pub speaker_b: String,
    pub sessions: Vec<Session>,
    pub qa: Vec<QaItem>,
    pub synthesis: Option<SynthesisInfo>,
}

pub fn dia_id(session: usize, turn: usize) -> String {
    format!("D{session}:{turn}")
}

pub fn parse_dia_id(id: &str) -> Option<(usize, usize)> {
    let (s, t) = id.trim().strip_prefix('D')?.split_once(':')?;
    Some((s.parse().ok()?, t.parse().ok()?))
}

/// Session times in ISO-8601, or the `1:56 pm on 8 May, 2023` form.
pub fn parse_session_time(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    let normalized = s.to_ascii_uppercase();
    NaiveDateTime::parse_from_str(&normalized, "%I:%M %p ON %d %B, %Y")
        .ok()
        .map(|n| n.and_utc())
}

impl Conversation {
    pub fn turn_count(&self) -> usize {
        self.sessions.iter().map(|s| s.turns.len()).sum()
    }

    /// Turns in log order with their session number (1-based).
    pub fn turns(&self) -> impl Iterator<Item = (usize, &Session, &Turn)> {
        self.sessions
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.turns.iter().map(move |t| (i + 1, s, t)))
    }

    /// Rewrites dia ids densely (`D{session}:{turn}`, both 1-based) and remaps
    /// QA evidence. Returns the old → new mapping.
    pub fn renumber(&mut self) -> HashMap<String, String> {
        let mut map = HashMap::new();
        for (si, s) in self.sessions.iter_mut().enumerate() {
            for (ti, t) in s.turns.iter_mut().enumerate() {
                let new = dia_id(si + 1, ti + 1);
                map.insert(std::mem::replace(&mut t.dia_id, new.clone()), new);
            }
        }
        for qa in &mut self.qa {
            for e in &mut qa.evidence {
                if let Some(n) = map.get(e.as_str()) {
                    *e = n.clone();
                }
            }
        }
        map
    }

    pub fn to_json(&self) -> Value {
        let mut conv = Map::new();
        conv.insert("speaker_a".into(), json!(self.speaker_a));
        conv.insert("speaker_b".into(), json!(self.speaker_b));
        for (i, s) in self.sessions.iter().enumerate() {
            let n = i + 1;
            conv.insert(format!("session_{n}_date_time"), json!(s.date_time.to_rfc3339()));
            conv.insert(format!("session_{n}"), serde_json::to_value(&s.turns).expect("turns serialize"));
        }
        let mut doc = json!({
            "sample_id": self.sample_id,
            "conversation": conv,
            "qa": self.qa,
        });
        if let Some(info) = &self.synthesis {
            doc["synthesis"] = serde_json::to_value(info).expect("synthesis info serializes");
        }
        doc
    }

    /// Parses one sample; problems that do not prevent loading are returned
    /// as warnings.
    pub fn from_json(doc: &Value) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let sample_id = match doc.get("sample_id") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => return Err(Error::Corpus("sample without sample_id".into())),
        };
        let conv = doc
            .get("conversation")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::Corpus(format!("{sample_id}: missing conversation object")))?;
        let speaker = |k: &str| conv.get(k).and_then(Value::as_str).unwrap_or_default().to_string();

        let mut numbers: BTreeSet<usize> = BTreeSet::new();
        for key in conv.keys() {
            if let Some(n) = key.strip_prefix("session_").and_then(|r| r.parse::<usize>().ok()) {
                numbers.insert(n);
            }
        }
        let mut sessions = Vec::new();
        for n in numbers {
            let turns_v = &conv[&format!("session_{n}")];
            let mut turns = Vec::new();
            for (i, t) in turns_v.as_array().into_iter().flatten().enumerate() {
                turns.push(parse_turn(t, n, i + 1, &sample_id, &mut warnings)?);
            }
            let time_key = format!("session_{n}_date_time");
            let date_time = match conv.get(&time_key).and_then(Value::as_str).map(parse_session_time) {
                Some(Some(t)) => t,
                _ => {
                    return Err(Error::Corpus(format!("{sample_id}: session {n} has no readable {time_key}")));
                }
            };
            sessions.push(Session { date_time, turns });
        }

        let mut qa = Vec::new();
        for (i, item) in doc.get("qa").and_then(Value::as_array).into_iter().flatten().enumerate() {
            match serde_json::from_value::<QaItem>(item.clone()) {
                Ok(q) => qa.push(q),
                Err(e) => warnings.push(format!("{sample_id}: qa[{i}] skipped: {e}")),
            }
        }
        let synthesis = match doc.get("synthesis") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value(v.clone())
                    .map_err(|e| Error::Corpus(format!("{sample_id}: synthesis block: {e}")))?,
            ),
        };
        Ok((
            Conversation {
                sample_id,
                speaker_a: speaker("speaker_a"),
                speaker_b: speaker("speaker_b"),
                sessions,
                qa,
                synthesis,
            },
            warnings,
        ))
    }
}

fn parse_turn(t: &Value, session: usize, index: usize, sample: &str, warnings: &mut Vec<String>) -> Result<Turn> {
    let field = |k: &str| t.get(k).and_then(Value::as_str).map(str::to_string);
    let dia = field("dia_id").unwrap_or_else(|| {
        warnings.push(format!("{sample}: session {session} turn {index} lacks dia_id"));
        dia_id(session, index)
    });
    let img_url = match t.get("img_url") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).map(str::to_string).collect(),
        _ => Vec::new(),
    };
    Ok(Turn {
        dia_id: dia,
        speaker: field("speaker").ok_or_else(|| Error::Corpus(format!("{sample}: turn without speaker")))?,
        text: field("text").unwrap_or_default(),
        img_url,
        blip_caption: field("blip_caption"),
    })
}

/// A loaded corpus plus non-fatal loader warnings.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
    pub warnings: Vec<String>,
}

impl Corpus {
    /// Loads a `.json` file (one sample or an array of samples) or every
    /// `.json` file in a directory, in file-name order.
    pub fn load(path: &Path) -> Result<Self> {
        let files: Vec<PathBuf> = if path.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            v.sort();
            v
        } else {
            vec![path.to_path_buf()]
        };
        let mut corpus = Corpus::default();
        for f in files {
            let text = std::fs::read_to_string(&f)?;
            let doc: Value =
                serde_json::from_str(&text).map_err(|e| Error::Corpus(format!("{}: {e}", f.display())))?;
            let samples = match doc {
                Value::Array(items) => items,
                single => vec![single],
            };
            for s in &samples {
                let (conv, warnings) = Conversation::from_json(s)?;
                corpus.warnings.extend(warnings);
                corpus.conversations.push(conv);
            }
        }
        let mut seen = BTreeSet::new();
        for c in &corpus.conversations {
            if !seen.insert(c.sample_id.as_str()) {
                return Err(Error::Corpus(format!("duplicate sample_id `{}`", c.sample_id)));
            }
        }
        Ok(corpus)
    }

    /// Writes one pretty-printed file per conversation, `<sample_id>.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for c in &self.conversations {
            let name: String = c
                .sample_id
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
                .collect();
            let mut text = serde_json::to_string_pretty(&c.to_json()).map_err(|e| Error::Corpus(e.to_string()))?;
            text.push('\n');
            std::fs::write(dir.join(format!("{name}.json")), text)?;
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` over `weights`; ties go to the
/// earlier weight.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut counts: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * weights[i] % sum), i));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

pub const QA_RATIO: [usize; 4] = [2, 3, 1, 4];

/// Expected per-category counts for `total` generated questions.
pub fn expected_category_counts(total: usize) -> BTreeMap<BaseCategory, usize> {
    BaseCategory::ALL.into_iter().zip(apportion(total, &QA_RATIO)).collect()
}

pub const SESSION_BOUNDS: (usize, usize) = (5, 6);
pub const TURN_BOUNDS: (usize, usize) = (5, 15);

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub conversations: usize,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }
}

/// Structural and temporal checks over a corpus; synthesized conversations
/// are also checked against the generation constraints.
pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut r = ValidationReport {
        conversations: corpus.conversations.len(),
        warnings: corpus.warnings.clone(),
        ..Default::default()
    };
    for c in &corpus.conversations {
        validate_conversation(c, &mut r.errors);
    }
    r
}

pub fn validate_conversation(c: &Conversation, errors: &mut Vec<String>) {
    let id = &c.sample_id;
    let mut err = |m: String| errors.push(format!("{id}: {m}"));
    for (i, w) in c.sessions.windows(2).enumerate() {
        if w[1].date_time <= w[0].date_time {
            err(format!("session {} does not start after session {}", i + 2, i + 1));
        }
    }
    let mut known = BTreeSet::new();
    for (si, s) in c.sessions.iter().enumerate() {
        if s.turns.is_empty() {
            err(format!("session {} is empty", si + 1));
        }
        for (ti, t) in s.turns.iter().enumerate() {
            if t.dia_id != dia_id(si + 1, ti + 1) {
                err(format!("turn id {} out of sequence (expected {})", t.dia_id, dia_id(si + 1, ti + 1)));
            }
            if t.speaker != c.speaker_a && t.speaker != c.speaker_b {
                err(format!("{}: unknown speaker `{}`", t.dia_id, t.speaker));
            }
            known.insert(t.dia_id.as_str());
        }
    }
    for (i, qa) in c.qa.iter().enumerate() {
        if qa.question.trim().is_empty() {
            err(format!("qa[{i}] has an empty question"));
        }
        if qa.category != QaCategory::Adversarial && qa.answer.trim().is_empty() {
            err(format!("qa[{i}] has an empty answer"));
        }
        for e in &qa.evidence {
            if !known.contains(e.as_str()) {
                err(format!("qa[{i}] cites unknown turn {e}"));
            }
        }
        if qa.source == QaSource::InjectedVqa && qa.category != QaCategory::VisualCentric(VisualSubtype::VisualRetrieval) {
            err(format!("qa[{i}] is injected VQA but categorized {}", qa.category));
        }
    }

    let Some(info) = &c.synthesis else {
        return;
    };
    let n = info.injected_sessions.len();
    if !(SESSION_BOUNDS.0..=SESSION_BOUNDS.1).contains(&n) {
        err(format!("{n} injected sessions, expected {}-{}", SESSION_BOUNDS.0, SESSION_BOUNDS.1));
    }
    for &s in &info.injected_sessions {
        match c.sessions.get(s.wrapping_sub(1)) {
            None => err(format!("injected session {s} does not exist")),
            Some(sess) if !(TURN_BOUNDS.0..=TURN_BOUNDS.1).contains(&sess.turns.len()) => err(format!(
                "injected session {s} has {} turns, expected {}-{}",
                sess.turns.len(),
                TURN_BOUNDS.0,
                TURN_BOUNDS.1
            )),
            _ => {}
        }
    }
    if let Some(first) = info.injected_sessions.first().and_then(|&s| c.sessions.get(s - 1)).and_then(|s| s.turns.first()) {
        for name in &info.concepts {
            if !first.text.contains(&format!("<{name}>")) {
                err(format!("first injected message does not reference <{name}>"));
            }
        }
    }
    let mut counts: BTreeMap<BaseCategory, usize> = BTreeMap::new();
    let mut total = 0;
    for qa in c.qa.iter().filter(|q| q.source == QaSource::Generated) {
        total += 1;
        match qa.category {
            QaCategory::VisualCentric(VisualSubtype::Aligned(b)) => *counts.entry(b).or_default() += 1,
            other => err(format!("generated question categorized {other}")),
        }
    }
    let expected = expected_category_counts(total);
    for b in BaseCategory::ALL {
        let got = counts.get(&b).copied().unwrap_or(0);
        if got != expected[&b] {
            err(format!("{} generated {} questions, expected {} of {total}", got, b.as_str(), expected[&b]));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(20, &QA_RATIO), vec![4, 6, 2, 8]);
        assert_eq!(apportion(10, &QA_RATIO), vec![2, 3, 1, 4]);
        // 7 * (.2, .3, .1, .4) = 1.4, 2.1, 0.7, 2.8 -> floors 1,2,0,2, remainders .4,.1,.7,.8
        assert_eq!(apportion(7, &QA_RATIO), vec![1, 2, 1, 3]);
        assert_eq!(apportion(0, &QA_RATIO), vec![0, 0, 0, 0]);
    }

    #[test]
    fn category_round_trip() {
        for s in [
            "multi_hop",
            "temporal",
            "open_domain",
            "single_hop",
            "adversarial",
            "visual_centric:temporal",
            "visual_centric:visual_retrieval",
        ] {
            let c: QaCategory = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        let c: QaCategory = serde_json::from_value(json!(4)).unwrap();
        assert_eq!(c, QaCategory::Base(BaseCategory::SingleHop));
        assert!(serde_json::from_value::<QaCategory>(json!(9)).is_err());
    }

    #[test]
    fn locomo_time_format() {
        let t = parse_session_time("1:56 pm on 8 May, 2023").unwrap();
        assert_eq!(t.to_rfc3339(), "2023-05-08T13:56:00+00:00");
        assert!(parse_session_time("2023-05-08T13:56:00Z").is_some());
        assert!(parse_session_time("yesterday").is_none());
    }

    #[test]
    fn locomo_document_loads() {
        let doc = json!({
            "sample_id": "conv-26",
            "conversation": {
                "speaker_a": "Caroline", "speaker_b": "Melanie",
                "session_1_date_time": "1:56 pm on 8 May, 2023",
                "session_1": [
                    {"speaker": "Caroline", "dia_id": "D1:1", "text": "Hey Mel!"},
                    {"speaker": "Melanie", "dia_id": "D1:2", "text": "Look", "img_url": ["https://x/y.jpg"], "blip_caption": "a dog", "query": "dog"}
                ],
                "session_2_date_time": "7:55 pm on 9 June, 2023",
                "session_2": [{"speaker": "Caroline", "dia_id": "D2:1", "text": "Back"}]
            },
            "qa": [
                {"question": "When?", "answer": 2022, "evidence": ["D1:1"], "category": 2},
                {"question": "Why?", "adversarial_answer": "no", "evidence": [], "category": 5}
            ]
        });
        let (c, warnings) = Conversation::from_json(&doc).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        assert_eq!(c.turn_count(), 3);
        assert_eq!(c.qa[0].answer, "2022");
        assert_eq!(c.qa[1].category, QaCategory::Adversarial);
        let mut errors = Vec::new();
        validate_conversation(&c, &mut errors);
        assert!(errors.is_empty(), "{errors:?}");

        let (again, _) = Conversation::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }
}
