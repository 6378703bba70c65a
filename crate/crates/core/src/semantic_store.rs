//! Layer 2: semantic entries with their dense, sparse and visual index
//! representations.
//!
//! Write methods are crate-private: the memory manager is the only component
//! that mutates this store. Persistence is a snapshot plus a write-ahead
//! journal per conversation; the journal follows the same torn-tail rule as
//! the raw log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::raw_store::{EvidenceRange, RawMessageStore};
use crate::text::term_frequencies;

const CHECKPOINT_EVERY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Fact,
    UpdateRecord,
}

impl std::str::FromStr for EntryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fact" => Ok(EntryKind::Fact),
            "update_record" => Ok(EntryKind::UpdateRecord),
            other => Err(Error::InvalidEntry(format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticEntry {
    pub entry_id: String,
    pub c_text: String,
    #[serde(default)]
    pub c_caption: Option<String>,
    #[serde(default)]
    pub c_image: Option<String>,
    pub evidence: Vec<EvidenceRange>,
    pub kind: EntryKind,
    pub created_at: DateTime<Utc>,
    pub conversation_id: String,
}

impl SemanticEntry {
    /// `c_text ‖ c_caption`, the text that feeds the dense and sparse indexes.
    pub fn index_text(&self) -> String {
        index_text(&self.c_text, self.c_caption.as_deref())
    }
}

fn index_text(c_text: &str, c_caption: Option<&str>) -> String {
    match c_caption {
        Some(c) => format!("{c_text} {c}"),
        None => c_text.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexVectors {
    pub v_text_dense: Vec<f64>,
    pub sparse_terms: BTreeMap<String, u32>,
    #[serde(default)]
    pub v_img: Option<Vec<f64>>,
}

impl IndexVectors {
    pub fn doc_len(&self) -> u64 {
        self.sparse_terms.values().map(|&n| n as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEntry {
    pub entry: SemanticEntry,
    pub vectors: IndexVectors,
    /// Per-conversation insertion counter.
    pub seq: u64,
}

/// Caller-supplied content for a new entry; id and time are assigned on add.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewEntry {
    pub c_text: String,
    #[serde(default)]
    pub c_caption: Option<String>,
    #[serde(default)]
    pub c_image: Option<String>,
    pub evidence: Vec<EvidenceRange>,
    pub kind: EntryKind,
}

impl NewEntry {
    pub fn fact(c_text: impl Into<String>, evidence: Vec<EvidenceRange>) -> Self {
        Self {
            c_text: c_text.into(),
            c_caption: None,
            c_image: None,
            evidence,
            kind: EntryKind::Fact,
        }
    }

    pub fn update_record(c_text: impl Into<String>, evidence: Vec<EvidenceRange>) -> Self {
        Self {
            kind: EntryKind::UpdateRecord,
            ..Self::fact(c_text, evidence)
        }
    }

    pub fn with_image(mut self, c_image: impl Into<String>, c_caption: impl Into<String>) -> Self {
        self.c_image = Some(c_image.into());
        self.c_caption = Some(c_caption.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: u64,
    pub avg_doc_len: f64,
    pub term_doc_freq: BTreeMap<String, u64>,
}

/// A consistent read view of one conversation's memory.
#[derive(Debug, Clone, Default)]
pub struct MemorySnapshot {
    pub entries: Vec<Arc<StoredEntry>>,
    pub stats: CorpusStats,
}

/// Whole-store structured dump for one conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDump {
    pub conversation_id: String,
    pub next_seq: u64,
    pub entries: Vec<StoredEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalRecord {
    Add { entry: StoredEntry },
    Delete { entry_id: String },
}

#[derive(Default)]
struct ConversationMemory {
    entries: BTreeMap<String, Arc<StoredEntry>>,
    next_seq: u64,
    total_len: u64,
    doc_freq: BTreeMap<String, u64>,
    journal: Option<File>,
    journal_records: usize,
}

impl ConversationMemory {
    fn insert(&mut self, stored: StoredEntry) {
        self.next_seq = self.next_seq.max(stored.seq + 1);
        self.total_len += stored.vectors.doc_len();
        for term in stored.vectors.sparse_terms.keys() {
            *self.doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        self.entries.insert(stored.entry.entry_id.clone(), Arc::new(stored));
    }

    fn remove(&mut self, entry_id: &str) -> Option<Arc<StoredEntry>> {
        let stored = self.entries.remove(entry_id)?;
        self.total_len -= stored.vectors.doc_len();
        for term in stored.vectors.sparse_terms.keys() {
            if let Some(n) = self.doc_freq.get_mut(term) {
                *n -= 1;
                if *n == 0 {
                    self.doc_freq.remove(term);
                }
            }
        }
        Some(stored)
    }

    fn stats(&self) -> CorpusStats {
        let n = self.entries.len() as u64;
        CorpusStats {
            doc_count: n,
            avg_doc_len: if n == 0 { 0.0 } else { self.total_len as f64 / n as f64 },
            term_doc_freq: self.doc_freq.clone(),
        }
    }

    fn journal(&mut self, record: &JournalRecord) -> Result<()> {
        if let Some(file) = self.journal.as_mut() {
            let mut line = serde_json::to_vec(record).map_err(|e| Error::StorageFailure(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
            self.journal_records += 1;
        }
        Ok(())
    }
}

pub struct SemanticStore {
    dir: Option<PathBuf>,
    raw: Arc<RawMessageStore>,
    embedder: Arc<dyn Embedder>,
    convs: RwLock<HashMap<String, Arc<RwLock<ConversationMemory>>>>,
}

impl std::fmt::Debug for SemanticStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemanticStore").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl SemanticStore {
    pub fn in_memory(raw: Arc<RawMessageStore>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            dir: None,
            raw,
            embedder,
            convs: RwLock::new(HashMap::new()),
        }
    }

    pub fn open(dir: impl AsRef<Path>, raw: Arc<RawMessageStore>, embedder: Arc<dyn Embedder>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            raw,
            embedder,
            convs: RwLock::new(HashMap::new()),
        })
    }

    pub fn raw(&self) -> &Arc<RawMessageStore> {
        &self.raw
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    fn paths(&self, conversation_id: &str) -> Option<(PathBuf, PathBuf)> {
        let dir = self.dir.as_ref()?;
        let stem: String = conversation_id
            .bytes()
            .map(|b| {
                if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
                    (b as char).to_string()
                } else {
                    format!("%{b:02X}")
                }
            })
            .collect();
        Some((
            dir.join(format!("{stem}.snapshot.json")),
            dir.join(format!("{stem}.journal.jsonl")),
        ))
    }

    fn conv(&self, conversation_id: &str) -> Result<Arc<RwLock<ConversationMemory>>> {
        if let Some(c) = self.convs.read().get(conversation_id) {
            return Ok(c.clone());
        }
        let mut convs = self.convs.write();
        if let Some(c) = convs.get(conversation_id) {
            return Ok(c.clone());
        }
        let mem = match self.paths(conversation_id) {
            Some((snap, journal)) => load_conversation(&snap, &journal)?,
            None => ConversationMemory::default(),
        };
        let mem = Arc::new(RwLock::new(mem));
        convs.insert(conversation_id.to_string(), mem.clone());
        Ok(mem)
    }

    fn validate(&self, conversation_id: &str, new: &NewEntry) -> Result<()> {
        if new.c_text.trim().is_empty() {
            return Err(Error::InvalidEntry("c_text must be non-empty".into()));
        }
        if new.c_image.is_some() != new.c_caption.is_some() {
            return Err(Error::InvalidEntry("c_caption must be present iff c_image is present".into()));
        }
        if new.evidence.is_empty() {
            return Err(Error::InvalidEvidence("an entry must cite at least one evidence range".into()));
        }
        let len = self.raw.len(conversation_id)?;
        for r in &new.evidence {
            r.check_bounds(len).map_err(|e| Error::InvalidEvidence(e.to_string()))?;
        }
        Ok(())
    }

    fn index(&self, new: &NewEntry) -> Result<IndexVectors> {
        let text = index_text(&new.c_text, new.c_caption.as_deref());
        let embed_err = |e: Error| Error::EmbedFailure(e.to_string());
        Ok(IndexVectors {
            v_text_dense: self.embedder.embed_text(&text).map_err(embed_err)?,
            sparse_terms: term_frequencies(&text),
            v_img: new
                .c_image
                .as_deref()
                .map(|img| self.embedder.embed_image(img))
                .transpose()
                .map_err(embed_err)?,
        })
    }

    /// Validates, indexes and stores a new entry; returns its id.
    pub(crate) fn add_entry(&self, conversation_id: &str, new: NewEntry) -> Result<String> {
        self.validate(conversation_id, &new)?;
        let vectors = self.index(&new)?;
        let created_at = self
            .raw
            .head_timestamp(conversation_id)?
            .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
        let conv = self.conv(conversation_id)?;
        let mut mem = conv.write();
        let seq = mem.next_seq;
        let entry_id = entry_id(conversation_id, seq, &new.c_text, created_at);
        let stored = StoredEntry {
            entry: SemanticEntry {
                entry_id: entry_id.clone(),
                c_text: new.c_text,
                c_caption: new.c_caption,
                c_image: new.c_image,
                evidence: new.evidence,
                kind: new.kind,
                created_at,
                conversation_id: conversation_id.to_string(),
            },
            vectors,
            seq,
        };
        mem.journal(&JournalRecord::Add { entry: stored.clone() })?;
        mem.insert(stored);
        self.maybe_checkpoint(conversation_id, &mut mem)?;
        Ok(entry_id)
    }

    pub(crate) fn delete_entry(&self, conversation_id: &str, entry_id: &str) -> Result<SemanticEntry> {
        let conv = self.conv(conversation_id)?;
        let mut mem = conv.write();
        if !mem.entries.contains_key(entry_id) {
            return Err(Error::UnknownEntry(entry_id.to_string()));
        }
        mem.journal(&JournalRecord::Delete {
            entry_id: entry_id.to_string(),
        })?;
        let removed = mem.remove(entry_id).expect("checked above");
        self.maybe_checkpoint(conversation_id, &mut mem)?;
        Ok(removed.entry.clone())
    }

    pub fn get_entry(&self, conversation_id: &str, entry_id: &str) -> Result<SemanticEntry> {
        self.get_stored(conversation_id, entry_id).map(|s| s.entry.clone())
    }

    pub fn get_stored(&self, conversation_id: &str, entry_id: &str) -> Result<Arc<StoredEntry>> {
        self.conv(conversation_id)?
            .read()
            .entries
            .get(entry_id)
            .cloned()
            .ok_or_else(|| Error::UnknownEntry(entry_id.to_string()))
    }

    /// Looks an entry up in any loaded conversation.
    pub fn find_entry(&self, entry_id: &str) -> Option<SemanticEntry> {
        self.convs
            .read()
            .values()
            .find_map(|c| c.read().entries.get(entry_id).map(|s| s.entry.clone()))
    }

    /// Live entries, most recent first.
    pub fn list_entries(&self, conversation_id: &str, kind: Option<EntryKind>) -> Result<Vec<SemanticEntry>> {
        let conv = self.conv(conversation_id)?;
        let mem = conv.read();
        let mut stored: Vec<&Arc<StoredEntry>> = mem
            .entries
            .values()
            .filter(|s| kind.is_none_or(|k| s.entry.kind == k))
            .collect();
        stored.sort_by(|a, b| {
            b.entry
                .created_at
                .cmp(&a.entry.created_at)
                .then(b.seq.cmp(&a.seq))
        });
        Ok(stored.into_iter().map(|s| s.entry.clone()).collect())
    }

    pub fn corpus_stats(&self, conversation_id: &str) -> Result<CorpusStats> {
        Ok(self.conv(conversation_id)?.read().stats())
    }

    pub fn snapshot(&self, conversation_id: &str) -> Result<MemorySnapshot> {
        let conv = self.conv(conversation_id)?;
        let mem = conv.read();
        Ok(MemorySnapshot {
            entries: mem.entries.values().cloned().collect(),
            stats: mem.stats(),
        })
    }

    pub fn len(&self, conversation_id: &str) -> Result<usize> {
        Ok(self.conv(conversation_id)?.read().entries.len())
    }

    pub fn is_empty(&self, conversation_id: &str) -> Result<bool> {
        Ok(self.len(conversation_id)? == 0)
    }

    pub fn export(&self, conversation_id: &str) -> Result<MemoryDump> {
        let conv = self.conv(conversation_id)?;
        let mem = conv.read();
        let mut entries: Vec<StoredEntry> = mem.entries.values().map(|s| (**s).clone()).collect();
        entries.sort_by_key(|s| s.seq);
        Ok(MemoryDump {
            conversation_id: conversation_id.to_string(),
            next_seq: mem.next_seq,
            entries,
        })
    }

    /// Replaces a conversation's memory with `dump` and checkpoints it.
    pub(crate) fn import(&self, dump: MemoryDump) -> Result<()> {
        let len = self.raw.len(&dump.conversation_id)?;
        for s in &dump.entries {
            if s.entry.conversation_id != dump.conversation_id {
                return Err(Error::InvalidEntry(format!(
                    "entry {} belongs to {}",
                    s.entry.entry_id, s.entry.conversation_id
                )));
            }
            for r in &s.entry.evidence {
                r.check_bounds(len).map_err(|e| Error::InvalidEvidence(e.to_string()))?;
            }
        }
        let conv = self.conv(&dump.conversation_id)?;
        let mut mem = conv.write();
        let journal = mem.journal.take();
        *mem = ConversationMemory {
            journal,
            ..ConversationMemory::default()
        };
        for s in dump.entries {
            mem.insert(s);
        }
        mem.next_seq = mem.next_seq.max(dump.next_seq);
        self.checkpoint_locked(&dump.conversation_id, &mut mem)
    }

    /// Writes a fresh snapshot and empties the journal.
    pub fn checkpoint(&self, conversation_id: &str) -> Result<()> {
        let conv = self.conv(conversation_id)?;
        let mut mem = conv.write();
        self.checkpoint_locked(conversation_id, &mut mem)
    }

    fn maybe_checkpoint(&self, conversation_id: &str, mem: &mut ConversationMemory) -> Result<()> {
        if mem.journal_records >= CHECKPOINT_EVERY {
            self.checkpoint_locked(conversation_id, mem)?;
        }
        Ok(())
    }

    fn checkpoint_locked(&self, conversation_id: &str, mem: &mut ConversationMemory) -> Result<()> {
        let Some((snap_path, journal_path)) = self.paths(conversation_id) else {
            return Ok(());
        };
        let mut entries: Vec<StoredEntry> = mem.entries.values().map(|s| (**s).clone()).collect();
        entries.sort_by_key(|s| s.seq);
        let dump = MemoryDump {
            conversation_id: conversation_id.to_string(),
            next_seq: mem.next_seq,
            entries,
        };
        let tmp = snap_path.with_extension("json.tmp");
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &dump).map_err(|e| Error::StorageFailure(e.to_string()))?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &snap_path)?;
        let journal = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&journal_path)?;
        journal.sync_data()?;
        drop(journal);
        mem.journal = Some(OpenOptions::new().append(true).open(&journal_path)?);
        mem.journal_records = 0;
        Ok(())
    }
}

fn entry_id(conversation_id: &str, seq: u64, c_text: &str, created_at: DateTime<Utc>) -> String {
    let mut h = Sha256::new();
    h.update(conversation_id.as_bytes());
    h.update([0]);
    h.update(seq.to_le_bytes());
    h.update(c_text.as_bytes());
    h.update([0]);
    h.update(created_at.to_rfc3339().as_bytes());
    format!("m{}", &hex::encode(h.finalize())[..16])
}

fn load_conversation(snapshot: &Path, journal: &Path) -> Result<ConversationMemory> {
    let mut mem = ConversationMemory::default();
    match fs::read(snapshot) {
        Ok(bytes) => {
            let dump: MemoryDump =
                serde_json::from_slice(&bytes).map_err(|e| Error::StorageFailure(format!("snapshot: {e}")))?;
            for s in dump.entries {
                mem.insert(s);
            }
            mem.next_seq = mem.next_seq.max(dump.next_seq);
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    let bytes = match fs::read(journal) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut offset = 0;
    let mut records = 0;
    while let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') {
        let Ok(record) = serde_json::from_slice::<JournalRecord>(&bytes[offset..offset + nl]) else {
            break;
        };
        match record {
            JournalRecord::Add { entry } => mem.insert(entry),
            JournalRecord::Delete { entry_id } => {
                mem.remove(&entry_id);
            }
        }
        offset += nl + 1;
        records += 1;
    }
    let file = OpenOptions::new().create(true).append(true).open(journal)?;
    if offset < bytes.len() {
        log::warn!("journal {} has a torn tail; truncating", journal.display());
        file.set_len(offset as u64)?;
    }
    mem.journal = Some(file);
    mem.journal_records = records;
    Ok(mem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::DeterministicEmbedder;
    use crate::raw_store::NewMessage;
    use chrono::TimeZone;

    fn raw_with(n: u64) -> Arc<RawMessageStore> {
        let raw = Arc::new(RawMessageStore::in_memory());
        for i in 0..n {
            raw.append(
                "c",
                NewMessage {
                    session_id: "s".into(),
                    timestamp: Utc.timestamp_opt(1_000 + i as i64, 0).unwrap(),
                    speaker: "user".into(),
                    text: format!("turn {i}"),
                    image_refs: vec![],
                },
            )
            .unwrap();
        }
        raw
    }

    fn store(n: u64) -> SemanticStore {
        SemanticStore::in_memory(raw_with(n), Arc::new(DeterministicEmbedder::default()))
    }

    fn r(a: u64, b: u64) -> EvidenceRange {
        EvidenceRange::new(a, b).unwrap()
    }

    #[test]
    fn add_text_entry() {
        let s = store(10);
        let id = s.add_entry("c", NewEntry::fact("Bobo is a Corgi", vec![r(4, 7)])).unwrap();
        let stored = s.get_stored("c", &id).unwrap();
        assert!(stored.vectors.v_img.is_none());
        assert_eq!(stored.entry.evidence, vec![r(4, 7)]);
        let norm = crate::embedding::l2_norm(&stored.vectors.v_text_dense);
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn image_without_caption_rejected() {
        let s = store(10);
        let mut e = NewEntry::fact("photo", vec![r(0, 0)]);
        e.c_image = Some("x.png".into());
        assert!(matches!(s.add_entry("c", e), Err(Error::InvalidEntry(_))));
    }

    #[test]
    fn dangling_evidence_rejected() {
        let s = store(10);
        let err = s.add_entry("c", NewEntry::fact("x y", vec![r(2, 99)])).unwrap_err();
        assert!(matches!(err, Error::InvalidEvidence(_)));
        assert!(s.is_empty("c").unwrap());
    }

    #[test]
    fn delete_and_get() {
        let s = store(3);
        assert!(matches!(s.get_entry("c", "nope"), Err(Error::UnknownEntry(_))));
        let id = s.add_entry("c", NewEntry::fact("a fact here", vec![r(0, 1)])).unwrap();
        assert_eq!(s.get_entry("c", &id).unwrap().c_text, "a fact here");
        s.delete_entry("c", &id).unwrap();
        assert!(matches!(s.delete_entry("c", &id), Err(Error::UnknownEntry(_))));
        assert!(matches!(s.get_entry("c", &id), Err(Error::UnknownEntry(_))));
        assert_eq!(s.raw().len("c").unwrap(), 3);
    }

    #[test]
    fn list_filters_and_orders() {
        let raw = raw_with(1);
        let s = SemanticStore::in_memory(raw.clone(), Arc::new(DeterministicEmbedder::default()));
        assert!(s.list_entries("c", None).unwrap().is_empty());
        for t in ["one fact", "two fact", "three fact"] {
            s.add_entry("c", NewEntry::fact(t, vec![r(0, 0)])).unwrap();
        }
        s.add_entry("c", NewEntry::update_record("changed", vec![r(0, 0)])).unwrap();
        raw.append(
            "c",
            NewMessage {
                session_id: "s".into(),
                timestamp: Utc.timestamp_opt(9_999, 0).unwrap(),
                speaker: "u".into(),
                text: "later".into(),
                image_refs: vec![],
            },
        )
        .unwrap();
        let late = s.add_entry("c", NewEntry::fact("latest fact", vec![r(1, 1)])).unwrap();
        assert_eq!(s.list_entries("c", Some(EntryKind::UpdateRecord)).unwrap().len(), 1);
        let all = s.list_entries("c", None).unwrap();
        assert_eq!(all[0].entry_id, late);
        assert_eq!(all[1].kind, EntryKind::UpdateRecord);
    }

    #[test]
    fn corpus_stats_track_live_entries() {
        let s = store(2);
        assert_eq!(s.corpus_stats("c").unwrap(), CorpusStats::default());
        let a = s.add_entry("c", NewEntry::fact("aa bb cc dd", vec![r(0, 0)])).unwrap();
        s.add_entry("c", NewEntry::fact("aa ee ff gg hh ii", vec![r(0, 0)])).unwrap();
        let st = s.corpus_stats("c").unwrap();
        assert_eq!(st.doc_count, 2);
        assert_eq!(st.avg_doc_len, 5.0);
        assert_eq!(st.term_doc_freq["aa"], 2);
        s.delete_entry("c", &a).unwrap();
        let st = s.corpus_stats("c").unwrap();
        assert_eq!((st.doc_count, st.avg_doc_len), (1, 6.0));
        assert_eq!(st.term_doc_freq["aa"], 1);
        assert!(!st.term_doc_freq.contains_key("bb"));
    }

    #[test]
    fn ids_stable_across_deletes() {
        let s = store(1);
        let a = s.add_entry("c", NewEntry::fact("first", vec![r(0, 0)])).unwrap();
        let b = s.add_entry("c", NewEntry::fact("second", vec![r(0, 0)])).unwrap();
        s.delete_entry("c", &a).unwrap();
        assert_eq!(s.get_entry("c", &b).unwrap().c_text, "second");
        let c = s.add_entry("c", NewEntry::fact("first", vec![r(0, 0)])).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn journal_and_snapshot_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let raw = raw_with(5);
        let emb: Arc<dyn Embedder> = Arc::new(DeterministicEmbedder::default());
        let (a, b);
        {
            let s = SemanticStore::open(dir.path(), raw.clone(), emb.clone()).unwrap();
            a = s.add_entry("c", NewEntry::fact("alpha fact", vec![r(0, 1)])).unwrap();
            s.checkpoint("c").unwrap();
            b = s.add_entry("c", NewEntry::fact("beta fact", vec![r(2, 3)])).unwrap();
            s.delete_entry("c", &a).unwrap();
        }
        let s = SemanticStore::open(dir.path(), raw.clone(), emb.clone()).unwrap();
        assert!(s.get_entry("c", &a).is_err());
        assert_eq!(s.get_entry("c", &b).unwrap().c_text, "beta fact");
        let dump = s.export("c").unwrap();
        assert_eq!(dump.entries.len(), 1);

        let other = SemanticStore::in_memory(raw, emb);
        other.import(dump.clone()).unwrap();
        assert_eq!(other.export("c").unwrap(), dump);
    }
}
