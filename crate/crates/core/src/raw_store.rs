//! Layer 1: the append-only chronological log of conversational turns.
//!
//! Each conversation is persisted as one JSON record per line. A record is
//! committed once its terminating newline is on disk; anything after the last
//! complete record is discarded (and truncated away) when the log is reopened,
//! so recovery after a crash always yields a prefix of what was appended.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One immutable conversational turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMessage {
    pub id: u64,
    pub conversation_id: String,
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl RawMessage {
    pub fn has_images(&self) -> bool {
        !self.image_refs.is_empty()
    }
}

/// Inclusive `[start_id, end_id]` pointer into one conversation's raw log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvidenceRange {
    pub start_id: u64,
    pub end_id: u64,
}

impl EvidenceRange {
    pub fn new(start_id: u64, end_id: u64) -> Result<Self> {
        if start_id > end_id {
            return Err(Error::InvalidEvidence(format!(
                "start {start_id} is after end {end_id}"
            )));
        }
        Ok(Self { start_id, end_id })
    }

    pub fn single(id: u64) -> Self {
        Self {
            start_id: id,
            end_id: id,
        }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.start_id <= id && id <= self.end_id
    }

    pub fn len(&self) -> u64 {
        self.end_id - self.start_id + 1
    }

    /// Checks the range against a log holding `log_len` messages.
    pub fn check_bounds(&self, log_len: u64) -> Result<()> {
        if self.start_id > self.end_id {
            return Err(Error::InvalidEvidence(format!(
                "start {} is after end {}",
                self.start_id, self.end_id
            )));
        }
        if self.end_id >= log_len {
            return Err(Error::RangeOutOfBounds {
                start: self.start_id,
                end: self.end_id,
                len: log_len,
            });
        }
        Ok(())
    }
}

/// Fields supplied by the caller on append; the id is assigned by the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewMessage {
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Message(RawMessage),
    Caption { id: u64, caption: String },
}

/// Whole-log document consumed by the eval harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLogExport {
    pub conversation_id: String,
    pub messages: Vec<RawMessage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    /// `fsync` after every record.
    Sync,
    /// Flush to the OS only.
    Flush,
}

/// Read counters, used to audit which components touch the raw log and how.
#[derive(Debug, Default)]
pub struct ReadStats {
    fetch_range_calls: AtomicU64,
    tail_calls: AtomicU64,
    max_tail_n: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadStatsSnapshot {
    pub fetch_range_calls: u64,
    pub tail_calls: u64,
    pub max_tail_n: u64,
}

impl ReadStats {
    pub fn snapshot(&self) -> ReadStatsSnapshot {
        ReadStatsSnapshot {
            fetch_range_calls: self.fetch_range_calls.load(Ordering::Relaxed),
            tail_calls: self.tail_calls.load(Ordering::Relaxed),
            max_tail_n: self.max_tail_n.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.fetch_range_calls.store(0, Ordering::Relaxed);
        self.tail_calls.store(0, Ordering::Relaxed);
        self.max_tail_n.store(0, Ordering::Relaxed);
    }
}

struct ConversationLog {
    messages: Vec<RawMessage>,
    file: Option<File>,
}

impl ConversationLog {
    fn write_record(&mut self, record: &Record, durability: Durability) -> Result<()> {
        let Some(file) = self.file.as_mut() else {
            return Ok(());
        };
        let mut line =
            serde_json::to_vec(record).map_err(|e| Error::StorageFailure(e.to_string()))?;
        line.push(b'\n');
        file.write_all(&line)?;
        match durability {
            Durability::Sync => file.sync_data()?,
            Durability::Flush => file.flush()?,
        }
        Ok(())
    }
}

pub struct RawMessageStore {
    dir: Option<PathBuf>,
    durability: Durability,
    logs: RwLock<HashMap<String, Arc<RwLock<ConversationLog>>>>,
    stats: ReadStats,
}

impl std::fmt::Debug for RawMessageStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RawMessageStore")
            .field("dir", &self.dir)
            .field("durability", &self.durability)
            .finish_non_exhaustive()
    }
}

impl RawMessageStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            durability: Durability::Flush,
            logs: RwLock::new(HashMap::new()),
            stats: ReadStats::default(),
        }
    }

    /// Opens (creating if needed) a store rooted at `dir`. Conversation logs
    /// are loaded lazily on first access.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(dir, Durability::Sync)
    }

    pub fn open_with(dir: impl AsRef<Path>, durability: Durability) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            durability,
            logs: RwLock::new(HashMap::new()),
            stats: ReadStats::default(),
        })
    }

    pub fn stats(&self) -> &ReadStats {
        &self.stats
    }

    pub fn log_path(&self, conversation_id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}.jsonl", encode_file_stem(conversation_id))))
    }

    /// True when the conversation has a log in memory or on disk.
    pub fn exists(&self, conversation_id: &str) -> bool {
        if self.logs.read().contains_key(conversation_id) {
            return true;
        }
        self.log_path(conversation_id).is_some_and(|p| p.exists())
    }

    /// Conversation ids known to the store, sorted.
    pub fn conversations(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = self.logs.read().keys().cloned().collect();
        if let Some(dir) = &self.dir {
            for entry in fs::read_dir(dir)? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if let Some(stem) = name.strip_suffix(".jsonl") {
                    if let Some(id) = decode_file_stem(stem) {
                        ids.push(id);
                    }
                }
            }
        }
        ids.sort();
        ids.dedup();
        Ok(ids)
    }

    fn log(&self, conversation_id: &str) -> Result<Arc<RwLock<ConversationLog>>> {
        if let Some(log) = self.logs.read().get(conversation_id) {
            return Ok(log.clone());
        }
        let mut logs = self.logs.write();
        if let Some(log) = logs.get(conversation_id) {
            return Ok(log.clone());
        }
        let log = match self.log_path(conversation_id) {
            Some(path) => recover_log(&path, conversation_id)?,
            None => ConversationLog {
                messages: Vec::new(),
                file: None,
            },
        };
        let log = Arc::new(RwLock::new(log));
        logs.insert(conversation_id.to_string(), log.clone());
        Ok(log)
    }

    /// Appends a turn and returns its id (previous max id + 1, or 0).
    pub fn append(&self, conversation_id: &str, msg: NewMessage) -> Result<u64> {
        let log = self.log(conversation_id)?;
        let mut log = log.write();
        if let Some(head) = log.messages.last() {
            if msg.timestamp < head.timestamp {
                return Err(Error::TimestampRegression {
                    conversation_id: conversation_id.to_string(),
                    given: msg.timestamp.to_rfc3339(),
                    head: head.timestamp.to_rfc3339(),
                });
            }
        }
        let id = log.messages.len() as u64;
        let message = RawMessage {
            id,
            conversation_id: conversation_id.to_string(),
            session_id: msg.session_id,
            timestamp: msg.timestamp,
            speaker: msg.speaker,
            text: msg.text,
            image_refs: msg.image_refs,
            caption: None,
        };
        let record = Record::Message(message);
        log.write_record(&record, self.durability)?;
        let Record::Message(message) = record else {
            unreachable!()
        };
        log.messages.push(message);
        Ok(id)
    }

    pub fn len(&self, conversation_id: &str) -> Result<u64> {
        Ok(self.log(conversation_id)?.read().messages.len() as u64)
    }

    pub fn is_empty(&self, conversation_id: &str) -> Result<bool> {
        Ok(self.len(conversation_id)? == 0)
    }

    pub fn get(&self, conversation_id: &str, id: u64) -> Result<RawMessage> {
        let log = self.log(conversation_id)?;
        let log = log.read();
        log.messages
            .get(id as usize)
            .cloned()
            .ok_or(Error::UnknownMessage(id))
    }

    /// Messages with `start_id <= id <= end_id`, in id order.
    pub fn fetch_range(&self, conversation_id: &str, range: EvidenceRange) -> Result<Vec<RawMessage>> {
        self.stats.fetch_range_calls.fetch_add(1, Ordering::Relaxed);
        let log = self.log(conversation_id)?;
        let log = log.read();
        range.check_bounds(log.messages.len() as u64)?;
        Ok(log.messages[range.start_id as usize..=range.end_id as usize].to_vec())
    }

    /// The `min(n, len)` most recent messages, oldest first.
    pub fn tail(&self, conversation_id: &str, n: usize) -> Result<Vec<RawMessage>> {
        self.stats.tail_calls.fetch_add(1, Ordering::Relaxed);
        self.stats
            .max_tail_n
            .fetch_max(n as u64, Ordering::Relaxed);
        let log = self.log(conversation_id)?;
        let log = log.read();
        let start = log.messages.len().saturating_sub(n);
        Ok(log.messages[start..].to_vec())
    }

    /// The newest timestamp in the log, if any.
    pub fn head_timestamp(&self, conversation_id: &str) -> Result<Option<DateTime<Utc>>> {
        Ok(self
            .log(conversation_id)?
            .read()
            .messages
            .last()
            .map(|m| m.timestamp))
    }

    /// Sets the caption of an image-bearing message exactly once.
    pub fn set_caption(&self, conversation_id: &str, id: u64, caption: &str) -> Result<()> {
        let log = self.log(conversation_id)?;
        let mut log = log.write();
        let msg = log
            .messages
            .get(id as usize)
            .ok_or(Error::UnknownMessage(id))?;
        if msg.caption.is_some() {
            return Err(Error::CaptionAlreadySet(id));
        }
        if !msg.has_images() {
            return Err(Error::NoImageContent(id));
        }
        let record = Record::Caption {
            id,
            caption: caption.to_string(),
        };
        log.write_record(&record, self.durability)?;
        log.messages[id as usize].caption = Some(caption.to_string());
        Ok(())
    }

    pub fn read_all(&self, conversation_id: &str) -> Result<Vec<RawMessage>> {
        Ok(self.log(conversation_id)?.read().messages.clone())
    }

    pub fn export(&self, conversation_id: &str) -> Result<RawLogExport> {
        Ok(RawLogExport {
            conversation_id: conversation_id.to_string(),
            messages: self.read_all(conversation_id)?,
        })
    }
}

/// Loads a log file, keeping the longest valid prefix of complete records and
/// truncating the file to it.
fn recover_log(path: &Path, conversation_id: &str) -> Result<ConversationLog> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let (messages, good_len) = replay(&bytes, conversation_id);
    let file = OpenOptions::new()
        .create(true)
        .read(true)
        .write(true)
        .truncate(false)
        .open(path)?;
    if (good_len as u64) < bytes.len() as u64 {
        log::warn!(
            "raw log {} has {} trailing bytes past the last complete record; truncating",
            path.display(),
            bytes.len() - good_len
        );
        file.set_len(good_len as u64)?;
        file.sync_data()?;
    }
    let mut file = file;
    use std::io::Seek;
    file.seek(std::io::SeekFrom::End(0))?;
    Ok(ConversationLog {
        messages,
        file: Some(file),
    })
}

/// Replays newline-terminated records. Returns the recovered messages and the
/// byte length of the valid prefix.
fn replay(bytes: &[u8], conversation_id: &str) -> (Vec<RawMessage>, usize) {
    let mut messages: Vec<RawMessage> = Vec::new();
    let mut offset = 0;
    while let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') {
        let line = &bytes[offset..offset + nl];
        let Ok(record) = serde_json::from_slice::<Record>(line) else {
            break;
        };
        let accepted = match record {
            Record::Message(m) => {
                let ok = m.id == messages.len() as u64
                    && m.conversation_id == conversation_id
                    && m.caption.is_none()
                    && messages.last().is_none_or(|h| h.timestamp <= m.timestamp);
                if ok {
                    messages.push(m);
                }
                ok
            }
            Record::Caption { id, caption } => match messages.get_mut(id as usize) {
                Some(m) if m.caption.is_none() && m.has_images() => {
                    m.caption = Some(caption);
                    true
                }
                _ => false,
            },
        };
        if !accepted {
            break;
        }
        offset += nl + 1;
    }
    (messages, offset)
}

pub(crate) fn encode_file_stem(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_file_stem(stem: &str) -> Option<String> {
    let bytes = stem.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = stem.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
    }

    fn msg(secs: i64, text: &str) -> NewMessage {
        NewMessage {
            session_id: "s1".into(),
            timestamp: ts(secs),
            speaker: "user".into(),
            text: text.into(),
            image_refs: vec![],
        }
    }

    fn filled(n: u64) -> RawMessageStore {
        let store = RawMessageStore::in_memory();
        for i in 0..n {
            store.append("c", msg(i as i64, &format!("m{i}"))).unwrap();
        }
        store
    }

    #[test]
    fn ids_are_dense_from_zero() {
        let store = RawMessageStore::in_memory();
        assert_eq!(store.append("c", msg(0, "a")).unwrap(), 0);
        assert_eq!(store.append("c", msg(0, "b")).unwrap(), 1);
        assert_eq!(store.append("other", msg(0, "x")).unwrap(), 0);
    }

    #[test]
    fn rejects_timestamp_regression() {
        let store = RawMessageStore::in_memory();
        store.append("c", msg(10, "a")).unwrap();
        let err = store.append("c", msg(5, "b")).unwrap_err();
        assert!(matches!(err, Error::TimestampRegression { .. }));
        assert_eq!(store.len("c").unwrap(), 1);
    }

    #[test]
    fn fetch_range_cases() {
        let store = filled(5);
        let one = store.fetch_range("c", EvidenceRange::single(2)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].id, 2);
        let all = store.fetch_range("c", EvidenceRange::new(0, 4).unwrap()).unwrap();
        assert_eq!(all.iter().map(|m| m.id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        let err = store
            .fetch_range("c", EvidenceRange::new(3, 9).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::RangeOutOfBounds { .. }));
    }

    #[test]
    fn inverted_range_is_rejected() {
        assert!(EvidenceRange::new(4, 2).is_err());
    }

    #[test]
    fn tail_cases() {
        assert_eq!(filled(3).tail("c", 5).unwrap().len(), 3);
        assert!(filled(3).tail("c", 0).unwrap().is_empty());
        let ids: Vec<u64> = filled(10).tail("c", 2).unwrap().iter().map(|m| m.id).collect();
        assert_eq!(ids, vec![8, 9]);
        assert!(RawMessageStore::in_memory().tail("none", 4).unwrap().is_empty());
    }

    #[test]
    fn caption_rules() {
        let store = RawMessageStore::in_memory();
        let mut with_img = msg(0, "look");
        with_img.image_refs = vec!["file:///tmp/dog.png".into()];
        let img_id = store.append("c", with_img).unwrap();
        let txt_id = store.append("c", msg(1, "plain")).unwrap();
        store.set_caption("c", img_id, "a corgi").unwrap();
        let m = store.get("c", img_id).unwrap();
        assert_eq!(m.caption.as_deref(), Some("a corgi"));
        assert_eq!(m.text, "look");
        assert!(matches!(
            store.set_caption("c", img_id, "again"),
            Err(Error::CaptionAlreadySet(_))
        ));
        assert!(matches!(
            store.set_caption("c", txt_id, "nope"),
            Err(Error::NoImageContent(_))
        ));
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RawMessageStore::open(dir.path()).unwrap();
            store.append("conv/1", msg(0, "a")).unwrap();
            let mut with_img = msg(1, "b");
            with_img.image_refs = vec!["img.png".into()];
            store.append("conv/1", with_img).unwrap();
            store.set_caption("conv/1", 1, "cap").unwrap();
        }
        let store = RawMessageStore::open(dir.path()).unwrap();
        let all = store.read_all("conv/1").unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[1].caption.as_deref(), Some("cap"));
        assert_eq!(store.conversations().unwrap(), vec!["conv/1".to_string()]);
        assert_eq!(store.append("conv/1", msg(2, "c")).unwrap(), 2);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path;
        {
            let store = RawMessageStore::open(dir.path()).unwrap();
            for i in 0..3 {
                store.append("c", msg(i, "hello")).unwrap();
            }
            path = store.log_path("c").unwrap();
        }
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        let store = RawMessageStore::open(dir.path()).unwrap();
        assert_eq!(store.len("c").unwrap(), 2);
        assert_eq!(store.append("c", msg(9, "next")).unwrap(), 2);
        let reopened = RawMessageStore::open(dir.path()).unwrap();
        assert_eq!(reopened.len("c").unwrap(), 3);
    }

    #[test]
    fn file_stem_round_trip() {
        for id in ["plain", "with space/and:colon", "ünï"] {
            assert_eq!(decode_file_stem(&encode_file_stem(id)).unwrap(), id);
        }
    }
}
