//! The memory manager agent: the only component that writes the semantic
//! layer. It runs a bounded tool loop over search / fetch / add / delete for
//! query and update requests, and applies manual edits from the service.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::llm::{ChatTurnMessage, Completion, Gateway, ParamSpec, ParamType, ToolCall, ToolSpec};
use crate::prompts;
use crate::raw_store::{EvidenceRange, NewMessage, RawMessage, RawMessageStore};
use crate::retrieval::{HybridRetriever, Query, RankedResult};
use crate::semantic_store::{EntryKind, MemoryDump, NewEntry, SemanticEntry, SemanticStore};

pub const SEARCH_TOOL: &str = "search_semantic_memories";
pub const FETCH_TOOL: &str = "fetch_raw_messages";
pub const ADD_TOOL: &str = "add_memory";
pub const DELETE_TOOL: &str = "delete_memory";

/// Upper bound on messages returned by one fetch.
const MAX_FETCH: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryManagerConfig {
    /// Search, fetch and final-answer completions allowed per operation.
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// Recent raw messages forwarded with each request.
    #[serde(default = "default_window")]
    pub context_window: usize,
    /// add/delete calls allowed per operation; counted apart from iterations.
    #[serde(default = "default_writes")]
    pub max_writes: usize,
    /// Offer `fetch_raw_messages`. Off = semantic-only ablation.
    #[serde(default = "yes")]
    pub raw_fetch: bool,
    /// Replace the query loop with a single retrieval of the request text.
    #[serde(default)]
    pub single_pass: bool,
}

fn default_iterations() -> usize {
    3
}
fn default_window() -> usize {
    5
}
fn default_writes() -> usize {
    8
}
fn yes() -> bool {
    true
}

impl Default for MemoryManagerConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_iterations(),
            context_window: default_window(),
            max_writes: default_writes(),
            raw_fetch: true,
            single_pass: false,
        }
    }
}

impl MemoryManagerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("memory_manager.max_iterations must be at least 1".into()));
        }
        if self.context_window == 0 {
            return Err(Error::Config("memory_manager.context_window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryOperation {
    Query {
        request_text: String,
        #[serde(default)]
        request_image: Option<String>,
    },
    Update {
        instruction: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRequest {
    pub conversation_id: String,
    pub operation: MemoryOperation,
    /// The most recent raw messages, oldest first.
    pub context: Vec<RawMessage>,
}

/// One tool invocation inside an operation, for traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolStep {
    pub tool: String,
    pub arguments: Map<String, Value>,
    pub ok: bool,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryAnswer {
    pub synthesized_context: String,
    pub cited_entries: Vec<String>,
    pub fetched_ranges: Vec<EvidenceRange>,
    pub iterations_used: usize,
    /// The iteration budget ran out before a final answer.
    pub partial: bool,
    pub steps: Vec<ToolStep>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub created: Vec<String>,
    pub deleted: Vec<String>,
    pub update_records: Vec<String>,
    pub rationale: String,
    pub iterations_used: usize,
    pub partial: bool,
    pub steps: Vec<ToolStep>,
}

/// A human correction, applied as a degenerate update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManualEdit {
    Add {
        content: String,
        evidence_ids: Vec<EvidenceRange>,
        #[serde(default)]
        kind: Option<EntryKind>,
        #[serde(default)]
        image_ref: Option<String>,
    },
    Delete {
        entry_id: String,
        /// Text of the update record that documents the removal.
        #[serde(default)]
        note: Option<String>,
    },
}

pub fn tool_specs(raw_fetch: bool, writes: bool) -> Vec<ToolSpec> {
    let mut tools = vec![ToolSpec {
        name: SEARCH_TOOL.into(),
        description: "Search semantic memory using tri-path retrieval (dense, BM25, visual) fused by reciprocal rank.".into(),
        params: vec![
            ParamSpec::required("query", ParamType::String, "Search text."),
            ParamSpec::optional("image_ref", ParamType::String, "Image URI to search with on the visual path."),
            ParamSpec::optional("top_k", ParamType::Integer, "Number of results (default 10)."),
        ],
    }];
    if raw_fetch {
        tools.push(ToolSpec {
            name: FETCH_TOOL.into(),
            description: "Retrieve raw messages by inclusive ID range.".into(),
            params: vec![
                ParamSpec::required("start_id", ParamType::Integer, "First message id."),
                ParamSpec::required("end_id", ParamType::Integer, "Last message id (inclusive)."),
            ],
        });
    }
    if writes {
        tools.push(ToolSpec {
            name: ADD_TOOL.into(),
            description: "Create a new semantic memory entry linked to its supporting raw messages.".into(),
            params: vec![
                ParamSpec::required("content", ParamType::String, "The memory, as a self-contained statement."),
                ParamSpec::required(
                    "evidence_ids",
                    ParamType::array_of(ParamType::array_of(ParamType::Integer)),
                    "Inclusive [start_id, end_id] ranges of supporting raw messages.",
                ),
                ParamSpec::optional("kind", ParamType::String, "fact (default) or update_record.")
                    .one_of(&["fact", "update_record"]),
                ParamSpec::optional("image_ref", ParamType::String, "Image URI the memory is about."),
            ],
        });
        tools.push(ToolSpec {
            name: DELETE_TOOL.into(),
            description: "Delete a semantic memory entry.".into(),
            params: vec![ParamSpec::required("entry_id", ParamType::String, "Id of the entry to delete.")],
        });
    }
    tools
}

pub struct MemoryManager {
    store: Arc<SemanticStore>,
    retriever: Arc<HybridRetriever>,
    gateway: Gateway,
    config: MemoryManagerConfig,
    system_prompt: String,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl MemoryManager {
    pub fn new(retriever: Arc<HybridRetriever>, gateway: Gateway, config: MemoryManagerConfig) -> Self {
        Self {
            store: retriever.store().clone(),
            retriever,
            gateway,
            config,
            system_prompt: prompts::MEMORY_MANAGER.to_string(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    pub fn config(&self) -> &MemoryManagerConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<SemanticStore> {
        &self.store
    }

    pub fn raw(&self) -> &Arc<RawMessageStore> {
        self.store.raw()
    }

    pub fn retriever(&self) -> &Arc<HybridRetriever> {
        &self.retriever
    }

    fn lock(&self, conversation_id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(conversation_id.to_string()).or_default().clone()
    }

    /// Appends a turn and captions its images before anything can cite it.
    pub fn ingest_turn(&self, conversation_id: &str, msg: NewMessage) -> Result<RawMessage> {
        self.ingest_captioned(conversation_id, msg, None)
    }

    /// Like [`ingest_turn`](Self::ingest_turn), but a supplied caption (for
    /// instance one shipped with a dataset) replaces captioning.
    pub fn ingest_captioned(&self, conversation_id: &str, msg: NewMessage, caption: Option<&str>) -> Result<RawMessage> {
        let images = msg.image_refs.clone();
        let id = self.raw().append(conversation_id, msg)?;
        if !images.is_empty() {
            let caption = match caption.map(str::trim).filter(|c| !c.is_empty()) {
                Some(c) => c.to_string(),
                None => images
                    .iter()
                    .map(|img| self.store.embedder().caption_image(img))
                    .collect::<Result<Vec<_>>>()?
                    .join(" | "),
            };
            self.raw().set_caption(conversation_id, id, &caption)?;
        }
        self.raw().get(conversation_id, id)
    }

    fn context(&self, conversation_id: &str) -> Result<Vec<RawMessage>> {
        self.raw().tail(conversation_id, self.config.context_window)
    }

    pub fn query_request(&self, conversation_id: &str, text: &str, image: Option<String>) -> Result<MemoryRequest> {
        Ok(MemoryRequest {
            conversation_id: conversation_id.to_string(),
            operation: MemoryOperation::Query {
                request_text: text.to_string(),
                request_image: image,
            },
            context: self.context(conversation_id)?,
        })
    }

    pub fn update_request(&self, conversation_id: &str, instruction: &str) -> Result<MemoryRequest> {
        Ok(MemoryRequest {
            conversation_id: conversation_id.to_string(),
            operation: MemoryOperation::Update {
                instruction: instruction.to_string(),
            },
            context: self.context(conversation_id)?,
        })
    }

    fn check_request(&self, req: &MemoryRequest) -> Result<()> {
        if req.context.len() > self.config.context_window {
            return Err(Error::InvalidRequest(format!(
                "context holds {} messages, window is {}",
                req.context.len(),
                self.config.context_window
            )));
        }
        let len = self.raw().len(&req.conversation_id)?;
        let contiguous = req.context.windows(2).all(|w| w[1].id == w[0].id + 1);
        let at_head = req.context.last().is_none_or(|m| m.id + 1 == len);
        if !contiguous || !at_head {
            return Err(Error::InvalidRequest("context must be the tail of the raw log".into()));
        }
        Ok(())
    }

    pub fn run_query(&self, req: &MemoryRequest) -> Result<MemoryAnswer> {
        let MemoryOperation::Query {
            request_text,
            request_image,
        } = &req.operation
        else {
            return Err(Error::InvalidRequest("run_query needs a query request".into()));
        };
        self.check_request(req)?;
        let lock = self.lock(&req.conversation_id);
        let _guard = lock.lock();

        if self.config.single_pass {
            return self.single_pass(&req.conversation_id, request_text, request_image.clone());
        }

        let mut op = Operation::new(self, req, false);
        let end = op.run()?;
        let (text, partial) = match end {
            LoopEnd::Final(text) => (text, false),
            LoopEnd::Exhausted => (op.gathered_context(), true),
        };
        let cited = op.cited(&text);
        Ok(MemoryAnswer {
            synthesized_context: text,
            cited_entries: cited,
            fetched_ranges: op.fetched,
            iterations_used: op.iterations,
            partial,
            steps: op.steps,
        })
    }

    fn single_pass(&self, conversation_id: &str, text: &str, image: Option<String>) -> Result<MemoryAnswer> {
        let mut q = self.retriever.query(text);
        q.q_image = image;
        let results = self.retriever.retrieve(conversation_id, &q)?;
        let mut args = Map::new();
        args.insert("query".into(), json!(text));
        let cited = results.iter().map(|r| r.entry_id.clone()).collect();
        let context = results.iter().map(|r| entry_line(&r.entry)).collect::<Vec<_>>().join("\n");
        Ok(MemoryAnswer {
            synthesized_context: context,
            cited_entries: cited,
            fetched_ranges: Vec::new(),
            iterations_used: 1,
            partial: false,
            steps: vec![ToolStep {
                tool: SEARCH_TOOL.into(),
                arguments: args,
                ok: true,
                summary: format!("{} results", results.len()),
            }],
        })
    }

    pub fn run_update(&self, req: &MemoryRequest) -> Result<UpdateOutcome> {
        if !matches!(req.operation, MemoryOperation::Update { .. }) {
            return Err(Error::InvalidRequest("run_update needs an update request".into()));
        }
        self.check_request(req)?;
        let lock = self.lock(&req.conversation_id);
        let _guard = lock.lock();

        let mut op = Operation::new(self, req, true);
        let end = op.run()?;
        let (rationale, partial) = match end {
            LoopEnd::Final(text) => (text, false),
            LoopEnd::Exhausted => ("iteration budget exhausted".to_string(), true),
        };
        if !op.deleted.is_empty() && op.created.is_empty() && op.update_records.is_empty() {
            // A removal must leave a trace of what changed.
            let texts: Vec<&str> = op.deleted.iter().map(|(_, e)| e.c_text.as_str()).collect();
            let evidence = match (req.context.first(), req.context.last()) {
                (Some(a), Some(b)) => vec![EvidenceRange::new(a.id, b.id)?],
                _ => op.deleted.iter().flat_map(|(_, e)| e.evidence.clone()).collect(),
            };
            let id = self.store.add_entry(
                &req.conversation_id,
                NewEntry::update_record(format!("Removed outdated memory: {}", texts.join("; ")), evidence),
            )?;
            op.update_records.push(id);
        }
        Ok(UpdateOutcome {
            created: op.created,
            deleted: op.deleted.into_iter().map(|(id, _)| id).collect(),
            update_records: op.update_records,
            rationale,
            iterations_used: op.iterations,
            partial,
            steps: op.steps,
        })
    }

    pub fn apply_manual(&self, conversation_id: &str, edit: ManualEdit) -> Result<UpdateOutcome> {
        let lock = self.lock(conversation_id);
        let _guard = lock.lock();
        let mut out = UpdateOutcome {
            rationale: "manual edit".into(),
            ..Default::default()
        };
        match edit {
            ManualEdit::Add {
                content,
                evidence_ids,
                kind,
                image_ref,
            } => {
                let kind = kind.unwrap_or(EntryKind::Fact);
                let new = self.build_entry(content, evidence_ids, kind, image_ref)?;
                let id = self.store.add_entry(conversation_id, new)?;
                match kind {
                    EntryKind::Fact => out.created.push(id),
                    EntryKind::UpdateRecord => out.update_records.push(id),
                }
            }
            ManualEdit::Delete { entry_id, note } => {
                let removed = self.store.delete_entry(conversation_id, &entry_id)?;
                let text = note
                    .filter(|n| !n.trim().is_empty())
                    .unwrap_or_else(|| format!("Removed memory: {}", removed.c_text));
                let id = self
                    .store
                    .add_entry(conversation_id, NewEntry::update_record(text, removed.evidence.clone()))?;
                out.deleted.push(entry_id);
                out.update_records.push(id);
            }
        }
        Ok(out)
    }

    fn build_entry(
        &self,
        content: String,
        evidence: Vec<EvidenceRange>,
        kind: EntryKind,
        image_ref: Option<String>,
    ) -> Result<NewEntry> {
        let mut new = NewEntry {
            kind,
            ..NewEntry::fact(content, evidence)
        };
        if let Some(img) = image_ref {
            let caption = self.store.embedder().caption_image(&img)?;
            new = new.with_image(img, caption);
        }
        Ok(new)
    }

    /// Replaces a conversation's semantic memory with an exported dump whose
    /// evidence must resolve against the current raw log.
    pub fn restore(&self, dump: MemoryDump) -> Result<()> {
        let lock = self.lock(&dump.conversation_id);
        let _guard = lock.lock();
        self.store.import(dump)
    }

    /// Checks that every live entry's evidence resolves against the raw log.
    pub fn verify_evidence(&self, conversation_id: &str) -> Result<()> {
        let len = self.raw().len(conversation_id)?;
        for e in self.store.list_entries(conversation_id, None)? {
            for r in &e.evidence {
                r.check_bounds(len)
                    .map_err(|err| Error::InvalidEvidence(format!("entry {}: {err}", e.entry_id)))?;
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for MemoryManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryManager").field("config", &self.config).finish()
    }
}

enum LoopEnd {
    Final(String),
    Exhausted,
}

/// Per-operation state; the transcript is dropped when the operation ends.
struct Operation<'a> {
    mm: &'a MemoryManager,
    conv: &'a str,
    transcript: Vec<ChatTurnMessage>,
    tools: Vec<ToolSpec>,
    iterations: usize,
    writes: usize,
    rejected_adds: usize,
    returned: Vec<SemanticEntry>,
    gathered: Vec<String>,
    fetched: Vec<EvidenceRange>,
    created: Vec<String>,
    update_records: Vec<String>,
    deleted: Vec<(String, SemanticEntry)>,
    steps: Vec<ToolStep>,
}

impl<'a> Operation<'a> {
    fn new(mm: &'a MemoryManager, req: &'a MemoryRequest, writes: bool) -> Self {
        let context: Vec<Value> = req.context.iter().map(message_json).collect();
        let mut body = match &req.operation {
            MemoryOperation::Query {
                request_text,
                request_image,
            } => json!({"operation": "query", "request": request_text, "request_image": request_image}),
            MemoryOperation::Update { instruction } => json!({"operation": "update", "instruction": instruction}),
        };
        body["context"] = Value::Array(context);
        if let (Some(a), Some(b)) = (req.context.first(), req.context.last()) {
            body["context_range"] = json!([a.id, b.id]);
        }
        Self {
            mm,
            conv: &req.conversation_id,
            transcript: vec![
                ChatTurnMessage::system(mm.system_prompt.clone()),
                ChatTurnMessage::user(body.to_string()),
            ],
            tools: tool_specs(mm.config.raw_fetch, writes),
            iterations: 0,
            writes: 0,
            rejected_adds: 0,
            returned: Vec::new(),
            gathered: Vec::new(),
            fetched: Vec::new(),
            created: Vec::new(),
            update_records: Vec::new(),
            deleted: Vec::new(),
            steps: Vec::new(),
        }
    }

    fn run(&mut self) -> Result<LoopEnd> {
        let cfg = &self.mm.config;
        loop {
            if self.iterations >= cfg.max_iterations {
                return Ok(LoopEnd::Exhausted);
            }
            let call = match self.mm.gateway.complete(&self.transcript, &self.tools)? {
                Completion::Text { text } => {
                    self.iterations += 1;
                    return Ok(LoopEnd::Final(text));
                }
                Completion::ToolCall { call } => call,
            };
            let is_write = call.name == ADD_TOOL || call.name == DELETE_TOOL;
            let result = if is_write && self.writes >= cfg.max_writes {
                // Over-budget writes cost an iteration so the loop still ends.
                self.iterations += 1;
                Err("write budget for this operation is exhausted".to_string())
            } else {
                if is_write {
                    self.writes += 1;
                } else {
                    self.iterations += 1;
                }
                self.dispatch(&call)?
            };
            let (ok, content) = match result {
                Ok(v) => (true, v.to_string()),
                Err(msg) => (false, json!({ "error": msg }).to_string()),
            };
            self.steps.push(ToolStep {
                tool: call.name.clone(),
                arguments: call.arguments.clone(),
                ok,
                summary: summarize(&content),
            });
            let id = call.id.clone();
            self.transcript.push(ChatTurnMessage::assistant_tool_call(call));
            self.transcript.push(ChatTurnMessage::tool_result(id, content));
        }
    }

    /// `Ok(Err(..))` is a recoverable tool error reported back to the model.
    fn dispatch(&mut self, call: &ToolCall) -> Result<std::result::Result<Value, String>> {
        let args = &call.arguments;
        match call.name.as_str() {
            SEARCH_TOOL => self.search(args),
            FETCH_TOOL => self.fetch(args),
            ADD_TOOL => self.add(args),
            DELETE_TOOL => self.delete(args),
            other => Ok(Err(format!("unknown tool `{other}`"))),
        }
    }

    fn search(&mut self, args: &Map<String, Value>) -> Result<std::result::Result<Value, String>> {
        let retriever = &self.mm.retriever;
        let mut q: Query = retriever.query(str_arg(args, "query").unwrap_or_default());
        q.q_image = str_arg(args, "image_ref").filter(|s| !s.is_empty());
        if let Some(k) = args.get("top_k").and_then(Value::as_u64) {
            if k == 0 {
                return Ok(Err("top_k must be positive".into()));
            }
            q.final_k = k as usize;
        }
        if q.validate().is_err() {
            return Ok(Err("query needs non-empty text or an image_ref".into()));
        }
        let results = match retriever.retrieve(self.conv, &q) {
            Ok(r) => r,
            Err(e @ (Error::ImageUnreadable(_) | Error::EmptyInput)) => return Ok(Err(e.to_string())),
            Err(e) => return Err(e),
        };
        for r in &results {
            self.gathered.push(entry_line(&r.entry));
            if !self.returned.iter().any(|e| e.entry_id == r.entry_id) {
                self.returned.push(r.entry.clone());
            }
        }
        Ok(Ok(json!({ "results": results.iter().map(result_json).collect::<Vec<_>>() })))
    }

    fn fetch(&mut self, args: &Map<String, Value>) -> Result<std::result::Result<Value, String>> {
        let (Some(start), Some(end)) = (
            args.get("start_id").and_then(Value::as_u64),
            args.get("end_id").and_then(Value::as_u64),
        ) else {
            return Ok(Err("start_id and end_id must be non-negative integers".into()));
        };
        let range = match EvidenceRange::new(start, end) {
            Ok(r) => r,
            Err(e) => return Ok(Err(e.to_string())),
        };
        if range.len() > MAX_FETCH {
            return Ok(Err(format!("at most {MAX_FETCH} messages per fetch")));
        }
        let messages = match self.mm.raw().fetch_range(self.conv, range) {
            Ok(m) => m,
            Err(e @ (Error::RangeOutOfBounds { .. } | Error::InvalidEvidence(_))) => return Ok(Err(e.to_string())),
            Err(e) => return Err(e),
        };
        self.fetched.push(range);
        for m in &messages {
            self.gathered.push(format!("#{} {}: {}", m.id, m.speaker, m.text));
        }
        Ok(Ok(json!({ "messages": messages.iter().map(message_json).collect::<Vec<_>>() })))
    }

    fn add(&mut self, args: &Map<String, Value>) -> Result<std::result::Result<Value, String>> {
        let content = str_arg(args, "content").unwrap_or_default();
        let kind = match str_arg(args, "kind") {
            Some(k) => k.parse()?,
            None => EntryKind::Fact,
        };
        let outcome = parse_ranges(args.get("evidence_ids")).and_then(|evidence| {
            let new = self
                .mm
                .build_entry(content, evidence, kind, str_arg(args, "image_ref").filter(|s| !s.is_empty()))?;
            self.mm.store.add_entry(self.conv, new)
        });
        match outcome {
            Ok(id) => {
                match kind {
                    EntryKind::Fact => self.created.push(id.clone()),
                    EntryKind::UpdateRecord => self.update_records.push(id.clone()),
                }
                Ok(Ok(json!({ "entry_id": id })))
            }
            Err(e @ (Error::InvalidEvidence(_) | Error::InvalidEntry(_) | Error::ImageUnreadable(_))) => {
                self.rejected_adds += 1;
                if self.rejected_adds > 1 {
                    return Err(e);
                }
                Ok(Err(format!("{e}. Cite only ids that exist in the raw log.")))
            }
            Err(e) => Err(e),
        }
    }

    fn delete(&mut self, args: &Map<String, Value>) -> Result<std::result::Result<Value, String>> {
        let id = str_arg(args, "entry_id").unwrap_or_default();
        if self.created.contains(&id) || self.update_records.contains(&id) {
            return Ok(Err("cannot delete an entry created in the same operation".into()));
        }
        match self.mm.store.delete_entry(self.conv, &id) {
            Ok(entry) => {
                self.deleted.push((id.clone(), entry));
                Ok(Ok(json!({ "deleted": id })))
            }
            Err(e @ Error::UnknownEntry(_)) => Ok(Err(e.to_string())),
            Err(e) => Err(e),
        }
    }

    fn gathered_context(&self) -> String {
        if self.gathered.is_empty() {
            return String::new();
        }
        let mut seen = BTreeSet::new();
        let lines: Vec<&str> = self
            .gathered
            .iter()
            .filter(|l| seen.insert(l.as_str()))
            .map(String::as_str)
            .collect();
        lines.join("\n")
    }

    /// Returned entries named in the answer or whose evidence was fetched.
    fn cited(&self, answer: &str) -> Vec<String> {
        self.returned
            .iter()
            .filter(|e| {
                answer.contains(&e.entry_id)
                    || e.evidence
                        .iter()
                        .any(|r| self.fetched.iter().any(|f| f.start_id <= r.end_id && r.start_id <= f.end_id))
            })
            .map(|e| e.entry_id.clone())
            .collect()
    }
}

fn str_arg(args: &Map<String, Value>, key: &str) -> Option<String> {
    args.get(key).and_then(Value::as_str).map(str::to_string)
}

fn parse_ranges(value: Option<&Value>) -> Result<Vec<EvidenceRange>> {
    let bad = || Error::InvalidEvidence("evidence_ids must be a list of [start_id, end_id] pairs".into());
    let items = value.and_then(Value::as_array).ok_or_else(bad)?;
    items
        .iter()
        .map(|pair| {
            let ids: Vec<u64> = pair
                .as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|v| v.as_u64().ok_or_else(bad))
                .collect::<Result<_>>()?;
            match ids.as_slice() {
                [one] => Ok(EvidenceRange::single(*one)),
                [start, end] => EvidenceRange::new(*start, *end),
                _ => Err(bad()),
            }
        })
        .collect()
}

fn message_json(m: &RawMessage) -> Value {
    let mut v = json!({
        "id": m.id,
        "speaker": m.speaker,
        "timestamp": m.timestamp.to_rfc3339(),
        "text": m.text,
    });
    if m.has_images() {
        v["image_refs"] = json!(m.image_refs);
    }
    if let Some(c) = &m.caption {
        v["caption"] = json!(c);
    }
    v
}

fn result_json(r: &RankedResult) -> Value {
    let e = &r.entry;
    json!({
        "entry_id": e.entry_id,
        "content": e.c_text,
        "caption": e.c_caption,
        "image_ref": e.c_image,
        "kind": e.kind,
        "evidence_ids": e.evidence.iter().map(|x| [x.start_id, x.end_id]).collect::<Vec<_>>(),
        "created_at": e.created_at.to_rfc3339(),
        "score": r.score_rrf,
    })
}

fn entry_line(e: &SemanticEntry) -> String {
    let evidence: Vec<String> = e.evidence.iter().map(|r| format!("[{}, {}]", r.start_id, r.end_id)).collect();
    match &e.c_caption {
        Some(c) => format!("- {} (image: {c}; evidence {})", e.c_text, evidence.join(", ")),
        None => format!("- {} (evidence {})", e.c_text, evidence.join(", ")),
    }
}

fn summarize(content: &str) -> String {
    const MAX: usize = 160;
    if content.len() <= MAX {
        return content.to_string();
    }
    let cut = (0..=MAX).rev().find(|&i| content.is_char_boundary(i)).unwrap_or(0);
    format!("{}…", &content[..cut])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::DeterministicEmbedder;
    use crate::llm::RuleSet;
    use crate::retrieval::RetrievalConfig;
    use chrono::{TimeZone, Utc};

    fn setup(rules: Value, config: MemoryManagerConfig) -> MemoryManager {
        let raw = Arc::new(RawMessageStore::in_memory());
        let store = Arc::new(SemanticStore::in_memory(raw, Arc::new(DeterministicEmbedder::new(64, 64))));
        let retriever = Arc::new(HybridRetriever::new(store, RetrievalConfig::default()));
        let gateway = Gateway::scripted(RuleSet::from_json(&rules.to_string()).unwrap());
        MemoryManager::new(retriever, gateway, config)
    }

    fn say(mm: &MemoryManager, text: &str) -> u64 {
        let n = mm.raw().len("c").unwrap();
        mm.ingest_turn(
            "c",
            NewMessage {
                session_id: "s1".into(),
                timestamp: Utc.timestamp_opt(1_000 + n as i64 * 60, 0).unwrap(),
                speaker: "user".into(),
                text: text.into(),
                image_refs: vec![],
            },
        )
        .unwrap()
        .id
    }

    #[test]
    fn fresh_fact_creates_one_entry() {
        let mm = setup(
            json!({"rules": [
                {"when": {"last_role": "user"}, "respond": {"tool_call": {"name": "search_semantic_memories", "arguments": {"query": "{{user:/instruction}}"}}}},
                {"when": {"last_tool": "search_semantic_memories"}, "respond": {"tool_call": {"name": "add_memory", "arguments": {"content": "User's dog is named Bobo", "evidence_ids": ["$user:/context_range"]}}}},
                {"when": {"last_tool": "add_memory"}, "respond": {"text": "stored"}}
            ]}),
            MemoryManagerConfig::default(),
        );
        let id = say(&mm, "my dog is named Bobo");
        let out = mm.run_update(&mm.update_request("c", "remember the dog's name").unwrap()).unwrap();
        assert_eq!(out.created.len(), 1);
        assert!(out.deleted.is_empty() && out.update_records.is_empty());
        let e = mm.store().get_entry("c", &out.created[0]).unwrap();
        assert!(e.evidence.iter().any(|r| r.contains(id)));
        assert_eq!(out.iterations_used, 2);
    }

    #[test]
    fn budget_exhaustion_returns_partial() {
        let mm = setup(
            json!({"default": {"tool_call": {"name": "search_semantic_memories", "arguments": {"query": "anything"}}}}),
            MemoryManagerConfig {
                max_iterations: 1,
                ..Default::default()
            },
        );
        say(&mm, "hello");
        let ans = mm.run_query(&mm.query_request("c", "anything", None).unwrap()).unwrap();
        assert!(ans.partial);
        assert_eq!(ans.iterations_used, 1);
    }

    #[test]
    fn hallucinated_evidence_rejected_once_then_fatal() {
        let mm = setup(
            json!({"rules": [
                {"when": {"last_role": "user"}, "respond": {"tool_call": {"name": "add_memory", "arguments": {"content": "x", "evidence_ids": [[40, 41]]}}}},
                {"when": {"last_tool_contains": "error"}, "respond": {"tool_call": {"name": "add_memory", "arguments": {"content": "x", "evidence_ids": [[50, 51]]}}}}
            ]}),
            MemoryManagerConfig::default(),
        );
        say(&mm, "hello");
        let err = mm.run_update(&mm.update_request("c", "store").unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidEvidence(_)), "{err}");
        assert!(mm.store().is_empty("c").unwrap());
    }

    #[test]
    fn delete_without_replacement_gets_update_record() {
        let mm = setup(
            json!({"rules": [
                {"when": {"last_role": "user"}, "respond": {"tool_call": {"name": "search_semantic_memories", "arguments": {"query": "toys"}}}},
                {"when": {"last_tool": "search_semantic_memories"}, "respond": {"tool_call": {"name": "delete_memory", "arguments": {"entry_id": "$tool:/results/0/entry_id"}}}},
                {"when": {"last_tool": "delete_memory"}, "respond": {"text": "removed"}}
            ]}),
            MemoryManagerConfig::default(),
        );
        say(&mm, "she likes blue noisy toys");
        mm.apply_manual(
            "c",
            ManualEdit::Add {
                content: "likes blue noisy toys".into(),
                evidence_ids: vec![EvidenceRange::single(0)],
                kind: None,
                image_ref: None,
            },
        )
        .unwrap();
        say(&mm, "forget the toys");
        let out = mm.run_update(&mm.update_request("c", "forget toys").unwrap()).unwrap();
        assert_eq!(out.deleted.len(), 1);
        assert_eq!(out.update_records.len(), 1);
        let records = mm.store().list_entries("c", Some(EntryKind::UpdateRecord)).unwrap();
        assert!(records[0].c_text.contains("blue noisy toys"));
        mm.verify_evidence("c").unwrap();
    }

    #[test]
    fn manual_delete_of_unknown_entry() {
        let mm = setup(json!({}), MemoryManagerConfig::default());
        let err = mm
            .apply_manual("c", ManualEdit::Delete { entry_id: "m0".into(), note: None })
            .unwrap_err();
        assert!(matches!(err, Error::UnknownEntry(_)));
    }

    #[test]
    fn stale_context_is_rejected() {
        let mm = setup(json!({}), MemoryManagerConfig::default());
        say(&mm, "a");
        let req = mm.query_request("c", "a", None).unwrap();
        say(&mm, "b");
        assert!(matches!(mm.run_query(&req), Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn semantic_only_hides_fetch() {
        assert!(tool_specs(false, false).iter().all(|t| t.name != FETCH_TOOL));
        assert_eq!(tool_specs(true, true).len(), 4);
    }

    #[test]
    fn ingest_captions_images() {
        let mm = setup(json!({}), MemoryManagerConfig::default());
        let msg = mm
            .ingest_turn(
                "c",
                NewMessage {
                    session_id: "s".into(),
                    timestamp: Utc.timestamp_opt(0, 0).unwrap(),
                    speaker: "u".into(),
                    text: "look".into(),
                    image_refs: vec!["data:image/png;base64,AAAA".into()],
                },
            )
            .unwrap();
        assert!(msg.caption.is_some());
    }
}
