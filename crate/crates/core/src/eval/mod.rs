//! Evaluation harness: replay a corpus into a system, ask its questions,
//! grade the answers with one or more judges and tabulate accuracy.
//!
//! A run directory holds `checkpoint.json`, per-conversation state under
//! `state/`, `answers.json` (answers plus verdicts, rewritten after every
//! question), and finally `report.json` and `report.md`. Re-running into the
//! same directory resumes where the previous run stopped.

mod judge;
mod rag;
mod score;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chat_agent::{TurnInput, TurnOptions};
use crate::corpus::{Conversation, Corpus, QaCategory};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::llm::Gateway;
use crate::raw_store::encode_file_stem;
use crate::system::{AgentSettings, System};

pub use crate::system::SystemKind;
pub use judge::{judge, verdict_schema, JudgeVerdict, Label};
pub use rag::{RagAnswer, RagDoc, RagIndex};
pub use score::{render_table, score, CategoryScore, Cell, GradedAnswer, RunMetadata, ScoreReport, COLUMNS};

pub struct Judge {
    pub id: String,
    pub gateway: Gateway,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemKind,
    /// Full-system settings; the variant switch is applied by the run.
    pub settings: AgentSettings,
    pub rag_top_k: usize,
    pub seed: u64,
    pub fsync: bool,
}

impl RunConfig {
    pub fn new(system: SystemKind) -> Self {
        Self {
            system,
            settings: AgentSettings::default(),
            rag_top_k: 5,
            seed: 0,
            fsync: false,
        }
    }

    pub fn from_app(system: SystemKind, cfg: &crate::config::AppConfig) -> Result<Self> {
        Ok(Self {
            system,
            settings: AgentSettings::from_config(cfg)?,
            rag_top_k: cfg.eval.rag_top_k,
            seed: cfg.eval.seed,
            fsync: cfg.storage.fsync,
        })
    }

    fn effective(&self) -> AgentSettings {
        self.settings.clone().for_system(self.system)
    }

    fn summary(&self) -> BTreeMap<String, serde_json::Value> {
        let s = self.effective();
        let mut m = BTreeMap::new();
        if self.system.is_agentic() {
            m.insert("context_window".into(), json!(s.memory_manager.context_window));
            m.insert("max_iterations".into(), json!(s.memory_manager.max_iterations));
            m.insert("raw_fetch".into(), json!(s.memory_manager.raw_fetch));
            m.insert("single_pass".into(), json!(s.memory_manager.single_pass));
            m.insert("max_query_iterations".into(), json!(s.chat_agent.max_query_iterations));
            m.insert("top_k_per_path".into(), json!(s.retrieval.top_k_per_path));
            m.insert("final_k".into(), json!(s.retrieval.final_k));
            m.insert("rrf_k".into(), json!(s.retrieval.rrf_k));
            m.insert("paths".into(), json!(s.retrieval.paths));
        } else {
            m.insert("rag_top_k".into(), json!(self.rag_top_k));
        }
        m
    }
}

/// Per-question instrumentation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub retrieve_calls: u64,
    pub fetch_range_calls: u64,
    pub memory_queries: usize,
    /// Entry ids (agentic systems) or dia ids (RAG) the answer drew on.
    pub cited: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(flatten)]
    pub graded: GradedAnswer,
    pub trace: AnswerTrace,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationProgress {
    pub sessions_done: usize,
    pub turns_done: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub system: SystemKind,
    pub conversations: BTreeMap<String, ConversationProgress>,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Questions that are asked: everything except adversarial.
pub fn askable(conv: &Conversation) -> impl Iterator<Item = (usize, &crate::corpus::QaItem)> {
    conv.qa
        .iter()
        .enumerate()
        .filter(|(_, q)| q.category != QaCategory::Adversarial)
}

/// One evaluation run rooted at an output directory.
pub struct EvalRun {
    config: RunConfig,
    gateway: Gateway,
    embedder: Arc<dyn Embedder>,
    out: PathBuf,
    checkpoint: Checkpoint,
    system: Option<System>,
}

impl EvalRun {
    /// Opens `out`, resuming a previous run of the same system if present.
    pub fn open(config: RunConfig, gateway: Gateway, embedder: Arc<dyn Embedder>, out: &Path) -> Result<Self> {
        config.effective().validate()?;
        if config.rag_top_k == 0 {
            return Err(Error::Config("eval.rag_top_k must be at least 1".into()));
        }
        std::fs::create_dir_all(out)?;
        let checkpoint = match read_json::<Checkpoint>(&out.join("checkpoint.json"))? {
            Some(c) if c.system != config.system => {
                return Err(Error::Config(format!(
                    "{} holds a run of system {}, not {}",
                    out.display(),
                    c.system,
                    config.system
                )))
            }
            Some(c) => c,
            None => {
                if out.join("state").exists() {
                    return Err(Error::Config(format!(
                        "{} has state but no checkpoint.json; use an empty directory",
                        out.display()
                    )));
                }
                let c = Checkpoint {
                    system: config.system,
                    conversations: BTreeMap::new(),
                };
                write_json(&out.join("checkpoint.json"), &c)?;
                c
            }
        };
        let system = if config.system.is_agentic() {
            Some(System::open(
                &out.join("state"),
                config.fsync,
                embedder.clone(),
                gateway.clone(),
                &config.effective(),
            )?)
        } else {
            std::fs::create_dir_all(out.join("state"))?;
            None
        };
        Ok(Self {
            config,
            gateway,
            embedder,
            out: out.to_path_buf(),
            checkpoint,
            system,
        })
    }

    /// The wired system (agentic variants only).
    pub fn system(&self) -> Option<&System> {
        self.system.as_ref()
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    fn save_checkpoint(&self) -> Result<()> {
        write_json(&self.out.join("checkpoint.json"), &self.checkpoint)
    }

    fn rag_path(&self, cid: &str) -> PathBuf {
        self.out.join("state").join(format!("{}.rag.json", encode_file_stem(cid)))
    }

    pub fn rag_index(&self, cid: &str) -> Result<RagIndex> {
        Ok(read_json(&self.rag_path(cid))?.unwrap_or_default())
    }

    /// Replays every session not yet checkpointed; `on_session` sees
    /// (conversation id, 1-based session number) after each checkpoint.
    pub fn ingest(&mut self, conv: &Conversation, on_session: &mut dyn FnMut(&str, usize)) -> Result<()> {
        let cid = conv.sample_id.clone();
        let mut progress = self.checkpoint.conversations.get(&cid).cloned().unwrap_or_default();
        let mut rag = if self.system.is_none() { Some(self.rag_index(&cid)?) } else { None };
        // Turns already in the raw log (a crash mid-session) are not replayed.
        let logged = match &self.system {
            Some(s) => s.raw.len(&cid)? as usize,
            None => progress.turns_done,
        };
        let mut turn_no = 0;
        for (s_idx, session) in conv.sessions.iter().enumerate() {
            if s_idx < progress.sessions_done {
                turn_no += session.turns.len();
                continue;
            }
            if let Some(sys) = &self.system {
                sys.agent.open_session(&cid, &format!("session_{}", s_idx + 1));
            }
            for turn in &session.turns {
                turn_no += 1;
                if turn_no <= logged {
                    continue;
                }
                match (&self.system, rag.as_mut()) {
                    (Some(sys), _) => {
                        let mut input = TurnInput::new(&cid, &turn.text)
                            .at(session.date_time)
                            .from_speaker(&turn.speaker)
                            .with_images(turn.img_url.clone());
                        if let Some(c) = &turn.blip_caption {
                            input = input.with_caption(c);
                        }
                        sys.agent.handle_turn(input, TurnOptions::observe())?;
                    }
                    (None, Some(idx)) => idx.add_turn(
                        self.embedder.as_ref(),
                        &turn.dia_id,
                        session.date_time,
                        &turn.speaker,
                        &turn.text,
                        turn.img_url.clone(),
                        turn.blip_caption.clone(),
                    )?,
                    (None, None) => unreachable!("rag index is loaded for the baseline"),
                }
            }
            if let Some(idx) = &rag {
                idx.save(&self.rag_path(&cid))?;
            }
            progress.sessions_done = s_idx + 1;
            progress.turns_done = turn_no;
            self.checkpoint.conversations.insert(cid.clone(), progress.clone());
            self.save_checkpoint()?;
            on_session(&cid, s_idx + 1);
        }
        if conv.sessions.is_empty() {
            self.checkpoint.conversations.insert(cid.clone(), progress);
            self.save_checkpoint()?;
        }
        Ok(())
    }

    /// Answers one question against the frozen post-ingest state.
    pub fn answer(&self, conv_id: &str, question: &str, rag: Option<&RagIndex>) -> Result<(String, AnswerTrace)> {
        match &self.system {
            Some(sys) => {
                let (r0, f0) = (sys.retriever.call_count(), sys.raw.stats().snapshot().fetch_range_calls);
                let res = sys
                    .agent
                    .handle_turn(TurnInput::new(conv_id, question), TurnOptions::question())?;
                let mut cited: Vec<String> = res
                    .memory_queries
                    .iter()
                    .flat_map(|q| q.cited_entries.iter().cloned())
                    .collect();
                cited.dedup();
                let trace = AnswerTrace {
                    retrieve_calls: sys.retriever.call_count() - r0,
                    fetch_range_calls: sys.raw.stats().snapshot().fetch_range_calls - f0,
                    memory_queries: res.memory_queries.len(),
                    cited,
                };
                Ok((res.assistant_text.unwrap_or_default(), trace))
            }
            None => {
                let owned;
                let idx = match rag {
                    Some(i) => i,
                    None => {
                        owned = self.rag_index(conv_id)?;
                        &owned
                    }
                };
                let a = idx.answer(self.embedder.as_ref(), &self.gateway, question, self.config.rag_top_k)?;
                let trace = AnswerTrace {
                    retrieve_calls: 1,
                    cited: a.retrieved,
                    ..AnswerTrace::default()
                };
                Ok((a.text, trace))
            }
        }
    }

    fn answers_path(&self) -> PathBuf {
        self.out.join("answers.json")
    }

    pub fn load_answers(&self) -> Result<Vec<AnswerRecord>> {
        Ok(read_json(&self.answers_path())?.unwrap_or_default())
    }

    /// Ingests, answers and judges everything, then writes the report.
    pub fn run(&mut self, corpus: &Corpus, judges: &[Judge], progress: &mut dyn FnMut(&str)) -> Result<ScoreReport> {
        if judges.is_empty() {
            return Err(Error::Config("at least one judge is required".into()));
        }
        let mut answers = self.load_answers()?;
        let judge_template = self.config.settings.prompts.judge.clone();
        for conv in &corpus.conversations {
            let cid = conv.sample_id.as_str();
            self.ingest(conv, &mut |c, s| progress(&format!("{c}: session {s} ingested")))?;
            let rag = if self.system.is_none() { Some(self.rag_index(cid)?) } else { None };
            for (i, qa) in askable(conv) {
                if answers.iter().any(|a| a.graded.conversation_id == cid && a.graded.qa_index == i) {
                    continue;
                }
                let (text, trace) = self.answer(cid, &qa.question, rag.as_ref())?;
                answers.push(AnswerRecord {
                    graded: GradedAnswer {
                        conversation_id: cid.to_string(),
                        qa_index: i,
                        category: qa.category,
                        question: qa.question.clone(),
                        gold_answer: qa.answer.clone(),
                        generated_answer: text,
                        verdicts: Vec::new(),
                    },
                    trace,
                });
                write_json(&self.answers_path(), &answers)?;
            }
            progress(&format!("{cid}: answered"));
        }
        for i in 0..answers.len() {
            let mut changed = false;
            for j in judges {
                let g = &answers[i].graded;
                if g.verdicts.iter().any(|v| v.judge_id == j.id) {
                    continue;
                }
                let v = judge(&j.gateway, &j.id, &judge_template, &g.question, &g.gold_answer, &g.generated_answer)?;
                answers[i].graded.verdicts.push(v);
                changed = true;
            }
            if changed {
                write_json(&self.answers_path(), &answers)?;
            }
        }
        progress("judged");
        // Report order follows the corpus, not completion order.
        let order: BTreeMap<&str, usize> = corpus
            .conversations
            .iter()
            .enumerate()
            .map(|(i, c)| (c.sample_id.as_str(), i))
            .collect();
        let mut graded: Vec<&AnswerRecord> = answers
            .iter()
            .filter(|a| order.contains_key(a.graded.conversation_id.as_str()))
            .collect();
        graded.sort_by_key(|a| (order[a.graded.conversation_id.as_str()], a.graded.qa_index));
        let graded: Vec<GradedAnswer> = graded.into_iter().map(|a| a.graded.clone()).collect();
        let judge_ids: Vec<String> = judges.iter().map(|j| j.id.clone()).collect();
        let report = score(
            &graded,
            &judge_ids,
            RunMetadata {
                system: self.config.system.to_string(),
                conversations: corpus.conversations.iter().map(|c| c.sample_id.clone()).collect(),
                seed: self.config.seed,
                judges: judge_ids.clone(),
                settings: self.config.summary(),
            },
        )?;
        write_report(&self.out, &report)?;
        Ok(report)
    }
}

pub fn write_report(dir: &Path, report: &ScoreReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    write_atomic(&dir.join("report.md"), render_table(report).as_bytes())
}

pub fn read_report(dir: &Path) -> Result<ScoreReport> {
    read_json(&dir.join("report.json"))?
        .ok_or_else(|| Error::Config(format!("{} has no report.json", dir.display())))
}
