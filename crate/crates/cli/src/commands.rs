//! Non-interactive commands; `main` only parses arguments and prints.

use std::path::Path;

use m2a_core::corpus::{self, ValidationReport};
use m2a_core::eval::{self, EvalRun, Judge, RunConfig, ScoreReport};
use m2a_core::synthesis::{synthesize, Catalog, SynthesisOptions, VqaBank};
use m2a_core::{AgentSettings, AppConfig, Corpus, Gateway, System, SystemKind};
use serde_json::{json, Value};

use crate::CliError;

/// Raw log and semantic memory of one conversation as a single document.
pub fn export(cfg: &AppConfig, conversation_id: &str) -> Result<Value, CliError> {
    let gateway = cfg.gateway.build()?;
    let embedder = cfg.build_embedder(&gateway)?;
    let settings = AgentSettings::from_config(cfg)?;
    let system = System::from_config(cfg, embedder, gateway, &settings)?;
    if !system.raw.exists(conversation_id) {
        return Err(CliError::Invalid(format!("no conversation `{conversation_id}` in the data directory")));
    }
    Ok(json!({
        "raw": system.raw.export(conversation_id)?,
        "memory": system.store.export(conversation_id)?,
    }))
}

#[derive(Debug, Clone, Default)]
pub struct SynthArgs {
    pub seed: u64,
    pub gap_index: Option<usize>,
    pub qa_count: Option<usize>,
    pub vqa: Option<std::path::PathBuf>,
}

/// One synthesized conversation per host; host `i` uses seed `seed + i`.
pub fn synth(gateway: &Gateway, hosts: &Corpus, catalog: &Catalog, args: &SynthArgs) -> Result<Corpus, CliError> {
    let opts = SynthesisOptions {
        gap_index: args.gap_index,
        qa_count: args.qa_count,
        vqa: args.vqa.as_deref().map(VqaBank::load).transpose()?,
    };
    let mut out = Corpus::default();
    for (i, host) in hosts.conversations.iter().enumerate() {
        let seed = args.seed.wrapping_add(i as u64);
        out.conversations.push(synthesize(catalog, host, seed, gateway, &opts)?);
    }
    Ok(out)
}

pub fn validate(path: &Path) -> Result<ValidationReport, CliError> {
    Ok(corpus::validate(&Corpus::load(path)?))
}

pub fn judges(cfg: &AppConfig) -> Result<Vec<Judge>, CliError> {
    if cfg.eval.judges.is_empty() {
        return Err(CliError::Invalid("config lists no [[eval.judges]]".into()));
    }
    cfg.eval
        .judges
        .iter()
        .map(|j| {
            Ok(Judge {
                id: j.id.clone(),
                gateway: j.gateway.build()?,
            })
        })
        .collect()
}

pub fn eval_run(
    cfg: &AppConfig,
    corpus_path: &Path,
    system: SystemKind,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<ScoreReport, CliError> {
    let corpus = Corpus::load(corpus_path)?;
    let gateway = cfg.gateway.build()?;
    let embedder = cfg.build_embedder(&gateway)?;
    let judges = judges(cfg)?;
    let mut run = EvalRun::open(RunConfig::from_app(system, cfg)?, gateway, embedder, out)?;
    Ok(run.run(&corpus, &judges, progress)?)
}

pub fn eval_report(dir: &Path) -> Result<String, CliError> {
    Ok(eval::render_table(&eval::read_report(dir)?))
}
