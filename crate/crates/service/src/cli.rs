use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rexcbr_core::corpus::{generate, GeneratorConfig};
use rexcbr_core::storage::{load_snapshot, replay_audit, snapshot_to_string, BaseDir};
use rexcbr_core::{
    collect_candidates, decide, retrieve, KnowledgeBase, MissingPolicy, Origin, RetrievalQuery,
    TargetCase, Timestamp, WeightVector,
};
use serde_json::Value;

use crate::api::{self, ranked_entries, AppState, WeightUpdate};

#[derive(Debug, Parser)]
#[command(name = "rexcbr", version, about = "Case base of railway accident scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct BaseArg {
    /// Directory holding schema.json, casebase.json and audit.log.
    #[arg(long, env = "REXCBR_BASE_DIR")]
    pub base: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (schema, snapshot and audit log) to a directory.
    GenCorpus {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 70)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the stored cases against a target read from a JSON file.
    Retrieve {
        #[command(flatten)]
        base: BaseArg,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = rexcbr_core::retrieval::DEFAULT_K)]
        k: usize,
        /// JSON file: `{"weights": {...}, "excluded": [...]}` or a bare map of weights.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "exclude-pair")]
        policy: MissingPolicy,
        #[arg(long, conflicts_with = "table")]
        json: bool,
        #[arg(long)]
        table: bool,
    },
    /// Learn a target with the given solution; prints the new case id.
    Commit {
        #[command(flatten)]
        base: BaseArg,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        solution: String,
        #[arg(long)]
        title: String,
        #[arg(long)]
        class: String,
    },
    /// Serve the JSON API.
    Serve {
        #[command(flatten)]
        base: BaseArg,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Replay an audit log and compare the result with a snapshot.
    AuditReplay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        verify: PathBuf,
    },
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load(base: &BaseArg) -> Result<KnowledgeBase> {
    BaseDir::new(&base.base)
        .load()
        .with_context(|| format!("loading case base from {}", base.base.display()))
}

fn read_target(kb: &KnowledgeBase, path: &Path) -> Result<TargetCase> {
    let raw = read_json(path)?;
    // accept both a bare value map and the session-creation body
    let raw = raw.get("target").cloned().unwrap_or(raw);
    TargetCase::from_json(kb.schema(), &raw).with_context(|| format!("invalid target in {}", path.display()))
}

fn read_weights(kb: &KnowledgeBase, path: &Path) -> Result<WeightVector> {
    let raw = read_json(path)?;
    let update: WeightUpdate = if raw.get("weights").is_some() || raw.get("excluded").is_some() {
        serde_json::from_value(raw)?
    } else {
        WeightUpdate {
            weights: raw.as_object().cloned().context("weights file must hold a JSON object")?,
            excluded: None,
        }
    };
    update
        .apply(kb, &WeightVector::defaults(kb.schema()))
        .with_context(|| format!("invalid weights in {}", path.display()))
}

fn gen_corpus(seed: u64, count: usize, out: &Path) -> Result<()> {
    let base = generate(&GeneratorConfig::new(seed).with_count(count))?;
    let kb = KnowledgeBase::seeded(base)?;
    BaseDir::new(out).create(&kb)?;
    println!("wrote {} cases to {}", kb.base().len(), out.display());
    Ok(())
}

fn print_table(entries: &[Value]) {
    println!("{:>4}  {:>6}  {:>6}  title", "rank", "id", "sim");
    for (i, e) in entries.iter().enumerate() {
        println!(
            "{:>4}  {:>6}  {:>6}  {}",
            i + 1,
            e["case_id"].as_u64().unwrap_or(0),
            e["display"].as_str().unwrap_or(""),
            e["title"].as_str().unwrap_or("")
        );
    }
}

fn run_retrieve(
    base: &BaseArg,
    target: &Path,
    k: usize,
    weights: Option<&Path>,
    policy: MissingPolicy,
    json: bool,
) -> Result<()> {
    let kb = load(base)?;
    let target = read_target(&kb, target)?;
    let w = match weights {
        Some(p) => read_weights(&kb, p)?,
        None => WeightVector::defaults(kb.schema()),
    };
    let q = RetrievalQuery::new(target, w).with_k(k).with_policy(policy);
    let r = retrieve(kb.schema(), kb.base().cases(), &q, Some(kb.index()))?;
    let entries = ranked_entries(&kb, &r);
    if json {
        println!("{}", serde_json::to_string_pretty(&entries)?);
    } else {
        print_table(&entries);
    }
    Ok(())
}

fn run_commit(base: &BaseArg, target: &Path, solution: &str, title: &str, class: &str) -> Result<()> {
    let dir = BaseDir::new(&base.base);
    let mut kb = load(base)?;
    let target = read_target(&kb, target)?;
    let q = RetrievalQuery::new(target.clone(), WeightVector::defaults(kb.schema()));
    let r = retrieve(kb.schema(), kb.base().cases(), &q, Some(kb.index()))?;
    let candidates = collect_candidates(&r, kb.base().cases())?;
    let origin = if candidates.iter().any(|c| c.solution == solution.trim()) {
        Origin::FromCandidate
    } else {
        Origin::Novel
    };
    let now = Timestamp::now();
    let decision = decide(&candidates, solution, origin, None, &q, now)?;
    let since = kb.last_sequence();
    let case = kb.commit_case(&target, &decision, title, class, now)?;
    dir.persist(&kb, since)?;
    println!("{}", case.id);
    Ok(())
}

fn run_audit_replay(log: &Path, verify: &Path) -> Result<()> {
    let expected = load_snapshot(verify).with_context(|| format!("loading {}", verify.display()))?;
    let kb = replay_audit(expected.schema().clone(), log)
        .with_context(|| format!("replaying {}", log.display()))?;
    if snapshot_to_string(kb.base()) != snapshot_to_string(&expected) {
        bail!(
            "replay of {} does not match {} ({} vs {} cases)",
            log.display(),
            verify.display(),
            kb.base().len(),
            expected.len()
        );
    }
    println!("ok: {} events reproduce {} cases", kb.events().len(), expected.len());
    Ok(())
}

fn serve(base: &BaseArg, addr: SocketAddr) -> Result<()> {
    let kb = load(base)?;
    let state = AppState::new(kb, Some(BaseDir::new(&base.base)));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { seed, count, out } => gen_corpus(seed, count, &out),
        Command::Retrieve {
            base,
            target,
            k,
            weights,
            policy,
            json,
            table: _,
        } => run_retrieve(&base, &target, k, weights.as_deref(), policy, json),
        Command::Commit {
            base,
            target,
            solution,
            title,
            class,
        } => run_commit(&base, &target, &solution, &title, &class),
        Command::Serve { base, port, host } => serve(&base, SocketAddr::new(host, port)),
        Command::AuditReplay { log, verify } => run_audit_replay(&log, &verify),
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
