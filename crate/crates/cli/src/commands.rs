use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rewardlab_core::composer::{score_episode, Episode};
use rewardlab_core::config::LabConfig;
use rewardlab_core::rollout::{
    self, read_scripts, BreakdownRecord, EpisodeLimits, Policy, PolicyFailureKind, QAPair,
    RolloutOptions, ScriptedPolicy,
};
use rewardlab_core::search::{CorpusIndex, FaultConfig};
use rewardlab_core::templates::{self, EpisodeContext, TemplateId};
use rewardlab_core::trace::EpisodeRecord;
use rewardlab_service::{HttpPolicy, ServiceState};
use serde::Serialize;

use crate::{EvaluateArgs, ScoreArgs, ServeArgs};

fn load_config(path: Option<&Path>) -> Result<LabConfig> {
    match path {
        Some(p) => Ok(LabConfig::load(p)?),
        None => Ok(LabConfig::default()),
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out += &serde_json::to_string(&item)?;
        out.push('\n');
    }
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let lab = load_config(args.config.as_deref())?;
    let hash = lab.hash();
    let mut records = Vec::new();
    for (i, line) in open(&args.episodes)?.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: EpisodeRecord =
            serde_json::from_str(&line).with_context(|| format!("line {lineno}: PARSE_ERROR"))?;
        let episode = Episode::from_record(&record);
        let breakdown = score_episode(&episode, &lab)
            .with_context(|| format!("line {lineno}: episode {}", record.id))?;
        records.push(BreakdownRecord::new(
            record.id,
            args.stage,
            breakdown,
            hash.as_str(),
        ));
    }
    let text = jsonl(&records)?;
    match &args.out {
        Some(path) => {
            write_file(path, &text)?;
            println!("scored {} episodes -> {}", records.len(), path.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

enum PolicySource {
    Remote(HttpPolicy),
    Scripted(HashMap<String, Vec<String>>),
}

impl PolicySource {
    fn policy_for(&self, qa: &QAPair) -> Box<dyn Policy> {
        match self {
            PolicySource::Remote(p) => Box::new(p.clone()),
            PolicySource::Scripted(map) => Box::new(ScriptedPolicy::new(
                map.get(&qa.id).cloned().unwrap_or_default(),
            )),
        }
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let lab = load_config(args.config.as_deref())?;
    let dataset = rollout::load_qa_dataset(&args.dataset)
        .with_context(|| format!("dataset {}", args.dataset.display()))?;
    let index = CorpusIndex::load(&args.corpus)
        .with_context(|| format!("corpus {}", args.corpus.display()))?;
    let source = match (&args.policy, &args.script) {
        (Some(url), _) => PolicySource::Remote(
            HttpPolicy::new(url.clone(), Duration::from_secs(args.policy_timeout))
                .map_err(|e| anyhow::anyhow!("policy client: {e}"))?,
        ),
        (None, Some(path)) => PolicySource::Scripted(
            read_scripts(open(path)?).with_context(|| format!("script {}", path.display()))?,
        ),
        (None, None) => unreachable!("clap requires a policy source"),
    };
    let faults = FaultConfig {
        error_probability: args.fault_prob,
        seed: args.seed,
    };
    let opts = RolloutOptions {
        limits: EpisodeLimits {
            max_assistant_turns: args.max_turns as usize,
            max_tool_calls: args.max_tool_calls as usize,
            max_total_bytes: args.max_bytes as usize,
        },
        stage: args.stage,
        lab,
        ..RolloutOptions::default()
    };
    let factory = |qa: &QAPair| source.policy_for(qa);
    let report = rollout::evaluate(
        &factory,
        &dataset,
        &index,
        &faults,
        &opts,
        args.jobs as usize,
    )?;

    if let Some((id, f)) = report.episodes.iter().find_map(|e| {
        e.policy_error
            .as_ref()
            .filter(|f| f.kind == PolicyFailureKind::Unreachable)
            .map(|f| (&e.id, f))
    }) {
        bail!("policy unreachable during episode {id}: {}", f.message);
    }

    let hash = lab.hash();
    if let Some(path) = &args.out {
        let records = report
            .episodes
            .iter()
            .map(|e| BreakdownRecord::from_result(e, &hash));
        write_file(path, &jsonl(records)?)?;
    }
    if let Some(path) = &args.results {
        write_file(path, &jsonl(&report.episodes)?)?;
    }

    let mut terminations: BTreeMap<String, usize> = BTreeMap::new();
    for e in &report.episodes {
        let name = serde_json::to_value(e.termination)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        *terminations.entry(name).or_default() += 1;
    }
    println!("episodes     {}", report.episodes.len());
    println!("accuracy     {:.3}", report.accuracy);
    println!("mean_r1      {:.6}", report.mean_r1);
    println!("mean_r2      {:.6}", report.mean_r2);
    for (name, n) in terminations {
        println!("{:<12} {n}", name.to_lowercase());
    }
    println!("config_hash  {hash}");
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let lab = load_config(args.config.as_deref())?;
    let index = CorpusIndex::load(&args.corpus)
        .with_context(|| format!("corpus {}", args.corpus.display()))?;
    let faults = FaultConfig {
        error_probability: args.fault_prob,
        seed: args.seed,
    };
    let state = Arc::new(ServiceState::new(index, lab, faults));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .with_context(|| format!("binding {}", args.listen))?;
        tracing::info!(
            addr = %listener.local_addr()?,
            config_hash = %state.lab.hash(),
            documents = state.index.doc_count(),
            "listening"
        );
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        rewardlab_service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}

pub fn render_template(id: TemplateId, context: &Path) -> Result<()> {
    let text =
        fs::read_to_string(context).with_context(|| format!("reading {}", context.display()))?;
    let ctx: EpisodeContext =
        serde_json::from_str(&text).with_context(|| format!("context {}", context.display()))?;
    std::io::stdout().write_all(templates::render(id, &ctx).as_bytes())?;
    Ok(())
}

pub fn list_templates() -> Result<()> {
    for d in templates::list_templates() {
        println!(
            "{:<26} {:>5.1}%  {:<27} {}",
            d.id.name(),
            d.reported_accuracy * 100.0,
            d.observation.unwrap_or("-"),
            d.summary
        );
    }
    Ok(())
}

pub fn index_corpus(input: &Path, stats: bool) -> Result<()> {
    let index = CorpusIndex::load(input).with_context(|| format!("corpus {}", input.display()))?;
    if stats {
        println!("documents    {}", index.doc_count());
        println!("vocabulary   {}", index.vocabulary_size());
        println!("avg_doc_len  {:.2}", index.avg_doc_len());
    } else {
        println!("indexed {} documents", index.doc_count());
    }
    Ok(())
}
