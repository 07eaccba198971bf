//! Library side of the `iotguard` binary: config loading, the six experiment
//! commands, and artifact/manifest output.

pub mod artifacts;
pub mod config;
mod error;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use iotguard_core::dataset::{load_kddcup, subsample, DatasetSchema, LabeledDataset};
use iotguard_core::detection::ClassMetrics;
use iotguard_core::explainer::{llm_explain, offline_explain, render_markdown, ExplanationReport};
use iotguard_core::llm::{load_fixture_transport, GatewayConfig, HttpTransport, Transport};
use iotguard_core::pipeline::{
    advisor_stats, anomaly_cases, evaluate_pipeline, fit_pipeline, plan_for, AdvisorMode, Evaluation,
    Fit, Llm, PipelineSpec, Splits, TrainedPipeline,
};
use iotguard_core::synthetic::synthetic_kddcup;
use iotguard_core::{ErrorClass, Label};

use crate::artifacts::{read_manifest, sha256_hex, Artifacts, DatasetInfo, Manifest, PipelineEntry};
use crate::config::{load_config, DatasetSource, ExplainMode, LoadedConfig, PipelineChoice, RunConfig};
pub use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Stats,
    Plan,
    Train,
    Evaluate,
    Compare,
    Explain,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Stats => "stats",
            Command::Plan => "plan",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Compare => "compare",
            Command::Explain => "explain",
        }
    }
}

/// One parsed command line.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub pipeline: Option<PipelineChoice>,
    pub advisor: Option<AdvisorMode>,
}

impl Invocation {
    pub fn new(command: Command, config: impl Into<PathBuf>) -> Self {
        Invocation { command, config: config.into(), seed: None, out: None, pipeline: None, advisor: None }
    }
}

/// What a finished command reports on stdout.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summary: String,
    pub manifest: Manifest,
}

struct Context {
    loaded: LoadedConfig,
    cfg: RunConfig,
    out: PathBuf,
    splits: Splits,
    dataset: DatasetInfo,
}

fn load_dataset(cfg: &RunConfig) -> Result<(LabeledDataset, String, Option<String>), CliError> {
    let schema = match &cfg.schema {
        Some(p) => DatasetSchema::from_json_file(p)?,
        None => DatasetSchema::kddcup(),
    };
    match &cfg.dataset {
        DatasetSource::Path(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(format!("reading {}", p.display()), e))?;
            let ds = load_kddcup(p, &schema)?;
            Ok((ds, p.display().to_string(), Some(sha256_hex(&bytes))))
        }
        DatasetSource::Synthetic { synthetic } => {
            if cfg.schema.is_some() {
                return Err(CliError::config("synthetic data always uses the KDD schema; drop `schema`"));
            }
            let ds = synthetic_kddcup(synthetic.rows, synthetic.seed)?;
            Ok((ds, format!("synthetic(rows={}, seed={})", synthetic.rows, synthetic.seed), None))
        }
    }
}

fn prepare(inv: &Invocation) -> Result<Context, CliError> {
    let loaded = load_config(&inv.config)?;
    let mut cfg = loaded.config.clone();
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    if let Some(p) = inv.pipeline {
        cfg.pipeline = p;
    }
    if let Some(m) = inv.advisor {
        cfg.pipeline = PipelineChoice::Advisor;
        cfg.advisor.mode = m;
    }
    cfg.check()?;
    let out = inv
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let (full, source, sha256) = load_dataset(&cfg)?;
    let rows_loaded = full.len();
    let ds = match cfg.subsample {
        Some(n) if n < full.len() => subsample(&full, n, cfg.seed)?,
        Some(n) if n > full.len() => {
            return Err(CliError::config(format!("subsample {n} exceeds the {} loaded rows", full.len())))
        }
        _ => full,
    };
    let splits = Splits::new(&ds, cfg.fractions(), cfg.seed)?;
    let dataset = DatasetInfo {
        source,
        sha256,
        rows_loaded,
        rows_used: ds.len(),
        normal: ds.count(Label::Normal),
        attack: ds.count(Label::Attack),
        split_rows: [splits.train.len(), splits.val.len(), splits.test.len()],
    };
    log::info!(
        "{} rows ({} normal, {} attack), split {:?}",
        dataset.rows_used,
        dataset.normal,
        dataset.attack,
        dataset.split_rows
    );
    Ok(Context { loaded, cfg, out, splits, dataset })
}

impl Context {
    fn manifest(&self, command: Command, pipelines: Vec<PipelineEntry>, notes: Vec<String>) -> Manifest {
        Manifest {
            tool: "iotguard".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.name().into(),
            config_sha256: self.loaded.sha256.clone(),
            seed: self.cfg.seed,
            dataset: self.dataset.clone(),
            pipelines,
            notes,
            artifacts: BTreeMap::new(),
        }
    }
}

/// Endpoint plus transport: fixture replay when `gateway.fixture_dir` is set,
/// HTTP otherwise.
struct Gateway {
    config: GatewayConfig,
    transport: Box<dyn Transport>,
}

impl Gateway {
    fn open(cfg: &RunConfig) -> Result<Self, CliError> {
        let config = cfg.gateway_config();
        let transport: Box<dyn Transport> = match &cfg.gateway.fixture_dir {
            Some(dir) => Box::new(load_fixture_transport(dir)?),
            None => Box::new(HttpTransport::new()?),
        };
        Ok(Gateway { config, transport })
    }

    fn llm(&self) -> Llm<'_> {
        Llm { config: &self.config, transport: self.transport.as_ref() }
    }
}

fn needs_gateway(spec: &PipelineSpec) -> bool {
    matches!(spec, PipelineSpec::Advisor { mode: AdvisorMode::Llm, .. })
}

fn open_gateway_for(cfg: &RunConfig, specs: &[&PipelineSpec], explain: bool) -> Result<Option<Gateway>, CliError> {
    if specs.iter().any(|s| needs_gateway(s)) || explain {
        Gateway::open(cfg).map(Some)
    } else {
        Ok(None)
    }
}

fn prefixed(dir: &str, name: &str) -> String {
    if dir.is_empty() {
        name.to_string()
    } else {
        format!("{dir}/{name}")
    }
}

/// Fits the configured pipeline and writes plan, model and trace.
fn fit_and_write(
    ctx: &Context,
    spec: &PipelineSpec,
    gateway: Option<&Gateway>,
    art: &mut Artifacts,
    dir: &str,
) -> Result<(Fit<f64>, PipelineEntry), CliError> {
    let (plan, stats, advice) = plan_for(spec, &ctx.splits, gateway.map(Gateway::llm))?;
    let pca = match spec {
        PipelineSpec::Pca { pca } => Some(*pca),
        PipelineSpec::Advisor { .. } => None,
    };
    let fit = fit_pipeline::<f64>(spec.label(), &plan, pca, &ctx.splits, &ctx.cfg.settings())?;
    if let Some(stats) = &stats {
        art.write_json(&prefixed(dir, "stats.json"), stats)?;
    }
    art.write_json(&prefixed(dir, "plan.json"), &plan)?;
    art.write_json(&prefixed(dir, "model.json"), &fit.pipeline)?;
    art.write_text(&prefixed(dir, "trace.csv"), &fit.trace.to_csv())?;
    let entry = PipelineEntry {
        dir: dir.to_string(),
        provenance: spec.label().to_string(),
        advisor_fallback: advice.and_then(|a| a.fallback),
        model_source: Some("trained".into()),
    };
    Ok((fit, entry))
}

fn write_evaluation(art: &mut Artifacts, dir: &str, eval: &Evaluation<f64>) -> Result<(), CliError> {
    art.write_json(&prefixed(dir, "report.json"), &eval.report)?;
    art.write_text(&prefixed(dir, "histogram.csv"), &eval.histogram.to_csv())
}

/// Reuses `model.json` from a previous `train` in the same output directory
/// when that run used the same config file, seed and pipeline; trains
/// otherwise.
fn trained_pipeline(
    ctx: &Context,
    spec: &PipelineSpec,
    gateway: Option<&Gateway>,
    art: &mut Artifacts,
) -> Result<(TrainedPipeline<f64>, PipelineEntry), CliError> {
    if let Some(prev) = read_manifest(&ctx.out) {
        let same_run = prev.config_sha256 == ctx.loaded.sha256
            && prev.seed == ctx.cfg.seed
            && prev.dataset == ctx.dataset
            && prev.pipelines.len() == 1
            && prev.pipelines[0].provenance == spec.label()
            && prev.pipelines[0].dir.is_empty();
        let path = ctx.out.join("model.json");
        if same_run && prev.artifacts.contains_key("model.json") {
            if let Ok(text) = std::fs::read_to_string(&path) {
                if prev.artifacts.get("model.json") == Some(&sha256_hex(text.as_bytes())) {
                    let model: TrainedPipeline<f64> = serde_json::from_str(&text)
                        .map_err(|e| CliError { class: ErrorClass::Parse, message: format!("{}: {e}", path.display()) })?;
                    log::info!("using model from {}", path.display());
                    art.write_text("model.json", &text)?;
                    let mut entry = prev.pipelines[0].clone();
                    entry.model_source = Some("loaded".into());
                    return Ok((model, entry));
                }
            }
        }
    }
    let (fit, entry) = fit_and_write(ctx, spec, gateway, art, "")?;
    Ok((fit.pipeline, entry))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub provenance: String,
    pub accuracy: f64,
    pub false_positive_rate: f64,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
}

/// Side-by-side macro metrics of the two pipelines and their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pca: PipelineSummary,
    pub advisor: PipelineSummary,
    pub delta_macro_precision: f64,
    pub delta_macro_recall: f64,
    pub delta_macro_f1: f64,
}

fn summary_of(label: &str, e: &Evaluation<f64>) -> PipelineSummary {
    PipelineSummary {
        provenance: label.to_string(),
        accuracy: e.report.accuracy,
        false_positive_rate: e.report.false_positive_rate,
        macro_avg: e.report.macro_avg,
    }
}

fn explain_reports(
    ctx: &Context,
    pipeline: &TrainedPipeline<f64>,
    eval: &Evaluation<f64>,
    gateway: Option<&Gateway>,
) -> Result<Vec<ExplanationReport>, CliError> {
    let x = &ctx.cfg.explain;
    let cases = anomaly_cases(pipeline, &ctx.splits.test, eval, x.top_k, x.max_cases)?;
    let mut reports = Vec::with_capacity(cases.len());
    for case in &cases {
        let report = match (x.mode, gateway) {
            (ExplainMode::Llm, Some(g)) => {
                g.config.check()?;
                match llm_explain(case, &g.config, g.transport.as_ref()) {
                    Ok(r) => r,
                    Err(e) if e.class() == ErrorClass::Config => return Err(e.into()),
                    Err(e) => {
                        log::warn!("row {}: LLM explanation failed, using template: {e}", case.row_id);
                        let mut r = offline_explain(case);
                        r.note = Some(format!("LLM explanation failed: {e}"));
                        r
                    }
                }
            }
            _ => offline_explain(case),
        };
        reports.push(report);
    }
    Ok(reports)
}

fn f1_line(e: &Evaluation<f64>) -> String {
    format!(
        "macro F1 {:.4}, accuracy {:.4}, FPR {:.4}",
        e.report.macro_avg.f1, e.report.accuracy, e.report.false_positive_rate
    )
}

/// Runs one command end to end and writes its artifacts.
pub fn run(inv: &Invocation) -> Result<Outcome, CliError> {
    let ctx = prepare(inv)?;
    let mut art = Artifacts::create(&ctx.out)?;
    let spec = ctx.cfg.spec();
    let mut notes = Vec::new();
    let (summary, pipelines) = match inv.command {
        Command::Stats => {
            let stats = advisor_stats(&ctx.splits.train)?;
            art.write_json("stats.json", &stats)?;
            (format!("{} columns over {} training rows", stats.columns.len(), stats.rows), vec![])
        }
        Command::Plan => {
            let gateway = open_gateway_for(&ctx.cfg, &[&spec], false)?;
            let (plan, stats, advice) = plan_for(&spec, &ctx.splits, gateway.as_ref().map(Gateway::llm))?;
            if let Some(stats) = &stats {
                art.write_json("stats.json", stats)?;
            }
            art.write_json("plan.json", &plan)?;
            let entry = PipelineEntry {
                dir: String::new(),
                provenance: spec.label().into(),
                advisor_fallback: advice.and_then(|a| a.fallback),
                model_source: None,
            };
            (format!("{} plan with {} steps", spec.label(), plan.steps.len()), vec![entry])
        }
        Command::Train => {
            let gateway = open_gateway_for(&ctx.cfg, &[&spec], false)?;
            let (fit, entry) = fit_and_write(&ctx, &spec, gateway.as_ref(), &mut art, "")?;
            let last = fit.trace.epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
            (
                format!(
                    "{} model: {} inputs, final train loss {:.6}, threshold {:.6e}",
                    spec.label(),
                    fit.pipeline.autoencoder.input_dim,
                    last,
                    fit.pipeline.threshold.threshold
                ),
                vec![entry],
            )
        }
        Command::Evaluate => {
            let gateway = open_gateway_for(&ctx.cfg, &[&spec], false)?;
            let (pipeline, entry) = trained_pipeline(&ctx, &spec, gateway.as_ref(), &mut art)?;
            let eval = evaluate_pipeline(&pipeline, &ctx.splits.test, ctx.cfg.histogram_bins)?;
            write_evaluation(&mut art, "", &eval)?;
            (format!("{}: {}", spec.label(), f1_line(&eval)), vec![entry])
        }
        Command::Compare => {
            let pca_spec = ctx.cfg.pca_spec();
            let adv_spec = ctx.cfg.advisor_spec();
            let gateway = open_gateway_for(&ctx.cfg, &[&pca_spec, &adv_spec], false)?;
            let mut evals = Vec::new();
            let mut entries = Vec::new();
            for (dir, s) in [("pca", &pca_spec), ("advisor", &adv_spec)] {
                let (fit, entry) = fit_and_write(&ctx, s, gateway.as_ref(), &mut art, dir)?;
                let eval = evaluate_pipeline(&fit.pipeline, &ctx.splits.test, ctx.cfg.histogram_bins)?;
                write_evaluation(&mut art, dir, &eval)?;
                evals.push(eval);
                entries.push(entry);
            }
            let pca = summary_of(pca_spec.label(), &evals[0]);
            let advisor = summary_of(adv_spec.label(), &evals[1]);
            let comparison = Comparison {
                delta_macro_precision: advisor.macro_avg.precision - pca.macro_avg.precision,
                delta_macro_recall: advisor.macro_avg.recall - pca.macro_avg.recall,
                delta_macro_f1: advisor.macro_avg.f1 - pca.macro_avg.f1,
                pca,
                advisor,
            };
            art.write_json("comparison.json", &comparison)?;
            (
                format!(
                    "pca {}; {} {}; delta macro F1 {:+.4}",
                    f1_line(&evals[0]),
                    adv_spec.label(),
                    f1_line(&evals[1]),
                    comparison.delta_macro_f1
                ),
                entries,
            )
        }
        Command::Explain => {
            let llm_explain = ctx.cfg.explain.mode == ExplainMode::Llm;
            let gateway = open_gateway_for(&ctx.cfg, &[&spec], llm_explain)?;
            let (pipeline, entry) = trained_pipeline(&ctx, &spec, gateway.as_ref(), &mut art)?;
            let eval = evaluate_pipeline(&pipeline, &ctx.splits.test, ctx.cfg.histogram_bins)?;
            let reports = explain_reports(&ctx, &pipeline, &eval, gateway.as_ref())?;
            let fallbacks = reports.iter().filter(|r| r.note.is_some()).count();
            if fallbacks > 0 {
                notes.push(format!("{fallbacks} explanations carry a note (fallback or incomplete response)"));
            }
            art.write_json("explanations.json", &reports)?;
            art.write_text("explanations.md", &render_markdown(&reports))?;
            let flagged = eval.predictions.iter().filter(|l| **l == Label::Attack).count();
            (format!("{} explanations for {} flagged rows", reports.len(), flagged), vec![entry])
        }
    };
    let manifest = art.finish(ctx.manifest(inv.command, pipelines, notes))?;
    Ok(Outcome { out_dir: ctx.out.clone(), summary, manifest })
}

/// Writes `rows` synthetic KDD-format records to `path`.
pub fn write_synthetic(path: &Path, rows: usize, seed: u64) -> Result<(), CliError> {
    iotguard_core::synthetic::write_synthetic_kddcup(path, rows, seed).map_err(CliError::from)
}
