use std::path::{Path, PathBuf};
use std::process::Command as Process;

use iotguard_cli::{run, Command, Invocation};
use iotguard_core::advisor::{advisor_request, heuristic_advise, render_plan_response, AdvisorThresholds, FeatureStats};
use iotguard_core::explainer::{explanation_request, ExplanationReport, ExplanationSource};
use iotguard_core::llm::record_fixture;

const MODEL: &str = "fixture-model";

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "dataset": {{"synthetic": {{"rows": 3000, "seed": 11}}}},
  "subsample": 2000,
  "seed": 5,
  "pca": {{"components": 10}},
  "train": {{"epochs": 3, "batch_size": 64, "learning_rate": 0.005, "hidden_widths": [16], "latent_dim": 6}},
  "histogram_bins": 20{extra}
}}
"#
    );
    let path = dir.join("run.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn invoke(command: Command, config: &Path, out: &Path) -> Invocation {
    let mut inv = Invocation::new(command, config);
    inv.out = Some(out.to_path_buf());
    inv
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn train_is_reproducible_and_evaluate_reuses_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&invoke(Command::Train, &cfg, &a)).unwrap();
    run(&invoke(Command::Train, &cfg, &b)).unwrap();
    for f in ["model.json", "plan.json", "trace.csv", "stats.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let trace = read(a.join("trace.csv"));
    assert_eq!(trace.lines().count(), 4, "{trace}");

    let outcome = run(&invoke(Command::Evaluate, &cfg, &a)).unwrap();
    assert_eq!(outcome.manifest.pipelines[0].model_source.as_deref(), Some("loaded"));
    let report: serde_json::Value = serde_json::from_str(&read(a.join("report.json"))).unwrap();
    assert!(report["macro"]["f1"].as_f64().unwrap() > 0.0);
    assert_eq!(read(a.join("histogram.csv")).lines().count(), 21);

    let mut other_seed = invoke(Command::Evaluate, &cfg, &a);
    other_seed.seed = Some(6);
    let outcome = run(&other_seed).unwrap();
    assert_eq!(outcome.manifest.pipelines[0].model_source.as_deref(), Some("trained"));
    assert_eq!(outcome.manifest.seed, 6);
}

#[test]
fn manifest_hashes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("o");
    let outcome = run(&invoke(Command::Plan, &cfg, &out)).unwrap();
    let m = &outcome.manifest;
    assert_eq!(m.command, "plan");
    assert_eq!(m.dataset.rows_used, 2000);
    assert_eq!(m.dataset.split_rows.iter().sum::<usize>(), 2000);
    assert_eq!(m.pipelines[0].provenance, "heuristic");
    for (rel, hash) in &m.artifacts {
        assert_eq!(&iotguard_cli::artifacts::sha256_hex(read(out.join(rel)).as_bytes()), hash);
    }
    assert!(m.artifacts.contains_key("plan.json"));
    let plan: serde_json::Value = serde_json::from_str(&read(out.join("plan.json"))).unwrap();
    assert_eq!(plan["provenance"], "heuristic");
}

#[test]
fn pca_plan_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut inv = invoke(Command::Plan, &cfg, &dir.path().join("o"));
    inv.pipeline = Some(iotguard_cli::config::PipelineChoice::Pca);
    let outcome = run(&inv).unwrap();
    assert_eq!(outcome.manifest.pipelines[0].provenance, "pca");
    assert!(!outcome.manifest.artifacts.contains_key("stats.json"));
}

#[test]
fn offline_explanations_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#", "explain": {"max_cases": 3, "top_k": 4}"#);
    let out = dir.path().join("o");
    run(&invoke(Command::Explain, &cfg, &out)).unwrap();
    let reports: Vec<ExplanationReport> = serde_json::from_str(&read(out.join("explanations.json"))).unwrap();
    assert!(!reports.is_empty() && reports.len() <= 3);
    assert!(reports.iter().all(|r| r.source == ExplanationSource::OfflineTemplate));
    assert!(reports.windows(2).all(|w| w[0].case.reconstruction_error >= w[1].case.reconstruction_error));
    let md = read(out.join("explanations.md"));
    assert!(md.contains("**Generated Insight:**"));
    assert!(md.contains("**Steps for Further Analysis:**"));
}

#[test]
fn llm_paths_replay_from_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures");
    std::fs::create_dir_all(&fixtures).unwrap();
    let extra = format!(
        r#", "advisor": {{"mode": "llm"}}, "explain": {{"mode": "llm", "max_cases": 2}},
  "gateway": {{"fixture_dir": "fixtures", "model": "{MODEL}"}}"#
    );
    let cfg = write_config(dir.path(), &extra);

    let stats_dir = dir.path().join("stats");
    run(&invoke(Command::Stats, &cfg, &stats_dir)).unwrap();
    let stats: FeatureStats = serde_json::from_str(&read(stats_dir.join("stats.json"))).unwrap();
    let mut plan = heuristic_advise(&stats, &AdvisorThresholds::default());
    plan.steps.retain(|s| !matches!(s, iotguard_core::TransformStep::Binarize { .. }));
    record_fixture(&fixtures, &advisor_request(&stats, MODEL), &render_plan_response(&plan)).unwrap();

    let out = dir.path().join("o");
    let outcome = run(&invoke(Command::Plan, &cfg, &out)).unwrap();
    assert_eq!(outcome.manifest.pipelines[0].provenance, "llm");
    assert_eq!(outcome.manifest.pipelines[0].advisor_fallback, None);
    let written: serde_json::Value = serde_json::from_str(&read(out.join("plan.json"))).unwrap();
    assert_eq!(written["provenance"], "llm");
    assert_eq!(written["steps"].as_array().unwrap().len(), plan.steps.len());

    // No explanation fixtures yet: every case falls back to the template with a note.
    run(&invoke(Command::Explain, &cfg, &out)).unwrap();
    let reports: Vec<ExplanationReport> = serde_json::from_str(&read(out.join("explanations.json"))).unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r.source == ExplanationSource::OfflineTemplate && r.note.is_some()));

    for r in &reports {
        let answer = format!(
            "Generated Insight: row {} looks like a flood.\nSteps for Further Analysis:\n1. Check the source.\n2. Block it.\n",
            r.case.row_id
        );
        record_fixture(&fixtures, &explanation_request(&r.case, MODEL), &answer).unwrap();
    }
    run(&invoke(Command::Explain, &cfg, &out)).unwrap();
    let replayed: Vec<ExplanationReport> = serde_json::from_str(&read(out.join("explanations.json"))).unwrap();
    assert_eq!(replayed.len(), reports.len());
    for r in &replayed {
        assert_eq!(r.source, ExplanationSource::Llm);
        assert_eq!(r.insight, format!("row {} looks like a flood.", r.case.row_id));
        assert_eq!(r.analysis_steps, ["Check the source.", "Block it."]);
    }
}

#[test]
fn garbage_advisor_reply_falls_back_to_heuristic() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures");
    std::fs::create_dir_all(&fixtures).unwrap();
    let extra = format!(
        r#", "advisor": {{"mode": "llm"}}, "gateway": {{"fixture_dir": "fixtures", "model": "{MODEL}"}}"#
    );
    let cfg = write_config(dir.path(), &extra);
    let stats_dir = dir.path().join("stats");
    run(&invoke(Command::Stats, &cfg, &stats_dir)).unwrap();
    let stats: FeatureStats = serde_json::from_str(&read(stats_dir.join("stats.json"))).unwrap();
    record_fixture(&fixtures, &advisor_request(&stats, MODEL), "I would scale everything.").unwrap();

    let outcome = run(&invoke(Command::Plan, &cfg, &dir.path().join("o"))).unwrap();
    let entry = &outcome.manifest.pipelines[0];
    assert_eq!(entry.provenance, "llm");
    assert!(entry.advisor_fallback.as_deref().unwrap().contains("fenced"));
}

fn binary(args: &[&str], env_clear: bool) -> std::process::Output {
    let mut cmd = Process::new(env!("CARGO_BIN_EXE_iotguard"));
    cmd.args(args);
    if env_clear {
        cmd.env_remove("LLM_API_URL").env_remove("LLM_API_KEY").env_remove("LLM_MODEL");
    }
    cmd.output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg_s = cfg.to_str().unwrap();
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap();

    let ok = binary(&["stats", "--config", cfg_s, "--out", out_s], true);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.starts_with("stats: "), "{stdout}");
    assert!(out.join("manifest.json").exists());

    let no_url = binary(&["plan", "--config", cfg_s, "--out", out_s, "--advisor", "llm"], true);
    assert_eq!(no_url.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_url.stderr).contains("config error"));

    let missing = binary(&["train", "--config", "/nonexistent/run.json"], true);
    assert_eq!(missing.status.code(), Some(2));

    let bad_data = dir.path().join("bad.csv");
    std::fs::write(&bad_data, "0,tcp,http\n").unwrap();
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"dataset": "bad.csv"}"#).unwrap();
    let parse = binary(&["stats", "--config", bad_cfg.to_str().unwrap(), "--out", out_s], true);
    assert_eq!(parse.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&parse.stderr).contains("line 1"));

    let usage = binary(&["train"], true);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn synth_subcommand_writes_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let o = binary(&["synth", "--rows", "300", "--seed", "2", "--out", path.to_str().unwrap()], true);
    assert!(o.status.success());
    assert_eq!(read(&path).lines().count(), 300);
}
