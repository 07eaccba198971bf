use std::path::PathBuf;

use iotguard_core::explainer::{
    build_explanation_prompt, explanation_request, extract_case, llm_explain, offline_explain,
    render_markdown, AnomalyCase, ExplanationReport, ExplanationSource, SalientFeature,
};
use iotguard_core::llm::{load_fixture_transport, record_fixture, GatewayConfig};
use iotguard_core::Label;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn case(error: f64, features: &[(&str, f64)]) -> AnomalyCase {
    AnomalyCase {
        row_id: 0,
        reconstruction_error: error,
        salient_features: features
            .iter()
            .map(|(n, v)| SalientFeature { name: n.to_string(), value: *v, squared_residual: 0.0 })
            .collect(),
        prediction: Label::Attack,
    }
}

fn low_volume() -> AnomalyCase {
    case(
        0.0001,
        &[
            ("src_bytes", 1.4883707192251517e-06),
            ("dst_bytes", 0.0),
            ("protocol_type_tcp", 0.0),
            ("flag_REJ", 0.0),
        ],
    )
}

fn probe() -> AnomalyCase {
    case(
        0.0008,
        &[
            ("src_bytes", 3.9661041452220616e-07),
            ("dst_bytes", 6.013033152373364e-05),
            ("protocol_type_tcp", 1.0),
            ("flag_REJ", 0.0),
        ],
    )
}

/// Compares with the stored golden; `UPDATE_GOLDENS=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden {name} differs");
}

#[test]
fn low_volume_prompt_matches_golden() {
    let p = build_explanation_prompt(&low_volume());
    for needle in [
        "src_bytes=1.4883707192251517e-06",
        "dst_bytes=0.0",
        "protocol_type_tcp=0.0",
        "flag_REJ=0.0",
        "0.0001",
        "Attack",
    ] {
        assert!(p.contains(needle), "prompt lacks {needle}");
    }
    check_golden("low_volume_prompt.txt", &p);
}

#[test]
fn probe_prompt_matches_golden() {
    let p = build_explanation_prompt(&probe());
    for needle in [
        "src_bytes=3.9661041452220616e-07",
        "dst_bytes=6.013033152373364e-05",
        "protocol_type_tcp=1.0",
        "flag_REJ=0.0",
        "0.0008",
    ] {
        assert!(p.contains(needle), "prompt lacks {needle}");
    }
    check_golden("probe_prompt.txt", &p);
}

#[test]
fn offline_insights_for_exemplar_patterns() {
    let a = offline_explain(&low_volume());
    assert!(a.insight.contains("stealth reconnaissance"), "{}", a.insight);
    let b = offline_explain(&probe());
    assert!(b.insight.contains("port scanning or probing"), "{}", b.insight);
    for r in [&a, &b] {
        assert_eq!(r.source, ExplanationSource::OfflineTemplate);
        assert!(!r.analysis_steps.is_empty());
    }
    check_golden("offline_reports.md", &render_markdown(&[a, b]));
}

#[test]
fn extracted_case_reproduces_exemplar_fields() {
    let names: Vec<String> = ["src_bytes", "dst_bytes", "protocol_type_icmp", "protocol_type_tcp", "flag_REJ", "count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let x = [1.4883707192251517e-06, 0.0, 1.0, 0.0, 0.0, 0.02];
    let x_hat = [0.0, 0.0, 0.99, 0.0, 0.0, 0.0];
    let c = extract_case(3, &names, &x, &x_hat, 0.0001, 1);
    let p = build_explanation_prompt(&c);
    for needle in ["src_bytes=1.4883707192251517e-06", "dst_bytes=0.0", "protocol_type_tcp=0.0", "flag_REJ=0.0", "0.0001"] {
        assert!(p.contains(needle), "prompt lacks {needle}");
    }
    assert_eq!(c.salient_features[0].name, "count");
    assert!(offline_explain(&c).insight.contains("stealth reconnaissance"));
}

#[test]
fn k_larger_than_width_lists_each_column_once() {
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let c = extract_case(0, &names, &[0.1, 0.2, 0.3], &[0.0, 0.0, 0.0], 0.05, 10);
    let mut got: Vec<&str> = c.salient_features.iter().map(|f| f.name.as_str()).collect();
    got.sort();
    assert_eq!(got, ["a", "b", "c"]);
}

const RECORDED_ANSWER: &str = "Generated Insight: The connection moved almost no data in either direction without \
a TCP session, which suggests stealth reconnaissance.\n\nSteps for Further Analysis:\n\
1. Network logs: look for other short connections from the same source.\n\
2. Port analysis: check which ports were contacted.\n\
3. Source-IP tracking: correlate the source with known scanners.\n";

#[test]
fn llm_explanation_replays_recorded_fixture() {
    let cfg = GatewayConfig::for_fixtures();
    let req = explanation_request(&low_volume(), &cfg.model);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        record_fixture(fixture_dir(), &req, RECORDED_ANSWER).unwrap();
    }
    let t = load_fixture_transport(fixture_dir()).unwrap();
    let first = llm_explain(&low_volume(), &cfg, &t).unwrap();
    let second = llm_explain(&low_volume(), &cfg, &t).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.source, ExplanationSource::Llm);
    assert_eq!(first.raw_response.as_deref(), Some(RECORDED_ANSWER));
    assert_eq!(first.analysis_steps.len(), 3);
    assert!(first.insight.contains("stealth reconnaissance"));

    let json = serde_json::to_string(&first).unwrap();
    assert!(json.contains("\"source\":\"llm\""));
    let back: ExplanationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, first);

    // a case without a recording is a fixture miss, not a network call
    let err = llm_explain(&probe(), &cfg, &t).unwrap_err();
    assert!(err.to_string().contains("fixture"), "{err}");
}
