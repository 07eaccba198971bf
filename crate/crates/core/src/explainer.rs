//! Turning flagged rows into explanation cases, prompts and reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::Result;
use crate::llm::{send_chat, ChatMessage, ChatRequest, GatewayConfig, Transport};
use crate::Scalar;

/// Columns always surfaced in a case when the model input has them.
const CONTEXT_COLUMNS: [&str; 3] = ["src_bytes", "dst_bytes", "flag_REJ"];
const CONTEXT_PREFIXES: [&str; 1] = ["protocol_type_"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientFeature {
    pub name: String,
    pub value: f64,
    pub squared_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCase {
    pub row_id: usize,
    pub reconstruction_error: f64,
    /// Sorted by squared residual, largest first.
    pub salient_features: Vec<SalientFeature>,
    pub prediction: Label,
}

impl AnomalyCase {
    pub fn feature(&self, name: &str) -> Option<f64> {
        self.salient_features.iter().find(|f| f.name == name).map(|f| f.value)
    }
}

/// Builds the case for one flagged row: the `k` worst-reconstructed columns
/// plus byte counts, protocol indicators and the REJ flag when present.
pub fn extract_case<T: Scalar>(
    row_id: usize,
    column_names: &[String],
    x: &[T],
    x_hat: &[T],
    error: T,
    k: usize,
) -> AnomalyCase {
    let features: Vec<SalientFeature> = column_names
        .iter()
        .zip(x.iter().zip(x_hat))
        .map(|(name, (a, b))| {
            let d = (*a - *b).as_f64();
            SalientFeature { name: name.clone(), value: a.as_f64(), squared_residual: d * d }
        })
        .collect();
    let mut order: Vec<usize> = (0..features.len()).collect();
    // stable: ties keep column order
    order.sort_by(|&a, &b| {
        features[b]
            .squared_residual
            .partial_cmp(&features[a].squared_residual)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut chosen: Vec<usize> = order.iter().copied().take(k).collect();
    for (j, name) in column_names.iter().enumerate() {
        let context = CONTEXT_COLUMNS.contains(&name.as_str())
            || CONTEXT_PREFIXES.iter().any(|p| name.starts_with(p));
        if context && !chosen.contains(&j) {
            chosen.push(j);
        }
    }
    chosen.sort_by_key(|j| order.iter().position(|o| o == j));
    AnomalyCase {
        row_id,
        reconstruction_error: error.as_f64(),
        salient_features: chosen.into_iter().map(|j| features[j].clone()).collect(),
        prediction: Label::Attack,
    }
}

/// Shortest round-trip decimal in the style of Python's `repr(float)`:
/// positional for exponents in `[-4, 16)`, otherwise `d.ddde±XX`.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{:e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if v < 0.0 { "-" } else { "" };
    if (-4..16).contains(&exp) {
        let point = exp + 1;
        let body = if point <= 0 {
            format!("0.{}{}", "0".repeat((-point) as usize), digits)
        } else if point as usize >= digits.len() {
            format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
        } else {
            let (int, frac) = digits.split_at(point as usize);
            format!("{int}.{frac}")
        };
        format!("{sign}{body}")
    } else {
        let (first, rest) = digits.split_at(1);
        let frac = if rest.is_empty() { String::new() } else { format!(".{rest}") };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{first}{frac}e{esign}{:02}", exp.abs())
    }
}

fn prediction_text(l: Label) -> &'static str {
    match l {
        Label::Attack => "Attack",
        Label::Normal => "Normal",
    }
}

/// Prompt for one case; a pure function of the case.
pub fn build_explanation_prompt(case: &AnomalyCase) -> String {
    let mut p = String::new();
    p.push_str(
        "An autoencoder trained on normal network traffic flagged the connection record below \
         as anomalous. Feature values are the model inputs after preprocessing \
         (byte counts are Min-Max scaled to [0, 1]; *_<category> columns are one-hot indicators).\n\n",
    );
    let _ = writeln!(p, "Reconstruction Error: {}", format_value(case.reconstruction_error));
    p.push_str("\nFeatures:\n");
    for f in &case.salient_features {
        let _ = writeln!(p, "- {}={}", f.name, format_value(f.value));
    }
    let _ = writeln!(p, "\nPrediction: {}", prediction_text(case.prediction));
    p.push_str(
        "\nRespond with:\n\
         Generated Insight: one short paragraph on the probable cause of this anomaly and what \
         activity it may indicate.\n\
         Steps for Further Analysis: a numbered list of concrete follow-up checks for a \
         security analyst.\n",
    );
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExplanationSource {
    #[serde(rename = "llm")]
    Llm,
    #[serde(rename = "offline-template")]
    OfflineTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    #[serde(rename = "case")]
    pub case: AnomalyCase,
    pub insight: String,
    pub analysis_steps: Vec<String>,
    pub source: ExplanationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

// Scaled byte counts at or below this count as "near zero".
const NEAR_ZERO: f64 = 1e-3;
// Upper bound for a "small" scaled destination byte count.
const SMALL_REPLY: f64 = 1e-2;

fn is_set(v: Option<f64>) -> bool {
    v.is_some_and(|x| x >= 0.5)
}

fn offline_rule(case: &AnomalyCase) -> (String, Vec<String>) {
    let src = case.feature("src_bytes");
    let dst = case.feature("dst_bytes");
    let tcp = case.feature("protocol_type_tcp");
    let rej = case.feature("flag_REJ");

    if is_set(rej) {
        return (
            "The connection carries the REJ flag: the target refused it. A refused connection \
             flagged by the detector is most consistent with a failed network scanning attempt \
             against a closed or filtered port."
                .into(),
            vec![
                "Connection logs: count refused connections from the same source in the surrounding window.".into(),
                "Port analysis: list the destination ports that refused connections.".into(),
                "Source-IP tracking: check whether the source address appears in other alerts.".into(),
            ],
        );
    }
    if let (Some(s), Some(d), Some(t)) = (src, dst, tcp) {
        if s <= NEAR_ZERO && d == 0.0 && t < 0.5 {
            return (
                format!(
                    "Almost no payload left the source (src_bytes={}) and nothing came back \
                     (dst_bytes={}) over a non-TCP protocol, with no rejection recorded. Traffic \
                     that touches a host without exchanging data suggests stealth reconnaissance \
                     or another low-volume anomaly.",
                    format_value(s),
                    format_value(d)
                ),
                vec![
                    "Network logs: look up the source address and check for repeated short-lived connections.".into(),
                    "Port analysis: identify which destination ports or services were contacted.".into(),
                    "Threshold review: decide whether near-empty payloads warrant a dedicated detection threshold.".into(),
                ],
            );
        }
        if s <= NEAR_ZERO && d > 0.0 && d <= SMALL_REPLY && t >= 0.5 && !is_set(rej) {
            return (
                format!(
                    "A TCP connection sent very little (src_bytes={}) and received only a small \
                     reply (dst_bytes={}) without being refused. Minimal requests that only elicit \
                     short responses are typical of port scanning or probing behavior aimed at \
                     mapping open services.",
                    format_value(s),
                    format_value(d)
                ),
                vec![
                    "Traffic context: inspect neighbouring connections for sequential port sweeps.".into(),
                    "Protocol analysis: check whether the TCP handshake completed or was dropped midway.".into(),
                    "Source-IP tracking: search for repeated connections from the same address.".into(),
                ],
            );
        }
    }
    let top = case
        .salient_features
        .first()
        .map(|f| (f.name.as_str(), f.value, f.squared_residual));
    let insight = match top {
        Some((name, v, r)) => format!(
            "The record deviates most from learned normal traffic on `{name}` (value {}, squared \
             residual {}). The reconstruction error of {} exceeds what the model produces for \
             normal connections, so this feature combination is unusual for the network.",
            format_value(v),
            format_value(r),
            format_value(case.reconstruction_error)
        ),
        None => format!(
            "The reconstruction error of {} exceeds what the model produces for normal connections.",
            format_value(case.reconstruction_error)
        ),
    };
    let first = match top {
        Some((name, ..)) => format!("Feature review: compare `{name}` with its range in recent normal traffic."),
        None => "Feature review: compare the record with recent normal traffic.".into(),
    };
    (
        insight,
        vec![
            first,
            "Network logs: pull the full session for this connection and its source address.".into(),
            "Source-IP tracking: check for other flagged connections from the same source.".into(),
        ],
    )
}

/// Rule-based explanation; total and deterministic.
pub fn offline_explain(case: &AnomalyCase) -> ExplanationReport {
    let (insight, analysis_steps) = offline_rule(case);
    ExplanationReport {
        case: case.clone(),
        insight,
        analysis_steps,
        source: ExplanationSource::OfflineTemplate,
        raw_response: None,
        note: None,
    }
}

fn strip_step_marker(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &t[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    let rest = rest.trim();
    (!rest.is_empty()).then_some(rest)
}

/// Splits a free-text answer into insight paragraph and numbered steps.
pub fn parse_explanation(content: &str) -> (String, Vec<String>) {
    let mut insight = Vec::new();
    let mut steps = Vec::new();
    for line in content.lines() {
        if let Some(step) = strip_step_marker(line) {
            steps.push(step.replace("**", ""));
            continue;
        }
        let plain = line.replace("**", "");
        let t = plain.trim().trim_start_matches('#').trim();
        if t.is_empty() || t.to_ascii_lowercase().starts_with("steps for further analysis") {
            continue;
        }
        let t = t.strip_prefix("Generated Insight:").unwrap_or(t).trim();
        if !t.is_empty() {
            insight.push(t.to_string());
        }
    }
    (insight.join(" "), steps)
}

/// The chat request [`llm_explain`] sends.
pub fn explanation_request(case: &AnomalyCase, model: &str) -> ChatRequest {
    ChatRequest::new(
        model,
        vec![
            ChatMessage::system("You are a network security analyst explaining intrusion-detection alerts."),
            ChatMessage::user(build_explanation_prompt(case)),
        ],
    )
}

/// Asks the endpoint for an explanation of `case`.
pub fn llm_explain(
    case: &AnomalyCase,
    cfg: &GatewayConfig,
    transport: &dyn Transport,
) -> Result<ExplanationReport> {
    let resp = send_chat(&explanation_request(case, &cfg.model), cfg, transport)?;
    let (mut insight, mut steps) = parse_explanation(&resp.content);
    let mut note = None;
    if insight.is_empty() {
        insight = resp.content.trim().to_string();
    }
    if insight.is_empty() {
        insight = "The endpoint returned an empty explanation.".into();
        note = Some("empty response".into());
    }
    if steps.is_empty() {
        steps.push("Review the raw response; the endpoint returned no numbered steps.".into());
        note = Some("response had no numbered analysis steps".into());
    }
    Ok(ExplanationReport {
        case: case.clone(),
        insight,
        analysis_steps: steps,
        source: ExplanationSource::Llm,
        raw_response: Some(resp.content),
        note,
    })
}

/// Human-readable bundle, one section per anomaly.
pub fn render_markdown(reports: &[ExplanationReport]) -> String {
    let mut s = String::from("# Anomaly explanations\n");
    if reports.is_empty() {
        s.push_str("\nNo rows were classified as attacks.\n");
    }
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(s, "\n## Anomaly {} (row {})\n", i + 1, r.case.row_id);
        let _ = writeln!(s, "**Reconstruction Error:** {}\n", format_value(r.case.reconstruction_error));
        s.push_str("**Features:**\n\n");
        for f in &r.case.salient_features {
            let _ = writeln!(s, "- `{}={}`", f.name, format_value(f.value));
        }
        let _ = writeln!(s, "\n**Prediction:** {}\n", prediction_text(r.case.prediction));
        let _ = writeln!(s, "**Generated Insight:** {}\n", r.insight);
        s.push_str("**Steps for Further Analysis:**\n\n");
        for (k, step) in r.analysis_steps.iter().enumerate() {
            let _ = writeln!(s, "{}. {}", k + 1, step);
        }
        let source = match r.source {
            ExplanationSource::Llm => "llm",
            ExplanationSource::OfflineTemplate => "offline-template",
        };
        let _ = writeln!(s, "\n_Source: {source}_");
        if let Some(n) = &r.note {
            let _ = writeln!(s, "_Note: {n}_");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn python_style_floats() {
        // expected strings are CPython's repr() of the same doubles
        let cases = [
            (1.4883707192251517e-06, "1.4883707192251517e-06"),
            (3.9661041452220616e-07, "3.9661041452220616e-07"),
            (6.013033152373364e-05, "6.013033152373364e-05"),
            (0.0, "0.0"),
            (1.0, "1.0"),
            (0.0001, "0.0001"),
            (0.0008, "0.0008"),
            (0.00001, "1e-05"),
            (123.5, "123.5"),
            (1e16, "1e+16"),
            (1234567890123456.0, "1234567890123456.0"),
            (-2.5e-10, "-2.5e-10"),
            (0.1 + 0.2, "0.30000000000000004"),
        ];
        for (v, s) in cases {
            assert_eq!(format_value(v), s);
        }
    }

    #[test]
    fn case_has_top_k_and_context_columns() {
        let cols = names(&["a", "src_bytes", "b", "protocol_type_icmp", "protocol_type_tcp", "c", "flag_REJ", "flag_SF"]);
        let x = [0.9, 0.0, 0.5, 1.0, 0.0, 0.1, 0.0, 1.0];
        let xh = [0.1, 0.0, 0.45, 0.9, 0.0, 0.6, 0.0, 0.2];
        let case = extract_case(7, &cols, &x, &xh, 0.2, 2);
        let got: Vec<&str> = case.salient_features.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(got, ["a", "flag_SF", "protocol_type_icmp", "src_bytes", "protocol_type_tcp", "flag_REJ"]);
        assert!(case
            .salient_features
            .windows(2)
            .all(|w| w[0].squared_residual >= w[1].squared_residual));
        assert_eq!(case.row_id, 7);
        assert_eq!(case.prediction, Label::Attack);
    }

    #[test]
    fn perfect_reconstruction_still_lists_features() {
        let cols = names(&["a", "b"]);
        let case = extract_case(0, &cols, &[0.3, 0.4], &[0.3, 0.4], 0.0, 5);
        assert_eq!(case.salient_features.len(), 2);
        assert!(case.salient_features.iter().all(|f| f.squared_residual == 0.0));
    }

    fn case_of(features: &[(&str, f64)]) -> AnomalyCase {
        AnomalyCase {
            row_id: 1,
            reconstruction_error: 0.0001,
            salient_features: features
                .iter()
                .map(|(n, v)| SalientFeature { name: n.to_string(), value: *v, squared_residual: 0.0 })
                .collect(),
            prediction: Label::Attack,
        }
    }

    #[test]
    fn rules_match_exemplar_patterns() {
        let recon = case_of(&[
            ("src_bytes", 1.4883707192251517e-06),
            ("dst_bytes", 0.0),
            ("protocol_type_tcp", 0.0),
            ("flag_REJ", 0.0),
        ]);
        assert!(offline_explain(&recon).insight.contains("stealth reconnaissance"));

        let probe = case_of(&[
            ("src_bytes", 3.9661041452220616e-07),
            ("dst_bytes", 6.013033152373364e-05),
            ("protocol_type_tcp", 1.0),
            ("flag_REJ", 0.0),
        ]);
        assert!(offline_explain(&probe).insight.contains("port scanning or probing"));

        let rejected = case_of(&[("src_bytes", 0.0), ("protocol_type_tcp", 1.0), ("flag_REJ", 1.0)]);
        assert!(offline_explain(&rejected).insight.contains("failed network scanning attempt"));

        let other = case_of(&[("count", 0.9), ("src_bytes", 0.4)]);
        let r = offline_explain(&other);
        assert!(r.insight.contains("`count`"));
        assert_eq!(r.source, ExplanationSource::OfflineTemplate);
        assert!(!r.analysis_steps.is_empty());
        assert_eq!(offline_explain(&case_of(&[])).analysis_steps.len(), 3);
    }

    #[test]
    fn prompt_is_pure_and_complete() {
        let c = case_of(&[("src_bytes", 1.4883707192251517e-06), ("dst_bytes", 0.0)]);
        let p = build_explanation_prompt(&c);
        assert_eq!(p, build_explanation_prompt(&c));
        assert!(p.contains("Reconstruction Error: 0.0001\n"));
        assert!(p.contains("- src_bytes=1.4883707192251517e-06\n"));
        assert!(p.contains("Prediction: Attack"));
        assert!(p.contains("numbered list"));
    }

    #[test]
    fn parses_free_text_answers() {
        let text = "**Generated Insight:** Minimal traffic suggests probing.\n\n**Steps for Further Analysis:**\n1. **Traffic Context:** look around.\n2) Check handshakes.\n";
        let (insight, steps) = parse_explanation(text);
        assert_eq!(insight, "Minimal traffic suggests probing.");
        assert_eq!(steps, ["Traffic Context: look around.", "Check handshakes."]);
    }

    #[test]
    fn markdown_mirrors_report_layout() {
        let c = case_of(&[("src_bytes", 1.4883707192251517e-06)]);
        let md = render_markdown(&[offline_explain(&c)]);
        assert!(md.contains("## Anomaly 1 (row 1)"));
        assert!(md.contains("**Reconstruction Error:** 0.0001"));
        assert!(md.contains("- `src_bytes=1.4883707192251517e-06`"));
        assert!(md.contains("**Steps for Further Analysis:**\n\n1. "));
    }
}
