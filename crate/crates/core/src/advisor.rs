//! Feature statistics and preprocessing-plan advice.
//!
//! Two advisors emit the same [`PreprocessPlan`] language: a deterministic
//! heuristic over [`FeatureStats`], and a chat-completion endpoint that is
//! prompted with the same statistics and must answer with a JSON plan.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureKind;
use crate::error::{Error, Result};
use crate::llm::{send_chat, ChatMessage, ChatRequest, GatewayConfig, Transport};
use crate::transforms::{FeatureMatrix, PreprocessPlan, Provenance, TransformStep};
use crate::Scalar;

/// Correlations with `|r|` at or below this are not listed.
pub const CORRELATION_REPORT_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub column: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub kind: FeatureKind,
    /// Population variance.
    pub variance: f64,
    /// Fraction of entries equal to zero.
    pub sparsity: f64,
    pub cardinality: usize,
    /// Pearson r against other continuous columns, `|r|` descending.
    pub top_correlations: Vec<Correlation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub rows: usize,
    pub columns: Vec<ColumnStats>,
}

type Vocabularies = BTreeMap<String, Vec<String>>;

impl FeatureStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn schema(&self) -> (Vec<(String, FeatureKind)>, Vocabularies) {
        let cols = self.columns.iter().map(|c| (c.name.clone(), c.kind)).collect();
        let vocab = self
            .columns
            .iter()
            .filter(|c| c.kind == FeatureKind::Categorical)
            .map(|c| (c.name.clone(), c.categories.clone()))
            .collect();
        (cols, vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorThresholds {
    pub low_variance_cutoff: f64,
    pub high_correlation_cutoff: f64,
    pub sparsity_cutoff: f64,
}

impl Default for AdvisorThresholds {
    fn default() -> Self {
        AdvisorThresholds {
            low_variance_cutoff: 1e-6,
            high_correlation_cutoff: 0.95,
            sparsity_cutoff: 0.9,
        }
    }
}

impl AdvisorThresholds {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.low_variance_cutoff >= 0.0
            && unit(self.high_correlation_cutoff)
            && unit(self.sparsity_cutoff))
        {
            return Err(Error::InvalidArgument(format!("advisor thresholds out of range: {self:?}")));
        }
        Ok(())
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Per-column statistics of `m`. Correlations are computed between
/// continuous columns only and are 0 when either column is constant.
pub fn compute_feature_stats<T: Scalar>(m: &FeatureMatrix<T>) -> Result<FeatureStats> {
    if m.n_rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature statistics need at least 2 rows, got {}",
            m.n_rows()
        )));
    }
    let n = m.n_rows() as f64;
    let cols: Vec<Vec<f64>> = (0..m.n_cols())
        .map(|j| m.column(j).into_iter().map(Scalar::as_f64).collect())
        .collect();

    let continuous: Vec<usize> = (0..m.n_cols())
        .filter(|&j| m.kinds()[j] == FeatureKind::Continuous)
        .collect();
    let mut corr: Vec<Vec<Correlation>> = vec![Vec::new(); m.n_cols()];
    for (a, &i) in continuous.iter().enumerate() {
        for &j in &continuous[a + 1..] {
            let r = pearson(&cols[i], &cols[j]);
            if r.abs() > CORRELATION_REPORT_FLOOR {
                corr[i].push(Correlation { column: m.column_names()[j].clone(), r });
                corr[j].push(Correlation { column: m.column_names()[i].clone(), r });
            }
        }
    }

    let mut columns = Vec::with_capacity(m.n_cols());
    for (j, (col, mut top)) in cols.iter().zip(corr).enumerate() {
        let mean = col.iter().sum::<f64>() / n;
        let variance = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let zeros = col.iter().filter(|v| **v == 0.0).count();
        let cardinality = col.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len();
        top.sort_by(|a, b| {
            b.r.abs()
                .partial_cmp(&a.r.abs())
                .expect("finite r")
                .then_with(|| a.column.cmp(&b.column))
        });
        let name = m.column_names()[j].clone();
        columns.push(ColumnStats {
            categories: m.vocabulary(&name).unwrap_or_default().to_vec(),
            kind: m.kinds()[j],
            name,
            variance,
            sparsity: zeros as f64 / n,
            cardinality,
            top_correlations: top,
        });
    }
    Ok(FeatureStats { rows: m.n_rows(), columns })
}

/// Deterministic plan from statistics:
///
/// 1. drop columns whose variance is below the cutoff;
/// 2. average each maximal group of continuous columns linked by
///    correlation above the cutoff (transitive closure);
/// 3. binarize remaining sparse continuous columns;
/// 4. one-hot every categorical column;
/// 5. min-max scale what is still continuous.
///
/// Only correlations listed in the stats are considered, so cutoffs at or
/// below [`CORRELATION_REPORT_FLOOR`] behave like the floor.
pub fn heuristic_advise(stats: &FeatureStats, t: &AdvisorThresholds) -> PreprocessPlan {
    let mut steps = Vec::new();
    let by_name = |a: &&ColumnStats, b: &&ColumnStats| a.name.cmp(&b.name);

    let mut dropped: Vec<&ColumnStats> = stats
        .columns
        .iter()
        .filter(|c| c.variance < t.low_variance_cutoff)
        .collect();
    dropped.sort_by(by_name);
    let dropped_names: BTreeSet<&str> = dropped.iter().map(|c| c.name.as_str()).collect();
    steps.extend(dropped.iter().map(|c| TransformStep::Drop { column: c.name.clone() }));

    let live = |c: &&ColumnStats| !dropped_names.contains(c.name.as_str());
    let continuous: Vec<&ColumnStats> = stats
        .columns
        .iter()
        .filter(live)
        .filter(|c| c.kind == FeatureKind::Continuous)
        .collect();

    // union-find over the high-correlation graph
    let index: BTreeMap<&str, usize> = continuous
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..continuous.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, c) in continuous.iter().enumerate() {
        for corr in &c.top_correlations {
            if corr.r > t.high_correlation_cutoff {
                if let Some(&j) = index.get(corr.column.as_str()) {
                    let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, c) in continuous.iter().enumerate() {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(c.name.clone());
    }
    let mut merges: Vec<Vec<String>> = groups
        .into_values()
        .filter(|g| g.len() > 1)
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    merges.sort();
    let merged: BTreeSet<String> = merges.iter().flatten().cloned().collect();
    let mut survivors: Vec<String> = Vec::new();
    for g in merges {
        let new_name = format!("avg({})", g.join(","));
        survivors.push(new_name.clone());
        steps.push(TransformStep::MergeAverage { columns: g, new_name });
    }

    let mut singles: Vec<&ColumnStats> = continuous
        .iter()
        .copied()
        .filter(|c| !merged.contains(&c.name))
        .collect();
    singles.sort_by(by_name);
    for c in &singles {
        if c.sparsity > t.sparsity_cutoff {
            steps.push(TransformStep::Binarize { column: c.name.clone(), threshold: 0.0 });
        } else {
            survivors.push(c.name.clone());
        }
    }

    let mut categorical: Vec<&ColumnStats> = stats
        .columns
        .iter()
        .filter(live)
        .filter(|c| c.kind == FeatureKind::Categorical)
        .collect();
    categorical.sort_by(by_name);
    steps.extend(categorical.iter().map(|c| TransformStep::OneHot { column: c.name.clone() }));

    survivors.sort();
    if !survivors.is_empty() {
        steps.push(TransformStep::MinMax { columns: survivors });
    }
    PreprocessPlan::new(steps, Provenance::Heuristic)
}

/// Prompt asking a chat model for a plan over the given statistics.
pub fn build_advisor_prompt(stats: &FeatureStats) -> String {
    let mut p = String::new();
    p.push_str(
        "You are preparing network connection records for an autoencoder anomaly detector.\n\
         Review the per-feature statistics below, identify redundant, low-variance and sparse \
         features, and propose a preprocessing plan.\n\n",
    );
    let _ = writeln!(p, "Training rows: {}", stats.rows);
    p.push_str("\n| feature | kind | variance | sparsity | distinct | top correlation |\n");
    p.push_str("|---|---|---|---|---|---|\n");
    for c in &stats.columns {
        let kind = match c.kind {
            FeatureKind::Continuous => "continuous",
            FeatureKind::Categorical => "categorical",
            FeatureKind::Binary => "binary",
        };
        let top = c
            .top_correlations
            .first()
            .map(|t| format!("{} (r={:.4})", t.column, t.r))
            .unwrap_or_else(|| "-".to_string());
        let _ = writeln!(
            p,
            "| {} | {} | {:.6e} | {:.4} | {} | {} |",
            c.name, kind, c.variance, c.sparsity, c.cardinality, top
        );
    }
    p.push_str(
        "\nAllowed steps, applied in order (each step sees the columns left by the previous ones):\n\
         - {\"op\":\"drop\",\"column\":NAME}\n\
         - {\"op\":\"binarize\",\"column\":NAME,\"threshold\":NUMBER}  (value > threshold becomes 1, else 0)\n\
         - {\"op\":\"merge_average\",\"columns\":[NAME,...],\"new_name\":NAME}  (replace columns by their mean)\n\
         - {\"op\":\"one_hot\",\"column\":NAME}  (categorical columns only; outputs NAME_<category>)\n\
         - {\"op\":\"min_max\",\"columns\":[NAME,...]}  (scale to [0,1])\n\n\
         Every categorical column must be one_hot encoded. Only use feature names from the table.\n\
         Answer with exactly one fenced ```json block containing an object of the form\n\
         {\"steps\":[...],\"provenance\":\"llm\"} and nothing else inside the block.\n",
    );
    p
}

/// Extracts the first fenced code block. A ```json fence is preferred over
/// an untagged one only by position: whichever comes first wins.
fn first_fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// Parses an advisor reply into a plan validated against the statistics'
/// columns. The result always carries `Provenance::Llm`.
pub fn parse_advisor_response(text: &str, stats: &FeatureStats) -> Result<PreprocessPlan> {
    let block = first_fenced_block(text)
        .ok_or_else(|| Error::AdvisorResponse("no fenced JSON block in response".into()))?;
    let mut plan: PreprocessPlan = serde_json::from_str(block.trim())
        .map_err(|e| Error::AdvisorResponse(format!("plan does not match schema: {e}")))?;
    plan.provenance = Provenance::Llm;
    let (cols, vocab) = stats.schema();
    let out = plan.validate(&cols, &vocab).map_err(|e| match e {
        Error::PlanStep { step, column, reason } => Error::AdvisorResponse(format!(
            "step {step} references column `{column}`: {reason}"
        )),
        other => other,
    })?;
    if let Some((name, _)) = out.iter().find(|(_, k)| *k == FeatureKind::Categorical) {
        return Err(Error::AdvisorResponse(format!(
            "categorical column `{name}` is never one_hot encoded"
        )));
    }
    Ok(plan)
}

/// Plan in the form a compliant advisor reply would carry it.
pub fn render_plan_response(plan: &PreprocessPlan) -> String {
    format!("```json\n{}\n```\n", plan.to_json())
}

/// The chat request [`llm_advise`] sends.
pub fn advisor_request(stats: &FeatureStats, model: &str) -> ChatRequest {
    ChatRequest::new(
        model,
        vec![
            ChatMessage::system("You are a careful data engineer for network intrusion detection."),
            ChatMessage::user(build_advisor_prompt(stats)),
        ],
    )
}

/// Asks the configured endpoint for a plan.
pub fn llm_advise(
    stats: &FeatureStats,
    cfg: &GatewayConfig,
    transport: &dyn Transport,
) -> Result<PreprocessPlan> {
    let resp = send_chat(&advisor_request(stats, &cfg.model), cfg, transport)?;
    parse_advisor_response(&resp.content, stats)
}
