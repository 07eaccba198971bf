//! The two preprocessing pipelines, end to end: split, plan, optional PCA,
//! autoencoder on normal training rows, threshold on validation-normal
//! errors, evaluation on the test split.

use serde::{Deserialize, Serialize};

use crate::advisor::{compute_feature_stats, heuristic_advise, llm_advise, AdvisorThresholds, FeatureStats};
use crate::autoencoder::{init_model, train, AutoencoderModel, TrainConfig, TrainTrace};
use crate::dataset::{stratified_split, DatasetSchema, FeatureKind, Label, LabeledDataset};
use crate::detection::{
    calibrate_threshold, classify, evaluate, export_error_histogram, ErrorHistogram,
    EvaluationReport, ThresholdMethod, ThresholdModel,
};
use crate::error::{Error, ErrorClass, Result};
use crate::explainer::{extract_case, AnomalyCase};
use crate::llm::{GatewayConfig, Transport};
use crate::pca::{fit_pca, select_components, PcaModel};
use crate::transforms::{fit_minmax, FeatureMatrix, FittedPlan, PreprocessPlan, Provenance, TransformStep};
use crate::Scalar;

/// Number of components, or the smallest count reaching a variance share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaSettings {
    Components(usize),
    TargetVariance(f64),
}

impl Default for PcaSettings {
    fn default() -> Self {
        PcaSettings::Components(25)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvisorMode {
    #[default]
    Heuristic,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PipelineSpec {
    Pca {
        #[serde(default)]
        pca: PcaSettings,
    },
    Advisor {
        #[serde(default)]
        mode: AdvisorMode,
        #[serde(default)]
        thresholds: AdvisorThresholds,
    },
}

impl PipelineSpec {
    /// Provenance label recorded in manifests: `pca`, `heuristic` or `llm`.
    pub fn label(&self) -> &'static str {
        match self {
            PipelineSpec::Pca { .. } => "pca",
            PipelineSpec::Advisor { mode: AdvisorMode::Heuristic, .. } => "heuristic",
            PipelineSpec::Advisor { mode: AdvisorMode::Llm, .. } => "llm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub train: TrainConfig,
    pub threshold: ThresholdMethod,
    pub histogram_bins: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { train: TrainConfig::default(), threshold: ThresholdMethod::default(), histogram_bins: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

impl Splits {
    pub fn new(ds: &LabeledDataset, fractions: (f64, f64, f64), seed: u64) -> Result<Self> {
        let (train, val, test) = stratified_split(ds, fractions, seed)?;
        Ok(Splits { train, val, test })
    }
}

/// Optional chat endpoint for the LLM advisor and explainer.
#[derive(Clone, Copy)]
pub struct Llm<'a> {
    pub config: &'a GatewayConfig,
    pub transport: &'a dyn Transport,
}

/// One-hot every categorical column and Min-Max scale every continuous one;
/// binary columns pass through.
pub fn traditional_plan(schema: &DatasetSchema) -> PreprocessPlan {
    let mut steps: Vec<TransformStep> = schema
        .columns()
        .iter()
        .filter(|c| c.kind == FeatureKind::Categorical)
        .map(|c| TransformStep::OneHot { column: c.name.clone() })
        .collect();
    let continuous: Vec<String> = schema
        .columns()
        .iter()
        .filter(|c| c.kind == FeatureKind::Continuous)
        .map(|c| c.name.clone())
        .collect();
    if !continuous.is_empty() {
        steps.push(TransformStep::MinMax { columns: continuous });
    }
    PreprocessPlan::new(steps, Provenance::Manual)
}

/// Statistics the advisor sees: training rows with continuous columns
/// Min-Max scaled, categoricals as vocabulary indices.
pub fn advisor_stats(train: &LabeledDataset) -> Result<FeatureStats> {
    let m = train.to_matrix::<f64>();
    let continuous: Vec<String> = m
        .column_names()
        .iter()
        .zip(m.kinds())
        .filter(|(_, k)| **k == FeatureKind::Continuous)
        .map(|(n, _)| n.clone())
        .collect();
    let scaled = fit_minmax(&m, &continuous)?.apply(&m)?;
    compute_feature_stats(&scaled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub plan: PreprocessPlan,
    /// Why the LLM plan was replaced by the heuristic one, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// Plan from the heuristic or, in LLM mode, from the endpoint. Missing or
/// invalid endpoint configuration is an error; any other LLM failure falls
/// back to the heuristic plan and is recorded.
pub fn advise(
    stats: &FeatureStats,
    mode: AdvisorMode,
    thresholds: &AdvisorThresholds,
    llm: Option<Llm<'_>>,
) -> Result<Advice> {
    thresholds.validate()?;
    match mode {
        AdvisorMode::Heuristic => Ok(Advice { plan: heuristic_advise(stats, thresholds), fallback: None }),
        AdvisorMode::Llm => {
            let llm = llm.ok_or_else(|| {
                Error::Gateway(crate::llm::GatewayError::Configuration(
                    "LLM advisor selected but no chat endpoint is configured".into(),
                ))
            })?;
            llm.config.check().map_err(Error::Gateway)?;
            match llm_advise(stats, llm.config, llm.transport) {
                Ok(plan) => Ok(Advice { plan, fallback: None }),
                Err(e) if e.class() == ErrorClass::Config => Err(e),
                Err(e) => {
                    log::warn!("LLM advice failed, using heuristic plan: {e}");
                    Ok(Advice { plan: heuristic_advise(stats, thresholds), fallback: Some(e.to_string()) })
                }
            }
        }
    }
}

/// Everything needed to score new rows; serialized as `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline<T> {
    pub pipeline: String,
    pub plan: PreprocessPlan,
    pub fitted_plan: FittedPlan<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaModel<T>>,
    pub autoencoder: AutoencoderModel<T>,
    pub threshold: ThresholdModel<T>,
    pub train_config: TrainConfig,
}

/// Model inputs plus the count of categorical values outside the fitted
/// vocabularies.
pub struct Features<T> {
    pub matrix: FeatureMatrix<T>,
    pub unseen: usize,
}

impl<T: Scalar> TrainedPipeline<T> {
    pub fn features(&self, m: &FeatureMatrix<T>) -> Result<Features<T>> {
        let enc = self.fitted_plan.apply(m)?;
        let matrix = match &self.pca {
            Some(p) => p.transform(&enc.matrix)?,
            None => enc.matrix,
        };
        Ok(Features { matrix, unseen: enc.unseen })
    }

    pub fn score(&self, ds: &LabeledDataset) -> Result<(Features<T>, Vec<T>)> {
        let f = self.features(&ds.to_matrix())?;
        let errors = self.autoencoder.reconstruction_errors(&f.matrix)?;
        Ok((f, errors))
    }
}

#[derive(Debug, Clone)]
pub struct Fit<T> {
    pub pipeline: TrainedPipeline<T>,
    pub trace: TrainTrace,
}

fn normal_rows<T: Scalar>(m: &FeatureMatrix<T>, labels: &[Label]) -> FeatureMatrix<T> {
    let idx: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == Label::Normal)
        .map(|(i, _)| i)
        .collect();
    m.select_rows(&idx)
}

/// Fits `plan` (and PCA when given) on the training split, trains the
/// autoencoder on its normal rows and calibrates the threshold on the
/// validation split.
pub fn fit_pipeline<T: Scalar>(
    label: &str,
    plan: &PreprocessPlan,
    pca: Option<PcaSettings>,
    splits: &Splits,
    settings: &Settings,
) -> Result<Fit<T>> {
    let (fitted_plan, encoded) = plan.fit_apply(&splits.train.to_matrix::<T>())?;
    let (pca_model, inputs) = match pca {
        None => (None, encoded),
        Some(s) => {
            let full = encoded.n_cols().min(encoded.n_rows().saturating_sub(1));
            let model = match s {
                PcaSettings::Components(k) => fit_pca(&encoded, k)?,
                PcaSettings::TargetVariance(target) => {
                    if !(target > 0.0 && target <= 1.0) {
                        return Err(Error::InvalidArgument(format!(
                            "target variance {target} must be in (0, 1]"
                        )));
                    }
                    let all = fit_pca(&encoded, full)?;
                    let k = select_components(&all, target);
                    all.truncate(k)?
                }
            };
            let projected = model.transform(&encoded)?;
            (Some(model), projected)
        }
    };
    let normal = normal_rows(&inputs, splits.train.labels());
    if normal.n_rows() == 0 {
        return Err(Error::InvalidArgument("training split has no normal rows".into()));
    }
    let cfg = &settings.train;
    let init = init_model::<T>(inputs.n_cols(), &cfg.hidden_widths, cfg.latent_dim, cfg.seed)?;
    let (autoencoder, trace) = train(&init, &normal, cfg)?;

    let mut pipeline = TrainedPipeline {
        pipeline: label.to_string(),
        plan: plan.clone(),
        fitted_plan,
        pca: pca_model,
        autoencoder,
        threshold: ThresholdModel { threshold: T::zero(), method: settings.threshold, calibration_size: 0 },
        train_config: cfg.clone(),
    };
    let (_, val_errors) = pipeline.score(&splits.val)?;
    pipeline.threshold = calibrate_threshold(&val_errors, splits.val.labels(), settings.threshold)?;
    Ok(Fit { pipeline, trace })
}

#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub errors: Vec<T>,
    pub predictions: Vec<Label>,
    pub report: EvaluationReport,
    pub histogram: ErrorHistogram<T>,
}

pub fn evaluate_pipeline<T: Scalar>(
    p: &TrainedPipeline<T>,
    test: &LabeledDataset,
    histogram_bins: usize,
) -> Result<Evaluation<T>> {
    let (features, errors) = p.score(test)?;
    let predictions = classify(&errors, &p.threshold);
    let mut report = evaluate(&predictions, test.labels())?;
    if features.unseen > 0 {
        report.warnings.push(format!(
            "{} categorical values in the evaluated rows were not seen during fitting",
            features.unseen
        ));
    }
    if test.count(Label::Normal) == 0 || test.count(Label::Attack) == 0 {
        report.warnings.push("evaluated rows contain a single class".into());
    }
    let histogram = export_error_histogram(&errors, test.labels(), histogram_bins)?;
    Ok(Evaluation { errors, predictions, report, histogram })
}

/// Result of one complete pipeline run.
#[derive(Debug, Clone)]
pub struct Run<T> {
    pub fit: Fit<T>,
    pub evaluation: Evaluation<T>,
    pub stats: Option<FeatureStats>,
    pub advice: Option<Advice>,
}

/// Builds the plan for `spec` from the training split.
pub fn plan_for(spec: &PipelineSpec, splits: &Splits, llm: Option<Llm<'_>>) -> Result<(PreprocessPlan, Option<FeatureStats>, Option<Advice>)> {
    match spec {
        PipelineSpec::Pca { .. } => Ok((traditional_plan(splits.train.schema()), None, None)),
        PipelineSpec::Advisor { mode, thresholds } => {
            let stats = advisor_stats(&splits.train)?;
            let advice = advise(&stats, *mode, thresholds, llm)?;
            Ok((advice.plan.clone(), Some(stats), Some(advice)))
        }
    }
}

pub fn run_pipeline<T: Scalar>(
    spec: &PipelineSpec,
    splits: &Splits,
    settings: &Settings,
    llm: Option<Llm<'_>>,
) -> Result<Run<T>> {
    let (plan, stats, advice) = plan_for(spec, splits, llm)?;
    let pca = match spec {
        PipelineSpec::Pca { pca } => Some(*pca),
        PipelineSpec::Advisor { .. } => None,
    };
    let fit = fit_pipeline::<T>(spec.label(), &plan, pca, splits, settings)?;
    let evaluation = evaluate_pipeline(&fit.pipeline, &splits.test, settings.histogram_bins)?;
    Ok(Run { fit, evaluation, stats, advice })
}

/// Cases for the rows flagged as attacks, highest error first, at most
/// `max_cases` of them.
pub fn anomaly_cases<T: Scalar>(
    p: &TrainedPipeline<T>,
    rows: &LabeledDataset,
    eval: &Evaluation<T>,
    top_k: usize,
    max_cases: usize,
) -> Result<Vec<AnomalyCase>> {
    let features = p.features(&rows.to_matrix())?.matrix;
    let mut flagged: Vec<usize> = (0..eval.predictions.len())
        .filter(|&i| eval.predictions[i] == Label::Attack)
        .collect();
    flagged.sort_by(|&a, &b| {
        eval.errors[b]
            .partial_cmp(&eval.errors[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    flagged.truncate(max_cases);
    flagged
        .into_iter()
        .map(|i| {
            let x = features.row(i);
            let x_hat = p.autoencoder.reconstruct(x)?;
            Ok(extract_case(rows.row_ids()[i], features.column_names(), x, &x_hat, eval.errors[i], top_k))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::synthetic_kddcup;

    fn quick() -> Settings {
        Settings {
            train: TrainConfig { epochs: 2, batch_size: 64, hidden_widths: vec![8], latent_dim: 4, ..TrainConfig::default() },
            ..Settings::default()
        }
    }

    #[test]
    fn traditional_plan_shape() {
        let plan = traditional_plan(&DatasetSchema::kddcup());
        assert_eq!(plan.steps.len(), 4);
        assert_eq!(plan.steps[0], TransformStep::OneHot { column: "protocol_type".into() });
        match &plan.steps[3] {
            TransformStep::MinMax { columns } => {
                assert_eq!(columns.len(), 41 - 3 - 5);
                assert!(!columns.contains(&"land".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn both_pipelines_run_and_are_deterministic() {
        let ds = synthetic_kddcup(1500, 1).unwrap();
        let splits = Splits::new(&ds, (0.7, 0.15, 0.15), 4).unwrap();
        for spec in [
            PipelineSpec::Pca { pca: PcaSettings::Components(10) },
            PipelineSpec::Advisor { mode: AdvisorMode::Heuristic, thresholds: AdvisorThresholds::default() },
        ] {
            let a = run_pipeline::<f64>(&spec, &splits, &quick(), None).unwrap();
            let b = run_pipeline::<f64>(&spec, &splits, &quick(), None).unwrap();
            assert_eq!(a.fit.pipeline, b.fit.pipeline);
            assert_eq!(a.evaluation.report, b.evaluation.report);
            assert_eq!(a.evaluation.report.rows, splits.test.len());
            assert_eq!(a.fit.pipeline.pipeline, spec.label());
        }
    }

    #[test]
    fn target_variance_picks_enough_components() {
        let ds = synthetic_kddcup(800, 2).unwrap();
        let splits = Splits::new(&ds, (0.7, 0.15, 0.15), 4).unwrap();
        let plan = traditional_plan(ds.schema());
        let mut settings = quick();
        settings.train.latent_dim = 1;
        let fit = fit_pipeline::<f64>("pca", &plan, Some(PcaSettings::TargetVariance(0.9)), &splits, &settings).unwrap();
        let pca = fit.pipeline.pca.unwrap();
        assert!(*pca.cumulative_ratio().last().unwrap() >= 0.9 - 1e-12);
    }

    #[test]
    fn llm_mode_without_endpoint_is_config_error() {
        let ds = synthetic_kddcup(300, 2).unwrap();
        let splits = Splits::new(&ds, (0.7, 0.15, 0.15), 4).unwrap();
        let spec = PipelineSpec::Advisor { mode: AdvisorMode::Llm, thresholds: AdvisorThresholds::default() };
        let err = plan_for(&spec, &splits, None).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Config);
    }

    #[test]
    fn llm_garbage_falls_back_to_heuristic() {
        use crate::llm::ScriptedTransport;
        let ds = synthetic_kddcup(300, 2).unwrap();
        let splits = Splits::new(&ds, (0.7, 0.15, 0.15), 4).unwrap();
        let cfg = GatewayConfig::for_fixtures();
        let t = ScriptedTransport::statuses(&[200], "I suggest dropping things");
        let stats = advisor_stats(&splits.train).unwrap();
        let advice = advise(&stats, AdvisorMode::Llm, &AdvisorThresholds::default(), Some(Llm { config: &cfg, transport: &t })).unwrap();
        assert!(advice.fallback.is_some());
        assert_eq!(advice.plan, heuristic_advise(&stats, &AdvisorThresholds::default()));
    }

    #[test]
    fn cases_only_for_flagged_rows() {
        let ds = synthetic_kddcup(1000, 5).unwrap();
        let splits = Splits::new(&ds, (0.7, 0.15, 0.15), 4).unwrap();
        let spec = PipelineSpec::Advisor { mode: AdvisorMode::Heuristic, thresholds: AdvisorThresholds::default() };
        let run = run_pipeline::<f64>(&spec, &splits, &quick(), None).unwrap();
        let cases = anomaly_cases(&run.fit.pipeline, &splits.test, &run.evaluation, 4, 5).unwrap();
        let flagged = run.evaluation.predictions.iter().filter(|l| **l == Label::Attack).count();
        assert_eq!(cases.len(), flagged.min(5));
        assert!(cases.windows(2).all(|w| w[0].reconstruction_error >= w[1].reconstruction_error));
        assert!(cases.iter().all(|c| c.reconstruction_error > run.fit.pipeline.threshold.threshold));
    }
}
