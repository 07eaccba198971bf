//! Feature matrices, Min-Max scaling, one-hot encoding and the declarative
//! preprocessing plan shared by every pipeline.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureKind, LabeledDataset};
use crate::error::{Error, Result};
use crate::Scalar;

/// Row-major numeric table with named, typed columns.
///
type Column<T> = (String, FeatureKind, Vec<T>);

/// Categorical columns hold vocabulary indices; their vocabulary travels in
/// `vocabularies` so that one-hot steps can be fitted from the matrix alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix<T> {
    column_names: Vec<String>,
    kinds: Vec<FeatureKind>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    vocabularies: BTreeMap<String, Vec<String>>,
    rows: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(
        column_names: Vec<String>,
        kinds: Vec<FeatureKind>,
        values: Vec<T>,
        rows: usize,
    ) -> Result<Self> {
        let cols = column_names.len();
        if kinds.len() != cols {
            return Err(Error::Dimension {
                expected: cols,
                found: kinds.len(),
            });
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry at row {}, column `{}`",
                pos / cols.max(1),
                column_names[pos % cols.max(1)]
            )));
        }
        let mut seen = HashSet::new();
        for n in &column_names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate column `{n}`")));
            }
        }
        Ok(FeatureMatrix {
            column_names,
            kinds,
            vocabularies: BTreeMap::new(),
            rows,
            values,
        })
    }

    /// All-continuous matrix from row slices.
    pub fn from_rows(column_names: &[&str], rows: &[Vec<T>]) -> Result<Self> {
        let names: Vec<String> = column_names.iter().map(|s| s.to_string()).collect();
        let mut values = Vec::with_capacity(rows.len() * names.len());
        for r in rows {
            if r.len() != names.len() {
                return Err(Error::Dimension {
                    expected: names.len(),
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        let kinds = vec![FeatureKind::Continuous; names.len()];
        FeatureMatrix::new(names, kinds, values, rows.len())
    }

    pub fn with_vocabularies(mut self, vocabularies: BTreeMap<String, Vec<String>>) -> Self {
        self.vocabularies = vocabularies
            .into_iter()
            .filter(|(k, _)| self.column_names.contains(k))
            .collect();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn vocabulary(&self, column: &str) -> Option<&[String]> {
        self.vocabularies.get(column).map(Vec::as_slice)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks() panics on zero width
        let w = self.n_cols().max(1);
        self.values.chunks(w).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix<T> {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            column_names: self.column_names.clone(),
            kinds: self.kinds.clone(),
            vocabularies: self.vocabularies.clone(),
            rows: indices.len(),
            values,
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            column_names: self.column_names.clone(),
            kinds: self.kinds.clone(),
            vocabularies: self.vocabularies.clone(),
            rows: self.rows,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column_index(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Rebuilds the matrix from per-column blocks. Each block is a list of
    /// (name, kind, column values).
    fn from_columns(rows: usize, blocks: Vec<(String, FeatureKind, Vec<T>)>) -> Self {
        let cols = blocks.len();
        let mut values = vec![T::zero(); rows * cols];
        let mut column_names = Vec::with_capacity(cols);
        let mut kinds = Vec::with_capacity(cols);
        for (j, (name, kind, col)) in blocks.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                values[i * cols + j] = v;
            }
            column_names.push(name);
            kinds.push(kind);
        }
        FeatureMatrix {
            column_names,
            kinds,
            vocabularies: BTreeMap::new(),
            rows,
            values,
        }
    }

    fn into_columns(self) -> (Vec<Column<T>>, BTreeMap<String, Vec<String>>) {
        let cols: Vec<Vec<T>> = (0..self.n_cols()).map(|j| self.column(j)).collect();
        let blocks = self
            .column_names
            .into_iter()
            .zip(self.kinds)
            .zip(cols)
            .map(|((n, k), c)| (n, k, c))
            .collect();
        (blocks, self.vocabularies)
    }
}

/// Per-column observed range; `apply` maps each value to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler<T> {
    pub columns: Vec<String>,
    pub mins: Vec<T>,
    pub maxs: Vec<T>,
}

impl<T: Scalar> MinMaxScaler<T> {
    pub fn fit(m: &FeatureMatrix<T>, columns: &[String]) -> Result<Self> {
        if m.n_rows() == 0 {
            return Err(Error::InvalidArgument(
                "cannot fit min-max scaling on an empty matrix".into(),
            ));
        }
        let mut mins = Vec::with_capacity(columns.len());
        let mut maxs = Vec::with_capacity(columns.len());
        for c in columns {
            let j = m.require(c)?;
            let (lo, hi) = m
                .rows_iter()
                .map(|r| r[j])
                .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            mins.push(lo);
            maxs.push(hi);
        }
        Ok(MinMaxScaler {
            columns: columns.to_vec(),
            mins,
            maxs,
        })
    }

    /// `(v - min) / (max - min)` clipped to `[0, 1]`; constant columns map to 0.
    pub fn scale_value(&self, k: usize, v: T) -> T {
        let (lo, hi) = (self.mins[k], self.maxs[k]);
        if hi <= lo {
            return T::zero();
        }
        ((v - lo) / (hi - lo)).max(T::zero()).min(T::one())
    }

    pub fn apply(&self, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        let idx: Vec<usize> = self
            .columns
            .iter()
            .map(|c| m.require(c))
            .collect::<Result<_>>()?;
        let mut out = m.clone();
        let w = out.n_cols();
        for row in out.values.chunks_mut(w.max(1)) {
            for (k, &j) in idx.iter().enumerate() {
                row[j] = self.scale_value(k, row[j]);
            }
        }
        Ok(out)
    }
}

pub fn fit_minmax<T: Scalar>(m: &FeatureMatrix<T>, columns: &[String]) -> Result<MinMaxScaler<T>> {
    MinMaxScaler::fit(m, columns)
}

pub fn apply_minmax<T: Scalar>(m: &FeatureMatrix<T>, s: &MinMaxScaler<T>) -> Result<FeatureMatrix<T>> {
    s.apply(m)
}

/// Vocabulary of one categorical column, expanded to `<col>_<category>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEncoding {
    pub column: String,
    pub categories: Vec<String>,
}

impl CategoryEncoding {
    pub fn output_names(&self) -> Vec<String> {
        self.categories
            .iter()
            .map(|c| format!("{}_{}", self.column, c))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub columns: Vec<CategoryEncoding>,
}

/// Output of one-hot application: the matrix plus how many values fell
/// outside the fitted vocabulary (and were encoded as all zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded<T> {
    pub matrix: FeatureMatrix<T>,
    pub unseen: usize,
}

impl OneHotEncoder {
    /// Covers every categorical schema column with its full vocabulary.
    pub fn fit(ds: &LabeledDataset) -> Self {
        let schema = ds.schema();
        let columns = schema
            .columns()
            .iter()
            .filter(|c| c.kind == FeatureKind::Categorical)
            .map(|c| CategoryEncoding {
                column: c.name.clone(),
                categories: schema.vocabulary(&c.name).unwrap_or_default().to_vec(),
            })
            .collect();
        OneHotEncoder { columns }
    }

    pub fn fit_matrix<T: Scalar>(m: &FeatureMatrix<T>) -> Self {
        let columns = m
            .column_names()
            .iter()
            .zip(m.kinds())
            .filter(|(_, k)| **k == FeatureKind::Categorical)
            .map(|(c, _)| CategoryEncoding {
                column: c.clone(),
                categories: m.vocabulary(c).unwrap_or_default().to_vec(),
            })
            .collect();
        OneHotEncoder { columns }
    }

    pub fn output_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(|c| c.output_names()).collect()
    }

    pub fn encode<T: Scalar>(&self, ds: &LabeledDataset) -> Result<Encoded<T>> {
        self.apply(&ds.to_matrix())
    }

    /// Expands each encoded column in place; other columns pass through.
    pub fn apply<T: Scalar>(&self, m: &FeatureMatrix<T>) -> Result<Encoded<T>> {
        let mut current = m.clone();
        let mut unseen = 0;
        for enc in &self.columns {
            let (next, miss) = expand_one_hot(current, enc)?;
            current = next;
            unseen += miss;
        }
        Ok(Encoded {
            matrix: current,
            unseen,
        })
    }
}

pub fn fit_onehot(ds: &LabeledDataset) -> OneHotEncoder {
    OneHotEncoder::fit(ds)
}

pub fn apply_onehot<T: Scalar>(ds: &LabeledDataset, enc: &OneHotEncoder) -> Result<Encoded<T>> {
    enc.encode(ds)
}

fn expand_one_hot<T: Scalar>(
    m: FeatureMatrix<T>,
    enc: &CategoryEncoding,
) -> Result<(FeatureMatrix<T>, usize)> {
    let j = m.require(&enc.column)?;
    // Map the matrix's own vocabulary indices onto the fitted categories.
    let source_vocab = m.vocabulary(&enc.column).map(<[String]>::to_vec);
    let position: HashMap<&str, usize> = enc
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let rows = m.n_rows();
    let (blocks, mut vocabs) = m.into_columns();
    let mut unseen = 0;
    let mut out = Vec::with_capacity(blocks.len() + enc.categories.len());
    for (k, block) in blocks.into_iter().enumerate() {
        if k != j {
            out.push(block);
            continue;
        }
        let mut indicator = vec![vec![T::zero(); rows]; enc.categories.len()];
        for (i, v) in block.2.iter().enumerate() {
            let slot = source_vocab.as_ref().and_then(|voc| {
                let raw = v.to_usize()?;
                if T::of_usize(raw) != *v {
                    return None;
                }
                position.get(voc.get(raw)?.as_str()).copied()
            });
            match slot {
                Some(s) => indicator[s][i] = T::one(),
                None => unseen += 1,
            }
        }
        for (name, col) in enc.output_names().into_iter().zip(indicator) {
            out.push((name, FeatureKind::Binary, col));
        }
    }
    vocabs.remove(&enc.column);
    let matrix = FeatureMatrix::from_columns(rows, out).with_vocabularies(vocabs);
    ensure_unique(&matrix)?;
    Ok((matrix, unseen))
}

fn ensure_unique<T: Scalar>(m: &FeatureMatrix<T>) -> Result<()> {
    let mut seen = HashSet::new();
    for n in m.column_names() {
        if !seen.insert(n.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate column `{n}`")));
        }
    }
    Ok(())
}

fn default_threshold() -> f64 {
    0.0
}

/// One declarative preprocessing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformStep {
    Drop {
        column: String,
    },
    Binarize {
        column: String,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    MergeAverage {
        columns: Vec<String>,
        new_name: String,
    },
    OneHot {
        column: String,
    },
    MinMax {
        columns: Vec<String>,
    },
}

impl TransformStep {
    pub const OPS: [&'static str; 5] = ["drop", "binarize", "merge_average", "one_hot", "min_max"];

    pub fn op_name(&self) -> &'static str {
        match self {
            TransformStep::Drop { .. } => "drop",
            TransformStep::Binarize { .. } => "binarize",
            TransformStep::MergeAverage { .. } => "merge_average",
            TransformStep::OneHot { .. } => "one_hot",
            TransformStep::MinMax { .. } => "min_max",
        }
    }

    pub fn referenced_columns(&self) -> Vec<&str> {
        match self {
            TransformStep::Drop { column }
            | TransformStep::Binarize { column, .. }
            | TransformStep::OneHot { column } => vec![column.as_str()],
            TransformStep::MergeAverage { columns, .. } | TransformStep::MinMax { columns } => {
                columns.iter().map(String::as_str).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Heuristic,
    Llm,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessPlan {
    pub steps: Vec<TransformStep>,
    pub provenance: Provenance,
}

impl PreprocessPlan {
    pub fn new(steps: Vec<TransformStep>, provenance: Provenance) -> Self {
        PreprocessPlan { steps, provenance }
    }

    pub fn empty(provenance: Provenance) -> Self {
        PreprocessPlan::new(Vec::new(), provenance)
    }

    /// Concatenation: `self` then `other`.
    pub fn then(&self, other: &PreprocessPlan) -> PreprocessPlan {
        let mut steps = self.steps.clone();
        steps.extend(other.steps.iter().cloned());
        PreprocessPlan::new(steps, self.provenance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Walks the steps symbolically over `columns` (name, kind) and reports
    /// the first step that references a missing column or misuses one.
    /// `vocabularies` gives the categories of categorical columns so that
    /// later steps may reference one-hot outputs by name.
    pub fn validate(
        &self,
        columns: &[(String, FeatureKind)],
        vocabularies: &BTreeMap<String, Vec<String>>,
    ) -> Result<Vec<(String, FeatureKind)>> {
        let mut cols: Vec<(String, FeatureKind)> = columns.to_vec();
        for (step, s) in self.steps.iter().enumerate() {
            let find = |cols: &[(String, FeatureKind)], c: &str| {
                cols.iter().position(|(n, _)| n == c).ok_or_else(|| Error::PlanStep {
                    step,
                    column: c.to_string(),
                    reason: "no such column at this point of the plan".into(),
                })
            };
            match s {
                TransformStep::Drop { column } => {
                    let j = find(&cols, column)?;
                    cols.remove(j);
                }
                TransformStep::Binarize { column, threshold } => {
                    let j = find(&cols, column)?;
                    check_numeric(step, &cols[j])?;
                    if !threshold.is_finite() {
                        return Err(step_err(step, column, "threshold must be finite"));
                    }
                    cols[j].1 = FeatureKind::Binary;
                }
                TransformStep::MergeAverage { columns: inputs, new_name } => {
                    check_merge(step, inputs, new_name)?;
                    let mut first = usize::MAX;
                    for c in inputs {
                        let j = find(&cols, c)?;
                        check_numeric(step, &cols[j])?;
                        first = first.min(j);
                    }
                    let name_at = first;
                    cols.retain(|(n, _)| !inputs.contains(n));
                    if cols.iter().any(|(n, _)| n == new_name) {
                        return Err(step_err(step, new_name, "merged name collides with a column"));
                    }
                    let at = name_at.min(cols.len());
                    cols.insert(at, (new_name.clone(), FeatureKind::Continuous));
                }
                TransformStep::OneHot { column } => {
                    let j = find(&cols, column)?;
                    if cols[j].1 != FeatureKind::Categorical {
                        return Err(step_err(step, column, "one_hot needs a categorical column"));
                    }
                    cols.remove(j);
                    let categories = vocabularies.get(column).cloned().unwrap_or_default();
                    for (k, c) in categories.iter().enumerate() {
                        cols.insert(j + k, (format!("{column}_{c}"), FeatureKind::Binary));
                    }
                }
                TransformStep::MinMax { columns: inputs } => {
                    for c in inputs {
                        let j = find(&cols, c)?;
                        check_numeric(step, &cols[j])?;
                    }
                }
            }
        }
        Ok(cols)
    }

    /// Fits step parameters on `m` (min/max ranges, vocabularies) while
    /// applying the steps in order. Returns the fitted plan and the
    /// transformed training matrix.
    pub fn fit_apply<T: Scalar>(&self, m: &FeatureMatrix<T>) -> Result<(FittedPlan<T>, FeatureMatrix<T>)> {
        let mut current = m.clone();
        let mut fitted = Vec::with_capacity(self.steps.len());
        for (step, s) in self.steps.iter().enumerate() {
            let f = match s {
                TransformStep::Drop { column } => FittedStep::Drop {
                    column: column.clone(),
                },
                TransformStep::Binarize { column, threshold } => FittedStep::Binarize {
                    column: column.clone(),
                    threshold: T::of(*threshold),
                },
                TransformStep::MergeAverage { columns, new_name } => {
                    check_merge(step, columns, new_name)?;
                    FittedStep::MergeAverage {
                        columns: columns.clone(),
                        new_name: new_name.clone(),
                    }
                }
                TransformStep::OneHot { column } => {
                    let j = current.column_index(column).ok_or_else(|| missing(step, column))?;
                    if current.kinds()[j] != FeatureKind::Categorical {
                        return Err(step_err(step, column, "one_hot needs a categorical column"));
                    }
                    FittedStep::OneHot(CategoryEncoding {
                        column: column.clone(),
                        categories: current.vocabulary(column).unwrap_or_default().to_vec(),
                    })
                }
                TransformStep::MinMax { columns } => {
                    for c in columns {
                        let j = current.column_index(c).ok_or_else(|| missing(step, c))?;
                        check_numeric(step, &(c.clone(), current.kinds()[j]))?;
                    }
                    let scaler = MinMaxScaler::fit(&current, columns).map_err(|e| match e {
                        Error::UnknownColumn(c) => missing(step, &c),
                        other => other,
                    })?;
                    FittedStep::MinMax(scaler)
                }
            };
            let (next, _) = f.apply(step, current)?;
            current = next;
            fitted.push(f);
        }
        Ok((
            FittedPlan {
                steps: fitted,
                provenance: self.provenance,
            },
            current,
        ))
    }
}

fn missing(step: usize, column: &str) -> Error {
    step_err(step, column, "no such column at this point of the plan")
}

fn step_err(step: usize, column: &str, reason: &str) -> Error {
    Error::PlanStep {
        step,
        column: column.to_string(),
        reason: reason.to_string(),
    }
}

fn check_numeric(step: usize, col: &(String, FeatureKind)) -> Result<()> {
    if col.1 == FeatureKind::Categorical {
        return Err(step_err(step, &col.0, "categorical column must be one_hot encoded first"));
    }
    Ok(())
}

fn check_merge(step: usize, inputs: &[String], new_name: &str) -> Result<()> {
    if inputs.len() < 2 {
        return Err(step_err(
            step,
            inputs.first().map(String::as_str).unwrap_or(new_name),
            "merge_average needs at least two columns",
        ));
    }
    let mut seen = HashSet::new();
    for c in inputs {
        if !seen.insert(c) {
            return Err(step_err(step, c, "listed twice in merge_average"));
        }
    }
    if new_name.is_empty() {
        return Err(step_err(step, new_name, "merge_average needs a new_name"));
    }
    Ok(())
}

/// Applies `plan` to `m`, fitting any step parameters on `m` itself.
pub fn apply_plan<T: Scalar>(m: &FeatureMatrix<T>, plan: &PreprocessPlan) -> Result<FeatureMatrix<T>> {
    plan.fit_apply(m).map(|(_, out)| out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FittedStep<T> {
    Drop {
        column: String,
    },
    Binarize {
        column: String,
        threshold: T,
    },
    MergeAverage {
        columns: Vec<String>,
        new_name: String,
    },
    OneHot(CategoryEncoding),
    MinMax(MinMaxScaler<T>),
}

impl<T: Scalar> FittedStep<T> {
    fn apply(&self, step: usize, m: FeatureMatrix<T>) -> Result<(FeatureMatrix<T>, usize)> {
        match self {
            FittedStep::Drop { column } => {
                let j = m.column_index(column).ok_or_else(|| missing(step, column))?;
                let rows = m.n_rows();
                let (mut blocks, vocabs) = m.into_columns();
                blocks.remove(j);
                Ok((FeatureMatrix::from_columns(rows, blocks).with_vocabularies(vocabs), 0))
            }
            FittedStep::Binarize { column, threshold } => {
                let j = m.column_index(column).ok_or_else(|| missing(step, column))?;
                check_numeric(step, &(column.clone(), m.kinds()[j]))?;
                let mut m = m;
                let w = m.n_cols();
                for row in m.values.chunks_mut(w) {
                    row[j] = if row[j] > *threshold { T::one() } else { T::zero() };
                }
                m.kinds[j] = FeatureKind::Binary;
                Ok((m, 0))
            }
            FittedStep::MergeAverage { columns, new_name } => {
                let idx: Vec<usize> = columns
                    .iter()
                    .map(|c| m.column_index(c).ok_or_else(|| missing(step, c)))
                    .collect::<Result<_>>()?;
                for (c, &j) in columns.iter().zip(&idx) {
                    check_numeric(step, &(c.clone(), m.kinds()[j]))?;
                }
                let rows = m.n_rows();
                let count = T::of_usize(idx.len());
                let mean: Vec<T> = m
                    .rows_iter()
                    .map(|r| idx.iter().map(|&j| r[j]).sum::<T>() / count)
                    .collect();
                let first = *idx.iter().min().expect("non-empty merge");
                let (blocks, vocabs) = m.into_columns();
                let mut out = Vec::with_capacity(blocks.len());
                let mut mean = Some(mean);
                for (k, b) in blocks.into_iter().enumerate() {
                    if k == first {
                        out.push((new_name.clone(), FeatureKind::Continuous, mean.take().unwrap()));
                    }
                    if !idx.contains(&k) {
                        out.push(b);
                    }
                }
                let matrix = FeatureMatrix::from_columns(rows, out).with_vocabularies(vocabs);
                ensure_unique(&matrix).map_err(|_| {
                    step_err(step, new_name, "merged name collides with a column")
                })?;
                Ok((matrix, 0))
            }
            FittedStep::OneHot(enc) => {
                if m.column_index(&enc.column).is_none() {
                    return Err(missing(step, &enc.column));
                }
                expand_one_hot(m, enc)
            }
            FittedStep::MinMax(scaler) => {
                let out = scaler.apply(&m).map_err(|e| match e {
                    Error::UnknownColumn(c) => missing(step, &c),
                    other => other,
                })?;
                Ok((out, 0))
            }
        }
    }
}

/// A plan whose data-dependent parameters were fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPlan<T> {
    pub steps: Vec<FittedStep<T>>,
    pub provenance: Provenance,
}

impl<T: Scalar> FittedPlan<T> {
    /// Applies the fitted steps; also returns the number of categorical
    /// values that were not in a fitted vocabulary.
    pub fn apply(&self, m: &FeatureMatrix<T>) -> Result<Encoded<T>> {
        let mut current = m.clone();
        let mut unseen = 0;
        for (step, s) in self.steps.iter().enumerate() {
            let (next, miss) = s.apply(step, current)?;
            current = next;
            unseen += miss;
        }
        Ok(Encoded {
            matrix: current,
            unseen,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn col_matrix(name: &str, vals: &[f64]) -> FeatureMatrix<f64> {
        let rows: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
        FeatureMatrix::from_rows(&[name], &rows).unwrap()
    }

    fn categorical(vocab: &[&str], idx: &[f64]) -> FeatureMatrix<f64> {
        let m = FeatureMatrix::new(
            names(&["protocol_type", "x"]),
            vec![FeatureKind::Categorical, FeatureKind::Continuous],
            idx.iter().flat_map(|&i| [i, 1.5]).collect(),
            idx.len(),
        )
        .unwrap();
        let mut v = BTreeMap::new();
        v.insert("protocol_type".to_string(), names(vocab));
        m.with_vocabularies(v)
    }

    #[test]
    fn minmax_fit_examples() {
        let s = fit_minmax(&col_matrix("c", &[0.0, 5.0, 10.0]), &names(&["c"])).unwrap();
        assert_eq!((s.mins[0], s.maxs[0]), (0.0, 10.0));
        let s = fit_minmax(&col_matrix("c", &[3.0, 3.0, 3.0]), &names(&["c"])).unwrap();
        assert_eq!((s.mins[0], s.maxs[0]), (3.0, 3.0));
        let s = fit_minmax(&col_matrix("c", &[-1.0, 1.0]), &names(&["c"])).unwrap();
        assert_eq!((s.mins[0], s.maxs[0]), (-1.0, 1.0));
    }

    #[test]
    fn minmax_fit_errors() {
        let empty = col_matrix("c", &[]);
        assert!(fit_minmax(&empty, &names(&["c"])).is_err());
        let m = col_matrix("c", &[1.0]);
        assert!(matches!(
            fit_minmax(&m, &names(&["nope"])),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn minmax_apply_examples() {
        let m = col_matrix("c", &[0.0, 5.0, 10.0]);
        let s = fit_minmax(&m, &names(&["c"])).unwrap();
        assert_eq!(apply_minmax(&m, &s).unwrap().column(0), vec![0.0, 0.5, 1.0]);

        let k = col_matrix("c", &[3.0, 3.0, 3.0]);
        let s = fit_minmax(&k, &names(&["c"])).unwrap();
        assert_eq!(apply_minmax(&k, &s).unwrap().column(0), vec![0.0; 3]);

        let s = fit_minmax(&col_matrix("c", &[0.0, 10.0]), &names(&["c"])).unwrap();
        let out = apply_minmax(&col_matrix("c", &[20.0, -3.0]), &s).unwrap();
        assert_eq!(out.column(0), vec![1.0, 0.0]);

        assert!(apply_minmax(&col_matrix("d", &[1.0]), &s).is_err());
    }

    #[test]
    fn onehot_names_and_values() {
        let m = categorical(&["icmp", "tcp", "udp"], &[1.0, 0.0]);
        let enc = OneHotEncoder::fit_matrix(&m);
        assert_eq!(
            enc.output_names(),
            ["protocol_type_icmp", "protocol_type_tcp", "protocol_type_udp"]
        );
        let out = enc.apply(&m).unwrap();
        assert_eq!(out.unseen, 0);
        assert_eq!(out.matrix.row(0), &[0.0, 1.0, 0.0, 1.5]);
        assert_eq!(out.matrix.row(1), &[1.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn onehot_unseen_category_is_zero_slice() {
        let train = categorical(&["icmp", "tcp", "udp"], &[0.0]);
        let enc = OneHotEncoder::fit_matrix(&train);
        // a test matrix whose vocabulary contains a category the encoder never saw
        let test = categorical(&["tcp", "xyz"], &[1.0, 0.0]);
        let out = enc.apply(&test).unwrap();
        assert_eq!(out.unseen, 1);
        assert_eq!(&out.matrix.row(0)[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&out.matrix.row(1)[..3], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn onehot_without_categoricals_is_empty() {
        let m = col_matrix("c", &[1.0]);
        let enc = OneHotEncoder::fit_matrix(&m);
        assert!(enc.columns.is_empty());
        assert_eq!(enc.apply(&m).unwrap().matrix, m);
    }

    fn five() -> FeatureMatrix<f64> {
        FeatureMatrix::from_rows(
            &["a", "b", "c", "d", "e"],
            &[
                vec![2.0, 4.0, 0.0, 1.0, 9.0],
                vec![1.0, 3.0, 0.2, 2.0, 8.0],
                vec![0.0, 1.0, 0.0, 3.0, 7.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn plan_drop_binarize_merge() {
        let m = five();
        let drop = PreprocessPlan::new(vec![TransformStep::Drop { column: "c".into() }], Provenance::Manual);
        let out = apply_plan(&m, &drop).unwrap();
        assert_eq!(out.column_names(), names(&["a", "b", "d", "e"]).as_slice());
        assert_eq!(out.column(3), m.column(4));

        let bin = PreprocessPlan::new(
            vec![TransformStep::Binarize { column: "c".into(), threshold: 0.0 }],
            Provenance::Manual,
        );
        let out = apply_plan(&m, &bin).unwrap();
        assert_eq!(out.column(2), vec![0.0, 1.0, 0.0]);
        assert_eq!(out.kinds()[2], FeatureKind::Binary);

        let merge = PreprocessPlan::new(
            vec![TransformStep::MergeAverage {
                columns: names(&["a", "b"]),
                new_name: "avg(a,b)".into(),
            }],
            Provenance::Manual,
        );
        let out = apply_plan(&m, &merge).unwrap();
        assert_eq!(out.column_names()[0], "avg(a,b)");
        assert_eq!(out.get(0, 0), 3.0);
        assert_eq!(out.n_cols(), 4);
    }

    #[test]
    fn plan_errors_name_step_and_column() {
        let m = five();
        let plan = PreprocessPlan::new(
            vec![
                TransformStep::Drop { column: "a".into() },
                TransformStep::MinMax { columns: names(&["b", "a"]) },
            ],
            Provenance::Manual,
        );
        match apply_plan(&m, &plan).unwrap_err() {
            Error::PlanStep { step, column, .. } => {
                assert_eq!(step, 1);
                assert_eq!(column, "a");
            }
            e => panic!("{e}"),
        }
        let cols: Vec<_> = m
            .column_names()
            .iter()
            .cloned()
            .zip(m.kinds().iter().copied())
            .collect();
        assert!(plan.validate(&cols, &BTreeMap::new()).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let plan = PreprocessPlan::new(
            vec![
                TransformStep::Drop { column: "a".into() },
                TransformStep::Binarize { column: "b".into(), threshold: 0.0 },
                TransformStep::MergeAverage { columns: names(&["c", "d"]), new_name: "avg(c,d)".into() },
                TransformStep::OneHot { column: "p".into() },
                TransformStep::MinMax { columns: names(&["e"]) },
            ],
            Provenance::Heuristic,
        );
        let json: serde_json::Value = serde_json::to_value(&plan).unwrap();
        assert_eq!(json["provenance"], "heuristic");
        assert_eq!(json["steps"][0], serde_json::json!({"op": "drop", "column": "a"}));
        assert_eq!(json["steps"][2]["op"], "merge_average");
        assert_eq!(json["steps"][3], serde_json::json!({"op": "one_hot", "column": "p"}));
        let parsed: PreprocessPlan = serde_json::from_str(r#"{"steps":[{"op":"binarize","column":"b"}],"provenance":"manual"}"#).unwrap();
        assert_eq!(parsed.steps[0], TransformStep::Binarize { column: "b".into(), threshold: 0.0 });
    }

    #[test]
    fn fitted_plan_reuses_training_ranges() {
        let train = col_matrix("c", &[0.0, 10.0]);
        let plan = PreprocessPlan::new(vec![TransformStep::MinMax { columns: names(&["c"]) }], Provenance::Manual);
        let (fitted, _) = plan.fit_apply(&train).unwrap();
        let out = fitted.apply(&col_matrix("c", &[5.0, 30.0])).unwrap();
        assert_eq!(out.matrix.column(0), vec![0.5, 1.0]);
    }

    #[test]
    fn one_hot_step_on_continuous_is_rejected() {
        let plan = PreprocessPlan::new(vec![TransformStep::OneHot { column: "a".into() }], Provenance::Manual);
        assert!(matches!(apply_plan(&five(), &plan), Err(Error::PlanStep { step: 0, .. })));
    }

    fn arb_matrix() -> impl Strategy<Value = FeatureMatrix<f64>> {
        (1usize..8, 1usize..5).prop_flat_map(|(rows, cols)| {
            prop::collection::vec(-100.0f64..100.0, rows * cols).prop_map(move |vals| {
                let names: Vec<String> = (0..cols).map(|j| format!("f{j}")).collect();
                FeatureMatrix::new(names, vec![FeatureKind::Continuous; cols], vals, rows).unwrap()
            })
        })
    }

    fn arb_plan(cols: usize) -> impl Strategy<Value = PreprocessPlan> {
        prop::collection::vec((0usize..3, 0usize..cols), 0..4).prop_map(move |ops| {
            // always-valid steps: min_max/binarize over original names that are never dropped
            let steps = ops
                .into_iter()
                .map(|(op, j)| match op {
                    0 => TransformStep::MinMax { columns: vec![format!("f{j}")] },
                    1 => TransformStep::Binarize { column: format!("f{j}"), threshold: 0.5 },
                    _ => TransformStep::MinMax { columns: (0..cols).map(|k| format!("f{k}")).collect() },
                })
                .collect();
            PreprocessPlan::new(steps, Provenance::Manual)
        })
    }

    proptest! {
        #[test]
        fn minmax_output_in_unit_interval(m in arb_matrix(), probe in arb_matrix()) {
            let cols = m.column_names().to_vec();
            let s = fit_minmax(&m, &cols).unwrap();
            if probe.n_cols() == m.n_cols() {
                let out = apply_minmax(&probe, &s).unwrap();
                prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            let out = apply_minmax(&m, &s).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn empty_plan_is_identity(m in arb_matrix()) {
            prop_assert_eq!(apply_plan(&m, &PreprocessPlan::empty(Provenance::Manual)).unwrap(), m);
        }

        #[test]
        fn plan_application_is_associative(
            (m, p, q) in arb_matrix().prop_flat_map(|m| {
                let c = m.n_cols();
                (Just(m), arb_plan(c), arb_plan(c))
            })
        ) {
            let stepwise = apply_plan(&apply_plan(&m, &p).unwrap(), &q).unwrap();
            let joined = apply_plan(&m, &p.then(&q)).unwrap();
            prop_assert_eq!(stepwise, joined);
        }

        #[test]
        fn onehot_slices_sum_to_at_most_one(idx in prop::collection::vec(0usize..5, 1..20)) {
            // vocabulary of the encoder covers indices 0..3; 3 and 4 are unseen
            let train = categorical(&["a", "b", "c"], &[0.0]);
            let enc = OneHotEncoder::fit_matrix(&train);
            let test = categorical(&["a", "b", "c", "d", "e"], &idx.iter().map(|&i| i as f64).collect::<Vec<_>>());
            let out = enc.apply(&test).unwrap();
            for (i, &k) in idx.iter().enumerate() {
                let s: f64 = out.matrix.row(i)[..3].iter().sum();
                prop_assert_eq!(s, if k < 3 { 1.0 } else { 0.0 });
            }
            prop_assert_eq!(out.unseen, idx.iter().filter(|&&k| k >= 3).count());
        }
    }
}
