//! Principal component analysis via the sample covariance matrix.

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureKind;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::transforms::FeatureMatrix;
use crate::Scalar;

/// Fitted projection. `components` is `k x n`, row-major, rows orthonormal
/// and ordered by descending eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel<T> {
    pub input_columns: Vec<String>,
    pub mean: Vec<T>,
    pub components: Vec<T>,
    pub explained_variance: Vec<T>,
    pub explained_ratio: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn component(&self, k: usize) -> &[T] {
        let n = self.n_features();
        &self.components[k * n..(k + 1) * n]
    }

    pub fn cumulative_ratio(&self) -> Vec<T> {
        self.explained_ratio
            .iter()
            .scan(T::zero(), |acc, r| {
                *acc += *r;
                Some(*acc)
            })
            .collect()
    }

    /// Keeps the leading `k` components.
    pub fn truncate(&self, k: usize) -> Result<PcaModel<T>> {
        if k == 0 || k > self.n_components() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {k} of {} components",
                self.n_components()
            )));
        }
        Ok(PcaModel {
            input_columns: self.input_columns.clone(),
            mean: self.mean.clone(),
            components: self.components[..k * self.n_features()].to_vec(),
            explained_variance: self.explained_variance[..k].to_vec(),
            explained_ratio: self.explained_ratio[..k].to_vec(),
        })
    }

    /// `(m - mean) . components^T`, columns named `pc1..pck`.
    pub fn transform(&self, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        let n = self.n_features();
        if m.n_cols() != n {
            return Err(Error::Dimension {
                expected: n,
                found: m.n_cols(),
            });
        }
        let k = self.n_components();
        let mut values = Vec::with_capacity(m.n_rows() * k);
        let mut centered = vec![T::zero(); n];
        for row in m.rows_iter() {
            for ((c, x), mu) in centered.iter_mut().zip(row).zip(&self.mean) {
                *c = *x - *mu;
            }
            for comp in self.components.chunks(n) {
                values.push(comp.iter().zip(&centered).map(|(a, b)| *a * *b).sum());
            }
        }
        let names = (1..=k).map(|i| format!("pc{i}")).collect();
        FeatureMatrix::new(names, vec![FeatureKind::Continuous; k], values, m.n_rows())
    }

    /// Maps projected rows back to the input space.
    pub fn inverse_transform(&self, p: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        let k = self.n_components();
        if p.n_cols() != k {
            return Err(Error::Dimension {
                expected: k,
                found: p.n_cols(),
            });
        }
        let n = self.n_features();
        let mut values = Vec::with_capacity(p.n_rows() * n);
        for row in p.rows_iter() {
            for j in 0..n {
                let mut v = self.mean[j];
                for (c, score) in row.iter().enumerate() {
                    v += *score * self.components[c * n + j];
                }
                values.push(v);
            }
        }
        FeatureMatrix::new(
            self.input_columns.clone(),
            vec![FeatureKind::Continuous; n],
            values,
            p.n_rows(),
        )
    }
}

/// Fits the top-`k` principal components of `m`.
pub fn fit_pca<T: Scalar>(m: &FeatureMatrix<T>, k: usize) -> Result<PcaModel<T>> {
    let rows = m.n_rows();
    let n = m.n_cols();
    if rows < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {rows}")));
    }
    if k == 0 || k > n.min(rows - 1) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={} for a {rows} x {n} matrix",
            n.min(rows - 1)
        )));
    }
    if m.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("PCA input contains non-finite values".into()));
    }

    let count = T::of_usize(rows);
    let mut mean = vec![T::zero(); n];
    for row in m.rows_iter() {
        for (mu, x) in mean.iter_mut().zip(row) {
            *mu += *x;
        }
    }
    for mu in &mut mean {
        *mu /= count;
    }

    // Upper triangle of the sample covariance, mirrored afterwards.
    let mut cov = vec![T::zero(); n * n];
    let mut centered = vec![T::zero(); n];
    for row in m.rows_iter() {
        for ((c, x), mu) in centered.iter_mut().zip(row).zip(&mean) {
            *c = *x - *mu;
        }
        for i in 0..n {
            let ci = centered[i];
            if ci == T::zero() {
                continue;
            }
            let out = &mut cov[i * n..(i + 1) * n];
            for j in i..n {
                out[j] += ci * centered[j];
            }
        }
    }
    let denom = T::of_usize(rows - 1);
    for i in 0..n {
        for j in i..n {
            let v = cov[i * n + j] / denom;
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
    }
    let total: T = (0..n).map(|i| cov[i * n + i]).sum();

    let eig = symmetric_eigen(&cov, n)?;
    let mut components = Vec::with_capacity(k * n);
    let mut explained_variance = Vec::with_capacity(k);
    let mut explained_ratio = Vec::with_capacity(k);
    for (value, mut vector) in eig.values.into_iter().zip(eig.vectors).take(k) {
        // sign convention: largest-magnitude entry positive (first one on ties)
        let pivot = vector
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > vector[best].abs() { i } else { best });
        if vector[pivot] < T::zero() {
            vector.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(vector);
        let value = value.max(T::zero());
        explained_variance.push(value);
        let ratio = if total > T::zero() { value / total } else { T::zero() };
        explained_ratio.push(ratio.min(T::one()));
    }
    Ok(PcaModel {
        input_columns: m.column_names().to_vec(),
        mean,
        components,
        explained_variance,
        explained_ratio,
    })
}

pub fn transform_pca<T: Scalar>(m: &FeatureMatrix<T>, p: &PcaModel<T>) -> Result<FeatureMatrix<T>> {
    p.transform(m)
}

/// Smallest number of leading components whose cumulative explained ratio
/// reaches `target`. Falls back to all components when round-off keeps the
/// total just under the target.
pub fn select_components<T: Scalar>(p: &PcaModel<T>, target: f64) -> usize {
    let target = T::of(target);
    p.cumulative_ratio()
        .iter()
        .position(|c| *c >= target)
        .map(|i| i + 1)
        .unwrap_or(p.n_components())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn mat(rows: &[[f64; 2]]) -> FeatureMatrix<f64> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        FeatureMatrix::from_rows(&["x", "y"], &rows).unwrap()
    }

    #[test]
    fn line_y_equals_x() {
        // covariance [[1,1],[1,1]]: eigenvalues 2 and 0, top vector (1,1)/sqrt2
        let m = mat(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let p = fit_pca(&m, 1).unwrap();
        assert!((p.component(0)[0] - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((p.component(0)[1] - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
        assert_eq!(p.mean, vec![2.0, 2.0]);

        let t = p.transform(&mat(&[[2.0, 2.0], [3.0, 3.0]])).unwrap();
        assert!(t.get(0, 0).abs() < 1e-12);
        assert!((t.get(1, 0) - SQRT_2).abs() < 1e-12);
        assert_eq!(t.column_names(), ["pc1"]);
    }

    #[test]
    fn axis_aligned_ratios() {
        // sample variances 8/3 and 2/3 -> ratios 0.8 and 0.2
        let m = mat(&[[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]]);
        let p = fit_pca(&m, 2).unwrap();
        assert!((p.explained_ratio[0] - 0.8).abs() < 1e-12);
        assert!((p.explained_ratio[1] - 0.2).abs() < 1e-12);
        assert!((p.explained_variance[0] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_row_projects_to_zero() {
        let m = mat(&[[1.0, 5.0], [2.0, 3.0], [4.0, 4.0], [0.0, 1.0]]);
        let p = fit_pca(&m, 2).unwrap();
        let t = p.transform(&mat(&[[p.mean[0], p.mean[1]]])).unwrap();
        assert!(t.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn out_of_range_k() {
        let m = mat(&[[1.0, 1.0], [2.0, 3.0], [3.0, 1.0]]);
        assert!(fit_pca(&m, 0).is_err());
        assert!(fit_pca(&m, 3).is_err());
        assert!(fit_pca(&mat(&[[1.0, 1.0]]), 1).is_err());
        let p = fit_pca(&m, 1).unwrap();
        let wide = FeatureMatrix::from_rows(&["a"], &[vec![1.0]]).unwrap();
        assert!(p.transform(&wide).is_err());
    }

    #[test]
    fn component_selection() {
        let p = PcaModel::<f64> {
            input_columns: vec![],
            mean: vec![0.0; 3],
            components: vec![0.0; 9],
            explained_variance: vec![5.0, 3.0, 2.0],
            explained_ratio: vec![0.5, 0.3, 0.2],
        };
        assert_eq!(select_components(&p, 0.95), 3);
        assert_eq!(select_components(&p, 0.5), 1);
        assert_eq!(select_components(&p, 1.0), 3);
        let two = PcaModel::<f64> {
            explained_ratio: vec![0.8, 0.2],
            explained_variance: vec![4.0, 1.0],
            mean: vec![0.0; 2],
            components: vec![0.0; 4],
            input_columns: vec![],
        };
        assert_eq!(select_components(&two, 0.8), 1);
    }

    #[test]
    fn single_precision_fit() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let m = FeatureMatrix::from_rows(&["x", "y"], &rows).unwrap();
        let p = fit_pca(&m, 1).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-6);
        assert!((p.component(0)[0] - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }
}
