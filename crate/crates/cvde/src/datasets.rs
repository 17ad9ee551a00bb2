//! Synthetic data generators, numeric matrix I/O, PCA projection, and the
//! split/subsample protocol used by the benchmark harness.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{child_rng, rng_from_seed, StreamDomain};

/// Data source description.
#[derive(Clone, Debug)]
pub enum Source {
    Gaussian,
    GaussianMixture,
    File(PathBuf),
}

/// Declarative dataset recipe: generate (or load) `m_train + m_test` rows in
/// dimension `n`, optionally projecting to `pca_dims` principal components.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub source: Source,
    pub n: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub seed: u64,
    pub pca_dims: Option<usize>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_train == 0 || self.m_test == 0 {
            return Err(Error::InvalidParameter("train/test counts must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if let Some(d) = self.pca_dims {
            if d > self.n {
                return Err(Error::InvalidParameter(format!(
                    "pca dims {d} exceed dimension {}",
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Materialize (train, test). File sources are shuffled before the
    /// split; synthetic sources draw train and test from separate streams.
    pub fn realize(&self) -> Result<(Matrix, Matrix)> {
        self.validate()?;
        let (mut train, mut test) = match &self.source {
            Source::Gaussian => (
                gen_gaussian(self.n, self.m_train, child_seed_for(self.seed, 0))?,
                gen_gaussian(self.n, self.m_test, child_seed_for(self.seed, 1))?,
            ),
            Source::GaussianMixture => (
                gen_gaussian_mixture(self.n, self.m_train, child_seed_for(self.seed, 0))?,
                gen_gaussian_mixture(self.n, self.m_test, child_seed_for(self.seed, 1))?,
            ),
            Source::File(path) => {
                let data = load_matrix(path)?;
                if data.cols() != self.n {
                    return Err(Error::DimensionMismatch { expected: self.n, got: data.cols() });
                }
                let need = self.m_train + self.m_test;
                if data.rows() < need {
                    return Err(Error::InvalidParameter(format!(
                        "file has {} rows, need {need}",
                        data.rows()
                    )));
                }
                let mut idx: Vec<usize> = (0..data.rows()).collect();
                idx.shuffle(&mut child_rng(self.seed, StreamDomain::Split, 0));
                let train = data.select_rows(&idx[..self.m_train]);
                let test = data.select_rows(&idx[self.m_train..need]);
                (train, test)
            }
        };
        if let Some(d) = self.pca_dims {
            let t = fit_pca(&train, d)?;
            train = apply_pca(&t, &train)?;
            test = apply_pca(&t, &test)?;
        }
        Ok((train, test))
    }
}

fn child_seed_for(seed: u64, index: u64) -> u64 {
    crate::rng::child_seed(seed, StreamDomain::Data, index)
}

/// `m` rows of i.i.d. standard normal coordinates in dimension `n`.
pub fn gen_gaussian(n: usize, m: usize, seed: u64) -> Result<Matrix> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("empty dataset requested".into()));
    }
    let mut rng = rng_from_seed(seed);
    let data: Vec<f64> = (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Matrix::from_vec(m, n, data))
}

/// How mixture rows are assigned to components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixtureAssignment {
    /// Fair coin per row.
    Random,
    /// Rows alternate 0, 1, 0, 1, ... (deterministic mode for tests).
    Alternating,
}

const MIXTURE_SIGMAS: [f64; 2] = [0.1, 100.0];

fn mixture_mean(component: usize, coord: usize) -> f64 {
    if coord == 0 {
        if component == 0 {
            -0.5
        } else {
            0.5
        }
    } else {
        0.0
    }
}

/// Two-component isotropic Gaussian mixture: means (∓0.5, 0, ..., 0) and
/// standard deviations 0.1 and 100, equal weights.
pub fn gen_gaussian_mixture(n: usize, m: usize, seed: u64) -> Result<Matrix> {
    Ok(gen_gaussian_mixture_with(n, m, seed, MixtureAssignment::Random)?.0)
}

/// Mixture generator that also returns the component label of each row.
pub fn gen_gaussian_mixture_with(
    n: usize,
    m: usize,
    seed: u64,
    assignment: MixtureAssignment,
) -> Result<(Matrix, Vec<u8>)> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("empty dataset requested".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(m * n);
    let mut labels = Vec::with_capacity(m);
    for row in 0..m {
        let component = match assignment {
            MixtureAssignment::Random => usize::from(rng.random::<bool>()),
            MixtureAssignment::Alternating => row % 2,
        };
        labels.push(component as u8);
        let sigma = MIXTURE_SIGMAS[component];
        for coord in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            data.push(mixture_mean(component, coord) + sigma * z);
        }
    }
    Ok((Matrix::from_vec(m, n, data), labels))
}

/// Parse a numeric matrix from text: one row per line, comma or whitespace
/// delimited (detected from the first non-empty line), equal row lengths.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut comma = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let is_comma = *comma.get_or_insert_with(|| trimmed.contains(','));
        let fields: Vec<&str> = if is_comma {
            trimmed.split(',').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: line_num,
                msg: format!("non-numeric field {f:?}"),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    line: line_num,
                    msg: format!("row has {} fields, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("matrix file with no data rows"));
    }
    Matrix::from_rows(&rows)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text)
}

/// Write a matrix as comma-separated rows with 17 significant digits
/// (lossless for f64).
pub fn save_matrix(path: impl AsRef<Path>, data: &Matrix) -> Result<()> {
    std::fs::write(path, format_matrix(data))?;
    Ok(())
}

pub fn format_matrix(data: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..data.rows() {
        let row = data.row(r);
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

/// Mean-centering plus orthonormal projection onto the top principal
/// directions of the sample covariance.
#[derive(Clone, Debug)]
pub struct PcaTransform {
    mean: Vec<f64>,
    basis: Matrix, // pca_dims x n, orthonormal rows
    explained: Vec<f64>,
}

impl PcaTransform {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Eigenvalues of the retained directions, nonincreasing.
    pub fn explained_variances(&self) -> &[f64] {
        &self.explained
    }
}

pub fn fit_pca(data: &Matrix, target_dims: usize) -> Result<PcaTransform> {
    let k = data.rows();
    let n = data.cols();
    if k < 2 {
        return Err(Error::InvalidParameter("need at least 2 rows for a covariance".into()));
    }
    if target_dims == 0 || target_dims > n {
        return Err(Error::InvalidParameter(format!(
            "target dimension {target_dims} out of range 1..={n}"
        )));
    }

    let mut mean = vec![0.0; n];
    for r in 0..k {
        for (m, &v) in mean.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(n, n);
    for r in 0..k {
        let row = data.row(r);
        for i in 0..n {
            let di = row[i] - mean[i];
            for j in i..n {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov[(i, j)] / (k as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > lambda_max * 1e-10 && eig.eigenvalues[i] > 0.0)
        .count();
    if target_dims > rank {
        return Err(Error::Degenerate(format!(
            "target dimension {target_dims} exceeds data rank {rank}"
        )));
    }

    let mut basis = Matrix::zeros(target_dims, n);
    let mut explained = Vec::with_capacity(target_dims);
    for (d, &i) in order.iter().take(target_dims).enumerate() {
        let col = eig.eigenvectors.column(i);
        for j in 0..n {
            basis.row_mut(d)[j] = col[j];
        }
        explained.push(eig.eigenvalues[i]);
    }
    Ok(PcaTransform { mean, basis, explained })
}

pub fn apply_pca(t: &PcaTransform, data: &Matrix) -> Result<Matrix> {
    if data.cols() != t.mean.len() {
        return Err(Error::DimensionMismatch { expected: t.mean.len(), got: data.cols() });
    }
    let dims = t.basis.rows();
    let mut out = Matrix::zeros(data.rows(), dims);
    let mut centered = vec![0.0; data.cols()];
    for r in 0..data.rows() {
        for (c, (&v, &m)) in data.row(r).iter().zip(&t.mean).enumerate() {
            centered[c] = v - m;
        }
        for d in 0..dims {
            out.row_mut(r)[d] = dot(&centered, t.basis.row(d));
        }
    }
    Ok(out)
}

/// Shuffle rows, hold out `test_fraction` of them, then keep a
/// `subsample_fraction` share of the remainder as the training set.
pub fn split_and_subsample(
    data: &Matrix,
    test_fraction: f64,
    subsample_fraction: f64,
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("test fraction {test_fraction} not in (0,1)")));
    }
    if !(subsample_fraction > 0.0 && subsample_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "subsample fraction {subsample_fraction} not in (0,1]"
        )));
    }
    let k = data.rows();
    let test_count = (k as f64 * test_fraction).round() as usize;
    if test_count == 0 || test_count >= k {
        return Err(Error::Degenerate(format!("split of {k} rows leaves an empty side")));
    }
    let pool = k - test_count;
    let train_count = ((pool as f64) * subsample_fraction).round().max(1.0) as usize;

    let mut idx: Vec<usize> = (0..k).collect();
    idx.shuffle(&mut child_rng(seed, StreamDomain::Split, 0));
    let test = data.select_rows(&idx[..test_count]);
    let train = data.select_rows(&idx[test_count..test_count + train_count]);
    Ok((train, test))
}

/// Seeded subsample of a fraction of the rows (used per benchmark run).
pub fn subsample_rows(data: &Matrix, fraction: f64, seed: u64) -> Result<Matrix> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction {fraction} not in (0,1]")));
    }
    let count = ((data.rows() as f64) * fraction).round().max(1.0) as usize;
    let mut idx: Vec<usize> = (0..data.rows()).collect();
    idx.shuffle(&mut child_rng(seed, StreamDomain::Split, 1));
    Ok(data.select_rows(&idx[..count]))
}
