//! Gaussian KDE baselines: the standard estimator, an adaptive-bandwidth
//! variant with per-point scales from a pilot estimate, and the sample-size
//! bandwidth rule used to pick defaults.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{summarize_log_liks, LogLikSummary};
use crate::geometry::GeneratorTable;
use crate::matrix::{sq_dist, Matrix};

/// Fitted KDE: generators, global bandwidth, and (for the adaptive variant)
/// per-point scale factors λ so that point `p` uses bandwidth `h * λ_p`.
#[derive(Clone, Debug)]
pub struct KdeModel {
    table: GeneratorTable,
    h: f64,
    local_scales: Option<Vec<f64>>,
}

impl KdeModel {
    pub fn table(&self) -> &GeneratorTable {
        &self.table
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn local_scales(&self) -> Option<&[f64]> {
        self.local_scales.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.table.n()
    }

    pub fn from_parts(
        table: GeneratorTable,
        h: f64,
        local_scales: Option<Vec<f64>>,
    ) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
        }
        if let Some(scales) = &local_scales {
            if scales.len() != table.m() {
                return Err(Error::DimensionMismatch {
                    expected: table.m(),
                    got: scales.len(),
                });
            }
            if let Some(bad) = scales.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-positive scale {bad}")));
            }
        }
        Ok(KdeModel { table, h, local_scales })
    }
}

pub fn fit_kde(table: &GeneratorTable, h: f64) -> Result<KdeModel> {
    KdeModel::from_parts(table.clone(), h, None)
}

/// log of (1/m) Σ_p N(x; p, h_p² I), accumulated by log-sum-exp.
pub fn kde_log_density(model: &KdeModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    let table = &model.table;
    let n = table.n() as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();

    let mut terms: Vec<f64> = (0..table.m())
        .map(|p| {
            let hp = match &model.local_scales {
                Some(scales) => model.h * scales[p],
                None => model.h,
            };
            -sq_dist(x, table.point(p)) / (2.0 * hp * hp) - 0.5 * n * (ln_2pi + 2.0 * hp.ln())
        })
        .collect();
    // Canonical summation order makes the value exactly invariant under
    // generator permutation.
    terms.sort_by(|a, b| a.total_cmp(b));
    let max = *terms.last().expect("table is nonempty");
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    Ok(max + sum.ln() - (table.m() as f64).ln())
}

/// Adaptive fit: pilot KDE at bandwidth `h` evaluated at every generator,
/// scales λ_p = sqrt(g / pilot(p)) with g the geometric mean of the pilots,
/// so Π λ_p = 1 and dense regions get tighter kernels.
pub fn fit_adakde(table: &GeneratorTable, h: f64) -> Result<KdeModel> {
    let pilot = fit_kde(table, h)?;
    let log_pilots: Vec<f64> = (0..table.m())
        .into_par_iter()
        .map(|p| kde_log_density(&pilot, table.point(p)).expect("dimensions match"))
        .collect();
    if let Some(i) = log_pilots.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("pilot density vanished at generator {i}")));
    }
    let log_g = log_pilots.iter().sum::<f64>() / table.m() as f64;
    let scales: Vec<f64> =
        log_pilots.iter().map(|&lp| (0.5 * (log_g - lp)).exp()).collect();
    KdeModel::from_parts(table.clone(), h, Some(scales))
}

pub fn kde_avg_log_likelihood(model: &KdeModel, testpoints: &Matrix) -> Result<LogLikSummary> {
    if testpoints.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    if testpoints.cols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: testpoints.cols() });
    }
    let values: Vec<f64> = (0..testpoints.rows())
        .into_par_iter()
        .map(|i| kde_log_density(model, testpoints.row(i)).expect("dimensions checked"))
        .collect();
    Ok(summarize_log_liks(&values))
}

/// Bandwidth rule h = σ̄ · k^(-1/(n+4)) with σ̄ the mean per-dimension
/// sample standard deviation.
pub fn scott_bandwidth(data: &Matrix) -> Result<f64> {
    if data.rows() < 2 {
        return Err(Error::InvalidParameter(
            "bandwidth rule needs at least 2 rows".into(),
        ));
    }
    let k = data.rows() as f64;
    let n = data.cols();
    let mut sigma_sum = 0.0;
    for c in 0..n {
        let mean = (0..data.rows()).map(|r| data.row(r)[c]).sum::<f64>() / k;
        let var =
            (0..data.rows()).map(|r| (data.row(r)[c] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        sigma_sum += var.sqrt();
    }
    let sigma_bar = sigma_sum / n as f64;
    if sigma_bar == 0.0 {
        return Err(Error::Degenerate("zero variance in every dimension".into()));
    }
    Ok(sigma_bar * k.powf(-1.0 / (n as f64 + 4.0)))
}
