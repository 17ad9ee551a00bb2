//! Fitting per-cell kernel masses and evaluating the log-density.
//!
//! A fitted model stores, for every generator, the log of its cell's kernel
//! mass. The mass is a spherical integral of the one-dimensional radial
//! masses along the cell's directional radii, estimated by Monte Carlo over
//! a direction set shared by all generators. Fitting is a parallel map over
//! generators; each worker reads the shared Gram tables and writes one slot.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    nearest_generator, radius_from_generator_rows, ray_box_segment, AxisBox, DirectionSet,
    GeneratorTable,
};
use crate::kernels::{log_kernel_eval, log_segment_mass, KernelFamily, KernelSpec};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;
use crate::special::ln_gamma;

/// How directions are allocated during fitting.
///
/// One pool shared by all generators is the default and what the complexity
/// contract assumes; independent per-generator pools exist for variance
/// studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VersorScheme {
    Shared,
    PerGenerator,
}

/// Fit provenance carried by the model.
#[derive(Clone, Debug)]
pub struct FitMeta {
    pub versors: usize,
    pub seed: u64,
    pub scheme: VersorScheme,
    /// Cells that received zero mass (possible only for indicator kernels
    /// whose cell misses the support region); their density is -inf and
    /// their sampling weight zero.
    pub zero_mass_cells: Vec<usize>,
}

/// A fitted density model: generators, kernel, per-cell log masses.
#[derive(Clone, Debug)]
pub struct DensityModel {
    table: GeneratorTable,
    kernel: KernelSpec,
    log_vols: Vec<f64>,
    meta: FitMeta,
}

impl DensityModel {
    /// Assemble a model from stored parts, revalidating the invariants.
    pub fn from_parts(
        table: GeneratorTable,
        kernel: KernelSpec,
        log_vols: Vec<f64>,
        meta: FitMeta,
    ) -> Result<Self> {
        if kernel.dim != table.n() {
            return Err(Error::DimensionMismatch { expected: table.n(), got: kernel.dim });
        }
        if log_vols.len() != table.m() {
            return Err(Error::DimensionMismatch { expected: table.m(), got: log_vols.len() });
        }
        if matches!(kernel.family, KernelFamily::Gaussian { .. }) && kernel.support.is_none() {
            if let Some(i) = log_vols.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "gaussian cell {i} has non-finite log volume {}",
                    log_vols[i]
                )));
            }
        }
        Ok(DensityModel { table, kernel, log_vols, meta })
    }

    pub fn table(&self) -> &GeneratorTable {
        &self.table
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn log_vols(&self) -> &[f64] {
        &self.log_vols
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.table.n()
    }
}

/// `s` i.i.d. uniform unit vectors from normalized standard normals.
///
/// Deterministic per seed, and a prefix property holds by construction: the
/// first `k` directions of a set sampled at size `s > k` equal the set
/// sampled directly at size `k` with the same seed.
pub fn sample_direction_set(s: usize, n: usize, seed: u64) -> Result<DirectionSet> {
    if s == 0 {
        return Err(Error::InvalidParameter("direction count must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(s * n);
    for _ in 0..s {
        loop {
            let start = data.len();
            let mut norm2 = 0.0;
            for _ in 0..n {
                let v: f64 = rng.sample(StandardNormal);
                norm2 += v * v;
                data.push(v);
            }
            if norm2 > 0.0 {
                let inv = norm2.sqrt().recip();
                for v in &mut data[start..] {
                    *v *= inv;
                }
                break;
            }
            data.truncate(start); // all-zero draw; essentially impossible
        }
    }
    DirectionSet::from_matrix_seeded(Matrix::from_vec(s, n, data), Some(seed))
}

// ln of the unit-sphere surface area 2 pi^(n/2) / Gamma(n/2).
fn ln_sphere_area(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() - ln_gamma(half)
}

// Streaming log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64, // sum of exp(x - max)
}

impl LogSumExp {
    fn new() -> Self {
        LogSumExp { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

// Per-direction log line mass for generator p: directional radius capped by
// the support box, then the radial segment mass.
#[inline]
fn direction_log_mass(
    kernel: &KernelSpec,
    table: &GeneratorTable,
    p: usize,
    sigma: &[f64],
    radius: f64,
) -> f64 {
    let n = table.n();
    let (mut a, mut b) = (0.0f64, radius);
    if let Some(support) = &kernel.support {
        let (t_in, t_out) = ray_box_segment(table.point(p), sigma, support);
        b = b.min(t_out);
        a = t_in.max(0.0);
    }
    log_segment_mass(kernel, a, b.max(0.0), n)
}

/// Fit per-cell log masses by Monte Carlo spherical integration over the
/// shared direction set.
pub fn fit(
    table: &GeneratorTable,
    kernel: &KernelSpec,
    dirs: &DirectionSet,
) -> Result<DensityModel> {
    let log_vols = fit_log_vols(table, kernel, dirs)?;
    let meta = FitMeta {
        versors: dirs.len(),
        seed: dirs.seed().unwrap_or(0),
        scheme: VersorScheme::Shared,
        zero_mass_cells: zero_mass_cells(&log_vols),
    };
    DensityModel::from_parts(table.clone(), kernel.clone(), log_vols, meta)
}

fn zero_mass_cells(log_vols: &[f64]) -> Vec<usize> {
    log_vols
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == f64::NEG_INFINITY)
        .map(|(i, _)| i)
        .collect()
}

fn check_fit_inputs(
    table: &GeneratorTable,
    kernel: &KernelSpec,
    dirs: &DirectionSet,
) -> Result<()> {
    if dirs.dim() != table.n() {
        return Err(Error::DimensionMismatch { expected: table.n(), got: dirs.dim() });
    }
    if kernel.dim != table.n() {
        return Err(Error::DimensionMismatch { expected: table.n(), got: kernel.dim });
    }
    Ok(())
}

fn fit_log_vols(
    table: &GeneratorTable,
    kernel: &KernelSpec,
    dirs: &DirectionSet,
) -> Result<Vec<f64>> {
    check_fit_inputs(table, kernel, dirs)?;
    let m = table.m();
    let s = dirs.len();
    let dg = dirs.gram_for(table);
    let sq = table.sq_norms();
    let offset = ln_sphere_area(table.n()) - (s as f64).ln();

    let log_vols: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|p| {
            let gram_p = table.gram_row(p);
            let mut lse = LogSumExp::new();
            for sigma in 0..s {
                let dg_row = &dg[sigma * m..(sigma + 1) * m];
                let l = radius_from_generator_rows(p, sq, gram_p, dg_row);
                lse.push(direction_log_mass(kernel, table, p, dirs.dir(sigma), l));
            }
            offset + lse.value()
        })
        .collect();
    Ok(log_vols)
}

/// Fit with an independent direction pool per generator (variance-study
/// mode); pools are deterministic functions of (`seed`, generator index).
pub fn fit_per_generator(
    table: &GeneratorTable,
    kernel: &KernelSpec,
    s: usize,
    seed: u64,
) -> Result<DensityModel> {
    if s == 0 {
        return Err(Error::InvalidParameter("direction count must be >= 1".into()));
    }
    if kernel.dim != table.n() {
        return Err(Error::DimensionMismatch { expected: table.n(), got: kernel.dim });
    }
    let m = table.m();
    let offset = ln_sphere_area(table.n()) - (s as f64).ln();
    let log_vols: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|p| {
            let pool = sample_direction_set(
                s,
                table.n(),
                crate::rng::child_seed(seed, crate::rng::StreamDomain::Directions, p as u64),
            )
            .expect("validated parameters");
            let dg = pool.gram_for(table);
            let gram_p = table.gram_row(p);
            let sq = table.sq_norms();
            let mut lse = LogSumExp::new();
            for sigma in 0..s {
                let dg_row = &dg[sigma * m..(sigma + 1) * m];
                let l = radius_from_generator_rows(p, sq, gram_p, dg_row);
                lse.push(direction_log_mass(kernel, table, p, pool.dir(sigma), l));
            }
            offset + lse.value()
        })
        .collect();
    let meta = FitMeta {
        versors: s,
        seed,
        scheme: VersorScheme::PerGenerator,
        zero_mass_cells: zero_mass_cells(&log_vols),
    };
    DensityModel::from_parts(table.clone(), kernel.clone(), log_vols, meta)
}

/// Fit Gaussian models for several bandwidths in one pass.
///
/// The directional radii do not depend on the bandwidth, so the geometry
/// (the expensive part) is computed once and only the radial masses are
/// re-evaluated per bandwidth.
pub fn fit_gaussian_bandwidth_grid(
    table: &GeneratorTable,
    bandwidths: &[f64],
    support: Option<AxisBox>,
    dirs: &DirectionSet,
) -> Result<Vec<DensityModel>> {
    if bandwidths.is_empty() {
        return Err(Error::EmptyInput("bandwidth grid"));
    }
    let kernels: Vec<KernelSpec> = bandwidths
        .iter()
        .map(|&h| match &support {
            Some(b) => KernelSpec::gaussian_boxed(table.n(), h, b.clone()),
            None => KernelSpec::gaussian(table.n(), h),
        })
        .collect::<Result<_>>()?;
    check_fit_inputs(table, &kernels[0], dirs)?;

    let m = table.m();
    let s = dirs.len();
    let dg = dirs.gram_for(table);
    let sq = table.sq_norms();
    let offset = ln_sphere_area(table.n()) - (s as f64).ln();

    // Row-per-generator matrix of per-bandwidth accumulators.
    let per_p: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|p| {
            let gram_p = table.gram_row(p);
            let mut lses = vec![LogSumExp::new(); kernels.len()];
            for sigma in 0..s {
                let dg_row = &dg[sigma * m..(sigma + 1) * m];
                let l = radius_from_generator_rows(p, sq, gram_p, dg_row);
                for (k, kernel) in kernels.iter().enumerate() {
                    lses[k].push(direction_log_mass(kernel, table, p, dirs.dir(sigma), l));
                }
            }
            lses.iter().map(|lse| offset + lse.value()).collect()
        })
        .collect();

    kernels
        .into_iter()
        .enumerate()
        .map(|(k, kernel)| {
            let log_vols: Vec<f64> = (0..m).map(|p| per_p[p][k]).collect();
            let meta = FitMeta {
                versors: s,
                seed: dirs.seed().unwrap_or(0),
                scheme: VersorScheme::Shared,
                zero_mass_cells: zero_mass_cells(&log_vols),
            };
            DensityModel::from_parts(table.clone(), kernel, log_vols, meta)
        })
        .collect()
}

/// Per-cell log masses at every prefix length in `checkpoints` (ascending),
/// from a single pass over the direction set.
///
/// `checkpoint[i]` equals what `fit` would produce with the first
/// `checkpoints[i]` directions, because the accumulation order matches.
pub fn fit_versor_profile(
    table: &GeneratorTable,
    kernel: &KernelSpec,
    dirs: &DirectionSet,
    checkpoints: &[usize],
) -> Result<Vec<Vec<f64>>> {
    check_fit_inputs(table, kernel, dirs)?;
    if checkpoints.is_empty() {
        return Err(Error::EmptyInput("checkpoint list"));
    }
    let mut sorted = checkpoints.to_vec();
    sorted.sort_unstable();
    if sorted != checkpoints {
        return Err(Error::InvalidParameter("checkpoints must be ascending".into()));
    }
    if *sorted.first().unwrap() == 0 || *sorted.last().unwrap() > dirs.len() {
        return Err(Error::InvalidParameter(format!(
            "checkpoints must lie in 1..={}",
            dirs.len()
        )));
    }

    let m = table.m();
    let dg = dirs.gram_for(table);
    let sq = table.sq_norms();
    let area = ln_sphere_area(table.n());

    let per_p: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|p| {
            let gram_p = table.gram_row(p);
            let mut lse = LogSumExp::new();
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut next = 0;
            for sigma in 0..dirs.len() {
                let dg_row = &dg[sigma * m..(sigma + 1) * m];
                let l = radius_from_generator_rows(p, sq, gram_p, dg_row);
                lse.push(direction_log_mass(kernel, table, p, dirs.dir(sigma), l));
                while next < checkpoints.len() && sigma + 1 == checkpoints[next] {
                    out.push(area - ((sigma + 1) as f64).ln() + lse.value());
                    next += 1;
                }
            }
            out
        })
        .collect();

    Ok((0..checkpoints.len()).map(|c| (0..m).map(|p| per_p[p][c]).collect()).collect())
}

/// Log-density at `x`: log K(p, x) - log m - log vol_p with p the nearest
/// generator; -inf over zero-mass cells.
pub fn log_density(model: &DensityModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    let p = nearest_generator(x, &model.table);
    let lv = model.log_vols[p];
    if lv == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let lk = log_kernel_eval(&model.kernel, model.table.point(p), x);
    Ok(lk - (model.table.m() as f64).ln() - lv)
}

/// Mean log-density over a test set, with the count of points whose density
/// vanished (any such point pins the mean at -inf).
#[derive(Clone, Copy, Debug)]
pub struct LogLikSummary {
    pub mean: f64,
    pub neg_inf_count: usize,
}

pub fn avg_log_likelihood(model: &DensityModel, testpoints: &Matrix) -> Result<LogLikSummary> {
    if testpoints.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    if testpoints.cols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: testpoints.cols() });
    }
    let values: Vec<f64> = (0..testpoints.rows())
        .into_par_iter()
        .map(|i| log_density(model, testpoints.row(i)).expect("dimensions checked"))
        .collect();
    Ok(summarize_log_liks(&values))
}

pub(crate) fn summarize_log_liks(values: &[f64]) -> LogLikSummary {
    let neg_inf_count = values.iter().filter(|v| **v == f64::NEG_INFINITY).count();
    let mean = if neg_inf_count > 0 {
        f64::NEG_INFINITY
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    LogLikSummary { mean, neg_inf_count }
}

/// log of max_p K(p, x) minus log m: the equal-volume reduction of the
/// estimator, used as a probe (not normalized).
pub fn max_mixture_log_density(table: &GeneratorTable, kernel: &KernelSpec, x: &[f64]) -> f64 {
    let best = (0..table.m())
        .map(|p| log_kernel_eval(kernel, table.point(p), x))
        .fold(f64::NEG_INFINITY, f64::max);
    best - (table.m() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use cvde_oracle as oracle;
    use rand::Rng;

    fn table(rows: &[Vec<f64>]) -> GeneratorTable {
        GeneratorTable::build(&Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn direction_set_is_unit_and_deterministic() {
        let d = sample_direction_set(1, 2, 7).unwrap();
        let norm = crate::matrix::dot(d.dir(0), d.dir(0)).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let a = sample_direction_set(100, 3, 42).unwrap();
        let b = sample_direction_set(100, 3, 42).unwrap();
        assert_eq!(a.dirs(), b.dirs());
    }

    #[test]
    fn direction_set_prefix_property() {
        let big = sample_direction_set(50, 4, 9).unwrap();
        let small = sample_direction_set(20, 4, 9).unwrap();
        assert_eq!(big.prefix(20).unwrap().dirs(), small.dirs());
    }

    #[test]
    fn direction_set_mean_concentrates() {
        // CLT bound: the empirical mean of s uniform directions has norm
        // O(1/sqrt(s)).
        let s = 100_000;
        let d = sample_direction_set(s, 3, 4).unwrap();
        let mut mean = [0.0f64; 3];
        for i in 0..s {
            for (m, &v) in mean.iter_mut().zip(d.dir(i)) {
                *m += v;
            }
        }
        let norm = mean.iter().map(|&v| (v / s as f64).powi(2)).sum::<f64>().sqrt();
        assert!(norm <= 0.02, "mean norm {norm}");
    }

    #[test]
    fn single_generator_log_vol_exact() {
        // One unbounded cell: all radii infinite, the mass is the full
        // Gaussian integral (2 pi h^2)^(n/2).
        for &(n, h) in &[(1usize, 0.5f64), (2, 1.0), (7, 0.33), (20, 2.0)] {
            let rows = vec![vec![0.25; n]];
            let t = table(&rows);
            let dirs = sample_direction_set(16, n, 5).unwrap();
            let k = KernelSpec::gaussian(n, h).unwrap();
            let model = fit(&t, &k, &dirs).unwrap();
            let expected = n as f64 / 2.0 * (2.0 * std::f64::consts::PI * h * h).ln();
            assert!(
                (model.log_vols()[0] - expected).abs() < 1e-12,
                "n={n} h={h}: {} vs {expected}",
                model.log_vols()[0]
            );
        }
    }

    #[test]
    fn symmetric_pair_in_box_splits_area() {
        let t = table(&[vec![-0.5, 0.0], vec![0.5, 0.0]]);
        let k = KernelSpec::box_indicator(AxisBox::cube(2, -1.0, 1.0).unwrap()).unwrap();
        let dirs = sample_direction_set(40_000, 2, 11).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();
        for p in 0..2 {
            let vol = model.log_vols()[p].exp();
            assert!((vol - 2.0).abs() < 0.05, "vol_{p} = {vol}");
        }
    }

    #[test]
    fn fitted_vols_match_grid_quadrature() {
        // 10 random generators in 2-D against the midpoint-grid reference.
        let mut rng = crate::rng::rng_from_seed(13);
        let rows: Vec<Vec<f64>> =
            (0..10).map(|_| (0..2).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let t = table(&rows);
        let h = 1.0;
        let k = KernelSpec::gaussian(2, h).unwrap();
        let dirs = sample_direction_set(50_000, 2, 17).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();
        let ok = oracle::OracleKernel::Gaussian { h };
        for p in 0..t.m() {
            let reference = oracle::grid_cell_mass(&rows, p, &ok, [-9.0, -9.0], [9.0, 9.0], 1201);
            let fitted = model.log_vols()[p].exp();
            let rel = (fitted - reference).abs() / reference;
            assert!(rel < 0.02, "cell {p}: fitted {fitted}, grid {reference}, rel {rel}");
        }
    }

    #[test]
    fn log_density_single_generator_is_normal_pdf() {
        let t = table(&[vec![0.5, -1.0, 2.0]]);
        let h = 0.7;
        let k = KernelSpec::gaussian(3, h).unwrap();
        let dirs = sample_direction_set(8, 3, 3).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();
        let x = [0.1, -0.6, 2.2];
        let d2 = crate::matrix::sq_dist(&x, t.point(0));
        let expected = -d2 / (2.0 * h * h) - 1.5 * (2.0 * std::f64::consts::PI * h * h).ln();
        let got = log_density(&model, &x).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn log_density_definitional_identity() {
        let mut rng = crate::rng::rng_from_seed(29);
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let t = table(&rows);
        let k = KernelSpec::gaussian(3, 0.8).unwrap();
        let dirs = sample_direction_set(500, 3, 23).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = nearest_generator(&x, &t);
            let by_hand = crate::kernels::kernel_eval(&k, t.point(p), &x).ln()
                - (t.m() as f64).ln()
                - model.log_vols()[p];
            let got = log_density(&model, &x).unwrap();
            assert!((got - by_hand).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_density_is_symmetric() {
        let t = table(&[vec![-1.0, 0.0], vec![1.0, 0.0]]);
        let k = KernelSpec::gaussian(2, 0.9).unwrap();
        let dirs = sample_direction_set(50_000, 2, 37).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();
        let mut rng = crate::rng::rng_from_seed(41);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.5..2.5)).collect();
            let neg: Vec<f64> = x.iter().map(|&v| -v).collect();
            let a = log_density(&model, &x).unwrap();
            let b = log_density(&model, &neg).unwrap();
            // Exact symmetry would need reflected directions; the shared
            // Monte Carlo draws deliver it only to sampling accuracy.
            assert!((a - b).abs() < 0.01 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn avg_log_likelihood_examples() {
        let t = table(&[vec![0.0], vec![3.0]]);
        let k = KernelSpec::gaussian(1, 1.0).unwrap();
        let dirs = sample_direction_set(2_000, 1, 2).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();

        let single = Matrix::from_rows(&[vec![0.7]]).unwrap();
        let s1 = avg_log_likelihood(&model, &single).unwrap();
        let direct = log_density(&model, &[0.7]).unwrap();
        assert_eq!(s1.mean, direct);
        assert_eq!(s1.neg_inf_count, 0);

        let doubled = Matrix::from_rows(&[vec![0.7], vec![1.1], vec![0.7], vec![1.1]]).unwrap();
        let base = Matrix::from_rows(&[vec![0.7], vec![1.1]]).unwrap();
        let a = avg_log_likelihood(&model, &doubled).unwrap().mean;
        let b = avg_log_likelihood(&model, &base).unwrap().mean;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn avg_log_likelihood_coordinate_scaling_shift() {
        // Scaling data and queries by c with bandwidth c*h shifts the mean
        // log-likelihood by -n log c (checked numerically both ways).
        let mut rng = crate::rng::rng_from_seed(53);
        let n = 2;
        let c = 3.0;
        let rows: Vec<Vec<f64>> =
            (0..8).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let scaled: Vec<Vec<f64>> =
            rows.iter().map(|r| r.iter().map(|&v| c * v).collect()).collect();
        let queries: Vec<Vec<f64>> =
            (0..40).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let queries_scaled: Vec<Vec<f64>> =
            queries.iter().map(|r| r.iter().map(|&v| c * v).collect()).collect();

        let h = 0.6;
        let dirs = sample_direction_set(20_000, n, 61).unwrap();
        let m1 = fit(&table(&rows), &KernelSpec::gaussian(n, h).unwrap(), &dirs).unwrap();
        let dirs2 = sample_direction_set(20_000, n, 61).unwrap();
        let m2 = fit(&table(&scaled), &KernelSpec::gaussian(n, c * h).unwrap(), &dirs2).unwrap();

        let a = avg_log_likelihood(&m1, &Matrix::from_rows(&queries).unwrap()).unwrap().mean;
        let b = avg_log_likelihood(&m2, &Matrix::from_rows(&queries_scaled).unwrap())
            .unwrap()
            .mean;
        let shift = b - a + n as f64 * c.ln();
        // Same seed means identical direction draws, so the Monte Carlo
        // error cancels and only rounding remains.
        assert!(shift.abs() < 1e-9, "shift {shift}");
    }

    #[test]
    fn max_mixture_examples() {
        let t1 = table(&[vec![0.3, 0.3]]);
        let k = KernelSpec::gaussian(2, 1.0).unwrap();
        let x = [1.0, 0.0];
        let got = max_mixture_log_density(&t1, &k, &x);
        let expected = log_kernel_eval(&k, t1.point(0), &x);
        assert!((got - expected).abs() < 1e-15);

        // Equidistant from all generators: log K(d) - log m.
        let t3 = table(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]);
        let origin = [0.0, 0.0];
        let got = max_mixture_log_density(&t3, &k, &origin);
        let expected = -1.0 / 2.0 - 3f64.ln();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn hexagon_reduces_to_max_mixture() {
        // Vertices of a regular hexagon have congruent cells, so the
        // density differs from the max-mixture probe by a constant.
        let m = 6;
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let t = table(&rows);
        let k = KernelSpec::gaussian(2, 0.8).unwrap();
        let dirs = sample_direction_set(60_000, 2, 71).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();

        // Volume spread below 1% of scale.
        let mean_lv = model.log_vols().iter().sum::<f64>() / m as f64;
        for &lv in model.log_vols() {
            assert!((lv - mean_lv).abs() < 0.01);
        }

        let mut rng = crate::rng::rng_from_seed(83);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
            let lhs = log_density(&model, &x).unwrap() + mean_lv;
            let rhs = max_mixture_log_density(&t, &k, &x);
            assert!((lhs - rhs).abs() < 0.01, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn zero_mass_cells_are_flagged_and_neg_inf() {
        // The second generator's cell lies entirely outside the box.
        let t = table(&[vec![0.0, 0.0], vec![10.0, 0.0]]);
        let k = KernelSpec::box_indicator(AxisBox::cube(2, -1.0, 1.0).unwrap()).unwrap();
        let dirs = sample_direction_set(4_000, 2, 3).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();
        assert_eq!(model.meta().zero_mass_cells, vec![1]);
        assert_eq!(log_density(&model, &[9.0, 0.0]).unwrap(), f64::NEG_INFINITY);
        let s =
            avg_log_likelihood(&model, &Matrix::from_rows(&[vec![9.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.mean, f64::NEG_INFINITY);
        assert_eq!(s.neg_inf_count, 1);
    }

    #[test]
    fn refit_same_seed_is_identical() {
        let mut rng = crate::rng::rng_from_seed(19);
        let rows: Vec<Vec<f64>> =
            (0..12).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let t = table(&rows);
        let k = KernelSpec::gaussian(4, 0.5).unwrap();
        let d1 = sample_direction_set(1_000, 4, 99).unwrap();
        let d2 = sample_direction_set(1_000, 4, 99).unwrap();
        let m1 = fit(&t, &k, &d1).unwrap();
        let m2 = fit(&t, &k, &d2).unwrap();
        assert_eq!(m1.log_vols(), m2.log_vols());
    }

    #[test]
    fn permuting_generators_preserves_density() {
        let mut rng = crate::rng::rng_from_seed(67);
        let rows: Vec<Vec<f64>> =
            (0..9).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        perm.reverse();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();

        let k = KernelSpec::gaussian(3, 0.6).unwrap();
        let d1 = sample_direction_set(800, 3, 13).unwrap();
        let d2 = sample_direction_set(800, 3, 13).unwrap();
        let m1 = fit(&table(&rows), &k, &d1).unwrap();
        let m2 = fit(&table(&permuted), &k, &d2).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = log_density(&m1, &x).unwrap();
            let b = log_density(&m2, &x).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn versor_profile_matches_direct_fits() {
        let mut rng = crate::rng::rng_from_seed(101);
        let rows: Vec<Vec<f64>> =
            (0..7).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let t = table(&rows);
        let k = KernelSpec::gaussian(3, 0.7).unwrap();
        let dirs = sample_direction_set(400, 3, 55).unwrap();
        let profile = fit_versor_profile(&t, &k, &dirs, &[50, 400]).unwrap();
        let at50 = fit(&t, &k, &dirs.prefix(50).unwrap()).unwrap();
        let at400 = fit(&t, &k, &dirs).unwrap();
        assert_eq!(profile[0], at50.log_vols());
        assert_eq!(profile[1], at400.log_vols());
    }

    #[test]
    fn mc_noise_shrinks_with_more_directions() {
        // Refit spread at s=5000 should be several times tighter than at s=50.
        let mut rng = crate::rng::rng_from_seed(3);
        let rows: Vec<Vec<f64>> =
            (0..30).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let t = table(&rows);
        let k = KernelSpec::gaussian(2, 0.4).unwrap();
        let train = Matrix::from_rows(&rows).unwrap();
        let spread = |s: usize| -> f64 {
            let scores: Vec<f64> = (0..10)
                .map(|r| {
                    let dirs = sample_direction_set(s, 2, 1000 + r).unwrap();
                    let model = fit(&t, &k, &dirs).unwrap();
                    avg_log_likelihood(&model, &train).unwrap().mean
                })
                .collect();
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            (scores.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / scores.len() as f64).sqrt()
        };
        let coarse = spread(50);
        let fine = spread(5_000);
        assert!(coarse >= 3.0 * fine, "std at s=50: {coarse}, std at s=5000: {fine}");
    }

    #[test]
    fn per_generator_scheme_close_to_shared() {
        let mut rng = crate::rng::rng_from_seed(5);
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let t = table(&rows);
        let k = KernelSpec::gaussian(2, 0.5).unwrap();
        let shared = fit(&t, &k, &sample_direction_set(30_000, 2, 7).unwrap()).unwrap();
        let pergen = fit_per_generator(&t, &k, 30_000, 7).unwrap();
        assert_eq!(pergen.meta().scheme, VersorScheme::PerGenerator);
        for p in 0..t.m() {
            let a = shared.log_vols()[p];
            let b = pergen.log_vols()[p];
            assert!((a - b).abs() < 0.05, "cell {p}: {a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let t = table(&[vec![0.0, 0.0]]);
        let k = KernelSpec::gaussian(2, 1.0).unwrap();
        let dirs = sample_direction_set(16, 2, 1).unwrap();
        let model = fit(&t, &k, &dirs).unwrap();
        assert!(log_density(&model, &[0.0, 0.0, 0.0]).is_err());
        let bad_dirs = sample_direction_set(16, 3, 1).unwrap();
        assert!(fit(&t, &k, &bad_dirs).is_err());
    }
}
