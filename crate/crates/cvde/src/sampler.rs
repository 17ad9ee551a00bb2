//! Hit-and-run sampling from a fitted model.
//!
//! Each chain lives inside one Voronoi cell: a direction is drawn from the
//! shared pool, the chord of the cell through the current point is found by
//! raycasting, and the next point is drawn from the kernel restricted to
//! that chord. The per-generator inner products `⟨z, q⟩` are carried
//! incrementally (one fused multiply-add per generator and step) instead of
//! being recomputed, which removes the dimension from the per-step cost up
//! to the final position update.
//!
//! Chains are independent units of parallel work with private RNG streams;
//! results are gathered by chain index, so output is identical however the
//! work is scheduled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::DensityModel;
use crate::geometry::{radius_pair_rows, ray_box_segment, DirectionSet};
use crate::kernels::sample_line_truncated;
use crate::matrix::{dot, Matrix};
use crate::rng::{child_rng, StreamDomain};

/// Incremental `⟨z, q⟩` caches are rebuilt from coordinates this often;
/// floating drift over long chains otherwise erodes the O(1) update.
const RESYNC_INTERVAL: u64 = 256;

/// Directions yielding an empty or degenerate chord are redrawn at most this
/// many times per step before the step errors out.
const MAX_DIRECTION_REDRAWS: usize = 512;

/// Chord endpoints are pulled inward by this fraction of the chord width so
/// accumulated rounding can never park a sample on a cell boundary.
const BOUNDARY_MARGIN: f64 = 1e-9;

/// One hit-and-run walker confined to its home cell.
#[derive(Clone, Debug)]
pub struct ChainState {
    z: Vec<f64>,
    home: usize,
    z_gram: Vec<f64>,
    z_sq: f64, // ⟨z, z⟩, kept for ball-kernel chords
    steps_done: u64,
    degenerate_redraws: u64,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn position(&self) -> &[f64] {
        &self.z
    }

    pub fn home(&self) -> usize {
        self.home
    }

    pub fn z_gram(&self) -> &[f64] {
        &self.z_gram
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn degenerate_redraws(&self) -> u64 {
        self.degenerate_redraws
    }
}

/// Initialize `count` chains with homes drawn uniformly over the cells that
/// carry positive mass; each chain starts at its home generator, so the Gram
/// cache is a plain copy of the generator's Gram row.
pub fn init_chains(model: &DensityModel, count: usize, seed: u64) -> Result<Vec<ChainState>> {
    if count == 0 {
        return Err(Error::InvalidParameter("chain count must be >= 1".into()));
    }
    let table = model.table();
    let flagged = &model.meta().zero_mass_cells;
    let eligible: Vec<usize> = if flagged.is_empty() {
        (0..table.m()).collect()
    } else {
        (0..table.m()).filter(|i| !flagged.contains(i)).collect()
    };
    if eligible.is_empty() {
        return Err(Error::NonNormalizable("every cell has zero mass".into()));
    }
    let mut home_rng = child_rng(seed, StreamDomain::ChainInit, 0);
    let chains = (0..count)
        .map(|i| {
            let home = eligible[home_rng.random_range(0..eligible.len())];
            ChainState {
                z: table.point(home).to_vec(),
                home,
                z_gram: table.gram_row(home).to_vec(),
                z_sq: table.sq_norm(home),
                steps_done: 0,
                degenerate_redraws: 0,
                rng: child_rng(seed, StreamDomain::Chain, i as u64),
            }
        })
        .collect();
    Ok(chains)
}

// One attempted move along `sigma` whose generator products are `dg_row`.
// Returns false when the chord is empty or degenerate (caller redraws).
fn try_move(
    chain: &mut ChainState,
    model: &DensityModel,
    sigma: &[f64],
    dg_row: &[f64],
) -> Result<bool> {
    let kernel = model.kernel();
    let sq = model.table().sq_norms();
    let home = chain.home;

    let radii = radius_pair_rows(home, sq, &chain.z_gram, dg_row);
    let mut lo = -radii.backward;
    let mut hi = radii.forward;

    // A support box trims the chord further.
    if let Some(support) = &kernel.support {
        let (t_in, t_out) = ray_box_segment(&chain.z, sigma, support);
        lo = lo.max(t_in);
        hi = hi.min(t_out);
    }
    if !(lo < hi) {
        return Ok(false);
    }

    // Pull endpoints strictly inside the cell.
    if lo.is_finite() && hi.is_finite() {
        let margin = BOUNDARY_MARGIN * (hi - lo);
        lo += margin;
        hi -= margin;
        if !(lo < hi) {
            return Ok(false);
        }
    }

    let sigma_dot_z = dot(sigma, &chain.z);
    let mu = dg_row[home] - sigma_dot_z;
    let dist2 = (sq[home] - 2.0 * chain.z_gram[home] + chain.z_sq).max(0.0);
    let t = match sample_line_truncated(kernel, mu, dist2, lo, hi, &mut chain.rng) {
        Ok(t) => t,
        Err(Error::Degenerate(_)) => return Ok(false),
        Err(e) => return Err(e),
    };

    for (zi, si) in chain.z.iter_mut().zip(sigma) {
        *zi += t * si;
    }
    chain.z_sq += 2.0 * t * sigma_dot_z + t * t;
    for (zg, &dgq) in chain.z_gram.iter_mut().zip(dg_row) {
        *zg += t * dgq;
    }
    chain.steps_done += 1;
    if chain.steps_done % RESYNC_INTERVAL == 0 {
        resync(chain, model);
    }
    Ok(true)
}

/// Advance one chain by one hit-and-run step over the pooled directions.
pub fn step(chain: &mut ChainState, model: &DensityModel, dirs: &DirectionSet) -> Result<()> {
    let m = model.table().m();
    let s = dirs.len();
    let dg = dirs.gram_for(model.table());
    for _ in 0..MAX_DIRECTION_REDRAWS {
        let sigma_idx = chain.rng.random_range(0..s);
        let dg_row = &dg[sigma_idx * m..(sigma_idx + 1) * m];
        if try_move(chain, model, dirs.dir(sigma_idx), dg_row)? {
            return Ok(());
        }
        chain.degenerate_redraws += 1;
    }
    Err(Error::Numeric(format!(
        "no usable chord after {MAX_DIRECTION_REDRAWS} direction draws (cell {})",
        chain.home
    )))
}

/// Advance one chain with a direction drawn fresh from the sphere instead
/// of the pool. Costs an extra O(m n) per step for the generator products.
pub fn step_fresh(chain: &mut ChainState, model: &DensityModel) -> Result<()> {
    let table = model.table();
    let n = table.n();
    let mut sigma = vec![0.0; n];
    let mut dg_row = vec![0.0; table.m()];
    for _ in 0..MAX_DIRECTION_REDRAWS {
        loop {
            let mut norm2 = 0.0;
            for v in sigma.iter_mut() {
                *v = chain.rng.sample(rand_distr::StandardNormal);
                norm2 += *v * *v;
            }
            if norm2 > 0.0 {
                let inv = norm2.sqrt().recip();
                sigma.iter_mut().for_each(|v| *v *= inv);
                break;
            }
        }
        for (q, slot) in dg_row.iter_mut().enumerate() {
            *slot = dot(&sigma, table.point(q));
        }
        if try_move(chain, model, &sigma, &dg_row)? {
            return Ok(());
        }
        chain.degenerate_redraws += 1;
    }
    Err(Error::Numeric(format!(
        "no usable chord after {MAX_DIRECTION_REDRAWS} direction draws (cell {})",
        chain.home
    )))
}

fn resync(chain: &mut ChainState, model: &DensityModel) {
    let table = model.table();
    for q in 0..table.m() {
        chain.z_gram[q] = dot(&chain.z, table.point(q));
    }
    chain.z_sq = dot(&chain.z, &chain.z);
}

/// Run `k` independent chains for `steps` steps each; returns the final
/// positions as a `k×n` matrix.
pub fn sample(
    model: &DensityModel,
    dirs: &DirectionSet,
    k: usize,
    steps: usize,
    seed: u64,
) -> Result<Matrix> {
    if dirs.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: dirs.dim() });
    }
    dirs.check_spanning()?;
    // Touch the direction Gram once up front so workers only read.
    let _ = dirs.gram_for(model.table());

    let chains = init_chains(model, k, seed)?;
    let n = model.dim();
    let rows: Vec<Vec<f64>> = chains
        .into_par_iter()
        .map(|mut chain| {
            for _ in 0..steps {
                step(&mut chain, model, dirs)?;
            }
            Ok(chain.z)
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(k * n);
    for row in rows {
        data.extend_from_slice(&row);
    }
    Ok(Matrix::from_vec(k, n, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit, sample_direction_set};
    use crate::geometry::{nearest_generator, AxisBox, GeneratorTable};
    use crate::kernels::KernelSpec;
    use crate::special::normal_cdf;
    use rand::Rng;

    fn table(rows: &[Vec<f64>]) -> GeneratorTable {
        GeneratorTable::build(&Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn gaussian_model(rows: &[Vec<f64>], h: f64, s: usize, seed: u64) -> DensityModel {
        let t = table(rows);
        let n = rows[0].len();
        let k = KernelSpec::gaussian(n, h).unwrap();
        let dirs = sample_direction_set(s, n, seed).unwrap();
        fit(&t, &k, &dirs).unwrap()
    }

    #[test]
    fn init_chains_uniform_homes() {
        let model = gaussian_model(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0, 64, 1);
        let chains = init_chains(&model, 100_000, 7).unwrap();
        let left = chains.iter().filter(|c| c.home() == 0).count();
        let frac = left as f64 / 100_000.0;
        assert!((frac - 0.5).abs() < 0.01, "left fraction {frac}");
        // Start position is the generator itself.
        for c in chains.iter().take(50) {
            assert_eq!(c.position(), model.table().point(c.home()));
        }
    }

    #[test]
    fn init_chains_deterministic_and_rejects_zero() {
        let model = gaussian_model(&[vec![0.0], vec![2.0]], 0.5, 64, 1);
        let a = init_chains(&model, 10, 3).unwrap();
        let b = init_chains(&model, 10, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.home(), y.home());
            assert_eq!(x.position(), y.position());
        }
        assert!(init_chains(&model, 0, 3).is_err());
    }

    #[test]
    fn single_cell_chain_matches_normal_marginals() {
        // One generator: the walk targets an unconstrained Gaussian, so
        // each coordinate of the final state is N(p_i, h^2).
        let h = 0.8;
        let p = [0.4, -0.7, 1.2];
        let model = gaussian_model(&[p.to_vec()], h, 2_000, 5);
        let dirs = sample_direction_set(2_000, 3, 5).unwrap();
        let k = 10_000;
        let out = sample(&model, &dirs, k, 500, 11).unwrap();

        let crit = 1.628 / (k as f64).sqrt(); // KS, alpha = 0.01
        for c in 0..3 {
            let mut xs: Vec<f64> = (0..k).map(|i| out.row(i)[c]).collect();
            xs.sort_by(|a, b| a.total_cmp(b));
            let mut d: f64 = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                let f = normal_cdf((x - p[c]) / h);
                d = d.max((f - i as f64 / k as f64).abs());
                d = d.max(((i + 1) as f64 / k as f64 - f).abs());
            }
            assert!(d < crit, "coordinate {c}: KS statistic {d} >= {crit}");
        }
    }

    #[test]
    fn symmetric_pair_stays_in_home_halfplane() {
        let model = gaussian_model(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 1.5, 512, 2);
        let dirs = sample_direction_set(512, 2, 2).unwrap();
        let mut chains = init_chains(&model, 20, 9).unwrap();
        for chain in chains.iter_mut().filter(|c| c.home() == 0) {
            for _ in 0..300 {
                step(chain, &model, &dirs).unwrap();
                assert!(chain.position()[0] < 0.0, "left-cell point {:?}", chain.position());
            }
        }
    }

    #[test]
    fn containment_every_step() {
        let mut rng = crate::rng::rng_from_seed(33);
        for &n in &[2usize, 10] {
            let rows: Vec<Vec<f64>> =
                (0..30).map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
            let model = gaussian_model(&rows, 0.5, 1_000, 21);
            let dirs = sample_direction_set(1_000, n, 21).unwrap();
            let mut chains = init_chains(&model, 100, 13).unwrap();
            for chain in &mut chains {
                for _ in 0..200 {
                    step(chain, &model, &dirs).unwrap();
                    assert_eq!(
                        nearest_generator(chain.position(), model.table()),
                        chain.home(),
                        "chain left its cell at step {}",
                        chain.steps_done()
                    );
                }
            }
        }
    }

    #[test]
    fn incremental_gram_tracks_direct_recomputation() {
        let mut rng = crate::rng::rng_from_seed(55);
        let rows: Vec<Vec<f64>> =
            (0..12).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let model = gaussian_model(&rows, 0.6, 800, 8);
        let dirs = sample_direction_set(800, 4, 8).unwrap();
        let mut chains = init_chains(&model, 1, 17).unwrap();
        let chain = &mut chains[0];
        for _ in 0..10_000 {
            step(chain, &model, &dirs).unwrap();
        }
        let table = model.table();
        for q in 0..table.m() {
            let direct = dot(chain.position(), table.point(q));
            let cached = chain.z_gram()[q];
            let err = (cached - direct).abs() / direct.abs().max(1.0);
            assert!(err <= 1e-6, "generator {q}: cached {cached}, direct {direct}");
        }
    }

    #[test]
    fn sample_zero_steps_returns_generators() {
        let model = gaussian_model(&[vec![0.0, 3.0], vec![5.0, -1.0]], 1.0, 64, 1);
        let dirs = sample_direction_set(64, 2, 1).unwrap();
        let out = sample(&model, &dirs, 25, 0, 19).unwrap();
        for i in 0..out.rows() {
            let row = out.row(i);
            assert!(row == model.table().point(0) || row == model.table().point(1));
        }
    }

    #[test]
    fn sample_is_deterministic() {
        let mut rng = crate::rng::rng_from_seed(3);
        let rows: Vec<Vec<f64>> =
            (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let model = gaussian_model(&rows, 0.5, 256, 4);
        let dirs = sample_direction_set(256, 3, 4).unwrap();
        let a = sample(&model, &dirs, 200, 50, 77).unwrap();
        let b = sample(&model, &dirs, 200, 50, 77).unwrap();
        assert_eq!(a, b); // bit-identical through the flat data comparison
    }

    #[test]
    fn sample_splits_cells_evenly() {
        let model = gaussian_model(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0, 512, 6);
        let dirs = sample_direction_set(512, 2, 6).unwrap();
        let k = 10_000;
        let out = sample(&model, &dirs, k, 1_000, 23).unwrap();
        let left = (0..k).filter(|&i| out.row(i)[0] < 0.0).count();
        let frac = left as f64 / k as f64;
        assert!((frac - 0.5).abs() < 0.02, "left fraction {frac}");
    }

    #[test]
    fn sample_rejects_non_spanning_directions() {
        let model = gaussian_model(&[vec![0.0, 0.0], vec![1.0, 0.0]], 1.0, 64, 1);
        let line = DirectionSet::from_matrix(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        match sample(&model, &line, 10, 5, 1) {
            Err(Error::NonSpanning { rank: 1, dim: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn box_kernel_samples_stay_in_box_and_cell() {
        let rows = vec![vec![-0.5, 0.0], vec![0.5, 0.0], vec![0.0, 0.7]];
        let t = table(&rows);
        let bounds = AxisBox::cube(2, -1.0, 1.0).unwrap();
        let kernel = KernelSpec::box_indicator(bounds.clone()).unwrap();
        let dirs = sample_direction_set(2_000, 2, 14).unwrap();
        let model = fit(&t, &kernel, &dirs).unwrap();
        let out = sample(&model, &dirs, 2_000, 200, 3).unwrap();
        for i in 0..out.rows() {
            assert!(bounds.contains(out.row(i)), "sample outside box: {:?}", out.row(i));
        }
    }

    #[test]
    fn step_marginal_matches_truncated_normal() {
        // From a frozen state with directions restricted to +-e1, the
        // accepted coordinate follows the analytic one-sided truncated
        // normal; chi-square over 20 equal-probability bins.
        let rows = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let h = 1.0;
        let t = table(&rows);
        let kernel = KernelSpec::gaussian(2, h).unwrap();
        let fit_dirs = sample_direction_set(128, 2, 31).unwrap();
        let model = fit(&t, &kernel, &fit_dirs).unwrap();
        let dirs = DirectionSet::from_matrix(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(),
        )
        .unwrap();

        // Starting at the home generator, the chord along +-e1 covers the
        // home half-plane; reflecting the left cell onto the right one, the
        // accepted coordinate follows N(1, 1) truncated to x > 0.
        let trials = 40_000;
        let base = init_chains(&model, 1, 41).unwrap().remove(0);
        let home = base.home();
        let mut xs = Vec::with_capacity(trials);
        let mut chain = base;
        for _ in 0..trials {
            let mut c = chain.clone();
            step(&mut c, &model, &dirs).unwrap();
            let x = c.position()[0];
            xs.push(if home == 0 { -x } else { x });
            // Keep the state frozen but let the RNG stream advance.
            chain.rng = c.rng;
        }
        let pa = normal_cdf((0.0 - 1.0) / h);
        let cdf = |x: f64| (normal_cdf((x - 1.0) / h) - pa) / (1.0 - pa);
        let bins = 20usize;
        let mut counts = vec![0usize; bins];
        for &x in &xs {
            let b = ((cdf(x) * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let expect = trials as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // chi-square(19) upper 1% quantile = 36.19.
        assert!(chi2 < 36.19, "chi2 = {chi2}, counts {counts:?}");
    }
}
