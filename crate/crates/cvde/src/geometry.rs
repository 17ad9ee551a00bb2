//! Voronoi raycasting on a generator set.
//!
//! The tessellation is never built explicitly. Every query reduces to the
//! directional radius: the distance from a point to its cell boundary along
//! a given unit vector, obtained as a min-reduction of per-generator
//! bisector crossings. With squared norms, the generator Gram table and the
//! direction-generator products precomputed, each crossing costs a handful
//! of flops and no dot products.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::matrix::{dot, sq_dist, Matrix};

/// Axis-aligned box, used both as the VDE bounding region and as an
/// optional kernel support.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidParameter("box bounds of unequal or zero length".into()));
        }
        for (l, h) in lo.iter().zip(hi.iter()) {
            if !(l < h) {
                return Err(Error::InvalidParameter(format!("empty box side [{l}, {h}]")));
            }
        }
        Ok(AxisBox { lo, hi })
    }

    /// Cube `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        AxisBox::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    /// True when every side is the same `[lo, hi]` interval.
    pub fn is_cube(&self) -> bool {
        self.lo.iter().all(|&l| l == self.lo[0]) && self.hi.iter().all(|&h| h == self.hi[0])
    }

    /// Lebesgue volume.
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(self.hi.iter()).map(|(&l, &h)| h - l).product()
    }
}

/// Generator set with precomputed squared norms and pairwise inner products.
///
/// Immutable after construction; all queries are pure reads, so the table is
/// freely shared across worker threads.
#[derive(Clone, Debug)]
pub struct GeneratorTable {
    points: Matrix,
    sq_norms: Vec<f64>,
    gram: Vec<f64>, // m*m, symmetric
    duplicates_removed: usize,
}

impl GeneratorTable {
    /// Build the table, dropping exact duplicate rows.
    pub fn build(points: &Matrix) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("generator set"));
        }
        // Exact-duplicate filtering, preserving first occurrences.
        let mut kept: Vec<usize> = Vec::with_capacity(points.rows());
        for i in 0..points.rows() {
            let r = points.row(i);
            if !kept.iter().any(|&j| points.row(j) == r) {
                kept.push(i);
            }
        }
        let duplicates_removed = points.rows() - kept.len();
        let points = if duplicates_removed > 0 {
            points.select_rows(&kept)
        } else {
            points.clone()
        };
        if points.is_empty() {
            return Err(Error::EmptyInput("generator set after duplicate removal"));
        }

        let m = points.rows();
        let mut sq_norms = Vec::with_capacity(m);
        for i in 0..m {
            sq_norms.push(dot(points.row(i), points.row(i)));
        }
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            gram[i * m + i] = sq_norms[i];
            for j in (i + 1)..m {
                let v = dot(points.row(i), points.row(j));
                gram[i * m + j] = v;
                gram[j * m + i] = v;
            }
        }
        Ok(GeneratorTable { points, sq_norms, gram, duplicates_removed })
    }

    pub fn m(&self) -> usize {
        self.points.rows()
    }

    pub fn n(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn sq_norms(&self) -> &[f64] {
        &self.sq_norms
    }

    #[inline]
    pub fn sq_norm(&self, i: usize) -> f64 {
        self.sq_norms[i]
    }

    /// Row `i` of the Gram table: `⟨p_i, p_j⟩` for all `j`.
    #[inline]
    pub fn gram_row(&self, i: usize) -> &[f64] {
        &self.gram[i * self.m()..(i + 1) * self.m()]
    }

    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    // Cheap fingerprint to detect a direction set bound to a different table.
    fn fingerprint(&self) -> u64 {
        let mut acc = (self.m() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (self.n() as u64).rotate_left(32);
        for &v in &self.sq_norms {
            acc = acc.rotate_left(7) ^ v.to_bits();
        }
        acc
    }
}

/// Index of the generator nearest to `x`; ties break to the lowest index.
pub fn nearest_generator(x: &[f64], table: &GeneratorTable) -> usize {
    assert_eq!(x.len(), table.n(), "query dimension mismatch");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..table.m() {
        let d = sq_dist(x, table.point(i));
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

struct DirGram {
    table_fingerprint: u64,
    values: Vec<f64>, // s*m
}

/// Finite set of unit vectors shared by spherical integration and sampling.
///
/// The direction-generator product table `⟨σ, p⟩` is filled lazily on first
/// use against a specific generator table and is then fixed: binding the
/// same set to a second table is a caller bug and panics.
pub struct DirectionSet {
    dirs: Matrix,
    seed: Option<u64>,
    gram: OnceLock<DirGram>,
}

impl DirectionSet {
    /// Wrap an `s×n` matrix of unit rows (norm 1 within 1e-9 absolute).
    pub fn from_matrix(dirs: Matrix) -> Result<Self> {
        Self::from_matrix_seeded(dirs, None)
    }

    pub(crate) fn from_matrix_seeded(dirs: Matrix, seed: Option<u64>) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::EmptyInput("direction set"));
        }
        for i in 0..dirs.rows() {
            let norm = dot(dirs.row(i), dirs.row(i)).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "direction {i} has norm {norm}, not a unit vector"
                )));
            }
        }
        Ok(DirectionSet { dirs, seed, gram: OnceLock::new() })
    }

    pub fn len(&self) -> usize {
        self.dirs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dirs.cols()
    }

    #[inline]
    pub fn dir(&self, i: usize) -> &[f64] {
        self.dirs.row(i)
    }

    pub fn dirs(&self) -> &Matrix {
        &self.dirs
    }

    /// Seed used to sample this set, when it was sampled rather than given.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// New set holding the first `s` directions (same sampling stream, so a
    /// prefix of a larger set equals the set sampled directly at size `s`).
    pub fn prefix(&self, s: usize) -> Result<DirectionSet> {
        if s == 0 || s > self.len() {
            return Err(Error::InvalidParameter(format!(
                "prefix length {s} out of range 1..={}",
                self.len()
            )));
        }
        let rows: Vec<usize> = (0..s).collect();
        DirectionSet::from_matrix_seeded(self.dirs.select_rows(&rows), self.seed)
    }

    /// The `s×m` table of `⟨σ, p⟩`, filled against `table` on first call.
    pub fn gram_for(&self, table: &GeneratorTable) -> &[f64] {
        let fp = table.fingerprint();
        let entry = self.gram.get_or_init(|| {
            let s = self.len();
            let m = table.m();
            let mut values = vec![0.0; s * m];
            for i in 0..s {
                let row = &mut values[i * m..(i + 1) * m];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = dot(self.dir(i), table.point(j));
                }
            }
            DirGram { table_fingerprint: fp, values }
        });
        assert_eq!(
            entry.table_fingerprint, fp,
            "direction set already bound to a different generator table"
        );
        &entry.values
    }

    /// Rank of the direction matrix, capped at the ambient dimension.
    pub fn rank(&self) -> usize {
        // Modified Gram-Schmidt over rows with early exit at full rank.
        let n = self.dim();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..self.len() {
            let mut v = self.dir(i).to_vec();
            for b in &basis {
                let c = dot(&v, b);
                for (vk, bk) in v.iter_mut().zip(b) {
                    *vk -= c * bk;
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-9 {
                for vk in v.iter_mut() {
                    *vk /= norm;
                }
                basis.push(v);
                if basis.len() == n {
                    break;
                }
            }
        }
        basis.len()
    }

    /// Error unless the set linearly spans the ambient space (required for
    /// hit-and-run convergence).
    pub fn check_spanning(&self) -> Result<()> {
        let rank = self.rank();
        if rank < self.dim() {
            return Err(Error::NonSpanning { rank, dim: self.dim() });
        }
        Ok(())
    }
}

/// Forward and backward cell-boundary distances along one direction.
///
/// `+inf` marks an unconstrained side; it is a real sentinel propagated
/// through the min-reductions, never a large finite stand-in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusPair {
    pub forward: f64,
    pub backward: f64,
}

/// Directional radius from generator `p_idx` along direction `sigma_idx`.
///
/// Minimum positive bisector crossing over all other generators; `+inf`
/// when no crossing is positive. A zero denominator means the ray runs
/// parallel to that bisector and the generator is skipped.
pub fn directional_radius_from_generator(
    p_idx: usize,
    sigma_idx: usize,
    table: &GeneratorTable,
    dirs: &DirectionSet,
) -> f64 {
    let m = table.m();
    let dg = dirs.gram_for(table);
    let dg_row = &dg[sigma_idx * m..(sigma_idx + 1) * m];
    let gram_p = table.gram_row(p_idx);
    let sq = table.sq_norms();
    radius_from_generator_rows(p_idx, sq, gram_p, dg_row)
}

/// Same reduction on raw table rows; shared by the public entry point and
/// the batch fitting loop.
#[inline]
pub(crate) fn radius_from_generator_rows(
    p_idx: usize,
    sq: &[f64],
    gram_p: &[f64],
    dg_row: &[f64],
) -> f64 {
    let sp = sq[p_idx];
    let dp = dg_row[p_idx];
    let mut l = f64::INFINITY;
    for q in 0..sq.len() {
        if q == p_idx {
            continue;
        }
        // Numerator is |q - p|^2 >= 0, so only positive denominators can
        // yield a positive crossing.
        let denom = 2.0 * (dg_row[q] - dp);
        if denom > 0.0 {
            let v = (sq[q] - 2.0 * gram_p[q] + sp) / denom;
            if v < l {
                l = v;
            }
        }
    }
    l
}

/// Chord bounds of the cell of `p_idx` through an interior point `z`.
///
/// `z_gram_row` caches `⟨z, q⟩` for all generators; positive crossings
/// tighten the forward radius, negative ones the backward radius, and
/// zero-denominator generators are skipped.
pub fn directional_radius_from_point(
    z: &[f64],
    p_idx: usize,
    z_gram_row: &[f64],
    sigma_idx: usize,
    table: &GeneratorTable,
    dirs: &DirectionSet,
) -> RadiusPair {
    debug_assert_eq!(z.len(), table.n());
    debug_assert_eq!(z_gram_row.len(), table.m());
    let m = table.m();
    let dg = dirs.gram_for(table);
    let dg_row = &dg[sigma_idx * m..(sigma_idx + 1) * m];
    radius_pair_rows(p_idx, table.sq_norms(), z_gram_row, dg_row)
}

#[inline]
pub(crate) fn radius_pair_rows(
    p_idx: usize,
    sq: &[f64],
    zg: &[f64],
    dg_row: &[f64],
) -> RadiusPair {
    let sp = sq[p_idx];
    let zp = zg[p_idx];
    let dp = dg_row[p_idx];
    let mut forward = f64::INFINITY;
    let mut backward = f64::INFINITY;
    for q in 0..sq.len() {
        if q == p_idx {
            continue;
        }
        let denom = 2.0 * (dg_row[q] - dp);
        if denom == 0.0 {
            continue;
        }
        let v = (sq[q] - sp - 2.0 * zg[q] + 2.0 * zp) / denom;
        if v > 0.0 {
            if v < forward {
                forward = v;
            }
        } else if -v < backward {
            // v == 0 (z equidistant to p and q) lands here: zero backward
            // bound, forward stays strictly positive for interior points.
            backward = -v;
        }
    }
    RadiusPair { forward, backward }
}

/// Distance along `sigma` from an interior point `z` to the boundary of
/// `bounds`.
pub fn ray_box_exit(z: &[f64], sigma: &[f64], bounds: &AxisBox) -> Result<f64> {
    if z.len() != bounds.dim() || sigma.len() != bounds.dim() {
        return Err(Error::DimensionMismatch { expected: bounds.dim(), got: z.len() });
    }
    if !bounds.contains(z) {
        return Err(Error::InvalidParameter("ray origin outside the box".into()));
    }
    let (_, exit) = ray_box_segment(z, sigma, bounds);
    Ok(exit)
}

/// Parameter interval `[t_in, t_out]` of the box along `z + t*sigma`, by the
/// slab method. `t_in > t_out` means the line misses the box; for `z`
/// inside, `t_in <= 0 <= t_out`.
pub(crate) fn ray_box_segment(z: &[f64], sigma: &[f64], bounds: &AxisBox) -> (f64, f64) {
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    for i in 0..z.len() {
        let s = sigma[i];
        if s == 0.0 {
            if z[i] < bounds.lo[i] || z[i] > bounds.hi[i] {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            continue;
        }
        let a = (bounds.lo[i] - z[i]) / s;
        let b = (bounds.hi[i] - z[i]) / s;
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t_in {
            t_in = near;
        }
        if far < t_out {
            t_out = far;
        }
    }
    (t_in, t_out)
}
