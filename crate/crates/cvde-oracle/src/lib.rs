//! Brute-force reference computations used by test suites.
//!
//! Everything in this crate is deliberately naive: nearest generators by
//! exhaustive distance scans over raw coordinates, cell masses by midpoint
//! grids, radial masses by adaptive quadrature, cell-exit distances by ray
//! marching plus bisection. Nothing here shares code with the `cvde` crate;
//! the whole point is to provide an independent path to the same numbers.
//! Cost grows quickly with resolution and dimension, so callers stay at
//! desk scale (grids in 2-D, quadrature in any dimension).

/// Kernel description local to the oracle.
///
/// Redefined here instead of importing the production kernel type so that a
/// bug there cannot leak into the reference values.
#[derive(Clone, Debug)]
pub enum OracleKernel {
    Gaussian { h: f64 },
    UniformBall { radius: f64 },
    /// Indicator of the axis-aligned box `[lo[i], hi[i]]` per coordinate.
    BoxIndicator { lo: Vec<f64>, hi: Vec<f64> },
}

impl OracleKernel {
    /// Kernel value centered at `p`, evaluated at `x`.
    pub fn eval(&self, p: &[f64], x: &[f64]) -> f64 {
        match self {
            OracleKernel::Gaussian { h } => {
                let d2 = sq_dist(p, x);
                (-d2 / (2.0 * h * h)).exp()
            }
            OracleKernel::UniformBall { radius } => {
                if sq_dist(p, x) <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            OracleKernel::BoxIndicator { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .all(|(&v, (&l, &u))| v >= l && v <= u);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Radial profile K(t) along a ray from the kernel center.
    ///
    /// Only meaningful for the radial families; the box indicator is not
    /// radial and is rejected.
    fn radial(&self, t: f64) -> f64 {
        match self {
            OracleKernel::Gaussian { h } => (-t * t / (2.0 * h * h)).exp(),
            OracleKernel::UniformBall { radius } => {
                if t <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            OracleKernel::BoxIndicator { .. } => {
                panic!("box indicator has no radial profile")
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// Index of the generator closest to `x`, ties broken by lowest index.
pub fn nearest_by_scan(points: &[Vec<f64>], x: &[f64]) -> usize {
    assert!(!points.is_empty());
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = sq_dist(p, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Midpoint-rule mass of kernel `k` (centered at generator `p_idx`) over the
/// Voronoi cell of `p_idx`, restricted to the axis box `[lo, hi]^2`.
///
/// 2-D only. The box must be chosen by the caller so the kernel mass outside
/// it is negligible. Resolutions below 100 per side are refused: too coarse
/// to serve as a reference.
pub fn grid_cell_mass(
    points: &[Vec<f64>],
    p_idx: usize,
    kernel: &OracleKernel,
    lo: [f64; 2],
    hi: [f64; 2],
    grid_resolution: usize,
) -> f64 {
    assert!(points.iter().all(|p| p.len() == 2), "grid oracle is 2-D only");
    assert!(p_idx < points.len());
    assert!(
        grid_resolution >= 100,
        "grid resolution {grid_resolution} too coarse for an oracle (need >= 100)"
    );
    let step = [
        (hi[0] - lo[0]) / grid_resolution as f64,
        (hi[1] - lo[1]) / grid_resolution as f64,
    ];
    let cell_area = step[0] * step[1];
    let p = &points[p_idx];
    let mut sum = 0.0;
    for i in 0..grid_resolution {
        let x0 = lo[0] + (i as f64 + 0.5) * step[0];
        for j in 0..grid_resolution {
            let x1 = lo[1] + (j as f64 + 0.5) * step[1];
            let x = [x0, x1];
            if nearest_by_scan(points, &x) == p_idx {
                sum += kernel.eval(p, &x);
            }
        }
    }
    sum * cell_area
}

/// Distance along `sigma` from `z` to the first point where the nearest
/// generator changes, found by ray marching at resolution `step` and refined
/// by bisection to 1e-10. Returns +inf if no change occurs before `t_max`.
pub fn line_first_exit(
    points: &[Vec<f64>],
    z: &[f64],
    sigma: &[f64],
    step: f64,
    t_max: f64,
) -> f64 {
    assert!(step > 0.0 && t_max > 0.0);
    let home = nearest_by_scan(points, z);
    let probe = |t: f64| -> usize {
        let x: Vec<f64> = z.iter().zip(sigma.iter()).map(|(&zi, &si)| zi + t * si).collect();
        nearest_by_scan(points, &x)
    };
    let mut t_lo = 0.0;
    let mut t_hi = step;
    loop {
        if t_hi > t_max {
            return f64::INFINITY;
        }
        if probe(t_hi) != home {
            break;
        }
        t_lo = t_hi;
        t_hi += step;
    }
    // Bisect the bracket [t_lo, t_hi] down to the exit point.
    while t_hi - t_lo > 1e-10 {
        let mid = 0.5 * (t_lo + t_hi);
        if probe(mid) == home {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    0.5 * (t_lo + t_hi)
}

/// Reference value of the line integral of K(t) t^(n-1) on [0, l] by
/// adaptive Simpson quadrature to ~1e-10 relative accuracy.
///
/// `l` must be finite; for an effectively infinite ray pass a cutoff beyond
/// which the kernel mass is negligible.
pub fn quad_radial_mass(kernel: &OracleKernel, l: f64, n: usize) -> f64 {
    assert!(l.is_finite() && l >= 0.0);
    assert!(n >= 1);
    if l == 0.0 {
        return 0.0;
    }
    // The uniform ball profile is discontinuous at its radius; split there
    // so Simpson never straddles the jump.
    if let OracleKernel::UniformBall { radius } = kernel {
        let cut = l.min(*radius);
        let f = |t: f64| t.powi(n as i32 - 1);
        return adaptive_integral(&f, 0.0, cut, 1e-12);
    }
    let f = |t: f64| kernel.radial(t) * t.powi(n as i32 - 1);
    adaptive_integral(&f, 0.0, l, 1e-12)
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

// Adaptive Simpson with an absolute error budget split across panels. A
// coarse 64-panel pass estimates the integral's scale first; recursion then
// stops on the per-panel budget or when the refinement difference sits at
// double-precision rounding level, whichever comes first (the integrands
// here can reach 1e60, where a purely relative local test never converges).
fn adaptive_integral(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        tol_abs: f64,
        depth: usize,
    ) -> f64 {
        let mid = 0.5 * (a + b);
        let left = simpson(f, a, mid);
        let right = simpson(f, mid, b);
        let delta = left + right - whole;
        let rounding_floor = 4.0 * f64::EPSILON * (left.abs() + right.abs());
        if depth == 0 || delta.abs() <= 15.0 * tol_abs || delta.abs() <= rounding_floor {
            return left + right + delta / 15.0;
        }
        recurse(f, a, mid, left, 0.5 * tol_abs, depth - 1)
            + recurse(f, mid, b, right, 0.5 * tol_abs, depth - 1)
    }

    let pieces = 64;
    let step = (b - a) / pieces as f64;
    let coarse: Vec<f64> = (0..pieces)
        .map(|i| simpson(f, a + i as f64 * step, a + (i + 1) as f64 * step))
        .collect();
    let scale: f64 = coarse.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let tol_piece = rel_tol * scale / pieces as f64;
    (0..pieces)
        .map(|i| {
            recurse(f, a + i as f64 * step, a + (i + 1) as f64 * step, coarse[i], tol_piece, 40)
        })
        .sum()
}
