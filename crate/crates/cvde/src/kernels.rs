//! Radial kernels, their one-dimensional line masses, and sampling from a
//! kernel restricted to a chord.
//!
//! Everything mass-like lives in the log domain: the Gaussian normalizer
//! (2*pi*h^2)^(n/2) alone over- or underflows for moderate dimensions, and
//! per-direction masses span hundreds of orders of magnitude once n grows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::matrix::sq_dist;
use crate::special::{
    inverse_normal_cdf, ln_gamma, ln_reg_lower_incomplete_gamma, normal_cdf, normal_sf,
};

/// Kernel families the estimator integrates analytically along rays.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelFamily {
    /// exp(-|p-x|^2 / (2 h^2))
    Gaussian { bandwidth: f64 },
    /// Indicator of the ball |p-x| <= radius.
    UniformBall { radius: f64 },
    /// Indicator of the support box (the bounded-region estimator).
    BoxIndicator,
}

/// Kernel descriptor: family, dimension, and an optional bounding box that
/// restricts the kernel support (mandatory for the box indicator).
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub support: Option<AxisBox>,
    pub dim: usize,
}

impl KernelSpec {
    pub fn gaussian(dim: usize, bandwidth: f64) -> Result<Self> {
        KernelSpec { family: KernelFamily::Gaussian { bandwidth }, support: None, dim }.validated()
    }

    /// Gaussian restricted to a box (the large-bandwidth limit of this
    /// kernel is the bounded-region estimator).
    pub fn gaussian_boxed(dim: usize, bandwidth: f64, support: AxisBox) -> Result<Self> {
        KernelSpec { family: KernelFamily::Gaussian { bandwidth }, support: Some(support), dim }
            .validated()
    }

    pub fn uniform_ball(dim: usize, radius: f64) -> Result<Self> {
        KernelSpec { family: KernelFamily::UniformBall { radius }, support: None, dim }.validated()
    }

    pub fn box_indicator(support: AxisBox) -> Result<Self> {
        let dim = support.dim();
        KernelSpec { family: KernelFamily::BoxIndicator, support: Some(support), dim }.validated()
    }

    fn validated(self) -> Result<Self> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be >= 1".into()));
        }
        match self.family {
            KernelFamily::Gaussian { bandwidth } => {
                if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian bandwidth must be positive and finite, got {bandwidth}"
                    )));
                }
            }
            KernelFamily::UniformBall { radius } => {
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "ball radius must be positive and finite, got {radius}"
                    )));
                }
            }
            KernelFamily::BoxIndicator => {
                if self.support.is_none() {
                    return Err(Error::NonNormalizable(
                        "box indicator kernel without a bounding box".into(),
                    ));
                }
            }
        }
        if let Some(b) = &self.support {
            if b.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: b.dim() });
            }
        }
        Ok(self)
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Gaussian { bandwidth } => Some(bandwidth),
            _ => None,
        }
    }
}

/// Kernel value centered at `p`, evaluated at `x`.
pub fn kernel_eval(spec: &KernelSpec, p: &[f64], x: &[f64]) -> f64 {
    log_kernel_eval(spec, p, x).exp()
}

/// log of `kernel_eval` computed directly (no exp/ln round trip); -inf where
/// the kernel vanishes.
pub fn log_kernel_eval(spec: &KernelSpec, p: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), spec.dim);
    debug_assert_eq!(x.len(), spec.dim);
    if let Some(b) = &spec.support {
        if !b.contains(x) {
            return f64::NEG_INFINITY;
        }
    }
    match spec.family {
        KernelFamily::Gaussian { bandwidth } => {
            -sq_dist(p, x) / (2.0 * bandwidth * bandwidth)
        }
        KernelFamily::UniformBall { radius } => {
            if sq_dist(p, x) <= radius * radius {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        KernelFamily::BoxIndicator => 0.0, // support already checked
    }
}

/// log of the radial line mass: integral of K(t) t^(n-1) over [0, l].
///
/// Direction-independent for the radial families. Gaussian closed form is
/// (2 h^2)^(n/2) * Gamma(n/2)/2 * P(n/2, l^2 / (2 h^2)) with P the
/// regularized lower incomplete gamma; the uniform ball gives
/// min(l, R)^n / n. The box indicator is not radial: its per-direction mass
/// is handled by the caller through ray-capped power masses.
pub fn log_radial_mass(spec: &KernelSpec, l: f64, n: usize) -> f64 {
    debug_assert!(l >= 0.0);
    if l <= 0.0 {
        return f64::NEG_INFINITY;
    }
    match spec.family {
        KernelFamily::Gaussian { bandwidth } => log_gaussian_radial_mass(bandwidth, l, n),
        KernelFamily::UniformBall { radius } => log_power_mass(l.min(radius), n),
        KernelFamily::BoxIndicator => log_power_mass(l, n),
    }
}

pub(crate) fn log_gaussian_radial_mass(h: f64, l: f64, n: usize) -> f64 {
    if l <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let a = n as f64 / 2.0;
    let z = if l.is_infinite() { f64::INFINITY } else { l * l / (2.0 * h * h) };
    let ln_p = ln_reg_lower_incomplete_gamma(a, z).expect("valid gamma arguments");
    a * (2.0 * h * h).ln() + ln_gamma(a) - std::f64::consts::LN_2 + ln_p
}

/// log(l^n / n): the indicator-kernel line mass up to the caller's cap.
pub(crate) fn log_power_mass(l: f64, n: usize) -> f64 {
    if l <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if l.is_infinite() {
        return f64::INFINITY;
    }
    n as f64 * l.ln() - (n as f64).ln()
}

/// log(exp(b) - exp(a)) for b >= a; -inf when the difference vanishes.
pub(crate) fn log_diff_exp(b: f64, a: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b <= a {
        return f64::NEG_INFINITY;
    }
    let d = (a - b).exp();
    if d >= 1.0 {
        return f64::NEG_INFINITY;
    }
    b + (-d).ln_1p()
}

/// log mass of the line segment [a, b] (0 <= a <= b) under the radial
/// profile of `spec`; used when a support box trims the ray on both sides.
pub(crate) fn log_segment_mass(spec: &KernelSpec, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return f64::NEG_INFINITY;
    }
    if a <= 0.0 {
        return log_radial_mass(spec, b, n);
    }
    log_diff_exp(log_radial_mass(spec, b, n), log_radial_mass(spec, a, n))
}

/// Draw `t` in `[lo, hi]` from the kernel restricted to the line
/// `z + t sigma`.
///
/// `mu` is the location of the kernel maximum along the line
/// (`<sigma, p - z>` for a kernel centered at `p`) and `dist2` the squared
/// distance from the kernel center to the line origin `z`; the Gaussian
/// branch ignores `dist2`, the ball branch needs it for the chord bound.
/// Box-restricted callers intersect `[lo, hi]` with the box segment first.
pub fn sample_line_truncated(
    spec: &KernelSpec,
    mu: f64,
    dist2: f64,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty chord [{lo}, {hi}]")));
    }
    match spec.family {
        KernelFamily::Gaussian { bandwidth } => {
            let alpha = (lo - mu) / bandwidth;
            let beta = (hi - mu) / bandwidth;
            let x = sample_std_truncated_normal(rng, alpha, beta);
            Ok((mu + bandwidth * x).clamp(
                if lo.is_finite() { lo } else { f64::NEG_INFINITY },
                if hi.is_finite() { hi } else { f64::INFINITY },
            ))
        }
        KernelFamily::UniformBall { radius } => {
            // Chord of the ball: (t - mu)^2 <= R^2 - (dist2 - mu^2).
            let perp2 = dist2 - mu * mu;
            let half2 = radius * radius - perp2;
            if half2 <= 0.0 {
                return Err(Error::Degenerate("chord misses the kernel ball".into()));
            }
            let half = half2.sqrt();
            let a = lo.max(mu - half);
            let b = hi.min(mu + half);
            if !(a < b) {
                return Err(Error::Degenerate("chord-ball intersection is empty".into()));
            }
            Ok(a + rng.random::<f64>() * (b - a))
        }
        KernelFamily::BoxIndicator => {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonNormalizable(
                    "uniform draw on an unbounded chord".into(),
                ));
            }
            Ok(lo + rng.random::<f64>() * (hi - lo))
        }
    }
}

/// Standard truncated normal on [alpha, beta] by inverse CDF.
///
/// One-sided intervals use the survival (erfc) scale so the draw stays
/// accurate deep in a tail; if even that underflows (bounds beyond ~38
/// sigma) the conditional law is exponentially concentrated at the inner
/// bound and an exponential tail draw takes over.
fn sample_std_truncated_normal(rng: &mut ChaCha8Rng, alpha: f64, beta: f64) -> f64 {
    debug_assert!(alpha < beta);
    // Largest double below 1; keeps the inverse CDF off its infinities.
    const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
    let u: f64 = rng.random();
    if alpha <= 0.0 && beta >= 0.0 {
        let pa = normal_cdf(alpha);
        let pb = normal_cdf(beta);
        let p = (pa + u * (pb - pa)).clamp(f64::MIN_POSITIVE, P_MAX);
        return inverse_normal_cdf(p).clamp(alpha, beta);
    }
    if alpha > 0.0 {
        let sa = normal_sf(alpha);
        let sb = normal_sf(beta);
        if sa > sb {
            // u = 0 maps to the inner bound alpha; the max() guards the
            // subnormal underflow of sa * (1 - u).
            let s = (sa + u * (sb - sa)).max(f64::MIN_POSITIVE);
            return (-inverse_normal_cdf(s)).clamp(alpha, beta);
        }
        // Survival scale underflowed: exponential tail draw, rate alpha.
        let w = -(-u).ln_1p() / alpha;
        return (alpha + w).min(beta);
    }
    // beta < 0: mirror of the right-tail case.
    -sample_std_truncated_normal(rng, -beta, -alpha)
}
