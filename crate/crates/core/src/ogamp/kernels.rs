//! Scalar message kernels shared by OG-AMP and the GAMP baseline.
//!
//! Densities are circularly-symmetric complex Gaussians
//! `CN(x; m, v) = exp(-|x - m|^2 / v) / (pi v)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Natural log of `CN(x; mean, var)`.
pub fn ln_cn(x: Complex64, mean: Complex64, var: f64) -> f64 {
    -(PI * var).ln() - (x - mean).norm_sqr() / var
}

/// Product of two Gaussian densities, returned as normalized mean/variance.
pub fn gaussian_product(m1: Complex64, v1: f64, m2: Complex64, v2: f64) -> Result<(Complex64, f64)> {
    if !(v1 > 0.0) {
        return Err(Error::NonPositiveVariance(v1));
    }
    if !(v2 > 0.0) {
        return Err(Error::NonPositiveVariance(v2));
    }
    if v2.is_infinite() {
        return Ok((m1, v1));
    }
    if v1.is_infinite() {
        return Ok((m2, v2));
    }
    let v = 1.0 / (1.0 / v1 + 1.0 / v2);
    Ok((v * (m1 / v1 + m2 / v2), v))
}

/// How [`gaussian_quotient`] treats a non-positive cavity precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CavityGuard {
    /// Replace the precision by `1 / ceiling`.
    Clamp { ceiling: f64 },
    Fail,
}

/// Quotient of two Gaussian densities (cavity): removes factor 2 from 1.
pub fn gaussian_quotient(
    m1: Complex64,
    v1: f64,
    m2: Complex64,
    v2: f64,
    guard: CavityGuard,
) -> Result<(Complex64, f64)> {
    if !(v1 > 0.0) {
        return Err(Error::NonPositiveVariance(v1));
    }
    if !(v2 > 0.0) {
        return Err(Error::NonPositiveVariance(v2));
    }
    let prec = 1.0 / v1 - 1.0 / v2;
    let weighted = m1 / v1 - m2 / v2;
    match guard {
        CavityGuard::Clamp { ceiling } if prec <= 1.0 / ceiling => {
            // keep the first factor's mean; the width is what degenerates
            Ok((m1, ceiling))
        }
        CavityGuard::Fail if prec <= 0.0 => Err(Error::DegenerateCavity(prec)),
        _ => {
            let v = 1.0 / prec;
            Ok((v * weighted, v))
        }
    }
}

/// Extrinsic message from factor `y` to a variable whose coefficient is `a`:
/// `((y - z) / a, (noise + v_other) / |a|^2)`, where `z`, `v_other` are the
/// mean and variance of all other contributions.
pub fn extrinsic(y: Complex64, a: Complex64, z: Complex64, v_other: f64, noise: f64) -> (Complex64, f64) {
    let p = a.norm_sqr();
    ((y - z) / a, (noise + v_other) / p)
}

/// Precision-weighted combination of factor-to-variable messages.
pub fn combine(messages: impl IntoIterator<Item = (Complex64, f64)>) -> (Complex64, f64) {
    let mut prec = 0.0;
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, v) in messages {
        prec += 1.0 / v;
        acc += m / v;
    }
    let v = 1.0 / prec;
    (acc * v, v)
}

/// Prior branch `CN(mean, var)` taken when the pixel is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussPrior {
    pub mean: Complex64,
    pub var: f64,
}

/// Log evidences `(ln Z(0), ln Z(1))` of an aggregate message under the
/// spike at zero and under the active prior.
pub fn ln_evidence(agg_mean: Complex64, agg_var: f64, prior: GaussPrior) -> (f64, f64) {
    let zero = Complex64::new(0.0, 0.0);
    (
        ln_cn(zero, agg_mean, agg_var),
        ln_cn(prior.mean, agg_mean, prior.var + agg_var),
    )
}

/// Normalized spike/slab weights `(k0, k1)` from log weights.
pub fn normalize_ln(ln0: f64, ln1: f64) -> (f64, f64) {
    if ln0 == f64::NEG_INFINITY && ln1 == f64::NEG_INFINITY {
        return (0.5, 0.5);
    }
    let m = ln0.max(ln1);
    let (e0, e1) = ((ln0 - m).exp(), (ln1 - m).exp());
    let s = e0 + e1;
    (e0 / s, e1 / s)
}

/// Mixture weights of the activation-factor message to one family, given the
/// log evidences of the other families.
pub fn mixture_weights(eta: f64, others: &[(f64, f64)]) -> (f64, f64) {
    let (ln0, ln1) = ln_mixture_weights(eta, others);
    normalize_ln(ln0, ln1)
}

pub fn ln_mixture_weights(eta: f64, others: &[(f64, f64)]) -> (f64, f64) {
    let mut ln0 = (1.0 - eta).ln();
    let mut ln1 = eta.ln();
    for &(z0, z1) in others {
        ln0 += z0;
        ln1 += z1;
    }
    (ln0, ln1)
}

/// Moments of `[k0 delta(x) + k1 CN(x; prior)] * CN(x; cavity)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureMoments {
    pub mean: Complex64,
    pub var: f64,
    /// Posterior weight of the slab branch.
    pub p_active: f64,
}

/// Spike-and-slab message to a factor, from log mixture weights and the
/// cavity `(cav_mean, cav_var)`.
pub fn mixture_moments(
    ln_k0: f64,
    ln_k1: f64,
    prior: GaussPrior,
    cav_mean: Complex64,
    cav_var: f64,
) -> Result<MixtureMoments> {
    let zero = Complex64::new(0.0, 0.0);
    let ln_w0 = ln_k0 + ln_cn(zero, cav_mean, cav_var);
    let ln_w1 = ln_k1 + ln_cn(prior.mean, cav_mean, prior.var + cav_var);
    let (_, p) = normalize_ln(ln_w0, ln_w1);
    let (m, v) = gaussian_product(prior.mean, prior.var, cav_mean, cav_var)?;
    Ok(MixtureMoments {
        mean: m * p,
        var: p * v + (p - p * p) * m.norm_sqr(),
        p_active: p,
    })
}

/// Normalized activation posterior `Pr(c = 1)` from the per-family log
/// evidences.
pub fn activation_posterior(eta: f64, evidence: &[(f64, f64)]) -> f64 {
    let (ln0, ln1) = ln_mixture_weights(eta, evidence);
    normalize_ln(ln0, ln1).1
}
