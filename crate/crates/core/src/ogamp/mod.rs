//! Off-grid sparse imaging by message passing over reflectivities `x` and
//! the offset-scaled variables `s_x = x dx`, `s_y = x dy`, tied together by a
//! shared Bernoulli activation per pixel.
//!
//! The measurement model seen by the solver is
//! `y = A x + A_x s_x + A_y s_y + n`, with the gradient dictionaries
//! refreshed at the estimated scatterer positions every few iterations.

pub mod kernels;
mod solver;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use kernels::GaussPrior;
pub use solver::{run_gamp_baseline, run_ogamp, run_solver, update_gradients};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Variable families in message order.
pub const FAMILIES: [&str; 3] = ["x", "s_x", "s_y"];

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    /// Activation probability.
    pub eta: f64,
    /// Decision threshold on the activation posterior.
    pub eta_c: f64,
    pub x: GaussPrior,
    pub sx: GaussPrior,
    pub sy: GaussPrior,
    pub noise_variance: f64,
}

impl Priors {
    /// `x ~ CN(1, 0.1^2)` and `s ~ CN(0, (d/2)^2)` when active.
    pub fn standard(pixel_size: f64, eta: f64, noise_variance: f64) -> Self {
        let s = GaussPrior {
            mean: Complex64::new(0.0, 0.0),
            var: (pixel_size / 2.0).powi(2),
        };
        Priors {
            eta,
            eta_c: 0.5,
            x: GaussPrior {
                mean: Complex64::new(1.0, 0.0),
                var: 0.01,
            },
            sx: s,
            sy: s,
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.eta) || !open(self.eta_c) {
            return Err(Error::OutOfRange(format!(
                "eta and eta_c must lie in (0, 1), got {} / {}",
                self.eta, self.eta_c
            )));
        }
        for p in [self.x, self.sx, self.sy] {
            if !(p.var > 0.0) {
                return Err(Error::NonPositiveVariance(p.var));
            }
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::NonPositiveVariance(self.noise_variance));
        }
        Ok(())
    }

    pub(crate) fn family(&self, f: usize) -> GaussPrior {
        [self.x, self.sx, self.sy][f]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub t_max: usize,
    /// Stop when `||x^t - x^(t-1)|| / M` falls to this value.
    pub tolerance: f64,
    /// Gradient-update period in iterations.
    pub gradient_period: usize,
    /// Refresh the dictionary at estimated positions.
    pub gradient_updates: bool,
    /// Variance floor relative to each family's prior variance.
    pub variance_floor: f64,
    /// Cavity variance ceiling relative to each family's prior variance.
    pub cavity_ceiling: f64,
    /// Weight of the previous iterate in variable-to-factor messages.
    pub damping: f64,
    /// Geometry counts as settled once no active column would move by more
    /// than this fraction of the pixel size.
    pub position_tolerance: f64,
    pub init: Init,
    /// Re-estimate the noise variance from the fit residual each iteration,
    /// never going below the configured value.
    pub learn_noise: bool,
}

/// Starting value of the variable-to-factor messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Active-branch prior `(mu, sigma^2)` on every edge.
    Slab,
    /// Moments of the spike-and-slab prior, `(eta mu, eta (sigma^2 + |mu|^2) - eta^2 |mu|^2)`.
    Marginal,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t_max: 100,
            tolerance: 1e-4,
            gradient_period: 5,
            gradient_updates: true,
            variance_floor: 1e-12,
            cavity_ceiling: 1e12,
            damping: 0.3,
            position_tolerance: 1e-3,
            init: Init::Marginal,
            learn_noise: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 || self.gradient_period == 0 {
            return Err(Error::OutOfRange("t_max and gradient_period must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::OutOfRange(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::OutOfRange(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(self.variance_floor > 0.0 && self.cavity_ceiling > 1.0) {
            return Err(Error::OutOfRange("variance floor / cavity ceiling".into()));
        }
        Ok(())
    }
}

/// How the activation of the three families is coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// One shared activation per pixel (OG-AMP).
    Joint,
    /// Independent Bernoulli-Gaussian per family (GAMP baseline).
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub residual: f64,
    pub active: usize,
    pub mean_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingEstimate {
    pub x_hat: Vec<Complex64>,
    pub sx_hat: Vec<Complex64>,
    pub sy_hat: Vec<Complex64>,
    /// Posterior variances of `x`.
    pub x_var: Vec<f64>,
    /// Activation posteriors.
    pub activation: Vec<f64>,
    /// Active pixels, ascending.
    pub active: Vec<usize>,
    /// Estimated scatterer position of every pixel (pixel center when
    /// inactive).
    pub positions: Vec<Point>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl ImagingEstimate {
    /// Positions of the active pixels.
    pub fn points(&self) -> Vec<Point> {
        self.active.iter().map(|&n| self.positions[n]).collect()
    }

    /// Offset of each active pixel from `centers`.
    pub fn offsets(&self, centers: &[Point]) -> Vec<Point> {
        self.active
            .iter()
            .map(|&n| [self.positions[n][0] - centers[n][0], self.positions[n][1] - centers[n][1]])
            .collect()
    }

    /// Reflectivity magnitudes `|x|`.
    pub fn reflectivity(&self) -> Vec<f64> {
        self.x_hat.iter().map(|x| x.norm()).collect()
    }

    /// Columnar trace `t,residual,active,mean_offset`.
    pub fn trace_text(&self) -> String {
        let mut s = String::from("t,residual,active,mean_offset\n");
        for r in &self.trace {
            s.push_str(&format!("{},{},{},{}\n", r.t, r.residual, r.active, r.mean_offset));
        }
        s
    }
}
