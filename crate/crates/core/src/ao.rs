//! Alternating optimization: image with the current phase estimate, refine
//! the phase against the imaged scatterers, repeat.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, IncidenceMatrix, Point};
use crate::metrics::{chamfer_distance, phase_rmse};
use crate::ogamp::{run_ogamp, ImagingEstimate, Priors, SolverConfig};
use crate::phase::wrap;
use crate::sync_refine::{damped_update, form_nlos_observation, ml_link_phase, node_ls};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoConfig {
    /// Maximum number of phase refinements.
    pub t_max: usize,
    /// Stop once the largest phase correction falls below this (rad).
    pub tolerance: f64,
    /// Step size of the phase update, in `(0, 1)`.
    pub k_phi: f64,
    pub solver: SolverConfig,
}

impl Default for AoConfig {
    fn default() -> Self {
        AoConfig {
            t_max: 10,
            tolerance: 1e-3,
            k_phi: 0.3,
            solver: SolverConfig::default(),
        }
    }
}

/// Everything fixed across iterations.
#[derive(Debug, Clone, Copy)]
pub struct AoProblem<'a> {
    pub y: &'a [Complex64],
    pub h_los: &'a [Complex64],
    pub u_tilde: &'a [bool],
    pub incidence: &'a IncidenceMatrix,
    pub grid: &'a GridSpec,
    /// Dictionary at the pixel centers.
    pub dictionary: &'a Dictionary,
    pub priors: &'a Priors,
}

/// Ground truth used only to fill in the trace.
#[derive(Debug, Clone, Copy)]
pub struct AoTruth<'a> {
    pub positions: &'a [Point],
    pub phases: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoTraceRow {
    pub iteration: usize,
    /// NaN without truth or when nothing is active.
    pub chamfer: f64,
    pub phase_rmse: f64,
    pub active: usize,
    /// `||y_nlos - A(p_hat) x_hat||^2 / ||y_nlos||^2`.
    pub residual: f64,
    /// Largest applied correction (rad); zero on the last row.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoOutcome {
    pub imaging: ImagingEstimate,
    /// Final applied link phases, `M x K`.
    pub phases: DMatrix<f64>,
    pub trace: Vec<AoTraceRow>,
    pub converged: bool,
}

impl AoOutcome {
    /// Columnar trace `iteration,chamfer,phase_rmse,active,residual,step`.
    pub fn trace_text(&self) -> String {
        let mut s = String::from("iteration,chamfer,phase_rmse,active,residual,step\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration, r.chamfer, r.phase_rmse, r.active, r.residual, r.step
            ));
        }
        s
    }
}

/// Model field of the imaged scatterers, `sum_n a(p_n) x_n` over the active set.
pub fn imaged_field(dictionary: &Dictionary, estimate: &ImagingEstimate) -> Result<Vec<Complex64>> {
    let mut h = vec![Complex64::new(0.0, 0.0); dictionary.n_rows()];
    for &n in &estimate.active {
        let a = dictionary.gain_vector(estimate.positions[n])?;
        for (acc, g) in h.iter_mut().zip(a) {
            *acc += g * estimate.x_hat[n];
        }
    }
    Ok(h)
}

/// Runs imaging and refinement from the `initial` applied phase (`M x K`).
///
/// An iteration that images nothing leaves the phase unchanged and ends the
/// loop, since repeating it would reproduce the same empty image.
pub fn run_ao(
    problem: &AoProblem<'_>,
    initial: &DMatrix<f64>,
    config: &AoConfig,
    truth: Option<AoTruth<'_>>,
) -> Result<AoOutcome> {
    if !(config.k_phi > 0.0 && config.k_phi < 1.0) {
        return Err(Error::OutOfRange(format!("phase step must lie in (0, 1), got {}", config.k_phi)));
    }
    let m_links = problem.incidence.n_links();
    let mut applied = initial.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iteration = 0;
    loop {
        let y_nlos = form_nlos_observation(problem.y, &applied, problem.h_los, problem.u_tilde)?;
        let imaging = run_ogamp(&y_nlos, problem.dictionary, problem.grid, problem.priors, &config.solver)?;
        let (chamfer, rmse) = match truth {
            Some(t) => (
                chamfer_distance(t.positions, &imaging.points()).unwrap_or(f64::NAN),
                phase_rmse(t.phases, &applied)?,
            ),
            None => (f64::NAN, f64::NAN),
        };
        let h = imaged_field(problem.dictionary, &imaging)?;
        let miss: f64 = y_nlos.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum();
        let energy: f64 = y_nlos.iter().map(|a| a.norm_sqr()).sum();
        let mut row = AoTraceRow {
            iteration,
            chamfer,
            phase_rmse: rmse,
            active: imaging.active.len(),
            residual: miss / energy,
            step: 0.0,
        };
        if converged || iteration == config.t_max || imaging.active.is_empty() {
            trace.push(row);
            return Ok(AoOutcome {
                imaging,
                phases: applied,
                trace,
                converged,
            });
        }
        let est = ml_link_phase(&y_nlos, &h, m_links)?;
        // the estimate tracks minus the residual (true - applied)
        let residual = est.phase.map(|p| wrap(-p));
        let correction = node_ls(&residual, problem.incidence, &est.reliable)?;
        let next = damped_update(&applied, &correction, config.k_phi)?;
        row.step = config.k_phi * correction.amax();
        trace.push(row);
        converged = row.step < config.tolerance;
        applied = next;
        iteration += 1;
    }
}
