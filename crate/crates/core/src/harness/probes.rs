//! Drivers for the theory probes and single-trial AO traces on the
//! configured scenario.

use super::config::ExperimentConfig;
use super::experiment::build_trial;
use crate::ao::{run_ao, AoOutcome, AoProblem, AoTruth};
use crate::channel::{mean_power, scattered_field};
use crate::error::{Error, Result};
use crate::metrics::{crb_probe, mse_scaling_probe, CrbProbeRow, ScalingCase, ScalingRow, ScalingScenario};
use crate::ogamp::SolverConfig;

/// SNR levels of the CRB comparison (dB).
pub const CRB_SNR_DB: [f64; 5] = [10.0, 15.0, 20.0, 25.0, 30.0];

/// Case labels emitted by [`run_scaling`].
pub const SCALING_BASE: &str = "base";
pub const SCALING_DOUBLE_MK: &str = "double-mk";
pub const SCALING_DOUBLE_NOISE: &str = "double-noise";

/// ML node-phase variance against the CRB on trial 0's layout, with its
/// true scattered field as the perfect-imaging reference.
pub fn run_crb(config: &ExperimentConfig, snr_db: &[f64], trials: usize) -> Result<Vec<CrbProbeRow>> {
    let t = build_trial(config, 0)?;
    let h = scattered_field(&t.scene, &t.grid, &t.layout, &t.waveform)?;
    crb_probe(&t.incidence, &h, snr_db, trials, config.seed)
}

/// `count` subcarrier indices evenly spread over the span of `base`.
pub fn spread_subcarriers(base: &[i64], count: usize) -> Vec<i64> {
    let lo = *base.iter().min().unwrap_or(&0);
    let hi = *base.iter().max().unwrap_or(&0);
    if count < 2 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / (count - 1) as f64).round() as i64)
        .collect()
}

/// Solver settings for the scaling probe: known noise, tight convergence
/// and heavier damping so the high-SNR iteration settles.
pub fn scaling_solver(base: &SolverConfig) -> SolverConfig {
    SolverConfig {
        learn_noise: false,
        tolerance: 1e-8,
        t_max: 400,
        damping: 0.6,
        ..base.clone()
    }
}

/// GAMP reconstruction error on on-grid scenes at the configured imaging
/// subcarriers, at twice as many subcarriers, and at twice the noise. The
/// absolute noise variance is fixed from trial 0's scattered power at
/// `snr_db`.
pub fn run_scaling(config: &ExperimentConfig, seeds: usize, snr_db: f64) -> Result<Vec<ScalingRow>> {
    if seeds == 0 {
        return Err(Error::OutOfRange("need at least one seed".into()));
    }
    let s = &config.scenario;
    let reference = build_trial(config, 0)?;
    let field = scattered_field(&reference.scene, &reference.grid, &reference.layout, &reference.waveform)?;
    let nv = mean_power(&field) / 10f64.powf(snr_db / 10.0);
    let base = config.waveform.imaging_indices();
    let scenario = ScalingScenario {
        grid: s.grid()?,
        n_tx: s.n_tx,
        n_rx: s.n_rx,
        targets: s.targets,
        placement: s.placement,
        carrier: config.waveform.carrier,
        spacing: config.waveform.spacing,
    };
    let cases = [
        ScalingCase {
            label: SCALING_BASE.into(),
            subcarriers: base.clone(),
            noise_variance: nv,
        },
        ScalingCase {
            label: SCALING_DOUBLE_MK.into(),
            subcarriers: spread_subcarriers(&base, 2 * base.len()),
            noise_variance: nv,
        },
        ScalingCase {
            label: SCALING_DOUBLE_NOISE.into(),
            subcarriers: base,
            noise_variance: 2.0 * nv,
        },
    ];
    mse_scaling_probe(&scenario, &cases, seeds, config.seed, &scaling_solver(&config.solver))
}

/// AO run on one trial with the per-iteration trace.
pub fn run_trace(config: &ExperimentConfig, trial: usize) -> Result<AoOutcome> {
    let t = build_trial(config, trial)?;
    let problem = AoProblem {
        y: &t.y,
        h_los: &t.h_los,
        u_tilde: &t.u_tilde,
        incidence: &t.incidence,
        grid: &t.grid,
        dictionary: &t.dictionary,
        priors: &t.priors,
    };
    let truth = t.truth_positions();
    run_ao(
        &problem,
        &t.coarse,
        &config.ao_config(),
        Some(AoTruth {
            positions: &truth,
            phases: &t.phases,
        }),
    )
}
