//! Imaging and synchronization metrics, the phase Cramér-Rao bound and the
//! scaling probes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    add_noise, build_dictionary, gradient_gains, propagation_gain, scattered_field, WaveformConfig, SPEED_OF_LIGHT,
};
use crate::error::{Error, Result};
use crate::geometry::{
    build_grid, generate_scene, place_nodes, GridSpec, IncidenceMatrix, NodePlacement, OffsetLaw, Point,
};
use crate::ogamp::{run_gamp_baseline, Priors, SolverConfig};
use crate::phase::wrapped_diff;
use crate::seed::stream;

/// Chamfer distance with squared nearest-neighbor distances (m^2).
pub fn chamfer_distance(truth: &[Point], estimate: &[Point]) -> Result<f64> {
    if truth.is_empty() || estimate.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    Ok(mean_nearest_sq(truth, estimate) + mean_nearest_sq(estimate, truth))
}

fn mean_nearest_sq(from: &[Point], to: &[Point]) -> f64 {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / from.len() as f64
}

/// Root-mean-square of wrapped entrywise phase differences.
pub fn phase_rmse(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != estimate.shape() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let ss: f64 = truth
        .iter()
        .zip(estimate.iter())
        .map(|(a, b)| wrapped_diff(*a, *b).powi(2))
        .sum();
    Ok((ss / truth.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrbReport {
    /// Fisher information over the reduced node phases, one per subcarrier.
    pub fisher: Vec<DMatrix<f64>>,
    /// Diagonal of the inverse Fisher matrix, `params x K`.
    pub crb: DMatrix<f64>,
    /// Per-link variance of the reconstructed link phase, `M x K`.
    pub link_variance: DMatrix<f64>,
    /// Equivalent noise variance `|h|^2 [G J^-1 G^T]_mm`, `M x K`.
    pub sigma_syn2: DMatrix<f64>,
}

/// Phase CRB for channel `h` (stacked `r = k M + m`) observed in complex
/// noise of variance `noise_variance`; per-entry phase variance
/// `noise / (2 |h|^2)`.
pub fn crb_phase(incidence: &IncidenceMatrix, h: &[Complex64], noise_variance: f64) -> Result<CrbReport> {
    let m_links = incidence.n_links();
    if m_links == 0 || h.len() % m_links != 0 {
        return Err(Error::DimensionMismatch(format!("{} gains for {m_links} links", h.len())));
    }
    let k_count = h.len() / m_links;
    let g = &incidence.matrix;
    let p = g.ncols();
    let mut fisher = Vec::with_capacity(k_count);
    let mut crb = DMatrix::zeros(p, k_count);
    let mut link_variance = DMatrix::zeros(m_links, k_count);
    let mut sigma_syn2 = DMatrix::zeros(m_links, k_count);
    for k in 0..k_count {
        let hk = &h[k * m_links..(k + 1) * m_links];
        if hk.iter().any(|c| c.norm_sqr() == 0.0) {
            return Err(Error::SingularFisher);
        }
        let w = DVector::from_iterator(m_links, hk.iter().map(|c| 2.0 * c.norm_sqr() / noise_variance));
        let j = g.transpose() * DMatrix::from_diagonal(&w) * g;
        let inv = j.clone().try_inverse().ok_or(Error::SingularFisher)?;
        for i in 0..p {
            crb[(i, k)] = inv[(i, i)];
        }
        let proj = g * &inv * g.transpose();
        for m in 0..m_links {
            link_variance[(m, k)] = proj[(m, m)];
            sigma_syn2[(m, k)] = hk[m].norm_sqr() * proj[(m, m)];
        }
        fisher.push(j);
    }
    Ok(CrbReport {
        fisher,
        crb,
        link_variance,
        sigma_syn2,
    })
}

/// Weighted least-squares node phases from wrapped link-phase observations
/// `z` (one subcarrier), weights `|h|^2`. This is the ML estimator under the
/// high-SNR phase-noise model.
pub fn weighted_node_ls(g: &DMatrix<f64>, z: &[f64], weights: &[f64]) -> Result<DVector<f64>> {
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
    let gt_w = g.transpose() * w;
    let lhs = &gt_w * g;
    let rhs = gt_w * DVector::from_column_slice(z);
    lhs.cholesky().map(|c| c.solve(&rhs)).ok_or(Error::SingularFisher)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorRow {
    pub pixel_size: f64,
    /// Mean `|a(p + dp) - a(p) - grad a . dp|^2` using the exact gain.
    pub exact: f64,
    /// Mean of the same remainder divided by `|a(p)|^2`, which removes the
    /// wavelength dependence of the path loss.
    pub relative: f64,
    /// Mean `|(1/2) dp^T H dp|^2`, the leading second-order phase term.
    pub second_order: f64,
}

/// Monte Carlo over uniform in-pixel offsets of the first-order model error
/// for each pixel size. Geometry: every `(tx, rx, p)` triple is evaluated.
pub fn taylor_remainder_scan(
    links: &[(Point, Point)],
    pixels: &[Point],
    pixel_sizes: &[f64],
    freq: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<TaylorRow>> {
    if pixel_sizes.len() < 3 {
        return Err(Error::OutOfRange(format!("need at least 3 pixel sizes, got {}", pixel_sizes.len())));
    }
    let kappa = std::f64::consts::TAU * freq / SPEED_OF_LIGHT;
    let mut rows = Vec::with_capacity(pixel_sizes.len());
    for &d in pixel_sizes {
        // same unit offsets for every size so the scan isolates the scaling
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut exact, mut relative, mut second, mut count) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..samples {
            let u = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let dp = [u[0] * d, u[1] * d];
            for &(tx, rx) in links {
                for &p in pixels {
                    let a = propagation_gain(tx, rx, p, freq, 1.0)?;
                    let (gx, gy) = gradient_gains(tx, rx, p, freq, 1.0)?;
                    let q = [p[0] + dp[0], p[1] + dp[1]];
                    let lin = a + gx * dp[0] + gy * dp[1];
                    let r = (propagation_gain(tx, rx, q, freq, 1.0)? - lin).norm_sqr();
                    exact += r;
                    relative += r / a.norm_sqr();
                    second += (0.5 * hessian_form(a, tx, rx, p, dp, kappa)).norm_sqr();
                    count += 1;
                }
            }
        }
        rows.push(TaylorRow {
            pixel_size: d,
            exact: exact / count as f64,
            relative: relative / count as f64,
            second_order: second / count as f64,
        });
    }
    Ok(rows)
}

/// `dp^T H dp` for the phase-only gain model `a exp(-j kappa (r(q) - r(p)))`,
/// `H = a (-kappa^2 grad r grad r^T - j kappa hess r)`.
fn hessian_form(a: Complex64, tx: Point, rx: Point, p: Point, dp: Point, kappa: f64) -> Complex64 {
    let mut grad = [0.0; 2];
    let mut curv = 0.0;
    for e in [tx, rx] {
        let v = [p[0] - e[0], p[1] - e[1]];
        let d = v[0].hypot(v[1]);
        let u = [v[0] / d, v[1] / d];
        grad[0] += u[0];
        grad[1] += u[1];
        let along = u[0] * dp[0] + u[1] * dp[1];
        curv += (dp[0] * dp[0] + dp[1] * dp[1] - along * along) / d;
    }
    let g = grad[0] * dp[0] + grad[1] * dp[1];
    a * Complex64::new(-kappa * kappa * g * g, -kappa * curv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbProbeRow {
    pub snr_db: f64,
    pub noise_variance: f64,
    /// Mean empirical variance of the node-phase estimates.
    pub empirical: f64,
    /// Mean CRB diagonal.
    pub crb: f64,
    pub ratio: f64,
    /// Standard error of `ratio` across trials.
    pub ratio_se: f64,
}

/// Monte Carlo of the ML node-phase estimator against the CRB with the
/// scattered channel `h` known exactly. Each trial observes
/// `exp(-j Phi) h + w`, takes per-link phases and solves weighted node LS
/// per subcarrier. SNR is relative to the mean of `|h|^2`.
pub fn crb_probe(
    incidence: &IncidenceMatrix,
    h: &[Complex64],
    snr_db: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<CrbProbeRow>> {
    let m_links = incidence.n_links();
    if trials < 2 {
        return Err(Error::OutOfRange(format!("need at least 2 trials, got {trials}")));
    }
    let g = &incidence.matrix;
    let p = g.ncols();
    let k_count = h.len() / m_links.max(1);
    let power = crate::channel::mean_power(h);
    let weights: Vec<Vec<f64>> = (0..k_count)
        .map(|k| h[k * m_links..(k + 1) * m_links].iter().map(|c| c.norm_sqr()).collect())
        .collect();
    snr_db
        .iter()
        .enumerate()
        .map(|(si, &snr)| {
            let nv = power / 10f64.powf(snr / 10.0);
            let report = crb_phase(incidence, h, nv)?;
            let crb = report.crb.mean();
            let noise = Normal::new(0.0, (0.5 * nv).sqrt()).expect("finite std");
            let phase = Normal::new(0.0, 0.3).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[si as u64]));
            // per-trial mean squared error over every node parameter
            let mut per_trial = Vec::with_capacity(trials);
            for _ in 0..trials {
                let mut sq = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    let theta: Vec<f64> = (0..p).map(|_| phase.sample(&mut rng)).collect();
                    let link = g * DVector::from_column_slice(&theta);
                    let z: Vec<f64> = (0..m_links)
                        .map(|m| {
                            let hk = h[k * m_links + m];
                            let wn = Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
                            let y = Complex64::from_polar(1.0, -link[m]) * hk + wn;
                            -(y * hk.conj()).arg()
                        })
                        .collect();
                    let est = weighted_node_ls(g, &z, w)?;
                    sq += est.iter().zip(&theta).map(|(a, b)| wrapped_diff(*a, *b).powi(2)).sum::<f64>();
                }
                per_trial.push(sq / (p * k_count) as f64);
            }
            let empirical = crate::stats::mean(&per_trial);
            let var = per_trial.iter().map(|v| (v - empirical).powi(2)).sum::<f64>() / (trials - 1) as f64;
            Ok(CrbProbeRow {
                snr_db: snr,
                noise_variance: nv,
                empirical,
                crb,
                ratio: empirical / crb,
                ratio_se: (var / trials as f64).sqrt() / crb,
            })
        })
        .collect()
}

/// Scene family for the MSE scaling probe: on-grid targets, perfect sync,
/// no direct path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingScenario {
    pub grid: GridSpec,
    pub n_tx: usize,
    pub n_rx: usize,
    pub targets: usize,
    pub placement: NodePlacement,
    pub carrier: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCase {
    pub label: String,
    pub subcarriers: Vec<i64>,
    /// Absolute noise variance, held fixed across seeds.
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub case: String,
    pub seed: usize,
    /// Measurements `M K`.
    pub measurements: usize,
    pub noise_variance: f64,
    /// `||x_hat - x||^2`.
    pub error: f64,
    /// Estimated support equals the true support.
    pub support_exact: bool,
}

/// Reconstruction error of the GAMP baseline for each case on the same
/// seeded layouts and scenes. Seeds run in parallel.
pub fn mse_scaling_probe(
    scenario: &ScalingScenario,
    cases: &[ScalingCase],
    seeds: usize,
    master_seed: u64,
    solver: &SolverConfig,
) -> Result<Vec<ScalingRow>> {
    let grid = &scenario.grid;
    let centers = build_grid(grid)?;
    let eta = scenario.targets as f64 / grid.len() as f64;
    let rows: Vec<Vec<ScalingRow>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let tseed = crate::seed::derive(master_seed, &[s as u64]);
            let sub = |tag: u64| crate::seed::derive(tseed, &[tag]);
            let layout = place_nodes(sub(stream::LAYOUT), grid, scenario.n_tx, scenario.n_rx, scenario.placement)?;
            let scene = generate_scene(sub(stream::SCENE), grid, scenario.targets, OffsetLaw::None, (0.7, 1.0))?;
            let x = scene.reflectivity_vector(grid.len());
            let truth: Vec<usize> = scene.scatterers.iter().map(|t| t.pixel).collect();
            cases
                .iter()
                .map(|case| {
                    let waveform = WaveformConfig::new(scenario.carrier, scenario.spacing, case.subcarriers.clone())?;
                    let mut y = scattered_field(&scene, grid, &layout, &waveform)?;
                    add_noise(&mut y, layout.n_links(), case.noise_variance, sub(stream::NOISE));
                    let dict = build_dictionary(&layout, &centers, &waveform)?;
                    let priors = Priors::standard(grid.pixel_size, eta, case.noise_variance);
                    let est = run_gamp_baseline(&y, &dict, grid, &priors, solver)?;
                    let error = est.x_hat.iter().zip(&x).map(|(a, &b)| (a - b).norm_sqr()).sum();
                    Ok(ScalingRow {
                        case: case.label.clone(),
                        seed: s,
                        measurements: y.len(),
                        noise_variance: case.noise_variance,
                        error,
                        support_exact: est.active == truth,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Median over seeds of `error(case) / error(reference)`.
pub fn median_error_ratio(rows: &[ScalingRow], case: &str, reference: &str) -> Option<f64> {
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.case == case)
        .filter_map(|r| {
            rows.iter()
                .find(|b| b.case == reference && b.seed == r.seed)
                .map(|b| r.error / b.error)
        })
        .collect();
    crate::stats::median(&ratios)
}
