use std::f64::consts::TAU;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::{ExperimentConfig, SyncMode};
use super::output::{ResultRow, TimingRow};
use super::Method;
use crate::ao::{run_ao, AoProblem, AoTruth};
use crate::channel::{
    add_noise, build_dictionary, clean_csi, link_phases, mean_power, sample_phase_state, Dictionary, WaveformConfig,
};
use crate::coarse_sync::{estimate_coarse, propagate_coarse_to_nlos};
use crate::error::{Error, Result};
use crate::geometry::{
    build_incidence, generate_scene, place_nodes, GridSpec, IncidenceMatrix, NodeLayout, Point, Scene,
};
use crate::metrics::{chamfer_distance, phase_rmse};
use crate::ogamp::{run_gamp_baseline, run_ogamp, ImagingEstimate, Priors, SolverConfig};
use crate::phase::wrap;
use crate::seed::{self, stream};
use crate::sync_refine::form_nlos_observation;

/// One seeded realization shared by every method.
#[derive(Debug, Clone)]
pub struct Trial {
    pub seed: u64,
    pub grid: GridSpec,
    pub layout: NodeLayout,
    pub scene: Scene,
    pub incidence: IncidenceMatrix,
    /// Imaging subcarriers.
    pub waveform: WaveformConfig,
    pub y: Vec<Complex64>,
    pub h_los: Vec<Complex64>,
    pub u_tilde: Vec<bool>,
    pub noise_variance: f64,
    /// True link phases, `M x K`.
    pub phases: DMatrix<f64>,
    /// Coarse estimate handed to imaging and refinement.
    pub coarse: DMatrix<f64>,
    /// Dictionary at the pixel centers.
    pub dictionary: Dictionary,
    pub priors: Priors,
}

impl Trial {
    pub fn truth_positions(&self) -> Vec<Point> {
        self.scene.positions(&self.grid)
    }

    fn observation(&self, phases: &DMatrix<f64>) -> Result<Vec<Complex64>> {
        form_nlos_observation(&self.y, phases, &self.h_los, &self.u_tilde)
    }
}

/// Node-consistent residual `(theta_i - theta_j) + 2 pi k spacing (tau_i - tau_j)`
/// with node terms drawn so each link has standard deviations `sigma_phi`
/// and `delay_std`.
pub fn inject_residual(
    seed: u64,
    layout: &NodeLayout,
    waveform: &WaveformConfig,
    sigma_phi: f64,
    delay_std: f64,
) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |std: f64| -> Vec<f64> {
        let n = Normal::new(0.0, std / 2f64.sqrt()).expect("finite std");
        (0..layout.n_nodes()).map(|_| n.sample(&mut rng)).collect()
    };
    let theta = draw(sigma_phi);
    let tau = draw(delay_std);
    let mut out = DMatrix::zeros(layout.n_links(), waveform.n_subcarriers());
    for (kk, &k) in waveform.subcarriers.iter().enumerate() {
        for m in 0..layout.n_links() {
            let (i, j) = layout.link(m);
            let r = layout.n_tx() + j;
            out[(m, kk)] = theta[i] - theta[r] + TAU * k as f64 * waveform.spacing * (tau[i] - tau[r]);
        }
    }
    out
}

/// Builds the realization of `trial` for a configuration whose sweep value
/// has already been applied.
pub fn build_trial(config: &ExperimentConfig, trial: usize) -> Result<Trial> {
    let s = &config.scenario;
    let tseed = seed::derive(config.seed, &[trial as u64]);
    let sub = |tag: u64| seed::derive(tseed, &[tag]);
    let grid = s.grid()?;
    let layout = place_nodes(sub(stream::LAYOUT), &grid, s.n_tx, s.n_rx, s.placement)?;
    let scene = generate_scene(sub(stream::SCENE), &grid, s.targets, s.offset_law, s.reflectivity)?;
    let incidence = build_incidence(&layout, None)?;
    let mut waveform = config.waveform.imaging()?;
    let state = sample_phase_state(sub(stream::PHASE), &waveform, &layout);
    let m_links = layout.n_links();

    let (y, h_los, u_tilde, noise_variance, phases, coarse) = match config.sync.mode {
        SyncMode::Injected => {
            let phases = link_phases(&state, &layout, &waveform);
            let (mut y, h_los, u_tilde) = clean_csi(&scene, &grid, &layout, &waveform, &phases)?;
            let nv = mean_power(&y) / 10f64.powf(config.snr_db / 10.0);
            add_noise(&mut y, m_links, nv, sub(stream::NOISE));
            let residual = inject_residual(
                sub(stream::RESIDUAL),
                &layout,
                &waveform,
                config.sync.sigma_phi,
                config.sync.delay_std,
            );
            let coarse = (&phases - residual).map(wrap);
            (y, h_los, u_tilde, nv, phases, coarse)
        }
        SyncMode::Full => {
            let band = config.waveform.coarse()?;
            let phases = link_phases(&state, &layout, &band);
            let (mut y, h_los, u_tilde) = clean_csi(&scene, &grid, &layout, &band, &phases)?;
            let nv = mean_power(&y) / 10f64.powf(config.snr_db / 10.0);
            add_noise(&mut y, m_links, nv, sub(stream::COARSE_NOISE));
            let est = estimate_coarse(&y, &h_los, m_links, band.spacing, &config.sync.gate)?;
            let usable: Vec<bool> = (0..m_links).map(|m| est.detected[m] && layout.visibility[m]).collect();
            let full = propagate_coarse_to_nlos(&est.phi_hat, &incidence, &layout, &usable)?;
            let cols: Vec<usize> = waveform.subcarriers.iter().map(|&k| k as usize).collect();
            let pick_c = |v: &[Complex64]| -> Vec<Complex64> {
                cols.iter().flat_map(|&k| v[k * m_links..(k + 1) * m_links].to_vec()).collect()
            };
            let pick_b = |v: &[bool]| -> Vec<bool> {
                cols.iter().flat_map(|&k| v[k * m_links..(k + 1) * m_links].to_vec()).collect()
            };
            (
                pick_c(&y),
                pick_c(&h_los),
                pick_b(&u_tilde),
                nv,
                phases.select_columns(cols.iter()),
                full.select_columns(cols.iter()),
            )
        }
    };
    waveform.noise_variance = noise_variance;
    let centers: Vec<Point> = (0..grid.len()).map(|n| grid.center(n)).collect();
    let dictionary = build_dictionary(&layout, &centers, &waveform)?;
    let priors = config.priors.resolve(s, s.pixel_size, noise_variance);
    Ok(Trial {
        seed: tseed,
        grid,
        layout,
        scene,
        incidence,
        waveform,
        y,
        h_los,
        u_tilde,
        noise_variance,
        phases,
        coarse,
        dictionary,
        priors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    /// Chamfer distance (m^2); NaN when nothing was imaged.
    pub cd: f64,
    pub rmse: f64,
    pub iterations: usize,
    pub active: usize,
    pub error: Option<String>,
    pub imaging: Option<ImagingEstimate>,
}

fn imaged(trial: &Trial, est: ImagingEstimate, phases: &DMatrix<f64>) -> Result<MethodOutcome> {
    let rmse = phase_rmse(&trial.phases, phases)?;
    let (cd, error) = match chamfer_distance(&trial.truth_positions(), &est.points()) {
        Ok(cd) => (cd, None),
        Err(e) => (f64::NAN, Some(e.to_string())),
    };
    Ok(MethodOutcome {
        cd,
        rmse,
        iterations: est.iterations,
        active: est.active.len(),
        error,
        imaging: Some(est),
    })
}

/// Runs one method on a prepared trial.
pub fn run_method(method: Method, trial: &Trial, config: &ExperimentConfig) -> Result<MethodOutcome> {
    let phases = if method.ideal() { &trial.phases } else { &trial.coarse };
    let nograd = SolverConfig {
        gradient_updates: false,
        ..config.solver.clone()
    };
    match method {
        Method::CoarseOnly => Ok(MethodOutcome {
            cd: f64::NAN,
            rmse: phase_rmse(&trial.phases, &trial.coarse)?,
            iterations: 0,
            active: 0,
            error: None,
            imaging: None,
        }),
        Method::GampOffgrid | Method::GampIdeal => {
            let y = trial.observation(phases)?;
            let est = run_gamp_baseline(&y, &trial.dictionary, &trial.grid, &trial.priors, &config.solver)?;
            imaged(trial, est, phases)
        }
        Method::Ogamp | Method::OgampIdeal => {
            let y = trial.observation(phases)?;
            let est = run_ogamp(&y, &trial.dictionary, &trial.grid, &trial.priors, &config.solver)?;
            imaged(trial, est, phases)
        }
        Method::OgampNograd | Method::OgampNogradIdeal => {
            let y = trial.observation(phases)?;
            let est = run_ogamp(&y, &trial.dictionary, &trial.grid, &trial.priors, &nograd)?;
            imaged(trial, est, phases)
        }
        Method::OgampAo => {
            let problem = AoProblem {
                y: &trial.y,
                h_los: &trial.h_los,
                u_tilde: &trial.u_tilde,
                incidence: &trial.incidence,
                grid: &trial.grid,
                dictionary: &trial.dictionary,
                priors: &trial.priors,
            };
            let truth = trial.truth_positions();
            let out = run_ao(
                &problem,
                &trial.coarse,
                &config.ao_config(),
                Some(AoTruth {
                    positions: &truth,
                    phases: &trial.phases,
                }),
            )?;
            let mut o = imaged(trial, out.imaging, &out.phases)?;
            o.iterations = out.trace.len() - 1;
            Ok(o)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub axis: &'static str,
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
}

fn failed_row(axis_value: f64, method: Method, trial: usize, seed: u64, e: &Error) -> ResultRow {
    ResultRow {
        value: axis_value,
        method,
        trial,
        seed,
        cd: f64::NAN,
        cd_sqrt: f64::NAN,
        rmse: f64::NAN,
        iterations: 0,
        active: 0,
        error: Some(e.to_string()),
    }
}

fn run_cell(config: &ExperimentConfig, value: f64, trial: usize) -> Vec<(ResultRow, TimingRow)> {
    let cfg = config.at(value);
    let tseed = seed::derive(config.seed, &[trial as u64]);
    let timing = |method: Method, secs: f64| TimingRow {
        value,
        method,
        trial,
        seconds: secs,
    };
    let prepared = match build_trial(&cfg, trial) {
        Ok(t) => t,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| (failed_row(value, m, trial, tseed, &e), timing(m, 0.0)))
                .collect()
        }
    };
    cfg.methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let row = match run_method(m, &prepared, &cfg) {
                Ok(o) => ResultRow {
                    value,
                    method: m,
                    trial,
                    seed: tseed,
                    cd: o.cd,
                    cd_sqrt: o.cd.sqrt(),
                    rmse: o.rmse,
                    iterations: o.iterations,
                    active: o.active,
                    error: o.error,
                },
                Err(e) => failed_row(value, m, trial, tseed, &e),
            };
            (row, timing(m, start.elapsed().as_secs_f64()))
        })
        .collect()
}

/// Runs every (sweep value, trial, method) cell. Cells run on the current
/// rayon pool; rows come back sorted by sweep value, method and trial.
/// Per-run failures are recorded in the row's `error` column.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate().map_err(|(k, m)| Error::Config(format!("{k}: {m}")))?;
    let (axis, values) = config.points();
    let cells: Vec<(f64, usize)> = values
        .iter()
        .flat_map(|&v| (0..config.trials).map(move |t| (v, t)))
        .collect();
    let results: Vec<Vec<(ResultRow, TimingRow)>> =
        cells.par_iter().map(|&(v, t)| run_cell(config, v, t)).collect();
    let (mut rows, mut timings): (Vec<ResultRow>, Vec<TimingRow>) = results.into_iter().flatten().unzip();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.method.cmp(&b.method)).then(a.trial.cmp(&b.trial)));
    timings.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.method.cmp(&b.method)).then(a.trial.cmp(&b.trial)));
    Ok(ExperimentOutput { axis, rows, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyncSection;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.scenario.grid_side = 4;
        c.scenario.targets = 2;
        c.scenario.n_tx = 4;
        c.scenario.n_rx = 4;
        c.trials = 2;
        c.solver.t_max = 30;
        c.ao.t_max = 2;
        c
    }

    #[test]
    fn residual_is_node_consistent() {
        let c = small();
        let t = build_trial(&c, 0).unwrap();
        let residual = inject_residual(9, &t.layout, &t.waveform, 0.3, 1e-9);
        let proj = crate::sync_refine::node_ls(&residual, &t.incidence, &vec![true; residual.len()]).unwrap();
        assert!((&proj - &residual).amax() < 1e-9);
        let flat = inject_residual(9, &t.layout, &t.waveform, 0.3, 0.0);
        assert!((flat.column(0) - flat.column(1)).amax() < 1e-15);
    }

    #[test]
    fn trials_are_isolated_and_repeatable() {
        let c = small();
        let a = build_trial(&c, 1).unwrap();
        let b = build_trial(&c, 1).unwrap();
        assert_eq!(a.y, b.y);
        let mut more = c.clone();
        more.trials = 5;
        assert_eq!(build_trial(&more, 1).unwrap().y, a.y);
        assert_ne!(build_trial(&c, 0).unwrap().y, a.y);
    }

    #[test]
    fn ideal_and_coarse_rmse() {
        let c = small();
        let t = build_trial(&c, 0).unwrap();
        let ideal = run_method(Method::OgampNogradIdeal, &t, &c).unwrap();
        assert_eq!(ideal.rmse, 0.0);
        let coarse = run_method(Method::CoarseOnly, &t, &c).unwrap();
        assert!(coarse.rmse > 0.0 && coarse.cd.is_nan());
    }

    #[test]
    fn full_sync_near_los_only() {
        // with faint scatterers and negligible noise the gate sees an
        // almost pure LOS path
        let mut c = small();
        c.scenario.reflectivity = (1e-4, 1e-4);
        c.sync = SyncSection {
            mode: SyncMode::Full,
            ..SyncSection::default()
        };
        c.snr_db = 80.0;
        let t = build_trial(&c, 0).unwrap();
        assert_eq!(t.coarse.shape(), t.phases.shape());
        let rmse = phase_rmse(&t.phases, &t.coarse).unwrap();
        assert!(rmse < 0.1, "{rmse}");
    }

    #[test]
    fn rows_sorted_and_complete() {
        let mut c = small();
        c.methods = vec![Method::CoarseOnly, Method::GampIdeal];
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.rows[0].method, Method::CoarseOnly);
        assert_eq!(out.rows[3].method, Method::GampIdeal);
        assert_eq!(out.rows[0].trial, 0);
    }
}
