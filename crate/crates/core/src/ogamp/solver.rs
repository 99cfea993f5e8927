use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::kernels::{self, CavityGuard, GaussPrior};
use super::{Coupling, ImagingEstimate, Init, Priors, SolverConfig, TraceRow};
use crate::channel::{mean_power, Dictionary};
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Coefficients with smaller squared magnitude carry no information.
const TINY_GAIN: f64 = 1e-300;

/// Per-edge variable-to-factor messages of one family, `rows x cols`.
struct Messages {
    mean: DMatrix<Complex64>,
    var: DMatrix<f64>,
}

#[derive(Clone, Copy)]
struct Aggregate {
    mean: Complex64,
    var: f64,
    /// `(ln Z(0), ln Z(1))`.
    evidence: (f64, f64),
}

fn family_matrix(dict: &Dictionary, f: usize) -> &DMatrix<Complex64> {
    match f {
        0 => &dict.a,
        1 => &dict.ax,
        _ => &dict.ay,
    }
}

fn check_finite(t: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration: t,
            detail: format!("non-finite {what}; try stronger damping"),
        })
    }
}

/// OG-AMP with joint activation. Dictionary columns of active pixels are
/// re-evaluated at their estimated positions every `gradient_period`
/// iterations when `config.gradient_updates` is set.
pub fn run_ogamp(
    y: &[Complex64],
    dict: &Dictionary,
    grid: &GridSpec,
    priors: &Priors,
    config: &SolverConfig,
) -> Result<ImagingEstimate> {
    run_solver(y, dict, grid, priors, config, Coupling::Joint)
}

/// Baseline on the same off-grid model: independent Bernoulli-Gaussian
/// priors per family, activity decided by `x` alone, static dictionary and
/// pixel-center positions.
pub fn run_gamp_baseline(
    y: &[Complex64],
    dict: &Dictionary,
    grid: &GridSpec,
    priors: &Priors,
    config: &SolverConfig,
) -> Result<ImagingEstimate> {
    let config = SolverConfig {
        gradient_updates: false,
        ..config.clone()
    };
    run_solver(y, dict, grid, priors, &config, Coupling::Independent)
}

/// Re-evaluates the columns of `active` pixels at `positions`; columns whose
/// position is unchanged are left alone. Returns the number of columns moved.
pub fn update_gradients(dict: &mut Dictionary, active: &[usize], positions: &[Point]) -> Result<usize> {
    let mut moved = 0;
    for &n in active {
        if dict.positions[n] != positions[n] {
            dict.set_column(n, positions[n])?;
            moved += 1;
        }
    }
    Ok(moved)
}

pub fn run_solver(
    y: &[Complex64],
    dict: &Dictionary,
    grid: &GridSpec,
    priors: &Priors,
    config: &SolverConfig,
    coupling: Coupling,
) -> Result<ImagingEstimate> {
    priors.validate()?;
    config.validate()?;
    let (rows, cols) = (dict.n_rows(), dict.n_cols());
    if y.len() != rows || grid.len() != cols {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, grid {} pixels, dictionary {rows} x {cols}",
            y.len(),
            grid.len()
        )));
    }
    let mut dict = dict.clone();
    let centers: Vec<Point> = (0..cols).map(|n| grid.center(n)).collect();
    let half = grid.half_pixel();
    let n_links = dict.n_links().max(1) as f64;
    let families = 3;
    let noise_floor = priors.noise_variance.max(1e-12 * mean_power(y)).max(f64::MIN_POSITIVE);
    let mut noise = if config.learn_noise { mean_power(y).max(noise_floor) } else { noise_floor };

    let prior: Vec<GaussPrior> = (0..families).map(|f| priors.family(f)).collect();
    let floor: Vec<f64> = prior.iter().map(|p| p.var * config.variance_floor).collect();
    let guard: Vec<CavityGuard> = prior
        .iter()
        .map(|p| CavityGuard::Clamp {
            ceiling: p.var * config.cavity_ceiling,
        })
        .collect();

    let mut msgs: Vec<Messages> = prior
        .iter()
        .map(|p| {
            let (m, v) = match config.init {
                Init::Slab => (p.mean, p.var),
                Init::Marginal => {
                    let e = priors.eta;
                    (p.mean * e, e * (p.var + p.mean.norm_sqr()) - e * e * p.mean.norm_sqr())
                }
            };
            Messages {
                mean: DMatrix::from_element(rows, cols, m),
                var: DMatrix::from_element(rows, cols, v),
            }
        })
        .collect();

    let mut est = ImagingEstimate {
        x_hat: vec![ZERO; cols],
        sx_hat: vec![ZERO; cols],
        sy_hat: vec![ZERO; cols],
        x_var: vec![0.0; cols],
        activation: vec![0.0; cols],
        active: Vec::new(),
        positions: centers.clone(),
        iterations: 0,
        converged: false,
        trace: Vec::new(),
    };
    let ln_eta = (priors.eta.ln(), (1.0 - priors.eta).ln());
    let beta = config.damping;
    // unthresholded posterior means of x drive the stopping rule
    let mut raw_x = vec![ZERO; cols];
    let mut soft = vec![vec![ZERO; cols]; 3];

    for t in 1..=config.t_max {
        // full predicted mean and variance per row
        let mut pred = vec![ZERO; rows];
        let mut pvar = vec![0.0; rows];
        for (f, m) in msgs.iter().enumerate() {
            let d = family_matrix(&dict, f).as_slice();
            let (mm, mv) = (m.mean.as_slice(), m.var.as_slice());
            for i in 0..rows * cols {
                let r = i % rows;
                pred[r] += d[i] * mm[i];
                pvar[r] += d[i].norm_sqr() * mv[i];
            }
        }

        let edge = |d: Complex64, m: Complex64, v: f64, r: usize| -> Option<(Complex64, f64)> {
            let p = d.norm_sqr();
            if p < TINY_GAIN {
                return None;
            }
            let z = pred[r] - d * m;
            let v_other = (pvar[r] - p * v).max(0.0);
            Some(kernels::extrinsic(y[r], d, z, v_other, noise))
        };

        // aggregate factor-to-variable messages per (family, pixel)
        let mut agg: Vec<Vec<Aggregate>> = Vec::with_capacity(families);
        for (f, m) in msgs.iter().enumerate() {
            let d = family_matrix(&dict, f);
            let a: Vec<Aggregate> = (0..cols)
                .into_par_iter()
                .map(|n| {
                    let dc = d.column(n);
                    let (mc, vc) = (m.mean.column(n), m.var.column(n));
                    let mut prec = 0.0;
                    let mut acc = ZERO;
                    for r in 0..rows {
                        if let Some((e, u)) = edge(dc[r], mc[r], vc[r], r) {
                            prec += 1.0 / u;
                            acc += e / u;
                        }
                    }
                    if prec > 0.0 {
                        let var = 1.0 / prec;
                        let mean = acc * var;
                        Aggregate {
                            mean,
                            var,
                            evidence: kernels::ln_evidence(mean, var, prior[f]),
                        }
                    } else {
                        Aggregate {
                            mean: ZERO,
                            var: f64::INFINITY,
                            evidence: (0.0, 0.0),
                        }
                    }
                })
                .collect();
            agg.push(a);
        }
        for a in agg.iter().flatten() {
            check_finite(t, "aggregate mean", a.mean.norm())?;
        }

        // spike/slab weights of the activation-factor messages
        let weights: Vec<Vec<(f64, f64)>> = (0..families)
            .map(|f| {
                (0..cols)
                    .map(|n| match coupling {
                        Coupling::Joint => {
                            let others: Vec<(f64, f64)> =
                                (0..families).filter(|&g| g != f).map(|g| agg[g][n].evidence).collect();
                            kernels::ln_mixture_weights(priors.eta, &others)
                        }
                        Coupling::Independent => (ln_eta.1, ln_eta.0),
                    })
                    .collect()
            })
            .collect();

        // variable-to-factor messages through the cavity
        for (f, m) in msgs.iter_mut().enumerate() {
            let d = family_matrix(&dict, f);
            let Messages { mean, var } = m;
            mean.as_mut_slice()
                .par_chunks_mut(rows)
                .zip(var.as_mut_slice().par_chunks_mut(rows))
                .enumerate()
                .try_for_each(|(n, (mc, vc))| -> Result<()> {
                    let dc = d.column(n);
                    let a = agg[f][n];
                    let (lk0, lk1) = weights[f][n];
                    for r in 0..rows {
                        let (e, u) = edge(dc[r], mc[r], vc[r], r).unwrap_or((ZERO, f64::INFINITY));
                        let (cm, cv) = if a.var.is_finite() {
                            kernels::gaussian_quotient(a.mean, a.var, e, u, guard[f])?
                        } else {
                            (ZERO, prior[f].var * 1e12)
                        };
                        let out = kernels::mixture_moments(lk0, lk1, prior[f], cm, cv)?;
                        mc[r] = mc[r] * beta + out.mean * (1.0 - beta);
                        vc[r] = (vc[r] * beta + out.var * (1.0 - beta)).max(floor[f]);
                    }
                    Ok(())
                })?;
        }

        // activity and posterior estimates
        let prev = raw_x.clone();
        est.active.clear();
        for n in 0..cols {
            let post = match coupling {
                Coupling::Joint => {
                    let ev: Vec<(f64, f64)> = (0..families).map(|f| agg[f][n].evidence).collect();
                    kernels::activation_posterior(priors.eta, &ev)
                }
                Coupling::Independent => kernels::activation_posterior(priors.eta, &[agg[0][n].evidence]),
            };
            est.activation[n] = post;
            let mut moments = [(ZERO, 0.0); 3];
            for (f, slot) in moments.iter_mut().enumerate() {
                let a = agg[f][n];
                *slot = if a.var.is_finite() {
                    kernels::gaussian_product(prior[f].mean, prior[f].var, a.mean, a.var)?
                } else {
                    (prior[f].mean, prior[f].var)
                };
            }
            raw_x[n] = moments[0].0;
            soft[0][n] = moments[0].0 * post;
            soft[1][n] = moments[1].0 * post;
            soft[2][n] = moments[2].0 * post;
            let on = post > priors.eta_c;
            if on {
                est.active.push(n);
            }
            let pick = |f: usize| if on { moments[f] } else { (ZERO, 0.0) };
            (est.x_hat[n], est.x_var[n]) = pick(0);
            est.sx_hat[n] = pick(1).0;
            est.sy_hat[n] = pick(2).0;
        }
        est.positions = if config.gradient_updates {
            estimated_positions(&est, &dict.positions, &centers, half, priors)
        } else {
            centers.clone()
        };

        if config.learn_noise {
            // soft fit: activation-weighted posterior means of every pixel
            let mut fit = vec![ZERO; rows];
            for (f, xs) in soft.iter().enumerate() {
                let d = family_matrix(&dict, f);
                for (n, &w) in xs.iter().enumerate() {
                    for (r, v) in fit.iter_mut().enumerate() {
                        *v += d[(r, n)] * w;
                    }
                }
            }
            let miss = y.iter().zip(&fit).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / rows as f64;
            noise = miss.max(noise_floor);
        }

        let residual = raw_x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / n_links;
        let mean_offset = if est.active.is_empty() {
            0.0
        } else {
            est.active
                .iter()
                .map(|&n| {
                    let p = est.positions[n];
                    (p[0] - centers[n][0]).hypot(p[1] - centers[n][1])
                })
                .sum::<f64>()
                / est.active.len() as f64
        };
        est.trace.push(TraceRow {
            t,
            residual,
            active: est.active.len(),
            mean_offset,
        });
        est.iterations = t;
        check_finite(t, "residual", residual)?;

        let mut pending = 0.0f64;
        if config.gradient_updates {
            for &n in &est.active {
                let (p, q) = (est.positions[n], dict.positions[n]);
                pending = pending.max((p[0] - q[0]).abs()).max((p[1] - q[1]).abs());
            }
        }
        let settled = pending <= config.position_tolerance * grid.pixel_size;
        let converged = t > 1 && residual <= config.tolerance;
        if converged && settled {
            est.converged = true;
            break;
        }
        if config.gradient_updates && (t % config.gradient_period == 0 || converged) {
            for &n in &est.active {
                if est.positions[n] != dict.positions[n] {
                    dict.set_column(n, est.positions[n])?;
                    // the offset is now carried by the dictionary
                    msgs[1].mean.column_mut(n).fill(ZERO);
                    msgs[2].mean.column_mut(n).fill(ZERO);
                }
            }
        }
    }
    Ok(est)
}

/// Scatterer positions implied by `s / x` around the current evaluation
/// positions, clamped to the pixel. Inactive pixels report their center.
fn estimated_positions(
    est: &ImagingEstimate,
    eval: &[Point],
    centers: &[Point],
    half: f64,
    priors: &Priors,
) -> Vec<Point> {
    let min_x = 1e-3 * priors.x.mean.norm().max(priors.x.var.sqrt());
    let mut out = centers.to_vec();
    for &n in &est.active {
        let x = est.x_hat[n];
        let (dx, dy) = if x.norm() > min_x {
            ((est.sx_hat[n] / x).re, (est.sy_hat[n] / x).re)
        } else {
            (0.0, 0.0)
        };
        let c = centers[n];
        out[n] = [
            (eval[n][0] + dx).clamp(c[0] - half, c[0] + half),
            (eval[n][1] + dy).clamp(c[1] - half, c[1] + half),
        ];
    }
    out
}
