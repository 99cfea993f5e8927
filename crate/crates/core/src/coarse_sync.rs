//! LOS-aided coarse phase estimation: delay-domain gating of each link's
//! wideband CSI, phase extraction against the geometric LOS response, and
//! completion of links without a LOS path through the node graph.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{IncidenceMatrix, NodeLayout};
use crate::phase::wrap;

#[derive(Debug, Clone, PartialEq)]
pub struct PdpEstimate {
    /// Zero-padded inverse DFT of one link's CSI, length `K * pad`.
    pub taps: Vec<Complex64>,
    /// Seconds per tap.
    pub tap_spacing: f64,
    pub power: Vec<f64>,
}

impl PdpEstimate {
    /// Columnar dump `tap,delay,power`.
    pub fn to_columnar(&self) -> String {
        let mut s = String::from("tap,delay,power\n");
        for (n, p) in self.power.iter().enumerate() {
            s.push_str(&format!("{n},{},{p}\n", n as f64 * self.tap_spacing));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// Detection threshold relative to the strongest tap.
    pub threshold: f64,
    /// Half-width of the kept window, in zero-padded taps.
    pub window: usize,
    pub zero_pad: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            threshold: 0.3,
            window: 3,
            zero_pad: 8,
        }
    }
}

/// Inverse DFT across subcarriers `0..K` with zero padding. A pure delay
/// `tau` lands on tap `tau * K * pad * spacing`.
pub fn pdp(y: &[Complex64], zero_pad: usize, spacing: f64) -> Result<PdpEstimate> {
    if y.len() < 2 {
        return Err(Error::TooFewSubcarriers { min: 2, got: y.len() });
    }
    let pad = zero_pad.max(1);
    let len = y.len() * pad;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..y.len()].copy_from_slice(y);
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / y.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(PdpEstimate {
        power: buf.iter().map(|v| v.norm_sqr()).collect(),
        taps: buf,
        tap_spacing: 1.0 / (len as f64 * spacing),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedLos {
    /// Taps inside the window; zero elsewhere.
    pub taps: Vec<Complex64>,
    /// Interpolated peak position in taps, in `[0, len)`.
    pub peak: f64,
}

/// Keeps the window around the earliest significant path.
///
/// The profile is circular, so "earliest" means the first tap above the
/// threshold after the longest run of sub-threshold taps. From there the
/// window is centered on the local maximum of that cluster.
pub fn gate_los(pdp: &PdpEstimate, config: &GateConfig) -> Result<GatedLos> {
    let len = pdp.power.len();
    let max = pdp.power.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::LosNotDetected);
    }
    let level = config.threshold * max;
    let above: Vec<bool> = pdp.power.iter().map(|&p| p > level).collect();
    if above.iter().all(|&a| a) {
        // flat profile: nothing to gate against
        return Err(Error::LosNotDetected);
    }
    // longest circular run of quiet taps; the earliest path follows it
    let mut best = (0usize, 0usize);
    let start = above.iter().position(|&a| a).ok_or(Error::LosNotDetected)?;
    let mut run = 0usize;
    for step in 1..=len {
        let n = (start + step) % len;
        if above[n] {
            if run > best.1 {
                best = (n, run);
            }
            run = 0;
        } else {
            run += 1;
        }
    }
    let first = best.0;
    let mut peak = first;
    loop {
        let next = (peak + 1) % len;
        if above[next] && pdp.power[next] > pdp.power[peak] {
            peak = next;
        } else {
            break;
        }
    }
    let w = config.window.max(1) as isize;
    let mut taps = vec![Complex64::new(0.0, 0.0); len];
    for o in -w..=w {
        let n = (peak as isize + o).rem_euclid(len as isize) as usize;
        taps[n] = pdp.taps[n];
    }
    let p = |o: isize| pdp.power[(peak as isize + o).rem_euclid(len as isize) as usize];
    let (l, c, r) = (p(-1), p(0), p(1));
    let denom = l - 2.0 * c + r;
    let frac = if denom.abs() > 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Ok(GatedLos {
        taps,
        peak: (peak as f64 + frac).rem_euclid(len as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePhase {
    /// Wrapped estimates, `M x K` over the coarse band.
    pub phi_hat: DMatrix<f64>,
    /// Apparent LOS delay per link, seconds, in `[0, 1 / spacing)`.
    pub delay: Vec<f64>,
    /// Links whose gate succeeded.
    pub detected: Vec<bool>,
}

/// Phase of one link on each subcarrier `0..K`: the gated taps are
/// transformed back and compared with the ideal LOS response,
/// `-arg(h_hat conj(h_los))` (CSI carries `exp(-j Phi)`).
pub fn coarse_phase(gated: &GatedLos, h_los: &[Complex64]) -> Vec<f64> {
    let len = gated.taps.len();
    let mut buf = gated.taps.clone();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    h_los
        .iter()
        .enumerate()
        .map(|(k, h)| wrap(-(buf[k] * h.conj()).arg()))
        .collect()
}

/// Coarse estimates for every link from contiguous-band CSI `y` (stacked
/// `r = k M + m`, `K` subcarriers `0..K`). Links whose LOS cannot be gated
/// are flagged and left at zero.
pub fn estimate_coarse(
    y: &[Complex64],
    h_los: &[Complex64],
    n_links: usize,
    spacing: f64,
    config: &GateConfig,
) -> Result<CoarsePhase> {
    if n_links == 0 || y.len() != h_los.len() || y.len() % n_links != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} CSI entries, {} LOS entries, {n_links} links",
            y.len(),
            h_los.len()
        )));
    }
    let k = y.len() / n_links;
    let mut phi_hat = DMatrix::zeros(n_links, k);
    let mut delay = vec![0.0; n_links];
    let mut detected = vec![false; n_links];
    for m in 0..n_links {
        let ym: Vec<Complex64> = (0..k).map(|i| y[i * n_links + m]).collect();
        let hm: Vec<Complex64> = (0..k).map(|i| h_los[i * n_links + m]).collect();
        let profile = pdp(&ym, config.zero_pad, spacing)?;
        match gate_los(&profile, config) {
            Ok(g) => {
                for (i, p) in coarse_phase(&g, &hm).into_iter().enumerate() {
                    phi_hat[(m, i)] = p;
                }
                delay[m] = g.peak * profile.tap_spacing;
                detected[m] = true;
            }
            Err(Error::LosNotDetected) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(CoarsePhase {
        phi_hat,
        delay,
        detected,
    })
}

/// Fills in every link from node phases fitted on the `usable` links.
///
/// Link phases are only known modulo `2 pi`, so node phases are first
/// anchored along a breadth-first spanning tree of the usable links; the
/// wrapped misfit of the remaining usable links is then removed by least
/// squares before reconstructing all links as `G phi`.
pub fn propagate_coarse_to_nlos(
    phi_hat: &DMatrix<f64>,
    incidence: &IncidenceMatrix,
    layout: &NodeLayout,
    usable: &[bool],
) -> Result<DMatrix<f64>> {
    let g = &incidence.matrix;
    let (m_links, k_count) = phi_hat.shape();
    if m_links != incidence.n_links() || usable.len() != m_links {
        return Err(Error::DimensionMismatch(format!(
            "{m_links} phase rows, {} incidence rows, {} flags",
            incidence.n_links(),
            usable.len()
        )));
    }
    let rows: Vec<usize> = (0..m_links).filter(|&m| usable[m]).collect();
    let gm = g.select_rows(rows.iter());
    let rank = gm.clone().svd(false, false).rank(1e-9);
    if rank < g.ncols() {
        return Err(Error::RankDeficient { rank, cols: g.ncols() });
    }
    let normal = (gm.transpose() * &gm).cholesky().ok_or(Error::RankDeficient {
        rank,
        cols: g.ncols(),
    })?;

    // adjacency over usable links, nodes numbered Tx then Rx
    let n_nodes = layout.n_nodes();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
    for &m in &rows {
        let (i, j) = layout.link(m);
        let (a, b) = (i, layout.n_tx() + j);
        adj[a].push((b, m));
        adj[b].push((a, m));
    }
    let root = layout.node_index(incidence.reference).ok_or(Error::UnknownNode(0))?;

    let mut out = DMatrix::zeros(m_links, k_count);
    for k in 0..k_count {
        let mut node = vec![f64::NAN; n_nodes];
        node[root] = 0.0;
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            for &(b, m) in &adj[a] {
                if node[b].is_nan() {
                    // link phase = tx - rx
                    node[b] = if b >= layout.n_tx() { node[a] - phi_hat[(m, k)] } else { node[a] + phi_hat[(m, k)] };
                    queue.push_back(b);
                }
            }
        }
        let base = incidence.reduce(layout, &node);
        let pred = incidence.apply(&base);
        let misfit = DVector::from_iterator(rows.len(), rows.iter().map(|&m| wrap(phi_hat[(m, k)] - pred[m])));
        let delta = normal.solve(&(gm.transpose() * misfit));
        let full = DVector::from_column_slice(&base) + delta;
        let links = g * full;
        for m in 0..m_links {
            out[(m, k)] = wrap(links[m]);
        }
    }
    Ok(out)
}

/// Residual phase a perfect coarse stage leaves on subcarrier offset `k`:
/// `2 pi k spacing (delay - delay_hat)`.
pub fn residual_slope(spacing: f64, delay: f64, delay_hat: f64) -> f64 {
    TAU * spacing * (delay - delay_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_incidence;

    fn delayed(k: usize, tap: f64, pad: usize, amp: Complex64) -> Vec<Complex64> {
        // delay of `tap` zero-padded taps
        (0..k)
            .map(|i| amp * Complex64::from_polar(1.0, -TAU * i as f64 * tap / (k * pad) as f64))
            .collect()
    }

    #[test]
    fn pdp_peaks() {
        let y = delayed(64, 40.0, 8, Complex64::new(1.0, 0.0));
        let p = pdp(&y, 8, 120e3).unwrap();
        let g = gate_los(&p, &GateConfig::default()).unwrap();
        assert!((g.peak - 40.0).abs() < 1e-9);
        let arg = p.power.iter().enumerate().fold((0, 0.0), |b, (n, &v)| if v > b.1 { (n, v) } else { b });
        assert_eq!(arg.0, 40);
        assert!((p.tap_spacing - 1.0 / (512.0 * 120e3)).abs() < 1e-20);
        let flat = vec![Complex64::new(1.0, 0.0); 16];
        let p = pdp(&flat, 1, 1.0).unwrap();
        assert!((p.power[0] - 1.0).abs() < 1e-12);
        assert!(p.power[1..].iter().all(|&v| v < 1e-20));
        assert!(matches!(pdp(&flat[..1], 8, 1.0), Err(Error::TooFewSubcarriers { .. })));
    }

    #[test]
    fn two_paths_resolve() {
        let a = delayed(64, 5.0 * 8.0, 8, Complex64::new(1.0, 0.0));
        let b = delayed(64, 10.0 * 8.0, 8, Complex64::new(0.0, 1.5));
        let y: Vec<_> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let p = pdp(&y, 8, 1.0).unwrap();
        assert!((p.power[40] - 1.0).abs() < 1e-9);
        assert!((p.power[80] - 2.25).abs() < 1e-9);

        let g = gate_los(&p, &GateConfig::default()).unwrap();
        assert!((g.peak - 40.0).abs() < 0.5);
        // the stronger, later path is removed entirely
        assert!(g.taps[60..100].iter().all(|v| v.norm() == 0.0));
        let kept: f64 = g.taps.iter().map(|v| v.norm_sqr()).sum();
        assert!(kept >= 0.9 * p.power[40]);
    }

    #[test]
    fn gate_failure_on_flat_profile() {
        let p = PdpEstimate {
            taps: vec![Complex64::new(0.1, 0.0); 32],
            tap_spacing: 1.0,
            power: vec![0.01; 32],
        };
        assert!(matches!(gate_los(&p, &GateConfig::default()), Err(Error::LosNotDetected)));
        let zero = PdpEstimate {
            taps: vec![Complex64::new(0.0, 0.0); 32],
            tap_spacing: 1.0,
            power: vec![0.0; 32],
        };
        assert!(matches!(gate_los(&zero, &GateConfig::default()), Err(Error::LosNotDetected)));
    }

    #[test]
    fn on_tap_los_phase_is_exact() {
        let k = 64;
        let phi = 1.234;
        let h: Vec<_> = delayed(k, 24.0, 8, Complex64::new(0.01, 0.0));
        let y: Vec<_> = h.iter().map(|v| v * Complex64::from_polar(1.0, -phi)).collect();
        let cfg = GateConfig::default();
        let g = gate_los(&pdp(&y, 8, 1.0).unwrap(), &cfg).unwrap();
        for p in coarse_phase(&g, &h) {
            assert!((p - phi).abs() < 1e-12);
        }
    }

    #[test]
    fn wraps_around_negative_delay() {
        // an apparent negative delay wraps to the end of the profile
        let y = delayed(64, -3.0 * 8.0, 8, Complex64::new(1.0, 0.0));
        let g = gate_los(&pdp(&y, 8, 1.0).unwrap(), &GateConfig::default()).unwrap();
        assert!((g.peak - (512.0 - 24.0)).abs() < 1e-9);
    }

    #[test]
    fn withheld_link_recovered() {
        let layout = NodeLayout::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![[0.0, 3.0], [1.0, 3.0], [2.0, 3.0]],
        )
        .unwrap();
        let g = build_incidence(&layout, None).unwrap();
        let nodes = [0.3, 2.9, -1.7, 5.0, 0.2, -3.3];
        let truth: Vec<f64> = (0..9)
            .map(|m| {
                let (i, j) = layout.link(m);
                nodes[i] - nodes[3 + j]
            })
            .collect();
        let phi = DMatrix::from_iterator(9, 1, truth.iter().map(|&v| wrap(v)));
        let mut usable = vec![true; 9];
        usable[4] = false;
        let out = propagate_coarse_to_nlos(&phi, &g, &layout, &usable).unwrap();
        for m in 0..9 {
            assert!(crate::phase::wrapped_diff(out[(m, 0)], truth[m]).abs() < 1e-12);
        }

        // cut every link of Rx 2
        let mut cut = vec![true; 9];
        for i in 0..3 {
            cut[layout.link_index(i, 2)] = false;
        }
        assert!(matches!(
            propagate_coarse_to_nlos(&phi, &g, &layout, &cut),
            Err(Error::RankDeficient { .. })
        ));
    }
}
