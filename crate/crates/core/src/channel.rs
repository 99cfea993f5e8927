//! Free-space propagation, dictionary construction, node phase offsets and
//! CSI synthesis.
//!
//! Stacked vectors of length `M * K` are subcarrier-major: entry
//! `r = k * M + m` belongs to link `m` on the `k`-th configured subcarrier.
//! Link-by-subcarrier matrices are stored `M x K` (column-major), so their
//! raw slice has the same ordering.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, GridSpec, NodeLayout, Point, Scene};
use crate::seed;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const COINCIDENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformConfig {
    /// Carrier frequency, Hz.
    pub carrier: f64,
    /// Subcarrier spacing, Hz.
    pub spacing: f64,
    /// Subcarrier indices `k`; subcarrier frequency is `carrier + k * spacing`.
    pub subcarriers: Vec<i64>,
    /// Amplitude normalization folded into the reflectivities.
    pub alpha: f64,
    /// Per-entry complex noise variance.
    pub noise_variance: f64,
}

impl WaveformConfig {
    pub fn new(carrier: f64, spacing: f64, subcarriers: Vec<i64>) -> Result<Self> {
        let w = WaveformConfig {
            carrier,
            spacing,
            subcarriers,
            alpha: 1.0,
            noise_variance: 0.0,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier > 0.0 && self.spacing > 0.0) {
            return Err(Error::InvalidWaveform(format!(
                "carrier and spacing must be positive, got {} / {}",
                self.carrier, self.spacing
            )));
        }
        if self.subcarriers.is_empty() {
            return Err(Error::InvalidWaveform("no subcarriers".into()));
        }
        if self.frequencies().iter().any(|&f| f <= 0.0) {
            return Err(Error::InvalidWaveform("non-positive subcarrier frequency".into()));
        }
        if !(self.alpha > 0.0) || self.noise_variance < 0.0 {
            return Err(Error::InvalidWaveform(format!(
                "alpha must be positive and noise variance non-negative, got {} / {}",
                self.alpha, self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn n_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn frequency(&self, k: i64) -> f64 {
        self.carrier + k as f64 * self.spacing
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.subcarriers.iter().map(|&k| self.frequency(k)).collect()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier
    }

    /// Same carrier and spacing on a different subcarrier set.
    pub fn with_subcarriers(&self, subcarriers: Vec<i64>) -> Self {
        WaveformConfig {
            subcarriers,
            ..self.clone()
        }
    }

    /// `count` contiguous subcarriers starting at index 0.
    pub fn contiguous(&self, count: usize) -> Self {
        self.with_subcarriers((0..count as i64).collect())
    }
}

fn check_distinct(p: Point, q: Point) -> Result<f64> {
    let d = dist(p, q);
    if d < COINCIDENT {
        Err(Error::CoincidentGeometry { x: p[0], y: p[1] })
    } else {
        Ok(d)
    }
}

/// Bistatic free-space gain `(1/L) exp(-j 2 pi f tau)` through point `p`.
pub fn propagation_gain(tx: Point, rx: Point, p: Point, freq: f64, alpha: f64) -> Result<Complex64> {
    let d1 = check_distinct(p, tx)?;
    let d2 = check_distinct(p, rx)?;
    Ok(gain_from_distances(d1, d2, freq, alpha))
}

fn gain_from_distances(d1: f64, d2: f64, freq: f64, alpha: f64) -> Complex64 {
    let lambda = SPEED_OF_LIGHT / freq;
    let loss = 4.0 * PI * alpha * d1 * d2 / lambda;
    let tau = (d1 + d2) / SPEED_OF_LIGHT;
    Complex64::from_polar(1.0 / loss, -TAU * freq * tau)
}

/// Spatial gradient `(da/dx, da/dy)` of the gain, keeping only the phase
/// variation (the wavevector sum); amplitude is treated as locally constant.
pub fn gradient_gains(
    tx: Point,
    rx: Point,
    p: Point,
    freq: f64,
    alpha: f64,
) -> Result<(Complex64, Complex64)> {
    let d1 = check_distinct(p, tx)?;
    let d2 = check_distinct(p, rx)?;
    let a = gain_from_distances(d1, d2, freq, alpha);
    Ok(gradient_from(a, tx, rx, p, d1, d2, freq))
}

fn gradient_from(
    a: Complex64,
    tx: Point,
    rx: Point,
    p: Point,
    d1: f64,
    d2: f64,
    freq: f64,
) -> (Complex64, Complex64) {
    let k = TAU * freq / SPEED_OF_LIGHT;
    let gx = (p[0] - tx[0]) / d1 + (p[0] - rx[0]) / d2;
    let gy = (p[1] - tx[1]) / d1 + (p[1] - rx[1]) / d2;
    let f = Complex64::new(0.0, -k) * a;
    (f * gx, f * gy)
}

/// Direct-path response between a Tx and an Rx.
pub fn los_gain(tx: Point, rx: Point, freq: f64) -> Result<Complex64> {
    let d = check_distinct(tx, rx)?;
    let lambda = SPEED_OF_LIGHT / freq;
    let loss = 4.0 * PI * d / lambda;
    Ok(Complex64::from_polar(1.0 / loss, -TAU * freq * d / SPEED_OF_LIGHT))
}

/// Gain matrix `A` and its gradients, one column per pixel, evaluated at
/// (possibly shifted) pixel positions.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub a: DMatrix<Complex64>,
    pub ax: DMatrix<Complex64>,
    pub ay: DMatrix<Complex64>,
    /// Where each column is currently evaluated.
    pub positions: Vec<Point>,
    links: Vec<(Point, Point)>,
    freqs: Vec<f64>,
    alpha: f64,
}

impl Dictionary {
    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.freqs.len()
    }

    fn column(&self, p: Point) -> Result<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> {
        let rows = self.n_rows();
        let mut a = Vec::with_capacity(rows);
        let mut ax = Vec::with_capacity(rows);
        let mut ay = Vec::with_capacity(rows);
        for &f in &self.freqs {
            for &(tx, rx) in &self.links {
                let d1 = check_distinct(p, tx)?;
                let d2 = check_distinct(p, rx)?;
                let g = gain_from_distances(d1, d2, f, self.alpha);
                let (gx, gy) = gradient_from(g, tx, rx, p, d1, d2, f);
                a.push(g);
                ax.push(gx);
                ay.push(gy);
            }
        }
        Ok((a, ax, ay))
    }

    /// Re-evaluates column `n` (gain and both gradients) at `p`.
    pub fn set_column(&mut self, n: usize, p: Point) -> Result<()> {
        let (a, ax, ay) = self.column(p)?;
        self.a.set_column(n, &nalgebra::DVector::from_vec(a));
        self.ax.set_column(n, &nalgebra::DVector::from_vec(ax));
        self.ay.set_column(n, &nalgebra::DVector::from_vec(ay));
        self.positions[n] = p;
        Ok(())
    }

    /// Gain through `p` on every row, without touching the dictionary.
    pub fn gain_vector(&self, p: Point) -> Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(self.n_rows());
        for &f in &self.freqs {
            for &(tx, rx) in &self.links {
                let d1 = check_distinct(p, tx)?;
                let d2 = check_distinct(p, rx)?;
                out.push(gain_from_distances(d1, d2, f, self.alpha));
            }
        }
        Ok(out)
    }
}

pub fn build_dictionary(
    layout: &NodeLayout,
    positions: &[Point],
    waveform: &WaveformConfig,
) -> Result<Dictionary> {
    waveform.validate()?;
    let links: Vec<(Point, Point)> = (0..layout.n_links()).map(|m| layout.link_endpoints(m)).collect();
    let mut dict = Dictionary {
        a: DMatrix::zeros(0, 0),
        ax: DMatrix::zeros(0, 0),
        ay: DMatrix::zeros(0, 0),
        positions: positions.to_vec(),
        links,
        freqs: waveform.frequencies(),
        alpha: waveform.alpha,
    };
    let rows = layout.n_links() * waveform.n_subcarriers();
    let cols: Vec<_> = positions
        .par_iter()
        .map(|&p| dict.column(p))
        .collect::<Result<Vec<_>>>()?;
    let n = positions.len();
    let mut a = DMatrix::zeros(rows, n);
    let mut ax = DMatrix::zeros(rows, n);
    let mut ay = DMatrix::zeros(rows, n);
    for (c, (ca, cx, cy)) in cols.into_iter().enumerate() {
        a.set_column(c, &nalgebra::DVector::from_vec(ca));
        ax.set_column(c, &nalgebra::DVector::from_vec(cx));
        ay.set_column(c, &nalgebra::DVector::from_vec(cy));
    }
    dict.a = a;
    dict.ax = ax;
    dict.ay = ay;
    Ok(dict)
}

/// Ideal direct-path response for every (link, subcarrier), stacked.
pub fn los_channel(layout: &NodeLayout, waveform: &WaveformConfig) -> Result<Vec<Complex64>> {
    let mut h = Vec::with_capacity(layout.n_links() * waveform.n_subcarriers());
    for f in waveform.frequencies() {
        for m in 0..layout.n_links() {
            let (tx, rx) = layout.link_endpoints(m);
            h.push(los_gain(tx, rx, f)?);
        }
    }
    Ok(h)
}

/// Node time offsets and oscillator phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub tx_time: Vec<f64>,
    pub rx_time: Vec<f64>,
    pub tx_lo: Vec<f64>,
    pub rx_lo: Vec<f64>,
}

impl PhaseState {
    /// Perfectly synchronized nodes.
    pub fn perfect(layout: &NodeLayout) -> Self {
        PhaseState {
            tx_time: vec![0.0; layout.n_tx()],
            rx_time: vec![0.0; layout.n_rx()],
            tx_lo: vec![0.0; layout.n_tx()],
            rx_lo: vec![0.0; layout.n_rx()],
        }
    }

    /// Node phases at frequency `f`, Tx then Rx.
    pub fn node_phases(&self, freq: f64) -> Vec<f64> {
        let tx = self
            .tx_time
            .iter()
            .zip(&self.tx_lo)
            .map(|(&t, &lo)| TAU * freq * t + lo);
        let rx = self
            .rx_time
            .iter()
            .zip(&self.rx_lo)
            .map(|(&t, &lo)| TAU * freq * t + lo);
        tx.chain(rx).collect()
    }
}

/// Draws time offsets uniform on `[0, 1/spacing)` and oscillator phases
/// uniform on `[0, 2 pi)`.
pub fn sample_phase_state(seed: u64, waveform: &WaveformConfig, layout: &NodeLayout) -> PhaseState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_max = 1.0 / waveform.spacing;
    let mut times = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.0..t_max)).collect() };
    let tx_time = times(layout.n_tx());
    let rx_time = times(layout.n_rx());
    let mut phases = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.0..TAU)).collect() };
    let tx_lo = phases(layout.n_tx());
    let rx_lo = phases(layout.n_rx());
    PhaseState {
        tx_time,
        rx_time,
        tx_lo,
        rx_lo,
    }
}

/// Composite link phases `Phi[m, k] = phi_tx,i,k - phi_rx,j,k` (unwrapped), as an
/// `M x K` matrix.
pub fn link_phases(state: &PhaseState, layout: &NodeLayout, waveform: &WaveformConfig) -> DMatrix<f64> {
    let freqs = waveform.frequencies();
    let mut phi = DMatrix::zeros(layout.n_links(), freqs.len());
    for (k, &f) in freqs.iter().enumerate() {
        let nodes = state.node_phases(f);
        for m in 0..layout.n_links() {
            let (i, j) = layout.link(m);
            phi[(m, k)] = nodes[i] - nodes[layout.n_tx() + j];
        }
    }
    phi
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: Vec<Complex64>,
    pub h_los: Vec<Complex64>,
    /// Visibility repeated for every subcarrier.
    pub u_tilde: Vec<bool>,
    pub noise_variance: f64,
}

impl MeasurementSet {
    /// Columnar text with header `m,k,re,im`; `k` is the subcarrier index.
    pub fn to_columnar(&self, n_links: usize, subcarriers: &[i64]) -> String {
        let mut s = String::from("m,k,re,im\n");
        for (r, v) in self.y.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", r % n_links, subcarriers[r / n_links], v.re, v.im);
        }
        s
    }

    pub fn from_columnar(text: &str, n_links: usize, subcarriers: &[i64]) -> Result<Vec<Complex64>> {
        let mut y = vec![Complex64::new(0.0, 0.0); n_links * subcarriers.len()];
        let mut seen = 0;
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: ln + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, got {}", f.len())));
            }
            let m: usize = f[0].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let k: i64 = f[1].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let re: f64 = f[2].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let im: f64 = f[3].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let kk = subcarriers
                .iter()
                .position(|&s| s == k)
                .ok_or_else(|| parse_err(format!("unknown subcarrier {k}")))?;
            if m >= n_links {
                return Err(parse_err(format!("link {m} out of range")));
            }
            y[kk * n_links + m] = Complex64::new(re, im);
            seen += 1;
        }
        if seen != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} rows, read {seen}",
                y.len()
            )));
        }
        Ok(y)
    }
}

/// Noiseless scattered field `A(p + dp) x` using exact scatterer positions.
pub fn scattered_field(
    scene: &Scene,
    grid: &GridSpec,
    layout: &NodeLayout,
    waveform: &WaveformConfig,
) -> Result<Vec<Complex64>> {
    let positions = scene.positions(grid);
    let mut out = Vec::with_capacity(layout.n_links() * waveform.n_subcarriers());
    for f in waveform.frequencies() {
        for m in 0..layout.n_links() {
            let (tx, rx) = layout.link_endpoints(m);
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, &p) in scene.scatterers.iter().zip(&positions) {
                acc += propagation_gain(tx, rx, p, f, waveform.alpha)? * s.reflectivity;
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// Noiseless CSI `Phi (h_los o u + A x)` for given link phases.
pub fn clean_csi(
    scene: &Scene,
    grid: &GridSpec,
    layout: &NodeLayout,
    waveform: &WaveformConfig,
    phases: &DMatrix<f64>,
) -> Result<(Vec<Complex64>, Vec<Complex64>, Vec<bool>)> {
    let m_links = layout.n_links();
    if phases.shape() != (m_links, waveform.n_subcarriers()) {
        return Err(Error::DimensionMismatch(format!(
            "phase matrix {:?} vs {} links x {} subcarriers",
            phases.shape(),
            m_links,
            waveform.n_subcarriers()
        )));
    }
    let h_los = los_channel(layout, waveform)?;
    let nlos = scattered_field(scene, grid, layout, waveform)?;
    let u_tilde: Vec<bool> = (0..h_los.len()).map(|r| layout.visibility[r % m_links]).collect();
    let y = (0..h_los.len())
        .map(|r| {
            let los = if u_tilde[r] { h_los[r] } else { Complex64::new(0.0, 0.0) };
            let rot = Complex64::from_polar(1.0, -phases.as_slice()[r]);
            rot * (los + nlos[r])
        })
        .collect();
    Ok((y, h_los, u_tilde))
}

/// Adds circular complex Gaussian noise. Each link draws from its own stream
/// `derive(seed, [NOISE, m])`, so results do not depend on evaluation order.
pub fn add_noise(y: &mut [Complex64], n_links: usize, variance: f64, seed: u64) {
    if variance <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, (0.5 * variance).sqrt()).expect("finite std");
    let n_sub = y.len() / n_links;
    for m in 0..n_links {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::stream::NOISE, m as u64]));
        for k in 0..n_sub {
            let r = k * n_links + m;
            y[r] += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
}

/// Mean per-entry power of a vector.
pub fn mean_power(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>() / v.len() as f64
}

/// Noise variance giving `snr_db` relative to the mean clean power.
pub fn noise_variance_for_snr(clean: &[Complex64], snr_db: f64) -> f64 {
    mean_power(clean) / 10f64.powf(snr_db / 10.0)
}

/// `y = Phi (h_los o u + A_true x) + n` with the noise variance taken from
/// `waveform.noise_variance`.
pub fn synthesize_measurements(
    scene: &Scene,
    grid: &GridSpec,
    layout: &NodeLayout,
    waveform: &WaveformConfig,
    state: &PhaseState,
    seed: u64,
) -> Result<MeasurementSet> {
    let phases = link_phases(state, layout, waveform);
    synthesize_with_phases(scene, grid, layout, waveform, &phases, seed)
}

pub fn synthesize_with_phases(
    scene: &Scene,
    grid: &GridSpec,
    layout: &NodeLayout,
    waveform: &WaveformConfig,
    phases: &DMatrix<f64>,
    seed: u64,
) -> Result<MeasurementSet> {
    let (mut y, h_los, u_tilde) = clean_csi(scene, grid, layout, waveform, phases)?;
    add_noise(&mut y, layout.n_links(), waveform.noise_variance, seed);
    Ok(MeasurementSet {
        y,
        h_los,
        u_tilde,
        noise_variance: waveform.noise_variance,
    })
}
