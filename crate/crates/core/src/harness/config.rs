//! Experiment configuration, loaded from TOML. Every section and field is
//! optional; omitted values take the simulation defaults below.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ao::AoConfig;
use crate::channel::WaveformConfig;
use crate::coarse_sync::GateConfig;
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, NodePlacement, OffsetLaw};
use crate::ogamp::{GaussPrior, Priors, SolverConfig};

use super::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub waveform: WaveformSection,
    pub priors: PriorSection,
    pub solver: SolverConfig,
    pub ao: AoSection,
    pub sync: SyncSection,
    pub sweep: Option<SweepSection>,
    /// Per-entry SNR of the clean CSI (LOS plus scattered field), dB.
    pub snr_db: f64,
    /// Master seed; trial `t` uses `seed::derive(seed, [t])`.
    pub seed: u64,
    pub trials: usize,
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            waveform: WaveformSection::default(),
            priors: PriorSection::default(),
            solver: SolverConfig::default(),
            ao: AoSection::default(),
            sync: SyncSection::default(),
            sweep: None,
            snr_db: 25.0,
            seed: 1,
            trials: 20,
            methods: vec![Method::GampOffgrid, Method::Ogamp, Method::OgampAo, Method::CoarseOnly],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Pixel pitch (m).
    pub pixel_size: f64,
    /// Pixels per side of the square grid centered on the origin.
    pub grid_side: usize,
    pub targets: usize,
    pub offset_law: OffsetLaw,
    pub reflectivity: (f64, f64),
    pub placement: NodePlacement,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_tx: 10,
            n_rx: 10,
            pixel_size: 0.2,
            grid_side: 10,
            targets: 5,
            offset_law: OffsetLaw::Uniform,
            reflectivity: (0.7, 1.0),
            placement: NodePlacement::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::centered(self.pixel_size, self.grid_side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformSection {
    /// Hz.
    pub carrier: f64,
    /// Subcarrier spacing (Hz).
    pub spacing: f64,
    /// Contiguous subcarriers `0..K` used for coarse synchronization.
    pub coarse_subcarriers: usize,
    /// Subcarriers used for imaging and refinement; defaults to the two
    /// edges of the coarse band.
    pub imaging_subcarriers: Option<Vec<i64>>,
    pub alpha: f64,
}

impl Default for WaveformSection {
    fn default() -> Self {
        WaveformSection {
            carrier: 1e9,
            spacing: 120e3,
            coarse_subcarriers: 256,
            imaging_subcarriers: None,
            alpha: 1.0,
        }
    }
}

impl WaveformSection {
    pub fn imaging_indices(&self) -> Vec<i64> {
        self.imaging_subcarriers
            .clone()
            .unwrap_or_else(|| vec![0, self.coarse_subcarriers as i64 - 1])
    }

    pub fn imaging(&self) -> Result<WaveformConfig> {
        let mut w = WaveformConfig::new(self.carrier, self.spacing, self.imaging_indices())?;
        w.alpha = self.alpha;
        w.validate()?;
        Ok(w)
    }

    pub fn coarse(&self) -> Result<WaveformConfig> {
        let w = self.imaging()?.contiguous(self.coarse_subcarriers);
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    /// Activation probability; defaults to targets / pixels.
    pub eta: Option<f64>,
    pub eta_c: f64,
    pub x_mean: f64,
    pub x_std: f64,
    /// Offset-variable standard deviation (m); defaults to half a pixel.
    pub s_std: Option<f64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            eta: None,
            eta_c: 0.5,
            x_mean: 1.0,
            x_std: 0.1,
            s_std: None,
        }
    }
}

impl PriorSection {
    pub fn resolve(&self, scenario: &ScenarioConfig, pixel_size: f64, noise_variance: f64) -> Priors {
        let n = (scenario.grid_side * scenario.grid_side) as f64;
        let s = GaussPrior {
            mean: Default::default(),
            var: self.s_std.unwrap_or(pixel_size / 2.0).powi(2),
        };
        Priors {
            eta: self.eta.unwrap_or(scenario.targets as f64 / n),
            eta_c: self.eta_c,
            x: GaussPrior {
                mean: self.x_mean.into(),
                var: self.x_std.powi(2),
            },
            sx: s,
            sy: s,
            noise_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoSection {
    pub t_max: usize,
    pub tolerance: f64,
    pub k_phi: f64,
}

impl Default for AoSection {
    fn default() -> Self {
        let d = AoConfig::default();
        AoSection {
            t_max: d.t_max,
            tolerance: d.tolerance,
            k_phi: d.k_phi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Draw node-consistent residual phases directly.
    Injected,
    /// Run LOS gating on the coarse band.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncSection {
    pub mode: SyncMode,
    /// Standard deviation of the injected link residual phase (rad).
    pub sigma_phi: f64,
    /// Standard deviation of the injected link residual delay (s).
    pub delay_std: f64,
    pub gate: GateConfig,
}

impl Default for SyncSection {
    fn default() -> Self {
        SyncSection {
            mode: SyncMode::Injected,
            sigma_phi: 0.2 * PI,
            delay_std: 0.0,
            gate: GateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Snr,
    PixelSize,
    SigmaPhi,
    Iterations,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr_db",
            SweepAxis::PixelSize => "pixel_size",
            SweepAxis::SigmaPhi => "sigma_phi",
            SweepAxis::Iterations => "ao_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl ExperimentConfig {
    /// Axis label and the list of sweep points; a single point at the
    /// configured SNR without a sweep section.
    pub fn points(&self) -> (&'static str, Vec<f64>) {
        match &self.sweep {
            Some(s) => (s.axis.label(), s.values.clone()),
            None => (SweepAxis::Snr.label(), vec![self.snr_db]),
        }
    }

    /// Single-point copy of the configuration with one sweep value applied.
    pub fn at(&self, value: f64) -> ExperimentConfig {
        let mut c = self.clone();
        match self.sweep.as_ref().map(|s| s.axis) {
            None | Some(SweepAxis::Snr) => c.snr_db = value,
            Some(SweepAxis::PixelSize) => c.scenario.pixel_size = value,
            Some(SweepAxis::SigmaPhi) => c.sync.sigma_phi = value,
            Some(SweepAxis::Iterations) => c.ao.t_max = value as usize,
        }
        c.sweep = None;
        c
    }

    pub fn ao_config(&self) -> AoConfig {
        AoConfig {
            t_max: self.ao.t_max,
            tolerance: self.ao.tolerance,
            k_phi: self.ao.k_phi,
            solver: self.solver.clone(),
        }
    }

    /// Range checks; the error names the offending key.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let bad = |key: &str, msg: String| Err((key.to_string(), msg));
        let s = &self.scenario;
        if !(s.pixel_size > 0.0 && s.pixel_size.is_finite()) {
            return bad("pixel_size", format!("must be positive, got {}", s.pixel_size));
        }
        if s.grid_side == 0 || s.n_tx == 0 || s.n_rx == 0 {
            return bad("grid_side", "grid side and node counts must be at least 1".into());
        }
        if s.targets == 0 || s.targets > s.grid_side * s.grid_side {
            return bad("targets", format!("must lie in 1..={}, got {}", s.grid_side * s.grid_side, s.targets));
        }
        let (lo, hi) = s.reflectivity;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("reflectivity", format!("range ({lo}, {hi}) must lie in (0, 1]"));
        }
        let w = &self.waveform;
        if w.coarse_subcarriers < 2 {
            return bad("coarse_subcarriers", format!("need at least 2, got {}", w.coarse_subcarriers));
        }
        if let Err(e) = w.imaging() {
            return bad("imaging_subcarriers", e.to_string());
        }
        if self.sync.mode == SyncMode::Full
            && w.imaging_indices().iter().any(|&k| k < 0 || k >= w.coarse_subcarriers as i64)
        {
            return bad("imaging_subcarriers", "full sync needs imaging subcarriers inside the coarse band".into());
        }
        let p = &self.priors;
        if let Some(eta) = p.eta {
            if !(eta > 0.0 && eta < 1.0) {
                return bad("eta", format!("must lie in (0, 1), got {eta}"));
            }
        }
        if !(p.eta_c > 0.0 && p.eta_c < 1.0) {
            return bad("eta_c", format!("must lie in (0, 1), got {}", p.eta_c));
        }
        if !(p.x_std > 0.0) || p.s_std.is_some_and(|v| !(v > 0.0)) {
            return bad("x_std", "prior standard deviations must be positive".into());
        }
        if let Err(e) = self.solver.validate() {
            return bad("solver", e.to_string());
        }
        if self.ao.t_max == 0 {
            return bad("t_max", "must be at least 1".into());
        }
        if !(self.ao.k_phi > 0.0 && self.ao.k_phi < 1.0) {
            return bad("k_phi", format!("must lie in (0, 1), got {}", self.ao.k_phi));
        }
        if !(self.sync.sigma_phi >= 0.0 && self.sync.delay_std >= 0.0) {
            return bad("sigma_phi", "residual spreads must be non-negative".into());
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db", "must be finite".into());
        }
        if self.trials == 0 {
            return bad("trials", "need at least one trial".into());
        }
        if self.methods.is_empty() {
            return bad("methods", "need at least one method".into());
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() || sw.values.iter().any(|v| !v.is_finite()) {
                return bad("values", "sweep values must be finite and non-empty".into());
            }
            if sw.values.windows(2).any(|w| w[0] >= w[1]) {
                return bad("values", "sweep values must be strictly increasing".into());
            }
            for &v in &sw.values {
                if let Err(e) = self.at(v).validate() {
                    return Err(e);
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a configuration. Errors carry the 1-based line of
/// the offending text when it can be located.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(0);
        Error::Parse {
            line,
            msg: e.message().to_string(),
        }
    })?;
    config.validate().map_err(|(key, msg)| match line_of_key(text, &key) {
        Some(line) => Error::Parse {
            line,
            msg: format!("{key}: {msg}"),
        },
        None => Error::Config(format!("{key}: {msg}")),
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let c = parse_config("[scenario]\nn_tx = 30\nn_rx = 30\n").unwrap();
        assert_eq!(c.scenario.n_tx, 30);
        assert_eq!(c.ao.k_phi, 0.3);
        assert_eq!(c.ao.t_max, 10);
        assert_eq!(c.solver.tolerance, 1e-4);
        assert_eq!(c.priors.eta_c, 0.5);
        assert_eq!(c.waveform.imaging_indices(), vec![0, 255]);
    }

    #[test]
    fn negative_snr_sweep_accepted() {
        let c = parse_config("[sweep]\naxis = \"snr\"\nvalues = [-5.0, 0.0, 5.0]\n").unwrap();
        assert_eq!(c.points().1, vec![-5.0, 0.0, 5.0]);
        assert_eq!(c.at(-5.0).snr_db, -5.0);
    }

    #[test]
    fn rejections_point_at_lines() {
        let e = parse_config("seed = 3\n[scenario]\npixel_size = -0.2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_config("trials = 2\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_config("[sweep]\naxis = \"snr\"\nvalues = [10.0, 5.0]\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(parse_config("methods = [\"magic\"]\n").is_err());
    }

    #[test]
    fn sweep_application() {
        let mut c = ExperimentConfig::default();
        c.sweep = Some(SweepSection {
            axis: SweepAxis::PixelSize,
            values: vec![0.1, 0.3],
        });
        assert_eq!(c.at(0.3).scenario.pixel_size, 0.3);
        c.sweep.as_mut().unwrap().axis = SweepAxis::Iterations;
        assert_eq!(c.at(4.0).ao.t_max, 4);
    }
}
