//! Seeded experiment orchestration: configuration, per-trial scenario
//! construction, the method set and result tables.

mod config;
mod experiment;
mod output;
mod probes;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{
    load_config, parse_config, AoSection, ExperimentConfig, PriorSection, ScenarioConfig, SweepAxis, SweepSection,
    SyncMode, SyncSection, WaveformSection,
};
pub use experiment::{build_trial, inject_residual, run_experiment, run_method, ExperimentOutput, MethodOutcome, Trial};
pub use output::{
    emit_results, read_results, summarize, write_table, CellSummary, Quartiles, ResultRow, TimingRow, RESULTS_FILE, SUMMARY_FILE,
    TIMINGS_FILE,
};

pub use probes::{
    run_crb, run_scaling, run_trace, scaling_solver, spread_subcarriers, CRB_SNR_DB, SCALING_BASE,
    SCALING_DOUBLE_MK, SCALING_DOUBLE_NOISE,
};

use crate::error::Error;

/// Imaging and synchronization pipelines compared by the harness. The
/// `-ideal` variants image with the true link phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Independent-prior message passing on the off-grid model, reporting
    /// pixel centers.
    GampOffgrid,
    /// OG-AMP with gradient updates, no phase refinement.
    Ogamp,
    /// OG-AMP without gradient updates.
    OgampNograd,
    /// OG-AMP inside the alternating phase refinement.
    OgampAo,
    /// Coarse phase estimate only; no imaging.
    CoarseOnly,
    GampIdeal,
    OgampIdeal,
    OgampNogradIdeal,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::GampOffgrid,
        Method::Ogamp,
        Method::OgampNograd,
        Method::OgampAo,
        Method::CoarseOnly,
        Method::GampIdeal,
        Method::OgampIdeal,
        Method::OgampNogradIdeal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GampOffgrid => "gamp-offgrid",
            Method::Ogamp => "ogamp",
            Method::OgampNograd => "ogamp-nograd",
            Method::OgampAo => "ogamp-ao",
            Method::CoarseOnly => "coarse-only",
            Method::GampIdeal => "gamp-ideal",
            Method::OgampIdeal => "ogamp-ideal",
            Method::OgampNogradIdeal => "ogamp-nograd-ideal",
        }
    }

    /// Images with the true phases.
    pub fn ideal(self) -> bool {
        matches!(self, Method::GampIdeal | Method::OgampIdeal | Method::OgampNogradIdeal)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
