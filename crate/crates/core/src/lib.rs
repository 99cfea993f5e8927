//! Joint over-the-air phase synchronization and off-grid sparse imaging for
//! distributed MIMO sensing networks.

pub mod ao;
pub mod channel;
pub mod coarse_sync;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod ogamp;
pub mod phase;
pub mod seed;
pub mod stats;
pub mod sync_refine;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/coarse_sync.md")]
    mod coarse_sync {}
    #[doc = include_str!("../../../book/src/ogamp.md")]
    mod ogamp {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
