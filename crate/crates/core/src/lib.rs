//! Dual diffusion bridges for unpaired domain transfer.

pub mod bridge;
pub mod cli;
pub mod clip;
pub mod coupling;
pub mod denoiser;
pub mod error;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod pfode;
pub mod rng;
pub mod schedule;
pub mod synth;

pub use clip::{ChannelStats, LatentClip};
pub use error::{Error, Result};
pub use schedule::{PrecondCoeffs, ScheduleParams};
