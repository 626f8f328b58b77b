//! Multi-channel passive light link: a micro-mirror transmitter, an
//! event-camera receiver model and the codec between them.

pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod modulator;
pub mod optics;
pub mod rx;
pub mod sensor;

pub use error::{Error, Result};
pub use eval::{ber, run_trial, sweep, RatePlan, TrialConfig, TrialResult};
pub use model::*;
pub use modulator::{fill_payloads, mapping_schedule, modulate, FrameSchedule};
pub use optics::{project_channels, OpticalConfig, Pose, ProjectionModel};
pub use rx::{decode_absolute, decode_all, decode_relative, dedup, DecodeMode, DecoderConfig};
pub use sensor::{simulate, SensorConfig, SensorPreset, SensorStats};
