//! Blinking-LED marker tracking on event-camera streams.
//!
//! Stages, in pipeline order:
//!
//! 1. [`denoise`]: count-per-bin rejection, then spatiotemporal support.
//! 2. [`blink`]: per-pixel polarity-reversal frequency gate against motion events.
//! 3. [`tracker`]: Gaussian cluster tracking of marker centers.
//! 4. [`deform`]: rod-length magnification, metric displacement, vibration statistics.
//!
//! [`synth`] renders labeled scenes that stand in for a camera, [`io`] holds
//! the file formats and [`pipeline`] wires everything to a [`config`] file. [`bench`] measures
//! per-stage throughput.

pub mod bench;
pub mod blink;
pub mod config;
pub mod deform;
pub mod denoise;
pub mod error;
pub mod event;
pub mod io;
pub mod pipeline;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use event::{Event, EventStream, GroundTruthLabel, LabelClass, LabeledStream, Polarity, StreamMeta};
pub use config::{parse_config, RunConfig};
pub use pipeline::{run_pipeline, RunOutcome, RunReport};
