//! Hidden voice command toolkit: audio that keeps its acoustic features
//! (MFCC-style pipelines) while its waveform is scrambled.
//!
//! The crate bundles the perturbation engine, the feature pipeline used as
//! an offline oracle, an energy VAD, an over-the-air channel model and the
//! query-budgeted attack search.

pub mod attack;
pub mod audio;
pub mod channel;
pub mod dsp;
pub mod error;
pub mod features;
pub mod perturb;
pub mod spectrogram;
pub mod synth;
pub mod vad;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
