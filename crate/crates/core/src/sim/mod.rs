//! Scene synthesis: image-method room responses, reverberant mixing at a
//! prescribed SIR/SNR with sparse overlap, and scene directories.

mod mixture;
mod room;
pub mod scene;
pub mod synth;

pub use mixture::{fft_convolve, make_mixture, sample_scene, Lead, MixtureSample, MixtureSpec, ScenePlan};
pub use room::{decay_time_60, schroeder_curve, simulate_rir, RoomSpec, SPEED_OF_SOUND};
