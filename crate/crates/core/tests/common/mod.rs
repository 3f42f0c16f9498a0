#![allow(dead_code)]

use std::sync::Arc;

use avtse::engine::AvTseModel;
use avtse::signal::AudioBuffer;
use avtse::sim::synth::{noise_like, speech_like};
use avtse::sim::{make_mixture, sample_scene};
use avtse::vvad::{LipFrameSequence, LIP_PIXELS};
use avtse::weights::{Manifest, WeightSet};
use avtse::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn weights(seed: u64) -> WeightSet {
    WeightSet::init_random(Manifest::default(), seed).unwrap()
}

pub fn model<T: Scalar>(seed: u64) -> Arc<AvTseModel<T>> {
    Arc::new(AvTseModel::load(&weights(seed)).unwrap())
}

/// A manifest small enough to corrupt every byte of its archive.
pub fn tiny_manifest() -> Manifest {
    let mut m = Manifest::default();
    m.vvad.stem_channels = 2;
    m.vvad.block_channels = vec![2];
    m.vvad.block_strides = vec![2];
    m.vvad.temporal_channels = 2;
    m.vvad.classifier_hidden = 2;
    m.tse.encoder_channels = vec![2, 4];
    m.tse.backbone_blocks = 1;
    m.tse.fullband_hidden = 2;
    m.tse.lstm_hidden = 4;
    m.tse.attn_heads = 2;
    m.tse.attn_window = 3;
    m
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.gen_range(-amp..amp))).collect()
}

pub fn lips<T: Scalar>(rng: &mut ChaCha8Rng, frames: usize) -> LipFrameSequence<T> {
    LipFrameSequence::new((0..frames * LIP_PIXELS).map(|_| T::lit(rng.gen::<f64>())).collect()).unwrap()
}

/// A simulated mixture of `seconds` (cropped or zero-padded) for `seed`.
pub fn scene_mixture(seed: u64, seconds: f64) -> Vec<f32> {
    let plan = sample_scene(seed);
    let mut r = rng(seed ^ 0x5eed);
    let to32 = |x: Vec<f64>| AudioBuffer::new(x.into_iter().map(|v| v as f32).collect()).unwrap();
    let t = to32(speech_like(&mut r, seconds).samples);
    let i = to32(speech_like(&mut r, seconds).samples);
    let n = to32(noise_like(&mut r, seconds));
    let s = make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &plan.mixture).unwrap();
    let mut mix = s.mixture.into_samples();
    mix.resize((seconds * 16_000.0) as usize, 0.0);
    mix
}
