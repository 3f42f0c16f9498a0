//! Synthetic speech-like and noise sources for scene generation without a corpus.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::Rng;

use crate::signal::SAMPLE_RATE;

/// A generated clip with the sample ranges that carry voicing.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechClip {
    pub samples: Vec<f64>,
    pub segments: Vec<Range<usize>>,
}

impl SpeechClip {
    pub fn speech_fraction(&self) -> f64 {
        let active: usize = self.segments.iter().map(|r| r.len()).sum();
        active as f64 / self.samples.len().max(1) as f64
    }
}

/// Harmonic source with a wandering pitch contour, syllable-rate amplitude
/// modulation and pauses. Starts with an utterance; `seconds` is the total length.
pub fn speech_like<R: Rng>(rng: &mut R, seconds: f64) -> SpeechClip {
    let fs = SAMPLE_RATE as f64;
    let len = (seconds * fs).round() as usize;
    let mut samples = vec![0.0; len];
    let mut segments = Vec::new();
    let base_f0 = rng.gen_range(95.0..230.0);
    let formants = [
        rng.gen_range(450.0..850.0),
        rng.gen_range(1000.0..1900.0),
        rng.gen_range(2200.0..3000.0),
    ];
    let mut pos = 0usize;
    while pos < len {
        let dur = ((rng.gen_range(0.35..1.3) * fs) as usize).min(len - pos);
        if dur < (0.1 * fs) as usize {
            break;
        }
        let syllable_rate = rng.gen_range(3.0..6.0);
        let drift = rng.gen_range(-0.25..0.25);
        let gain = rng.gen_range(0.5..1.0);
        let mut phase = 0.0;
        for n in 0..dur {
            let t = n as f64 / fs;
            let frac = n as f64 / dur as f64;
            let f0 = base_f0 * (1.0 + drift * frac + 0.03 * (TAU * 5.0 * t).sin());
            phase += TAU * f0 / fs;
            let mut v = 0.0;
            let mut k = 1.0;
            while k * f0 < 4000.0 {
                let fk = k * f0;
                let env: f64 = formants
                    .iter()
                    .map(|&fm| (-((fk - fm) / 250.0).powi(2)).exp())
                    .sum::<f64>()
                    + 0.15 / k;
                v += env * (k * phase).sin();
                k += 1.0;
            }
            let syl = 0.55 - 0.45 * (TAU * syllable_rate * t).cos();
            let edge = (frac * 20.0).min((1.0 - frac) * 20.0).min(1.0);
            samples[pos + n] = gain * syl * edge * (v + 0.05 * rng.gen_range(-1.0..1.0));
        }
        segments.push(pos..pos + dur);
        pos += dur + (rng.gen_range(0.15..0.5) * fs) as usize;
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let s = 0.5 / peak;
        samples.iter_mut().for_each(|v| *v *= s);
    }
    SpeechClip { samples, segments }
}

/// Low-passed white noise mixed with a slowly modulated hum.
pub fn noise_like<R: Rng>(rng: &mut R, seconds: f64) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let len = (seconds * fs).round() as usize;
    let pole: f64 = rng.gen_range(0.0..0.9);
    let hum = rng.gen_range(50.0..300.0);
    let hum_gain = rng.gen_range(0.0..0.3);
    let mut state = 0.0;
    (0..len)
        .map(|n| {
            state = pole * state + (1.0 - pole) * rng.gen_range(-1.0..1.0);
            let t = n as f64 / fs;
            0.1 * (state + hum_gain * (TAU * hum * t).sin())
        })
        .collect()
}
