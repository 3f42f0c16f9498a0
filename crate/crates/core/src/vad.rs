//! Ground-truth voice activity from signal energy, label corruption for
//! training robustness, and binary classification scores.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::AudioBuffer;

/// Samples per 40 ms label frame.
pub const VAD_FRAME: usize = 640;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyVadConfig {
    /// Speech iff frame RMS exceeds `threshold` times the noise floor.
    pub threshold: f64,
    /// Quantile of frame RMS used as the noise floor estimate.
    pub floor_quantile: f64,
    /// Lower bound on the noise floor, so digital silence stays silent.
    pub min_floor: f64,
    pub hangover: usize,
}

impl Default for EnergyVadConfig {
    fn default() -> Self {
        EnergyVadConfig {
            threshold: 3.0,
            floor_quantile: 0.1,
            min_floor: 1e-5,
            hangover: 2,
        }
    }
}

pub fn frame_rms<T: Scalar>(audio: &AudioBuffer<T>) -> Vec<f64> {
    audio
        .samples()
        .chunks(VAD_FRAME)
        .map(|c| (c.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / VAD_FRAME as f64).sqrt())
        .collect()
}

pub fn energy_vad<T: Scalar>(audio: &AudioBuffer<T>) -> Vec<bool> {
    energy_vad_with(audio, &EnergyVadConfig::default())
}

/// One label per started 640-sample frame.
pub fn energy_vad_with<T: Scalar>(audio: &AudioBuffer<T>, cfg: &EnergyVadConfig) -> Vec<bool> {
    let rms = frame_rms(audio);
    if rms.is_empty() {
        return Vec::new();
    }
    let mut sorted = rms.clone();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[((sorted.len() - 1) as f64 * cfg.floor_quantile).floor() as usize];
    let theta = cfg.threshold * q.max(cfg.min_floor);
    let raw: Vec<bool> = rms.iter().map(|&r| r > theta).collect();
    let mut out = raw.clone();
    let mut since_speech = usize::MAX;
    for (i, &s) in raw.iter().enumerate() {
        if s {
            since_speech = 0;
        } else if since_speech < cfg.hangover {
            since_speech += 1;
            out[i] = true;
        }
    }
    out
}

/// Label corruption: onset delays, then independent flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadAugmentConfig {
    /// Each onset is delayed by a uniform draw from `0..=delay_frames`.
    pub delay_frames: usize,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for VadAugmentConfig {
    fn default() -> Self {
        VadAugmentConfig {
            delay_frames: 5,
            flip_prob: 0.05,
            seed: 0,
        }
    }
}

/// Delays every 0->1 transition (never past the end of its run, so offsets
/// stay put), then flips each frame with `flip_prob`.
pub fn augment_vad(labels: &[bool], cfg: &VadAugmentConfig) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&cfg.flip_prob) {
        return Err(Error::InvalidArgument(format!("flip_prob {} outside [0, 1]", cfg.flip_prob)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = labels.to_vec();
    let mut i = 1;
    while i < labels.len() {
        if labels[i] && !labels[i - 1] {
            let run = labels[i..].iter().take_while(|&&v| v).count();
            let d = rng.gen_range(0..=cfg.delay_frames).min(run - 1);
            out[i..i + d].iter_mut().for_each(|v| *v = false);
            i += run;
        } else {
            i += 1;
        }
    }
    for v in out.iter_mut() {
        if rng.gen_bool(cfg.flip_prob) {
            *v = !*v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Precision or recall had a zero denominator and was reported as 1.0.
    pub degenerate: bool,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

/// Speech is the positive class.
pub fn vad_metrics(pred: &[bool], truth: &[bool]) -> Result<VadMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} frames, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let accuracy = ratio(tp + tn, pred.len());
    Ok(VadMetrics {
        accuracy,
        precision,
        recall,
        degenerate,
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fneg,
    })
}

/// One `0`/`1` character per frame followed by a newline.
pub fn format_labels(labels: &[bool]) -> String {
    let mut s: String = labels.iter().map(|&v| if v { '1' } else { '0' }).collect();
    s.push('\n');
    s
}

pub fn parse_labels(text: &str) -> Result<Vec<bool>> {
    text.trim_end_matches(['\n', '\r'])
        .chars()
        .enumerate()
        .map(|(i, c)| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Format(format!("label {i}: unexpected character {other:?}"))),
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[bool]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_labels(labels)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
