use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::room::{simulate_rir, RoomSpec};
use crate::error::{Error, Result};
use crate::metrics::energy_ratio_db;
use crate::scalar::Scalar;
use crate::signal::{AudioBuffer, SAMPLE_RATE};
use crate::vad::energy_vad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lead {
    Target,
    Interferer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub sir_db: f64,
    pub snr_db: f64,
    /// Fraction of the target's active span shared with the interferer.
    pub overlap_ratio: f64,
    pub lead: Lead,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.sir_db.is_finite() || !self.snr_db.is_finite() {
            return Err(Error::InvalidArgument("SIR and SNR must be finite".into()));
        }
        if !(self.overlap_ratio > 0.0 && self.overlap_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "overlap ratio {} outside (0, 1)",
                self.overlap_ratio
            )));
        }
        Ok(())
    }
}

/// Stems on the mixture timeline; `mixture` is exactly their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample<T> {
    pub mixture: AudioBuffer<T>,
    pub target_reverberant: AudioBuffer<T>,
    pub interferer_reverberant: AudioBuffer<T>,
    pub noise: AudioBuffer<T>,
    /// Energy VAD of the placed target, one label per 40 ms.
    pub target_vad: Vec<bool>,
    pub target_span: Range<usize>,
    pub interferer_span: Range<usize>,
    pub overlap: Range<usize>,
    pub achieved_sir_db: f64,
    pub achieved_snr_db: f64,
}

/// Linear convolution truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |s: &[f64]| {
        let mut v: Vec<Complex<f64>> = s.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Reverberates both talkers in `room` (target at `room.source`, interferer
/// at `interferer_position`), places them with the requested overlap and
/// scales the interferer (SIR over the overlap) and noise (SNR over the file).
pub fn make_mixture<T: Scalar>(
    target: &AudioBuffer<T>,
    interferer: &AudioBuffer<T>,
    noise: &AudioBuffer<T>,
    room: &RoomSpec,
    interferer_position: [f64; 3],
    spec: &MixtureSpec,
) -> Result<MixtureSample<T>> {
    spec.validate()?;
    let min_len = SAMPLE_RATE as usize;
    for (what, clip) in [("target", target), ("interferer", interferer)] {
        if clip.len() <= min_len {
            return Err(Error::InvalidArgument(format!(
                "{what} clip has {} samples, need more than 1 s",
                clip.len()
            )));
        }
    }
    if noise.is_empty() {
        return Err(Error::InvalidArgument("noise clip is empty".into()));
    }
    let len_t = target.len();
    let shared = (spec.overlap_ratio * len_t as f64).floor() as usize;
    let solo = len_t - shared;
    let (total, t_start, i_span) = match spec.lead {
        Lead::Target => (len_t, 0, solo..len_t),
        Lead::Interferer => (solo + len_t, solo, 0..len_t),
    };
    if interferer.len() < i_span.len() {
        return Err(Error::InvalidArgument(format!(
            "interferer clip has {} samples, overlap ratio {} needs {}",
            interferer.len(),
            spec.overlap_ratio,
            i_span.len()
        )));
    }
    let overlap = t_start.max(i_span.start)..(t_start + len_t).min(i_span.end);

    let as_f64 = |b: &AudioBuffer<T>| b.samples().iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    let h_t = simulate_rir(room)?;
    let h_i = simulate_rir(&RoomSpec {
        source: interferer_position,
        ..room.clone()
    })?;
    let rev_t = fft_convolve(&as_f64(target), &h_t);
    let rev_i = fft_convolve(&as_f64(interferer)[..i_span.len()], &h_i);

    let mut t = vec![0.0; total];
    t[t_start..t_start + len_t].copy_from_slice(&rev_t);
    let mut i = vec![0.0; total];
    i[i_span.clone()].copy_from_slice(&rev_i);

    let e_t = energy(&t[overlap.clone()]);
    let e_i = energy(&i[overlap.clone()]);
    if e_t == 0.0 || e_i == 0.0 {
        return Err(Error::InvalidArgument(
            "target or interferer is silent over the overlap region".into(),
        ));
    }
    let g_i = (e_t / e_i / 10f64.powf(spec.sir_db / 10.0)).sqrt();
    i.iter_mut().for_each(|v| *v *= g_i);

    let raw_noise = as_f64(noise);
    let mut n: Vec<f64> = (0..total).map(|k| raw_noise[k % raw_noise.len()]).collect();
    let e_n = energy(&n);
    if e_n == 0.0 {
        return Err(Error::InvalidArgument("noise clip is silent".into()));
    }
    let g_n = (energy(&t) / e_n / 10f64.powf(spec.snr_db / 10.0)).sqrt();
    n.iter_mut().for_each(|v| *v *= g_n);

    let cast = |x: &[f64]| x.iter().map(|&v| T::lit(v)).collect::<Vec<T>>();
    let (t, i, n) = (cast(&t), cast(&i), cast(&n));
    let mix: Vec<T> = (0..total).map(|k| t[k] + i[k] + n[k]).collect();
    let achieved_sir_db = energy_ratio_db(&t, &i, Some(overlap.clone()))?;
    let achieved_snr_db = energy_ratio_db(&t, &n, None)?;
    let target_reverberant = AudioBuffer::new(t)?;
    Ok(MixtureSample {
        target_vad: energy_vad(&target_reverberant),
        mixture: AudioBuffer::new(mix)?,
        target_reverberant,
        interferer_reverberant: AudioBuffer::new(i)?,
        noise: AudioBuffer::new(n)?,
        target_span: t_start..t_start + len_t,
        interferer_span: i_span,
        overlap,
        achieved_sir_db,
        achieved_snr_db,
    })
}

/// Room, talker placement and mixing parameters drawn for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlan {
    /// `room.source` is the target talker.
    pub room: RoomSpec,
    pub interferer_position: [f64; 3],
    pub mixture: MixtureSpec,
}

const WALL_MARGIN: f64 = 0.5;
const MIN_SEPARATION: f64 = 0.5;

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Uniform draws over the training ranges: length and width in 3-8 m at 3 m
/// height, T60 up to 0.6 s, SIR in [-5, 5] dB, SNR in [0, 15] dB, overlap in
/// [0.2, 0.8]. The T60 lower bound is raised above 0.1 s when Sabine's
/// formula would need more than full absorption for the drawn room.
pub fn sample_scene(seed: u64) -> ScenePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [rng.gen_range(3.0..=8.0), rng.gen_range(3.0..=8.0), 3.0];
    let t60_min = (1.05 * RoomSpec::min_t60(dims)).max(0.1);
    let t60 = rng.gen_range(t60_min..=0.6);
    let point = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        [0, 1, 2].map(|a| rng.gen_range(WALL_MARGIN..=dims[a] - WALL_MARGIN))
    };
    let (mic, target, interferer) = loop {
        let (m, t, i) = (point(&mut rng), point(&mut rng), point(&mut rng));
        if dist(m, t) >= MIN_SEPARATION && dist(m, i) >= MIN_SEPARATION && dist(t, i) >= MIN_SEPARATION {
            break (m, t, i);
        }
    };
    let mixture = MixtureSpec {
        sir_db: rng.gen_range(-5.0..=5.0),
        snr_db: rng.gen_range(0.0..=15.0),
        overlap_ratio: rng.gen_range(0.2..=0.8),
        lead: if rng.gen_bool(0.5) { Lead::Target } else { Lead::Interferer },
        seed,
    };
    ScenePlan {
        room: RoomSpec::new(dims, t60, target, mic),
        interferer_position: interferer,
        mixture,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_sum() {
        let x = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let h = [0.5, 0.25, -1.0];
        let y = fft_convolve(&x, &h);
        for n in 0..x.len() {
            let direct: f64 = (0..h.len()).filter(|&k| k <= n).map(|k| h[k] * x[n - k]).sum();
            assert!((y[n] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_sampling_is_seeded() {
        assert_eq!(sample_scene(11), sample_scene(11));
        assert_ne!(sample_scene(11), sample_scene(12));
    }
}
