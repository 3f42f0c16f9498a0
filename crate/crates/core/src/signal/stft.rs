use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioBuffer, ComplexSpectrogram, BINS, FRAME_LEN, HOP};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Precomputed FFTs, periodic Hann window and overlap-add envelope for one
/// frame/hop configuration.
///
/// Synthesis windows every frame again and divides the overlap-added sum by
/// the periodic envelope `sum_k w^2(n + k*hop)`, which gives perfect
/// reconstruction wherever a sample is covered by `frame / hop` frames.
pub struct StftPlan<T: Scalar> {
    frame: usize,
    hop: usize,
    window: Vec<T>,
    envelope: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scratch_len: usize,
}

impl<T: Scalar> std::fmt::Debug for StftPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("frame", &self.frame)
            .field("hop", &self.hop)
            .finish()
    }
}

impl<T: Scalar> StftPlan<T> {
    pub fn new(frame: usize, hop: usize) -> Result<Self> {
        if frame < 2 || hop == 0 || hop > frame || frame % hop != 0 {
            return Err(Error::InvalidArgument(format!(
                "frame {frame} / hop {hop}: hop must divide the frame length"
            )));
        }
        let window: Vec<T> = (0..frame)
            .map(|n| {
                let x = 2.0 * std::f64::consts::PI * n as f64 / frame as f64;
                T::lit(0.5 - 0.5 * x.cos())
            })
            .collect();
        let envelope = (0..hop)
            .map(|n| {
                (0..frame / hop)
                    .map(|k| window[n + k * hop] * window[n + k * hop])
                    .fold(T::zero(), |a, b| a + b)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(frame);
        let inverse = planner.plan_fft_inverse(frame);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(StftPlan {
            frame,
            hop,
            window,
            envelope,
            forward,
            inverse,
            scratch_len,
        })
    }

    /// The 320/160 configuration of the shipped models.
    pub fn standard() -> Self {
        Self::new(FRAME_LEN, HOP).expect("valid constants")
    }

    pub fn frame_len(&self) -> usize {
        self.frame
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.frame / 2 + 1
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    pub fn envelope(&self) -> &[T] {
        &self.envelope
    }

    /// Number of frames for a signal of `len` samples (no padding).
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.frame {
            0
        } else {
            (len - self.frame) / self.hop + 1
        }
    }

    pub fn new_work(&self) -> FftWork<T> {
        FftWork {
            buf: vec![Complex::new(T::zero(), T::zero()); self.frame],
            scratch: vec![Complex::new(T::zero(), T::zero()); self.scratch_len],
            time: vec![T::zero(); self.frame],
        }
    }

    /// Windowed real FFT of one frame into the first `bins` coefficients.
    pub fn analyze_frame(&self, frame: &[T], work: &mut FftWork<T>, re: &mut [T], im: &mut [T]) {
        for ((b, &x), &w) in work.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex::new(x * w, T::zero());
        }
        self.forward.process_with_scratch(&mut work.buf, &mut work.scratch);
        for f in 0..self.bins() {
            re[f] = work.buf[f].re;
            im[f] = work.buf[f].im;
        }
    }

    /// Inverse real FFT of one half spectrum, windowed for overlap-add; the
    /// result lands in `work.time`. Imaginary parts of DC and Nyquist are
    /// ignored, as for any real inverse transform.
    pub fn synthesize_frame(&self, re: &[T], im: &[T], work: &mut FftWork<T>) {
        let n = self.frame;
        let bins = self.bins();
        for f in 0..bins {
            work.buf[f] = Complex::new(re[f], im[f]);
        }
        work.buf[0].im = T::zero();
        if n % 2 == 0 {
            work.buf[n / 2].im = T::zero();
        }
        for f in bins..n {
            work.buf[f] = work.buf[n - f].conj();
        }
        self.inverse.process_with_scratch(&mut work.buf, &mut work.scratch);
        let scale = T::one() / T::from_usize(n).expect("fits");
        for ((t, b), &w) in work.time.iter_mut().zip(&work.buf).zip(&self.window) {
            *t = b.re * scale * w;
        }
    }

    pub fn stft(&self, audio: &[T]) -> Result<ComplexSpectrogram<T>> {
        let frames = self.frames_for(audio.len());
        if frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} samples is shorter than one {}-sample frame",
                audio.len(),
                self.frame
            )));
        }
        let bins = self.bins();
        let mut spec = ComplexSpectrogram::zeros(frames, bins);
        let mut work = self.new_work();
        for t in 0..frames {
            let r = t * bins..(t + 1) * bins;
            let (re, im) = (&mut spec.re[r.clone()], &mut spec.im[r]);
            self.analyze_frame(&audio[t * self.hop..t * self.hop + self.frame], &mut work, re, im);
        }
        Ok(spec)
    }

    /// Overlap-add resynthesis; output has `frame + hop * (T - 1)` samples.
    pub fn istft(&self, spec: &ComplexSpectrogram<T>) -> Result<Vec<T>> {
        if spec.bins() != self.bins() {
            return Err(Error::shape(
                "istft",
                format!("{} bins, plan expects {}", spec.bins(), self.bins()),
            ));
        }
        if spec.frames() == 0 {
            return Err(Error::shape("istft", "no frames"));
        }
        let len = self.frame + self.hop * (spec.frames() - 1);
        let mut acc = vec![T::zero(); len];
        let mut work = self.new_work();
        for t in 0..spec.frames() {
            let (re, im) = spec.frame(t);
            self.synthesize_frame(re, im, &mut work);
            for (a, &v) in acc[t * self.hop..].iter_mut().zip(&work.time) {
                *a += v;
            }
        }
        for (i, a) in acc.iter_mut().enumerate() {
            *a /= self.envelope[i % self.hop];
        }
        Ok(acc)
    }
}

/// Per-caller FFT buffers so the plan itself stays shareable.
#[derive(Debug, Clone)]
pub struct FftWork<T> {
    buf: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
    time: Vec<T>,
}

impl<T> FftWork<T> {
    pub fn time(&self) -> &[T] {
        &self.time
    }
}

/// Streaming overlap-add: each pushed frame completes `hop` output samples.
#[derive(Debug, Clone)]
pub struct OverlapAdd<T> {
    tail: Vec<T>,
    hop: usize,
}

impl<T: Scalar> OverlapAdd<T> {
    pub fn new(plan: &StftPlan<T>) -> Self {
        OverlapAdd {
            tail: vec![T::zero(); plan.frame - plan.hop],
            hop: plan.hop,
        }
    }

    pub fn reset(&mut self) {
        self.tail.iter_mut().for_each(|v| *v = T::zero());
    }

    /// Adds a windowed synthesis frame and writes the `hop` finished samples,
    /// normalized by the envelope, into `out`.
    pub fn push(&mut self, plan: &StftPlan<T>, frame: &[T], out: &mut [T]) {
        let hop = self.hop;
        let keep = self.tail.len();
        for i in 0..hop {
            let v = if i < keep { self.tail[i] } else { T::zero() } + frame[i];
            out[i] = v / plan.envelope[i];
        }
        // shift the pending tail left by one hop and add the new frame's remainder
        for i in 0..keep {
            let carry = if i + hop < keep { self.tail[i + hop] } else { T::zero() };
            self.tail[i] = carry + frame[hop + i];
        }
    }
}

/// STFT with the standard 320-sample Hann frame and 160-sample hop.
pub fn stft<T: Scalar>(audio: &AudioBuffer<T>) -> Result<ComplexSpectrogram<T>> {
    StftPlan::standard().stft(audio.samples())
}

pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>) -> Result<AudioBuffer<T>> {
    if spec.bins() != BINS {
        return Err(Error::shape("istft", format!("{} bins, expected {BINS}", spec.bins())));
    }
    AudioBuffer::new(StftPlan::standard().istft(spec)?)
}
