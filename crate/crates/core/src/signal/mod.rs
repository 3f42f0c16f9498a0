//! Time–frequency front end: framing, STFT/iSTFT, complex ratio masks, audio I/O.

mod io;
mod stft;

pub use io::{read_raw_f32, read_wav, write_raw_f32, write_wav, write_wav_f32};
pub use stft::{istft, stft, FftWork, OverlapAdd, StftPlan};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 320;
pub const HOP: usize = 160;
pub const BINS: usize = FRAME_LEN / 2 + 1;

/// Mono audio at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer<T> {
    samples: Vec<T>,
}

impl<T: Scalar> AudioBuffer<T> {
    pub fn new(samples: Vec<T>) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(AudioBuffer { samples })
    }

    pub fn zeros(len: usize) -> Self {
        AudioBuffer {
            samples: vec![T::zero(); len],
        }
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [T] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// `T x F` complex spectrogram, frame-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    frames: usize,
    bins: usize,
    re: Vec<T>,
    im: Vec<T>,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        ComplexSpectrogram {
            frames,
            bins,
            re: vec![T::zero(); frames * bins],
            im: vec![T::zero(); frames * bins],
        }
    }

    pub fn from_planes(frames: usize, bins: usize, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        if re.len() != frames * bins || im.len() != frames * bins {
            return Err(Error::shape(
                "spectrogram",
                format!("planes of {}/{} for {frames}x{bins}", re.len(), im.len()),
            ));
        }
        Ok(ComplexSpectrogram { frames, bins, re, im })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [T] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [T] {
        &mut self.im
    }

    pub fn frame(&self, t: usize) -> (&[T], &[T]) {
        let r = t * self.bins..(t + 1) * self.bins;
        (&self.re[r.clone()], &self.im[r])
    }

    pub fn magnitude(&self, t: usize, f: usize) -> T {
        let i = t * self.bins + f;
        self.re[i].hypot(self.im[i])
    }

    /// Real and imaginary planes stacked as a `(2, T, F)` tensor.
    pub fn to_stacked(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(2 * self.re.len());
        data.extend_from_slice(&self.re);
        data.extend_from_slice(&self.im);
        Tensor::from_vec(&[2, self.frames, self.bins], data).expect("consistent planes")
    }
}

/// Complex ratio masks for target (channels 0, 1) and interferer (2, 3),
/// stored as a `(4, T, F)` tensor of tanh outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CrmMask<T: Scalar> {
    data: Tensor<T>,
}

impl<T: Scalar> CrmMask<T> {
    pub const TARGET: usize = 0;
    pub const INTERFERER: usize = 1;

    pub fn new(data: Tensor<T>) -> Result<Self> {
        let d = data.dims();
        if d.len() != 3 || d[0] != 4 {
            return Err(Error::shape("crm", format!("mask tensor {d:?}, expected (4, T, F)")));
        }
        if data.data().iter().any(|v| !(v.abs() <= T::one())) {
            return Err(Error::InvalidArgument("mask entries outside [-1, 1]".into()));
        }
        Ok(CrmMask { data })
    }

    /// Identity mask (re = 1, im = 0) for both sources.
    pub fn identity(frames: usize, bins: usize) -> Self {
        let plane = frames * bins;
        let data = Tensor::from_fn(&[4, frames, bins], |i| {
            if (i / plane) % 2 == 0 {
                T::one()
            } else {
                T::zero()
            }
        })
        .expect("non-empty");
        CrmMask { data }
    }

    pub fn frames(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn bins(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    /// `(re, im)` planes of `source` (0 target, 1 interferer).
    pub fn source(&self, source: usize) -> (&[T], &[T]) {
        let plane = self.frames() * self.bins();
        let d = self.data.data();
        (
            &d[2 * source * plane..(2 * source + 1) * plane],
            &d[(2 * source + 1) * plane..(2 * source + 2) * plane],
        )
    }
}

/// Complex multiply of `spec` by the mask of `source`, bin by bin.
pub fn apply_crm<T: Scalar>(
    spec: &ComplexSpectrogram<T>,
    mask: &CrmMask<T>,
    source: usize,
) -> Result<ComplexSpectrogram<T>> {
    if source > 1 {
        return Err(Error::InvalidArgument(format!("mask source {source} (0 or 1)")));
    }
    if mask.frames() != spec.frames || mask.bins() != spec.bins {
        return Err(Error::shape(
            "apply_crm",
            format!(
                "mask {}x{} vs spectrogram {}x{}",
                mask.frames(),
                mask.bins(),
                spec.frames,
                spec.bins
            ),
        ));
    }
    let (mr, mi) = mask.source(source);
    let mut out = ComplexSpectrogram::zeros(spec.frames, spec.bins);
    apply_crm_slices(&spec.re, &spec.im, mr, mi, &mut out.re, &mut out.im);
    Ok(out)
}

#[inline]
pub(crate) fn apply_crm_slices<T: Scalar>(
    re: &[T],
    im: &[T],
    mr: &[T],
    mi: &[T],
    out_re: &mut [T],
    out_im: &mut [T],
) {
    for i in 0..re.len() {
        out_re[i] = re[i] * mr[i] - im[i] * mi[i];
        out_im[i] = re[i] * mi[i] + im[i] * mr[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crm_identity_and_zero() {
        let spec = ComplexSpectrogram::from_planes(2, 3, vec![1.0f32, -2.0, 3.0, 0.5, 0.0, 4.0], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let out = apply_crm(&spec, &CrmMask::identity(2, 3), 0).unwrap();
        assert_eq!(out, spec);
        let zero = CrmMask::new(Tensor::zeros(&[4, 2, 3]).unwrap()).unwrap();
        let out = apply_crm(&spec, &zero, 0).unwrap();
        assert!(out.re().iter().chain(out.im()).all(|v| *v == 0.0));
    }

    #[test]
    fn crm_hand_multiply() {
        let spec = ComplexSpectrogram::from_planes(1, 1, vec![2.0f64], vec![1.0]).unwrap();
        let mask = CrmMask::new(Tensor::from_vec(&[4, 1, 1], vec![0.5, -0.5, 0.0, 0.0]).unwrap()).unwrap();
        let out = apply_crm(&spec, &mask, 0).unwrap();
        assert_eq!(out.re(), &[1.5]);
        assert_eq!(out.im(), &[-0.5]);
    }

    #[test]
    fn crm_shape_and_range_checks() {
        let spec = ComplexSpectrogram::<f32>::zeros(2, 3);
        assert!(apply_crm(&spec, &CrmMask::identity(3, 3), 0).is_err());
        assert!(CrmMask::new(Tensor::from_vec(&[4, 1, 1], vec![1.5f32, 0.0, 0.0, 0.0]).unwrap()).is_err());
        assert!(CrmMask::new(Tensor::<f32>::zeros(&[2, 1, 1]).unwrap()).is_err());
    }
}
