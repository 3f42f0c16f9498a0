use std::fs;
use std::path::Path;

use super::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reads a mono 16 kHz WAV (16-bit PCM or 32-bit float).
pub fn read_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<AudioBuffer<T>> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples: Vec<T> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| T::lit(v as f64 / 32768.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(T::from_f32_lossy))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    AudioBuffer::new(samples)
}

/// Writes 16-bit PCM mono at 16 kHz; samples are clipped to [-1, 1).
pub fn write_wav<T: Scalar>(path: impl AsRef<Path>, audio: &AudioBuffer<T>) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in audio.samples() {
        let v = (s.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Writes 32-bit float mono at 16 kHz, lossless for `f32` samples.
pub fn write_wav_f32<T: Scalar>(path: impl AsRef<Path>, audio: &AudioBuffer<T>) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in audio.samples() {
        w.write_sample(s.as_f32()).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Headerless little-endian float32 samples.
pub fn read_raw_f32<T: Scalar>(path: impl AsRef<Path>) -> Result<AudioBuffer<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of float32 samples",
            path.display(),
            bytes.len()
        )));
    }
    AudioBuffer::new(
        bytes
            .chunks_exact(4)
            .map(|c| T::from_f32_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    )
}

pub fn write_raw_f32<T: Scalar>(path: impl AsRef<Path>, audio: &AudioBuffer<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = audio
        .samples()
        .iter()
        .flat_map(|s| s.as_f32().to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f32> = (0..800).map(|n| 0.5 * (n as f32 * 0.05).sin()).collect();
        write_wav(&p, &AudioBuffer::new(x.clone()).unwrap()).unwrap();
        let y: AudioBuffer<f32> = read_wav(&p).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(y.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn float_wav_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let x = AudioBuffer::new(vec![0.1f32, -0.7, 1.5, 2.0e-9]).unwrap();
        write_wav_f32(&p, &x).unwrap();
        assert_eq!(read_wav::<f32>(&p).unwrap(), x);
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav::<f32>(&p).unwrap_err().to_string();
        assert!(err.contains("8000"), "{err}");
    }

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.f32");
        let x = AudioBuffer::new(vec![0.25f32, -1.5, 3.0e-7]).unwrap();
        write_raw_f32(&p, &x).unwrap();
        assert_eq!(read_raw_f32::<f32>(&p).unwrap(), x);
    }
}
