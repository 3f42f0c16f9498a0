//! Frame-synchronous runtime binding the VVAD and TSE stages.
//!
//! Each call to [`StreamEngine::process_frame`] takes one 160-sample hop and
//! returns 160 enhanced samples. The analysis window spans the previous hop
//! and the new one, so stream output sample `n` estimates input sample
//! `n - 160`: one hop of index delay, 20 ms of algorithmic latency once the
//! buffering of the incoming hop is included.

use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{apply_crm, apply_crm_slices, OverlapAdd, StftPlan, FRAME_LEN, HOP};
use crate::tse::{align_vad, TseModel, TseState, AUDIO_PER_VIDEO};
use crate::vvad::{LipFrameSequence, VvadModel, VvadState, LIP_PIXELS};
use crate::weights::{Manifest, WeightSet};

/// Both networks plus the STFT plan; immutable and shareable across streams.
#[derive(Debug)]
pub struct AvTseModel<T: Scalar> {
    manifest: Manifest,
    pub vvad: VvadModel<T>,
    pub tse: TseModel<T>,
    plan: StftPlan<T>,
}

impl<T: Scalar> AvTseModel<T> {
    pub fn load(ws: &WeightSet) -> Result<Self> {
        let a = &ws.manifest().audio;
        if a.frame_len != FRAME_LEN || a.hop != HOP {
            return Err(Error::Format(format!(
                "manifest frame {} / hop {} (this build runs {FRAME_LEN} / {HOP})",
                a.frame_len, a.hop
            )));
        }
        Ok(AvTseModel {
            manifest: ws.manifest().clone(),
            vvad: VvadModel::load(ws)?,
            tse: TseModel::load(ws)?,
            plan: StftPlan::standard(),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(&WeightSet::load(path)?)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn plan(&self) -> &StftPlan<T> {
        &self.plan
    }
}

/// Where the per-frame speech activity comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VadMode {
    /// Lip frames through the VVAD network.
    Visual,
    /// Externally supplied video-rate labels.
    Labels,
    /// No visual cue: the target is treated as always active and the engine
    /// acts as a plain enhancer.
    AlwaysActive,
}

/// Video-rate side input accompanying every fourth audio frame.
#[derive(Debug, Clone, Copy)]
pub enum Cue<'a, T> {
    None,
    Lip(&'a [T]),
    Label(bool),
}

/// Snapshot of stream bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMetadata {
    pub mode: VadMode,
    pub audio_frames: u64,
    pub video_frames: u64,
    pub vad_label: bool,
    /// True when no visual cue gates the extraction.
    pub always_active: bool,
}

/// One enhancement stream. Owns all causal state; the model is shared.
#[derive(Debug)]
pub struct StreamEngine<T: Scalar> {
    model: Arc<AvTseModel<T>>,
    mode: VadMode,
    vvad: VvadState<T>,
    tse: TseState<T>,
    ola: OverlapAdd<T>,
    work: crate::signal::FftWork<T>,
    frame: Vec<T>,
    re: Vec<T>,
    im: Vec<T>,
    out_re: Vec<T>,
    out_im: Vec<T>,
    mask: Vec<T>,
    label: bool,
    audio_frames: u64,
    video_frames: u64,
}

impl<T: Scalar> StreamEngine<T> {
    pub fn new(model: Arc<AvTseModel<T>>, mode: VadMode) -> Self {
        let bins = model.plan.bins();
        StreamEngine {
            vvad: model.vvad.new_state(),
            tse: model.tse.new_state(),
            ola: OverlapAdd::new(&model.plan),
            work: model.plan.new_work(),
            frame: vec![T::zero(); FRAME_LEN],
            re: vec![T::zero(); bins],
            im: vec![T::zero(); bins],
            out_re: vec![T::zero(); bins],
            out_im: vec![T::zero(); bins],
            mask: vec![T::zero(); 4 * bins],
            label: mode == VadMode::AlwaysActive,
            audio_frames: 0,
            video_frames: 0,
            mode,
            model,
        }
    }

    pub fn model(&self) -> &Arc<AvTseModel<T>> {
        &self.model
    }

    pub fn metadata(&self) -> StreamMetadata {
        StreamMetadata {
            mode: self.mode,
            audio_frames: self.audio_frames,
            video_frames: self.video_frames,
            vad_label: self.label,
            always_active: self.mode == VadMode::AlwaysActive,
        }
    }

    /// True when the next audio frame must carry a video-rate cue.
    pub fn expects_cue(&self) -> bool {
        self.mode != VadMode::AlwaysActive && self.audio_frames % AUDIO_PER_VIDEO as u64 == 0
    }

    /// Returns the stream to its initial all-zero condition.
    pub fn reset(&mut self) {
        self.vvad.reset();
        self.tse.reset();
        self.ola.reset();
        self.frame.iter_mut().for_each(|v| *v = T::zero());
        self.label = self.mode == VadMode::AlwaysActive;
        self.audio_frames = 0;
        self.video_frames = 0;
    }

    /// Consumes one hop of audio (and the video-rate cue on every fourth
    /// frame) and writes one hop of enhanced audio.
    pub fn process_frame(&mut self, samples: &[T], cue: Cue<'_, T>, out: &mut [T]) -> Result<()> {
        if samples.len() != HOP || out.len() != HOP {
            return Err(Error::Stream(format!(
                "frames are {HOP} samples (got {} in, {} out)",
                samples.len(),
                out.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        let phase = self.audio_frames % AUDIO_PER_VIDEO as u64;
        match (self.mode, cue, phase == 0) {
            (VadMode::AlwaysActive, Cue::None, _) => {}
            (VadMode::Visual, Cue::Lip(lip), true) => {
                if lip.len() != LIP_PIXELS {
                    return Err(Error::Stream(format!("lip frame of {} pixels", lip.len())));
                }
                let logits = self.model.vvad.step(&mut self.vvad, lip)?;
                self.label = logits[1] > logits[0];
                self.video_frames += 1;
            }
            (VadMode::Labels, Cue::Label(l), true) => {
                self.label = l;
                self.video_frames += 1;
            }
            (VadMode::Visual | VadMode::Labels, Cue::None, false) => {}
            (mode, cue, _) => {
                return Err(Error::Stream(format!(
                    "{} at audio frame {} ({mode:?} mode expects {})",
                    match cue {
                        Cue::None => "no cue",
                        Cue::Lip(_) => "lip frame",
                        Cue::Label(_) => "label",
                    },
                    self.audio_frames,
                    match (mode, phase == 0) {
                        (VadMode::AlwaysActive, _) => "no cue",
                        (_, false) => "no cue at this phase",
                        (VadMode::Visual, true) => "a lip frame",
                        (VadMode::Labels, true) => "a label",
                    }
                )));
            }
        }

        let plan = &self.model.plan;
        self.frame.copy_within(HOP.., 0);
        self.frame[FRAME_LEN - HOP..].copy_from_slice(samples);
        plan.analyze_frame(&self.frame, &mut self.work, &mut self.re, &mut self.im);
        self.model
            .tse
            .step(&mut self.tse, &self.re, &self.im, self.label, &mut self.mask)?;
        let bins = plan.bins();
        apply_crm_slices(
            &self.re,
            &self.im,
            &self.mask[..bins],
            &self.mask[bins..2 * bins],
            &mut self.out_re,
            &mut self.out_im,
        );
        plan.synthesize_frame(&self.out_re, &self.out_im, &mut self.work);
        self.ola.push(plan, self.work.time(), out);
        self.audio_frames += 1;
        Ok(())
    }
}

/// Video-rate activity source for the offline pipeline.
#[derive(Debug, Clone, Copy)]
pub enum OfflineCues<'a, T> {
    Lips(&'a LipFrameSequence<T>),
    Labels(&'a [bool]),
    AlwaysActive,
}

/// Offline pipeline output: the full overlap-added signal of `input + 160`
/// samples on the stream timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced<T> {
    samples: Vec<T>,
    len: usize,
    pub labels: Vec<bool>,
}

impl<T: Scalar> Enhanced<T> {
    /// What a stream emits for the same input: delayed by one hop.
    pub fn stream_aligned(&self) -> &[T] {
        &self.samples[..self.len]
    }

    /// Delay-compensated output, sample `n` estimating input sample `n`.
    pub fn time_aligned(&self) -> &[T] {
        &self.samples[HOP..HOP + self.len]
    }
}

/// Whole-signal enhancement. The input is zero-padded to a whole number of
/// hops; the result matches frame-by-frame streaming of the same padded input.
pub fn enhance_offline<T: Scalar>(model: &AvTseModel<T>, audio: &[T], cues: OfflineCues<'_, T>) -> Result<Enhanced<T>> {
    if audio.is_empty() {
        return Err(Error::InvalidArgument("empty audio".into()));
    }
    if audio.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("audio samples"));
    }
    let frames = audio.len().div_ceil(HOP);
    let len = frames * HOP;
    let mut padded = vec![T::zero(); HOP + len];
    padded[HOP..HOP + audio.len()].copy_from_slice(audio);
    let video = frames.div_ceil(AUDIO_PER_VIDEO);

    let video_labels = match cues {
        OfflineCues::AlwaysActive => vec![true; video],
        OfflineCues::Labels(l) => {
            if l.len() < video {
                return Err(Error::InvalidArgument(format!(
                    "{} VAD labels for {video} video frames",
                    l.len()
                )));
            }
            l[..video].to_vec()
        }
        OfflineCues::Lips(lips) => {
            if lips.frames() < video {
                return Err(Error::InvalidArgument(format!(
                    "{} lip frames for {video} video frames",
                    lips.frames()
                )));
            }
            let lips = LipFrameSequence::new(lips.pixels()[..video * LIP_PIXELS].to_vec())?;
            model.vvad.forward(&lips)?.labels
        }
    };
    let mut labels = align_vad(&video_labels);
    labels.truncate(frames);

    let spec = model.plan.stft(&padded)?;
    let mask = model.tse.forward(&spec, &labels)?;
    let target = apply_crm(&spec, &mask, 0)?;
    let samples = model.plan.istft(&target)?;
    Ok(Enhanced {
        samples,
        len,
        labels: video_labels,
    })
}

/// Streams `audio` (padded to whole hops) through a fresh engine.
pub fn enhance_streaming<T: Scalar>(model: Arc<AvTseModel<T>>, audio: &[T], cues: OfflineCues<'_, T>) -> Result<Vec<T>> {
    enhance_streaming_timed(model, audio, cues).map(|(out, _)| out)
}

/// [`enhance_streaming`] plus the wall-clock time of every frame.
pub fn enhance_streaming_timed<T: Scalar>(
    model: Arc<AvTseModel<T>>,
    audio: &[T],
    cues: OfflineCues<'_, T>,
) -> Result<(Vec<T>, Vec<Duration>)> {
    let mode = match cues {
        OfflineCues::Lips(_) => VadMode::Visual,
        OfflineCues::Labels(_) => VadMode::Labels,
        OfflineCues::AlwaysActive => VadMode::AlwaysActive,
    };
    let frames = audio.len().div_ceil(HOP);
    let mut padded = audio.to_vec();
    padded.resize(frames * HOP, T::zero());
    let mut engine = StreamEngine::new(model, mode);
    let mut out = vec![T::zero(); frames * HOP];
    let mut times = Vec::with_capacity(frames);
    for (t, (x, y)) in padded.chunks_exact(HOP).zip(out.chunks_exact_mut(HOP)).enumerate() {
        let cue = if t % AUDIO_PER_VIDEO != 0 {
            Cue::None
        } else {
            let v = t / AUDIO_PER_VIDEO;
            match cues {
                OfflineCues::AlwaysActive => Cue::None,
                OfflineCues::Labels(l) => Cue::Label(*l.get(v).ok_or_else(|| {
                    Error::InvalidArgument(format!("{} VAD labels for video frame {v}", l.len()))
                })?),
                OfflineCues::Lips(lips) => {
                    if v >= lips.frames() {
                        return Err(Error::InvalidArgument(format!(
                            "{} lip frames for video frame {v}",
                            lips.frames()
                        )));
                    }
                    Cue::Lip(lips.frame(v))
                }
            }
        };
        let start = Instant::now();
        engine.process_frame(x, cue, y)?;
        times.push(start.elapsed());
    }
    Ok((out, times))
}

/// Per-frame wall-clock statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    /// Mean frame time over the 10 ms hop.
    pub rtf: f64,
}

impl LatencyStats {
    pub fn from_durations(d: &[Duration]) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::InvalidArgument("latency statistics over 0 frames".into()));
        }
        let mut ms: Vec<f64> = d.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        let p95 = ms[((ms.len() as f64 * 0.95).ceil() as usize).clamp(1, ms.len()) - 1];
        let hop_ms = HOP as f64 * 1e3 / crate::signal::SAMPLE_RATE as f64;
        Ok(LatencyStats {
            frames: ms.len(),
            mean_ms: mean,
            p95_ms: p95,
            max_ms: ms[ms.len() - 1],
            rtf: mean / hop_ms,
        })
    }
}

impl fmt::Display for LatencyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames={}", self.frames)?;
        writeln!(f, "mean_ms={:.4}", self.mean_ms)?;
        writeln!(f, "p95_ms={:.4}", self.p95_ms)?;
        writeln!(f, "max_ms={:.4}", self.max_ms)?;
        write!(f, "rtf={:.4}", self.rtf)
    }
}

/// Times `seconds` of a seeded synthetic workload (noise audio, moving lip
/// patterns) through a fresh visual-mode stream after a short warm-up.
pub fn bench<T: Scalar>(model: Arc<AvTseModel<T>>, seconds: f64, seed: u64) -> Result<LatencyStats> {
    let frames = (seconds * crate::signal::SAMPLE_RATE as f64 / HOP as f64).round() as usize;
    if frames == 0 {
        return Err(Error::InvalidArgument(format!("bench over {seconds} s is 0 frames")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warm = 8;
    let audio: Vec<T> = (0..(frames + warm) * HOP)
        .map(|_| T::lit(rng.gen_range(-0.3..0.3)))
        .collect();
    let lips: Vec<T> = (0..LIP_PIXELS).map(|_| T::lit(rng.gen_range(0.0..1.0))).collect();
    let mut engine = StreamEngine::new(model, VadMode::Visual);
    let mut out = vec![T::zero(); HOP];
    let mut times = Vec::with_capacity(frames);
    for (t, x) in audio.chunks_exact(HOP).enumerate() {
        let cue = if t % AUDIO_PER_VIDEO == 0 {
            Cue::Lip(&lips)
        } else {
            Cue::None
        };
        let start = Instant::now();
        engine.process_frame(x, cue, &mut out)?;
        let el = start.elapsed();
        if t >= warm {
            times.push(el);
        }
    }
    LatencyStats::from_durations(&times)
}
