use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full architecture record stored alongside the weights. The models build
/// their layer graphs from this, never from constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub audio: AudioConfig,
    pub norm_eps: f64,
    pub vvad: VvadConfig,
    pub tse: TseConfig,
    #[serde(default)]
    pub allow_extra_tensors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub video_fps: u32,
    pub audio_frames_per_video: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvadConfig {
    pub lip_size: usize,
    pub stem_channels: usize,
    /// (time, height, width)
    pub stem_kernel: [usize; 3],
    pub stem_stride: [usize; 3],
    /// Symmetric spatial padding of the stem; time padding is always causal.
    pub stem_spatial_pad: usize,
    pub pool_kernel: [usize; 3],
    pub pool_stride: [usize; 3],
    pub pool_spatial_pad: usize,
    pub block_channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    pub temporal_channels: usize,
    pub temporal_kernel: usize,
    pub classifier_hidden: usize,
    pub classes: usize,
    /// Training-time only; inference ignores it.
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TseConfig {
    pub freq_bins: usize,
    pub input_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub time_kernel: usize,
    pub freq_kernel: usize,
    pub freq_stride: usize,
    pub backbone_blocks: usize,
    pub fconv_kernel: usize,
    pub fullband_hidden: usize,
    pub lstm_hidden: usize,
    pub attn_heads: usize,
    pub attn_window: usize,
    pub output_channels: usize,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            audio: AudioConfig {
                sample_rate: 16_000,
                frame_len: 320,
                hop: 160,
                video_fps: 25,
                audio_frames_per_video: 4,
            },
            norm_eps: 1e-5,
            vvad: VvadConfig {
                lip_size: 32,
                stem_channels: 32,
                stem_kernel: [5, 7, 7],
                stem_stride: [1, 2, 2],
                stem_spatial_pad: 3,
                pool_kernel: [1, 3, 3],
                pool_stride: [1, 2, 2],
                pool_spatial_pad: 1,
                block_channels: vec![32, 48, 64, 128],
                block_strides: vec![1, 2, 2, 1],
                temporal_channels: 32,
                temporal_kernel: 5,
                classifier_hidden: 16,
                classes: 2,
                dropout: 0.3,
            },
            tse: TseConfig {
                freq_bins: 161,
                input_channels: 4,
                encoder_channels: vec![16, 32, 64],
                time_kernel: 2,
                freq_kernel: 5,
                freq_stride: 2,
                backbone_blocks: 5,
                fconv_kernel: 5,
                fullband_hidden: 128,
                lstm_hidden: 64,
                attn_heads: 4,
                attn_window: 50,
                output_channels: 4,
            },
            allow_extra_tensors: false,
        }
    }
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(format!("manifest: {m}")));
        let a = &self.audio;
        if a.frame_len == 0 || a.hop == 0 || a.frame_len % a.hop != 0 {
            return bad(format!("frame {} / hop {}", a.frame_len, a.hop));
        }
        if a.sample_rate as usize != a.hop * a.video_fps as usize * a.audio_frames_per_video {
            return bad("audio frame rate must be an integer multiple of the video rate".into());
        }
        let v = &self.vvad;
        if v.block_channels.is_empty() || v.block_channels.len() != v.block_strides.len() {
            return bad("vvad block channels/strides length mismatch".into());
        }
        if v.classes != 2 {
            return bad(format!("vvad classes {} (binary only)", v.classes));
        }
        let t = &self.tse;
        if t.freq_bins != a.frame_len / 2 + 1 {
            return bad(format!("{} bins for frame {}", t.freq_bins, a.frame_len));
        }
        if t.input_channels != 4 || t.output_channels != 4 {
            return bad("tse takes 4 fused channels and emits 4 mask channels".into());
        }
        if t.encoder_channels.is_empty() {
            return bad("empty encoder".into());
        }
        if t.hidden() % t.attn_heads != 0 {
            return bad(format!("hidden {} not divisible by {} heads", t.hidden(), t.attn_heads));
        }
        if t.lstm_hidden != t.hidden() {
            return bad("narrow-band LSTM width must equal the backbone width".into());
        }
        if t.attn_window == 0 || t.time_kernel == 0 || t.freq_kernel % 2 == 0 || t.fconv_kernel % 2 == 0 {
            return bad("kernel/window extents".into());
        }
        // The decoder must restore exactly the encoder input extents.
        let ladder = t.freq_ladder();
        for w in ladder.windows(2) {
            if (w[1] - 1) * t.freq_stride + t.freq_kernel - 2 * (t.freq_kernel / 2) != w[0] {
                return bad(format!("frequency ladder {ladder:?} is not invertible"));
            }
        }
        let mut hw = v.lip_size;
        hw = (hw + 2 * v.stem_spatial_pad - v.stem_kernel[1]) / v.stem_stride[1] + 1;
        hw = (hw + 2 * v.pool_spatial_pad - v.pool_kernel[1]) / v.pool_stride[1] + 1;
        for &s in &v.block_strides {
            hw = (hw + 2 - 3) / s + 1;
        }
        if hw == 0 {
            return bad("vvad spatial ladder collapses".into());
        }
        Ok(())
    }
}

impl TseConfig {
    /// Backbone width (last encoder channel count).
    pub fn hidden(&self) -> usize {
        *self.encoder_channels.last().expect("validated non-empty")
    }

    /// Frequency extent entering each encoder stage, plus the final one.
    pub fn freq_ladder(&self) -> Vec<usize> {
        let mut v = vec![self.freq_bins];
        let pad = self.freq_kernel / 2;
        for _ in &self.encoder_channels {
            let f = *v.last().expect("non-empty");
            v.push((f + 2 * pad - self.freq_kernel) / self.freq_stride + 1);
        }
        v
    }

    /// Frequency extent inside the backbone.
    pub fn backbone_freqs(&self) -> usize {
        *self.freq_ladder().last().expect("non-empty")
    }

    pub fn head_dim(&self) -> usize {
        self.hidden() / self.attn_heads
    }
}

impl VvadConfig {
    /// Spatial side length after stem and pooling.
    pub fn pooled_side(&self) -> usize {
        let s = (self.lip_size + 2 * self.stem_spatial_pad - self.stem_kernel[1]) / self.stem_stride[1] + 1;
        (s + 2 * self.pool_spatial_pad - self.pool_kernel[1]) / self.pool_stride[1] + 1
    }

    pub fn stem_side(&self) -> usize {
        (self.lip_size + 2 * self.stem_spatial_pad - self.stem_kernel[1]) / self.stem_stride[1] + 1
    }
}
