//! Target speaker extraction network: VAD/spectrum fusion, convolutional
//! encoder, stacked cross-band / narrow-band / chunk-attention backbone and a
//! transposed-convolution decoder emitting a 4-channel complex ratio mask.

mod backbone;
mod stream;

pub use backbone::attend_window;
pub use stream::TseState;

use crate::error::{Error, Result};
use crate::nn::BatchNorm;
use crate::scalar::Scalar;
use crate::signal::{ComplexSpectrogram, CrmMask};
use crate::tensor::{conv_into, conv_transpose_into, permute, prelu_channels_first, ConvScratch, ConvSpec, Tensor};
use crate::weights::{TseConfig, WeightSet};

use backbone::Block;

/// Audio frames covered by one video frame (100 fps audio, 25 fps video).
pub const AUDIO_PER_VIDEO: usize = 4;

/// Repeats each video-rate label over its audio frames.
pub fn align_vad(labels: &[bool]) -> Vec<bool> {
    labels
        .iter()
        .flat_map(|&l| std::iter::repeat(l).take(AUDIO_PER_VIDEO))
        .collect()
}

/// `(4, T, F)` network input `[Y_re, Y_im, Y_re * L', Y_im * L']`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedInput<T: Scalar> {
    data: Tensor<T>,
}

impl<T: Scalar> FusedInput<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.data.dims()[1]
    }
}

/// Concatenates the mixture spectrum with its VAD-gated copy.
pub fn fuse<T: Scalar>(y: &ComplexSpectrogram<T>, vad: &[bool]) -> Result<FusedInput<T>> {
    let (t, f) = (y.frames(), y.bins());
    if vad.len() != t {
        return Err(Error::shape(
            "fuse",
            format!("{} VAD frames for a {t}-frame spectrogram", vad.len()),
        ));
    }
    let plane = t * f;
    let mut data = Tensor::zeros(&[4, t, f])?;
    let d = data.data_mut();
    d[..plane].copy_from_slice(y.re());
    d[plane..2 * plane].copy_from_slice(y.im());
    for ti in 0..t {
        let g = if vad[ti] { T::one() } else { T::zero() };
        for fi in 0..f {
            let i = ti * f + fi;
            d[2 * plane + i] = y.re()[i] * g;
            d[3 * plane + i] = y.im()[i] * g;
        }
    }
    Ok(FusedInput { data })
}

/// Encoder outputs, shallowest first; the last one is the backbone input `X'`.
#[derive(Debug, Clone)]
pub struct Encoded<T: Scalar> {
    pub skips: Vec<Tensor<T>>,
}

impl<T: Scalar> Encoded<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.skips.last().expect("at least one stage")
    }
}

#[derive(Debug, Clone)]
struct EncStage<T: Scalar> {
    w: Tensor<T>,
    b: Tensor<T>,
    spec: ConvSpec,
    bn: BatchNorm<T>,
    slope: Tensor<T>,
}

#[derive(Debug, Clone)]
struct DecStage<T: Scalar> {
    w: Tensor<T>,
    b: Tensor<T>,
    /// Crops `(0, k-1)` frames: whole-sequence form.
    spec: ConvSpec,
    /// Crops `(k-1, k-1)` frames: one output frame from a `k`-frame window.
    window_spec: ConvSpec,
    /// `None` for the final tanh stage.
    act: Option<(BatchNorm<T>, Tensor<T>)>,
}

/// Scratch buffers for the TSE forward passes.
#[derive(Debug, Clone)]
pub struct TseWorkspace<T> {
    conv: ConvScratch<T>,
    a: Tensor<T>,
    b: Tensor<T>,
    c: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    gates: Vec<T>,
    scores: Vec<T>,
}

impl<T: Scalar> Default for TseWorkspace<T> {
    fn default() -> Self {
        let e = || Tensor::with_capacity(0);
        TseWorkspace {
            conv: ConvScratch::default(),
            a: e(),
            b: e(),
            c: e(),
            q: e(),
            k: e(),
            v: e(),
            gates: Vec::new(),
            scores: Vec::new(),
        }
    }
}

/// Weights and geometry of the extraction network, cast to `T`.
#[derive(Debug, Clone)]
pub struct TseModel<T: Scalar> {
    cfg: TseConfig,
    enc: Vec<EncStage<T>>,
    blocks: Vec<Block<T>>,
    dec: Vec<DecStage<T>>,
}

impl<T: Scalar> TseModel<T> {
    pub fn load(ws: &WeightSet) -> Result<Self> {
        ws.validate()?;
        let cfg = ws.manifest().tse.clone();
        let (tk, fk, fs) = (cfg.time_kernel, cfg.freq_kernel, cfg.freq_stride);
        let fp = fk / 2;
        let mut enc = Vec::new();
        let mut cin = cfg.input_channels;
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            let p = format!("tse.encoder.{i}");
            enc.push(EncStage {
                w: ws.tensor(&format!("{p}.conv.weight"), &[c, cin, tk, fk])?,
                b: ws.tensor(&format!("{p}.conv.bias"), &[c])?,
                spec: ConvSpec::new(cin, c, &[tk, fk])?
                    .with_stride(&[1, fs])?
                    .with_padding(&[(tk - 1, 0), (fp, fp)])?
                    .causal(),
                bn: BatchNorm::load(ws, &format!("{p}.bn"), c)?,
                slope: ws.tensor(&format!("{p}.prelu.weight"), &[c])?,
            });
            cin = c;
        }
        let blocks = (0..cfg.backbone_blocks)
            .map(|b| Block::load(ws, b, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let n = cfg.encoder_channels.len();
        let mut dec = Vec::new();
        for i in 0..n {
            let cin = cfg.encoder_channels[n - 1 - i];
            let last = i + 1 == n;
            let cout = if last {
                cfg.output_channels
            } else {
                cfg.encoder_channels[n - 2 - i]
            };
            let p = format!("tse.decoder.{i}");
            let base = ConvSpec::new(cin, cout, &[tk, fk])?.with_stride(&[1, fs])?;
            dec.push(DecStage {
                w: ws.tensor(&format!("{p}.deconv.weight"), &[cin, cout, tk, fk])?,
                b: ws.tensor(&format!("{p}.deconv.bias"), &[cout])?,
                spec: base.with_padding(&[(0, tk - 1), (fp, fp)])?,
                window_spec: base.with_padding(&[(tk - 1, tk - 1), (fp, fp)])?,
                act: if last {
                    None
                } else {
                    Some((
                        BatchNorm::load(ws, &format!("{p}.bn"), cout)?,
                        ws.tensor(&format!("{p}.prelu.weight"), &[cout])?,
                    ))
                },
            });
        }
        Ok(TseModel { cfg, enc, blocks, dec })
    }

    pub fn config(&self) -> &TseConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> usize {
        self.blocks.len()
    }

    fn enc_stage(&self, i: usize, x: &Tensor<T>, windowed: bool, conv: &mut ConvScratch<T>, out: &mut Tensor<T>) -> Result<()> {
        let s = &self.enc[i];
        let spec = if windowed { s.spec.without_time_padding() } else { s.spec };
        conv_into(x, &s.w, Some(&s.b), &spec, conv, out)?;
        s.bn.apply(out);
        prelu_channels_first(out, &s.slope)
    }

    fn dec_stage(&self, i: usize, x: &Tensor<T>, windowed: bool, conv: &mut ConvScratch<T>, out: &mut Tensor<T>) -> Result<()> {
        let s = &self.dec[i];
        let spec = if windowed { &s.window_spec } else { &s.spec };
        conv_transpose_into(x, &s.w, Some(&s.b), spec, conv, out)?;
        match &s.act {
            Some((bn, slope)) => {
                bn.apply(out);
                prelu_channels_first(out, slope)
            }
            None => {
                out.map_inplace(|v| v.tanh());
                Ok(())
            }
        }
    }

    /// Encoder over a whole sequence: `(4, T, 161)` to `(64, T, 21)` with skips.
    pub fn encode(&self, x: &FusedInput<T>) -> Result<Encoded<T>> {
        if x.data.dims()[2] != self.cfg.freq_bins {
            return Err(Error::shape(
                "encoder",
                format!("{} bins, expected {}", x.data.dims()[2], self.cfg.freq_bins),
            ));
        }
        let mut conv = ConvScratch::default();
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(self.enc.len());
        for i in 0..self.enc.len() {
            let mut out = Tensor::with_capacity(0);
            let input = if i == 0 { &x.data } else { &skips[i - 1] };
            self.enc_stage(i, input, false, &mut conv, &mut out)?;
            skips.push(out);
        }
        Ok(Encoded { skips })
    }

    fn block_checked(&self, block: usize, x: &Tensor<T>) -> Result<(&Block<T>, Tensor<T>)> {
        let b = self.blocks.get(block).ok_or_else(|| {
            Error::InvalidArgument(format!("block {block} of {}", self.blocks.len()))
        })?;
        let d = x.dims();
        if d.len() != 3 || d[0] != self.cfg.hidden() || d[2] != self.cfg.backbone_freqs() {
            return Err(Error::shape(
                "backbone",
                format!(
                    "input {d:?}, expected ({}, T, {})",
                    self.cfg.hidden(),
                    self.cfg.backbone_freqs()
                ),
            ));
        }
        Ok((b, permute(x, &[1, 2, 0])?))
    }

    /// Cross-band module of `block` on a channel-first `(C, T, F')` tensor.
    pub fn crossband(&self, block: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, mut z) = self.block_checked(block, x)?;
        b.crossband(&mut z, &mut TseWorkspace::default())?;
        permute(&z, &[2, 0, 1])
    }

    /// Narrow-band module of `block` from a zero LSTM state.
    pub fn narrowband(&self, block: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, mut z) = self.block_checked(block, x)?;
        let n = self.cfg.backbone_freqs() * self.cfg.lstm_hidden;
        let (mut h, mut c) = (vec![T::zero(); n], vec![T::zero(); n]);
        b.narrowband(&mut z, &mut h, &mut c, &mut TseWorkspace::default())?;
        permute(&z, &[2, 0, 1])
    }

    /// Chunk attention of `block` from an all-zero cache.
    pub fn chunk_attention(&self, block: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, mut z) = self.block_checked(block, x)?;
        b.attention_offline(&mut z, self.cfg.attn_heads, self.cfg.attn_window, &mut TseWorkspace::default())?;
        permute(&z, &[2, 0, 1])
    }

    /// Query, key and value projections `(T, F', C)` of `block`, for oracles.
    pub fn attention_projections(&self, block: usize, x: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
        let (b, z) = self.block_checked(block, x)?;
        let mut w = TseWorkspace::default();
        b.project(&z, &mut w)?;
        Ok([w.q, w.k, w.v])
    }

    /// Decoder: `(64, T, 21)` backbone output plus skips to a `(4, T, 161)` mask.
    pub fn decode(&self, x2: &Tensor<T>, enc: &Encoded<T>) -> Result<CrmMask<T>> {
        if enc.skips.len() != self.dec.len() {
            return Err(Error::shape("decoder", format!("{} skips for {} stages", enc.skips.len(), self.dec.len())));
        }
        let mut conv = ConvScratch::default();
        let mut d = x2.clone();
        let mut out = Tensor::with_capacity(0);
        let n = self.dec.len();
        for i in 0..n {
            d.add_assign(&enc.skips[n - 1 - i])?;
            self.dec_stage(i, &d, false, &mut conv, &mut out)?;
            std::mem::swap(&mut d, &mut out);
        }
        CrmMask::new(d)
    }

    /// Whole-sequence pass; `vad` holds one label per audio frame.
    pub fn forward(&self, y: &ComplexSpectrogram<T>, vad: &[bool]) -> Result<CrmMask<T>> {
        let x = fuse(y, vad)?;
        let enc = self.encode(&x)?;
        let mut z = enc.output().clone();
        for b in 0..self.blocks.len() {
            z = self.crossband(b, &z)?;
            z = self.narrowband(b, &z)?;
            z = self.chunk_attention(b, &z)?;
        }
        self.decode(&z, &enc)
    }
}
