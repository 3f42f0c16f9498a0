//! Visual voice activity detection: lip crops in, per-frame speech logits out.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{load_as, BatchNorm, Linear};
use crate::scalar::Scalar;
use crate::tensor::{avg_pool_trailing_into, conv_into, max_pool_into, ConvScratch, ConvSpec, Tensor};
use crate::weights::{Manifest, WeightSet};

/// Lip crop side length in pixels.
pub const LIP_SIDE: usize = 32;
pub const LIP_PIXELS: usize = LIP_SIDE * LIP_SIDE;

/// Grayscale lip crops at 25 fps, `(Tv, 32, 32)` in `[0, 1]`. An absent
/// speaker is an all-zero frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LipFrameSequence<T> {
    pixels: Vec<T>,
}

impl<T: Scalar> LipFrameSequence<T> {
    pub fn new(pixels: Vec<T>) -> Result<Self> {
        if pixels.is_empty() || pixels.len() % LIP_PIXELS != 0 {
            return Err(Error::shape(
                "lips",
                format!("{} pixels is not a positive multiple of {LIP_PIXELS}", pixels.len()),
            ));
        }
        if let Some(v) = pixels.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidArgument(format!("lip pixel {v} outside [0, 1]")));
        }
        Ok(LipFrameSequence { pixels })
    }

    pub fn absent(frames: usize) -> Self {
        LipFrameSequence {
            pixels: vec![T::zero(); frames.max(1) * LIP_PIXELS],
        }
    }

    pub fn frames(&self) -> usize {
        self.pixels.len() / LIP_PIXELS
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.pixels[t * LIP_PIXELS..(t + 1) * LIP_PIXELS]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.pixels[t * LIP_PIXELS..(t + 1) * LIP_PIXELS]
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }
}

/// Per-frame two-class logits and their argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VadSequence<T> {
    pub logits: Vec<[T; 2]>,
    pub labels: Vec<bool>,
}

impl<T: Scalar> VadSequence<T> {
    pub fn from_logits(logits: Vec<[T; 2]>) -> Self {
        let labels = vvad_classify(&logits);
        VadSequence { logits, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Argmax per frame; ties go to non-speech.
pub fn vvad_classify<T: Scalar>(logits: &[[T; 2]]) -> Vec<bool> {
    logits.iter().map(|l| l[1] > l[0]).collect()
}

#[derive(Debug, Clone)]
struct ResBlock<T: Scalar> {
    conv1: Tensor<T>,
    spec1: ConvSpec,
    bn1: BatchNorm<T>,
    conv2: Tensor<T>,
    spec2: ConvSpec,
    bn2: BatchNorm<T>,
    down: Option<(Tensor<T>, ConvSpec, BatchNorm<T>)>,
}

/// Weights and geometry of the VVAD network, cast to `T`.
#[derive(Debug, Clone)]
pub struct VvadModel<T: Scalar> {
    stem: Tensor<T>,
    stem_spec: ConvSpec,
    stem_bn: BatchNorm<T>,
    pool_spec: ConvSpec,
    blocks: Vec<ResBlock<T>>,
    temporal: Tensor<T>,
    temporal_spec: ConvSpec,
    temporal_bn: BatchNorm<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    lip_history: usize,
    feature_history: usize,
    features: usize,
}

/// Reusable intermediate buffers.
#[derive(Debug, Clone)]
pub struct VvadWorkspace<T> {
    conv: ConvScratch<T>,
    bufs: [Tensor<T>; 4],
}

impl<T: Scalar> Default for VvadWorkspace<T> {
    fn default() -> Self {
        VvadWorkspace {
            conv: ConvScratch::default(),
            bufs: std::array::from_fn(|_| Tensor::with_capacity(0)),
        }
    }
}

impl<T: Scalar> VvadModel<T> {
    pub fn load(ws: &WeightSet) -> Result<Self> {
        ws.validate()?;
        let m: &Manifest = ws.manifest();
        let v = &m.vvad;
        let k = v.stem_kernel;
        let sp = v.stem_spatial_pad;
        let stem_spec = ConvSpec::new(1, v.stem_channels, &k)?
            .with_stride(&v.stem_stride)?
            .with_padding(&[(k[0] - 1, 0), (sp, sp), (sp, sp)])?
            .causal();
        let pp = v.pool_spatial_pad;
        let pool_spec = ConvSpec::new(v.stem_channels, v.stem_channels, &v.pool_kernel)?
            .with_stride(&v.pool_stride)?
            .with_padding(&[(0, 0), (pp, pp), (pp, pp)])?;

        let mut blocks = Vec::new();
        let mut cin = v.stem_channels;
        for (i, (&c, &s)) in v.block_channels.iter().zip(&v.block_strides).enumerate() {
            let p = format!("vvad.blocks.{i}");
            let spec1 = ConvSpec::new(cin, c, &[1, 3, 3])?
                .with_stride(&[1, s, s])?
                .with_padding(&[(0, 0), (1, 1), (1, 1)])?;
            let spec2 = ConvSpec::new(c, c, &[1, 3, 3])?.with_padding(&[(0, 0), (1, 1), (1, 1)])?;
            let down = if c != cin || s != 1 {
                Some((
                    load_as(ws, &format!("{p}.downsample.conv.weight"), &[c, cin, 1, 1], &[c, cin, 1, 1, 1])?,
                    ConvSpec::new(cin, c, &[1, 1, 1])?.with_stride(&[1, s, s])?,
                    BatchNorm::load(ws, &format!("{p}.downsample.bn"), c)?,
                ))
            } else {
                None
            };
            blocks.push(ResBlock {
                conv1: load_as(ws, &format!("{p}.conv1.weight"), &[c, cin, 3, 3], &[c, cin, 1, 3, 3])?,
                spec1,
                bn1: BatchNorm::load(ws, &format!("{p}.bn1"), c)?,
                conv2: load_as(ws, &format!("{p}.conv2.weight"), &[c, c, 3, 3], &[c, c, 1, 3, 3])?,
                spec2,
                bn2: BatchNorm::load(ws, &format!("{p}.bn2"), c)?,
                down,
            });
            cin = c;
        }
        let tk = v.temporal_kernel;
        Ok(VvadModel {
            stem: ws.tensor(
                "vvad.stem.conv.weight",
                &[v.stem_channels, 1, k[0], k[1], k[2]],
            )?,
            stem_spec,
            stem_bn: BatchNorm::load(ws, "vvad.stem.bn", v.stem_channels)?,
            pool_spec,
            blocks,
            temporal: ws.tensor("vvad.temporal.conv.weight", &[v.temporal_channels, cin, tk])?,
            temporal_spec: ConvSpec::new(cin, v.temporal_channels, &[tk])?
                .with_padding(&[(tk - 1, 0)])?
                .causal(),
            temporal_bn: BatchNorm::load(ws, "vvad.temporal.bn", v.temporal_channels)?,
            fc1: Linear::load(ws, "vvad.classifier.0", v.temporal_channels, v.classifier_hidden)?,
            fc2: Linear::load(ws, "vvad.classifier.1", v.classifier_hidden, v.classes)?,
            lip_history: k[0] - 1,
            feature_history: tk - 1,
            features: cin,
        })
    }

    /// Spatial features `V''` of shape `(C, T')`. With `windowed` the input
    /// carries its own temporal history and `T' = T - (stem_kernel_t - 1)`.
    fn features(&self, x: &Tensor<T>, windowed: bool, ws: &mut VvadWorkspace<T>, out: &mut Tensor<T>) -> Result<()> {
        let spec = if windowed {
            self.stem_spec.without_time_padding()
        } else {
            self.stem_spec
        };
        let [a, b, c, d] = &mut ws.bufs;
        conv_into(x, &self.stem, None, &spec, &mut ws.conv, a)?;
        self.stem_bn.apply(a);
        a.map_inplace(crate::tensor::relu);
        max_pool_into(a, &self.pool_spec, b)?;
        for blk in &self.blocks {
            conv_into(b, &blk.conv1, None, &blk.spec1, &mut ws.conv, c)?;
            blk.bn1.apply(c);
            c.map_inplace(crate::tensor::relu);
            conv_into(c, &blk.conv2, None, &blk.spec2, &mut ws.conv, a)?;
            blk.bn2.apply(a);
            match &blk.down {
                Some((w, spec, bn)) => {
                    conv_into(b, w, None, spec, &mut ws.conv, d)?;
                    bn.apply(d);
                    a.add_assign(d)?;
                }
                None => a.add_assign(b)?,
            }
            a.map_inplace(crate::tensor::relu);
            std::mem::swap(a, b);
        }
        avg_pool_trailing_into(b, 2, out)
    }

    /// Temporal conv and classifier over `V''` `(C, T)`; writes one logit pair
    /// per output frame.
    fn head(&self, v2: &Tensor<T>, windowed: bool, ws: &mut VvadWorkspace<T>, logits: &mut Vec<[T; 2]>) -> Result<()> {
        let spec = if windowed {
            self.temporal_spec.without_time_padding()
        } else {
            self.temporal_spec
        };
        let [a, b, c, _] = &mut ws.bufs;
        conv_into(v2, &self.temporal, None, &spec, &mut ws.conv, a)?;
        self.temporal_bn.apply(a);
        a.map_inplace(crate::tensor::relu);
        let (ch, t) = (a.dims()[0], a.dims()[1]);
        b.resize_to(&[t, ch])?;
        for i in 0..ch {
            for j in 0..t {
                b.data_mut()[j * ch + i] = a.data()[i * t + j];
            }
        }
        c.resize_to(&[t, self.fc1.output])?;
        self.fc1.rows(b.data(), c.data_mut());
        c.map_inplace(crate::tensor::relu);
        a.resize_to(&[t, self.fc2.output])?;
        self.fc2.rows(c.data(), a.data_mut());
        logits.clear();
        logits.extend(a.data().chunks_exact(2).map(|p| [p[0], p[1]]));
        Ok(())
    }

    /// Whole-sequence forward pass.
    pub fn forward(&self, lips: &LipFrameSequence<T>) -> Result<VadSequence<T>> {
        let tv = lips.frames();
        let x = Tensor::from_vec(&[1, tv, LIP_SIDE, LIP_SIDE], lips.pixels().to_vec())?;
        let mut ws = VvadWorkspace::default();
        let mut v2 = Tensor::with_capacity(0);
        self.features(&x, false, &mut ws, &mut v2)?;
        let mut logits = Vec::with_capacity(tv);
        self.head(&v2, false, &mut ws, &mut logits)?;
        Ok(VadSequence::from_logits(logits))
    }

    /// Intermediate `V''` `(128, Tv)` of the offline pass, for inspection.
    pub fn spatial_features(&self, lips: &LipFrameSequence<T>) -> Result<Tensor<T>> {
        let x = Tensor::from_vec(&[1, lips.frames(), LIP_SIDE, LIP_SIDE], lips.pixels().to_vec())?;
        let mut v2 = Tensor::with_capacity(0);
        self.features(&x, false, &mut VvadWorkspace::default(), &mut v2)?;
        Ok(v2)
    }

    pub fn new_state(&self) -> VvadState<T> {
        let lw = self.lip_history + 1;
        let fw = self.feature_history + 1;
        let mut s = VvadState {
            lips: Tensor::zeros(&[1, lw, LIP_SIDE, LIP_SIDE]).expect("non-empty"),
            feats: Tensor::zeros(&[self.features, fw]).expect("non-empty"),
            v2: Tensor::with_capacity(self.features),
            logits: Vec::with_capacity(1),
            ws: VvadWorkspace::default(),
            frames: 0,
        };
        s.reset();
        s
    }

    /// One video frame of the streaming pass. Bit-identical to the matching
    /// frame of [`VvadModel::forward`].
    pub fn step(&self, state: &mut VvadState<T>, lip: &[T]) -> Result<[T; 2]> {
        if lip.len() != LIP_PIXELS {
            return Err(Error::shape("vvad step", format!("{} pixels, expected {LIP_PIXELS}", lip.len())));
        }
        if lip.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lip frame"));
        }
        let lw = self.lip_history + 1;
        {
            let d = state.lips.data_mut();
            d.copy_within(LIP_PIXELS.., 0);
            d[(lw - 1) * LIP_PIXELS..].copy_from_slice(lip);
        }
        self.features(&state.lips, true, &mut state.ws, &mut state.v2)?;
        let fw = self.feature_history + 1;
        {
            let f = state.feats.data_mut();
            for (c, row) in f.chunks_exact_mut(fw).enumerate() {
                row.copy_within(1.., 0);
                row[fw - 1] = state.v2.data()[c];
            }
        }
        self.head(&state.feats, true, &mut state.ws, &mut state.logits)?;
        state.frames += 1;
        Ok(state.logits[0])
    }
}

/// Streaming history of one VVAD stream: the last lip frames seen by the
/// stem and the last spatial features seen by the temporal layer.
#[derive(Debug, Clone)]
pub struct VvadState<T> {
    lips: Tensor<T>,
    feats: Tensor<T>,
    v2: Tensor<T>,
    logits: Vec<[T; 2]>,
    ws: VvadWorkspace<T>,
    frames: usize,
}

impl<T: Scalar> VvadState<T> {
    pub fn reset(&mut self) {
        self.lips.fill(T::zero());
        self.feats.fill(T::zero());
        self.frames = 0;
    }

    /// Video frames consumed since creation or the last reset.
    pub fn frames(&self) -> usize {
        self.frames
    }
}

const LIP_MAGIC: &[u8; 4] = b"LIPF";

/// Reads a lip-frame file.
///
/// Layout: `"LIPF"`, `u32` LE frame count, `u8` dtype (0 = u8 pixels scaled
/// by 1/255, 1 = f32 LE), `u8` height, `u8` width, `u8` reserved, then
/// frames in row-major order.
pub fn read_lips<T: Scalar>(path: impl AsRef<Path>) -> Result<LipFrameSequence<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_lips(&bytes).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_lips<T: Scalar>(bytes: &[u8]) -> Result<LipFrameSequence<T>> {
    let bad = |m: String| Error::InvalidArgument(format!("lip file: {m}"));
    if bytes.len() < 12 || &bytes[..4] != LIP_MAGIC {
        return Err(bad("missing LIPF header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4")) as usize;
    let (dtype, h, w) = (bytes[8], bytes[9] as usize, bytes[10] as usize);
    if h != LIP_SIDE || w != LIP_SIDE {
        return Err(bad(format!("{h}x{w} frames, expected {LIP_SIDE}x{LIP_SIDE}")));
    }
    let body = &bytes[12..];
    let pixels: Vec<T> = match dtype {
        0 => {
            if body.len() != n * LIP_PIXELS {
                return Err(bad(format!("{} payload bytes for {n} u8 frames", body.len())));
            }
            body.iter().map(|&b| T::lit(b as f64 / 255.0)).collect()
        }
        1 => {
            if body.len() != n * LIP_PIXELS * 4 {
                return Err(bad(format!("{} payload bytes for {n} f32 frames", body.len())));
            }
            body.chunks_exact(4)
                .map(|c| T::from_f32_lossy(f32::from_le_bytes(c.try_into().expect("4"))))
                .collect()
        }
        d => return Err(bad(format!("unknown dtype {d}"))),
    };
    LipFrameSequence::new(pixels)
}

/// Writes float32 lip frames in the format read by [`read_lips`].
pub fn write_lips<T: Scalar>(path: impl AsRef<Path>, lips: &LipFrameSequence<T>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(12 + lips.pixels().len() * 4);
    out.extend_from_slice(LIP_MAGIC);
    out.extend_from_slice(&(lips.frames() as u32).to_le_bytes());
    out.extend_from_slice(&[1, LIP_SIDE as u8, LIP_SIDE as u8, 0]);
    for v in lips.pixels() {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> VvadModel<f64> {
        VvadModel::load(&WeightSet::init_random(Manifest::default(), 3).unwrap()).unwrap()
    }

    fn random_lips(n: usize, seed: u64) -> LipFrameSequence<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LipFrameSequence::new((0..n * LIP_PIXELS).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(vvad_classify(&[[0.1, 0.9]]), vec![true]);
        assert_eq!(vvad_classify(&[[0.5, 0.5]]), vec![false]);
        assert_eq!(vvad_classify(&[[2.0, 1.0], [-1.0, 3.0], [0.0, 0.0]]), vec![false, true, false]);
    }

    #[test]
    fn ten_frames_give_ten_logit_pairs() {
        let out = model().forward(&random_lips(10, 1)).unwrap();
        assert_eq!(out.logits.len(), 10);
        for l in &out.logits {
            let (a, b) = (l[0].exp(), l[1].exp());
            assert!((a / (a + b) + b / (a + b) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn feature_trace_shapes() {
        let m = model();
        let v2 = m.spatial_features(&random_lips(3, 2)).unwrap();
        assert_eq!(v2.dims(), &[128, 3]);
    }

    #[test]
    fn streaming_matches_offline() {
        let m = model();
        let lips = random_lips(10, 4);
        let offline = m.forward(&lips).unwrap();
        let mut st = m.new_state();
        for t in 0..10 {
            let l = m.step(&mut st, lips.frame(t)).unwrap();
            assert_eq!(l, offline.logits[t], "frame {t}");
        }
    }

    #[test]
    fn zero_bias_zero_input_ties() {
        let mut ws = WeightSet::init_random(Manifest::default(), 5).unwrap();
        let names: Vec<String> = ws.names().map(String::from).collect();
        for n in names {
            if n.starts_with("vvad") && (n.ends_with(".bias") || n.ends_with("running_mean")) {
                ws.get(&n).unwrap();
                let t = Tensor::zeros(ws.get(&n).unwrap().dims()).unwrap();
                ws.insert(n, t);
            }
        }
        let m: VvadModel<f64> = VvadModel::load(&ws).unwrap();
        let out = m.forward(&LipFrameSequence::absent(4)).unwrap();
        for l in &out.logits {
            assert_eq!(l[0], l[1]);
        }
        assert_eq!(out.labels, vec![false; 4]);
    }

    #[test]
    fn lip_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lip");
        let lips = random_lips(3, 9).pixels().iter().map(|&v| v as f32).collect();
        let lips = LipFrameSequence::<f32>::new(lips).unwrap();
        write_lips(&p, &lips).unwrap();
        assert_eq!(read_lips::<f32>(&p).unwrap(), lips);

        let mut raw = b"LIPF".to_vec();
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&[0, 32, 32, 0]);
        raw.extend(std::iter::repeat(255u8).take(LIP_PIXELS));
        let l: LipFrameSequence<f64> = decode_lips(&raw).unwrap();
        assert!(l.pixels().iter().all(|&v| v == 1.0));
        raw.pop();
        assert!(decode_lips::<f64>(&raw).is_err());
    }
}
