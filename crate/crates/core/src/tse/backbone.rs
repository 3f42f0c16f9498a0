//! Backbone blocks over a channel-last `(T, F, C)` layout.

use crate::error::{Error, Result};
use crate::nn::{load_as, LayerNorm, Linear};
use crate::scalar::Scalar;
use crate::tensor::{conv_into, dot, lstm_step_into, permute_into, prelu_channels_last, silu, ConvSpec, LstmWeights, Tensor};
use crate::weights::{TseConfig, WeightSet};

use super::TseWorkspace;

#[derive(Debug, Clone)]
struct FConv<T: Scalar> {
    norm: LayerNorm<T>,
    w: Tensor<T>,
    b: Tensor<T>,
    spec: ConvSpec,
    slope: Tensor<T>,
}

#[derive(Debug, Clone)]
struct FullBand<T: Scalar> {
    lin_in: Linear<T>,
    freq_w: Tensor<T>,
    freq_b: Tensor<T>,
    lin_out: Linear<T>,
}

#[derive(Debug, Clone)]
struct Narrow<T: Scalar> {
    norm: LayerNorm<T>,
    w_ih: Tensor<T>,
    w_hh: Tensor<T>,
    b_ih: Tensor<T>,
    b_hh: Tensor<T>,
    lin: Linear<T>,
}

#[derive(Debug, Clone)]
struct Proj<T: Scalar> {
    lin: Linear<T>,
    slope: Tensor<T>,
    norm: LayerNorm<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct Block<T: Scalar> {
    fconv1: FConv<T>,
    full: FullBand<T>,
    fconv2: FConv<T>,
    narrow: Narrow<T>,
    q: Proj<T>,
    k: Proj<T>,
    v: Proj<T>,
    out: Linear<T>,
}

/// Causal attention of one query over a window of `L` key/value rows
/// (oldest first), split into `heads` equal channel groups. `scores` needs
/// room for `L` values.
pub fn attend_window<T: Scalar>(q: &[T], keys: &[T], values: &[T], heads: usize, scores: &mut [T], out: &mut [T]) {
    let c = q.len();
    let d = c / heads;
    let l = keys.len() / c;
    let scale = T::one() / T::from_usize(d).expect("fits").sqrt();
    for h in 0..heads {
        let qh = &q[h * d..(h + 1) * d];
        let mut m = T::neg_infinity();
        for (s, kr) in scores[..l].iter_mut().zip(keys.chunks_exact(c)) {
            *s = dot(qh, &kr[h * d..(h + 1) * d]) * scale;
            m = m.max(*s);
        }
        let mut sum = T::zero();
        for s in &mut scores[..l] {
            *s = (*s - m).exp();
            sum += *s;
        }
        let oh = &mut out[h * d..(h + 1) * d];
        oh.iter_mut().for_each(|o| *o = T::zero());
        for (s, vr) in scores[..l].iter().zip(values.chunks_exact(c)) {
            let p = *s / sum;
            for (o, &v) in oh.iter_mut().zip(&vr[h * d..(h + 1) * d]) {
                *o += p * v;
            }
        }
    }
}

impl<T: Scalar> FConv<T> {
    fn load(ws: &WeightSet, p: &str, cfg: &TseConfig) -> Result<Self> {
        let (h, k) = (cfg.hidden(), cfg.fconv_kernel);
        Ok(FConv {
            norm: LayerNorm::load(ws, &format!("{p}.norm"), h)?,
            w: load_as(ws, &format!("{p}.conv.weight"), &[h, h, k], &[h, h, 1, k])?,
            b: ws.tensor(&format!("{p}.conv.bias"), &[h])?,
            spec: ConvSpec::new(h, h, &[1, k])?.with_padding(&[(0, 0), (k / 2, k / 2)])?,
            slope: ws.tensor(&format!("{p}.prelu.weight"), &[h])?,
        })
    }

    /// `x += PReLU(Conv_F(LN_C(x)))`
    fn apply(&self, x: &mut Tensor<T>, w: &mut TseWorkspace<T>) -> Result<()> {
        let dims = [x.dims()[0], x.dims()[1], x.dims()[2]];
        w.a.resize_to(&dims)?;
        self.norm.rows(x.data(), w.a.data_mut());
        permute_into(&w.a, &[2, 0, 1], &mut w.b)?;
        conv_into(&w.b, &self.w, Some(&self.b), &self.spec, &mut w.conv, &mut w.c)?;
        permute_into(&w.c, &[1, 2, 0], &mut w.a)?;
        prelu_channels_last(w.a.data_mut(), self.slope.data());
        x.add_assign(&w.a)
    }
}

impl<T: Scalar> FullBand<T> {
    fn load(ws: &WeightSet, p: &str, cfg: &TseConfig) -> Result<Self> {
        let (h, hh, f) = (cfg.hidden(), cfg.fullband_hidden, cfg.backbone_freqs());
        Ok(FullBand {
            lin_in: Linear::load(ws, &format!("{p}.in"), h, hh)?,
            freq_w: ws.tensor(&format!("{p}.freq.weight"), &[hh, f, f])?,
            freq_b: ws.tensor(&format!("{p}.freq.bias"), &[hh, f])?,
            lin_out: Linear::load(ws, &format!("{p}.out"), hh, h)?,
        })
    }

    /// `x += SiLU(Lin_out(FreqLin(SiLU(Lin_in(x)))))`, one F x F map per
    /// expanded channel.
    fn apply(&self, x: &mut Tensor<T>, w: &mut TseWorkspace<T>) -> Result<()> {
        let (t, f) = (x.dims()[0], x.dims()[1]);
        let hh = self.lin_in.output;
        w.a.resize_to(&[t, f, hh])?;
        self.lin_in.rows(x.data(), w.a.data_mut());
        w.a.map_inplace(silu);
        permute_into(&w.a, &[0, 2, 1], &mut w.b)?;
        w.c.resize_to(&[t, hh, f])?;
        let (fw, fb) = (self.freq_w.data(), self.freq_b.data());
        for (src, dst) in w.b.data().chunks_exact(hh * f).zip(w.c.data_mut().chunks_exact_mut(hh * f)) {
            for i in 0..hh {
                let row = &src[i * f..(i + 1) * f];
                let wi = &fw[i * f * f..(i + 1) * f * f];
                for (g, o) in dst[i * f..(i + 1) * f].iter_mut().enumerate() {
                    *o = fb[i * f + g] + dot(&wi[g * f..(g + 1) * f], row);
                }
            }
        }
        permute_into(&w.c, &[0, 2, 1], &mut w.a)?;
        w.b.resize_to(&[t, f, self.lin_out.output])?;
        self.lin_out.rows(w.a.data(), w.b.data_mut());
        w.b.map_inplace(silu);
        x.add_assign(&w.b)
    }
}

impl<T: Scalar> Proj<T> {
    fn load(ws: &WeightSet, p: &str, h: usize) -> Result<Self> {
        Ok(Proj {
            lin: Linear::load(ws, &format!("{p}.linear"), h, h)?,
            slope: ws.tensor(&format!("{p}.prelu.weight"), &[h])?,
            norm: LayerNorm::load(ws, &format!("{p}.norm"), h)?,
        })
    }

    /// `LN(PReLU(Linear(x)))` row by row; `tmp` is scratch of the same size.
    fn apply(&self, x: &[T], tmp: &mut [T], out: &mut [T]) {
        self.lin.rows(x, tmp);
        prelu_channels_last(tmp, self.slope.data());
        self.norm.rows(tmp, out);
    }
}

impl<T: Scalar> Block<T> {
    pub fn load(ws: &WeightSet, b: usize, cfg: &TseConfig) -> Result<Self> {
        let p = format!("tse.blocks.{b}");
        let h = cfg.hidden();
        let lh = cfg.lstm_hidden;
        let q = format!("{p}.narrow");
        Ok(Block {
            fconv1: FConv::load(ws, &format!("{p}.cross.fconv1"), cfg)?,
            full: FullBand::load(ws, &format!("{p}.cross.full"), cfg)?,
            fconv2: FConv::load(ws, &format!("{p}.cross.fconv2"), cfg)?,
            narrow: Narrow {
                norm: LayerNorm::load(ws, &format!("{q}.norm"), h)?,
                w_ih: ws.tensor(&format!("{q}.lstm.weight_ih"), &[4 * lh, h])?,
                w_hh: ws.tensor(&format!("{q}.lstm.weight_hh"), &[4 * lh, lh])?,
                b_ih: ws.tensor(&format!("{q}.lstm.bias_ih"), &[4 * lh])?,
                b_hh: ws.tensor(&format!("{q}.lstm.bias_hh"), &[4 * lh])?,
                lin: Linear::load(ws, &format!("{q}.linear"), lh, h)?,
            },
            q: Proj::load(ws, &format!("{p}.attn.q"), h)?,
            k: Proj::load(ws, &format!("{p}.attn.k"), h)?,
            v: Proj::load(ws, &format!("{p}.attn.v"), h)?,
            out: Linear::load(ws, &format!("{p}.attn.out"), h, h)?,
        })
    }

    /// Cross-band module: FConv, full-band linear, FConv. Frames are independent.
    pub fn crossband(&self, x: &mut Tensor<T>, w: &mut TseWorkspace<T>) -> Result<()> {
        self.fconv1.apply(x, w)?;
        self.full.apply(x, w)?;
        self.fconv2.apply(x, w)
    }

    /// Narrow-band module: per-frequency LSTM over time with state `(h, c)`
    /// of shape `(F, H)` each, updated in place.
    pub fn narrowband(&self, x: &mut Tensor<T>, h: &mut [T], c: &mut [T], w: &mut TseWorkspace<T>) -> Result<()> {
        let (t, f, ch) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let n = &self.narrow;
        let lh = n.w_hh.dims()[1];
        let lw = LstmWeights {
            w_ih: &n.w_ih,
            w_hh: &n.w_hh,
            b_ih: &n.b_ih,
            b_hh: &n.b_hh,
        };
        w.a.resize_to(&[t, f, ch])?;
        n.norm.rows(x.data(), w.a.data_mut());
        w.b.resize_to(&[t, f, lh])?;
        w.gates.resize(4 * lh, T::zero());
        for ti in 0..t {
            for fi in 0..f {
                let hs = &mut h[fi * lh..(fi + 1) * lh];
                let cs = &mut c[fi * lh..(fi + 1) * lh];
                let row = (ti * f + fi) * ch;
                lstm_step_into(&w.a.data()[row..row + ch], hs, cs, lw, &mut w.gates)?;
                let o = (ti * f + fi) * lh;
                w.b.data_mut()[o..o + lh].copy_from_slice(hs);
            }
        }
        w.c.resize_to(&[t, f, ch])?;
        n.lin.rows(w.b.data(), w.c.data_mut());
        x.add_assign(&w.c)
    }

    /// Query/key/value projections of every row of `x` into `w.q`, `w.k`, `w.v`.
    pub fn project(&self, x: &Tensor<T>, w: &mut TseWorkspace<T>) -> Result<()> {
        let &[t, f, c] = x.dims() else {
            return Err(Error::shape("project", format!("rank {} input", x.dims().len())));
        };
        let dims = [t, f, c];
        for t in [&mut w.a, &mut w.q, &mut w.k, &mut w.v] {
            t.resize_to(&dims)?;
        }
        self.q.apply(x.data(), w.a.data_mut(), w.q.data_mut());
        self.k.apply(x.data(), w.a.data_mut(), w.k.data_mut());
        self.v.apply(x.data(), w.a.data_mut(), w.v.data_mut());
        Ok(())
    }

    /// `x += Linear_out(attended)` where `w.b` holds the attended rows.
    pub fn attention_output(&self, x: &mut Tensor<T>, w: &mut TseWorkspace<T>) -> Result<()> {
        w.c.resize_to(x.dims())?;
        self.out.rows(w.b.data(), w.c.data_mut());
        x.add_assign(&w.c)
    }

    /// Whole-sequence chunk attention with a zero-initialized window of `l` frames.
    pub fn attention_offline(&self, x: &mut Tensor<T>, heads: usize, l: usize, w: &mut TseWorkspace<T>) -> Result<()> {
        let (t, f, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        self.project(x, w)?;
        // per frequency, l - 1 zero frames followed by the sequence
        let span = l - 1 + t;
        let mut kp = vec![T::zero(); f * span * c];
        let mut vp = vec![T::zero(); f * span * c];
        for ti in 0..t {
            for fi in 0..f {
                let src = (ti * f + fi) * c;
                let dst = (fi * span + l - 1 + ti) * c;
                kp[dst..dst + c].copy_from_slice(&w.k.data()[src..src + c]);
                vp[dst..dst + c].copy_from_slice(&w.v.data()[src..src + c]);
            }
        }
        w.b.resize_to(&[t, f, c])?;
        w.scores.resize(l, T::zero());
        for ti in 0..t {
            for fi in 0..f {
                let row = (ti * f + fi) * c;
                let win = (fi * span + ti) * c..(fi * span + ti + l) * c;
                attend_window(
                    &w.q.data()[row..row + c],
                    &kp[win.clone()],
                    &vp[win],
                    heads,
                    &mut w.scores,
                    &mut w.b.data_mut()[row..row + c],
                );
            }
        }
        self.attention_output(x, w)
    }
}
