//! Weight-bound layer helpers shared by the two models.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{dot, Tensor};
use crate::weights::WeightSet;

/// Inference batch norm folded into a per-channel scale and shift.
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm<T: Scalar> {
    scale: Vec<T>,
    shift: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn load(ws: &WeightSet, prefix: &str, c: usize) -> Result<Self> {
        let eps = T::lit(ws.manifest().norm_eps);
        let g = ws.tensor::<T>(&format!("{prefix}.weight"), &[c])?;
        let b = ws.tensor::<T>(&format!("{prefix}.bias"), &[c])?;
        let m = ws.tensor::<T>(&format!("{prefix}.running_mean"), &[c])?;
        let v = ws.tensor::<T>(&format!("{prefix}.running_var"), &[c])?;
        let mut scale = Vec::with_capacity(c);
        let mut shift = Vec::with_capacity(c);
        for ch in 0..c {
            let s = g.data()[ch] / (v.data()[ch] + eps).sqrt();
            scale.push(s);
            shift.push(b.data()[ch] - m.data()[ch] * s);
        }
        Ok(BatchNorm { scale, shift })
    }

    /// Channel-first, in place.
    pub fn apply(&self, x: &mut Tensor<T>) {
        let c = self.scale.len();
        let per = x.len() / c;
        for (ch, chunk) in x.data_mut().chunks_exact_mut(per).enumerate() {
            let (s, b) = (self.scale[ch], self.shift[ch]);
            for v in chunk {
                *v = *v * s + b;
            }
        }
    }
}

/// Dense layer `(out, in)` plus bias.
#[derive(Debug, Clone)]
pub(crate) struct Linear<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub input: usize,
    pub output: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn load(ws: &WeightSet, prefix: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            w: ws.tensor(&format!("{prefix}.weight"), &[output, input])?,
            b: ws.tensor(&format!("{prefix}.bias"), &[output])?,
            input,
            output,
        })
    }

    /// Applies the layer to each length-`input` row of `x`.
    pub fn rows(&self, x: &[T], out: &mut [T]) {
        let (k, n) = (self.input, self.output);
        let (w, b) = (self.w.data(), self.b.data());
        for (xr, or) in x.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
            for (j, o) in or.iter_mut().enumerate() {
                *o = b[j] + dot(&w[j * k..(j + 1) * k], xr);
            }
        }
    }
}

/// Layer norm over the trailing (channel) axis.
#[derive(Debug, Clone)]
pub(crate) struct LayerNorm<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn load(ws: &WeightSet, prefix: &str, c: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: ws.tensor(&format!("{prefix}.weight"), &[c])?,
            bias: ws.tensor(&format!("{prefix}.bias"), &[c])?,
            eps: T::lit(ws.manifest().norm_eps),
        })
    }

    pub fn rows(&self, x: &[T], out: &mut [T]) {
        crate::tensor::layer_norm_rows(
            x,
            self.gain.len(),
            self.gain.data(),
            self.bias.data(),
            self.eps,
            out,
        );
    }
}

/// Loads a weight and reshapes it (e.g. a 2-D kernel stored as 4-D for a 3-D conv).
pub(crate) fn load_as<T: Scalar>(
    ws: &WeightSet,
    name: &str,
    stored: &[usize],
    as_dims: &[usize],
) -> Result<Tensor<T>> {
    let mut t = ws.tensor::<T>(name, stored)?;
    t.reshape(as_dims)?;
    Ok(t)
}
