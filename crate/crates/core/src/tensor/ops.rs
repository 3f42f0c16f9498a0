use super::{ConvSpec, Tensor, MAX_RANK, MAX_SPATIAL};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dot product with eight independent accumulators so the compiler can keep
/// the reduction in vector registers.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// `y = x W^T + b` over the last axis; `W` is `(out, in)`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut out = Tensor::with_capacity(0);
    linear_into(x, w, b, &mut out)?;
    Ok(out)
}

pub fn linear_into<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    out: &mut Tensor<T>,
) -> Result<()> {
    let xd = x.dims();
    let k = *xd.last().expect("rank >= 1");
    let wd = w.dims();
    if wd.len() != 2 || wd[1] != k {
        return Err(Error::shape(
            "linear",
            format!("weight {wd:?} for input feature size {k}"),
        ));
    }
    let n = wd[0];
    if let Some(b) = b {
        if b.dims() != [n] {
            return Err(Error::shape("linear", format!("bias {:?}, expected [{n}]", b.dims())));
        }
    }
    let mut od = [0; MAX_RANK];
    od[..xd.len()].copy_from_slice(xd);
    od[xd.len() - 1] = n;
    out.resize_to(&od[..xd.len()])?;
    linear_rows(x.data(), k, w.data(), n, b.map(|b| b.data()), out.data_mut());
    Ok(())
}

/// Slice form of [`linear`]: `x` holds rows of length `k`.
#[inline]
pub(crate) fn linear_rows<T: Scalar>(x: &[T], k: usize, w: &[T], n: usize, b: Option<&[T]>, out: &mut [T]) {
    for (xr, or) in x.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (j, o) in or.iter_mut().enumerate() {
            let bias = b.map_or(T::zero(), |b| b[j]);
            *o = bias + dot(&w[j * k..(j + 1) * k], xr);
        }
    }
}

/// Borrowed LSTM parameters in PyTorch layout, gate order (input, forget, cell, output).
#[derive(Clone, Copy)]
pub struct LstmWeights<'a, T> {
    pub w_ih: &'a Tensor<T>,
    pub w_hh: &'a Tensor<T>,
    pub b_ih: &'a Tensor<T>,
    pub b_hh: &'a Tensor<T>,
}

impl<T: Scalar> LstmWeights<'_, T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.dims()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.dims()[1]
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let ok = self.w_hh.dims() == [4 * h, h]
            && self.w_ih.dims().len() == 2
            && self.w_ih.dims()[0] == 4 * h
            && self.b_ih.dims() == [4 * h]
            && self.b_hh.dims() == [4 * h];
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "lstm",
                format!(
                    "w_ih {:?} w_hh {:?} b_ih {:?} b_hh {:?}",
                    self.w_ih.dims(),
                    self.w_hh.dims(),
                    self.b_ih.dims(),
                    self.b_hh.dims()
                ),
            ))
        }
    }
}

/// One LSTM cell update, returning `(h', c')`.
pub fn lstm_step<T: Scalar>(
    x: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
    w: LstmWeights<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    w.validate()?;
    let hid = w.hidden();
    if x.len() != w.input() || h.len() != hid || c.len() != hid {
        return Err(Error::shape(
            "lstm",
            format!(
                "x {:?} h {:?} c {:?} for input {} hidden {hid}",
                x.dims(),
                h.dims(),
                c.dims(),
                w.input()
            ),
        ));
    }
    let mut h2 = h.clone();
    let mut c2 = c.clone();
    let mut gates = vec![T::zero(); 4 * hid];
    lstm_step_into(x.data(), h2.data_mut(), c2.data_mut(), w, &mut gates)?;
    Ok((h2, c2))
}

/// In-place LSTM update of `h` and `c`. `gates` is scratch of length `4 * hidden`.
pub fn lstm_step_into<T: Scalar>(
    x: &[T],
    h: &mut [T],
    c: &mut [T],
    w: LstmWeights<'_, T>,
    gates: &mut [T],
) -> Result<()> {
    if !(x.iter().all(|v| v.is_finite())
        && h.iter().all(|v| v.is_finite())
        && c.iter().all(|v| v.is_finite()))
    {
        return Err(Error::NonFinite("lstm input/state"));
    }
    let hid = h.len();
    let k = x.len();
    let (wi, wh, bi, bh) = (w.w_ih.data(), w.w_hh.data(), w.b_ih.data(), w.b_hh.data());
    for (g, out) in gates.iter_mut().enumerate().take(4 * hid) {
        *out = (bi[g] + dot(&wi[g * k..(g + 1) * k], x)) + (bh[g] + dot(&wh[g * hid..(g + 1) * hid], h));
    }
    for j in 0..hid {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hid + j]);
        let g = gates[2 * hid + j].tanh();
        let o = sigmoid(gates[3 * hid + j]);
        let cn = f * c[j] + i * g;
        c[j] = cn;
        h[j] = o * cn.tanh();
    }
    Ok(())
}

/// Normalization flavour for [`normalize`].
#[derive(Clone, Copy)]
pub enum NormKind<'a, T> {
    /// Over the last axis, per position.
    LayerNorm,
    /// Inference form over axis 0 (channels) with stored running statistics.
    BatchNorm { mean: &'a Tensor<T>, var: &'a Tensor<T> },
}

pub fn normalize<T: Scalar>(
    input: &Tensor<T>,
    kind: NormKind<'_, T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let mut out = input.clone();
    match kind {
        NormKind::LayerNorm => {
            let n = *input.dims().last().expect("rank >= 1");
            if gain.len() != n || bias.len() != n {
                return Err(Error::shape(
                    "layer_norm",
                    format!("gain {:?} bias {:?} for axis of {n}", gain.dims(), bias.dims()),
                ));
            }
            layer_norm_rows(input.data(), n, gain.data(), bias.data(), eps, out.data_mut());
        }
        NormKind::BatchNorm { mean, var } => {
            batch_norm_into(&mut out, gain, bias, mean, var, eps)?;
        }
    }
    Ok(out)
}

/// Layer norm of each length-`n` row of `x` into `out`.
pub fn layer_norm_rows<T: Scalar>(x: &[T], n: usize, gain: &[T], bias: &[T], eps: T, out: &mut [T]) {
    let inv_n = T::one() / T::from_usize(n).expect("fits");
    for (xr, or) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let mean = xr.iter().copied().fold(T::zero(), |a, b| a + b) * inv_n;
        let var = xr
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .fold(T::zero(), |a, b| a + b)
            * inv_n;
        let inv = T::one() / (var + eps).sqrt();
        for j in 0..n {
            or[j] = (xr[j] - mean) * inv * gain[j] + bias[j];
        }
    }
}

/// In-place inference batch norm over axis 0 of a channel-first tensor.
pub fn batch_norm_into<T: Scalar>(
    x: &mut Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    eps: T,
) -> Result<()> {
    let c = x.dims()[0];
    for (name, t) in [("gain", gain), ("bias", bias), ("mean", mean), ("var", var)] {
        if t.dims() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!("{name} {:?} for {c} channels", t.dims()),
            ));
        }
    }
    let per = x.len() / c;
    for ch in 0..c {
        let scale = gain.data()[ch] / (var.data()[ch] + eps).sqrt();
        let shift = bias.data()[ch] - mean.data()[ch] * scale;
        for v in &mut x.data_mut()[ch * per..(ch + 1) * per] {
            *v = *v * scale + shift;
        }
    }
    Ok(())
}

/// PReLU with one slope per channel, channel axis first.
pub fn prelu_channels_first<T: Scalar>(x: &mut Tensor<T>, slope: &Tensor<T>) -> Result<()> {
    let c = x.dims()[0];
    if slope.dims() != [c] {
        return Err(Error::shape("prelu", format!("slope {:?} for {c} channels", slope.dims())));
    }
    let per = x.len() / c;
    for ch in 0..c {
        let a = slope.data()[ch];
        for v in &mut x.data_mut()[ch * per..(ch + 1) * per] {
            if *v < T::zero() {
                *v = a * *v;
            }
        }
    }
    Ok(())
}

/// PReLU with one slope per channel, channel axis last.
pub fn prelu_channels_last<T: Scalar>(x: &mut [T], slope: &[T]) {
    let c = slope.len();
    for row in x.chunks_exact_mut(c) {
        for (v, &a) in row.iter_mut().zip(slope) {
            if *v < T::zero() {
                *v = a * *v;
            }
        }
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let dims = input.dims();
    if axis >= dims.len() {
        return Err(Error::shape(
            "softmax",
            format!("axis {axis} for rank {}", dims.len()),
        ));
    }
    let mut out = input.clone();
    let n = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let m = (0..n).map(|k| d[at(k)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for k in 0..n {
                let e = (d[at(k)] - m).exp();
                d[at(k)] = e;
                s += e;
            }
            for k in 0..n {
                d[at(k)] /= s;
            }
        }
    }
    Ok(out)
}

/// Max pooling per channel with the geometry of `spec` (channel counts must
/// match). Padded cells never win.
pub fn max_pool<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let mut out = Tensor::with_capacity(0);
    max_pool_into(input, spec, &mut out)?;
    Ok(out)
}

pub fn max_pool_into<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec, out: &mut Tensor<T>) -> Result<()> {
    let axes = spec.axes();
    let id = input.dims();
    if id.len() != axes + 1 || id[0] != spec.in_channels || spec.in_channels != spec.out_channels {
        return Err(Error::shape(
            "max_pool",
            format!("input {id:?} for pool over {axes} axes, {} channels", spec.in_channels),
        ));
    }
    let oext = spec.output_extents(&id[1..])?;
    let mut od = [0; MAX_RANK];
    od[0] = id[0];
    od[1..=axes].copy_from_slice(&oext[..axes]);
    out.resize_to(&od[..=axes])?;
    let is = input.shape().strides();
    let positions: usize = oext[..axes].iter().product();
    let (k, s, p) = (spec.kernel(), spec.stride(), spec.padding());
    let x = input.data();
    let y = out.data_mut();
    for ch in 0..id[0] {
        let mut o = [0usize; MAX_SPATIAL];
        for pos in 0..positions {
            let mut best = T::neg_infinity();
            let mut kk = [0usize; MAX_SPATIAL];
            'taps: loop {
                let mut off = ch * is[0];
                let mut valid = true;
                for a in 0..axes {
                    let i = (o[a] * s[a] + kk[a]) as isize - p[a].0 as isize;
                    if i < 0 || i as usize >= id[a + 1] {
                        valid = false;
                        break;
                    }
                    off += i as usize * is[a + 1];
                }
                if valid && x[off] > best {
                    best = x[off];
                }
                for a in (0..axes).rev() {
                    kk[a] += 1;
                    if kk[a] < k[a] {
                        continue 'taps;
                    }
                    kk[a] = 0;
                }
                break;
            }
            y[ch * positions + pos] = best;
            for a in (0..axes).rev() {
                o[a] += 1;
                if o[a] < oext[a] {
                    break;
                }
                o[a] = 0;
            }
        }
    }
    Ok(())
}

/// Mean over the trailing `n` axes: `(C, T, H, W)` with `n = 2` gives `(C, T)`.
pub fn avg_pool_trailing_into<T: Scalar>(input: &Tensor<T>, n: usize, out: &mut Tensor<T>) -> Result<()> {
    let d = input.dims();
    if n == 0 || n >= d.len() {
        return Err(Error::shape("avg_pool", format!("pool {n} trailing axes of {d:?}")));
    }
    let keep = &d[..d.len() - n];
    let area: usize = d[d.len() - n..].iter().product();
    out.resize_to(keep)?;
    let inv = T::one() / T::from_usize(area).expect("fits");
    for (o, chunk) in out.data_mut().iter_mut().zip(input.data().chunks_exact(area)) {
        *o = chunk.iter().copied().fold(T::zero(), |a, b| a + b) * inv;
    }
    Ok(())
}

/// Axis permutation: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Scalar>(input: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let mut out = Tensor::with_capacity(0);
    permute_into(input, axes, &mut out)?;
    Ok(out)
}

pub fn permute_into<T: Scalar>(input: &Tensor<T>, axes: &[usize], out: &mut Tensor<T>) -> Result<()> {
    let d = input.dims();
    let r = d.len();
    let mut seen = [false; MAX_RANK];
    if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape("permute", format!("axes {axes:?} for rank {r}")));
    }
    let mut od = [0; MAX_RANK];
    for (i, &a) in axes.iter().enumerate() {
        od[i] = d[a];
    }
    out.resize_to(&od[..r])?;
    let is = input.shape().strides();
    // input stride for each output axis
    let mut src_stride = [0; MAX_RANK];
    for (i, &a) in axes.iter().enumerate() {
        src_stride[i] = is[a];
    }
    let x = input.data();
    let mut idx = [0usize; MAX_RANK];
    let mut src = 0usize;
    for v in out.data_mut().iter_mut() {
        *v = x[src];
        for a in (0..r).rev() {
            idx[a] += 1;
            src += src_stride[a];
            if idx[a] < od[a] {
                break;
            }
            src -= src_stride[a] * od[a];
            idx[a] = 0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(d: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(d, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&t(&[2], &[1000.0, 0.0]), 0).unwrap();
        assert_abs_diff_eq!(s.data()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.data()[1], 0.0, epsilon = 1e-12);
        let s = softmax(&t(&[3], &[1.0, 2.0, 3.0]), 0).unwrap();
        for (a, b) in s.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-4);
        }
        assert!(softmax(&t(&[3], &[1.0, 2.0, 3.0]), 1).is_err());
    }

    #[test]
    fn softmax_middle_axis() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64 * 0.3).unwrap();
        let s = softmax(&x, 1).unwrap();
        for o in 0..2 {
            for i in 0..2 {
                let sum: f64 = (0..3).map(|k| s.at(&[o, k, i])).sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let g = t(&[3], &[1.0; 3]);
        let b = t(&[3], &[0.0; 3]);
        let y = normalize(&t(&[3], &[1.0, 2.0, 3.0]), NormKind::LayerNorm, &g, &b, 1e-5).unwrap();
        for (a, e) in y.data().iter().zip([-1.2247, 0.0, 1.2247]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-3);
        }
        let y = normalize(&t(&[3], &[4.0; 3]), NormKind::LayerNorm, &g, &b, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0; 3]);
    }

    #[test]
    fn batch_norm_identity_stats() {
        let x = Tensor::<f64>::from_fn(&[2, 5], |i| i as f64 - 4.0).unwrap();
        let one = t(&[2], &[1.0, 1.0]);
        let zero = t(&[2], &[0.0, 0.0]);
        let y = normalize(&x, NormKind::BatchNorm { mean: &zero, var: &one }, &one, &zero, 1e-5).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-4 * 4.0);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn lstm_zero_weights_give_zero_state() {
        let w_ih = Tensor::<f64>::zeros(&[8, 3]).unwrap();
        let w_hh = Tensor::zeros(&[8, 2]).unwrap();
        let b = Tensor::zeros(&[8]).unwrap();
        let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, b_ih: &b, b_hh: &b };
        let (h, c) = lstm_step(&t(&[3], &[0.3, -2.0, 5.0]), &t(&[2], &[0.0; 2]), &t(&[2], &[0.0; 2]), w).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_saturated_forget_gate_keeps_cell() {
        let w_ih = Tensor::<f64>::zeros(&[8, 3]).unwrap();
        let w_hh = Tensor::zeros(&[8, 2]).unwrap();
        let mut b_ih = Tensor::zeros(&[8]).unwrap();
        b_ih.data_mut()[2..4].copy_from_slice(&[20.0, 20.0]);
        let b_hh = Tensor::zeros(&[8]).unwrap();
        let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, b_ih: &b_ih, b_hh: &b_hh };
        let c0 = t(&[2], &[0.7, -1.3]);
        let (_, c) = lstm_step(&t(&[3], &[1.0, 2.0, 3.0]), &t(&[2], &[0.1, 0.2]), &c0, w).unwrap();
        for (a, b) in c.data().iter().zip(c0.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn lstm_scalar_hand_computation() {
        // One input, one unit; gates i,f,g,o with hand-picked weights.
        let w_ih = t(&[4, 1], &[0.5, -0.25, 0.8, 1.1]);
        let w_hh = t(&[4, 1], &[0.3, 0.6, -0.4, 0.2]);
        let b_ih = t(&[4], &[0.1, 0.2, -0.1, 0.0]);
        let b_hh = t(&[4], &[0.05, -0.05, 0.0, 0.3]);
        let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, b_ih: &b_ih, b_hh: &b_hh };
        let (x, h0, c0) = (0.9, -0.2, 0.4);
        let sg = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sg(0.5 * x + 0.1 + 0.3 * h0 + 0.05);
        let f = sg(-0.25 * x + 0.2 + 0.6 * h0 - 0.05);
        let g = (0.8 * x - 0.1 - 0.4 * h0).tanh();
        let o = sg(1.1 * x + 0.2 * h0 + 0.3);
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        let (h, c) = lstm_step(&t(&[1], &[x]), &t(&[1], &[h0]), &t(&[1], &[c0]), w).unwrap();
        assert_abs_diff_eq!(h.data()[0], h1, epsilon = 1e-6);
        assert_abs_diff_eq!(c.data()[0], c1, epsilon = 1e-6);
    }

    #[test]
    fn lstm_rejects_non_finite() {
        let w_ih = Tensor::<f64>::zeros(&[4, 1]).unwrap();
        let w_hh = Tensor::zeros(&[4, 1]).unwrap();
        let b = Tensor::zeros(&[4]).unwrap();
        let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, b_ih: &b, b_hh: &b };
        let r = lstm_step(&t(&[1], &[f64::NAN]), &t(&[1], &[0.0]), &t(&[1], &[0.0]), w);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32).unwrap();
        let y = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.dims(), &[4, 2, 3]);
        assert_eq!(y.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        let z = permute(&y, &[1, 2, 0]).unwrap();
        assert_eq!(z, x);
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn max_pool_with_padding() {
        let x = Tensor::<f32>::from_fn(&[1, 4, 4], |i| i as f32).unwrap();
        let spec = ConvSpec::new(1, 1, &[3, 3])
            .unwrap()
            .with_stride(&[2, 2])
            .unwrap()
            .with_padding(&[(1, 1), (1, 1)])
            .unwrap();
        let y = max_pool(&x, &spec).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_abs_diff_eq!(dot(&a, &b), naive, epsilon = 1e-12);
    }
}
