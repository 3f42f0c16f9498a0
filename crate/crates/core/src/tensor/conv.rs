use super::{ops::dot, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest number of spatial/temporal axes a convolution may span.
pub const MAX_SPATIAL: usize = 4;

/// Output positions gathered per im2col block.
const BLOCK: usize = 32;

/// Hyperparameters of an N-D convolution over a channel-first tensor
/// `(channels, axis0, axis1, ...)`. Axis 0 is the time axis when
/// `causal_time` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    axes: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    kernel: [usize; MAX_SPATIAL],
    stride: [usize; MAX_SPATIAL],
    pad: [(usize, usize); MAX_SPATIAL],
    causal_time: bool,
}

impl ConvSpec {
    /// Unit stride, no padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: &[usize]) -> Result<Self> {
        if kernel.is_empty() || kernel.len() > MAX_SPATIAL {
            return Err(Error::InvalidArgument(format!(
                "convolution over {} axes (1..={MAX_SPATIAL} supported)",
                kernel.len()
            )));
        }
        if in_channels == 0 || out_channels == 0 || kernel.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "zero extent in conv spec {in_channels}->{out_channels} kernel {kernel:?}"
            )));
        }
        let mut k = [1; MAX_SPATIAL];
        k[..kernel.len()].copy_from_slice(kernel);
        Ok(ConvSpec {
            axes: kernel.len(),
            in_channels,
            out_channels,
            kernel: k,
            stride: [1; MAX_SPATIAL],
            pad: [(0, 0); MAX_SPATIAL],
            causal_time: false,
        })
    }

    pub fn with_stride(mut self, stride: &[usize]) -> Result<Self> {
        if stride.len() != self.axes || stride.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "stride {stride:?} for {} axes",
                self.axes
            )));
        }
        self.stride[..self.axes].copy_from_slice(stride);
        Ok(self)
    }

    /// Per-axis `(leading, trailing)` padding. For transposed convolutions
    /// the same numbers crop the full output instead.
    pub fn with_padding(mut self, pad: &[(usize, usize)]) -> Result<Self> {
        if pad.len() != self.axes {
            return Err(Error::InvalidArgument(format!(
                "padding {pad:?} for {} axes",
                self.axes
            )));
        }
        self.pad[..self.axes].copy_from_slice(pad);
        if self.causal_time {
            self = self.causal();
        }
        Ok(self)
    }

    /// Moves all padding of axis 0 to the leading side so output frame `t`
    /// only sees input frames `<= t`.
    pub fn causal(mut self) -> Self {
        let (l, t) = self.pad[0];
        self.pad[0] = (l + t, 0);
        self.causal_time = true;
        self
    }

    /// Causal time padding of `kernel[0] - 1`, symmetric "same" padding of
    /// `kernel[a] / 2` on the remaining axes.
    pub fn same_causal(
        in_channels: usize,
        out_channels: usize,
        kernel: &[usize],
        stride: &[usize],
    ) -> Result<Self> {
        let pad: Vec<(usize, usize)> = kernel
            .iter()
            .enumerate()
            .map(|(a, &k)| if a == 0 { (k - 1, 0) } else { (k / 2, k / 2) })
            .collect();
        Ok(ConvSpec::new(in_channels, out_channels, kernel)?
            .with_stride(stride)?
            .with_padding(&pad)?
            .causal())
    }

    #[inline]
    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn kernel(&self) -> &[usize] {
        &self.kernel[..self.axes]
    }

    pub fn stride(&self) -> &[usize] {
        &self.stride[..self.axes]
    }

    pub fn padding(&self) -> &[(usize, usize)] {
        &self.pad[..self.axes]
    }

    pub fn is_causal(&self) -> bool {
        self.causal_time
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel().iter().product()
    }

    /// Same spec with axis-0 padding removed; used when the caller supplies
    /// the temporal history explicitly.
    pub fn without_time_padding(mut self) -> Self {
        self.pad[0] = (0, 0);
        self
    }

    /// `floor((in + pad - kernel) / stride) + 1` per axis.
    pub fn output_extents(&self, input: &[usize]) -> Result<[usize; MAX_SPATIAL]> {
        if input.len() != self.axes {
            return Err(Error::shape(
                "conv",
                format!("{} spatial axes for a {}-axis kernel", input.len(), self.axes),
            ));
        }
        let mut out = [1; MAX_SPATIAL];
        for a in 0..self.axes {
            let padded = input[a] + self.pad[a].0 + self.pad[a].1;
            if padded < self.kernel[a] {
                return Err(Error::shape(
                    "conv",
                    format!(
                        "axis {a}: padded extent {padded} smaller than kernel {}",
                        self.kernel[a]
                    ),
                ));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// `(in - 1) * stride + kernel - crop` per axis.
    pub fn transpose_output_extents(&self, input: &[usize]) -> Result<[usize; MAX_SPATIAL]> {
        if input.len() != self.axes {
            return Err(Error::shape(
                "conv_transpose",
                format!("{} spatial axes for a {}-axis kernel", input.len(), self.axes),
            ));
        }
        let mut out = [1; MAX_SPATIAL];
        for a in 0..self.axes {
            let full = (input[a] - 1) * self.stride[a] + self.kernel[a];
            let crop = self.pad[a].0 + self.pad[a].1;
            if full <= crop {
                return Err(Error::shape(
                    "conv_transpose",
                    format!("axis {a}: crop {crop} removes the whole output of extent {full}"),
                ));
            }
            out[a] = full - crop;
        }
        Ok(out)
    }
}

/// Reusable buffers for [`conv_into`] / [`conv_transpose_into`].
#[derive(Debug, Default, Clone)]
pub struct ConvScratch<T> {
    col: Vec<T>,
    wt: Vec<T>,
}

impl<T: Scalar> ConvScratch<T> {
    /// Pre-sizes the buffers for the given spec so later calls do not allocate.
    pub fn reserve_for(&mut self, spec: &ConvSpec) {
        let row = spec.in_channels * spec.kernel_volume();
        if self.col.capacity() < BLOCK * row {
            self.col.reserve(BLOCK * row - self.col.len());
        }
        let w = row * spec.out_channels;
        if self.wt.capacity() < w {
            self.wt.reserve(w - self.wt.len());
        }
    }
}

fn check_operands<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    weight_lead: [usize; 2],
) -> Result<()> {
    let id = input.dims();
    if id.len() != spec.axes + 1 {
        return Err(Error::shape(
            op,
            format!("input rank {} for {} spatial axes", id.len(), spec.axes),
        ));
    }
    if id[0] != spec.in_channels {
        return Err(Error::shape(
            op,
            format!("input has {} channels, spec expects {}", id[0], spec.in_channels),
        ));
    }
    let wd = weight.dims();
    if wd.len() != spec.axes + 2 || wd[..2] != weight_lead || &wd[2..] != spec.kernel() {
        return Err(Error::shape(
            op,
            format!(
                "weight shape {wd:?}, expected {:?}+{:?}",
                weight_lead,
                spec.kernel()
            ),
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [spec.out_channels] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?}, expected [{}]", b.dims(), spec.out_channels),
            ));
        }
    }
    Ok(())
}

/// Convolution of a channel-first tensor. One implementation covers 1-D to
/// 4-D kernels. Weights are `(out_channels, in_channels, kernel...)`.
pub fn conv<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let mut out = Tensor::with_capacity(0);
    conv_into(input, weight, bias, spec, &mut ConvScratch::default(), &mut out)?;
    Ok(out)
}

pub fn conv_into<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    scratch: &mut ConvScratch<T>,
    out: &mut Tensor<T>,
) -> Result<()> {
    check_operands(
        "conv",
        input,
        weight,
        bias,
        spec,
        [spec.out_channels, spec.in_channels],
    )?;
    let axes = spec.axes;
    let in_dims = &input.dims()[1..];
    let oext = spec.output_extents(in_dims)?;
    let mut out_dims = [0; MAX_SPATIAL + 1];
    out_dims[0] = spec.out_channels;
    out_dims[1..=axes].copy_from_slice(&oext[..axes]);
    out.resize_to(&out_dims[..=axes])?;

    let mut in_ext = [1; MAX_SPATIAL];
    in_ext[..axes].copy_from_slice(in_dims);
    let in_strides = input.shape().strides();
    let positions: usize = oext[..axes].iter().product();
    let row = spec.in_channels * spec.kernel_volume();
    let x = input.data();

    gather_blocks(
        positions,
        row,
        &oext,
        axes,
        scratch,
        weight.data(),
        bias,
        spec.out_channels,
        out.data_mut(),
        |o, col| {
            // Fill one im2col row: (ci, kernel...) flattened in weight order.
            let mut w = 0;
            for ci in 0..spec.in_channels {
                let base = ci * in_strides[0];
                fill_kernel_window(
                    &mut col[w..w + spec.kernel_volume()],
                    x,
                    base,
                    o,
                    axes,
                    &spec.kernel,
                    &spec.stride,
                    &spec.pad,
                    &in_ext,
                    &in_strides[1..],
                );
                w += spec.kernel_volume();
            }
        },
    );
    Ok(())
}

/// Transposed convolution; weights are `(in_channels, out_channels, kernel...)`
/// and the spec's padding crops the full-length output.
pub fn conv_transpose<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let mut out = Tensor::with_capacity(0);
    conv_transpose_into(input, weight, bias, spec, &mut ConvScratch::default(), &mut out)?;
    Ok(out)
}

pub fn conv_transpose_into<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    scratch: &mut ConvScratch<T>,
    out: &mut Tensor<T>,
) -> Result<()> {
    check_operands(
        "conv_transpose",
        input,
        weight,
        bias,
        spec,
        [spec.in_channels, spec.out_channels],
    )?;
    let axes = spec.axes;
    let in_dims = &input.dims()[1..];
    let oext = spec.transpose_output_extents(in_dims)?;
    let mut out_dims = [0; MAX_SPATIAL + 1];
    out_dims[0] = spec.out_channels;
    out_dims[1..=axes].copy_from_slice(&oext[..axes]);
    out.resize_to(&out_dims[..=axes])?;

    // Re-lay the weights as (out, in * kvol) so each output is one dot product.
    let kvol = spec.kernel_volume();
    let row = spec.in_channels * kvol;
    let mut wt = std::mem::take(&mut scratch.wt);
    wt.clear();
    wt.resize(row * spec.out_channels, T::zero());
    let w = weight.data();
    for ci in 0..spec.in_channels {
        for co in 0..spec.out_channels {
            let src = &w[(ci * spec.out_channels + co) * kvol..][..kvol];
            wt[co * row + ci * kvol..][..kvol].copy_from_slice(src);
        }
    }

    let mut in_ext = [1; MAX_SPATIAL];
    in_ext[..axes].copy_from_slice(in_dims);
    let in_strides = input.shape().strides();
    let positions: usize = oext[..axes].iter().product();
    let x = input.data();

    gather_blocks(
        positions,
        row,
        &oext,
        axes,
        scratch,
        &wt,
        bias,
        spec.out_channels,
        out.data_mut(),
        |o, col| {
            let mut w = 0;
            for ci in 0..spec.in_channels {
                let base = ci * in_strides[0];
                fill_transpose_window(
                    &mut col[w..w + kvol],
                    x,
                    base,
                    o,
                    axes,
                    &spec.kernel,
                    &spec.stride,
                    &spec.pad,
                    &in_ext,
                    &in_strides[1..],
                );
                w += kvol;
            }
        },
    );
    scratch.wt = wt;
    Ok(())
}

/// Shared driver: for blocks of output positions, build im2col rows with
/// `fill` and reduce each against every weight row.
#[allow(clippy::too_many_arguments)]
fn gather_blocks<T: Scalar>(
    positions: usize,
    row: usize,
    oext: &[usize; MAX_SPATIAL],
    axes: usize,
    scratch: &mut ConvScratch<T>,
    weight: &[T],
    bias: Option<&Tensor<T>>,
    out_channels: usize,
    out: &mut [T],
    mut fill: impl FnMut(&[usize; MAX_SPATIAL], &mut [T]),
) {
    let block = BLOCK.min(positions);
    scratch.col.clear();
    scratch.col.resize(block * row, T::zero());
    let mut o = [0usize; MAX_SPATIAL];
    let mut p0 = 0;
    while p0 < positions {
        let n = block.min(positions - p0);
        for bp in 0..n {
            fill(&o, &mut scratch.col[bp * row..(bp + 1) * row]);
            // advance odometer over output positions
            for a in (0..axes).rev() {
                o[a] += 1;
                if o[a] < oext[a] {
                    break;
                }
                o[a] = 0;
            }
        }
        for co in 0..out_channels {
            let wrow = &weight[co * row..(co + 1) * row];
            let b = bias.map_or(T::zero(), |b| b.data()[co]);
            let dst = &mut out[co * positions + p0..co * positions + p0 + n];
            for (bp, d) in dst.iter_mut().enumerate() {
                *d = b + dot(wrow, &scratch.col[bp * row..(bp + 1) * row]);
            }
        }
        p0 += n;
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn fill_kernel_window<T: Scalar>(
    dst: &mut [T],
    x: &[T],
    base: usize,
    o: &[usize; MAX_SPATIAL],
    axes: usize,
    kernel: &[usize; MAX_SPATIAL],
    stride: &[usize; MAX_SPATIAL],
    pad: &[(usize, usize); MAX_SPATIAL],
    ext: &[usize; MAX_SPATIAL],
    strides: &[usize],
) {
    let last = axes - 1;
    let kl = kernel[last];
    // start index on the last axis, as signed
    let start_last = (o[last] * stride[last]) as isize - pad[last].0 as isize;
    let mut kk = [0usize; MAX_SPATIAL];
    let mut w = 0;
    loop {
        // offset from the outer kernel axes
        let mut off = base;
        let mut valid = true;
        for a in 0..last {
            let i = (o[a] * stride[a] + kk[a]) as isize - pad[a].0 as isize;
            if i < 0 || i as usize >= ext[a] {
                valid = false;
                break;
            }
            off += i as usize * strides[a];
        }
        let seg = &mut dst[w..w + kl];
        if valid {
            for (k, d) in seg.iter_mut().enumerate() {
                let i = start_last + k as isize;
                *d = if i >= 0 && (i as usize) < ext[last] {
                    x[off + i as usize * strides[last]]
                } else {
                    T::zero()
                };
            }
        } else {
            seg.iter_mut().for_each(|d| *d = T::zero());
        }
        w += kl;
        // odometer over outer kernel axes
        let mut a = last;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            kk[a] += 1;
            if kk[a] < kernel[a] {
                break;
            }
            kk[a] = 0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn fill_transpose_window<T: Scalar>(
    dst: &mut [T],
    x: &[T],
    base: usize,
    o: &[usize; MAX_SPATIAL],
    axes: usize,
    kernel: &[usize; MAX_SPATIAL],
    stride: &[usize; MAX_SPATIAL],
    pad: &[(usize, usize); MAX_SPATIAL],
    ext: &[usize; MAX_SPATIAL],
    strides: &[usize],
) {
    // Input index for output u and tap k: (u + crop_lead - k) / stride when divisible.
    #[inline]
    fn source(u: usize, lead: usize, k: usize, s: usize, ext: usize) -> Option<usize> {
        let v = (u + lead) as isize - k as isize;
        if v < 0 || v as usize % s != 0 {
            return None;
        }
        let i = v as usize / s;
        (i < ext).then_some(i)
    }
    let last = axes - 1;
    let mut kk = [0usize; MAX_SPATIAL];
    let mut w = 0;
    loop {
        let mut off = base;
        let mut valid = true;
        for a in 0..last {
            match source(o[a], pad[a].0, kk[a], stride[a], ext[a]) {
                Some(i) => off += i * strides[a],
                None => {
                    valid = false;
                    break;
                }
            }
        }
        let seg = &mut dst[w..w + kernel[last]];
        for (k, d) in seg.iter_mut().enumerate() {
            *d = if valid {
                match source(o[last], pad[last].0, k, stride[last], ext[last]) {
                    Some(i) => x[off + i * strides[last]],
                    None => T::zero(),
                }
            } else {
                T::zero()
            };
        }
        w += kernel[last];
        let mut a = last;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            kk[a] += 1;
            if kk[a] < kernel[a] {
                break;
            }
            kk[a] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_kernel() {
        let x = Tensor::<f32>::from_fn(&[3, 4, 5], |i| i as f32 * 0.5 - 3.0).unwrap();
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }).unwrap();
        let spec = ConvSpec::new(3, 3, &[1, 1]).unwrap();
        let y = conv(&x, &w, None, &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn causal_1d_hand_example() {
        let x = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        let spec = ConvSpec::new(1, 1, &[2])
            .unwrap()
            .with_padding(&[(1, 0)])
            .unwrap()
            .causal();
        let y = conv(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn stem_extent_arithmetic() {
        // kernel (5,7,7) stride (1,2,2), time padding only: 32 -> 13 spatially.
        let spec = ConvSpec::new(1, 32, &[5, 7, 7])
            .unwrap()
            .with_stride(&[1, 2, 2])
            .unwrap()
            .with_padding(&[(4, 0), (0, 0), (0, 0)])
            .unwrap()
            .causal();
        assert_eq!(&spec.output_extents(&[6, 32, 32]).unwrap()[..3], &[6, 13, 13]);
    }

    #[test]
    fn causal_moves_trailing_time_pad() {
        let spec = ConvSpec::new(1, 1, &[3, 3])
            .unwrap()
            .with_padding(&[(1, 1), (1, 1)])
            .unwrap()
            .causal();
        assert_eq!(spec.padding(), &[(2, 0), (1, 1)]);
    }

    #[test]
    fn shape_errors_are_descriptive() {
        let x = Tensor::<f32>::zeros(&[2, 4]).unwrap();
        let w = Tensor::zeros(&[1, 3, 2]).unwrap();
        let spec = ConvSpec::new(3, 1, &[2]).unwrap();
        let err = conv(&x, &w, None, &spec).unwrap_err().to_string();
        assert!(err.contains("2 channels"), "{err}");
        let spec = ConvSpec::new(2, 1, &[5]).unwrap();
        let w = Tensor::zeros(&[1, 2, 5]).unwrap();
        assert!(conv(&x, &w, None, &spec).is_err());
    }

    #[test]
    fn transpose_inverts_stride_two_extent() {
        let spec = ConvSpec::new(8, 4, &[2, 5])
            .unwrap()
            .with_stride(&[1, 2])
            .unwrap()
            .with_padding(&[(0, 1), (2, 2)])
            .unwrap();
        assert_eq!(&spec.transpose_output_extents(&[7, 21]).unwrap()[..2], &[7, 41]);
        assert_eq!(&spec.transpose_output_extents(&[7, 81]).unwrap()[..2], &[7, 161]);
    }
}
