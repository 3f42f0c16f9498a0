//! N-D convolution and transposed convolution against direct-sum oracles.

use avtse::tensor::{conv, conv_transpose, ConvSpec, Tensor};
use proptest::prelude::*;

fn unravel(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        idx[a] = i % dims[a];
        i /= dims[a];
    }
    idx
}

fn ravel(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

#[derive(Debug)]
struct Case {
    cin: usize,
    cout: usize,
    input: Vec<usize>,
    kernel: Vec<usize>,
    stride: Vec<usize>,
    pad: Vec<(usize, usize)>,
    x: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
}

fn conv_oracle(c: &Case) -> (Vec<usize>, Vec<f64>) {
    let out: Vec<usize> = (0..c.input.len())
        .map(|a| (c.input[a] + c.pad[a].0 + c.pad[a].1 - c.kernel[a]) / c.stride[a] + 1)
        .collect();
    let n_out: usize = out.iter().product();
    let n_k: usize = c.kernel.iter().product();
    let n_in: usize = c.input.iter().product();
    let mut y = vec![0.0; c.cout * n_out];
    for co in 0..c.cout {
        for o in 0..n_out {
            let oi = unravel(o, &out);
            let mut acc = c.b[co];
            for ci in 0..c.cin {
                for k in 0..n_k {
                    let ki = unravel(k, &c.kernel);
                    let pos: Option<Vec<usize>> = (0..out.len())
                        .map(|a| {
                            let p = (oi[a] * c.stride[a] + ki[a]) as isize - c.pad[a].0 as isize;
                            (p >= 0 && (p as usize) < c.input[a]).then_some(p as usize)
                        })
                        .collect();
                    if let Some(p) = pos {
                        acc += c.w[(co * c.cin + ci) * n_k + k] * c.x[ci * n_in + ravel(&p, &c.input)];
                    }
                }
            }
            y[co * n_out + o] = acc;
        }
    }
    (out, y)
}

fn transpose_oracle(c: &Case) -> (Vec<usize>, Vec<f64>) {
    let full: Vec<usize> = (0..c.input.len())
        .map(|a| (c.input[a] - 1) * c.stride[a] + c.kernel[a])
        .collect();
    let n_full: usize = full.iter().product();
    let n_k: usize = c.kernel.iter().product();
    let n_in: usize = c.input.iter().product();
    let mut y = vec![0.0; c.cout * n_full];
    for ci in 0..c.cin {
        for i in 0..n_in {
            let ii = unravel(i, &c.input);
            for co in 0..c.cout {
                for k in 0..n_k {
                    let ki = unravel(k, &c.kernel);
                    let p: Vec<usize> = (0..full.len()).map(|a| ii[a] * c.stride[a] + ki[a]).collect();
                    y[co * n_full + ravel(&p, &full)] += c.x[ci * n_in + i] * c.w[(ci * c.cout + co) * n_k + k];
                }
            }
        }
    }
    let out: Vec<usize> = (0..full.len()).map(|a| full[a] - c.pad[a].0 - c.pad[a].1).collect();
    let n_out: usize = out.iter().product();
    let mut cropped = vec![0.0; c.cout * n_out];
    for co in 0..c.cout {
        for o in 0..n_out {
            let p: Vec<usize> = unravel(o, &out).iter().enumerate().map(|(a, &v)| v + c.pad[a].0).collect();
            cropped[co * n_out + o] = y[co * n_full + ravel(&p, &full)] + c.b[co];
        }
    }
    (out, cropped)
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..=3, 1usize..=3, 1usize..=3)
        .prop_flat_map(|(axes, cin, cout)| {
            (
                Just((cin, cout)),
                prop::collection::vec((1usize..=3, 1usize..=2, 0usize..=2, 0usize..=2, 0usize..=4), axes),
            )
        })
        .prop_flat_map(|((cin, cout), ax)| {
            let kernel: Vec<usize> = ax.iter().map(|a| a.0).collect();
            let stride: Vec<usize> = ax.iter().map(|a| a.1).collect();
            let pad: Vec<(usize, usize)> = ax.iter().map(|a| (a.2.min(a.0 - 1), a.3.min(a.0 - 1))).collect();
            let input: Vec<usize> = ax.iter().map(|a| a.0 + a.4).collect();
            let n_in: usize = cin * input.iter().product::<usize>();
            let n_w: usize = cin * cout * kernel.iter().product::<usize>();
            (
                Just((cin, cout, input, kernel, stride, pad)),
                prop::collection::vec(-1.0f64..1.0, n_in),
                prop::collection::vec(-1.0f64..1.0, n_w),
                prop::collection::vec(-1.0f64..1.0, cout),
            )
        })
        .prop_map(|((cin, cout, input, kernel, stride, pad), x, w, b)| Case {
            cin,
            cout,
            input,
            kernel,
            stride,
            pad,
            x,
            w,
            b,
        })
}

fn dims(lead: &[usize], rest: &[usize]) -> Vec<usize> {
    lead.iter().chain(rest).copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn conv_matches_direct_sum(c in case()) {
        let spec = ConvSpec::new(c.cin, c.cout, &c.kernel).unwrap()
            .with_stride(&c.stride).unwrap()
            .with_padding(&c.pad).unwrap();
        let x = Tensor::from_vec(&dims(&[c.cin], &c.input), c.x.clone()).unwrap();
        let w = Tensor::from_vec(&dims(&[c.cout, c.cin], &c.kernel), c.w.clone()).unwrap();
        let b = Tensor::from_vec(&[c.cout], c.b.clone()).unwrap();
        let y = conv(&x, &w, Some(&b), &spec).unwrap();
        let (out, expect) = conv_oracle(&c);
        prop_assert_eq!(y.dims(), &dims(&[c.cout], &out)[..]);
        for (a, e) in y.data().iter().zip(&expect) {
            prop_assert!((a - e).abs() < 1e-12, "{} vs {}", a, e);
        }
    }

    #[test]
    fn conv_transpose_matches_scatter_sum(c in case()) {
        let spec = ConvSpec::new(c.cin, c.cout, &c.kernel).unwrap()
            .with_stride(&c.stride).unwrap()
            .with_padding(&c.pad).unwrap();
        let x = Tensor::from_vec(&dims(&[c.cin], &c.input), c.x.clone()).unwrap();
        let w = Tensor::from_vec(&dims(&[c.cin, c.cout], &c.kernel), c.w.clone()).unwrap();
        let b = Tensor::from_vec(&[c.cout], c.b.clone()).unwrap();
        let y = conv_transpose(&x, &w, Some(&b), &spec).unwrap();
        let (out, expect) = transpose_oracle(&c);
        prop_assert_eq!(y.dims(), &dims(&[c.cout], &out)[..]);
        for (a, e) in y.data().iter().zip(&expect) {
            prop_assert!((a - e).abs() < 1e-12, "{} vs {}", a, e);
        }
    }
}

#[test]
fn unpadded_stride_two_stem_extent() {
    let spec = ConvSpec::new(1, 2, &[7, 7]).unwrap().with_stride(&[2, 2]).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 32, 32]).unwrap();
    let w = Tensor::<f32>::zeros(&[2, 1, 7, 7]).unwrap();
    assert_eq!(conv(&x, &w, None, &spec).unwrap().dims(), &[2, 13, 13]);
}

#[test]
fn causal_padding_hides_the_future() {
    let spec = ConvSpec::same_causal(1, 1, &[3], &[1]).unwrap();
    let w = Tensor::from_vec(&[1, 1, 3], vec![1.0f64, 1.0, 1.0]).unwrap();
    let mut x = Tensor::from_vec(&[1, 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let a = conv(&x, &w, None, &spec).unwrap();
    assert_eq!(a.data(), &[1.0, 3.0, 6.0, 9.0, 12.0, 15.0]);
    x.set(&[0, 4], 100.0);
    let b = conv(&x, &w, None, &spec).unwrap();
    assert_eq!(a.data()[..4], b.data()[..4]);
}
