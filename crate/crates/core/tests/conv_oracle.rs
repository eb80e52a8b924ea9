//! Convolution against a direct nested-loop cross-correlation.

use proptest::prelude::*;
use simpnet::layers::{conv2d_backward, conv2d_forward, strided_conv_down_forward, Conv2dParams};
use simpnet::{CounterRng, Shape4, Tensor4};

fn naive(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor4<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let ho = (xs.h + 2 * pad - k) / stride + 1;
    let wo = (xs.w + 2 * pad - k) / stride + 1;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, ws.n, ho, wo).unwrap()).unwrap();
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x.get(n, ci, iy as usize, ix as usize) * w.get(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

struct Case {
    x: Tensor4<f64>,
    p: Conv2dParams<f64>,
}

fn case(seed: u64) -> Option<Case> {
    let mut r = CounterRng::new(seed);
    let (n, c, h, w) = (1 + r.below(2), 1 + r.below(4), 1 + r.below(9), 1 + r.below(9));
    let (c_out, k) = (1 + r.below(4), [1, 2, 3, 5][r.below(4)]);
    let (stride, pad) = (1 + r.below(2), r.below(2));
    if k > h + 2 * pad || k > w + 2 * pad {
        return None;
    }
    let x = Tensor4::fill_random_uniform(Shape4::new(n, c, h, w).unwrap(), -1.0, 1.0, &r.split(1)).unwrap();
    let wt = Tensor4::fill_random_uniform(Shape4::new(c_out, c, k, k).unwrap(), -1.0, 1.0, &r.split(2)).unwrap();
    let b = Tensor4::fill_random_uniform(Shape4::new(1, c_out, 1, 1).unwrap(), -1.0, 1.0, &r.split(3)).unwrap();
    Some(Case {
        x,
        p: Conv2dParams::new(wt, b.into_vec(), stride, pad).unwrap(),
    })
}

fn max_abs_diff(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_matches_nested_loops_on_300_instances() {
    let (mut checked, mut strides, mut pads) = (0, [0; 2], [0; 2]);
    let mut worst = 0.0f64;
    for seed in 0.. {
        let Some(Case { x, p }) = case(seed) else { continue };
        let got = conv2d_forward(&x, &p).unwrap();
        let want = naive(&x, &p.weight, &p.bias, p.stride, p.pad);
        worst = worst.max(max_abs_diff(&got, &want));
        strides[p.stride - 1] += 1;
        pads[p.pad] += 1;
        checked += 1;
        if checked == 300 {
            break;
        }
    }
    assert!(worst <= 1e-12, "worst {worst:e}");
    assert!(strides.iter().chain(&pads).all(|&c| c >= 50), "{strides:?} {pads:?}");
}

#[test]
fn strided_downsampling_conv_matches_nested_loops() {
    let mut checked = 0;
    for seed in 10_000.. {
        let Some(Case { x, mut p }) = case(seed) else { continue };
        p.stride = 2;
        if p.weight.shape().h > x.shape().h + 2 * p.pad || p.weight.shape().h > x.shape().w + 2 * p.pad {
            continue;
        }
        let got = strided_conv_down_forward(&x, &p).unwrap();
        let want = naive(&x, &p.weight, &p.bias, 2, p.pad);
        assert!(max_abs_diff(&got, &want) <= 1e-12);
        checked += 1;
        if checked == 200 {
            break;
        }
    }
}

/// Adjoint identity: <conv(x), g> = <x, conv_backward(g)> with zero bias.
#[test]
fn backward_is_the_adjoint_of_forward() {
    let mut checked = 0;
    for seed in 20_000.. {
        let Some(Case { x, mut p }) = case(seed) else { continue };
        p.bias.iter_mut().for_each(|b| *b = 0.0);
        let y = conv2d_forward(&x, &p).unwrap();
        let g = Tensor4::fill_random_uniform(y.shape(), -1.0, 1.0, &CounterRng::new(seed)).unwrap();
        let grads = conv2d_backward(&x, &p, &g).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(grads.grad_x.data()).map(|(a, b)| a * b).sum();
        // Linear in the weights too.
        let rhs_w: f64 = p.weight.data().iter().zip(grads.grad_weight.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        assert!((lhs - rhs_w).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs_w}");
        checked += 1;
        if checked == 100 {
            break;
        }
    }
}

proptest! {
    #[test]
    fn conv_is_linear_in_the_input(seed in any::<u64>(), a in -3.0f64..3.0) {
        if let Some(Case { x, mut p }) = case(seed) {
            p.bias.iter_mut().for_each(|b| *b = 0.0);
            let y = conv2d_forward(&x, &p).unwrap();
            let ya = conv2d_forward(&x.map(|v| a * v), &p).unwrap();
            for (u, v) in y.data().iter().zip(ya.data()) {
                prop_assert!((a * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}
