// Raw forward/backward kernels on flat channels-last buffers. The tape wires
// these together; nothing here allocates graph state.

pub(crate) struct ConvDims {
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn conv2d_forward(input: &[f64], kernel: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.ho * d.wo * d.cout];
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            let o = (oy * d.wo + ox) * d.cout;
            let acc = &mut out[o..o + d.cout];
            acc.copy_from_slice(bias);
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let i = ((oy * d.stride + ky) * d.w + ox * d.stride + kx) * d.cin;
                    let kb = (ky * d.k + kx) * d.cin * d.cout;
                    for ci in 0..d.cin {
                        let xv = input[i + ci];
                        let row = &kernel[kb + ci * d.cout..kb + (ci + 1) * d.cout];
                        for (a, &kv) in acc.iter_mut().zip(row) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (d_input, d_kernel, d_bias).
pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    d: &ConvDims,
    need_input: bool,
    need_kernel: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gi = if need_input { vec![0.0; input.len()] } else { Vec::new() };
    let mut gk = if need_kernel { vec![0.0; kernel.len()] } else { Vec::new() };
    let mut gb = vec![0.0; d.cout];
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            let o = (oy * d.wo + ox) * d.cout;
            let go = &grad_out[o..o + d.cout];
            for (b, &g) in gb.iter_mut().zip(go) {
                *b += g;
            }
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let i = ((oy * d.stride + ky) * d.w + ox * d.stride + kx) * d.cin;
                    let kb = (ky * d.k + kx) * d.cin * d.cout;
                    for ci in 0..d.cin {
                        let r = kb + ci * d.cout..kb + (ci + 1) * d.cout;
                        if need_kernel {
                            let xv = input[i + ci];
                            for (gkv, &g) in gk[r.clone()].iter_mut().zip(go) {
                                *gkv += xv * g;
                            }
                        }
                        if need_input {
                            let s: f64 = kernel[r].iter().zip(go).map(|(a, b)| a * b).sum();
                            gi[i + ci] += s;
                        }
                    }
                }
            }
        }
    }
    (gi, gk, gb)
}

/// Max-pool forward; also returns, per output element, the flat input index
/// that won (first in row-major window order on ties).
pub(crate) fn max_pool_forward(
    input: &[f64],
    h: usize,
    w: usize,
    c: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut out = vec![f64::NEG_INFINITY; ho * wo * c];
    let mut arg = vec![0usize; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let o = (oy * wo + ox) * c;
            for ky in 0..window {
                for kx in 0..window {
                    let i = ((oy * stride + ky) * w + ox * stride + kx) * c;
                    for ch in 0..c {
                        let v = input[i + ch];
                        if v > out[o + ch] {
                            out[o + ch] = v;
                            arg[o + ch] = i + ch;
                        }
                    }
                }
            }
        }
    }
    (out, arg, ho, wo)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
