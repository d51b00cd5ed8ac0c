//! Kernels on channel-major activations: a `C × N` row-major matrix where
//! `N = batch · h · w` and each row holds one channel for the whole batch.

use matrixmultiply::dgemm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Shape {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn n(&self) -> usize {
        self.batch * self.h * self.w
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn silu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| silu(v)).collect()
}

/// `d ← d ⊙ silu'(pre)`.
pub(crate) fn silu_backward(pre: &[f64], d: &mut [f64]) {
    for (g, &p) in d.iter_mut().zip(pre) {
        *g *= silu_grad(p);
    }
}

/// 3×3, zero-padded patches: row `(c·9 + ky·3 + kx)` of `cols` holds the
/// input shifted by `(ky − 1, kx − 1)`.
fn im2col(input: &[f64], channels: usize, s: Shape, cols: &mut [f64]) {
    let (h, w, n) = (s.h, s.w, s.n());
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * n..][..n];
                for b in 0..s.batch {
                    for y in 0..h {
                        let dst = &mut row[(b * h + y) * w..][..w];
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let line = &src[(b * h + sy as usize) * w..][..w];
                        match kx {
                            0 => {
                                dst[0] = 0.0;
                                dst[1..].copy_from_slice(&line[..w - 1]);
                            }
                            1 => dst.copy_from_slice(line),
                            _ => {
                                dst[..w - 1].copy_from_slice(&line[1..]);
                                dst[w - 1] = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulated into `out`.
fn col2im_add(cols: &[f64], channels: usize, s: Shape, out: &mut [f64]) {
    let (h, w, n) = (s.h, s.w, s.n());
    for c in 0..channels {
        let dst = &mut out[c * n..(c + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * n..][..n];
                for b in 0..s.batch {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[(b * h + y) * w..][..w];
                        let line = &mut dst[(b * h + sy as usize) * w..][..w];
                        match kx {
                            0 => line[..w - 1].iter_mut().zip(&src[1..]).for_each(|(l, v)| *l += v),
                            1 => line.iter_mut().zip(src).for_each(|(l, v)| *l += v),
                            _ => line[1..].iter_mut().zip(&src[..w - 1]).for_each(|(l, v)| *l += v),
                        }
                    }
                }
            }
        }
    }
}

/// `C = αAB + βC` for row-major operands, with optional transposes given as
/// strides by the callers below.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices that lie entirely inside the
    // given slices; every call site below passes dense row-major buffers of
    // exactly the stated sizes, and `c` does not alias `a` or `b`.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3×3 same-size convolution. `weight` is `cout × (cin·9)`.
pub(crate) fn conv_forward(
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    cin: usize,
    cout: usize,
    s: Shape,
) -> Vec<f64> {
    let n = s.n();
    let k = cin * 9;
    let mut cols = vec![0.0; k * n];
    im2col(input, cin, s, &mut cols);
    let mut out = vec![0.0; cout * n];
    for (row, b) in out.chunks_exact_mut(n).zip(bias) {
        row.fill(*b);
    }
    gemm(cout, k, n, weight, (k, 1), &cols, (n, 1), 1.0, &mut out);
    out
}

/// Accumulates `dW`, `db` and returns `dL/dinput` when `want_input`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    weight: &[f64],
    input: &[f64],
    d_out: &[f64],
    cin: usize,
    cout: usize,
    s: Shape,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let n = s.n();
    let k = cin * 9;
    let mut cols = vec![0.0; k * n];
    im2col(input, cin, s, &mut cols);
    // dW (cout × k) += dOut (cout × n) · colsᵀ (n × k)
    gemm(cout, n, k, d_out, (n, 1), &cols, (1, n), 1.0, d_weight);
    for (db, row) in d_bias.iter_mut().zip(d_out.chunks_exact(n)) {
        *db += row.iter().sum::<f64>();
    }
    if !want_input {
        return None;
    }
    // dCols (k × n) = Wᵀ (k × cout) · dOut (cout × n)
    gemm(k, cout, n, weight, (1, k), d_out, (n, 1), 0.0, &mut cols);
    let mut d_in = vec![0.0; cin * n];
    col2im_add(&cols, cin, s, &mut d_in);
    Some(d_in)
}

/// Dense layer on `batch × fin` rows; `weight` is `fout × fin`.
pub(crate) fn linear_forward(
    weight: &[f64],
    bias: &[f64],
    x: &[f64],
    fin: usize,
    fout: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() / fin * fout);
    for row in x.chunks_exact(fin) {
        for (o, wrow) in weight.chunks_exact(fin).enumerate() {
            out.push(bias[o] + wrow.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    out
}

/// Accumulates parameter gradients and returns `dL/dx`.
pub(crate) fn linear_backward(
    weight: &[f64],
    x: &[f64],
    d_out: &[f64],
    fin: usize,
    fout: usize,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let mut d_x = vec![0.0; x.len()];
    for ((row, drow), dx) in x
        .chunks_exact(fin)
        .zip(d_out.chunks_exact(fout))
        .zip(d_x.chunks_exact_mut(fin))
    {
        for (o, &g) in drow.iter().enumerate() {
            d_bias[o] += g;
            let wrow = &weight[o * fin..(o + 1) * fin];
            let dwrow = &mut d_weight[o * fin..(o + 1) * fin];
            for i in 0..fin {
                dwrow[i] += g * row[i];
                dx[i] += g * wrow[i];
            }
        }
    }
    d_x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(weight: &[f64], bias: &[f64], x: &[f64], cin: usize, cout: usize, s: Shape) -> Vec<f64> {
        let n = s.n();
        let mut out = vec![0.0; cout * n];
        for o in 0..cout {
            for b in 0..s.batch {
                for y in 0..s.h {
                    for xx in 0..s.w {
                        let mut acc = bias[o];
                        for c in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                                        continue;
                                    }
                                    let v = x[c * n + (b * s.h + sy as usize) * s.w + sx as usize];
                                    acc += weight[o * cin * 9 + c * 9 + ky * 3 + kx] * v;
                                }
                            }
                        }
                        out[o * n + (b * s.h + y) * s.w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut r = crate::grid::Rng::new(seed);
        r.randn(n)
    }

    #[test]
    fn conv_matches_direct_loops() {
        let s = Shape { batch: 2, h: 5, w: 4 };
        let (cin, cout) = (3, 2);
        let w = pseudo(cout * cin * 9, 1);
        let b = pseudo(cout, 2);
        let x = pseudo(cin * s.n(), 3);
        let fast = conv_forward(&w, &b, &x, cin, cout, s);
        let slow = naive_conv(&w, &b, &x, cin, cout, s);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let s = Shape { batch: 2, h: 3, w: 6 };
        let c = 2;
        let x = pseudo(c * s.n(), 4);
        let g = pseudo(c * 9 * s.n(), 5);
        let mut cols = vec![0.0; c * 9 * s.n()];
        im2col(&x, c, s, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im_add(&g, c, s, &mut back);
        let lhs: f64 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn silu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
