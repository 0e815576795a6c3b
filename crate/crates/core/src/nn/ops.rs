//! Forward and backward kernels for the layer types the models need.
//!
//! Convolutions lower to im2col + sgemm per batch item. Gradients are accumulated in
//! batch order, so results do not depend on scheduling.

use super::tensor::{Shape, Tensor};
use crate::error::{bail, Result};

/// Batch-norm running-statistics momentum (weight kept on the old value).
pub const BN_MOMENTUM: f32 = 0.9;
pub const BN_EPS: f32 = 1e-5;

/// Image rows unfolded at a time, so the column buffer stays cache-resident.
const ROW_TILE: usize = 8;

/// `C = A * B + beta * C` on strided views; `ldc` is the row stride of `C`.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(ldc >= n && (m - 1) * ldc + n <= c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
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
            ldc as isize,
            1,
        );
    }
}

/// Valid destination range `[x0, x1)` for a horizontal shift of `dx` on a row of width `w`.
#[inline]
fn shifted_span(w: usize, dx: isize) -> (usize, usize) {
    let w = w as isize;
    let x0 = (-dx).clamp(0, w);
    let x1 = (w - dx).clamp(x0, w);
    (x0 as usize, x1 as usize)
}

/// Unfolds the `k`x`k` zero-padded neighbourhoods of output rows `rows` into a
/// `(c*k*k) x (rows.len()*w)` matrix.
fn im2col(src: &[f32], c: usize, h: usize, w: usize, k: usize, rows: std::ops::Range<usize>, col: &mut [f32]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    let n = rows.len() * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * n..][..n];
                let dx = kx as isize - p;
                let (x0, x1) = shifted_span(w, dx);
                for (r, y) in rows.clone().enumerate() {
                    let sy = y as isize + ky as isize - p;
                    let dst = &mut row[r * w..(r + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..][..w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    let s0 = (x0 as isize + dx) as usize;
                    dst[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input planes.
fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, rows: std::ops::Range<usize>, dst: &mut [f32]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    let n = rows.len() * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * n..][..n];
                let dx = kx as isize - p;
                let (x0, x1) = shifted_span(w, dx);
                for (r, y) in rows.clone().enumerate() {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let drow = &mut plane[sy as usize * w + s0..][..x1 - x0];
                    for (d, &g) in drow.iter_mut().zip(&row[r * w + x0..r * w + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

fn row_tiles(h: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..h).step_by(ROW_TILE).map(move |y0| y0..(y0 + ROW_TILE).min(h))
}

fn conv_geometry(input: Shape, weight: Shape, bias_len: usize) -> Result<usize> {
    let k = weight.h;
    if weight.w != k || k.is_multiple_of(2) {
        bail!(Shape, "conv kernel must be square and odd, got {}x{}", weight.h, weight.w);
    }
    if weight.c != input.c {
        bail!(Shape, "conv expects {} input channels, got {}", weight.c, input.c);
    }
    if bias_len != weight.n {
        bail!(Shape, "conv bias has {bias_len} entries for {} filters", weight.n);
    }
    if input.h == 0 || input.w == 0 {
        bail!(Shape, "conv input has empty spatial extent");
    }
    Ok(k)
}

/// Same-padded stride-1 convolution. `weight` is `(out, in, k, k)`.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let s = input.shape();
    let k = conv_geometry(s, weight.shape(), bias.len())?;
    let cout = weight.shape().n;
    let ckk = s.c * k * k;
    let hw = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, cout, s.h, s.w));
    let mut col = if k == 1 { Vec::new() } else { vec![0.0; ckk * ROW_TILE.min(s.h) * s.w] };
    for i in 0..s.n {
        let src = input.item(i);
        let dst = out.item_mut(i);
        for (co, row) in dst.chunks_exact_mut(hw).enumerate() {
            row.fill(bias[co]);
        }
        if k == 1 {
            sgemm(cout, ckk, hw, weight.data(), (ckk, 1), src, (hw, 1), 1.0, dst, hw);
            continue;
        }
        for rows in row_tiles(s.h) {
            let n = rows.len() * s.w;
            im2col(src, s.c, s.h, s.w, k, rows.clone(), &mut col);
            let c = &mut dst[rows.start * s.w..];
            sgemm(cout, ckk, n, weight.data(), (ckk, 1), &col, (n, 1), 1.0, c, hw);
        }
    }
    Ok(out)
}

/// Accumulates weight/bias gradients; returns the input gradient when requested.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
    need_input_grad: bool,
) -> Result<Option<Tensor>> {
    let s = input.shape();
    let k = conv_geometry(s, weight.shape(), grad_bias.len())?;
    let cout = weight.shape().n;
    if grad_out.shape() != Shape::new(s.n, cout, s.h, s.w) {
        bail!(Shape, "conv grad_out {} does not match output", grad_out.shape());
    }
    let ckk = s.c * k * k;
    let hw = s.plane();
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(s));
    if k == 1 {
        for i in 0..s.n {
            let g = grad_out.item(i);
            // dW += dY * X^T
            sgemm(cout, hw, ckk, g, (hw, 1), input.item(i), (1, hw), 1.0, grad_weight, ckk);
            if let Some(gi) = grad_in.as_mut() {
                // dX = W^T * dY
                sgemm(ckk, cout, hw, weight.data(), (1, ckk), g, (hw, 1), 0.0, gi.item_mut(i), hw);
            }
        }
    } else {
        let tile = ckk * ROW_TILE.min(s.h) * s.w;
        let mut col = vec![0.0; tile];
        let mut dcol = if need_input_grad { vec![0.0; tile] } else { Vec::new() };
        for i in 0..s.n {
            let g = grad_out.item(i);
            for rows in row_tiles(s.h) {
                let n = rows.len() * s.w;
                let g_tile = &g[rows.start * s.w..];
                im2col(input.item(i), s.c, s.h, s.w, k, rows.clone(), &mut col);
                // dW += dY * col^T
                sgemm(cout, n, ckk, g_tile, (hw, 1), &col, (1, n), 1.0, grad_weight, ckk);
                if let Some(gi) = grad_in.as_mut() {
                    // dcol = W^T * dY
                    sgemm(ckk, cout, n, weight.data(), (1, ckk), g_tile, (hw, 1), 0.0, &mut dcol, n);
                    col2im(&dcol, s.c, s.h, s.w, k, rows, gi.item_mut(i));
                }
            }
        }
    }
    for i in 0..s.n {
        for (co, row) in grad_out.item(i).chunks_exact(hw).enumerate() {
            grad_bias[co] += row.iter().map(|&v| v as f64).sum::<f64>() as f32;
        }
    }
    Ok(grad_in)
}

/// Saved state for the batch-norm backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

fn check_bn(input: &Tensor, gamma: &[f32], beta: &[f32]) -> Result<()> {
    let c = input.shape().c;
    if gamma.len() != c || beta.len() != c {
        bail!(Shape, "batch-norm parameters sized {}/{} for {c} channels", gamma.len(), beta.len());
    }
    Ok(())
}

/// Normalizes with batch statistics and folds them into the running estimates.
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
) -> Result<(Tensor, BnCache)> {
    check_bn(input, gamma, beta)?;
    let s = input.shape();
    let hw = s.plane();
    let count = (s.n * hw) as f64;
    let mut out = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut inv_std = vec![0.0f32; s.c];
    for c in 0..s.c {
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for i in 0..s.n {
            for &v in &input.item(i)[c * hw..(c + 1) * hw] {
                sum += v as f64;
                sum_sq += (v as f64) * (v as f64);
            }
        }
        let mean = sum / count;
        let var = (sum_sq / count - mean * mean).max(0.0);
        let istd = (1.0 / (var + BN_EPS as f64).sqrt()) as f32;
        inv_std[c] = istd;
        let mean32 = mean as f32;
        for i in 0..s.n {
            let off = i * s.item() + c * hw;
            for j in off..off + hw {
                let xh = (input.data()[j] - mean32) * istd;
                xhat.data_mut()[j] = xh;
                out.data_mut()[j] = gamma[c] * xh + beta[c];
            }
        }
        running_mean[c] = BN_MOMENTUM * running_mean[c] + (1.0 - BN_MOMENTUM) * mean32;
        running_var[c] = BN_MOMENTUM * running_var[c] + (1.0 - BN_MOMENTUM) * var as f32;
    }
    Ok((out, BnCache { xhat, inv_std }))
}

pub fn batchnorm_infer(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> Result<Tensor> {
    check_bn(input, gamma, beta)?;
    let s = input.shape();
    let hw = s.plane();
    let mut out = Tensor::zeros(s);
    for i in 0..s.n {
        for c in 0..s.c {
            let scale = gamma[c] / (running_var[c] + BN_EPS).sqrt();
            let shift = beta[c] - running_mean[c] * scale;
            let off = i * s.item() + c * hw;
            for (o, &x) in out.data_mut()[off..off + hw].iter_mut().zip(&input.data()[off..off + hw]) {
                *o = x * scale + shift;
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &[f32],
    grad_out: &Tensor,
    grad_gamma: &mut [f32],
    grad_beta: &mut [f32],
) -> Result<Tensor> {
    let s = cache.xhat.shape();
    if grad_out.shape() != s {
        bail!(Shape, "batch-norm grad_out {} does not match {s}", grad_out.shape());
    }
    let hw = s.plane();
    let m = (s.n * hw) as f64;
    let mut grad_in = Tensor::zeros(s);
    for c in 0..s.c {
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for i in 0..s.n {
            let off = i * s.item() + c * hw;
            for j in off..off + hw {
                let g = grad_out.data()[j] as f64;
                sum_g += g;
                sum_gx += g * cache.xhat.data()[j] as f64;
            }
        }
        grad_gamma[c] += sum_gx as f32;
        grad_beta[c] += sum_g as f32;
        let k = gamma[c] as f64 * cache.inv_std[c] as f64 / m;
        for i in 0..s.n {
            let off = i * s.item() + c * hw;
            for j in off..off + hw {
                let g = grad_out.data()[j] as f64;
                grad_in.data_mut()[j] = (k * (m * g - sum_g - cache.xhat.data()[j] as f64 * sum_gx)) as f32;
            }
        }
    }
    Ok(grad_in)
}

pub fn relu(mut input: Tensor) -> Tensor {
    for v in input.data_mut() {
        *v = v.max(0.0);
    }
    input
}

/// Passes gradient where the forward output was positive (subgradient 0 at 0).
pub fn relu_backward(output: &Tensor, mut grad: Tensor) -> Tensor {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        bail!(Shape, "add of {} and {}", a.shape(), b.shape());
    }
    let mut out = a.clone();
    out.clear_grad();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

pub fn add_in_place(acc: &mut Tensor, b: &Tensor) -> Result<()> {
    if acc.shape() != b.shape() {
        bail!(Shape, "add of {} and {}", acc.shape(), b.shape());
    }
    for (o, &v) in acc.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(())
}

/// Channel-axis concatenation.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        bail!(Shape, "concat of {sa} and {sb}");
    }
    let s = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(s.len());
    for i in 0..sa.n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor::from_vec(s, data)
}

/// Inverse of [`concat`]: the first `c_first` channels, then the rest.
pub fn split_channels(t: &Tensor, c_first: usize) -> Result<(Tensor, Tensor)> {
    let s = t.shape();
    if c_first > s.c {
        bail!(Shape, "cannot split {c_first} channels from {s}");
    }
    let cut = c_first * s.plane();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..s.n {
        let item = t.item(i);
        a.extend_from_slice(&item[..cut]);
        b.extend_from_slice(&item[cut..]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, c_first, s.h, s.w), a)?,
        Tensor::from_vec(Shape::new(s.n, s.c - c_first, s.h, s.w), b)?,
    ))
}

/// Mean squared error over every element of the batch, with its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        bail!(Shape, "mse of {} against {}", pred.shape(), target.shape());
    }
    let n = pred.data().len();
    if n == 0 {
        bail!(Shape, "mse of empty tensors");
    }
    let scale = 2.0 / n as f32;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0f64;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += (d as f64) * (d as f64);
        *g = scale * d;
    }
    Ok((loss / n as f64, grad))
}
