//! Layer kernels shared by the traced (training) and plain (inference)
//! forward paths, plus their backward counterparts.
//!
//! Convolutions are lowered to `im2col` followed by an accumulating matrix
//! product, which keeps every hot inner loop contiguous.

use crate::error::{Error, Result};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

pub fn conv1d_out_len(l: usize, ksize: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride < 1 {
        return Err(Error::dim(format!("conv1d stride must be >= 1, got {stride}")));
    }
    if l + 2 * padding < ksize {
        return Err(Error::dim(format!(
            "conv1d input length {l} with padding {padding} is shorter than kernel {ksize}"
        )));
    }
    Ok((l + 2 * padding - ksize) / stride + 1)
}

pub fn conv_transpose1d_out_len(
    l_in: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if stride < 1 {
        return Err(Error::dim(format!("conv_transpose1d stride must be >= 1, got {stride}")));
    }
    if output_padding >= stride {
        return Err(Error::dim(format!(
            "conv_transpose1d output_padding {output_padding} must be < stride {stride}"
        )));
    }
    if l_in == 0 {
        return Err(Error::dim("conv_transpose1d input length must be positive".to_string()));
    }
    let grown = (l_in - 1) * stride + ksize + output_padding;
    if grown <= 2 * padding {
        return Err(Error::dim(format!(
            "conv_transpose1d output collapses: padding {padding} too large"
        )));
    }
    Ok(grown - 2 * padding)
}

/// Unrolls `input` ([channels, l]) into `col` ([channels * ksize, l_out]) so
/// that a convolution becomes one matrix product. Out-of-range positions
/// read as zero (zero-padding semantics).
fn im2col<E: Real>(
    input: &[E],
    channels: usize,
    l: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
    col: &mut [E],
) {
    debug_assert_eq!(input.len(), channels * l);
    debug_assert_eq!(col.len(), channels * ksize * l_out);
    for ch in 0..channels {
        let src = &input[ch * l..(ch + 1) * l];
        for kk in 0..ksize {
            let row = &mut col[(ch * ksize + kk) * l_out..(ch * ksize + kk + 1) * l_out];
            for (t, slot) in row.iter_mut().enumerate() {
                let pos = t * stride + kk;
                *slot = if pos >= padding && pos - padding < l {
                    src[pos - padding]
                } else {
                    E::zero()
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back onto `out`.
fn col2im_add<E: Real>(
    col: &[E],
    channels: usize,
    l: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
    l_cols: usize,
    out: &mut [E],
) {
    debug_assert_eq!(out.len(), channels * l);
    debug_assert_eq!(col.len(), channels * ksize * l_cols);
    for ch in 0..channels {
        let dst = &mut out[ch * l..(ch + 1) * l];
        for kk in 0..ksize {
            let row = &col[(ch * ksize + kk) * l_cols..(ch * ksize + kk + 1) * l_cols];
            for (t, &v) in row.iter().enumerate() {
                let pos = t * stride + kk;
                if pos >= padding && pos - padding < l {
                    dst[pos - padding] = dst[pos - padding] + v;
                }
            }
        }
    }
}

fn transpose<E: Copy>(rows: usize, cols: usize, src: &[E], dst: &mut [E]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

fn check_conv_shapes<E: Real>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    in_axis: usize,
    out_axis: usize,
) -> Result<()> {
    if input.shape().len() != 3 || weight.shape().len() != 3 {
        return Err(Error::dim(format!(
            "conv expects 3-d input and weight, got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    if input.shape()[1] != weight.shape()[in_axis] {
        return Err(Error::dim(format!(
            "input channels {} do not match weight channels {}",
            input.shape()[1],
            weight.shape()[in_axis]
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [weight.shape()[out_axis]] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {} output channels",
                b.shape(),
                weight.shape()[out_axis]
            )));
        }
    }
    Ok(())
}

/// `input` [batch, in_ch, l] * `weight` [out_ch, in_ch, ksize] (+ bias
/// [out_ch]) -> [batch, out_ch, l_out].
pub fn conv1d_forward<E: Real>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    check_conv_shapes(input, weight, bias, 1, 0)?;
    let (batch, in_ch, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_ch, ksize) = (weight.shape()[0], weight.shape()[2]);
    let l_out = conv1d_out_len(l, ksize, stride, padding)?;
    let ck = in_ch * ksize;

    let mut out = Tensor::zeros(vec![batch, out_ch, l_out]);
    let mut col = vec![E::zero(); ck * l_out];
    for b in 0..batch {
        let x = &input.data()[b * in_ch * l..(b + 1) * in_ch * l];
        im2col(x, in_ch, l, ksize, stride, padding, l_out, &mut col);
        let y = &mut out.data_mut()[b * out_ch * l_out..(b + 1) * out_ch * l_out];
        if let Some(bias) = bias {
            for (co, row) in y.chunks_exact_mut(l_out).enumerate() {
                row.fill(bias.data()[co]);
            }
        }
        E::gemm_acc(out_ch, ck, l_out, weight.data(), &col, y);
    }
    Ok(out)
}

/// Gradients of [`conv1d_forward`] w.r.t. input, weight and bias.
pub fn conv1d_backward<E: Real>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    dy: &[E],
) -> Result<(Tensor<E>, Tensor<E>, Option<Tensor<E>>)> {
    let (batch, in_ch, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_ch, ksize) = (weight.shape()[0], weight.shape()[2]);
    let l_out = conv1d_out_len(l, ksize, stride, padding)?;
    let ck = in_ch * ksize;
    debug_assert_eq!(dy.len(), batch * out_ch * l_out);

    let mut dx = Tensor::zeros(input.shape().to_vec());
    let mut dw = Tensor::zeros(weight.shape().to_vec());
    let mut db = has_bias.then(|| Tensor::zeros(vec![out_ch]));

    // weight^T once: [ck, out_ch]
    let mut wt = vec![E::zero(); ck * out_ch];
    transpose(out_ch, ck, weight.data(), &mut wt);

    let mut col = vec![E::zero(); ck * l_out];
    let mut col_t = vec![E::zero(); ck * l_out];
    let mut dcol = vec![E::zero(); ck * l_out];
    for b in 0..batch {
        let dyb = &dy[b * out_ch * l_out..(b + 1) * out_ch * l_out];

        // d input: col-space gradient, then scatter back.
        dcol.fill(E::zero());
        E::gemm_acc(ck, out_ch, l_out, &wt, dyb, &mut dcol);
        let dxb = &mut dx.data_mut()[b * in_ch * l..(b + 1) * in_ch * l];
        col2im_add(&dcol, in_ch, l, ksize, stride, padding, l_out, dxb);

        // d weight: dY_b [out_ch, l_out] * col_b^T [l_out, ck].
        let x = &input.data()[b * in_ch * l..(b + 1) * in_ch * l];
        im2col(x, in_ch, l, ksize, stride, padding, l_out, &mut col);
        transpose(ck, l_out, &col, &mut col_t);
        E::gemm_acc(out_ch, l_out, ck, dyb, &col_t, dw.data_mut());

        if let Some(db) = db.as_mut() {
            for (co, row) in dyb.chunks_exact(l_out).enumerate() {
                let mut s = E::zero();
                for &v in row {
                    s = s + v;
                }
                db.data_mut()[co] = db.data()[co] + s;
            }
        }
    }
    Ok((dx, dw, db))
}

/// `input` [batch, in_ch, l_in] * `weight` [in_ch, out_ch, ksize] (+ bias
/// [out_ch]) -> [batch, out_ch, l_out] with
/// l_out = (l_in - 1) * stride - 2 * padding + ksize + output_padding.
pub fn conv_transpose1d_forward<E: Real>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor<E>> {
    check_conv_shapes(input, weight, bias, 0, 1)?;
    let (batch, in_ch, l_in) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_ch, ksize) = (weight.shape()[1], weight.shape()[2]);
    let l_out = conv_transpose1d_out_len(l_in, ksize, stride, padding, output_padding)?;
    let ck = out_ch * ksize;

    // weight^T once: [ck, in_ch] from the [in_ch, ck] view.
    let mut wt = vec![E::zero(); ck * in_ch];
    transpose(in_ch, ck, weight.data(), &mut wt);

    let mut out = Tensor::zeros(vec![batch, out_ch, l_out]);
    let mut col = vec![E::zero(); ck * l_in];
    for b in 0..batch {
        let x = &input.data()[b * in_ch * l_in..(b + 1) * in_ch * l_in];
        col.fill(E::zero());
        E::gemm_acc(ck, in_ch, l_in, &wt, x, &mut col);
        let y = &mut out.data_mut()[b * out_ch * l_out..(b + 1) * out_ch * l_out];
        if let Some(bias) = bias {
            for (co, row) in y.chunks_exact_mut(l_out).enumerate() {
                row.fill(bias.data()[co]);
            }
        }
        col2im_add(&col, out_ch, l_out, ksize, stride, padding, l_in, y);
    }
    Ok(out)
}

/// Gradients of [`conv_transpose1d_forward`].
pub fn conv_transpose1d_backward<E: Real>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    output_padding: usize,
    dy: &[E],
) -> Result<(Tensor<E>, Tensor<E>, Option<Tensor<E>>)> {
    let (batch, in_ch, l_in) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_ch, ksize) = (weight.shape()[1], weight.shape()[2]);
    let l_out = conv_transpose1d_out_len(l_in, ksize, stride, padding, output_padding)?;
    let ck = out_ch * ksize;
    debug_assert_eq!(dy.len(), batch * out_ch * l_out);

    let mut dx = Tensor::zeros(input.shape().to_vec());
    let mut dw = Tensor::zeros(weight.shape().to_vec());
    let mut db = has_bias.then(|| Tensor::zeros(vec![out_ch]));

    let mut dycol = vec![E::zero(); ck * l_in];
    let mut dycol_t = vec![E::zero(); ck * l_in];
    for b in 0..batch {
        let dyb = &dy[b * out_ch * l_out..(b + 1) * out_ch * l_out];
        // The forward scattered col -> y, so the backward gathers y -> col.
        im2col(dyb, out_ch, l_out, ksize, stride, padding, l_in, &mut dycol);

        // d input [in_ch, l_in] = W [in_ch, ck] * dycol [ck, l_in].
        let dxb = &mut dx.data_mut()[b * in_ch * l_in..(b + 1) * in_ch * l_in];
        E::gemm_acc(in_ch, ck, l_in, weight.data(), &dycol, dxb);

        // d weight [in_ch, ck] += X_b [in_ch, l_in] * dycol^T [l_in, ck].
        let x = &input.data()[b * in_ch * l_in..(b + 1) * in_ch * l_in];
        transpose(ck, l_in, &dycol, &mut dycol_t);
        E::gemm_acc(in_ch, l_in, ck, x, &dycol_t, dw.data_mut());

        if let Some(db) = db.as_mut() {
            for (co, row) in dyb.chunks_exact(l_out).enumerate() {
                let mut s = E::zero();
                for &v in row {
                    s = s + v;
                }
                db.data_mut()[co] = db.data()[co] + s;
            }
        }
    }
    Ok((dx, dw, db))
}

/// `x` [batch, in_f] * `weight`^T [in_f, out_f] (+ bias [out_f]) ->
/// [batch, out_f]. Weight is stored [out_f, in_f].
pub fn affine_forward<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    if x.shape().len() != 2 || weight.shape().len() != 2 {
        return Err(Error::dim(format!(
            "affine expects 2-d input and weight, got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let (batch, in_f) = (x.shape()[0], x.shape()[1]);
    let (out_f, w_in) = (weight.shape()[0], weight.shape()[1]);
    if in_f != w_in {
        return Err(Error::dim(format!(
            "affine input width {in_f} does not match weight width {w_in}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [out_f] {
            return Err(Error::dim(format!(
                "affine bias shape {:?} does not match {out_f} outputs",
                b.shape()
            )));
        }
    }
    let mut wt = vec![E::zero(); in_f * out_f];
    transpose(out_f, in_f, weight.data(), &mut wt);
    let mut out = Tensor::zeros(vec![batch, out_f]);
    if let Some(bias) = bias {
        for row in out.data_mut().chunks_exact_mut(out_f) {
            row.copy_from_slice(bias.data());
        }
    }
    E::gemm_acc(batch, in_f, out_f, x.data(), &wt, out.data_mut());
    Ok(out)
}

/// Gradients of [`affine_forward`].
pub fn affine_backward<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    has_bias: bool,
    dy: &[E],
) -> Result<(Tensor<E>, Tensor<E>, Option<Tensor<E>>)> {
    let (batch, in_f) = (x.shape()[0], x.shape()[1]);
    let out_f = weight.shape()[0];
    debug_assert_eq!(dy.len(), batch * out_f);

    // d input [batch, in_f] = dY [batch, out_f] * W [out_f, in_f].
    let mut dx = Tensor::zeros(vec![batch, in_f]);
    E::gemm_acc(batch, out_f, in_f, dy, weight.data(), dx.data_mut());

    // d weight [out_f, in_f] = dY^T [out_f, batch] * X [batch, in_f].
    let mut dyt = vec![E::zero(); batch * out_f];
    transpose(batch, out_f, dy, &mut dyt);
    let mut dw = Tensor::zeros(vec![out_f, in_f]);
    E::gemm_acc(out_f, batch, in_f, &dyt, x.data(), dw.data_mut());

    let db = has_bias.then(|| {
        let mut db = Tensor::zeros(vec![out_f]);
        for row in dy.chunks_exact(out_f) {
            for (acc, &v) in db.data_mut().iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        db
    });
    Ok((dx, dw, db))
}

pub fn relu_forward<E: Real>(x: &Tensor<E>) -> Tensor<E> {
    let data = x.data().iter().map(|&v| if v > E::zero() { v } else { E::zero() }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// dX = dY masked to where the forward input was strictly positive.
pub fn relu_backward<E: Real>(x: &Tensor<E>, dy: &[E]) -> Vec<E> {
    x.data()
        .iter()
        .zip(dy)
        .map(|(&v, &g)| if v > E::zero() { g } else { E::zero() })
        .collect()
}

/// Mean squared error over every element (batch and feature dimensions
/// alike). The sum is accumulated in double precision for stability.
pub fn mse_value<E: Real>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "mse shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("mse over an empty tensor".to_string()));
    }
    let mut acc = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = (p - t).to_f64();
        acc += d * d;
    }
    Ok(E::from_f64(acc / pred.len() as f64))
}

/// d/dpred and d/dtarget of `mse_value` scaled by the upstream scalar `dl`.
pub fn mse_backward<E: Real>(pred: &Tensor<E>, target: &Tensor<E>, dl: E) -> (Vec<E>, Vec<E>) {
    let n = E::from_f64(pred.len() as f64);
    let two = E::from_f64(2.0);
    let scale = two * dl / n;
    let dpred: Vec<E> =
        pred.data().iter().zip(target.data()).map(|(&p, &t)| scale * (p - t)).collect();
    let dtarget: Vec<E> = dpred.iter().map(|&g| -g).collect();
    (dpred, dtarget)
}
