//! 1D convolution and transposed convolution.
//!
//! Both directions are lowered onto column buffers and a matrix product:
//! `im2col` gathers the zero-padded sliding windows of a map into a
//! `(channels * K) x positions` matrix and `col2im_add` scatters such a matrix
//! back. Convolution is `W * im2col(x)`; its adjoint, the transposed
//! convolution, is `col2im(W^T * y)`. The multi-term kernels below take a list
//! of `(input, weights)` pairs sharing one geometry and sum their
//! contributions, which is what a generative layer needs for its power terms.

use crate::error::{Error, Result};
use crate::numeric::gemm::{gemm, MatRef};
use crate::numeric::tensor::{FeatureMap, Tensor};
use crate::scalar::Scalar;

/// Output length of a strided, zero-padded cross-correlation.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if kernel == 0 {
        return Err(Error::InvalidArgument("kernel size must be >= 1".into()));
    }
    let padded = len + 2 * padding;
    if kernel > padded {
        return Err(Error::shape(
            "conv1d",
            format!("kernel <= padded length {padded}"),
            format!("kernel {kernel}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output length of the transposed convolution, `(L - 1) * stride + K - 2 * padding`.
pub fn tconv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if kernel == 0 || len == 0 {
        return Err(Error::shape(
            "transposed_conv1d",
            "positive length and kernel",
            format!("L={len} K={kernel}"),
        ));
    }
    let full = (len - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(Error::shape(
            "transposed_conv1d",
            "positive output length",
            format!("(L-1)*stride+K-2*padding = {}", full as isize - 2 * padding as isize),
        ));
    }
    Ok(full - 2 * padding)
}

/// Geometry shared by the forward-direction convolution (`len_in -> len_out`).
/// A transposed convolution maps `len_out -> len_in` with the same geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub len_in: usize,
    pub len_out: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel
    }

    fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel
    }
}

/// Gather padded windows: `cols[(c*K + r)*positions + m] = x[c][m*stride + r - padding]`.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    positions: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); channels * kernel * positions];
    for c in 0..channels {
        let src = &x[c * len..(c + 1) * len];
        for r in 0..kernel {
            let row = &mut cols[(c * kernel + r) * positions..(c * kernel + r + 1) * positions];
            for (m, slot) in row.iter_mut().enumerate() {
                let idx = (m * stride + r) as isize - padding as isize;
                if idx >= 0 && (idx as usize) < len {
                    *slot = src[idx as usize];
                }
            }
        }
    }
    cols
}

/// Scatter-add of column buffers; exact adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add<T: Scalar>(
    cols: &[T],
    channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    positions: usize,
    out: &mut [T],
    len: usize,
) {
    for c in 0..channels {
        let dst = &mut out[c * len..(c + 1) * len];
        for r in 0..kernel {
            let row = &cols[(c * kernel + r) * positions..(c * kernel + r + 1) * positions];
            for (m, &v) in row.iter().enumerate() {
                let idx = (m * stride + r) as isize - padding as isize;
                if idx >= 0 && (idx as usize) < len {
                    dst[idx as usize] += v;
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&[T]>, len: usize) {
    if let Some(bias) = bias {
        for (row, &b) in out.chunks_mut(len).zip(bias) {
            row.iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad<T: Scalar>(dout: &[T], len: usize) -> Vec<T> {
    dout.chunks(len).map(|row| row.iter().copied().sum()).collect()
}

/// `out = bias + sum_j W_j * im2col(x_j)`; weights `[C_out][C_in][K]`.
pub(crate) fn conv_forward_multi<T: Scalar>(g: &ConvGeom, terms: &[(&[T], &[T])], bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.out_channels * g.len_out];
    for (j, (x, w)) in terms.iter().enumerate() {
        debug_assert_eq!(w.len(), g.weight_len());
        let cols = im2col(x, g.in_channels, g.len_in, g.kernel, g.stride, g.padding, g.len_out);
        let beta = if j == 0 { T::zero() } else { T::one() };
        gemm(
            T::one(),
            MatRef::new(w, g.out_channels, g.col_rows()),
            MatRef::new(&cols, g.col_rows(), g.len_out),
            beta,
            &mut out,
        );
    }
    add_bias(&mut out, bias, g.len_out);
    out
}

/// Gradients of [`conv_forward_multi`] for one term: `(dW, dx)`.
pub(crate) fn conv_backward_term<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    need_dw: bool,
    need_dx: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let dw = need_dw.then(|| {
        let cols = im2col(x, g.in_channels, g.len_in, g.kernel, g.stride, g.padding, g.len_out);
        let mut dw = vec![T::zero(); g.weight_len()];
        gemm(
            T::one(),
            MatRef::new(dout, g.out_channels, g.len_out),
            MatRef::new(&cols, g.col_rows(), g.len_out).t(),
            T::zero(),
            &mut dw,
        );
        dw
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); g.col_rows() * g.len_out];
        gemm(
            T::one(),
            MatRef::new(w, g.out_channels, g.col_rows()).t(),
            MatRef::new(dout, g.out_channels, g.len_out),
            T::zero(),
            &mut dcols,
        );
        let mut dx = vec![T::zero(); g.in_channels * g.len_in];
        col2im_add(
            &dcols,
            g.in_channels,
            g.kernel,
            g.stride,
            g.padding,
            g.len_out,
            &mut dx,
            g.len_in,
        );
        dx
    });
    (dw, dx)
}

/// Transposed direction: inputs are `[C_out][len_out]` maps (the conv's output
/// side), weights `[C_out][C_in][K]` in the conv's naming, output `[C_in][len_in]`.
///
/// Callers of the public transposed convolution pass weights `[C_in][C_out][K]`
/// in *their* naming, which is the same buffer.
pub(crate) fn tconv_forward_multi<T: Scalar>(g: &ConvGeom, terms: &[(&[T], &[T])], bias: Option<&[T]>) -> Vec<T> {
    let mut cols = vec![T::zero(); g.col_rows() * g.len_out];
    for (j, (y, w)) in terms.iter().enumerate() {
        debug_assert_eq!(w.len(), g.weight_len());
        let beta = if j == 0 { T::zero() } else { T::one() };
        gemm(
            T::one(),
            MatRef::new(w, g.out_channels, g.col_rows()).t(),
            MatRef::new(y, g.out_channels, g.len_out),
            beta,
            &mut cols,
        );
    }
    let mut out = vec![T::zero(); g.in_channels * g.len_in];
    col2im_add(
        &cols,
        g.in_channels,
        g.kernel,
        g.stride,
        g.padding,
        g.len_out,
        &mut out,
        g.len_in,
    );
    add_bias(&mut out, bias, g.len_in);
    out
}

/// Gradients of [`tconv_forward_multi`] for one term: `(dW, dy)`.
/// `dcols` is `im2col(dout)`, shared by all terms (see [`tconv_dcols`]).
pub(crate) fn tconv_backward_term<T: Scalar>(
    g: &ConvGeom,
    y: &[T],
    w: &[T],
    dcols: &[T],
    need_dw: bool,
    need_dy: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let dw = need_dw.then(|| {
        let mut dw = vec![T::zero(); g.weight_len()];
        gemm(
            T::one(),
            MatRef::new(y, g.out_channels, g.len_out),
            MatRef::new(dcols, g.col_rows(), g.len_out).t(),
            T::zero(),
            &mut dw,
        );
        dw
    });
    let dy = need_dy.then(|| {
        let mut dy = vec![T::zero(); g.out_channels * g.len_out];
        gemm(
            T::one(),
            MatRef::new(w, g.out_channels, g.col_rows()),
            MatRef::new(dcols, g.col_rows(), g.len_out),
            T::zero(),
            &mut dy,
        );
        dy
    });
    (dw, dy)
}

pub(crate) fn tconv_dcols<T: Scalar>(g: &ConvGeom, dout: &[T]) -> Vec<T> {
    im2col(dout, g.in_channels, g.len_in, g.kernel, g.stride, g.padding, g.len_out)
}

pub(crate) fn bias_gradient<T: Scalar>(dout: &[T], len: usize) -> Vec<T> {
    bias_grad(dout, len)
}

/// Validate `[C_out][C_in][K]` conv weights against an input and build the geometry.
pub(crate) fn conv_geom(
    in_channels: usize,
    len: usize,
    weight_shape: &[usize],
    bias_len: Option<usize>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let [c_out, c_in, k] = *weight_shape else {
        return Err(Error::shape(
            "conv1d",
            "weights [C_out, C_in, K]",
            format!("{weight_shape:?}"),
        ));
    };
    if c_in != in_channels {
        return Err(Error::shape(
            "conv1d",
            format!("input with {c_in} channels for weights {weight_shape:?}"),
            format!("input with {in_channels} channels"),
        ));
    }
    if let Some(b) = bias_len {
        if b != c_out {
            return Err(Error::shape(
                "conv1d",
                format!("bias of length {c_out}"),
                format!("bias of length {b}"),
            ));
        }
    }
    let len_out = conv_out_len(len, k, stride, padding)?;
    Ok(ConvGeom {
        in_channels: c_in,
        out_channels: c_out,
        kernel: k,
        stride,
        padding,
        len_in: len,
        len_out,
    })
}

/// Geometry for a transposed convolution with public weights `[C_in][C_out][K]`
/// over an input of `in_channels x len`. The returned geometry is expressed in
/// forward-conv terms (its `out_channels` is the transposed input's channels).
pub(crate) fn tconv_geom(
    in_channels: usize,
    len: usize,
    weight_shape: &[usize],
    bias_len: Option<usize>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let [c_in, c_out, k] = *weight_shape else {
        return Err(Error::shape(
            "transposed_conv1d",
            "weights [C_in, C_out, K]",
            format!("{weight_shape:?}"),
        ));
    };
    if c_in != in_channels {
        return Err(Error::shape(
            "transposed_conv1d",
            format!("input with {c_in} channels for weights {weight_shape:?}"),
            format!("input with {in_channels} channels"),
        ));
    }
    if let Some(b) = bias_len {
        if b != c_out {
            return Err(Error::shape(
                "transposed_conv1d",
                format!("bias of length {c_out}"),
                format!("bias of length {b}"),
            ));
        }
    }
    let len_out = tconv_out_len(len, k, stride, padding)?;
    Ok(ConvGeom {
        in_channels: c_out,
        out_channels: c_in,
        kernel: k,
        stride,
        padding,
        len_in: len_out,
        len_out: len,
    })
}

/// Strided cross-correlation with symmetric zero padding.
///
/// `output[o][m] = bias[o] + sum_i sum_r weights[o][i][r] * padded[i][m*stride + r]`,
/// summed channel-major with taps innermost.
pub fn conv1d<T: Scalar>(
    input: &FeatureMap<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<FeatureMap<T>> {
    let g = conv_geom(
        input.channels(),
        input.length(),
        weights.shape(),
        Some(bias.len()),
        stride,
        padding,
    )?;
    let out = conv_forward_multi(&g, &[(input.values(), weights.data())], Some(bias));
    FeatureMap::new(g.out_channels, g.len_out, out)
}

/// Adjoint of [`conv1d`]; weights are `[C_in][C_out][K]`.
pub fn transposed_conv1d<T: Scalar>(
    input: &FeatureMap<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<FeatureMap<T>> {
    let g = tconv_geom(
        input.channels(),
        input.length(),
        weights.shape(),
        Some(bias.len()),
        stride,
        padding,
    )?;
    let out = tconv_forward_multi(&g, &[(input.values(), weights.data())], Some(bias));
    FeatureMap::new(g.in_channels, g.len_in, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(c: usize, v: &[f64]) -> FeatureMap<f64> {
        FeatureMap::new(c, v.len() / c, v.to_vec()).unwrap()
    }

    fn w(shape: [usize; 3], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_tap_selects_first_sample() {
        let y = conv1d(&fm(1, &[1.0, 2.0, 3.0]), &w([1, 1, 2], &[1.0, 0.0]), &[0.0], 1, 0).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0]);
    }

    #[test]
    fn strided_sliding_sum() {
        let y = conv1d(&fm(1, &[1.0; 4]), &w([1, 1, 2], &[1.0, 1.0]), &[0.0], 2, 0).unwrap();
        assert_eq!(y.values(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let y = conv1d(&fm(1, &[5.0]), &w([1, 1, 1], &[0.0]), &[3.0], 1, 0).unwrap();
        assert_eq!(y.values(), &[3.0]);
    }

    #[test]
    fn padding_is_zero_and_symmetric() {
        let y = conv1d(&fm(1, &[1.0, 2.0, 3.0]), &w([1, 1, 3], &[1.0, 1.0, 1.0]), &[0.0], 1, 1).unwrap();
        assert_eq!(y.values(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let err = conv1d(&fm(2, &[0.0; 4]), &w([1, 1, 1], &[1.0]), &[0.0], 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 1, 1]") && msg.contains("2 channels"), "{msg}");
    }

    #[test]
    fn kernel_longer_than_padded_input_is_rejected() {
        assert!(conv1d(&fm(1, &[1.0, 2.0]), &w([1, 1, 3], &[1.0; 3]), &[0.0], 1, 0).is_err());
        assert!(conv1d(&fm(1, &[1.0, 2.0]), &w([1, 1, 1], &[1.0]), &[0.0], 0, 0).is_err());
    }

    #[test]
    fn transposed_scatter_adds_taps() {
        let y = transposed_conv1d(&fm(1, &[1.0, 1.0]), &w([1, 1, 2], &[1.0, 1.0]), &[0.0], 2, 0).unwrap();
        assert_eq!(y.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn transposed_zero_input_broadcasts_bias() {
        let y = transposed_conv1d(&fm(1, &[0.0; 3]), &w([1, 2, 3], &[0.7; 6]), &[1.5, -2.0], 2, 1).unwrap();
        assert_eq!(y.channels(), 2);
        assert_eq!(y.length(), 5);
        assert!(y.channel(0).iter().all(|&v| v == 1.5));
        assert!(y.channel(1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn transposed_rejects_nonpositive_length() {
        assert!(transposed_conv1d(&fm(1, &[1.0]), &w([1, 1, 2], &[1.0, 1.0]), &[0.0], 1, 1).is_err());
    }

    #[test]
    fn strided_shape_rules() {
        assert_eq!(conv_out_len(16, 7, 2, 3).unwrap(), 8);
        assert_eq!(tconv_out_len(8, 4, 2, 1).unwrap(), 16);
        assert_eq!(conv_out_len(4096, 81, 8, 40).unwrap(), 512);
    }
}
