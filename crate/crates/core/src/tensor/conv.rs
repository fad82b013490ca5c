use super::{Scalar, Tensor, TensorError};

/// `floor((size + 2*pad - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit inside the padded input.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Resolved shapes of one NHWC convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Validates an input of shape `[N,H,W,C]` (or `[H,W,C]`) against a
    /// kernel of shape `[kH,kW,C_in,C_out]`.
    pub fn resolve(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad_h: usize,
        pad_w: usize,
    ) -> Result<Self, TensorError> {
        let (batch, in_h, in_w, in_c) = match *input {
            [h, w, c] => (1, h, w, c),
            [n, h, w, c] => (n, h, w, c),
            _ => {
                return Err(TensorError::Geometry {
                    op: "conv2d",
                    msg: format!("input must be HxWxC or NxHxWxC, got {input:?}"),
                })
            }
        };
        let [k_h, k_w, k_in, out_c] = *kernel else {
            return Err(TensorError::Geometry {
                op: "conv2d",
                msg: format!("kernel must be kH x kW x C_in x C_out, got {kernel:?}"),
            });
        };
        if k_in != in_c {
            return Err(TensorError::Dimension {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let out_h = conv_output_dim(in_h, k_h, stride, pad_h);
        let out_w = conv_output_dim(in_w, k_w, stride, pad_w);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(TensorError::Geometry {
                op: "conv2d",
                msg: format!(
                    "kernel {k_h}x{k_w} (stride {stride}, pad {pad_h},{pad_w}) does not fit input {in_h}x{in_w}"
                ),
            });
        };
        Ok(Self {
            batch,
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            stride,
            pad_h,
            pad_w,
            out_h,
            out_w,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    pub fn output_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.out_h, self.out_w, self.out_c]
        } else {
            vec![self.out_h, self.out_w, self.out_c]
        }
    }

    /// Unrolls input patches into a `rows x patch_len` matrix whose column
    /// order `(kh, kw, c)` matches the flattened kernel layout.
    pub(crate) fn im2col<S: Scalar>(&self, input: &[S]) -> Vec<S> {
        let k = self.patch_len();
        let mut cols = vec![S::zero(); self.rows() * k];
        let c = self.in_c;
        for n in 0..self.batch {
            let img = &input[n * self.in_h * self.in_w * c..(n + 1) * self.in_h * self.in_w * c];
            for oh in 0..self.out_h {
                for ow in 0..self.out_w {
                    let row = (n * self.out_h + oh) * self.out_w + ow;
                    let dst = &mut cols[row * k..(row + 1) * k];
                    for kh in 0..self.k_h {
                        let ih = (oh * self.stride + kh) as isize - self.pad_h as isize;
                        if ih < 0 || ih >= self.in_h as isize {
                            continue;
                        }
                        let ih = ih as usize;
                        for kw in 0..self.k_w {
                            let iw = (ow * self.stride + kw) as isize - self.pad_w as isize;
                            if iw < 0 || iw >= self.in_w as isize {
                                continue;
                            }
                            let src = (ih * self.in_w + iw as usize) * c;
                            let off = (kh * self.k_w + kw) * c;
                            dst[off..off + c].copy_from_slice(&img[src..src + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds a `rows x patch_len` gradient back onto the input layout.
    pub(crate) fn col2im<S: Scalar>(&self, cols: &[S], grad_input: &mut [S]) {
        let k = self.patch_len();
        let c = self.in_c;
        for n in 0..self.batch {
            let base = n * self.in_h * self.in_w * c;
            for oh in 0..self.out_h {
                for ow in 0..self.out_w {
                    let row = (n * self.out_h + oh) * self.out_w + ow;
                    let src = &cols[row * k..(row + 1) * k];
                    for kh in 0..self.k_h {
                        let ih = (oh * self.stride + kh) as isize - self.pad_h as isize;
                        if ih < 0 || ih >= self.in_h as isize {
                            continue;
                        }
                        let ih = ih as usize;
                        for kw in 0..self.k_w {
                            let iw = (ow * self.stride + kw) as isize - self.pad_w as isize;
                            if iw < 0 || iw >= self.in_w as isize {
                                continue;
                            }
                            let dst = base + (ih * self.in_w + iw as usize) * c;
                            let off = (kh * self.k_w + kw) * c;
                            for (g, &s) in grad_input[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                                *g += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Direct sliding-window convolution, used as the reference the unrolled
/// implementation is checked against.
pub fn conv2d_reference<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
) -> Result<Tensor<S>, TensorError> {
    let g = ConvGeometry::resolve(input.shape(), kernel.shape(), stride, pad_h, pad_w)?;
    if bias.len() != g.out_c {
        return Err(TensorError::Dimension {
            op: "conv2d",
            lhs: kernel.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let x = input.data();
    let w = kernel.data();
    let mut out = vec![S::zero(); g.rows() * g.out_c];
    for n in 0..g.batch {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                for oc in 0..g.out_c {
                    let mut acc = bias.data()[oc];
                    for kh in 0..g.k_h {
                        for kw in 0..g.k_w {
                            let ih = (oh * stride + kh) as isize - pad_h as isize;
                            let iw = (ow * stride + kw) as isize - pad_w as isize;
                            if ih < 0 || iw < 0 || ih >= g.in_h as isize || iw >= g.in_w as isize {
                                continue;
                            }
                            for ic in 0..g.in_c {
                                let xi = ((n * g.in_h + ih as usize) * g.in_w + iw as usize) * g.in_c + ic;
                                let wi = ((kh * g.k_w + kw) * g.in_c + ic) * g.out_c + oc;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((n * g.out_h + oh) * g.out_w + ow) * g.out_c + oc] = acc;
                }
            }
        }
    }
    Tensor::new(g.output_shape(input.rank() == 4), out)
}
