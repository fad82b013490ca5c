use std::borrow::Cow;

use super::{ConvGeometry, ParamId, ParamSet, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Vec<S>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
        d_in: usize,
        d_out: usize,
    },
    LeakyRelu {
        x: Var,
        alpha: S,
    },
    Swish {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
        width: usize,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: S,
    },
    ChannelAffine {
        x: Var,
        scale: Vec<S>,
    },
    Reshape {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<S>,
    },
}

#[derive(Debug)]
struct Node<'a, S: Scalar> {
    value: Cow<'a, Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Ordered record of executed ops. Values are immutable once recorded;
/// [`Tape::backward`] replays the record in reverse.
#[derive(Debug)]
pub struct Tape<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
    recording: bool,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contribution: impl FnOnce(&mut [S]), len: usize) {
    let buf = slot.get_or_insert_with(|| vec![S::zero(); len]);
    contribution(buf);
}

impl<'a, S: Scalar> Tape<'a, S> {
    /// A tape that keeps the intermediates backward needs.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A forward-only tape; `backward` on it is an error.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    fn push(&mut self, value: Cow<'a, Tensor<S>>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push(Cow::Owned(value), op, needs_grad))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient flows to it.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Input whose gradient is wanted (gradient checks, saliency).
    pub fn variable(&mut self, t: Tensor<S>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Binds a trainable parameter by reference.
    pub fn param(&mut self, set: &'a ParamSet<S>, id: ParamId) -> Var {
        self.push(Cow::Borrowed(set.get(id)), Op::Param(id), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, pad_h: usize, pad_w: usize) -> Result<Var, TensorError> {
        let geom = ConvGeometry::resolve(self.shape(x), self.shape(kernel), stride, pad_h, pad_w)?;
        if self.value(bias).len() != geom.out_c {
            return Err(TensorError::Dimension {
                op: "conv2d",
                lhs: self.shape(kernel).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let batched = self.value(x).rank() == 4;
        let cols = geom.im2col(self.value(x).data());
        let m = geom.rows();
        let k = geom.patch_len();
        let n = geom.out_c;
        let mut out = vec![S::zero(); m * n];
        let bias_data = self.value(bias).data();
        for row in out.chunks_exact_mut(n) {
            row.copy_from_slice(bias_data);
        }
        S::gemm(m, k, n, S::one(), &cols, false, self.value(kernel).data(), false, S::one(), &mut out);
        let value = Tensor::new(geom.output_shape(batched), out)?;
        let needs = self.needs(x) || self.needs(kernel) || self.needs(bias);
        let cols = if self.recording && self.needs(kernel) { cols } else { Vec::new() };
        self.push_checked(
            "conv2d",
            value,
            Op::Conv2d {
                x,
                k: kernel,
                b: bias,
                geom,
                cols,
            },
            needs,
        )
    }

    /// `x W + b` for `x` of shape `[D_in]` or `[N, D_in]` and `W` of shape
    /// `[D_in, D_out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let (rows, d_in, batched) = match xs[..] {
            [d] => (1, d, false),
            [n, d] => (n, d, true),
            _ => {
                return Err(TensorError::Geometry {
                    op: "linear",
                    msg: format!("input must be rank 1 or 2, got {xs:?}"),
                })
            }
        };
        let [w_in, d_out] = ws[..] else {
            return Err(TensorError::Geometry {
                op: "linear",
                msg: format!("weight must be rank 2, got {ws:?}"),
            });
        };
        if w_in != d_in {
            return Err(TensorError::Dimension { op: "linear", lhs: xs, rhs: ws });
        }
        if self.value(bias).len() != d_out {
            return Err(TensorError::Dimension {
                op: "linear",
                lhs: ws,
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut out = vec![S::zero(); rows * d_out];
        let bias_data = self.value(bias).data();
        for row in out.chunks_exact_mut(d_out) {
            row.copy_from_slice(bias_data);
        }
        S::gemm(rows, d_in, d_out, S::one(), self.value(x).data(), false, self.value(weight).data(), false, S::one(), &mut out);
        let shape = if batched { vec![rows, d_out] } else { vec![d_out] };
        let needs = self.needs(x) || self.needs(weight) || self.needs(bias);
        self.push_checked(
            "linear",
            Tensor::new(shape, out)?,
            Op::Linear {
                x,
                w: weight,
                b: bias,
                rows,
                d_in,
                d_out,
            },
            needs,
        )
    }

    fn map_unary(&mut self, name: &'static str, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var, TensorError> {
        let src = self.value(x);
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        let needs = self.needs(x);
        self.push_checked(name, out, op, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: S) -> Result<Var, TensorError> {
        self.map_unary("leaky_relu", x, |v| if v > S::zero() { v } else { alpha * v }, Op::LeakyRelu { x, alpha })
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map_unary("swish", x, |v| v * sigmoid(v), Op::Swish { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map_unary("sigmoid", x, sigmoid, Op::Sigmoid { x })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let src = self.value(x);
        let width = *src.shape().last().expect("tensors have rank >= 1");
        let mut out = src.data().to_vec();
        for row in out.chunks_exact_mut(width) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let out = Tensor::new(src.shape().to_vec(), out)?;
        let needs = self.needs(x);
        self.push_checked("softmax", out, Op::Softmax { x, width }, needs)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().zip(vb.data()).map(|(&p, &q)| p * q).collect())?;
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("mul", out, Op::Mul { a, b }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect())?;
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("add", out, Op::Add { a, b }, needs)
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Result<Var, TensorError> {
        self.map_unary("scale", x, |v| v * factor, Op::Scale { x, factor })
    }

    /// `x * scale[c] + shift[c]` where `c` indexes the last axis. The
    /// coefficients are constants.
    pub fn channel_affine(&mut self, x: Var, scale: &[S], shift: &[S]) -> Result<Var, TensorError> {
        let src = self.value(x);
        let width = *src.shape().last().expect("rank >= 1");
        if scale.len() != width || shift.len() != width {
            return Err(TensorError::Dimension {
                op: "channel_affine",
                lhs: src.shape().to_vec(),
                rhs: vec![scale.len()],
            });
        }
        let mut out = src.data().to_vec();
        for row in out.chunks_exact_mut(width) {
            for ((v, &a), &b) in row.iter_mut().zip(scale).zip(shift) {
                *v = *v * a + b;
            }
        }
        let out = Tensor::new(src.shape().to_vec(), out)?;
        let needs = self.needs(x);
        self.push_checked("channel_affine", out, Op::ChannelAffine { x, scale: scale.to_vec() }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let src = self.value(x);
        let expected: usize = shape.iter().product();
        if expected != src.len() {
            return Err(TensorError::Dimension {
                op: "reshape",
                lhs: src.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::new(shape, src.data().to_vec())?;
        let needs = self.needs(x);
        self.push_checked("reshape", out, Op::Reshape { x }, needs)
    }

    /// Collapses everything after the leading (batch) axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let lead = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, vec![lead, rest.max(1)])
    }

    /// Scalar `sum_i w_i x_i`.
    pub fn weighted_sum(&mut self, x: Var, weights: &[S]) -> Result<Var, TensorError> {
        let src = self.value(x);
        if weights.len() != src.len() {
            return Err(TensorError::Dimension {
                op: "weighted_sum",
                lhs: src.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let total: S = src.data().iter().zip(weights).map(|(&v, &w)| v * w).sum();
        let needs = self.needs(x);
        self.push_checked(
            "weighted_sum",
            Tensor::scalar(total),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            needs,
        )
    }

    /// Reverse pass. `seeds` pairs output vars with their upstream gradient
    /// (same length as the value); seeding several outputs differentiates
    /// the sum of their weighted contributions.
    pub fn backward(&self, seeds: Vec<(Var, Vec<S>)>) -> Result<Gradients<S>, TensorError> {
        if !self.recording {
            return Err(TensorError::NotRecording);
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            let len = self.nodes[v.0].value.len();
            if g.len() != len {
                return Err(TensorError::Dimension {
                    op: "backward seed",
                    lhs: self.nodes[v.0].value.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            accumulate(&mut grads[v.0], |buf| buf.iter_mut().zip(&g).for_each(|(b, &s)| *b += s), len);
        }

        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            params: self
                .nodes
                .iter()
                .map(|n| match n.op {
                    Op::Param(id) => Some(id),
                    _ => None,
                })
                .collect(),
        })
    }

    fn propagate(&self, node: &Node<'a, S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let len_of = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, k, b, geom, cols } => {
                let m = geom.rows();
                let kk = geom.patch_len();
                let n = geom.out_c;
                if self.needs(*k) {
                    accumulate(
                        &mut grads[k.0],
                        |buf| S::gemm(kk, m, n, S::one(), cols, true, g, false, S::one(), buf),
                        kk * n,
                    );
                }
                if self.needs(*b) {
                    accumulate(
                        &mut grads[b.0],
                        |buf| {
                            for row in g.chunks_exact(n) {
                                buf.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                            }
                        },
                        n,
                    );
                }
                if self.needs(*x) {
                    let mut dcols = vec![S::zero(); m * kk];
                    S::gemm(m, n, kk, S::one(), g, false, self.value(*k).data(), true, S::zero(), &mut dcols);
                    accumulate(&mut grads[x.0], |buf| geom.col2im(&dcols, buf), len_of(*x));
                }
            }
            Op::Linear { x, w, b, rows, d_in, d_out } => {
                let (rows, d_in, d_out) = (*rows, *d_in, *d_out);
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    accumulate(
                        &mut grads[w.0],
                        |buf| S::gemm(d_in, rows, d_out, S::one(), xv, true, g, false, S::one(), buf),
                        d_in * d_out,
                    );
                }
                if self.needs(*b) {
                    accumulate(
                        &mut grads[b.0],
                        |buf| {
                            for row in g.chunks_exact(d_out) {
                                buf.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                            }
                        },
                        d_out,
                    );
                }
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    accumulate(
                        &mut grads[x.0],
                        |buf| S::gemm(rows, d_out, d_in, S::one(), g, false, wv, true, S::one(), buf),
                        rows * d_in,
                    );
                }
            }
            Op::LeakyRelu { x, alpha } => {
                let xv = self.value(*x).data();
                accumulate(
                    &mut grads[x.0],
                    |buf| {
                        for ((d, &s), &v) in buf.iter_mut().zip(g).zip(xv) {
                            *d += if v > S::zero() { s } else { *alpha * s };
                        }
                    },
                    xv.len(),
                );
            }
            Op::Swish { x } => {
                let xv = self.value(*x).data();
                accumulate(
                    &mut grads[x.0],
                    |buf| {
                        for ((d, &s), &v) in buf.iter_mut().zip(g).zip(xv) {
                            let sg = sigmoid(v);
                            *d += s * (sg + v * sg * (S::one() - sg));
                        }
                    },
                    xv.len(),
                );
            }
            Op::Sigmoid { x } => {
                let yv = node.value.data();
                accumulate(
                    &mut grads[x.0],
                    |buf| {
                        for ((d, &s), &y) in buf.iter_mut().zip(g).zip(yv) {
                            *d += s * y * (S::one() - y);
                        }
                    },
                    yv.len(),
                );
            }
            Op::Softmax { x, width } => {
                let yv = node.value.data();
                accumulate(
                    &mut grads[x.0],
                    |buf| {
                        for ((drow, grow), yrow) in buf.chunks_exact_mut(*width).zip(g.chunks_exact(*width)).zip(yv.chunks_exact(*width)) {
                            let dot: S = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for ((d, &s), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += y * (s - dot);
                            }
                        }
                    },
                    yv.len(),
                );
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    accumulate(
                        &mut grads[a.0],
                        |buf| buf.iter_mut().zip(g).zip(bv).for_each(|((d, &s), &q)| *d += s * q),
                        av.len(),
                    );
                }
                if self.needs(*b) {
                    accumulate(
                        &mut grads[b.0],
                        |buf| buf.iter_mut().zip(g).zip(av).for_each(|((d, &s), &p)| *d += s * p),
                        bv.len(),
                    );
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.needs(*v) {
                        accumulate(&mut grads[v.0], |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s), g.len());
                    }
                }
            }
            Op::Scale { x, factor } => {
                accumulate(
                    &mut grads[x.0],
                    |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *factor),
                    g.len(),
                );
            }
            Op::ChannelAffine { x, scale } => {
                let width = scale.len();
                accumulate(
                    &mut grads[x.0],
                    |buf| {
                        for (drow, grow) in buf.chunks_exact_mut(width).zip(g.chunks_exact(width)) {
                            for ((d, &s), &a) in drow.iter_mut().zip(grow).zip(scale) {
                                *d += s * a;
                            }
                        }
                    },
                    g.len(),
                );
            }
            Op::Reshape { x } => {
                accumulate(&mut grads[x.0], |buf| buf.iter_mut().zip(g).for_each(|(d, &s)| *d += s), g.len());
            }
            Op::WeightedSum { x, weights } => {
                let s = g[0];
                accumulate(
                    &mut grads[x.0],
                    |buf| buf.iter_mut().zip(weights).for_each(|(d, &w)| *d += s * w),
                    weights.len(),
                );
            }
        }
    }
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    params: Vec<Option<ParamId>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a recorded value, if any flowed to it.
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    /// Parameter gradients indexed by [`ParamId`], summed over every
    /// binding of the same parameter. Unreached parameters are `None`.
    pub fn into_param_grads(self, param_count: usize) -> Vec<Option<Vec<S>>> {
        let mut out: Vec<Option<Vec<S>>> = (0..param_count).map(|_| None).collect();
        for (g, p) in self.grads.into_iter().zip(self.params) {
            let (Some(g), Some(id)) = (g, p) else { continue };
            match &mut out[id.index()] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn activations_at_reference_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let lr = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(lr).data(), &[-0.2, 0.0, 2.0]);
        let sw = tape.swish(x).unwrap();
        assert_eq!(tape.value(sw).data()[1], 0.0);
        let sg = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(sg).data()[1], 0.5);
        let eq = tape.constant(t(&[4], &[1.5; 4]));
        let sm = tape.softmax(eq).unwrap();
        assert!(tape.value(sm).data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn degenerate_conv_is_affine() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 1], &[3.0]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[2.5]));
        let b = tape.constant(t(&[1], &[-0.5]));
        let y = tape.conv2d(x, k, b, 1, 0, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0]);
        assert_eq!(tape.shape(y), &[1, 1, 1]);
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[5, 5, 2]));
        let k = tape.constant(Tensor::zeros(&[3, 3, 1, 4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let err = tape.conv2d(x, k, b, 1, 0, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[5, 5, 2]") && msg.contains("[3, 3, 1, 4]"), "{msg}");
    }

    #[test]
    fn linear_zero_input_gives_bias_and_identity_passes_through() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        let w = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[2], &[0.1, -0.7]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.1, -0.7]);

        let x = tape.constant(t(&[3], &[4.0, -1.0, 0.5]));
        let eye = tape.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let z = tape.constant(Tensor::zeros(&[3]));
        let y = tape.linear(x, eye, z).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, -1.0, 0.5]);
    }

    #[test]
    fn linear_dimension_mismatch_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[4]));
        let w = tape.constant(Tensor::zeros(&[3, 2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.linear(x, w, b), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn non_finite_output_is_an_error_state() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[2], f32::MAX));
        assert!(matches!(tape.scale(x, 10.0), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let mut tape = Tape::<f32>::inference();
        let x = tape.variable(Tensor::zeros(&[2]));
        let y = tape.swish(x).unwrap();
        assert_eq!(tape.backward(vec![(y, vec![1.0, 1.0])]).unwrap_err(), TensorError::NotRecording);
    }

    #[test]
    fn swish_derivative_at_zero_is_one_half() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[1], &[0.0]));
        let y = tape.swish(x).unwrap();
        let g = tape.backward(vec![(y, vec![1.0])]).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.5]);
    }

    #[test]
    fn gradients_of_summed_losses_add() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[3], &[0.3, -1.2, 2.0]));
        let a = tape.swish(x).unwrap();
        let b = tape.sigmoid(x).unwrap();
        let la = tape.weighted_sum(a, &[1.0, 2.0, 3.0]).unwrap();
        let lb = tape.weighted_sum(b, &[-1.0, 0.5, 0.25]).unwrap();
        let both = tape.backward(vec![(la, vec![1.0]), (lb, vec![1.0])]).unwrap();
        let only_a = tape.backward(vec![(la, vec![1.0])]).unwrap();
        let only_b = tape.backward(vec![(lb, vec![1.0])]).unwrap();
        for i in 0..3 {
            let sum = only_a.wrt(x).unwrap()[i] + only_b.wrt(x).unwrap()[i];
            assert!((both.wrt(x).unwrap()[i] - sum).abs() < 1e-14);
        }
    }

    #[test]
    fn param_gradients_accumulate_over_bindings() {
        let mut set = ParamSet::<f64>::new();
        let id = set.add("w", t(&[2], &[1.0, 2.0]));
        let mut tape = Tape::new();
        let p1 = tape.param(&set, id);
        let p2 = tape.param(&set, id);
        let l1 = tape.weighted_sum(p1, &[1.0, 1.0]).unwrap();
        let l2 = tape.weighted_sum(p2, &[2.0, 3.0]).unwrap();
        let grads = tape.backward(vec![(l1, vec![1.0]), (l2, vec![1.0])]).unwrap().into_param_grads(1);
        assert_eq!(grads[0].as_deref().unwrap(), &[3.0, 4.0]);
    }
}
