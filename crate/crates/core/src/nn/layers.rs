use rand::Rng;

use crate::tensor::{conv_output_dim, init_uniform_fan_in, ParamId, ParamSet, Scalar, Tape, TensorError, Var};

/// One row of a parameter table.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub detail: String,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<S>,
        name: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = k * k * c_in;
        let kernel = params.add(format!("{name}.kernel"), init_uniform_fan_in(&[k, k, c_in, c_out], fan_in, rng));
        let bias = params.add(format!("{name}.bias"), init_uniform_fan_in(&[c_out], fan_in, rng));
        Self {
            kernel,
            bias,
            k,
            c_in,
            c_out,
            stride,
            pad,
        }
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, x: Var) -> Result<Var, TensorError> {
        let k = tape.param(params, self.kernel);
        let b = tape.param(params, self.bias);
        tape.conv2d(x, k, b, self.stride, self.pad, self.pad)
    }

    pub fn param_count(&self) -> usize {
        self.k * self.k * self.c_in * self.c_out + self.c_out
    }

    /// Output `(h, w)` for an `(h, w)` input, if the kernel fits.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((conv_output_dim(h, self.k, self.stride, self.pad)?, conv_output_dim(w, self.k, self.stride, self.pad)?))
    }

    pub fn detail(&self) -> String {
        format!("{}x{}, stride {}", self.k, self.k, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new<S: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<S>, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let weight = params.add(format!("{name}.weight"), init_uniform_fan_in(&[d_in, d_out], d_in, rng));
        let bias = params.add(format!("{name}.bias"), init_uniform_fan_in(&[d_out], d_in, rng));
        Self { weight, bias, d_in, d_out }
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        tape.linear(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }
}
