//! Gating blocks.

use rand::Rng;

use super::layers::{Dense, LayerInfo};
use crate::tensor::{ParamSet, Scalar, Tape, Tensor, TensorError, Var};

/// Sigmoid-gated unit with a Swish feature path:
///
/// ```text
/// f = swish(W_f z + b_f)
/// g = sigmoid(W_g z + b_g)
/// y = W_o (f * g) + b_o
/// ```
///
/// The hidden width equals the input width.
#[derive(Debug, Clone)]
pub struct GluBlock {
    pub feature: Dense,
    pub gate: Dense,
    pub output: Dense,
}

/// Feature-path bias of a grafted block; puts Swish in its near-linear range.
pub const GRAFT_SHIFT: f64 = 6.0;
/// Gate bias of a grafted block (gate starts near 0.98).
pub const GRAFT_GATE_BIAS: f64 = 4.0;
/// Scale applied to the random gate weights of a grafted block.
pub const GRAFT_GATE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct GluVars {
    pub gate: Var,
    pub hidden: Var,
    pub output: Var,
}

impl GluBlock {
    pub fn new<S: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<S>, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            feature: Dense::new(params, "glu.feature", input, input, rng),
            gate: Dense::new(params, "glu.gate", input, input, rng),
            output: Dense::new(params, "glu.output", input, output, rng),
        }
    }

    /// Re-initializes a square block inserted into a trained network so that
    /// `y ≈ z` on entry: `f = swish(z + GRAFT_SHIFT) ≈ z + GRAFT_SHIFT`, the
    /// gate is nearly open with small random weights, and the output
    /// projection undoes the shift and the mean gate value.
    pub fn init_near_identity<S: Scalar>(&self, params: &mut ParamSet<S>) {
        assert_eq!(self.feature.d_in, self.output.d_out, "near-identity init needs a square block");
        let d = self.feature.d_in;
        let open = 1.0 / (1.0 + (-GRAFT_GATE_BIAS).exp());
        let eye = |v: f64| Tensor::from_fn(&[d, d], move |i| if i / d == i % d { S::lit(v) } else { S::lit(0.0) });
        *params.get_mut(self.feature.weight) = eye(1.0);
        *params.get_mut(self.feature.bias) = Tensor::full(&[d], S::lit(GRAFT_SHIFT));
        for w in params.get_mut(self.gate.weight).data_mut() {
            *w = S::lit(w.as_f64() * GRAFT_GATE_SCALE);
        }
        *params.get_mut(self.gate.bias) = Tensor::full(&[d], S::lit(GRAFT_GATE_BIAS));
        *params.get_mut(self.output.weight) = eye(1.0 / open);
        *params.get_mut(self.output.bias) = Tensor::full(&[d], S::lit(-GRAFT_SHIFT));
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, z: Var) -> Result<GluVars, TensorError> {
        let f_pre = self.feature.forward(tape, params, z)?;
        let f = tape.swish(f_pre)?;
        let g_pre = self.gate.forward(tape, params, z)?;
        let gate = tape.sigmoid(g_pre)?;
        let hidden = tape.mul(f, gate)?;
        let output = self.output.forward(tape, params, hidden)?;
        Ok(GluVars { gate, hidden, output })
    }

    pub fn layer_rows(&self) -> Vec<LayerInfo> {
        let row = |name: &str, d: &Dense| LayerInfo {
            name: name.into(),
            kind: "Linear".into(),
            output_shape: vec![d.d_out],
            detail: format!("{} -> {}", d.d_in, d.d_out),
            params: d.param_count(),
        };
        vec![
            row("GLU_Feature", &self.feature),
            row("GLU_Gate", &self.gate),
            row("GLU_Output", &self.output),
        ]
    }
}

/// Softmax-gated projection used after the deep encoder:
///
/// ```text
/// g = softmax(W_g h + b_g)
/// p = W_p h + b_p
/// y = width * (g * p)
/// ```
///
/// The `width` factor makes a uniform gate pass `p` through unchanged.
#[derive(Debug, Clone)]
pub struct SoftmaxGate {
    pub gate: Dense,
    pub projection: Dense,
}

impl SoftmaxGate {
    pub fn new<S: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<S>, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            gate: Dense::new(params, "gate.softmax", input, output, rng),
            projection: Dense::new(params, "gate.projection", input, output, rng),
        }
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, h: Var) -> Result<GluVars, TensorError> {
        let g_pre = self.gate.forward(tape, params, h)?;
        let gate = tape.softmax(g_pre)?;
        let p = self.projection.forward(tape, params, h)?;
        let gated = tape.mul(gate, p)?;
        let output = tape.scale(gated, S::lit(self.gate.d_out as f64))?;
        Ok(GluVars {
            gate,
            hidden: gated,
            output,
        })
    }

    pub fn layer_rows(&self) -> Vec<LayerInfo> {
        vec![
            LayerInfo {
                name: "GLU Gate".into(),
                kind: "Softmax gate".into(),
                output_shape: vec![self.gate.d_out],
                detail: format!("{} -> {}", self.gate.d_in, self.gate.d_out),
                params: self.gate.param_count(),
            },
            LayerInfo {
                name: "Dense Projection".into(),
                kind: "Linear".into(),
                output_shape: vec![self.projection.d_out],
                detail: format!("{} -> {}", self.projection.d_in, self.projection.d_out),
                params: self.projection.param_count(),
            },
        ]
    }
}
