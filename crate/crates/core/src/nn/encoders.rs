//! Visual encoders: the two-layer CNN and the 16-conv residual network.

use rand::Rng;

use super::layers::{Conv, Dense, LayerInfo};
use super::ModelError;
use crate::tensor::{ParamSet, Scalar, Tape, TensorError, Var};

pub const FEATURE_DIM: usize = 256;

/// conv 8x8/4 (1->16) -> LeakyReLU -> conv 4x4/2 (16->32) -> LeakyReLU
/// -> flatten -> dense 256.
#[derive(Debug, Clone)]
pub struct SimpleCnnEncoder {
    pub conv1: Conv,
    pub conv2: Conv,
    pub fc: Dense,
    pub slope: f64,
    shapes: [(usize, usize, usize); 2],
}

impl SimpleCnnEncoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<S>, height: usize, width: usize, slope: f64, rng: &mut R) -> Result<Self, ModelError> {
        let conv1 = Conv::new(params, "conv1", 8, 1, 16, 4, 0, rng);
        let (h1, w1) = conv1.output_hw(height, width).ok_or_else(|| ModelError::InputTooSmall {
            stage: "conv1".into(),
            height,
            width,
        })?;
        let conv2 = Conv::new(params, "conv2", 4, 16, 32, 2, 0, rng);
        let (h2, w2) = conv2.output_hw(h1, w1).ok_or_else(|| ModelError::InputTooSmall {
            stage: "conv2".into(),
            height,
            width,
        })?;
        let fc = Dense::new(params, "fc1", h2 * w2 * 32, FEATURE_DIM, rng);
        Ok(Self {
            conv1,
            conv2,
            fc,
            slope,
            shapes: [(h1, w1, 16), (h2, w2, 32)],
        })
    }

    pub fn flatten_dim(&self) -> usize {
        self.fc.d_in
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, x: Var) -> Result<EncoderVars, TensorError> {
        let alpha = S::lit(self.slope);
        let h1 = self.conv1.forward(tape, params, x)?;
        let h1 = tape.leaky_relu(h1, alpha)?;
        let h2 = self.conv2.forward(tape, params, h1)?;
        let h2 = tape.leaky_relu(h2, alpha)?;
        let flat = tape.flatten(h2)?;
        let z = self.fc.forward(tape, params, flat)?;
        Ok(EncoderVars {
            stages: vec![h1, h2],
            flat,
            output: z,
        })
    }

    pub fn layer_rows(&self) -> Vec<LayerInfo> {
        let [(h1, w1, c1), (h2, w2, c2)] = self.shapes;
        vec![
            LayerInfo {
                name: "Conv1".into(),
                kind: "Conv2D".into(),
                output_shape: vec![h1, w1, c1],
                detail: self.conv1.detail(),
                params: self.conv1.param_count(),
            },
            LayerInfo {
                name: "Conv2".into(),
                kind: "Conv2D".into(),
                output_shape: vec![h2, w2, c2],
                detail: self.conv2.detail(),
                params: self.conv2.param_count(),
            },
            LayerInfo {
                name: "FC1".into(),
                kind: "Linear".into(),
                output_shape: vec![FEATURE_DIM],
                detail: format!("{} -> {}", self.fc.d_in, self.fc.d_out),
                params: self.fc.param_count(),
            },
        ]
    }
}

/// Intermediate handles of an encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    /// Per-stage activations (for shape inspection).
    pub stages: Vec<Var>,
    pub flat: Var,
    /// Encoder output: `z` for the CNN, the flattened map for the ResNet.
    pub output: Var,
}

/// Two 3x3 stride-1 convolutions with symmetric padding 1:
/// `h + conv_b(lrelu(conv_a(lrelu(h))))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv_a: Conv,
    pub conv_b: Conv,
}

impl ResidualBlock {
    fn new<S: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<S>, name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            conv_a: Conv::new(params, &format!("{name}.a"), 3, channels, channels, 1, 1, rng),
            conv_b: Conv::new(params, &format!("{name}.b"), 3, channels, channels, 1, 1, rng),
        }
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, h: Var, alpha: S) -> Result<Var, TensorError> {
        let a = tape.leaky_relu(h, alpha)?;
        let a = self.conv_a.forward(tape, params, a)?;
        let a = tape.leaky_relu(a, alpha)?;
        let residual = self.conv_b.forward(tape, params, a)?;
        tape.add(h, residual)
    }

    pub fn param_count(&self) -> usize {
        self.conv_a.param_count() + self.conv_b.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub downsample: Option<Conv>,
    pub blocks: Vec<ResidualBlock>,
    pub out_shape: (usize, usize, usize),
}

/// Channel widths of the four stages.
pub const STAGE_CHANNELS: [usize; 4] = [64, 128, 256, 512];
/// Residual blocks (pairs of convolutions) per stage.
pub const STAGE_BLOCKS: [usize; 4] = [2, 1, 2, 1];

/// Initial 4x4/4 conv, four residual stages joined by 2x2/2 downsample
/// convs, LeakyReLU, flatten.
#[derive(Debug, Clone)]
pub struct DeepResNetEncoder {
    pub initial: Conv,
    pub stages: Vec<Stage>,
    pub slope: f64,
    initial_shape: (usize, usize, usize),
    flat_dim: usize,
}

impl DeepResNetEncoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<S>, height: usize, width: usize, slope: f64, rng: &mut R) -> Result<Self, ModelError> {
        let too_small = |stage: &str| ModelError::InputTooSmall {
            stage: stage.into(),
            height,
            width,
        };
        let initial = Conv::new(params, "initial", 4, 1, STAGE_CHANNELS[0], 4, 0, rng);
        let (mut h, mut w) = initial.output_hw(height, width).ok_or_else(|| too_small("initial conv"))?;
        let initial_shape = (h, w, STAGE_CHANNELS[0]);
        let mut stages = Vec::new();
        let mut channels = STAGE_CHANNELS[0];
        let mut block_index = 0;
        for (s, (&c, &n_blocks)) in STAGE_CHANNELS.iter().zip(&STAGE_BLOCKS).enumerate() {
            let downsample = if s == 0 {
                None
            } else {
                let conv = Conv::new(params, &format!("down{s}"), 2, channels, c, 2, 0, rng);
                (h, w) = conv.output_hw(h, w).ok_or_else(|| too_small(&format!("downsample before stage {}", s + 1)))?;
                Some(conv)
            };
            channels = c;
            let blocks = (0..n_blocks)
                .map(|_| {
                    block_index += 1;
                    ResidualBlock::new(params, &format!("stage{}.block{block_index}", s + 1), c, rng)
                })
                .collect();
            stages.push(Stage {
                downsample,
                blocks,
                out_shape: (h, w, c),
            });
        }
        Ok(Self {
            initial,
            stages,
            slope,
            initial_shape,
            flat_dim: h * w * channels,
        })
    }

    pub fn flatten_dim(&self) -> usize {
        self.flat_dim
    }

    pub fn conv_layer_count(&self) -> usize {
        1 + self
            .stages
            .iter()
            .map(|s| s.downsample.is_some() as usize + 2 * s.blocks.len())
            .sum::<usize>()
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, x: Var) -> Result<EncoderVars, TensorError> {
        let alpha = S::lit(self.slope);
        let mut h = self.initial.forward(tape, params, x)?;
        let mut stage_vars = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if let Some(down) = &stage.downsample {
                h = down.forward(tape, params, h)?;
            }
            for block in &stage.blocks {
                h = block.forward(tape, params, h, alpha)?;
            }
            stage_vars.push(h);
        }
        let act = tape.leaky_relu(h, alpha)?;
        let flat = tape.flatten(act)?;
        Ok(EncoderVars {
            stages: stage_vars,
            flat,
            output: flat,
        })
    }

    pub fn layer_rows(&self) -> Vec<LayerInfo> {
        let (h0, w0, c0) = self.initial_shape;
        let mut rows = vec![LayerInfo {
            name: "Initial Conv".into(),
            kind: "Conv2D".into(),
            output_shape: vec![h0, w0, c0],
            detail: self.initial.detail(),
            params: self.initial.param_count(),
        }];
        let mut block_index = 0;
        for (s, stage) in self.stages.iter().enumerate() {
            let (h, w, c) = stage.out_shape;
            if let Some(down) = &stage.downsample {
                rows.push(LayerInfo {
                    name: "Downsample".into(),
                    kind: "Conv2D".into(),
                    output_shape: vec![h, w, c],
                    detail: down.detail(),
                    params: down.param_count(),
                });
            }
            for block in &stage.blocks {
                block_index += 1;
                rows.push(LayerInfo {
                    name: format!("Stage {}: Residual Blocks {}-{}", s + 1, 2 * block_index - 1, 2 * block_index),
                    kind: "2x(Conv+LeakyReLU)".into(),
                    output_shape: vec![h, w, c],
                    detail: "3x3, stride 1, pad 1".into(),
                    params: block.param_count(),
                });
            }
        }
        rows.push(LayerInfo {
            name: "Flatten".into(),
            kind: "-".into(),
            output_shape: vec![self.flat_dim],
            detail: "spatial flatten".into(),
            params: 0,
        });
        rows
    }
}
