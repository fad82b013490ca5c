use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoders::{DeepResNetEncoder, EncoderVars, SimpleCnnEncoder, FEATURE_DIM};
use super::glu::{GluBlock, GluVars, SoftmaxGate};
use super::heads::{act, ActOutput, PolicyValueHeads, ACTION_DIM};
use super::layers::LayerInfo;
use super::normalizer::{ObservationNormalizer, DEFAULT_MOMENTUM};
use super::ModelError;
use crate::tensor::{ParamSet, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SimpleCnn,
    DeepResnet,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::SimpleCnn => "simple_cnn",
            Architecture::DeepResnet => "deep_resnet",
        })
    }
}

/// Architecture description. Serialized verbatim into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub height: usize,
    pub width: usize,
    /// Observation normalization in front of the encoder.
    pub use_norm: bool,
    /// Gating block after the encoder (sigmoid GLU for the CNN, softmax
    /// gate for the ResNet).
    pub use_glu: bool,
    pub leaky_slope: f64,
    pub norm_momentum: f64,
}

impl ModelSpec {
    pub fn simple_cnn(height: usize, width: usize, use_norm: bool, use_glu: bool) -> Self {
        Self {
            architecture: Architecture::SimpleCnn,
            height,
            width,
            use_norm,
            use_glu,
            leaky_slope: 0.2,
            norm_momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn deep_resnet(height: usize, width: usize) -> Self {
        Self {
            architecture: Architecture::DeepResnet,
            height,
            width,
            use_norm: true,
            use_glu: true,
            leaky_slope: 0.2,
            norm_momentum: DEFAULT_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone)]
enum Encoder {
    Simple(SimpleCnnEncoder),
    Deep(DeepResNetEncoder),
}

#[derive(Debug, Clone)]
enum Gate {
    Glu(GluBlock),
    Softmax(SoftmaxGate),
}

/// Feature extraction site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSite {
    #[serde(rename = "post-encoder")]
    PostEncoder,
    #[serde(rename = "post-GLU")]
    PostGlu,
}

impl FeatureSite {
    pub const NAMES: [&'static str; 2] = ["post-encoder", "post-GLU"];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "post-encoder" => Some(Self::PostEncoder),
            "post-GLU" => Some(Self::PostGlu),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSite::PostEncoder => "post-encoder",
            FeatureSite::PostGlu => "post-GLU",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub encoder: EncoderVars,
    pub gate: Option<GluVars>,
    /// Input to the heads.
    pub features: Var,
    /// Policy mean, `[N, 3]`.
    pub mean: Var,
    /// State value, `[N, 1]`.
    pub value: Var,
}

/// Encoder + optional gate + heads, with the normalizer state.
#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    spec: ModelSpec,
    params: ParamSet<S>,
    normalizer: ObservationNormalizer,
    encoder: Encoder,
    gate: Option<Gate>,
    heads: PolicyValueHeads,
}

impl<S: Scalar> Model<S> {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self, ModelError> {
        let mut params = ParamSet::new();
        let slope = spec.leaky_slope;
        let (encoder, enc_dim) = match spec.architecture {
            Architecture::SimpleCnn => {
                let e = SimpleCnnEncoder::new(&mut params, spec.height, spec.width, slope, rng)?;
                (Encoder::Simple(e), FEATURE_DIM)
            }
            Architecture::DeepResnet => {
                let e = DeepResNetEncoder::new(&mut params, spec.height, spec.width, slope, rng)?;
                let d = e.flatten_dim();
                (Encoder::Deep(e), d)
            }
        };
        let (gate, feat_dim) = match (spec.use_glu, spec.architecture) {
            (false, _) => (None, enc_dim),
            (true, Architecture::SimpleCnn) => (Some(Gate::Glu(GluBlock::new(&mut params, enc_dim, FEATURE_DIM, rng))), FEATURE_DIM),
            (true, Architecture::DeepResnet) => (Some(Gate::Softmax(SoftmaxGate::new(&mut params, enc_dim, FEATURE_DIM, rng))), FEATURE_DIM),
        };
        let heads = PolicyValueHeads::new(&mut params, feat_dim, rng);
        Ok(Self {
            normalizer: ObservationNormalizer::new(1, spec.norm_momentum),
            spec,
            params,
            encoder,
            gate,
            heads,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn normalizer(&self) -> &ObservationNormalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: ObservationNormalizer) {
        self.normalizer = normalizer;
    }

    pub fn heads(&self) -> &PolicyValueHeads {
        &self.heads
    }

    pub fn input_len(&self) -> usize {
        self.spec.height * self.spec.width
    }

    /// Normalizes raw pixels with frozen statistics (identity when
    /// normalization is disabled).
    pub fn normalize(&self, raw: &[f32]) -> Vec<f32> {
        if self.spec.use_norm {
            self.normalizer.apply(raw)
        } else {
            raw.to_vec()
        }
    }

    /// Training-time normalization: folds the batch into the running
    /// statistics, then normalizes it.
    pub fn observe(&mut self, raw: &[f32]) -> Vec<f32> {
        if self.spec.use_norm {
            self.normalizer.normalize(raw, true)
        } else {
            raw.to_vec()
        }
    }

    /// Records a `[N, H, W, 1]` constant holding already-normalized pixels.
    pub fn input_var(&self, tape: &mut Tape<'_, S>, pixels: &[f32]) -> Result<Var, ModelError> {
        let per = self.input_len();
        if pixels.is_empty() || pixels.len() % per != 0 {
            return Err(ModelError::InputShape {
                expected: per,
                actual: pixels.len(),
            });
        }
        let n = pixels.len() / per;
        let t = Tensor::new(vec![n, self.spec.height, self.spec.width, 1], pixels.iter().map(|&p| S::lit(p as f64)).collect())?;
        Ok(tape.constant(t))
    }

    /// Forward pass on normalized input `[N, H, W, 1]`.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, S>, x: Var) -> Result<ForwardOutput, ModelError> {
        self.forward_with(tape, &self.params, x)
    }

    /// Forward pass reading weights from `params` instead of the model's own
    /// set (which must share its layout).
    pub fn forward_with<'a>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, x: Var) -> Result<ForwardOutput, ModelError> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != self.spec.height || shape[2] != self.spec.width || shape[3] != 1 {
            return Err(ModelError::InputShape {
                expected: self.input_len(),
                actual: tape.value(x).len(),
            });
        }
        let encoder = match &self.encoder {
            Encoder::Simple(e) => e.forward(tape, params, x)?,
            Encoder::Deep(e) => e.forward(tape, params, x)?,
        };
        let gate = match &self.gate {
            None => None,
            Some(Gate::Glu(g)) => Some(g.forward(tape, params, encoder.output)?),
            Some(Gate::Softmax(g)) => Some(g.forward(tape, params, encoder.output)?),
        };
        let features = gate.map_or(encoder.output, |g| g.output);
        let (mean, value) = self.heads.forward(tape, params, features)?;
        Ok(ForwardOutput {
            encoder,
            gate,
            features,
            mean,
            value,
        })
    }

    /// Forward pass on raw pixels with normalization recorded on the tape,
    /// so gradients flow through it.
    pub fn forward_raw<'a>(&'a self, tape: &mut Tape<'a, S>, raw: Var) -> Result<ForwardOutput, ModelError> {
        self.forward_raw_with(tape, &self.params, raw)
    }

    pub fn forward_raw_with<'a>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, raw: Var) -> Result<ForwardOutput, ModelError> {
        let x = if self.spec.use_norm {
            let (scale, shift) = self.normalizer.coefficients();
            let scale: Vec<S> = scale.iter().map(|&v| S::lit(v)).collect();
            let shift: Vec<S> = shift.iter().map(|&v| S::lit(v)).collect();
            tape.channel_affine(raw, &scale, &shift)?
        } else {
            raw
        };
        self.forward_with(tape, params, x)
    }

    /// Policy outputs for a batch of normalized observations; `rng = None`
    /// selects the deterministic (mean) action.
    pub fn act_batch<R: Rng + ?Sized>(&self, pixels: &[f32], mut rng: Option<&mut R>) -> Result<Vec<ActOutput>, ModelError> {
        let mut tape = Tape::inference();
        let x = self.input_var(&mut tape, pixels)?;
        let out = self.forward(&mut tape, x)?;
        let means = tape.value(out.mean).data();
        let values = tape.value(out.value).data();
        let log_std = self.heads.log_std(&self.params);
        let batch = values.len();
        let mut result = Vec::with_capacity(batch);
        for i in 0..batch {
            let mean: Vec<f64> = means[i * ACTION_DIM..(i + 1) * ACTION_DIM].iter().map(|v| v.as_f64()).collect();
            result.push(act(&mean, &log_std, values[i].as_f64(), rng.as_deref_mut()));
        }
        Ok(result)
    }

    /// Activations at `site` for each normalized observation, one row each.
    pub fn features(&self, pixels: &[f32], site: FeatureSite) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut tape = Tape::inference();
        let x = self.input_var(&mut tape, pixels)?;
        let out = self.forward(&mut tape, x)?;
        let var = match site {
            FeatureSite::PostEncoder => out.encoder.output,
            FeatureSite::PostGlu => out.features,
        };
        let value = tape.value(var);
        let width = value.shape()[1];
        Ok(value.data().chunks(width).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect())
    }

    pub fn conv_layer_count(&self) -> usize {
        match &self.encoder {
            Encoder::Simple(_) => 2,
            Encoder::Deep(e) => e.conv_layer_count(),
        }
    }

    /// Per-layer parameter table, in forward order.
    pub fn layer_table(&self) -> Vec<LayerInfo> {
        let mut rows = vec![LayerInfo {
            name: "Input".into(),
            kind: "-".into(),
            output_shape: vec![self.spec.height, self.spec.width, 1],
            detail: "grayscale".into(),
            params: 0,
        }];
        if self.spec.use_norm {
            rows.push(LayerInfo {
                name: "Normalization".into(),
                kind: "Running stats".into(),
                output_shape: vec![self.spec.height, self.spec.width, 1],
                detail: "-".into(),
                params: 0,
            });
        }
        match &self.encoder {
            Encoder::Simple(e) => rows.extend(e.layer_rows()),
            Encoder::Deep(e) => rows.extend(e.layer_rows()),
        }
        match &self.gate {
            Some(Gate::Glu(g)) => rows.extend(g.layer_rows()),
            Some(Gate::Softmax(g)) => rows.extend(g.layer_rows()),
            None => {}
        }
        rows.extend(self.heads.layer_rows());
        rows
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Copy of this model with a newly inserted gate block and every other
    /// parameter (and the normalizer) carried over bitwise. The block starts
    /// near the identity map, so the policy initially acts as before.
    pub fn with_fresh_glu<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self, ModelError> {
        if self.spec.use_glu {
            return Err(ModelError::AlreadyGated);
        }
        let mut spec = self.spec.clone();
        spec.use_glu = true;
        let mut grafted = Self::new(spec, rng)?;
        for (_, name, tensor) in self.params.iter() {
            let id = grafted.params.find(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
            *grafted.params.get_mut(id) = tensor.clone();
        }
        if let Some(Gate::Glu(glu)) = &grafted.gate {
            glu.init_near_identity(&mut grafted.params);
        }
        grafted.normalizer = self.normalizer.clone();
        Ok(grafted)
    }

    /// Rebuilds a model from its spec and named tensors.
    pub fn from_parts(spec: ModelSpec, tensors: Vec<(String, Tensor<S>)>, normalizer: ObservationNormalizer) -> Result<Self, ModelError> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::new(spec, &mut rng)?;
        if tensors.len() != model.params.len() {
            return Err(ModelError::ParamCount {
                expected: model.params.len(),
                actual: tensors.len(),
            });
        }
        for (name, tensor) in tensors {
            let id = model.params.find(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if model.params.get(id).shape() != tensor.shape() {
                return Err(ModelError::ParamShape {
                    name,
                    expected: model.params.get(id).shape().to_vec(),
                    actual: tensor.shape().to_vec(),
                });
            }
            *model.params.get_mut(id) = tensor;
        }
        model.normalizer = normalizer;
        Ok(model)
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
            normalizer: self.normalizer.clone(),
            encoder: self.encoder.clone(),
            gate: self.gate.clone(),
            heads: self.heads.clone(),
        }
    }
}
