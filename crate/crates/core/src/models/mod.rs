//! Point classifiers and the chip segmentation model, all trained through
//! the same per-sample loss contract.

mod arch;
mod checkpoint;
mod data;
mod platt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::tensorkit::{BoundParams, Graph, ParamStore, Tensor, TensorError, Var};

pub use checkpoint::{read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, Checkpoint};
pub use data::{examples_from_feature_set, Example};
pub use platt::{fit_platt, PlattFit};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("tensor '{name}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint lacks tensor '{0}'")]
    MissingTensor(String),
    #[error("input mismatch: {0}")]
    InputMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Logreg,
    Svm,
    PlanLb,
    Conv3d,
    Convlstm,
    PrithviLb,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Logreg => "logreg",
            Architecture::Svm => "svm",
            Architecture::PlanLb => "plan_lb",
            Architecture::Conv3d => "conv3d",
            Architecture::Convlstm => "convlstm",
            Architecture::PrithviLb => "prithvi_lb",
        }
    }

    pub fn is_segmentation(self) -> bool {
        self == Architecture::PrithviLb
    }
}

/// Layout of one model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    /// A plain feature vector.
    Flat { len: usize },
    /// Temporal block `[t][n][n][v]` followed by static block `[n][n][s]`.
    Point { t: usize, n: usize, v: usize, s: usize },
    /// Chip `[t][b][size][size]` with a per-pixel mask.
    Chip { t: usize, b: usize, size: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat { len } => len,
            InputShape::Point { t, n, v, s } => t * n * n * v + n * n * s,
            InputShape::Chip { t, b, size } => t * b * size * size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask_len(&self) -> usize {
        match *self {
            InputShape::Chip { size, .. } => size * size,
            _ => 0,
        }
    }
}

fn default_seed() -> u64 {
    0
}

/// Architecture tag, input layout and hyperparameters. Fields irrelevant to
/// the chosen architecture are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub input: InputShape,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub hyper: Hyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// PLAN-LB encoder output size for both branches.
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub conv_channels: usize,
    pub conv_kernel: [usize; 3],
    pub convlstm_hidden: usize,
    pub convlstm_kernel: usize,
    /// Broadcast the static block over time as extra channels (conv3d, convlstm).
    pub include_static: bool,
    pub vit_patch: usize,
    pub vit_depth: usize,
    pub vit_heads: usize,
    pub vit_dim: usize,
    pub vit_mlp_ratio: usize,
    /// Output channels of the upsampling blocks; the last entry repeats if short.
    pub decoder_channels: Vec<usize>,
    /// Inverse regularisation strength of the linear SVM.
    pub svm_c: f64,
    pub layer_norm_eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            lstm_hidden: 64,
            conv_channels: 32,
            conv_kernel: [3, 7, 7],
            convlstm_hidden: 32,
            convlstm_kernel: 3,
            include_static: true,
            vit_patch: 16,
            vit_depth: 2,
            vit_heads: 4,
            vit_dim: 64,
            vit_mlp_ratio: 4,
            decoder_channels: vec![32, 16, 16, 8],
            svm_c: 1.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn new(arch: Architecture, input: InputShape) -> Self {
        Self {
            arch,
            input,
            seed: 0,
            hyper: Hyper::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        arch::validate(self)
    }
}

/// Output of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction<T> {
    /// `[p(non-breeding), p(breeding)]`
    Point([T; 2]),
    /// `[2][H][W]` per-pixel class probabilities.
    Map(Tensor<T>),
}

impl<T: Scalar> Prediction<T> {
    /// Argmax class for point predictions; `None` for maps.
    pub fn label(&self) -> Option<usize> {
        match self {
            Prediction::Point(p) => Some((p[1] > p[0]) as usize),
            Prediction::Map(_) => None,
        }
    }

    /// Class-1 probabilities: one value for points, one per pixel for maps.
    pub fn p_breeding(&self) -> Vec<T> {
        match self {
            Prediction::Point(p) => vec![p[1]],
            Prediction::Map(m) => {
                let plane = m.len() / 2;
                m.data()[plane..].to_vec()
            }
        }
    }
}

/// Extra context for per-sample losses.
#[derive(Clone, Copy, Debug)]
pub struct LossContext {
    /// Number of training samples (scales the SVM regulariser).
    pub n_train: usize,
}

/// A model: configuration plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds a model with seeded He-uniform weights.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        arch::init(&config, &mut params, &mut rng);
        Ok(Self { config, params })
    }

    /// Expected `(name, shape)` of every parameter.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    }

    /// Replaces parameters by name; every expected tensor must be present
    /// with the exact shape. Unknown names are ignored.
    pub fn load_params(&mut self, source: &ParamStore<T>) -> Result<(), ModelError> {
        for p in self.params.iter_mut() {
            let v = source
                .get(&p.name)
                .ok_or_else(|| ModelError::MissingTensor(p.name.clone()))?;
            if v.shape() != p.value.shape() {
                return Err(ModelError::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: v.shape().to_vec(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>, mask: Option<&[Option<usize>]>) -> Result<(), ModelError> {
        let want = self.config.input.len();
        if x.len() != want {
            return Err(ModelError::InputMismatch(format!(
                "input has {} values, {} expects {}",
                x.len(),
                self.config.arch.as_str(),
                want
            )));
        }
        if let Some(m) = mask {
            if m.len() != self.config.input.mask_len() {
                return Err(ModelError::InputMismatch(format!(
                    "mask has {} entries, expected {}",
                    m.len(),
                    self.config.input.mask_len()
                )));
            }
        }
        Ok(())
    }

    /// Raw logits: `[2]` for point models, `[2, H, W]` for the segmentation model.
    /// For the SVM these are `[0, w.x + b]`, i.e. the uncalibrated margin.
    pub fn logits(&self, g: &mut Graph<T>, p: &BoundParams<T>, x: Var) -> Result<Var, ModelError> {
        arch::logits(&self.config, g, p, x)
    }

    /// Class probabilities as a graph node (SVM uses its Platt calibration).
    pub fn probabilities(&self, g: &mut Graph<T>, p: &BoundParams<T>, x: Var) -> Result<Var, ModelError> {
        let z = self.logits(g, p, x)?;
        match self.config.arch {
            Architecture::Svm => arch::platt_probabilities(g, p, z),
            Architecture::PrithviLb => Ok(g.softmax(z, 0)?),
            _ => Ok(g.softmax(z, 0)?),
        }
    }

    /// Training loss of one example on graph `g`.
    pub fn example_loss(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams<T>,
        ex: &Example<T>,
        ctx: LossContext,
    ) -> Result<Var, ModelError> {
        self.check_input(&ex.x, ex.mask.as_deref())?;
        let x = g.constant(ex.x.clone());
        let z = self.logits(g, p, x)?;
        match self.config.arch {
            Architecture::Svm => arch::svm_loss(&self.config, g, p, z, ex.label, ctx),
            Architecture::PrithviLb => {
                let mask = ex.mask.as_deref().ok_or_else(|| {
                    ModelError::InputMismatch("segmentation example without mask".into())
                })?;
                Ok(crate::tensorkit::nn::masked_pixel_cross_entropy(g, z, mask)?)
            }
            _ => Ok(crate::tensorkit::nn::cross_entropy(g, z, ex.label)?),
        }
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Prediction<T>, ModelError> {
        self.check_input(x, None)?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let probs = self.probabilities(&mut g, &p, xv)?;
        let t = g.value(probs).clone();
        Ok(if self.config.arch.is_segmentation() {
            Prediction::Map(t)
        } else {
            Prediction::Point([t.data()[0], t.data()[1]])
        })
    }

    /// Class-1 score of one example: the point probability, or for maps the
    /// mean over the example's labelled pixels.
    pub fn score(&self, ex: &Example<T>) -> Result<T, ModelError> {
        let pred = self.predict(&ex.x)?;
        match pred {
            Prediction::Point(p) => Ok(p[1]),
            Prediction::Map(_) => {
                let mask: Vec<i8> = ex
                    .mask
                    .as_deref()
                    .ok_or_else(|| ModelError::InputMismatch("segmentation example without mask".into()))?
                    .iter()
                    .map(|m| m.map_or(-1, |c| c as i8))
                    .collect();
                crate::metrics::chip_level_prediction(&pred.p_breeding(), &mask)
                    .map(|s| s.score)
                    .map_err(|e| ModelError::InputMismatch(e.to_string()))
            }
        }
    }

    /// SVM margin `w.x + b`.
    pub fn svm_margin(&self, x: &Tensor<T>) -> Result<T, ModelError> {
        if self.config.arch != Architecture::Svm {
            return Err(ModelError::InvalidConfig("margin is only defined for svm".into()));
        }
        self.check_input(x, None)?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let z = self.logits(&mut g, &p, xv)?;
        Ok(g.value(z).data()[1])
    }

    /// Fits the SVM's Platt parameters on `(margin, label)` pairs.
    pub fn calibrate_svm(&mut self, examples: &[Example<T>]) -> Result<PlattFit, ModelError> {
        let mut margins = Vec::with_capacity(examples.len());
        for ex in examples {
            margins.push((self.svm_margin(&ex.x)?.as_f64(), ex.label as u8));
        }
        let fit = fit_platt(&margins);
        self.params.insert("platt.a", Tensor::from_vec(vec![T::of(fit.a)]), false);
        self.params.insert("platt.b", Tensor::from_vec(vec![T::of(fit.b)]), false);
        Ok(fit)
    }
}
