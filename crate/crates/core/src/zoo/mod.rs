//! The four model families, built from declarative specs.

mod backbones;
mod scratch;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::data::{FRAMES, SEQUENCE_SHAPE};
use crate::error::{Error, IoContext, Result};
use crate::nn::layers::{BiLstm, Dense, Dropout};
use crate::nn::layers::LayerKind;
use crate::nn::{Graph, GraphBuilder, LayerGroup, LayerInfo, NodeId, Tensor};
use crate::seed::{derive_keyed, derive_seed, DROPOUT};

pub use backbones::{backbone_depth, weights_file_name};

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const SPEC_FILE: &str = "spec.json";
pub const WEIGHTS_DIR_ENV: &str = "VIDBENCH_WEIGHTS_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Cnn3d,
    Cnn2dBilstm,
    #[serde(rename = "inceptionv3_bilstm")]
    InceptionV3Bilstm,
    #[serde(rename = "mobilenetv2_bilstm")]
    MobileNetV2Bilstm,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Cnn3d,
        ModelFamily::Cnn2dBilstm,
        ModelFamily::InceptionV3Bilstm,
        ModelFamily::MobileNetV2Bilstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Cnn3d => "cnn3d",
            ModelFamily::Cnn2dBilstm => "cnn2d_bilstm",
            ModelFamily::InceptionV3Bilstm => "inceptionv3_bilstm",
            ModelFamily::MobileNetV2Bilstm => "mobilenetv2_bilstm",
        }
    }

    pub fn has_backbone(self) -> bool {
        matches!(self, ModelFamily::InceptionV3Bilstm | ModelFamily::MobileNetV2Bilstm)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model family {s:?} (expected one of cnn3d, cnn2d_bilstm, inceptionv3_bilstm, mobilenetv2_bilstm)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub num_classes: usize,
    /// Backbone families only: how many trailing backbone layers stay trainable.
    pub trainable_tail_layers: usize,
    /// Per direction.
    pub recurrent_units: usize,
    pub dense_units: Vec<usize>,
    pub dropout_rate: f32,
    pub l2_strength: f32,
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        let (dense_units, l2_strength) = match family {
            ModelFamily::Cnn3d => (vec![256], 0.01),
            _ => (vec![128], 0.0),
        };
        Self {
            family,
            num_classes: 2,
            trainable_tail_layers: 80,
            recurrent_units: 64,
            dense_units,
            dropout_rate: 0.5,
            l2_strength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::Spec(format!("num_classes must be 2, got {}", self.num_classes)));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::Spec(format!("dropout_rate {} outside [0, 1]", self.dropout_rate)));
        }
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::Spec(format!("l2_strength {} must be finite and >= 0", self.l2_strength)));
        }
        if self.recurrent_units == 0 || self.dense_units.iter().any(|&u| u == 0) {
            return Err(Error::Spec("layer widths must be positive".into()));
        }
        if let Some(depth) = backbone_depth(self.family) {
            if self.trainable_tail_layers > depth {
                return Err(Error::Spec(format!(
                    "trainable_tail_layers {} exceeds the {}-layer {} backbone",
                    self.trainable_tail_layers, depth, self.family
                )));
            }
        }
        Ok(())
    }

    fn expect_family(&self, allowed: &[ModelFamily]) -> Result<()> {
        if allowed.contains(&self.family) {
            Ok(())
        } else {
            Err(Error::Spec(format!(
                "{} cannot be built by the {} builder",
                self.family,
                allowed.iter().map(|f| f.as_str()).collect::<Vec<_>>().join("/")
            )))
        }
    }
}

/// Build-time settings that are not part of the architecture.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub seed: u64,
    /// Directory holding `<backbone>_notop.safetensors` files.
    pub weights_dir: PathBuf,
    /// Use random backbone weights instead of failing when the file is absent.
    pub allow_random_init: bool,
}

impl BuildOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            weights_dir: default_weights_dir(),
            allow_random_init: false,
        }
    }
}

pub fn default_weights_dir() -> PathBuf {
    std::env::var_os(WEIGHTS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("weights"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightsOrigin {
    /// Trained from scratch: random initialization is the intended start.
    Scratch,
    Pretrained { path: PathBuf },
    /// Backbone weights were unavailable and random init was allowed.
    RandomFallback,
    Checkpoint { path: PathBuf },
}

/// A built network plus its spec. Inference through `forward` takes `&self`
/// and may be called from several threads (calls are serialized); training
/// needs `graph_mut`.
pub struct ModelHandle {
    pub spec: ModelSpec,
    pub parameter_count: usize,
    pub trainable_parameter_count: usize,
    pub weights_origin: WeightsOrigin,
    graph: Mutex<Graph>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("spec", &self.spec)
            .field("parameter_count", &self.parameter_count)
            .field("trainable_parameter_count", &self.trainable_parameter_count)
            .field("weights_origin", &self.weights_origin)
            .finish()
    }
}

impl ModelHandle {
    fn new(spec: ModelSpec, graph: Graph, weights_origin: WeightsOrigin) -> Self {
        Self {
            spec,
            parameter_count: graph.parameter_count(),
            trainable_parameter_count: graph.trainable_parameter_count(),
            weights_origin,
            graph: Mutex::new(graph),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Graph> {
        self.graph.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Inference-mode class probabilities for a `[B, 15, 100, 100, 3]` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.lock().predict(batch)
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        self.graph.get_mut().unwrap_or_else(|e| e.into_inner())
    }

    pub fn with_graph<T>(&self, f: impl FnOnce(&Graph) -> T) -> T {
        f(&self.lock())
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        self.lock().layers()
    }

    /// Backbone layers in Keras order (empty for scratch families).
    pub fn backbone_layers(&self) -> Vec<LayerInfo> {
        self.layers().into_iter().filter(|l| l.group == LayerGroup::Backbone).collect()
    }

    pub fn dropout_rate(&self) -> Option<f32> {
        self.layers().iter().find_map(|l| match l.kind {
            LayerKind::Dropout { rate } => Some(rate),
            _ => None,
        })
    }

    /// Freeze every backbone layer except the last `tail`; head layers stay trainable.
    pub fn set_trainable_tail(&mut self, tail: usize) -> Result<()> {
        let backbone: Vec<usize> = self.backbone_layers().iter().map(|l| l.index).collect();
        if tail > backbone.len() {
            return Err(Error::Spec(format!(
                "trainable_tail_layers {tail} exceeds backbone depth {}",
                backbone.len()
            )));
        }
        let cut = backbone.len() - tail;
        let graph = self.graph_mut();
        for (k, &index) in backbone.iter().enumerate() {
            graph.set_trainable(index, k >= cut);
        }
        let count = self.graph_mut().trainable_parameter_count();
        self.trainable_parameter_count = count;
        self.spec.trainable_tail_layers = tail;
        Ok(())
    }

    /// Write `weights.safetensors` and `spec.json` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        crate::nn::io::save_weights(&self.lock(), &dir.join(WEIGHTS_FILE))?;
        let spec_path = dir.join(SPEC_FILE);
        std::fs::write(&spec_path, serde_json::to_vec_pretty(&self.spec)?).at(&spec_path)
    }
}

/// Rebuild a model from a checkpoint directory written by `save_checkpoint`.
pub fn load_checkpoint(dir: &Path) -> Result<ModelHandle> {
    let spec_path = dir.join(SPEC_FILE);
    let spec: ModelSpec = serde_json::from_slice(&std::fs::read(&spec_path).at(&spec_path)?)?;
    let mut handle = build_structure(&spec, 0)?;
    let weights = dir.join(WEIGHTS_FILE);
    crate::nn::io::load_weights(handle.graph_mut(), &weights, false, |_| true)?;
    handle.weights_origin = WeightsOrigin::Checkpoint { path: weights };
    Ok(handle)
}

/// Dispatch on `spec.family`.
pub fn build_model(spec: &ModelSpec, options: &BuildOptions) -> Result<ModelHandle> {
    match spec.family {
        ModelFamily::Cnn3d => build_cnn3d(spec, options),
        ModelFamily::Cnn2dBilstm => build_cnn2d_bilstm(spec, options),
        _ => build_backbone_bilstm(spec, options),
    }
}

pub fn build_cnn3d(spec: &ModelSpec, options: &BuildOptions) -> Result<ModelHandle> {
    spec.expect_family(&[ModelFamily::Cnn3d])?;
    spec.validate()?;
    Ok(ModelHandle::new(spec.clone(), scratch::cnn3d(spec, options.seed)?, WeightsOrigin::Scratch))
}

pub fn build_cnn2d_bilstm(spec: &ModelSpec, options: &BuildOptions) -> Result<ModelHandle> {
    spec.expect_family(&[ModelFamily::Cnn2dBilstm])?;
    spec.validate()?;
    Ok(ModelHandle::new(spec.clone(), scratch::cnn2d_bilstm(spec, options.seed)?, WeightsOrigin::Scratch))
}

/// Backbone applied per frame, ImageNet weights loaded from
/// `options.weights_dir`, all but the last `trainable_tail_layers` backbone
/// layers frozen.
pub fn build_backbone_bilstm(spec: &ModelSpec, options: &BuildOptions) -> Result<ModelHandle> {
    spec.expect_family(&[ModelFamily::InceptionV3Bilstm, ModelFamily::MobileNetV2Bilstm])?;
    spec.validate()?;
    let mut handle = build_structure(spec, options.seed)?;
    let path = options.weights_dir.join(weights_file_name(spec.family).expect("backbone family"));
    let origin = match load_backbone_weights(handle.graph_mut(), &path) {
        Ok(()) => WeightsOrigin::Pretrained { path },
        Err(Error::WeightsMissing { path }) if options.allow_random_init => {
            log::warn!(
                "backbone weights {} not found; continuing with random initialization",
                path.display()
            );
            WeightsOrigin::RandomFallback
        }
        Err(e) => return Err(e),
    };
    handle.weights_origin = origin;
    Ok(handle)
}

fn load_backbone_weights(graph: &mut Graph, path: &Path) -> Result<()> {
    let backbone: std::collections::HashSet<String> = graph
        .layers()
        .into_iter()
        .filter(|l| l.group == LayerGroup::Backbone)
        .map(|l| l.name)
        .collect();
    crate::nn::io::load_weights(graph, path, false, |name| {
        name.split_once('/').is_some_and(|(layer, _)| backbone.contains(layer))
    })?;
    Ok(())
}

/// Architecture with fresh weights and the spec's freezing applied.
fn build_structure(spec: &ModelSpec, seed: u64) -> Result<ModelHandle> {
    spec.validate()?;
    let graph = match spec.family {
        ModelFamily::Cnn3d => scratch::cnn3d(spec, seed)?,
        ModelFamily::Cnn2dBilstm => scratch::cnn2d_bilstm(spec, seed)?,
        ModelFamily::InceptionV3Bilstm | ModelFamily::MobileNetV2Bilstm => backbones::backbone_bilstm(spec, seed)?,
    };
    let origin = WeightsOrigin::Scratch;
    let mut handle = ModelHandle::new(spec.clone(), graph, origin);
    if spec.family.has_backbone() {
        handle.set_trainable_tail(spec.trainable_tail_layers)?;
    }
    Ok(handle)
}

fn input_builder() -> GraphBuilder {
    GraphBuilder::new(&SEQUENCE_SHAPE)
}

fn dropout(b: &mut GraphBuilder, rate: f32, seed: u64, x: NodeId) -> Result<NodeId> {
    let name = b.auto_name("dropout");
    let layer_seed = derive_keyed(derive_seed(seed, DROPOUT), &name);
    b.add(name, Dropout::new(rate, layer_seed), &[x], LayerGroup::Head)
}

/// Shared recurrent head over `[B, 15, features]`: BiLSTM → dropout →
/// (dense relu → dropout)* → dense softmax.
fn recurrent_head(
    b: &mut GraphBuilder,
    spec: &ModelSpec,
    seed: u64,
    rng: &mut rand_chacha::ChaCha8Rng,
    x: NodeId,
) -> Result<NodeId> {
    let shape = b.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != FRAMES {
        return Err(Error::shape("recurrent head input", &[1, FRAMES, shape[shape.len() - 1]], &shape));
    }
    let name = b.auto_name("bidirectional");
    let mut x = b.add(name, BiLstm::new(shape[2], spec.recurrent_units, rng), &[x], LayerGroup::Head)?;
    x = dropout(b, spec.dropout_rate, seed, x)?;
    dense_tail(b, spec, seed, rng, x, 0.0)
}

/// (dense relu → dropout)* → dense softmax.
fn dense_tail(
    b: &mut GraphBuilder,
    spec: &ModelSpec,
    seed: u64,
    rng: &mut rand_chacha::ChaCha8Rng,
    mut x: NodeId,
    hidden_l2: f32,
) -> Result<NodeId> {
    use crate::nn::layers::Activation;
    for &units in &spec.dense_units {
        let width = b.shape(x)[1];
        let name = b.auto_name("dense");
        let layer = Dense::new(width, units, rng).with_activation(Activation::Relu).with_l2(hidden_l2);
        x = b.add(name, layer, &[x], LayerGroup::Head)?;
        x = dropout(b, spec.dropout_rate, seed, x)?;
    }
    let width = b.shape(x)[1];
    let name = b.auto_name("dense");
    let layer = Dense::new(width, spec.num_classes, rng).with_activation(Activation::Softmax);
    b.add(name, layer, &[x], LayerGroup::Head)
}
