use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::ImageShape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{init, read_checkpoint, write_checkpoint, Graph, Tensor, Var};

/// Anything the attacks can differentiate through: a map from a flat input
/// vector to class logits.
pub trait LogitModel<T: Scalar>: Sync {
    /// Per-sample input dimensions, e.g. `[C, H, W]`.
    fn input_dims(&self) -> Vec<usize>;

    fn num_classes(&self) -> usize;

    /// Records `[N, num_classes]` logits for the batch held by `input`.
    /// Parameters enter the graph as constants.
    fn logits(&self, graph: &mut Graph<T>, input: Var) -> Result<Var>;

    fn input_len(&self) -> usize {
        self.input_dims().iter().product()
    }

    fn batch_tensor(&self, flat: Vec<T>) -> Result<Tensor<T>> {
        let per = self.input_len();
        if per == 0 || flat.len() % per != 0 || flat.is_empty() {
            return Err(Error::shape(
                "model input",
                format!("{} values is not a whole number of {per}-sized samples", flat.len()),
            ));
        }
        let mut shape = vec![flat.len() / per];
        shape.extend(self.input_dims());
        Tensor::new(shape, flat)
    }

    fn logits_of(&self, flat: &[T]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let x = g.constant(self.batch_tensor(flat.to_vec())?);
        let z = self.logits(&mut g, x)?;
        Ok(g.value(z).data().to_vec())
    }

    /// `argmax` of the logits for one sample, smallest class id on ties.
    fn predict_class(&self, x: &[T]) -> Result<usize> {
        if x.len() != self.input_len() {
            return Err(Error::shape(
                "predict_class",
                format!("expected {} inputs, got {}", self.input_len(), x.len()),
            ));
        }
        Ok(argmax(&self.logits_of(x)?))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Traditional,
    AdvTrain,
    FreeAdvTrain,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Traditional => "traditional",
            Regime::AdvTrain => "adv_train",
            Regime::FreeAdvTrain => "free_adv_train",
        }
    }
}

/// Two strided 3x3 conv blocks, global average pooling, dense head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: ImageShape,
    pub hidden_channels: usize,
    /// Length of the pooled feature vector handed to recommenders.
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(input: ImageShape, num_classes: usize) -> Self {
        Architecture {
            input,
            hidden_channels: 16,
            feature_dim: 64,
            num_classes,
        }
    }

    pub fn with_feature_dim(mut self, feature_dim: usize) -> Self {
        self.feature_dim = feature_dim;
        self
    }
}

/// Sidecar metadata stored next to a classifier checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub regime: Regime,
    pub architecture: Architecture,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Defence budget in 1/255 pixel units (0 for traditional training).
    pub eps_def: f64,
    pub replays: usize,
    pub seed: u64,
}

const STRIDE: usize = 2;
const PADDING: usize = 1;
const KERNEL: usize = 3;

/// The image feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T> {
    arch: Architecture,
    pub meta: ModelMeta,
    conv1_w: Tensor<T>,
    conv1_b: Tensor<T>,
    conv2_w: Tensor<T>,
    conv2_b: Tensor<T>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    pub params: [Var; 6],
    pub features: Var,
    pub logits: Var,
}

const PARAM_NAMES: [&str; 6] = ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "head.weight", "head.bias"];

impl<T: Scalar> Classifier<T> {
    /// Fan-in uniform weights, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a classifier needs at least 2 classes, got {}",
                arch.num_classes
            )));
        }
        let c = arch.input.channels;
        let h = arch.hidden_channels;
        let f = arch.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = KERNEL * KERNEL;
        Ok(Classifier {
            arch,
            meta: ModelMeta {
                regime: Regime::Traditional,
                architecture: arch,
                feature_dim: f,
                num_classes: arch.num_classes,
                eps_def: 0.0,
                replays: 1,
                seed,
            },
            conv1_w: init::fan_in_uniform(&[h, c, KERNEL, KERNEL], c * k2, &mut rng),
            conv1_b: Tensor::zeros(&[h]),
            conv2_w: init::fan_in_uniform(&[f, h, KERNEL, KERNEL], h * k2, &mut rng),
            conv2_b: Tensor::zeros(&[f]),
            head_w: init::fan_in_uniform(&[f, arch.num_classes], f, &mut rng),
            head_b: Tensor::zeros(&[arch.num_classes]),
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    pub fn regime(&self) -> Regime {
        self.meta.regime
    }

    pub fn params(&self) -> [&Tensor<T>; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    /// Full forward pass over an `[N, C, H, W]` batch. With `trainable`
    /// the parameters are differentiable leaves, otherwise constants.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Forward> {
        let shape = g.value(x).shape();
        let dims = self.arch.input.dims();
        if shape.len() != 4 || shape[1..] != dims {
            return Err(Error::shape(
                "classifier",
                format!("expected [N, {}, {}, {}], got {shape:?}", dims[0], dims[1], dims[2]),
            ));
        }
        let params = self.params().map(|p| {
            if trainable {
                g.param(p.clone())
            } else {
                g.constant(p.clone())
            }
        });
        let [w1, b1, w2, b2, wh, bh] = params;
        let h1 = g.conv2d(x, w1, Some(b1), STRIDE, PADDING)?;
        let a1 = g.relu(h1)?;
        let h2 = g.conv2d(a1, w2, Some(b2), STRIDE, PADDING)?;
        let a2 = g.relu(h2)?;
        let features = g.global_avg_pool(a2)?;
        let z = g.matmul(features, wh)?;
        let logits = g.add(z, bh)?;
        Ok(Forward {
            params,
            features,
            logits,
        })
    }

    /// Pooled feature vector of one image.
    pub fn extract_features(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_len() {
            return Err(Error::shape(
                "extract_features",
                format!("expected {} pixels, got {}", self.input_len(), x.len()),
            ));
        }
        let mut g = Graph::new();
        let input = g.constant(self.batch_tensor(x.to_vec())?);
        let fwd = self.forward(&mut g, input, false)?;
        Ok(g.value(fwd.features).data().to_vec())
    }

    /// Features and logits of one image from a single forward pass.
    pub fn features_and_logits(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = Graph::new();
        let input = g.constant(self.batch_tensor(x.to_vec())?);
        let fwd = self.forward(&mut g, input, false)?;
        Ok((g.value(fwd.features).data().to_vec(), g.value(fwd.logits).data().to_vec()))
    }

    /// Applies only the dense head to a feature vector.
    pub fn head_logits(&self, features: &[T]) -> Result<Vec<T>> {
        let f = self.arch.feature_dim;
        if features.len() != f {
            return Err(Error::shape("head", format!("expected {f} features, got {}", features.len())));
        }
        let m = self.arch.num_classes;
        let w = self.head_w.data();
        let mut out = vec![T::zero(); m];
        for (k, &phi) in features.iter().enumerate() {
            for j in 0..m {
                out[j] += phi * w[k * m + j];
            }
        }
        for (o, &b) in out.iter_mut().zip(self.head_b.data()) {
            *o += b;
        }
        Ok(out)
    }

    /// Parallel class prediction for many images (flat, one per entry).
    pub fn predict_many(&self, images: &[&[T]]) -> Result<Vec<usize>> {
        images.par_iter().map(|x| self.predict_class(x)).collect()
    }

    pub fn extract_many(&self, images: &[&[T]]) -> Result<Vec<Vec<T>>> {
        images.par_iter().map(|x| self.extract_features(x)).collect()
    }

    /// Writes the checkpoint to `path` and metadata to `<path>.meta.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let named: Vec<(&str, &Tensor<T>)> = PARAM_NAMES.iter().copied().zip(self.params()).collect();
        write_checkpoint(BufWriter::new(file), &named)?;
        let meta_path = meta_path(path);
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&meta_path, json).map_err(|e| Error::io(meta_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta_path = meta_path(path);
        let meta_json = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ModelMeta = serde_json::from_str(&meta_json)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tensors: Vec<(String, Tensor<T>)> = read_checkpoint(BufReader::new(file))?;
        let mut model = Classifier::new(meta.architecture, meta.seed)?;
        model.meta = meta;
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, expected {}",
                tensors.len(),
                PARAM_NAMES.len()
            )));
        }
        for ((slot, name), (got_name, tensor)) in model.params_mut().into_iter().zip(PARAM_NAMES).zip(tensors) {
            if got_name != name || tensor.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {got_name} {:?} does not match {name} {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(model)
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

impl<T: Scalar> LogitModel<T> for Classifier<T> {
    fn input_dims(&self) -> Vec<usize> {
        self.arch.input.dims().to_vec()
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn logits(&self, graph: &mut Graph<T>, input: Var) -> Result<Var> {
        Ok(self.forward(graph, input, false)?.logits)
    }
}

/// Affine classifier `z = x W + b` over flat inputs. Small enough to solve
/// attack problems in closed form, which makes it useful as a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier<T> {
    /// `[n, m]`
    pub weights: Tensor<T>,
    /// `[m]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearClassifier<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return Err(Error::shape(
                "linear classifier",
                format!("weights {ws:?}, bias {:?}", bias.shape()),
            ));
        }
        Ok(LinearClassifier { weights, bias })
    }
}

impl<T: Scalar> LogitModel<T> for LinearClassifier<T> {
    fn input_dims(&self) -> Vec<usize> {
        vec![self.weights.shape()[0]]
    }

    fn num_classes(&self) -> usize {
        self.weights.shape()[1]
    }

    fn logits(&self, graph: &mut Graph<T>, input: Var) -> Result<Var> {
        let w = graph.constant(self.weights.clone());
        let b = graph.constant(self.bias.clone());
        let z = graph.matmul(input, w)?;
        graph.add(z, b)
    }
}
