//! Layer stacks, weight files and forward inference.

use serde::{Deserialize, Serialize};

use super::geometry::{extract_patches, repatch, ImageTensor, LayerGeometry};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::photonic::{apply_layer, KernelMatrix, Nonlinearity, PatchStream};

pub const WEIGHTS_VERSION: u32 = 1;

/// One layer of a network. Fully connected layers run on the same
/// interference unit as a convolution whose kernel covers the whole input,
/// so they see a single patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { geometry: LayerGeometry, nonlinearity: Nonlinearity },
    FullyConnected { in_dim: usize, out_dim: usize, nonlinearity: Nonlinearity },
}

impl LayerSpec {
    pub fn nonlinearity(&self) -> Nonlinearity {
        match *self {
            LayerSpec::Conv { nonlinearity, .. } | LayerSpec::FullyConnected { nonlinearity, .. } => nonlinearity,
        }
    }

    /// `(rows, cols)` of the kernel matrix.
    pub fn kernel_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv { geometry: g, .. } => (g.d(), g.patch_len()),
            LayerSpec::FullyConnected { in_dim, out_dim, .. } => (out_dim, in_dim),
        }
    }

    /// Flattened input size.
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Conv { geometry: g, .. } => g.w() * g.w() * g.c(),
            LayerSpec::FullyConnected { in_dim, .. } => in_dim,
        }
    }

    /// Flattened output size.
    pub fn output_len(&self) -> usize {
        match *self {
            LayerSpec::Conv { geometry: g, .. } => g.patch_count() * g.d(),
            LayerSpec::FullyConnected { out_dim, .. } => out_dim,
        }
    }
}

/// Ordered layers whose shapes chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::GeometryMismatch("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            let ok = match (prev, next) {
                (LayerSpec::Conv { geometry: a, .. }, LayerSpec::Conv { geometry: b, .. }) => {
                    a.output_width() == b.w() && a.d() == b.c()
                }
                _ => prev.output_len() == next.input_len(),
            };
            if !ok {
                return Err(Error::GeometryMismatch(format!(
                    "layer {i} output ({} values) does not feed layer {} input ({} values)",
                    prev.output_len(),
                    i + 1,
                    next.input_len()
                )));
            }
        }
        if let LayerSpec::FullyConnected { in_dim, .. } = layers[0] {
            if in_dim == 0 {
                return Err(Error::GeometryMismatch("zero-sized input".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].output_len()
    }
}

/// The toy MNIST classifier: two strided convolutions and two dense layers.
pub fn toy_network() -> NetworkSpec {
    let conv = |w, c, d| LayerSpec::Conv {
        geometry: LayerGeometry::new(w, 4, 2, 1, c, d).expect("valid toy geometry"),
        nonlinearity: Nonlinearity::Relu,
    };
    NetworkSpec::new(vec![
        conv(28, 1, 8),
        conv(14, 8, 16),
        LayerSpec::FullyConnected { in_dim: 784, out_dim: 64, nonlinearity: Nonlinearity::Relu },
        LayerSpec::FullyConnected { in_dim: 64, out_dim: 10, nonlinearity: Nonlinearity::Identity },
    ])
    .expect("toy network chains")
}

/// A spec with one kernel matrix per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    weights: Vec<KernelMatrix>,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: Vec<KernelMatrix>) -> Result<Self> {
        if weights.len() != spec.layers.len() {
            return Err(Error::DimensionMismatch { expected: spec.layers.len(), found: weights.len() });
        }
        for (layer, w) in spec.layers.iter().zip(&weights) {
            let (r, c) = layer.kernel_shape();
            if w.rows() != r {
                return Err(Error::DimensionMismatch { expected: r, found: w.rows() });
            }
            if w.cols() != c {
                return Err(Error::DimensionMismatch { expected: c, found: w.cols() });
            }
        }
        Ok(Self { spec, weights })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[KernelMatrix] {
        &self.weights
    }

    /// Same spec, different kernels (e.g. noisy realizations).
    pub fn with_weights(&self, weights: Vec<KernelMatrix>) -> Result<Self> {
        Network::new(self.spec.clone(), weights)
    }

    /// Runs one image through every layer and returns the final outputs.
    pub fn infer(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let input_len = img.as_slice().len();
        if input_len != self.spec.input_len() {
            return Err(Error::DimensionMismatch { expected: self.spec.input_len(), found: input_len });
        }
        let mut stream: Option<PatchStream> = None;
        for (i, (layer, m)) in self.spec.layers.iter().zip(&self.weights).enumerate() {
            let patches = match (layer, &stream) {
                (LayerSpec::Conv { geometry, .. }, None) => extract_patches(img, geometry)?,
                (LayerSpec::Conv { geometry, .. }, Some(prev)) => repatch(prev, geometry)?,
                (LayerSpec::FullyConnected { .. }, None) => PatchStream::from_flat(input_len, img.as_slice().to_vec())?,
                (LayerSpec::FullyConnected { in_dim, .. }, Some(prev)) => {
                    PatchStream::from_flat(*in_dim, prev.as_flat().to_vec())?
                }
            };
            let out = apply_layer(m, &patches, layer.nonlinearity())
                .map_err(|e| Error::GeometryMismatch(format!("layer {i}: {e}")))?;
            stream = Some(out);
        }
        Ok(stream.expect("at least one layer").into_flat())
    }

    pub fn infer_batch(&self, images: &[ImageTensor], exec: Execution) -> Result<Vec<Vec<f64>>> {
        exec.map(images, |img| self.infer(img)).into_iter().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WeightsDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: WeightsDoc = serde_json::from_str(s)?;
        Network::try_from(doc)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsDoc {
    version: u32,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    #[serde(flatten)]
    spec: LayerSpec,
    #[serde(flatten)]
    kernel: Matrix,
}

impl From<&Network> for WeightsDoc {
    fn from(n: &Network) -> Self {
        WeightsDoc {
            version: WEIGHTS_VERSION,
            layers: n
                .spec
                .layers
                .iter()
                .zip(&n.weights)
                .map(|(spec, w)| LayerDoc { spec: *spec, kernel: w.matrix().clone() })
                .collect(),
        }
    }
}

impl TryFrom<WeightsDoc> for Network {
    type Error = Error;

    fn try_from(doc: WeightsDoc) -> Result<Self> {
        if doc.version != WEIGHTS_VERSION {
            return Err(Error::UnsupportedVersion { expected: WEIGHTS_VERSION, found: doc.version });
        }
        let mut specs = Vec::with_capacity(doc.layers.len());
        let mut weights = Vec::with_capacity(doc.layers.len());
        for l in doc.layers {
            specs.push(l.spec);
            weights.push(KernelMatrix::new(l.kernel)?);
        }
        Network::new(NetworkSpec::new(specs)?, weights)
    }
}

/// Every index attaining the maximum score.
pub fn argmax_set(scores: &[f64]) -> Vec<usize> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().enumerate().filter(|(_, &s)| s == max).map(|(i, _)| i).collect()
}

/// Predicted class; ties resolve to the lowest index.
pub fn predicted_class(scores: &[f64]) -> usize {
    argmax_set(scores).first().copied().unwrap_or(0)
}

/// Fraction of positions where the two prediction sets are identical.
pub fn agreement(a: &[Vec<usize>], b: &[Vec<usize>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if a.is_empty() {
        return Err(Error::InvalidParameter("agreement over zero samples".into()));
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}
