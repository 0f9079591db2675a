//! Mini-batch SGD with momentum on softmax cross-entropy.
//!
//! Per-sample gradients may be computed in parallel; they are always summed
//! in sample order, so a given seed produces the same weights under either
//! execution strategy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::{extract_patches, fold_patches, repatch, ImageTensor};
use super::network::{LayerSpec, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{dot, Matrix};
use crate::photonic::{KernelMatrix, PatchStream};
use crate::reck::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self { epochs: 4, batch_size: 32, learning_rate: 0.01, momentum: 0.9, seed, execution: Execution::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean loss over each epoch's mini-batches, in order.
    pub epoch_losses: Vec<f64>,
}

/// He-normal initial kernels, deterministic in `seed`.
pub fn initial_weights(spec: &NetworkSpec, seed: u64) -> Vec<KernelMatrix> {
    spec.layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (r, c) = l.kernel_shape();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let normal = Normal::new(0.0, (2.0 / c as f64).sqrt()).expect("positive std");
            KernelMatrix::new(Matrix::from_fn(r, c, |_, _| normal.sample(&mut rng))).expect("finite")
        })
        .collect()
}

/// Trains `spec` from scratch on `(images, labels)`.
pub fn train_reference(
    spec: &NetworkSpec,
    images: &[ImageTensor],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: images.len(), found: labels.len() });
    }
    if images.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let classes = spec.output_len();
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::InvalidParameter(format!("label {l} outside {classes} classes")));
    }

    let mut network = Network::new(spec.clone(), initial_weights(spec, cfg.seed))?;
    let initial_loss = mean_loss(&network, images, labels, cfg.execution)?;
    if !initial_loss.is_finite() {
        return Err(Error::NonConvergence(format!("initial loss is {initial_loss}")));
    }

    let mut params: Vec<Vec<f64>> = network.weights().iter().map(|w| w.matrix().as_slice().to_vec()).collect();
    let mut velocity: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample = cfg.execution.map(batch, |&i| sample_gradient(&network, &images[i], labels[i]));
            let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
            for sample in per_sample {
                let (loss, g) = sample?;
                total += loss;
                for (acc, gl) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gl).for_each(|(a, b)| *a += b);
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = cfg.momentum * *vi - scale * gi;
                    *pi += *vi;
                }
            }
            network = rebuild(&network, &params)?;
        }
        let mean = total / images.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonConvergence(format!("loss diverged in epoch {epoch}")));
        }
        epoch_losses.push(mean);
    }

    let final_loss = *epoch_losses.last().expect("at least one epoch");
    if final_loss >= initial_loss {
        return Err(Error::NonConvergence(format!(
            "final epoch loss {final_loss} did not improve on initial loss {initial_loss}"
        )));
    }
    Ok(TrainOutcome { network, initial_loss, epoch_losses })
}

fn rebuild(net: &Network, params: &[Vec<f64>]) -> Result<Network> {
    let weights = net
        .weights()
        .iter()
        .zip(params)
        .map(|(w, p)| {
            let m = Matrix::from_row_major(w.rows(), w.cols(), p.clone())?;
            KernelMatrix::new(m).map_err(|_| Error::NonConvergence("weights became non-finite".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    net.with_weights(weights)
}

/// Mean softmax cross-entropy of `net` on the given samples.
pub fn mean_loss(net: &Network, images: &[ImageTensor], labels: &[u8], exec: Execution) -> Result<f64> {
    let scores = net.infer_batch(images, exec)?;
    let total: f64 = scores.iter().zip(labels).map(|(s, &l)| cross_entropy(s, l as usize).0).sum();
    Ok(total / images.len() as f64)
}

/// Loss and its gradient with respect to the scores.
fn cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (scores[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Inputs and pre-activations of every layer for one sample.
struct Trace {
    inputs: Vec<PatchStream>,
    pre: Vec<PatchStream>,
}

fn forward_trace(net: &Network, img: &ImageTensor) -> Result<(Vec<f64>, Trace)> {
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut post: Option<PatchStream> = None;
    for (layer, m) in net.spec().layers().iter().zip(net.weights()) {
        let patches = match (layer, &post) {
            (LayerSpec::Conv { geometry, .. }, None) => extract_patches(img, geometry)?,
            (LayerSpec::Conv { geometry, .. }, Some(prev)) => repatch(prev, geometry)?,
            (LayerSpec::FullyConnected { in_dim, .. }, None) => PatchStream::from_flat(*in_dim, img.as_slice().to_vec())?,
            (LayerSpec::FullyConnected { in_dim, .. }, Some(prev)) => PatchStream::from_flat(*in_dim, prev.as_flat().to_vec())?,
        };
        let d = m.rows();
        let mut z = Vec::with_capacity(patches.len() * d);
        for p in patches.iter() {
            z.extend((0..d).map(|k| dot(m.matrix().row(k), p)));
        }
        let nl = layer.nonlinearity();
        if !z.iter().all(|x| x.is_finite()) {
            return Err(Error::NonConvergence("activations became non-finite".into()));
        }
        let a: Vec<f64> = z.iter().map(|&x| nl.apply(x)).collect();
        inputs.push(patches);
        pre.push(PatchStream::from_flat(d, z)?);
        post = Some(PatchStream::from_flat(d, a)?);
    }
    Ok((post.expect("non-empty").into_flat(), Trace { inputs, pre }))
}

fn sample_gradient(net: &Network, img: &ImageTensor, label: u8) -> Result<(f64, Vec<Vec<f64>>)> {
    let (scores, trace) = forward_trace(net, img)?;
    let (loss, mut upstream) = cross_entropy(&scores, label as usize);
    let layers = net.spec().layers();
    let mut grads = vec![Vec::new(); layers.len()];
    for l in (0..layers.len()).rev() {
        let m = net.weights()[l].matrix();
        let (d, c) = (m.rows(), m.cols());
        let nl = layers[l].nonlinearity();
        let delta: Vec<f64> = upstream.iter().zip(trace.pre[l].as_flat()).map(|(g, &z)| g * nl.derivative(z)).collect();
        let mut gm = vec![0.0; d * c];
        let mut dpatches = vec![0.0; trace.inputs[l].len() * c];
        for (t, patch) in trace.inputs[l].iter().enumerate() {
            let dt = &delta[t * d..(t + 1) * d];
            let dp = &mut dpatches[t * c..(t + 1) * c];
            for (k, &g) in dt.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = m.row(k);
                gm[k * c..(k + 1) * c].iter_mut().zip(patch).for_each(|(a, x)| *a += g * x);
                dp.iter_mut().zip(row).for_each(|(a, w)| *a += g * w);
            }
        }
        grads[l] = gm;
        if l > 0 {
            upstream = match layers[l] {
                LayerSpec::Conv { geometry, .. } => fold_patches(&PatchStream::from_flat(c, dpatches)?, &geometry),
                LayerSpec::FullyConnected { .. } => dpatches,
            };
        }
    }
    Ok((loss, grads))
}
