//! Prediction agreement under phase noise.

use super::geometry::ImageTensor;
use super::network::{argmax_set, Network};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::photonic::{factor_kernel, realize_kernel, KernelFactors};
use crate::reck::{derive_seed, PhaseNoiseModel};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl SweepConfig {
    /// `points` log-spaced noise levels in `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, points: usize, trials: usize, seed: u64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || points == 0 {
            return Err(Error::InvalidParameter(format!("bad sigma range [{lo}, {hi}] x {points}")));
        }
        let sigmas = if points == 1 {
            vec![lo]
        } else {
            let step = (hi / lo).ln() / (points - 1) as f64;
            (0..points).map(|i| lo * (step * i as f64).exp()).collect()
        };
        Ok(Self { sigmas, trials, seed, execution: Execution::default() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgreementRow {
    pub sigma: f64,
    pub trial: usize,
    pub agreement: f64,
}

/// Median agreement for each σ, in the order the σ values first appear.
pub fn median_by_sigma(rows: &[AgreementRow]) -> Vec<(f64, f64)> {
    let mut sigmas: Vec<f64> = Vec::new();
    for r in rows {
        if !sigmas.contains(&r.sigma) {
            sigmas.push(r.sigma);
        }
    }
    sigmas
        .into_iter()
        .map(|s| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.sigma == s).map(|r| r.agreement).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let med = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
            (s, med)
        })
        .collect()
}

/// For every `(σ, trial)`, realizes all layers with perturbed phases and
/// measures the fraction of `images` whose argmax set matches the clean
/// network's.
///
/// Trial `t` uses the same underlying standard normal draws at every σ, so
/// curves for a fixed trial differ only through the noise scale.
pub fn perturbation_experiment(net: &Network, images: &[ImageTensor], cfg: &SweepConfig) -> Result<Vec<AgreementRow>> {
    if images.is_empty() {
        return Err(Error::InvalidParameter("no images to evaluate".into()));
    }
    if cfg.trials == 0 || cfg.sigmas.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one sigma and one trial".into()));
    }
    for &s in &cfg.sigmas {
        PhaseNoiseModel::new(s, 0)?;
    }
    let factors: Vec<KernelFactors> = net.weights().iter().map(factor_kernel).collect::<Result<_>>()?;
    let reference: Vec<Vec<usize>> = net.infer_batch(images, cfg.execution)?.iter().map(|s| argmax_set(s)).collect();

    let jobs = cfg.sigmas.len() * cfg.trials;
    let results = cfg.execution.map_range(jobs, |job| -> Result<AgreementRow> {
        let (si, trial) = (job / cfg.trials, job % cfg.trials);
        let sigma = cfg.sigmas[si];
        let noise = PhaseNoiseModel::new(sigma, derive_seed(cfg.seed, trial as u64))?;
        let weights = factors
            .iter()
            .enumerate()
            .map(|(l, f)| realize_kernel(f, &noise.fork(l as u64)))
            .collect();
        let noisy = net.with_weights(weights)?;
        let mut same = 0usize;
        for (img, r) in images.iter().zip(&reference) {
            if argmax_set(&noisy.infer(img)?) == *r {
                same += 1;
            }
        }
        Ok(AgreementRow { sigma, trial, agreement: same as f64 / images.len() as f64 })
    });
    results.into_iter().collect()
}
