//! Local minibatch SGD and inference.

use alloc::format;
use alloc::vec::Vec;

use super::lstm::{backward, logit, sigmoid};
use super::{Gradient, ModelParameters, WeightDelta};
use crate::pipeline::{split_batches, SequenceSet};
use crate::scenario::TrainingConfig;
use crate::seed::derive_stream_seed;
use crate::{Error, Result};

/// `p - lr · gradient`. Fails on non-finite gradients.
pub fn sgd_step(p: &ModelParameters, gradient: &Gradient, lr: f64) -> Result<ModelParameters> {
    p.check_compatible(gradient.dims())?;
    if !gradient.is_finite() {
        return Err(Error::Divergence { round: None });
    }
    let mut next = p.clone();
    for (w, g) in next.values_mut().iter_mut().zip(gradient.values()) {
        *w -= lr * g;
    }
    if !next.is_finite() {
        return Err(Error::Divergence { round: None });
    }
    Ok(next)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    /// SGD steps taken.
    pub steps: usize,
    /// Mean per-window loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean gradient norm of each epoch.
    pub epoch_grad_norms: Vec<f64>,
}

impl TrainStats {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    /// Mean over all local epochs.
    pub fn mean_loss(&self) -> f64 {
        self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    /// `w^n` after `H` epochs.
    pub params: ModelParameters,
    /// `u^n = w^n - w_z`.
    pub delta: WeightDelta,
    pub stats: TrainStats,
}

/// Trains a private copy of `global` for `local_epochs` epochs of minibatch
/// SGD. Batches are reshuffled every epoch with a seed derived from
/// `client_seed`.
pub fn train_local(
    global: &ModelParameters,
    data: &SequenceSet,
    cfg: &TrainingConfig,
    client_seed: u64,
) -> Result<LocalOutcome> {
    if data.is_empty() {
        return Err(Error::Empty("local dataset"));
    }
    let mut params = global.clone();
    let mut stats = TrainStats::default();
    for epoch in 0..cfg.local_epochs {
        let label = format!("epoch-{epoch}");
        let batches = split_batches(data, cfg.minibatch_size, derive_stream_seed(client_seed, label.as_bytes()))?;
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        for batch in &batches {
            let (grad, loss) = backward(&params, data, batch)?;
            params = sgd_step(&params, &grad, cfg.learning_rate)?;
            loss_sum += loss * batch.len() as f64;
            norm_sum += grad.norm();
            stats.steps += 1;
        }
        stats.epoch_losses.push(loss_sum / data.len() as f64);
        stats.epoch_grad_norms.push(norm_sum / batches.len() as f64);
    }
    let delta = params.delta_from(global)?;
    Ok(LocalOutcome { params, delta, stats })
}

/// Largest double below one. Probabilities are clamped into
/// `[MIN_POSITIVE, ONE_BELOW]` so they stay strictly inside (0, 1).
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Anomaly probability for every window of `set`.
pub fn predict(p: &ModelParameters, set: &SequenceSet) -> Result<Vec<f64>> {
    if !set.is_empty() && set.width() != p.dims().input_size {
        return Err(Error::Shape {
            expected: p.dims().input_size,
            found: set.width(),
            what: "window width",
        });
    }
    (0..set.len())
        .map(|i| Ok(sigmoid(logit(p, set.window(i))?).clamp(f64::MIN_POSITIVE, ONE_BELOW)))
        .collect()
}

/// Labels windows anomalous (1) when their probability is at least `threshold`.
pub fn classify_at(p: &ModelParameters, set: &SequenceSet, threshold: f64) -> Result<Vec<u8>> {
    Ok(threshold_labels(&predict(p, set)?, threshold))
}

pub(crate) fn threshold_labels(probabilities: &[f64], threshold: f64) -> Vec<u8> {
    probabilities.iter().map(|&y| (y >= threshold) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{backward_scaled, batch_loss, ModelDims, ParamGroup};
    use crate::pipeline::Batch;
    use crate::seed::rng;
    use alloc::vec;
    use rand::Rng;

    fn random_set(width: usize, window: usize, n: usize, seed: u64) -> SequenceSet {
        let mut r = rng(seed);
        let data = (0..n * window * width).map(|_| r.random_range(0.0..1.0)).collect();
        let targets = (0..n).map(|_| r.random_range(0..2u8)).collect();
        SequenceSet::new(window, width, data, targets).unwrap()
    }

    /// Windows whose target is 1 exactly when the last step's first feature is high.
    fn separable_set(n: usize, seed: u64) -> SequenceSet {
        let mut r = rng(seed);
        let mut data = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let anomalous = r.random_bool(0.3);
            for t in 0..4 {
                let hot = anomalous && t == 3;
                data.push(if hot { r.random_range(0.8..1.0) } else { r.random_range(0.0..0.4) });
                data.push(r.random_range(0.0..1.0));
            }
            targets.push(anomalous as u8);
        }
        SequenceSet::new(4, 2, data, targets).unwrap()
    }

    fn cfg(alpha: f64, epochs: usize, batch: usize) -> TrainingConfig {
        TrainingConfig {
            learning_rate: alpha,
            local_epochs: epochs,
            minibatch_size: batch,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_gradient_or_rate_is_identity() {
        let dims = ModelDims::new(2, 3);
        let p = ModelParameters::init(dims, 1).unwrap();
        assert_eq!(sgd_step(&p, &Gradient::zeros(dims), 0.3).unwrap(), p);
        let set = random_set(2, 4, 5, 2);
        let (g, _) = backward(&p, &set, &vec![0, 1, 2]).unwrap();
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let dims = ModelDims::new(2, 3);
        let p = ModelParameters::init(dims, 1).unwrap();
        let mut g = Gradient::zeros(dims);
        g.values_mut()[3] = f64::INFINITY;
        assert_eq!(sgd_step(&p, &g, 0.1).unwrap_err(), Error::Divergence { round: None });
    }

    #[test]
    fn small_step_on_head_bias_reduces_loss() {
        // The loss restricted to the head bias is convex in that scalar.
        let dims = ModelDims::new(2, 3);
        let p = ModelParameters::init(dims, 5).unwrap();
        let set = random_set(2, 4, 16, 6);
        let batch: Batch = (0..16).collect();
        let (g, before) = backward(&p, &set, &batch).unwrap();
        let mut head_only = Gradient::zeros(dims);
        let idx = dims.layout().head_bias();
        head_only.values_mut()[idx] = g.values()[idx];
        let stepped = sgd_step(&p, &head_only, 1e-2).unwrap();
        assert!(batch_loss(&stepped, &set, &batch).unwrap() < before);
        let full = sgd_step(&p, &g, 1e-3).unwrap();
        assert!(batch_loss(&full, &set, &batch).unwrap() < before);
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let dims = ModelDims::new(2, 3);
        let p = ModelParameters::init(dims, 2).unwrap();
        let set = random_set(2, 4, 6, 3);
        let once: Batch = (0..6).collect();
        let twice: Batch = (0..6).chain(0..6).collect();
        let (a, la) = backward(&p, &set, &once).unwrap();
        let (b, lb) = backward(&p, &set, &twice).unwrap();
        assert!((la - lb).abs() < 1e-14);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
        }
    }

    #[test]
    fn scaling_loss_scales_gradient() {
        let dims = ModelDims::new(2, 3);
        let p = ModelParameters::init(dims, 2).unwrap();
        let set = random_set(2, 4, 6, 3);
        let batch: Batch = (0..6).collect();
        let (a, la) = backward(&p, &set, &batch).unwrap();
        let (b, lb) = backward_scaled(&p, &set, &batch, 3.5).unwrap();
        assert!((lb - 3.5 * la).abs() < 1e-12);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((3.5 * x - y).abs() <= 1e-12 * y.abs().max(1e-3));
        }
    }

    #[test]
    fn step_count_and_zero_rate() {
        let dims = ModelDims::new(2, 3);
        let w = ModelParameters::init(dims, 1).unwrap();
        let set = random_set(2, 4, 10, 4);
        let out = train_local(&w, &set, &cfg(0.1, 3, 4), 9).unwrap();
        assert_eq!(out.stats.steps, 3 * 3);
        assert_eq!(out.stats.epoch_losses.len(), 3);
        assert_eq!(out.params.delta_from(&w).unwrap(), out.delta);

        let frozen = train_local(&w, &set, &cfg(0.0, 2, 4), 9).unwrap();
        assert!(frozen.delta.values().iter().all(|&v| v == 0.0));
        assert_eq!(frozen.params, w);
    }

    #[test]
    fn empty_dataset_is_skipped() {
        let dims = ModelDims::new(2, 3);
        let w = ModelParameters::init(dims, 1).unwrap();
        let empty = SequenceSet::new(4, 2, vec![], vec![]).unwrap();
        assert_eq!(train_local(&w, &empty, &cfg(0.1, 1, 4), 0).unwrap_err(), Error::Empty("local dataset"));
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let dims = ModelDims::new(2, 6);
        let w = ModelParameters::init(dims, 3).unwrap();
        let set = separable_set(400, 8);
        let out = train_local(&w, &set, &cfg(0.5, 30, 16), 1).unwrap();
        let first = out.stats.epoch_losses[0];
        assert!(out.stats.final_loss() < first, "{:?}", out.stats.epoch_losses);
        let labels = classify_at(&out.params, &set, 0.5).unwrap();
        let correct = labels.iter().zip(set.targets()).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / set.len() as f64 > 0.9, "{correct} {:?}", out.stats.epoch_losses);
    }

    #[test]
    fn threshold_boundary_and_monotonicity() {
        assert_eq!(threshold_labels(&[0.5], 0.5), [1]);
        let probs: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let mut last = usize::MAX;
        for k in 1..20 {
            let positives = threshold_labels(&probs, k as f64 / 20.0).iter().filter(|&&l| l == 1).count();
            assert!(positives <= last);
            last = positives;
        }
    }

    #[test]
    fn saturated_head() {
        let dims = ModelDims::new(2, 3);
        let mut p = ModelParameters::init(dims, 1).unwrap();
        p.group_mut(ParamGroup::HeadWeights).fill(0.0);
        p.group_mut(ParamGroup::HeadBias)[0] = 20.0;
        let set = random_set(2, 4, 3, 1);
        assert!(predict(&p, &set).unwrap().iter().all(|&y| y > 0.999999 && y < 1.0));
        p.group_mut(ParamGroup::HeadBias)[0] = 500.0;
        assert!(predict(&p, &set).unwrap().iter().all(|&y| y < 1.0));
        p.group_mut(ParamGroup::HeadBias)[0] = -500.0;
        assert!(predict(&p, &set).unwrap().iter().all(|&y| y > 0.0));
    }
}
