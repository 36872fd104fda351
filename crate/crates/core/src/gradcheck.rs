//! Central finite-difference check of the analytic gradients.

use alloc::vec::Vec;

use rand::Rng;

use crate::model::{backward, batch_loss, ModelDims, ModelParameters, ParamGroup};
use crate::pipeline::{Batch, SequenceSet};
use crate::seed::{derive_stream_seed, rng};
use crate::Result;

/// Components whose gradients are both below this magnitude are compared
/// on an absolute scale: `|a - n| / max(|a|, |n|, FLOOR)`.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub components: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| g.max_relative_error <= tolerance)
    }
}

/// Compares every gradient component against `(L(θ+ε) - L(θ-ε)) / 2ε`.
pub fn check_gradients(p: &ModelParameters, set: &SequenceSet, batch: &Batch, eps: f64) -> Result<GradCheckReport> {
    let (analytic, _) = backward(p, set, batch)?;
    let layout = p.layout();
    let mut probe = p.clone();
    let mut groups = Vec::new();
    for group in layout.groups() {
        let range = layout.range(group);
        let mut worst: f64 = 0.0;
        for idx in range.clone() {
            let original = p.values()[idx];
            probe.values_mut()[idx] = original + eps;
            let up = batch_loss(&probe, set, batch)?;
            probe.values_mut()[idx] = original - eps;
            let down = batch_loss(&probe, set, batch)?;
            probe.values_mut()[idx] = original;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.values()[idx], numeric));
        }
        groups.push(GroupCheck {
            group,
            components: range.len(),
            max_relative_error: worst,
        });
    }
    Ok(GradCheckReport { groups })
}

/// Random model, windows and targets for a gradient check. Every
/// parameter (biases included) is jittered away from its initial value so
/// no group sits at a trivial point.
pub fn random_problem(dims: ModelDims, window: usize, batch: usize, seed: u64) -> Result<(ModelParameters, SequenceSet, Batch)> {
    let mut p = ModelParameters::init(dims, derive_stream_seed(seed, b"gradcheck-params"))?;
    let mut r = rng(derive_stream_seed(seed, b"gradcheck-data"));
    for v in p.values_mut() {
        *v += r.random_range(-0.5..0.5);
    }
    let data = (0..batch * window * dims.input_size)
        .map(|_| r.random_range(0.0..1.0))
        .collect();
    let targets = (0..batch).map(|i| (i % 2) as u8 ^ r.random_range(0..2u8)).collect();
    let set = SequenceSet::new(window, dims.input_size, data, targets)?;
    Ok((p, set, (0..batch).collect()))
}

/// The standard check: input 6, hidden 8, window 4, batch 5, ε = 1e-5.
pub fn gradcheck(seed: u64) -> Result<GradCheckReport> {
    let (p, set, batch) = random_problem(ModelDims::new(6, 8), 4, 5, seed)?;
    check_gradients(&p, &set, &batch, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_group_passes() {
        for seed in 0..3 {
            let report = gradcheck(seed).unwrap();
            assert_eq!(report.groups.len(), 26);
            for g in &report.groups {
                assert!(g.max_relative_error <= 1e-4, "seed {seed}: {g:?}");
            }
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let (p, set, batch) = random_problem(ModelDims::new(3, 2), 3, 4, 1).unwrap();
        let (g, _) = backward(&p, &set, &batch).unwrap();
        let numeric_first = {
            let mut probe = p.clone();
            probe.values_mut()[0] += 1e-5;
            let up = batch_loss(&probe, &set, &batch).unwrap();
            probe.values_mut()[0] -= 2e-5;
            let down = batch_loss(&probe, &set, &batch).unwrap();
            (up - down) / 2e-5
        };
        assert!(relative_error(g.values()[0], numeric_first) <= 1e-4);
        assert!(relative_error(g.values()[0] * 1.01 + 1e-3, numeric_first) > 1e-4);
    }
}
