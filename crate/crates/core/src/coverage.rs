//! Coverage: how much of the not-yet-selected pool a candidate accounts for.
//!
//! A forward scorer sees `(xi, xj)`, a backward scorer sees `(xj, xi)`;
//! their outputs are averaged. The coverage gain of a candidate is the mean
//! pair score against every other remaining sentence.

use rand::Rng;

use crate::embedding::SentenceVector;
use crate::neural::{pair_features, GradRecord, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageModel {
    pub forward: MlpParams,
    pub backward: MlpParams,
}

/// Gradients for both directions of a [`CoverageModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrad {
    pub forward: GradRecord,
    pub backward: GradRecord,
}

impl CoverageGrad {
    pub fn zeros(in_dim: usize) -> Self {
        CoverageGrad {
            forward: GradRecord::zeros(in_dim),
            backward: GradRecord::zeros(in_dim),
        }
    }

    pub fn add_scaled(&mut self, other: &CoverageGrad, scale: f64) {
        self.forward.add_scaled(&other.forward, scale);
        self.backward.add_scaled(&other.backward, scale);
    }
}

impl CoverageModel {
    pub fn new(forward: MlpParams, backward: MlpParams) -> Result<Self> {
        if forward.in_dim() != backward.in_dim() {
            return Err(Error::DimMismatch {
                expected: forward.in_dim(),
                found: backward.in_dim(),
            });
        }
        Ok(CoverageModel { forward, backward })
    }

    pub fn zeros(dim: usize) -> Self {
        let p = MlpParams::zeros(crate::neural::PAIR_BLOCKS * dim);
        CoverageModel {
            forward: p.clone(),
            backward: p,
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        CoverageModel {
            forward: MlpParams::init_for_dim(dim, rng),
            backward: MlpParams::init_for_dim(dim, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.forward.in_dim()
    }

    /// Average of forward `F(xi, xj)` and backward `F'(xj, xi)`.
    pub fn pair_coverage(&self, xi: &SentenceVector, xj: &SentenceVector) -> Result<f64> {
        let fwd = self.forward.forward(&pair_features(xi, xj)?)?;
        let bwd = self.backward.forward(&pair_features(xj, xi)?)?;
        Ok(0.5 * (fwd + bwd))
    }

    /// Gradient of `upstream * pair_coverage(xi, xj)`.
    pub fn pair_coverage_backward(&self, xi: &SentenceVector, xj: &SentenceVector, upstream: f64) -> Result<CoverageGrad> {
        Ok(CoverageGrad {
            forward: self.forward.backward(&pair_features(xi, xj)?, 0.5 * upstream)?,
            backward: self.backward.backward(&pair_features(xj, xi)?, 0.5 * upstream)?,
        })
    }

    /// Mean pair coverage of `xi` against `remaining` (which must not contain
    /// `xi` itself). Zero when nothing remains.
    pub fn coverage_gain<'a, I>(&self, xi: &SentenceVector, remaining: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a SentenceVector>,
    {
        let mut sum = 0.0;
        let mut count = 0usize;
        for xj in remaining {
            sum += self.pair_coverage(xi, xj)?;
            count += 1;
        }
        Ok(if count == 0 { 0.0 } else { sum / count as f64 })
    }

    pub fn apply(&mut self, grad: &CoverageGrad, lr: f64) {
        self.forward.apply(&grad.forward, lr);
        self.backward.apply(&grad.backward, lr);
    }
}
