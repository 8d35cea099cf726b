//! The extraction policy: selection logits, a softmax over the remaining
//! sentences, the sentence budget, and trajectory rollouts.
//!
//! At step `t` the logit of a remaining candidate `j` is
//!
//! ```text
//! z_j = cl1 * coverage_gain(x_j, remaining \ {j}) + cl2 * coherence(x_prev, x_j)
//! ```
//!
//! where the coherence term is zero on the first step.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coherence::CoherenceModel;
use crate::config::ControlConfig;
use crate::coverage::{CoverageGrad, CoverageModel};
use crate::embedding::{cosine, SentenceVector};
use crate::neural::{Checkpoint, GradRecord, PAIR_BLOCKS};
use crate::{Error, Result};

/// Slack added before flooring the sentence budget so that exact products
/// like `9 * (2/9)` do not round down.
const BUDGET_EPS: f64 = 1e-9;

pub const COVERAGE_FWD: &str = "coverage_fwd";
pub const COVERAGE_BWD: &str = "coverage_bwd";
pub const COHERENCE: &str = "coherence";

/// Coverage and coherence scorers together.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModels {
    pub coverage: CoverageModel,
    pub coherence: CoherenceModel,
}

impl PolicyModels {
    pub fn zeros(dim: usize) -> Self {
        PolicyModels {
            coverage: CoverageModel::zeros(dim),
            coherence: CoherenceModel::zeros(dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        PolicyModels {
            coverage: CoverageModel::init(dim, rng),
            coherence: CoherenceModel::init(dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.coverage.in_dim() / PAIR_BLOCKS
    }

    pub fn to_checkpoint(&self, config: &ControlConfig) -> Checkpoint {
        let mut models = BTreeMap::new();
        models.insert(COVERAGE_FWD.to_string(), self.coverage.forward.clone());
        models.insert(COVERAGE_BWD.to_string(), self.coverage.backward.clone());
        models.insert(COHERENCE.to_string(), self.coherence.params.clone());
        Checkpoint::new(self.dim(), models, config.clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(PolicyModels {
            coverage: CoverageModel::new(ckpt.model(COVERAGE_FWD)?.clone(), ckpt.model(COVERAGE_BWD)?.clone())?,
            coherence: CoherenceModel {
                params: ckpt.model(COHERENCE)?.clone(),
            },
        })
    }

    pub fn apply(&mut self, grad: &PolicyGrad, lr: f64, update_coherence: bool) {
        self.coverage.apply(&grad.coverage, lr);
        if update_coherence {
            self.coherence.apply(&grad.coherence, lr);
        }
    }
}

/// Ordered selection so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummaryState {
    selected: Vec<usize>,
}

impl SummaryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_selected(selected: Vec<usize>) -> Result<Self> {
        let mut state = SummaryState::new();
        for i in selected {
            state.push(i)?;
        }
        Ok(state)
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn step(&self) -> usize {
        self.selected.len()
    }

    pub fn last(&self) -> Option<usize> {
        self.selected.last().copied()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.selected.contains(&index)
    }

    pub fn push(&mut self, index: usize) -> Result<()> {
        if self.contains(index) {
            return Err(Error::AlreadySelected(index));
        }
        self.selected.push(index);
        Ok(())
    }

    /// Unselected indices in `0..n`, ascending.
    pub fn remaining(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| !self.contains(*i)).collect()
    }
}

/// Pairwise scores of one cluster under fixed parameters.
///
/// `coverage[i][j]` is `pair_coverage(x_i, x_j)`; `coherence[i][j]` is
/// `Coh(x_i, x_j)`.
struct ScoreTables {
    coverage: Vec<Vec<f64>>,
    coherence: Vec<Vec<f64>>,
}

impl ScoreTables {
    fn compute(models: &PolicyModels, vectors: &[SentenceVector]) -> Result<Self> {
        let n = vectors.len();
        let mut coverage = vec![vec![0.0; n]; n];
        let mut coherence = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    coverage[i][j] = models.coverage.pair_coverage(&vectors[i], &vectors[j])?;
                    coherence[i][j] = models.coherence.score(&vectors[i], &vectors[j])?;
                }
            }
        }
        Ok(ScoreTables { coverage, coherence })
    }
}

/// Logits and probabilities for one cluster under frozen parameters.
pub struct PolicyContext<'a> {
    cfg: &'a ControlConfig,
    vectors: &'a [SentenceVector],
    tables: ScoreTables,
}

impl<'a> PolicyContext<'a> {
    pub fn new(models: &PolicyModels, cfg: &'a ControlConfig, vectors: &'a [SentenceVector]) -> Result<Self> {
        let dim = models.dim();
        for v in vectors {
            crate::embedding::check_dims(dim, v.dim())?;
        }
        Ok(PolicyContext {
            cfg,
            vectors,
            tables: ScoreTables::compute(models, vectors)?,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn coverage_gain(&self, candidate: usize, state: &SummaryState) -> f64 {
        let others: Vec<usize> = state
            .remaining(self.len())
            .into_iter()
            .filter(|&m| m != candidate)
            .collect();
        if others.is_empty() {
            return 0.0;
        }
        others.iter().map(|&m| self.tables.coverage[candidate][m]).sum::<f64>() / others.len() as f64
    }

    pub fn coherence_term(&self, candidate: usize, state: &SummaryState) -> f64 {
        state.last().map_or(0.0, |prev| self.tables.coherence[prev][candidate])
    }

    pub fn logit(&self, candidate: usize, state: &SummaryState) -> Result<f64> {
        if candidate >= self.len() {
            return Err(Error::InvalidTrajectory(format!("index {candidate} out of range")));
        }
        if state.contains(candidate) {
            return Err(Error::AlreadySelected(candidate));
        }
        Ok(self.cfg.cl1 * self.coverage_gain(candidate, state) + self.cfg.cl2 * self.coherence_term(candidate, state))
    }

    /// `(index, probability)` for every remaining sentence, ascending index.
    pub fn distribution(&self, state: &SummaryState) -> Result<Vec<(usize, f64)>> {
        let remaining = state.remaining(self.len());
        if remaining.is_empty() {
            return Err(Error::NoCandidates);
        }
        let logits = remaining
            .iter()
            .map(|&j| self.logit(j, state))
            .collect::<Result<Vec<_>>>()?;
        Ok(remaining.into_iter().zip(softmax(&logits)).collect())
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Selection logit of one candidate.
pub fn selection_logit(
    models: &PolicyModels,
    cfg: &ControlConfig,
    candidate: usize,
    state: &SummaryState,
    vectors: &[SentenceVector],
) -> Result<f64> {
    if state.contains(candidate) {
        return Err(Error::AlreadySelected(candidate));
    }
    let x = vectors
        .get(candidate)
        .ok_or_else(|| Error::InvalidTrajectory(format!("index {candidate} out of range")))?;
    let others = (0..vectors.len())
        .filter(|&m| m != candidate && !state.contains(m))
        .map(|m| &vectors[m]);
    let coverage = models.coverage.coverage_gain(x, others)?;
    let coherence = match state.last() {
        Some(prev) => models.coherence.score(&vectors[prev], x)?,
        None => 0.0,
    };
    Ok(cfg.cl1 * coverage + cfg.cl2 * coherence)
}

/// Softmax policy over the remaining sentences.
pub fn action_distribution(
    models: &PolicyModels,
    cfg: &ControlConfig,
    state: &SummaryState,
    vectors: &[SentenceVector],
) -> Result<Vec<(usize, f64)>> {
    PolicyContext::new(models, cfg, vectors)?.distribution(state)
}

/// Population variance of cosine similarity over all unordered pairs.
pub fn pairwise_similarity_variance(vectors: &[SentenceVector]) -> Result<f64> {
    let mut sims = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            sims.push(cosine(&vectors[i], &vectors[j])?);
        }
    }
    if sims.is_empty() {
        return Ok(0.0);
    }
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    Ok(sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n)
}

/// Sentence budget `floor(k + c * var)`, clamped to `[1, max_tn]`. The
/// budget may exceed the cluster size; rollouts stop after `N` steps.
pub fn num_sentences(vectors: &[SentenceVector], k: f64, c: f64, max_tn: usize) -> Result<usize> {
    if vectors.len() < 2 {
        return Ok(1);
    }
    let variance = pairwise_similarity_variance(vectors)?;
    let raw = (k + c * variance + BUDGET_EPS).floor();
    let upper = max_tn.max(1);
    Ok(if raw < 1.0 { 1 } else { (raw as usize).min(upper) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExtractMode {
    #[default]
    Greedy,
    Sample,
}

impl std::str::FromStr for ExtractMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(ExtractMode::Greedy),
            "sample" => Ok(ExtractMode::Sample),
            other => Err(Error::InvalidConfig(format!("unknown mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    pub prob: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub cluster_id: String,
    pub steps: Vec<TrajectoryStep>,
    pub tn: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_reward: Option<f64>,
}

impl Trajectory {
    pub fn indices(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }
}

/// Rolls out one trajectory of `min(TN, N)` steps.
pub fn extract_trajectory<R: Rng + ?Sized>(
    models: &PolicyModels,
    cfg: &ControlConfig,
    cluster_id: &str,
    vectors: &[SentenceVector],
    mode: ExtractMode,
    rng: &mut R,
) -> Result<Trajectory> {
    if vectors.is_empty() {
        return Err(Error::Empty("cluster"));
    }
    let ctx = PolicyContext::new(models, cfg, vectors)?;
    let tn = num_sentences(vectors, cfg.k, cfg.c, cfg.max_tn)?;
    let mut state = SummaryState::new();
    let mut steps = Vec::with_capacity(tn);
    for _ in 0..tn.min(vectors.len()) {
        let dist = ctx.distribution(&state)?;
        let (index, prob) = match mode {
            ExtractMode::Greedy => argmax(&dist),
            ExtractMode::Sample => sample(&dist, rng.gen::<f64>()),
        };
        state.push(index)?;
        steps.push(TrajectoryStep {
            index,
            prob,
            reward: None,
        });
    }
    Ok(Trajectory {
        cluster_id: cluster_id.to_string(),
        steps,
        tn,
        final_reward: None,
    })
}

/// Seeded convenience wrapper around [`extract_trajectory`].
pub fn extract_with_seed(
    models: &PolicyModels,
    cfg: &ControlConfig,
    cluster_id: &str,
    vectors: &[SentenceVector],
    mode: ExtractMode,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    extract_trajectory(models, cfg, cluster_id, vectors, mode, &mut rng)
}

/// Highest probability, lowest index on ties.
fn argmax(dist: &[(usize, f64)]) -> (usize, f64) {
    let mut best = dist[0];
    for &(i, p) in &dist[1..] {
        if p > best.1 {
            best = (i, p);
        }
    }
    best
}

/// Inverse-CDF draw with `u` in `[0, 1)`.
fn sample(dist: &[(usize, f64)], u: f64) -> (usize, f64) {
    let mut cum = 0.0;
    for &(i, p) in dist {
        cum += p;
        if u < cum {
            return (i, p);
        }
    }
    *dist.iter().rev().find(|(_, p)| *p > 0.0).unwrap_or(&dist[dist.len() - 1])
}

/// Gradient of a scalar objective w.r.t. both scorers.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub coverage: CoverageGrad,
    pub coherence: GradRecord,
}

/// Probabilities `pi(x_t | s_t)` of a fixed index sequence under the given
/// parameters.
pub fn trajectory_probabilities(
    models: &PolicyModels,
    cfg: &ControlConfig,
    vectors: &[SentenceVector],
    indices: &[usize],
) -> Result<Vec<f64>> {
    let ctx = PolicyContext::new(models, cfg, vectors)?;
    let mut state = SummaryState::new();
    let mut probs = Vec::with_capacity(indices.len());
    for &a in indices {
        let dist = ctx.distribution(&state)?;
        let p = dist
            .iter()
            .find(|(i, _)| *i == a)
            .map(|(_, p)| *p)
            .ok_or(Error::AlreadySelected(a))?;
        probs.push(p);
        state.push(a)?;
    }
    Ok(probs)
}

/// Backpropagates `d_probs[t] = dL/d pi(x_t | s_t)` along a fixed index
/// sequence through the softmax, the logits and both scorers.
pub fn policy_backward(
    models: &PolicyModels,
    cfg: &ControlConfig,
    vectors: &[SentenceVector],
    indices: &[usize],
    d_probs: &[f64],
) -> Result<PolicyGrad> {
    if indices.len() != d_probs.len() {
        return Err(Error::InvalidTrajectory(format!(
            "{} indices but {} gradients",
            indices.len(),
            d_probs.len()
        )));
    }
    let n = vectors.len();
    let ctx = PolicyContext::new(models, cfg, vectors)?;
    // upstream weights on each pair score
    let mut w_cov = vec![vec![0.0; n]; n];
    let mut w_coh = vec![vec![0.0; n]; n];
    let mut state = SummaryState::new();
    for (&a, &d_prob) in indices.iter().zip(d_probs) {
        let dist = ctx.distribution(&state)?;
        let p_a = dist
            .iter()
            .find(|(i, _)| *i == a)
            .map(|(_, p)| *p)
            .ok_or(Error::AlreadySelected(a))?;
        let remaining: Vec<usize> = dist.iter().map(|(i, _)| *i).collect();
        for &(j, p_j) in &dist {
            let delta = if j == a { 1.0 } else { 0.0 };
            let dz = d_prob * p_a * (delta - p_j);
            if dz == 0.0 {
                continue;
            }
            let others = remaining.len() - 1;
            if others > 0 && cfg.cl1 != 0.0 {
                let share = dz * cfg.cl1 / others as f64;
                for &m in &remaining {
                    if m != j {
                        w_cov[j][m] += share;
                    }
                }
            }
            if let Some(prev) = state.last() {
                w_coh[prev][j] += dz * cfg.cl2;
            }
        }
        state.push(a)?;
    }

    let in_dim = models.coverage.in_dim();
    let mut grad = PolicyGrad {
        coverage: CoverageGrad::zeros(in_dim),
        coherence: GradRecord::zeros(in_dim),
    };
    for i in 0..n {
        for j in 0..n {
            if w_cov[i][j] != 0.0 {
                let g = models.coverage.pair_coverage_backward(&vectors[i], &vectors[j], w_cov[i][j])?;
                grad.coverage.add_scaled(&g, 1.0);
            }
            if w_coh[i][j] != 0.0 {
                let g = models.coherence.score_backward(&vectors[i], &vectors[j], w_coh[i][j])?;
                grad.coherence.add_scaled(&g, 1.0);
            }
        }
    }
    Ok(grad)
}
