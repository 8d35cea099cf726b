//! Two-phase optimization of the extraction policy and the dev-set grid
//! search over control knobs.
//!
//! Phase one fits the coverage scorers as a regressor from action
//! probabilities to per-sentence rewards, with the coherence scorer frozen.
//! Phase two trains both scorers on the trajectory loss
//!
//! ```text
//! L = -R * sum_t log pi_t  +  s * lambda / T * sum_t (pi_t - r_t)^2
//! ```
//!
//! where `s` is -1 ([`RegressionSign::Bonus`], the default) or +1
//! ([`RegressionSign::Penalty`]). Rewards are constants; gradients reach the
//! scorers through the softmax and the selection logits. Updates are plain
//! gradient descent, one sampled trajectory per cluster per epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ControlConfig, RegressionSign};
use crate::embedding::{EmbeddingProvider, SentenceVector};
use crate::metrics::{rouge_l, rouge_n, summary_reward, tokenize};
use crate::pipeline::{derive_seed, summarize, PreparedCluster};
use crate::policy::{
    extract_trajectory, policy_backward, trajectory_probabilities, ExtractMode, PolicyModels, Trajectory,
};
use crate::rewrite::{RewriteRequest, Rewriter};
use crate::{Error, Result};

/// Trajectory loss and `dL/d pi_t` for every step.
///
/// Requires the final reward and every step reward to be filled in.
pub fn trajectory_loss(traj: &Trajectory, lambda: f64, sign: RegressionSign) -> Result<(f64, Vec<f64>)> {
    let big_r = traj
        .final_reward
        .ok_or_else(|| Error::InvalidTrajectory("final reward missing".into()))?;
    let mut probs = Vec::with_capacity(traj.steps.len());
    let mut rewards = Vec::with_capacity(traj.steps.len());
    for (t, step) in traj.steps.iter().enumerate() {
        if !(step.prob > 0.0 && step.prob <= 1.0) {
            return Err(Error::InvalidTrajectory(format!(
                "step {t} has probability {} outside (0, 1]",
                step.prob
            )));
        }
        probs.push(step.prob);
        rewards.push(
            step.reward
                .ok_or_else(|| Error::InvalidTrajectory(format!("step {t} reward missing")))?,
        );
    }
    Ok(loss_from_parts(&probs, &rewards, big_r, lambda, sign.coefficient()))
}

/// Loss and per-step gradient for explicit probabilities and rewards.
/// `coef` multiplies the regression term.
fn loss_from_parts(probs: &[f64], rewards: &[f64], big_r: f64, lambda: f64, coef: f64) -> (f64, Vec<f64>) {
    if probs.is_empty() {
        return (0.0, Vec::new());
    }
    let tn = probs.len() as f64;
    let mut log_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (&p, &r) in probs.iter().zip(rewards) {
        log_sum += p.ln();
        sq_sum += (p - r).powi(2);
        grads.push(-big_r / p + coef * 2.0 * lambda / tn * (p - r));
    }
    (-big_r * log_sum + coef * lambda / tn * sq_sum, grads)
}

/// Trajectory loss as a function of the parameters along a fixed index
/// sequence. Used by gradient checks.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_objective(
    models: &PolicyModels,
    cfg: &ControlConfig,
    vectors: &[SentenceVector],
    indices: &[usize],
    big_r: f64,
    step_rewards: &[f64],
    lambda: f64,
    sign: RegressionSign,
) -> Result<f64> {
    let probs = trajectory_probabilities(models, cfg, vectors, indices)?;
    Ok(loss_from_parts(&probs, step_rewards, big_r, lambda, sign.coefficient()).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Rl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase: Phase,
    pub epochs: usize,
    pub mean_loss: Vec<f64>,
    pub mean_reward: Vec<f64>,
    pub skipped: Vec<usize>,
    pub checkpoint_path: Option<String>,
}

impl TrainReport {
    fn new(phase: Phase) -> Self {
        TrainReport {
            phase,
            epochs: 0,
            mean_loss: Vec::new(),
            mean_reward: Vec::new(),
            skipped: Vec::new(),
            checkpoint_path: None,
        }
    }

    /// One JSON object per epoch.
    pub fn log_lines(&self) -> Vec<String> {
        (0..self.epochs)
            .map(|e| {
                serde_json::json!({
                    "phase": self.phase,
                    "epoch": e + 1,
                    "mean_loss": self.mean_loss[e],
                    "mean_reward": self.mean_reward[e],
                    "skipped": self.skipped[e],
                })
                .to_string()
            })
            .collect()
    }
}

/// Supplies the trajectory reward and per-step rewards.
pub trait RewardModel {
    fn rewards(&self, cluster: &PreparedCluster, indices: &[usize], summary: &str) -> Result<(f64, Vec<f64>)>;
}

/// ROUGE + similarity against the cluster's reference summary.
pub struct ReferenceReward<'a> {
    pub provider: &'a dyn EmbeddingProvider,
}

impl RewardModel for ReferenceReward<'_> {
    fn rewards(&self, cluster: &PreparedCluster, indices: &[usize], summary: &str) -> Result<(f64, Vec<f64>)> {
        let reference = cluster.reference.as_deref().ok_or(Error::Empty("reference summary"))?;
        let step = cluster.step_rewards.as_ref().ok_or(Error::Empty("step rewards"))?;
        let total = summary_reward(summary, reference, self.provider)?.total;
        Ok((total, indices.iter().map(|&i| step[i]).collect()))
    }
}

fn require_references(data: &[PreparedCluster]) -> Result<()> {
    if let Some(c) = data.iter().find(|c| c.step_rewards.is_none()) {
        return Err(Error::InvalidConfig(format!("cluster {} has no reference summary", c.id)));
    }
    Ok(())
}

/// Fits the coverage scorers by minimizing `lambda/T * sum (pi_t - r_t)^2`
/// over sampled trajectories. Coherence parameters are left untouched.
pub fn pretrain_policy(data: &[PreparedCluster], models: &mut PolicyModels, cfg: &ControlConfig) -> Result<TrainReport> {
    cfg.validate()?;
    require_references(data)?;
    let mut report = TrainReport::new(Phase::Pretrain);
    for epoch in 0..cfg.pretrain_epochs {
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for (ci, cluster) in data.iter().enumerate() {
            if cluster.vectors.is_empty() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0, epoch as u64, ci as u64]));
            let traj = extract_trajectory(models, cfg, &cluster.id, &cluster.vectors, ExtractMode::Sample, &mut rng)?;
            let indices = traj.indices();
            let step = cluster.step_rewards.as_ref().expect("checked");
            let probs: Vec<f64> = traj.steps.iter().map(|s| s.prob).collect();
            let rewards: Vec<f64> = indices.iter().map(|&i| step[i]).collect();
            let (loss, d_probs) = loss_from_parts(&probs, &rewards, 0.0, cfg.lambda, 1.0);
            let grad = policy_backward(models, cfg, &cluster.vectors, &indices, &d_probs)?;
            models.apply(&grad, cfg.lr_pretrain, false);
            loss_sum += loss;
            count += 1;
        }
        report.epochs += 1;
        report.mean_loss.push(loss_sum / count.max(1) as f64);
        report.mean_reward.push(0.0);
        report.skipped.push(0);
    }
    Ok(report)
}

/// Policy-gradient training of both scorers.
///
/// A trajectory whose rewrite fails is dropped and counted; more than half
/// of an epoch's clusters failing aborts training.
pub fn train_rl(
    data: &[PreparedCluster],
    models: &mut PolicyModels,
    cfg: &ControlConfig,
    rewriter: &dyn Rewriter,
    reward: &dyn RewardModel,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::new(Phase::Rl);
    for epoch in 0..cfg.rl_epochs {
        let (mut loss_sum, mut reward_sum, mut count, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for (ci, cluster) in data.iter().enumerate() {
            if cluster.vectors.is_empty() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, epoch as u64, ci as u64]));
            let mut traj =
                extract_trajectory(models, cfg, &cluster.id, &cluster.vectors, ExtractMode::Sample, &mut rng)?;
            let indices = traj.indices();
            let rewritten = match rewriter.rewrite(&RewriteRequest::new(cluster.selected_texts(&indices))) {
                Ok(r) => r.text,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            let (big_r, step_rewards) = reward.rewards(cluster, &indices, &rewritten)?;
            traj.final_reward = Some(big_r);
            for (step, r) in traj.steps.iter_mut().zip(step_rewards) {
                step.reward = Some(r);
            }
            let (loss, d_probs) = trajectory_loss(&traj, cfg.lambda, cfg.regression_sign)?;
            let grad = policy_backward(models, cfg, &cluster.vectors, &indices, &d_probs)?;
            models.apply(&grad, cfg.lr_rl, true);
            loss_sum += loss;
            reward_sum += big_r;
            count += 1;
        }
        let attempted = count + skipped;
        if attempted > 0 && skipped * 2 > attempted {
            return Err(Error::Aborted(format!(
                "epoch {}: {skipped} of {attempted} rewrites failed",
                epoch + 1
            )));
        }
        report.epochs += 1;
        report.mean_loss.push(loss_sum / count.max(1) as f64);
        report.mean_reward.push(reward_sum / count.max(1) as f64);
        report.skipped.push(skipped);
    }
    Ok(report)
}

/// Candidate values per control knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cl1: Vec<f64>,
    pub cl2: Vec<f64>,
    pub k: Vec<f64>,
    pub c: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl GridSpec {
    /// Singleton grid at the values of `cfg`.
    pub fn around(cfg: &ControlConfig) -> Self {
        GridSpec {
            cl1: vec![cfg.cl1],
            cl2: vec![cfg.cl2],
            k: vec![cfg.k],
            c: vec![cfg.c],
            lambda: vec![cfg.lambda],
        }
    }

    fn points(&self, base: &ControlConfig) -> Vec<ControlConfig> {
        let mut out = Vec::new();
        for &cl1 in &self.cl1 {
            for &cl2 in &self.cl2 {
                for &k in &self.k {
                    for &c in &self.c {
                        for &lambda in &self.lambda {
                            out.push(ControlConfig {
                                cl1,
                                cl2,
                                k,
                                c,
                                lambda,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cl1: f64,
    pub cl2: f64,
    pub k: f64,
    pub c: f64,
    pub lambda: f64,
    /// Mean of ROUGE-2 F1 + ROUGE-L F1 over the dev clusters.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ControlConfig,
    pub best_score: f64,
    pub table: Vec<GridRow>,
}

/// Exhaustive evaluation of every grid point with greedy extraction; the
/// first point reaching the highest score wins.
pub fn grid_search(
    dev: &[PreparedCluster],
    grid: &GridSpec,
    models: &PolicyModels,
    base: &ControlConfig,
    rewriter: &dyn Rewriter,
) -> Result<GridResult> {
    for (name, values) in [
        ("cl1", &grid.cl1),
        ("cl2", &grid.cl2),
        ("k", &grid.k),
        ("c", &grid.c),
        ("lambda", &grid.lambda),
    ] {
        if values.is_empty() {
            return Err(Error::InvalidConfig(format!("grid for {name} is empty")));
        }
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let mut table = Vec::new();
    let mut best: Option<(ControlConfig, f64)> = None;
    for point in grid.points(base) {
        point.validate()?;
        let mut total = 0.0;
        for cluster in dev {
            let reference = cluster
                .reference
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig(format!("cluster {} has no reference summary", cluster.id)))?;
            let summary = summarize(models, &point, cluster, ExtractMode::Greedy, point.seed, rewriter)?;
            let c = tokenize(&summary.rewrite.text);
            let r = tokenize(reference);
            total += rouge_n(&c, &r, 2).f1 + rouge_l(&c, &r).f1;
        }
        let score = total / dev.len() as f64;
        table.push(GridRow {
            cl1: point.cl1,
            cl2: point.cl2,
            k: point.k,
            c: point.c,
            lambda: point.lambda,
            score,
        });
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((point, score));
        }
    }
    let (best, best_score) = best.expect("grid is nonempty");
    Ok(GridResult {
        best,
        best_score,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TrajectoryStep;

    fn traj(steps: &[(f64, f64)], big_r: f64) -> Trajectory {
        Trajectory {
            cluster_id: "c".into(),
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, &(p, r))| TrajectoryStep {
                    index: i,
                    prob: p,
                    reward: Some(r),
                })
                .collect(),
            tn: steps.len(),
            final_reward: Some(big_r),
        }
    }

    #[test]
    fn null_signal() {
        let (loss, grads) = trajectory_loss(&traj(&[(0.3, 0.9), (0.6, 0.1)], 0.0), 0.0, RegressionSign::Bonus).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_step_arithmetic() {
        let (loss, _) = trajectory_loss(&traj(&[(0.5, 0.0)], 1.0), 0.0, RegressionSign::Bonus).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-4);
        let (loss, _) = trajectory_loss(&traj(&[(0.5, 0.5)], 0.0), 2.0, RegressionSign::Bonus).unwrap();
        assert_eq!(loss, 0.0);
        let (loss, _) = trajectory_loss(&traj(&[(0.5, 0.3)], 0.0), 2.0, RegressionSign::Bonus).unwrap();
        assert!((loss + 0.08).abs() < 1e-12);
        let (loss, _) = trajectory_loss(&traj(&[(0.5, 0.3)], 0.0), 2.0, RegressionSign::Penalty).unwrap();
        assert!((loss - 0.08).abs() < 1e-12);
    }

    #[test]
    fn per_step_gradient_matches_difference_quotient() {
        let base = traj(&[(0.4, 0.7), (0.25, 0.2), (0.8, 0.5)], 0.6);
        for sign in [RegressionSign::Bonus, RegressionSign::Penalty] {
            let (_, grads) = trajectory_loss(&base, 0.7, sign).unwrap();
            for (t, &grad) in grads.iter().enumerate() {
                let h = 1e-6;
                let mut up = base.clone();
                up.steps[t].prob += h;
                let mut down = base.clone();
                down.steps[t].prob -= h;
                let fd = (trajectory_loss(&up, 0.7, sign).unwrap().0 - trajectory_loss(&down, 0.7, sign).unwrap().0)
                    / (2.0 * h);
                assert!((fd - grad).abs() < 1e-6, "{fd} vs {grad}");
            }
        }
    }

    #[test]
    fn rejects_corrupt_trajectories() {
        assert!(trajectory_loss(&traj(&[(0.0, 0.5)], 1.0), 0.5, RegressionSign::Bonus).is_err());
        let mut t = traj(&[(0.5, 0.5)], 1.0);
        t.final_reward = None;
        assert!(trajectory_loss(&t, 0.5, RegressionSign::Bonus).is_err());
        let mut t = traj(&[(0.5, 0.5)], 1.0);
        t.steps[0].reward = None;
        assert!(trajectory_loss(&t, 0.5, RegressionSign::Bonus).is_err());
    }

    #[test]
    fn log_lines_shape() {
        let report = TrainReport {
            phase: Phase::Rl,
            epochs: 1,
            mean_loss: vec![0.5],
            mean_reward: vec![0.25],
            skipped: vec![2],
            checkpoint_path: None,
        };
        let v: serde_json::Value = serde_json::from_str(&report.log_lines()[0]).unwrap();
        assert_eq!(v["phase"], "rl");
        assert_eq!(v["epoch"], 1);
        assert_eq!(v["skipped"], 2);
    }

    #[test]
    fn empty_grid_dimension_rejected() {
        let mut grid = GridSpec::around(&ControlConfig::default());
        grid.k.clear();
        let dev = vec![PreparedCluster::from_vectors("c", vec![], vec![])];
        let err = grid_search(
            &dev,
            &grid,
            &PolicyModels::zeros(2),
            &ControlConfig::default(),
            &crate::rewrite::IdentityRewriter,
        )
        .unwrap_err();
        assert!(err.to_string().contains("grid for k"));
    }
}
