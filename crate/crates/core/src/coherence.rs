//! Coherence scorer, triplet construction from reference summaries,
//! triplet-loss pre-training and threshold diagnostics.
//!
//! Consecutive reference-summary sentences are positive pairs. Each positive
//! pair yields two triplets: one whose negative is a random source sentence
//! (too dissimilar, below the lower threshold) and one whose negative pair is
//! the anchor with itself (redundant, above the upper threshold). A trained
//! scorer therefore prefers pairs whose similarity falls between the two.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClusterRecord;
use crate::embedding::{cosine, EmbeddingProvider, SentenceVector};
use crate::neural::{pair_features, GradRecord, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceModel {
    pub params: MlpParams,
}

impl CoherenceModel {
    pub fn zeros(dim: usize) -> Self {
        CoherenceModel {
            params: MlpParams::zeros(crate::neural::PAIR_BLOCKS * dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        CoherenceModel {
            params: MlpParams::init_for_dim(dim, rng),
        }
    }

    /// Order-sensitive score of `x2` following `x1`.
    pub fn score(&self, x1: &SentenceVector, x2: &SentenceVector) -> Result<f64> {
        self.params.forward(&pair_features(x1, x2)?)
    }

    pub fn score_backward(&self, x1: &SentenceVector, x2: &SentenceVector, upstream: f64) -> Result<GradRecord> {
        self.params.backward(&pair_features(x1, x2)?, upstream)
    }

    pub fn apply(&mut self, grad: &GradRecord, lr: f64) {
        self.params.apply(grad, lr);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    RandomSource,
    SelfPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: SentenceVector,
    pub positive: SentenceVector,
    /// For [`NegativeKind::SelfPair`] this equals `anchor`.
    pub negative: SentenceVector,
    pub negative_kind: NegativeKind,
}

/// Text form of a triplet, used for the inspection export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletText {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub kind: NegativeKind,
}

#[derive(Debug, Clone, Default)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub texts: Vec<TripletText>,
    /// Clusters without a reference summary.
    pub skipped: usize,
}

/// Builds two triplets per consecutive reference-summary pair. Random
/// negatives are drawn uniformly from the cluster's source sentences with a
/// generator seeded by `seed`, walking clusters in order.
pub fn build_triplets(clusters: &[ClusterRecord], provider: &dyn EmbeddingProvider, seed: u64) -> Result<TripletSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TripletSet::default();
    for cluster in clusters {
        if cluster.reference_summary.is_none() {
            set.skipped += 1;
            continue;
        }
        let summary = cluster.reference_sentences();
        if summary.len() < 2 || cluster.sentences.is_empty() {
            continue;
        }
        let texts: Vec<TripletText> = summary
            .windows(2)
            .flat_map(|w| {
                let pick = rng.gen_range(0..cluster.sentences.len());
                let random = cluster.sentences[pick].text.clone();
                [
                    TripletText {
                        anchor: w[0].clone(),
                        positive: w[1].clone(),
                        negative: random,
                        kind: NegativeKind::RandomSource,
                    },
                    TripletText {
                        anchor: w[0].clone(),
                        positive: w[1].clone(),
                        negative: w[0].clone(),
                        kind: NegativeKind::SelfPair,
                    },
                ]
            })
            .collect();

        let summary_vecs = provider.embed(&summary)?;
        let negatives: Vec<String> = texts
            .iter()
            .filter(|t| t.kind == NegativeKind::RandomSource)
            .map(|t| t.negative.clone())
            .collect();
        let negative_vecs = provider.embed(&negatives)?;
        for (pair, neg) in negative_vecs.iter().enumerate() {
            let anchor = &summary_vecs[pair];
            let positive = &summary_vecs[pair + 1];
            set.triplets.push(Triplet {
                anchor: anchor.clone(),
                positive: positive.clone(),
                negative: neg.clone(),
                negative_kind: NegativeKind::RandomSource,
            });
            set.triplets.push(Triplet {
                anchor: anchor.clone(),
                positive: positive.clone(),
                negative: anchor.clone(),
                negative_kind: NegativeKind::SelfPair,
            });
        }
        set.texts.extend(texts);
    }
    Ok(set)
}

/// Writes triplets as JSONL for inspection.
pub fn write_triplets_jsonl(path: impl AsRef<Path>, texts: &[TripletText]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in texts {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Which pair the hinge pushes up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripletOrientation {
    /// `max(0, m + Coh(a, n) - Coh(a, p))`: positive pairs score higher.
    #[default]
    Standard,
    /// `max(0, m + Coh(a, p) - Coh(a, n))`: negative pairs score higher.
    Inverted,
}

/// Hinge on two pair scores, standard orientation.
pub fn hinge(positive_score: f64, negative_score: f64, margin: f64) -> f64 {
    (margin + negative_score - positive_score).max(0.0)
}

/// Triplet loss and its gradient w.r.t. the coherence parameters.
pub fn triplet_loss(model: &CoherenceModel, t: &Triplet, margin: f64) -> Result<(f64, GradRecord)> {
    triplet_loss_oriented(model, t, margin, TripletOrientation::Standard)
}

pub fn triplet_loss_oriented(
    model: &CoherenceModel,
    t: &Triplet,
    margin: f64,
    orientation: TripletOrientation,
) -> Result<(f64, GradRecord)> {
    let pos_f = pair_features(&t.anchor, &t.positive)?;
    let neg_f = pair_features(&t.anchor, &t.negative)?;
    let pos = model.params.forward(&pos_f)?;
    let neg = model.params.forward(&neg_f)?;
    let (up, down, up_f, down_f) = match orientation {
        TripletOrientation::Standard => (pos, neg, &pos_f, &neg_f),
        TripletOrientation::Inverted => (neg, pos, &neg_f, &pos_f),
    };
    let loss = hinge(up, down, margin);
    let mut grad = GradRecord::zeros(model.params.in_dim());
    if loss > 0.0 {
        grad.add_scaled(&model.params.backward(down_f, 1.0)?, 1.0);
        grad.add_scaled(&model.params.backward(up_f, 1.0)?, -1.0);
    }
    Ok((loss, grad))
}

/// Mean triplet loss and mean gradient over a batch.
pub fn batch_triplet_loss(model: &CoherenceModel, triplets: &[Triplet], margin: f64) -> Result<(f64, GradRecord)> {
    let mut grad = GradRecord::zeros(model.params.in_dim());
    let mut total = 0.0;
    for t in triplets {
        let (loss, g) = triplet_loss(model, t, margin)?;
        total += loss;
        grad.add_scaled(&g, 1.0);
    }
    let n = triplets.len().max(1) as f64;
    grad.d_weights.iter_mut().for_each(|g| *g /= n);
    grad.d_bias /= n;
    Ok((total / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub margin: f64,
    pub seed: u64,
}

/// Outcome of coherence pre-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// Decision threshold picked on the dev split.
    pub threshold: f64,
    pub dev_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean train loss before each epoch's update.
    pub train_loss: Vec<f64>,
}

/// Candidate decision thresholds: 0.05, 0.10, ..., 0.95.
pub fn threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Precision, recall and F1 of the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores every (anchor, positive) pair as coherent and every
/// (anchor, negative) pair as incoherent.
pub fn labelled_scores(model: &CoherenceModel, triplets: &[Triplet]) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::with_capacity(2 * triplets.len());
    for t in triplets {
        out.push((model.score(&t.anchor, &t.positive)?, true));
        out.push((model.score(&t.anchor, &t.negative)?, false));
    }
    Ok(out)
}

pub fn prf_at(scores: &[(f64, bool)], threshold: f64) -> Prf {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for &(s, label) in scores {
        match (s > threshold, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf { precision, recall, f1 }
}

/// Threshold from [`threshold_grid`] maximizing F1 on `scores`, lowest wins
/// ties. Thresholds that put every pair in one class are not eligible; if
/// none is eligible the result is 0.5.
pub fn select_threshold(scores: &[(f64, bool)]) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for t in threshold_grid() {
        let positives = scores.iter().filter(|(s, _)| *s > t).count();
        if positives == 0 || positives == scores.len() {
            continue;
        }
        let f = prf_at(scores, t).f1;
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((t, f));
        }
    }
    best.map_or(0.5, |(t, _)| t)
}

/// Full-batch gradient descent on the mean triplet loss, then threshold
/// selection on `dev` and precision/recall/F1 on `test`.
pub fn train_coherence(
    train: &[Triplet],
    dev: &[Triplet],
    test: &[Triplet],
    cfg: &CoherenceTrainConfig,
) -> Result<(CoherenceModel, CoherenceReport)> {
    for (name, split) in [("train split", train), ("dev split", dev), ("test split", test)] {
        if split.is_empty() {
            return Err(Error::Empty(name));
        }
    }
    let dim = train[0].anchor.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CoherenceModel::init(dim, &mut rng);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grad) = batch_triplet_loss(&model, train, cfg.margin)?;
        train_loss.push(loss);
        model.apply(&grad, cfg.lr);
    }

    let dev_scores = labelled_scores(&model, dev)?;
    let threshold = select_threshold(&dev_scores);
    let dev_f1 = prf_at(&dev_scores, threshold).f1;
    let test_prf = prf_at(&labelled_scores(&model, test)?, threshold);
    let report = CoherenceReport {
        threshold,
        dev_f1,
        precision: test_prf.precision,
        recall: test_prf.recall,
        f1: test_prf.f1,
        train_loss,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceThresholds {
    pub t1: f64,
    pub t2: f64,
}

/// Diagnostic calibration of the incoherence/redundancy thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub incoherent_mean: f64,
    pub positive_mean: f64,
    pub redundant_mean: f64,
    /// `None` when the midpoints are out of order (calibration failure).
    pub thresholds: Option<CoherenceThresholds>,
}

type Pair<'a> = (&'a SentenceVector, &'a SentenceVector);

fn mean_cosine(pairs: &[Pair<'_>], what: &'static str) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty(what));
    }
    let mut sum = 0.0;
    for (a, b) in pairs {
        sum += cosine(a, b)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// `t1` sits midway between the incoherent and positive mean cosines, `t2`
/// midway between the positive and redundant means.
pub fn calibrate_thresholds(
    positive: &[Pair<'_>],
    incoherent: &[Pair<'_>],
    redundant: &[Pair<'_>],
) -> Result<ThresholdCalibration> {
    let positive_mean = mean_cosine(positive, "positive pairs")?;
    let incoherent_mean = mean_cosine(incoherent, "incoherent pairs")?;
    let redundant_mean = mean_cosine(redundant, "redundant pairs")?;
    Ok(calibration_from_means(incoherent_mean, positive_mean, redundant_mean))
}

pub fn calibration_from_means(incoherent_mean: f64, positive_mean: f64, redundant_mean: f64) -> ThresholdCalibration {
    let t1 = 0.5 * (incoherent_mean + positive_mean);
    let t2 = 0.5 * (positive_mean + redundant_mean);
    let ok = 0.0 <= t1 && t1 < t2 && t2 <= 1.0;
    ThresholdCalibration {
        incoherent_mean,
        positive_mean,
        redundant_mean,
        thresholds: ok.then_some(CoherenceThresholds { t1, t2 }),
    }
}
