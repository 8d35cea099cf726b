//! ROUGE-1/2/L from scratch, embedding similarity, and the trajectory and
//! per-step rewards used to train the extraction policy.
//!
//! Tokenization is deliberately plain (lowercase, whitespace split, edge
//! punctuation stripped, no stemming or stopwords), so scores are not
//! directly comparable with ROUGE toolkits that stem.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingProvider};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, candidate_total);
        let recall = ratio(overlap, reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

/// Lowercase, split on whitespace, strip leading/trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase().trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, cand.values().sum(), refs.values().sum())
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L of two raw texts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
}

pub fn rouge_all(candidate: &str, reference: &str) -> RougeTriple {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    RougeTriple {
        rouge1: rouge_n(&c, &r, 1),
        rouge2: rouge_n(&c, &r, 2),
        rouge_l: rouge_l(&c, &r),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub rouge2_f1: f64,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: f64,
    pub rouge_avg: f64,
    pub sim: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// `total = (mean(rouge2_f1, rougeL_f1) + sim) / 2`.
    pub fn combine(rouge2_f1: f64, rouge_l_f1: f64, sim: f64) -> Self {
        let rouge_avg = 0.5 * (rouge2_f1 + rouge_l_f1);
        RewardBreakdown {
            rouge2_f1,
            rouge_l_f1,
            rouge_avg,
            sim,
            total: 0.5 * (rouge_avg + sim),
        }
    }
}

/// Embedding cosine clamped to `[0, 1]`.
pub fn similarity(provider: &dyn EmbeddingProvider, a: &str, b: &str) -> Result<f64> {
    let va = provider.embed_text(a)?;
    let vb = provider.embed_text(b)?;
    Ok(cosine(&va, &vb)?.clamp(0.0, 1.0))
}

/// Reward of a rewritten summary against the reference.
pub fn summary_reward(summary: &str, reference: &str, provider: &dyn EmbeddingProvider) -> Result<RewardBreakdown> {
    if reference.trim().is_empty() {
        return Err(Error::Empty("reference summary"));
    }
    if summary.trim().is_empty() {
        return Ok(RewardBreakdown::default());
    }
    let c = tokenize(summary);
    let r = tokenize(reference);
    let sim = similarity(provider, summary, reference)?;
    Ok(RewardBreakdown::combine(rouge_n(&c, &r, 2).f1, rouge_l(&c, &r).f1, sim))
}

/// Reward for selecting one sentence: the same formula on the sentence text.
pub fn step_reward(sentence: &str, reference: &str, provider: &dyn EmbeddingProvider) -> Result<RewardBreakdown> {
    summary_reward(sentence, reference, provider)
}

/// Per-cluster evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvaluation {
    pub cluster_id: String,
    #[serde(flatten)]
    pub rouge: RougeTriple,
    pub reward: RewardBreakdown,
}

pub fn evaluate_summary(
    cluster_id: &str,
    summary: &str,
    reference: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<ClusterEvaluation> {
    Ok(ClusterEvaluation {
        cluster_id: cluster_id.to_string(),
        rouge: rouge_all(summary, reference),
        reward: summary_reward(summary, reference, provider)?,
    })
}

/// Per-cluster records plus corpus means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub clusters: Vec<ClusterEvaluation>,
    pub mean: Option<ClusterEvaluation>,
}

fn mean_score(scores: impl Iterator<Item = RougeScore>, n: f64) -> RougeScore {
    let mut acc = RougeScore::default();
    for s in scores {
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
    }
    RougeScore {
        precision: acc.precision / n,
        recall: acc.recall / n,
        f1: acc.f1 / n,
    }
}

impl EvaluationReport {
    pub fn new(clusters: Vec<ClusterEvaluation>) -> Self {
        let mean = (!clusters.is_empty()).then(|| {
            let n = clusters.len() as f64;
            let reward = |f: fn(&RewardBreakdown) -> f64| clusters.iter().map(|c| f(&c.reward)).sum::<f64>() / n;
            ClusterEvaluation {
                cluster_id: "mean".into(),
                rouge: RougeTriple {
                    rouge1: mean_score(clusters.iter().map(|c| c.rouge.rouge1), n),
                    rouge2: mean_score(clusters.iter().map(|c| c.rouge.rouge2), n),
                    rouge_l: mean_score(clusters.iter().map(|c| c.rouge.rouge_l), n),
                },
                reward: RewardBreakdown {
                    rouge2_f1: reward(|r| r.rouge2_f1),
                    rouge_l_f1: reward(|r| r.rouge_l_f1),
                    rouge_avg: reward(|r| r.rouge_avg),
                    sim: reward(|r| r.sim),
                    total: reward(|r| r.total),
                },
            }
        });
        EvaluationReport { clusters, mean }
    }

    /// Plain-text table of F1 scores with ROUGE-1/2/L columns.
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>8} {:>8} {:>8}\n", "cluster", "R-1", "R-2", "R-L");
        for row in self.clusters.iter().chain(self.mean.iter()) {
            out.push_str(&format!(
                "{:<24} {:>8.4} {:>8.4} {:>8.4}\n",
                row.cluster_id, row.rouge.rouge1.f1, row.rouge.rouge2.f1, row.rouge.rouge_l.f1
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::FallbackEmbedder;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat."), vec!["the", "cat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("U.S.-based, firm"), vec!["u.s.-based", "firm"]);
    }

    #[test]
    fn worked_example() {
        let c = toks("the cat sat on the mat");
        let r = toks("the cat is on the mat");
        let r1 = rouge_n(&c, &r, 1);
        assert!((r1.precision - 5.0 / 6.0).abs() < 1e-12);
        assert!((r1.f1 - 5.0 / 6.0).abs() < 1e-12);
        let r2 = rouge_n(&c, &r, 2);
        assert!((r2.f1 - 0.6).abs() < 1e-12);
        let rl = rouge_l(&c, &r);
        assert_eq!(lcs_len(&c, &r), 5);
        assert!((rl.f1 - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let a = toks("alpha beta gamma");
        let empty: Vec<String> = vec![];
        assert_eq!(rouge_n(&a, &a, 2).f1, 1.0);
        assert_eq!(rouge_n(&empty, &a, 1), RougeScore::default());
        assert_eq!(rouge_l(&a, &a).f1, 1.0);
        assert_eq!(rouge_l(&a, &toks("delta epsilon")).f1, 0.0);
        // a one-token text has no bigrams
        assert_eq!(rouge_n(&toks("x"), &toks("x"), 2).f1, 0.0);
    }

    #[test]
    fn reward_composition() {
        let b = RewardBreakdown::combine(0.6, 5.0 / 6.0, 0.8);
        assert!((b.total - 0.758333).abs() < 1e-4);
        assert!((b.rouge_avg - (0.6 + 5.0 / 6.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn summary_reward_identity_and_empty() {
        let e = FallbackEmbedder::new(32).unwrap();
        let s = "Storms hit the coast. Thousands lost power.";
        let r = summary_reward(s, s, &e).unwrap();
        assert!((r.total - 1.0).abs() < 1e-12);
        assert_eq!(summary_reward("", s, &e).unwrap().total, 0.0);
        assert!(summary_reward(s, " ", &e).is_err());
    }

    #[test]
    fn step_reward_bounds() {
        let e = FallbackEmbedder::new(32).unwrap();
        let reference = "Storms hit the coast.";
        assert!((step_reward(reference, reference, &e).unwrap().total - 1.0).abs() < 1e-12);
        let disjoint = step_reward("Quarterly earnings beat forecasts.", reference, &e).unwrap();
        assert_eq!(disjoint.rouge_avg, 0.0);
        assert!((0.0..=1.0).contains(&disjoint.total));
    }

    #[test]
    fn report_table_has_mean_row() {
        let e = FallbackEmbedder::new(16).unwrap();
        let ev = evaluate_summary("c1", "A b c.", "A b c.", &e).unwrap();
        let report = EvaluationReport::new(vec![ev]);
        let table = report.table();
        assert!(table.contains("c1"));
        assert!(table.contains("mean"));
        assert!(table.contains("1.0000"));
        let json = serde_json::to_value(&report.clusters[0]).unwrap();
        assert!(json.get("rougeL").is_some());
        assert!(json["rouge1"].get("f1").is_some());
    }
}
