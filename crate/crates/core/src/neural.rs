//! Pairwise feature map and the one-layer sigmoid scorer shared by the
//! coverage and coherence models, with hand-written backprop and
//! versioned JSON checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ControlConfig;
use crate::embedding::{check_dims, SentenceVector};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "exrw-ckpt";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Distance of the sigmoid output from 0 and 1 is at least this much.
const SIGMOID_FLOOR: f64 = 1e-15;

/// Number of feature blocks produced by [`pair_features`].
pub const PAIR_BLOCKS: usize = 5;

/// `[x1; x2; x1*x2; x1-x2; |x1-x2|]`, length `5d`.
pub fn pair_features(x1: &SentenceVector, x2: &SentenceVector) -> Result<Vec<f64>> {
    check_dims(x1.dim(), x2.dim())?;
    let (a, b) = (x1.values(), x2.values());
    let mut f = Vec::with_capacity(PAIR_BLOCKS * a.len());
    f.extend_from_slice(a);
    f.extend_from_slice(b);
    f.extend(a.iter().zip(b).map(|(p, q)| p * q));
    f.extend(a.iter().zip(b).map(|(p, q)| p - q));
    f.extend(a.iter().zip(b).map(|(p, q)| (p - q).abs()));
    Ok(f)
}

pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
}

/// Weights and bias of `sigmoid(w·f + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Gradient with the same shape as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradRecord {
    pub d_weights: Vec<f64>,
    pub d_bias: f64,
}

impl GradRecord {
    pub fn zeros(in_dim: usize) -> Self {
        GradRecord {
            d_weights: vec![0.0; in_dim],
            d_bias: 0.0,
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradRecord, scale: f64) {
        self.d_weights
            .iter_mut()
            .zip(&other.d_weights)
            .for_each(|(a, b)| *a += scale * b);
        self.d_bias += scale * other.d_bias;
    }

    pub fn norm(&self) -> f64 {
        (self.d_weights.iter().map(|g| g * g).sum::<f64>() + self.d_bias * self.d_bias).sqrt()
    }
}

impl MlpParams {
    pub fn zeros(in_dim: usize) -> Self {
        MlpParams {
            weights: vec![0.0; in_dim],
            bias: 0.0,
        }
    }

    /// Weights uniform in `±1/sqrt(in_dim)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        MlpParams {
            weights: (0..in_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: 0.0,
        }
    }

    /// Parameters for sentence vectors of dimension `dim`.
    pub fn init_for_dim<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self::init(PAIR_BLOCKS * dim, rng)
    }

    pub fn in_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        check_dims(self.in_dim(), features.len())?;
        Ok(self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.bias)
    }

    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(features)?))
    }

    /// Gradient of `upstream * forward(features)` w.r.t. weights and bias.
    pub fn backward(&self, features: &[f64], upstream: f64) -> Result<GradRecord> {
        let s = self.forward(features)?;
        let dz = upstream * s * (1.0 - s);
        Ok(GradRecord {
            d_weights: features.iter().map(|f| dz * f).collect(),
            d_bias: dz,
        })
    }

    /// Plain gradient-descent step.
    pub fn apply(&mut self, grad: &GradRecord, lr: f64) {
        self.weights
            .iter_mut()
            .zip(&grad.d_weights)
            .for_each(|(w, g)| *w -= lr * g);
        self.bias -= lr * grad.d_bias;
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Serialized form of a full model set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub models: BTreeMap<String, MlpParams>,
    pub config: ControlConfig,
}

impl Checkpoint {
    pub fn new(dim: usize, models: BTreeMap<String, MlpParams>, config: ControlConfig) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim,
            models,
            config,
        }
    }

    pub fn model(&self, name: &str) -> Result<&MlpParams> {
        self.models
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing model {name}")))
    }

    fn check(&self, expected_dim: usize) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.dim != expected_dim {
            return Err(Error::Checkpoint(format!(
                "dimension mismatch: expected dim {expected_dim}, found {}",
                self.dim
            )));
        }
        for (name, params) in &self.models {
            if params.in_dim() != PAIR_BLOCKS * expected_dim {
                return Err(Error::Checkpoint(format!(
                    "model {name}: expected {} weights, found {}",
                    PAIR_BLOCKS * expected_dim,
                    params.in_dim()
                )));
            }
            if !params.is_finite() {
                return Err(Error::Checkpoint(format!("model {name} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

/// Writes the checkpoint as JSON. Floats use the shortest representation
/// that parses back to the same bits.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(ckpt)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint and checks format, version and shapes against `expected_dim`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_dim: usize) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.check(expected_dim)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> SentenceVector {
        SentenceVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn pair_feature_examples() {
        let f = pair_features(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(f, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0, 1.0]);
        let same = pair_features(&v(&[0.3, -0.2]), &v(&[0.3, -0.2])).unwrap();
        assert!(same[6..].iter().all(|&x| x == 0.0));
        assert!(pair_features(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = MlpParams::zeros(3);
        assert_eq!(zero.forward(&[0.4, -2.0, 9.0]).unwrap(), 0.5);
        let mut p = MlpParams::zeros(3);
        p.bias = 20.0;
        assert!(p.forward(&[0.0; 3]).unwrap() > 0.999);
        let p = MlpParams {
            weights: vec![1.0, 0.0, 0.0],
            bias: 0.0,
        };
        assert!((p.forward(&[1.0, 0.0, 0.0]).unwrap() - 0.73106).abs() < 1e-5);
        assert!(p.forward(&[1.0]).is_err());
    }

    #[test]
    fn backward_examples() {
        let p = MlpParams::zeros(4);
        let g = p.backward(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap();
        assert_eq!(g, GradRecord::zeros(4));
        let g = p.backward(&[1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
        assert_eq!(g.d_bias, 0.25);
        assert_eq!(g.d_weights, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn saturates_inside_open_interval() {
        assert!(sigmoid(1e6) < 1.0);
        assert!(sigmoid(-1e6) > 0.0);
        assert!(!sigmoid(-800.0).is_nan());
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let mut models = BTreeMap::new();
        models.insert("coherence".to_string(), MlpParams::init_for_dim(dim, &mut rng));
        let ckpt = Checkpoint::new(dim, models, ControlConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path, dim).unwrap();
        assert_eq!(back, ckpt);

        let err = load_checkpoint(&path, 8).unwrap_err().to_string();
        assert!(err.contains("expected dim 8") && err.contains("found 4"), "{err}");

        let mut bad = ckpt.clone();
        bad.version = 99;
        save_checkpoint(&path, &bad).unwrap();
        assert!(load_checkpoint(&path, dim).unwrap_err().to_string().contains("version"));
    }

    proptest! {
        #[test]
        fn forward_stays_in_open_interval(
            w in proptest::collection::vec(-50.0f64..50.0, 5),
            f in proptest::collection::vec(-50.0f64..50.0, 5),
            b in -50.0f64..50.0,
        ) {
            let p = MlpParams { weights: w, bias: b };
            let s = p.forward(&f).unwrap();
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}
