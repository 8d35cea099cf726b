//! Control knobs and training hyperparameters shared by every stage.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the regression term enters the trajectory loss.
///
/// `Bonus` subtracts `lambda * mean((pi - r)^2)` from the loss, `Penalty`
/// adds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RegressionSign {
    #[default]
    Bonus,
    Penalty,
}

impl RegressionSign {
    /// Coefficient multiplying `lambda * mean((pi - r)^2)` in the loss.
    pub fn coefficient(self) -> f64 {
        match self {
            RegressionSign::Bonus => -1.0,
            RegressionSign::Penalty => 1.0,
        }
    }
}

/// Everything grid-searchable plus the optimisation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Weight of the coverage term in the selection logit.
    pub cl1: f64,
    /// Weight of the coherence term in the selection logit.
    pub cl2: f64,
    /// Sentence budget intercept.
    pub k: f64,
    /// Sentence budget slope on the pairwise-similarity variance.
    pub c: f64,
    /// Weight of the regression term in the trajectory loss.
    pub lambda: f64,
    /// Triplet-loss margin for coherence pre-training.
    pub margin: f64,
    pub lr_coherence: f64,
    pub lr_pretrain: f64,
    pub lr_rl: f64,
    pub seed: u64,
    pub max_tn: usize,
    pub coherence_epochs: usize,
    pub pretrain_epochs: usize,
    pub rl_epochs: usize,
    pub regression_sign: RegressionSign,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            cl1: 1.0,
            cl2: 1.0,
            k: 3.0,
            c: 10.0,
            lambda: 0.5,
            margin: 0.4,
            lr_coherence: 0.5,
            lr_pretrain: 1e-4,
            lr_rl: 1e-6,
            seed: 0,
            max_tn: 20,
            coherence_epochs: 200,
            pretrain_epochs: 5,
            rl_epochs: 5,
            regression_sign: RegressionSign::Bonus,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("cl1", self.cl1),
            ("cl2", self.cl2),
            ("k", self.k),
            ("c", self.c),
            ("lambda", self.lambda),
            ("margin", self.margin),
            ("lr_coherence", self.lr_coherence),
            ("lr_pretrain", self.lr_pretrain),
            ("lr_rl", self.lr_rl),
        ];
        for (name, value) in reals {
            if !value.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
            if value < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if self.margin <= 0.0 {
            return Err(Error::InvalidConfig("margin must be > 0".into()));
        }
        if self.max_tn == 0 {
            return Err(Error::InvalidConfig("max_tn must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ControlConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = ControlConfig {
            cl2: -1.0,
            ..ControlConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ControlConfig {
            margin: 0.0,
            ..ControlConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ControlConfig {
            max_tn: 0,
            ..ControlConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ControlConfig {
            k: f64::NAN,
            ..ControlConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ControlConfig = serde_json::from_str(r#"{"cl2": 4.0, "regression_sign": "penalty"}"#).unwrap();
        assert_eq!(cfg.cl2, 4.0);
        assert_eq!(cfg.regression_sign, RegressionSign::Penalty);
        assert_eq!(cfg.max_tn, 20);
    }
}
