//! Weighted risk score for a workflow before it runs.

use serde::{Deserialize, Serialize};

use crate::taxonomy::BdlTier;

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskWeights {
    pub similarity: f64,
    pub provenance: f64,
    pub trust: f64,
    pub tier: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        RiskWeights {
            similarity: 0.5,
            provenance: 0.2,
            trust: 0.2,
            tier: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    #[serde(default)]
    pub weights: RiskWeights,
    #[serde(default = "default_review")]
    pub review_threshold: f64,
    #[serde(default = "default_block")]
    pub block_threshold: f64,
}

fn default_review() -> f64 {
    0.5
}

fn default_block() -> f64 {
    0.8
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            weights: RiskWeights::default(),
            review_threshold: default_review(),
            block_threshold: default_block(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("risk configuration invalid: {0}")]
    ConfigInvalid(&'static str),
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        let w = self.weights;
        let all = [w.similarity, w.provenance, w.trust, w.tier];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(RiskError::ConfigInvalid("weights must be finite and nonnegative"));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(RiskError::ConfigInvalid("weights must sum to 1"));
        }
        if !(0.0..=1.0).contains(&self.review_threshold)
            || !(0.0..=1.0).contains(&self.block_threshold)
            || self.review_threshold > self.block_threshold
        {
            return Err(RiskError::ConfigInvalid("thresholds must satisfy 0 <= review <= block <= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskAction {
    Pass,
    Review,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub similarity: f64,
    pub provenance_deficit: f64,
    pub trust_deficit: f64,
    pub tier_weight: f64,
    pub total: f64,
    pub action: RiskAction,
}

fn unit(x: f64) -> f64 {
    // NaN scores as maximal risk
    if x.is_nan() {
        1.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

pub fn risk_score(
    similarity: f64,
    provenance_deficit: f64,
    trust: f64,
    tier: BdlTier,
    config: &RiskConfig,
) -> Result<RiskScore, RiskError> {
    config.validate()?;
    let similarity = unit(similarity);
    let provenance_deficit = unit(provenance_deficit);
    let trust_deficit = 1.0 - if trust.is_nan() { 0.0 } else { trust.clamp(0.0, 1.0) };
    let tier_weight = f64::from(tier.level()) / 4.0;
    let w = config.weights;
    let total = (w.similarity * similarity
        + w.provenance * provenance_deficit
        + w.trust * trust_deficit
        + w.tier * tier_weight)
        .clamp(0.0, 1.0);
    let action = if total >= config.block_threshold {
        RiskAction::Block
    } else if total >= config.review_threshold {
        RiskAction::Review
    } else {
        RiskAction::Pass
    };
    Ok(RiskScore {
        similarity,
        provenance_deficit,
        trust_deficit,
        tier_weight,
        total,
        action,
    })
}
