//! Principals and per-tier access decisions.

pub mod anomaly;
pub mod ratelimit;
pub mod risk;

use alloc::collections::BTreeSet;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{BdlTier, EnforcementProfile, MonitoringControl};
use crate::time::{Millis, Timestamp};

pub use anomaly::{observe_and_flag, AccessObservation, AnomalyBaseline, AnomalyConfig, AnomalyFlag, AnomalyKind};
pub use ratelimit::{BucketSpec, RateLimitPolicy, RateLimiter, RateVerdict};
pub use risk::{risk_score, RiskAction, RiskConfig, RiskError, RiskScore, RiskWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IdentityLevel {
    Anonymous = 0,
    Registered = 1,
    Accredited = 2,
    PreScreened = 3,
}

impl IdentityLevel {
    pub const ALL: [IdentityLevel; 4] = [
        IdentityLevel::Anonymous,
        IdentityLevel::Registered,
        IdentityLevel::Accredited,
        IdentityLevel::PreScreened,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub identity_level: IdentityLevel,
    #[serde(default)]
    pub second_factor_enrolled: bool,
    #[serde(default)]
    pub trust_score: f64,
    #[serde(default)]
    pub approved_projects: BTreeSet<String>,
    #[serde(default)]
    pub home_institution: String,
    #[serde(default)]
    pub usual_countries: BTreeSet<String>,
    /// May decide review items, classifications and appeals.
    #[serde(default)]
    pub steward: bool,
}

impl Principal {
    pub fn new(id: impl Into<String>, identity_level: IdentityLevel) -> Self {
        Principal {
            id: id.into(),
            identity_level,
            second_factor_enrolled: false,
            trust_score: 0.5,
            approved_projects: BTreeSet::new(),
            home_institution: String::new(),
            usual_countries: BTreeSet::new(),
            steward: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.trust_score) {
            return Err(alloc::format!(
                "principal {}: trust_score {} outside [0, 1]",
                self.id, self.trust_score
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessAction {
    ReadMetadata,
    ReadRecords,
    ExportRecords,
    SubmitJob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub principal_id: String,
    pub dataset_id: String,
    pub action: AccessAction,
    #[serde(default)]
    pub project_id: Option<String>,
    #[serde(default)]
    pub intent_statement: Option<String>,
    #[serde(default)]
    pub second_factor_presented: bool,
    #[serde(default)]
    pub origin_country: String,
    #[serde(default)]
    pub requested_records: u64,
    #[serde(default)]
    pub requested_bytes: u64,
    pub at: Timestamp,
}

impl AccessRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.action == AccessAction::ExportRecords && self.requested_records == 0 {
            return Err("ExportRecords requires requested_records >= 1".into());
        }
        Ok(())
    }

    fn has_intent(&self) -> bool {
        self.intent_statement.as_deref().is_some_and(|s| !s.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Allow,
    Deny,
    Escalate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionReason {
    TierOpen,
    Ok,
    IdentityTooLow,
    SecondFactorRequired,
    IntentRequired,
    ProjectApprovalRequired,
    PreScreenRequired,
    ExportForbiddenTreOnly,
    RateLimited,
    RiskBlocked,
    RiskReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Obligation {
    WatermarkExport,
    LogIntent,
    RecordProvenance,
    SeedHoneytokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub outcome: Outcome,
    pub reason: DecisionReason,
    pub obligations: BTreeSet<Obligation>,
    #[serde(default)]
    pub risk: Option<RiskScore>,
    /// Set when rate limited.
    #[serde(default)]
    pub retry_after: Option<Millis>,
}

impl AccessDecision {
    fn new(outcome: Outcome, reason: DecisionReason) -> Self {
        AccessDecision {
            outcome,
            reason,
            obligations: BTreeSet::new(),
            risk: None,
            retry_after: None,
        }
    }

    fn deny(reason: DecisionReason) -> Self {
        AccessDecision::new(Outcome::Deny, reason)
    }

    pub fn is_allowed(&self) -> bool {
        self.outcome == Outcome::Allow
    }
}

/// Similarity and provenance inputs to the risk score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskInputs {
    pub similarity: f64,
    pub provenance_deficit: f64,
}

/// Limits and risk configuration consulted by [`decide`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccessPolicy {
    #[serde(default)]
    pub rate: RateLimitPolicy,
    #[serde(default)]
    pub risk: RiskConfig,
}

/// Obligations that accompany an allowed request.
pub fn obligations_for(profile: &EnforcementProfile, action: AccessAction) -> BTreeSet<Obligation> {
    let mut out = BTreeSet::new();
    if profile.watermark_on_export && action == AccessAction::ExportRecords {
        out.insert(Obligation::WatermarkExport);
    }
    if profile.monitors(MonitoringControl::IntentLogging) {
        out.insert(Obligation::LogIntent);
    }
    if profile.monitors(MonitoringControl::ProvenanceRecording) {
        out.insert(Obligation::RecordProvenance);
    }
    if profile.tre_only {
        out.insert(Obligation::SeedHoneytokens);
    }
    out
}

/// Decides a request. Checks run in a fixed order and the first failure
/// wins; the rate limiter is debited only when its check passes.
pub fn decide(
    request: &AccessRequest,
    principal: &Principal,
    tier: BdlTier,
    profile: &EnforcementProfile,
    limiter: &mut RateLimiter,
    policy: &AccessPolicy,
    risk_inputs: RiskInputs,
) -> AccessDecision {
    use DecisionReason::*;

    if tier == BdlTier::BDL0 {
        return AccessDecision::new(Outcome::Allow, TierOpen);
    }
    if principal.identity_level < profile.min_identity {
        return AccessDecision::deny(IdentityTooLow);
    }
    if profile.second_factor_required && !request.second_factor_presented {
        return AccessDecision::deny(SecondFactorRequired);
    }
    if profile.monitors(MonitoringControl::IntentLogging)
        && request.action != AccessAction::ReadMetadata
        && !request.has_intent()
    {
        return AccessDecision::deny(IntentRequired);
    }
    if profile.use_approval_required
        && !request
            .project_id
            .as_ref()
            .is_some_and(|p| principal.approved_projects.contains(p))
    {
        return AccessDecision::deny(ProjectApprovalRequired);
    }
    if profile.pre_screen_required && principal.identity_level < IdentityLevel::PreScreened {
        return AccessDecision::deny(PreScreenRequired);
    }
    if profile.tre_only && request.action == AccessAction::ExportRecords {
        return AccessDecision::deny(ExportForbiddenTreOnly);
    }
    if profile.monitors(MonitoringControl::RateLimit) {
        let verdict = limiter.check(
            &principal.id,
            tier,
            request.requested_records,
            request.requested_bytes,
            request.at,
            &policy.rate,
        );
        if !verdict.allowed {
            let mut d = AccessDecision::deny(RateLimited);
            d.retry_after = Some(verdict.retry_after);
            return d;
        }
    }
    let mut score = None;
    if profile.monitors(MonitoringControl::RiskScoring) {
        // Config is validated at load; an invalid one blocks.
        let s = risk_score(
            risk_inputs.similarity,
            risk_inputs.provenance_deficit,
            principal.trust_score,
            tier,
            &policy.risk,
        );
        match s {
            Result::Ok(s) => {
                let action = s.action;
                score = Some(s);
                match action {
                    RiskAction::Block => {
                        let mut d = AccessDecision::deny(RiskBlocked);
                        d.risk = score;
                        return d;
                    }
                    RiskAction::Review => {
                        let mut d = AccessDecision::new(Outcome::Escalate, RiskReview);
                        d.risk = score;
                        return d;
                    }
                    RiskAction::Pass => {}
                }
            }
            Err(_) => return AccessDecision::deny(RiskBlocked),
        }
    }
    let mut d = AccessDecision::new(Outcome::Allow, Ok);
    d.obligations = obligations_for(profile, request.action);
    d.risk = score;
    d
}
