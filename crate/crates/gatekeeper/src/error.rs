use gatekeeper_core::access::AccessDecision;
use gatekeeper_core::egress::{EgressVerdict, ReviewError};
use gatekeeper_core::governance::GovernanceError;
use gatekeeper_core::seqio::SeqError;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("missing or unknown bearer token")]
    Unauthenticated,
    #[error("{0} is not permitted to do this")]
    NotAuthorized(String),
    #[error("access denied: {:?}", .0.reason)]
    Denied(Box<AccessDecision>),
    #[error("egress {id} blocked: {:?}", verdict.reason)]
    EgressBlocked { id: String, verdict: Box<EgressVerdict> },
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("unknown review item {0:?}")]
    UnknownReviewItem(String),
    #[error("dataset {0:?} already exists")]
    DuplicateDataset(String),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Governance(#[from] GovernanceError),
    #[error("FASTA payload rejected: {0}")]
    MalformedFasta(SeqError),
    #[error("datasets at BDL-2 and above require provenance")]
    MissingProvenance,
    #[error("{0}")]
    Invalid(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("audit log fails verification at entry {0}")]
    AuditChainBroken(u64),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        use GatewayError::*;
        match self {
            Unauthenticated => "Unauthenticated",
            NotAuthorized(_) => "NotAuthorized",
            Denied(d) => reason_name(&d.reason),
            EgressBlocked { verdict, .. } => reason_name(&verdict.reason),
            UnknownDataset(_) => "UnknownDataset",
            UnknownReviewItem(_) => "UnknownReviewItem",
            DuplicateDataset(_) => "DuplicateDataset",
            Review(ReviewError::AlreadyDecided) => "AlreadyDecided",
            Review(ReviewError::VersionConflict { .. }) => "VersionConflict",
            Review(ReviewError::NotAuthorized(_)) => "NotAuthorized",
            Governance(g) => match g {
                GovernanceError::UnknownRequest(_) => "UnknownRequest",
                GovernanceError::UnknownAppeal(_) => "UnknownAppeal",
                GovernanceError::IllegalTransition { .. } => "IllegalTransition",
                GovernanceError::OverrideWithoutReason => "OverrideWithoutReason",
                GovernanceError::MissingNewTier => "MissingNewTier",
                GovernanceError::MissingGrounds => "MissingGrounds",
                GovernanceError::NotAuthorized(_) => "NotAuthorized",
            },
            MalformedFasta(_) => "MalformedFasta",
            MissingProvenance => "MissingProvenance",
            Invalid(_) => "ValidationFailed",
            Storage(_) => "StorageFailure",
            Config(_) => "ConfigInvalid",
            AuditChainBroken(_) => "AuditChainBroken",
        }
    }

    pub fn status(&self) -> u16 {
        use GatewayError::*;
        match self {
            Unauthenticated => 401,
            NotAuthorized(_) | Denied(_) | EgressBlocked { .. } => 403,
            Review(ReviewError::NotAuthorized(_)) | Governance(GovernanceError::NotAuthorized(_)) => 403,
            UnknownDataset(_) | UnknownReviewItem(_) => 404,
            Governance(GovernanceError::UnknownRequest(_) | GovernanceError::UnknownAppeal(_)) => 404,
            DuplicateDataset(_) | Review(_) => 409,
            Governance(GovernanceError::IllegalTransition { .. }) => 409,
            Governance(_) | MalformedFasta(_) | MissingProvenance | Invalid(_) => 422,
            Storage(_) | Config(_) | AuditChainBroken(_) => 500,
        }
    }
}

fn reason_name<T: serde::Serialize>(reason: &T) -> &'static str {
    // Enum unit variants serialize to their names; map them onto static strings.
    match serde_json::to_value(reason).ok().as_ref().and_then(|v| v.as_str()) {
        Some(s) => REASON_NAMES.iter().find(|n| **n == s).copied().unwrap_or("Denied"),
        None => "Denied",
    }
}

const REASON_NAMES: &[&str] = &[
    "TierOpen",
    "Ok",
    "IdentityTooLow",
    "SecondFactorRequired",
    "IntentRequired",
    "ProjectApprovalRequired",
    "PreScreenRequired",
    "ExportForbiddenTreOnly",
    "RateLimited",
    "RiskBlocked",
    "RiskReview",
    "Aggregate",
    "Clean",
    "ControlledMatch",
    "HoneytokenHit",
    "WeightsExportBarred",
    "MandatoryReview",
    "ReviewerDecision",
    "ScreeningUnavailable",
];
