//! Classification requests with decision deadlines, and appeals against them.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::access::Principal;
use crate::taxonomy::{classify, BdlTier, DatasetDescriptor, RuleId};
use crate::time::{Millis, Timestamp};

pub const DEFAULT_DECISION_WINDOW: Millis = Millis::from_days(14);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GovernanceError {
    #[error("unknown classification request {0:?}")]
    UnknownRequest(String),
    #[error("unknown appeal {0:?}")]
    UnknownAppeal(String),
    #[error("illegal transition from {from} to {to}")]
    IllegalTransition { from: &'static str, to: &'static str },
    #[error("overriding the proposed tier requires a reason")]
    OverrideWithoutReason,
    #[error("an overturned appeal requires new_tier")]
    MissingNewTier,
    #[error("appeal grounds must be nonempty")]
    MissingGrounds,
    #[error("{0} is not a steward")]
    NotAuthorized(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestStatus {
    Pending,
    Decided,
    Overdue,
}

impl RequestStatus {
    fn name(self) -> &'static str {
        match self {
            RequestStatus::Pending => "Pending",
            RequestStatus::Decided => "Decided",
            RequestStatus::Overdue => "Overdue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRequest {
    pub id: String,
    pub descriptor: DatasetDescriptor,
    pub submitted_by: String,
    pub submitted_at: Timestamp,
    pub due_at: Timestamp,
    pub status: RequestStatus,
    pub proposed_tier: BdlTier,
    pub proposed_rule: RuleId,
    #[serde(default)]
    pub decided_tier: Option<BdlTier>,
    #[serde(default)]
    pub decided_at: Option<Timestamp>,
    #[serde(default)]
    pub decided_by: Option<String>,
    #[serde(default)]
    pub override_reason: Option<String>,
    /// Decided after `due_at`.
    #[serde(default)]
    pub late: bool,
}

/// What a steward records when deciding a classification request.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassificationDecision {
    /// `None` confirms the proposed tier.
    #[serde(default)]
    pub tier: Option<BdlTier>,
    #[serde(default)]
    pub reason: Option<String>,
}

impl ClassificationRequest {
    pub fn submit(
        id: impl Into<String>,
        descriptor: DatasetDescriptor,
        submitted_by: impl Into<String>,
        submitted_at: Timestamp,
        window: Millis,
    ) -> Self {
        let proposal = classify(&descriptor);
        ClassificationRequest {
            id: id.into(),
            descriptor,
            submitted_by: submitted_by.into(),
            submitted_at,
            due_at: submitted_at + window,
            status: RequestStatus::Pending,
            proposed_tier: proposal.tier,
            proposed_rule: proposal.matched_rule,
            decided_tier: None,
            decided_at: None,
            decided_by: None,
            override_reason: None,
            late: false,
        }
    }

    /// Status as of `now`; a request is overdue once `now` is past `due_at`.
    pub fn status_at(&self, now: Timestamp) -> RequestStatus {
        match self.status {
            RequestStatus::Decided => RequestStatus::Decided,
            _ if now > self.due_at => RequestStatus::Overdue,
            _ => RequestStatus::Pending,
        }
    }

    /// Moves a pending request to Overdue when its deadline has passed.
    /// Returns true exactly when this call made the change.
    pub fn refresh(&mut self, now: Timestamp) -> bool {
        let next = self.status_at(now);
        let changed = next != self.status;
        self.status = next;
        changed
    }

    pub fn is_override(&self) -> bool {
        self.decided_tier.is_some_and(|t| t != self.proposed_tier)
    }

    pub fn decide(
        &mut self,
        steward: &Principal,
        decision: ClassificationDecision,
        now: Timestamp,
    ) -> Result<BdlTier, GovernanceError> {
        if !steward.steward {
            return Err(GovernanceError::NotAuthorized(steward.id.clone()));
        }
        if self.status == RequestStatus::Decided {
            return Err(GovernanceError::IllegalTransition {
                from: self.status.name(),
                to: RequestStatus::Decided.name(),
            });
        }
        let tier = decision.tier.unwrap_or(self.proposed_tier);
        let reason = decision.reason.filter(|r| !r.trim().is_empty());
        if tier != self.proposed_tier && reason.is_none() {
            return Err(GovernanceError::OverrideWithoutReason);
        }
        self.late = now > self.due_at;
        self.status = RequestStatus::Decided;
        self.decided_tier = Some(tier);
        self.decided_at = Some(now);
        self.decided_by = Some(steward.id.clone());
        self.override_reason = reason;
        Ok(tier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AppealStatus {
    Filed,
    UnderReview,
    Upheld,
    Overturned,
}

impl AppealStatus {
    fn name(self) -> &'static str {
        match self {
            AppealStatus::Filed => "Filed",
            AppealStatus::UnderReview => "UnderReview",
            AppealStatus::Upheld => "Upheld",
            AppealStatus::Overturned => "Overturned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AppealOutcome {
    Upheld,
    Overturned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appeal {
    pub id: String,
    pub classification_request: String,
    pub filed_by: String,
    pub filed_at: Timestamp,
    pub grounds: String,
    pub status: AppealStatus,
    #[serde(default)]
    pub new_tier: Option<BdlTier>,
    #[serde(default)]
    pub decided_by: Option<String>,
    #[serde(default)]
    pub decided_at: Option<Timestamp>,
    #[serde(default)]
    pub decision_note: String,
}

impl Appeal {
    /// Appeals lie only against decided requests.
    pub fn file(
        id: impl Into<String>,
        request: &ClassificationRequest,
        filed_by: impl Into<String>,
        grounds: impl Into<String>,
        at: Timestamp,
    ) -> Result<Self, GovernanceError> {
        if request.status != RequestStatus::Decided {
            return Err(GovernanceError::IllegalTransition {
                from: request.status.name(),
                to: "Appealed",
            });
        }
        let grounds = grounds.into();
        if grounds.trim().is_empty() {
            return Err(GovernanceError::MissingGrounds);
        }
        Ok(Appeal {
            id: id.into(),
            classification_request: request.id.clone(),
            filed_by: filed_by.into(),
            filed_at: at,
            grounds,
            status: AppealStatus::Filed,
            new_tier: None,
            decided_by: None,
            decided_at: None,
            decision_note: String::new(),
        })
    }

    pub fn start_review(&mut self, steward: &Principal) -> Result<(), GovernanceError> {
        if !steward.steward {
            return Err(GovernanceError::NotAuthorized(steward.id.clone()));
        }
        if self.status != AppealStatus::Filed {
            return Err(GovernanceError::IllegalTransition {
                from: self.status.name(),
                to: AppealStatus::UnderReview.name(),
            });
        }
        self.status = AppealStatus::UnderReview;
        Ok(())
    }

    pub fn decide(
        &mut self,
        steward: &Principal,
        outcome: AppealOutcome,
        new_tier: Option<BdlTier>,
        note: &str,
        at: Timestamp,
    ) -> Result<(), GovernanceError> {
        if !steward.steward {
            return Err(GovernanceError::NotAuthorized(steward.id.clone()));
        }
        let to = match outcome {
            AppealOutcome::Upheld => AppealStatus::Upheld,
            AppealOutcome::Overturned => AppealStatus::Overturned,
        };
        if self.status != AppealStatus::UnderReview {
            return Err(GovernanceError::IllegalTransition {
                from: self.status.name(),
                to: to.name(),
            });
        }
        if to == AppealStatus::Overturned && new_tier.is_none() {
            return Err(GovernanceError::MissingNewTier);
        }
        self.status = to;
        self.new_tier = if to == AppealStatus::Overturned { new_tier } else { None };
        self.decided_by = Some(steward.id.clone());
        self.decided_at = Some(at);
        self.decision_note = note.into();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::IdentityLevel;
    use crate::taxonomy::{DataModality, FamilyRiskClass};

    fn steward() -> Principal {
        let mut p = Principal::new("s", IdentityLevel::Accredited);
        p.steward = true;
        p
    }

    fn request() -> ClassificationRequest {
        let d = DatasetDescriptor::new(DataModality::SequenceRaw, FamilyRiskClass::HumanInfecting);
        ClassificationRequest::submit("c1", d, "pi", Timestamp(1000), DEFAULT_DECISION_WINDOW)
    }

    #[test]
    fn deadline_boundary() {
        let mut r = request();
        assert_eq!(r.due_at, Timestamp(1000 + 14 * 86_400_000));
        assert!(!r.refresh(r.due_at));
        assert_eq!(r.status, RequestStatus::Pending);
        assert!(r.refresh(r.due_at + Millis(1)));
        assert_eq!(r.status, RequestStatus::Overdue);
        let t = r.decide(&steward(), ClassificationDecision::default(), r.due_at + Millis(5)).unwrap();
        assert_eq!(t, r.proposed_tier);
        assert!(r.late);
        assert_eq!(r.status_at(Timestamp(i64::MAX)), RequestStatus::Decided);
    }

    #[test]
    fn override_needs_reason() {
        let mut r = request();
        let bump = ClassificationDecision {
            tier: Some(BdlTier::BDL4),
            reason: Some("  ".into()),
        };
        assert_eq!(r.decide(&steward(), bump, Timestamp(0)), Err(GovernanceError::OverrideWithoutReason));
        let bump = ClassificationDecision {
            tier: Some(BdlTier::BDL4),
            reason: Some("novel enhancement data".into()),
        };
        r.decide(&steward(), bump, Timestamp(0)).unwrap();
        assert!(r.is_override());
        assert!(matches!(
            r.decide(&steward(), ClassificationDecision::default(), Timestamp(0)),
            Err(GovernanceError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn appeal_state_machine() {
        let mut r = request();
        assert!(Appeal::file("a1", &r, "pi", "too strict", Timestamp(0)).is_err());
        r.decide(&steward(), ClassificationDecision::default(), Timestamp(0)).unwrap();
        let mut a = Appeal::file("a1", &r, "pi", "too strict", Timestamp(0)).unwrap();
        assert!(matches!(
            a.decide(&steward(), AppealOutcome::Upheld, None, "", Timestamp(1)),
            Err(GovernanceError::IllegalTransition { from: "Filed", .. })
        ));
        a.start_review(&steward()).unwrap();
        assert!(a.start_review(&steward()).is_err());
        assert_eq!(
            a.decide(&steward(), AppealOutcome::Overturned, None, "", Timestamp(1)),
            Err(GovernanceError::MissingNewTier)
        );
        a.decide(&steward(), AppealOutcome::Overturned, Some(BdlTier::BDL1), "", Timestamp(1)).unwrap();
        assert_eq!(a.new_tier, Some(BdlTier::BDL1));
        assert!(a.decide(&steward(), AppealOutcome::Upheld, None, "", Timestamp(2)).is_err());
    }
}
