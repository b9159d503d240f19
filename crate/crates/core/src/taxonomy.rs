//! Biosecurity Data Level tiers, dataset descriptors, the classification
//! rule table, and the per-tier enforcement profiles.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::access::IdentityLevel;

/// One of the five data levels, BDL-0 through BDL-4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BdlTier(u8);

impl BdlTier {
    pub const BDL0: BdlTier = BdlTier(0);
    pub const BDL1: BdlTier = BdlTier(1);
    pub const BDL2: BdlTier = BdlTier(2);
    pub const BDL3: BdlTier = BdlTier(3);
    pub const BDL4: BdlTier = BdlTier(4);
    pub const ALL: [BdlTier; 5] = [
        BdlTier::BDL0,
        BdlTier::BDL1,
        BdlTier::BDL2,
        BdlTier::BDL3,
        BdlTier::BDL4,
    ];

    pub fn new(level: u8) -> Option<BdlTier> {
        (level <= 4).then_some(BdlTier(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for BdlTier {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        BdlTier::new(v).ok_or_else(|| alloc::format!("BDL level {v} is not in 0..=4"))
    }
}

impl From<BdlTier> for u8 {
    fn from(t: BdlTier) -> u8 {
        t.0
    }
}

impl fmt::Display for BdlTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BDL-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DataModality {
    SequenceRaw,
    SequenceAnnotated,
    ProteinStructure,
    FunctionalAssay,
    ProteinInteraction,
    DiagnosticComparison,
    EnvironmentalStabilityAssay,
    PhenotypicAnimalModel,
    TransmissionRate,
    Other,
}

impl DataModality {
    pub const ALL: [DataModality; 10] = [
        DataModality::SequenceRaw,
        DataModality::SequenceAnnotated,
        DataModality::ProteinStructure,
        DataModality::FunctionalAssay,
        DataModality::ProteinInteraction,
        DataModality::DiagnosticComparison,
        DataModality::EnvironmentalStabilityAssay,
        DataModality::PhenotypicAnimalModel,
        DataModality::TransmissionRate,
        DataModality::Other,
    ];

    /// Data that carries functional information about a virus beyond its
    /// raw composition.
    pub fn is_functional(self) -> bool {
        matches!(
            self,
            DataModality::SequenceAnnotated
                | DataModality::FunctionalAssay
                | DataModality::ProteinInteraction
                | DataModality::DiagnosticComparison
                | DataModality::EnvironmentalStabilityAssay
                | DataModality::PhenotypicAnimalModel
                | DataModality::TransmissionRate
        )
    }

    /// Modalities describing genome or protein composition.
    pub fn is_compositional(self) -> bool {
        matches!(
            self,
            DataModality::SequenceRaw | DataModality::ProteinStructure | DataModality::SequenceAnnotated
        )
    }
}

/// Risk class of the viral family a dataset concerns. Ordered: a higher
/// class carries every lower class's membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FamilyRiskClass {
    NonConcern = 0,
    EukaryoteInfecting = 1,
    AnimalPandemicCapable = 2,
    HumanInfecting = 3,
    HumanPandemicPotential = 4,
}

impl FamilyRiskClass {
    pub const ALL: [FamilyRiskClass; 5] = [
        FamilyRiskClass::NonConcern,
        FamilyRiskClass::EukaryoteInfecting,
        FamilyRiskClass::AnimalPandemicCapable,
        FamilyRiskClass::HumanInfecting,
        FamilyRiskClass::HumanPandemicPotential,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PropertyOfConcern {
    ZoonoticCrossover,
    EnvironmentalStability,
    HostRange,
    HostSusceptibility,
    DetectionEvasion,
    Transmissibility,
    Virulence,
    ImmuneEvasion,
    CountermeasureResistance,
}

impl PropertyOfConcern {
    pub const ALL: [PropertyOfConcern; 9] = [
        PropertyOfConcern::ZoonoticCrossover,
        PropertyOfConcern::EnvironmentalStability,
        PropertyOfConcern::HostRange,
        PropertyOfConcern::HostSusceptibility,
        PropertyOfConcern::DetectionEvasion,
        PropertyOfConcern::Transmissibility,
        PropertyOfConcern::Virulence,
        PropertyOfConcern::ImmuneEvasion,
        PropertyOfConcern::CountermeasureResistance,
    ];

    /// Animal-pandemic properties (tier 2).
    pub fn is_tier2(self) -> bool {
        matches!(
            self,
            PropertyOfConcern::ZoonoticCrossover
                | PropertyOfConcern::EnvironmentalStability
                | PropertyOfConcern::HostRange
                | PropertyOfConcern::HostSusceptibility
                | PropertyOfConcern::DetectionEvasion
        )
    }

    /// Human-pathogen properties (tiers 3 and 4).
    pub fn is_tier3(self) -> bool {
        !self.is_tier2()
    }

    /// The subset that qualifies for tier 4 when enhancement is demonstrated.
    pub fn is_enhanceable(self) -> bool {
        matches!(
            self,
            PropertyOfConcern::Transmissibility
                | PropertyOfConcern::Virulence
                | PropertyOfConcern::ImmuneEvasion
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub modality: DataModality,
    pub family_class: FamilyRiskClass,
    #[serde(default)]
    pub properties: BTreeSet<PropertyOfConcern>,
    #[serde(default)]
    pub enhancement_demonstrated: bool,
    #[serde(default)]
    pub outbreak_exception: bool,
    #[serde(default)]
    pub family_name: String,
    #[serde(default)]
    pub record_count: u64,
    #[serde(default)]
    pub total_bases: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("enhancement_demonstrated requires at least one property of concern")]
    EnhancementWithoutProperty,
    #[error("record_count is zero but total_bases is {0}")]
    BasesWithoutRecords(u64),
}

impl DatasetDescriptor {
    pub fn new(modality: DataModality, family_class: FamilyRiskClass) -> Self {
        DatasetDescriptor {
            modality,
            family_class,
            properties: BTreeSet::new(),
            enhancement_demonstrated: false,
            outbreak_exception: false,
            family_name: String::new(),
            record_count: 0,
            total_bases: 0,
        }
    }

    pub fn with_properties(mut self, props: impl IntoIterator<Item = PropertyOfConcern>) -> Self {
        self.properties.extend(props);
        self
    }

    pub fn enhanced(mut self) -> Self {
        self.enhancement_demonstrated = true;
        self
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.enhancement_demonstrated && self.properties.is_empty() {
            return Err(DescriptorError::EnhancementWithoutProperty);
        }
        if self.record_count == 0 && self.total_bases != 0 {
            return Err(DescriptorError::BasesWithoutRecords(self.total_bases));
        }
        Ok(())
    }
}

/// Identifies which rule of the classification table matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R0OutbreakOverride,
    R4EnhancedHumanPandemic,
    R3HumanPathogenFunction,
    R2AnimalPandemicFunction,
    R1EukaryoteComposition,
    Default,
}

pub const WARN_OUTBREAK_OVERRIDE: &str = "outbreak-override";
pub const WARN_UNSCORED_FUNCTIONAL: &str = "unscored-functional-data";
pub const WARN_UNREGISTERED_FAMILY: &str = "unregistered-family";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub tier: BdlTier,
    pub matched_rule: RuleId,
    pub warnings: Vec<String>,
}

/// Classifies a descriptor. Rules are tried in order R0, R4, R3, R2, R1 and
/// the first match wins; nothing matching yields BDL-0.
pub fn classify(d: &DatasetDescriptor) -> ClassificationResult {
    use FamilyRiskClass::*;

    let mut warnings = Vec::new();
    let functional = d.modality.is_functional();
    let has = |pred: fn(PropertyOfConcern) -> bool| d.properties.iter().any(|&p| pred(p));

    let (tier, rule) = if d.outbreak_exception {
        warnings.push(WARN_OUTBREAK_OVERRIDE.to_string());
        (BdlTier::BDL0, RuleId::R0OutbreakOverride)
    } else if d.family_class == HumanPandemicPotential
        && functional
        && has(PropertyOfConcern::is_enhanceable)
        && d.enhancement_demonstrated
    {
        (BdlTier::BDL4, RuleId::R4EnhancedHumanPandemic)
    } else if d.family_class >= HumanInfecting
        && ((functional && has(PropertyOfConcern::is_tier3))
            || d.modality == DataModality::SequenceAnnotated)
    {
        (BdlTier::BDL3, RuleId::R3HumanPathogenFunction)
    } else if d.family_class >= AnimalPandemicCapable
        && (d.modality == DataModality::SequenceAnnotated
            || (functional && has(PropertyOfConcern::is_tier2)))
    {
        (BdlTier::BDL2, RuleId::R2AnimalPandemicFunction)
    } else if d.family_class >= EukaryoteInfecting && d.modality.is_compositional() {
        (BdlTier::BDL1, RuleId::R1EukaryoteComposition)
    } else {
        (BdlTier::BDL0, RuleId::Default)
    };

    if !d.outbreak_exception
        && functional
        && d.modality != DataModality::SequenceAnnotated
        && d.properties.is_empty()
        && d.family_class >= AnimalPandemicCapable
    {
        warnings.push(WARN_UNSCORED_FUNCTIONAL.to_string());
    }

    ClassificationResult {
        tier,
        matched_rule: rule,
        warnings,
    }
}

/// Monitoring controls attached to a tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MonitoringControl {
    AuditLog,
    AnomalyDetection,
    RateLimit,
    RiskScoring,
    IntentLogging,
    Honeytokens,
    ProvenanceRecording,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnforcementProfile {
    pub tier: BdlTier,
    pub min_identity: IdentityLevel,
    pub second_factor_required: bool,
    pub use_approval_required: bool,
    pub pre_screen_required: bool,
    pub raw_export_allowed: bool,
    pub watermark_on_export: bool,
    pub tre_only: bool,
    pub mandatory_human_egress_review: bool,
    /// Anomaly baselines are also kept per institution, not only per principal.
    pub cross_tenant_anomaly: bool,
    /// Risk is rescored on every request rather than on first access.
    pub realtime_risk_scoring: bool,
    pub monitoring: BTreeSet<MonitoringControl>,
}

impl EnforcementProfile {
    pub fn monitors(&self, control: MonitoringControl) -> bool {
        self.monitoring.contains(&control)
    }
}

/// The control set for a tier. Each tier adds to the one below it.
pub fn enforcement_profile(tier: BdlTier) -> EnforcementProfile {
    use MonitoringControl::*;

    let mut p = EnforcementProfile {
        tier,
        min_identity: IdentityLevel::Anonymous,
        second_factor_required: false,
        use_approval_required: false,
        pre_screen_required: false,
        raw_export_allowed: true,
        watermark_on_export: false,
        tre_only: false,
        mandatory_human_egress_review: false,
        cross_tenant_anomaly: false,
        realtime_risk_scoring: false,
        monitoring: BTreeSet::new(),
    };
    let level = tier.level();
    if level >= 1 {
        p.min_identity = IdentityLevel::Registered;
        p.monitoring
            .extend([AuditLog, AnomalyDetection, RateLimit, RiskScoring, IntentLogging]);
    }
    if level >= 2 {
        p.min_identity = IdentityLevel::Accredited;
        p.second_factor_required = true;
        p.watermark_on_export = true;
        p.cross_tenant_anomaly = true;
    }
    if level >= 3 {
        p.use_approval_required = true;
        p.tre_only = true;
        p.raw_export_allowed = false;
        p.realtime_risk_scoring = true;
        p.monitoring.insert(Honeytokens);
    }
    if level >= 4 {
        p.pre_screen_required = true;
        p.mandatory_human_egress_review = true;
        p.monitoring.insert(ProvenanceRecording);
    }
    p
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("registry document is malformed: {0}")]
    Parse(String),
    #[error("family {0:?} is listed more than once")]
    DuplicateFamily(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryDocument {
    #[serde(default = "default_version")]
    pub version: u64,
    #[serde(default)]
    pub families: Vec<RegistryFamily>,
}

fn default_version() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryFamily {
    pub name: String,
    pub class: FamilyRiskClass,
    #[serde(default)]
    pub outbreak: bool,
}

/// Operator-curated mapping from viral family to risk class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FamilyRegistry {
    entries: BTreeMap<String, FamilyRiskClass>,
    version: u64,
    active_outbreak_families: BTreeSet<String>,
}

/// Result of looking a family up in the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamilyLookup {
    pub class: FamilyRiskClass,
    pub outbreak: bool,
    pub registered: bool,
}

impl FamilyRegistry {
    pub fn from_document(doc: RegistryDocument) -> Result<Self, RegistryError> {
        let mut reg = FamilyRegistry {
            entries: BTreeMap::new(),
            version: doc.version,
            active_outbreak_families: BTreeSet::new(),
        };
        for fam in doc.families {
            if reg.entries.contains_key(&fam.name) {
                return Err(RegistryError::DuplicateFamily(fam.name));
            }
            if fam.outbreak {
                reg.active_outbreak_families.insert(fam.name.clone());
            }
            reg.entries.insert(fam.name, fam.class);
        }
        Ok(reg)
    }

    pub fn to_document(&self) -> RegistryDocument {
        RegistryDocument {
            version: self.version,
            families: self
                .entries
                .iter()
                .map(|(name, &class)| RegistryFamily {
                    name: name.clone(),
                    class,
                    outbreak: self.active_outbreak_families.contains(name),
                })
                .collect(),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unregistered families resolve to `NonConcern` with `registered = false`.
    pub fn lookup(&self, family: &str) -> FamilyLookup {
        match self.entries.get(family) {
            Some(&class) => FamilyLookup {
                class,
                outbreak: self.active_outbreak_families.contains(family),
                registered: true,
            },
            None => FamilyLookup {
                class: FamilyRiskClass::NonConcern,
                outbreak: false,
                registered: false,
            },
        }
    }

    /// Overwrites the descriptor's family class and outbreak flag from the
    /// registry and returns any advisory warnings.
    pub fn resolve(&self, descriptor: &mut DatasetDescriptor) -> Vec<String> {
        let found = self.lookup(&descriptor.family_name);
        descriptor.family_class = found.class;
        descriptor.outbreak_exception = descriptor.outbreak_exception || found.outbreak;
        if found.registered {
            Vec::new()
        } else {
            alloc::vec![WARN_UNREGISTERED_FAMILY.to_string()]
        }
    }
}

/// Parses a registry JSON document. Empty input is an empty registry at version 1.
pub fn load_family_registry(source: &str) -> Result<FamilyRegistry, RegistryError> {
    if source.trim().is_empty() {
        return FamilyRegistry::from_document(RegistryDocument {
            version: 1,
            families: Vec::new(),
        });
    }
    let doc: RegistryDocument =
        serde_json::from_str(source).map_err(|e| RegistryError::Parse(e.to_string()))?;
    FamilyRegistry::from_document(doc)
}
