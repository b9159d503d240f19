//! Per-subject behavioral baselines and surge / geography flags.
//!
//! A baseline keeps up to `window_days` completed days of usage (days with
//! no activity count as zeros). Each observation is scored against the
//! window before it is folded in. Flags are advisory.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub window_days: usize,
    pub z_threshold: f64,
    pub cold_start_days: usize,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            window_days: 30,
            z_threshold: 3.0,
            cold_start_days: 7,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window_days == 0 || self.window_days > 30 {
            return Err("window_days must be in 1..=30".into());
        }
        if self.cold_start_days > self.window_days {
            return Err("cold_start_days must not exceed window_days".into());
        }
        if !self.z_threshold.is_finite() || self.z_threshold <= 0.0 {
            return Err("z_threshold must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyUsage {
    pub day: i64,
    pub request_count: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyBaseline {
    /// Principal id, or `institution:<name>` for cross-tenant baselines.
    pub subject: String,
    history: VecDeque<DailyUsage>,
    today: Option<DailyUsage>,
    seen_countries: BTreeSet<String>,
    flagged_today: BTreeSet<AnomalyKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    VolumeSurge,
    RateSurge,
    NewGeography,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub subject: String,
    pub principal: String,
    pub kind: AnomalyKind,
    pub z_value: Option<f64>,
    pub at: Timestamp,
}

/// One access event as seen by the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessObservation {
    pub principal: String,
    pub at: Timestamp,
    pub bytes: u64,
    pub origin_country: String,
}

impl AnomalyBaseline {
    pub fn new(subject: impl Into<String>) -> Self {
        AnomalyBaseline {
            subject: subject.into(),
            history: VecDeque::new(),
            today: None,
            seen_countries: BTreeSet::new(),
            flagged_today: BTreeSet::new(),
        }
    }

    /// Completed days currently in the window.
    pub fn window_len(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> impl Iterator<Item = &DailyUsage> {
        self.history.iter()
    }

    fn roll_to(&mut self, day: i64, window: usize) {
        let Some(current) = self.today else {
            self.today = Some(DailyUsage {
                day,
                request_count: 0,
                bytes: 0,
            });
            return;
        };
        if day <= current.day {
            return;
        }
        self.history.push_back(current);
        // Idle days between the last active day and `day` are zero usage;
        // more than a window's worth collapses to a window of zeros.
        let gap = (day - current.day - 1).min(window as i64);
        for d in (day - gap)..day {
            self.history.push_back(DailyUsage {
                day: d,
                request_count: 0,
                bytes: 0,
            });
        }
        while self.history.len() > window {
            self.history.pop_front();
        }
        self.today = Some(DailyUsage {
            day,
            request_count: 0,
            bytes: 0,
        });
        self.flagged_today.clear();
    }
}

/// z-score of `value` against `samples` (population standard deviation).
/// With zero spread: 0 when equal to the mean, ±∞ otherwise.
pub fn z_score(value: f64, samples: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = samples.clone().count() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = samples.clone().sum::<f64>() / n;
    let var = samples.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    let diff = value - mean;
    if sd == 0.0 {
        if diff == 0.0 {
            0.0
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        diff / sd
    }
}

/// Scores an observation against the baseline, then folds it in.
pub fn observe_and_flag(
    baseline: &mut AnomalyBaseline,
    event: &AccessObservation,
    usual_countries: &BTreeSet<String>,
    config: &AnomalyConfig,
) -> Vec<AnomalyFlag> {
    let mut flags = Vec::new();
    baseline.roll_to(event.at.day(), config.window_days);
    let mut today = baseline.today.expect("rolled");
    today.request_count += 1;
    today.bytes = today.bytes.saturating_add(event.bytes);

    if baseline.history.len() >= config.cold_start_days {
        let bytes = baseline.history.iter().map(|d| d.bytes as f64);
        let counts = baseline.history.iter().map(|d| d.request_count as f64);
        for (kind, z) in [
            (AnomalyKind::VolumeSurge, z_score(today.bytes as f64, bytes)),
            (AnomalyKind::RateSurge, z_score(today.request_count as f64, counts)),
        ] {
            if z > config.z_threshold && baseline.flagged_today.insert(kind) {
                flags.push(AnomalyFlag {
                    subject: baseline.subject.clone(),
                    principal: event.principal.clone(),
                    kind,
                    z_value: Some(z),
                    at: event.at,
                });
            }
        }
    }

    let country = &event.origin_country;
    if !country.is_empty() && !usual_countries.contains(country) && !baseline.seen_countries.contains(country) {
        flags.push(AnomalyFlag {
            subject: baseline.subject.clone(),
            principal: event.principal.clone(),
            kind: AnomalyKind::NewGeography,
            z_value: None,
            at: event.at,
        });
    }
    if !country.is_empty() {
        baseline.seen_countries.insert(country.clone());
    }
    baseline.today = Some(today);
    flags
}
