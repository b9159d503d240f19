//! Token buckets per (principal, tier): one for records, one for bytes.
//!
//! Bucket levels are kept exactly as `tokens × refill_period_ms` in integer
//! units, so linear refill never rounds.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::taxonomy::BdlTier;
use crate::time::{Millis, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub capacity_records: u64,
    pub capacity_bytes: u64,
    pub refill_period: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimitPolicy {
    pub tiers: BTreeMap<BdlTier, BucketSpec>,
}

impl Default for RateLimitPolicy {
    fn default() -> Self {
        let day = Millis::from_days(1);
        let spec = |records, mib: u64| BucketSpec {
            capacity_records: records,
            capacity_bytes: mib << 20,
            refill_period: day,
        };
        RateLimitPolicy {
            tiers: [
                (BdlTier::BDL1, spec(10_000, 1024)),
                (BdlTier::BDL2, spec(1_000, 100)),
                (BdlTier::BDL3, spec(100, 10)),
                (BdlTier::BDL4, spec(10, 1)),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl RateLimitPolicy {
    pub fn validate(&self) -> Result<(), String> {
        for (tier, spec) in &self.tiers {
            if spec.refill_period.get() == 0 {
                return Err(alloc::format!("{tier}: refill_period must be positive"));
            }
        }
        let specs: alloc::vec::Vec<_> = self.tiers.values().collect();
        for w in specs.windows(2) {
            if w[1].capacity_records > w[0].capacity_records || w[1].capacity_bytes > w[0].capacity_bytes {
                return Err("rate capacities must not increase with tier".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateVerdict {
    pub allowed: bool,
    /// Zero when allowed; `u64::MAX` when the request exceeds bucket capacity.
    pub retry_after: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bucket {
    /// tokens × period_ms
    level: u128,
    last: Timestamp,
}

impl Bucket {
    fn full(capacity: u64, period: u64, now: Timestamp) -> Self {
        Bucket {
            level: u128::from(capacity) * u128::from(period),
            last: now,
        }
    }

    fn refill(&mut self, capacity: u64, period: u64, now: Timestamp) {
        if now > self.last {
            let elapsed = (now - self.last) as u128;
            let max = u128::from(capacity) * u128::from(period);
            self.level = (self.level + elapsed * u128::from(capacity)).min(max);
            self.last = now;
        }
    }

    /// Milliseconds until `amount` tokens are available.
    fn wait_for(&self, amount: u64, capacity: u64, period: u64) -> u64 {
        if amount > capacity {
            return u64::MAX;
        }
        let need = u128::from(amount) * u128::from(period);
        if self.level >= need {
            return 0;
        }
        let deficit = need - self.level;
        deficit.div_ceil(u128::from(capacity)) as u64
    }
}

#[derive(Debug, Clone, Default)]
pub struct RateLimiter {
    buckets: BTreeMap<(String, BdlTier), (Bucket, Bucket)>,
}

impl RateLimiter {
    pub fn new() -> Self {
        RateLimiter::default()
    }

    /// Checks both buckets and, when both hold enough, debits them together.
    /// Tiers absent from the policy are unlimited.
    pub fn check(
        &mut self,
        principal: &str,
        tier: BdlTier,
        records: u64,
        bytes: u64,
        now: Timestamp,
        policy: &RateLimitPolicy,
    ) -> RateVerdict {
        let Some(spec) = policy.tiers.get(&tier) else {
            return RateVerdict {
                allowed: true,
                retry_after: Millis(0),
            };
        };
        let period = spec.refill_period.get().max(1);
        let (rec, byt) = self
            .buckets
            .entry((principal.into(), tier))
            .or_insert_with(|| {
                (
                    Bucket::full(spec.capacity_records, period, now),
                    Bucket::full(spec.capacity_bytes, period, now),
                )
            });
        rec.refill(spec.capacity_records, period, now);
        byt.refill(spec.capacity_bytes, period, now);

        let wait = rec
            .wait_for(records, spec.capacity_records, period)
            .max(byt.wait_for(bytes, spec.capacity_bytes, period));
        if wait > 0 {
            return RateVerdict {
                allowed: false,
                retry_after: Millis(wait),
            };
        }
        rec.level -= u128::from(records) * u128::from(period);
        byt.level -= u128::from(bytes) * u128::from(period);
        RateVerdict {
            allowed: true,
            retry_after: Millis(0),
        }
    }

    /// Records tokens available right now, after refill (for inspection).
    pub fn available_records(&mut self, principal: &str, tier: BdlTier, now: Timestamp, policy: &RateLimitPolicy) -> Option<f64> {
        let spec = policy.tiers.get(&tier)?;
        let period = spec.refill_period.get().max(1);
        let (rec, _) = self.buckets.get_mut(&(principal.into(), tier))?;
        rec.refill(spec.capacity_records, period, now);
        Some(rec.level as f64 / period as f64)
    }
}
