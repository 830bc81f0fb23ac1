use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::math::{exp, ln};
use crate::codec::{Canonical, CodecError, Fixed, Value};
use crate::trust::ContributionScoreTable;
use crate::IdentityId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompensationParams {
    /// Score at which tier 1 starts.
    pub min_score: Fixed,
    /// Score at which the top tier starts.
    pub max_score: Fixed,
    pub tiers: u32,
    /// Base pay of tier 1 and of the top tier; tiers in between are evenly
    /// spaced.
    pub base_min: Fixed,
    pub base_max: Fixed,
    pub band_lo: Fixed,
    pub band_hi: Fixed,
    /// Reviewer credibility per identity; absent means 1.
    #[serde(default)]
    pub credibility: BTreeMap<IdentityId, Fixed>,
}

impl Default for CompensationParams {
    fn default() -> Self {
        let fx = |s: &str| s.parse::<Fixed>().expect("constant");
        CompensationParams {
            min_score: fx("0.1"),
            max_score: fx("10"),
            tiers: 6,
            base_min: fx("200"),
            base_max: fx("1200"),
            band_lo: fx("0.8"),
            band_hi: fx("1.2"),
            credibility: BTreeMap::new(),
        }
    }
}

impl CompensationParams {
    /// Start score of each tier, evenly spaced in ln(score).
    pub fn thresholds(&self) -> Result<Vec<Fixed>, CodecError> {
        let n = i64::from(self.tiers.max(1));
        if n == 1 {
            return Ok(vec![self.min_score]);
        }
        let lo = ln(self.min_score)?;
        let span = ln(self.max_score)?.checked_sub(lo)?;
        (0..n)
            .map(|k| {
                if k == 0 {
                    Ok(self.min_score)
                } else if k == n - 1 {
                    Ok(self.max_score)
                } else {
                    exp(lo.checked_add(span.checked_mul_int(k)?.checked_div_int(n - 1)?)?)
                }
            })
            .collect()
    }

    pub fn base_for(&self, tier: u32) -> Result<Fixed, CodecError> {
        if tier == 0 {
            return Ok(Fixed::ZERO);
        }
        let n = i64::from(self.tiers.max(1));
        if n == 1 {
            return Ok(self.base_min);
        }
        let step = self.base_max.checked_sub(self.base_min)?.checked_div_int(n - 1)?;
        self.base_min.checked_add(step.checked_mul_int(i64::from(tier) - 1)?)
    }
}

/// Tier of `score`: 0 for scores below the first threshold, otherwise the
/// number of thresholds at or below it.
pub fn tier_for(score: Fixed, thresholds: &[Fixed]) -> u32 {
    if score <= Fixed::ZERO {
        return 0;
    }
    thresholds.iter().filter(|t| score >= **t).count() as u32
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutRow {
    pub identity: IdentityId,
    pub score: Fixed,
    pub tier: u32,
    pub base: Fixed,
    pub multiplier: Fixed,
    pub payout: Fixed,
    /// Set when the unclamped multiplier fell outside the band.
    pub escalated: bool,
}

impl Canonical for PayoutRow {
    fn to_value(&self) -> Value {
        Value::map([
            ("identity", self.identity.to_value()),
            ("score", Value::Fixed(self.score)),
            ("tier", self.tier.to_value()),
            ("base", Value::Fixed(self.base)),
            ("multiplier", Value::Fixed(self.multiplier)),
            ("payout", Value::Fixed(self.payout)),
            ("escalated", Value::Bool(self.escalated)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(PayoutRow {
            identity: IdentityId::from_value(v.field("identity")?)?,
            score: v.field("score")?.as_fixed()?,
            tier: u32::from_value(v.field("tier")?)?,
            base: v.field("base")?.as_fixed()?,
            multiplier: v.field("multiplier")?.as_fixed()?,
            payout: v.field("payout")?.as_fixed()?,
            escalated: v.field("escalated")?.as_bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PayoutTable {
    pub epoch: u64,
    pub treasury_health: Fixed,
    pub rows: Vec<PayoutRow>,
    pub total: Fixed,
}

impl PayoutTable {
    pub fn escalations(&self) -> impl Iterator<Item = &PayoutRow> {
        self.rows.iter().filter(|r| r.escalated)
    }
}

impl Canonical for PayoutTable {
    fn to_value(&self) -> Value {
        Value::map([
            ("epoch", self.epoch.to_value()),
            ("treasury_health", Value::Fixed(self.treasury_health)),
            ("rows", self.rows.to_value()),
            ("total", Value::Fixed(self.total)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(PayoutTable {
            epoch: v.field("epoch")?.as_u64()?,
            treasury_health: v.field("treasury_health")?.as_fixed()?,
            rows: Vec::from_value(v.field("rows")?)?,
            total: v.field("total")?.as_fixed()?,
        })
    }
}

/// `payout = base(tier) * clamp(health * credibility, band)`, clamped to
/// `[base_min, base_max]` for nonzero tiers.
pub fn compensation_epoch(
    contributions: &ContributionScoreTable,
    treasury_health: Fixed,
    params: &CompensationParams,
) -> Result<PayoutTable, CodecError> {
    let thresholds = params.thresholds()?;
    let mut rows = Vec::with_capacity(contributions.scores.len());
    let mut total = Fixed::ZERO;
    for (id, score) in &contributions.scores {
        let tier = tier_for(*score, &thresholds);
        let cred = params.credibility.get(id).copied().unwrap_or(Fixed::ONE);
        let raw = treasury_health.checked_mul(cred)?;
        let multiplier = raw.clamp(params.band_lo, params.band_hi);
        let base = params.base_for(tier)?;
        let payout = if tier == 0 {
            Fixed::ZERO
        } else {
            base.checked_mul(multiplier)?.clamp(params.base_min, params.base_max)
        };
        total = total.checked_add(payout)?;
        rows.push(PayoutRow {
            identity: *id,
            score: *score,
            tier,
            base,
            multiplier,
            payout,
            escalated: tier > 0 && raw != multiplier,
        });
    }
    Ok(PayoutTable {
        epoch: contributions.epoch,
        treasury_health,
        rows,
        total,
    })
}
