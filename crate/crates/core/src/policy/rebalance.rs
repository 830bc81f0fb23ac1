use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{apportion, Canonical, CodecError, Fixed, Value};

use super::PolicyError;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioState {
    /// Asset class -> value held.
    pub holdings: BTreeMap<String, Fixed>,
    /// Asset class -> target fraction; fractions sum to one.
    pub targets: BTreeMap<String, Fixed>,
}

impl PortfolioState {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.targets.is_empty() {
            return Err(PolicyError::InvalidPortfolio("no targets".into()));
        }
        if self.targets.values().any(|t| t.is_negative()) || self.holdings.values().any(|h| h.is_negative()) {
            return Err(PolicyError::InvalidPortfolio("negative value".into()));
        }
        let sum: i128 = self.targets.values().map(|t| i128::from(t.raw())).sum();
        if sum != i128::from(Fixed::ONE.raw()) {
            return Err(PolicyError::InvalidPortfolio("targets do not sum to 1".into()));
        }
        if let Some(c) = self.holdings.keys().find(|c| !self.targets.contains_key(*c)) {
            return Err(PolicyError::InvalidPortfolio(format!("holding {c:?} has no target")));
        }
        Ok(())
    }

    fn total(&self) -> Result<Fixed, CodecError> {
        crate::codec::checked_sum(self.holdings.values().copied())
    }

    pub fn holding(&self, class: &str) -> Fixed {
        self.holdings.get(class).copied().unwrap_or(Fixed::ZERO)
    }

    /// Signed deviation from target value per class, in value units. Target
    /// values are apportioned exactly, so deviations sum to zero.
    fn deviations(&self) -> Result<Vec<(String, i128)>, PolicyError> {
        self.validate()?;
        let total = self.total()?;
        let classes: Vec<&String> = self.targets.keys().collect();
        let weights: Vec<Fixed> = classes.iter().map(|c| self.targets[*c]).collect();
        let target_values = apportion(total, &weights)?;
        Ok(classes
            .into_iter()
            .zip(target_values)
            .map(|(c, t)| (c.clone(), i128::from(self.holding(c).raw()) - i128::from(t.raw())))
            .collect())
    }
}

impl Canonical for PortfolioState {
    fn to_value(&self) -> Value {
        Value::map([
            ("holdings", self.holdings.to_value()),
            ("targets", self.targets.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(PortfolioState {
            holdings: BTreeMap::from_value(v.field("holdings")?)?,
            targets: BTreeMap::from_value(v.field("targets")?)?,
        })
    }
}

/// `max over classes of |current fraction - target fraction|`.
pub fn drift(p: &PortfolioState) -> Result<Fixed, PolicyError> {
    p.validate()?;
    let total = p.total()?;
    if total.is_zero() {
        return Ok(Fixed::ZERO);
    }
    let mut worst = Fixed::ZERO;
    for (class, target) in &p.targets {
        let frac = p.holding(class).checked_div(total)?;
        worst = worst.max(frac.checked_sub(*target)?.abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: String,
    pub to: String,
    pub amount: Fixed,
}

impl Canonical for Transfer {
    fn to_value(&self) -> Value {
        Value::map([
            ("from", Value::str(&self.from)),
            ("to", Value::str(&self.to)),
            ("amount", Value::Fixed(self.amount)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Transfer {
            from: v.field("from")?.as_str()?.to_owned(),
            to: v.field("to")?.as_str()?.to_owned(),
            amount: v.field("amount")?.as_fixed()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RebalancePlan {
    pub transfers: Vec<Transfer>,
    /// Set when the cap stopped the plan short of the targets.
    pub infeasible_within_caps: bool,
    pub drift_before: Fixed,
    pub drift_after: Fixed,
}

impl RebalancePlan {
    pub fn moved(&self) -> Fixed {
        Fixed::from_raw(self.transfers.iter().map(|t| t.amount.raw()).sum())
    }
}

/// How much to take from each of `excess` (positive amounts, any order) so
/// that exactly `budget` is removed and the largest remaining amounts are
/// levelled down first.
fn level_down(excess: &[(String, i128)], budget: i128) -> Vec<(String, i128)> {
    let mut sorted: Vec<&(String, i128)> = excess.iter().collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: i128 = sorted.iter().map(|e| e.1).sum();
    if budget >= total {
        return sorted.into_iter().cloned().collect();
    }
    // Smallest k such that levelling the top k to the (k+1)-th value would
    // already exceed the budget.
    let mut prefix = 0i128;
    let mut k = 0;
    while k < sorted.len() {
        prefix += sorted[k].1;
        k += 1;
        let next = sorted.get(k).map_or(0, |e| e.1);
        if prefix - next * k as i128 >= budget {
            break;
        }
    }
    // Level L with sum over top k of (e_i - L) = budget.
    let kk = k as i128;
    let q = (prefix - budget).div_euclid(kk);
    let rem = (prefix - budget).rem_euclid(kk);
    sorted
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (c, e))| {
            let keep = q + i128::from((i as i128) < rem);
            (c.clone(), e - keep)
        })
        .filter(|(_, take)| *take > 0)
        .collect()
}

/// Water-filling rebalance: with at most `max_move` value moved this epoch,
/// lower the largest over- and under-weights first, then pair sources and
/// sinks greedily (largest first, ties by class name).
pub fn plan_rebalance(portfolio: &PortfolioState, max_move: Fixed) -> Result<RebalancePlan, PolicyError> {
    if max_move.is_negative() {
        return Err(PolicyError::InvalidPortfolio("negative max move".into()));
    }
    let devs = portfolio.deviations()?;
    let over: Vec<(String, i128)> = devs.iter().filter(|(_, d)| *d > 0).cloned().collect();
    let under: Vec<(String, i128)> = devs.iter().filter(|(_, d)| *d < 0).map(|(c, d)| (c.clone(), -d)).collect();
    let imbalance: i128 = over.iter().map(|(_, d)| d).sum();
    let budget = imbalance.min(i128::from(max_move.raw()));
    let mut sources = level_down(&over, budget);
    let mut sinks = level_down(&under, budget);
    let by_amount = |a: &(String, i128), b: &(String, i128)| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0));
    sources.sort_by(by_amount);
    sinks.sort_by(by_amount);

    let mut transfers = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < sources.len() && j < sinks.len() {
        let amount = sources[i].1.min(sinks[j].1);
        transfers.push(Transfer {
            from: sources[i].0.clone(),
            to: sinks[j].0.clone(),
            amount: Fixed::from_raw(amount as i64),
        });
        sources[i].1 -= amount;
        sinks[j].1 -= amount;
        if sources[i].1 == 0 {
            i += 1;
        }
        if sinks[j].1 == 0 {
            j += 1;
        }
    }
    let after = apply(portfolio, &transfers)?;
    Ok(RebalancePlan {
        infeasible_within_caps: budget < imbalance,
        drift_before: drift(portfolio)?,
        drift_after: drift(&after)?,
        transfers,
    })
}

/// Portfolio after executing `transfers`.
pub fn apply(portfolio: &PortfolioState, transfers: &[Transfer]) -> Result<PortfolioState, PolicyError> {
    let mut next = portfolio.clone();
    for t in transfers {
        let from = next.holding(&t.from).checked_sub(t.amount)?;
        let to = next.holding(&t.to).checked_add(t.amount)?;
        next.holdings.insert(t.from.clone(), from);
        next.holdings.insert(t.to.clone(), to);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn portfolio(h: &[(&str, i64)], t: &[(&str, &str)]) -> PortfolioState {
        PortfolioState {
            holdings: h.iter().map(|(c, v)| (c.to_string(), Fixed::from_int(*v).unwrap())).collect(),
            targets: t.iter().map(|(c, v)| (c.to_string(), v.parse().unwrap())).collect(),
        }
    }

    #[test]
    fn drift_of_reference_portfolio() {
        let p = portfolio(
            &[("stable", 45), ("defi", 40), ("strategic", 15)],
            &[("stable", "0.3"), ("defi", "0.5"), ("strategic", "0.2")],
        );
        assert_eq!(drift(&p).unwrap(), "0.15".parse().unwrap());
    }

    #[test]
    fn single_transfer() {
        let p = portfolio(&[("a", 60), ("b", 40)], &[("a", "0.5"), ("b", "0.5")]);
        let plan = plan_rebalance(&p, Fixed::from_int(100).unwrap()).unwrap();
        assert_eq!(
            plan.transfers,
            vec![Transfer {
                from: "a".into(),
                to: "b".into(),
                amount: Fixed::from_int(10).unwrap()
            }]
        );
        assert!(!plan.infeasible_within_caps);
        assert_eq!(plan.drift_after, Fixed::ZERO);
    }

    #[test]
    fn partial_plan_when_capped() {
        let p = portfolio(&[("a", 60), ("b", 40)], &[("a", "0.5"), ("b", "0.5")]);
        let plan = plan_rebalance(&p, Fixed::from_int(4).unwrap()).unwrap();
        assert_eq!(plan.moved(), Fixed::from_int(4).unwrap());
        assert!(plan.infeasible_within_caps);
        assert!(plan.drift_after < plan.drift_before);
    }

    #[test]
    fn levels_largest_first() {
        // over: a +20, b +10; under: c -30. Budget 12 -> take 11 from a, 1 from b.
        let p = portfolio(&[("a", 40), ("b", 30), ("c", 30)], &[("a", "0.2"), ("b", "0.2"), ("c", "0.6")]);
        let plan = plan_rebalance(&p, Fixed::from_int(12).unwrap()).unwrap();
        let from_a: i64 = plan.transfers.iter().filter(|t| t.from == "a").map(|t| t.amount.raw()).sum();
        let from_b: i64 = plan.transfers.iter().filter(|t| t.from == "b").map(|t| t.amount.raw()).sum();
        assert_eq!(from_a, Fixed::from_int(11).unwrap().raw());
        assert_eq!(from_b, Fixed::from_int(1).unwrap().raw());
    }
}
