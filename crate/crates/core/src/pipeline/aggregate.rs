use std::collections::{BTreeMap, BTreeSet};

use crate::codec::div_round_half_even;
use crate::codec::math::sqrt;
use crate::codec::{Canonical, CodecError, Fixed, Value};
use crate::identity::IdentityId;

use super::ballot::RubricScore;

/// 1.96 at fixed-point scale.
const Z_95: Fixed = Fixed::from_raw(1_960_000_000);

/// One voter's rubric for one proposal.
#[derive(Clone, Debug)]
pub struct RubricInput<'a> {
    pub voter: IdentityId,
    pub scores: &'a BTreeMap<String, RubricScore>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RubricResult {
    /// Weighted mean per criterion over non-abstaining voters; criteria
    /// nobody scored are absent.
    pub criteria: BTreeMap<String, Fixed>,
    /// Absent when no voter scored anything.
    pub score: Option<Fixed>,
    pub ci: Option<(Fixed, Fixed)>,
    pub ballots: u32,
}

impl Canonical for RubricResult {
    fn to_value(&self) -> Value {
        Value::map([
            ("criteria", self.criteria.to_value()),
            ("score", self.score.to_value()),
            ("ci", self.ci.to_value()),
            ("ballots", self.ballots.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(RubricResult {
            criteria: BTreeMap::from_value(v.field("criteria")?)?,
            score: Option::from_value(v.field("score")?)?,
            ci: Option::from_value(v.field("ci")?)?,
            ballots: u32::from_value(v.field("ballots")?)?,
        })
    }
}

fn weighted_mean(pairs: impl Iterator<Item = (Fixed, Fixed)>) -> Option<Fixed> {
    let (mut num, mut den) = (0i128, 0i128);
    for (w, x) in pairs {
        num += i128::from(w.raw()) * i128::from(x.raw());
        den += i128::from(w.raw());
    }
    (den > 0).then(|| Fixed::from_raw(div_round_half_even(num, den) as i64))
}

/// Criterion-weighted combination of whichever criteria have a value.
fn combine(values: &BTreeMap<String, Fixed>, criteria: &BTreeMap<String, Fixed>) -> Option<Fixed> {
    weighted_mean(
        criteria
            .iter()
            .filter_map(|(c, cw)| values.get(c).map(|v| (*cw, *v))),
    )
}

/// Weighted per-criterion means and an overall score with a 95% normal
/// interval. The interval uses each voter's own combined score, the
/// weighted standard error with `n_eff = (Σw)² / Σw²`, and is clamped to
/// [0, 1].
pub fn aggregate_rubric(
    inputs: &[RubricInput<'_>],
    weights: &BTreeMap<IdentityId, Fixed>,
    criteria: &BTreeMap<String, Fixed>,
) -> Result<RubricResult, CodecError> {
    let weight = |id: &IdentityId| weights.get(id).copied().unwrap_or(Fixed::ZERO);
    let mut means = BTreeMap::new();
    for criterion in criteria.keys() {
        let mean = weighted_mean(inputs.iter().filter_map(|b| match b.scores.get(criterion) {
            Some(RubricScore::Score(s)) => Some((weight(&b.voter), *s)),
            _ => None,
        }));
        if let Some(m) = mean {
            means.insert(criterion.clone(), m);
        }
    }
    let score = combine(&means, criteria);
    let ci = match score {
        None => None,
        Some(center) => {
            let per_voter: Vec<(Fixed, Fixed)> = inputs
                .iter()
                .filter_map(|b| {
                    let own: BTreeMap<String, Fixed> = b
                        .scores
                        .iter()
                        .filter_map(|(c, s)| match s {
                            RubricScore::Score(v) => Some((c.clone(), *v)),
                            RubricScore::Abstain => None,
                        })
                        .collect();
                    let w = weight(&b.voter);
                    (w > Fixed::ZERO).then_some(())?;
                    combine(&own, criteria).map(|o| (w, o))
                })
                .collect();
            let half = standard_error(&per_voter)?.checked_mul(Z_95)?;
            Some((
                center.checked_sub(half)?.clamp(Fixed::ZERO, Fixed::ONE),
                center.checked_add(half)?.clamp(Fixed::ZERO, Fixed::ONE),
            ))
        }
    };
    Ok(RubricResult {
        criteria: means,
        score,
        ci,
        ballots: inputs.len() as u32,
    })
}

fn standard_error(samples: &[(Fixed, Fixed)]) -> Result<Fixed, CodecError> {
    let Some(mean) = weighted_mean(samples.iter().copied()) else {
        return Ok(Fixed::ZERO);
    };
    let sum_w: i128 = samples.iter().map(|(w, _)| i128::from(w.raw())).sum();
    let sum_w2: i128 = samples.iter().map(|(w, _)| i128::from(w.raw()).pow(2)).sum();
    // Weighted variance at scale 1e9.
    let mut var_num = 0i128;
    for (w, x) in samples {
        let d = i128::from(x.raw() - mean.raw());
        var_num += i128::from(w.raw()) * div_round_half_even(d * d, i128::from(crate::codec::SCALE));
    }
    let variance = div_round_half_even(var_num, sum_w);
    // SE² = variance / n_eff = variance * Σw² / (Σw)².
    let se2 = div_round_half_even(variance * sum_w2, sum_w * sum_w);
    sqrt(Fixed::from_raw(i64::try_from(se2).map_err(|_| CodecError::Overflow)?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrvRound {
    pub tallies: BTreeMap<String, Fixed>,
    pub exhausted: Fixed,
    pub eliminated: Option<String>,
}

impl Canonical for IrvRound {
    fn to_value(&self) -> Value {
        Value::map([
            ("tallies", self.tallies.to_value()),
            ("exhausted", Value::Fixed(self.exhausted)),
            ("eliminated", self.eliminated.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(IrvRound {
            tallies: BTreeMap::from_value(v.field("tallies")?)?,
            exhausted: v.field("exhausted")?.as_fixed()?,
            eliminated: Option::from_value(v.field("eliminated")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrvResult {
    pub winner: Option<String>,
    pub rounds: Vec<IrvRound>,
}

impl Canonical for IrvResult {
    fn to_value(&self) -> Value {
        Value::map([
            ("winner", self.winner.to_value()),
            ("rounds", self.rounds.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(IrvResult {
            winner: Option::from_value(v.field("winner")?)?,
            rounds: Vec::from_value(v.field("rounds")?)?,
        })
    }
}

/// Weighted instant-runoff. Each round counts every ballot for its highest
/// ranked continuing option. An option holding a strict majority of the
/// counted weight wins; otherwise the lowest tally is eliminated, ties going
/// to the lowest option id.
pub fn ranked_choice(ballots: &[(Fixed, &[String])], options: &BTreeSet<String>) -> Result<IrvResult, CodecError> {
    let mut active: BTreeSet<&str> = options.iter().map(String::as_str).collect();
    let mut rounds = Vec::new();
    loop {
        if active.is_empty() {
            return Ok(IrvResult { winner: None, rounds });
        }
        let mut tallies: BTreeMap<String, Fixed> = active.iter().map(|o| (o.to_string(), Fixed::ZERO)).collect();
        let mut exhausted = Fixed::ZERO;
        for (w, order) in ballots {
            match order.iter().find(|o| active.contains(o.as_str())) {
                Some(top) => {
                    let t = tallies.get_mut(top).expect("active option");
                    *t = t.checked_add(*w)?;
                }
                None => exhausted = exhausted.checked_add(*w)?,
            }
        }
        let counted: i128 = tallies.values().map(|t| i128::from(t.raw())).sum();
        let leader = tallies
            .iter()
            .find(|(_, t)| 2 * i128::from(t.raw()) > counted)
            .map(|(o, _)| o.clone());
        if leader.is_some() || active.len() == 1 {
            let winner = leader.or_else(|| active.iter().next().map(|o| o.to_string()));
            rounds.push(IrvRound {
                tallies,
                exhausted,
                eliminated: None,
            });
            return Ok(IrvResult { winner, rounds });
        }
        let loser = tallies
            .iter()
            .min_by(|a, b| a.1.cmp(b.1).then_with(|| a.0.cmp(b.0)))
            .map(|(o, _)| o.clone())
            .expect("non-empty");
        active.remove(loser.as_str());
        rounds.push(IrvRound {
            tallies,
            exhausted,
            eliminated: Some(loser),
        });
    }
}

/// Net signed votes per option. Budgets are enforced during validation.
pub fn quadratic_tally<'a, I>(ballots: I, options: &BTreeSet<String>) -> BTreeMap<String, i64>
where
    I: IntoIterator<Item = &'a BTreeMap<String, i64>>,
{
    let mut net: BTreeMap<String, i64> = options.iter().map(|o| (o.clone(), 0)).collect();
    for votes in ballots {
        for (o, v) in votes {
            if let Some(n) = net.get_mut(o) {
                *n = n.saturating_add(*v);
            }
        }
    }
    net
}

/// Weighted mean allocation per option; an unlisted option counts as 0.
pub fn allocation_mean(
    ballots: &[(Fixed, &BTreeMap<String, Fixed>)],
    options: &BTreeSet<String>,
) -> BTreeMap<String, Fixed> {
    options
        .iter()
        .filter_map(|o| {
            weighted_mean(
                ballots
                    .iter()
                    .map(|(w, f)| (*w, f.get(o).copied().unwrap_or(Fixed::ZERO))),
            )
            .map(|m| (o.clone(), m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Keypair;

    fn fx(s: &str) -> Fixed {
        s.parse().unwrap()
    }

    fn crit(names: &[&str]) -> BTreeMap<String, Fixed> {
        names.iter().map(|n| (n.to_string(), Fixed::ONE)).collect()
    }

    fn scores(pairs: &[(&str, Option<&str>)]) -> BTreeMap<String, RubricScore> {
        pairs
            .iter()
            .map(|(c, s)| {
                let v = match s {
                    Some(x) => RubricScore::Score(fx(x)),
                    None => RubricScore::Abstain,
                };
                (c.to_string(), v)
            })
            .collect()
    }

    #[test]
    fn single_voter_perfect_scores() {
        let v = Keypair::from_seed("r1").id();
        let s = scores(&[("a", Some("1")), ("b", Some("1")), ("c", Some("1"))]);
        let w = BTreeMap::from([(v, Fixed::ONE)]);
        let r = aggregate_rubric(&[RubricInput { voter: v, scores: &s }], &w, &crit(&["a", "b", "c"])).unwrap();
        assert_eq!(r.score, Some(Fixed::ONE));
        assert_eq!(r.ci, Some((Fixed::ONE, Fixed::ONE)));
    }

    #[test]
    fn two_voters_split() {
        let (a, b) = (Keypair::from_seed("r1").id(), Keypair::from_seed("r2").id());
        let sa = scores(&[("q", Some("0"))]);
        let sb = scores(&[("q", Some("1"))]);
        let w = BTreeMap::from([(a, fx("0.5")), (b, fx("0.5"))]);
        let r = aggregate_rubric(
            &[RubricInput { voter: a, scores: &sa }, RubricInput { voter: b, scores: &sb }],
            &w,
            &crit(&["q"]),
        )
        .unwrap();
        assert_eq!(r.score, Some(fx("0.5")));
        // sd 0.5, n_eff 2 -> SE 0.353553..., half-width 0.69296...
        let (lo, hi) = r.ci.unwrap();
        assert_eq!(lo, Fixed::ZERO);
        assert_eq!(hi, Fixed::ONE);
    }

    #[test]
    fn abstain_is_not_zero() {
        let (a, b) = (Keypair::from_seed("r1").id(), Keypair::from_seed("r2").id());
        let sa = scores(&[("q", Some("0.8"))]);
        let sb = scores(&[("q", None)]);
        let w = BTreeMap::from([(a, fx("0.5")), (b, fx("0.5"))]);
        let r = aggregate_rubric(
            &[RubricInput { voter: a, scores: &sa }, RubricInput { voter: b, scores: &sb }],
            &w,
            &crit(&["q"]),
        )
        .unwrap();
        assert_eq!(r.score, Some(fx("0.8")));
        let r = aggregate_rubric(&[RubricInput { voter: b, scores: &sb }], &w, &crit(&["q"])).unwrap();
        assert_eq!(r.score, None);
        assert!(r.criteria.is_empty());
    }

    fn opts(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn irv_single_option() {
        let r = ranked_choice(&[], &opts(&["x"])).unwrap();
        assert_eq!(r.winner.as_deref(), Some("x"));
        assert_eq!(r.rounds.len(), 1);
    }

    #[test]
    fn irv_majority_first_round() {
        let a = vec!["a".to_string()];
        let b = vec!["b".to_string()];
        let r = ranked_choice(&[(fx("0.6"), &a), (fx("0.4"), &b)], &opts(&["a", "b"])).unwrap();
        assert_eq!(r.winner.as_deref(), Some("a"));
        assert_eq!(r.rounds.len(), 1);
    }

    #[test]
    fn irv_transfer_and_tie_break() {
        let b1 = vec!["a".to_string()];
        let b2 = vec!["b".to_string()];
        let b3 = vec!["c".to_string(), "b".to_string()];
        let r = ranked_choice(
            &[(fx("0.4"), &b1), (fx("0.3"), &b2), (fx("0.3"), &b3)],
            &opts(&["a", "b", "c"]),
        )
        .unwrap();
        // b and c tie at 0.3; b has the lower id and goes first.
        assert_eq!(r.rounds[0].eliminated.as_deref(), Some("b"));
        assert_eq!(r.winner.as_deref(), Some("a"));
    }

    #[test]
    fn quadratic_net() {
        let v1 = BTreeMap::from([("x".to_string(), 10)]);
        let v2 = BTreeMap::from([("x".to_string(), -3), ("y".to_string(), 2)]);
        let t = quadratic_tally([&v1, &v2], &opts(&["x", "y"]));
        assert_eq!(t["x"], 7);
        assert_eq!(t["y"], 2);
    }
}
