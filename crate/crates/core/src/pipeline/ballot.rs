use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{Canonical, CodecError, Digest, Fixed, Value};
use crate::identity::{verify_signer, IdentityId, Keypair, PublicKey, Signature};

/// A signed ballot. The body stays as a raw value until validation so that
/// malformed bodies can be carried, signed, and rejected as data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ballot {
    pub voter: IdentityId,
    pub voter_key: PublicKey,
    pub issued_at: u64,
    pub body: Value,
    pub signature: Signature,
}

impl Ballot {
    fn signed_value(&self) -> Value {
        Value::map([
            ("type", Value::str("ballot")),
            ("voter", self.voter.to_value()),
            ("voter_key", self.voter_key.to_value()),
            ("issued_at", self.issued_at.to_value()),
            ("body", self.body.clone()),
        ])
    }

    pub fn sign_value(voter: &Keypair, body: Value, issued_at: u64) -> Self {
        let mut b = Ballot {
            voter: voter.id(),
            voter_key: voter.public(),
            issued_at,
            body,
            signature: Signature([0; 64]),
        };
        b.signature = voter.sign(&b.signed_value().encode());
        b
    }

    pub fn sign(voter: &Keypair, body: &BallotBody, issued_at: u64) -> Self {
        Self::sign_value(voter, body.to_value(), issued_at)
    }

    pub fn uid(&self) -> Digest {
        self.digest()
    }

    pub fn verify_signature(&self) -> bool {
        verify_signer(&self.voter, &self.voter_key, &self.signed_value().encode(), &self.signature)
    }
}

impl Canonical for Ballot {
    fn to_value(&self) -> Value {
        let mut v = self.signed_value();
        if let Value::Map(m) = &mut v {
            m.insert(b"signature".to_vec(), self.signature.to_value());
        }
        v
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        if v.field("type")?.as_str()? != "ballot" {
            return Err(CodecError::Shape("not a ballot".into()));
        }
        Ok(Ballot {
            voter: IdentityId::from_value(v.field("voter")?)?,
            voter_key: PublicKey::from_value(v.field("voter_key")?)?,
            issued_at: v.field("issued_at")?.as_u64()?,
            body: v.field("body")?.clone(),
            signature: Signature::from_value(v.field("signature")?)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RubricScore {
    Score(Fixed),
    /// Explicit "no opinion"; excluded from means, never read as zero.
    Abstain,
}

impl Canonical for RubricScore {
    fn to_value(&self) -> Value {
        match self {
            RubricScore::Score(s) => Value::Fixed(*s),
            RubricScore::Abstain => Value::str("abstain"),
        }
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        match v {
            Value::Fixed(s) => Ok(RubricScore::Score(*s)),
            Value::Str(s) if s == "abstain" => Ok(RubricScore::Abstain),
            _ => Err(CodecError::Shape("rubric score must be fixed or \"abstain\"".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BallotBody {
    Rubric {
        proposal: String,
        scores: BTreeMap<String, RubricScore>,
    },
    /// Options in preference order; unlisted options are unranked.
    Ranking { contest: String, order: Vec<String> },
    Quadratic {
        contest: String,
        votes: BTreeMap<String, i64>,
    },
    Allocation {
        contest: String,
        fractions: BTreeMap<String, Fixed>,
    },
    /// Counts as `inner` only when the predicate holds in the run context.
    Conditional {
        predicate: String,
        params: BTreeMap<String, Value>,
        inner: Box<BallotBody>,
    },
}

/// What a ballot votes on; duplicates are resolved per (voter, target).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Proposal(String),
    Contest(&'static str, String),
}

impl BallotBody {
    pub fn kind(&self) -> &'static str {
        match self {
            BallotBody::Rubric { .. } => "rubric",
            BallotBody::Ranking { .. } => "ranking",
            BallotBody::Quadratic { .. } => "quadratic",
            BallotBody::Allocation { .. } => "allocation",
            BallotBody::Conditional { .. } => "conditional",
        }
    }

    pub fn target(&self) -> Target {
        match self {
            BallotBody::Rubric { proposal, .. } => Target::Proposal(proposal.clone()),
            BallotBody::Ranking { contest, .. } => Target::Contest("ranking", contest.clone()),
            BallotBody::Quadratic { contest, .. } => Target::Contest("quadratic", contest.clone()),
            BallotBody::Allocation { contest, .. } => Target::Contest("allocation", contest.clone()),
            BallotBody::Conditional { inner, .. } => inner.target(),
        }
    }

    /// Σ votes² for quadratic bodies (through a conditional wrapper).
    pub fn quadratic_cost(&self) -> Option<i128> {
        match self {
            BallotBody::Quadratic { votes, .. } => {
                Some(votes.values().map(|v| i128::from(*v) * i128::from(*v)).sum())
            }
            BallotBody::Conditional { inner, .. } => inner.quadratic_cost(),
            _ => None,
        }
    }
}

impl Canonical for BallotBody {
    fn to_value(&self) -> Value {
        match self {
            BallotBody::Rubric { proposal, scores } => Value::map([
                ("kind", Value::str("rubric")),
                ("proposal", Value::str(proposal)),
                ("scores", scores.to_value()),
            ]),
            BallotBody::Ranking { contest, order } => Value::map([
                ("kind", Value::str("ranking")),
                ("contest", Value::str(contest)),
                ("order", order.to_value()),
            ]),
            BallotBody::Quadratic { contest, votes } => Value::map([
                ("kind", Value::str("quadratic")),
                ("contest", Value::str(contest)),
                ("votes", votes.to_value()),
            ]),
            BallotBody::Allocation { contest, fractions } => Value::map([
                ("kind", Value::str("allocation")),
                ("contest", Value::str(contest)),
                ("fractions", fractions.to_value()),
            ]),
            BallotBody::Conditional {
                predicate,
                params,
                inner,
            } => Value::map([
                ("kind", Value::str("conditional")),
                ("predicate", Value::str(predicate)),
                ("params", params.to_value()),
                ("inner", inner.to_value()),
            ]),
        }
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let expect_fields = |names: &[&str]| -> Result<(), CodecError> {
            let m = v.as_map()?;
            if m.len() != names.len() || names.iter().any(|n| !m.contains_key(n.as_bytes())) {
                return Err(CodecError::Shape("unexpected ballot fields".into()));
            }
            Ok(())
        };
        let kind = v.field("kind")?.as_str()?;
        let body = match kind {
            "rubric" => {
                expect_fields(&["kind", "proposal", "scores"])?;
                BallotBody::Rubric {
                    proposal: v.field("proposal")?.as_str()?.to_owned(),
                    scores: BTreeMap::from_value(v.field("scores")?)?,
                }
            }
            "ranking" => {
                expect_fields(&["kind", "contest", "order"])?;
                BallotBody::Ranking {
                    contest: v.field("contest")?.as_str()?.to_owned(),
                    order: Vec::from_value(v.field("order")?)?,
                }
            }
            "quadratic" => {
                expect_fields(&["kind", "contest", "votes"])?;
                BallotBody::Quadratic {
                    contest: v.field("contest")?.as_str()?.to_owned(),
                    votes: BTreeMap::from_value(v.field("votes")?)?,
                }
            }
            "allocation" => {
                expect_fields(&["kind", "contest", "fractions"])?;
                BallotBody::Allocation {
                    contest: v.field("contest")?.as_str()?.to_owned(),
                    fractions: BTreeMap::from_value(v.field("fractions")?)?,
                }
            }
            "conditional" => {
                expect_fields(&["kind", "predicate", "params", "inner"])?;
                BallotBody::Conditional {
                    predicate: v.field("predicate")?.as_str()?.to_owned(),
                    params: BTreeMap::from_value(v.field("params")?)?,
                    inner: Box::new(BallotBody::from_value(v.field("inner")?)?),
                }
            }
            other => return Err(CodecError::Shape(format!("unknown ballot kind {other:?}"))),
        };
        Ok(body)
    }
}

/// Structural checks beyond decoding, against the run configuration.
pub(crate) fn check_body(
    body: &BallotBody,
    criteria: &BTreeMap<String, Fixed>,
    proposals: &BTreeSet<String>,
    contests: &BTreeMap<String, BTreeSet<String>>,
    nested: bool,
) -> Result<(), String> {
    let contest_options = |contest: &str| {
        contests
            .get(contest)
            .ok_or_else(|| format!("unknown contest {contest:?}"))
    };
    match body {
        BallotBody::Rubric { proposal, scores } => {
            if !proposals.contains(proposal) {
                return Err(format!("unknown proposal {proposal:?}"));
            }
            for (criterion, score) in scores {
                if !criteria.contains_key(criterion) {
                    return Err(format!("unknown criterion {criterion:?}"));
                }
                if let RubricScore::Score(s) = score {
                    if *s < Fixed::ZERO || *s > Fixed::ONE {
                        return Err(format!("score for {criterion:?} outside [0, 1]"));
                    }
                }
            }
        }
        BallotBody::Ranking { contest, order } => {
            let options = contest_options(contest)?;
            let mut seen = BTreeSet::new();
            for o in order {
                if !options.contains(o) {
                    return Err(format!("unknown option {o:?}"));
                }
                if !seen.insert(o) {
                    return Err(format!("option {o:?} ranked twice"));
                }
            }
        }
        BallotBody::Quadratic { contest, votes } => {
            let options = contest_options(contest)?;
            if let Some(o) = votes.keys().find(|o| !options.contains(*o)) {
                return Err(format!("unknown option {o:?}"));
            }
        }
        BallotBody::Allocation { contest, fractions } => {
            let options = contest_options(contest)?;
            if let Some(o) = fractions.keys().find(|o| !options.contains(*o)) {
                return Err(format!("unknown option {o:?}"));
            }
            if fractions.values().any(|f| f.is_negative()) {
                return Err("negative allocation".into());
            }
            let total: i128 = fractions.values().map(|f| i128::from(f.raw())).sum();
            if total > i128::from(Fixed::ONE.raw()) {
                return Err("allocation exceeds 1".into());
            }
        }
        BallotBody::Conditional {
            predicate,
            params,
            inner,
        } => {
            if nested {
                return Err("nested conditional".into());
            }
            super::predicate::check(predicate, params)?;
            check_body(inner, criteria, proposals, contests, true)?;
        }
    }
    Ok(())
}
