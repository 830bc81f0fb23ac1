use std::collections::BTreeMap;
use std::fmt;

use crate::attestation::GraphSnapshot;
use crate::codec::{Canonical, CodecError, Digest, Value};
use crate::identity::IdentityId;
use crate::par;

use super::ballot::{check_body, Ballot, BallotBody, RubricScore, Target};
use super::PipelineConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectCode {
    BadSignature,
    Ineligible,
    Malformed,
    Overspend,
    Superseded,
}

impl RejectCode {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::BadSignature => "BAD_SIGNATURE",
            RejectCode::Ineligible => "INELIGIBLE",
            RejectCode::Malformed => "MALFORMED",
            RejectCode::Overspend => "OVERSPEND",
            RejectCode::Superseded => "SUPERSEDED",
        }
    }

    fn parse(s: &str) -> Result<Self, CodecError> {
        [
            RejectCode::BadSignature,
            RejectCode::Ineligible,
            RejectCode::Malformed,
            RejectCode::Overspend,
            RejectCode::Superseded,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| CodecError::Shape(format!("unknown rejection code {s:?}")))
    }
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub uid: Digest,
    pub voter: IdentityId,
    pub code: RejectCode,
    pub detail: String,
}

impl Canonical for Rejection {
    fn to_value(&self) -> Value {
        Value::map([
            ("uid", Value::Digest(self.uid)),
            ("voter", self.voter.to_value()),
            ("code", Value::str(self.code.as_str())),
            ("detail", Value::str(&self.detail)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Rejection {
            uid: v.field("uid")?.as_digest()?,
            voter: IdentityId::from_value(v.field("voter")?)?,
            code: RejectCode::parse(v.field("code")?.as_str()?)?,
            detail: v.field("detail")?.as_str()?.to_owned(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcceptedBallot {
    pub uid: Digest,
    pub voter: IdentityId,
    pub issued_at: u64,
    pub body: BallotBody,
}

impl Canonical for AcceptedBallot {
    fn to_value(&self) -> Value {
        Value::map([
            ("uid", Value::Digest(self.uid)),
            ("voter", self.voter.to_value()),
            ("issued_at", self.issued_at.to_value()),
            ("body", self.body.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(AcceptedBallot {
            uid: v.field("uid")?.as_digest()?,
            voter: IdentityId::from_value(v.field("voter")?)?,
            issued_at: v.field("issued_at")?.as_u64()?,
            body: BallotBody::from_value(v.field("body")?)?,
        })
    }
}

/// Accepted and rejected ballots, each sorted by uid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationOutcome {
    pub accepted: Vec<AcceptedBallot>,
    pub rejected: Vec<Rejection>,
}

impl ValidationOutcome {
    pub fn rejected_with(&self, code: RejectCode) -> usize {
        self.rejected.iter().filter(|r| r.code == code).count()
    }
}

impl Canonical for ValidationOutcome {
    fn to_value(&self) -> Value {
        Value::map([
            ("accepted", self.accepted.to_value()),
            ("rejected", self.rejected.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(ValidationOutcome {
            accepted: Vec::from_value(v.field("accepted")?)?,
            rejected: Vec::from_value(v.field("rejected")?)?,
        })
    }
}

fn fill_abstentions(body: &mut BallotBody, config: &PipelineConfig) {
    match body {
        BallotBody::Rubric { scores, .. } => {
            for criterion in config.criteria.keys() {
                scores.entry(criterion.clone()).or_insert(RubricScore::Abstain);
            }
        }
        BallotBody::Conditional { inner, .. } => fill_abstentions(inner, config),
        _ => {}
    }
}

/// Stage one: signatures, eligibility, body shape, quadratic budget, then
/// duplicate resolution per (voter, target). The result does not depend on
/// input order.
pub fn validate_and_normalize(
    ballots: &[Ballot],
    snapshot: &GraphSnapshot,
    config: &PipelineConfig,
) -> ValidationOutcome {
    let mut sorted: Vec<(Digest, &Ballot)> = ballots.iter().map(|b| (b.uid(), b)).collect();
    sorted.sort_by_key(|a| a.0);
    sorted.dedup_by(|a, b| a.0 == b.0);

    let proposals = config.proposal_ids();
    let checked = par::map(&sorted, |(uid, ballot)| -> Result<AcceptedBallot, Rejection> {
        let reject = |code, detail: String| Rejection {
            uid: *uid,
            voter: ballot.voter,
            code,
            detail,
        };
        if !ballot.verify_signature() {
            return Err(reject(RejectCode::BadSignature, "signature does not verify".into()));
        }
        if !snapshot.contains(&ballot.voter) {
            return Err(reject(RejectCode::Ineligible, "voter not in snapshot".into()));
        }
        let mut body = BallotBody::from_value(&ballot.body)
            .map_err(|e| reject(RejectCode::Malformed, e.to_string()))?;
        check_body(&body, &config.criteria, &proposals, &config.contests, false)
            .map_err(|e| reject(RejectCode::Malformed, e))?;
        if let Some(cost) = body.quadratic_cost() {
            if cost > i128::from(config.quadratic_budget) {
                return Err(reject(
                    RejectCode::Overspend,
                    format!("cost {cost} exceeds budget {}", config.quadratic_budget),
                ));
            }
        }
        fill_abstentions(&mut body, config);
        Ok(AcceptedBallot {
            uid: *uid,
            voter: ballot.voter,
            issued_at: ballot.issued_at,
            body,
        })
    });

    let mut out = ValidationOutcome::default();
    let mut latest: BTreeMap<(IdentityId, Target), AcceptedBallot> = BTreeMap::new();
    for result in checked {
        match result {
            Err(r) => out.rejected.push(r),
            Ok(b) => {
                let key = (b.voter, b.body.target());
                // Candidates arrive in uid order, so a strictly later timestamp
                // is the only way to displace the incumbent.
                let displaced = match latest.get(&key) {
                    Some(cur) if b.issued_at <= cur.issued_at => Some(b),
                    _ => latest.insert(key, b),
                };
                if let Some(loser) = displaced {
                    out.rejected.push(Rejection {
                        uid: loser.uid,
                        voter: loser.voter,
                        code: RejectCode::Superseded,
                        detail: "a later ballot for the same target exists".into(),
                    });
                }
            }
        }
    }
    out.accepted = latest.into_values().collect();
    out.accepted.sort_by_key(|a| a.uid);
    out.rejected.sort_by_key(|a| a.uid);
    out
}
