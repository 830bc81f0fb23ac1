//! Policy-as-code: declarative policies of triggers, a condition, bounded
//! action templates, limits and escalation rules, evaluated once per epoch
//! into timelocked action plans.

mod compensation;
mod engine;
mod eval;
mod gate;
mod parse;
mod rebalance;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Digest, Fixed, Value};

pub use compensation::{compensation_epoch, tier_for, CompensationParams, PayoutRow, PayoutTable};
pub use engine::{replay_epoch, shadow_diff, AuditEvent, EpochManifest, EpochRecord, Execution, PolicyEngine, ShadowDiff};
pub use eval::{evaluate_epoch, ActionPlan, EpochOutcome, Justification, PlanHistory, PlanStatus, PlannedAction};
pub use gate::{gate_proposal, Decision, Finding, GateOutcome, GateRules, ProposalDoc, ReviewerOverride, Span};
pub use parse::{parse_policy, Diagnostic, ParseCode, EXCEPTIONS};
pub use rebalance::{drift, plan_rebalance, PortfolioState, RebalancePlan, Transfer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy rejected: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Parse(Vec<Diagnostic>),
    #[error("malformed proposal: {0}")]
    MalformedProposal(String),
    #[error("{0:?} does not hold the pause attestation")]
    NotAuthorized(crate::IdentityId),
    #[error("timelock window for plan {0:?} has closed")]
    WindowClosed(Digest),
    #[error("no plan {0:?}")]
    UnknownPlan(Digest),
    #[error("no active policy {0:?}")]
    UnknownPolicy(String),
    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Predicate {
    Drift,
    TreasuryHealth,
    Epoch,
    ProposalsPending,
    AttestationChanges,
    Demand,
    Data(String),
}

impl Predicate {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "drift" => Predicate::Drift,
            "treasury_health" => Predicate::TreasuryHealth,
            "epoch" => Predicate::Epoch,
            "proposals_pending" => Predicate::ProposalsPending,
            "attestation_changes" => Predicate::AttestationChanges,
            "demand" => Predicate::Demand,
            _ => {
                let key = name.strip_prefix("data.")?;
                if key.is_empty() {
                    return None;
                }
                Predicate::Data(key.to_string())
            }
        })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Drift => f.write_str("drift"),
            Predicate::TreasuryHealth => f.write_str("treasury_health"),
            Predicate::Epoch => f.write_str("epoch"),
            Predicate::ProposalsPending => f.write_str("proposals_pending"),
            Predicate::AttestationChanges => f.write_str("attestation_changes"),
            Predicate::Demand => f.write_str("demand"),
            Predicate::Data(k) => write!(f, "data.{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Literal(Fixed),
    Predicate(Predicate),
    Scaled(Predicate, Fixed),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn holds(self, a: Fixed, b: Fixed) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    True,
    False,
    Cmp(Operand, CmpOp, Operand),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trigger {
    /// Fires on epochs divisible by `every`.
    TimeElapsed { every: u64 },
    DriftExceeds { threshold: Fixed },
    ProposalSubmitted { min: u64 },
    AttestationChanged { min: u64 },
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::TimeElapsed { every } => write!(f, "time-elapsed every={every}"),
            Trigger::DriftExceeds { threshold } => write!(f, "drift-exceeds threshold={threshold}"),
            Trigger::ProposalSubmitted { min } => write!(f, "proposal-submitted min={min}"),
            Trigger::AttestationChanged { min } => write!(f, "attestation-changed min={min}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Rebalance,
    Transfer,
    SetParameter,
    Compensate,
}

impl ActionKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "rebalance" => ActionKind::Rebalance,
            "transfer" => ActionKind::Transfer,
            "set-parameter" => ActionKind::SetParameter,
            "compensate" => ActionKind::Compensate,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Rebalance => "rebalance",
            ActionKind::Transfer => "transfer",
            ActionKind::SetParameter => "set-parameter",
            ActionKind::Compensate => "compensate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionParam {
    pub operand: Operand,
    pub lo: Fixed,
    pub hi: Fixed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionTemplate {
    pub kind: ActionKind,
    pub params: BTreeMap<String, ActionParam>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RateLimit {
    pub max_plans: u64,
    pub window: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Limits {
    /// Cap on the magnitude of any single action parameter.
    pub per_action: Option<Fixed>,
    /// Cap on the summed magnitude of all parameters in one plan.
    pub per_epoch: Option<Fixed>,
    pub rate: Option<RateLimit>,
}

/// A parsed policy. The source text is the canonical form; everything else
/// is derived from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub version: u32,
    pub expiry: u64,
    pub triggers: Vec<Trigger>,
    pub condition: Expr,
    pub actions: Vec<ActionTemplate>,
    pub limits: Limits,
    pub exceptions: BTreeSet<String>,
    /// Epochs between plan emission and execution.
    pub timelock: u64,
    pub source: String,
}

impl Policy {
    pub fn parse(source: &str) -> Result<Policy, PolicyError> {
        parse_policy(source.as_bytes()).map_err(PolicyError::Parse)
    }

    pub fn expired_at(&self, epoch: u64) -> bool {
        epoch > self.expiry
    }
}

impl Canonical for Policy {
    fn to_value(&self) -> Value {
        Value::map([
            ("id", Value::str(&self.id)),
            ("version", self.version.to_value()),
            ("source", Value::str(&self.source)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let p = parse_policy(v.field("source")?.as_str()?.as_bytes())
            .map_err(|d| CodecError::Shape(format!("embedded policy does not parse: {}", d[0])))?;
        if p.id != v.field("id")?.as_str()? || p.version != u32::from_value(v.field("version")?)? {
            return Err(CodecError::Shape("policy header disagrees with source".into()));
        }
        Ok(p)
    }
}

/// Inputs a policy can read in one epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub epoch: u64,
    #[serde(default)]
    pub portfolio: PortfolioState,
    #[serde(default)]
    pub treasury_health: Option<Fixed>,
    #[serde(default)]
    pub proposals_pending: u64,
    #[serde(default)]
    pub attestation_changes: u64,
    #[serde(default)]
    pub demand: Option<Fixed>,
    #[serde(default)]
    pub data: BTreeMap<String, Fixed>,
}

impl WorldState {
    /// `None` when the predicate cannot be resolved from this state.
    pub fn read(&self, p: &Predicate) -> Option<Fixed> {
        match p {
            Predicate::Drift => drift(&self.portfolio).ok(),
            Predicate::TreasuryHealth => self.treasury_health,
            Predicate::Epoch => i64::try_from(self.epoch).ok().and_then(|e| Fixed::from_int(e).ok()),
            Predicate::ProposalsPending => i64::try_from(self.proposals_pending).ok().and_then(|e| Fixed::from_int(e).ok()),
            Predicate::AttestationChanges => {
                i64::try_from(self.attestation_changes).ok().and_then(|e| Fixed::from_int(e).ok())
            }
            Predicate::Demand => self.demand,
            Predicate::Data(k) => self.data.get(k).copied(),
        }
    }
}

impl Canonical for WorldState {
    fn to_value(&self) -> Value {
        Value::map([
            ("epoch", self.epoch.to_value()),
            ("portfolio", self.portfolio.to_value()),
            ("treasury_health", self.treasury_health.to_value()),
            ("proposals_pending", self.proposals_pending.to_value()),
            ("attestation_changes", self.attestation_changes.to_value()),
            ("demand", self.demand.to_value()),
            ("data", self.data.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(WorldState {
            epoch: v.field("epoch")?.as_u64()?,
            portfolio: PortfolioState::from_value(v.field("portfolio")?)?,
            treasury_health: Option::from_value(v.field("treasury_health")?)?,
            proposals_pending: v.field("proposals_pending")?.as_u64()?,
            attestation_changes: v.field("attestation_changes")?.as_u64()?,
            demand: Option::from_value(v.field("demand")?)?,
            data: BTreeMap::from_value(v.field("data")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "policy p\nexpiry 10\ntrigger time-elapsed every=1\naction transfer amount=5 in [0, 10]\n";

    #[test]
    fn minimal_policy_parses() {
        let p = Policy::parse(MINIMAL).unwrap();
        assert_eq!(p.id, "p");
        assert_eq!(p.version, 1);
        assert_eq!(p.condition, Expr::True);
        let back = Policy::from_value(&p.to_value()).unwrap();
        assert_eq!(back, p);
    }

    fn codes(src: &str) -> Vec<(ParseCode, usize, usize)> {
        match parse_policy(src.as_bytes()) {
            Ok(_) => vec![],
            Err(d) => d.into_iter().map(|d| (d.code, d.line, d.col)).collect(),
        }
    }

    #[test]
    fn rejections_carry_positions() {
        let unbounded = MINIMAL.replace("amount=5 in [0, 10]", "amount=5");
        assert_eq!(codes(&unbounded), vec![(ParseCode::UnboundedAction, 4, 17)]);
        let no_expiry = MINIMAL.replace("expiry 10\n", "");
        assert_eq!(codes(&no_expiry), vec![(ParseCode::ExpiryMissing, 4, 1)]);
        let unknown = format!("{MINIMAL}condition moon_phase > 1\n");
        assert_eq!(codes(&unknown), vec![(ParseCode::UnknownPredicate, 5, 11)]);
        let syntax = format!("{MINIMAL}condition drift >\n");
        assert_eq!(codes(&syntax), vec![(ParseCode::SyntaxError, 5, 18)]);
        let below_zero = format!("{MINIMAL}action rebalance max_move=1 in [-1, 5]\n");
        assert_eq!(codes(&below_zero), vec![(ParseCode::SyntaxError, 5, 18)]);
    }

    #[test]
    fn expression_precedence() {
        let src = format!("{MINIMAL}condition not drift > 1 or epoch >= 2 and data.x == 3\n");
        let p = Policy::parse(&src).unwrap();
        let drift_gt = Expr::Cmp(Operand::Predicate(Predicate::Drift), CmpOp::Gt, Operand::Literal(Fixed::ONE));
        match p.condition {
            Expr::Or(lhs, rhs) => {
                assert_eq!(*lhs, Expr::Not(Box::new(drift_gt)));
                assert!(matches!(*rhs, Expr::And(..)));
            }
            other => panic!("{other:?}"),
        }
    }
}
