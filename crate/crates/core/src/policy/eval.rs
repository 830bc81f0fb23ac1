use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{Canonical, CodecError, Digest, Fixed, Value};

use super::engine::AuditEvent;
use super::rebalance::{drift, plan_rebalance, Transfer};
use super::{ActionKind, Expr, Operand, Policy, Predicate, Trigger, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanStatus {
    Planned,
    Executed,
    Vetoed,
    Expired,
}

impl PlanStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanStatus::Planned => "planned",
            PlanStatus::Executed => "executed",
            PlanStatus::Vetoed => "vetoed",
            PlanStatus::Expired => "expired",
        }
    }

    fn parse(s: &str) -> Result<Self, CodecError> {
        Ok(match s {
            "planned" => PlanStatus::Planned,
            "executed" => PlanStatus::Executed,
            "vetoed" => PlanStatus::Vetoed,
            "expired" => PlanStatus::Expired,
            _ => return Err(CodecError::Shape(format!("unknown plan status {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedAction {
    pub kind: ActionKind,
    pub params: BTreeMap<String, Fixed>,
    /// Declared bound per parameter, copied from the policy.
    pub bounds: BTreeMap<String, (Fixed, Fixed)>,
    /// Concrete transfers for rebalance actions.
    pub transfers: Vec<Transfer>,
}

impl PlannedAction {
    /// True when every parameter sits inside its bound and every transfer
    /// is no larger than the `max_move` it was planned under.
    pub fn within_bounds(&self, per_action: Option<Fixed>) -> bool {
        let params_ok = self.params.iter().all(|(k, v)| {
            self.bounds
                .get(k)
                .is_some_and(|(lo, hi)| v >= lo && v <= hi && per_action.is_none_or(|cap| v.abs() <= cap))
        });
        let moved: i128 = self.transfers.iter().map(|t| i128::from(t.amount.raw())).sum();
        let transfers_ok = self.transfers.iter().all(|t| !t.amount.is_negative())
            && self
                .params
                .get("max_move")
                .is_none_or(|m| moved <= i128::from(m.raw()));
        params_ok && transfers_ok
    }
}

impl Canonical for PlannedAction {
    fn to_value(&self) -> Value {
        Value::map([
            ("kind", Value::str(self.kind.as_str())),
            ("params", self.params.to_value()),
            ("bounds", self.bounds.to_value()),
            ("transfers", self.transfers.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let kind = v.field("kind")?.as_str()?;
        Ok(PlannedAction {
            kind: ActionKind::parse(kind).ok_or_else(|| CodecError::Shape(format!("unknown action {kind:?}")))?,
            params: BTreeMap::from_value(v.field("params")?)?,
            bounds: BTreeMap::from_value(v.field("bounds")?)?,
            transfers: Vec::from_value(v.field("transfers")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Justification {
    pub world_digest: Digest,
    pub triggers: Vec<String>,
    /// Every predicate value the condition and actions read.
    pub readings: BTreeMap<String, Fixed>,
    pub condition: bool,
}

impl Canonical for Justification {
    fn to_value(&self) -> Value {
        Value::map([
            ("world_digest", Value::Digest(self.world_digest)),
            ("triggers", self.triggers.to_value()),
            ("readings", self.readings.to_value()),
            ("condition", Value::Bool(self.condition)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Justification {
            world_digest: v.field("world_digest")?.as_digest()?,
            triggers: Vec::from_value(v.field("triggers")?)?,
            readings: BTreeMap::from_value(v.field("readings")?)?,
            condition: v.field("condition")?.as_bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionPlan {
    pub plan_id: Digest,
    pub policy_id: String,
    pub policy_version: u32,
    pub epoch: u64,
    pub actions: Vec<PlannedAction>,
    pub justification: Justification,
    /// Veto window `[open, close)`; the plan executes at `close`.
    pub timelock: (u64, u64),
    pub status: PlanStatus,
    /// clipped-to-bound, clipped-per-action, clipped-per-epoch,
    /// infeasible-within-caps.
    pub flags: BTreeSet<String>,
}

impl ActionPlan {
    fn body_value(&self) -> Value {
        Value::map([
            ("policy_id", Value::str(&self.policy_id)),
            ("policy_version", self.policy_version.to_value()),
            ("epoch", self.epoch.to_value()),
            ("actions", self.actions.to_value()),
            ("justification", self.justification.to_value()),
            ("timelock", self.timelock.to_value()),
            ("flags", self.flags.to_value()),
        ])
    }

    /// The plan id covers everything except the id and the status.
    pub fn compute_id(&self) -> Digest {
        crate::codec::sha256(&self.body_value().encode())
    }
}

impl Canonical for ActionPlan {
    fn to_value(&self) -> Value {
        let mut v = self.body_value();
        if let Value::Map(m) = &mut v {
            m.insert(b"plan_id".to_vec(), Value::Digest(self.plan_id));
            m.insert(b"status".to_vec(), Value::str(self.status.as_str()));
        }
        v
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(ActionPlan {
            plan_id: v.field("plan_id")?.as_digest()?,
            policy_id: v.field("policy_id")?.as_str()?.to_owned(),
            policy_version: u32::from_value(v.field("policy_version")?)?,
            epoch: v.field("epoch")?.as_u64()?,
            actions: Vec::from_value(v.field("actions")?)?,
            justification: Justification::from_value(v.field("justification")?)?,
            timelock: <(u64, u64)>::from_value(v.field("timelock")?)?,
            status: PlanStatus::parse(v.field("status")?.as_str()?)?,
            flags: BTreeSet::from_value(v.field("flags")?)?,
        })
    }
}

/// Epochs at which each policy emitted a plan; drives rate limits.
pub type PlanHistory = BTreeMap<String, Vec<u64>>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EpochOutcome {
    pub plans: Vec<ActionPlan>,
    pub events: Vec<AuditEvent>,
}

struct Reader<'a> {
    world: &'a WorldState,
    readings: BTreeMap<String, Fixed>,
}

impl Reader<'_> {
    fn read(&mut self, p: &Predicate) -> Result<Fixed, Predicate> {
        let v = self.world.read(p).ok_or_else(|| p.clone())?;
        self.readings.insert(p.to_string(), v);
        Ok(v)
    }

    fn operand(&mut self, o: &Operand) -> Result<Fixed, Predicate> {
        match o {
            Operand::Literal(v) => Ok(*v),
            Operand::Predicate(p) => self.read(p),
            Operand::Scaled(p, k) => {
                let v = self.read(p)?;
                v.checked_mul(*k).map_err(|_| p.clone())
            }
        }
    }

    /// Evaluates both sides of every connective so that any missing input
    /// is reported no matter where it sits.
    fn expr(&mut self, e: &Expr) -> Result<bool, Predicate> {
        Ok(match e {
            Expr::True => true,
            Expr::False => false,
            Expr::Cmp(a, op, b) => op.holds(self.operand(a)?, self.operand(b)?),
            Expr::And(a, b) => {
                let (x, y) = (self.expr(a)?, self.expr(b)?);
                x && y
            }
            Expr::Or(a, b) => {
                let (x, y) = (self.expr(a)?, self.expr(b)?);
                x || y
            }
            Expr::Not(a) => !self.expr(a)?,
        })
    }

    fn trigger(&mut self, t: &Trigger) -> Result<bool, Predicate> {
        Ok(match t {
            Trigger::TimeElapsed { every } => self.world.epoch.is_multiple_of(*every),
            Trigger::DriftExceeds { threshold } => self.read(&Predicate::Drift)? > *threshold,
            Trigger::ProposalSubmitted { min } => self.world.proposals_pending >= *min,
            Trigger::AttestationChanged { min } => self.world.attestation_changes >= *min,
        })
    }
}

fn event(epoch: u64, kind: &str, subject: &str, detail: impl Into<String>) -> AuditEvent {
    AuditEvent {
        epoch,
        kind: kind.into(),
        subject: subject.into(),
        detail: detail.into(),
    }
}

/// Evaluates one policy. Returns `Ok(None)` when nothing fires.
fn evaluate_policy(
    world: &WorldState,
    world_digest: Digest,
    policy: &Policy,
    history: &PlanHistory,
    events: &mut Vec<AuditEvent>,
) -> Option<ActionPlan> {
    let epoch = world.epoch;
    let mut reader = Reader {
        world,
        readings: BTreeMap::new(),
    };
    let missing = |events: &mut Vec<AuditEvent>, p: Predicate| {
        events.push(event(epoch, "escalation", &policy.id, format!("missing-data: {p}; policy paused for epoch")));
    };
    let mut fired = Vec::new();
    for t in &policy.triggers {
        match reader.trigger(t) {
            Ok(true) => fired.push(t.to_string()),
            Ok(false) => {}
            Err(p) => {
                missing(events, p);
                return None;
            }
        }
    }
    if fired.is_empty() {
        return None;
    }
    let holds = match reader.expr(&policy.condition) {
        Ok(h) => h,
        Err(p) => {
            missing(events, p);
            return None;
        }
    };
    if !holds {
        return None;
    }
    if let Some(rate) = policy.limits.rate {
        let recent = history.get(&policy.id).map_or(0, |epochs| {
            epochs
                .iter()
                .filter(|e| **e <= epoch && epoch - **e < rate.window)
                .count() as u64
        });
        if recent >= rate.max_plans {
            events.push(event(epoch, "rate-limited", &policy.id, format!("{recent} plan(s) in window")));
            return None;
        }
    }

    let mut flags = BTreeSet::new();
    let mut actions = Vec::new();
    let mut epoch_budget = policy.limits.per_epoch.map(|c| i128::from(c.raw()));
    for template in &policy.actions {
        let mut params = BTreeMap::new();
        let mut bounds = BTreeMap::new();
        for (name, spec) in &template.params {
            let raw = match reader.operand(&spec.operand) {
                Ok(v) => v,
                Err(p) => {
                    missing(events, p);
                    return None;
                }
            };
            let mut v = raw.clamp(spec.lo, spec.hi);
            if v != raw {
                flags.insert("clipped-to-bound".to_string());
            }
            if let Some(cap) = policy.limits.per_action {
                let capped = v.clamp(Fixed::from_raw(-cap.raw()), cap);
                if capped != v {
                    flags.insert("clipped-per-action".to_string());
                    v = capped;
                }
            }
            if let Some(budget) = epoch_budget.as_mut() {
                let mag = i128::from(v.abs().raw());
                if mag > *budget {
                    flags.insert("clipped-per-epoch".to_string());
                    let allowed = (*budget).max(0) as i64;
                    v = if v.is_negative() { Fixed::from_raw(-allowed) } else { Fixed::from_raw(allowed) };
                }
                *budget -= i128::from(v.abs().raw());
            }
            // Clipping to a cap must not push a value outside its bound.
            if v < spec.lo || v > spec.hi {
                flags.insert("unsatisfiable-bound".to_string());
                events.push(event(epoch, "escalation", &policy.id, format!("caps leave {name} outside its bound")));
                return None;
            }
            params.insert(name.clone(), v);
            bounds.insert(name.clone(), (spec.lo, spec.hi));
        }
        let mut transfers = Vec::new();
        if template.kind == ActionKind::Rebalance {
            let max_move = params["max_move"];
            match plan_rebalance(&world.portfolio, max_move.max(Fixed::ZERO)) {
                Ok(plan) => {
                    if plan.infeasible_within_caps {
                        flags.insert("infeasible-within-caps".to_string());
                    }
                    transfers = plan.transfers;
                }
                Err(e) => {
                    events.push(event(epoch, "escalation", &policy.id, format!("missing-data: {e}")));
                    return None;
                }
            }
        }
        actions.push(PlannedAction {
            kind: template.kind,
            params,
            bounds,
            transfers,
        });
    }
    let clipped = flags.iter().any(|f| f.starts_with("clipped"));
    if clipped && policy.exceptions.contains("clipped") {
        events.push(event(epoch, "escalation", &policy.id, "plan clipped to caps"));
    }
    if flags.contains("infeasible-within-caps") && policy.exceptions.contains("infeasible") {
        events.push(event(epoch, "escalation", &policy.id, "rebalance infeasible within caps"));
    }
    if drift(&world.portfolio).is_ok() {
        // Record drift so the justification captures the portfolio state.
        let _ = reader.read(&Predicate::Drift);
    }
    let mut plan = ActionPlan {
        plan_id: Digest([0; 32]),
        policy_id: policy.id.clone(),
        policy_version: policy.version,
        epoch,
        actions,
        justification: Justification {
            world_digest,
            triggers: fired,
            readings: reader.readings,
            condition: true,
        },
        timelock: (epoch, epoch.saturating_add(policy.timelock)),
        status: PlanStatus::Planned,
        flags,
    };
    plan.plan_id = plan.compute_id();
    Some(plan)
}

/// Evaluates every active policy against `world`, in policy id order.
/// Expired and paused policies emit nothing. Unresolvable predicates pause
/// the policy for this epoch and produce an escalation event.
pub fn evaluate_epoch(
    world: &WorldState,
    policies: &[Policy],
    paused: &BTreeSet<String>,
    history: &PlanHistory,
) -> EpochOutcome {
    let world_digest = world.digest();
    let mut ordered: Vec<&Policy> = policies.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id).then(a.version.cmp(&b.version)));
    let mut out = EpochOutcome::default();
    for policy in ordered {
        if policy.expired_at(world.epoch) || paused.contains(&policy.id) {
            continue;
        }
        if let Some(plan) = evaluate_policy(world, world_digest, policy, history, &mut out.events) {
            out.plans.push(plan);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PortfolioState;

    const TREASURY: &str = "\
policy treasury
version 1
expiry 100
trigger drift-exceeds threshold=0.10
action rebalance max_move=50 in [0, 100]
timelock 2
";

    fn world(h: [i64; 3]) -> WorldState {
        let names = ["defi", "stable", "strategic"];
        let targets = ["0.5", "0.3", "0.2"];
        WorldState {
            epoch: 5,
            portfolio: PortfolioState {
                holdings: names.iter().zip(h).map(|(n, v)| (n.to_string(), Fixed::from_int(v).unwrap())).collect(),
                targets: names.iter().zip(targets).map(|(n, t)| (n.to_string(), t.parse().unwrap())).collect(),
            },
            ..Default::default()
        }
    }

    #[test]
    fn drift_trigger_emits_plan() {
        let p = Policy::parse(TREASURY).unwrap();
        let out = evaluate_epoch(&world([40, 45, 15]), &[p.clone()], &BTreeSet::new(), &PlanHistory::new());
        assert_eq!(out.plans.len(), 1);
        let plan = &out.plans[0];
        assert_eq!(plan.timelock, (5, 7));
        assert!(plan.actions[0].within_bounds(None));
        assert_eq!(plan.plan_id, plan.compute_id());
        // 9% drift stays quiet.
        let out = evaluate_epoch(&world([41, 39, 20]), &[p.clone()], &BTreeSet::new(), &PlanHistory::new());
        assert!(out.plans.is_empty());
        // At target: drift 0.
        let out = evaluate_epoch(&world([50, 30, 20]), &[p], &BTreeSet::new(), &PlanHistory::new());
        assert!(out.plans.is_empty());
    }

    #[test]
    fn missing_data_escalates() {
        let src = TREASURY.replace("timelock 2", "condition treasury_health > 0.5");
        let p = Policy::parse(&src).unwrap();
        let out = evaluate_epoch(&world([40, 45, 15]), &[p], &BTreeSet::new(), &PlanHistory::new());
        assert!(out.plans.is_empty());
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].kind, "escalation");
    }

    #[test]
    fn clipping_and_expiry() {
        let src = "policy pay\nexpiry 5\ntrigger time-elapsed every=1\naction compensate budget=demand * 2 in [0, 100]\nlimit per-action 60\n";
        let p = Policy::parse(src).unwrap();
        let mut w = WorldState {
            epoch: 5,
            demand: Some(Fixed::from_int(80).unwrap()),
            ..Default::default()
        };
        let out = evaluate_epoch(&w, &[p.clone()], &BTreeSet::new(), &PlanHistory::new());
        let plan = &out.plans[0];
        assert_eq!(plan.actions[0].params["budget"], Fixed::from_int(60).unwrap());
        assert!(plan.flags.contains("clipped-to-bound") && plan.flags.contains("clipped-per-action"));
        w.epoch = 6;
        assert!(evaluate_epoch(&w, &[p], &BTreeSet::new(), &PlanHistory::new()).plans.is_empty());
    }

    #[test]
    fn rate_limit() {
        let src = "policy r\nexpiry 50\ntrigger time-elapsed\naction transfer amount=1 in [0, 1]\nlimit rate 1 per 3\n";
        let p = Policy::parse(src).unwrap();
        let w = WorldState {
            epoch: 4,
            ..Default::default()
        };
        let history = PlanHistory::from([("r".to_string(), vec![2])]);
        let out = evaluate_epoch(&w, &[p.clone()], &BTreeSet::new(), &history);
        assert!(out.plans.is_empty());
        let history = PlanHistory::from([("r".to_string(), vec![1])]);
        assert_eq!(evaluate_epoch(&w, &[p], &BTreeSet::new(), &history).plans.len(), 1);
    }
}
