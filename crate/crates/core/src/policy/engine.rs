use std::collections::{BTreeMap, BTreeSet};

use crate::attestation::GraphSnapshot;
use crate::codec::{Canonical, CodecError, Digest, Value};
use crate::IdentityId;

use super::eval::{evaluate_epoch, ActionPlan, PlanHistory, PlanStatus, PlannedAction};
use super::{Policy, PolicyError, WorldState};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditEvent {
    pub epoch: u64,
    /// install, escalation, rate-limited, pause, resume, veto, execute, expire.
    pub kind: String,
    pub subject: String,
    pub detail: String,
}

impl Canonical for AuditEvent {
    fn to_value(&self) -> Value {
        Value::map([
            ("epoch", self.epoch.to_value()),
            ("kind", Value::str(&self.kind)),
            ("subject", Value::str(&self.subject)),
            ("detail", Value::str(&self.detail)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(AuditEvent {
            epoch: v.field("epoch")?.as_u64()?,
            kind: v.field("kind")?.as_str()?.to_owned(),
            subject: v.field("subject")?.as_str()?.to_owned(),
            detail: v.field("detail")?.as_str()?.to_owned(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub plan_id: Digest,
    pub policy_id: String,
    pub epoch: u64,
    pub status: PlanStatus,
    pub actions: Vec<PlannedAction>,
}

impl Canonical for Execution {
    fn to_value(&self) -> Value {
        Value::map([
            ("plan_id", Value::Digest(self.plan_id)),
            ("policy_id", Value::str(&self.policy_id)),
            ("epoch", self.epoch.to_value()),
            ("status", Value::str(self.status.as_str())),
            ("actions", self.actions.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let status = match v.field("status")?.as_str()? {
            "executed" => PlanStatus::Executed,
            "expired" => PlanStatus::Expired,
            s => return Err(CodecError::Shape(format!("execution status {s:?}"))),
        };
        Ok(Execution {
            plan_id: v.field("plan_id")?.as_digest()?,
            policy_id: v.field("policy_id")?.as_str()?.to_owned(),
            epoch: v.field("epoch")?.as_u64()?,
            status,
            actions: Vec::from_value(v.field("actions")?)?,
        })
    }
}

/// Everything evaluation read in one epoch. Replaying it reproduces the
/// epoch's plans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochManifest {
    pub world: WorldState,
    pub policies: Vec<Policy>,
    pub paused: BTreeSet<String>,
    pub history: PlanHistory,
}

impl Canonical for EpochManifest {
    fn to_value(&self) -> Value {
        Value::map([
            ("world", self.world.to_value()),
            ("policies", self.policies.to_value()),
            ("paused", self.paused.to_value()),
            ("history", self.history.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(EpochManifest {
            world: WorldState::from_value(v.field("world")?)?,
            policies: Vec::from_value(v.field("policies")?)?,
            paused: BTreeSet::from_value(v.field("paused")?)?,
            history: BTreeMap::from_value(v.field("history")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochRecord {
    pub manifest: EpochManifest,
    pub executions: Vec<Execution>,
    pub plans: Vec<ActionPlan>,
    pub events: Vec<AuditEvent>,
}

impl Canonical for EpochRecord {
    fn to_value(&self) -> Value {
        Value::map([
            ("manifest", self.manifest.to_value()),
            ("executions", self.executions.to_value()),
            ("plans", self.plans.to_value()),
            ("events", self.events.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(EpochRecord {
            manifest: EpochManifest::from_value(v.field("manifest")?)?,
            executions: Vec::from_value(v.field("executions")?)?,
            plans: Vec::from_value(v.field("plans")?)?,
            events: Vec::from_value(v.field("events")?)?,
        })
    }
}

/// Re-evaluates a recorded epoch.
pub fn replay_epoch(manifest: &EpochManifest) -> Vec<ActionPlan> {
    evaluate_epoch(&manifest.world, &manifest.policies, &manifest.paused, &manifest.history).plans
}

/// Per-policy difference between what the active and candidate policy sets
/// would plan against the same world. Policies that agree are omitted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShadowDiff {
    pub changed: BTreeMap<String, (Option<Vec<PlannedAction>>, Option<Vec<PlannedAction>>)>,
}

impl ShadowDiff {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
    }
}

pub fn shadow_diff(world: &WorldState, active: &[Policy], candidate: &[Policy], history: &PlanHistory) -> ShadowDiff {
    let paused = BTreeSet::new();
    let by_policy = |policies: &[Policy]| -> BTreeMap<String, Vec<PlannedAction>> {
        evaluate_epoch(world, policies, &paused, history)
            .plans
            .into_iter()
            .map(|p| (p.policy_id, p.actions))
            .collect()
    };
    let a = by_policy(active);
    let b = by_policy(candidate);
    let ids: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let changed = ids
        .into_iter()
        .filter_map(|id| {
            let (x, y) = (a.get(id).cloned(), b.get(id).cloned());
            (x != y).then(|| (id.clone(), (x, y)))
        })
        .collect();
    ShadowDiff { changed }
}

/// Holds installed policies and pending plans across epochs.
#[derive(Clone, Debug)]
pub struct PolicyEngine {
    policies: BTreeMap<String, Policy>,
    paused: BTreeSet<String>,
    plans: BTreeMap<Digest, ActionPlan>,
    history: PlanHistory,
    audit: Vec<AuditEvent>,
    executions: Vec<Execution>,
    /// Attestation schema whose holders may pause, resume and veto.
    pause_schema: String,
}

impl PolicyEngine {
    pub fn new(pause_schema: impl Into<String>) -> Self {
        PolicyEngine {
            policies: BTreeMap::new(),
            paused: BTreeSet::new(),
            plans: BTreeMap::new(),
            history: PlanHistory::new(),
            audit: Vec::new(),
            executions: Vec::new(),
            pause_schema: pause_schema.into(),
        }
    }

    /// Installs or replaces the policy with the same id.
    pub fn install(&mut self, policy: Policy, epoch: u64) {
        self.audit.push(AuditEvent {
            epoch,
            kind: "install".into(),
            subject: policy.id.clone(),
            detail: format!("version {} digest {}", policy.version, policy.digest().short()),
        });
        self.policies.insert(policy.id.clone(), policy);
    }

    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.policies.values()
    }

    pub fn plans(&self) -> impl Iterator<Item = &ActionPlan> {
        self.plans.values()
    }

    pub fn plan(&self, id: &Digest) -> Option<&ActionPlan> {
        self.plans.get(id)
    }

    pub fn audit(&self) -> &[AuditEvent] {
        &self.audit
    }

    pub fn executions(&self) -> &[Execution] {
        &self.executions
    }

    pub fn history(&self) -> &PlanHistory {
        &self.history
    }

    pub fn is_paused(&self, policy: &str) -> bool {
        self.paused.contains(policy)
    }

    fn authorize(&self, authority: &IdentityId, snapshot: &GraphSnapshot) -> Result<(), PolicyError> {
        if snapshot.holds_schema(authority, &self.pause_schema) {
            Ok(())
        } else {
            Err(PolicyError::NotAuthorized(*authority))
        }
    }

    /// Stops evaluation and execution for `policy` until resumed.
    pub fn pause(
        &mut self,
        policy: &str,
        authority: &IdentityId,
        snapshot: &GraphSnapshot,
        epoch: u64,
    ) -> Result<(), PolicyError> {
        self.authorize(authority, snapshot)?;
        if !self.policies.contains_key(policy) {
            return Err(PolicyError::UnknownPolicy(policy.into()));
        }
        if self.paused.insert(policy.to_string()) {
            self.audit.push(AuditEvent {
                epoch,
                kind: "pause".into(),
                subject: policy.into(),
                detail: format!("by {authority}"),
            });
        }
        Ok(())
    }

    pub fn resume(
        &mut self,
        policy: &str,
        authority: &IdentityId,
        snapshot: &GraphSnapshot,
        epoch: u64,
    ) -> Result<(), PolicyError> {
        self.authorize(authority, snapshot)?;
        if self.paused.remove(policy) {
            self.audit.push(AuditEvent {
                epoch,
                kind: "resume".into(),
                subject: policy.into(),
                detail: format!("by {authority}"),
            });
        }
        Ok(())
    }

    /// Vetoes a pending plan while its timelock window is open.
    pub fn veto(
        &mut self,
        plan_id: &Digest,
        authority: &IdentityId,
        snapshot: &GraphSnapshot,
        epoch: u64,
    ) -> Result<(), PolicyError> {
        self.authorize(authority, snapshot)?;
        let plan = self.plans.get_mut(plan_id).ok_or(PolicyError::UnknownPlan(*plan_id))?;
        if plan.status != PlanStatus::Planned || epoch >= plan.timelock.1 || epoch < plan.timelock.0 {
            return Err(PolicyError::WindowClosed(*plan_id));
        }
        plan.status = PlanStatus::Vetoed;
        self.audit.push(AuditEvent {
            epoch,
            kind: "veto".into(),
            subject: plan.policy_id.clone(),
            detail: format!("plan {} by {authority}", plan_id.short()),
        });
        Ok(())
    }

    /// Advances to `world.epoch`: executes plans whose window has closed,
    /// then evaluates every active policy.
    pub fn step(&mut self, world: &WorldState) -> EpochRecord {
        let epoch = world.epoch;
        let mut executions = Vec::new();
        let mut events = Vec::new();
        for plan in self.plans.values_mut() {
            if plan.status != PlanStatus::Planned || plan.timelock.1 > epoch || self.paused.contains(&plan.policy_id) {
                continue;
            }
            let expired = self.policies.get(&plan.policy_id).is_none_or(|p| p.expired_at(epoch));
            plan.status = if expired { PlanStatus::Expired } else { PlanStatus::Executed };
            events.push(AuditEvent {
                epoch,
                kind: if expired { "expire" } else { "execute" }.into(),
                subject: plan.policy_id.clone(),
                detail: format!("plan {}", plan.plan_id.short()),
            });
            executions.push(Execution {
                plan_id: plan.plan_id,
                policy_id: plan.policy_id.clone(),
                epoch,
                status: plan.status,
                actions: plan.actions.clone(),
            });
        }

        let manifest = EpochManifest {
            world: world.clone(),
            policies: self.policies.values().cloned().collect(),
            paused: self.paused.clone(),
            history: self.history.clone(),
        };
        let outcome = evaluate_epoch(world, &manifest.policies, &manifest.paused, &manifest.history);
        events.extend(outcome.events);
        for plan in &outcome.plans {
            self.history.entry(plan.policy_id.clone()).or_default().push(epoch);
            self.plans.insert(plan.plan_id, plan.clone());
        }
        self.audit.extend(events.iter().cloned());
        self.executions.extend(executions.iter().cloned());
        EpochRecord {
            manifest,
            executions,
            plans: outcome.plans,
            events,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{Attestation, AttestationStore, Schema};
    use crate::codec::Fixed;
    use crate::Keypair;

    const POLICY: &str = "policy grants\nexpiry 20\ntrigger time-elapsed every=2\naction transfer amount=3 in [0, 5]\ntimelock 2\n";

    fn guardian_snapshot() -> (Keypair, Keypair, GraphSnapshot) {
        let council = Keypair::from_seed("council");
        let guardian = Keypair::from_seed("guardian");
        let mut store = AttestationStore::new();
        store.register_schema(Schema::new("guardian", true)).unwrap();
        let a = Attestation::issue(&council, "guardian", guardian.id(), Fixed::ONE, Default::default(), 1, None);
        store.submit_attestation(a).unwrap();
        let snap = store.take_snapshot(1).unwrap();
        (council, guardian, snap)
    }

    fn world(epoch: u64) -> WorldState {
        WorldState {
            epoch,
            ..Default::default()
        }
    }

    #[test]
    fn plans_execute_after_timelock_and_replay() {
        let mut engine = PolicyEngine::new("guardian");
        engine.install(Policy::parse(POLICY).unwrap(), 0);
        let r2 = engine.step(&world(2));
        assert_eq!(r2.plans.len(), 1);
        assert_eq!(replay_epoch(&r2.manifest), r2.plans);
        assert!(engine.step(&world(3)).executions.is_empty());
        let r4 = engine.step(&world(4));
        assert_eq!(r4.executions.len(), 1);
        assert_eq!(r4.executions[0].plan_id, r2.plans[0].plan_id);
        let decoded = EpochRecord::from_value(&r4.to_value()).unwrap();
        assert_eq!(decoded, r4);
    }

    #[test]
    fn veto_and_pause_need_authority() {
        let (council, guardian, snap) = guardian_snapshot();
        let mut engine = PolicyEngine::new("guardian");
        engine.install(Policy::parse(POLICY).unwrap(), 0);
        let plan = engine.step(&world(2)).plans[0].plan_id;
        assert!(matches!(engine.veto(&plan, &council.id(), &snap, 3), Err(PolicyError::NotAuthorized(_))));
        engine.veto(&plan, &guardian.id(), &snap, 3).unwrap();
        assert!(engine.step(&world(4)).executions.is_empty());

        engine.pause("grants", &guardian.id(), &snap, 4).unwrap();
        assert!(engine.step(&world(6)).plans.is_empty());
        assert_eq!(engine.audit().iter().filter(|e| e.kind == "pause").count(), 1);
    }

    #[test]
    fn veto_after_window_fails() {
        let (_, guardian, snap) = guardian_snapshot();
        let mut engine = PolicyEngine::new("guardian");
        engine.install(Policy::parse(POLICY).unwrap(), 0);
        let plan = engine.step(&world(2)).plans[0].plan_id;
        assert_eq!(engine.veto(&plan, &guardian.id(), &snap, 4), Err(PolicyError::WindowClosed(plan)));
    }

    #[test]
    fn shadow_mode_reports_differences() {
        let active = Policy::parse(POLICY).unwrap();
        let candidate = Policy::parse(&POLICY.replace("amount=3", "amount=4")).unwrap();
        let diff = shadow_diff(&world(2), &[active.clone()], &[candidate], &PlanHistory::new());
        assert_eq!(diff.changed.len(), 1);
        assert!(shadow_diff(&world(2), &[active.clone()], &[active], &PlanHistory::new()).is_empty());
    }
}
