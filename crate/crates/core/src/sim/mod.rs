//! Discrete-event simulation of a bonded operator network: task registry,
//! seeded operator assignment, behavior models, signed submissions,
//! threshold settlement with slashing, and challenge-window disputes.
//!
//! Time is an integer tick. A task registered at tick `t` is executed by
//! its operators during the step that reaches `t + 1`; submissions after
//! the deadline are late. Events within a tick are ordered by task id, then
//! operator id.

mod ledger;
mod scenario;
mod task;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{apportion, sha256, Canonical, CodecError, Digest, Fixed, Value};
use crate::identity::{verify_signer, PublicKey, Signature};
use crate::{IdentityId, Keypair};

pub use ledger::Ledger;
pub use scenario::{run_scenario, OperatorSpec, Scenario, ScenarioReport, TaskSpec, WorkloadSpec};
pub use task::{TaskInput, TaskKind};

pub const DEFAULT_CHALLENGE_WINDOW: u64 = 10;
pub const MAX_LAG: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("quorum {threshold}-of-{total} not satisfiable with {operators} eligible operators")]
    BadQuorum { threshold: u32, total: u32, operators: usize },
    #[error("deadline {deadline} is not after the current tick {now}")]
    DeadlinePassed { deadline: u64, now: u64 },
    #[error("no pinned input {0:?}")]
    UnknownInputDigest(Digest),
    #[error("task {0:?} is not due until its deadline")]
    NotYetDue(Digest),
    #[error("task {0:?} is already settled")]
    AlreadySettled(Digest),
    #[error("challenge window for task {0:?} has closed")]
    WindowClosed(Digest),
    #[error("no task {0:?}")]
    NoSuchTask(Digest),
    #[error("task {0:?} recorded no root to dispute")]
    NothingToDispute(Digest),
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrustMode {
    Economic,
    TeeAttested,
    Hybrid,
}

impl TrustMode {
    fn attested(self) -> bool {
        self != TrustMode::Economic
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Behavior {
    Honest,
    Crash,
    Equivocate,
    /// Flips byte `seed % 32` of the root with mask `1 + (seed / 32) % 255`;
    /// operators sharing a seed therefore collude.
    Tamper { seed: u64 },
    /// Submits `delay` ticks after the deadline.
    Laggard { delay: u64 },
}

fn tampered(root: Digest, seed: u64) -> Digest {
    let mut bytes = root.0;
    bytes[(seed % 32) as usize] ^= 1 + ((seed / 32) % 255) as u8;
    Digest(bytes)
}

#[derive(Clone)]
pub struct OperatorProfile {
    pub name: String,
    pub key: Keypair,
    pub bond: Fixed,
    pub mode: TrustMode,
    pub behavior: Behavior,
}

impl OperatorProfile {
    /// Signing key derived from the operator name.
    pub fn new(name: &str, bond: Fixed, mode: TrustMode, behavior: Behavior) -> Self {
        OperatorProfile {
            name: name.into(),
            key: Keypair::from_seed(&format!("operator:{name}")),
            bond,
            mode,
            behavior,
        }
    }

    pub fn id(&self) -> IdentityId {
        self.key.id()
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.bond <= Fixed::ZERO {
            return Err(SimError::InvalidOperator(format!("{}: bond must be positive", self.name)));
        }
        if let Behavior::Laggard { delay } = self.behavior {
            if !(1..=MAX_LAG).contains(&delay) {
                return Err(SimError::InvalidOperator(format!("{}: delay outside 1..={MAX_LAG}", self.name)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskRecord {
    pub kind: TaskKind,
    pub input: Digest,
    pub threshold: u32,
    pub total: u32,
    pub deadline: u64,
    pub reward: Fixed,
    pub slash_fraction: Fixed,
}

impl TaskRecord {
    pub fn new(kind: TaskKind, input: Digest, quorum: (u32, u32), deadline: u64) -> Self {
        TaskRecord {
            kind,
            input,
            threshold: quorum.0,
            total: quorum.1,
            deadline,
            reward: Fixed::from_int(10).expect("constant"),
            slash_fraction: Fixed::ONE,
        }
    }

    pub fn id(&self) -> Digest {
        self.digest()
    }
}

impl Canonical for TaskRecord {
    fn to_value(&self) -> Value {
        Value::map([
            ("kind", Value::str(self.kind.as_str())),
            ("input", Value::Digest(self.input)),
            ("threshold", self.threshold.to_value()),
            ("total", self.total.to_value()),
            ("deadline", self.deadline.to_value()),
            ("reward", Value::Fixed(self.reward)),
            ("slash_fraction", Value::Fixed(self.slash_fraction)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let kind = v.field("kind")?.as_str()?;
        Ok(TaskRecord {
            kind: TaskKind::parse(kind).ok_or_else(|| CodecError::Shape(format!("unknown task kind {kind:?}")))?,
            input: v.field("input")?.as_digest()?,
            threshold: u32::from_value(v.field("threshold")?)?,
            total: u32::from_value(v.field("total")?)?,
            deadline: v.field("deadline")?.as_u64()?,
            reward: v.field("reward")?.as_fixed()?,
            slash_fraction: v.field("slash_fraction")?.as_fixed()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResultSubmission {
    pub task: Digest,
    pub operator: String,
    pub operator_key: PublicKey,
    pub root: Digest,
    /// Enclave attestation tag, present for attested trust modes.
    pub tag: Option<Digest>,
    pub submitted_at: u64,
    pub signature: Signature,
}

fn enclave_tag(operator: &IdentityId, task: &Digest, root: &Digest) -> Digest {
    let mut buf = b"enclave-attestation".to_vec();
    buf.extend_from_slice(operator.as_bytes());
    buf.extend_from_slice(task.as_bytes());
    buf.extend_from_slice(root.as_bytes());
    sha256(&buf)
}

impl ResultSubmission {
    fn signed_value(&self) -> Value {
        Value::map([
            ("type", Value::str("submission")),
            ("task", Value::Digest(self.task)),
            ("operator", Value::str(&self.operator)),
            ("operator_key", self.operator_key.to_value()),
            ("root", Value::Digest(self.root)),
            ("tag", self.tag.to_value()),
            ("submitted_at", self.submitted_at.to_value()),
        ])
    }

    pub fn sign(op: &OperatorProfile, task: Digest, root: Digest, submitted_at: u64) -> Self {
        let tag = op.mode.attested().then(|| enclave_tag(&op.id(), &task, &root));
        let mut s = ResultSubmission {
            task,
            operator: op.name.clone(),
            operator_key: op.key.public(),
            root,
            tag,
            submitted_at,
            signature: Signature([0; 64]),
        };
        s.signature = op.key.sign(&s.signed_value().encode());
        s
    }

    pub fn verify(&self, op: &OperatorProfile) -> bool {
        let tag_ok = if op.mode.attested() {
            self.tag == Some(enclave_tag(&op.id(), &self.task, &self.root))
        } else {
            true
        };
        tag_ok && verify_signer(&op.id(), &self.operator_key, &self.signed_value().encode(), &self.signature)
    }
}

impl Canonical for ResultSubmission {
    fn to_value(&self) -> Value {
        let mut v = self.signed_value();
        if let Value::Map(m) = &mut v {
            m.insert(b"signature".to_vec(), self.signature.to_value());
        }
        v
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(ResultSubmission {
            task: v.field("task")?.as_digest()?,
            operator: v.field("operator")?.as_str()?.to_owned(),
            operator_key: PublicKey::from_value(v.field("operator_key")?)?,
            root: v.field("root")?.as_digest()?,
            tag: Option::from_value(v.field("tag")?)?,
            submitted_at: v.field("submitted_at")?.as_u64()?,
            signature: Signature::from_value(v.field("signature")?)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SettlementStatus {
    Accepted,
    RejectedNoQuorum,
}

impl SettlementStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SettlementStatus::Accepted => "accepted",
            SettlementStatus::RejectedNoQuorum => "rejected-no-quorum",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisputeRecord {
    pub challenger: IdentityId,
    pub evidence: Digest,
    pub bond: Fixed,
    pub opened_at: u64,
    pub upheld: bool,
}

impl Canonical for DisputeRecord {
    fn to_value(&self) -> Value {
        Value::map([
            ("challenger", self.challenger.to_value()),
            ("evidence", Value::Digest(self.evidence)),
            ("bond", Value::Fixed(self.bond)),
            ("opened_at", self.opened_at.to_value()),
            ("upheld", Value::Bool(self.upheld)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(DisputeRecord {
            challenger: IdentityId::from_value(v.field("challenger")?)?,
            evidence: v.field("evidence")?.as_digest()?,
            bond: v.field("bond")?.as_fixed()?,
            opened_at: v.field("opened_at")?.as_u64()?,
            upheld: v.field("upheld")?.as_bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettlementOutcome {
    pub task: Digest,
    pub status: SettlementStatus,
    pub root: Option<Digest>,
    pub paid: BTreeMap<String, Fixed>,
    pub slashed: BTreeMap<String, Fixed>,
    pub challenge_window: (u64, u64),
    pub disputes: Vec<DisputeRecord>,
}

impl Canonical for SettlementOutcome {
    fn to_value(&self) -> Value {
        Value::map([
            ("task", Value::Digest(self.task)),
            ("status", Value::str(self.status.as_str())),
            ("root", self.root.to_value()),
            ("paid", self.paid.to_value()),
            ("slashed", self.slashed.to_value()),
            ("challenge_window", self.challenge_window.to_value()),
            ("disputes", self.disputes.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let status = match v.field("status")?.as_str()? {
            "accepted" => SettlementStatus::Accepted,
            "rejected-no-quorum" => SettlementStatus::RejectedNoQuorum,
            s => return Err(CodecError::Shape(format!("unknown settlement status {s:?}"))),
        };
        Ok(SettlementOutcome {
            task: v.field("task")?.as_digest()?,
            status,
            root: Option::from_value(v.field("root")?)?,
            paid: BTreeMap::from_value(v.field("paid")?)?,
            slashed: BTreeMap::from_value(v.field("slashed")?)?,
            challenge_window: <(u64, u64)>::from_value(v.field("challenge_window")?)?,
            disputes: Vec::from_value(v.field("disputes")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub tick: u64,
    pub kind: String,
    pub task: Option<Digest>,
    pub operator: Option<String>,
    pub detail: String,
}

impl Canonical for SimEvent {
    fn to_value(&self) -> Value {
        Value::map([
            ("tick", self.tick.to_value()),
            ("kind", Value::str(&self.kind)),
            ("task", self.task.to_value()),
            ("operator", self.operator.to_value()),
            ("detail", Value::str(&self.detail)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(SimEvent {
            tick: v.field("tick")?.as_u64()?,
            kind: v.field("kind")?.as_str()?.to_owned(),
            task: Option::from_value(v.field("task")?)?,
            operator: Option::from_value(v.field("operator")?)?,
            detail: v.field("detail")?.as_str()?.to_owned(),
        })
    }
}

#[derive(Clone, Debug)]
struct TaskState {
    record: TaskRecord,
    registered_at: u64,
    assigned: Vec<String>,
    executed: bool,
    /// First on-time, valid submission per operator.
    accepted: BTreeMap<String, ResultSubmission>,
    late: BTreeSet<String>,
    equivocated: BTreeSet<String>,
    outcome: Option<SettlementOutcome>,
}

pub struct World {
    seed: u64,
    tick: u64,
    challenge_window: u64,
    operators: BTreeMap<String, OperatorProfile>,
    inputs: BTreeMap<Digest, TaskInput>,
    tasks: BTreeMap<Digest, TaskState>,
    /// Laggard submissions waiting for their delivery tick.
    pending: Vec<ResultSubmission>,
    events: Vec<SimEvent>,
    ledger: Ledger,
    fallback: bool,
}

impl World {
    pub fn new(seed: u64) -> Self {
        World {
            seed,
            tick: 0,
            challenge_window: DEFAULT_CHALLENGE_WINDOW,
            operators: BTreeMap::new(),
            inputs: BTreeMap::new(),
            tasks: BTreeMap::new(),
            pending: Vec::new(),
            events: Vec::new(),
            ledger: Ledger::default(),
            fallback: false,
        }
    }

    pub fn with_challenge_window(mut self, ticks: u64) -> Self {
        self.challenge_window = ticks;
        self
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Raised when any task fails to reach quorum.
    pub fn fallback(&self) -> bool {
        self.fallback
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn operator(&self, name: &str) -> Option<&OperatorProfile> {
        self.operators.get(name)
    }

    pub fn outcome(&self, task: &Digest) -> Option<&SettlementOutcome> {
        self.tasks.get(task).and_then(|t| t.outcome.as_ref())
    }

    pub fn assigned(&self, task: &Digest) -> Option<&[String]> {
        self.tasks.get(task).map(|t| t.assigned.as_slice())
    }

    fn log(&mut self, kind: &str, task: Option<Digest>, operator: Option<&str>, detail: impl Into<String>) {
        self.events.push(SimEvent {
            tick: self.tick,
            kind: kind.into(),
            task,
            operator: operator.map(str::to_owned),
            detail: detail.into(),
        });
    }

    pub fn add_operator(&mut self, op: OperatorProfile) -> Result<(), SimError> {
        op.validate()?;
        if self.operators.contains_key(&op.name) {
            return Err(SimError::InvalidOperator(format!("duplicate operator {}", op.name)));
        }
        self.ledger.deposit_bond(&op.name, op.bond)?;
        self.log("operator", None, Some(&op.name), format!("bond {} mode {:?} behavior {:?}", op.bond, op.mode, op.behavior));
        self.operators.insert(op.name.clone(), op);
        Ok(())
    }

    pub fn pin_input(&mut self, input: TaskInput) -> Digest {
        let d = input.digest();
        self.inputs.entry(d).or_insert(input);
        d
    }

    pub fn input(&self, digest: &Digest) -> Option<&TaskInput> {
        self.inputs.get(digest)
    }

    /// Registers a task and assigns `total` operators by a seeded shuffle
    /// of operators with a positive bond. Registering the same record again
    /// returns the same id without effect.
    pub fn register_task(&mut self, record: TaskRecord) -> Result<Digest, SimError> {
        let id = record.id();
        if self.tasks.contains_key(&id) {
            return Ok(id);
        }
        let input = self.inputs.get(&record.input).ok_or(SimError::UnknownInputDigest(record.input))?;
        if input.kind() != record.kind {
            return Err(SimError::InvalidTask(format!("input is a {} task, record says {}", input.kind(), record.kind)));
        }
        let eligible: Vec<String> = self
            .operators
            .iter()
            .filter(|(n, _)| self.ledger.bond(n) > Fixed::ZERO)
            .map(|(n, _)| n.clone())
            .collect();
        if record.threshold == 0 || record.threshold > record.total || record.total as usize > eligible.len() {
            return Err(SimError::BadQuorum {
                threshold: record.threshold,
                total: record.total,
                operators: eligible.len(),
            });
        }
        if record.deadline <= self.tick {
            return Err(SimError::DeadlinePassed {
                deadline: record.deadline,
                now: self.tick,
            });
        }
        if record.reward.is_negative() || record.slash_fraction < Fixed::ZERO || record.slash_fraction > Fixed::ONE {
            return Err(SimError::InvalidTask("reward must be non-negative and slash fraction in [0, 1]".into()));
        }
        let mut seed = [0u8; 32];
        let mut buf = self.seed.to_be_bytes().to_vec();
        buf.extend_from_slice(id.as_bytes());
        seed.copy_from_slice(sha256(&buf).as_bytes());
        let mut order = eligible;
        order.shuffle(&mut ChaCha8Rng::from_seed(seed));
        let mut assigned: Vec<String> = order.into_iter().take(record.total as usize).collect();
        assigned.sort();
        self.ledger.fund_reward(record.reward)?;
        self.log("register", Some(id), None, format!("{} {}-of-{} deadline {}", record.kind, record.threshold, record.total, record.deadline));
        self.log("assign", Some(id), None, assigned.join(","));
        self.tasks.insert(
            id,
            TaskState {
                record,
                registered_at: self.tick,
                assigned,
                executed: false,
                accepted: BTreeMap::new(),
                late: BTreeSet::new(),
                equivocated: BTreeSet::new(),
                outcome: None,
            },
        );
        Ok(id)
    }

    fn receive(&mut self, sub: ResultSubmission) {
        let task = sub.task;
        let Some(op) = self.operators.get(&sub.operator) else {
            return;
        };
        let valid = sub.verify(op);
        let Some(state) = self.tasks.get_mut(&task) else {
            return;
        };
        let (kind, detail) = if !valid {
            ("reject-submission", "bad signature or enclave tag".to_string())
        } else if !state.assigned.contains(&sub.operator) {
            ("reject-submission", "operator not assigned".to_string())
        } else if state.outcome.is_some() || sub.submitted_at > state.record.deadline {
            state.late.insert(sub.operator.clone());
            ("late", format!("root {} after deadline {}", sub.root.short(), state.record.deadline))
        } else if let Some(prev) = state.accepted.get(&sub.operator) {
            if prev.root != sub.root {
                state.equivocated.insert(sub.operator.clone());
                ("equivocation", format!("second root {} rejected", sub.root.short()))
            } else {
                ("duplicate", "repeat submission ignored".to_string())
            }
        } else {
            let root = sub.root;
            state.accepted.insert(sub.operator.clone(), sub.clone());
            ("submit", format!("root {}", root.short()))
        };
        let name = sub.operator.clone();
        self.log(kind, Some(task), Some(&name), detail);
    }

    /// Advances one tick: delivers due laggard submissions and runs every
    /// task whose execution tick has arrived.
    pub fn step(&mut self) -> Vec<SimEvent> {
        let start = self.events.len();
        self.tick += 1;
        let now = self.tick;
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending).into_iter().partition(|s| s.submitted_at <= now);
        self.pending = later;
        for s in due {
            self.receive(s);
        }
        let ready: Vec<Digest> = self
            .tasks
            .iter()
            .filter(|(_, t)| !t.executed && t.registered_at < now)
            .map(|(id, _)| *id)
            .collect();
        for id in ready {
            self.execute(id, now);
        }
        self.events[start..].to_vec()
    }

    fn execute(&mut self, id: Digest, now: u64) {
        let state = self.tasks.get_mut(&id).expect("listed task");
        state.executed = true;
        let input = &self.inputs[&state.record.input];
        let deadline = state.record.deadline;
        let ops: Vec<&OperatorProfile> = state.assigned.iter().map(|n| &self.operators[n]).collect();
        // Each operator recomputes from the pinned input.
        let results: Vec<Result<Digest, String>> = crate::par::map(&ops, |op| match op.behavior {
            Behavior::Crash => Err("crashed".into()),
            _ => input.execute(),
        });
        let mut outgoing = Vec::new();
        let mut notes = Vec::new();
        for (op, result) in ops.iter().zip(results) {
            let honest = match result {
                Ok(r) => r,
                Err(e) => {
                    notes.push((op.name.clone(), "no-submission", e));
                    continue;
                }
            };
            match op.behavior {
                Behavior::Honest | Behavior::Crash => outgoing.push(ResultSubmission::sign(op, id, honest, now)),
                Behavior::Tamper { seed } => {
                    if op.mode.attested() {
                        notes.push((op.name.clone(), "tamper-inert", "enclave blocks tampering".into()));
                        outgoing.push(ResultSubmission::sign(op, id, honest, now));
                    } else {
                        outgoing.push(ResultSubmission::sign(op, id, tampered(honest, seed), now));
                    }
                }
                Behavior::Equivocate => {
                    outgoing.push(ResultSubmission::sign(op, id, honest, now));
                    outgoing.push(ResultSubmission::sign(op, id, tampered(honest, now), now));
                }
                Behavior::Laggard { delay } => {
                    let at = deadline.max(now) + delay;
                    notes.push((op.name.clone(), "delayed", format!("submission held until tick {at}")));
                    self.pending.push(ResultSubmission::sign(op, id, honest, at));
                }
            }
        }
        for (op, kind, detail) in notes {
            self.log(kind, Some(id), Some(&op), detail);
        }
        for s in outgoing {
            self.receive(s);
        }
    }

    /// Runs `step` until the tick reaches `tick`.
    pub fn run_until(&mut self, tick: u64) {
        while self.tick < tick {
            self.step();
        }
    }

    pub fn settle(&mut self, id: &Digest) -> Result<SettlementOutcome, SimError> {
        let state = self.tasks.get(id).ok_or(SimError::NoSuchTask(*id))?;
        if state.outcome.is_some() {
            return Err(SimError::AlreadySettled(*id));
        }
        if self.tick < state.record.deadline {
            return Err(SimError::NotYetDue(*id));
        }
        let record = state.record.clone();
        let mut groups: BTreeMap<Digest, Vec<String>> = BTreeMap::new();
        for (op, sub) in &state.accepted {
            if !state.equivocated.contains(op) {
                groups.entry(sub.root).or_default().push(op.clone());
            }
        }
        // Largest group; ties go to the lowest root.
        let best = groups
            .iter()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| b.0.cmp(a.0)))
            .map(|(r, ops)| (*r, ops.clone()));
        let quorum = best.filter(|(_, ops)| ops.len() >= record.threshold as usize);
        let assigned = state.assigned.clone();
        let equivocated = state.equivocated.clone();
        let absent: BTreeSet<String> =
            assigned.iter().filter(|o| !state.accepted.contains_key(*o)).cloned().collect();

        let mut paid = BTreeMap::new();
        let mut slashed = BTreeMap::new();
        let (status, root) = match quorum {
            Some((root, matching)) => {
                let shares = apportion(record.reward, &vec![Fixed::ONE; matching.len()])?;
                for (op, share) in matching.iter().zip(shares) {
                    self.ledger.pay(op, share)?;
                    paid.insert(op.clone(), share);
                }
                for op in assigned.iter().filter(|o| !matching.contains(o)) {
                    let amount = self.ledger.slash(op, record.slash_fraction)?;
                    slashed.insert(op.clone(), amount);
                }
                (SettlementStatus::Accepted, Some(root))
            }
            None => {
                // Without an agreed root only objectively provable faults are
                // punished: missing the deadline and equivocating.
                self.ledger.refund_reward(record.reward)?;
                for op in assigned.iter().filter(|o| absent.contains(*o) || equivocated.contains(*o)) {
                    let amount = self.ledger.slash(op, record.slash_fraction)?;
                    slashed.insert(op.clone(), amount);
                }
                self.fallback = true;
                (SettlementStatus::RejectedNoQuorum, None)
            }
        };
        let outcome = SettlementOutcome {
            task: *id,
            status,
            root,
            paid,
            slashed,
            challenge_window: (self.tick, self.tick + self.challenge_window),
            disputes: Vec::new(),
        };
        match root {
            Some(r) => self.log("settle", Some(*id), None, format!("accepted root {}", r.short())),
            None => self.log("fallback", Some(*id), None, "no quorum; fallback flag raised"),
        }
        for (op, amount) in &outcome.slashed {
            self.log("slash", Some(*id), Some(op), amount.to_string());
        }
        for (op, amount) in &outcome.paid {
            self.log("pay", Some(*id), Some(op), amount.to_string());
        }
        self.tasks.get_mut(id).expect("checked").outcome = Some(outcome.clone());
        Ok(outcome)
    }

    /// Challenges a settled root with a recomputed one. The simulator
    /// recomputes honestly; a correct challenge reverses the settlement and
    /// slashes the operators that agreed on the wrong root, otherwise the
    /// challenger's bond is forfeited.
    pub fn open_dispute(
        &mut self,
        id: &Digest,
        challenger: IdentityId,
        evidence: Digest,
        bond: Fixed,
    ) -> Result<DisputeRecord, SimError> {
        let state = self.tasks.get(id).ok_or(SimError::NoSuchTask(*id))?;
        let outcome = state.outcome.clone().ok_or(SimError::NoSuchTask(*id))?;
        if self.tick >= outcome.challenge_window.1 {
            return Err(SimError::WindowClosed(*id));
        }
        let settled = outcome.root.ok_or(SimError::NothingToDispute(*id))?;
        let honest = self.inputs[&state.record.input].execute().ok();
        let upheld = honest == Some(evidence) && evidence != settled;
        let record = DisputeRecord {
            challenger,
            evidence,
            bond,
            opened_at: self.tick,
            upheld,
        };
        let slash_fraction = state.record.slash_fraction;
        let accepted = state.accepted.clone();
        let mut outcome = outcome;
        if upheld {
            // Undo the original settlement, then settle on the honest root.
            for (op, share) in std::mem::take(&mut outcome.paid) {
                self.ledger.claw_back(&op, share)?;
            }
            for (op, amount) in std::mem::take(&mut outcome.slashed) {
                self.ledger.restore(&op, amount)?;
            }
            let correct: Vec<String> = accepted.iter().filter(|(_, s)| s.root == evidence).map(|(o, _)| o.clone()).collect();
            let reward = self.tasks[id].record.reward;
            if correct.is_empty() {
                self.ledger.refund_reward(reward)?;
            } else {
                let shares = apportion(reward, &vec![Fixed::ONE; correct.len()])?;
                for (op, share) in correct.iter().zip(shares) {
                    self.ledger.pay(op, share)?;
                    outcome.paid.insert(op.clone(), share);
                }
            }
            for op in self.tasks[id].assigned.clone() {
                if !correct.contains(&op) {
                    let amount = self.ledger.slash(&op, slash_fraction)?;
                    outcome.slashed.insert(op, amount);
                }
            }
            outcome.root = Some(evidence);
            self.log("reversal", Some(*id), None, format!("root {} replaced by {}", settled.short(), evidence.short()));
            for (op, amount) in outcome.slashed.clone() {
                self.log("slash", Some(*id), Some(&op), amount.to_string());
            }
        } else {
            self.ledger.forfeit_dispute_bond(bond)?;
            self.log("dispute-rejected", Some(*id), None, format!("challenger {} forfeits {bond}", challenger.short()));
        }
        outcome.disputes.push(record.clone());
        self.tasks.get_mut(id).expect("checked").outcome = Some(outcome);
        Ok(record)
    }

    /// Line-delimited canonical event log.
    pub fn event_log(&self) -> String {
        crate::codec::encode_lines(&self.events)
    }
}
