use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codec::{Digest, Fixed};
use crate::policy::{EpochManifest, Policy, PortfolioState, WorldState};
use crate::trust::TrustConfig;
use crate::workload;

use super::{Behavior, OperatorProfile, SettlementOutcome, SimError, SimEvent, TaskInput, TaskKind, TaskRecord, TrustMode, World};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub name: String,
    pub bond: Fixed,
    #[serde(default = "economic")]
    pub mode: TrustMode,
    #[serde(default = "honest")]
    pub behavior: Behavior,
}

fn economic() -> TrustMode {
    TrustMode::Economic
}

fn honest() -> Behavior {
    Behavior::Honest
}

/// Inputs are generated from a seed rather than shipped, so a scenario file
/// stays small.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub seed: u64,
    /// Identities for trust and delegation tasks, evaluations for pipeline
    /// tasks, portfolio value for policy tasks.
    pub size: usize,
    #[serde(default = "default_proposals")]
    pub proposals: usize,
}

fn default_proposals() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub workload: WorkloadSpec,
    pub quorum: (u32, u32),
    pub deadline: u64,
    #[serde(default = "default_reward")]
    pub reward: Fixed,
    #[serde(default = "default_slash")]
    pub slash_fraction: Fixed,
}

fn default_reward() -> Fixed {
    Fixed::from_raw(10 * crate::codec::SCALE)
}

fn default_slash() -> Fixed {
    Fixed::ONE
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_window")]
    pub challenge_window: u64,
    pub operators: Vec<OperatorSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

fn default_window() -> u64 {
    super::DEFAULT_CHALLENGE_WINDOW
}

pub struct ScenarioReport {
    pub outcomes: Vec<SettlementOutcome>,
    pub honest_roots: Vec<Digest>,
    pub events: Vec<SimEvent>,
    pub event_log: String,
    pub fallback: bool,
    pub conserved: bool,
}

pub const TREASURY_POLICY: &str = "\
policy treasury-rebalance
version 1
expiry 1000
trigger drift-exceeds threshold=0.10
action rebalance max_move=drift * 100 in [0, 50]
limit per-epoch 50
exception escalate infeasible
timelock 2
";

fn policy_manifest(seed: u64, size: usize) -> EpochManifest {
    use rand::Rng;
    let mut r = workload::rng(seed);
    let total = size.max(3) as i64;
    let a = r.random_range(0..=total);
    let b = r.random_range(0..=total - a);
    let fx = |n: i64| Fixed::from_int(n).expect("small");
    let portfolio = PortfolioState {
        holdings: [("stable", a), ("defi", b), ("strategic", total - a - b)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), fx(v)))
            .collect(),
        targets: [("stable", "0.3"), ("defi", "0.5"), ("strategic", "0.2")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.parse().expect("constant")))
            .collect(),
    };
    EpochManifest {
        world: WorldState {
            epoch: 1,
            portfolio,
            ..Default::default()
        },
        policies: vec![Policy::parse(TREASURY_POLICY).expect("shipped policy parses")],
        paused: BTreeSet::new(),
        history: Default::default(),
    }
}

pub fn task_input(kind: TaskKind, w: &WorkloadSpec) -> TaskInput {
    match kind {
        TaskKind::TrustScore => {
            let pop = workload::population(w.seed, w.size, 3);
            TaskInput::TrustScore {
                config: TrustConfig::with_seeds(pop.seeds.iter().copied()),
                snapshot: pop.snapshot,
            }
        }
        TaskKind::DelegationResolve => {
            let d = workload::delegation_workload(w.seed, w.size, 0.5);
            TaskInput::DelegationResolve {
                snapshot: d.snapshot,
                trust: d.trust,
                records: d.records,
                proposal: d.proposal,
            }
        }
        TaskKind::PipelineRun => {
            let p = workload::pipeline_workload(w.seed, w.proposals, w.size);
            TaskInput::PipelineRun {
                snapshot: p.population.snapshot,
                trust: p.trust,
                ballots: p.ballots,
                config: p.config,
            }
        }
        TaskKind::PolicyEval => TaskInput::PolicyEval {
            manifest: policy_manifest(w.seed, w.size),
        },
    }
}

/// Registers every task at tick 0, runs to the last deadline, and settles
/// tasks in registration order.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioReport, SimError> {
    let mut world = World::new(s.seed).with_challenge_window(s.challenge_window);
    for op in &s.operators {
        world.add_operator(OperatorProfile::new(&op.name, op.bond, op.mode, op.behavior))?;
    }
    let mut ids = Vec::new();
    let mut honest_roots = Vec::new();
    for t in &s.tasks {
        let input = task_input(t.kind, &t.workload);
        honest_roots.push(input.execute().map_err(SimError::InvalidTask)?);
        let digest = world.pin_input(input);
        let mut rec = TaskRecord::new(t.kind, digest, t.quorum, t.deadline);
        rec.reward = t.reward;
        rec.slash_fraction = t.slash_fraction;
        ids.push(world.register_task(rec)?);
    }
    let last = s.tasks.iter().map(|t| t.deadline).max().unwrap_or(0);
    world.run_until(last);
    let mut outcomes = Vec::new();
    for id in &ids {
        match world.settle(id) {
            Ok(o) => outcomes.push(o),
            // Re-registered duplicates settle once.
            Err(SimError::AlreadySettled(_)) => outcomes.push(world.outcome(id).cloned().expect("settled")),
            Err(e) => return Err(e),
        }
    }
    Ok(ScenarioReport {
        outcomes,
        honest_roots,
        event_log: world.event_log(),
        events: world.events().to_vec(),
        fallback: world.fallback(),
        conserved: world.ledger().conserved(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_from_json() {
        let text = r#"{
            "seed": 11,
            "operators": [
                {"name": "a", "bond": "100"},
                {"name": "b", "bond": "100"},
                {"name": "c", "bond": "100", "behavior": {"kind": "tamper", "seed": 4}},
                {"name": "d", "bond": "100", "mode": "hybrid"},
                {"name": "e", "bond": 100, "behavior": {"kind": "crash"}}
            ],
            "tasks": [
                {"kind": "trust-score", "workload": {"seed": 1, "size": 20}, "quorum": [3, 5], "deadline": 2},
                {"kind": "policy-eval", "workload": {"seed": 2, "size": 100}, "quorum": [3, 5], "deadline": 2}
            ]
        }"#;
        let s: Scenario = serde_json::from_str(text).unwrap();
        let report = run_scenario(&s).unwrap();
        assert_eq!(report.outcomes.len(), 2);
        for (o, honest) in report.outcomes.iter().zip(&report.honest_roots) {
            assert_eq!(o.root, Some(*honest));
            assert_eq!(o.slashed.keys().cloned().collect::<Vec<_>>(), vec!["c", "e"]);
        }
        assert!(report.conserved && !report.fallback);
        let again = run_scenario(&s).unwrap();
        assert_eq!(again.event_log, report.event_log);
    }
}
