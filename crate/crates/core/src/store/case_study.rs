use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attestation::GraphSnapshot;
use crate::codec::{Fixed, MerkleProof};
use crate::pipeline::{run_pipeline, Ballot, PipelineConfig, PipelineRun, PriorityReport};
use crate::policy::{EpochRecord, Policy, PolicyEngine, WorldState};
use crate::sim::{OperatorProfile, OperatorSpec, SettlementOutcome, SettlementStatus, SimEvent, TaskInput, TaskKind, TaskRecord, World};
use crate::trust::{compute_trust_scores, TrustConfig, TrustScoreTable};
use crate::workload;

use super::bundle::{self, AuditBundle};
use super::StoreError;

/// Transfers 100 units per ready proposal once the report has settled.
/// `data.ready` is only set from a settled root, so an unsettled report
/// leaves the policy paused on missing data.
pub const GRANTS_POLICY: &str = "\
policy grants
version 1
expiry 100
trigger proposal-submitted min=1
condition data.ready >= 1
action transfer amount=data.ready * 100 in [0, 5000]
limit per-epoch 5000
limit rate 1 per 100
timelock 2
";

pub const GUARDIAN_SCHEMA: &str = workload::GUARDIAN_SCHEMA;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudy {
    pub seed: u64,
    #[serde(default)]
    pub proposals: usize,
    #[serde(default)]
    pub evaluations: usize,
    #[serde(default)]
    pub operators: Vec<OperatorSpec>,
    #[serde(default = "default_quorum")]
    pub quorum: (u32, u32),
    #[serde(default = "default_deadline")]
    pub deadline: u64,
    #[serde(default = "default_window")]
    pub challenge_window: u64,
    #[serde(default = "default_policy")]
    pub policy: String,
}

fn default_quorum() -> (u32, u32) {
    (3, 5)
}

fn default_deadline() -> u64 {
    2
}

fn default_window() -> u64 {
    crate::sim::DEFAULT_CHALLENGE_WINDOW
}

fn default_policy() -> String {
    GRANTS_POLICY.into()
}

impl CaseStudy {
    /// Nothing to collect, nobody to settle.
    pub fn empty(seed: u64) -> Self {
        CaseStudy {
            seed,
            proposals: 0,
            evaluations: 0,
            operators: Vec::new(),
            quorum: default_quorum(),
            deadline: default_deadline(),
            challenge_window: default_window(),
            policy: default_policy(),
        }
    }

    /// Five operators, one of which tampers with its root; 20 proposals and
    /// 100 ballots.
    pub fn demo() -> Self {
        Self::generated(42, 20, 100)
    }

    pub fn generated(seed: u64, proposals: usize, evaluations: usize) -> Self {
        use crate::sim::{Behavior, TrustMode};
        let bond = Fixed::from_int(100).expect("constant");
        let operators = ["alpha", "bravo", "charlie", "delta", "echo"]
            .into_iter()
            .map(|name| OperatorSpec {
                name: name.into(),
                bond,
                mode: if name == "delta" { TrustMode::Hybrid } else { TrustMode::Economic },
                behavior: if name == "charlie" {
                    Behavior::Tamper { seed: 7 }
                } else {
                    Behavior::Honest
                },
            })
            .collect();
        CaseStudy {
            seed,
            proposals,
            evaluations,
            operators,
            ..Self::empty(seed)
        }
    }
}

/// Collected inputs. Everything downstream is a function of these.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseInputs {
    pub scenario: CaseStudy,
    pub snapshot: GraphSnapshot,
    pub trust_config: TrustConfig,
    pub ballots: Vec<Ballot>,
    pub pipeline: PipelineConfig,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimOutputs {
    pub events: Vec<SimEvent>,
    pub outcome: SettlementOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseOutputs {
    pub trust: TrustScoreTable,
    pub run: PipelineRun,
    /// One inclusion proof per ranked entry.
    pub proofs: Vec<MerkleProof>,
    pub sim: Option<SimOutputs>,
    pub epochs: Vec<EpochRecord>,
}

pub struct CaseStudyResult {
    pub inputs: CaseInputs,
    pub outputs: CaseOutputs,
    pub bundle: AuditBundle,
}

impl CaseStudyResult {
    pub fn report(&self) -> &PriorityReport {
        &self.outputs.run.report
    }

    pub fn settlement(&self) -> Option<&SettlementOutcome> {
        self.outputs.sim.as_ref().map(|s| &s.outcome)
    }
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> StoreError {
    move |e| StoreError::Stage {
        stage,
        message: e.to_string(),
    }
}

/// Stage 1: generate the collection from the scenario seed.
pub fn collect(scenario: &CaseStudy) -> CaseInputs {
    let w = workload::pipeline_workload(scenario.seed, scenario.proposals, scenario.evaluations);
    CaseInputs {
        scenario: scenario.clone(),
        trust_config: TrustConfig::with_seeds(w.population.seeds.iter().copied()),
        snapshot: w.population.snapshot,
        ballots: w.ballots,
        pipeline: w.config,
    }
}

/// Stages 2 to 4 over collected inputs.
pub fn execute(inputs: &CaseInputs) -> Result<CaseOutputs, StoreError> {
    let s = &inputs.scenario;
    let trust = compute_trust_scores(&inputs.snapshot, &inputs.trust_config).map_err(stage("trust"))?;
    let run = run_pipeline(&inputs.snapshot, &trust, &inputs.ballots, &inputs.pipeline, None).map_err(stage("pipeline"))?;
    let proofs = match run.report.tree() {
        Some(tree) => run
            .report
            .ranked
            .iter()
            .map(|e| tree.prove(e.proposal.as_bytes()))
            .collect::<Result<_, _>>()
            .map_err(stage("report"))?,
        None => Vec::new(),
    };

    let sim = if s.operators.is_empty() {
        None
    } else {
        let mut world = World::new(s.seed).with_challenge_window(s.challenge_window);
        for op in &s.operators {
            world
                .add_operator(OperatorProfile::new(&op.name, op.bond, op.mode, op.behavior))
                .map_err(stage("settlement"))?;
        }
        let digest = world.pin_input(TaskInput::PipelineRun {
            snapshot: inputs.snapshot.clone(),
            trust: trust.clone(),
            ballots: inputs.ballots.clone(),
            config: inputs.pipeline.clone(),
        });
        let id = world
            .register_task(TaskRecord::new(TaskKind::PipelineRun, digest, s.quorum, s.deadline))
            .map_err(stage("settlement"))?;
        world.run_until(s.deadline);
        let outcome = world.settle(&id).map_err(stage("settlement"))?;
        Some(SimOutputs {
            events: world.events().to_vec(),
            outcome,
        })
    };

    let policy = Policy::parse(&s.policy).map_err(stage("policy"))?;
    let ready = sim
        .as_ref()
        .filter(|o| o.outcome.status == SettlementStatus::Accepted && o.outcome.root == Some(run.report.root))
        .map(|_| run.report.ranked.iter().filter(|e| e.ready).count());
    let mut engine = PolicyEngine::new(GUARDIAN_SCHEMA);
    let last = policy.timelock + 1;
    engine.install(policy, 0);
    let epochs = (1..=last)
        .map(|epoch| {
            let mut data = BTreeMap::new();
            if let Some(n) = ready {
                data.insert("ready".to_string(), Fixed::from_int(n as i64).map_err(stage("policy"))?);
            }
            Ok(engine.step(&WorldState {
                epoch,
                proposals_pending: run.report.ranked.len() as u64,
                data,
                ..Default::default()
            }))
        })
        .collect::<Result<_, StoreError>>()?;

    Ok(CaseOutputs {
        trust,
        run,
        proofs,
        sim,
        epochs,
    })
}

/// Collection, pipeline, simulated settlement of the report root, then
/// policy-gated execution; returns everything plus the sealed bundle.
pub fn run_case_study(scenario: &CaseStudy, command: &[String]) -> Result<CaseStudyResult, StoreError> {
    let inputs = collect(scenario);
    let outputs = execute(&inputs)?;
    let bundle = bundle::assemble(&inputs, &outputs, command);
    Ok(CaseStudyResult { inputs, outputs, bundle })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scenario() {
        let r = run_case_study(&CaseStudy::empty(1), &[]).unwrap();
        assert!(r.report().ranked.is_empty());
        assert!(r.settlement().is_none());
        assert!(r.outputs.epochs.iter().all(|e| e.plans.is_empty()));
    }

    #[test]
    fn demo_settles_on_direct_root_and_executes_after_timelock() {
        let s = CaseStudy::demo();
        let r = run_case_study(&s, &[]).unwrap();
        let i = &r.inputs;
        let trust = compute_trust_scores(&i.snapshot, &i.trust_config).unwrap();
        let direct = run_pipeline(&i.snapshot, &trust, &i.ballots, &i.pipeline, Some(1)).unwrap();
        assert_eq!(r.report().ranked.len(), 20);
        let settled = r.settlement().unwrap();
        assert_eq!(settled.status, SettlementStatus::Accepted);
        assert_eq!(settled.root, Some(direct.report.root));
        assert_eq!(settled.slashed.keys().collect::<Vec<_>>(), vec!["charlie"]);
        let planned: Vec<u64> = r.outputs.epochs.iter().filter(|e| !e.plans.is_empty()).map(|e| e.manifest.world.epoch).collect();
        let executed: Vec<u64> = r.outputs.epochs.iter().filter(|e| !e.executions.is_empty()).map(|e| e.manifest.world.epoch).collect();
        assert_eq!(planned, vec![1]);
        assert_eq!(executed, vec![3]);
    }
}
