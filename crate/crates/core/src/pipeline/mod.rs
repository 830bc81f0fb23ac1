//! Four-stage preference aggregation: validation, voter weights, aggregation
//! (rubrics, instant-runoff, quadratic, allocation), and the priority
//! report. Every stage output is canonical, and the run records the input
//! and output digest of each stage.

mod accept;
mod aggregate;
mod ballot;
pub mod predicate;
mod report;
mod scorer;
mod validate;
mod weights;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::GraphSnapshot;
use crate::codec::{sha256, Canonical, CodecError, Digest, Fixed, Value};
use crate::identity::IdentityId;
use crate::par;
use crate::trust::TrustScoreTable;

pub use accept::{structured_accept, AcceptError, SpreadDiagnostic};
pub use aggregate::{
    aggregate_rubric, allocation_mean, quadratic_tally, ranked_choice, IrvResult, IrvRound, RubricInput,
    RubricResult,
};
pub use ballot::{Ballot, BallotBody, RubricScore, Target};
pub use report::{build_priority_report, cluster_proposals, PriorityEntry, PriorityReport, ProposalMeta};
pub use scorer::{tokens, LexicalScorer, Scorer};
pub use validate::{validate_and_normalize, AcceptedBallot, RejectCode, Rejection, ValidationOutcome};
pub use weights::{compute_voter_weights, WeightMix};

pub const STAGES: [&str; 4] = ["validate", "weights", "aggregate", "report"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("trust table was computed from a different snapshot")]
    SnapshotMismatch,
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Conditional-ballot context entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextValue {
    Flag(bool),
    Number(Fixed),
}

impl ContextValue {
    pub fn to_value(&self) -> Value {
        match self {
            ContextValue::Flag(b) => Value::Bool(*b),
            ContextValue::Number(n) => Value::Fixed(*n),
        }
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        match v {
            Value::Bool(b) => Ok(ContextValue::Flag(*b)),
            other => Ok(ContextValue::Number(other.as_fixed()?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub mix: WeightMix,
    #[serde(default)]
    pub domain_schema: Option<String>,
    /// Criterion -> weight in the overall score.
    pub criteria: BTreeMap<String, Fixed>,
    #[serde(default)]
    pub proposals: Vec<ProposalMeta>,
    /// Contest -> options, shared by ranking, quadratic, and allocation.
    #[serde(default)]
    pub contests: BTreeMap<String, BTreeSet<String>>,
    #[serde(default = "default_budget")]
    pub quadratic_budget: i64,
    #[serde(default)]
    pub context: BTreeMap<String, ContextValue>,
    #[serde(default = "default_ready")]
    pub ready_threshold: Fixed,
    /// Seed of any generated workload; recorded in the audit trail.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scorer: LexicalScorer,
}

fn default_budget() -> i64 {
    100
}

fn default_ready() -> Fixed {
    Fixed::from_raw(600_000_000)
}

impl PipelineConfig {
    pub fn new(criteria: BTreeMap<String, Fixed>) -> Self {
        PipelineConfig {
            mix: WeightMix::default(),
            domain_schema: None,
            criteria,
            proposals: Vec::new(),
            contests: BTreeMap::new(),
            quadratic_budget: default_budget(),
            context: BTreeMap::new(),
            ready_threshold: default_ready(),
            seed: 0,
            scorer: LexicalScorer::default(),
        }
    }

    pub fn proposal_ids(&self) -> BTreeSet<String> {
        self.proposals.iter().map(|p| p.id.clone()).collect()
    }

    pub fn context_values(&self) -> BTreeMap<String, Value> {
        self.context.iter().map(|(k, v)| (k.clone(), v.to_value())).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.criteria.values().any(|w| w.is_negative()) {
            return Err(PipelineError::InvalidConfig("negative criterion weight".into()));
        }
        if self.quadratic_budget < 0 {
            return Err(PipelineError::InvalidConfig("negative quadratic budget".into()));
        }
        let ids = self.proposal_ids();
        if ids.len() != self.proposals.len() {
            return Err(PipelineError::InvalidConfig("duplicate proposal id".into()));
        }
        Ok(())
    }
}

impl Canonical for PipelineConfig {
    fn to_value(&self) -> Value {
        Value::map([
            ("mix", self.mix.to_value()),
            ("domain_schema", self.domain_schema.to_value()),
            ("criteria", self.criteria.to_value()),
            ("proposals", self.proposals.to_value()),
            ("contests", self.contests.to_value()),
            ("quadratic_budget", Value::Int(self.quadratic_budget)),
            ("context", Value::Map(self.context.iter().map(|(k, v)| (k.as_bytes().to_vec(), v.to_value())).collect())),
            ("ready_threshold", Value::Fixed(self.ready_threshold)),
            ("seed", self.seed.to_value()),
            ("scorer", self.scorer.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let context = v
            .field("context")?
            .as_map()?
            .iter()
            .map(|(k, v)| {
                let key = String::from_utf8(k.clone()).map_err(|_| CodecError::Shape("non-utf8 key".into()))?;
                Ok((key, ContextValue::from_value(v)?))
            })
            .collect::<Result<_, CodecError>>()?;
        Ok(PipelineConfig {
            mix: WeightMix::from_value(v.field("mix")?)?,
            domain_schema: Option::from_value(v.field("domain_schema")?)?,
            criteria: BTreeMap::from_value(v.field("criteria")?)?,
            proposals: Vec::from_value(v.field("proposals")?)?,
            contests: BTreeMap::from_value(v.field("contests")?)?,
            quadratic_budget: v.field("quadratic_budget")?.as_int()?,
            context,
            ready_threshold: v.field("ready_threshold")?.as_fixed()?,
            seed: v.field("seed")?.as_u64()?,
            scorer: LexicalScorer::from_value(v.field("scorer")?)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Aggregates {
    pub rubrics: BTreeMap<String, RubricResult>,
    pub rankings: BTreeMap<String, IrvResult>,
    pub quadratic: BTreeMap<String, BTreeMap<String, i64>>,
    pub allocations: BTreeMap<String, BTreeMap<String, Fixed>>,
    /// Conditional ballots whose predicate was false in the run context.
    pub inactive: BTreeSet<Digest>,
}

impl Canonical for Aggregates {
    fn to_value(&self) -> Value {
        Value::map([
            ("rubrics", self.rubrics.to_value()),
            ("rankings", self.rankings.to_value()),
            ("quadratic", self.quadratic.to_value()),
            ("allocations", self.allocations.to_value()),
            ("inactive", self.inactive.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(Aggregates {
            rubrics: BTreeMap::from_value(v.field("rubrics")?)?,
            rankings: BTreeMap::from_value(v.field("rankings")?)?,
            quadratic: BTreeMap::from_value(v.field("quadratic")?)?,
            allocations: BTreeMap::from_value(v.field("allocations")?)?,
            inactive: BTreeSet::from_value(v.field("inactive")?)?,
        })
    }
}

/// Unwraps conditional ballots: `Some(body)` when the ballot counts.
fn effective_body<'a>(body: &'a BallotBody, context: &BTreeMap<String, Value>) -> Option<&'a BallotBody> {
    match body {
        BallotBody::Conditional {
            predicate,
            params,
            inner,
        } => predicate::eval(predicate, params, context).then_some(inner.as_ref()),
        other => Some(other),
    }
}

/// Stage three. Work fans out per proposal; results are keyed maps, so the
/// output does not depend on scheduling.
pub fn aggregate(
    accepted: &[AcceptedBallot],
    weights: &BTreeMap<IdentityId, Fixed>,
    config: &PipelineConfig,
) -> Result<Aggregates, PipelineError> {
    let context = config.context_values();
    let weight = |id: &IdentityId| weights.get(id).copied().unwrap_or(Fixed::ZERO);
    let mut out = Aggregates::default();
    let mut rubric_inputs: BTreeMap<&str, Vec<RubricInput<'_>>> = BTreeMap::new();
    let mut rankings: BTreeMap<&str, Vec<(Fixed, &[String])>> = BTreeMap::new();
    let mut quadratic: BTreeMap<&str, Vec<&BTreeMap<String, i64>>> = BTreeMap::new();
    let mut allocations: BTreeMap<&str, Vec<(Fixed, &BTreeMap<String, Fixed>)>> = BTreeMap::new();
    for b in accepted {
        let Some(body) = effective_body(&b.body, &context) else {
            out.inactive.insert(b.uid);
            continue;
        };
        match body {
            BallotBody::Rubric { proposal, scores } => rubric_inputs
                .entry(proposal)
                .or_default()
                .push(RubricInput { voter: b.voter, scores }),
            BallotBody::Ranking { contest, order } => {
                rankings.entry(contest).or_default().push((weight(&b.voter), order))
            }
            BallotBody::Quadratic { contest, votes } => quadratic.entry(contest).or_default().push(votes),
            BallotBody::Allocation { contest, fractions } => {
                allocations.entry(contest).or_default().push((weight(&b.voter), fractions))
            }
            BallotBody::Conditional { .. } => unreachable!("validation rejects nested conditionals"),
        }
    }

    let jobs: Vec<(&str, &[RubricInput<'_>])> = config
        .proposals
        .iter()
        .map(|p| (p.id.as_str(), rubric_inputs.get(p.id.as_str()).map_or(&[][..], Vec::as_slice)))
        .collect();
    let results = par::map(&jobs, |(id, inputs)| {
        aggregate_rubric(inputs, weights, &config.criteria).map(|r| (id.to_string(), r))
    });
    for r in results {
        let (id, result) = r?;
        out.rubrics.insert(id, result);
    }
    for (contest, options) in &config.contests {
        let name = contest.as_str();
        if let Some(ballots) = rankings.get(name) {
            out.rankings.insert(contest.clone(), ranked_choice(ballots, options)?);
        }
        if let Some(ballots) = quadratic.get(name) {
            out.quadratic
                .insert(contest.clone(), quadratic_tally(ballots.iter().copied(), options));
        }
        if let Some(ballots) = allocations.get(name) {
            out.allocations.insert(contest.clone(), allocation_mean(ballots, options));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageRecord {
    pub stage: String,
    pub input: Digest,
    pub output: Digest,
}

impl Canonical for StageRecord {
    fn to_value(&self) -> Value {
        Value::map([
            ("stage", Value::str(&self.stage)),
            ("input", Value::Digest(self.input)),
            ("output", Value::Digest(self.output)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(StageRecord {
            stage: v.field("stage")?.as_str()?.to_owned(),
            input: v.field("input")?.as_digest()?,
            output: v.field("output")?.as_digest()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineRun {
    pub run_id: Digest,
    pub snapshot_id: u64,
    pub seed: u64,
    pub scorer: String,
    /// Append-only; one record per stage in [`STAGES`] order.
    pub audit: Vec<StageRecord>,
    pub validation: ValidationOutcome,
    pub weights: BTreeMap<IdentityId, Fixed>,
    pub aggregates: Aggregates,
    pub report: PriorityReport,
}

impl PipelineRun {
    pub fn stage_digests(&self) -> Vec<Digest> {
        self.audit.iter().map(|s| s.output).collect()
    }

    pub fn result_root(&self) -> Digest {
        self.report.root
    }
}

impl Canonical for PipelineRun {
    fn to_value(&self) -> Value {
        Value::map([
            ("run_id", Value::Digest(self.run_id)),
            ("snapshot_id", self.snapshot_id.to_value()),
            ("seed", self.seed.to_value()),
            ("scorer", Value::str(&self.scorer)),
            ("audit", self.audit.to_value()),
            ("validation", self.validation.to_value()),
            ("weights", self.weights.to_value()),
            ("aggregates", self.aggregates.to_value()),
            ("report", self.report.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(PipelineRun {
            run_id: v.field("run_id")?.as_digest()?,
            snapshot_id: v.field("snapshot_id")?.as_u64()?,
            seed: v.field("seed")?.as_u64()?,
            scorer: v.field("scorer")?.as_str()?.to_owned(),
            audit: Vec::from_value(v.field("audit")?)?,
            validation: ValidationOutcome::from_value(v.field("validation")?)?,
            weights: BTreeMap::from_value(v.field("weights")?)?,
            aggregates: Aggregates::from_value(v.field("aggregates")?)?,
            report: PriorityReport::from_value(v.field("report")?)?,
        })
    }
}

fn chain(parts: &[Digest]) -> Digest {
    sha256(&parts.to_vec().canonical_bytes())
}

/// Digest of the ballot set, independent of input order.
pub fn ballot_set_digest(ballots: &[Ballot]) -> Digest {
    let uids: BTreeSet<Digest> = ballots.iter().map(Ballot::uid).collect();
    uids.digest()
}

/// Runs all four stages with the configured lexical scorer. `threads` sizes
/// the worker pool; it never changes any output byte.
pub fn run_pipeline(
    snapshot: &GraphSnapshot,
    trust: &TrustScoreTable,
    ballots: &[Ballot],
    config: &PipelineConfig,
    threads: Option<usize>,
) -> Result<PipelineRun, PipelineError> {
    run_pipeline_with(snapshot, trust, ballots, config, &config.scorer, threads)
}

pub fn run_pipeline_with(
    snapshot: &GraphSnapshot,
    trust: &TrustScoreTable,
    ballots: &[Ballot],
    config: &PipelineConfig,
    scorer: &dyn Scorer,
    threads: Option<usize>,
) -> Result<PipelineRun, PipelineError> {
    config.validate()?;
    par::with_threads(threads, || {
        let snapshot_digest = snapshot.digest();
        let config_digest = config.digest();
        let mut audit = Vec::with_capacity(STAGES.len());

        let input = chain(&[snapshot_digest, config_digest, ballot_set_digest(ballots)]);
        let validation = validate_and_normalize(ballots, snapshot, config);
        audit.push(StageRecord {
            stage: STAGES[0].into(),
            input,
            output: validation.digest(),
        });

        let input = chain(&[snapshot_digest, trust.digest(), config.mix.digest(), config.domain_schema.digest()]);
        let weights = compute_voter_weights(snapshot, trust, &config.mix, config.domain_schema.as_deref())?;
        audit.push(StageRecord {
            stage: STAGES[1].into(),
            input,
            output: weights.digest(),
        });

        let input = chain(&[audit[0].output, audit[1].output, config_digest]);
        let aggregates = aggregate(&validation.accepted, &weights, config)?;
        audit.push(StageRecord {
            stage: STAGES[2].into(),
            input,
            output: aggregates.digest(),
        });

        let input = chain(&[audit[2].output, config_digest, sha256(scorer.id().as_bytes())]);
        let report = build_priority_report(&aggregates.rubrics, &config.proposals, scorer, config.ready_threshold);
        audit.push(StageRecord {
            stage: STAGES[3].into(),
            input,
            output: report.digest(),
        });

        let run_id = chain(&[snapshot_digest, config_digest, ballot_set_digest(ballots), trust.digest()]);
        Ok(PipelineRun {
            run_id,
            snapshot_id: snapshot.at,
            seed: config.seed,
            scorer: scorer.id(),
            audit,
            validation,
            weights,
            aggregates,
            report,
        })
    })
}
