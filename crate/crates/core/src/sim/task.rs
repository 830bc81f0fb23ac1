use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attestation::GraphSnapshot;
use crate::codec::{sha256, Canonical, CodecError, Digest, Value};
use crate::delegation::{resolve, DelegationRecord, ProposalRef};
use crate::pipeline::{run_pipeline, Ballot, PipelineConfig};
use crate::policy::{replay_epoch, EpochManifest};
use crate::trust::{compute_trust_scores, TrustConfig, TrustScoreTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TrustScore,
    DelegationResolve,
    PipelineRun,
    PolicyEval,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::TrustScore => "trust-score",
            TaskKind::DelegationResolve => "delegation-resolve",
            TaskKind::PipelineRun => "pipeline-run",
            TaskKind::PolicyEval => "policy-eval",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TaskKind::TrustScore,
            TaskKind::DelegationResolve,
            TaskKind::PipelineRun,
            TaskKind::PolicyEval,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pinned inputs of one task. Operators compute from these and nothing else.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskInput {
    TrustScore {
        snapshot: GraphSnapshot,
        config: TrustConfig,
    },
    DelegationResolve {
        snapshot: GraphSnapshot,
        trust: TrustScoreTable,
        records: Vec<DelegationRecord>,
        proposal: ProposalRef,
    },
    PipelineRun {
        snapshot: GraphSnapshot,
        trust: TrustScoreTable,
        ballots: Vec<Ballot>,
        config: PipelineConfig,
    },
    PolicyEval {
        manifest: EpochManifest,
    },
}

impl TaskInput {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskInput::TrustScore { .. } => TaskKind::TrustScore,
            TaskInput::DelegationResolve { .. } => TaskKind::DelegationResolve,
            TaskInput::PipelineRun { .. } => TaskKind::PipelineRun,
            TaskInput::PolicyEval { .. } => TaskKind::PolicyEval,
        }
    }

    /// Digest over the kind and the digests of each component.
    pub fn digest(&self) -> Digest {
        let parts: Vec<(&str, Digest)> = match self {
            TaskInput::TrustScore { snapshot, config } => vec![("snapshot", snapshot.digest()), ("config", config.digest())],
            TaskInput::DelegationResolve {
                snapshot,
                trust,
                records,
                proposal,
            } => vec![
                ("snapshot", snapshot.digest()),
                ("trust", trust.digest()),
                ("records", records.digest()),
                ("proposal", proposal_value(proposal).digest()),
            ],
            TaskInput::PipelineRun {
                snapshot,
                trust,
                ballots,
                config,
            } => vec![
                ("snapshot", snapshot.digest()),
                ("trust", trust.digest()),
                ("ballots", ballots.digest()),
                ("config", config.digest()),
            ],
            TaskInput::PolicyEval { manifest } => vec![("manifest", manifest.digest())],
        };
        let mut entries: Vec<(&str, Value)> = parts.into_iter().map(|(k, d)| (k, Value::Digest(d))).collect();
        entries.push(("kind", Value::str(self.kind().as_str())));
        sha256(&Value::map(entries).encode())
    }

    /// The honest output root.
    pub fn execute(&self) -> Result<Digest, String> {
        match self {
            TaskInput::TrustScore { snapshot, config } => compute_trust_scores(snapshot, config)
                .map(|t| t.root())
                .map_err(|e| e.to_string()),
            TaskInput::DelegationResolve {
                snapshot,
                trust,
                records,
                proposal,
            } => resolve(snapshot, records, proposal, trust)
                .map(|w| w.root)
                .map_err(|e| e.to_string()),
            TaskInput::PipelineRun {
                snapshot,
                trust,
                ballots,
                config,
            } => run_pipeline(snapshot, trust, ballots, config, None)
                .map(|r| r.report.root)
                .map_err(|e| e.to_string()),
            TaskInput::PolicyEval { manifest } => Ok(sha256(&replay_epoch(manifest).to_value().encode())),
        }
    }
}

fn proposal_value(p: &ProposalRef) -> Value {
    Value::map([("id", Value::str(&p.id)), ("topic", Value::str(&p.topic))])
}

impl Canonical for TaskInput {
    fn to_value(&self) -> Value {
        let mut entries = vec![("kind", Value::str(self.kind().as_str()))];
        match self {
            TaskInput::TrustScore { snapshot, config } => {
                entries.push(("snapshot", snapshot.to_value()));
                entries.push(("config", config.to_value()));
            }
            TaskInput::DelegationResolve {
                snapshot,
                trust,
                records,
                proposal,
            } => {
                entries.push(("snapshot", snapshot.to_value()));
                entries.push(("trust", trust.to_value()));
                entries.push(("records", records.to_value()));
                entries.push(("proposal", proposal_value(proposal)));
            }
            TaskInput::PipelineRun {
                snapshot,
                trust,
                ballots,
                config,
            } => {
                entries.push(("snapshot", snapshot.to_value()));
                entries.push(("trust", trust.to_value()));
                entries.push(("ballots", ballots.to_value()));
                entries.push(("config", config.to_value()));
            }
            TaskInput::PolicyEval { manifest } => entries.push(("manifest", manifest.to_value())),
        }
        Value::map(entries)
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let kind = v.field("kind")?.as_str()?;
        let kind = TaskKind::parse(kind).ok_or_else(|| CodecError::Shape(format!("unknown task kind {kind:?}")))?;
        Ok(match kind {
            TaskKind::TrustScore => TaskInput::TrustScore {
                snapshot: GraphSnapshot::from_value(v.field("snapshot")?)?,
                config: TrustConfig::from_value(v.field("config")?)?,
            },
            TaskKind::DelegationResolve => {
                let p = v.field("proposal")?;
                TaskInput::DelegationResolve {
                    snapshot: GraphSnapshot::from_value(v.field("snapshot")?)?,
                    trust: TrustScoreTable::from_value(v.field("trust")?)?,
                    records: Vec::from_value(v.field("records")?)?,
                    proposal: ProposalRef {
                        id: p.field("id")?.as_str()?.to_owned(),
                        topic: p.field("topic")?.as_str()?.to_owned(),
                    },
                }
            }
            TaskKind::PipelineRun => TaskInput::PipelineRun {
                snapshot: GraphSnapshot::from_value(v.field("snapshot")?)?,
                trust: TrustScoreTable::from_value(v.field("trust")?)?,
                ballots: Vec::from_value(v.field("ballots")?)?,
                config: PipelineConfig::from_value(v.field("config")?)?,
            },
            TaskKind::PolicyEval => TaskInput::PolicyEval {
                manifest: EpochManifest::from_value(v.field("manifest")?)?,
            },
        })
    }
}
