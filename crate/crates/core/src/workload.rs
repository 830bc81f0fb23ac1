//! Seeded generators for fixtures, demos and scale runs. Every generator is
//! a pure function of its arguments.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attestation::{Attestation, AttestationStore, GraphSnapshot, Schema};
use crate::delegation::{Constraints, DelegationRecord, ProposalRef, Scope};
use crate::pipeline::{Ballot, BallotBody, PipelineConfig, ProposalMeta, RubricScore};
use crate::trust::{compute_trust_scores, TrustConfig, TrustScoreTable};
use crate::{Fixed, IdentityId, Keypair};

pub const ENDORSE_SCHEMA: &str = "endorse";
pub const EXPERTISE_SCHEMA: &str = "expertise";
pub const GUARDIAN_SCHEMA: &str = "guardian";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn keys(label: &str, n: usize) -> Vec<Keypair> {
    (0..n).map(|i| Keypair::from_seed(&format!("{label}:{i}"))).collect()
}

fn fx(n: i64) -> Fixed {
    Fixed::from_int(n).expect("small constant")
}

/// Identities with balances and a random endorsement graph.
pub struct Population {
    pub keys: Vec<Keypair>,
    pub store: AttestationStore,
    pub snapshot: GraphSnapshot,
    /// The first three identities.
    pub seeds: Vec<IdentityId>,
}

impl Population {
    pub fn ids(&self) -> Vec<IdentityId> {
        self.keys.iter().map(Keypair::id).collect()
    }

    pub fn trust(&self) -> TrustScoreTable {
        compute_trust_scores(&self.snapshot, &TrustConfig::with_seeds(self.seeds.iter().copied()))
            .expect("seeds are members of the snapshot")
    }
}

/// `n` identities, each endorsing `out_degree` random others, with a fifth
/// of them holding an expertise attestation from a seed. Snapshot at tick 1.
pub fn population(seed: u64, n: usize, out_degree: usize) -> Population {
    let mut r = rng(seed);
    let keys = keys(&format!("member:{seed}"), n);
    let mut store = AttestationStore::new();
    for s in [ENDORSE_SCHEMA, EXPERTISE_SCHEMA, GUARDIAN_SCHEMA] {
        store.register_schema(Schema::new(s, true)).expect("fresh store");
    }
    for k in &keys {
        store.set_balance(k.id(), fx(r.random_range(1..=1_000)), 1).expect("unsealed");
    }
    let issued = |store: &mut AttestationStore, from: &Keypair, schema: &str, to: IdentityId, conf: Fixed| {
        let a = Attestation::issue(from, schema, to, conf, BTreeMap::new(), 1, None);
        store.submit_attestation(a).expect("valid attestation");
    };
    if n > 1 {
        for (i, k) in keys.iter().enumerate() {
            let mut targets = BTreeSet::new();
            for _ in 0..out_degree.min(n - 1) {
                let mut j = r.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                targets.insert(j);
            }
            for j in targets {
                let conf = Fixed::from_ratio(r.random_range(1..=10), 10).expect("ratio");
                issued(&mut store, k, ENDORSE_SCHEMA, keys[j].id(), conf);
            }
        }
    }
    let seeds: Vec<IdentityId> = keys.iter().take(3).map(Keypair::id).collect();
    for (i, k) in keys.iter().enumerate() {
        if i % 5 == 0 && !keys.is_empty() {
            issued(&mut store, &keys[i % keys.len().min(3)], EXPERTISE_SCHEMA, k.id(), Fixed::ONE);
        }
    }
    if let Some(first) = keys.first() {
        issued(&mut store, first, GUARDIAN_SCHEMA, first.id(), Fixed::ONE);
    }
    let snapshot = store.take_snapshot(1).expect("clock reached 1");
    Population {
        keys,
        store,
        snapshot,
        seeds,
    }
}

/// Random delegation records over a population: each identity delegates
/// globally with probability `rate` to a uniformly chosen other identity.
pub fn delegations(seed: u64, keys: &[Keypair], rate: f64) -> Vec<DelegationRecord> {
    let mut r = rng(seed ^ 0xde1e);
    let n = keys.len();
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    for (i, k) in keys.iter().enumerate() {
        if !r.random_bool(rate) {
            continue;
        }
        let mut j = r.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        out.push(DelegationRecord::sign(k, keys[j].id(), Scope::Global, Constraints::default(), 1));
    }
    out
}

pub struct DelegationWorkload {
    pub snapshot: GraphSnapshot,
    pub trust: TrustScoreTable,
    pub records: Vec<DelegationRecord>,
    pub proposal: ProposalRef,
}

/// Balances only (no endorsement graph) so that generation stays cheap at
/// large `n`; trust is seeded on the first three identities.
pub fn delegation_workload(seed: u64, n: usize, rate: f64) -> DelegationWorkload {
    let pop = population(seed, n, 0);
    let records = delegations(seed, &pop.keys, rate);
    DelegationWorkload {
        trust: pop.trust(),
        snapshot: pop.snapshot,
        records,
        proposal: ProposalRef {
            id: "P0001".into(),
            topic: "treasury".into(),
        },
    }
}

pub struct PipelineWorkload {
    pub population: Population,
    pub trust: TrustScoreTable,
    pub ballots: Vec<Ballot>,
    pub config: PipelineConfig,
}

const WORDS: &[&str] = &[
    "community", "deliver", "evaluate", "goal", "maintain", "open", "plan", "report", "review", "team", "problem",
    "impact", "budget", "risk", "timeline", "milestone", "metric", "treasury", "fund", "security", "audit",
    "education", "outreach", "indexer", "tooling", "research", "analysis", "grant", "users", "docs",
];
const TAGS: &[&str] = &["treasury", "security", "community", "infrastructure", "research"];
pub const CRITERIA: &[(&str, i64)] = &[("feasibility", 1), ("impact", 2), ("alignment", 1)];

pub fn proposals(seed: u64, n: usize) -> Vec<ProposalMeta> {
    let mut r = rng(seed ^ 0x9e0);
    (0..n)
        .map(|i| {
            let len = r.random_range(6..20);
            let body: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut r).expect("non-empty")).collect();
            let tags = (0..r.random_range(0..3))
                .map(|_| TAGS.choose(&mut r).expect("non-empty").to_string())
                .collect();
            let depends_on = if i > 0 && r.random_bool(0.1) {
                [format!("P{:04}", r.random_range(0..i))].into()
            } else {
                BTreeSet::new()
            };
            ProposalMeta {
                id: format!("P{i:04}"),
                title: format!("Proposal {i}"),
                body: body.join(" "),
                tags,
                depends_on,
            }
        })
        .collect()
}

/// `evaluations` signed rubric ballots over `proposals` proposals from a
/// population of roughly one voter per ten evaluations.
pub fn pipeline_workload(seed: u64, n_proposals: usize, evaluations: usize) -> PipelineWorkload {
    let voters = (evaluations / 10).clamp(5, 1_000);
    let population = population(seed, voters, 3);
    let trust = population.trust();
    let mut config = PipelineConfig::new(CRITERIA.iter().map(|(c, w)| (c.to_string(), fx(*w))).collect());
    config.proposals = proposals(seed, n_proposals);
    config.domain_schema = Some(EXPERTISE_SCHEMA.into());
    config.seed = seed;
    let mut r = rng(seed ^ 0xba110);
    let mut ballots = Vec::with_capacity(evaluations);
    if n_proposals > 0 {
        for e in 0..evaluations {
            let voter = &population.keys[e % voters];
            let proposal = format!("P{:04}", r.random_range(0..n_proposals));
            let scores = CRITERIA
                .iter()
                .map(|(c, _)| {
                    let s = if r.random_bool(0.05) {
                        RubricScore::Abstain
                    } else {
                        RubricScore::Score(Fixed::from_ratio(r.random_range(0..=20), 20).expect("ratio"))
                    };
                    (c.to_string(), s)
                })
                .collect();
            ballots.push(Ballot::sign(voter, &BallotBody::Rubric { proposal, scores }, 1 + (e / voters) as u64));
        }
    }
    PipelineWorkload {
        population,
        trust,
        ballots,
        config,
    }
}

/// Deterministic permutation, for input-order independence checks.
pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut rng(seed));
    v
}
