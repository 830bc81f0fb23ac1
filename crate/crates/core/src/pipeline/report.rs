use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::{empty_root, Canonical, CodecError, Digest, Fixed, MerkleTree, Value};

use super::aggregate::RubricResult;
use super::scorer::Scorer;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalMeta {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub depends_on: BTreeSet<String>,
}

impl Canonical for ProposalMeta {
    fn to_value(&self) -> Value {
        Value::map([
            ("id", Value::str(&self.id)),
            ("title", Value::str(&self.title)),
            ("body", Value::str(&self.body)),
            ("tags", self.tags.to_value()),
            ("depends_on", self.depends_on.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(ProposalMeta {
            id: v.field("id")?.as_str()?.to_owned(),
            title: v.field("title")?.as_str()?.to_owned(),
            body: v.field("body")?.as_str()?.to_owned(),
            tags: BTreeSet::from_value(v.field("tags")?)?,
            depends_on: BTreeSet::from_value(v.field("depends_on")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorityEntry {
    pub proposal: String,
    pub rank: u32,
    pub score: Fixed,
    pub ci: (Fixed, Fixed),
    /// Scorer output for the proposal text; informational.
    pub quality: Fixed,
    pub ready: bool,
    pub cluster: u32,
}

impl Canonical for PriorityEntry {
    fn to_value(&self) -> Value {
        Value::map([
            ("proposal", Value::str(&self.proposal)),
            ("rank", self.rank.to_value()),
            ("score", Value::Fixed(self.score)),
            ("ci", self.ci.to_value()),
            ("quality", Value::Fixed(self.quality)),
            ("ready", Value::Bool(self.ready)),
            ("cluster", self.cluster.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(PriorityEntry {
            proposal: v.field("proposal")?.as_str()?.to_owned(),
            rank: u32::from_value(v.field("rank")?)?,
            score: v.field("score")?.as_fixed()?,
            ci: <(Fixed, Fixed)>::from_value(v.field("ci")?)?,
            quality: v.field("quality")?.as_fixed()?,
            ready: v.field("ready")?.as_bool()?,
            cluster: u32::from_value(v.field("cluster")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorityReport {
    /// Sorted by (score desc, proposal id asc).
    pub ranked: Vec<PriorityEntry>,
    /// Proposals with no scored ballots; they are listed, never ranked.
    pub unscored: Vec<String>,
    /// Each cluster sorted; clusters ordered by their first member.
    pub clusters: Vec<Vec<String>>,
    pub root: Digest,
}

impl PriorityReport {
    /// Leaf for one ranked entry: proposal id -> canonical entry.
    pub fn leaf(entry: &PriorityEntry) -> (Vec<u8>, Vec<u8>) {
        (entry.proposal.as_bytes().to_vec(), entry.canonical_bytes())
    }

    pub fn tree(&self) -> Option<MerkleTree> {
        if self.ranked.is_empty() {
            return None;
        }
        Some(MerkleTree::build(self.ranked.iter().map(Self::leaf).collect()).expect("proposal ids are unique"))
    }

    pub fn compute_root(&self) -> Digest {
        self.tree().map_or_else(empty_root, |t| t.root())
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| rank | proposal | score | 95% CI | ready | cluster |\n|---|---|---|---|---|---|\n");
        for e in &self.ranked {
            let _ = writeln!(
                out,
                "| {} | {} | {} | [{}, {}] | {} | {} |",
                e.rank,
                e.proposal,
                e.score,
                e.ci.0,
                e.ci.1,
                if e.ready { "yes" } else { "no" },
                e.cluster
            );
        }
        if !self.unscored.is_empty() {
            let _ = writeln!(out, "\nUnscored: {}", self.unscored.join(", "));
        }
        let _ = writeln!(out, "\nRoot: {}", self.root);
        out
    }
}

impl Canonical for PriorityReport {
    fn to_value(&self) -> Value {
        Value::map([
            ("ranked", self.ranked.to_value()),
            ("unscored", self.unscored.to_value()),
            ("clusters", self.clusters.to_value()),
            ("root", Value::Digest(self.root)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(PriorityReport {
            ranked: Vec::from_value(v.field("ranked")?)?,
            unscored: Vec::from_value(v.field("unscored")?)?,
            clusters: Vec::from_value(v.field("clusters")?)?,
            root: v.field("root")?.as_digest()?,
        })
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Connected components over declared dependencies (to known proposals) and
/// shared tags, where a proposal's tags are its declared tags plus the
/// scorer's themes for its text.
pub fn cluster_proposals(proposals: &[ProposalMeta], scorer: &dyn Scorer) -> Vec<Vec<String>> {
    let mut sorted: Vec<&ProposalMeta> = proposals.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let index: BTreeMap<&str, usize> = sorted.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..sorted.len()).collect();
    let mut by_tag: BTreeMap<String, usize> = BTreeMap::new();
    for (i, p) in sorted.iter().enumerate() {
        for dep in &p.depends_on {
            if let Some(&j) = index.get(dep.as_str()) {
                union(&mut parent, i, j);
            }
        }
        let text = format!("{}\n{}", p.title, p.body);
        for tag in p.tags.iter().cloned().chain(scorer.themes(&text)) {
            match by_tag.get(&tag) {
                Some(&j) => union(&mut parent, i, j),
                None => {
                    by_tag.insert(tag, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..sorted.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(sorted[i].id.clone());
    }
    groups.into_values().collect()
}

/// Ranks scored proposals, attaches clusters and readiness, and commits the
/// ranking to a merkle root (the empty-root sentinel when nothing is ranked).
pub fn build_priority_report(
    rubrics: &BTreeMap<String, RubricResult>,
    proposals: &[ProposalMeta],
    scorer: &dyn Scorer,
    ready_threshold: Fixed,
) -> PriorityReport {
    let clusters = cluster_proposals(proposals, scorer);
    let cluster_of: BTreeMap<&str, u32> = clusters
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |p| (p.as_str(), i as u32)))
        .collect();
    let meta: BTreeMap<&str, &ProposalMeta> = proposals.iter().map(|p| (p.id.as_str(), p)).collect();

    let mut scored = Vec::new();
    let mut unscored = Vec::new();
    for p in meta.keys() {
        match rubrics.get(*p).and_then(|r| r.score.map(|s| (s, r.ci))) {
            Some((score, ci)) => scored.push((p.to_string(), score, ci.unwrap_or((score, score)))),
            None => unscored.push(p.to_string()),
        }
    }
    scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let ranked: Vec<PriorityEntry> = scored
        .into_iter()
        .enumerate()
        .map(|(i, (proposal, score, ci))| {
            let m = meta[proposal.as_str()];
            PriorityEntry {
                rank: i as u32 + 1,
                score,
                ci,
                quality: scorer.score(&format!("{}\n{}", m.title, m.body)),
                ready: score >= ready_threshold,
                cluster: cluster_of[proposal.as_str()],
                proposal,
            }
        })
        .collect();
    let mut report = PriorityReport {
        ranked,
        unscored,
        clusters,
        root: empty_root(),
    };
    report.root = report.compute_root();
    report
}
