use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attestation::GraphSnapshot;
use crate::codec::Fixed;
use crate::pipeline::Scorer;
use crate::IdentityId;

use super::PolicyError;

/// Structured proposal as submitted for gatekeeping. Every text field is
/// optional so that absence is reported as a finding rather than a parse
/// failure.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalDoc {
    pub id: String,
    pub proposer: IdentityId,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub problem: Option<String>,
    #[serde(default)]
    pub impact: Option<String>,
    #[serde(default)]
    pub budget: Option<Fixed>,
    #[serde(default)]
    pub risks: Option<String>,
    #[serde(default)]
    pub beneficiaries: Vec<IdentityId>,
    #[serde(default)]
    pub body: Option<String>,
}

impl ProposalDoc {
    pub fn parse(bytes: &[u8]) -> Result<Self, PolicyError> {
        serde_json::from_slice(bytes).map_err(|e| PolicyError::MalformedProposal(e.to_string()))
    }

    fn text_fields(&self) -> [(&'static str, Option<&str>); 5] {
        [
            ("title", self.title.as_deref()),
            ("problem", self.problem.as_deref()),
            ("impact", self.impact.as_deref()),
            ("risks", self.risks.as_deref()),
            ("body", self.body.as_deref()),
        ]
    }

    fn has(&self, field: &str) -> bool {
        if field == "budget" {
            return self.budget.is_some();
        }
        self.text_fields()
            .iter()
            .any(|(name, v)| *name == field && v.is_some_and(|t| !t.trim().is_empty()))
    }

    /// All text fields joined, as seen by the scorer.
    pub fn text(&self) -> String {
        self.text_fields()
            .iter()
            .filter_map(|(_, v)| *v)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateRules {
    pub required: Vec<String>,
    pub budget_min: Fixed,
    pub budget_max: Fixed,
    /// Matched case-insensitively on word boundaries.
    pub banned_terms: Vec<String>,
    pub quality_threshold: Fixed,
    /// Identities whose overrides count, and how many must agree.
    pub reviewers: BTreeSet<IdentityId>,
    pub override_quorum: usize,
}

impl Default for GateRules {
    fn default() -> Self {
        GateRules {
            required: ["problem", "impact", "budget", "risks"].map(String::from).to_vec(),
            budget_min: Fixed::ZERO,
            budget_max: Fixed::from_int(1_000_000).expect("constant"),
            banned_terms: Vec::new(),
            quality_threshold: "0.5".parse().expect("constant"),
            reviewers: BTreeSet::new(),
            override_quorum: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub field: String,
    /// Byte offsets into the field text.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    /// MISSING_FIELD, BUDGET_OUT_OF_BOUNDS, CONFLICT_OF_INTEREST,
    /// BANNED_TERM or LOW_QUALITY.
    pub code: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<Span>,
}

impl Finding {
    fn new(code: &str, detail: impl Into<String>) -> Self {
        Finding {
            code: code.into(),
            detail: detail.into(),
            spans: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pass,
    Fail,
    Escalate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerOverride {
    pub reviewer: IdentityId,
    pub decision: Decision,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub proposal: String,
    pub decision: Decision,
    pub findings: Vec<Finding>,
    pub score: Fixed,
    /// Words to add to clear the quality threshold.
    pub suggestions: Vec<String>,
    /// Reviewers whose agreeing overrides replaced the automatic decision.
    #[serde(default)]
    pub overridden_by: Vec<IdentityId>,
}

impl GateOutcome {
    /// Replaces the decision when at least `override_quorum` distinct
    /// configured reviewers agree on the same alternative.
    pub fn apply_overrides(&mut self, rules: &GateRules, overrides: &[ReviewerOverride]) -> bool {
        for decision in [Decision::Pass, Decision::Fail, Decision::Escalate] {
            let agreeing: BTreeSet<IdentityId> = overrides
                .iter()
                .filter(|o| o.decision == decision && rules.reviewers.contains(&o.reviewer))
                .map(|o| o.reviewer)
                .collect();
            if rules.override_quorum > 0 && agreeing.len() >= rules.override_quorum {
                self.decision = decision;
                self.overridden_by = agreeing.into_iter().collect();
                return true;
            }
        }
        false
    }
}

fn term_spans(field: &str, text: &str, term: &str) -> Vec<Span> {
    let hay = text.to_ascii_lowercase();
    let needle = term.to_ascii_lowercase();
    if needle.is_empty() {
        return Vec::new();
    }
    let bytes = hay.as_bytes();
    let boundary = |i: Option<usize>| i.is_none_or(|i| i >= bytes.len() || !bytes[i].is_ascii_alphanumeric());
    hay.match_indices(&needle)
        .filter(|(start, _)| {
            let end = start + needle.len();
            boundary(start.checked_sub(1)) && boundary(Some(end))
        })
        .map(|(start, _)| Span {
            field: field.into(),
            start,
            end: start + needle.len(),
        })
        .collect()
}

/// Deterministic pre-review checks. Any missing field, out-of-bounds budget,
/// banned term or low score fails the proposal; a conflict of interest alone
/// escalates it.
pub fn gate_proposal(
    doc: &[u8],
    rules: &GateRules,
    scorer: &dyn Scorer,
    snapshot: Option<&GraphSnapshot>,
) -> Result<GateOutcome, PolicyError> {
    let doc = ProposalDoc::parse(doc)?;
    let mut findings = Vec::new();
    for field in &rules.required {
        if !doc.has(field) {
            findings.push(Finding::new("MISSING_FIELD", field.clone()));
        }
    }
    if let Some(b) = doc.budget {
        if b < rules.budget_min || b > rules.budget_max {
            findings.push(Finding::new(
                "BUDGET_OUT_OF_BOUNDS",
                format!("{b} outside [{}, {}]", rules.budget_min, rules.budget_max),
            ));
        }
    }
    for term in &rules.banned_terms {
        let spans: Vec<Span> = doc
            .text_fields()
            .iter()
            .filter_map(|(name, v)| v.map(|t| term_spans(name, t, term)))
            .flatten()
            .collect();
        if !spans.is_empty() {
            findings.push(Finding {
                code: "BANNED_TERM".into(),
                detail: term.clone(),
                spans,
            });
        }
    }
    let text = doc.text();
    let score = scorer.score(&text);
    let mut suggestions = Vec::new();
    if score < rules.quality_threshold {
        findings.push(Finding::new(
            "LOW_QUALITY",
            format!("score {score} below {}", rules.quality_threshold),
        ));
        suggestions = scorer.suggest(&text, rules.quality_threshold);
    }
    let failed = !findings.is_empty();
    let mut conflicted = false;
    if let Some(snap) = snapshot {
        let named: BTreeSet<&IdentityId> = doc.beneficiaries.iter().collect();
        let from: BTreeSet<IdentityId> = snap
            .attestations_of(None)
            .filter(|(_, a)| a.body.subject == doc.proposer && named.contains(&a.body.attestor))
            .map(|(_, a)| a.body.attestor)
            .collect();
        if !from.is_empty() {
            conflicted = true;
            let who: Vec<String> = from.iter().map(IdentityId::short).collect();
            findings.push(Finding::new(
                "CONFLICT_OF_INTEREST",
                format!("proposer attested by beneficiaries {}", who.join(",")),
            ));
        }
    }
    let decision = if failed {
        Decision::Fail
    } else if conflicted {
        Decision::Escalate
    } else {
        Decision::Pass
    };
    Ok(GateOutcome {
        proposal: doc.id,
        decision,
        findings,
        score,
        suggestions,
        overridden_by: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::LexicalScorer;

    fn doc(extra: &[(&str, serde_json::Value)], drop: &[&str]) -> Vec<u8> {
        let mut v = serde_json::json!({
            "id": "p1",
            "proposer": crate::Keypair::from_seed("alice").id(),
            "title": "Community indexer",
            "problem": "The problem is slow queries for the community team.",
            "impact": "Impact: we deliver faster review and report tooling, measured by a latency metric.",
            "budget": 5000,
            "risks": "Risk: the plan slips; the milestone timeline has slack to maintain the open goal and evaluate.",
        });
        for k in drop {
            v.as_object_mut().unwrap().remove(*k);
        }
        for (k, x) in extra {
            v[*k] = x.clone();
        }
        serde_json::to_vec(&v).unwrap()
    }

    #[test]
    fn compliant_passes_and_missing_budget_fails() {
        let s = LexicalScorer::default();
        let rules = GateRules::default();
        let ok = gate_proposal(&doc(&[], &[]), &rules, &s, None).unwrap();
        assert_eq!(ok.decision, Decision::Pass, "{ok:?}");
        let out = gate_proposal(&doc(&[], &["budget"]), &rules, &s, None).unwrap();
        assert_eq!(out.decision, Decision::Fail);
        assert!(out.findings.iter().any(|f| f.code == "MISSING_FIELD" && f.detail == "budget"));
    }

    #[test]
    fn banned_term_spans_are_exact() {
        let rules = GateRules {
            banned_terms: vec!["idiot".into()],
            ..Default::default()
        };
        let bytes = doc(&[("body", "Only an Idiot, not idiots, would object.".into())], &[]);
        let out = gate_proposal(&bytes, &rules, &LexicalScorer::default(), None).unwrap();
        let f = out.findings.iter().find(|f| f.code == "BANNED_TERM").unwrap();
        assert_eq!(
            f.spans,
            vec![Span {
                field: "body".into(),
                start: 8,
                end: 13
            }]
        );
    }

    #[test]
    fn malformed_and_overrides() {
        let s = LexicalScorer::default();
        assert!(matches!(
            gate_proposal(b"{not json", &GateRules::default(), &s, None),
            Err(PolicyError::MalformedProposal(_))
        ));
        let r1 = crate::Keypair::from_seed("r1").id();
        let r2 = crate::Keypair::from_seed("r2").id();
        let rules = GateRules {
            reviewers: [r1, r2].into(),
            ..Default::default()
        };
        let mut out = gate_proposal(&doc(&[], &["risks"]), &rules, &s, None).unwrap();
        let ov = |r| ReviewerOverride {
            reviewer: r,
            decision: Decision::Pass,
            reason: "reviewed".into(),
        };
        assert!(!out.apply_overrides(&rules, &[ov(r1), ov(r1)]));
        assert!(out.apply_overrides(&rules, &[ov(r1), ov(r2)]));
        assert_eq!(out.decision, Decision::Pass);
    }

    #[test]
    fn low_quality_suggests_keywords() {
        let s = LexicalScorer::default();
        let bytes = br#"{"id":"x","proposer":"0000000000000000000000000000000000000000000000000000000000000000","problem":"p","impact":"i","budget":1,"risks":"r"}"#;
        let out = gate_proposal(bytes, &GateRules::default(), &s, None).unwrap();
        assert_eq!(out.decision, Decision::Fail);
        assert!(!out.suggestions.is_empty());
        let fixed = format!("{} {}", "p i r", out.suggestions.join(" "));
        assert!(s.score(&fixed) >= GateRules::default().quality_threshold);
    }
}
