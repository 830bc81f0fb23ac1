//! Text scoring behind a trait so the pipeline shape does not depend on how
//! proposals are read. The shipped scorer is purely lexical.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, CodecError, Fixed, Value};

pub trait Scorer: Sync {
    /// Stable identifier recorded in audit trails.
    fn id(&self) -> String;
    /// Quality score in [0, 1].
    fn score(&self, text: &str) -> Fixed;
    fn themes(&self, text: &str) -> BTreeSet<String>;
    /// Words whose addition would lift `text` to at least `target`, fewest
    /// first. Empty when no such set is known.
    fn suggest(&self, _text: &str, _target: Fixed) -> Vec<String> {
        Vec::new()
    }
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Keyword rubric plus token overlap with a reference vocabulary:
/// `score = (keyword coverage + reference overlap) / 2`, where coverage is
/// the weight of rubric keywords present over the total rubric weight and
/// overlap is the fraction of reference tokens present.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalScorer {
    pub keywords: BTreeMap<String, Fixed>,
    pub reference: BTreeSet<String>,
    /// Theme -> trigger words.
    pub themes: BTreeMap<String, BTreeSet<String>>,
}

impl Default for LexicalScorer {
    fn default() -> Self {
        let set = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<BTreeSet<_>>();
        let keywords = [
            ("problem", 2),
            ("impact", 2),
            ("budget", 2),
            ("risk", 2),
            ("risks", 1),
            ("timeline", 1),
            ("milestone", 1),
            ("metric", 1),
            ("measure", 1),
        ]
        .into_iter()
        .map(|(k, w)| (k.to_string(), Fixed::from_int(w).expect("small")))
        .collect();
        LexicalScorer {
            keywords,
            reference: set(&[
                "community", "deliver", "evaluate", "goal", "maintain", "open", "plan", "report", "review", "team",
            ]),
            themes: BTreeMap::from([
                ("treasury".to_string(), set(&["treasury", "fund", "funding", "yield", "reserve"])),
                ("security".to_string(), set(&["security", "audit", "vulnerability", "exploit"])),
                ("community".to_string(), set(&["community", "education", "outreach", "onboarding"])),
                ("infrastructure".to_string(), set(&["infrastructure", "node", "indexer", "tooling"])),
                ("research".to_string(), set(&["research", "study", "analysis", "experiment"])),
            ]),
        }
    }
}

impl Scorer for LexicalScorer {
    fn id(&self) -> String {
        format!("lexical/{}", self.digest().short())
    }

    fn score(&self, text: &str) -> Fixed {
        let toks = tokens(text);
        let total: i64 = self.keywords.values().map(|w| w.raw()).sum();
        let hit: i64 = self
            .keywords
            .iter()
            .filter(|(k, _)| toks.contains(*k))
            .map(|(_, w)| w.raw())
            .sum();
        let coverage = if total > 0 {
            Fixed::from_ratio(hit, total).unwrap_or(Fixed::ZERO)
        } else {
            Fixed::ZERO
        };
        let overlap = if self.reference.is_empty() {
            Fixed::ZERO
        } else {
            let n = self.reference.intersection(&toks).count() as i64;
            Fixed::from_ratio(n, self.reference.len() as i64).unwrap_or(Fixed::ZERO)
        };
        Fixed::from_raw((coverage.raw() + overlap.raw()) / 2)
    }

    fn suggest(&self, text: &str, target: Fixed) -> Vec<String> {
        let toks = tokens(text);
        let total: i64 = self.keywords.values().map(|w| w.raw()).sum();
        // Each missing word adds an independent amount, so taking the largest
        // gains first gives the smallest set.
        let mut gains: Vec<(i128, &String)> = self
            .keywords
            .iter()
            .filter(|(k, _)| !toks.contains(*k))
            .map(|(k, w)| (i128::from(w.raw()) * 1_000_000 / i128::from(total.max(1)), k))
            .chain(
                self.reference
                    .iter()
                    .filter(|r| !toks.contains(*r))
                    .map(|r| (1_000_000 / self.reference.len() as i128, r)),
            )
            .collect();
        gains.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let mut text = text.to_string();
        let mut picked = Vec::new();
        for (_, word) in gains {
            if self.score(&text) >= target {
                break;
            }
            text.push(' ');
            text.push_str(word);
            picked.push(word.clone());
        }
        if self.score(&text) >= target {
            picked
        } else {
            Vec::new()
        }
    }

    fn themes(&self, text: &str) -> BTreeSet<String> {
        let toks = tokens(text);
        self.themes
            .iter()
            .filter(|(_, words)| !words.is_disjoint(&toks))
            .map(|(t, _)| t.clone())
            .collect()
    }
}

impl Canonical for LexicalScorer {
    fn to_value(&self) -> Value {
        Value::map([
            ("keywords", self.keywords.to_value()),
            ("reference", self.reference.to_value()),
            ("themes", self.themes.to_value()),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(LexicalScorer {
            keywords: BTreeMap::from_value(v.field("keywords")?)?,
            reference: BTreeSet::from_value(v.field("reference")?)?,
            themes: BTreeMap::from_value(v.field("themes")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_scoring() {
        let s = LexicalScorer::default();
        assert_eq!(s.score(""), Fixed::ZERO);
        let full = "problem impact budget risk risks timeline milestone metric measure \
                    community deliver evaluate goal maintain open plan report review team";
        assert_eq!(s.score(full), Fixed::ONE);
        let themes = s.themes("Fund a security AUDIT of the indexer");
        assert_eq!(
            themes.into_iter().collect::<Vec<_>>(),
            vec!["infrastructure", "security", "treasury"]
        );
    }
}
