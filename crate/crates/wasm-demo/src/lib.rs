//! Browser demo: three operations over small JSON documents. Identities are
//! plain labels; each label maps to a deterministic demo key.

use std::collections::BTreeMap;

use gov_core::attestation::{Attestation, AttestationStore, GraphSnapshot, Schema};
use gov_core::delegation::{resolve, Constraints, DelegationRecord, ProposalRef, Scope};
use gov_core::policy::{drift, plan_rebalance, PortfolioState};
use gov_core::trust::{compute_trust_scores, TrustConfig, TrustScoreTable};
use gov_core::{Fixed, IdentityId, Keypair};
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const SCHEMA: &str = "endorse";

#[derive(Deserialize)]
struct Graph {
    nodes: Vec<String>,
    /// `[from, to, confidence]`
    #[serde(default)]
    edges: Vec<(String, String, Fixed)>,
    seeds: Vec<String>,
    #[serde(default)]
    balances: BTreeMap<String, Fixed>,
}

fn key(label: &str) -> Keypair {
    Keypair::from_seed(&format!("demo:{label}"))
}

struct Built {
    labels: BTreeMap<IdentityId, String>,
    snapshot: GraphSnapshot,
    trust: TrustScoreTable,
}

fn build(g: &Graph) -> Result<Built, String> {
    let mut store = AttestationStore::new();
    store.register_schema(Schema::new(SCHEMA, true)).map_err(|e| e.to_string())?;
    let mut labels = BTreeMap::new();
    for n in &g.nodes {
        let id = key(n).id();
        labels.insert(id, n.clone());
        let bal = g.balances.get(n).copied().unwrap_or(Fixed::ZERO);
        store.set_balance(id, bal, 1).map_err(|e| e.to_string())?;
    }
    for (from, to, conf) in &g.edges {
        for n in [from, to] {
            if !g.nodes.contains(n) {
                return Err(format!("edge mentions unknown node {n:?}"));
            }
        }
        let a = Attestation::issue(&key(from), SCHEMA, key(to).id(), *conf, BTreeMap::new(), 1, None);
        store.submit_attestation(a).map_err(|e| e.to_string())?;
    }
    let snapshot = store.take_snapshot(1).map_err(|e| e.to_string())?;
    let config = TrustConfig::with_seeds(g.seeds.iter().map(|s| key(s).id()));
    let trust = compute_trust_scores(&snapshot, &config).map_err(|e| e.to_string())?;
    Ok(Built { labels, snapshot, trust })
}

/// `{nodes, edges, seeds}` to per-node score and scaled score.
pub fn trust_json(input: &str) -> Result<String, String> {
    let g: Graph = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let b = build(&g)?;
    let scores: BTreeMap<&str, Value> = b
        .trust
        .scores
        .iter()
        .map(|(id, s)| (b.labels[id].as_str(), json!({"score": s.to_string(), "scaled": b.trust.scaled[id]})))
        .collect();
    Ok(json!({
        "root": b.trust.root().to_hex(),
        "iterations": b.trust.iterations,
        "converged": b.trust.converged,
        "scores": scores,
    })
    .to_string())
}

#[derive(Deserialize)]
struct Delegations {
    #[serde(flatten)]
    graph: Graph,
    /// `[from, to]`
    delegations: Vec<(String, String)>,
}

/// The trust graph plus balances and `[from, to]` delegations, to voting
/// weights. Cycle members keep their own balance and are listed.
pub fn resolve_json(input: &str) -> Result<String, String> {
    let d: Delegations = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let b = build(&d.graph)?;
    let records: Vec<DelegationRecord> = d
        .delegations
        .iter()
        .map(|(from, to)| DelegationRecord::sign(&key(from), key(to).id(), Scope::Global, Constraints::default(), 1))
        .collect();
    let proposal = ProposalRef {
        id: "demo".into(),
        topic: "general".into(),
    };
    let w = resolve(&b.snapshot, &records, &proposal, &b.trust).map_err(|e| e.to_string())?;
    let weights: BTreeMap<&str, String> = w.weights.iter().map(|(id, v)| (b.labels[id].as_str(), v.to_string())).collect();
    let forfeited: std::collections::BTreeSet<&str> = w.forfeited.iter().map(|id| b.labels[id].as_str()).collect();
    Ok(json!({"root": w.root.to_hex(), "weights": weights, "forfeited": forfeited}).to_string())
}

#[derive(Deserialize)]
struct Rebalance {
    #[serde(flatten)]
    portfolio: PortfolioState,
    max_move: Fixed,
}

/// `{holdings, targets, max_move}` to drift and the transfers that close it
/// within the cap.
pub fn rebalance_json(input: &str) -> Result<String, String> {
    let r: Rebalance = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let d = drift(&r.portfolio).map_err(|e| e.to_string())?;
    let plan = plan_rebalance(&r.portfolio, r.max_move).map_err(|e| e.to_string())?;
    Ok(json!({
        "drift": d.to_string(),
        "drift_after": plan.drift_after.to_string(),
        "infeasible_within_caps": plan.infeasible_within_caps,
        "transfers": plan.transfers,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn trust_scores(input: &str) -> Result<String, JsValue> {
    trust_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn resolve_delegations(input: &str) -> Result<String, JsValue> {
    resolve_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rebalance(input: &str) -> Result<String, JsValue> {
    rebalance_json(input).map_err(|e| JsValue::from_str(&e))
}
