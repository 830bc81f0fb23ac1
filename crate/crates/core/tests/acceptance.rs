//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test -p gov-core --test acceptance --release`

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gov_core::attestation::{Attestation, GraphSnapshot};
use gov_core::codec::Canonical;
use gov_core::delegation::{self, resolve, weight_leaf, Constraints, DelegationRecord, ProposalRef, Scope};
use gov_core::pipeline::{run_pipeline, structured_accept, AcceptError};
use gov_core::policy::{drift, replay_epoch, ActionKind, EpochManifest, Policy, PolicyEngine, PortfolioState, WorldState};
use gov_core::sim::{Behavior, OperatorProfile, SettlementStatus, TaskInput, TaskKind, TaskRecord, TrustMode, World};
use gov_core::store::{run_case_study, verify_bundle, CaseStudy};
use gov_core::trust::{compute_trust_scores, TrustConfig};
use gov_core::workload::{self, rng};
use gov_core::{Fixed, IdentityId, Keypair};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fx(n: i64) -> Fixed {
    Fixed::from_int(n).unwrap()
}

// ---------------------------------------------------------------------------
// Trust: an independent dense f64 power iteration.

/// `(from, to, confidence in tenths)`
type Edge = (usize, usize, i64);

struct TrustCase {
    n: usize,
    edges: Vec<Edge>,
    seeds: Vec<usize>,
}

fn oracle_distances(n: usize, edges: &[Edge], seeds: &[usize]) -> Vec<u32> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v, c) in edges {
        if u != v && c > 0 {
            adj[u].push(v);
        }
    }
    let mut dist = vec![u32::MAX; n];
    let mut q = VecDeque::new();
    for &s in seeds {
        dist[s] = 0;
        q.push_back(s);
    }
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

fn oracle_scores(case: &TrustCase, hop: u32, damping: f64) -> Vec<f64> {
    let n = case.n;
    let dist = oracle_distances(n, &case.edges, &case.seeds);
    let ball: Vec<bool> = dist.iter().map(|d| *d <= hop).collect();
    let mut w = vec![vec![0.0f64; n]; n];
    for &(u, v, c) in &case.edges {
        if u != v && c > 0 && ball[u] && ball[v] {
            w[u][v] += c as f64 / 10.0;
        }
    }
    let out: Vec<f64> = w.iter().map(|row| row.iter().sum()).collect();
    let mut prior = vec![0.0; n];
    for &s in &case.seeds {
        prior[s] = 1.0 / case.seeds.len() as f64;
    }
    let mut r = prior.clone();
    for _ in 0..10_000 {
        let dangling: f64 = (0..n).filter(|&u| ball[u] && out[u] == 0.0).map(|u| r[u]).sum();
        let mut next = vec![0.0; n];
        for v in 0..n {
            if !ball[v] {
                continue;
            }
            let flow: f64 = (0..n).filter(|&u| out[u] > 0.0).map(|u| r[u] * w[u][v] / out[u]).sum();
            next[v] = (1.0 - damping) * prior[v] + damping * (flow + dangling * prior[v]);
        }
        let delta: f64 = (0..n).map(|i| (next[i] - r[i]).abs()).sum();
        r = next;
        if delta < 1e-15 {
            break;
        }
    }
    let total: f64 = r.iter().sum();
    r.iter().map(|x| x / total).collect()
}

fn issue(keys: &[Keypair], &(u, v, c): &Edge, at: u64) -> Attestation {
    Attestation::issue(&keys[u], "endorse", keys[v].id(), Fixed::from_ratio(c, 10).unwrap(), BTreeMap::new(), at, None)
}

fn snapshot_of<'a>(keys: &[Keypair], n: usize, atts: impl IntoIterator<Item = &'a Attestation>) -> GraphSnapshot {
    GraphSnapshot {
        at: 1,
        attestations: atts.into_iter().map(|a| (a.uid(), a.clone())).collect(),
        identities: keys[..n].iter().map(Keypair::id).collect(),
        balances: BTreeMap::new(),
    }
}

fn engine_scores(keys: &[Keypair], case: &TrustCase, snap: &GraphSnapshot) -> Result<Vec<Fixed>, String> {
    let config = TrustConfig::with_seeds(case.seeds.iter().map(|&s| keys[s].id()));
    let t = compute_trust_scores(snap, &config).map_err(|e| e.to_string())?;
    check(t.converged, || "engine did not converge".into())?;
    Ok((0..case.n).map(|i| t.score(&keys[i].id())).collect())
}

fn linf(a: &[Fixed], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.to_f64() - y).abs()).fold(0.0, f64::max)
}

fn random_case(r: &mut ChaCha8Rng, n: usize, mean_degree: f64) -> TrustCase {
    let mut edges = Vec::new();
    for u in 0..n {
        let k = r.random_range(0..=(2.0 * mean_degree) as usize);
        for _ in 0..k {
            let v = r.random_range(0..n);
            // Occasional zero-confidence edges and self loops must be ignored.
            let c = if r.random_bool(0.05) { 0 } else { r.random_range(1..=10) };
            if v != u || r.random_bool(0.2) {
                edges.push((u, v, c));
            }
        }
    }
    let seeds: BTreeSet<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(0..n)).collect();
    TrustCase {
        n,
        edges,
        seeds: seeds.into_iter().collect(),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let keys = workload::keys("acceptance:trust", 50);
    let mut worst = 0.0f64;
    let mut graphs = 0;
    for (t, n) in [6usize, 7, 8].into_iter().enumerate() {
        let mut r = rng(100 + t as u64);
        let mut pairs = BTreeSet::new();
        while pairs.len() < 12 {
            let (u, v) = (r.random_range(0..n), r.random_range(0..n));
            if u != v {
                pairs.insert((u, v));
            }
        }
        let template: Vec<Edge> = pairs.into_iter().map(|(u, v)| (u, v, r.random_range(1..=10))).collect();
        let atts: Vec<Attestation> = template.iter().map(|e| issue(&keys, e, 1)).collect();
        let seeds = match t {
            0 => vec![0],
            1 => vec![0, 1],
            _ => vec![0, 3],
        };
        for mask in 0u32..1 << template.len() {
            let chosen: Vec<usize> = (0..template.len()).filter(|i| mask >> i & 1 == 1).collect();
            let case = TrustCase {
                n,
                edges: chosen.iter().map(|&i| template[i]).collect(),
                seeds: seeds.clone(),
            };
            let snap = snapshot_of(&keys, n, chosen.iter().map(|&i| &atts[i]));
            let got = engine_scores(&keys, &case, &snap)?;
            let d = linf(&got, &oracle_scores(&case, 3, 0.85));
            check(d < 1e-7, || format!("template {t} mask {mask:#x}: L-inf {d:e}"))?;
            worst = worst.max(d);
            graphs += 1;
        }
    }
    let mut r = rng(101);
    for g in 0..1_000 {
        let degree = r.random_range(1.0..4.0);
        let case = random_case(&mut r, 50, degree);
        let atts: Vec<Attestation> = case
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| issue(&keys, e, 1 + i as u64))
            .collect();
        let snap = snapshot_of(&keys, case.n, &atts);
        let got = engine_scores(&keys, &case, &snap)?;
        let d = linf(&got, &oracle_scores(&case, 3, 0.85));
        check(d < 1e-7, || format!("random graph {g}: L-inf {d:e}"))?;
        worst = worst.max(d);
        graphs += 1;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{graphs} graphs, worst L-inf {worst:.2e}, {elapsed:.1?}"))
}

fn criterion_2() -> Outcome {
    let keys = workload::keys("acceptance:hops", 60);
    let mut r = rng(200);
    let (mut far, mut near) = (0usize, 0usize);
    for g in 0..1_000 {
        let n = r.random_range(10..=60);
        let degree = r.random_range(0.5..2.0);
        let case = random_case(&mut r, n, degree);
        let atts: Vec<Attestation> = case
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| issue(&keys, e, 1 + i as u64))
            .collect();
        let snap = snapshot_of(&keys, n, &atts);
        let got = engine_scores(&keys, &case, &snap)?;
        let dist = oracle_distances(n, &case.edges, &case.seeds);
        for (i, d) in dist.iter().enumerate() {
            if *d > 3 {
                far += 1;
                check(got[i] == Fixed::ZERO, || format!("graph {g}: node {i} at distance {d} scores {}", got[i]))?;
            } else {
                near += 1;
            }
        }
    }
    check(far > 1_000, || format!("only {far} identities beyond three hops"))?;
    Ok(format!("{far} identities beyond 3 hops all exactly 0 ({near} within)"))
}

fn criterion_3() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Fixture {
        seeds: Vec<String>,
        identities: Vec<String>,
        edges: Vec<(String, String, Fixed)>,
    }
    let f: Fixture = serde_json::from_str(include_str!("fixtures/trust-65.json")).map_err(|e| e.to_string())?;
    check(f.identities.len() == 65 && f.seeds.len() == 3, || "fixture shape".into())?;
    let key = |l: &str| Keypair::from_seed(l);
    let atts: Vec<Attestation> = f
        .edges
        .iter()
        .map(|(a, b, c)| Attestation::issue(&key(a), "endorse", key(b).id(), *c, BTreeMap::new(), 1, None))
        .collect();
    let snap = GraphSnapshot {
        at: 1,
        attestations: atts.iter().map(|a| (a.uid(), a.clone())).collect(),
        identities: f.identities.iter().map(|l| key(l).id()).collect(),
        balances: BTreeMap::new(),
    };
    let t = compute_trust_scores(&snap, &TrustConfig::with_seeds(f.seeds.iter().map(|s| key(s).id())))
        .map_err(|e| e.to_string())?;
    let mut scaled: Vec<f64> = t.scaled.values().map(|&s| s as f64).collect();
    scaled.sort_by(f64::total_cmp);
    let n = scaled.len() as f64;
    let median = scaled[scaled.len() / 2];
    let mean = scaled.iter().sum::<f64>() / n;
    let max = scaled[scaled.len() - 1];
    let sd = (scaled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let skew = scaled.iter().map(|x| ((x - mean) / sd).powi(3)).sum::<f64>() / n;
    let ratio = max / median;
    check(skew > 0.0, || format!("skewness {skew:.2}"))?;
    check(median < mean, || format!("median {median} >= mean {mean:.1}"))?;
    check(ratio > 5.0, || format!("max/median {ratio:.2}"))?;
    Ok(format!("median {median}, mean {mean:.1}, max {max}, max/median {ratio:.1}, skewness {skew:.2}"))
}

// ---------------------------------------------------------------------------
// Delegation.

/// Walks each chain by hand. A node that comes back to itself is on a cycle
/// and keeps its balance; a chain that runs into a cycle stops at the first
/// cycle member it meets.
fn chain_walk(next: &[Option<usize>], balances: &[i128]) -> (Vec<i128>, BTreeSet<usize>) {
    let n = next.len();
    let mut weights = vec![0i128; n];
    let mut cyclic = BTreeSet::new();
    for start in 0..n {
        let mut path = vec![start];
        let mut cur = start;
        let terminal = loop {
            match next[cur] {
                None => break cur,
                Some(nx) => {
                    if let Some(pos) = path.iter().position(|&p| p == nx) {
                        if pos == 0 {
                            cyclic.insert(start);
                            break start;
                        }
                        break nx;
                    }
                    path.push(nx);
                    cur = nx;
                }
            }
        };
        weights[terminal] += balances[start];
    }
    (weights, cyclic)
}

fn criterion_4() -> Outcome {
    let pool = workload::keys("acceptance:delegation", 1_000);
    let pool_ids: Vec<IdentityId> = pool.iter().map(Keypair::id).collect();
    let mut r = rng(400);
    let proposal = ProposalRef {
        id: "P1".into(),
        topic: "treasury".into(),
    };
    let (mut with_cycles, mut total_records, mut largest_depth) = (0, 0, 0);
    for inst in 0..10_000u32 {
        let n = if inst % 100 == 99 {
            1_000
        } else {
            (1_000f64.ln() * r.random::<f64>()).exp().round().clamp(1.0, 1_000.0) as usize
        };
        let mut members: Vec<usize> = (0..1_000).collect();
        members.shuffle(&mut r);
        members.truncate(n);
        let balances: Vec<i128> = (0..n)
            .map(|_| if r.random_bool(0.1) { 0 } else { r.random_range(0..=1_000_000_000_000i64) } as i128)
            .collect();

        // Forest of depth <= 20 built by insertion in random order.
        let rate = r.random_range(0.2..0.95);
        let mut next: Vec<Option<usize>> = vec![None; n];
        let mut depth = vec![0usize; n];
        for i in 1..n {
            if r.random_bool(rate) {
                let p = r.random_range(0..i);
                if depth[p] < 20 {
                    next[i] = Some(p);
                    depth[i] = depth[p] + 1;
                    largest_depth = largest_depth.max(depth[i]);
                }
            }
        }
        if r.random_bool(0.1) {
            let mut roots: Vec<usize> = (0..n).filter(|&i| next[i].is_none()).collect();
            roots.shuffle(&mut r);
            let mut injected = false;
            while roots.len() >= 2 {
                let len = r.random_range(2..=5).min(roots.len());
                let cycle: Vec<usize> = roots.drain(..len).collect();
                for k in 0..len {
                    next[cycle[k]] = Some(cycle[(k + 1) % len]);
                }
                injected = true;
                if r.random_bool(0.5) {
                    break;
                }
            }
            with_cycles += usize::from(injected);
        }

        let mut records = Vec::new();
        for (i, nx) in next.iter().enumerate() {
            let Some(j) = nx else { continue };
            let (from, to) = (&pool[members[i]], pool_ids[members[*j]]);
            if r.random_bool(0.05) {
                // A superseded record that must be ignored.
                let decoy = pool_ids[members[(i + 1) % n]];
                if decoy != from.id() {
                    records.push(DelegationRecord::sign(from, decoy, Scope::Global, Constraints::default(), 1));
                }
            }
            records.push(DelegationRecord::sign(from, to, Scope::Global, Constraints::default(), 2));
        }
        records.shuffle(&mut r);
        total_records += records.len();

        let snap = GraphSnapshot {
            at: 1,
            attestations: BTreeMap::new(),
            identities: members.iter().map(|&m| pool_ids[m]).collect(),
            balances: members
                .iter()
                .zip(&balances)
                .map(|(&m, &b)| (pool_ids[m], Fixed::from_raw(b as i64)))
                .collect(),
        };
        let trust = compute_trust_scores(&snap, &TrustConfig::with_seeds([pool_ids[members[0]]])).map_err(|e| e.to_string())?;
        let w = resolve(&snap, &records, &proposal, &trust).map_err(|e| format!("instance {inst}: {e}"))?;

        let sum_w: i128 = w.weights.values().map(|f| f.raw() as i128).sum();
        let sum_b: i128 = balances.iter().sum();
        check(sum_w == sum_b, || format!("instance {inst}: weights sum {sum_w} != balances {sum_b}"))?;

        let (expect, cyclic) = chain_walk(&next, &balances);
        for (i, &m) in members.iter().enumerate() {
            let got = w.weight(&pool_ids[m]).raw() as i128;
            check(got == expect[i], || format!("instance {inst}: member {i} weight {got} != {}", expect[i]))?;
        }
        let expect_forfeited: BTreeSet<IdentityId> = cyclic.iter().map(|&i| pool_ids[members[i]]).collect();
        check(w.forfeited == expect_forfeited, || format!("instance {inst}: cycle members differ"))?;
    }
    Ok(format!(
        "10000/10000 match the chain walk; {with_cycles} with cycles, {total_records} records, max depth {largest_depth}"
    ))
}

fn criterion_5() -> Outcome {
    let w = workload::delegation_workload(5, 100_000, 0.5);
    let start = Instant::now();
    let resolved = resolve(&w.snapshot, &w.records, &w.proposal, &w.trust).map_err(|e| e.to_string())?;
    let commitment = delegation::commit(&resolved);
    let elapsed = start.elapsed();
    check(commitment.root() == resolved.root, || "commitment root differs from resolved root".into())?;
    check(elapsed < Duration::from_secs(10), || format!("resolve + commit took {elapsed:?}"))?;
    let ids: Vec<IdentityId> = resolved.weights.keys().copied().collect();
    let mut r = rng(500);
    for _ in 0..100 {
        let id = ids[r.random_range(0..ids.len())];
        let proof = commitment.prove(&id).map_err(|e| e.to_string())?;
        let (key, value) = weight_leaf(&id, resolved.weight(&id));
        check(proof.key == key && proof.value == value, || format!("proof for {id:?} carries the wrong leaf"))?;
        check(proof.verify(&resolved.root), || format!("proof for {id:?} does not verify"))?;
    }
    Ok(format!("{} identities, {} records, resolve + commit {elapsed:.2?}, 100 proofs verify", ids.len(), w.records.len()))
}

// ---------------------------------------------------------------------------
// Settlement.

fn settle_once(
    input: &TaskInput,
    quorum: (u32, u32),
    behaviors: &[Behavior],
    world_seed: u64,
) -> Result<(World, gov_core::sim::SettlementOutcome), String> {
    let mut world = World::new(world_seed);
    for (i, b) in behaviors.iter().enumerate() {
        world
            .add_operator(OperatorProfile::new(&format!("op{i}"), fx(100), TrustMode::Economic, *b))
            .map_err(|e| e.to_string())?;
    }
    let digest = world.pin_input(input.clone());
    let id = world
        .register_task(TaskRecord::new(TaskKind::DelegationResolve, digest, quorum, 2))
        .map_err(|e| e.to_string())?;
    world.run_until(2);
    let outcome = world.settle(&id).map_err(|e| e.to_string())?;
    Ok((world, outcome))
}

fn criterion_6() -> Outcome {
    let w = workload::delegation_workload(6, 40, 0.5);
    let honest = resolve(&w.snapshot, &w.records, &w.proposal, &w.trust).map_err(|e| e.to_string())?.root;
    let input = TaskInput::DelegationResolve {
        snapshot: w.snapshot,
        trust: w.trust,
        records: w.records,
        proposal: w.proposal,
    };
    let mut r = rng(600);
    let (mut runs, mut fallbacks) = (0, 0);
    for (t, n) in [(3u32, 5u32), (2, 3), (5, 7)] {
        for world_seed in 0..3u64 {
            for k in 0..=(n - t) as usize {
                for variant in ["tamper", "crash", "mixed", "collude"] {
                    let mut order: Vec<usize> = (0..n as usize).collect();
                    order.shuffle(&mut r);
                    let bad: BTreeSet<usize> = order[..k].iter().copied().collect();
                    let behaviors: Vec<Behavior> = (0..n as usize)
                        .map(|i| {
                            if !bad.contains(&i) {
                                return Behavior::Honest;
                            }
                            match variant {
                                "tamper" => Behavior::Tamper { seed: 1_000 + i as u64 },
                                "crash" => Behavior::Crash,
                                "mixed" if i % 2 == 0 => Behavior::Crash,
                                "mixed" => Behavior::Tamper { seed: 2_000 + i as u64 },
                                _ => Behavior::Tamper { seed: 77 },
                            }
                        })
                        .collect();
                    let (world, out) = settle_once(&input, (t, n), &behaviors, world_seed)?;
                    let ctx = || format!("({t},{n}) k={k} {variant} seed {world_seed}");
                    check(out.status == SettlementStatus::Accepted, || format!("{}: not accepted", ctx()))?;
                    check(out.root == Some(honest), || format!("{}: settled a dishonest root", ctx()))?;
                    let slashed: BTreeSet<String> = out.slashed.keys().cloned().collect();
                    let expected: BTreeSet<String> = bad.iter().map(|i| format!("op{i}")).collect();
                    check(slashed == expected, || format!("{}: slashed {slashed:?}, expected {expected:?}", ctx()))?;
                    check(!world.fallback(), || format!("{}: fallback raised", ctx()))?;
                    runs += 1;
                }
            }
            for k in (n - t + 1) as usize..=n as usize {
                let behaviors: Vec<Behavior> = (0..n as usize)
                    .map(|i| if i < k { Behavior::Tamper { seed: 3_000 + i as u64 } } else { Behavior::Honest })
                    .collect();
                let (world, out) = settle_once(&input, (t, n), &behaviors, world_seed)?;
                let ctx = || format!("({t},{n}) {k} distinct tamperers seed {world_seed}");
                check(world.fallback(), || format!("{}: fallback not raised", ctx()))?;
                check(out.root.is_none(), || format!("{}: a root was recorded", ctx()))?;
                check(out.status == SettlementStatus::RejectedNoQuorum, || format!("{}: status", ctx()))?;
                fallbacks += 1;
            }
        }
    }
    Ok(format!("{runs} tolerated runs settle the honest root and slash exactly the faulty set; {fallbacks} fallback runs record no root"))
}

// ---------------------------------------------------------------------------
// Pipeline.

fn criterion_7() -> Outcome {
    let tol: Fixed = "0.01".parse().unwrap();
    let mut r = rng(700);
    let (mut accepted, mut rejected) = (0, 0);
    for case in 0..10_000 {
        let dim = r.random_range(1..=5);
        let mut outputs = vec![Vec::with_capacity(dim); 3];
        for _ in 0..dim {
            let base = r.random_range(-5_000_000_000i64..5_000_000_000);
            let spread = match r.random_range(0..4) {
                0 => r.random_range(0..tol.raw()),
                1 => tol.raw() + r.random_range(1..1_000_000),
                _ => tol.raw() + r.random_range(-3..=3),
            };
            let mut col = [base, base + spread, base + r.random_range(0..=spread)];
            col.shuffle(&mut r);
            for (o, v) in outputs.iter_mut().zip(col) {
                o.push(Fixed::from_raw(v));
            }
        }
        let mut canonical = Vec::new();
        let mut violations = Vec::new();
        for c in 0..dim {
            let mut col: Vec<i64> = outputs.iter().map(|o| o[c].raw()).collect();
            col.sort_unstable();
            if col[2] - col[0] > tol.raw() {
                violations.push(c);
            }
            canonical.push(Fixed::from_raw(col[1]));
        }
        match structured_accept(&outputs, tol) {
            Ok(v) => {
                check(violations.is_empty(), || format!("case {case}: accepted a spread beyond tolerance"))?;
                check(v == canonical, || format!("case {case}: canonical vector differs"))?;
                accepted += 1;
            }
            Err(AcceptError::SpreadExceeded(d)) => {
                let coords: Vec<usize> = d.iter().map(|x| x.coordinate).collect();
                check(coords == violations, || format!("case {case}: flagged {coords:?}, expected {violations:?}"))?;
                rejected += 1;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        }
    }
    Ok(format!("10000 triples agree with the sort oracle ({accepted} accepted, {rejected} rejected)"))
}

fn criterion_8() -> Outcome {
    let w = workload::pipeline_workload(8, 40, 400);
    let mut first: Option<(Vec<gov_core::Digest>, Vec<u8>)> = None;
    for run in 0..5u64 {
        let ballots = workload::shuffled(&w.ballots, 800 + run);
        let threads = Some(run as usize + 1);
        let out = run_pipeline(&w.population.snapshot, &w.trust, &ballots, &w.config, threads).map_err(|e| e.to_string())?;
        let got = (out.stage_digests(), out.canonical_bytes());
        match &first {
            None => first = Some(got),
            Some(f) => check(*f == got, || format!("run {run} with {threads:?} threads differs"))?,
        }
    }
    let digests = first.expect("five runs").0;
    Ok(format!("5 shuffled runs, 1-5 threads, identical stage digests ({})", digests.iter().map(|d| d.short()).collect::<Vec<_>>().join(" ")))
}

fn criterion_9() -> Outcome {
    let scenario = CaseStudy::generated(9, 1_000, 10_000);
    let start = Instant::now();
    let result = run_case_study(&scenario, &[]).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let settled = result.settlement().ok_or("no settlement")?;
    let i = &result.inputs;
    let direct = run_pipeline(&i.snapshot, &result.outputs.trust, &i.ballots, &i.pipeline, None).map_err(|e| e.to_string())?;
    check(settled.root == Some(direct.result_root()), || "settled root differs from the direct run".into())?;
    check(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 proposals, {} ballots, 5 operators: settled {} in {elapsed:.1?}",
        i.ballots.len(),
        direct.result_root().short()
    ))
}

// ---------------------------------------------------------------------------
// Policy.

const PREDICATES: &[&str] = &[
    "drift",
    "treasury_health",
    "epoch",
    "proposals_pending",
    "attestation_changes",
    "demand",
    "data.price",
    "data.ready",
];

fn number(r: &mut ChaCha8Rng, hi: i64) -> String {
    if r.random_bool(0.3) {
        format!("{}.{}", r.random_range(0..hi), r.random_range(0..100))
    } else {
        r.random_range(0..=hi).to_string()
    }
}

fn operand(r: &mut ChaCha8Rng) -> String {
    let p = PREDICATES[r.random_range(0..PREDICATES.len())];
    match r.random_range(0..3) {
        0 => number(r, 200),
        1 => p.to_string(),
        _ => format!("{p} * {}", number(r, 50)),
    }
}

fn expr(r: &mut ChaCha8Rng, depth: u32) -> String {
    let op = ["<", "<=", ">", ">=", "==", "!="][r.random_range(0..6)];
    match if depth == 0 { 0 } else { r.random_range(0..7) } {
        0..=2 => format!("{} {op} {}", operand(r), operand(r)),
        3 => format!("not ({})", expr(r, depth - 1)),
        4 => format!("({}) and ({})", expr(r, depth - 1), expr(r, depth - 1)),
        5 => format!("({}) or ({})", expr(r, depth - 1), expr(r, depth - 1)),
        _ => ["true", "false"][r.random_range(0..2)].to_string(),
    }
}

/// Declared bounds per action per parameter, read back from the source we
/// generated rather than from the parsed policy.
struct Generated {
    source: String,
    bounds: Vec<BTreeMap<String, (Fixed, Fixed)>>,
    per_action: Option<Fixed>,
    per_epoch: Option<Fixed>,
    timelock: u64,
}

fn random_policy(r: &mut ChaCha8Rng, id: &str) -> Generated {
    let mut s = format!("policy {id}\nversion {}\nexpiry {}\n", r.random_range(1..4), r.random_range(3..40));
    for _ in 0..r.random_range(1..=2) {
        s += &match r.random_range(0..4) {
            0 => format!("trigger time-elapsed every={}\n", r.random_range(1..4)),
            1 => format!("trigger drift-exceeds threshold=0.{:02}\n", r.random_range(1..30)),
            2 => format!("trigger proposal-submitted min={}\n", r.random_range(1..5)),
            _ => format!("trigger attestation-changed min={}\n", r.random_range(1..5)),
        };
    }
    if r.random_bool(0.7) {
        s += &format!("condition {}\n", expr(r, 2));
    }
    let mut bounds = Vec::new();
    for _ in 0..r.random_range(1..=3) {
        let kind = ["rebalance", "transfer", "set-parameter", "compensate"][r.random_range(0..4)];
        let mut names = vec![];
        if kind == "rebalance" {
            names.push("max_move".to_string());
        }
        let extra = if kind == "rebalance" { r.random_range(0..=2) } else { r.random_range(1..=3) };
        for i in 0..extra {
            names.push(format!("p{i}"));
        }
        let mut line = format!("action {kind}");
        let mut b = BTreeMap::new();
        for name in names {
            let lo = r.random_range(if name == "max_move" { 0 } else { -20i64 }..=50);
            let hi = lo + r.random_range(0..=150);
            line += &format!(" {name}={} in [{lo}, {hi}]", operand(r));
            b.insert(name, (fx(lo), fx(hi)));
        }
        s += &line;
        s += "\n";
        bounds.push(b);
    }
    let per_action = r.random_bool(0.5).then(|| fx(r.random_range(1..=100)));
    let per_epoch = r.random_bool(0.5).then(|| fx(r.random_range(1..=200)));
    if let Some(c) = per_action {
        s += &format!("limit per-action {c}\n");
    }
    if let Some(c) = per_epoch {
        s += &format!("limit per-epoch {c}\n");
    }
    if r.random_bool(0.4) {
        s += &format!("limit rate {} per {}\n", r.random_range(1..3), r.random_range(1..6));
    }
    for e in ["missing-data", "clipped", "infeasible"] {
        if r.random_bool(0.3) {
            s += &format!("exception escalate {e}\n");
        }
    }
    let timelock = r.random_range(0..5);
    s += &format!("timelock {timelock}\n");
    Generated {
        source: s,
        bounds,
        per_action,
        per_epoch,
        timelock,
    }
}

fn random_world(r: &mut ChaCha8Rng, epoch: u64) -> WorldState {
    let classes = ["stable", "defi", "strategic"];
    let portfolio = if r.random_bool(0.85) {
        PortfolioState {
            holdings: classes.iter().map(|c| (c.to_string(), fx(r.random_range(0..100)))).collect(),
            targets: classes
                .iter()
                .zip(["0.3", "0.5", "0.2"])
                .map(|(c, t)| (c.to_string(), t.parse().unwrap()))
                .collect(),
        }
    } else {
        PortfolioState::default()
    };
    let opt = |r: &mut ChaCha8Rng| r.random_bool(0.8).then(|| Fixed::from_ratio(r.random_range(0..2_000), 10).unwrap());
    let mut data = BTreeMap::new();
    for k in ["price", "ready"] {
        if let Some(v) = opt(r) {
            data.insert(k.to_string(), v);
        }
    }
    WorldState {
        epoch,
        portfolio,
        treasury_health: opt(r),
        proposals_pending: r.random_range(0..6),
        attestation_changes: r.random_range(0..6),
        demand: opt(r),
        data,
    }
}

fn criterion_10() -> Outcome {
    let mut r = rng(1_000);
    let (mut plans, mut executed, mut epochs) = (0usize, 0usize, 0usize);
    for case in 0..10_000 {
        let gens: Vec<Generated> = (0..r.random_range(1..=3)).map(|i| random_policy(&mut r, &format!("p{i}"))).collect();
        let mut engine = PolicyEngine::new("guardian");
        let mut by_id = BTreeMap::new();
        for g in &gens {
            let p = Policy::parse(&g.source).map_err(|e| format!("case {case}: generated policy rejected: {e}\n{}", g.source))?;
            by_id.insert(p.id.clone(), g);
            engine.install(p, 0);
        }
        let mut emitted_at = BTreeMap::new();
        for epoch in 1..=r.random_range(3..25) {
            let record = engine.step(&random_world(&mut r, epoch));
            epochs += 1;
            let ctx = |what: String| format!("case {case} epoch {epoch}: {what}");

            let manifest = EpochManifest::from_value(&record.manifest.to_value()).map_err(|e| ctx(e.to_string()))?;
            check(replay_epoch(&manifest) == record.plans, || ctx("replay differs".into()))?;

            for plan in &record.plans {
                let g = by_id[&plan.policy_id];
                check(plan.actions.len() == g.bounds.len(), || ctx("action count".into()))?;
                let mut total = 0i128;
                for (a, b) in plan.actions.iter().zip(&g.bounds) {
                    check(a.params.keys().eq(b.keys()), || ctx("parameter names".into()))?;
                    for (name, v) in &a.params {
                        let (lo, hi) = b[name];
                        check(lo <= *v && *v <= hi, || ctx(format!("{name}={v} outside [{lo}, {hi}]")))?;
                        if let Some(cap) = g.per_action {
                            check(v.abs() <= cap, || ctx(format!("{name}={v} above per-action cap {cap}")))?;
                        }
                        total += v.abs().raw() as i128;
                    }
                    if a.kind == ActionKind::Rebalance {
                        let moved: i128 = a.transfers.iter().map(|t| t.amount.raw() as i128).sum();
                        check(a.transfers.iter().all(|t| !t.amount.is_negative()), || ctx("negative transfer".into()))?;
                        check(moved <= a.params["max_move"].raw() as i128, || ctx("transfers exceed max_move".into()))?;
                    }
                }
                if let Some(cap) = g.per_epoch {
                    check(total <= cap.raw() as i128, || ctx("plan exceeds per-epoch cap".into()))?;
                }
                emitted_at.insert(plan.plan_id, (plan.epoch, g.timelock));
                plans += 1;
            }
            for ex in &record.executions {
                let (at, timelock) = emitted_at[&ex.plan_id];
                check(ex.epoch >= at + timelock, || ctx(format!("executed at {} before timelock opened ({at}+{timelock})", ex.epoch)))?;
                if ex.status == gov_core::policy::PlanStatus::Executed {
                    executed += 1;
                }
            }
        }
    }
    check(executed > 1_000, || format!("only {executed} executions"))?;

    const TREASURY: &str = "policy treasury\nexpiry 100\ntrigger drift-exceeds threshold=0.10\naction rebalance max_move=drift * 100 in [0, 50]\nlimit per-epoch 50\ntimelock 2\n";
    let portfolio = |s: i64, d: i64, g: i64| PortfolioState {
        holdings: [("stable", s), ("defi", d), ("strategic", g)].into_iter().map(|(k, v)| (k.to_string(), fx(v))).collect(),
        targets: [("stable", "0.3"), ("defi", "0.5"), ("strategic", "0.2")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.parse().unwrap()))
            .collect(),
    };
    let mut emitted = Vec::new();
    for (p, want) in [(portfolio(45, 35, 20), "0.15"), (portfolio(39, 41, 20), "0.09")] {
        check(drift(&p).map_err(|e| e.to_string())? == want.parse().unwrap(), || format!("drift is not {want}"))?;
        let mut engine = PolicyEngine::new("guardian");
        engine.install(Policy::parse(TREASURY).map_err(|e| e.to_string())?, 0);
        let rec = engine.step(&WorldState {
            epoch: 1,
            portfolio: p,
            ..Default::default()
        });
        emitted.push(rec.plans.len());
    }
    check(emitted == [1, 0], || format!("treasury plans {emitted:?}, expected [1, 0]"))?;
    Ok(format!(
        "10000 cases, {epochs} epochs, {plans} plans, {executed} executions, 0 violations; treasury drift 15% plans, 9% does not"
    ))
}

// ---------------------------------------------------------------------------
// Bundles.

fn criterion_11() -> Outcome {
    let mut bundle = run_case_study(&CaseStudy::demo(), &[]).map_err(|e| e.to_string())?.bundle;
    let baseline = verify_bundle(&bundle).map_err(|e| e.to_string())?;
    check(baseline.ok(), || format!("untouched bundle fails: {:?}", baseline.divergence))?;
    let names: Vec<String> = bundle.files.keys().cloned().collect();
    let mut flips = 0usize;
    for name in &names {
        let len = bundle.files[name].len();
        for i in 0..len {
            bundle.files.get_mut(name).unwrap()[i] ^= 0x01;
            let detected = verify_bundle(&bundle).map_or(true, |rep| !rep.ok());
            bundle.files.get_mut(name).unwrap()[i] ^= 0x01;
            check(detected, || format!("flip of byte {i} in {name} went unnoticed"))?;
            flips += 1;
        }
    }
    Ok(format!("{flips} single-byte corruptions across {} files, all detected", names.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("trust matches dense power iteration", criterion_1),
        ("hop limit is exact", criterion_2),
        ("65-identity fixture is right-skewed", criterion_3),
        ("delegation matches chain walk", criterion_4),
        ("100k resolve + commit under 10 s", criterion_5),
        ("quorum matrix", criterion_6),
        ("structured acceptance", criterion_7),
        ("pipeline determinism", criterion_8),
        ("scale run under 5 minutes", criterion_9),
        ("policy safety", criterion_10),
        ("bundle corruption sweep", criterion_11),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
