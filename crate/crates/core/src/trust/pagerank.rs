use std::collections::{BTreeMap, VecDeque};

use crate::attestation::GraphSnapshot;
use crate::codec::{Canonical, Fixed, SCALE};
use crate::identity::IdentityId;

use super::{TrustConfig, TrustError, TrustScoreTable};

/// Internal precision: 10^-18 per unit, in i128.
const WIDE: i128 = 1_000_000_000_000_000_000;
const WIDEN: i128 = WIDE / SCALE as i128;

fn div_half_even(num: i128, den: i128) -> i128 {
    let q = num / den;
    let r = num % den;
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

struct TrustGraph {
    ids: Vec<IdentityId>,
    /// Incoming edges per node: (source, confidence in raw fixed units).
    incoming: Vec<Vec<(usize, i128)>>,
    out_weight: Vec<i128>,
    in_ball: Vec<bool>,
}

fn build_graph(snapshot: &GraphSnapshot, config: &TrustConfig) -> TrustGraph {
    let ids: Vec<IdentityId> = snapshot.identities.iter().copied().collect();
    let index: BTreeMap<IdentityId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let n = ids.len();

    let mut weights: BTreeMap<(usize, usize), i128> = BTreeMap::new();
    for att in snapshot.attestations.values() {
        if !config.accepts_schema(&att.body.schema) || att.body.confidence <= Fixed::ZERO {
            continue;
        }
        let (Some(&u), Some(&v)) = (index.get(&att.attestor()), index.get(&att.subject())) else {
            continue;
        };
        if u != v {
            *weights.entry((u, v)).or_default() += i128::from(att.body.confidence.raw());
        }
    }

    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in weights.keys() {
        out[u].push(v);
    }
    let mut dist = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    for seed in config.seeds.keys() {
        let s = index[seed];
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] >= config.hop_limit {
            continue;
        }
        for &v in &out[u] {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let in_ball: Vec<bool> = dist.iter().map(|d| *d <= config.hop_limit).collect();

    let mut incoming = vec![Vec::new(); n];
    let mut out_weight = vec![0i128; n];
    for (&(u, v), &w) in &weights {
        if in_ball[u] && in_ball[v] {
            incoming[v].push((u, w));
            out_weight[u] += w;
        }
    }
    TrustGraph {
        ids,
        incoming,
        out_weight,
        in_ball,
    }
}

/// Hop-limited personalized PageRank.
///
/// `rank(v) = (1-d) p(v) + d (sum over in-ball edges u->v of
/// rank(u) w(u,v) / W(u) + dangling p(v))`, where `W(u)` is the
/// confidence-weighted out-degree inside the ball and `dangling` is the
/// rank held by in-ball identities with no in-ball out-edges. Identities
/// beyond `hop_limit` hops from every seed are fixed at zero.
pub fn compute_trust_scores(
    snapshot: &GraphSnapshot,
    config: &TrustConfig,
) -> Result<TrustScoreTable, TrustError> {
    config.validate()?;
    if let Some(missing) = config.seeds.keys().find(|s| !snapshot.contains(s)) {
        return Err(TrustError::SeedNotInSnapshot(*missing));
    }
    let graph = build_graph(snapshot, config);
    let n = graph.ids.len();

    let prior_total: i128 = config.seeds.values().map(|p| i128::from(p.raw())).sum();
    let mut prior = vec![0i128; n];
    for (seed, p) in &config.seeds {
        let i = graph.ids.binary_search(seed).expect("seed present");
        prior[i] = div_half_even(i128::from(p.raw()) * WIDE, prior_total);
    }

    let damping = i128::from(config.damping.raw()) * WIDEN;
    let teleport = WIDE - damping;
    let epsilon = i128::from(config.convergence_epsilon.raw()) * WIDEN;
    let ball: Vec<usize> = (0..n).filter(|&i| graph.in_ball[i]).collect();

    let mut rank = prior.clone();
    let mut next = vec![0i128; n];
    let mut iterations = 0;
    let mut residual = i128::MAX;
    while iterations < config.max_iterations {
        iterations += 1;
        let dangling: i128 = ball
            .iter()
            .filter(|&&u| graph.out_weight[u] == 0)
            .map(|&u| rank[u])
            .sum();
        for &v in &ball {
            let flow: i128 = graph.incoming[v]
                .iter()
                .map(|&(u, w)| div_half_even(rank[u] * w, graph.out_weight[u]))
                .sum();
            let jump = div_half_even(teleport * prior[v], WIDE);
            let spread = div_half_even(damping * (flow + div_half_even(dangling * prior[v], WIDE)), WIDE);
            next[v] = jump + spread;
        }
        residual = ball.iter().map(|&v| (next[v] - rank[v]).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if residual < epsilon {
            break;
        }
    }
    let converged = residual < epsilon;

    let fixed_scores = normalize_to_one(&rank)?;
    let scores: BTreeMap<IdentityId, Fixed> = graph.ids.iter().copied().zip(fixed_scores).collect();
    let scaled = scores
        .iter()
        .map(|(id, s)| Ok((*id, s.scale_to_int(config.score_scale)?)))
        .collect::<Result<_, TrustError>>()?;
    let residual_fixed = Fixed::from_raw(i64::try_from(div_half_even(residual, WIDEN)).unwrap_or(i64::MAX));

    Ok(TrustScoreTable {
        snapshot_id: snapshot.at,
        snapshot_digest: snapshot.digest(),
        config_digest: config.digest(),
        scores,
        scaled,
        iterations,
        residual: residual_fixed,
        converged,
    })
}

/// Rounds wide-precision ranks to fixed point with the largest remainder
/// method so the result sums to exactly 1. Zero ranks stay zero.
fn normalize_to_one(rank: &[i128]) -> Result<Vec<Fixed>, TrustError> {
    let total: i128 = rank.iter().sum();
    if total <= 0 {
        return Ok(vec![Fixed::ZERO; rank.len()]);
    }
    let one = i128::from(SCALE);
    let mut parts = Vec::with_capacity(rank.len());
    let mut rems = Vec::new();
    let mut assigned = 0i128;
    for (i, r) in rank.iter().enumerate() {
        let num = r * one;
        let q = num / total;
        let rem = num % total;
        assigned += q;
        parts.push(q);
        if rem > 0 {
            rems.push((rem, i));
        }
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = one - assigned;
    for (_, i) in rems {
        if left <= 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    Ok(parts.into_iter().map(|p| Fixed::from_raw(p as i64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{Attestation, AttestationStore, Schema};
    use crate::codec::checked_sum;
    use crate::identity::Keypair;

    fn chain_snapshot(len: usize) -> (GraphSnapshot, Vec<IdentityId>) {
        let keys: Vec<Keypair> = (0..len).map(|i| Keypair::from_seed(&format!("n{i}"))).collect();
        let mut store = AttestationStore::new();
        store.register_schema(Schema::new("trust", true)).unwrap();
        for w in keys.windows(2) {
            let att = Attestation::issue(&w[0], "trust", w[1].id(), Fixed::ONE, Default::default(), 1, None);
            store.submit_attestation(att).unwrap();
        }
        for k in &keys {
            store.set_balance(k.id(), Fixed::ZERO, 1).unwrap();
        }
        (store.take_snapshot(1).unwrap(), keys.iter().map(Keypair::id).collect())
    }

    #[test]
    fn seeds_only_keep_their_priors() {
        let a = Keypair::from_seed("a").id();
        let b = Keypair::from_seed("b").id();
        let c = Keypair::from_seed("c").id();
        let mut store = AttestationStore::new();
        for id in [a, b, c] {
            store.set_balance(id, Fixed::ZERO, 0).unwrap();
        }
        let snap = store.take_snapshot(0).unwrap();
        let mut cfg = TrustConfig::with_seeds([a, b]);
        cfg.seeds.insert(b, "3".parse().unwrap());
        let table = compute_trust_scores(&snap, &cfg).unwrap();
        assert_eq!(table.score(&a), "0.25".parse().unwrap());
        assert_eq!(table.score(&b), "0.75".parse().unwrap());
        assert_eq!(table.score(&c), Fixed::ZERO);
        assert!(table.converged);
    }

    #[test]
    fn hop_limit_clamps_to_exact_zero() {
        let (snap, ids) = chain_snapshot(5);
        let cfg = TrustConfig::with_seeds([ids[0]]);
        let table = compute_trust_scores(&snap, &cfg).unwrap();
        assert!(table.score(&ids[3]) > Fixed::ZERO);
        assert_eq!(table.score(&ids[4]), Fixed::ZERO);
        assert_eq!(checked_sum(table.scores.values().copied()).unwrap(), Fixed::ONE);
    }

    #[test]
    fn errors() {
        let (snap, ids) = chain_snapshot(2);
        let mut cfg = TrustConfig::with_seeds([]);
        assert_eq!(compute_trust_scores(&snap, &cfg), Err(TrustError::NoSeeds));
        let outsider = Keypair::from_seed("zz").id();
        cfg.seeds.insert(outsider, Fixed::ONE);
        assert_eq!(compute_trust_scores(&snap, &cfg), Err(TrustError::SeedNotInSnapshot(outsider)));
        let mut cfg = TrustConfig::with_seeds([ids[0]]);
        cfg.damping = Fixed::ONE;
        assert!(matches!(compute_trust_scores(&snap, &cfg), Err(TrustError::InvalidConfig(_))));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let (snap, ids) = chain_snapshot(4);
        let mut cfg = TrustConfig::with_seeds([ids[0]]);
        cfg.max_iterations = 2;
        let table = compute_trust_scores(&snap, &cfg).unwrap();
        assert!(!table.converged);
        assert_eq!(table.iterations, 2);
        assert!(table.residual > cfg.convergence_epsilon);
    }
}
