//! Engine outputs checked against straight-line reimplementations.

use std::collections::{BTreeMap, BTreeSet};

use gov_core::codec::{apportion, MerkleTree};
use gov_core::delegation::{commit, weight_leaf};
use gov_core::pipeline::structured_accept;
use gov_core::policy::{compensation_epoch, drift, CompensationParams, PortfolioState};
use gov_core::trust::ContributionScoreTable;
use gov_core::workload::{self, rng};
use gov_core::{Fixed, IdentityId};
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest as _, Sha256};

fn length(n: usize, out: &mut Vec<u8>) {
    let bytes = (n as u64).to_be_bytes();
    let skip = bytes.iter().take_while(|b| **b == 0).count();
    out.push((8 - skip) as u8);
    out.extend_from_slice(&bytes[skip..]);
}

fn merkle_oracle(mut leaves: Vec<(Vec<u8>, Vec<u8>)>) -> [u8; 32] {
    leaves.sort();
    let mut level: Vec<[u8; 32]> = leaves
        .iter()
        .map(|(k, v)| {
            let mut enc = vec![0x07];
            length(2, &mut enc);
            for part in [k, v] {
                enc.push(0x05);
                length(part.len(), &mut enc);
                enc.extend_from_slice(part);
            }
            Sha256::new().chain_update([0x00]).chain_update(&enc).finalize().into()
        })
        .collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => Sha256::new().chain_update([0x01]).chain_update(l).chain_update(r).finalize().into(),
                [single] => *single,
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}

#[test]
fn merkle_root_matches_hand_built_tree() {
    let mut r = rng(1);
    for n in 1..=70 {
        let mut keys = BTreeSet::new();
        while keys.len() < n {
            let len = r.random_range(0..40);
            keys.insert((0..len).map(|_| r.random::<u8>()).collect::<Vec<u8>>());
        }
        let mut leaves: Vec<(Vec<u8>, Vec<u8>)> = keys
            .into_iter()
            .map(|k| (k, (0..r.random_range(0..300)).map(|_| r.random::<u8>()).collect()))
            .collect();
        leaves.shuffle(&mut r);
        let tree = MerkleTree::build(leaves.clone()).unwrap();
        assert_eq!(tree.root().0, merkle_oracle(leaves.clone()), "n={n}");
        for (k, _) in leaves.iter().take(5) {
            assert!(tree.prove(k).unwrap().verify(&tree.root()));
        }
    }
}

#[test]
fn weight_commitment_matches_hand_built_tree() {
    let w = workload::delegation_workload(3, 200, 0.4);
    let resolved = gov_core::delegation::resolve(&w.snapshot, &w.records, &w.proposal, &w.trust).unwrap();
    let leaves = resolved.weights.iter().map(|(id, v)| weight_leaf(id, *v)).collect();
    assert_eq!(resolved.root.0, merkle_oracle(leaves));
    assert_eq!(commit(&resolved).root(), resolved.root);
}

#[test]
fn acceptance_takes_lower_median_for_any_count() {
    let tol: Fixed = "0.01".parse().unwrap();
    let mut r = rng(2);
    for _ in 0..2_000 {
        let k = r.random_range(3..=9);
        let base = r.random_range(0..1_000_000_000i64);
        let outputs: Vec<Vec<Fixed>> = (0..k)
            .map(|_| vec![Fixed::from_raw(base + r.random_range(0..=tol.raw()))])
            .collect();
        let mut col: Vec<i64> = outputs.iter().map(|o| o[0].raw()).collect();
        col.sort_unstable();
        let got = structured_accept(&outputs, tol).unwrap();
        assert_eq!(got[0].raw(), col[(k - 1) / 2]);
    }
}

#[test]
fn apportion_is_exact_and_within_one_unit() {
    let mut r = rng(3);
    for _ in 0..2_000 {
        let total = Fixed::from_raw(r.random_range(0..1_000_000_000_000i64));
        let weights: Vec<Fixed> = (0..r.random_range(1..12))
            .map(|_| Fixed::from_raw(if r.random_bool(0.2) { 0 } else { r.random_range(1..1_000_000_000i64) }))
            .collect();
        if weights.iter().all(|w| w.raw() == 0) {
            continue;
        }
        let shares = apportion(total, &weights).unwrap();
        let sum: i128 = shares.iter().map(|s| s.raw() as i128).sum();
        assert_eq!(sum, total.raw() as i128);
        let denom: i128 = weights.iter().map(|w| w.raw() as i128).sum();
        for (s, w) in shares.iter().zip(&weights) {
            let exact = total.raw() as i128 * w.raw() as i128;
            let lo = exact / denom;
            assert!(s.raw() as i128 == lo || s.raw() as i128 == lo + 1);
            if w.raw() == 0 {
                assert_eq!(s.raw(), 0);
            }
        }
    }
}

#[test]
fn drift_matches_float_computation() {
    let mut r = rng(4);
    let classes = ["a", "b", "c", "d"];
    for _ in 0..2_000 {
        let cut = r.random_range(0..=100i64);
        let cut2 = r.random_range(0..=100 - cut);
        let targets = [cut, cut2, 100 - cut - cut2, 0];
        let holdings: Vec<i64> = (0..4).map(|_| r.random_range(0..10_000)).collect();
        let p = PortfolioState {
            holdings: classes.iter().zip(&holdings).map(|(c, h)| (c.to_string(), Fixed::from_int(*h).unwrap())).collect(),
            targets: classes
                .iter()
                .zip(targets)
                .map(|(c, t)| (c.to_string(), Fixed::from_ratio(t, 100).unwrap()))
                .collect(),
        };
        let total: i64 = holdings.iter().sum();
        let expect = if total == 0 {
            0.0
        } else {
            holdings
                .iter()
                .zip(targets)
                .map(|(h, t)| (*h as f64 / total as f64 - t as f64 / 100.0).abs())
                .fold(0.0, f64::max)
        };
        assert!((drift(&p).unwrap().to_f64() - expect).abs() < 2e-9);
    }
}

/// Tier by log-spaced thresholds, linear base per tier, multiplier clamped
/// to the band, payout clamped to the base range.
#[test]
fn compensation_matches_straight_line_formula() {
    let params = CompensationParams::default();
    let (min, max) = (params.min_score.to_f64(), params.max_score.to_f64());
    let n = params.tiers as i32;
    let thresholds: Vec<f64> = (0..n).map(|k| min * (max / min).powf(k as f64 / (n - 1) as f64)).collect();
    let mut r = rng(5);
    let ids: Vec<IdentityId> = workload::keys("comp", 300).iter().map(|k| k.id()).collect();
    let mut scores = BTreeMap::new();
    let mut credibility = BTreeMap::new();
    for id in &ids {
        let s = loop {
            let s = r.random_range(-1.0..15.0f64);
            if thresholds.iter().all(|t| (s - t).abs() > 1e-6) {
                break s;
            }
        };
        scores.insert(*id, Fixed::from_f64(s).unwrap());
        if r.random_bool(0.3) {
            credibility.insert(*id, Fixed::from_ratio(r.random_range(5..15), 10).unwrap());
        }
    }
    let params = CompensationParams { credibility, ..params };
    let table = ContributionScoreTable {
        snapshot_id: 1,
        epoch: 7,
        scores: scores.clone(),
        rings: Vec::new(),
        discounted: BTreeSet::new(),
    };
    for health in ["0.5", "0.9", "1", "1.1", "1.6"] {
        let h: Fixed = health.parse().unwrap();
        let out = compensation_epoch(&table, h, &params).unwrap();
        let mut total = 0.0;
        for row in &out.rows {
            let s = scores[&row.identity].to_f64();
            let tier = if s <= 0.0 { 0 } else { thresholds.iter().filter(|t| s >= **t).count() };
            assert_eq!(row.tier as usize, tier, "score {s}");
            let cred = params.credibility.get(&row.identity).map_or(1.0, |c| c.to_f64());
            let raw = h.to_f64() * cred;
            let mult = raw.clamp(params.band_lo.to_f64(), params.band_hi.to_f64());
            let (bmin, bmax) = (params.base_min.to_f64(), params.base_max.to_f64());
            let payout = if tier == 0 {
                0.0
            } else {
                let base = bmin + (bmax - bmin) / (n - 1) as f64 * (tier - 1) as f64;
                (base * mult).clamp(bmin, bmax)
            };
            assert!((row.payout.to_f64() - payout).abs() < 1e-6, "{} vs {payout}", row.payout);
            assert_eq!(row.escalated, tier > 0 && (raw - mult).abs() > 1e-12);
            total += payout;
        }
        assert!((out.total.to_f64() - total).abs() < 1e-4);
    }
}
