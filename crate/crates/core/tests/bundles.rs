use gov_core::sim::{Behavior, OperatorSpec, TrustMode};
use gov_core::store::{run_case_study, verify_bundle, AuditBundle, CaseStudy};
use gov_core::workload::rng;
use gov_core::Fixed;
use rand::Rng;

fn random_case(seed: u64) -> CaseStudy {
    let mut r = rng(seed);
    let quorum = [(1, 1), (2, 3), (3, 5), (4, 6)][r.random_range(0..4)];
    let operators = if r.random_bool(0.15) {
        Vec::new()
    } else {
        (0..quorum.1)
            .map(|i| OperatorSpec {
                name: format!("op{i}"),
                bond: Fixed::from_int(r.random_range(1..200)).unwrap(),
                mode: if r.random_bool(0.3) { TrustMode::Hybrid } else { TrustMode::Economic },
                behavior: match r.random_range(0..10) {
                    0 => Behavior::Crash,
                    1 => Behavior::Equivocate,
                    2 => Behavior::Tamper { seed: r.random_range(0..3) },
                    3 => Behavior::Laggard { delay: r.random_range(1..3) },
                    _ => Behavior::Honest,
                },
            })
            .collect()
    };
    CaseStudy {
        proposals: r.random_range(0..8),
        evaluations: r.random_range(0..40),
        operators,
        quorum,
        ..CaseStudy::empty(seed)
    }
}

/// Tamperers sharing a seed submit the same wrong root unless an enclave
/// blocks them.
fn colluders_reach_quorum(case: &CaseStudy) -> bool {
    let mut by_seed = std::collections::BTreeMap::new();
    for op in &case.operators {
        if let (Behavior::Tamper { seed }, TrustMode::Economic) = (op.behavior, op.mode) {
            *by_seed.entry(seed).or_insert(0u32) += 1;
        }
    }
    by_seed.values().any(|n| *n >= case.quorum.0)
}

#[test]
fn random_case_studies_produce_verifiable_bundles() {
    let mut settled = 0;
    let mut colluded = 0;
    for seed in 0..100 {
        let case = random_case(seed);
        let result = run_case_study(&case, &["test".into()]).unwrap();
        let report = verify_bundle(&result.bundle).unwrap();
        if colluders_reach_quorum(&case) {
            let d = report.divergence.unwrap_or_else(|| panic!("seed {seed}: {case:?} {:?}", result.settlement()));
            assert_eq!(d.stage, "settlement", "seed {seed}");
            colluded += 1;
        } else {
            assert!(report.ok(), "seed {seed}: {:?} {case:?}", report.divergence);
        }
        if result.settlement().is_some_and(|s| s.root.is_some()) {
            settled += 1;
        }
        if seed % 10 == 0 {
            let again = run_case_study(&case, &["test".into()]).unwrap();
            assert_eq!(again.bundle, result.bundle, "seed {seed} not reproducible");
        }
    }
    assert!(settled > 20, "only {settled} runs settled");
    assert!(colluded > 0);
}

#[test]
fn bundles_survive_a_disk_round_trip() {
    for seed in [3, 17, 55] {
        let result = run_case_study(&random_case(seed), &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        result.bundle.write_to(dir.path()).unwrap();
        let back = AuditBundle::read_from(dir.path()).unwrap();
        assert_eq!(back, result.bundle);
        assert!(verify_bundle(&back).unwrap().ok());
    }
}
