mod common;

use common::*;
use proptest::prelude::*;
use rexcbr_core::exact;
use rexcbr_core::{build_index, retrieve, CaseBase, CaseId, KnowledgeBase, RetrievalQuery, WeightVector};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn only_lifecycle_transitions_are_accepted(seed in any::<u64>()) {
        lifecycle_walk(seed, 60);
    }

    #[test]
    fn committed_case_is_found_at_100(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let schema = random_schema(&mut g);
        let n = g.range(0, 40);
        let cases = random_base(&mut g, &schema, n, 0.1);
        let base = CaseBase::from_parts(schema.clone(), cases, CaseId(n as u64 + 1)).unwrap();
        let mut kb = KnowledgeBase::seeded(base).unwrap();
        let target = random_target(&mut g, &schema, 0.0);
        let d = novel_decision(&target, &schema, "new fix");
        let case = kb.commit_case(&target, &d, "fresh", "k2", rexcbr_core::Timestamp::from_unix(5)).unwrap();
        prop_assert_eq!(case.id, CaseId(n as u64 + 1));
        prop_assert!(kb.index().is_consistent_with(kb.base().cases()));
        prop_assert_eq!(kb.index(), &build_index(kb.base().cases(), &schema));

        let q = RetrievalQuery::new(target, WeightVector::defaults(&schema)).with_k(n + 1);
        let r = retrieve(&schema, kb.base().cases(), &q, Some(kb.index())).unwrap();
        let pos = r.ids().iter().position(|id| *id == case.id).unwrap();
        prop_assert_eq!(&r.ranked[pos].breakdown.overall, &exact::int(100));
        // anything ahead of it is an exact duplicate with a smaller id
        for ahead in &r.ranked[..pos] {
            prop_assert_eq!(&ahead.breakdown.overall, &exact::int(100));
            prop_assert!(ahead.case_id < case.id);
        }
    }
}

#[test]
fn long_walk() {
    let accepted = lifecycle_walk(20090101, 2000);
    for kind in ["Commit", "Success", "Failure", "Explain", "Correct", "NoteWeights"] {
        assert!(accepted.get(kind).copied().unwrap_or(0) > 5, "{kind}: {accepted:?}");
    }
}
