//! Acceptance gate: one line per criterion, nonzero exit if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rexcbr_core::corpus::{generate, generate_with_cluster, GeneratorConfig, DOCKING_SOLUTION};
use rexcbr_core::exact::{self, Rational};
use rexcbr_core::similarity::{compare_values, local_similarity, Local, SimilarityError};
use rexcbr_core::storage::{audit_to_string, parse_audit, parse_snapshot, replay_events, snapshot_to_string, BaseDir};
use rexcbr_core::{
    build_index, collect_candidates, display_percentage, retrieval::retrieve_parallel, retrieve,
    CaseBase, CaseId, DescriptorSpec, DescriptorValue, KnowledgeBase, MissingPolicy,
    RetrievalQuery, Schema, TargetCase, Timestamp, Weight, WeightVector,
};

fn worked_example() {
    let schema = Schema {
        descriptors: ["a", "b", "c"]
            .map(|n| DescriptorSpec::nominal(n, ["x", "y"]))
            .into(),
        solution_attribute_name: "solution".into(),
        class_taxonomy: ["k".to_owned()].into(),
    };
    let w = WeightVector::defaults(&schema);
    let target = [("a", "x"), ("b", "x"), ("c", "x")]
        .map(|(k, v)| (k.to_owned(), DescriptorValue::label(v)))
        .into();
    let case = [("a", "x"), ("b", "x"), ("c", "y")]
        .map(|(k, v)| (k.to_owned(), DescriptorValue::label(v)))
        .into();
    let bd = compare_values(&schema, &w, &target, &case, MissingPolicy::ExcludePair).unwrap();
    assert_eq!(bd.per_descriptor.len(), 3);
    assert_eq!(bd.overall, Rational::new(200.into(), 3.into()));
    assert!((bd.overall_f64() - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(display_percentage(&bd.overall), "66%");
    assert_eq!(bd.display(), "66%");
}

fn retrieval_shape() {
    let base = generate(&GeneratorConfig::new(42)).unwrap();
    let schema = base.schema();
    assert_eq!(base.len(), 70);
    let index = build_index(base.cases(), schema);
    let mut g = Gen::new(2009);
    for _ in 0..20 {
        let q = RetrievalQuery::new(random_target(&mut g, schema, 0.1), WeightVector::defaults(schema))
            .with_k(5);
        let r = retrieve(schema, base.cases(), &q, Some(&index)).unwrap();
        assert_eq!(r.ranked.len(), 5);
        for w in r.ranked.windows(2) {
            let (a, b) = (&w[0].breakdown.overall, &w[1].breakdown.overall);
            assert!(a > b || (a == b && w[0].case_id < w[1].case_id));
        }
        assert_eq!(retrieve(schema, base.cases(), &q, None).unwrap().ids(), r.ids());
        assert_eq!(retrieve_parallel(schema, base.cases(), &q).unwrap().ids(), r.ids());
    }
}

fn oracle_equivalence() {
    let mut g = Gen::new(0xacce97);
    for trial in 0..500 {
        let schema = random_schema(&mut g);
        let n = g.range(0, 200);
        let base = random_base(&mut g, &schema, n, 0.15);
        let index = build_index(&base, &schema);
        let target = if n > 0 && g.chance(0.5) {
            base[g.below(n)].target()
        } else {
            random_target(&mut g, &schema, 0.2)
        };
        let policy = policy_of(&mut g);
        let q = RetrievalQuery::new(target, random_weights(&mut g, &schema))
            .with_k(g.range(1, 10))
            .with_policy(policy);

        let mut all: Vec<(Rational, CaseId)> = base
            .iter()
            .filter_map(|c| {
                compare_values(&schema, &q.weights, &q.target.values, &c.values, policy)
                    .ok()
                    .map(|b| (b.overall, c.id))
            })
            .collect();
        all.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let oracle: Vec<CaseId> = all.into_iter().take(q.k).map(|(_, id)| id).collect();

        let exhaustive = retrieve(&schema, &base, &q, None).unwrap().ids();
        let indexed = retrieve(&schema, &base, &q, Some(&index)).unwrap().ids();
        assert_eq!(exhaustive, oracle, "trial {trial}");
        assert_eq!(indexed, oracle, "trial {trial}");
    }
}

fn policy_of(g: &mut Gen) -> MissingPolicy {
    if g.chance(0.5) {
        MissingPolicy::ExcludePair
    } else {
        MissingPolicy::Pessimistic
    }
}

fn similarity_axioms() {
    let mut g = Gen::new(0xa710);
    let zero = exact::int(0);
    let hundred = exact::int(100);
    for _ in 0..1000 {
        let s = random_schema(&mut g);
        let w = random_weights(&mut g, &s);
        let p = policy_of(&mut g);
        let a = random_values(&mut g, &s, 0.2);
        let b = random_values(&mut g, &s, 0.2);

        // boundedness
        if let Ok(bd) = compare_values(&s, &w, &a, &b, p) {
            assert!(bd.overall >= zero && bd.overall <= hundred);
        }
        // symmetry
        for d in &s.descriptors {
            assert_eq!(
                local_similarity(d, &a[&d.name], &b[&d.name], p).unwrap(),
                local_similarity(d, &b[&d.name], &a[&d.name], p).unwrap()
            );
        }
        // identity
        let full = random_values(&mut g, &s, 0.0);
        assert_eq!(compare_values(&s, &w, &full, &full, p).unwrap().overall, hundred);

        // scaling, on the score and on the retrieval order
        let factor = random_positive_factor(&mut g);
        let scaled = w.scaled(&factor).unwrap();
        assert_eq!(
            compare_values(&s, &w, &a, &b, p).map(|bd| bd.overall),
            compare_values(&s, &scaled, &a, &b, p).map(|bd| bd.overall)
        );
        let n = g.range(1, 25);
        let base = random_base(&mut g, &s, n, 0.1);
        let q = RetrievalQuery::new(TargetCase { values: a.clone() }, w.clone()).with_policy(p);
        let qs = RetrievalQuery { weights: scaled, ..q.clone() };
        assert_eq!(
            retrieve(&s, &base, &q, None).unwrap().ids(),
            retrieve(&s, &base, &qs, None).unwrap().ids()
        );

        // exclusion is the same as a zero weight
        let name = s.descriptors[g.below(s.descriptors.len())].name.clone();
        let x = compare_values(&s, &w.clone().excluding(&name), &a, &b, p);
        let y = compare_values(&s, &w.clone().with_weight(&name, Weight::zero()), &a, &b, p);
        match (x, y) {
            (Ok(x), Ok(y)) => assert_eq!(x.overall, y.overall),
            (Err(SimilarityError::NoBasis), Err(SimilarityError::NoBasis)) => {}
            (x, y) => panic!("exclusion {x:?} vs zero weight {y:?}"),
        }

        // monotonicity in one local
        let spec = s.descriptors[g.below(s.descriptors.len())].clone();
        let a_full = random_values(&mut g, &s, 0.0);
        let mut b2 = random_values(&mut g, &s, 0.0);
        let before = compare_values(&s, &w, &a_full, &b2, p).unwrap().overall;
        let Local::Scored(l0) = local_similarity(&spec, &a_full[&spec.name], &b2[&spec.name], p).unwrap() else {
            unreachable!()
        };
        b2.insert(spec.name.clone(), random_value(&mut g, &spec));
        let Local::Scored(l1) = local_similarity(&spec, &a_full[&spec.name], &b2[&spec.name], p).unwrap() else {
            unreachable!()
        };
        let after = compare_values(&s, &w, &a_full, &b2, p).unwrap().overall;
        if l1 > l0 {
            assert!(after >= before);
        } else if l1 < l0 {
            assert!(after <= before);
        } else {
            assert_eq!(after, before);
        }
    }
}

fn learning_loop() {
    let base = generate(&GeneratorConfig::new(42)).unwrap();
    let schema = base.schema().clone();
    let mut kb = KnowledgeBase::seeded(base).unwrap();
    let mut values = kb.base().get(CaseId(3)).unwrap().values.clone();
    values.insert(
        "summary".into(),
        DescriptorValue::text("freight wagon rolled away during coupling trial"),
    );
    values.insert("severity_level".into(), DescriptorValue::Number(7.0));
    let target = TargetCase { values };
    let decision = novel_decision(&target, &schema, "Chock wagons before uncoupling");
    let case = kb
        .commit_case(&target, &decision, "Runaway wagon", "obstacle-collision", Timestamp::from_unix(1_300_000_000))
        .unwrap();
    assert_eq!(case.id, CaseId(71));
    let q = RetrievalQuery::new(target, WeightVector::defaults(&schema));
    let r = retrieve(&schema, kb.base().cases(), &q, Some(kb.index())).unwrap();
    assert_eq!(r.ranked[0].case_id, CaseId(71));
    assert_eq!(r.ranked[0].breakdown.overall, exact::int(100));
    assert_eq!(r.ranked[0].breakdown.display(), "100%");
}

fn lifecycle_machine() {
    for seed in 0..200 {
        lifecycle_walk(seed, 60);
    }
    let accepted = lifecycle_walk(77, 3000);
    for kind in ["Success", "Failure", "Explain", "Correct"] {
        assert!(accepted.get(kind).copied().unwrap_or(0) > 0, "{kind} never accepted");
    }
}

fn persistence() {
    for seed in 0..3 {
        let base = generate(&GeneratorConfig::new(seed)).unwrap();
        let text = snapshot_to_string(&base);
        assert_eq!(snapshot_to_string(&parse_snapshot(&text).unwrap()), text);
    }
    for seed in 0..110 {
        let mut g = Gen::new(seed);
        let schema = random_schema(&mut g);
        let n = g.range(0, 10);
        let cases = random_base(&mut g, &schema, n, 0.1);
        let start = CaseBase::from_parts(schema.clone(), cases, CaseId(n as u64 + 1)).unwrap();
        let mut kb = KnowledgeBase::seeded(start).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bd = BaseDir::new(dir.path());
        bd.create(&kb).unwrap();
        let mut clock = 3_000_000;
        for _ in 0..g.range(1, 5) {
            let since = kb.last_sequence();
            for _ in 0..g.range(1, 12) {
                random_step(&mut g, &mut kb, &mut clock);
            }
            bd.persist(&kb, since).unwrap();
        }
        let events = parse_audit(std::io::Cursor::new(audit_to_string(kb.events()))).unwrap();
        let replayed = replay_events(schema, events).unwrap();
        assert_eq!(replayed.base(), kb.base(), "seed {seed}");
        assert_eq!(bd.load().unwrap().base(), kb.base(), "seed {seed}");
        let on_disk = std::fs::read_to_string(bd.snapshot_path()).unwrap();
        assert_eq!(on_disk, snapshot_to_string(kb.base()));
    }
}

fn unanimous_vote() {
    let (base, cluster) = generate_with_cluster(&GeneratorConfig::new(42)).unwrap();
    let cluster = cluster.unwrap();
    let schema = base.schema();
    let q = RetrievalQuery::new(cluster.target(), WeightVector::defaults(schema)).with_k(5);
    let r = retrieve(schema, base.cases(), &q, None).unwrap();
    assert_eq!(r.ranked.len(), 5);
    let candidates = collect_candidates(&r, base.cases()).unwrap();
    assert_eq!(candidates.len(), 1, "{candidates:?}");
    assert_eq!(candidates[0].solution, DOCKING_SOLUTION);
    assert_eq!(candidates[0].support_count, 5);
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn()); 8] = [
        ("worked example 200/3 displays 66%", Duration::from_secs(1), worked_example),
        ("k=5 retrieval shape on the 70-case corpus", Duration::from_secs(1), retrieval_shape),
        ("indexed = exhaustive = brute-force oracle (500 instances)", Duration::from_secs(60), oracle_equivalence),
        ("similarity axioms (1000 instances each)", Duration::from_secs(60), similarity_axioms),
        ("commit assigns id 71 and is retrieved first at 100", Duration::from_secs(1), learning_loop),
        ("lifecycle random walk", Duration::from_secs(10), lifecycle_machine),
        ("byte-stable snapshots and audit replay (110 sequences)", Duration::from_secs(30), persistence),
        ("unanimous vote on the planted cluster", Duration::from_secs(1), unanimous_vote),
    ];
    panic::set_hook(Box::new(|info| eprintln!("  {info}")));
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Ok(()) if elapsed <= limit => "PASS",
            Ok(()) => "FAIL (too slow)",
            Err(_) => "FAIL",
        };
        if verdict != "PASS" {
            failed += 1;
        }
        println!("[{verdict}] {name} ({:.3}s, limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
