//! Random schemas, cases and weights for property and oracle tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rexcbr_core::exact::{self, Rational};
use rexcbr_core::model::{Values, DescriptorKind};
use rexcbr_core::{
    decide, AdaptationDecision, Case, CaseId, CaseStatus, DescriptorSpec, DescriptorValue,
    KnowledgeBase, Origin, RetrievalQuery, Schema, TargetCase, Timestamp, Verdict, Weight,
    WeightVector,
};

pub struct Gen(ChaCha8Rng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + self.below(hi_inclusive - lo + 1)
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

const LABELS: [&str; 4] = ["a", "b", "c", "d"];
const ITEMS: [&str; 5] = ["p", "q", "r", "s", "t"];
const WORDS: [&str; 8] = ["Train", "train", "BRAKE", "signal,", "buffer-stop", "stop", "at", "Docking!"];

pub fn random_schema(g: &mut Gen) -> Schema {
    let n = g.range(1, 6);
    let descriptors = (0..n)
        .map(|i| {
            let name = format!("d{i}");
            match g.below(4) {
                0 => DescriptorSpec::nominal(&name, LABELS),
                1 => {
                    let min = g.range(0, 100) as f64 - 50.0;
                    let span = g.range(1, 100) as f64;
                    DescriptorSpec::numeric(&name, min, min + span)
                }
                2 => DescriptorSpec::of_kind(&name, DescriptorKind::Set),
                _ => DescriptorSpec::of_kind(&name, DescriptorKind::Text),
            }
        })
        .collect();
    Schema {
        descriptors,
        solution_attribute_name: "solution".into(),
        class_taxonomy: ["k1".to_owned(), "k2".to_owned()].into(),
    }
}

pub fn random_value(g: &mut Gen, spec: &DescriptorSpec) -> DescriptorValue {
    match spec.kind {
        DescriptorKind::Nominal => {
            let domain: Vec<&String> = spec.nominal_domain.as_ref().unwrap().iter().collect();
            DescriptorValue::label(g.pick(&domain).as_str())
        }
        DescriptorKind::Numeric => {
            let (min, max) = spec.numeric_range.unwrap();
            // quarter steps: plenty of exact ties
            let steps = ((max - min) * 4.0) as usize;
            DescriptorValue::Number(min + g.range(0, steps) as f64 / 4.0)
        }
        DescriptorKind::Set => {
            let items: BTreeSet<String> = ITEMS
                .iter()
                .filter(|_| g.chance(0.4))
                .map(|s| s.to_string())
                .collect();
            DescriptorValue::Set(items)
        }
        DescriptorKind::Text => {
            let len = g.range(0, 5);
            DescriptorValue::Text((0..len).map(|_| g.pick(&WORDS).to_string()).collect())
        }
    }
}

pub fn random_values(g: &mut Gen, schema: &Schema, missing: f64) -> Values {
    schema
        .descriptors
        .iter()
        .map(|spec| {
            let v = if g.chance(missing) {
                DescriptorValue::Missing
            } else {
                random_value(g, spec)
            };
            (spec.name.clone(), v)
        })
        .collect()
}

pub fn random_case(g: &mut Gen, schema: &Schema, id: u64, missing: f64) -> Case {
    Case {
        id: CaseId(id),
        title: format!("case {id}"),
        class: if g.chance(0.5) { "k1" } else { "k2" }.into(),
        values: random_values(g, schema, missing),
        solution: format!("solution {}", g.below(3)),
        status: CaseStatus::TestedSuccess,
        created_at: Timestamp::from_unix(1_000_000 + id as i64),
    }
}

pub fn random_target(g: &mut Gen, schema: &Schema, missing: f64) -> TargetCase {
    TargetCase {
        values: random_values(g, schema, missing),
    }
}

pub fn random_weight(g: &mut Gen) -> Weight {
    match g.below(6) {
        0 => Weight::zero(),
        1 => Weight::from(1),
        2 => Weight::from(g.range(2, 9) as u32),
        3 => Weight::from_f64(0.5).unwrap(),
        4 => Weight::new(Rational::new(1.into(), 3.into())).unwrap(),
        _ => Weight::from_f64(g.unit() * 10.0).unwrap(),
    }
}

/// Always has at least one included descriptor with positive weight.
pub fn random_weights(g: &mut Gen, schema: &Schema) -> WeightVector {
    let mut w = WeightVector::defaults(schema);
    for d in &schema.descriptors {
        w.weights.insert(d.name.clone(), random_weight(g));
        if g.chance(0.15) {
            w.excluded.insert(d.name.clone());
        }
    }
    let anchor = &schema.descriptors[g.below(schema.descriptors.len())].name;
    w.excluded.remove(anchor);
    if !w.weights[anchor].is_positive() {
        w.weights.insert(anchor.clone(), Weight::from(1));
    }
    w
}

pub fn random_base(g: &mut Gen, schema: &Schema, n: usize, missing: f64) -> Vec<Case> {
    let mut base: Vec<Case> = (1..=n as u64).map(|id| random_case(g, schema, id, missing)).collect();
    // plant duplicates to exercise tie-breaking
    for i in 1..base.len() {
        if g.chance(0.1) {
            let values = base[g.below(i)].values.clone();
            base[i].values = values;
        }
    }
    base
}

pub fn random_positive_factor(g: &mut Gen) -> Rational {
    match g.below(3) {
        0 => exact::int(g.range(2, 1000) as i64),
        1 => Rational::new(1.into(), (g.range(2, 1000) as i64).into()),
        _ => exact::from_f64(0.001 + g.unit() * 50.0).unwrap(),
    }
}

pub fn novel_decision(target: &TargetCase, schema: &Schema, solution: &str) -> AdaptationDecision {
    let q = RetrievalQuery::new(target.clone(), WeightVector::defaults(schema));
    decide(&[], solution, Origin::Novel, None, &q, Timestamp::from_unix(1_500_000)).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Commit,
    Success,
    Failure,
    Explain,
    Correct,
    BlankExplain,
    NoteWeights,
}

/// One random mutation (legal or not) against a random existing case.
pub fn random_step(g: &mut Gen, kb: &mut KnowledgeBase, clock: &mut i64) -> (Step, Option<CaseId>, bool) {
    *clock += 60;
    let now = Timestamp::from_unix(*clock);
    let step = *g.pick(&[
        Step::Commit,
        Step::Success,
        Step::Failure,
        Step::Failure,
        Step::Explain,
        Step::Explain,
        Step::Correct,
        Step::Correct,
        Step::BlankExplain,
        Step::NoteWeights,
    ]);
    if step == Step::Commit || kb.base().is_empty() {
        let schema = kb.schema().clone();
        let target = random_target(g, &schema, 0.2);
        let d = novel_decision(&target, &schema, &format!("solution {}", g.below(4)));
        let ok = kb.commit_case(&target, &d, "walk", "k1", now).is_ok();
        return (Step::Commit, None, ok);
    }
    let id = kb.base().cases()[g.below(kb.base().len())].id;
    let ok = match step {
        Step::Success => kb.record_verdict(id, Verdict::Success, now).is_ok(),
        Step::Failure => kb.record_verdict(id, Verdict::Failure, now).is_ok(),
        Step::Explain => kb.record_explanation(id, "misread docking position", now).is_ok(),
        Step::BlankExplain => kb.record_explanation(id, " ", now).is_ok(),
        Step::Correct => kb.correct_solution(id, &format!("fix {}", g.below(9)), now).is_ok(),
        Step::NoteWeights => {
            let w = random_weights(g, &kb.schema().clone());
            kb.note_weight_change("walk", &w, now).is_ok()
        }
        Step::Commit => unreachable!(),
    };
    (step, Some(id), ok)
}

/// Reference lifecycle: status plus explanations recorded since the last verdict.
#[derive(Default)]
struct Model {
    cases: BTreeMap<CaseId, (CaseStatus, usize)>,
}

impl Model {
    fn allows(&self, step: Step, id: Option<CaseId>) -> bool {
        let Some(id) = id else { return true };
        let (status, explained) = self.cases[&id];
        match step {
            Step::Success | Step::Failure => {
                matches!(status, CaseStatus::Candidate | CaseStatus::Corrected)
            }
            Step::Explain => status == CaseStatus::TestedFailure,
            Step::BlankExplain => false,
            Step::Correct => status == CaseStatus::TestedFailure && explained > 0,
            Step::NoteWeights | Step::Commit => true,
        }
    }

    fn apply(&mut self, step: Step, id: Option<CaseId>, new_id: CaseId) {
        match (step, id) {
            (Step::Commit, _) => {
                self.cases.insert(new_id, (CaseStatus::Candidate, 0));
            }
            (Step::Success, Some(id)) => {
                self.cases.insert(id, (CaseStatus::TestedSuccess, 0));
            }
            (Step::Failure, Some(id)) => {
                self.cases.insert(id, (CaseStatus::TestedFailure, 0));
            }
            (Step::Explain, Some(id)) => self.cases.get_mut(&id).unwrap().1 += 1,
            (Step::Correct, Some(id)) => {
                self.cases.insert(id, (CaseStatus::Corrected, 0));
            }
            _ => {}
        }
    }
}

/// Returns how often each step kind was accepted.
pub fn lifecycle_walk(seed: u64, steps: usize) -> BTreeMap<String, usize> {
    let mut accepted = BTreeMap::new();
    let mut g = Gen::new(seed);
    let schema = random_schema(&mut g);
    let mut kb = KnowledgeBase::empty(schema).unwrap();
    let mut model = Model::default();
    let mut clock = 0;
    for _ in 0..steps {
        let before = kb.base().clone();
        let events_before = kb.events().len();
        let next = kb.base().next_id();
        let (step, id, ok) = random_step(&mut g, &mut kb, &mut clock);
        let allowed = model.allows(step, id);
        assert_eq!(ok, allowed, "{step:?} on {id:?}");
        if ok {
            model.apply(step, id, next);
            *accepted.entry(format!("{step:?}")).or_insert(0) += 1;
            assert_eq!(kb.events().len(), events_before + 1);
        } else {
            assert_eq!(kb.base(), &before, "rejected {step:?} changed the base");
            assert_eq!(kb.events().len(), events_before);
        }
        for (id, (status, _)) in &model.cases {
            assert_eq!(kb.base().get(*id).unwrap().status, *status);
        }
    }
    accepted
}
