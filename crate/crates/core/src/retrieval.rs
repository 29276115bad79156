//! Finding the k source cases most similar to a target.
//!
//! The exhaustive scan is authoritative. [`CaseIndex`] is an inverted index
//! over nominal descriptors; when supplied, it yields an upper bound on each
//! case's overall similarity (indexed descriptors scored exactly from the
//! postings, every other comparable descriptor assumed to score 100), and
//! cases whose bound falls strictly below the current k-th best are never
//! evaluated. The ranking is identical either way.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{self, hundred, Rational, Weight};
use crate::model::{
    validate_target, Case, CaseId, DescriptorKind, DescriptorValue, Schema, TargetCase, Violation,
};
use crate::similarity::{
    compare_values, display_percentage, MissingPolicy, Outcome, SimilarityBreakdown,
    SimilarityError, WeightVector,
};

pub const DEFAULT_K: usize = 5;

fn zero_rational() -> Rational {
    Rational::zero()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub target: TargetCase,
    pub weights: WeightVector,
    pub k: usize,
    #[serde(default)]
    pub policy: MissingPolicy,
    #[serde(default = "zero_rational", with = "exact::serde_rational")]
    pub min_similarity: Rational,
}

impl RetrievalQuery {
    /// `k` = 5, exclude-pair policy, no similarity floor.
    pub fn new(target: TargetCase, weights: WeightVector) -> Self {
        RetrievalQuery {
            target,
            weights,
            k: DEFAULT_K,
            policy: MissingPolicy::default(),
            min_similarity: Rational::zero(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_policy(mut self, policy: MissingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_min_similarity(mut self, min: Rational) -> Self {
        self.min_similarity = min;
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("invalid weights: {0}")]
    Weights(SimilarityError),
    #[error("invalid target: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Target(Vec<Violation>),
    #[error("min_similarity must lie in [0, 100]")]
    MinSimilarity,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedCase {
    pub case_id: CaseId,
    pub breakdown: SimilarityBreakdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetrievalResult {
    /// Overall similarity descending, ties by ascending case id.
    pub ranked: Vec<RankedCase>,
    /// Number of cases whose similarity was actually computed.
    pub evaluated_count: usize,
    /// Evaluated cases that shared no comparable descriptor with the target.
    pub non_comparable: Vec<CaseId>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<CaseId> {
        self.ranked.iter().map(|r| r.case_id).collect()
    }
}

fn rank_order(a: &RankedCase, b: &RankedCase) -> Ordering {
    b.breakdown
        .overall
        .cmp(&a.breakdown.overall)
        .then(a.case_id.cmp(&b.case_id))
}

/// Inverted index: nominal descriptor → label → ids of the cases holding it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaseIndex {
    postings: BTreeMap<String, BTreeMap<String, BTreeSet<CaseId>>>,
    coverage: BTreeSet<String>,
    indexed: BTreeSet<CaseId>,
}

impl CaseIndex {
    pub fn new(schema: &Schema) -> Self {
        CaseIndex {
            postings: BTreeMap::new(),
            coverage: schema
                .descriptors
                .iter()
                .filter(|d| d.kind == DescriptorKind::Nominal)
                .map(|d| d.name.clone())
                .collect(),
            indexed: BTreeSet::new(),
        }
    }

    /// Adds one case's postings; missing values are not indexed.
    pub fn insert(&mut self, case: &Case) {
        for d in &self.coverage {
            if let DescriptorValue::Label(label) = case.value(d) {
                self.postings
                    .entry(d.clone())
                    .or_default()
                    .entry(label.clone())
                    .or_default()
                    .insert(case.id);
            }
        }
        self.indexed.insert(case.id);
    }

    pub fn coverage(&self) -> &BTreeSet<String> {
        &self.coverage
    }

    pub fn postings(&self, descriptor: &str, label: &str) -> Option<&BTreeSet<CaseId>> {
        self.postings.get(descriptor)?.get(label)
    }

    /// Labels with postings for one descriptor.
    pub fn keys(&self, descriptor: &str) -> impl Iterator<Item = (&String, &BTreeSet<CaseId>)> {
        self.postings.get(descriptor).into_iter().flatten()
    }

    pub fn posting_count(&self) -> usize {
        self.postings
            .values()
            .flat_map(|m| m.values())
            .map(BTreeSet::len)
            .sum()
    }

    pub fn is_indexed(&self, id: CaseId) -> bool {
        self.indexed.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.indexed.is_empty()
    }

    /// True iff every posting names an existing case holding that label.
    pub fn is_consistent_with(&self, cases: &[Case]) -> bool {
        let by_id: BTreeMap<CaseId, &Case> = cases.iter().map(|c| (c.id, c)).collect();
        self.postings.iter().all(|(d, labels)| {
            labels.iter().all(|(label, ids)| {
                ids.iter().all(|id| {
                    by_id
                        .get(id)
                        .is_some_and(|c| matches!(c.value(d), DescriptorValue::Label(l) if l == label))
                })
            })
        })
    }
}

pub fn build_index(base: &[Case], schema: &Schema) -> CaseIndex {
    let mut index = CaseIndex::new(schema);
    for case in base {
        index.insert(case);
    }
    index
}

fn check_query(schema: &Schema, q: &RetrievalQuery) -> Result<(), RetrievalError> {
    q.weights.validate(schema).map_err(RetrievalError::Weights)?;
    validate_target(schema, &q.target).map_err(RetrievalError::Target)?;
    if q.min_similarity.is_negative() || q.min_similarity > hundred() {
        return Err(RetrievalError::MinSimilarity);
    }
    Ok(())
}

/// `Ok(None)` for a non-comparable case.
fn evaluate(
    schema: &Schema,
    q: &RetrievalQuery,
    case: &Case,
) -> Result<Option<RankedCase>, SimilarityError> {
    match compare_values(schema, &q.weights, &q.target.values, &case.values, q.policy) {
        Ok(breakdown) => Ok(Some(RankedCase {
            case_id: case.id,
            breakdown,
        })),
        Err(SimilarityError::NoBasis) => Ok(None),
        Err(e) => Err(e),
    }
}

fn finish(
    q: &RetrievalQuery,
    evaluated: Vec<(CaseId, Option<RankedCase>)>,
) -> RetrievalResult {
    let evaluated_count = evaluated.len();
    let mut non_comparable = Vec::new();
    let mut ranked = Vec::new();
    for (id, r) in evaluated {
        match r {
            None => non_comparable.push(id),
            Some(r) if r.breakdown.overall >= q.min_similarity => ranked.push(r),
            Some(_) => {}
        }
    }
    ranked.sort_by(rank_order);
    ranked.truncate(q.k);
    non_comparable.sort();
    RetrievalResult {
        ranked,
        evaluated_count,
        non_comparable,
    }
}

/// Top-k retrieval; with an index, provably non-competitive cases are skipped.
pub fn retrieve(
    schema: &Schema,
    base: &[Case],
    q: &RetrievalQuery,
    index: Option<&CaseIndex>,
) -> Result<RetrievalResult, RetrievalError> {
    check_query(schema, q)?;
    if q.k == 0 {
        return Ok(RetrievalResult::default());
    }
    match index {
        None => {
            let evaluated = base
                .iter()
                .map(|c| evaluate(schema, q, c).map(|r| (c.id, r)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(finish(q, evaluated))
        }
        Some(index) => retrieve_pruned(schema, base, q, index),
    }
}

/// Exhaustive scan with case evaluations spread over the rayon pool; the
/// result is identical to [`retrieve`] without an index.
pub fn retrieve_parallel(
    schema: &Schema,
    base: &[Case],
    q: &RetrievalQuery,
) -> Result<RetrievalResult, RetrievalError> {
    check_query(schema, q)?;
    if q.k == 0 {
        return Ok(RetrievalResult::default());
    }
    let evaluated = base
        .par_iter()
        .map(|c| evaluate(schema, q, c).map(|r| (c.id, r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(finish(q, evaluated))
}

struct BoundPlan<'a> {
    /// (weight, label ids matching the target, ids holding any label) per
    /// included indexed descriptor whose target value is present.
    exact: Vec<(&'a Rational, BTreeSet<CaseId>, BTreeSet<CaseId>)>,
    /// Weight mass that contributes 0 to every case (pessimistic misses on
    /// the target side).
    dead_weight: Rational,
    /// Weight mass optimistically scored 100.
    open_weight: Rational,
    policy: MissingPolicy,
}

impl<'a> BoundPlan<'a> {
    fn new(schema: &Schema, q: &'a RetrievalQuery, index: &CaseIndex) -> Self {
        let mut plan = BoundPlan {
            exact: Vec::new(),
            dead_weight: Rational::zero(),
            open_weight: Rational::zero(),
            policy: q.policy,
        };
        for spec in &schema.descriptors {
            if !q.weights.is_included(&spec.name) {
                continue;
            }
            let w = q.weights.weight(&spec.name).map(Weight::value);
            let Some(w) = w else { continue };
            let target_value = q.target.value(&spec.name);
            if target_value.is_missing() {
                if q.policy == MissingPolicy::Pessimistic {
                    plan.dead_weight += w;
                }
                continue;
            }
            match target_value {
                DescriptorValue::Label(label) if index.coverage().contains(&spec.name) => {
                    let matching = index.postings(&spec.name, label).cloned().unwrap_or_default();
                    let present = index
                        .keys(&spec.name)
                        .flat_map(|(_, ids)| ids.iter().copied())
                        .collect();
                    plan.exact.push((w, matching, present));
                }
                _ => plan.open_weight += w,
            }
        }
        plan
    }

    fn bound(&self, id: CaseId) -> Rational {
        let mut numer = hundred() * &self.open_weight;
        let mut denom = &self.open_weight + &self.dead_weight;
        for (w, matching, present) in &self.exact {
            if matching.contains(&id) {
                numer += hundred() * *w;
                denom += *w;
            } else if present.contains(&id) || self.policy == MissingPolicy::Pessimistic {
                denom += *w;
            }
        }
        if denom.is_positive() {
            numer / denom
        } else {
            hundred()
        }
    }
}

fn retrieve_pruned(
    schema: &Schema,
    base: &[Case],
    q: &RetrievalQuery,
    index: &CaseIndex,
) -> Result<RetrievalResult, RetrievalError> {
    let plan = BoundPlan::new(schema, q, index);
    let mut order: Vec<(Rational, &Case)> = base
        .iter()
        .map(|c| {
            let bound = if index.is_indexed(c.id) {
                plan.bound(c.id)
            } else {
                hundred()
            };
            (bound, c)
        })
        .collect();
    order.sort_by(|(ba, ca), (bb, cb)| bb.cmp(ba).then(ca.id.cmp(&cb.id)));

    let mut evaluated = Vec::new();
    let mut top: Vec<RankedCase> = Vec::with_capacity(q.k + 1);
    for (bound, case) in order {
        if bound < q.min_similarity {
            break;
        }
        if top.len() == q.k && bound < top[q.k - 1].breakdown.overall {
            break;
        }
        let r = evaluate(schema, q, case)?;
        if let Some(r) = &r {
            if r.breakdown.overall >= q.min_similarity {
                let at = top
                    .binary_search_by(|probe| rank_order(probe, r))
                    .unwrap_or_else(|i| i);
                top.insert(at, r.clone());
                top.truncate(q.k);
            }
        }
        evaluated.push((case.id, r));
    }
    Ok(finish(q, evaluated))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Share {
    Scored {
        #[serde(serialize_with = "exact::serde_f64::serialize")]
        local: Rational,
        /// `w · local / Σw`, in percentage points of the overall.
        #[serde(serialize_with = "exact::serde_f64::serialize")]
        contribution: Rational,
    },
    Skipped,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DescriptorContribution {
    pub name: String,
    pub kind: DescriptorKind,
    pub weight: Weight,
    #[serde(flatten)]
    pub share: Share,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseExplanation {
    pub case_id: CaseId,
    #[serde(serialize_with = "exact::serde_f64::serialize")]
    pub overall: Rational,
    #[serde(with = "exact::serde_rational")]
    pub overall_exact: Rational,
    pub display: String,
    pub descriptors: Vec<DescriptorContribution>,
}

/// Descriptor-level report for every ranked case; contributions sum to the overall.
pub fn explain_ranking(r: &RetrievalResult, schema: &Schema) -> Vec<CaseExplanation> {
    r.ranked
        .iter()
        .map(|rc| {
            let b = &rc.breakdown;
            let descriptors = b
                .per_descriptor
                .iter()
                .map(|d| {
                    let share = match &d.outcome {
                        Outcome::Scored { local } => Share::Scored {
                            local: local.clone(),
                            contribution: d.weight.value() * local / &b.effective_weight_sum,
                        },
                        Outcome::Skipped => Share::Skipped,
                        Outcome::Excluded => Share::Excluded,
                    };
                    DescriptorContribution {
                        name: d.name.clone(),
                        kind: schema
                            .descriptor(&d.name)
                            .map(|s| s.kind)
                            .unwrap_or(DescriptorKind::Nominal),
                        weight: d.weight.clone(),
                        share,
                    }
                })
                .collect();
            CaseExplanation {
                case_id: rc.case_id,
                overall: b.overall.clone(),
                overall_exact: b.overall.clone(),
                display: display_percentage(&b.overall),
                descriptors,
            }
        })
        .collect()
}
