//! Local (per-descriptor) similarity and the compensatory overall similarity.
//!
//! Every local similarity is a percentage in `[0, 100]`. The overall
//! similarity is the weighted mean of the local similarities of the included,
//! non-skipped descriptors:
//!
//! ```text
//! overall = Σ w_i · local_i / Σ w_i
//! ```
//!
//! All arithmetic is exact (big rationals); only display rounds.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{self, hundred, Rational, Weight};
use crate::model::{
    Case, DescriptorKind, DescriptorSpec, DescriptorValue, Schema, TargetCase, Values,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Drop the descriptor from numerator and denominator when either side is missing.
    #[default]
    ExcludePair,
    /// A missing value scores 0 against anything.
    Pessimistic,
}

impl std::str::FromStr for MissingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude-pair" => Ok(MissingPolicy::ExcludePair),
            "pessimistic" => Ok(MissingPolicy::Pessimistic),
            other => Err(format!(
                "unknown missing-value policy {other:?} (expected exclude-pair or pessimistic)"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("descriptor `{descriptor}`: {kind} descriptor compared with a mismatched value")]
    TagMismatch {
        descriptor: String,
        kind: DescriptorKind,
    },
    #[error("no weight given for descriptor `{0}`")]
    MissingWeight(String),
    #[error("weight given for unknown descriptor `{0}`")]
    UnknownDescriptor(String),
    #[error("every descriptor is excluded or has zero weight")]
    NoIncludedDescriptor,
    #[error("no basis for comparison: every descriptor was skipped, excluded or zero-weighted")]
    NoBasis,
}

/// Per-descriptor weights plus the set of descriptors left out of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: BTreeMap<String, Weight>,
    #[serde(default)]
    pub excluded: BTreeSet<String>,
}

impl WeightVector {
    /// Each descriptor at its schema default weight, nothing excluded.
    pub fn defaults(schema: &Schema) -> Self {
        WeightVector {
            weights: schema
                .descriptors
                .iter()
                .map(|d| (d.name.clone(), d.default_weight.clone()))
                .collect(),
            excluded: BTreeSet::new(),
        }
    }

    pub fn weight(&self, name: &str) -> Option<&Weight> {
        self.weights.get(name)
    }

    pub fn is_included(&self, name: &str) -> bool {
        !self.excluded.contains(name)
    }

    pub fn with_weight(mut self, name: &str, w: Weight) -> Self {
        self.weights.insert(name.to_owned(), w);
        self
    }

    pub fn excluding(mut self, name: &str) -> Self {
        self.excluded.insert(name.to_owned());
        self
    }

    /// Every weight multiplied by `factor`; `None` if `factor` is negative.
    pub fn scaled(&self, factor: &Rational) -> Option<Self> {
        let weights = self
            .weights
            .iter()
            .map(|(k, w)| w.scaled(factor).map(|w| (k.clone(), w)))
            .collect::<Option<_>>()?;
        Some(WeightVector {
            weights,
            excluded: self.excluded.clone(),
        })
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), SimilarityError> {
        for name in self.weights.keys().chain(self.excluded.iter()) {
            if schema.descriptor(name).is_none() {
                return Err(SimilarityError::UnknownDescriptor(name.clone()));
            }
        }
        let mut any_positive = false;
        for d in &schema.descriptors {
            let w = self
                .weights
                .get(&d.name)
                .ok_or_else(|| SimilarityError::MissingWeight(d.name.clone()))?;
            any_positive |= w.is_positive() && self.is_included(&d.name);
        }
        if any_positive {
            Ok(())
        } else {
            Err(SimilarityError::NoIncludedDescriptor)
        }
    }
}

/// Outcome of comparing one descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Local {
    Scored(Rational),
    Skipped,
}

impl Local {
    pub fn score(&self) -> Option<&Rational> {
        match self {
            Local::Scored(x) => Some(x),
            Local::Skipped => None,
        }
    }
}

/// Lowercases and splits each token on runs of non-alphanumeric characters.
pub fn normalize_tokens<'a>(tokens: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    tokens
        .into_iter()
        .flat_map(|t| {
            t.split(|c: char| !c.is_alphanumeric())
                .filter(|s| !s.is_empty())
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Rational {
    let union = a.union(b).count();
    if union == 0 {
        return exact::int(1);
    }
    let inter = a.intersection(b).count();
    Rational::new((inter as i64).into(), (union as i64).into())
}

pub fn local_similarity(
    spec: &DescriptorSpec,
    a: &DescriptorValue,
    b: &DescriptorValue,
    policy: MissingPolicy,
) -> Result<Local, SimilarityError> {
    let mismatch = || SimilarityError::TagMismatch {
        descriptor: spec.name.clone(),
        kind: spec.kind,
    };
    for v in [a, b] {
        if v.kind().is_some_and(|k| k != spec.kind) {
            return Err(mismatch());
        }
    }
    if a.is_missing() || b.is_missing() {
        return Ok(match policy {
            MissingPolicy::ExcludePair => Local::Skipped,
            MissingPolicy::Pessimistic => Local::Scored(Rational::zero()),
        });
    }
    let score = match (a, b) {
        (DescriptorValue::Label(x), DescriptorValue::Label(y)) => {
            if x == y {
                hundred()
            } else {
                Rational::zero()
            }
        }
        (DescriptorValue::Number(x), DescriptorValue::Number(y)) => {
            let (min, max) = spec.numeric_range.ok_or_else(mismatch)?;
            let to_exact = |v: f64| exact::from_f64(v).ok_or_else(mismatch);
            let span = to_exact(max)? - to_exact(min)?;
            if !span.is_positive() {
                return Err(mismatch());
            }
            let gap = (to_exact(*x)? - to_exact(*y)?).abs();
            let s = hundred() * (exact::int(1) - gap / span);
            s.clamp(Rational::zero(), hundred())
        }
        (DescriptorValue::Set(x), DescriptorValue::Set(y)) => hundred() * jaccard(x, y),
        (DescriptorValue::Text(x), DescriptorValue::Text(y)) => {
            hundred() * jaccard(&normalize_tokens(x), &normalize_tokens(y))
        }
        _ => return Err(mismatch()),
    };
    Ok(Local::Scored(score))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Scored {
        #[serde(with = "exact::serde_rational")]
        local: Rational,
    },
    Skipped,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorScore {
    pub name: String,
    pub weight: Weight,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityBreakdown {
    pub overall: Rational,
    /// In schema order.
    pub per_descriptor: Vec<DescriptorScore>,
    pub effective_weight_sum: Rational,
}

impl SimilarityBreakdown {
    pub fn overall_f64(&self) -> f64 {
        exact::to_f64(&self.overall)
    }

    pub fn display(&self) -> String {
        display_percentage(&self.overall)
    }
}

pub fn global_similarity(
    schema: &Schema,
    weights: &WeightVector,
    target: &TargetCase,
    case: &Case,
    policy: MissingPolicy,
) -> Result<SimilarityBreakdown, SimilarityError> {
    compare_values(schema, weights, &target.values, &case.values, policy)
}

/// Weighted compensatory mean over two value maps; absent entries count as missing.
pub fn compare_values(
    schema: &Schema,
    weights: &WeightVector,
    a: &Values,
    b: &Values,
    policy: MissingPolicy,
) -> Result<SimilarityBreakdown, SimilarityError> {
    let mut numer = Rational::zero();
    let mut denom = Rational::zero();
    let mut per_descriptor = Vec::with_capacity(schema.descriptors.len());
    for spec in &schema.descriptors {
        let weight = weights
            .weight(&spec.name)
            .ok_or_else(|| SimilarityError::MissingWeight(spec.name.clone()))?
            .clone();
        let outcome = if !weights.is_included(&spec.name) {
            Outcome::Excluded
        } else {
            let va = a.get(&spec.name).unwrap_or(&DescriptorValue::Missing);
            let vb = b.get(&spec.name).unwrap_or(&DescriptorValue::Missing);
            match local_similarity(spec, va, vb, policy)? {
                Local::Skipped => Outcome::Skipped,
                Local::Scored(local) => {
                    numer += weight.value() * &local;
                    denom += weight.value();
                    Outcome::Scored { local }
                }
            }
        };
        per_descriptor.push(DescriptorScore {
            name: spec.name.clone(),
            weight,
            outcome,
        });
    }
    if !denom.is_positive() {
        return Err(SimilarityError::NoBasis);
    }
    Ok(SimilarityBreakdown {
        overall: numer / &denom,
        per_descriptor,
        effective_weight_sum: denom,
    })
}

/// Floors to an integer percentage: `200/3` displays as `"66%"`.
pub fn display_percentage(x: &Rational) -> String {
    format!("{}%", x.floor().to_integer())
}
