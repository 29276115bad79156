//! The exact-rational implementation against an independent floating-point
//! re-derivation of every local measure and of the weighted mean.

mod common;

use std::collections::BTreeSet;

use common::*;
use rexcbr_core::model::Values;
use rexcbr_core::similarity::{compare_values, SimilarityError};
use rexcbr_core::{DescriptorKind, DescriptorValue, MissingPolicy, Schema, WeightVector};

fn oracle_tokens(tokens: &[String]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for t in tokens {
        let cleaned: String = t
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        for w in cleaned.split_whitespace() {
            out.insert(w.to_lowercase());
        }
    }
    out
}

fn oracle_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.iter().filter(|x| b.contains(*x)).count() as f64;
    let union = a.len() as f64 + b.len() as f64 - inter;
    if union == 0.0 {
        1.0
    } else {
        inter / union
    }
}

/// Some(local) | None for skipped.
fn oracle_local(
    kind: DescriptorKind,
    range: Option<(f64, f64)>,
    a: &DescriptorValue,
    b: &DescriptorValue,
    policy: MissingPolicy,
) -> Option<f64> {
    if a.is_missing() || b.is_missing() {
        return match policy {
            MissingPolicy::ExcludePair => None,
            MissingPolicy::Pessimistic => Some(0.0),
        };
    }
    Some(match (kind, a, b) {
        (DescriptorKind::Nominal, DescriptorValue::Label(x), DescriptorValue::Label(y)) => {
            if x == y {
                100.0
            } else {
                0.0
            }
        }
        (DescriptorKind::Numeric, DescriptorValue::Number(x), DescriptorValue::Number(y)) => {
            let (lo, hi) = range.unwrap();
            (100.0 * (1.0 - (x - y).abs() / (hi - lo))).clamp(0.0, 100.0)
        }
        (DescriptorKind::Set, DescriptorValue::Set(x), DescriptorValue::Set(y)) => {
            100.0 * oracle_jaccard(x, y)
        }
        (DescriptorKind::Text, DescriptorValue::Text(x), DescriptorValue::Text(y)) => {
            100.0 * oracle_jaccard(&oracle_tokens(x), &oracle_tokens(y))
        }
        _ => panic!("generator produced mismatched tags"),
    })
}

/// Neumaier-compensated weighted mean; None when there is no basis.
fn oracle_overall(
    schema: &Schema,
    w: &WeightVector,
    a: &Values,
    b: &Values,
    policy: MissingPolicy,
) -> Option<f64> {
    let (mut num, mut num_c, mut den, mut den_c) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let add = |sum: &mut f64, comp: &mut f64, x: f64| {
        let t = *sum + x;
        if sum.abs() >= x.abs() {
            *comp += (*sum - t) + x;
        } else {
            *comp += (x - t) + *sum;
        }
        *sum = t;
    };
    for d in &schema.descriptors {
        if w.excluded.contains(&d.name) {
            continue;
        }
        let weight = w.weights[&d.name].to_f64();
        if let Some(local) = oracle_local(d.kind, d.numeric_range, &a[&d.name], &b[&d.name], policy)
        {
            add(&mut num, &mut num_c, weight * local);
            add(&mut den, &mut den_c, weight);
        }
    }
    let den = den + den_c;
    (den > 0.0).then(|| (num + num_c) / den)
}

#[test]
fn overall_matches_independent_oracle_on_1000_instances() {
    let mut g = Gen::new(0x5eed_0001);
    let mut compared = 0;
    for _ in 0..1000 {
        let schema = random_schema(&mut g);
        let w = random_weights(&mut g, &schema);
        let a = random_values(&mut g, &schema, 0.15);
        let b = random_values(&mut g, &schema, 0.15);
        let policy = if g.chance(0.5) {
            MissingPolicy::ExcludePair
        } else {
            MissingPolicy::Pessimistic
        };
        let got = compare_values(&schema, &w, &a, &b, policy);
        let want = oracle_overall(&schema, &w, &a, &b, policy);
        match (got, want) {
            (Ok(breakdown), Some(want)) => {
                let got = breakdown.overall_f64();
                let tol = 1e-9 * want.abs().max(1.0);
                assert!((got - want).abs() <= tol, "got {got}, oracle {want}");
                compared += 1;
            }
            (Err(SimilarityError::NoBasis), None) => {}
            (got, want) => panic!("implementation {got:?} vs oracle {want:?}"),
        }
    }
    assert!(compared > 800, "too few comparable instances: {compared}");
}
