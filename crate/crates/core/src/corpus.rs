//! Deterministic synthetic stand-in for a 70-scenario collision base.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded through
//! `SeedableRng::seed_from_u64`, which expands the 64-bit seed with the PCG32
//! constants fixed by `rand_core` (multiplier 6364136223846793005, increment
//! 11634580027462260723). Every draw goes through the integer helpers below,
//! so the output does not depend on platform floating-point behavior or on
//! `rand` distribution implementations.
//!
//! The last `cluster.size` cases (ids `count - size + 1 ..= count`) form a
//! planted cluster: identical, fully specified descriptor values, the same
//! class, and the cluster solution. Retrieving with those values yields a
//! unanimous vote for that solution.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::learning::CaseBase;
use crate::model::{
    Case, CaseId, CaseStatus, DescriptorKind, DescriptorSpec, DescriptorValue, Schema,
    TargetCase, Timestamp, Values, Violation,
};

pub const DOCKING_SOLUTION: &str = "Check the actual docking";

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub size: usize,
    pub solution: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub count: usize,
    pub schema: Schema,
    /// Relative frequency of each class; must cover the taxonomy.
    pub class_mix: BTreeMap<String, u32>,
    pub solution_pool: Vec<String>,
    /// Probability that any one descriptor value is missing (outside the cluster).
    pub missing_fraction: f64,
    /// Label vocabularies for set and text descriptors (and nominal ones
    /// without a domain).
    pub vocabularies: BTreeMap<String, Vec<String>>,
    pub cluster: Option<ClusterConfig>,
    /// `created_at` of case n is `epoch + n` days.
    pub epoch: Timestamp,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

impl GeneratorConfig {
    /// Default rail schema, 70 cases, 10% missing values, a 6-case docking cluster.
    pub fn new(seed: u64) -> Self {
        let schema = Schema::default_rail();
        let class_mix = [
            ("head-on-collision", 2),
            ("rear-end-collision", 3),
            ("side-collision", 2),
            ("obstacle-collision", 2),
            ("buffer-stop-collision", 1),
        ]
        .into_iter()
        .map(|(k, w)| (k.to_owned(), w))
        .collect();
        let solution_pool = strings(&[
            DOCKING_SOLUTION,
            "Reinforce the interlocking route-release checks",
            "Add a speed supervision point before the platform",
            "Retrain drivers on restricted-manual procedures",
            "Install buffer stop occupancy sensors",
            "Improve dispatcher-driver radio protocol",
            "Fence and monitor the level crossing",
            "Schedule brake system inspections more often",
        ]);
        let vocabularies = [
            (
                "triggering_events",
                strings(&[
                    "signal-passed-at-danger",
                    "docking-misalignment",
                    "brake-failure",
                    "overspeed",
                    "door-fault",
                    "communication-loss",
                    "track-obstruction",
                    "wrong-route-set",
                    "coupling-failure",
                ]),
            ),
            (
                "equipment_involved",
                strings(&[
                    "onboard-atp",
                    "interlocking",
                    "track-circuit",
                    "platform-doors",
                    "coupler",
                    "braking-system",
                    "radio",
                    "axle-counter",
                ]),
            ),
            (
                "summary",
                strings(&[
                    "train", "approached", "platform", "at", "excessive", "speed", "driver",
                    "misread", "signal", "route", "set", "wrongly", "collision", "with",
                    "stationary", "unit", "buffer", "stop", "docking", "position", "not",
                    "confirmed", "brake", "response", "delayed", "obstacle", "on", "track",
                    "crossing", "barrier", "radio", "message", "lost", "during", "shunting",
                ]),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        GeneratorConfig {
            seed,
            count: 70,
            schema,
            class_mix,
            solution_pool,
            missing_fraction: 0.1,
            vocabularies,
            cluster: Some(ClusterConfig {
                size: 6,
                solution: DOCKING_SOLUTION.to_owned(),
            }),
            epoch: Timestamp::parse("2009-01-01T00:00:00Z").expect("valid literal"),
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("count must be positive")]
    ZeroCount,
    #[error("invalid schema: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Schema(Vec<Violation>),
    #[error("class mix must give every taxonomy class a positive weight (offending: {0})")]
    ClassMix(String),
    #[error("solution pool is empty or contains a blank solution")]
    SolutionPool,
    #[error("cluster solution {0:?} is not in the solution pool")]
    ClusterSolution(String),
    #[error("missing_fraction must lie in [0, 1]")]
    MissingFraction,
    #[error("generated case failed validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Generated(Vec<Violation>),
}

/// The planted cluster of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCluster {
    pub ids: Vec<CaseId>,
    pub values: Values,
    pub solution: String,
}

impl PlantedCluster {
    pub fn target(&self) -> TargetCase {
        TargetCase {
            values: self.values.clone(),
        }
    }
}

struct Draw(ChaCha8Rng);

impl Draw {
    /// Uniform in `0..n` by multiply-shift; `n` > 0.
    fn below(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    fn weighted<'a>(&mut self, mix: &'a BTreeMap<String, u32>) -> &'a str {
        let total: u64 = mix.values().map(|&w| u64::from(w)).sum();
        let mut r = self.below(total as usize) as u64;
        for (k, &w) in mix {
            if r < u64::from(w) {
                return k;
            }
            r -= u64::from(w);
        }
        unreachable!("weights sum to total")
    }
}

fn check(cfg: &GeneratorConfig) -> Result<(), CorpusError> {
    if cfg.count == 0 {
        return Err(CorpusError::ZeroCount);
    }
    crate::model::validate_schema(&cfg.schema).map_err(CorpusError::Schema)?;
    for class in &cfg.schema.class_taxonomy {
        if cfg.class_mix.get(class).copied().unwrap_or(0) == 0 {
            return Err(CorpusError::ClassMix(class.clone()));
        }
    }
    if let Some(extra) = cfg
        .class_mix
        .keys()
        .find(|k| !cfg.schema.class_taxonomy.contains(*k))
    {
        return Err(CorpusError::ClassMix(extra.clone()));
    }
    if cfg.solution_pool.is_empty() || cfg.solution_pool.iter().any(|s| s.trim().is_empty()) {
        return Err(CorpusError::SolutionPool);
    }
    if let Some(cluster) = &cfg.cluster {
        if !cfg.solution_pool.contains(&cluster.solution) {
            return Err(CorpusError::ClusterSolution(cluster.solution.clone()));
        }
    }
    if !(0.0..=1.0).contains(&cfg.missing_fraction) {
        return Err(CorpusError::MissingFraction);
    }
    Ok(())
}

fn vocabulary(cfg: &GeneratorConfig, spec: &DescriptorSpec) -> Vec<String> {
    if let Some(domain) = &spec.nominal_domain {
        return domain.iter().cloned().collect();
    }
    cfg.vocabularies
        .get(&spec.name)
        .filter(|v| !v.is_empty())
        .cloned()
        .unwrap_or_else(|| (0..6).map(|i| format!("{}-{i}", spec.name)).collect())
}

fn draw_value(draw: &mut Draw, cfg: &GeneratorConfig, spec: &DescriptorSpec) -> DescriptorValue {
    let vocab = vocabulary(cfg, spec);
    match spec.kind {
        DescriptorKind::Nominal => DescriptorValue::Label(draw.pick(&vocab).clone()),
        DescriptorKind::Numeric => {
            let (min, max) = spec.numeric_range.expect("validated schema");
            // one decimal place, inside the range
            let x = min + draw.unit() * (max - min);
            let x = ((x * 10.0).round() / 10.0).clamp(min, max);
            DescriptorValue::Number(x)
        }
        DescriptorKind::Set => {
            let size = 1 + draw.below(3.min(vocab.len()));
            let mut items = BTreeSet::new();
            while items.len() < size {
                items.insert(draw.pick(&vocab).clone());
            }
            DescriptorValue::Set(items)
        }
        DescriptorKind::Text => {
            let len = 5 + draw.below(5);
            DescriptorValue::Text((0..len).map(|_| draw.pick(&vocab).clone()).collect())
        }
    }
}

pub fn generate(cfg: &GeneratorConfig) -> Result<CaseBase, CorpusError> {
    generate_with_cluster(cfg).map(|(base, _)| base)
}

/// Like [`generate`], also reporting the planted cluster (if configured).
pub fn generate_with_cluster(
    cfg: &GeneratorConfig,
) -> Result<(CaseBase, Option<PlantedCluster>), CorpusError> {
    check(cfg)?;
    let mut draw = Draw(ChaCha8Rng::seed_from_u64(cfg.seed));
    let cluster_size = cfg.cluster.as_ref().map_or(0, |c| c.size.min(cfg.count));
    let free = cfg.count - cluster_size;

    let day = 86_400;
    let mut cases = Vec::with_capacity(cfg.count);
    for n in 1..=free {
        let values = cfg
            .schema
            .descriptors
            .iter()
            .map(|spec| {
                let v = if draw.chance(cfg.missing_fraction) {
                    DescriptorValue::Missing
                } else {
                    draw_value(&mut draw, cfg, spec)
                };
                (spec.name.clone(), v)
            })
            .collect();
        let class = draw.weighted(&cfg.class_mix).to_owned();
        let solution = draw.pick(&cfg.solution_pool).clone();
        cases.push(Case {
            id: CaseId(n as u64),
            title: format!("Synthetic {class} scenario #{n}"),
            class,
            values,
            solution,
            status: CaseStatus::TestedSuccess,
            created_at: Timestamp::from_unix(cfg.epoch.unix() + n as i64 * day),
        });
    }

    let mut planted = None;
    if let Some(cluster) = cfg.cluster.as_ref().filter(|_| cluster_size > 0) {
        let values: Values = cfg
            .schema
            .descriptors
            .iter()
            .map(|spec| (spec.name.clone(), draw_value(&mut draw, cfg, spec)))
            .collect();
        let class = draw.weighted(&cfg.class_mix).to_owned();
        let mut ids = Vec::with_capacity(cluster_size);
        for n in free + 1..=cfg.count {
            ids.push(CaseId(n as u64));
            cases.push(Case {
                id: CaseId(n as u64),
                title: format!("Synthetic {class} scenario #{n} (docking cluster)"),
                class: class.clone(),
                values: values.clone(),
                solution: cluster.solution.clone(),
                status: CaseStatus::TestedSuccess,
                created_at: Timestamp::from_unix(cfg.epoch.unix() + n as i64 * day),
            });
        }
        planted = Some(PlantedCluster {
            ids,
            values,
            solution: cluster.solution.clone(),
        });
    }

    let base = CaseBase::from_parts(cfg.schema.clone(), cases, CaseId(cfg.count as u64 + 1))
        .map_err(CorpusError::Generated)?;
    Ok((base, planted))
}
