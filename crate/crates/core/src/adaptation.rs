//! Solution adaptation as decision support.
//!
//! The engine never rewrites a solution. It tallies the solutions adopted in
//! the retrieved cases into voted candidates; the expert then either picks a
//! candidate or authors a new solution, and that choice is frozen into an
//! [`AdaptationDecision`].

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{self, Rational};
use crate::model::{Case, CaseId, Timestamp};
use crate::retrieval::{RetrievalQuery, RetrievalResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionCandidate {
    pub solution: String,
    pub support_count: usize,
    /// Sum of the supporters' overall similarities.
    #[serde(with = "exact::serde_rational")]
    pub weighted_score: Rational,
    pub supporter_ids: BTreeSet<CaseId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    FromCandidate,
    Novel,
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "from-candidate" => Ok(Origin::FromCandidate),
            "novel" => Ok(Origin::Novel),
            other => Err(format!("unknown origin {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDecision {
    pub chosen_solution: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub query_snapshot: RetrievalQuery,
    pub candidate_snapshot: Vec<SolutionCandidate>,
    pub decided_at: Timestamp,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdaptationError {
    #[error("retrieved case {0} is not in the case base")]
    UnknownCase(CaseId),
    #[error("{0:?} is not one of the voted candidates")]
    InvalidChoice(String),
    #[error("the chosen solution is empty")]
    EmptySolution,
}

/// Plurality vote over the retrieved cases' solutions (exact match after
/// trimming). Ordered by support, then weighted score, then solution text.
pub fn collect_candidates(
    r: &RetrievalResult,
    base: &[Case],
) -> Result<Vec<SolutionCandidate>, AdaptationError> {
    let mut tally: BTreeMap<String, SolutionCandidate> = BTreeMap::new();
    for ranked in &r.ranked {
        let case = base
            .binary_search_by_key(&ranked.case_id, |c| c.id)
            .ok()
            .map(|i| &base[i])
            .or_else(|| base.iter().find(|c| c.id == ranked.case_id))
            .ok_or(AdaptationError::UnknownCase(ranked.case_id))?;
        let solution = case.solution.trim();
        if solution.is_empty() {
            continue;
        }
        let entry = tally
            .entry(solution.to_owned())
            .or_insert_with(|| SolutionCandidate {
                solution: solution.to_owned(),
                support_count: 0,
                weighted_score: Rational::zero(),
                supporter_ids: BTreeSet::new(),
            });
        entry.support_count += 1;
        entry.weighted_score += &ranked.breakdown.overall;
        entry.supporter_ids.insert(case.id);
    }
    let mut candidates: Vec<_> = tally.into_values().collect();
    candidates.sort_by(|a, b| {
        b.support_count
            .cmp(&a.support_count)
            .then_with(|| b.weighted_score.cmp(&a.weighted_score))
            .then_with(|| a.solution.cmp(&b.solution))
    });
    Ok(candidates)
}

pub fn decide(
    candidates: &[SolutionCandidate],
    choice: &str,
    origin: Origin,
    rationale: Option<String>,
    query: &RetrievalQuery,
    decided_at: Timestamp,
) -> Result<AdaptationDecision, AdaptationError> {
    let choice = choice.trim();
    if choice.is_empty() {
        return Err(AdaptationError::EmptySolution);
    }
    if origin == Origin::FromCandidate && !candidates.iter().any(|c| c.solution == choice) {
        return Err(AdaptationError::InvalidChoice(choice.to_owned()));
    }
    Ok(AdaptationDecision {
        chosen_solution: choice.to_owned(),
        origin,
        rationale: rationale.filter(|r| !r.trim().is_empty()),
        query_snapshot: query.clone(),
        candidate_snapshot: candidates.to_vec(),
        decided_at,
    })
}
