//! Memorization, test verdicts, failure explanations and corrections.
//!
//! [`KnowledgeBase`] pairs the [`CaseBase`] with its append-only audit log.
//! Every operation is expressed as an [`AuditRecord`] and goes through the
//! same `apply` step used by replay, so replaying the log from an empty base
//! rebuilds the current state exactly.
//!
//! Lifecycle of a case:
//!
//! ```text
//! candidate ──verdict──► tested-success
//!     │
//!     └──verdict──► tested-failure ──explanation+──► (correction) ──► corrected
//!                          ▲                                              │
//!                          └──────────────────── verdict ─────────────────┘
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::AdaptationDecision;
use crate::model::{
    validate_case, validate_schema, validate_target, Case, CaseId, CaseStatus, Schema,
    TargetCase, Timestamp, Violation,
};
use crate::retrieval::{build_index, CaseIndex};
use crate::similarity::{MissingPolicy, WeightVector};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseBase {
    schema: Schema,
    /// Sorted by id.
    cases: Vec<Case>,
    next_id: CaseId,
}

impl CaseBase {
    pub fn new(schema: Schema) -> Result<Self, Vec<Violation>> {
        validate_schema(&schema)?;
        Ok(CaseBase {
            schema,
            cases: Vec::new(),
            next_id: CaseId(1),
        })
    }

    /// Validates every invariant: schema, each case, unique ids, and
    /// `next_id` above every id.
    pub fn from_parts(
        schema: Schema,
        mut cases: Vec<Case>,
        next_id: CaseId,
    ) -> Result<Self, Vec<Violation>> {
        validate_schema(&schema)?;
        let mut violations = Vec::new();
        cases.sort_by_key(|c| c.id);
        for pair in cases.windows(2) {
            if pair[0].id == pair[1].id {
                violations.push(Violation {
                    subject: format!("case {}", pair[0].id),
                    message: "duplicate case id".into(),
                });
            }
        }
        for c in &cases {
            if let Err(vs) = validate_case(&schema, c) {
                violations.extend(vs.into_iter().map(|v| Violation {
                    subject: format!("case {}/{}", c.id, v.subject),
                    message: v.message,
                }));
            }
        }
        if let Some(last) = cases.last() {
            if next_id <= last.id {
                violations.push(Violation {
                    subject: "next_id".into(),
                    message: format!("next_id {next_id} must exceed the largest id {}", last.id),
                });
            }
        }
        if next_id.0 == 0 {
            violations.push(Violation {
                subject: "next_id".into(),
                message: "next_id must be positive".into(),
            });
        }
        if violations.is_empty() {
            Ok(CaseBase {
                schema,
                cases,
                next_id,
            })
        } else {
            Err(violations)
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn next_id(&self) -> CaseId {
        self.next_id
    }

    pub fn get(&self, id: CaseId) -> Option<&Case> {
        self.position(id).map(|i| &self.cases[i])
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    fn position(&self, id: CaseId) -> Option<usize> {
        self.cases.binary_search_by_key(&id, |c| c.id).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum AuditRecord {
    Commit {
        case: Case,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decision: Option<Box<AdaptationDecision>>,
    },
    Verdict {
        case_id: CaseId,
        verdict: Verdict,
        from: CaseStatus,
        to: CaseStatus,
    },
    Explanation {
        case_id: CaseId,
        cause: String,
    },
    Correction {
        case_id: CaseId,
        previous_solution: String,
        new_solution: String,
    },
    WeightChange {
        session: String,
        weights: WeightVector,
    },
    Retrieval {
        session: String,
        k: usize,
        policy: MissingPolicy,
        ranked: Vec<CaseId>,
    },
}

impl AuditRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            AuditRecord::Commit { .. } => "commit",
            AuditRecord::Verdict { .. } => "verdict",
            AuditRecord::Explanation { .. } => "explanation",
            AuditRecord::Correction { .. } => "correction",
            AuditRecord::WeightChange { .. } => "weight-change",
            AuditRecord::Retrieval { .. } => "retrieval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub sequence: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub record: AuditRecord,
}

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("unknown case {0}")]
    UnknownCase(CaseId),
    #[error("case {id} is {from}; {action} is not allowed")]
    IllegalTransition {
        id: CaseId,
        from: CaseStatus,
        action: &'static str,
    },
    #[error("case {0} has no recorded failure explanation")]
    MissingExplanation(CaseId),
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("decision was made for a different target")]
    DecisionMismatch,
    #[error("audit sequence broken: expected {expected}, found {found}")]
    Sequence { expected: u64, found: u64 },
    #[error("case id {id} does not exceed the last assigned id (next is {next})")]
    IdRegression { id: CaseId, next: CaseId },
    #[error("audit record inconsistent with case {0}")]
    Inconsistent(CaseId),
}

fn violation(subject: &str, message: &str) -> LearningError {
    LearningError::Validation(vec![Violation {
        subject: subject.into(),
        message: message.into(),
    }])
}

/// Case base plus its audit log, under a single-writer discipline.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    base: CaseBase,
    log: Vec<AuditEvent>,
    index: CaseIndex,
    /// Explanations recorded since each case's latest verdict.
    explained: BTreeMap<CaseId, usize>,
}

impl KnowledgeBase {
    pub fn empty(schema: Schema) -> Result<Self, Vec<Violation>> {
        let base = CaseBase::new(schema)?;
        let index = CaseIndex::new(base.schema());
        Ok(KnowledgeBase {
            base,
            log: Vec::new(),
            index,
            explained: BTreeMap::new(),
        })
    }

    /// Journals every case of an existing base as a commit stamped with its
    /// creation time.
    pub fn seeded(base: CaseBase) -> Result<Self, LearningError> {
        let mut kb = Self::empty(base.schema().clone()).map_err(LearningError::Validation)?;
        for case in base.cases() {
            kb.push(
                AuditRecord::Commit {
                    case: case.clone(),
                    decision: None,
                },
                case.created_at,
            )?;
        }
        Ok(kb)
    }

    /// Rebuilds the state from a journal, starting from an empty base.
    pub fn replay(
        schema: Schema,
        events: impl IntoIterator<Item = AuditEvent>,
    ) -> Result<Self, LearningError> {
        let mut kb = Self::empty(schema).map_err(LearningError::Validation)?;
        for event in events {
            kb.apply(event)?;
        }
        Ok(kb)
    }

    pub fn base(&self) -> &CaseBase {
        &self.base
    }

    pub fn schema(&self) -> &Schema {
        self.base.schema()
    }

    pub fn index(&self) -> &CaseIndex {
        &self.index
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.log
    }

    pub fn events_since(&self, sequence: u64) -> &[AuditEvent] {
        let start = self.log.partition_point(|e| e.sequence <= sequence);
        &self.log[start..]
    }

    pub fn last_sequence(&self) -> u64 {
        self.log.last().map_or(0, |e| e.sequence)
    }

    pub fn explanations(&self, id: CaseId) -> impl Iterator<Item = &str> {
        self.log.iter().filter_map(move |e| match &e.record {
            AuditRecord::Explanation { case_id, cause } if *case_id == id => Some(cause.as_str()),
            _ => None,
        })
    }

    /// Adds the adapted target to the base with a fresh number, the given
    /// title and class, and the decided solution. Status starts at candidate.
    pub fn commit_case(
        &mut self,
        target: &TargetCase,
        decision: &AdaptationDecision,
        title: &str,
        class: &str,
        now: Timestamp,
    ) -> Result<Case, LearningError> {
        let title = title.trim();
        if title.is_empty() {
            return Err(violation("title", "title must be nonempty"));
        }
        validate_target(self.schema(), target).map_err(LearningError::Validation)?;
        if decision.query_snapshot.target != *target {
            return Err(LearningError::DecisionMismatch);
        }
        let case = Case {
            id: self.base.next_id,
            title: title.to_owned(),
            class: class.to_owned(),
            values: target.values.clone(),
            solution: decision.chosen_solution.clone(),
            status: CaseStatus::Candidate,
            created_at: now,
        };
        self.push(
            AuditRecord::Commit {
                case: case.clone(),
                decision: Some(Box::new(decision.clone())),
            },
            now,
        )?;
        Ok(case)
    }

    pub fn record_verdict(
        &mut self,
        id: CaseId,
        verdict: Verdict,
        now: Timestamp,
    ) -> Result<&Case, LearningError> {
        let from = self.case(id)?.status;
        let to = match verdict {
            Verdict::Success => CaseStatus::TestedSuccess,
            Verdict::Failure => CaseStatus::TestedFailure,
        };
        self.push(
            AuditRecord::Verdict {
                case_id: id,
                verdict,
                from,
                to,
            },
            now,
        )?;
        self.case(id)
    }

    pub fn record_explanation(
        &mut self,
        id: CaseId,
        cause: &str,
        now: Timestamp,
    ) -> Result<&Case, LearningError> {
        self.push(
            AuditRecord::Explanation {
                case_id: id,
                cause: cause.trim().to_owned(),
            },
            now,
        )?;
        self.case(id)
    }

    pub fn correct_solution(
        &mut self,
        id: CaseId,
        new_solution: &str,
        now: Timestamp,
    ) -> Result<&Case, LearningError> {
        let previous_solution = self.case(id)?.solution.clone();
        self.push(
            AuditRecord::Correction {
                case_id: id,
                previous_solution,
                new_solution: new_solution.trim().to_owned(),
            },
            now,
        )?;
        self.case(id)
    }

    pub fn note_weight_change(
        &mut self,
        session: &str,
        weights: &WeightVector,
        now: Timestamp,
    ) -> Result<(), LearningError> {
        self.push(
            AuditRecord::WeightChange {
                session: session.to_owned(),
                weights: weights.clone(),
            },
            now,
        )
    }

    pub fn note_retrieval(
        &mut self,
        session: &str,
        k: usize,
        policy: MissingPolicy,
        ranked: Vec<CaseId>,
        now: Timestamp,
    ) -> Result<(), LearningError> {
        self.push(
            AuditRecord::Retrieval {
                session: session.to_owned(),
                k,
                policy,
                ranked,
            },
            now,
        )
    }

    fn case(&self, id: CaseId) -> Result<&Case, LearningError> {
        self.base.get(id).ok_or(LearningError::UnknownCase(id))
    }

    fn push(&mut self, record: AuditRecord, at: Timestamp) -> Result<(), LearningError> {
        let event = AuditEvent {
            sequence: self.last_sequence() + 1,
            at,
            record,
        };
        self.apply(event)
    }

    /// Validates `event` against the current state, then applies it. Nothing
    /// changes on error.
    pub fn apply(&mut self, event: AuditEvent) -> Result<(), LearningError> {
        let expected = self.last_sequence() + 1;
        if event.sequence != expected {
            return Err(LearningError::Sequence {
                expected,
                found: event.sequence,
            });
        }
        match &event.record {
            AuditRecord::Commit { case, decision } => {
                if case.id < self.base.next_id {
                    return Err(LearningError::IdRegression {
                        id: case.id,
                        next: self.base.next_id,
                    });
                }
                validate_case(self.schema(), case).map_err(LearningError::Validation)?;
                if decision
                    .as_ref()
                    .is_some_and(|d| d.chosen_solution != case.solution)
                {
                    return Err(LearningError::Inconsistent(case.id));
                }
                self.index.insert(case);
                self.base.cases.push(case.clone());
                self.base.next_id = CaseId(case.id.0 + 1);
            }
            AuditRecord::Verdict {
                case_id,
                verdict,
                from,
                to,
            } => {
                let pos = self
                    .base
                    .position(*case_id)
                    .ok_or(LearningError::UnknownCase(*case_id))?;
                let current = self.base.cases[pos].status;
                if !matches!(current, CaseStatus::Candidate | CaseStatus::Corrected) {
                    return Err(LearningError::IllegalTransition {
                        id: *case_id,
                        from: current,
                        action: "a test verdict",
                    });
                }
                let expected_to = match verdict {
                    Verdict::Success => CaseStatus::TestedSuccess,
                    Verdict::Failure => CaseStatus::TestedFailure,
                };
                if *from != current || *to != expected_to {
                    return Err(LearningError::Inconsistent(*case_id));
                }
                self.base.cases[pos].status = expected_to;
                self.explained.remove(case_id);
            }
            AuditRecord::Explanation { case_id, cause } => {
                let current = self.case(*case_id)?.status;
                if current != CaseStatus::TestedFailure {
                    return Err(LearningError::IllegalTransition {
                        id: *case_id,
                        from: current,
                        action: "a failure explanation",
                    });
                }
                if cause.trim().is_empty() {
                    return Err(violation("cause", "cause must be nonempty"));
                }
                *self.explained.entry(*case_id).or_default() += 1;
            }
            AuditRecord::Correction {
                case_id,
                previous_solution,
                new_solution,
            } => {
                let pos = self
                    .base
                    .position(*case_id)
                    .ok_or(LearningError::UnknownCase(*case_id))?;
                let current = &self.base.cases[pos];
                if current.status != CaseStatus::TestedFailure {
                    return Err(LearningError::IllegalTransition {
                        id: *case_id,
                        from: current.status,
                        action: "a correction",
                    });
                }
                if self.explained.get(case_id).copied().unwrap_or(0) == 0 {
                    return Err(LearningError::MissingExplanation(*case_id));
                }
                if new_solution.trim().is_empty() {
                    return Err(violation("solution", "corrected solution must be nonempty"));
                }
                if current.solution != *previous_solution {
                    return Err(LearningError::Inconsistent(*case_id));
                }
                let case = &mut self.base.cases[pos];
                case.solution = new_solution.clone();
                case.status = CaseStatus::Corrected;
                self.explained.remove(case_id);
            }
            AuditRecord::WeightChange { .. } | AuditRecord::Retrieval { .. } => {}
        }
        self.log.push(event);
        Ok(())
    }

    /// Rebuilds the inverted index from scratch.
    pub fn rebuild_index(&mut self) {
        self.index = build_index(self.base.cases(), self.base.schema());
    }
}
