//! Case-based reasoning over a base of accident scenarios.
//!
//! The cycle runs in four steps:
//!
//! 1. enter a [`TargetCase`](model::TargetCase) against a [`Schema`](model::Schema);
//! 2. [`retrieve`](retrieval::retrieve) the most similar source cases under a
//!    [`WeightVector`](similarity::WeightVector);
//! 3. tally their solutions with [`collect_candidates`](adaptation::collect_candidates)
//!    and record the expert's [`decide`](adaptation::decide);
//! 4. commit the solved case into the [`KnowledgeBase`](learning::KnowledgeBase),
//!    then track its test verdicts, failure explanations and corrections.
//!
//! [`storage`] holds the on-disk formats and [`corpus`] a deterministic
//! synthetic base for demos and tests.

pub mod adaptation;
pub mod corpus;
pub mod exact;
pub mod learning;
pub mod model;
pub mod retrieval;
pub mod similarity;
pub mod storage;

pub use adaptation::{collect_candidates, decide, AdaptationDecision, Origin, SolutionCandidate};
pub use exact::{Rational, Weight};
pub use learning::{AuditEvent, AuditRecord, CaseBase, KnowledgeBase, LearningError, Verdict};
pub use model::{
    Case, CaseId, CaseStatus, DescriptorKind, DescriptorSpec, DescriptorValue, Schema,
    TargetCase, Timestamp,
};
pub use retrieval::{build_index, explain_ranking, retrieve, CaseIndex, RetrievalQuery, RetrievalResult};
pub use similarity::{display_percentage, global_similarity, local_similarity, MissingPolicy, WeightVector};
