//! Schema-driven representation of accident scenarios.
//!
//! A [`Schema`] lists the typed descriptors that characterize a scenario.
//! A [`TargetCase`] is a new, unsolved scenario (descriptor values only); a
//! [`Case`] is a stored source scenario that additionally carries a number,
//! a title, a class, the adopted solution and its lifecycle status.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::exact::Weight;

/// Scenario number, assigned by the case base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseId(pub u64);

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// UTC instant with second precision, serialized as `YYYY-MM-DDTHH:MM:SSZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

impl Timestamp {
    pub fn now() -> Self {
        Self::from_unix(Utc::now().timestamp())
    }

    pub fn from_unix(secs: i64) -> Self {
        Timestamp(Utc.timestamp_opt(secs, 0).single().unwrap_or_default())
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }

    pub fn parse(s: &str) -> Option<Self> {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
            .ok()
            .map(|n| Timestamp(n.and_utc()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(TIMESTAMP_FORMAT))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Nominal,
    Numeric,
    Set,
    Text,
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptorKind::Nominal => "nominal",
            DescriptorKind::Numeric => "numeric",
            DescriptorKind::Set => "set",
            DescriptorKind::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSpec {
    pub name: String,
    pub kind: DescriptorKind,
    #[serde(default)]
    pub default_weight: Weight,
    /// Required iff `kind` is numeric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_range: Option<(f64, f64)>,
    /// Allowed labels; only meaningful for nominal descriptors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_domain: Option<BTreeSet<String>>,
}

impl DescriptorSpec {
    pub fn nominal<I, S>(name: &str, domain: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        DescriptorSpec {
            name: name.to_owned(),
            kind: DescriptorKind::Nominal,
            default_weight: Weight::one(),
            numeric_range: None,
            nominal_domain: Some(domain.into_iter().map(Into::into).collect()),
        }
    }

    pub fn numeric(name: &str, min: f64, max: f64) -> Self {
        DescriptorSpec {
            name: name.to_owned(),
            kind: DescriptorKind::Numeric,
            default_weight: Weight::one(),
            numeric_range: Some((min, max)),
            nominal_domain: None,
        }
    }

    pub fn of_kind(name: &str, kind: DescriptorKind) -> Self {
        DescriptorSpec {
            name: name.to_owned(),
            kind,
            default_weight: Weight::one(),
            numeric_range: None,
            nominal_domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub descriptors: Vec<DescriptorSpec>,
    pub solution_attribute_name: String,
    pub class_taxonomy: BTreeSet<String>,
}

impl Schema {
    pub fn descriptor(&self, name: &str) -> Option<&DescriptorSpec> {
        self.descriptors.iter().find(|d| d.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.descriptors.iter().map(|d| d.name.as_str())
    }

    /// Eight descriptors covering a scenario's context, its chain of events
    /// and its settings. Shipped as a stand-in, not a transcription of any
    /// published parameter list.
    pub fn default_rail() -> Self {
        Schema {
            descriptors: vec![
                DescriptorSpec::nominal(
                    "context",
                    ["normal-operation", "degraded-mode", "maintenance-works", "shunting"],
                ),
                DescriptorSpec::of_kind("triggering_events", DescriptorKind::Set),
                DescriptorSpec::nominal(
                    "system_state",
                    ["automatic", "manual", "restricted-manual", "stopped"],
                ),
                DescriptorSpec::nominal(
                    "location_type",
                    ["station", "main-line", "depot", "level-crossing", "tunnel"],
                ),
                DescriptorSpec::nominal(
                    "human_involvement",
                    ["driver", "dispatcher", "maintainer", "passenger", "none"],
                ),
                DescriptorSpec::of_kind("equipment_involved", DescriptorKind::Set),
                DescriptorSpec::numeric("severity_level", 0.0, 10.0),
                DescriptorSpec::of_kind("summary", DescriptorKind::Text),
            ],
            solution_attribute_name: "solution_adopted".to_owned(),
            class_taxonomy: [
                "head-on-collision",
                "rear-end-collision",
                "side-collision",
                "obstacle-collision",
                "buffer-stop-collision",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

/// Value of one descriptor. Text is kept as its token sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorValue {
    Label(String),
    Number(f64),
    Set(BTreeSet<String>),
    Text(Vec<String>),
    Missing,
}

impl DescriptorValue {
    pub fn label(s: impl Into<String>) -> Self {
        DescriptorValue::Label(s.into())
    }

    pub fn set<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        DescriptorValue::Set(items.into_iter().map(Into::into).collect())
    }

    /// Splits on whitespace.
    pub fn text(s: &str) -> Self {
        DescriptorValue::Text(s.split_whitespace().map(String::from).collect())
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, DescriptorValue::Missing)
    }

    pub fn kind(&self) -> Option<DescriptorKind> {
        match self {
            DescriptorValue::Label(_) => Some(DescriptorKind::Nominal),
            DescriptorValue::Number(_) => Some(DescriptorKind::Numeric),
            DescriptorValue::Set(_) => Some(DescriptorKind::Set),
            DescriptorValue::Text(_) => Some(DescriptorKind::Text),
            DescriptorValue::Missing => None,
        }
    }

    /// Reads the loose JSON form used at the user boundary: a string for
    /// nominal and text, a number, an array of strings for sets (or text
    /// tokens), and `null` for missing.
    pub fn from_loose(spec: &DescriptorSpec, json: &Value) -> Result<Self, ModelError> {
        let mismatch = || ModelError::TypeMismatch {
            descriptor: spec.name.clone(),
            expected: spec.kind,
        };
        let strings = |items: &Vec<Value>| -> Result<Vec<String>, ModelError> {
            items
                .iter()
                .map(|v| v.as_str().map(String::from).ok_or_else(mismatch))
                .collect()
        };
        match (spec.kind, json) {
            (_, Value::Null) => Ok(DescriptorValue::Missing),
            (DescriptorKind::Nominal, Value::String(s)) => Ok(DescriptorValue::Label(s.clone())),
            (DescriptorKind::Numeric, Value::Number(n)) => {
                n.as_f64().map(DescriptorValue::Number).ok_or_else(mismatch)
            }
            (DescriptorKind::Set, Value::Array(items)) => {
                Ok(DescriptorValue::Set(strings(items)?.into_iter().collect()))
            }
            (DescriptorKind::Text, Value::String(s)) => Ok(DescriptorValue::text(s)),
            (DescriptorKind::Text, Value::Array(items)) => Ok(DescriptorValue::Text(strings(items)?)),
            _ => Err(mismatch()),
        }
    }

    /// Inverse of [`DescriptorValue::from_loose`]; text tokens are joined by spaces.
    pub fn to_loose(&self) -> Value {
        match self {
            DescriptorValue::Label(s) => Value::String(s.clone()),
            DescriptorValue::Number(x) => serde_json::json!(x),
            DescriptorValue::Set(items) => items.iter().cloned().map(Value::String).collect(),
            DescriptorValue::Text(tokens) => Value::String(tokens.join(" ")),
            DescriptorValue::Missing => Value::Null,
        }
    }
}

pub type Values = BTreeMap<String, DescriptorValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCase {
    pub values: Values,
}

impl TargetCase {
    pub fn value(&self, name: &str) -> &DescriptorValue {
        self.values.get(name).unwrap_or(&DescriptorValue::Missing)
    }

    pub fn missing_count(&self) -> usize {
        self.values.values().filter(|v| v.is_missing()).count()
    }

    /// Builds a target from a loose JSON object (see [`DescriptorValue::from_loose`]).
    pub fn from_json(schema: &Schema, json: &Value) -> Result<Self, ModelError> {
        let object = json.as_object().ok_or(ModelError::NotAnObject)?;
        let mut values = Values::new();
        for (name, raw) in object {
            let spec = schema
                .descriptor(name)
                .ok_or_else(|| ModelError::UnknownDescriptor(name.clone()))?;
            values.insert(name.clone(), DescriptorValue::from_loose(spec, raw)?);
        }
        new_target(schema, values)
    }

    pub fn to_json(&self) -> Value {
        Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), v.to_loose()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseStatus {
    Candidate,
    TestedSuccess,
    TestedFailure,
    Corrected,
}

impl fmt::Display for CaseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseStatus::Candidate => "candidate",
            CaseStatus::TestedSuccess => "tested-success",
            CaseStatus::TestedFailure => "tested-failure",
            CaseStatus::Corrected => "corrected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: CaseId,
    pub title: String,
    pub class: String,
    pub values: Values,
    pub solution: String,
    pub status: CaseStatus,
    pub created_at: Timestamp,
}

impl Case {
    pub fn value(&self, name: &str) -> &DescriptorValue {
        self.values.get(name).unwrap_or(&DescriptorValue::Missing)
    }

    pub fn target(&self) -> TargetCase {
        TargetCase {
            values: self.values.clone(),
        }
    }
}

/// One broken invariant, anchored at a descriptor name or a field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl Violation {
    fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("descriptor `{descriptor}` expects a {expected} value")]
    TypeMismatch {
        descriptor: String,
        expected: DescriptorKind,
    },
    #[error("unknown descriptor `{0}`")]
    UnknownDescriptor(String),
    #[error("descriptor `{descriptor}`: {message}")]
    InvalidValue { descriptor: String, message: String },
    #[error("target values must be a JSON object")]
    NotAnObject,
}

pub fn validate_schema(s: &Schema) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if s.descriptors.is_empty() {
        violations.push(Violation::new("descriptors", "schema needs at least one descriptor"));
    }
    let mut seen = BTreeSet::new();
    for d in &s.descriptors {
        if d.name.trim().is_empty() {
            violations.push(Violation::new(&d.name, "descriptor name must be nonempty"));
        }
        if !seen.insert(d.name.as_str()) {
            violations.push(Violation::new(&d.name, "duplicate descriptor name"));
        }
        match (d.kind, d.numeric_range) {
            (DescriptorKind::Numeric, None) => {
                violations.push(Violation::new(&d.name, "numeric descriptor requires a range"))
            }
            (DescriptorKind::Numeric, Some((min, max))) => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    violations.push(Violation::new(&d.name, "numeric range requires min < max"));
                }
            }
            (_, Some(_)) => violations.push(Violation::new(
                &d.name,
                "numeric range only allowed on numeric descriptors",
            )),
            _ => {}
        }
        if d.nominal_domain.is_some() && d.kind != DescriptorKind::Nominal {
            violations.push(Violation::new(
                &d.name,
                "label domain only allowed on nominal descriptors",
            ));
        }
    }
    if s.solution_attribute_name.trim().is_empty() {
        violations.push(Violation::new(
            "solution_attribute_name",
            "solution attribute name must be nonempty",
        ));
    }
    if seen.contains(s.solution_attribute_name.as_str()) {
        violations.push(Violation::new(
            &s.solution_attribute_name,
            "solution attribute name collides with a descriptor",
        ));
    }
    if s.class_taxonomy.is_empty() {
        violations.push(Violation::new("class_taxonomy", "class taxonomy must be nonempty"));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Checks one value against its descriptor; `Ok` for `Missing`.
pub fn check_value(spec: &DescriptorSpec, value: &DescriptorValue) -> Result<(), ModelError> {
    let Some(kind) = value.kind() else {
        return Ok(());
    };
    if kind != spec.kind {
        return Err(ModelError::TypeMismatch {
            descriptor: spec.name.clone(),
            expected: spec.kind,
        });
    }
    let invalid = |message: String| ModelError::InvalidValue {
        descriptor: spec.name.clone(),
        message,
    };
    match value {
        DescriptorValue::Number(x) => {
            let (min, max) = spec.numeric_range.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            if !x.is_finite() || *x < min || *x > max {
                return Err(invalid(format!("{x} lies outside [{min}, {max}]")));
            }
        }
        DescriptorValue::Label(label) => {
            if let Some(domain) = &spec.nominal_domain {
                if !domain.contains(label) {
                    return Err(invalid(format!("label {label:?} is not in the domain")));
                }
            }
        }
        _ => {}
    }
    Ok(())
}

fn check_values(s: &Schema, values: &Values, violations: &mut Vec<Violation>) {
    for d in &s.descriptors {
        match values.get(&d.name) {
            None => violations.push(Violation::new(&d.name, "descriptor entry missing")),
            Some(v) => {
                if let Err(e) = check_value(d, v) {
                    violations.push(Violation::new(&d.name, e.to_string()));
                }
            }
        }
    }
    for name in values.keys() {
        if s.descriptor(name).is_none() {
            violations.push(Violation::new(name, "not a schema descriptor"));
        }
    }
}

pub fn validate_case(s: &Schema, c: &Case) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if c.id.0 == 0 {
        violations.push(Violation::new("id", "case number must be positive"));
    }
    if c.title.trim().is_empty() {
        violations.push(Violation::new("title", "title must be nonempty"));
    }
    if !s.class_taxonomy.contains(&c.class) {
        violations.push(Violation::new(
            "class",
            format!("class {:?} is not in the taxonomy", c.class),
        ));
    }
    if c.solution.trim().is_empty() {
        violations.push(Violation::new(&s.solution_attribute_name, "solution must be nonempty"));
    }
    check_values(s, &c.values, &mut violations);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

pub fn validate_target(s: &Schema, t: &TargetCase) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    check_values(s, &t.values, &mut violations);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Builds a target case, filling absent descriptors with `Missing`.
pub fn new_target(s: &Schema, mut values: Values) -> Result<TargetCase, ModelError> {
    for name in values.keys() {
        if s.descriptor(name).is_none() {
            return Err(ModelError::UnknownDescriptor(name.clone()));
        }
    }
    for d in &s.descriptors {
        let v = values.entry(d.name.clone()).or_insert(DescriptorValue::Missing);
        check_value(d, v)?;
    }
    Ok(TargetCase { values })
}
