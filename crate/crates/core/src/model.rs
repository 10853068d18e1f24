//! Shared domain vocabulary: BOM rows, LCA activities, datasheets, rankings
//! and expert decisions.
//!
//! Everything here is plain data plus pure invariant checks. Parsing lives in
//! [`crate::ingest`], retrieval in [`crate::index`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingBackendDescriptor;
use crate::llm::LlmBackendDescriptor;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Identifier of a BOM row, unique within one BOM.
    ComponentId
);
string_id!(
    /// Identifier of an LCA database activity, unique within one database.
    ActivityId
);

fn default_quantity() -> f64 {
    1.0
}

/// One component row of a bill of materials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BomEntry {
    pub id: ComponentId,
    pub name: String,
    #[serde(default)]
    pub material: String,
    #[serde(default)]
    pub supplier: String,
    /// Unitless multiplicity used when summing the footprint.
    #[serde(default = "default_quantity")]
    pub quantity: f64,
}

impl BomEntry {
    pub fn new(
        id: impl Into<ComponentId>,
        name: impl Into<String>,
        material: impl Into<String>,
        supplier: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            material: material.into(),
            supplier: supplier.into(),
            quantity: 1.0,
        }
    }

    pub fn with_quantity(mut self, quantity: f64) -> Self {
        self.quantity = quantity;
        self
    }
}

/// One LCA database entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcaActivity {
    pub id: ActivityId,
    pub name: String,
    pub description: String,
    /// kg CO2-equivalent per declared unit.
    pub emission_factor: f64,
    /// Uninterpreted label for the declared unit, e.g. `kg CO2e/kg`.
    pub unit: String,
}

impl LcaActivity {
    pub fn validate(&self) -> Vec<ValidationError> {
        let mut errors = Vec::new();
        if self.name.trim().is_empty() {
            errors.push(ValidationError::new(
                self.id.as_str(),
                "name",
                "must not be empty",
            ));
        }
        if !self.emission_factor.is_finite() || self.emission_factor < 0.0 {
            errors.push(ValidationError::new(
                self.id.as_str(),
                "emission_factor",
                format!("must be a finite value >= 0, got {}", self.emission_factor),
            ));
        }
        errors
    }
}

/// A supplier technical document, already converted to plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Datasheet {
    pub id: String,
    pub filename: String,
    pub body: String,
}

impl Datasheet {
    pub fn new(filename: impl Into<String>, body: impl Into<String>) -> Self {
        let filename = filename.into();
        Self {
            id: filename.clone(),
            filename,
            body: body.into(),
        }
    }

    pub fn validate(&self) -> Vec<ValidationError> {
        if self.filename.is_empty() {
            vec![ValidationError::new(
                self.id.as_str(),
                "filename",
                "must not be empty",
            )]
        } else {
            Vec::new()
        }
    }
}

/// Which pipeline stages contribute to the ranking query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// BOM fields only, no LLM.
    #[serde(rename = "semantic")]
    SemanticOnly,
    /// LLM-expanded query without datasheet context.
    Llm,
    /// LLM-expanded query with the matched datasheet, when one clears the threshold.
    LlmDatasheet,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::SemanticOnly, Mode::Llm, Mode::LlmDatasheet];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SemanticOnly => "semantic",
            Mode::Llm => "llm",
            Mode::LlmDatasheet => "llm-datasheet",
        }
    }

    pub fn uses_llm(self) -> bool {
        !matches!(self, Mode::SemanticOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "semantic" | "semantic-only" => Ok(Mode::SemanticOnly),
            "llm" => Ok(Mode::Llm),
            "llm-datasheet" => Ok(Mode::LlmDatasheet),
            other => Err(format!(
                "unknown mode `{other}` (expected semantic, llm or llm-datasheet)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub activity_id: ActivityId,
    /// Raw cosine similarity in [-1, 1].
    pub score: f64,
}

/// Ordered shortlist of activities for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRanking {
    pub component_id: ComponentId,
    pub query_text: String,
    pub mode: Mode,
    pub candidates: Vec<Candidate>,
}

impl CandidateRanking {
    /// 1-based rank of `activity` in this ranking.
    pub fn rank_of(&self, activity: &ActivityId) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| &c.activity_id == activity)
            .map(|i| i + 1)
    }

    /// Checks ordering, score range and length against `top_k`.
    pub fn check(&self, top_k: usize) -> Result<(), String> {
        if self.candidates.len() > top_k {
            return Err(format!(
                "{} candidates exceeds top_k {}",
                self.candidates.len(),
                top_k
            ));
        }
        for c in &self.candidates {
            if !(-1.0 - 1e-6..=1.0 + 1e-6).contains(&c.score) {
                return Err(format!(
                    "score {} of {} outside [-1, 1]",
                    c.score, c.activity_id
                ));
            }
        }
        for pair in self.candidates.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let ordered =
                a.score > b.score || (a.score == b.score && a.activity_id < b.activity_id);
            if !ordered {
                return Err(format!(
                    "{} ({}) ranked above {} ({})",
                    a.activity_id, a.score, b.activity_id, b.score
                ));
            }
        }
        Ok(())
    }
}

/// How an expert arrived at a mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecisionSource {
    /// The expert confirmed the candidate at this 1-based shortlist rank.
    AcceptedRank(usize),
    ExpertOverride,
}

impl DecisionSource {
    pub fn rank(self) -> Option<usize> {
        match self {
            DecisionSource::AcceptedRank(n) => Some(n),
            DecisionSource::ExpertOverride => None,
        }
    }
}

impl fmt::Display for DecisionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionSource::AcceptedRank(n) => write!(f, "accepted_rank_{n}"),
            DecisionSource::ExpertOverride => f.write_str("expert_override"),
        }
    }
}

impl FromStr for DecisionSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "expert_override" {
            return Ok(DecisionSource::ExpertOverride);
        }
        s.strip_prefix("accepted_rank_")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| *n >= 1)
            .map(DecisionSource::AcceptedRank)
            .ok_or_else(|| format!("invalid decision source `{s}`"))
    }
}

impl Serialize for DecisionSource {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DecisionSource {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An expert-confirmed or expert-corrected link from component to activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingDecision {
    pub component_id: ComponentId,
    #[serde(rename = "activity_id")]
    pub chosen_activity_id: ActivityId,
    pub source: DecisionSource,
    /// Redundant with `source`; kept in the record for readers that filter on rank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub reviewer: String,
    pub decided_at: DateTime<Utc>,
}

impl MappingDecision {
    pub fn new(
        component_id: ComponentId,
        chosen_activity_id: ActivityId,
        source: DecisionSource,
        reviewer: impl Into<String>,
        decided_at: DateTime<Utc>,
    ) -> Self {
        Self {
            component_id,
            chosen_activity_id,
            source,
            rank: source.rank(),
            reviewer: reviewer.into(),
            decided_at,
        }
    }
}

/// Knobs for one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub datasheet_threshold: f64,
    pub top_k: usize,
    pub embedding: EmbeddingBackendDescriptor,
    pub llm: LlmBackendDescriptor,
    pub hits_at: Vec<usize>,
    /// Upper bound on components processed concurrently (and thus on
    /// in-flight LLM calls).
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            datasheet_threshold: 0.5,
            top_k: 5,
            embedding: EmbeddingBackendDescriptor::default(),
            llm: LlmBackendDescriptor::default(),
            hits_at: vec![1, 5],
            parallelism: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(-1.0..=1.0).contains(&self.datasheet_threshold) {
            return Err(format!(
                "datasheet_threshold {} outside [-1, 1]",
                self.datasheet_threshold
            ));
        }
        if self.top_k == 0 {
            return Err("top_k must be >= 1".into());
        }
        if self.hits_at.contains(&0) {
            return Err("hits_at values must be >= 1".into());
        }
        if self.parallelism == 0 {
            return Err("parallelism must be >= 1".into());
        }
        self.embedding.validate()?;
        Ok(())
    }
}

/// One violated invariant, addressed by entry id and field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub entry_id: String,
    pub field: String,
    pub message: String,
}

impl ValidationError {
    pub fn new(entry_id: &str, field: &str, message: impl Into<String>) -> Self {
        Self {
            entry_id: entry_id.to_owned(),
            field: field.to_owned(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}: {}", self.entry_id, self.field, self.message)
    }
}

/// Returns every invariant violation in `entries`; empty means valid.
pub fn validate_bom(entries: &[BomEntry]) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for entry in entries {
        let id = entry.id.as_str();
        if !seen.insert(&entry.id) {
            errors.push(ValidationError::new(id, "id", "duplicate id"));
        }
        if entry.name.trim().is_empty() {
            errors.push(ValidationError::new(id, "name", "must not be empty"));
        }
        if !entry.quantity.is_finite() || entry.quantity < 0.0 {
            errors.push(ValidationError::new(
                id,
                "quantity",
                format!("must be a finite value >= 0, got {}", entry.quantity),
            ));
        }
    }
    errors
}

/// Returns every invariant violation in an activity list.
pub fn validate_activities(activities: &[LcaActivity]) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for a in activities {
        if !seen.insert(&a.id) {
            errors.push(ValidationError::new(a.id.as_str(), "id", "duplicate id"));
        }
        errors.extend(a.validate());
    }
    errors
}
