//! One review session: a completed run plus the expert's decisions.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use ecolink_core::decisions::{DecisionLog, DecisionLogError};
use ecolink_core::ingest::{self, BomDelimiter, IngestError};
use ecolink_core::pipeline::{footprint, Footprint, FootprintError, RunRecord, RunReport};
use ecolink_core::{
    ActivityId, BomEntry, ComponentId, DecisionSource, LcaActivity, MappingDecision,
};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("run report {}: {message}", path.display())]
    Report { path: PathBuf, message: String },
    #[error("run report has a record for {0}, which is not in the BOM")]
    ForeignComponent(ComponentId),
    #[error("run report lists component {0} more than once")]
    DuplicateRecord(ComponentId),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Log(#[from] DecisionLogError),
}

#[derive(Debug, Error)]
pub enum DecideError {
    #[error("unknown component {0}")]
    UnknownComponent(ComponentId),
    #[error("unknown activity {0}")]
    UnknownActivity(ActivityId),
    #[error("{0}")]
    InvalidSource(String),
    #[error(transparent)]
    Log(#[from] DecisionLogError),
}

/// Inputs a session is built from.
#[derive(Debug, Clone)]
pub struct SessionInputs {
    pub bom: Vec<BomEntry>,
    pub db: Vec<LcaActivity>,
    pub report: RunReport,
}

impl SessionInputs {
    pub fn load(report: &Path, bom: &Path, db: &Path) -> Result<Self, SessionError> {
        let report_text = ingest::read_text(report)?;
        let report = RunReport::from_jsonl(&report_text).map_err(|e| SessionError::Report {
            path: report.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self {
            bom: ingest::parse_bom(&ingest::read_text(bom)?, BomDelimiter::Auto)?,
            db: ingest::parse_lca_db(&ingest::read_text(db)?)?,
            report,
        })
    }

    /// Content hash of the canonical serializations, 16 hex chars.
    pub fn session_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.report.to_jsonl(false));
        h.update([0]);
        h.update(ingest::write_bom(&self.bom, BomDelimiter::Comma));
        h.update([0]);
        h.update(ingest::write_lca_db(&self.db));
        hex::encode(&h.finalize()[..8])
    }
}

/// Review state. Rankings are immutable; only decisions change, and every
/// change goes to the log before it is applied in memory.
#[derive(Debug)]
pub struct ReviewSession {
    id: String,
    bom: Vec<BomEntry>,
    db: Vec<LcaActivity>,
    activity_pos: HashMap<ActivityId, usize>,
    records: HashMap<ComponentId, RunRecord>,
    history: Vec<MappingDecision>,
    latest: HashMap<ComponentId, MappingDecision>,
    log: DecisionLog,
}

pub const LOG_PREFIX: &str = "decisions-";

impl ReviewSession {
    /// Opens the session's log under `data_dir` and replays it.
    pub fn open(inputs: SessionInputs, data_dir: &Path) -> Result<Self, SessionError> {
        let id = inputs.session_id();
        let SessionInputs { bom, db, report } = inputs;
        let bom_errors = ecolink_core::model::validate_bom(&bom);
        if let Some(e) = bom_errors.first() {
            return Err(SessionError::Invalid(e.to_string()));
        }
        let db_errors = ecolink_core::model::validate_activities(&db);
        if let Some(e) = db_errors.first() {
            return Err(SessionError::Invalid(e.to_string()));
        }
        let mut records = HashMap::new();
        for r in report.records {
            if !bom.iter().any(|e| e.id == r.component_id) {
                return Err(SessionError::ForeignComponent(r.component_id));
            }
            let cid = r.component_id.clone();
            if records.insert(cid.clone(), r).is_some() {
                return Err(SessionError::DuplicateRecord(cid));
            }
        }
        let activity_pos = db
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.clone(), i))
            .collect();
        let log = DecisionLog::open(&data_dir.join(format!("{LOG_PREFIX}{id}.jsonl")))?;
        let replay = log.replay()?;
        if !replay.skipped_lines.is_empty() {
            log::warn!(
                "{}: skipped unreadable lines {:?}",
                log.path().display(),
                replay.skipped_lines
            );
        }
        let mut session = Self {
            id,
            bom,
            db,
            activity_pos,
            records,
            history: Vec::new(),
            latest: HashMap::new(),
            log,
        };
        for d in replay.decisions {
            if session.entry(&d.component_id).is_none()
                || session.activity(&d.chosen_activity_id).is_none()
            {
                log::warn!(
                    "ignoring logged decision {} -> {}: not part of this session",
                    d.component_id,
                    d.chosen_activity_id
                );
                continue;
            }
            session.apply(d);
        }
        Ok(session)
    }

    fn apply(&mut self, d: MappingDecision) {
        self.latest.insert(d.component_id.clone(), d.clone());
        self.history.push(d);
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    pub fn bom(&self) -> &[BomEntry] {
        &self.bom
    }

    pub fn db(&self) -> &[LcaActivity] {
        &self.db
    }

    pub fn entry(&self, id: &ComponentId) -> Option<&BomEntry> {
        self.bom.iter().find(|e| &e.id == id)
    }

    pub fn activity(&self, id: &ActivityId) -> Option<&LcaActivity> {
        self.activity_pos.get(id).map(|&i| &self.db[i])
    }

    /// The run record for a component; `None` when the run skipped it.
    pub fn record(&self, id: &ComponentId) -> Option<&RunRecord> {
        self.records.get(id)
    }

    pub fn decision(&self, id: &ComponentId) -> Option<&MappingDecision> {
        self.latest.get(id)
    }

    /// Every accepted decision, oldest first.
    pub fn history(&self) -> &[MappingDecision] {
        &self.history
    }

    pub fn footprint(&self) -> Result<Footprint, FootprintError> {
        footprint(&self.history, &self.bom, &self.db)
    }

    /// Records a decision. The stored source is derived from the shortlist:
    /// `accepted_rank_n` when the activity is ranked there, otherwise
    /// `expert_override`. A client-supplied source is only checked for
    /// syntax.
    pub fn decide(
        &mut self,
        component: &ComponentId,
        activity: &ActivityId,
        claimed_source: Option<&str>,
        reviewer: &str,
        now: DateTime<Utc>,
    ) -> Result<MappingDecision, DecideError> {
        if self.entry(component).is_none() {
            return Err(DecideError::UnknownComponent(component.clone()));
        }
        if self.activity(activity).is_none() {
            return Err(DecideError::UnknownActivity(activity.clone()));
        }
        if let Some(s) = claimed_source {
            s.parse::<DecisionSource>()
                .map_err(DecideError::InvalidSource)?;
        }
        let rank = self
            .record(component)
            .and_then(|r| r.candidates.iter().position(|c| &c.activity_id == activity))
            .map(|i| i + 1);
        let source = rank.map_or(DecisionSource::ExpertOverride, DecisionSource::AcceptedRank);
        let decision =
            MappingDecision::new(component.clone(), activity.clone(), source, reviewer, now);
        self.log.append(&decision)?;
        self.apply(decision.clone());
        Ok(decision)
    }
}
