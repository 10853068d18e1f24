//! Runs components through datasheet selection, LLM expansion and ranking,
//! and sums emission factors into a footprint.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmatch::{datasheet_query_text, EmbeddedPool};
use crate::embedding::EmbeddingBackend;
use crate::index::{ActivityIndex, FingerprintMismatch};
use crate::llm::{build_prompt, parse_llm_response, ranking_query_text, LlmBackend};
use crate::model::{
    validate_bom, ActivityId, BomEntry, Candidate, CandidateRanking, ComponentId, Datasheet,
    LcaActivity, MappingDecision, Mode, PipelineConfig, ValidationError,
};
use crate::scalar::Scalar;

/// Query for the BOM-fields-only mode: name, supplier, material.
pub fn semantic_only_query(entry: &BomEntry) -> String {
    datasheet_query_text(entry)
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mode {0} needs an LLM backend but none was configured")]
    MissingLlm(Mode),
    #[error("invalid BOM: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidBom(Vec<ValidationError>),
    #[error("cannot start worker pool: {0}")]
    Workers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Datasheet,
    Llm,
    Ranking,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Datasheet => "datasheet",
            Stage::Llm => "llm",
            Stage::Ranking => "ranking",
        })
    }
}

/// Which datasheet, if any, was put into the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasheetDecision {
    pub filename: String,
    pub score: f64,
}

/// Wall-clock milliseconds spent per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMillis {
    pub datasheet: u64,
    pub llm: u64,
    pub ranking: u64,
}

fn elapsed_ms(start: Instant) -> u64 {
    u64::try_from(start.elapsed().as_millis()).unwrap_or(u64::MAX)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRun {
    pub ranking: CandidateRanking,
    pub datasheet: Option<DatasheetDecision>,
    pub millis: StageMillis,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("component {component_id} failed at {stage} stage: {message}")]
pub struct ComponentError {
    pub component_id: ComponentId,
    pub stage: Stage,
    pub message: String,
    pub query_text: Option<String>,
    pub datasheet: Option<DatasheetDecision>,
    pub millis: StageMillis,
}

/// One line of the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub component_id: ComponentId,
    pub mode: Mode,
    pub query_text: Option<String>,
    pub candidates: Vec<Candidate>,
    pub datasheet: Option<DatasheetDecision>,
    pub error: Option<String>,
    pub millis: Option<StageMillis>,
}

impl RunRecord {
    pub fn ranking(&self) -> Option<CandidateRanking> {
        if self.error.is_some() {
            return None;
        }
        Some(CandidateRanking {
            component_id: self.component_id.clone(),
            query_text: self.query_text.clone().unwrap_or_default(),
            mode: self.mode,
            candidates: self.candidates.clone(),
        })
    }

    fn from_outcome(mode: Mode, outcome: Result<ComponentRun, ComponentError>) -> Self {
        match outcome {
            Ok(run) => RunRecord {
                component_id: run.ranking.component_id,
                mode,
                query_text: Some(run.ranking.query_text),
                candidates: run.ranking.candidates,
                datasheet: run.datasheet,
                error: None,
                millis: Some(run.millis),
            },
            Err(e) => RunRecord {
                error: Some(format!("{}: {}", e.stage, e.message)),
                component_id: e.component_id,
                mode,
                query_text: e.query_text,
                candidates: Vec::new(),
                datasheet: e.datasheet,
                millis: Some(e.millis),
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run report line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Outcome of a BOM run: one record per component, in BOM order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub records: Vec<RunRecord>,
    pub fingerprint_warning: Option<FingerprintMismatch>,
}

impl RunReport {
    pub fn rankings(&self) -> Vec<CandidateRanking> {
        self.records.iter().filter_map(RunRecord::ranking).collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }

    /// One JSON object per line. Timings vary run to run, so they are only
    /// written when asked for; otherwise `millis` is null and the report is
    /// byte-reproducible.
    pub fn to_jsonl(&self, with_timings: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = if with_timings {
                serde_json::to_string(r)
            } else {
                serde_json::to_string(&RunRecord {
                    millis: None,
                    ..r.clone()
                })
            };
            let _ = writeln!(out, "{}", line.expect("run record serializes"));
        }
        out
    }

    pub fn from_jsonl(source: &str) -> Result<Self, ReportError> {
        let records = source
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ReportError::Syntax {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            records,
            fingerprint_warning: None,
        })
    }
}

/// Backends used by one run.
#[derive(Clone, Copy)]
pub struct Backends<'a, T> {
    pub embedder: &'a dyn EmbeddingBackend<T>,
    pub llm: Option<&'a dyn LlmBackend>,
}

/// Shared, immutable state for running many components in one mode or
/// several. Datasheet embeddings are computed on first use and reused.
pub struct Pipeline<'a, T> {
    index: &'a ActivityIndex<T>,
    sheets: &'a [Datasheet],
    pool: OnceLock<Result<EmbeddedPool<'a, T>, String>>,
    config: &'a PipelineConfig,
    backends: Backends<'a, T>,
}

impl<'a, T: Scalar> Pipeline<'a, T> {
    pub fn new(
        index: &'a ActivityIndex<T>,
        sheets: &'a [Datasheet],
        config: &'a PipelineConfig,
        backends: Backends<'a, T>,
    ) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        Ok(Self {
            index,
            sheets,
            pool: OnceLock::new(),
            config,
            backends,
        })
    }

    pub fn fingerprint_warning(&self) -> Option<FingerprintMismatch> {
        let live = self.backends.embedder.fingerprint();
        (self.index.fingerprint() != live).then(|| FingerprintMismatch {
            stored: self.index.fingerprint().to_owned(),
            live,
        })
    }

    fn pool(&self) -> &Result<EmbeddedPool<'a, T>, String> {
        self.pool.get_or_init(|| {
            EmbeddedPool::new(self.sheets, self.backends.embedder).map_err(|e| e.to_string())
        })
    }

    /// Runs one component through the stages selected by `mode`.
    pub fn run_component(
        &self,
        entry: &BomEntry,
        mode: Mode,
    ) -> Result<ComponentRun, ComponentError> {
        let mut millis = StageMillis::default();
        let mut datasheet: Option<DatasheetDecision> = None;
        let fail = |stage, message: String, query_text, datasheet, millis| ComponentError {
            component_id: entry.id.clone(),
            stage,
            message,
            query_text,
            datasheet,
            millis,
        };

        let query_text = match mode {
            Mode::SemanticOnly => semantic_only_query(entry),
            Mode::Llm | Mode::LlmDatasheet => {
                let llm = self.backends.llm.ok_or_else(|| {
                    fail(
                        Stage::Llm,
                        "no LLM backend configured".into(),
                        None,
                        None,
                        millis,
                    )
                })?;
                let mut selected: Option<&Datasheet> = None;
                if mode == Mode::LlmDatasheet && !self.sheets.is_empty() {
                    let start = Instant::now();
                    let found = match self.pool() {
                        Ok(pool) => pool
                            .select(
                                entry,
                                self.backends.embedder,
                                self.config.datasheet_threshold,
                            )
                            .map_err(|e| e.to_string()),
                        Err(e) => Err(e.clone()),
                    };
                    millis.datasheet = elapsed_ms(start);
                    let found = found.map_err(|m| fail(Stage::Datasheet, m, None, None, millis))?;
                    if let Some(m) = found {
                        datasheet = Some(DatasheetDecision {
                            filename: m.sheet.filename.clone(),
                            score: m.score,
                        });
                        selected = Some(m.sheet);
                    }
                }
                let start = Instant::now();
                let prompt = build_prompt(entry, selected);
                let raw = llm.complete(&prompt);
                millis.llm = elapsed_ms(start);
                let raw = raw.map_err(|e| {
                    fail(Stage::Llm, e.to_string(), None, datasheet.clone(), millis)
                })?;
                ranking_query_text(&parse_llm_response(&raw))
            }
        };

        let start = Instant::now();
        let ranked = self
            .backends
            .embedder
            .embed_one(&query_text)
            .map_err(|e| e.to_string())
            .and_then(|q| {
                self.index
                    .candidates(&q, self.config.top_k)
                    .map_err(|e| e.to_string())
            });
        millis.ranking = elapsed_ms(start);
        let candidates = ranked.map_err(|m| {
            fail(
                Stage::Ranking,
                m,
                Some(query_text.clone()),
                datasheet.clone(),
                millis,
            )
        })?;

        Ok(ComponentRun {
            ranking: CandidateRanking {
                component_id: entry.id.clone(),
                query_text,
                mode,
                candidates,
            },
            datasheet,
            millis,
        })
    }

    /// Runs every entry with bounded parallelism. Per-component failures are
    /// recorded in the report; records keep BOM order.
    pub fn run_bom(&self, entries: &[BomEntry], mode: Mode) -> Result<RunReport, PipelineError> {
        let errors = validate_bom(entries);
        if !errors.is_empty() {
            return Err(PipelineError::InvalidBom(errors));
        }
        if mode.uses_llm() && self.backends.llm.is_none() {
            return Err(PipelineError::MissingLlm(mode));
        }
        let workers = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism)
            .build()
            .map_err(|e| PipelineError::Workers(e.to_string()))?;
        let records: Vec<RunRecord> = workers.install(|| {
            entries
                .par_iter()
                .map(|e| RunRecord::from_outcome(mode, self.run_component(e, mode)))
                .collect()
        });
        for r in records.iter().filter(|r| r.error.is_some()) {
            log::warn!(
                "component {} failed: {}",
                r.component_id,
                r.error.as_deref().unwrap_or("")
            );
        }
        Ok(RunReport {
            records,
            fingerprint_warning: self.fingerprint_warning(),
        })
    }
}

/// Convenience wrapper over [`Pipeline::run_bom`].
pub fn run_bom<T: Scalar>(
    entries: &[BomEntry],
    mode: Mode,
    index: &ActivityIndex<T>,
    pool: &[Datasheet],
    config: &PipelineConfig,
    backends: Backends<'_, T>,
) -> Result<RunReport, PipelineError> {
    Pipeline::new(index, pool, config, backends)?.run_bom(entries, mode)
}

#[derive(Debug, Error, PartialEq)]
pub enum FootprintError {
    #[error("decision for {component} references unknown activity {activity}")]
    DanglingActivity {
        component: ComponentId,
        activity: ActivityId,
    },
    #[error("decision references component {0} which is not in the BOM")]
    UnknownComponent(ComponentId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintRow {
    pub component_id: ComponentId,
    pub activity_id: ActivityId,
    pub quantity: f64,
    pub emission_factor: f64,
    pub unit: String,
    pub kg_co2e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub total_kg_co2e: f64,
    /// One row per decided component, in BOM order.
    pub breakdown: Vec<FootprintRow>,
    /// Components without a decision, in BOM order.
    pub uncovered: Vec<ComponentId>,
}

/// Sums `quantity x emission_factor` over decided components.
///
/// When a component has several decisions the last one in `decisions`
/// wins. Summation runs in BOM order, so the total does not depend on the
/// order of `decisions`.
pub fn footprint(
    decisions: &[MappingDecision],
    bom: &[BomEntry],
    db: &[LcaActivity],
) -> Result<Footprint, FootprintError> {
    let activities: HashMap<&ActivityId, &LcaActivity> = db.iter().map(|a| (&a.id, a)).collect();
    let components: HashMap<&ComponentId, &BomEntry> = bom.iter().map(|e| (&e.id, e)).collect();
    let mut latest: HashMap<&ComponentId, &LcaActivity> = HashMap::new();
    for d in decisions {
        if !components.contains_key(&d.component_id) {
            return Err(FootprintError::UnknownComponent(d.component_id.clone()));
        }
        let activity = activities.get(&d.chosen_activity_id).ok_or_else(|| {
            FootprintError::DanglingActivity {
                component: d.component_id.clone(),
                activity: d.chosen_activity_id.clone(),
            }
        })?;
        latest.insert(&d.component_id, activity);
    }
    let mut breakdown = Vec::new();
    let mut uncovered = Vec::new();
    let mut total = 0.0;
    for entry in bom {
        match latest.get(&entry.id) {
            Some(a) => {
                let kg = entry.quantity * a.emission_factor;
                total += kg;
                breakdown.push(FootprintRow {
                    component_id: entry.id.clone(),
                    activity_id: a.id.clone(),
                    quantity: entry.quantity,
                    emission_factor: a.emission_factor,
                    unit: a.unit.clone(),
                    kg_co2e: kg,
                });
            }
            None => uncovered.push(entry.id.clone()),
        }
    }
    Ok(Footprint {
        total_kg_co2e: total,
        breakdown,
        uncovered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DecisionSource;
    use chrono::DateTime;

    fn decision(c: &str, a: &str) -> MappingDecision {
        MappingDecision::new(
            c.into(),
            a.into(),
            DecisionSource::ExpertOverride,
            "expert",
            DateTime::from_timestamp(0, 0).unwrap(),
        )
    }

    fn act(id: &str, factor: f64) -> LcaActivity {
        LcaActivity {
            id: id.into(),
            name: id.into(),
            description: String::new(),
            emission_factor: factor,
            unit: "kg CO2e/kg".into(),
        }
    }

    #[test]
    fn semantic_query_from_figure_row() {
        let e = BomEntry::new("c6", "STIFTSCHRAUBE", "8.8", "FixFast Components");
        assert_eq!(
            semantic_only_query(&e),
            "STIFTSCHRAUBE\nFixFast Components\n8.8"
        );
        assert_eq!(semantic_only_query(&e), datasheet_query_text(&e));
        assert_eq!(
            semantic_only_query(&BomEntry::new("c", "X", "", "")),
            "X\n\n"
        );
    }

    #[test]
    fn no_decisions_means_all_uncovered() {
        let bom = vec![
            BomEntry::new("c1", "A", "", ""),
            BomEntry::new("c2", "B", "", ""),
        ];
        let fp = footprint(&[], &bom, &[act("a1", 2.0)]).unwrap();
        assert_eq!(fp.total_kg_co2e, 0.0);
        assert_eq!(
            fp.uncovered,
            vec![ComponentId::from("c1"), ComponentId::from("c2")]
        );
    }

    #[test]
    fn quantity_times_factor() {
        let bom = vec![BomEntry::new("c1", "A", "", "").with_quantity(2.0)];
        let fp = footprint(&[decision("c1", "a1")], &bom, &[act("a1", 1.5)]).unwrap();
        assert_eq!(fp.total_kg_co2e, 3.0);
        assert_eq!(fp.breakdown[0].kg_co2e, 3.0);
        assert!(fp.uncovered.is_empty());
    }

    #[test]
    fn later_decision_supersedes() {
        let bom = vec![BomEntry::new("c1", "A", "", "")];
        let db = [act("a1", 1.0), act("a2", 4.0)];
        let fp = footprint(&[decision("c1", "a1"), decision("c1", "a2")], &bom, &db).unwrap();
        assert_eq!(fp.total_kg_co2e, 4.0);
        assert_eq!(fp.breakdown.len(), 1);
    }

    #[test]
    fn dangling_and_unknown() {
        let bom = vec![BomEntry::new("c1", "A", "", "")];
        assert_eq!(
            footprint(&[decision("c1", "zz")], &bom, &[]),
            Err(FootprintError::DanglingActivity {
                component: "c1".into(),
                activity: "zz".into()
            })
        );
        assert_eq!(
            footprint(&[decision("c9", "a1")], &bom, &[act("a1", 1.0)]),
            Err(FootprintError::UnknownComponent("c9".into()))
        );
    }

    #[test]
    fn report_jsonl_roundtrip_and_timing_suppression() {
        let report = RunReport {
            records: vec![
                RunRecord {
                    component_id: "c1".into(),
                    mode: Mode::LlmDatasheet,
                    query_text: Some("Cast iron production\ngrey iron".into()),
                    candidates: vec![Candidate {
                        activity_id: "a1".into(),
                        score: 0.75,
                    }],
                    datasheet: Some(DatasheetDecision {
                        filename: "x.txt".into(),
                        score: 0.5,
                    }),
                    error: None,
                    millis: Some(StageMillis {
                        datasheet: 1,
                        llm: 2,
                        ranking: 3,
                    }),
                },
                RunRecord {
                    component_id: "c2".into(),
                    mode: Mode::LlmDatasheet,
                    query_text: None,
                    candidates: vec![],
                    datasheet: None,
                    error: Some("llm: timeout".into()),
                    millis: None,
                },
            ],
            fingerprint_warning: None,
        };
        let timed = RunReport::from_jsonl(&report.to_jsonl(true)).unwrap();
        assert_eq!(timed, report);
        let plain = report.to_jsonl(false);
        assert!(plain.lines().all(|l| l.contains("\"millis\":null")));
        assert_eq!(report.rankings().len(), 1);
        assert_eq!(report.failures().count(), 1);
        assert!(matches!(
            RunReport::from_jsonl("{}\n"),
            Err(ReportError::Syntax { line: 1, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn footprint_permutation_invariant_and_linear(
                qs in prop::collection::vec(0u32..20, 1..12),
                fs in prop::collection::vec(0.0f64..50.0, 1..12),
                seed in any::<u64>(),
                scale in 0.5f64..8.0,
            ) {
                let bom: Vec<BomEntry> = qs.iter().enumerate()
                    .map(|(i, q)| BomEntry::new(format!("c{i}").as_str(), "X", "", "").with_quantity(f64::from(*q)))
                    .collect();
                let db: Vec<LcaActivity> = fs.iter().enumerate().map(|(i, f)| act(&format!("a{i}"), *f)).collect();
                let mut decisions: Vec<MappingDecision> = bom.iter().enumerate()
                    .filter(|(i, _)| (seed >> (i % 64)) & 1 == 1)
                    .map(|(i, e)| decision(e.id.as_str(), db[i % db.len()].id.as_str()))
                    .collect();
                let base = footprint(&decisions, &bom, &db).unwrap();
                decisions.reverse();
                let permuted = footprint(&decisions, &bom, &db).unwrap();
                prop_assert_eq!(base.total_kg_co2e, permuted.total_kg_co2e);
                let scaled_bom: Vec<BomEntry> = bom.iter().cloned().map(|e| { let q = e.quantity * scale; e.with_quantity(q) }).collect();
                let scaled = footprint(&decisions, &scaled_bom, &db).unwrap();
                let expect = base.total_kg_co2e * scale;
                prop_assert!((scaled.total_kg_co2e - expect).abs() <= 1e-9 * expect.abs().max(1.0));
            }
        }
    }
}
