//! Hits@n over gold labels and the per-mode comparison table.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{build_index, IndexError};
use crate::ingest::GoldLabel;
use crate::model::{
    ActivityId, BomEntry, CandidateRanking, ComponentId, Datasheet, LcaActivity, Mode,
    PipelineConfig,
};
use crate::pipeline::{Backends, Pipeline, PipelineError, RunReport};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no labels")]
    NoLabels,
    #[error("no cutoffs given")]
    NoCutoffs,
    #[error("cutoff n must be >= 1")]
    ZeroCutoff,
    #[error("component {0} is labeled more than once")]
    DuplicateLabel(ComponentId),
    #[error("component {0} has more than one ranking")]
    DuplicateRanking(ComponentId),
    #[error("ranking for {component} is mode {found}, expected {expected}")]
    ModeMismatch {
        component: ComponentId,
        expected: Mode,
        found: Mode,
    },
    #[error("gold label for {component} references activity {activity} which is not in the LCA database")]
    UnknownActivity {
        component: ComponentId,
        activity: ActivityId,
    },
    #[error("gold label references component {0} which is not in the BOM")]
    UnknownComponent(ComponentId),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Hits at one cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsAtN {
    pub n: usize,
    pub numerator: usize,
    pub denominator: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentHit {
    pub component_id: ComponentId,
    pub gold: ActivityId,
    /// 1-based rank of the gold activity, `None` when absent or unranked.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mode: Mode,
    /// Ascending by `n`.
    pub hits: Vec<HitsAtN>,
    pub components: Vec<ComponentHit>,
    /// Labeled components with no ranking; scored as misses.
    pub missing: Vec<ComponentId>,
}

impl EvalResult {
    pub fn at(&self, n: usize) -> Option<&HitsAtN> {
        self.hits.iter().find(|h| h.n == n)
    }
}

/// Fraction of labeled components whose gold activity is among the first
/// `n` candidates, for each `n` in `ns`. Components without a ranking count
/// as misses.
pub fn hits_at(
    mode: Mode,
    rankings: &[CandidateRanking],
    gold: &[GoldLabel],
    ns: &[usize],
) -> Result<EvalResult, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::NoLabels);
    }
    if ns.is_empty() {
        return Err(EvalError::NoCutoffs);
    }
    if ns.contains(&0) {
        return Err(EvalError::ZeroCutoff);
    }
    let mut by_component: HashMap<&ComponentId, &CandidateRanking> = HashMap::new();
    for r in rankings {
        if r.mode != mode {
            return Err(EvalError::ModeMismatch {
                component: r.component_id.clone(),
                expected: mode,
                found: r.mode,
            });
        }
        if by_component.insert(&r.component_id, r).is_some() {
            return Err(EvalError::DuplicateRanking(r.component_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    let mut components = Vec::with_capacity(gold.len());
    let mut missing = Vec::new();
    for label in gold {
        if !seen.insert(&label.component_id) {
            return Err(EvalError::DuplicateLabel(label.component_id.clone()));
        }
        let rank = match by_component.get(&label.component_id) {
            Some(r) => r.rank_of(&label.activity_id),
            None => {
                missing.push(label.component_id.clone());
                None
            }
        };
        components.push(ComponentHit {
            component_id: label.component_id.clone(),
            gold: label.activity_id.clone(),
            rank,
        });
    }
    let denominator = gold.len();
    let cutoffs: BTreeSet<usize> = ns.iter().copied().collect();
    let hits = cutoffs
        .into_iter()
        .map(|n| {
            let numerator = components
                .iter()
                .filter(|c| c.rank.is_some_and(|r| r <= n))
                .count();
            HitsAtN {
                n,
                numerator,
                denominator,
                ratio: numerator as f64 / denominator as f64,
            }
        })
        .collect();
    Ok(EvalResult {
        mode,
        hits,
        components,
        missing,
    })
}

/// Checks that every label points at a known activity and, when a BOM is
/// given, a known component.
pub fn check_gold_labels(
    gold: &[GoldLabel],
    db: &[LcaActivity],
    bom: Option<&[BomEntry]>,
) -> Result<(), EvalError> {
    let activities: HashSet<&ActivityId> = db.iter().map(|a| &a.id).collect();
    let components: Option<HashSet<&ComponentId>> = bom.map(|b| b.iter().map(|e| &e.id).collect());
    for label in gold {
        if !activities.contains(&label.activity_id) {
            return Err(EvalError::UnknownActivity {
                component: label.component_id.clone(),
                activity: label.activity_id.clone(),
            });
        }
        if let Some(c) = &components {
            if !c.contains(&label.component_id) {
                return Err(EvalError::UnknownComponent(label.component_id.clone()));
            }
        }
    }
    Ok(())
}

/// Ratio as shown in the human table.
pub fn format_ratio(ratio: f64) -> String {
    format!("{ratio:.2}")
}

/// One row per evaluated mode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTable {
    pub rows: Vec<EvalResult>,
}

impl EvalTable {
    /// Fixed-width text table, ratios rounded to two decimals.
    pub fn render_text(&self) -> String {
        let ns: BTreeSet<usize> = self
            .rows
            .iter()
            .flat_map(|r| r.hits.iter().map(|h| h.n))
            .collect();
        let mut out = format!("{:<15}", "mode");
        for n in &ns {
            let _ = write!(out, " {:>8}", format!("Hits@{n}"));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<15}", row.mode.as_str());
            for n in &ns {
                let cell = row
                    .at(*n)
                    .map_or_else(|| "-".to_owned(), |h| format_ratio(h.ratio));
                let _ = write!(out, " {cell:>8}");
            }
            out.push('\n');
        }
        out
    }

    /// `{mode, n, numerator, denominator, ratio}` per line, full precision.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for h in &row.hits {
                let rec = serde_json::json!({
                    "mode": row.mode,
                    "n": h.n,
                    "numerator": h.numerator,
                    "denominator": h.denominator,
                    "ratio": h.ratio,
                });
                let _ = writeln!(out, "{rec}");
            }
        }
        out
    }
}

/// All three modes over the same inputs, sharing one index build.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub table: EvalTable,
    pub runs: Vec<RunReport>,
}

pub fn ablation_report<T: Scalar>(
    bom: &[BomEntry],
    pool: &[Datasheet],
    db: &[LcaActivity],
    gold: &[GoldLabel],
    config: &PipelineConfig,
    backends: Backends<'_, T>,
) -> Result<AblationReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::NoLabels);
    }
    check_gold_labels(gold, db, Some(bom))?;
    let index = build_index(db, backends.embedder)?;
    let pipeline = Pipeline::new(&index, pool, config, backends)?;
    let mut table = EvalTable::default();
    let mut runs = Vec::new();
    for mode in Mode::ALL {
        let report = pipeline.run_bom(bom, mode)?;
        for failure in report.failures() {
            log::warn!(
                "{mode}: component {} failed and is scored as a miss: {}",
                failure.component_id,
                failure.error.as_deref().unwrap_or("")
            );
        }
        table
            .rows
            .push(hits_at(mode, &report.rankings(), gold, &config.hits_at)?);
        runs.push(report);
    }
    Ok(AblationReport { table, runs })
}
