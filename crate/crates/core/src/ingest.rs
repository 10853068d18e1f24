//! Parsers and writers for BOM tables, LCA database dumps, gold labels and
//! datasheet directories.
//!
//! * BOM: delimited UTF-8 text with a header row. Comma or semicolon,
//!   detected from the header line unless forced.
//! * LCA database: JSON lines with `id`, `name`, `description`,
//!   `emission_factor`, `unit`.
//! * Gold labels: JSON lines with `component_id`, `activity_id`.
//! * Datasheets: a directory of `.txt` files.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActivityId, BomEntry, ComponentId, Datasheet, LcaActivity};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column `{0}` in header")]
    MissingHeader(&'static str),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Syntax { line: u64, message: String },
    #[error("line {line}: invalid quantity `{value}`")]
    Quantity { line: u64, value: String },
    #[error("duplicate activity id `{0}`")]
    DuplicateActivity(ActivityId),
    #[error("activity `{id}` has negative emission factor {value}")]
    NegativeEmission { id: ActivityId, value: f64 },
    #[error("line {line}: activity `{id}` is invalid: {message}")]
    InvalidActivity {
        line: u64,
        id: ActivityId,
        message: String,
    },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads a whole file as UTF-8, naming the path on failure.
pub fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| IngestError::io(path, e))
}

/// Field delimiter for BOM files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BomDelimiter {
    /// Pick `;` or `,` from whichever occurs more often in the header line.
    #[default]
    Auto,
    Comma,
    Semicolon,
}

impl BomDelimiter {
    fn resolve(self, header_line: &str) -> u8 {
        match self {
            BomDelimiter::Comma => b',',
            BomDelimiter::Semicolon => b';',
            BomDelimiter::Auto => {
                let semis = header_line.matches(';').count();
                let commas = header_line.matches(',').count();
                if semis > commas {
                    b';'
                } else {
                    b','
                }
            }
        }
    }
}

#[derive(Default)]
struct Columns {
    id: Option<usize>,
    name: Option<usize>,
    material: Option<usize>,
    supplier: Option<usize>,
    quantity: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, IngestError> {
        let mut cols = Columns::default();
        for (i, raw) in header.iter().enumerate() {
            let slot = match raw.trim().to_lowercase().as_str() {
                "id" => &mut cols.id,
                "name" | "component" | "component name" => &mut cols.name,
                "material" => &mut cols.material,
                "supplier" | "manufacturer" => &mut cols.supplier,
                "quantity" | "qty" => &mut cols.quantity,
                _ => continue,
            };
            slot.get_or_insert(i);
        }
        if cols.name.is_none() {
            return Err(IngestError::MissingHeader("name"));
        }
        if cols.material.is_none() {
            return Err(IngestError::MissingHeader("material"));
        }
        if cols.supplier.is_none() {
            return Err(IngestError::MissingHeader("supplier"));
        }
        Ok(cols)
    }
}

fn parse_quantity(cell: &str, delimiter: u8, line: u64) -> Result<f64, IngestError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(1.0);
    }
    // Semicolon exports usually come with decimal commas.
    let normalized = if delimiter == b';' {
        cell.replace(',', ".")
    } else {
        cell.to_owned()
    };
    normalized
        .parse::<f64>()
        .ok()
        .filter(|q| q.is_finite())
        .ok_or_else(|| IngestError::Quantity {
            line,
            value: cell.to_owned(),
        })
}

/// Parses a BOM table into entries in file order.
///
/// Rows without an `id` column get `row-<n>` ids, `n` counting data rows
/// from 1.
pub fn parse_bom(source: &str, delimiter: BomDelimiter) -> Result<Vec<BomEntry>, IngestError> {
    let source = source.strip_prefix('\u{feff}').unwrap_or(source);
    let header_line = source.lines().next().unwrap_or_default();
    let delimiter = delimiter.resolve(header_line);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(source.as_bytes());

    let header = reader.headers().map_err(|e| IngestError::Syntax {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = header.len();
    let cols = Columns::from_header(header)?;

    let mut entries = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::Syntax {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected {
            return Err(IngestError::Arity {
                line,
                expected,
                found: record.len(),
            });
        }
        let cell = |idx: Option<usize>| {
            idx.and_then(|i| record.get(i))
                .unwrap_or("")
                .trim()
                .to_owned()
        };
        let id = match cols.id.map(|i| record[i].trim()) {
            Some(id) if !id.is_empty() => id.to_owned(),
            _ => format!("row-{}", row + 1),
        };
        let quantity = match cols.quantity {
            Some(i) => parse_quantity(&record[i], delimiter, line)?,
            None => 1.0,
        };
        entries.push(BomEntry {
            id: ComponentId(id),
            name: cell(cols.name),
            material: cell(cols.material),
            supplier: cell(cols.supplier),
            quantity,
        });
    }
    Ok(entries)
}

/// Writes entries as a BOM table with all five columns.
pub fn write_bom(entries: &[BomEntry], delimiter: BomDelimiter) -> String {
    let delimiter = match delimiter {
        BomDelimiter::Semicolon => b';',
        BomDelimiter::Comma | BomDelimiter::Auto => b',',
    };
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["id", "name", "material", "supplier", "quantity"])
        .expect("writing to memory");
    for e in entries {
        w.write_record([
            e.id.as_str(),
            &e.name,
            &e.material,
            &e.supplier,
            &e.quantity.to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is UTF-8")
}

#[derive(Deserialize)]
struct LcaRecord {
    id: String,
    name: String,
    #[serde(default)]
    description: String,
    emission_factor: f64,
    #[serde(default)]
    unit: String,
}

fn json_lines(source: &str) -> impl Iterator<Item = (u64, &str)> {
    source
        .lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses a JSON-lines LCA database. Ids must be unique and emission
/// factors nonnegative.
pub fn parse_lca_db(source: &str) -> Result<Vec<LcaActivity>, IngestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, text) in json_lines(source) {
        let rec: LcaRecord = serde_json::from_str(text).map_err(|e| IngestError::Syntax {
            line,
            message: e.to_string(),
        })?;
        let activity = LcaActivity {
            id: ActivityId(rec.id),
            name: rec.name,
            description: rec.description,
            emission_factor: rec.emission_factor,
            unit: rec.unit,
        };
        if !seen.insert(activity.id.clone()) {
            return Err(IngestError::DuplicateActivity(activity.id));
        }
        if activity.emission_factor < 0.0 {
            return Err(IngestError::NegativeEmission {
                id: activity.id,
                value: activity.emission_factor,
            });
        }
        if let Some(err) = activity.validate().into_iter().next() {
            return Err(IngestError::InvalidActivity {
                line,
                id: activity.id,
                message: format!("{}: {}", err.field, err.message),
            });
        }
        out.push(activity);
    }
    Ok(out)
}

pub fn write_lca_db(activities: &[LcaActivity]) -> String {
    let mut out = String::new();
    for a in activities {
        let line = serde_json::json!({
            "id": a.id,
            "name": a.name,
            "description": a.description,
            "emission_factor": a.emission_factor,
            "unit": a.unit,
        });
        let _ = writeln!(out, "{line}");
    }
    out
}

/// Expert-assigned correct activity for a component, used for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldLabel {
    pub component_id: ComponentId,
    pub activity_id: ActivityId,
}

impl GoldLabel {
    pub fn new(component_id: impl Into<ComponentId>, activity_id: impl Into<ActivityId>) -> Self {
        Self {
            component_id: component_id.into(),
            activity_id: activity_id.into(),
        }
    }
}

/// Parses JSON-lines gold labels. Ids are resolved later, at evaluation.
pub fn parse_gold_labels(source: &str) -> Result<Vec<GoldLabel>, IngestError> {
    json_lines(source)
        .map(|(line, text)| {
            serde_json::from_str(text).map_err(|e| IngestError::Syntax {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_gold_labels(labels: &[GoldLabel]) -> String {
    labels
        .iter()
        .map(|l| serde_json::to_string(l).expect("gold label serializes") + "\n")
        .collect()
}

/// Loads every `.txt` file in `dir`, sorted by filename.
pub fn load_datasheets(dir: &Path) -> Result<Vec<Datasheet>, IngestError> {
    let mut sheets = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| IngestError::io(dir, e))? {
        let path = entry.map_err(|e| IngestError::io(dir, e))?.path();
        let is_txt = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
        if !is_txt || !path.is_file() {
            continue;
        }
        let Some(filename) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
            continue;
        };
        let body = read_text(&path)?;
        sheets.push(Datasheet::new(filename, body));
    }
    sheets.sort_by(|a, b| a.filename.cmp(&b.filename));
    Ok(sheets)
}

/// Writes datasheets into `dir` (created if needed), one file per sheet.
pub fn write_datasheets(dir: &Path, sheets: &[Datasheet]) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    for s in sheets {
        let path = dir.join(&s.filename);
        fs::write(&path, &s.body).map_err(|e| IngestError::io(&path, e))?;
    }
    Ok(())
}
