//! Picks the datasheet, if any, that belongs to a BOM entry.

use crate::embedding::{cosine, EmbedError, Embedding, EmbeddingBackend};
use crate::model::{BomEntry, Datasheet};
use crate::scalar::Scalar;

/// Name, supplier and material, one per line.
pub fn datasheet_query_text(entry: &BomEntry) -> String {
    format!("{}\n{}\n{}", entry.name, entry.supplier, entry.material)
}

/// Filename, newline, body.
pub fn datasheet_doc_text(sheet: &Datasheet) -> String {
    format!("{}\n{}", sheet.filename, sheet.body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasheetMatch<'a> {
    pub sheet: &'a Datasheet,
    pub score: f64,
}

/// A datasheet pool with its document embeddings computed once.
pub struct EmbeddedPool<'a, T> {
    sheets: &'a [Datasheet],
    embeddings: Vec<Embedding<T>>,
}

impl<'a, T: Scalar> EmbeddedPool<'a, T> {
    pub fn new(
        sheets: &'a [Datasheet],
        backend: &dyn EmbeddingBackend<T>,
    ) -> Result<Self, EmbedError> {
        let embeddings = if sheets.is_empty() {
            Vec::new()
        } else {
            let texts: Vec<String> = sheets.iter().map(datasheet_doc_text).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            backend.embed(&refs)?
        };
        Ok(Self { sheets, embeddings })
    }

    pub fn is_empty(&self) -> bool {
        self.sheets.is_empty()
    }

    pub fn sheets(&self) -> &'a [Datasheet] {
        self.sheets
    }

    /// Best-scoring sheet when its cosine with the entry is `>= threshold`.
    /// Equal scores go to the smaller filename.
    pub fn select(
        &self,
        entry: &BomEntry,
        backend: &dyn EmbeddingBackend<T>,
        threshold: f64,
    ) -> Result<Option<DatasheetMatch<'a>>, EmbedError> {
        if self.sheets.is_empty() {
            return Ok(None);
        }
        let query = backend.embed_one(&datasheet_query_text(entry))?;
        let mut best: Option<DatasheetMatch<'a>> = None;
        for (sheet, emb) in self.sheets.iter().zip(&self.embeddings) {
            let score = cosine(&query, emb)?.to_f64_lossless();
            let better = match &best {
                None => true,
                Some(b) => {
                    score > b.score || (score == b.score && sheet.filename < b.sheet.filename)
                }
            };
            if better {
                best = Some(DatasheetMatch { sheet, score });
            }
        }
        Ok(best.filter(|m| m.score >= threshold))
    }
}

/// One-shot selection; embeds the whole pool on every call. Use
/// [`EmbeddedPool`] when matching many entries against the same pool.
pub fn select_datasheet<'a, T: Scalar>(
    entry: &BomEntry,
    pool: &'a [Datasheet],
    backend: &dyn EmbeddingBackend<T>,
    threshold: f64,
) -> Result<Option<DatasheetMatch<'a>>, EmbedError> {
    EmbeddedPool::new(pool, backend)?.select(entry, backend, threshold)
}
