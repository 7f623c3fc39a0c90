//! Document store with Okapi BM25 retrieval over sentences and over
//! title-boosted pseudo-documents.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_TITLE_BOOST: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("the document store is empty")]
    EmptyStore,
    #[error("unknown sentence reference {0}")]
    UnknownRef(SentenceRef),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub doc_id: String,
    pub sent_id: usize,
}

impl SentenceRef {
    pub fn new(doc_id: impl Into<String>, sent_id: usize) -> Self {
        SentenceRef { doc_id: doc_id.into(), sent_id }
    }
}

impl std::fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.doc_id, self.sent_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: BM25_K1, b: BM25_B }
    }
}

/// Inverted index over a fixed list of units (sentences or pseudo-documents).
/// Unit ids are positions in that list, so postings are sorted by unit.
#[derive(Debug, Clone, Default)]
pub struct LexicalIndex {
    postings: HashMap<String, Vec<(usize, u32)>>,
    lengths: Vec<u32>,
    avg_len: f64,
}

impl LexicalIndex {
    pub fn build(units: impl IntoIterator<Item = Vec<String>>) -> Self {
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut lengths = Vec::new();
        for (unit, terms) in units.into_iter().enumerate() {
            lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &terms {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push((unit, count));
            }
        }
        let total: u64 = lengths.iter().map(|&l| l as u64).sum();
        let avg_len = if lengths.is_empty() { 0.0 } else { total as f64 / lengths.len() as f64 };
        LexicalIndex { postings, lengths, avg_len }
    }

    pub fn unit_count(&self) -> usize {
        self.lengths.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn unit_len(&self, unit: usize) -> u32 {
        self.lengths[unit]
    }

    pub fn postings(&self, term: &str) -> &[(usize, u32)] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Smoothed idf, `ln(1 + (N - n + 0.5) / (n + 0.5))`; always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.postings(term).len() as f64;
        let total = self.unit_count() as f64;
        (1.0 + (total - n + 0.5) / (n + 0.5)).ln()
    }

    /// Scores every unit sharing a term with the query. Distinct query terms
    /// are accumulated in sorted order.
    pub fn score(&self, query: &str, params: Bm25Params) -> BTreeMap<usize, f64> {
        let mut terms = text::index_terms(query);
        terms.sort();
        terms.dedup();
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for term in &terms {
            let idf = self.idf(term);
            for &(unit, tf) in self.postings(term) {
                let tf = tf as f64;
                let norm = 1.0 - params.b + params.b * self.lengths[unit] as f64 / self.avg_len;
                let s = idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
                *scores.entry(unit).or_default() += s;
            }
        }
        scores
    }
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    sentence_refs: Vec<SentenceRef>,
    sentence_index: LexicalIndex,
    doc_index: LexicalIndex,
    params: Bm25Params,
    title_boost: usize,
}

impl DocumentStore {
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        Self::with_options(docs, Bm25Params::default(), DEFAULT_TITLE_BOOST)
    }

    pub fn with_options(
        mut docs: Vec<Document>,
        params: Bm25Params,
        title_boost: usize,
    ) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::new();
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateDocId(d.doc_id.clone()));
            }
        }
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let by_id = docs.iter().enumerate().map(|(i, d)| (d.doc_id.clone(), i)).collect();
        let mut sentence_refs = Vec::new();
        let mut sentence_terms = Vec::new();
        for d in &docs {
            for (j, s) in d.sentences.iter().enumerate() {
                sentence_refs.push(SentenceRef::new(d.doc_id.clone(), j));
                sentence_terms.push(text::index_terms(s));
            }
        }
        let doc_terms = docs.iter().map(|d| {
            let title = text::index_terms(&d.title);
            let mut terms = Vec::new();
            for _ in 0..title_boost {
                terms.extend(title.iter().cloned());
            }
            for s in &d.sentences {
                terms.extend(text::index_terms(s));
            }
            terms
        });
        let doc_index = LexicalIndex::build(doc_terms);
        Ok(DocumentStore {
            sentence_index: LexicalIndex::build(sentence_terms),
            doc_index,
            docs,
            by_id,
            sentence_refs,
            params,
            title_boost,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence_refs.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn title_boost(&self) -> usize {
        self.title_boost
    }

    /// Documents sorted by `doc_id`.
    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn sentence(&self, r: &SentenceRef) -> Option<&str> {
        self.document(&r.doc_id)
            .and_then(|d| d.sentences.get(r.sent_id))
            .map(String::as_str)
    }

    pub fn title(&self, r: &SentenceRef) -> Option<&str> {
        self.document(&r.doc_id).map(|d| d.title.as_str())
    }

    pub fn resolve(&self, r: &SentenceRef) -> Result<&str, CorpusError> {
        self.sentence(r).ok_or_else(|| CorpusError::UnknownRef(r.clone()))
    }

    /// All sentence references in (doc_id, sent_id) order.
    pub fn sentence_refs(&self) -> &[SentenceRef] {
        &self.sentence_refs
    }

    pub fn sentence_index(&self) -> &LexicalIndex {
        &self.sentence_index
    }

    /// Okapi BM25 over sentences: descending score, ties by reference,
    /// zero scores dropped.
    pub fn bm25_rank(&self, query: &str, limit: usize) -> Result<Vec<(SentenceRef, f64)>, CorpusError> {
        if self.is_empty() {
            return Err(CorpusError::EmptyStore);
        }
        let scores = self.sentence_index.score(query, self.params);
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        // unit order equals reference order, so a stable sort keeps ties by ref
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ranked
            .into_iter()
            .take(limit)
            .map(|(u, s)| (self.sentence_refs[u].clone(), s))
            .collect())
    }

    /// Candidate documents for a claim, standing in for an entity linker.
    pub fn candidate_documents(&self, claim_text: &str, limit: usize) -> Result<Vec<String>, CorpusError> {
        if self.is_empty() {
            return Err(CorpusError::EmptyStore);
        }
        let scores = self.doc_index.score(claim_text, self.params);
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ranked
            .into_iter()
            .take(limit)
            .map(|(u, _)| self.docs[u].doc_id.clone())
            .collect())
    }
}

/// Reads `docs.jsonl`: one `{"doc_id", "title", "sentences"}` object per line.
/// Blank lines and header records are skipped.
pub fn read_documents(reader: impl BufRead) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| CorpusError::MalformedRecord { line: i + 1, message: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(malformed)?;
        if value.get("header").is_some() {
            continue;
        }
        let doc: Document = serde_json::from_value(value).map_err(malformed)?;
        if doc.doc_id.is_empty() {
            return Err(CorpusError::MalformedRecord { line: i + 1, message: "empty doc_id".into() });
        }
        if doc.sentences.iter().any(|s| s.trim().is_empty()) {
            return Err(CorpusError::MalformedRecord {
                line: i + 1,
                message: "empty sentence".into(),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn ingest_documents(reader: impl BufRead) -> Result<DocumentStore, CorpusError> {
    DocumentStore::new(read_documents(reader)?)
}
