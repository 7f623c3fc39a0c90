//! Events: a predicate, its non-temporal core text and its temporal
//! arguments, taken from claims and evidence sentences.
//!
//! The primary source is precomputed semantic-role output (`events.jsonl`).
//! When no such file is supplied, a small pattern-based extractor produces
//! comparable events so the pipeline can run on raw text.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentStore, SentenceRef};
use crate::temporal::{self, ExprKind, TemporalArgument};
use crate::text;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: unknown sentence or claim reference {reference}")]
    UnknownSentenceRef { line: usize, reference: String },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventSource {
    Claim { claim_id: String },
    Evidence(SentenceRef),
}

impl EventSource {
    pub fn sentence(&self) -> Option<&SentenceRef> {
        match self {
            EventSource::Evidence(r) => Some(r),
            EventSource::Claim { .. } => None,
        }
    }

    pub fn claim_id(&self) -> Option<&str> {
        match self {
            EventSource::Claim { claim_id } => Some(claim_id),
            EventSource::Evidence(_) => None,
        }
    }

    fn id_prefix(&self) -> String {
        match self {
            EventSource::Claim { claim_id } => claim_id.clone(),
            EventSource::Evidence(r) => r.to_string(),
        }
    }
}

/// Which path produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    #[default]
    Srl,
    Fallback,
}

/// A temporal argument as it appeared in text. Unparseable phrases are kept
/// raw: they stay in the token text but carry no dates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalSlot {
    pub raw: String,
    pub parsed: Option<TemporalArgument>,
}

impl TemporalSlot {
    pub fn from_raw(raw: &str) -> Self {
        TemporalSlot {
            raw: raw.trim().to_string(),
            parsed: temporal::parse_time_expression(raw).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub source: EventSource,
    pub predicate: String,
    pub core_text: String,
    pub temporal: Vec<TemporalSlot>,
    pub extractor: Extractor,
}

impl Event {
    pub fn temporal_args(&self) -> impl Iterator<Item = &TemporalArgument> {
        self.temporal.iter().filter_map(|t| t.parsed.as_ref())
    }

    pub fn has_parsed_temporal(&self) -> bool {
        self.temporal_args().next().is_some()
    }

    pub fn kinds(&self) -> impl Iterator<Item = ExprKind> + '_ {
        self.temporal_args().map(|a| a.kind)
    }

    /// Core text followed by every temporal phrase.
    pub fn text(&self) -> String {
        let mut s = self.core_text.clone();
        for t in &self.temporal {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&t.raw);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventPair {
    pub claim_event: Event,
    pub evidence_event: Event,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordRef {
    Claim { claim_id: String },
    Sentence { doc_id: String, sent_id: usize },
}

impl RecordRef {
    pub fn source(&self) -> EventSource {
        match self {
            RecordRef::Claim { claim_id } => EventSource::Claim { claim_id: claim_id.clone() },
            RecordRef::Sentence { doc_id, sent_id } => {
                EventSource::Evidence(SentenceRef::new(doc_id.clone(), *sent_id))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlArgument {
    pub role: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlPredicate {
    pub predicate: String,
    #[serde(default)]
    pub args: Vec<SrlArgument>,
    #[serde(default)]
    pub temporal: Vec<String>,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlRecord {
    #[serde(rename = "ref")]
    pub reference: RecordRef,
    pub predicates: Vec<SrlPredicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor: Option<Extractor>,
}

fn is_temporal_role(role: &str) -> bool {
    matches!(role.to_uppercase().as_str(), "TMP" | "ARGM-TMP" | "AM-TMP" | "ARGM_TMP")
}

/// Builds the event for one predicate. Arguments keep reading order; without
/// an explicit `V` slot, `ARG0` precedes the predicate and the rest follow.
pub fn event_from_predicate(
    source: &EventSource,
    index: usize,
    pred: &SrlPredicate,
    extractor: Extractor,
) -> Event {
    let mut temporal: Vec<TemporalSlot> = Vec::new();
    let mut parts: Vec<&str> = Vec::new();
    let has_v = pred.args.iter().any(|a| a.role.eq_ignore_ascii_case("V"));
    if !has_v {
        parts.extend(
            pred.args
                .iter()
                .filter(|a| a.role.eq_ignore_ascii_case("ARG0"))
                .map(|a| a.text.as_str()),
        );
        parts.push(&pred.predicate);
    }
    for a in &pred.args {
        if is_temporal_role(&a.role) {
            temporal.push(TemporalSlot::from_raw(&a.text));
        } else if has_v || !a.role.eq_ignore_ascii_case("ARG0") {
            parts.push(&a.text);
        }
    }
    temporal.extend(pred.temporal.iter().map(|t| TemporalSlot::from_raw(t)));
    let core_text = parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    Event {
        event_id: format!("{}#{}", source.id_prefix(), index),
        source: source.clone(),
        predicate: pred.predicate.clone(),
        core_text,
        temporal,
        extractor,
    }
}

/// Events produced for claims and sentences, keyed by source.
#[derive(Debug, Clone, Default)]
pub struct EventSet {
    pub claims: BTreeMap<String, Vec<Event>>,
    pub sentences: BTreeMap<SentenceRef, Vec<Event>>,
}

impl EventSet {
    pub fn push(&mut self, event: Event) {
        match &event.source {
            EventSource::Claim { claim_id } => {
                self.claims.entry(claim_id.clone()).or_default().push(event)
            }
            EventSource::Evidence(r) => self.sentences.entry(r.clone()).or_default().push(event),
        }
    }

    pub fn len(&self) -> usize {
        self.claims.values().map(Vec::len).sum::<usize>()
            + self.sentences.values().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events of a claim; claims absent from the set fall back to pattern
    /// extraction over `text`.
    pub fn claim_events(&self, claim_id: &str, text: &str) -> Vec<Event> {
        match self.claims.get(claim_id) {
            Some(evs) => evs.clone(),
            None => extract_events_fallback(
                &EventSource::Claim { claim_id: claim_id.to_string() },
                text,
            ),
        }
    }

    pub fn sentence_events(&self, r: &SentenceRef, text: &str) -> Vec<Event> {
        match self.sentences.get(r) {
            Some(evs) => evs.clone(),
            None => extract_events_fallback(&EventSource::Evidence(r.clone()), text),
        }
    }
}

/// Reads semantic-role records. Every sentence reference must resolve in
/// `store`, every claim reference must be in `known_claims`.
pub fn ingest_srl(
    reader: impl BufRead,
    store: &DocumentStore,
    known_claims: &HashSet<String>,
) -> Result<Vec<Event>, EventError> {
    let mut out = Vec::new();
    read_srl(reader, store, known_claims, |_, evs| out.extend(evs))?;
    Ok(out)
}

impl EventSet {
    /// Like [`ingest_srl`], but a record with zero predicates still registers
    /// its source (with no events) so it is not re-extracted later.
    pub fn from_srl(
        reader: impl BufRead,
        store: &DocumentStore,
        known_claims: &HashSet<String>,
    ) -> Result<EventSet, EventError> {
        let mut set = EventSet::default();
        read_srl(reader, store, known_claims, |source, evs| {
            match source {
                EventSource::Claim { claim_id } => set.claims.entry(claim_id).or_default(),
                EventSource::Evidence(r) => set.sentences.entry(r).or_default(),
            }
            .extend(evs)
        })?;
        Ok(set)
    }
}

fn read_srl(
    reader: impl BufRead,
    store: &DocumentStore,
    known_claims: &HashSet<String>,
    mut sink: impl FnMut(EventSource, Vec<Event>),
) -> Result<(), EventError> {
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| EventError::MalformedRecord { line: i + 1, message: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(malformed)?;
        if value.get("header").is_some() {
            continue;
        }
        let rec: SrlRecord = serde_json::from_value(value).map_err(malformed)?;
        let source = rec.reference.source();
        let known = match &source {
            EventSource::Claim { claim_id } => known_claims.contains(claim_id),
            EventSource::Evidence(r) => store.sentence(r).is_some(),
        };
        if !known {
            return Err(EventError::UnknownSentenceRef {
                line: i + 1,
                reference: source.id_prefix(),
            });
        }
        let extractor = rec.extractor.unwrap_or(Extractor::Srl);
        let mut events = Vec::with_capacity(rec.predicates.len());
        for (j, pred) in rec.predicates.iter().enumerate() {
            if pred.predicate.trim().is_empty() && pred.args.is_empty() {
                return Err(EventError::MalformedRecord {
                    line: i + 1,
                    message: "predicate without text or arguments".into(),
                });
            }
            events.push(event_from_predicate(&source, j, pred, extractor));
        }
        sink(source, events);
    }
    Ok(())
}

/// Inverse of ingestion, used to persist extracted events.
pub fn to_srl_record(source: &EventSource, events: &[Event]) -> SrlRecord {
    let reference = match source {
        EventSource::Claim { claim_id } => RecordRef::Claim { claim_id: claim_id.clone() },
        EventSource::Evidence(r) => RecordRef::Sentence { doc_id: r.doc_id.clone(), sent_id: r.sent_id },
    };
    let predicates = events
        .iter()
        .map(|e| {
            let (before, after) = split_around_predicate(&e.core_text, &e.predicate);
            let mut args = Vec::new();
            if !before.is_empty() {
                args.push(SrlArgument { role: "ARG0".into(), text: before });
            }
            if !e.predicate.is_empty() {
                args.push(SrlArgument { role: "V".into(), text: e.predicate.clone() });
            }
            if !after.is_empty() {
                args.push(SrlArgument { role: "ARG1".into(), text: after });
            }
            SrlPredicate {
                predicate: e.predicate.clone(),
                args,
                temporal: e.temporal.iter().map(|t| t.raw.clone()).collect(),
            }
        })
        .collect();
    let extractor = events.first().map(|e| e.extractor).filter(|x| *x == Extractor::Fallback);
    SrlRecord { reference, predicates, extractor }
}

fn split_around_predicate(core: &str, predicate: &str) -> (String, String) {
    if predicate.is_empty() {
        return (String::new(), core.to_string());
    }
    let toks = text::word_tokens(core);
    match toks.iter().position(|t| t == predicate) {
        Some(i) => (text::join_tokens(&toks[..i]), text::join_tokens(&toks[i + 1..])),
        None => (String::new(), core.to_string()),
    }
}

const FINITE_VERBS: &[&str] = &[
    "is", "was", "were", "are", "am", "has", "had", "have", "did", "does", "do", "became",
    "becomes", "become", "began", "begins", "won", "wins", "made", "makes", "took", "takes",
    "wrote", "writes", "went", "goes", "came", "comes", "gave", "gives", "led", "leads", "held",
    "holds", "left", "met", "ran", "runs", "saw", "built", "bought", "sold", "found", "fought",
    "grew", "knew", "lost", "paid", "said", "sent", "spent", "stood", "taught", "told",
    "thought", "died", "dies", "lives", "will", "can", "could", "would", "should", "may",
    "might", "must", "got", "sang", "drew", "flew", "rose", "fell", "shot", "struck", "broke",
    "spoke", "chose", "drove", "ate", "wore", "won", "hit", "set", "put", "let", "cut", "read",
];

const DETERMINERS: &[&str] = &["the", "a", "an", "his", "her", "its", "their", "this", "that"];

fn verb_positions(toks: &[String]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        let l = t.to_lowercase();
        let after_det = i > 0 && DETERMINERS.contains(&toks[i - 1].to_lowercase().as_str());
        let looks_past = l.len() >= 4 && l.ends_with("ed") && l.chars().all(char::is_alphabetic);
        // "May 1844" is a month
        let month_may = l == "may" && toks.get(i + 1).is_some_and(|n| n.chars().all(|c| c.is_ascii_digit()));
        if month_may {
            continue;
        }
        if FINITE_VERBS.contains(&l.as_str()) || (looks_past && !after_det) {
            out.push(i);
        }
    }
    out
}

fn has_verb(toks: &[String]) -> bool {
    !verb_positions(toks).is_empty()
}

/// Clause boundaries: `;` always, `and` when both neighbouring segments
/// carry a finite verb.
fn split_clauses(toks: &[String]) -> Vec<Vec<String>> {
    let mut pieces: Vec<Vec<String>> = vec![Vec::new()];
    for t in toks {
        if t == ";" {
            pieces.push(Vec::new());
        } else {
            pieces.last_mut().unwrap().push(t.clone());
        }
    }
    let mut clauses = Vec::new();
    for piece in pieces {
        // candidate segments split at every "and"
        let mut segs: Vec<Vec<String>> = vec![Vec::new()];
        for t in piece {
            if t.eq_ignore_ascii_case("and") {
                segs.push(Vec::new());
            } else {
                segs.last_mut().unwrap().push(t);
            }
        }
        let mut current = segs[0].clone();
        for seg in segs.into_iter().skip(1) {
            if has_verb(&current) && has_verb(&seg) {
                clauses.push(std::mem::take(&mut current));
                current = seg;
            } else {
                current.push("and".to_string());
                current.extend(seg);
            }
        }
        clauses.push(current);
    }
    clauses
        .into_iter()
        .map(trim_punct)
        .filter(|c| !c.is_empty())
        .collect()
}

fn trim_punct(mut toks: Vec<String>) -> Vec<String> {
    while toks.last().is_some_and(|t| text::is_punct(t)) {
        toks.pop();
    }
    let lead = toks.iter().take_while(|t| text::is_punct(t)).count();
    toks.drain(..lead);
    toks
}

const TRIGGERS: &[&str] = &["around", "about", "approximately", "circa", "roughly", "late", "early", "mid"];

/// Finds temporal phrases in a clause; returns the slots and the remaining
/// tokens.
fn split_temporal(toks: &[String]) -> (Vec<TemporalSlot>, Vec<String>) {
    let mut slots = Vec::new();
    let mut rest = Vec::new();
    let mut i = 0;
    'outer: while i < toks.len() {
        let l = toks[i].to_lowercase();
        if temporal::Predicate::from_word(&l).is_some() || TRIGGERS.contains(&l.as_str()) {
            let max = (i + 9).min(toks.len());
            for j in (i + 2..=max).rev() {
                if text::is_punct(&toks[j - 1]) && toks[j - 1] != "." {
                    continue;
                }
                if toks[j - 1] == "." {
                    continue;
                }
                let phrase = text::join_tokens(&toks[i..j]);
                if let Ok(arg) = temporal::parse_time_expression(&phrase) {
                    slots.push(TemporalSlot { raw: phrase, parsed: Some(arg) });
                    i = j;
                    continue 'outer;
                }
            }
        }
        rest.push(toks[i].clone());
        i += 1;
    }
    (slots, rest)
}

/// Pattern-based extraction; always yields at least one event.
pub fn extract_events_fallback(source: &EventSource, sentence: &str) -> Vec<Event> {
    let toks = text::word_tokens(sentence);
    let mut events = Vec::new();
    for clause in split_clauses(&toks) {
        let (temporal, rest) = split_temporal(&clause);
        let rest = trim_punct(rest);
        let predicate = verb_positions(&rest)
            .first()
            .map(|&i| rest[i].clone())
            .unwrap_or_default();
        let core_text = if rest.is_empty() {
            text::join_tokens(&clause)
        } else {
            text::join_tokens(&rest)
        };
        events.push(Event {
            event_id: format!("{}#{}", source.id_prefix(), events.len()),
            source: source.clone(),
            predicate,
            core_text,
            temporal,
            extractor: Extractor::Fallback,
        });
    }
    if events.is_empty() {
        events.push(Event {
            event_id: format!("{}#0", source.id_prefix()),
            source: source.clone(),
            predicate: String::new(),
            core_text: sentence.trim().to_string(),
            temporal: Vec::new(),
            extractor: Extractor::Fallback,
        });
    }
    events
}

/// Cross product claim × evidence, grouped by claim event.
pub fn pair_events(
    claim_events: &[Event],
    evidence_events: &[Event],
    titles: &HashMap<SentenceRef, String>,
) -> Vec<EventPair> {
    let mut pairs = Vec::with_capacity(claim_events.len() * evidence_events.len());
    for c in claim_events {
        for e in evidence_events {
            let title = e
                .source
                .sentence()
                .and_then(|r| titles.get(r))
                .cloned()
                .unwrap_or_default();
            pairs.push(EventPair {
                claim_event: c.clone(),
                evidence_event: e.clone(),
                title,
            });
        }
    }
    pairs
}
