//! Per-event verdicts from an LLM (or the offline stub) and claim-level
//! aggregation.

use std::collections::HashSet;
use std::fmt;
use std::time::Duration as StdDuration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::{extract_events_fallback, Event, EventSource};
use crate::relevance::ScoredSentence;
use crate::temporal::{self, DayInterval, ExprKind, TimeSet};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "SUPPORTS")]
    Supports,
    #[serde(rename = "REFUTES")]
    Refutes,
    #[serde(rename = "NOT ENOUGH INFO", alias = "NEI")]
    Nei,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Supports, Verdict::Refutes, Verdict::Nei];

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Supports => "SUPPORTS",
            Verdict::Refutes => "REFUTES",
            Verdict::Nei => "NOT ENOUGH INFO",
        }
    }

    pub fn from_label(s: &str) -> Option<Verdict> {
        match s.trim().to_uppercase().as_str() {
            "SUPPORTS" | "SUPPORT" => Some(Verdict::Supports),
            "REFUTES" | "REFUTE" => Some(Verdict::Refutes),
            "NOT ENOUGH INFO" | "NEI" => Some(Verdict::Nei),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum VerdictError {
    #[error("no evidence to build a prompt from")]
    EmptyEvidence,
    #[error("could not read a label from response: {0:?}")]
    UnparseableResponse(String),
    #[error("LLM request failed: {0}")]
    Transport(String),
}

pub const INSTRUCTION: &str = "You are provided with a claim and evidence sentences. Perform text classification to determine whether the evidence support, refute, or do not enough information to verify the claim. The judgment based on the general aspect and the temporal aspect of the claim. Only base your decision on the information explicitly stated in the evidence. Please return the following information in JSON format: PREDICTED_LABEL: Either 'SUPPORTS', 'REFUTES', or 'NOT ENOUGH INFO'. If the evidences does not address all key aspects of the claim or does not provide any information related to the claim then the returned label should be 'NOT ENOUGH INFO'. If the evidences contradicts general or temporal aspects of the claim, the returned label should be 'REFUTES'. If the evidences support all aspects of the claim, the returned label should be 'SUPPORTS'.";

pub fn build_prompt(claim_event: &Event, evidence: &[ScoredSentence]) -> Result<String, VerdictError> {
    if evidence.is_empty() {
        return Err(VerdictError::EmptyEvidence);
    }
    let mut p = String::from(INSTRUCTION);
    p.push_str("\n\nClaim: ");
    p.push_str(&claim_event.text());
    p.push_str("\nEvidence:\n");
    for (i, s) in evidence.iter().enumerate() {
        p.push_str(&format!("{}. {}\n", i + 1, s.text));
    }
    Ok(p)
}

fn label_in_json(v: &serde_json::Value) -> Option<Verdict> {
    match v {
        serde_json::Value::Object(map) => map
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("PREDICTED_LABEL"))
            .and_then(|(_, v)| v.as_str())
            .and_then(Verdict::from_label),
        _ => None,
    }
}

fn json_object(raw: &str) -> Option<serde_json::Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    serde_json::from_str(trimmed.get(start..=end)?).ok()
}

/// Reads `PREDICTED_LABEL` from a JSON reply, falling back to a
/// whole-word scan that must find exactly one distinct label.
pub fn parse_response(raw: &str) -> Result<Verdict, VerdictError> {
    if let Some(v) = json_object(raw).as_ref().and_then(label_in_json) {
        return Ok(v);
    }
    let upper = raw.to_uppercase();
    let words: Vec<String> = text::index_terms(&upper).into_iter().map(|w| w.to_uppercase()).collect();
    let mut found = HashSet::new();
    for (i, w) in words.iter().enumerate() {
        match w.as_str() {
            "SUPPORTS" => {
                found.insert(Verdict::Supports);
            }
            "REFUTES" => {
                found.insert(Verdict::Refutes);
            }
            "NOT" if words.get(i + 1).map(String::as_str) == Some("ENOUGH")
                && words.get(i + 2).map(String::as_str) == Some("INFO") =>
            {
                found.insert(Verdict::Nei);
            }
            _ => {}
        }
    }
    if found.len() == 1 {
        let v = found.into_iter().next().unwrap();
        log::warn!("label read by fallback scan: {v}");
        return Ok(v);
    }
    Err(VerdictError::UnparseableResponse(raw.to_string()))
}

/// Any REFUTES wins; all SUPPORTS gives SUPPORTS; anything else, including
/// no verdicts at all, is NOT ENOUGH INFO.
pub fn aggregate(verdicts: &[Verdict]) -> Verdict {
    if verdicts.contains(&Verdict::Refutes) {
        Verdict::Refutes
    } else if !verdicts.is_empty() && verdicts.iter().all(|v| *v == Verdict::Supports) {
        Verdict::Supports
    } else {
        Verdict::Nei
    }
}

pub fn digest(raw: &str) -> String {
    hex::encode(Sha256::digest(raw.as_bytes()))
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, VerdictError>;
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

pub const API_KEY_ENV: &str = "TEMPVER_LLM_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpLlmClient {
    endpoint: String,
    api_key: Option<String>,
    max_tokens: u32,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpLlmClient {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: StdDuration, retries: u32) -> Result<Self, VerdictError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| VerdictError::Transport(e.to_string()))?;
        Ok(HttpLlmClient { endpoint: endpoint.to_string(), api_key, max_tokens: 64, retries, client })
    }

    pub fn from_env(endpoint: &str, timeout: StdDuration, retries: u32) -> Result<Self, VerdictError> {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), timeout, retries)
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    fn call(&self, prompt: &str) -> Result<CompletionResponse, reqwest::Error> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&CompletionRequest { prompt, max_tokens: self.max_tokens });
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        req.send()?.error_for_status()?.json()
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &str) -> Result<String, VerdictError> {
        let mut attempt = 0;
        loop {
            match self.call(prompt) {
                Ok(r) => return Ok(r.text),
                Err(e) if attempt < self.retries && !e.is_decode() && !e.is_status() => {
                    attempt += 1;
                    log::warn!("LLM request failed ({e}), retry {attempt}/{}", self.retries);
                }
                Err(e) => return Err(VerdictError::Transport(e.to_string())),
            }
        }
    }
}

const TERMINAL: &[&str] = &["died", "dissolved", "closed", "demolished", "disbanded", "abolished"];
const ORIGIN: &[&str] = &["born", "founded", "established", "formed", "created"];
pub const OVERLAP_THRESHOLD: f64 = 0.6;

fn proper_words(text: &str) -> HashSet<String> {
    text::word_tokens(text)
        .into_iter()
        .filter(|t| t.chars().next().is_some_and(char::is_uppercase))
        .map(|t| t.to_lowercase())
        .filter(|t| !text::is_stopword(t))
        .collect()
}

fn overlap(core: &[String], sentence: &str) -> f64 {
    if core.is_empty() {
        return 0.0;
    }
    let words: HashSet<String> = text::content_words(sentence).into_iter().collect();
    core.iter().filter(|w| words.contains(*w)).count() as f64 / core.len() as f64
}

fn date_conflict(claim_sets: &[TimeSet], sentence: &str) -> bool {
    let dates: Vec<DayInterval> = temporal::extract_dates(sentence).iter().map(|p| p.interval()).collect();
    !dates.is_empty() && claim_sets.iter().any(|s| dates.iter().all(|d| !s.intersects(d)))
}

fn duration_conflict(claim: &Event, sentence: &str) -> bool {
    let src = EventSource::Claim { claim_id: String::new() };
    let sent_durations: Vec<temporal::Duration> = extract_events_fallback(&src, sentence)
        .iter()
        .flat_map(|e| e.temporal_args().filter_map(|a| a.duration).collect::<Vec<_>>())
        .collect();
    claim.temporal_args().filter_map(|a| a.duration).any(|cd| {
        let same_unit: Vec<_> = sent_durations.iter().filter(|d| d.unit == cd.unit).collect();
        !same_unit.is_empty() && same_unit.iter().all(|d| d.value != cd.value)
    })
}

/// Lifespan bounds: a terminal event caps, an origin event floors, the time
/// of anything else said about the same named entity.
fn lifespan_conflict(claim: &Event, claim_sets: &[TimeSet], sentence: &str) -> bool {
    let terms = text::index_terms(sentence);
    let terminal = terms.iter().any(|t| TERMINAL.contains(&t.as_str()));
    let origin = terms.iter().any(|t| ORIGIN.contains(&t.as_str()));
    if !terminal && !origin {
        return false;
    }
    let claim_names = proper_words(&claim.core_text);
    if proper_words(sentence).is_disjoint(&claim_names) {
        return false;
    }
    let claim_terms = text::index_terms(&claim.core_text);
    if claim_terms.iter().any(|t| TERMINAL.contains(&t.as_str()) || ORIGIN.contains(&t.as_str())) {
        return false;
    }
    let dates = temporal::extract_dates(sentence);
    let (Some(first), Some(last)) = (dates.first(), dates.last()) else {
        return false;
    };
    claim_sets.iter().any(|s| {
        (terminal && s.lo.is_some_and(|lo| lo > last.interval().end))
            || (origin && s.hi.is_some_and(|hi| hi < first.interval().start))
    })
}

/// Deterministic offline verifier. A sentence conflicts with the claim
/// event when it overlaps lexically but its dates fall outside the claim's
/// asserted time, it states a different duration in the same unit, or it
/// bounds the lifespan of a named entity of the claim in a way the claim's
/// time violates. Any conflict refutes; otherwise sufficient lexical overlap
/// supports.
pub fn stub_verify(claim_event: &Event, evidence: &[ScoredSentence]) -> Verdict {
    let core = text::content_words(&claim_event.core_text);
    let sets: Vec<TimeSet> = claim_event.temporal_args().filter_map(|a| a.asserted_set()).collect();
    let has_ordering = claim_event.kinds().any(|k| k == ExprKind::Ordering);
    let mut supported = false;
    for s in evidence {
        let related = overlap(&core, &s.text) >= OVERLAP_THRESHOLD;
        if related && ((has_ordering && date_conflict(&sets, &s.text)) || duration_conflict(claim_event, &s.text)) {
            return Verdict::Refutes;
        }
        if lifespan_conflict(claim_event, &sets, &s.text) {
            return Verdict::Refutes;
        }
        supported |= related;
    }
    if supported {
        Verdict::Supports
    } else {
        Verdict::Nei
    }
}

/// Raw reply the stub stands in for, fed through [`parse_response`] like a
/// real one.
pub fn stub_response(claim_event: &Event, evidence: &[ScoredSentence]) -> String {
    serde_json::json!({ "PREDICTED_LABEL": stub_verify(claim_event, evidence).as_str() }).to_string()
}

/// Source of per-event verdicts.
pub enum Verifier<'a> {
    Offline,
    Llm(&'a dyn LlmClient),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventVerdict {
    pub label: Verdict,
    pub raw: String,
}

impl Verifier<'_> {
    /// Events with no evidence are NOT ENOUGH INFO without a model call.
    pub fn verify(&self, claim_event: &Event, evidence: &[ScoredSentence]) -> Result<EventVerdict, VerdictError> {
        if evidence.is_empty() {
            return Ok(EventVerdict { label: Verdict::Nei, raw: String::new() });
        }
        let raw = match self {
            Verifier::Offline => stub_response(claim_event, evidence),
            Verifier::Llm(client) => client.complete(&build_prompt(claim_event, evidence)?)?,
        };
        Ok(EventVerdict { label: parse_response(&raw)?, raw })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentenceRef;

    fn claim(text: &str) -> Event {
        extract_events_fallback(&EventSource::Claim { claim_id: "c".into() }, text).remove(0)
    }

    fn ev(texts: &[&str]) -> Vec<ScoredSentence> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| ScoredSentence { reference: SentenceRef::new("d", i), text: t.to_string(), score: 0.0 })
            .collect()
    }

    #[test]
    fn prompt_contains_template_and_numbered_lines() {
        let c = claim("Condell retired in 1623.");
        let p = build_prompt(&c, &ev(&["a.", "b.", "c."])).unwrap();
        assert!(p.contains("Please return the following information in JSON format: PREDICTED_LABEL"));
        assert!(p.starts_with("You are provided with a claim and evidence sentences."));
        assert!(p.contains("\n1. a.\n2. b.\n3. c.\n"));
        assert!(p.contains("Claim: Condell retired in 1623"));
        assert_eq!(p, build_prompt(&c, &ev(&["a.", "b.", "c."])).unwrap());
        assert!(matches!(build_prompt(&c, &[]), Err(VerdictError::EmptyEvidence)));
    }

    #[test]
    fn parses_json_and_fallback() {
        assert_eq!(parse_response(r#"{"PREDICTED_LABEL": "SUPPORTS"}"#).unwrap(), Verdict::Supports);
        assert_eq!(parse_response(r#"{"PREDICTED_LABEL": "NOT ENOUGH INFO"}"#).unwrap(), Verdict::Nei);
        assert_eq!(parse_response("Sure! ```{\"PREDICTED_LABEL\": \"REFUTES\"}```").unwrap(), Verdict::Refutes);
        assert_eq!(parse_response("The answer is REFUTES.").unwrap(), Verdict::Refutes);
        assert_eq!(parse_response("not enough info here").unwrap(), Verdict::Nei);
        assert!(matches!(parse_response("maybe"), Err(VerdictError::UnparseableResponse(r)) if r == "maybe"));
        assert!(parse_response("SUPPORTS or REFUTES").is_err());
        assert!(parse_response("REFUTESX").is_err());
    }

    #[test]
    fn aggregation_rules() {
        use Verdict::*;
        assert_eq!(aggregate(&[Supports, Refutes]), Refutes);
        assert_eq!(aggregate(&[Supports, Supports]), Supports);
        assert_eq!(aggregate(&[Supports, Nei]), Nei);
        assert_eq!(aggregate(&[]), Nei);
    }

    #[test]
    fn stub_cases() {
        let c = claim("Condell retired in 1623.");
        assert_eq!(stub_verify(&c, &ev(&["Condell retired from the stage in 1623."])), Verdict::Supports);
        assert_eq!(stub_verify(&c, &ev(&["Condell retired in 1619."])), Verdict::Refutes);
        assert_eq!(stub_verify(&c, &ev(&["The harbour froze over."])), Verdict::Nei);
        let t = claim("Osamu Tezuka practiced drawing as a young child in 2000.");
        assert_eq!(stub_verify(&t, &ev(&["Tezuka died of stomach cancer in 1989."])), Verdict::Refutes);
        let d = claim("The band toured for 5 years.");
        assert_eq!(stub_verify(&d, &ev(&["The band toured for 3 years."])), Verdict::Refutes);
        assert_eq!(stub_verify(&d, &ev(&["The band toured for 5 years."])), Verdict::Supports);
    }

    #[test]
    fn verifier_offline_round_trips_json() {
        let c = claim("Condell retired in 1623.");
        let v = Verifier::Offline.verify(&c, &ev(&["Condell retired in 1623."])).unwrap();
        assert_eq!(v.label, Verdict::Supports);
        assert_eq!(v.raw, r#"{"PREDICTED_LABEL":"SUPPORTS"}"#);
        assert_eq!(Verifier::Offline.verify(&c, &[]).unwrap().label, Verdict::Nei);
        assert_eq!(digest("").len(), 64);
    }
}
