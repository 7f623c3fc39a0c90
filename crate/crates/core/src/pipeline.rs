//! Stage drivers shared by the command line and the experiments: scoring,
//! verification, evaluation and training-set preparation, plus the JSONL
//! record formats they exchange.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::ClaimRecord;
use crate::corpus::{CorpusError, DocumentStore, SentenceRef};
use crate::encoder::EmbeddingProvider;
use crate::evalkit::{self, ClaimMeta, EvalError, Prediction, Report};
use crate::events::{pair_events, Event, EventSet};
use crate::model::{ModelError, ModelParams};
use crate::relevance::{self, ScoredSentence};
use crate::training::{self, PreparedTriplet, TrainError, TrainingClaim};
use crate::verdict::{self, Verdict, VerdictError, Verifier};

/// Documents whose sentences form the candidate pool of a claim.
pub const CANDIDATE_DOCS: usize = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown claim {0}")]
    UnknownClaim(String),
    #[error("unknown claim event {0}")]
    UnknownEvent(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads JSON lines, skipping blank lines and `{"header": ...}` records.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| PipelineError::Malformed { line: i + 1, message: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(malformed)?;
        if value.get("header").is_some() {
            continue;
        }
        out.push(serde_json::from_value(value).map_err(malformed)?);
    }
    Ok(out)
}

/// Writes an optional header record followed by one line per row.
pub fn write_jsonl<T: Serialize>(
    mut w: impl Write,
    header: Option<&serde_json::Value>,
    rows: &[T],
) -> Result<(), PipelineError> {
    if let Some(h) = header {
        writeln!(w, "{}", serde_json::json!({ "header": h }))?;
    }
    for r in rows {
        writeln!(w, "{}", serde_json::to_string(r).expect("row serializes"))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRef {
    pub doc_id: String,
    pub sent_id: usize,
    pub score: f64,
}

impl RankedRef {
    pub fn reference(&self) -> SentenceRef {
        SentenceRef::new(self.doc_id.clone(), self.sent_id)
    }
}

/// One line of `scored.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub claim_id: String,
    pub claim_event_id: String,
    pub ranked: Vec<RankedRef>,
}

/// One line of `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub claim_id: String,
    pub event_id: String,
    pub label: Verdict,
    pub raw_response_digest: String,
}

/// Everything scoring needs besides the claims.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub store: &'a DocumentStore,
    pub events: &'a EventSet,
    pub provider: &'a dyn EmbeddingProvider,
    pub model: &'a ModelParams,
}

pub fn candidate_sentences(store: &DocumentStore, claim_text: &str, n_docs: usize) -> Result<Vec<SentenceRef>, PipelineError> {
    let mut out = Vec::new();
    for doc_id in store.candidate_documents(claim_text, n_docs)? {
        let doc = store.document(&doc_id).expect("candidate document exists");
        out.extend((0..doc.sentences.len()).map(|s| SentenceRef::new(doc_id.clone(), s)));
    }
    Ok(out)
}

/// Full ranking of the candidate pool for every event of a claim.
pub fn rank_claim(ctx: Context<'_>, claim: &ClaimRecord, n_docs: usize) -> Result<Vec<(Event, Vec<ScoredSentence>)>, PipelineError> {
    let claim_events = ctx.events.claim_events(&claim.claim_id, &claim.text);
    let candidates = candidate_sentences(ctx.store, &claim.text, n_docs)?;
    let mut titles = HashMap::new();
    let mut evidence = Vec::new();
    for r in &candidates {
        let text = ctx.store.sentence(r).expect("candidate resolves");
        titles.insert(r.clone(), ctx.store.title(r).unwrap_or_default().to_string());
        evidence.extend(ctx.events.sentence_events(r, text));
    }
    let text_of = |r: &SentenceRef| ctx.store.sentence(r).unwrap_or_default().to_string();
    claim_events
        .into_iter()
        .map(|ce| {
            let pairs = pair_events(std::slice::from_ref(&ce), &evidence, &titles);
            let ranked = if pairs.is_empty() { Vec::new() } else { ctx.model.score_pairs(pairs, ctx.provider, text_of)? };
            Ok((ce, ranked))
        })
        .collect()
}

/// Top-`k` evidence per claim event, in claim order.
pub fn score_claims(ctx: Context<'_>, claims: &[ClaimRecord], k: usize, n_docs: usize) -> Result<Vec<ScoredEvent>, PipelineError> {
    let per: Vec<Result<Vec<ScoredEvent>, PipelineError>> = claims
        .par_iter()
        .map(|claim| {
            Ok(rank_claim(ctx, claim, n_docs)?
                .into_iter()
                .map(|(ce, ranked)| ScoredEvent {
                    claim_id: claim.claim_id.clone(),
                    claim_event_id: ce.event_id,
                    ranked: ranked
                        .into_iter()
                        .take(k)
                        .map(|s| RankedRef { doc_id: s.reference.doc_id, sent_id: s.reference.sent_id, score: s.score })
                        .collect(),
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for p in per {
        out.extend(p?);
    }
    Ok(out)
}

/// Fraction of claim events whose top-`k` holds a gold sentence.
pub fn gold_hit_rate(ctx: Context<'_>, claims: &[ClaimRecord], k: usize, n_docs: usize) -> Result<f64, PipelineError> {
    let scored = score_claims(ctx, claims, k, n_docs)?;
    let gold: HashMap<&str, Vec<SentenceRef>> =
        claims.iter().map(|c| (c.claim_id.as_str(), c.gold_evidence.all_refs())).collect();
    if scored.is_empty() {
        return Ok(0.0);
    }
    let hits = scored
        .iter()
        .filter(|s| s.ranked.iter().any(|r| gold[s.claim_id.as_str()].contains(&r.reference())))
        .count();
    Ok(hits as f64 / scored.len() as f64)
}

/// Verdict rows per claim event and one prediction per claim. Each event
/// sees at most `k` of its ranked sentences; claims without scored events
/// are NOT ENOUGH INFO with nothing retrieved.
pub fn verify_claims(
    store: &DocumentStore,
    events: &EventSet,
    claims: &[ClaimRecord],
    scored: &[ScoredEvent],
    verifier: &Verifier<'_>,
    k: usize,
) -> Result<(Vec<VerdictRow>, Vec<Prediction>), PipelineError> {
    let known: HashMap<&str, &ClaimRecord> = claims.iter().map(|c| (c.claim_id.as_str(), c)).collect();
    let mut by_claim: HashMap<&str, Vec<&ScoredEvent>> = HashMap::new();
    for s in scored {
        if !known.contains_key(s.claim_id.as_str()) {
            return Err(PipelineError::UnknownClaim(s.claim_id.clone()));
        }
        by_claim.entry(s.claim_id.as_str()).or_default().push(s);
    }
    let per: Vec<Result<(Vec<VerdictRow>, Prediction), PipelineError>> = claims
        .par_iter()
        .map(|claim| {
            let claim_events = events.claim_events(&claim.claim_id, &claim.text);
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            let mut retrieved = Vec::new();
            for s in by_claim.get(claim.claim_id.as_str()).map(Vec::as_slice).unwrap_or_default() {
                let ce = claim_events
                    .iter()
                    .find(|e| e.event_id == s.claim_event_id)
                    .ok_or_else(|| PipelineError::UnknownEvent(s.claim_event_id.clone()))?;
                let evidence = s
                    .ranked
                    .iter()
                    .take(k)
                    .map(|r| {
                        let reference = r.reference();
                        let text = store.resolve(&reference)?.to_string();
                        Ok(ScoredSentence { reference, text, score: r.score })
                    })
                    .collect::<Result<Vec<_>, CorpusError>>()?;
                let v = verifier.verify(ce, &evidence)?;
                retrieved.extend(evidence.into_iter().map(|e| e.reference));
                labels.push(v.label);
                rows.push(VerdictRow {
                    claim_id: claim.claim_id.clone(),
                    event_id: ce.event_id.clone(),
                    label: v.label,
                    raw_response_digest: verdict::digest(&v.raw),
                });
            }
            let label = if labels.is_empty() { Verdict::Nei } else { verdict::aggregate(&labels) };
            Ok((rows, Prediction::new(claim.claim_id.clone(), label, retrieved)))
        })
        .collect();
    let mut rows = Vec::new();
    let mut preds = Vec::new();
    for p in per {
        let (r, pred) = p?;
        rows.extend(r);
        preds.push(pred);
    }
    Ok((rows, preds))
}

pub fn claim_meta(claims: &[ClaimRecord], events: &EventSet) -> HashMap<String, ClaimMeta> {
    claims
        .iter()
        .map(|c| (c.claim_id.clone(), ClaimMeta::from_events(&events.claim_events(&c.claim_id, &c.text))))
        .collect()
}

pub fn evaluate_predictions(claims: &[ClaimRecord], events: &EventSet, preds: &[Prediction]) -> Result<Report, PipelineError> {
    Ok(evalkit::evaluate(preds, &evalkit::golds_from_records(claims), &claim_meta(claims, events))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub label_accuracy: f64,
    pub fever_score: f64,
}

/// Re-verifies with every evidence budget `1..=max_k`.
pub fn k_sweep(
    store: &DocumentStore,
    events: &EventSet,
    claims: &[ClaimRecord],
    scored: &[ScoredEvent],
    verifier: &Verifier<'_>,
    max_k: usize,
) -> Result<Vec<SweepPoint>, PipelineError> {
    (1..=max_k)
        .map(|k| {
            let (_, preds) = verify_claims(store, events, claims, scored, verifier, k)?;
            let golds = evalkit::golds_from_records(claims);
            Ok(SweepPoint {
                k,
                label_accuracy: evalkit::label_accuracy(&preds, &golds)?,
                fever_score: evalkit::fever_score(&preds, &golds)?,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("k,label_accuracy,fever_score\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.k, p.label_accuracy, p.fever_score));
    }
    s
}

/// Claims with gold evidence, as training input.
pub fn training_claims(claims: &[ClaimRecord], events: &EventSet) -> Vec<TrainingClaim> {
    claims
        .iter()
        .filter(|c| !c.gold_evidence.is_empty())
        .map(|c| TrainingClaim {
            claim_id: c.claim_id.clone(),
            events: events.claim_events(&c.claim_id, &c.text),
            gold: c.gold_evidence.all_refs(),
        })
        .collect()
}

/// Mines and encodes the triplets of `claims`.
pub fn prepare_training(
    claims: &[ClaimRecord],
    store: &DocumentStore,
    events: &EventSet,
    provider: &dyn EmbeddingProvider,
    seed: u64,
) -> Result<Vec<PreparedTriplet>, PipelineError> {
    let triplets = training::mine_triplets(&training_claims(claims, events), store, seed)?;
    Ok(triplets
        .par_iter()
        .map(|t| training::prepare_triplet(t, store, events, provider))
        .collect::<Result<Vec<_>, TrainError>>()?)
}

/// Ranked sentences as the verdict stage sees them.
pub fn scored_sentences(store: &DocumentStore, s: &ScoredEvent) -> Result<Vec<ScoredSentence>, PipelineError> {
    let mut out = s
        .ranked
        .iter()
        .map(|r| {
            let reference = r.reference();
            Ok(ScoredSentence { text: store.resolve(&reference)?.to_string(), reference, score: r.score })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    relevance::sort_scored(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{GoldEvidence, Provenance};
    use crate::corpus::Document;
    use crate::encoder::HashStubProvider;

    fn fixture() -> (DocumentStore, Vec<ClaimRecord>) {
        let store = DocumentStore::new(vec![
            Document {
                doc_id: "tezuka".into(),
                title: "Osamu Tezuka".into(),
                sentences: vec![
                    "As a young child Tezuka began to practice drawing.".into(),
                    "Tezuka died of stomach cancer in 1989.".into(),
                ],
            },
            Document {
                doc_id: "leoben".into(),
                title: "DSV Leoben".into(),
                sentences: vec!["DSV Leoben was founded in 1927.".into()],
            },
        ])
        .unwrap();
        let claims = vec![
            ClaimRecord {
                claim_id: "t".into(),
                text: "Osamu Tezuka practiced drawing as a young child in 2000.".into(),
                label: Some(Verdict::Refutes),
                gold_evidence: GoldEvidence::single(vec![SentenceRef::new("tezuka", 1)]),
                provenance: Provenance::Original,
            },
            ClaimRecord {
                claim_id: "l".into(),
                text: "DSV Leoben was founded in 1927.".into(),
                label: Some(Verdict::Supports),
                gold_evidence: GoldEvidence::single(vec![SentenceRef::new("leoben", 0)]),
                provenance: Provenance::Original,
            },
        ];
        (store, claims)
    }

    #[test]
    fn jsonl_skips_headers() {
        let mut buf = Vec::new();
        let rows = vec![SweepPoint { k: 1, label_accuracy: 0.5, fever_score: 0.25 }];
        write_jsonl(&mut buf, Some(&serde_json::json!({"seed": 7})), &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"header\":{\"seed\":7}}\n"));
        let back: Vec<SweepPoint> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert!(read_jsonl::<SweepPoint>("{oops".as_bytes()).is_err());
    }

    #[test]
    fn end_to_end_offline() {
        let (store, claims) = fixture();
        let events = EventSet::default();
        let provider = HashStubProvider::new(8, 0);
        let model = ModelParams::init(8, 1, 2, 7).unwrap();
        let ctx = Context { store: &store, events: &events, provider: &provider, model: &model };
        let scored = score_claims(ctx, &claims, 3, CANDIDATE_DOCS).unwrap();
        assert_eq!(scored.len(), 2);
        assert!(scored.iter().all(|s| s.ranked.len() <= 3));
        let (rows, preds) = verify_claims(&store, &events, &claims, &scored, &Verifier::Offline, 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(preds[0].label, Verdict::Refutes);
        assert_eq!(preds[1].label, Verdict::Supports);
        let report = evaluate_predictions(&claims, &events, &preds).unwrap();
        assert_eq!(report.label_accuracy, 1.0);
        let sweep = k_sweep(&store, &events, &claims, &scored, &Verifier::Offline, 3).unwrap();
        assert_eq!(sweep.len(), 3);
        assert!(sweep_csv(&sweep).starts_with("k,label_accuracy,fever_score\n1,"));
    }

    #[test]
    fn unknown_claim_in_scores() {
        let (store, claims) = fixture();
        let scored = vec![ScoredEvent { claim_id: "zz".into(), claim_event_id: "zz#0".into(), ranked: vec![] }];
        let err = verify_claims(&store, &EventSet::default(), &claims, &scored, &Verifier::Offline, 3).unwrap_err();
        assert!(matches!(err, PipelineError::UnknownClaim(_)));
    }
}
