//! Label accuracy, FEVER score and the event-count × expression-kind
//! breakdown.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{ClaimRecord, GoldEvidence};
use crate::corpus::SentenceRef;
use crate::events::Event;
use crate::temporal::ExprKind;
use crate::verdict::Verdict;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no gold label for claim {0}")]
    MissingGold(String),
    #[error("no predictions")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub claim_id: String,
    pub label: Verdict,
    pub retrieved: Vec<SentenceRef>,
}

impl Prediction {
    /// Drops repeated references, keeping first (best-ranked) occurrences.
    pub fn new(claim_id: String, label: Verdict, retrieved: impl IntoIterator<Item = SentenceRef>) -> Self {
        let mut seen = BTreeSet::new();
        let retrieved = retrieved.into_iter().filter(|r| seen.insert(r.clone())).collect();
        Prediction { claim_id, label, retrieved }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldClaim {
    pub label: Verdict,
    pub evidence: GoldEvidence,
}

pub type Golds = HashMap<String, GoldClaim>;

pub fn golds_from_records(records: &[ClaimRecord]) -> Golds {
    records
        .iter()
        .filter_map(|r| {
            r.label.map(|label| (r.claim_id.clone(), GoldClaim { label, evidence: r.gold_evidence.clone() }))
        })
        .collect()
}

fn gold<'a>(golds: &'a Golds, id: &str) -> Result<&'a GoldClaim, EvalError> {
    golds.get(id).ok_or_else(|| EvalError::MissingGold(id.to_string()))
}

fn label_correct(p: &Prediction, golds: &Golds) -> Result<bool, EvalError> {
    Ok(gold(golds, &p.claim_id)?.label == p.label)
}

fn fever_correct(p: &Prediction, golds: &Golds) -> Result<bool, EvalError> {
    let g = gold(golds, &p.claim_id)?;
    if g.label != p.label {
        return Ok(false);
    }
    if g.label == Verdict::Nei {
        return Ok(true);
    }
    if g.evidence.is_empty() {
        return Err(EvalError::MissingGold(p.claim_id.clone()));
    }
    Ok(g
        .evidence
        .0
        .iter()
        .filter(|set| !set.is_empty())
        .any(|set| set.iter().all(|r| p.retrieved.contains(r))))
}

fn ratio(preds: &[Prediction], golds: &Golds, f: fn(&Prediction, &Golds) -> Result<bool, EvalError>) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut hits = 0usize;
    for p in preds {
        if f(p, golds)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

pub fn label_accuracy(preds: &[Prediction], golds: &Golds) -> Result<f64, EvalError> {
    ratio(preds, golds, label_correct)
}

/// Correct label and, unless the gold label is NOT ENOUGH INFO, some
/// complete gold evidence set among the retrieved sentences.
pub fn fever_score(preds: &[Prediction], golds: &Golds) -> Result<f64, EvalError> {
    ratio(preds, golds, fever_correct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCount {
    Single,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimMeta {
    pub events: usize,
    pub kinds: BTreeSet<ExprKind>,
}

impl ClaimMeta {
    pub fn from_events(events: &[Event]) -> Self {
        ClaimMeta {
            events: events.len(),
            kinds: events.iter().flat_map(|e| e.kinds().collect::<Vec<_>>()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub events: EventCount,
    pub kind: ExprKind,
    pub claims: usize,
    pub label_accuracy: Option<f64>,
    pub fever_score: Option<f64>,
}

/// One cell per (event count, expression kind); a claim with both kinds
/// counts in both columns. Empty cells carry `None`.
pub fn breakdown(preds: &[Prediction], golds: &Golds, meta: &HashMap<String, ClaimMeta>) -> Result<Vec<Cell>, EvalError> {
    let mut cells = Vec::new();
    for events in [EventCount::Single, EventCount::Multiple] {
        for kind in [ExprKind::Ordering, ExprKind::Duration] {
            let members: Vec<Prediction> = preds
                .iter()
                .filter(|p| {
                    meta.get(&p.claim_id).is_some_and(|m| {
                        let c = if m.events > 1 { EventCount::Multiple } else { EventCount::Single };
                        c == events && m.kinds.contains(&kind)
                    })
                })
                .cloned()
                .collect();
            let (la, fs) = if members.is_empty() {
                (None, None)
            } else {
                (Some(label_accuracy(&members, golds)?), Some(fever_score(&members, golds)?))
            };
            cells.push(Cell { events, kind, claims: members.len(), label_accuracy: la, fever_score: fs });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub claims: usize,
    pub label_accuracy: f64,
    pub fever_score: f64,
    pub breakdown: Vec<Cell>,
}

pub fn evaluate(preds: &[Prediction], golds: &Golds, meta: &HashMap<String, ClaimMeta>) -> Result<Report, EvalError> {
    let la = label_accuracy(preds, golds)?;
    let fs = fever_score(preds, golds)?;
    assert!(fs <= la, "FEVER score {fs} exceeds label accuracy {la}");
    Ok(Report { claims: preds.len(), label_accuracy: la, fever_score: fs, breakdown: breakdown(preds, golds, meta)? })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl Report {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "claims          {}", self.claims);
        let _ = writeln!(s, "label accuracy  {:.2}", 100.0 * self.label_accuracy);
        let _ = writeln!(s, "FEVER score     {:.2}", 100.0 * self.fever_score);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<10} {:<10} {:>6} {:>8} {:>8}", "events", "kind", "claims", "LA", "FS");
        for c in &self.breakdown {
            let events = match c.events {
                EventCount::Single => "single",
                EventCount::Multiple => "multiple",
            };
            let kind = match c.kind {
                ExprKind::Ordering => "ordering",
                ExprKind::Duration => "duration",
            };
            let _ = writeln!(
                s,
                "{:<10} {:<10} {:>6} {:>8} {:>8}",
                events,
                kind,
                c.claims,
                pct(c.label_accuracy),
                pct(c.fever_score)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(d: &str, s: usize) -> SentenceRef {
        SentenceRef::new(d, s)
    }

    fn golds() -> Golds {
        let mut g = Golds::new();
        g.insert("a".into(), GoldClaim { label: Verdict::Supports, evidence: GoldEvidence::single(vec![r("x", 0)]) });
        g.insert("b".into(), GoldClaim { label: Verdict::Refutes, evidence: GoldEvidence(vec![vec![r("y", 1), r("y", 2)], vec![r("z", 0)]]) });
        g.insert("c".into(), GoldClaim { label: Verdict::Nei, evidence: GoldEvidence::default() });
        g.insert("d".into(), GoldClaim { label: Verdict::Supports, evidence: GoldEvidence::single(vec![r("w", 3)]) });
        g
    }

    fn p(id: &str, label: Verdict, refs: Vec<SentenceRef>) -> Prediction {
        Prediction::new(id.into(), label, refs)
    }

    #[test]
    fn three_of_four() {
        let preds = vec![
            p("a", Verdict::Supports, vec![r("x", 0)]),
            p("b", Verdict::Refutes, vec![r("y", 1)]),
            p("c", Verdict::Nei, vec![]),
            p("d", Verdict::Refutes, vec![r("w", 3)]),
        ];
        assert_eq!(label_accuracy(&preds, &golds()).unwrap(), 0.75);
        // b retrieves only half of its first set and none of the second
        assert_eq!(fever_score(&preds, &golds()).unwrap(), 0.5);
    }

    #[test]
    fn alternative_set_counts() {
        let preds = vec![p("b", Verdict::Refutes, vec![r("q", 0), r("z", 0)])];
        assert_eq!(fever_score(&preds, &golds()).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(label_accuracy(&[], &golds()), Err(EvalError::EmptyInput));
        let preds = vec![p("zz", Verdict::Nei, vec![])];
        assert_eq!(label_accuracy(&preds, &golds()), Err(EvalError::MissingGold("zz".into())));
    }

    #[test]
    fn dedups_retrieved() {
        let pr = p("a", Verdict::Supports, vec![r("x", 1), r("x", 0), r("x", 1)]);
        assert_eq!(pr.retrieved, vec![r("x", 1), r("x", 0)]);
    }

    #[test]
    fn breakdown_cells() {
        let preds = vec![p("a", Verdict::Supports, vec![r("x", 0)]), p("b", Verdict::Supports, vec![])];
        let mut meta = HashMap::new();
        meta.insert("a".into(), ClaimMeta { events: 1, kinds: BTreeSet::from([ExprKind::Ordering]) });
        meta.insert("b".into(), ClaimMeta { events: 2, kinds: BTreeSet::from([ExprKind::Ordering, ExprKind::Duration]) });
        let cells = breakdown(&preds, &golds(), &meta).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].label_accuracy, Some(1.0));
        assert_eq!(cells[1].claims, 0);
        assert_eq!(cells[1].label_accuracy, None);
        assert_eq!(cells[2].label_accuracy, Some(0.0));
        assert_eq!(cells[3].claims, 1);
        assert!(breakdown(&[], &golds(), &meta).unwrap().iter().all(|c| c.label_accuracy.is_none()));
    }
}
