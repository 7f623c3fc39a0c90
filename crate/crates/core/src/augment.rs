//! Temporal claim detection, tagging and REFUTES/SUPPORTS synthesis.

use std::collections::BTreeSet;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{DocumentStore, SentenceRef};
use crate::events::{extract_events_fallback, Event, EventSet, EventSource};
use crate::temporal::{self, Duration, ExprKind, Granularity, Predicate, TemporalArgument, TemporalError, TimePoint};
use crate::verdict::Verdict;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("no rule applies to claim {0}")]
    NoApplicableRule(String),
    #[error("claim {0} has no dated gold evidence")]
    NoEvidenceDates(String),
    #[error("gold evidence {0} does not resolve")]
    UnresolvedEvidence(SentenceRef),
    #[error("claims line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    RefuteShift,
    RefuteBeforeToAfter,
    RefuteAfterToBefore,
    RefuteFrom,
    RefuteBetween,
    RefuteDuration,
    SupportInToBetween,
    SupportBefore,
    SupportAfter,
    SupportFrom,
    SupportBetween,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    Augmented { rule: Rule, parent: String, seed: u64 },
}

/// Gold evidence as alternative complete sets. A flat JSON list is one set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldEvidence(pub Vec<Vec<SentenceRef>>);

#[derive(Deserialize)]
#[serde(untagged)]
enum GoldRepr {
    Groups(Vec<Vec<SentenceRef>>),
    Flat(Vec<SentenceRef>),
}

impl<'de> Deserialize<'de> for GoldEvidence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match GoldRepr::deserialize(d)? {
            GoldRepr::Flat(v) if v.is_empty() => GoldEvidence(Vec::new()),
            GoldRepr::Flat(v) => GoldEvidence(vec![v]),
            GoldRepr::Groups(g) => GoldEvidence(g),
        })
    }
}

impl Serialize for GoldEvidence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0.as_slice() {
            [] => Vec::<SentenceRef>::new().serialize(s),
            [one] => one.serialize(s),
            many => many.serialize(s),
        }
    }
}

impl GoldEvidence {
    pub fn single(refs: Vec<SentenceRef>) -> Self {
        GoldEvidence(vec![refs])
    }

    /// Every referenced sentence, sorted and deduplicated.
    pub fn all_refs(&self) -> Vec<SentenceRef> {
        let set: BTreeSet<&SentenceRef> = self.0.iter().flatten().collect();
        set.into_iter().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Vec::is_empty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<Verdict>,
    #[serde(default)]
    pub gold_evidence: GoldEvidence,
    #[serde(default)]
    pub provenance: Provenance,
}

/// Reads `claims.jsonl`, skipping blank lines and header records.
pub fn read_claims(reader: impl BufRead) -> Result<Vec<ClaimRecord>, AugmentError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| AugmentError::MalformedRecord { line: i + 1, message: e.to_string() })?;
        if value.get("header").is_some() {
            continue;
        }
        let rec: ClaimRecord = serde_json::from_value(value)
            .map_err(|e| AugmentError::MalformedRecord { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn claim_events(claim: &ClaimRecord, events: &EventSet) -> Vec<Event> {
    events.claim_events(&claim.claim_id, &claim.text)
}

pub fn detect_temporal(events: &[Event]) -> bool {
    events.iter().any(Event::has_parsed_temporal)
}

pub fn tag_claim(events: &[Event]) -> BTreeSet<ExprKind> {
    events.iter().flat_map(|e| e.kinds().collect::<Vec<_>>()).collect()
}

/// Parseable dates of the gold evidence sentences.
pub fn evidence_dates(claim: &ClaimRecord, store: &DocumentStore) -> Result<Vec<TimePoint>, AugmentError> {
    let mut out = Vec::new();
    for r in claim.gold_evidence.all_refs() {
        let text = store.sentence(&r).ok_or_else(|| AugmentError::UnresolvedEvidence(r.clone()))?;
        out.extend(temporal::extract_dates(text));
    }
    Ok(out)
}

/// A refuted argument must assert no day covered by any evidence date.
pub fn refute_sound(new: &TemporalArgument, original: &TemporalArgument, evidence: &[TimePoint]) -> bool {
    match (new.asserted_set(), new.duration, original.duration) {
        (Some(set), _, _) => evidence.iter().all(|p| !set.intersects(&p.interval())),
        (None, Some(nd), Some(od)) => nd.value > 0 && nd.unit == od.unit && nd.value != od.value,
        _ => false,
    }
}

/// Evidence dates satisfying the original argument satisfy the new one,
/// and at least one does.
pub fn support_sound(new: &TemporalArgument, original: &TemporalArgument, evidence: &[TimePoint]) -> bool {
    let (Some(ns), Some(os)) = (new.asserted_set(), original.asserted_set()) else {
        return false;
    };
    let satisfying: Vec<_> = evidence.iter().map(TimePoint::interval).filter(|iv| os.contains(iv)).collect();
    !satisfying.is_empty() && satisfying.iter().all(|iv| ns.contains(iv))
}

/// Random choices made by the rules: offsets in `1..=5` and coin flips.
pub trait Draws {
    fn offset(&mut self) -> i64;
    fn coin(&mut self) -> bool;
}

impl<R: Rng> Draws for R {
    fn offset(&mut self) -> i64 {
        self.random_range(1..=5)
    }

    fn coin(&mut self) -> bool {
        self.random_bool(0.5)
    }
}

fn offset(rng: &mut impl Draws) -> i64 {
    rng.offset()
}

/// `p` brought to granularity `g` when it is finer, kept otherwise.
fn at_granularity(p: &TimePoint, g: Granularity) -> TimePoint {
    if p.granularity() > g {
        p.truncate(g)
    } else {
        *p
    }
}

fn latest(points: &[TimePoint]) -> TimePoint {
    *points.iter().max_by_key(|p| (p.interval().end, p.interval().start)).unwrap()
}

fn earliest(points: &[TimePoint]) -> TimePoint {
    *points.iter().min_by_key(|p| (p.interval().start, p.interval().end)).unwrap()
}

/// Replaces the argument's span in `text`, keeping a leading capital.
fn realize(text: &str, old: &TemporalArgument, new: &TemporalArgument, id: &str) -> Result<String, AugmentError> {
    let pos = text.find(&old.raw).ok_or_else(|| AugmentError::NoApplicableRule(id.to_string()))?;
    let mut rendered = new.render();
    if old.raw.chars().next().is_some_and(char::is_uppercase) {
        let mut c = rendered.chars();
        if let Some(f) = c.next() {
            rendered = f.to_uppercase().chain(c).collect();
        }
    }
    Ok(format!("{}{}{}", &text[..pos], rendered, &text[pos + old.raw.len()..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfterRule {
    /// BEFORE the earliest evidence date minus an offset.
    #[default]
    Decrement,
    /// BEFORE the earliest evidence date plus an offset, as literally stated.
    Literal,
}

fn first_arg(events: &[Event], kind: ExprKind) -> Option<&TemporalArgument> {
    events.iter().flat_map(|e| e.temporal_args()).find(|a| a.kind == kind)
}

fn derived(claim: &ClaimRecord, text: String, label: Verdict, rule: Rule, suffix: &str, seed: u64) -> ClaimRecord {
    ClaimRecord {
        claim_id: format!("{}-{}", claim.claim_id, suffix),
        text,
        label: Some(label),
        gold_evidence: claim.gold_evidence.clone(),
        provenance: Provenance::Augmented { rule, parent: claim.claim_id.clone(), seed },
    }
}

const MAX_DRAWS: usize = 64;

/// The refuted argument for an ordering claim, before realization.
pub fn refute_argument(
    arg: &TemporalArgument,
    evidence: &[TimePoint],
    rng: &mut impl Draws,
    after_rule: AfterRule,
) -> Result<Option<(Rule, TemporalArgument)>, AugmentError> {
    let g = arg.points[0].granularity();
    Ok(Some(match arg.predicate {
        Predicate::In | Predicate::On | Predicate::At => {
            let mut found = None;
            for _ in 0..MAX_DRAWS {
                let r = offset(rng);
                let sign = if rng.coin() { 1 } else { -1 };
                let cand = TemporalArgument::ordering(arg.predicate, vec![arg.points[0].shift(sign * r)?]);
                if refute_sound(&cand, arg, evidence) {
                    found = Some(cand);
                    break;
                }
            }
            match found {
                Some(a) => (Rule::RefuteShift, a),
                None => return Ok(None),
            }
        }
        Predicate::Before => {
            let base = at_granularity(&latest(evidence), g);
            let p = base.shift(offset(rng))?;
            (Rule::RefuteBeforeToAfter, TemporalArgument::ordering(Predicate::After, vec![p]))
        }
        Predicate::After => {
            let base = at_granularity(&earliest(evidence), g);
            let r = offset(rng);
            let p = match after_rule {
                AfterRule::Decrement => base.shift(-r)?,
                AfterRule::Literal => base.shift(r)?,
            };
            (Rule::RefuteAfterToBefore, TemporalArgument::ordering(Predicate::Before, vec![p]))
        }
        Predicate::From => {
            let base = at_granularity(&latest(evidence), g);
            let p = base.shift(offset(rng))?;
            (Rule::RefuteFrom, TemporalArgument::ordering(Predicate::From, vec![p]))
        }
        Predicate::Between => {
            let d2 = *arg.points.last().unwrap();
            let r1 = offset(rng);
            let r2 = offset(rng);
            let mut d3 = d2.shift(r1)?;
            // evidence may extend past the original range; slide forward
            let mut cand = TemporalArgument::ordering(Predicate::Between, vec![d3, d3.shift(r2)?]);
            let mut guard = 0;
            while !refute_sound(&cand, arg, evidence) {
                guard += 1;
                if guard > 10_000 {
                    return Ok(None);
                }
                d3 = d3.shift(r1)?;
                cand = TemporalArgument::ordering(Predicate::Between, vec![d3, d3.shift(r2)?]);
            }
            (Rule::RefuteBetween, cand)
        }
        Predicate::For | Predicate::Over | Predicate::Within => return Ok(None),
    }))
}

pub fn refute_ordering(
    claim: &ClaimRecord,
    events: &[Event],
    evidence: &[TimePoint],
    rng: &mut impl Draws,
    seed: u64,
    after_rule: AfterRule,
) -> Result<ClaimRecord, AugmentError> {
    let arg = first_arg(events, ExprKind::Ordering).ok_or_else(|| AugmentError::NoApplicableRule(claim.claim_id.clone()))?;
    if evidence.is_empty() {
        return Err(AugmentError::NoEvidenceDates(claim.claim_id.clone()));
    }
    let (rule, new) = refute_argument(arg, evidence, rng, after_rule)?
        .ok_or_else(|| AugmentError::NoApplicableRule(claim.claim_id.clone()))?;
    let text = realize(&claim.text, arg, &new, &claim.claim_id)?;
    Ok(derived(claim, text, Verdict::Refutes, rule, "r-ord", seed))
}

pub fn refute_duration(claim: &ClaimRecord, events: &[Event], rng: &mut impl Draws, seed: u64) -> Result<ClaimRecord, AugmentError> {
    let arg = first_arg(events, ExprKind::Duration).ok_or_else(|| AugmentError::NoApplicableRule(claim.claim_id.clone()))?;
    let d = arg.duration.expect("duration argument");
    let value = loop {
        let r = offset(rng);
        let v = if rng.coin() { d.value as i64 + r } else { d.value as i64 - r };
        if v > 0 {
            break v as u32;
        }
    };
    let new = TemporalArgument::duration(arg.predicate, Duration { value, unit: d.unit });
    let text = realize(&claim.text, arg, &new, &claim.claim_id)?;
    Ok(derived(claim, text, Verdict::Refutes, Rule::RefuteDuration, "r-dur", seed))
}

pub fn support_argument(arg: &TemporalArgument, rng: &mut impl Draws) -> Result<Option<(Rule, TemporalArgument)>, AugmentError> {
    let p = arg.points[0];
    Ok(Some(match arg.predicate {
        Predicate::In | Predicate::On | Predicate::At => {
            let r = offset(rng);
            (Rule::SupportInToBetween, TemporalArgument::ordering(Predicate::Between, vec![p.shift(-r)?, p.shift(r)?]))
        }
        Predicate::Before => (Rule::SupportBefore, TemporalArgument::ordering(Predicate::Before, vec![p.shift(offset(rng))?])),
        Predicate::After => (Rule::SupportAfter, TemporalArgument::ordering(Predicate::After, vec![p.shift(-offset(rng))?])),
        Predicate::From => (Rule::SupportFrom, TemporalArgument::ordering(Predicate::From, vec![p.shift(-offset(rng))?])),
        Predicate::Between => {
            let last = *arg.points.last().unwrap();
            let a = p.shift(-offset(rng))?;
            let b = last.shift(offset(rng))?;
            (Rule::SupportBetween, TemporalArgument::ordering(Predicate::Between, vec![a, b]))
        }
        Predicate::For | Predicate::Over | Predicate::Within => return Ok(None),
    }))
}

pub fn support_variant(
    claim: &ClaimRecord,
    events: &[Event],
    evidence: &[TimePoint],
    rng: &mut impl Draws,
    seed: u64,
) -> Result<ClaimRecord, AugmentError> {
    let none = || AugmentError::NoApplicableRule(claim.claim_id.clone());
    let arg = first_arg(events, ExprKind::Ordering).ok_or_else(none)?;
    let (rule, new) = support_argument(arg, rng)?.ok_or_else(none)?;
    if !support_sound(&new, arg, evidence) {
        return Err(none());
    }
    let text = realize(&claim.text, arg, &new, &claim.claim_id)?;
    Ok(derived(claim, text, Verdict::Supports, rule, "s-ord", seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub seed: u64,
    pub ordering: bool,
    pub duration: bool,
    pub support_ratio: f64,
    pub after_rule: AfterRule,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { seed: 0, ordering: true, duration: true, support_ratio: 0.5, after_rule: AfterRule::Decrement }
    }
}

pub fn claim_seed(seed: u64, claim_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(claim_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Output of [`augment_claims`]: tagged originals followed, per claim, by
/// their derived records.
#[derive(Debug, Clone, Default)]
pub struct AugmentOutput {
    pub records: Vec<ClaimRecord>,
    pub skipped: Vec<(String, String)>,
}

/// Keeps claims with at least one tagged temporal argument and adds
/// synthesized claims for those labeled SUPPORTS.
pub fn augment_claims(
    claims: &[ClaimRecord],
    store: &DocumentStore,
    events: &EventSet,
    config: &AugmentConfig,
) -> Result<AugmentOutput, AugmentError> {
    type PerClaim = (Vec<ClaimRecord>, Vec<(String, String)>);
    let per: Vec<Result<PerClaim, AugmentError>> = claims
        .par_iter()
        .map(|claim| {
            let evs = claim_events(claim, events);
            let tags = tag_claim(&evs);
            if !detect_temporal(&evs) || tags.is_empty() {
                return Ok((Vec::new(), Vec::new()));
            }
            let mut records = vec![claim.clone()];
            let mut skipped = Vec::new();
            if claim.label != Some(Verdict::Supports) {
                return Ok((records, skipped));
            }
            let seed = claim_seed(config.seed, &claim.claim_id);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dates = evidence_dates(claim, store)?;
            let mut attempt = |r: Result<ClaimRecord, AugmentError>, records: &mut Vec<ClaimRecord>| match r {
                Ok(rec) => records.push(rec),
                Err(e) => skipped.push((claim.claim_id.clone(), e.to_string())),
            };
            if config.ordering && tags.contains(&ExprKind::Ordering) {
                attempt(refute_ordering(claim, &evs, &dates, &mut rng, seed, config.after_rule), &mut records);
                if rng.random_bool(config.support_ratio.clamp(0.0, 1.0)) {
                    attempt(support_variant(claim, &evs, &dates, &mut rng, seed), &mut records);
                }
            }
            if config.duration && tags.contains(&ExprKind::Duration) {
                attempt(refute_duration(claim, &evs, &mut rng, seed), &mut records);
            }
            Ok((records, skipped))
        })
        .collect();
    let mut out = AugmentOutput::default();
    for r in per {
        let (recs, skipped) = r?;
        out.records.extend(recs);
        out.skipped.extend(skipped);
    }
    Ok(out)
}

/// The temporal argument a derived claim is meant to carry, recovered from
/// its text.
pub fn reparsed_arguments(claim: &ClaimRecord) -> Vec<TemporalArgument> {
    extract_events_fallback(&EventSource::Claim { claim_id: claim.claim_id.clone() }, &claim.text)
        .iter()
        .flat_map(|e| e.temporal_args().cloned().collect::<Vec<_>>())
        .collect()
}
