//! Calendar points, temporal arguments, position indices and sinusoidal
//! temporal encodings.
//!
//! Dates are proleptic Gregorian. A point carries the granularity it was
//! written at (`1619`, `October 1620`, `5 March 2001`); coarse points anchor at
//! the start of their period whenever they have to be placed on a finer axis.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("cannot parse temporal expression {text:?}: {reason}")]
    Parse { text: String, reason: String },
    #[error("empty input")]
    EmptyInput,
    #[error("encoding dimension must be even and >= 2, got {0}")]
    InvalidDimension(usize),
    #[error("invalid calendar date {year}-{month:?}-{day:?}")]
    InvalidDate {
        year: i32,
        month: Option<u32>,
        day: Option<u32>,
    },
}

fn parse_err(text: &str, reason: impl Into<String>) -> TemporalError {
    TemporalError::Parse {
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Ordered coarse → fine, so `max` picks the finest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Granularity {
    Year,
    Month,
    Day,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTimePoint", into = "RawTimePoint")]
pub struct TimePoint {
    year: i32,
    month: Option<u32>,
    day: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct RawTimePoint {
    year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    month: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    day: Option<u32>,
}

impl TryFrom<RawTimePoint> for TimePoint {
    type Error = TemporalError;
    fn try_from(r: RawTimePoint) -> Result<Self, Self::Error> {
        TimePoint::new(r.year, r.month, r.day)
    }
}

impl From<TimePoint> for RawTimePoint {
    fn from(p: TimePoint) -> Self {
        RawTimePoint {
            year: p.year,
            month: p.month,
            day: p.day,
        }
    }
}

impl TimePoint {
    pub fn new(year: i32, month: Option<u32>, day: Option<u32>) -> Result<Self, TemporalError> {
        let invalid = || TemporalError::InvalidDate { year, month, day };
        match (month, day) {
            (None, Some(_)) => return Err(invalid()),
            (Some(m), None) if !(1..=12).contains(&m) => return Err(invalid()),
            (Some(m), Some(d)) => {
                NaiveDate::from_ymd_opt(year, m, d).ok_or_else(invalid)?;
            }
            _ => {
                NaiveDate::from_ymd_opt(year, 1, 1).ok_or_else(invalid)?;
            }
        }
        Ok(TimePoint { year, month, day })
    }

    pub fn year(year: i32) -> Self {
        TimePoint::new(year, None, None).expect("year out of supported range")
    }

    pub fn month(year: i32, month: u32) -> Result<Self, TemporalError> {
        TimePoint::new(year, Some(month), None)
    }

    pub fn day(year: i32, month: u32, day: u32) -> Result<Self, TemporalError> {
        TimePoint::new(year, Some(month), Some(day))
    }

    pub fn year_value(&self) -> i32 {
        self.year
    }

    pub fn month_value(&self) -> Option<u32> {
        self.month
    }

    pub fn day_value(&self) -> Option<u32> {
        self.day
    }

    pub fn granularity(&self) -> Granularity {
        match (self.month, self.day) {
            (_, Some(_)) => Granularity::Day,
            (Some(_), None) => Granularity::Month,
            _ => Granularity::Year,
        }
    }

    fn first_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month.unwrap_or(1), self.day.unwrap_or(1))
            .expect("validated at construction")
    }

    fn last_date(&self) -> NaiveDate {
        match self.granularity() {
            Granularity::Day => self.first_date(),
            Granularity::Month => {
                let m = self.month.unwrap();
                let (ny, nm) = if m == 12 { (self.year + 1, 1) } else { (self.year, m + 1) };
                NaiveDate::from_ymd_opt(ny, nm, 1).unwrap().pred_opt().unwrap()
            }
            Granularity::Year => NaiveDate::from_ymd_opt(self.year, 12, 31).unwrap(),
        }
    }

    /// Absolute index on the axis of `unit`, anchoring coarser points at the
    /// start of their period.
    pub fn index_at(&self, unit: Granularity) -> i64 {
        match unit {
            Granularity::Year => self.year as i64,
            Granularity::Month => self.year as i64 * 12 + (self.month.unwrap_or(1) as i64 - 1),
            Granularity::Day => self.first_date().num_days_from_ce() as i64,
        }
    }

    /// Inclusive day-number interval covered by this point.
    pub fn interval(&self) -> DayInterval {
        DayInterval {
            start: self.first_date().num_days_from_ce() as i64,
            end: self.last_date().num_days_from_ce() as i64,
        }
    }

    /// Drops components finer than `g`.
    pub fn truncate(&self, g: Granularity) -> TimePoint {
        match g {
            Granularity::Year => TimePoint { year: self.year, month: None, day: None },
            Granularity::Month => TimePoint {
                year: self.year,
                month: Some(self.month.unwrap_or(1)),
                day: None,
            },
            Granularity::Day => TimePoint {
                year: self.year,
                month: Some(self.month.unwrap_or(1)),
                day: Some(self.day.unwrap_or(1)),
            },
        }
    }

    /// Moves the point by `units` steps of its own granularity.
    pub fn shift(&self, units: i64) -> Result<TimePoint, TemporalError> {
        let overflow = || TemporalError::InvalidDate {
            year: self.year,
            month: self.month,
            day: self.day,
        };
        match self.granularity() {
            Granularity::Year => {
                let y = i32::try_from(self.year as i64 + units).map_err(|_| overflow())?;
                TimePoint::new(y, None, None)
            }
            Granularity::Month => {
                let idx = self.index_at(Granularity::Month) + units;
                let y = i32::try_from(idx.div_euclid(12)).map_err(|_| overflow())?;
                TimePoint::new(y, Some(idx.rem_euclid(12) as u32 + 1), None)
            }
            Granularity::Day => {
                let date = self
                    .first_date()
                    .checked_add_signed(chrono::TimeDelta::days(units))
                    .ok_or_else(overflow)?;
                TimePoint::new(date.year(), Some(date.month()), Some(date.day()))
            }
        }
    }
}

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(d) = self.day {
            write!(f, "{} ", d)?;
        }
        if let Some(m) = self.month {
            write!(f, "{} ", MONTHS[m as usize - 1])?;
        }
        if self.year <= 0 {
            write!(f, "{} BC", 1 - self.year)
        } else if self.year < 100 {
            write!(f, "{} AD", self.year)
        } else {
            write!(f, "{}", self.year)
        }
    }
}

/// Inclusive range of proleptic-Gregorian day numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayInterval {
    pub start: i64,
    pub end: i64,
}

impl DayInterval {
    pub fn intersects(&self, other: &DayInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Set of days asserted by an ordering argument; `None` bounds are open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSet {
    pub lo: Option<i64>,
    pub hi: Option<i64>,
}

impl TimeSet {
    pub fn contains(&self, iv: &DayInterval) -> bool {
        self.lo.is_none_or(|lo| iv.start >= lo) && self.hi.is_none_or(|hi| iv.end <= hi)
    }

    pub fn intersects(&self, iv: &DayInterval) -> bool {
        self.lo.is_none_or(|lo| iv.end >= lo) && self.hi.is_none_or(|hi| iv.start <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Predicate {
    In,
    On,
    At,
    Before,
    After,
    From,
    Between,
    For,
    Over,
    Within,
}

impl Predicate {
    pub const ALL: [Predicate; 10] = [
        Predicate::In,
        Predicate::On,
        Predicate::At,
        Predicate::Before,
        Predicate::After,
        Predicate::From,
        Predicate::Between,
        Predicate::For,
        Predicate::Over,
        Predicate::Within,
    ];

    pub fn word(&self) -> &'static str {
        match self {
            Predicate::In => "in",
            Predicate::On => "on",
            Predicate::At => "at",
            Predicate::Before => "before",
            Predicate::After => "after",
            Predicate::From => "from",
            Predicate::Between => "between",
            Predicate::For => "for",
            Predicate::Over => "over",
            Predicate::Within => "within",
        }
    }

    pub fn from_word(word: &str) -> Option<Predicate> {
        let w = word.to_lowercase();
        Predicate::ALL.into_iter().find(|p| p.word() == w)
    }

    pub fn kind(&self) -> ExprKind {
        match self {
            Predicate::For | Predicate::Over | Predicate::Within => ExprKind::Duration,
            _ => ExprKind::Ordering,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExprKind {
    Ordering,
    Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DurationUnit {
    Day,
    Month,
    Year,
}

impl DurationUnit {
    fn word(&self, plural: bool) -> &'static str {
        match (self, plural) {
            (DurationUnit::Day, false) => "day",
            (DurationUnit::Day, true) => "days",
            (DurationUnit::Month, false) => "month",
            (DurationUnit::Month, true) => "months",
            (DurationUnit::Year, false) => "year",
            (DurationUnit::Year, true) => "years",
        }
    }

    fn from_word(word: &str) -> Option<DurationUnit> {
        match word {
            "day" | "days" => Some(DurationUnit::Day),
            "month" | "months" => Some(DurationUnit::Month),
            "year" | "years" => Some(DurationUnit::Year),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Duration {
    pub value: u32,
    pub unit: DurationUnit,
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit.word(self.value != 1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalArgument {
    pub raw: String,
    pub predicate: Predicate,
    pub points: Vec<TimePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<Duration>,
    pub kind: ExprKind,
}

impl TemporalArgument {
    pub fn ordering(predicate: Predicate, points: Vec<TimePoint>) -> Self {
        let mut arg = TemporalArgument {
            raw: String::new(),
            predicate,
            points,
            duration: None,
            kind: predicate.kind(),
        };
        arg.raw = arg.render();
        arg
    }

    pub fn duration(predicate: Predicate, duration: Duration) -> Self {
        let mut arg = TemporalArgument {
            raw: String::new(),
            predicate,
            points: Vec::new(),
            duration: Some(duration),
            kind: predicate.kind(),
        };
        arg.raw = arg.render();
        arg
    }

    /// Canonical surface form; `parse_time_expression` inverts it.
    pub fn render(&self) -> String {
        match (self.predicate, self.duration) {
            (_, Some(d)) => format!("{} {}", self.predicate.word(), d),
            (Predicate::Between, None) => format!(
                "between {} and {}",
                self.points[0],
                self.points.get(1).unwrap_or(&self.points[0])
            ),
            (p, None) => format!("{} {}", p.word(), self.points[0]),
        }
    }

    /// Equality ignoring the raw text span.
    pub fn same_meaning(&self, other: &TemporalArgument) -> bool {
        self.predicate == other.predicate
            && self.points == other.points
            && self.duration == other.duration
            && self.kind == other.kind
    }

    /// Days asserted by an ordering argument; `None` for durations.
    pub fn asserted_set(&self) -> Option<TimeSet> {
        if self.kind != ExprKind::Ordering || self.points.is_empty() {
            return None;
        }
        let first = self.points[0].interval();
        Some(match self.predicate {
            Predicate::In | Predicate::On | Predicate::At => TimeSet {
                lo: Some(first.start),
                hi: Some(first.end),
            },
            Predicate::Before => TimeSet { lo: None, hi: Some(first.start - 1) },
            Predicate::After => TimeSet { lo: Some(first.end + 1), hi: None },
            Predicate::From => TimeSet { lo: Some(first.start), hi: None },
            Predicate::Between => {
                let last = self.points.last().unwrap().interval();
                TimeSet {
                    lo: Some(first.start.min(last.start)),
                    hi: Some(first.end.max(last.end)),
                }
            }
            Predicate::For | Predicate::Over | Predicate::Within => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PositionIndex {
    pub value: u64,
    pub unit: Granularity,
}

const MODIFIERS: &[&str] = &[
    "around", "about", "approximately", "circa", "roughly", "late", "early", "mid",
];

const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty",
];

fn month_from(word: &str) -> Option<u32> {
    let w = word.to_lowercase();
    if w.len() < 3 {
        return None;
    }
    for (i, name) in MONTHS.iter().enumerate() {
        let lname = name.to_lowercase();
        if w == lname || w == lname[..3] || (i == 8 && w == "sept") {
            return Some(i as u32 + 1);
        }
    }
    None
}

fn day_number(tok: &str) -> Option<u32> {
    let t = tok.to_lowercase();
    let digits = t
        .strip_suffix("st")
        .or_else(|| t.strip_suffix("nd"))
        .or_else(|| t.strip_suffix("rd"))
        .or_else(|| t.strip_suffix("th"))
        .unwrap_or(&t);
    if digits.is_empty() || digits.len() > 2 || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn is_ordinal(tok: &str) -> bool {
    let t = tok.to_lowercase();
    ["st", "nd", "rd", "th"].iter().any(|s| t.ends_with(s)) && day_number(tok).is_some()
}

/// Date-token parser. `min_year_digits` controls how eagerly bare numbers are
/// read as years (3 inside an explicit temporal phrase, 4 in free text).
struct DateScanner<'a> {
    toks: &'a [String],
    min_year_digits: usize,
}

impl<'a> DateScanner<'a> {
    fn tok(&self, i: usize) -> Option<String> {
        self.toks.get(i).map(|t| t.to_lowercase())
    }

    fn year_at(&self, i: usize) -> Option<(i32, usize)> {
        let t = self.tok(i)?;
        if t.is_empty() || t.len() > 4 || !t.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let n: i32 = t.parse().ok()?;
        if n == 0 {
            return None;
        }
        // an explicit era marker licenses short years
        match self.tok(i + 1).as_deref() {
            Some("bc") | Some("bce") => Some((1 - n, 2)),
            Some("ad") | Some("ce") => Some((n, 2)),
            _ if t.len() >= self.min_year_digits => Some((n, 1)),
            _ => None,
        }
    }

    /// Longest date starting at `i`: (point, tokens consumed). Well-shaped but
    /// invalid dates yield `Err`.
    fn date_at(&self, i: usize) -> Option<Result<(TimePoint, usize), TemporalError>> {
        let mk = |y: i32, m: Option<u32>, d: Option<u32>, used: usize| {
            Some(TimePoint::new(y, m, d).map(|p| (p, used)))
        };
        let t0 = self.tok(i)?;
        // [the] ORD of MONTH [,] YEAR
        let ord_start = if t0 == "the" { i + 1 } else { i };
        if let Some(t) = self.tok(ord_start) {
            if is_ordinal(&t) && self.tok(ord_start + 1).as_deref() == Some("of") {
                let month = self.tok(ord_start + 2).and_then(|m| month_from(&m))?;
                let mut j = ord_start + 3;
                if self.tok(j).as_deref() == Some(".") {
                    j += 1;
                }
                if self.tok(j).as_deref() == Some(",") {
                    j += 1;
                }
                let (y, used) = self.year_at(j)?;
                return mk(y, Some(month), day_number(&t), j + used - i);
            }
        }
        // DAY MONTH [,] YEAR
        if let Some(d) = day_number(&t0) {
            if let Some(m) = self.tok(i + 1).and_then(|m| month_from(&m)) {
                let mut j = i + 2;
                if self.tok(j).as_deref() == Some(".") {
                    j += 1;
                }
                if self.tok(j).as_deref() == Some(",") {
                    j += 1;
                }
                if let Some((y, used)) = self.year_at(j) {
                    return mk(y, Some(m), Some(d), j + used - i);
                }
            }
            // D / M / Y
            if self.tok(i + 1).as_deref() == Some("/") {
                if let (Some(m), Some("/")) = (
                    self.tok(i + 2).and_then(|m| day_number(&m)),
                    self.tok(i + 3).as_deref(),
                ) {
                    if let Some((y, used)) = self.year_at(i + 4) {
                        return mk(y, Some(m), Some(d), 4 + used);
                    }
                }
            }
        }
        // MONTH [.] [DAY [,]] YEAR
        if let Some(m) = month_from(&t0) {
            let mut j = i + 1;
            if self.tok(j).as_deref() == Some(".") {
                j += 1;
            }
            if let Some(d) = self.tok(j).and_then(|t| day_number(&t)) {
                let mut k = j + 1;
                if self.tok(k).as_deref() == Some(",") {
                    k += 1;
                }
                if let Some((y, used)) = self.year_at(k) {
                    // "May 1990" must not be read as day 19.., so the day form
                    // needs a separate year token.
                    return mk(y, Some(m), Some(d), k + used - i);
                }
            }
            if let Some((y, used)) = self.year_at(j) {
                return mk(y, Some(m), None, j + used - i);
            }
            return None;
        }
        let (y, used) = self.year_at(i)?;
        mk(y, None, None, used)
    }
}

fn lowered_tokens(text: &str) -> Vec<String> {
    let mut toks: Vec<String> = text::word_tokens(text);
    while toks
        .last()
        .is_some_and(|t| matches!(t.as_str(), "." | "," | ";" | ":" | "!" | "?"))
    {
        toks.pop();
    }
    toks
}

fn duration_value(tok: &str) -> Option<u32> {
    let t = tok.to_lowercase();
    if t == "a" || t == "an" {
        return Some(1);
    }
    if let Some(i) = NUMBER_WORDS.iter().position(|w| *w == t) {
        return Some(i as u32);
    }
    if !t.is_empty() && t.len() <= 6 && t.chars().all(|c| c.is_ascii_digit()) {
        return t.parse().ok();
    }
    None
}

/// Parses a contiguous temporal phrase such as `in 1623`, `around October 1620`,
/// `between 2007 and 2012` or `for 5 years`.
pub fn parse_time_expression(text: &str) -> Result<TemporalArgument, TemporalError> {
    let toks = lowered_tokens(text);
    let lower: Vec<String> = toks.iter().map(|t| t.to_lowercase()).collect();
    let mut i = 0;
    let mut modified = false;
    while i < lower.len() && MODIFIERS.contains(&lower[i].as_str()) {
        i += 1;
        modified = true;
    }
    let predicate = match lower.get(i).and_then(|w| Predicate::from_word(w)) {
        Some(p) => {
            i += 1;
            p
        }
        // a bare modified date ("around October 1620") reads as IN
        None if modified => Predicate::In,
        None => return Err(parse_err(text, "no temporal predicate")),
    };
    while i < lower.len() && MODIFIERS.contains(&lower[i].as_str()) {
        i += 1;
    }
    let scanner = DateScanner { toks: &toks, min_year_digits: 3 };

    let finish = |end: usize| -> Result<(), TemporalError> {
        if end == toks.len() {
            Ok(())
        } else {
            Err(parse_err(text, format!("unexpected token {:?}", toks[end])))
        }
    };
    let date = |at: usize| -> Result<(TimePoint, usize), TemporalError> {
        match scanner.date_at(at) {
            Some(Ok(found)) => Ok(found),
            Some(Err(e)) => Err(parse_err(text, e.to_string())),
            None => Err(parse_err(text, "no parseable date")),
        }
    };

    let raw = text.trim().trim_end_matches(['.', ',', ';', ':', '!', '?']).trim().to_string();
    match predicate.kind() {
        ExprKind::Duration => {
            let value = lower
                .get(i)
                .and_then(|t| duration_value(t))
                .filter(|v| *v > 0)
                .ok_or_else(|| parse_err(text, "no duration value"))?;
            let unit = lower
                .get(i + 1)
                .and_then(|t| DurationUnit::from_word(t))
                .ok_or_else(|| parse_err(text, "no duration unit"))?;
            finish(i + 2)?;
            Ok(TemporalArgument {
                raw,
                predicate,
                points: Vec::new(),
                duration: Some(Duration { value, unit }),
                kind: ExprKind::Duration,
            })
        }
        ExprKind::Ordering if predicate == Predicate::Between => {
            let (first, used) = date(i)?;
            let mut j = i + used;
            if !matches!(lower.get(j).map(String::as_str), Some("and") | Some("-") | Some("–")) {
                return Err(parse_err(text, "between needs two dates"));
            }
            j += 1;
            while j < lower.len() && MODIFIERS.contains(&lower[j].as_str()) {
                j += 1;
            }
            let (second, used) = date(j)?;
            finish(j + used)?;
            Ok(TemporalArgument {
                raw,
                predicate,
                points: vec![first, second],
                duration: None,
                kind: ExprKind::Ordering,
            })
        }
        ExprKind::Ordering => {
            let (point, used) = date(i)?;
            finish(i + used)?;
            Ok(TemporalArgument {
                raw,
                predicate,
                points: vec![point],
                duration: None,
                kind: ExprKind::Ordering,
            })
        }
    }
}

/// A date mention found in free text, with its token span.
#[derive(Debug, Clone, PartialEq)]
pub struct DateMention {
    pub start: usize,
    pub end: usize,
    pub point: TimePoint,
}

/// Scans a token stream for dates. Bare numbers need `min_year_digits`
/// digits to count as years.
pub fn scan_dates(tokens: &[String], min_year_digits: usize) -> Vec<DateMention> {
    let scanner = DateScanner { toks: tokens, min_year_digits };
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match scanner.date_at(i) {
            Some(Ok((point, used))) => {
                out.push(DateMention { start: i, end: i + used, point });
                i += used;
            }
            _ => i += 1,
        }
    }
    out
}

/// Dates mentioned anywhere in `text` (four-digit years or month-qualified).
pub fn extract_dates(text: &str) -> Vec<TimePoint> {
    scan_dates(&text::word_tokens(text), 4)
        .into_iter()
        .map(|m| m.point)
        .collect()
}

pub fn finest_granularity(points: &[TimePoint]) -> Result<Granularity, TemporalError> {
    points
        .iter()
        .map(TimePoint::granularity)
        .max()
        .ok_or(TemporalError::EmptyInput)
}

/// Offsets from the earliest point, counted in the finest granularity present.
pub fn positions_of(points: &[TimePoint]) -> Result<Vec<PositionIndex>, TemporalError> {
    let unit = finest_granularity(points)?;
    let idx: Vec<i64> = points.iter().map(|p| p.index_at(unit)).collect();
    let min = *idx.iter().min().unwrap();
    Ok(idx
        .into_iter()
        .map(|v| PositionIndex { value: (v - min) as u64, unit })
        .collect())
}

/// Sinusoidal encoding: `sin(pos / 10000^(i/d))` at even `i`,
/// `cos(pos / 10000^((i-1)/d))` at odd `i`.
pub fn temporal_encoding(pos: u64, d: usize) -> Result<Vec<f64>, TemporalError> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(TemporalError::InvalidDimension(d));
    }
    let pos = pos as f64;
    Ok((0..d)
        .map(|i| {
            let even = i - (i % 2);
            let angle = pos / 10000f64.powf(even as f64 / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect())
}

pub fn encoding_distance(p1: u64, p2: u64, d: usize) -> Result<f64, TemporalError> {
    let a = temporal_encoding(p1, d)?;
    let b = temporal_encoding(p2, d)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Largest `P` such that `encoding_distance(0, ·, d)` is strictly increasing
/// on `0..=P`, searched up to `limit`. Since the distance depends only on the
/// offset, this bounds the range where ordering by distance is faithful.
pub fn monotone_horizon(d: usize, limit: u64) -> Result<u64, TemporalError> {
    let origin = temporal_encoding(0, d)?;
    let mut prev = 0.0;
    for p in 1..=limit {
        let e = temporal_encoding(p, d)?;
        let dist = origin
            .iter()
            .zip(&e)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dist <= prev {
            return Ok(p - 1);
        }
        prev = dist;
    }
    Ok(limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn y(v: i32) -> TimePoint {
        TimePoint::year(v)
    }

    #[test]
    fn parses_in_year() {
        let a = parse_time_expression("in 1623").unwrap();
        assert_eq!(a.predicate, Predicate::In);
        assert_eq!(a.points, vec![y(1623)]);
        assert_eq!(a.kind, ExprKind::Ordering);
        assert_eq!(a.duration, None);
    }

    #[test]
    fn parses_between() {
        let a = parse_time_expression("between 2007 and 2012").unwrap();
        assert_eq!(a.predicate, Predicate::Between);
        assert_eq!(a.points, vec![y(2007), y(2012)]);
        assert_eq!(a.kind, ExprKind::Ordering);
    }

    #[test]
    fn parses_duration() {
        let a = parse_time_expression("for 5 years").unwrap();
        assert_eq!(a.predicate, Predicate::For);
        assert_eq!(a.duration, Some(Duration { value: 5, unit: DurationUnit::Year }));
        assert!(a.points.is_empty());
        assert_eq!(a.kind, ExprKind::Duration);
        let b = parse_time_expression("over three months").unwrap();
        assert_eq!(b.duration, Some(Duration { value: 3, unit: DurationUnit::Month }));
        let c = parse_time_expression("within a year").unwrap();
        assert_eq!(c.duration, Some(Duration { value: 1, unit: DurationUnit::Year }));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            parse_time_expression("on the 32nd of Foo"),
            Err(TemporalError::Parse { .. })
        ));
        assert!(parse_time_expression("on 31 February 2001").is_err());
        assert!(parse_time_expression("1623").is_err());
        assert!(parse_time_expression("in Paris").is_err());
        assert!(parse_time_expression("in 1623 and more").is_err());
        assert!(parse_time_expression("for 0 years").is_err());
        assert!(parse_time_expression("for 5 weeks").is_err());
        assert!(parse_time_expression("").is_err());
    }

    #[test]
    fn strips_modifiers() {
        let a = parse_time_expression("around October 1620").unwrap();
        assert_eq!(a.predicate, Predicate::In);
        assert_eq!(a.points, vec![TimePoint::month(1620, 10).unwrap()]);
        let b = parse_time_expression("in late 1998").unwrap();
        assert_eq!(b.points, vec![y(1998)]);
        assert_eq!(a.raw, "around October 1620");
    }

    #[test]
    fn date_forms() {
        let d = TimePoint::day(2001, 3, 5).unwrap();
        for s in [
            "on 5 March 2001",
            "on March 5, 2001",
            "on the 5th of March 2001",
            "on 5th of Mar. 2001",
            "on 5/3/2001",
            "On 5 March 2001.",
        ] {
            let a = parse_time_expression(s).unwrap_or_else(|e| panic!("{s}: {e}"));
            assert_eq!(a.points, vec![d], "{s}");
        }
        let bc = parse_time_expression("in 44 BC").unwrap();
        assert_eq!(bc.points, vec![y(-43)]);
        assert_eq!(bc.render(), "in 44 BC");
    }

    #[test]
    fn time_point_invariants() {
        assert!(TimePoint::new(2000, None, Some(3)).is_err());
        assert!(TimePoint::day(2001, 2, 29).is_err());
        assert!(TimePoint::day(2000, 2, 29).is_ok());
        assert!(TimePoint::day(1900, 2, 29).is_err());
        assert!(TimePoint::month(2000, 13).is_err());
        assert_eq!(y(1619).granularity(), Granularity::Year);
        assert_eq!(TimePoint::month(1620, 10).unwrap().granularity(), Granularity::Month);
        assert_eq!(TimePoint::day(1620, 10, 1).unwrap().granularity(), Granularity::Day);
    }

    #[test]
    fn granularity_examples() {
        let oct = TimePoint::month(1620, 10).unwrap();
        assert_eq!(finest_granularity(&[y(1619), oct]).unwrap(), Granularity::Month);
        assert_eq!(finest_granularity(&[y(1619)]).unwrap(), Granularity::Year);
        let mar5 = TimePoint::day(2001, 3, 5).unwrap();
        assert_eq!(finest_granularity(&[mar5, y(2000)]).unwrap(), Granularity::Day);
        assert_eq!(finest_granularity(&[]), Err(TemporalError::EmptyInput));
    }

    #[test]
    fn position_examples() {
        let oct = TimePoint::month(1620, 10).unwrap();
        let pos = positions_of(&[y(1619), oct]).unwrap();
        assert_eq!(pos.iter().map(|p| p.value).collect::<Vec<_>>(), vec![0, 21]);
        assert!(pos.iter().all(|p| p.unit == Granularity::Month));
        let same = positions_of(&[y(2000), y(2000)]).unwrap();
        assert_eq!(same.iter().map(|p| p.value).collect::<Vec<_>>(), vec![0, 0]);
        let days = positions_of(&[
            TimePoint::day(2001, 3, 5).unwrap(),
            TimePoint::day(2001, 3, 7).unwrap(),
        ])
        .unwrap();
        assert_eq!(days.iter().map(|p| p.value).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(days[0].unit, Granularity::Day);
        assert_eq!(positions_of(&[]), Err(TemporalError::EmptyInput));
    }

    #[test]
    fn positions_cross_leap_day() {
        // 28 Feb 2000 -> 1 Mar 2000 spans the leap day
        let p = positions_of(&[
            TimePoint::day(2000, 3, 1).unwrap(),
            TimePoint::day(2000, 2, 28).unwrap(),
        ])
        .unwrap();
        assert_eq!(p[0].value, 2);
        assert_eq!(p[1].value, 0);
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(temporal_encoding(0, 4).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
        // 10000^(2/4) = 100
        let te = temporal_encoding(21, 4).unwrap();
        let expect = [21f64.sin(), 21f64.cos(), 0.21f64.sin(), 0.21f64.cos()];
        for (a, b) in te.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(temporal_encoding(3, 3), Err(TemporalError::InvalidDimension(3)));
        assert_eq!(temporal_encoding(3, 0), Err(TemporalError::InvalidDimension(0)));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(encoding_distance(7, 7, 64).unwrap(), 0.0);
        for d in [2, 8, 64, 768] {
            let a = encoding_distance(5, 3, d).unwrap();
            let b = encoding_distance(12, 10, d).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            let c = encoding_distance(0, 1, d).unwrap();
            let e = encoding_distance(10, 11, d).unwrap();
            assert!((c - e).abs() <= 1e-12);
        }
        assert!(encoding_distance(0, 1, 768).unwrap() < encoding_distance(0, 2, 768).unwrap());
    }

    #[test]
    fn render_forms() {
        let a = TemporalArgument::ordering(
            Predicate::Between,
            vec![y(2015), y(2017)],
        );
        assert_eq!(a.raw, "between 2015 and 2017");
        let d = TemporalArgument::duration(
            Predicate::Within,
            Duration { value: 1, unit: DurationUnit::Month },
        );
        assert_eq!(d.raw, "within 1 month");
        let on = TemporalArgument::ordering(Predicate::On, vec![TimePoint::day(2001, 3, 5).unwrap()]);
        assert_eq!(on.raw, "on 5 March 2001");
    }

    #[test]
    fn asserted_sets() {
        let before = parse_time_expression("before 1990").unwrap().asserted_set().unwrap();
        assert!(before.contains(&y(1989).interval()));
        assert!(!before.intersects(&y(1990).interval()));
        let after = parse_time_expression("after 1990").unwrap().asserted_set().unwrap();
        assert!(after.contains(&y(1991).interval()));
        assert!(!after.intersects(&y(1990).interval()));
        let between = parse_time_expression("between 2007 and 2012").unwrap().asserted_set().unwrap();
        assert!(between.contains(&y(2012).interval()));
        assert!(!between.intersects(&y(2013).interval()));
        assert!(parse_time_expression("for 3 years").unwrap().asserted_set().is_none());
    }

    #[test]
    fn extracts_free_text_dates() {
        let dates = extract_dates("Tezuka died of stomach cancer in 1989.");
        assert_eq!(dates, vec![y(1989)]);
        let dates = extract_dates("In 2017, 300 people met on 5 March 2018 and in May 2019.");
        assert_eq!(
            dates,
            vec![y(2017), TimePoint::day(2018, 3, 5).unwrap(), TimePoint::month(2019, 5).unwrap()]
        );
        assert!(extract_dates("He waited for 5 years.").is_empty());
    }

    #[test]
    fn shifting() {
        assert_eq!(y(1927).shift(1).unwrap(), y(1928));
        assert_eq!(
            TimePoint::month(2000, 12).unwrap().shift(1).unwrap(),
            TimePoint::month(2001, 1).unwrap()
        );
        assert_eq!(
            TimePoint::day(2000, 2, 28).unwrap().shift(1).unwrap(),
            TimePoint::day(2000, 2, 29).unwrap()
        );
    }

    fn arb_point() -> impl Strategy<Value = TimePoint> {
        (1i32..2100, 0u32..13, 0u32..32).prop_filter_map("valid date", |(y, m, d)| {
            let month = (m > 0).then_some(m);
            let day = (m > 0 && d > 0).then_some(d);
            TimePoint::new(y, month, day).ok()
        })
    }

    fn arb_argument() -> impl Strategy<Value = TemporalArgument> {
        let ordering = (
            prop::sample::select(vec![
                Predicate::In,
                Predicate::On,
                Predicate::At,
                Predicate::Before,
                Predicate::After,
                Predicate::From,
            ]),
            arb_point(),
        )
            .prop_map(|(p, pt)| TemporalArgument::ordering(p, vec![pt]));
        let between = (arb_point(), arb_point())
            .prop_map(|(a, b)| TemporalArgument::ordering(Predicate::Between, vec![a, b]));
        let duration = (
            prop::sample::select(vec![Predicate::For, Predicate::Over, Predicate::Within]),
            1u32..500,
            prop::sample::select(vec![DurationUnit::Day, DurationUnit::Month, DurationUnit::Year]),
        )
            .prop_map(|(p, value, unit)| TemporalArgument::duration(p, Duration { value, unit }));
        prop_oneof![ordering, between, duration]
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(arg in arb_argument()) {
            let back = parse_time_expression(&arg.render()).unwrap();
            prop_assert!(back.same_meaning(&arg), "{:?} vs {:?}", back, arg);
        }

        #[test]
        fn positions_translation_invariant(
            pts in prop::collection::vec(arb_point(), 1..5),
            shift in -300i64..300,
        ) {
            let unit = finest_granularity(&pts).unwrap();
            let shifted: Vec<TimePoint> = pts.iter().map(|p| p.truncate(unit).shift(shift).unwrap()).collect();
            let truncated: Vec<TimePoint> = pts.iter().map(|p| p.truncate(unit)).collect();
            prop_assert_eq!(positions_of(&truncated).unwrap(), positions_of(&shifted).unwrap());
            prop_assert_eq!(positions_of(&pts).unwrap(), positions_of(&truncated).unwrap());
        }

        #[test]
        fn distance_preserved(p1 in 0u64..5000, p2 in 0u64..5000, k in 0u64..5000, half in 1usize..64) {
            let d = half * 2;
            let a = encoding_distance(p1, p2, d).unwrap();
            let b = encoding_distance(p1 + k, p2 + k, d).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(b).max(1e-300) || (a - b).abs() < 1e-12);
        }
    }
}
