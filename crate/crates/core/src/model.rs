//! Shared domain types: call records, datasets, time windows, and record
//! validation.
//!
//! Dates are ISO-8601 (`YYYY-MM-DD`), times are 24-hour `HH:MM:SS` in local
//! city time, and observation windows are inclusive on both ends. Records
//! sort canonically by `(instant, user, duration, lat, lon)` so that any
//! permutation of the same input lines produces identical derived artifacts.

use std::collections::BTreeSet;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Weekday};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LocKey};

/// Opaque, pre-anonymized user identifier.
pub type UserId = String;

/// One call event: who, when, for how long, and from which tower.
#[derive(Debug, Clone, PartialEq)]
pub struct CdrRecord {
    pub user: UserId,
    pub date: NaiveDate,
    pub time: NaiveTime,
    /// Call duration in seconds; zero-duration calls are legal.
    pub duration: u32,
    pub lat: f64,
    pub lon: f64,
}

impl CdrRecord {
    pub fn at(&self) -> NaiveDateTime {
        self.date.and_time(self.time)
    }

    pub fn loc(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    pub fn key(&self) -> LocKey {
        self.loc().key()
    }
}

/// Inclusive observation window over instants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationWindow {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl ObservationWindow {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Result<Self> {
        if start > end {
            return Err(Error::config("observation window start after end"));
        }
        Ok(ObservationWindow { start, end })
    }

    /// Window spanning whole days from `first` to `last`, both inclusive.
    pub fn for_dates(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        Self::new(
            first.and_hms_opt(0, 0, 0).expect("valid midnight"),
            last.and_hms_opt(23, 59, 59).expect("valid end of day"),
        )
    }

    pub fn contains(&self, at: NaiveDateTime) -> bool {
        at >= self.start && at <= self.end
    }

    pub fn date_range(&self) -> (NaiveDate, NaiveDate) {
        (self.start.date(), self.end.date())
    }
}

/// Why a record failed validation. Rejection is a value, not an error:
/// callers collect reasons per line and keep going.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    DurationOutOfRange,
    LatitudeOutOfRange,
    LongitudeOutOfRange,
    OutsideWindow,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::DurationOutOfRange => write!(f, "duration out of range"),
            RejectReason::LatitudeOutOfRange => write!(f, "latitude out of range"),
            RejectReason::LongitudeOutOfRange => write!(f, "longitude out of range"),
            RejectReason::OutsideWindow => write!(f, "instant outside window"),
        }
    }
}

/// Checks every record invariant and the window bound, reporting the first
/// violated rule.
pub fn validate_record(rec: &CdrRecord, window: &ObservationWindow) -> std::result::Result<(), RejectReason> {
    if rec.duration > 86_400 {
        return Err(RejectReason::DurationOutOfRange);
    }
    if !(-90.0..=90.0).contains(&rec.lat) || rec.lat.is_nan() {
        return Err(RejectReason::LatitudeOutOfRange);
    }
    if !(-180.0..=180.0).contains(&rec.lon) || rec.lon.is_nan() {
        return Err(RejectReason::LongitudeOutOfRange);
    }
    if !window.contains(rec.at()) {
        return Err(RejectReason::OutsideWindow);
    }
    Ok(())
}

/// Labeled time-of-day window. `start == end` is illegal; windows where
/// `end <= start` wrap past midnight (e.g. 19:00–07:00 covers both sides).
/// Membership is half-open: `start` is in, `end` is out.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindow {
    pub label: String,
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl TimeWindow {
    pub fn new(label: impl Into<String>, start: NaiveTime, end: NaiveTime) -> Result<Self> {
        if start == end {
            return Err(Error::config("time window start equals end"));
        }
        Ok(TimeWindow { label: label.into(), start, end })
    }

    /// Window from `start_h:start_m` to `end_h:end_m`; 24 for `end_h` means
    /// midnight (wrapping representation).
    pub fn from_hm(label: &str, start_h: u32, start_m: u32, end_h: u32, end_m: u32) -> Result<Self> {
        let start = NaiveTime::from_hms_opt(start_h, start_m, 0)
            .ok_or_else(|| Error::config("invalid window start"))?;
        let end = NaiveTime::from_hms_opt(end_h % 24, end_m, 0)
            .ok_or_else(|| Error::config("invalid window end"))?;
        TimeWindow::new(label, start, end)
    }

    pub fn wraps(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        if self.wraps() {
            t >= self.start || t < self.end
        } else {
            t >= self.start && t < self.end
        }
    }

    /// Seconds covered in one day.
    pub fn span_secs(&self) -> u32 {
        use chrono::Timelike;
        let s = self.start.num_seconds_from_midnight();
        let e = self.end.num_seconds_from_midnight();
        if self.wraps() {
            86_400 - s + e
        } else {
            e - s
        }
    }
}

/// Checks that the given windows partition the 24-hour day: sorted by start,
/// each window's end must equal the next window's start, cyclically.
pub fn validate_day_partition(slots: &[TimeWindow]) -> Result<()> {
    if slots.is_empty() {
        return Err(Error::config("empty slot list"));
    }
    let total: u64 = slots.iter().map(|w| w.span_secs() as u64).sum();
    if total != 86_400 {
        return Err(Error::config(format!(
            "slots cover {total} seconds, expected 86400 (overlap or gap)"
        )));
    }
    let mut sorted: Vec<&TimeWindow> = slots.iter().collect();
    sorted.sort_by_key(|w| w.start);
    for i in 0..sorted.len() {
        let next = sorted[(i + 1) % sorted.len()];
        if sorted[i].end != next.start {
            return Err(Error::config(format!(
                "slot `{}` ends at {} but `{}` starts at {}",
                sorted[i].label, sorted[i].end, next.label, next.start
            )));
        }
    }
    Ok(())
}

/// Selects instants for usage-score aggregation.
///
/// `WorkTime` counts instants inside the hour window on non-weekend days
/// only; `OffTime` counts instants inside the hour window on any day plus
/// the whole weekend day, matching how the city's working rhythm is defined.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowSpec {
    /// Every instant in the date range.
    All,
    /// Instants whose time of day falls inside the window, any day.
    TimeOfDay(TimeWindow),
    WorkTime { hours: TimeWindow, weekend: Option<Weekday> },
    OffTime { hours: TimeWindow, weekend: Option<Weekday> },
}

impl WindowSpec {
    pub fn contains(&self, at: NaiveDateTime) -> bool {
        match self {
            WindowSpec::All => true,
            WindowSpec::TimeOfDay(w) => w.contains(at.time()),
            WindowSpec::WorkTime { hours, weekend } => {
                if let Some(we) = weekend {
                    if chrono::Datelike::weekday(&at.date()) == *we {
                        return false;
                    }
                }
                hours.contains(at.time())
            }
            WindowSpec::OffTime { hours, weekend } => {
                if let Some(we) = weekend {
                    if chrono::Datelike::weekday(&at.date()) == *we {
                        return true;
                    }
                }
                hours.contains(at.time())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            WindowSpec::All => "ALL".to_string(),
            WindowSpec::TimeOfDay(w) => w.label.clone(),
            WindowSpec::WorkTime { .. } => "WORKING_HOURS".to_string(),
            WindowSpec::OffTime { .. } => "OFF_HOURS".to_string(),
        }
    }
}

pub fn weekday_name(w: Weekday) -> &'static str {
    match w {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

pub fn parse_weekday(s: &str) -> Result<Weekday> {
    match s {
        "Monday" => Ok(Weekday::Mon),
        "Tuesday" => Ok(Weekday::Tue),
        "Wednesday" => Ok(Weekday::Wed),
        "Thursday" => Ok(Weekday::Thu),
        "Friday" => Ok(Weekday::Fri),
        "Saturday" => Ok(Weekday::Sat),
        "Sunday" => Ok(Weekday::Sun),
        other => Err(Error::data(format!("unknown weekday `{other}`"))),
    }
}

/// Validated, canonically ordered record collection.
#[derive(Debug, Clone)]
pub struct CdrDataset {
    records: Vec<CdrRecord>,
    pub window: ObservationWindow,
    towers: BTreeSet<LocKey>,
}

/// Canonical record order: instant, then user, duration, and location.
pub fn canonical_cmp(a: &CdrRecord, b: &CdrRecord) -> std::cmp::Ordering {
    a.at()
        .cmp(&b.at())
        .then_with(|| a.user.cmp(&b.user))
        .then_with(|| a.duration.cmp(&b.duration))
        .then_with(|| a.key().cmp(&b.key()))
}

impl CdrDataset {
    /// Builds a dataset from validated records: sorts canonically and
    /// derives the tower set. Records must already be within `window`.
    pub fn new(mut records: Vec<CdrRecord>, window: ObservationWindow) -> Result<Self> {
        for rec in &records {
            if let Err(reason) = validate_record(rec, &window) {
                return Err(Error::data(format!("record for {}: {reason}", rec.user)));
            }
        }
        records.sort_by(canonical_cmp);
        let towers = records.iter().map(CdrRecord::key).collect();
        Ok(CdrDataset { records, window, towers })
    }

    pub fn records(&self) -> &[CdrRecord] {
        &self.records
    }

    pub fn towers(&self) -> &BTreeSet<LocKey> {
        &self.towers
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
