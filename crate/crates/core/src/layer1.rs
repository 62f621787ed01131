//! Layer 1: usage scoring, minimal/regular/heavy classification, temporal
//! activity histograms, weekend detection, and calling-graph reconstruction.
//!
//! The usage score of a user over a window is
//! `score = omega_c * num_calls + omega_d * total_duration / duration_unit`.
//! The default weights (one per call, one per minute of talk time) reproduce
//! the published per-user scores exactly under round-half-up; see the unit
//! tests pinning all six values.
//!
//! Call destinations are absent from the data, so the calling graph is
//! rebuilt by cross-referencing: two records from distinct users match when
//! their start times differ by at most a tolerance and their durations are
//! equal. Matching is greedy in ascending time order with user-id
//! tie-breaks, and each record participates in at most one match.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};

use crate::error::{Error, Result};
use crate::geo::LocKey;
use crate::ingest::UserLog;
use crate::model::{CdrDataset, TimeWindow, UserId, WindowSpec};

/// Weights of the usage-score formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsageScoreParams {
    /// Weight per call.
    pub omega_c: f64,
    /// Weight per duration unit.
    pub omega_d: f64,
    /// Seconds per duration unit.
    pub duration_unit: f64,
}

impl Default for UsageScoreParams {
    fn default() -> Self {
        UsageScoreParams { omega_c: 1.0, omega_d: 1.0, duration_unit: 60.0 }
    }
}

impl UsageScoreParams {
    pub fn validate(&self) -> Result<()> {
        if self.omega_c < 0.0 || self.omega_d < 0.0 {
            return Err(Error::config("usage-score weights must be non-negative"));
        }
        if self.omega_c == 0.0 && self.omega_d == 0.0 {
            return Err(Error::config("usage-score weights must not both be zero"));
        }
        if self.duration_unit <= 0.0 {
            return Err(Error::config("duration unit must be positive"));
        }
        Ok(())
    }

    /// The score formula itself, usable straight from call/duration counts.
    pub fn score(&self, num_calls: u64, total_duration_secs: u64) -> f64 {
        self.omega_c * num_calls as f64
            + self.omega_d * (total_duration_secs as f64 / self.duration_unit)
    }
}

/// Round-half-up to an integer, the convention used by the published
/// per-user score table.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// A usage score over a window, optionally restricted to one tower.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageScore {
    pub user: UserId,
    pub window_label: String,
    pub dates: (NaiveDate, NaiveDate),
    pub loc: Option<LocKey>,
    pub score: f64,
    pub num_calls: u64,
    pub total_duration: u64,
}

/// Aggregates calls inside the window (and at `loc`, when given) and applies
/// the score formula.
pub fn usage_score(
    log: &UserLog,
    window: &WindowSpec,
    dates: (NaiveDate, NaiveDate),
    loc: Option<LocKey>,
    params: &UsageScoreParams,
) -> UsageScore {
    let mut num_calls = 0u64;
    let mut total_duration = 0u64;
    for entry in &log.entries {
        let d = entry.at.date();
        if d < dates.0 || d > dates.1 {
            continue;
        }
        if let Some(key) = loc {
            if entry.loc != key {
                continue;
            }
        }
        if !window.contains(entry.at) {
            continue;
        }
        num_calls += 1;
        total_duration += entry.duration as u64;
    }
    UsageScore {
        user: log.user.clone(),
        window_label: window.label(),
        dates,
        loc,
        score: params.score(num_calls, total_duration),
        num_calls,
        total_duration,
    }
}

/// Activity class by monthly usage score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActivityClass {
    Minimal,
    Regular,
    Heavy,
}

impl std::fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActivityClass::Minimal => write!(f, "MINIMAL"),
            ActivityClass::Regular => write!(f, "REGULAR"),
            ActivityClass::Heavy => write!(f, "HEAVY"),
        }
    }
}

impl std::str::FromStr for ActivityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MINIMAL" => Ok(ActivityClass::Minimal),
            "REGULAR" => Ok(ActivityClass::Regular),
            "HEAVY" => Ok(ActivityClass::Heavy),
            other => Err(Error::data(format!("unknown activity class `{other}`"))),
        }
    }
}

/// Splits users into minimal/regular/heavy by two score thresholds:
/// `score < t_low` is minimal, `score > t_high` is heavy, the rest regular.
pub fn classify_activity(
    scores: &BTreeMap<UserId, f64>,
    t_low: f64,
    t_high: f64,
) -> Result<Vec<(UserId, ActivityClass)>> {
    if t_low >= t_high {
        return Err(Error::config("activity thresholds need t_low < t_high"));
    }
    Ok(scores
        .iter()
        .map(|(user, &score)| {
            let class = if score < t_low {
                ActivityClass::Minimal
            } else if score > t_high {
                ActivityClass::Heavy
            } else {
                ActivityClass::Regular
            };
            (user.clone(), class)
        })
        .collect())
}

/// Thresholds at the given quantiles of the score distribution
/// (`sorted[floor(q * n)]`, clamped to the last element).
pub fn quantile_thresholds(scores: &BTreeMap<UserId, f64>, q_low: f64, q_high: f64) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::data("no scores to take quantiles of"));
    }
    if !(0.0..=1.0).contains(&q_low) || !(0.0..=1.0).contains(&q_high) || q_low >= q_high {
        return Err(Error::config("need 0 <= q_low < q_high <= 1"));
    }
    let mut sorted: Vec<f64> = scores.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let pick = |q: f64| sorted[((q * sorted.len() as f64).floor() as usize).min(sorted.len() - 1)];
    Ok((pick(q_low), pick(q_high)))
}

/// Per-slot counts for one day-partitioning window list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotStats {
    pub label: String,
    pub num_calls: u64,
    pub num_active_users: u64,
}

/// Per-date totals.
#[derive(Debug, Clone, PartialEq)]
pub struct DayStats {
    pub num_calls: u64,
    pub num_active_users: u64,
    /// Aggregate usage score of the whole population for the day.
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct TemporalHistogram {
    pub slots: Vec<SlotStats>,
    pub daily: BTreeMap<NaiveDate, DayStats>,
}

/// Counts calls and active users per time slot and per day. The slots must
/// partition the 24-hour day, so each call lands in exactly one slot.
pub fn temporal_histogram(
    dataset: &CdrDataset,
    slots: &[TimeWindow],
    params: &UsageScoreParams,
) -> Result<TemporalHistogram> {
    crate::model::validate_day_partition(slots)?;
    let mut slot_calls = vec![0u64; slots.len()];
    let mut slot_users: Vec<std::collections::BTreeSet<&str>> = vec![Default::default(); slots.len()];
    let mut daily: BTreeMap<NaiveDate, (u64, u64, std::collections::BTreeSet<&str>)> = BTreeMap::new();

    for rec in dataset.records() {
        let slot = slots
            .iter()
            .position(|w| w.contains(rec.time))
            .expect("slots partition the day");
        slot_calls[slot] += 1;
        slot_users[slot].insert(rec.user.as_str());
        let entry = daily.entry(rec.date).or_default();
        entry.0 += 1;
        entry.1 += rec.duration as u64;
        entry.2.insert(rec.user.as_str());
    }

    Ok(TemporalHistogram {
        slots: slots
            .iter()
            .enumerate()
            .map(|(i, w)| SlotStats {
                label: w.label.clone(),
                num_calls: slot_calls[i],
                num_active_users: slot_users[i].len() as u64,
            })
            .collect(),
        daily: daily
            .into_iter()
            .map(|(date, (calls, dur, users))| {
                (
                    date,
                    DayStats {
                        num_calls: calls,
                        num_active_users: users.len() as u64,
                        score: params.score(calls, dur),
                    },
                )
            })
            .collect(),
    })
}

/// Result of weekend detection: the weekday(s) with minimal mean aggregate
/// score. More than one candidate means the data was ambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekendFinding {
    pub candidates: Vec<Weekday>,
    pub mean_score_per_weekday: [f64; 7],
}

impl WeekendFinding {
    pub fn ambiguous(&self) -> bool {
        self.candidates.len() > 1
    }
}

/// Finds the weekday with the lowest mean aggregate daily score. Needs at
/// least 14 consecutive days so every weekday is observed twice.
pub fn detect_weekend(daily_scores: &BTreeMap<NaiveDate, f64>) -> Result<WeekendFinding> {
    if daily_scores.len() < 14 {
        return Err(Error::data(format!(
            "weekend detection needs >= 14 consecutive days, got {}",
            daily_scores.len()
        )));
    }
    let first = *daily_scores.keys().next().expect("non-empty");
    let last = *daily_scores.keys().next_back().expect("non-empty");
    if (last - first).num_days() + 1 != daily_scores.len() as i64 {
        return Err(Error::data("weekend detection needs consecutive days"));
    }

    let mut sum = [0.0f64; 7];
    let mut count = [0u32; 7];
    for (date, score) in daily_scores {
        let w = date.weekday().num_days_from_monday() as usize;
        sum[w] += score;
        count[w] += 1;
    }
    let mut mean = [0.0f64; 7];
    for i in 0..7 {
        mean[i] = if count[i] > 0 { sum[i] / count[i] as f64 } else { f64::INFINITY };
    }
    let min = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * min.abs().max(1.0);
    let candidates: Vec<Weekday> = (0..7)
        .filter(|&i| (mean[i] - min).abs() <= tol)
        .map(|i| weekday_from_monday_index(i as u32))
        .collect();
    Ok(WeekendFinding { candidates, mean_score_per_weekday: mean })
}

pub fn weekday_from_monday_index(i: u32) -> Weekday {
    match i % 7 {
        0 => Weekday::Mon,
        1 => Weekday::Tue,
        2 => Weekday::Wed,
        3 => Weekday::Thu,
        4 => Weekday::Fri,
        5 => Weekday::Sat,
        _ => Weekday::Sun,
    }
}

/// One edge of the reconstructed calling graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeStats {
    pub weight: u32,
    /// Matched call instants and durations, in match order.
    pub matched: Vec<(NaiveDateTime, u32)>,
}

/// Undirected user-user graph weighted by matched-call count.
#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    pub nodes: std::collections::BTreeSet<UserId>,
    edges: BTreeMap<(UserId, UserId), EdgeStats>,
}

impl CallGraph {
    fn ordered(a: &str, b: &str) -> (UserId, UserId) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&EdgeStats> {
        self.edges.get(&Self::ordered(a, b))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(UserId, UserId), &EdgeStats)> {
        self.edges.iter()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().map(|e| e.weight as u64).sum()
    }

    fn record_match(&mut self, a: &str, b: &str, at: NaiveDateTime, duration: u32) {
        let entry = self.edges.entry(Self::ordered(a, b)).or_default();
        entry.weight += 1;
        entry.matched.push((at, duration));
    }
}

/// Cross-references the dataset to recover call endpoints: records from
/// distinct users whose start times differ by at most `time_tolerance_secs`
/// and whose durations are equal form a matched pair. Greedy in canonical
/// record order; each record matches at most once.
pub fn reconstruct_call_graph(dataset: &CdrDataset, time_tolerance_secs: i64) -> CallGraph {
    let records = dataset.records();
    let mut graph = CallGraph::default();
    for rec in records {
        graph.nodes.insert(rec.user.clone());
    }
    let mut matched = vec![false; records.len()];
    for i in 0..records.len() {
        if matched[i] {
            continue;
        }
        let t_i = records[i].at();
        for j in (i + 1)..records.len() {
            let dt = (records[j].at() - t_i).num_seconds();
            if dt > time_tolerance_secs {
                break;
            }
            if matched[j] || records[j].duration != records[i].duration || records[j].user == records[i].user
            {
                continue;
            }
            matched[i] = true;
            matched[j] = true;
            graph.record_match(&records[i].user, &records[j].user, t_i, records[i].duration);
            break;
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_user_logs, parse_cdr_reader};
    use crate::model::ObservationWindow;
    use proptest::prelude::*;

    fn window() -> ObservationWindow {
        ObservationWindow::for_dates(
            NaiveDate::from_ymd_opt(2012, 6, 19).unwrap(),
            NaiveDate::from_ymd_opt(2012, 7, 18).unwrap(),
        )
        .unwrap()
    }

    fn dates() -> (NaiveDate, NaiveDate) {
        window().date_range()
    }

    fn log_with(calls: &[(&str, &str, u32)]) -> UserLog {
        let mut text = String::from("user_id,date,time,duration,lat,lon\n");
        for (date, time, dur) in calls {
            text.push_str(&format!("U,{date},{time},{dur},23.7,90.4\n"));
        }
        let (ds, rej) =
            parse_cdr_reader(std::io::Cursor::new(text), window(), false).unwrap();
        assert!(rej.is_empty());
        build_user_logs(&ds).remove(0)
    }

    #[test]
    fn empty_window_scores_zero() {
        let log = log_with(&[("2012-06-20", "12:00:00", 60)]);
        let night = WindowSpec::TimeOfDay(TimeWindow::from_hm("NIGHT", 0, 0, 6, 0).unwrap());
        let s = usage_score(&log, &night, dates(), None, &UsageScoreParams::default());
        assert_eq!(s.num_calls, 0);
        assert_eq!(s.score, 0.0);
    }

    /// The six published per-user scores, reproduced exactly from their
    /// call-count and duration columns with the default weights.
    #[test]
    fn published_user_scores_reproduced() {
        let params = UsageScoreParams::default();
        let cases: [(u64, u64, i64); 6] = [
            (22, 3469, 80),
            (966, 78429, 2273),
            (165, 18731, 477),
            (50, 6262, 154),
            (26, 4201, 96),
            (101, 23433, 492),
        ];
        for (nc, dur, expected) in cases {
            let score = params.score(nc, dur);
            assert_eq!(round_half_up(score), expected, "NC={nc} dur={dur} got {score}");
        }
    }

    #[test]
    fn score_additive_over_partition_slots() {
        let log = log_with(&[
            ("2012-06-20", "02:00:00", 30),
            ("2012-06-20", "08:10:00", 90),
            ("2012-06-21", "12:00:00", 10),
            ("2012-06-22", "22:45:00", 125),
        ]);
        let params = UsageScoreParams::default();
        let slots = [
            TimeWindow::from_hm("NIGHT", 0, 0, 6, 0).unwrap(),
            TimeWindow::from_hm("MORNING", 6, 0, 10, 0).unwrap(),
            TimeWindow::from_hm("MIDDAY", 10, 0, 17, 0).unwrap(),
            TimeWindow::from_hm("EVENING", 17, 0, 24, 0).unwrap(),
        ];
        let total = usage_score(&log, &WindowSpec::All, dates(), None, &params);
        let sum: f64 = slots
            .iter()
            .map(|w| {
                usage_score(&log, &WindowSpec::TimeOfDay(w.clone()), dates(), None, &params).score
            })
            .sum();
        assert!((total.score - sum).abs() < 1e-9);
    }

    proptest! {
        /// Splitting a window at any interior hour keeps the score additive,
        /// and adding calls never lowers it.
        #[test]
        fn score_additivity_and_monotonicity(split in 1u32..23) {
            let log = log_with(&[
                ("2012-06-20", "02:00:00", 30),
                ("2012-06-20", "08:10:00", 90),
                ("2012-06-21", "12:00:00", 10),
                ("2012-06-21", "16:30:00", 45),
                ("2012-06-22", "22:45:00", 125),
            ]);
            let params = UsageScoreParams::default();
            let left = WindowSpec::TimeOfDay(TimeWindow::from_hm("L", 0, 0, split, 0).unwrap());
            let right = WindowSpec::TimeOfDay(TimeWindow::from_hm("R", split, 0, 24, 0).unwrap());
            let w = usage_score(&log, &WindowSpec::All, dates(), None, &params).score;
            let l = usage_score(&log, &left, dates(), None, &params).score;
            let r = usage_score(&log, &right, dates(), None, &params).score;
            prop_assert!((w - (l + r)).abs() < 1e-9);
            prop_assert!(l <= w + 1e-12 && r <= w + 1e-12);
        }

        /// Scaling both weights and both thresholds by a common positive
        /// factor never changes a classification.
        #[test]
        fn classification_invariant_under_common_rescale(scale in 0.01f64..100.0) {
            let log = log_with(&[
                ("2012-06-20", "02:00:00", 30),
                ("2012-06-20", "08:10:00", 90),
                ("2012-06-21", "12:00:00", 10),
            ]);
            let base = UsageScoreParams::default();
            let scaled = UsageScoreParams {
                omega_c: base.omega_c * scale,
                omega_d: base.omega_d * scale,
                duration_unit: base.duration_unit,
            };
            let mut scores_base = BTreeMap::new();
            let mut scores_scaled = BTreeMap::new();
            for (i, mult) in [1u64, 5, 40].iter().enumerate() {
                let s = usage_score(&log, &WindowSpec::All, dates(), None, &base);
                scores_base.insert(format!("u{i}"), s.score * *mult as f64);
                let s2 = usage_score(&log, &WindowSpec::All, dates(), None, &scaled);
                scores_scaled.insert(format!("u{i}"), s2.score * *mult as f64);
            }
            let (t_low, t_high) = (10.0, 100.0);
            let a = classify_activity(&scores_base, t_low, t_high).unwrap();
            let b = classify_activity(&scores_scaled, t_low * scale, t_high * scale).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_score_is_minimal() {
        let mut scores = BTreeMap::new();
        scores.insert("u".to_string(), 0.0);
        let classes = classify_activity(&scores, 10.0, 100.0).unwrap();
        assert_eq!(classes[0].1, ActivityClass::Minimal);
    }

    #[test]
    fn identical_scores_straddled_by_thresholds_all_regular() {
        let mut scores = BTreeMap::new();
        for i in 0..10 {
            scores.insert(format!("u{i}"), 50.0);
        }
        let classes = classify_activity(&scores, 10.0, 100.0).unwrap();
        assert!(classes.iter().all(|(_, c)| *c == ActivityClass::Regular));
    }

    #[test]
    fn quantile_thresholds_split_to_target_shares() {
        let mut scores = BTreeMap::new();
        for i in 0..500 {
            scores.insert(format!("u{i:03}"), i as f64 * 1.7 + 0.3);
        }
        let (t_low, t_high) = quantile_thresholds(&scores, 0.36, 0.94).unwrap();
        let classes = classify_activity(&scores, t_low, t_high).unwrap();
        let minimal = classes.iter().filter(|(_, c)| *c == ActivityClass::Minimal).count();
        let heavy = classes.iter().filter(|(_, c)| *c == ActivityClass::Heavy).count();
        let regular = classes.len() - minimal - heavy;
        let pct = |n: usize| 100.0 * n as f64 / 500.0;
        assert!((pct(minimal) - 36.0).abs() <= 1.0, "minimal {}", pct(minimal));
        assert!((pct(regular) - 58.0).abs() <= 1.0, "regular {}", pct(regular));
        assert!((pct(heavy) - 6.0).abs() <= 1.0, "heavy {}", pct(heavy));
    }

    fn slots() -> Vec<TimeWindow> {
        vec![
            TimeWindow::from_hm("NIGHT", 0, 0, 6, 0).unwrap(),
            TimeWindow::from_hm("MORNING", 6, 0, 10, 0).unwrap(),
            TimeWindow::from_hm("MIDDAY", 10, 0, 17, 0).unwrap(),
            TimeWindow::from_hm("EVENING", 17, 0, 24, 0).unwrap(),
        ]
    }

    #[test]
    fn single_night_call_lands_in_night_slot_only() {
        let text = "user_id,date,time,duration,lat,lon\nU,2012-06-20,02:00:00,60,23.7,90.4\n";
        let (ds, _) = parse_cdr_reader(std::io::Cursor::new(text.to_string()), window(), false).unwrap();
        let h = temporal_histogram(&ds, &slots(), &UsageScoreParams::default()).unwrap();
        assert_eq!(h.slots[0].num_calls, 1);
        assert_eq!(h.slots[0].num_active_users, 1);
        for s in &h.slots[1..] {
            assert_eq!(s.num_calls, 0);
            assert_eq!(s.num_active_users, 0);
        }
    }

    #[test]
    fn slot_counts_sum_to_dataset_size_and_match_full_scan() {
        let mut text = String::from("user_id,date,time,duration,lat,lon\n");
        let mut state = 3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..400 {
            let u = next() % 30;
            let hour = next() % 24;
            let minute = next() % 60;
            text.push_str(&format!("U{u},2012-06-20,{hour:02}:{minute:02}:00,60,23.7,90.4\n"));
        }
        let (ds, _) = parse_cdr_reader(std::io::Cursor::new(text), window(), false).unwrap();
        let h = temporal_histogram(&ds, &slots(), &UsageScoreParams::default()).unwrap();
        let total: u64 = h.slots.iter().map(|s| s.num_calls).sum();
        assert_eq!(total as usize, ds.len());

        // Independent full scan.
        for (i, w) in slots().iter().enumerate() {
            let brute = ds.records().iter().filter(|r| w.contains(r.time)).count() as u64;
            assert_eq!(h.slots[i].num_calls, brute, "slot {}", w.label);
            let mut users = std::collections::BTreeSet::new();
            for r in ds.records() {
                if w.contains(r.time) {
                    users.insert(&r.user);
                }
            }
            assert_eq!(h.slots[i].num_active_users, users.len() as u64);
        }
    }

    #[test]
    fn overlapping_slots_fatal() {
        let bad = vec![
            TimeWindow::from_hm("A", 0, 0, 7, 0).unwrap(),
            TimeWindow::from_hm("B", 6, 0, 24, 0).unwrap(),
        ];
        let (ds, _) = parse_cdr_reader(
            std::io::Cursor::new("user_id,date,time,duration,lat,lon\n".to_string()),
            window(),
            false,
        )
        .unwrap();
        assert!(temporal_histogram(&ds, &bad, &UsageScoreParams::default()).is_err());
    }

    #[test]
    fn weekend_detected_as_minimum_weekday() {
        let mut daily = BTreeMap::new();
        let start = NaiveDate::from_ymd_opt(2012, 6, 19).unwrap();
        for i in 0..21 {
            let date = start + chrono::Duration::days(i);
            let score = if date.weekday() == Weekday::Fri { 40.0 } else { 100.0 + i as f64 };
            daily.insert(date, score);
        }
        let finding = detect_weekend(&daily).unwrap();
        assert_eq!(finding.candidates, vec![Weekday::Fri]);
        assert!(!finding.ambiguous());
    }

    #[test]
    fn uniform_traffic_is_ambiguous() {
        let mut daily = BTreeMap::new();
        let start = NaiveDate::from_ymd_opt(2012, 6, 18).unwrap();
        for i in 0..14 {
            daily.insert(start + chrono::Duration::days(i), 100.0);
        }
        let finding = detect_weekend(&daily).unwrap();
        assert!(finding.ambiguous());
        assert_eq!(finding.candidates.len(), 7);
    }

    #[test]
    fn too_few_days_rejected() {
        let mut daily = BTreeMap::new();
        let start = NaiveDate::from_ymd_opt(2012, 6, 18).unwrap();
        for i in 0..10 {
            daily.insert(start + chrono::Duration::days(i), 100.0);
        }
        assert!(detect_weekend(&daily).is_err());
    }

    fn graph_from(text: &str) -> CallGraph {
        let (ds, rej) =
            parse_cdr_reader(std::io::Cursor::new(text.to_string()), window(), false).unwrap();
        assert!(rej.is_empty());
        reconstruct_call_graph(&ds, 1)
    }

    #[test]
    fn simultaneous_equal_duration_records_match() {
        let g = graph_from(
            "user_id,date,time,duration,lat,lon\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n\
             B,2012-06-20,10:00:00,60,23.8,90.5\n",
        );
        assert_eq!(g.edge("A", "B").unwrap().weight, 1);
        assert_eq!(g.edge("B", "A").unwrap().weight, 1);
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn single_user_dataset_has_no_edges() {
        let g = graph_from(
            "user_id,date,time,duration,lat,lon\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n",
        );
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn differing_durations_do_not_match() {
        let g = graph_from(
            "user_id,date,time,duration,lat,lon\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n\
             B,2012-06-20,10:00:00,61,23.8,90.5\n",
        );
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn tolerance_bounds_matching() {
        let near = graph_from(
            "user_id,date,time,duration,lat,lon\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n\
             B,2012-06-20,10:00:01,60,23.8,90.5\n",
        );
        assert_eq!(near.num_edges(), 1);
        let far = graph_from(
            "user_id,date,time,duration,lat,lon\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n\
             B,2012-06-20,10:00:02,60,23.8,90.5\n",
        );
        assert_eq!(far.num_edges(), 0);
    }

    #[test]
    fn each_record_matches_at_most_once() {
        // Three candidates at one instant: greedy pairs the first two by
        // user order, the third stays unmatched.
        let g = graph_from(
            "user_id,date,time,duration,lat,lon\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n\
             B,2012-06-20,10:00:00,60,23.8,90.5\n\
             C,2012-06-20,10:00:00,60,23.9,90.6\n",
        );
        assert_eq!(g.total_weight(), 1);
        assert!(g.edge("A", "B").is_some());
        assert!(g.edge("A", "C").is_none());
    }

    /// Naive quadratic implementation of the greedy matching rule (no sorted-
    /// window shortcuts), used as the agreement oracle. Records are already
    /// in canonical (time, user) order, so scanning j > i realizes
    /// "ascending time, ties by user id" directly.
    pub(crate) fn brute_force_graph(dataset: &CdrDataset, tol: i64) -> Vec<(UserId, UserId)> {
        let records = dataset.records();
        let mut used = vec![false; records.len()];
        let mut pairs = Vec::new();
        for i in 0..records.len() {
            if used[i] {
                continue;
            }
            for j in (i + 1)..records.len() {
                if used[j] {
                    continue;
                }
                let dt = (records[j].at() - records[i].at()).num_seconds();
                if dt > tol {
                    continue;
                }
                if records[i].duration == records[j].duration && records[i].user != records[j].user {
                    used[i] = true;
                    used[j] = true;
                    pairs.push(CallGraph::ordered(&records[i].user, &records[j].user));
                    break;
                }
            }
        }
        pairs.sort();
        pairs
    }

    #[test]
    fn greedy_matcher_agrees_with_quadratic_oracle() {
        let mut text = String::from("user_id,date,time,duration,lat,lon\n");
        let mut state = 77u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..600 {
            let u = next() % 25;
            let hour = next() % 24;
            let minute = next() % 60;
            let sec = next() % 60;
            let dur = 10 + next() % 5; // narrow range forces many candidate collisions
            text.push_str(&format!(
                "U{u:02},2012-06-20,{hour:02}:{minute:02}:{sec:02},{dur},23.7,90.4\n"
            ));
        }
        let (ds, _) = parse_cdr_reader(std::io::Cursor::new(text), window(), false).unwrap();
        let fast = reconstruct_call_graph(&ds, 1);
        let mut fast_pairs: Vec<(UserId, UserId)> = Vec::new();
        for ((a, b), stats) in fast.edges() {
            for _ in 0..stats.weight {
                fast_pairs.push((a.clone(), b.clone()));
            }
        }
        fast_pairs.sort();
        let brute = brute_force_graph(&ds, 1);
        assert_eq!(fast_pairs, brute);
        // Conservation: two records per match.
        assert!(2 * fast.total_weight() <= ds.len() as u64);
    }

    #[test]
    fn call_graph_symmetric_without_self_edges() {
        let g = graph_from(
            "user_id,date,time,duration,lat,lon\n\
             A,2012-06-20,10:00:00,60,23.7,90.4\n\
             B,2012-06-20,10:00:00,60,23.8,90.5\n\
             A,2012-06-21,11:00:00,30,23.7,90.4\n\
             B,2012-06-21,11:00:00,30,23.8,90.5\n",
        );
        for ((a, b), stats) in g.edges() {
            assert_ne!(a, b, "no self edges");
            assert!(stats.weight >= 1);
            assert_eq!(stats.weight as usize, stats.matched.len());
        }
        assert_eq!(g.edge("A", "B").unwrap().weight, g.edge("B", "A").unwrap().weight);
    }
}
