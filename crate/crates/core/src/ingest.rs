//! Raw CDR parsing and per-user call logs.
//!
//! Input files are plain CSV with the exact header
//! `user_id,date,time,duration,lat,lon`. Malformed or out-of-window lines
//! are reported with their line numbers, never silently dropped. Duplicate
//! lines are kept by default; real CDR can legitimately contain identical
//! consecutive events, and exact deduplication is available behind a flag.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use crate::error::{Error, Result};
use crate::geo::LocKey;
use crate::kb::Table;
use crate::model::{validate_record, CdrDataset, CdrRecord, ObservationWindow, UserId};

/// Required header of a raw CDR file.
pub const RAW_HEADER: &str = "user_id,date,time,duration,lat,lon";

/// A rejected input line and the first rule it violated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    /// 1-based physical line number (the header is line 1).
    pub line: usize,
    pub reason: String,
}

/// One call in a user's log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub at: NaiveDateTime,
    pub duration: u32,
    pub loc: LocKey,
}

/// Per-location aggregate within one user's log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocTally {
    pub num_calls: u64,
    pub total_duration: u64,
}

/// Everything one user did, time-ordered, with per-tower tallies.
#[derive(Debug, Clone)]
pub struct UserLog {
    pub user: UserId,
    pub entries: Vec<LogEntry>,
    pub tallies: BTreeMap<LocKey, LocTally>,
}

impl UserLog {
    pub fn num_calls(&self) -> usize {
        self.entries.len()
    }

    pub fn total_duration(&self) -> u64 {
        self.entries.iter().map(|e| e.duration as u64).sum()
    }
}

/// Parses a raw CDR file into a validated dataset plus per-line rejections.
pub fn parse_cdr_file(
    path: impl AsRef<Path>,
    window: ObservationWindow,
    dedup: bool,
) -> Result<(CdrDataset, Vec<RejectedLine>)> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Data(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    parse_cdr_reader(std::io::BufReader::new(file), window, dedup)
}

/// Reader-based variant of [`parse_cdr_file`].
pub fn parse_cdr_reader<R: BufRead>(
    reader: R,
    window: ObservationWindow,
    dedup: bool,
) -> Result<(CdrDataset, Vec<RejectedLine>)> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::data("empty CDR file: missing header")),
    };
    if header.trim_end() != RAW_HEADER {
        return Err(Error::data(format!(
            "header mismatch: expected `{RAW_HEADER}`, found `{header}`"
        )));
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match parse_line(&line, &window) {
            Ok(rec) => records.push(rec),
            Err(reason) => rejected.push(RejectedLine { line: line_no, reason }),
        }
    }

    if dedup {
        records.sort_by(crate::model::canonical_cmp);
        records.dedup();
    }
    let dataset = CdrDataset::new(records, window)?;
    Ok((dataset, rejected))
}

fn parse_line(line: &str, window: &ObservationWindow) -> std::result::Result<CdrRecord, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let user = fields[0].trim();
    if user.is_empty() {
        return Err("empty user id".to_string());
    }
    let date = NaiveDate::parse_from_str(fields[1].trim(), "%Y-%m-%d")
        .map_err(|_| "invalid date".to_string())?;
    let time = NaiveTime::parse_from_str(fields[2].trim(), "%H:%M:%S")
        .map_err(|_| "invalid time".to_string())?;
    let duration: u32 = fields[3].trim().parse().map_err(|_| "invalid duration".to_string())?;
    let lat: f64 = fields[4].trim().parse().map_err(|_| "invalid latitude".to_string())?;
    let lon: f64 = fields[5].trim().parse().map_err(|_| "invalid longitude".to_string())?;
    let rec = CdrRecord { user: user.to_string(), date, time, duration, lat, lon };
    validate_record(&rec, window).map_err(|r| r.to_string())?;
    Ok(rec)
}

/// Builds one time-ordered log per distinct user. The union of all entries
/// is exactly the dataset's record set.
pub fn build_user_logs(dataset: &CdrDataset) -> Vec<UserLog> {
    let mut by_user: BTreeMap<&str, UserLog> = BTreeMap::new();
    for rec in dataset.records() {
        let log = by_user.entry(rec.user.as_str()).or_insert_with(|| UserLog {
            user: rec.user.clone(),
            entries: Vec::new(),
            tallies: BTreeMap::new(),
        });
        let key = rec.key();
        log.entries.push(LogEntry { at: rec.at(), duration: rec.duration, loc: key });
        let tally = log.tallies.entry(key).or_default();
        tally.num_calls += 1;
        tally.total_duration += rec.duration as u64;
    }
    let mut logs: Vec<UserLog> = by_user.into_values().collect();
    for log in &mut logs {
        // Dataset order is (instant, user, duration, loc); within one user
        // that is exactly the canonical entry order.
        log.entries.sort_by(|a, b| {
            a.at.cmp(&b.at).then(a.duration.cmp(&b.duration)).then(a.loc.cmp(&b.loc))
        });
    }
    logs
}

/// `layer1/user_logs` rows: one per (user, tower).
pub fn user_logs_table(logs: &[UserLog]) -> Result<Table> {
    let mut table = Table::new(&["user_id", "lat", "lon", "num_calls", "total_duration"]);
    for log in logs {
        for (loc, tally) in &log.tallies {
            let p = loc.point();
            table.push(vec![
                log.user.clone(),
                p.lat.to_string(),
                p.lon.to_string(),
                tally.num_calls.to_string(),
                tally.total_duration.to_string(),
            ])?;
        }
    }
    Ok(table)
}

/// `layer0/cdr` rows: the validated dataset in canonical order.
pub fn cdr_table(dataset: &CdrDataset) -> Result<Table> {
    let mut table = Table::new(&["user_id", "date", "time", "duration", "lat", "lon"]);
    for rec in dataset.records() {
        table.push(vec![
            rec.user.clone(),
            rec.date.to_string(),
            rec.time.format("%H:%M:%S").to_string(),
            rec.duration.to_string(),
            rec.lat.to_string(),
            rec.lon.to_string(),
        ])?;
    }
    Ok(table)
}

/// Rebuilds a dataset from a `layer0/cdr` table.
pub fn dataset_from_table(table: &Table, window: ObservationWindow) -> Result<CdrDataset> {
    let (u, d, t, dur, la, lo) = (
        table.col("user_id")?,
        table.col("date")?,
        table.col("time")?,
        table.col("duration")?,
        table.col("lat")?,
        table.col("lon")?,
    );
    let mut records = Vec::with_capacity(table.len());
    for row in table.rows() {
        records.push(CdrRecord {
            user: row[u].clone(),
            date: row[d].parse().map_err(|_| Error::data("bad date in cdr table"))?,
            time: NaiveTime::parse_from_str(&row[t], "%H:%M:%S")
                .map_err(|_| Error::data("bad time in cdr table"))?,
            duration: row[dur].parse().map_err(|_| Error::data("bad duration in cdr table"))?,
            lat: row[la].parse().map_err(|_| Error::data("bad lat in cdr table"))?,
            lon: row[lo].parse().map_err(|_| Error::data("bad lon in cdr table"))?,
        });
    }
    CdrDataset::new(records, window)
}

/// `layer0/towers` rows.
pub fn towers_table(dataset: &CdrDataset) -> Result<Table> {
    let mut table = Table::new(&["lat", "lon"]);
    for key in dataset.towers() {
        let p = key.point();
        table.push(vec![p.lat.to_string(), p.lon.to_string()])?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window() -> ObservationWindow {
        ObservationWindow::for_dates(
            NaiveDate::from_ymd_opt(2012, 6, 19).unwrap(),
            NaiveDate::from_ymd_opt(2012, 7, 18).unwrap(),
        )
        .unwrap()
    }

    fn parse(text: &str) -> Result<(CdrDataset, Vec<RejectedLine>)> {
        parse_cdr_reader(std::io::Cursor::new(text.to_string()), window(), false)
    }

    #[test]
    fn three_valid_lines_parse_cleanly() {
        let text = "user_id,date,time,duration,lat,lon\n\
                    AAH86JAa9,2012-06-19,09:15:02,120,23.789,90.408\n\
                    AAH86JAa9,2012-06-19,19:30:00,60,23.789,90.408\n\
                    AAH86JAa7,2012-06-20,10:00:00,0,23.796,90.364\n";
        let (ds, rejected) = parse(text).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(rejected.is_empty());
        assert_eq!(ds.towers().len(), 2);
    }

    #[test]
    fn invalid_time_rejected_with_line_number() {
        let text = "user_id,date,time,duration,lat,lon\n\
                    X,2012-06-19,25:00:00,10,23.7,90.4\n";
        let (ds, rejected) = parse(text).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(rejected, vec![RejectedLine { line: 2, reason: "invalid time".into() }]);
    }

    #[test]
    fn out_of_window_line_is_a_rejection_not_an_error() {
        let text = "user_id,date,time,duration,lat,lon\n\
                    X,2012-08-01,10:00:00,10,23.7,90.4\n";
        let (ds, rejected) = parse(text).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(rejected[0].reason, "instant outside window");
    }

    #[test]
    fn header_mismatch_is_fatal() {
        let text = "user,when,duration\nX,1,2\n";
        let err = parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected `user_id,date,time,duration,lat,lon`"), "{msg}");
        assert!(msg.contains("found `user,when,duration`"), "{msg}");
    }

    #[test]
    fn many_distinct_towers_counted_exactly() {
        let mut text = String::from("user_id,date,time,duration,lat,lon\n");
        for i in 0..1360 {
            let lat = 23.0 + (i / 40) as f64 * 0.01;
            let lon = 90.0 + (i % 40) as f64 * 0.01;
            text.push_str(&format!("U{i},2012-06-20,10:00:00,5,{lat},{lon}\n"));
        }
        let (ds, rejected) = parse(&text).unwrap();
        assert!(rejected.is_empty());
        assert_eq!(ds.towers().len(), 1360);
    }

    #[test]
    fn same_location_calls_aggregate_into_one_tally() {
        let text = "user_id,date,time,duration,lat,lon\n\
                    A,2012-06-19,09:00:00,100,23.7,90.4\n\
                    A,2012-06-19,10:00:00,40,23.7,90.4\n";
        let (ds, _) = parse(text).unwrap();
        let logs = build_user_logs(&ds);
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].tallies.len(), 1);
        let tally = logs[0].tallies.values().next().unwrap();
        assert_eq!(tally.num_calls, 2);
        assert_eq!(tally.total_duration, 140);
    }

    #[test]
    fn empty_dataset_yields_no_logs() {
        let (ds, _) = parse("user_id,date,time,duration,lat,lon\n").unwrap();
        assert!(build_user_logs(&ds).is_empty());
    }

    #[test]
    fn conservation_of_entries_and_tallies() {
        let mut text = String::from("user_id,date,time,duration,lat,lon\n");
        let mut state = 42u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..500 {
            let u = next() % 40;
            let day = 19 + (next() % 10);
            let hour = next() % 24;
            let dur = next() % 600;
            let lat = 23.7 + (next() % 20) as f64 * 0.003;
            let lon = 90.3 + (next() % 20) as f64 * 0.003;
            text.push_str(&format!("U{u},2012-06-{day},{hour:02}:15:00,{dur},{lat},{lon}\n"));
        }
        let (ds, rejected) = parse(&text).unwrap();
        assert!(rejected.is_empty());
        let logs = build_user_logs(&ds);
        let total_entries: usize = logs.iter().map(|l| l.entries.len()).sum();
        assert_eq!(total_entries, ds.len());
        let total_tally_calls: u64 =
            logs.iter().flat_map(|l| l.tallies.values()).map(|t| t.num_calls).sum();
        assert_eq!(total_tally_calls as usize, ds.len());
        let total_tally_dur: u64 =
            logs.iter().flat_map(|l| l.tallies.values()).map(|t| t.total_duration).sum();
        let expect_dur: u64 = ds.records().iter().map(|r| r.duration as u64).sum();
        assert_eq!(total_tally_dur, expect_dur);
    }

    #[test]
    fn dedup_flag_drops_exact_duplicates_only() {
        let text = "user_id,date,time,duration,lat,lon\n\
                    A,2012-06-19,09:00:00,100,23.7,90.4\n\
                    A,2012-06-19,09:00:00,100,23.7,90.4\n\
                    A,2012-06-19,09:00:00,101,23.7,90.4\n";
        let (kept, _) =
            parse_cdr_reader(std::io::Cursor::new(text.to_string()), window(), false).unwrap();
        assert_eq!(kept.len(), 3);
        let (deduped, _) =
            parse_cdr_reader(std::io::Cursor::new(text.to_string()), window(), true).unwrap();
        assert_eq!(deduped.len(), 2);
    }

    proptest! {
        /// Shuffling input lines must not change the parsed dataset or logs.
        #[test]
        fn order_independence(seed in 0u64..1000) {
            let mut lines: Vec<String> = Vec::new();
            let mut state = seed.wrapping_add(1);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            };
            for _ in 0..60 {
                let u = next() % 6;
                let day = 19 + (next() % 5);
                let hour = next() % 24;
                let dur = next() % 100;
                lines.push(format!("U{u},2012-06-{day},{hour:02}:00:00,{dur},23.7,90.4"));
            }
            let header = "user_id,date,time,duration,lat,lon";
            let forward = format!("{header}\n{}\n", lines.join("\n"));
            let mut shuffled = lines.clone();
            shuffled.reverse();
            // Deterministic mid-shuffle: swap pseudo-random pairs.
            for i in 0..shuffled.len() {
                let j = (next() as usize) % shuffled.len();
                shuffled.swap(i, j);
            }
            let backward = format!("{header}\n{}\n", shuffled.join("\n"));
            let (ds_a, _) = parse(&forward).unwrap();
            let (ds_b, _) = parse(&backward).unwrap();
            prop_assert_eq!(ds_a.records(), ds_b.records());
            let logs_a = build_user_logs(&ds_a);
            let logs_b = build_user_logs(&ds_b);
            prop_assert_eq!(logs_a.len(), logs_b.len());
            for (a, b) in logs_a.iter().zip(&logs_b) {
                prop_assert_eq!(&a.user, &b.user);
                prop_assert_eq!(&a.entries, &b.entries);
                prop_assert_eq!(&a.tallies, &b.tallies);
            }
        }
    }
}
