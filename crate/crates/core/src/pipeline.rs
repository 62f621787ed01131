//! Stage orchestration against a knowledge base.
//!
//! Each stage reads only tables from layers strictly below its own (the
//! reads go through [`KnowledgeBase::read`] with the stage's layer index,
//! so violations fail loudly) and replaces exactly its own layer's tables:
//!
//! - `ingest` writes layer 0 (`cdr`, `towers`, `rejects`, `run_config`) and
//!   the layer-1 precursor `user_logs`;
//! - `layer1` writes `usage_scores`, `activity_class`, `call_graph`,
//!   `temporal_histogram`, `daily_totals`, `weekend`, `mobility`;
//! - `layer2` writes `user_places`, `pois`, `zone_busyness`;
//! - `layer3` writes `worker_class`, `routes`, `zone_type`;
//! - `layer4` writes `groups`, `transport`, `working_days`, `profiles`;
//! - `layer5` writes `closeness`, `family_friends`.
//!
//! Reports, exports, and scoring run after the pipeline and read freely.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LocKey};
use crate::ingest::{self, UserLog};
use crate::kb::{KnowledgeBase, Layer, Table};
use crate::layer1::{self};
use crate::layer23::{self, ScoreWindows, UserPlaces, WorkerKind};
use crate::layer45::{self, SocialProfile, Transport, WorkingDays};
use crate::model::{
    parse_weekday, weekday_name, CdrDataset, ObservationWindow, TimeWindow, UserId, WindowSpec,
};

pub struct Pipeline {
    pub kb: KnowledgeBase,
    pub cfg: PipelineConfig,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub records: usize,
    pub rejected: usize,
    pub towers: usize,
    pub users: usize,
}

fn layer(i: u8) -> Layer {
    Layer::new(i).expect("static layer index")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::data(format!("bad {what} `{s}`")))
}

fn parse_u64(s: &str, what: &str) -> Result<u64> {
    s.parse().map_err(|_| Error::data(format!("bad {what} `{s}`")))
}

fn loc_of(lat: &str, lon: &str) -> Result<LocKey> {
    Ok(GeoPoint::new(parse_f64(lat, "lat")?, parse_f64(lon, "lon")?).key())
}

fn route_string(points: &[GeoPoint]) -> String {
    points
        .iter()
        .map(|p| format!("{}:{}", p.lat, p.lon))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn parse_route_string(s: &str) -> Result<Vec<LocKey>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('|')
        .map(|part| {
            let (lat, lon) = part
                .split_once(':')
                .ok_or_else(|| Error::data(format!("bad route point `{part}`")))?;
            loc_of(lat, lon)
        })
        .collect()
}

/// Per-user places as reconstructed from layer-2 tables.
#[derive(Debug, Clone)]
pub struct PlacesRow {
    pub home: LocKey,
    pub work: Option<LocKey>,
    /// `(centroid, weight fraction, score_off, score_work, score_total, towers)`
    pub pois: Vec<(GeoPoint, f64, f64, f64, f64, Vec<LocKey>)>,
}

impl Pipeline {
    pub fn new(kb: KnowledgeBase, cfg: PipelineConfig) -> Self {
        Pipeline { kb, cfg }
    }

    fn window(&self) -> Result<ObservationWindow> {
        self.cfg.observation_window()
    }

    // ----- ingest ---------------------------------------------------------

    pub fn ingest(&self, input: &Path) -> Result<IngestReport> {
        let window = self.window()?;
        let (dataset, rejected) = ingest::parse_cdr_file(input, window, self.cfg.dedup)?;
        let logs = ingest::build_user_logs(&dataset);

        self.kb.write(layer(0), "cdr", &ingest::cdr_table(&dataset)?)?;
        self.kb.write(layer(0), "towers", &ingest::towers_table(&dataset)?)?;

        let mut rej = Table::new(&["line", "reason"]);
        for r in &rejected {
            rej.push(vec![r.line.to_string(), r.reason.replace(',', ";")])?;
        }
        self.kb.write(layer(0), "rejects", &rej)?;

        let mut conf = Table::new(&["key", "value"]);
        for (k, v) in self.cfg.to_pairs() {
            conf.push(vec![k, v])?;
        }
        let input_bytes = std::fs::read(input)?;
        let digest = {
            use sha2::{Digest, Sha256};
            let mut h = Sha256::new();
            h.update(&input_bytes);
            h.finalize().iter().map(|b| format!("{b:02x}")).collect::<String>()
        };
        conf.push(vec!["input_sha256".into(), digest])?;
        self.kb.write(layer(0), "run_config", &conf)?;

        self.kb.write(layer(1), "user_logs", &ingest::user_logs_table(&logs)?)?;

        Ok(IngestReport {
            records: dataset.len(),
            rejected: rejected.len(),
            towers: dataset.towers().len(),
            users: logs.len(),
        })
    }

    fn dataset(&self, reader: u8) -> Result<CdrDataset> {
        let table = self.kb.read(layer(0), "cdr", reader)?;
        ingest::dataset_from_table(&table, self.window()?)
    }

    /// Detected weekend day, if layer 1 found one unambiguously.
    fn weekend(&self, reader: u8) -> Result<Option<Weekday>> {
        let table = self.kb.read(layer(1), "weekend", reader)?;
        let (wd, det) = (table.col("weekday")?, table.col("detected")?);
        let detected: Vec<Weekday> = table
            .rows()
            .iter()
            .filter(|r| r[det] == "true")
            .map(|r| parse_weekday(&r[wd]))
            .collect::<Result<_>>()?;
        Ok(if detected.len() == 1 { Some(detected[0]) } else { None })
    }

    fn score_windows(&self, weekend: Option<Weekday>) -> Result<ScoreWindows> {
        Ok(ScoreWindows::new(
            self.cfg.working_hours()?,
            self.cfg.off_hours()?,
            weekend,
            (self.cfg.window_start, self.cfg.window_end),
        ))
    }

    // ----- layer 1 --------------------------------------------------------

    pub fn layer1(&self) -> Result<()> {
        let dataset = self.dataset(1)?;
        let logs = ingest::build_user_logs(&dataset);
        let params = self.cfg.score_params();
        params.validate()?;
        let dates = (self.cfg.window_start, self.cfg.window_end);

        // Daily totals and the weekend they reveal.
        let hist = layer1::temporal_histogram(&dataset, &self.cfg.day_slots(), &params)?;
        let daily_scores: BTreeMap<NaiveDate, f64> =
            hist.daily.iter().map(|(d, s)| (*d, s.score)).collect();
        let finding = layer1::detect_weekend(&daily_scores)?;
        let weekend =
            if finding.candidates.len() == 1 { Some(finding.candidates[0]) } else { None };

        let mut weekend_table = Table::new(&["weekday", "mean_score", "detected"]);
        for i in 0..7 {
            let wd = layer1::weekday_from_monday_index(i as u32);
            weekend_table.push(vec![
                weekday_name(wd).to_string(),
                finding.mean_score_per_weekday[i].to_string(),
                finding.candidates.contains(&wd).to_string(),
            ])?;
        }
        self.kb.write(layer(1), "weekend", &weekend_table)?;

        let mut hist_table = Table::new(&["window", "num_calls", "num_active_users"]);
        for slot in &hist.slots {
            hist_table.push(vec![
                slot.label.clone(),
                slot.num_calls.to_string(),
                slot.num_active_users.to_string(),
            ])?;
        }
        self.kb.write(layer(1), "temporal_histogram", &hist_table)?;

        let mut daily_table =
            Table::new(&["date", "weekday", "num_calls", "num_active_users", "score"]);
        for (date, stats) in &hist.daily {
            daily_table.push(vec![
                date.to_string(),
                weekday_name(date.weekday()).to_string(),
                stats.num_calls.to_string(),
                stats.num_active_users.to_string(),
                stats.score.to_string(),
            ])?;
        }
        self.kb.write(layer(1), "daily_totals", &daily_table)?;

        // Per-user scores over the canonical windows.
        let windows = self.score_windows(weekend)?;
        let night = layer45::night_window_spec();
        let mut scores_table =
            Table::new(&["user_id", "window", "score", "num_calls", "total_duration"]);
        let mut monthly: BTreeMap<UserId, f64> = BTreeMap::new();
        for log in &logs {
            for spec in [&WindowSpec::All, &night, &windows.work, &windows.off] {
                let s = layer1::usage_score(log, spec, dates, None, &params);
                if matches!(spec, WindowSpec::All) {
                    monthly.insert(log.user.clone(), s.score);
                }
                scores_table.push(vec![
                    log.user.clone(),
                    s.window_label,
                    s.score.to_string(),
                    s.num_calls.to_string(),
                    s.total_duration.to_string(),
                ])?;
            }
        }
        self.kb.write(layer(1), "usage_scores", &scores_table)?;

        let (t_low, t_high) =
            layer1::quantile_thresholds(&monthly, self.cfg.quantile_low, self.cfg.quantile_high)?;
        let classes = layer1::classify_activity(&monthly, t_low, t_high)?;
        let mut class_table = Table::new(&["user_id", "class", "score"]);
        for (user, class) in &classes {
            class_table.push(vec![
                user.clone(),
                class.to_string(),
                monthly[user].to_string(),
            ])?;
        }
        self.kb.write(layer(1), "activity_class", &class_table)?;

        // Mobility feature for the traveler label.
        let mut mobility = Table::new(&["user_id", "active_days", "distinct_towers_per_day"]);
        for log in &logs {
            let days: BTreeSet<NaiveDate> = log.entries.iter().map(|e| e.at.date()).collect();
            mobility.push(vec![
                log.user.clone(),
                days.len().to_string(),
                layer45::distinct_towers_per_day(log).to_string(),
            ])?;
        }
        self.kb.write(layer(1), "mobility", &mobility)?;

        // Calling graph: the weight table plus a per-edge stats companion
        // that feeds relationship-strength ranking at layer 5.
        let graph = layer1::reconstruct_call_graph(&dataset, self.cfg.time_tolerance_secs);
        let mut graph_table = Table::new(&["user_a", "user_b", "weight"]);
        let mut stats_table = Table::new(&[
            "user_a",
            "user_b",
            "weight",
            "total_duration",
            "active_days",
            "off_fraction",
        ]);
        for ((a, b), stats) in graph.edges() {
            let total_dur: u64 = stats.matched.iter().map(|(_, d)| *d as u64).sum();
            let days: BTreeSet<NaiveDate> = stats.matched.iter().map(|(at, _)| at.date()).collect();
            let off_count =
                stats.matched.iter().filter(|(at, _)| windows.off.contains(*at)).count();
            graph_table.push(vec![a.clone(), b.clone(), stats.weight.to_string()])?;
            stats_table.push(vec![
                a.clone(),
                b.clone(),
                stats.weight.to_string(),
                total_dur.to_string(),
                days.len().to_string(),
                (off_count as f64 / stats.matched.len().max(1) as f64).to_string(),
            ])?;
        }
        self.kb.write(layer(1), "call_graph", &graph_table)?;
        self.kb.write(layer(1), "call_graph_stats", &stats_table)?;
        Ok(())
    }

    // ----- layer 2 --------------------------------------------------------

    pub fn layer2(&self) -> Result<()> {
        let weekend = self.weekend(2)?;
        let dataset = self.dataset(2)?;
        let logs = ingest::build_user_logs(&dataset);
        let params = self.cfg.score_params();
        let windows = self.score_windows(weekend)?;

        let mut places_table = Table::new(&[
            "user_id",
            "home_lat",
            "home_lon",
            "work_lat",
            "work_lon",
            "n_pois",
        ]);
        let mut pois_table = Table::new(&[
            "user_id",
            "poi",
            "lat",
            "lon",
            "weight",
            "score_off",
            "score_work",
            "score_total",
            "towers",
        ]);
        for log in &logs {
            let pois = layer23::detect_pois(
                log,
                self.cfg.method,
                self.cfg.min_weight_fraction,
                &windows,
                &params,
                user_seed(self.cfg.seed, &log.user),
            )?;
            let (home, work) = layer23::infer_home_work(&pois, self.cfg.merge_radius_km)?;
            let (hp, wp) = (home.point(), work.map(|w| w.point()));
            places_table.push(vec![
                log.user.clone(),
                hp.lat.to_string(),
                hp.lon.to_string(),
                wp.map(|p| p.lat.to_string()).unwrap_or_default(),
                wp.map(|p| p.lon.to_string()).unwrap_or_default(),
                pois.len().to_string(),
            ])?;
            for (i, poi) in pois.iter().enumerate() {
                pois_table.push(vec![
                    log.user.clone(),
                    i.to_string(),
                    poi.centroid.lat.to_string(),
                    poi.centroid.lon.to_string(),
                    poi.weight_fraction.to_string(),
                    poi.score_off.to_string(),
                    poi.score_work.to_string(),
                    poi.score_total.to_string(),
                    poi.towers.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("|"),
                ])?;
            }
        }
        self.kb.write(layer(2), "user_places", &places_table)?;
        self.kb.write(layer(2), "pois", &pois_table)?;

        // Zone busyness per day slot.
        let slots = self.cfg.day_slots();
        let stats = layer23::zone_window_stats(&dataset, &slots);
        let mut busy_table = Table::new(&[
            "lat",
            "lon",
            "window",
            "num_calls",
            "num_active_users",
            "busy_class",
        ]);
        for slot in &slots {
            let rows: Vec<(LocKey, (u64, u64))> = stats
                .iter()
                .filter(|((_, w), _)| *w == slot.label)
                .map(|((z, _), (calls, users))| (*z, (*calls, users.len() as u64)))
                .collect();
            let features: Vec<(u64, u64)> = rows.iter().map(|(_, f)| *f).collect();
            let model = layer23::train_busyness(
                &features,
                self.cfg.busyness_seed_quantile,
                self.cfg.svm_epochs,
                self.cfg.svm_learning_rate,
                self.cfg.svm_regularization,
                self.cfg.seed,
            )?;
            for (zone, (calls, users)) in rows {
                let class = model.classify(calls, users)?;
                let p = zone.point();
                busy_table.push(vec![
                    p.lat.to_string(),
                    p.lon.to_string(),
                    slot.label.clone(),
                    calls.to_string(),
                    users.to_string(),
                    class.to_string(),
                ])?;
            }
        }
        self.kb.write(layer(2), "zone_busyness", &busy_table)?;
        Ok(())
    }

    /// Places rows for a reading stage.
    pub fn places(&self, reader: u8) -> Result<BTreeMap<UserId, PlacesRow>> {
        let places = self.kb.read(layer(2), "user_places", reader)?;
        let pois = self.kb.read(layer(2), "pois", reader)?;
        let (pu, hla, hlo, wla, wlo) = (
            places.col("user_id")?,
            places.col("home_lat")?,
            places.col("home_lon")?,
            places.col("work_lat")?,
            places.col("work_lon")?,
        );
        let mut out: BTreeMap<UserId, PlacesRow> = BTreeMap::new();
        for row in places.rows() {
            let work = if row[wla].is_empty() {
                None
            } else {
                Some(loc_of(&row[wla], &row[wlo])?)
            };
            out.insert(
                row[pu].clone(),
                PlacesRow { home: loc_of(&row[hla], &row[hlo])?, work, pois: Vec::new() },
            );
        }
        let (qu, qla, qlo, qw, qo, qk, qt, qtw) = (
            pois.col("user_id")?,
            pois.col("lat")?,
            pois.col("lon")?,
            pois.col("weight")?,
            pois.col("score_off")?,
            pois.col("score_work")?,
            pois.col("score_total")?,
            pois.col("towers")?,
        );
        for row in pois.rows() {
            if let Some(entry) = out.get_mut(&row[qu]) {
                entry.pois.push((
                    GeoPoint::new(parse_f64(&row[qla], "lat")?, parse_f64(&row[qlo], "lon")?),
                    parse_f64(&row[qw], "weight")?,
                    parse_f64(&row[qo], "score_off")?,
                    parse_f64(&row[qk], "score_work")?,
                    parse_f64(&row[qt], "score_total")?,
                    parse_route_string(&row[qtw])?,
                ));
            }
        }
        Ok(out)
    }

    // ----- layer 3 --------------------------------------------------------

    pub fn layer3(&self) -> Result<()> {
        let weekend = self.weekend(3)?;
        let dataset = self.dataset(3)?;
        let logs = ingest::build_user_logs(&dataset);
        let windows = self.score_windows(weekend)?;
        let places = self.places(3)?;

        let mut worker_table = Table::new(&["user_id", "kind", "commute_km", "bucket"]);
        let mut routes_table = Table::new(&["user_id", "route"]);
        let commute = self.commute_windows()?;
        for log in &logs {
            let row = places
                .get(&log.user)
                .ok_or_else(|| Error::data(format!("user {} missing from layer 2", log.user)))?;
            let user_places = places_row_to_user_places(&log.user, row);
            let work_towers: Vec<LocKey> = match row.work {
                Some(w) => user_places
                    .pois
                    .iter()
                    .filter(|p| p.towers.contains(&w))
                    .flat_map(|p| p.towers.iter().copied())
                    .collect(),
                None => Vec::new(),
            };
            let presence = layer23::build_presence(log, &work_towers, &windows, weekend);
            let wc = layer23::classify_worker(
                &user_places,
                &presence,
                layer23::work_share(&user_places),
                self.cfg.regularity_threshold,
                self.cfg.min_work_share,
            );
            worker_table.push(vec![
                log.user.clone(),
                wc.kind.to_string(),
                wc.commute_km.map(|v| v.to_string()).unwrap_or_default(),
                wc.bucket.map(|b| b.to_string()).unwrap_or_default(),
            ])?;

            if wc.kind == WorkerKind::Regular {
                let work = row.work.expect("regular workers have a workplace");
                let locs: Vec<LocKey> = log
                    .entries
                    .iter()
                    .filter(|e| {
                        let is_weekend = Some(e.at.date().weekday()) == weekend;
                        !is_weekend
                            && commute.iter().any(|w| w.contains(e.at.time()))
                    })
                    .map(|e| e.loc)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let route = layer23::predict_route(row.home, work, &locs, self.cfg.route_k)?;
                routes_table.push(vec![log.user.clone(), route_string(&route.nodes)])?;
            }
        }
        self.kb.write(layer(3), "worker_class", &worker_table)?;
        self.kb.write(layer(3), "routes", &routes_table)?;

        // Zone typing.
        let mut home_count: BTreeMap<LocKey, u32> = BTreeMap::new();
        let mut work_count: BTreeMap<LocKey, u32> = BTreeMap::new();
        for row in places.values() {
            *home_count.entry(row.home).or_default() += 1;
            if let Some(w) = row.work {
                *work_count.entry(w).or_default() += 1;
            }
        }
        let mut off_calls: BTreeMap<LocKey, u64> = BTreeMap::new();
        let mut work_calls: BTreeMap<LocKey, u64> = BTreeMap::new();
        for rec in dataset.records() {
            let key = rec.key();
            if windows.off.contains(rec.at()) {
                *off_calls.entry(key).or_default() += 1;
            }
            if windows.work.contains(rec.at()) {
                *work_calls.entry(key).or_default() += 1;
            }
        }
        let zones: Vec<LocKey> = dataset.towers().iter().copied().collect();
        let features: Vec<layer23::ZoneTypeFeatures> = zones
            .iter()
            .map(|z| layer23::ZoneTypeFeatures {
                home_count: home_count.get(z).copied().unwrap_or(0),
                work_count: work_count.get(z).copied().unwrap_or(0),
                off_ratio: off_calls.get(z).copied().unwrap_or(0) as f64
                    / work_calls.get(z).copied().unwrap_or(0).max(1) as f64,
            })
            .collect();
        let model = layer23::ZoneTypeModel::train(
            &features,
            self.cfg.svm_epochs,
            self.cfg.svm_learning_rate,
            self.cfg.svm_regularization,
            self.cfg.seed,
        )?;
        let mut zone_table = Table::new(&[
            "lat",
            "lon",
            "home_count",
            "work_count",
            "off_ratio",
            "zone_type",
        ]);
        for (zone, f) in zones.iter().zip(&features) {
            let p = zone.point();
            zone_table.push(vec![
                p.lat.to_string(),
                p.lon.to_string(),
                f.home_count.to_string(),
                f.work_count.to_string(),
                f.off_ratio.to_string(),
                model.classify(f)?.to_string(),
            ])?;
        }
        self.kb.write(layer(3), "zone_type", &zone_table)?;
        Ok(())
    }

    fn commute_windows(&self) -> Result<[TimeWindow; 2]> {
        Ok([
            TimeWindow::new(
                "COMMUTE_MORNING",
                self.cfg.commute_morning.0,
                self.cfg.commute_morning.1,
            )?,
            TimeWindow::new(
                "COMMUTE_EVENING",
                self.cfg.commute_evening.0,
                self.cfg.commute_evening.1,
            )?,
        ])
    }

    fn worker_kinds(&self, reader: u8) -> Result<BTreeMap<UserId, (WorkerKind, Option<f64>)>> {
        let table = self.kb.read(layer(3), "worker_class", reader)?;
        let (u, k, c) = (table.col("user_id")?, table.col("kind")?, table.col("commute_km")?);
        let mut out = BTreeMap::new();
        for row in table.rows() {
            let kind: WorkerKind = row[k].parse()?;
            let km = if row[c].is_empty() { None } else { Some(parse_f64(&row[c], "commute")?) };
            out.insert(row[u].clone(), (kind, km));
        }
        Ok(out)
    }

    // ----- layer 4 --------------------------------------------------------

    pub fn layer4(&self) -> Result<()> {
        let weekend = self.weekend(4)?;
        let dataset = self.dataset(4)?;
        let logs = ingest::build_user_logs(&dataset);
        let log_of: BTreeMap<&str, &UserLog> =
            logs.iter().map(|l| (l.user.as_str(), l)).collect();
        let windows = self.score_windows(weekend)?;
        let places = self.places(4)?;
        let workers = self.worker_kinds(4)?;

        // Neighbor and colleague groups.
        let homes: Vec<(UserId, LocKey)> =
            places.iter().map(|(u, p)| (u.clone(), p.home)).collect();
        let worker_sites: Vec<(UserId, LocKey, WorkerKind)> = places
            .iter()
            .filter_map(|(u, p)| {
                let (kind, _) = workers.get(u)?;
                Some((u.clone(), p.work?, *kind))
            })
            .collect();
        let neighbor = layer45::neighbor_groups(&homes, self.cfg.neighbor_radius_km);
        let colleague = layer45::colleague_groups(&worker_sites, self.cfg.neighbor_radius_km);
        let mut groups_table = Table::new(&["group_id", "kind", "user_id"]);
        let mut group_labels: BTreeMap<UserId, Vec<String>> = BTreeMap::new();
        for (i, group) in neighbor.iter().enumerate() {
            let gid = format!("N{i:03}");
            for user in group {
                groups_table.push(vec![gid.clone(), "NEIGHBOR".into(), user.clone()])?;
                group_labels.entry(user.clone()).or_default().push(format!("NEIGHBOR:{gid}"));
            }
        }
        for (i, group) in colleague.iter().enumerate() {
            let gid = format!("C{i:03}");
            for user in group {
                groups_table.push(vec![gid.clone(), "COLLEAGUE".into(), user.clone()])?;
                group_labels.entry(user.clone()).or_default().push(format!("COLLEAGUE:{gid}"));
            }
        }
        self.kb.write(layer(4), "groups", &groups_table)?;

        // Transport from commute-window speed samples.
        let commute = self.commute_windows()?;
        let mut speed_features: BTreeMap<UserId, (f64, f64)> = BTreeMap::new();
        for (user, (kind, _)) in &workers {
            if *kind != WorkerKind::Regular {
                continue;
            }
            let Some(log) = log_of.get(user.as_str()) else { continue };
            let mut samples: Vec<f64> = Vec::new();
            for leg in &commute {
                let mut by_day: BTreeMap<NaiveDate, Vec<&ingest::LogEntry>> = BTreeMap::new();
                for e in &log.entries {
                    if Some(e.at.date().weekday()) != weekend && leg.contains(e.at.time()) {
                        by_day.entry(e.at.date()).or_default().push(e);
                    }
                }
                for entries in by_day.values() {
                    for pair in entries.windows(2) {
                        // Same-tower pairs are idle time, not travel.
                        if pair[0].loc == pair[1].loc {
                            continue;
                        }
                        if let Some(v) = crate::geo::speed_kmh(
                            (pair[0].at, pair[0].loc.point()),
                            (pair[1].at, pair[1].loc.point()),
                        ) {
                            samples.push(v);
                        }
                    }
                }
            }
            if let Some(f) = layer45::speed_features(&samples) {
                speed_features.insert(user.clone(), f);
            }
        }
        // No labeled trips exist at pipeline time, so the bootstrap speed
        // thresholds decide directly; the trained refinement
        // (`TransportModel`) is for callers that do have labels.
        let thresholds = self.cfg.transport_thresholds();
        let mut transport_table = Table::new(&["user_id", "avg_kmh", "peak_kmh", "transport"]);
        let mut transport_of: BTreeMap<UserId, Transport> = BTreeMap::new();
        for (user, (avg, peak)) in &speed_features {
            let label = layer45::classify_transport(&[*avg], &thresholds)
                .expect("avg always present here");
            transport_of.insert(user.clone(), label);
            transport_table.push(vec![
                user.clone(),
                avg.to_string(),
                peak.to_string(),
                label.to_string(),
            ])?;
        }
        self.kb.write(layer(4), "transport", &transport_table)?;

        // Working days for regular workers.
        let mut wdays_table = Table::new(&["user_id", "working", "off"]);
        let mut working_days_of: BTreeMap<UserId, WorkingDays> = BTreeMap::new();
        for (user, (kind, _)) in &workers {
            if *kind != WorkerKind::Regular {
                continue;
            }
            let (Some(log), Some(row)) = (log_of.get(user.as_str()), places.get(user)) else {
                continue;
            };
            let Some(work) = row.work else { continue };
            let towers: Vec<LocKey> = row
                .pois
                .iter()
                .filter(|(_, _, _, _, _, t)| t.contains(&work))
                .flat_map(|(_, _, _, _, _, t)| t.iter().copied())
                .collect();
            let presence = layer23::build_presence(log, &towers, &windows, None);
            if let Ok(wd) = layer45::detect_working_days(&presence.per_weekday) {
                wdays_table.push(vec![
                    user.clone(),
                    wd.working.iter().map(|d| weekday_name(*d)).collect::<Vec<_>>().join("|"),
                    wd.off.iter().map(|d| weekday_name(*d)).collect::<Vec<_>>().join("|"),
                ])?;
                working_days_of.insert(user.clone(), wd);
            }
        }
        self.kb.write(layer(4), "working_days", &wdays_table)?;

        // Special labels from layer-1 scores and mobility.
        let scores = self.kb.read(layer(1), "usage_scores", 4)?;
        let (su, sw, ss) =
            (scores.col("user_id")?, scores.col("window")?, scores.col("score")?);
        let mut night: BTreeMap<UserId, f64> = BTreeMap::new();
        let mut total: BTreeMap<UserId, f64> = BTreeMap::new();
        let mut work_score: BTreeMap<UserId, f64> = BTreeMap::new();
        for row in scores.rows() {
            let v = parse_f64(&row[ss], "score")?;
            match row[sw].as_str() {
                "ALL" => {
                    total.insert(row[su].clone(), v);
                }
                "LATE_NIGHT" => {
                    night.insert(row[su].clone(), v);
                }
                "WORKING_HOURS" => {
                    work_score.insert(row[su].clone(), v);
                }
                _ => {}
            }
        }
        let mobility = self.kb.read(layer(1), "mobility", 4)?;
        let (mu, md) = (mobility.col("user_id")?, mobility.col("distinct_towers_per_day")?);
        let mut towers_per_day: BTreeMap<UserId, f64> = BTreeMap::new();
        for row in mobility.rows() {
            towers_per_day.insert(row[mu].clone(), parse_f64(&row[md], "mobility")?);
        }
        let mut special_inputs: BTreeMap<UserId, layer45::SpecialGroupInputs> = BTreeMap::new();
        for user in places.keys() {
            special_inputs.insert(
                user.clone(),
                layer45::SpecialGroupInputs {
                    night_score: night.get(user).copied().unwrap_or(0.0),
                    total_score: total.get(user).copied().unwrap_or(0.0),
                    work_score: work_score.get(user).copied().unwrap_or(0.0),
                    distinct_towers_per_day: towers_per_day.get(user).copied().unwrap_or(0.0),
                    worker_kind: workers.get(user).map(|(k, _)| *k).unwrap_or(WorkerKind::Irregular),
                },
            );
        }
        let special = layer45::special_groups(&special_inputs, &self.cfg.special_group_params());

        // Optional workplace-area hints from the gazetteer.
        let gazetteer = match &self.cfg.gazetteer {
            Some(path) => layer45::read_gazetteer(path)?,
            None => Vec::new(),
        };

        // Profiles.
        let profile_params = layer45::ProfileParams {
            home_dominance: self.cfg.home_dominance,
            student_poi_share: self.cfg.student_poi_share,
        };
        let mut profiles_table = Table::new(&[
            "user_id",
            "worker_kind",
            "home_lat",
            "home_lon",
            "work_lat",
            "work_lon",
            "commute_km",
            "working_hours",
            "off_day",
            "transport",
            "labels",
        ]);
        for (user, row) in &places {
            let total_score: f64 = row.pois.iter().map(|p| p.4).sum();
            let home_poi_share = row
                .pois
                .iter()
                .filter(|(_, _, _, _, _, t)| t.contains(&row.home))
                .map(|(_, w, _, _, _, _)| *w)
                .fold(0.0, f64::max);
            let day_poi_share = if total_score > 0.0 {
                row.pois
                    .iter()
                    .filter(|(_, _, _, _, _, t)| !t.contains(&row.home))
                    .map(|(_, _, _, sw, _, _)| sw / total_score)
                    .fold(0.0, f64::max)
            } else {
                0.0
            };
            let working_hours = match (workers.get(user), log_of.get(user.as_str())) {
                (Some((WorkerKind::Regular, _)), Some(log)) => {
                    row.work.and_then(|w| workplace_hours(log, w, weekend))
                }
                _ => None,
            };
            let mut special_labels = special.get(user).cloned().unwrap_or_default();
            if let Some(work) = row.work {
                special_labels.extend(layer45::gazetteer_labels(work.point(), &gazetteer));
            }
            let inputs = layer45::ProfileInputs {
                home: Some(row.home),
                workplace: row.work,
                home_poi_share,
                day_poi_share,
                worker: workers.get(user).cloned(),
                working_hours,
                off_day: working_days_of.get(user).and_then(|wd| wd.off_day()),
                transport: transport_of.get(user).copied(),
                group_labels: group_labels.get(user).cloned().unwrap_or_default(),
                special_labels,
            };
            let profile = layer45::build_profile(user, &inputs, &profile_params)?;
            let hp = profile.home.point();
            let wp = profile.workplace.map(|w| w.point());
            profiles_table.push(vec![
                user.clone(),
                profile.worker_kind.to_string(),
                hp.lat.to_string(),
                hp.lon.to_string(),
                wp.map(|p| p.lat.to_string()).unwrap_or_default(),
                wp.map(|p| p.lon.to_string()).unwrap_or_default(),
                profile.commute_km.map(|v| v.to_string()).unwrap_or_default(),
                profile
                    .working_hours
                    .as_ref()
                    .map(|w| format!("{}-{}", w.start.format("%H:%M"), w.end.format("%H:%M")))
                    .unwrap_or_default(),
                profile.off_day.map(weekday_name).unwrap_or("").to_string(),
                profile.transport.map(|t| t.to_string()).unwrap_or_default(),
                profile.social_groups.join("|"),
            ])?;
        }
        self.kb.write(layer(4), "profiles", &profiles_table)?;
        Ok(())
    }

    // ----- layer 5 --------------------------------------------------------

    pub fn layer5(&self) -> Result<()> {
        let places = self.places(5)?;
        let graph = self.kb.read(layer(1), "call_graph_stats", 5)?;
        let (ga, gb, gw, gd, gdy, gof) = (
            graph.col("user_a")?,
            graph.col("user_b")?,
            graph.col("weight")?,
            graph.col("total_duration")?,
            graph.col("active_days")?,
            graph.col("off_fraction")?,
        );
        let mut rows = Vec::with_capacity(graph.len());
        for row in graph.rows() {
            rows.push((
                (row[ga].clone(), row[gb].clone()),
                (
                    parse_u64(&row[gw], "weight")? as u32,
                    parse_u64(&row[gd], "duration")?,
                    parse_u64(&row[gdy], "days")? as usize,
                ),
                parse_f64(&row[gof], "off fraction")?,
            ));
        }
        let strength = layer45::CallStrengthIndex::from_rows(rows);

        let homes: Vec<(UserId, LocKey)> =
            places.iter().map(|(u, p)| (u.clone(), p.home)).collect();
        let works: Vec<(UserId, LocKey)> = places
            .iter()
            .filter_map(|(u, p)| p.work.map(|w| (u.clone(), w)))
            .collect();
        let poi_centroids: BTreeMap<UserId, Vec<GeoPoint>> = places
            .iter()
            .map(|(u, p)| (u.clone(), p.pois.iter().map(|(c, ..)| *c).collect()))
            .collect();
        let pairs = layer45::candidate_pairs(
            &strength,
            &homes,
            &works,
            &poi_centroids,
            self.cfg.neighbor_radius_km,
            self.cfg.poi_share_radius_km,
        );

        let factors = self.cfg.closeness_factors();
        let mut closeness_table = Table::new(&[
            "user_a",
            "user_b",
            "score",
            "call_strength",
            "co_home",
            "co_work",
            "co_poi_count",
            "off_hours_fraction",
        ]);
        for ((a, b), c) in &pairs {
            closeness_table.push(vec![
                a.clone(),
                b.clone(),
                layer45::closeness(c, &factors).to_string(),
                c.call_strength.to_string(),
                (c.co_home as u8).to_string(),
                (c.co_work as u8).to_string(),
                c.co_poi_count.to_string(),
                c.off_hours_fraction.to_string(),
            ])?;
        }
        self.kb.write(layer(5), "closeness", &closeness_table)?;

        let ff = layer45::detect_family_friends(&pairs, &self.cfg.social_thresholds());
        let mut ff_table = Table::new(&["group_id", "kind", "user_id"]);
        for (i, group) in ff.families.iter().enumerate() {
            for user in group {
                ff_table.push(vec![format!("FAM{i:03}"), "FAMILY".into(), user.clone()])?;
            }
        }
        for (i, group) in ff.friend_groups.iter().enumerate() {
            for user in group {
                ff_table.push(vec![format!("FRD{i:03}"), "FRIEND".into(), user.clone()])?;
            }
        }
        self.kb.write(layer(5), "family_friends", &ff_table)?;
        Ok(())
    }

    // ----- orchestration and consumers -------------------------------------

    pub fn run_all(&self, input: &Path) -> Result<IngestReport> {
        let report = self.ingest(input)?;
        self.layer1()?;
        self.layer2()?;
        self.layer3()?;
        self.layer4()?;
        self.layer5()?;
        Ok(report)
    }

    pub fn run_stage(&self, stage: &str, input: Option<&Path>) -> Result<()> {
        match stage {
            "ingest" => {
                let input =
                    input.ok_or_else(|| Error::config("ingest needs --input".to_string()))?;
                self.ingest(input)?;
            }
            "layer1" => self.layer1()?,
            "layer2" => self.layer2()?,
            "layer3" => self.layer3()?,
            "layer4" => self.layer4()?,
            "layer5" => self.layer5()?,
            other => return Err(Error::config(format!("unknown stage `{other}`"))),
        }
        Ok(())
    }

    /// Social profiles re-assembled from the final knowledge base (the
    /// layer-4 rows plus layer-5 family/friend labels).
    pub fn profiles(&self) -> Result<BTreeMap<UserId, SocialProfile>> {
        let table = self.kb.read_any(layer(4), "profiles")?;
        let (u, wk, hla, hlo, wla, wlo, ck, wh, od, tr, lb) = (
            table.col("user_id")?,
            table.col("worker_kind")?,
            table.col("home_lat")?,
            table.col("home_lon")?,
            table.col("work_lat")?,
            table.col("work_lon")?,
            table.col("commute_km")?,
            table.col("working_hours")?,
            table.col("off_day")?,
            table.col("transport")?,
            table.col("labels")?,
        );
        let mut out = BTreeMap::new();
        for row in table.rows() {
            let labels: Vec<String> = if row[lb].is_empty() {
                Vec::new()
            } else {
                row[lb].split('|').map(|s| s.to_string()).collect()
            };
            let working_hours = if row[wh].is_empty() {
                None
            } else {
                let (s, e) = row[wh]
                    .split_once('-')
                    .ok_or_else(|| Error::data(format!("bad hours `{}`", row[wh])))?;
                let parse_t = |v: &str| {
                    chrono::NaiveTime::parse_from_str(v, "%H:%M")
                        .map_err(|_| Error::data(format!("bad time `{v}`")))
                };
                Some(TimeWindow::new("WORKING_HOURS", parse_t(s)?, parse_t(e)?)?)
            };
            out.insert(
                row[u].clone(),
                SocialProfile {
                    user: row[u].clone(),
                    worker_kind: row[wk].parse()?,
                    home: loc_of(&row[hla], &row[hlo])?,
                    workplace: if row[wla].is_empty() {
                        None
                    } else {
                        Some(loc_of(&row[wla], &row[wlo])?)
                    },
                    commute_km: if row[ck].is_empty() {
                        None
                    } else {
                        Some(parse_f64(&row[ck], "commute")?)
                    },
                    working_hours,
                    off_day: if row[od].is_empty() {
                        None
                    } else {
                        Some(parse_weekday(&row[od])?)
                    },
                    transport: if row[tr].is_empty() { None } else { Some(row[tr].parse()?) },
                    social_groups: labels,
                },
            );
        }
        // Merge in layer-5 family/friend memberships.
        let ff = self.kb.read_any(layer(5), "family_friends")?;
        let (g, k, us) = (ff.col("group_id")?, ff.col("kind")?, ff.col("user_id")?);
        for row in ff.rows() {
            if let Some(profile) = out.get_mut(&row[us]) {
                profile.social_groups.push(format!("{}:{}", row[k], row[g]));
                profile.social_groups.sort();
                profile.social_groups.dedup();
            }
        }
        Ok(out)
    }

    /// Plain-text report mirroring the published result tables.
    pub fn report(&self) -> Result<String> {
        let mut out = String::new();

        let hist = self.kb.read_any(layer(1), "temporal_histogram")?;
        out.push_str("User activities in different time periods of the day\n");
        out.push_str(&format!("{:<12} {:>12} {:>18}\n", "Time period", "No of Calls", "No of Active Users"));
        let (w, c, u) =
            (hist.col("window")?, hist.col("num_calls")?, hist.col("num_active_users")?);
        for row in hist.rows() {
            out.push_str(&format!("{:<12} {:>12} {:>18}\n", row[w], row[c], row[u]));
        }

        let weekend = self.kb.read_any(layer(1), "weekend")?;
        let (wd, det) = (weekend.col("weekday")?, weekend.col("detected")?);
        let days: Vec<&str> = weekend
            .rows()
            .iter()
            .filter(|r| r[det] == "true")
            .map(|r| r[wd].as_str())
            .collect();
        out.push_str(&format!(
            "\nDetected weekend: {}{}\n",
            days.join(", "),
            if days.len() > 1 { " (ambiguous)" } else { "" }
        ));

        let classes = self.kb.read_any(layer(1), "activity_class")?;
        let cc = classes.col("class")?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for row in classes.rows() {
            *counts.entry(row[cc].as_str()).or_default() += 1;
        }
        let total: usize = counts.values().sum();
        out.push_str("\nClassifying users based on call activity\n");
        out.push_str(&format!("{:<14} {:>12} {:>10}\n", "Group", "No of Users", "Percentage"));
        for class in ["MINIMAL", "REGULAR", "HEAVY"] {
            let n = counts.get(class).copied().unwrap_or(0);
            out.push_str(&format!(
                "{:<14} {:>12} {:>10.1}\n",
                format!("{} users", class.to_lowercase()),
                n,
                100.0 * n as f64 / total.max(1) as f64
            ));
        }

        let workers = self.kb.read_any(layer(3), "worker_class")?;
        let wk = workers.col("kind")?;
        let bu = workers.col("bucket")?;
        let regular = workers.rows().iter().filter(|r| r[wk] == "REGULAR").count();
        let irregular = workers.len() - regular;
        out.push_str("\nWorking pattern of the users\n");
        out.push_str(&format!(
            "{:<38} {:>8} {:>8.1} Percent\n",
            "User with irregular working pattern",
            irregular,
            100.0 * irregular as f64 / workers.len().max(1) as f64
        ));
        out.push_str(&format!(
            "{:<38} {:>8} {:>8.1} Percent\n",
            "User with regular working pattern",
            regular,
            100.0 * regular as f64 / workers.len().max(1) as f64
        ));

        out.push_str("\nTraveling distance to workplace for regular workers\n");
        out.push_str(&format!("{:<12} {:>10} {:>10}\n", "Distance", "No of User", "Percentage"));
        let mut bucket_counts: BTreeMap<String, usize> = BTreeMap::new();
        for row in workers.rows() {
            if !row[bu].is_empty() {
                *bucket_counts.entry(row[bu].clone()).or_default() += 1;
            }
        }
        let bucketed: usize = bucket_counts.values().sum();
        for bucket in crate::layer23::DistanceBucket::all() {
            let n = bucket_counts.get(&bucket.to_string()).copied().unwrap_or(0);
            out.push_str(&format!(
                "{:<12} {:>10} {:>10.2}\n",
                bucket.to_string(),
                n,
                100.0 * n as f64 / bucketed.max(1) as f64
            ));
        }
        Ok(out)
    }

    /// Accuracy report against a truth file.
    pub fn score(&self, truth_path: &Path) -> Result<crate::synth::AccuracyReport> {
        let truth = crate::synth::read_truth_file(truth_path)?;
        crate::synth::score_predictions(&truth, self)
    }
}

fn user_seed(seed: u64, user: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in user.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    seed ^ h
}

fn places_row_to_user_places(user: &str, row: &PlacesRow) -> UserPlaces {
    let pois = row
        .pois
        .iter()
        .map(|(centroid, weight, off, work, total, towers)| crate::layer23::Poi {
            centroid: *centroid,
            weight_fraction: *weight,
            towers: towers.clone(),
            score_off: *off,
            score_work: *work,
            score_total: *total,
            dominant_off: row.home,
            dominant_work: row.work.unwrap_or(row.home),
        })
        .collect();
    UserPlaces { user: user.to_string(), pois, home: row.home, workplace: row.work }
}

/// Earliest and latest workplace call times rounded to the hour.
fn workplace_hours(log: &UserLog, work: LocKey, weekend: Option<Weekday>) -> Option<TimeWindow> {
    use chrono::Timelike;
    let mut earliest: Option<chrono::NaiveTime> = None;
    let mut latest: Option<chrono::NaiveTime> = None;
    for e in &log.entries {
        if e.loc != work || Some(e.at.date().weekday()) == weekend {
            continue;
        }
        let t = e.at.time();
        if earliest.map(|v| t < v).unwrap_or(true) {
            earliest = Some(t);
        }
        if latest.map(|v| t > v).unwrap_or(true) {
            latest = Some(t);
        }
    }
    let (start, end) = (earliest?, latest?);
    let start_h = start.hour();
    let end_h = (end.hour() + 1).min(24) % 24;
    if start_h == end_h {
        return None;
    }
    TimeWindow::from_hm("WORKING_HOURS", start_h, 0, end_h, 0).ok()
}
