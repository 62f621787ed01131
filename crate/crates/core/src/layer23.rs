//! Layers 2 and 3: POI discovery, home/workplace inference, BUSY/IDLE zone
//! state, worker-pattern classification, commute distances, route
//! prediction, and residential/commercial/miscellaneous zone typing.
//!
//! POIs are clusters of a user's call towers (weighted by call count); each
//! sizable cluster keeps the usage scores of its member towers in working
//! hours and off-hours. The home is the POI with the highest off-hours
//! score, the workplace candidate the one with the highest working-hours
//! score; a candidate whose centroid sits within the merge radius of home is
//! treated as "no distinct workplace". The concrete point reported for home
//! and workplace is the POI's dominant member tower under the respective
//! window, which keeps predictions on actual tower coordinates.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::geo::{build_route_graph, haversine_km, shortest_route, GeoPoint, LocKey, Route};
use crate::ingest::UserLog;
use crate::layer1::{usage_score, UsageScoreParams};
use crate::ml::{
    em_cluster, train_linear, xmeans_cluster, LinearModel, OneVsRest, Standardizer, WeightedPoint,
};
use crate::model::{TimeWindow, UserId, WindowSpec};

/// Which clustering backend finds the POIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMethod {
    Em,
    Xmeans,
}

impl ClusterMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(ClusterMethod::Em),
            "xmeans" => Ok(ClusterMethod::Xmeans),
            other => Err(Error::config(format!("unknown clustering method `{other}`"))),
        }
    }
}

/// The working/off-hours frame scores are computed in.
#[derive(Debug, Clone)]
pub struct ScoreWindows {
    pub work: WindowSpec,
    pub off: WindowSpec,
    pub dates: (NaiveDate, NaiveDate),
}

impl ScoreWindows {
    pub fn new(
        working_hours: TimeWindow,
        off_hours: TimeWindow,
        weekend: Option<chrono::Weekday>,
        dates: (NaiveDate, NaiveDate),
    ) -> Self {
        ScoreWindows {
            work: WindowSpec::WorkTime { hours: working_hours, weekend },
            off: WindowSpec::OffTime { hours: off_hours, weekend },
            dates,
        }
    }
}

/// A place of interest: a sizable cluster of one user's call towers.
#[derive(Debug, Clone)]
pub struct Poi {
    pub centroid: GeoPoint,
    /// Fraction of the user's calls carried by this cluster.
    pub weight_fraction: f64,
    pub towers: Vec<LocKey>,
    pub score_off: f64,
    pub score_work: f64,
    pub score_total: f64,
    /// Member tower with the highest off-hours score.
    pub dominant_off: LocKey,
    /// Member tower with the highest working-hours score.
    pub dominant_work: LocKey,
}

/// Per-user places: POIs plus the selected home and workplace towers.
#[derive(Debug, Clone)]
pub struct UserPlaces {
    pub user: UserId,
    pub pois: Vec<Poi>,
    pub home: LocKey,
    pub workplace: Option<LocKey>,
}

/// Clusters a user's towers and keeps every cluster whose call-weight
/// fraction reaches `min_weight_fraction`. Single-tower users yield exactly
/// one POI. If no cluster is sizable the heaviest one is kept, so every
/// non-empty log produces at least one POI.
pub fn detect_pois(
    log: &UserLog,
    method: ClusterMethod,
    min_weight_fraction: f64,
    windows: &ScoreWindows,
    params: &UsageScoreParams,
    seed: u64,
) -> Result<Vec<Poi>> {
    if log.entries.is_empty() {
        return Err(Error::data(format!("empty log for user {}", log.user)));
    }
    let towers: Vec<LocKey> = log.tallies.keys().copied().collect();
    let points: Vec<WeightedPoint> = towers
        .iter()
        .map(|k| {
            let p = k.point();
            WeightedPoint::new(p.lat, p.lon, log.tallies[k].num_calls as f64)
        })
        .collect();
    let total_weight: f64 = points.iter().map(|p| p.weight).sum();

    let k_cap = towers.len().min(8);
    let assignment: Vec<usize> = if towers.len() == 1 {
        vec![0]
    } else {
        match method {
            ClusterMethod::Xmeans => xmeans_cluster(&points, 1, k_cap, seed)?.assignment,
            ClusterMethod::Em => {
                // Pick k by BIC over the mixture fit.
                let n = total_weight;
                let mut best: Option<(f64, Vec<usize>)> = None;
                for k in 1..=k_cap {
                    let model = em_cluster(&points, k, 100, 1e-6, seed)?;
                    let p = 5.0 * k as f64 - 1.0;
                    let bic = model.quality - (p / 2.0) * n.ln();
                    if best.as_ref().map(|(b, _)| bic > *b).unwrap_or(true) {
                        best = Some((bic, model.assignment));
                    }
                }
                best.expect("at least k=1 fits").1
            }
        }
    };

    let k = assignment.iter().copied().max().unwrap_or(0) + 1;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        groups[c].push(i);
    }

    let mut pois = Vec::new();
    for group in groups.iter().filter(|g| !g.is_empty()) {
        let weight: f64 = group.iter().map(|&i| points[i].weight).sum();
        let fraction = weight / total_weight;
        let mut members: Vec<LocKey> = group.iter().map(|&i| towers[i]).collect();
        members.sort();
        pois.push(build_poi(log, members, fraction, windows, params));
    }
    pois.sort_by(|a, b| {
        b.weight_fraction
            .total_cmp(&a.weight_fraction)
            .then(a.dominant_off.cmp(&b.dominant_off))
    });
    let sizable: Vec<Poi> =
        pois.iter().filter(|p| p.weight_fraction >= min_weight_fraction).cloned().collect();
    Ok(if sizable.is_empty() { vec![pois.remove(0)] } else { sizable })
}

fn build_poi(
    log: &UserLog,
    members: Vec<LocKey>,
    weight_fraction: f64,
    windows: &ScoreWindows,
    params: &UsageScoreParams,
) -> Poi {
    let mut score_off = 0.0;
    let mut score_work = 0.0;
    let mut score_total = 0.0;
    let mut per_tower: Vec<(LocKey, f64, f64, u64)> = Vec::with_capacity(members.len());
    let mut wsum = 0.0;
    let mut lat = 0.0;
    let mut lon = 0.0;
    for &tower in &members {
        let off = usage_score(log, &windows.off, windows.dates, Some(tower), params);
        let work = usage_score(log, &windows.work, windows.dates, Some(tower), params);
        let total = usage_score(log, &WindowSpec::All, windows.dates, Some(tower), params);
        score_off += off.score;
        score_work += work.score;
        score_total += total.score;
        per_tower.push((tower, off.score, work.score, total.num_calls));
        let p = tower.point();
        let w = total.num_calls as f64;
        lat += p.lat * w;
        lon += p.lon * w;
        wsum += w;
    }
    let centroid = if wsum > 0.0 {
        GeoPoint::new(lat / wsum, lon / wsum)
    } else {
        members[0].point()
    };
    let dominant = |key: fn(&(LocKey, f64, f64, u64)) -> f64| -> LocKey {
        let mut sorted = per_tower.clone();
        sorted.sort_by(|a, b| {
            key(b).total_cmp(&key(a)).then(b.3.cmp(&a.3)).then(a.0.cmp(&b.0))
        });
        sorted[0].0
    };
    Poi {
        centroid,
        weight_fraction,
        towers: members,
        score_off,
        score_work,
        score_total,
        dominant_off: dominant(|t| t.1),
        dominant_work: dominant(|t| t.2),
    }
}

/// Selects home and workplace from the POI list. Home is the POI with the
/// highest off-hours score; the workplace candidate is the one with the
/// highest working-hours score, suppressed when its centroid lies within
/// `merge_radius_km` of the home POI's centroid (the "workplace is also
/// home" case). Ties break by higher total score, then lexicographically
/// smaller centroid.
pub fn infer_home_work(pois: &[Poi], merge_radius_km: f64) -> Result<(LocKey, Option<LocKey>)> {
    if pois.is_empty() {
        return Err(Error::data("no POIs to infer places from"));
    }
    let pick = |score: &dyn Fn(&Poi) -> f64| -> usize {
        let mut best = 0;
        for i in 1..pois.len() {
            let (a, b) = (&pois[i], &pois[best]);
            let ord = score(a)
                .total_cmp(&score(b))
                .then(a.score_total.total_cmp(&b.score_total))
                .then_with(|| {
                    b.centroid
                        .key()
                        .cmp(&a.centroid.key())
                });
            if ord == std::cmp::Ordering::Greater {
                best = i;
            }
        }
        best
    };
    let home_idx = pick(&|p: &Poi| p.score_off);
    let work_idx = pick(&|p: &Poi| p.score_work);
    let home = pois[home_idx].dominant_off;
    if pois[work_idx].score_work <= 0.0 {
        return Ok((home, None));
    }
    let d = haversine_km(pois[home_idx].centroid, pois[work_idx].centroid);
    if d < merge_radius_km {
        return Ok((home, None));
    }
    Ok((home, Some(pois[work_idx].dominant_work)))
}

/// BUSY/IDLE state of a zone in one time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Busy {
    Busy,
    Idle,
}

impl std::fmt::Display for Busy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Busy::Busy => write!(f, "BUSY"),
            Busy::Idle => write!(f, "IDLE"),
        }
    }
}

/// Trained busyness decision for one time window.
#[derive(Debug, Clone)]
pub enum BusynessModel {
    Trained { model: LinearModel<Busy>, scaler: Standardizer },
    /// All zones identical; no boundary exists.
    Degenerate(Busy),
}

impl BusynessModel {
    pub fn degenerate(&self) -> bool {
        matches!(self, BusynessModel::Degenerate(_))
    }

    pub fn classify(&self, num_calls: u64, num_active_users: u64) -> Result<Busy> {
        match self {
            BusynessModel::Degenerate(class) => Ok(*class),
            BusynessModel::Trained { model, scaler } => {
                model.predict(&scaler.transform(&[num_calls as f64, num_active_users as f64]))
            }
        }
    }
}

/// Trains the BUSY/IDLE model for one window from decile seed labels: the
/// top `1 - seed_quantile` of zones by calls seed BUSY, the bottom
/// `seed_quantile` seed IDLE, and the boundary generalizes to the rest.
pub fn train_busyness(
    zones: &[(u64, u64)],
    seed_quantile: f64,
    epochs: usize,
    learning_rate: f64,
    regularization: f64,
    seed: u64,
) -> Result<BusynessModel> {
    if zones.is_empty() {
        return Err(Error::data("no zones to train on"));
    }
    let mut by_calls: Vec<usize> = (0..zones.len()).collect();
    by_calls.sort_by_key(|&i| (zones[i].0, zones[i].1, i));
    let lo_end = ((zones.len() as f64) * seed_quantile).ceil() as usize;
    let hi_start = ((zones.len() as f64) * (1.0 - seed_quantile)).floor() as usize;
    if zones[by_calls[0]] == zones[by_calls[zones.len() - 1]] {
        let class = if zones[by_calls[0]].0 == 0 { Busy::Idle } else { Busy::Busy };
        return Ok(BusynessModel::Degenerate(class));
    }
    let rows: Vec<Vec<f64>> =
        zones.iter().map(|&(c, u)| vec![c as f64, u as f64]).collect();
    let scaler = Standardizer::fit(&rows)?;
    let mut samples: Vec<(Vec<f64>, Busy)> = Vec::new();
    for &i in by_calls.iter().skip(hi_start.max(lo_end)) {
        samples.push((scaler.transform(&rows[i]), Busy::Busy));
    }
    for &i in by_calls.iter().take(lo_end.max(1)) {
        samples.push((scaler.transform(&rows[i]), Busy::Idle));
    }
    let model = train_linear(&samples, epochs, learning_rate, regularization, seed)?;
    Ok(BusynessModel::Trained { model, scaler })
}

/// Regular/irregular working pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerKind {
    Regular,
    Irregular,
}

impl std::fmt::Display for WorkerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WorkerKind::Regular => write!(f, "REGULAR"),
            WorkerKind::Irregular => write!(f, "IRREGULAR"),
        }
    }
}

impl std::str::FromStr for WorkerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "REGULAR" => Ok(WorkerKind::Regular),
            "IRREGULAR" => Ok(WorkerKind::Irregular),
            other => Err(Error::data(format!("unknown worker kind `{other}`"))),
        }
    }
}

/// Commute distance bucket, right-exclusive edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DistanceBucket {
    D0to2,
    D2to5,
    D5to10,
    D10to20,
    D20to100,
}

impl DistanceBucket {
    pub fn from_km(km: f64) -> Option<Self> {
        match km {
            k if k < 0.0 => None,
            k if k < 2.0 => Some(DistanceBucket::D0to2),
            k if k < 5.0 => Some(DistanceBucket::D2to5),
            k if k < 10.0 => Some(DistanceBucket::D5to10),
            k if k < 20.0 => Some(DistanceBucket::D10to20),
            k if k < 100.0 => Some(DistanceBucket::D20to100),
            _ => None,
        }
    }

    pub fn all() -> [DistanceBucket; 5] {
        [
            DistanceBucket::D0to2,
            DistanceBucket::D2to5,
            DistanceBucket::D5to10,
            DistanceBucket::D10to20,
            DistanceBucket::D20to100,
        ]
    }
}

impl std::fmt::Display for DistanceBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceBucket::D0to2 => write!(f, "0-2 km"),
            DistanceBucket::D2to5 => write!(f, "2-5 km"),
            DistanceBucket::D5to10 => write!(f, "5-10 km"),
            DistanceBucket::D10to20 => write!(f, "10-20 km"),
            DistanceBucket::D20to100 => write!(f, "20-100 km"),
        }
    }
}

/// Per-day workplace presence during working hours.
#[derive(Debug, Clone, Default)]
pub struct PresenceTrace {
    pub observed_working_days: u32,
    pub present_days: u32,
    /// `(present, observed)` occurrences per weekday, Monday first.
    pub per_weekday: [(u32, u32); 7],
}

impl PresenceTrace {
    pub fn attendance(&self) -> f64 {
        if self.observed_working_days == 0 {
            0.0
        } else {
            self.present_days as f64 / self.observed_working_days as f64
        }
    }
}

/// Scans a log for working-hours presence at the given workplace towers,
/// one observation per calendar day in the range (weekend day excluded).
pub fn build_presence(
    log: &UserLog,
    workplace_towers: &[LocKey],
    windows: &ScoreWindows,
    weekend: Option<chrono::Weekday>,
) -> PresenceTrace {
    use chrono::Datelike;
    let mut present_dates: std::collections::BTreeSet<NaiveDate> = Default::default();
    for e in &log.entries {
        if workplace_towers.contains(&e.loc) && windows.work.contains(e.at) {
            present_dates.insert(e.at.date());
        }
    }
    let mut trace = PresenceTrace::default();
    let mut date = windows.dates.0;
    while date <= windows.dates.1 {
        let wd = date.weekday().num_days_from_monday() as usize;
        let is_weekend = Some(date.weekday()) == weekend;
        let present = present_dates.contains(&date);
        trace.per_weekday[wd].1 += 1;
        if present {
            trace.per_weekday[wd].0 += 1;
        }
        if !is_weekend {
            trace.observed_working_days += 1;
            if present {
                trace.present_days += 1;
            }
        }
        date += chrono::Duration::days(1);
    }
    trace
}

/// Worker classification result.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerClass {
    pub user: UserId,
    pub kind: WorkerKind,
    pub commute_km: Option<f64>,
    pub bucket: Option<DistanceBucket>,
}

/// Classifies a user as a regular or irregular worker.
///
/// The decision works over the features `(has distinct workplace,
/// attendance fraction, workplace share of total score)`: no workplace
/// forces IRREGULAR; otherwise REGULAR requires attendance of at least
/// `regularity_threshold` and a workplace score share of at least
/// `min_work_share`. The share test keeps high-mobility users whose
/// scattered daytime calls graze some cluster on most days from passing as
/// regular commuters.
pub fn classify_worker(
    places: &UserPlaces,
    presence: &PresenceTrace,
    work_poi_share: f64,
    regularity_threshold: f64,
    min_work_share: f64,
) -> WorkerClass {
    let regular = places.workplace.is_some()
        && presence.attendance() >= regularity_threshold
        && work_poi_share >= min_work_share;
    if !regular {
        return WorkerClass {
            user: places.user.clone(),
            kind: WorkerKind::Irregular,
            commute_km: None,
            bucket: None,
        };
    }
    let work = places.workplace.expect("checked above");
    let km = haversine_km(places.home.point(), work.point());
    WorkerClass {
        user: places.user.clone(),
        kind: WorkerKind::Regular,
        commute_km: Some(km),
        bucket: DistanceBucket::from_km(km),
    }
}

/// Workplace share of the user's total score: the work POI's working-hours
/// score over the total score of all POIs.
pub fn work_share(places: &UserPlaces) -> f64 {
    let total: f64 = places.pois.iter().map(|p| p.score_total).sum();
    if total <= 0.0 {
        return 0.0;
    }
    match places.workplace {
        None => 0.0,
        Some(w) => places
            .pois
            .iter()
            .filter(|p| p.towers.contains(&w))
            .map(|p| p.score_work)
            .fold(0.0, f64::max)
            / total,
    }
}

/// Shortest-path route over the user's commute-window call locations plus
/// home and workplace. With no en-route calls the route is the direct
/// two-point connection.
pub fn predict_route(
    home: LocKey,
    work: LocKey,
    commute_locs: &[LocKey],
    k: usize,
) -> Result<Route> {
    if commute_locs.iter().all(|&l| l == home || l == work) {
        let (a, b) = (home.point(), work.point());
        return Ok(Route { nodes: vec![a, b], total_km: haversine_km(a, b) });
    }
    let pts: Vec<GeoPoint> = commute_locs.iter().map(LocKey::point).collect();
    let graph = build_route_graph(&pts, home.point(), work.point(), k)?;
    shortest_route(&graph)
}

/// City zone character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoneType {
    Residential,
    Commercial,
    Miscellaneous,
}

impl std::fmt::Display for ZoneType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ZoneType::Residential => write!(f, "RESIDENTIAL"),
            ZoneType::Commercial => write!(f, "COMMERCIAL"),
            ZoneType::Miscellaneous => write!(f, "MISCELLANEOUS"),
        }
    }
}

/// Features for zone typing.
#[derive(Debug, Clone, Copy)]
pub struct ZoneTypeFeatures {
    pub home_count: u32,
    pub work_count: u32,
    /// Off-hours calls over working-hours calls at the zone.
    pub off_ratio: f64,
}

impl ZoneTypeFeatures {
    fn row(&self) -> Vec<f64> {
        vec![self.home_count as f64, self.work_count as f64, self.off_ratio]
    }
}

/// Seed label from the home/work balance: a zone whose home count is more
/// than double its work count seeds RESIDENTIAL, less than half seeds
/// COMMERCIAL, anything in between MISCELLANEOUS.
pub fn seed_zone_type(f: &ZoneTypeFeatures) -> ZoneType {
    match (f.home_count, f.work_count) {
        (0, 0) => ZoneType::Miscellaneous,
        (h, 0) if h > 0 => ZoneType::Residential,
        (0, _) => ZoneType::Commercial,
        (h, w) => {
            let ratio = h as f64 / w as f64;
            if ratio > 2.0 {
                ZoneType::Residential
            } else if ratio < 0.5 {
                ZoneType::Commercial
            } else {
                ZoneType::Miscellaneous
            }
        }
    }
}

/// One-vs-rest zone typing trained on the seed labels. When the seeds do
/// not cover all three classes the seed rule itself is used directly.
#[derive(Debug, Clone)]
pub enum ZoneTypeModel {
    Trained { model: OneVsRest<ZoneType>, scaler: Standardizer },
    RuleOnly,
}

impl ZoneTypeModel {
    pub fn train(
        features: &[ZoneTypeFeatures],
        epochs: usize,
        learning_rate: f64,
        regularization: f64,
        seed: u64,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::data("no zones to train on"));
        }
        let labels: Vec<ZoneType> = features.iter().map(seed_zone_type).collect();
        let classes = [ZoneType::Residential, ZoneType::Commercial, ZoneType::Miscellaneous];
        if classes.iter().any(|c| !labels.contains(c)) {
            return Ok(ZoneTypeModel::RuleOnly);
        }
        let rows: Vec<Vec<f64>> = features.iter().map(|f| f.row()).collect();
        let scaler = Standardizer::fit(&rows)?;
        let samples: Vec<(Vec<f64>, ZoneType)> = rows
            .iter()
            .zip(&labels)
            .map(|(r, l)| (scaler.transform(r), *l))
            .collect();
        let model =
            OneVsRest::train(&samples, &classes, epochs, learning_rate, regularization, seed)?;
        Ok(ZoneTypeModel::Trained { model, scaler })
    }

    pub fn classify(&self, f: &ZoneTypeFeatures) -> Result<ZoneType> {
        match self {
            ZoneTypeModel::RuleOnly => Ok(seed_zone_type(f)),
            ZoneTypeModel::Trained { model, scaler } => model.predict(&scaler.transform(&f.row())),
        }
    }
}

/// Zone activity per (tower, window): calls and distinct users.
pub fn zone_window_stats(
    dataset: &crate::model::CdrDataset,
    slots: &[TimeWindow],
) -> BTreeMap<(LocKey, String), (u64, std::collections::BTreeSet<UserId>)> {
    let mut out: BTreeMap<(LocKey, String), (u64, std::collections::BTreeSet<UserId>)> =
        BTreeMap::new();
    for rec in dataset.records() {
        for w in slots {
            if w.contains(rec.time) {
                let entry = out.entry((rec.key(), w.label.clone())).or_default();
                entry.0 += 1;
                entry.1.insert(rec.user.clone());
            }
        }
    }
    // Zones silent in a window still get a row.
    for tower in dataset.towers() {
        for w in slots {
            out.entry((*tower, w.label.clone())).or_default();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_user_logs, parse_cdr_reader};
    use crate::model::ObservationWindow;
    use chrono::Weekday;

    fn window() -> ObservationWindow {
        ObservationWindow::for_dates(
            NaiveDate::from_ymd_opt(2012, 6, 19).unwrap(),
            NaiveDate::from_ymd_opt(2012, 7, 18).unwrap(),
        )
        .unwrap()
    }

    fn score_windows() -> ScoreWindows {
        ScoreWindows::new(
            TimeWindow::from_hm("W", 9, 0, 17, 0).unwrap(),
            TimeWindow::from_hm("O", 19, 0, 7, 0).unwrap(),
            Some(Weekday::Fri),
            window().date_range(),
        )
    }

    fn log_from(lines: &[String]) -> UserLog {
        let mut text = String::from("user_id,date,time,duration,lat,lon\n");
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
        let (ds, rej) = parse_cdr_reader(std::io::Cursor::new(text), window(), false).unwrap();
        assert!(rej.is_empty());
        build_user_logs(&ds).remove(0)
    }

    /// Weekday evening+daytime calls at two towers ~3.3 km apart.
    fn worker_log() -> UserLog {
        let mut lines = Vec::new();
        for day in 19..=28 {
            // 2012-06-22 is a Friday; keep it home-only like a real off day.
            let date = format!("2012-06-{day:02}");
            let is_fri = day == 22;
            for h in [20u32, 21] {
                lines.push(format!("U,{date},{h}:15:00,120,23.750,90.380"));
            }
            if !is_fri {
                for h in [10u32, 12, 15] {
                    lines.push(format!("U,{date},{h}:00:00,300,23.780,90.380"));
                }
            }
        }
        log_from(&lines)
    }

    #[test]
    fn single_tower_user_yields_one_poi_at_that_tower() {
        let log = log_from(&[
            "U,2012-06-20,10:00:00,60,23.75,90.38".to_string(),
            "U,2012-06-20,20:00:00,60,23.75,90.38".to_string(),
        ]);
        for method in [ClusterMethod::Em, ClusterMethod::Xmeans] {
            let pois =
                detect_pois(&log, method, 0.1, &score_windows(), &UsageScoreParams::default(), 1)
                    .unwrap();
            assert_eq!(pois.len(), 1);
            assert_eq!(pois[0].towers, vec![GeoPoint::new(23.75, 90.38).key()]);
            assert!((pois[0].weight_fraction - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn worker_towers_split_into_two_pois() {
        let log = worker_log();
        for method in [ClusterMethod::Em, ClusterMethod::Xmeans] {
            let pois =
                detect_pois(&log, method, 0.1, &score_windows(), &UsageScoreParams::default(), 1)
                    .unwrap();
            assert_eq!(pois.len(), 2, "method {method:?}");
            let towers: std::collections::BTreeSet<LocKey> =
                pois.iter().flat_map(|p| p.towers.iter().copied()).collect();
            assert!(towers.contains(&GeoPoint::new(23.750, 90.380).key()));
            assert!(towers.contains(&GeoPoint::new(23.780, 90.380).key()));
        }
    }

    #[test]
    fn small_stray_cluster_dropped_by_weight_threshold() {
        let mut lines = Vec::new();
        for day in 19..=28 {
            for h in [9u32, 11, 14, 20, 21] {
                lines.push(format!("U,2012-06-{day:02},{h:02}:00:00,60,23.750,90.380"));
            }
        }
        // One stray call far away: 1/51 of weight, under the 5% threshold.
        lines.push("U,2012-06-20,13:00:00,60,23.830,90.460".to_string());
        let log = log_from(&lines);
        let pois =
            detect_pois(&log, ClusterMethod::Xmeans, 0.05, &score_windows(), &UsageScoreParams::default(), 1)
                .unwrap();
        assert!(
            !pois.iter().any(|p| p.towers.contains(&GeoPoint::new(23.830, 90.460).key())),
            "stray tower should not form a sizable POI"
        );
    }

    #[test]
    fn single_poi_means_home_and_no_workplace() {
        let log = log_from(&[
            "U,2012-06-20,10:00:00,60,23.75,90.38".to_string(),
            "U,2012-06-20,20:00:00,60,23.75,90.38".to_string(),
        ]);
        let pois =
            detect_pois(&log, ClusterMethod::Em, 0.1, &score_windows(), &UsageScoreParams::default(), 1)
                .unwrap();
        let (home, work) = infer_home_work(&pois, 1.0).unwrap();
        assert_eq!(home, GeoPoint::new(23.75, 90.38).key());
        assert_eq!(work, None, "same place in both windows reads as home only");
    }

    #[test]
    fn worker_gets_home_and_distinct_workplace() {
        let log = worker_log();
        let pois =
            detect_pois(&log, ClusterMethod::Em, 0.1, &score_windows(), &UsageScoreParams::default(), 1)
                .unwrap();
        let (home, work) = infer_home_work(&pois, 1.0).unwrap();
        assert_eq!(home, GeoPoint::new(23.750, 90.380).key());
        assert_eq!(work, Some(GeoPoint::new(23.780, 90.380).key()));
    }

    #[test]
    fn nearby_work_candidate_merges_into_home() {
        // Day calls at a tower only 300 m from home: no distinct workplace.
        let mut lines = Vec::new();
        for day in 19..=28 {
            lines.push(format!("U,2012-06-{day:02},20:00:00,120,23.7500,90.3800"));
            lines.push(format!("U,2012-06-{day:02},10:00:00,120,23.7527,90.3800"));
        }
        let log = log_from(&lines);
        let pois =
            detect_pois(&log, ClusterMethod::Xmeans, 0.1, &score_windows(), &UsageScoreParams::default(), 1)
                .unwrap();
        let (_, work) = infer_home_work(&pois, 1.0).unwrap();
        assert_eq!(work, None);
    }

    #[test]
    fn busyness_dominated_zone_is_idle() {
        let mut zones: Vec<(u64, u64)> = (0..100)
            .map(|i| (10 + i as u64 * 7, 5 + i as u64 * 3))
            .collect();
        zones.push((0, 0));
        let model = train_busyness(&zones, 0.1, 300, 0.05, 1e-4, 1).unwrap();
        assert!(!model.degenerate());
        assert_eq!(model.classify(0, 0).unwrap(), Busy::Idle);
        // Top-decile zone classifies busy.
        assert_eq!(model.classify(703, 302).unwrap(), Busy::Busy);
    }

    #[test]
    fn busyness_all_equal_zones_degenerate() {
        let zones = vec![(5u64, 2u64); 40];
        let model = train_busyness(&zones, 0.1, 100, 0.05, 1e-4, 1).unwrap();
        assert!(model.degenerate());
        assert_eq!(model.classify(5, 2).unwrap(), Busy::Busy);
        let silent = vec![(0u64, 0u64); 40];
        let model = train_busyness(&silent, 0.1, 100, 0.05, 1e-4, 1).unwrap();
        assert_eq!(model.classify(0, 0).unwrap(), Busy::Idle);
    }

    fn places_with(home: LocKey, work: Option<LocKey>) -> UserPlaces {
        let poi = |tower: LocKey, off: f64, workscore: f64| Poi {
            centroid: tower.point(),
            weight_fraction: 0.5,
            towers: vec![tower],
            score_off: off,
            score_work: workscore,
            score_total: off + workscore,
            dominant_off: tower,
            dominant_work: tower,
        };
        let mut pois = vec![poi(home, 100.0, 10.0)];
        if let Some(w) = work {
            pois.push(poi(w, 5.0, 80.0));
        }
        UserPlaces { user: "U".into(), pois, home, workplace: work }
    }

    #[test]
    fn no_workplace_forces_irregular() {
        let places = places_with(GeoPoint::new(23.75, 90.38).key(), None);
        let presence = PresenceTrace {
            observed_working_days: 20,
            present_days: 20,
            per_weekday: [(3, 3); 7],
        };
        let wc = classify_worker(&places, &presence, 0.0, 0.5, 0.25);
        assert_eq!(wc.kind, WorkerKind::Irregular);
        assert_eq!(wc.commute_km, None);
        assert_eq!(wc.bucket, None);
    }

    #[test]
    fn published_commute_lands_in_first_bucket() {
        // 0.72 km home-to-work distance.
        let home = GeoPoint::new(23.789, 90.408).key();
        let work = GeoPoint::new(23.787, 90.415).key();
        let places = places_with(home, Some(work));
        let presence = PresenceTrace {
            observed_working_days: 20,
            present_days: 18,
            per_weekday: [(3, 3); 7],
        };
        let wc = classify_worker(&places, &presence, work_share(&places), 0.5, 0.25);
        assert_eq!(wc.kind, WorkerKind::Regular);
        let km = wc.commute_km.unwrap();
        assert!((km - 0.72).abs() <= 0.05, "got {km}");
        assert_eq!(wc.bucket, Some(DistanceBucket::D0to2));
    }

    #[test]
    fn low_attendance_is_irregular() {
        let home = GeoPoint::new(23.75, 90.38).key();
        let work = GeoPoint::new(23.78, 90.38).key();
        let places = places_with(home, Some(work));
        let presence = PresenceTrace {
            observed_working_days: 20,
            present_days: 6,
            per_weekday: [(1, 3); 7],
        };
        let wc = classify_worker(&places, &presence, work_share(&places), 0.5, 0.25);
        assert_eq!(wc.kind, WorkerKind::Irregular);
    }

    #[test]
    fn bucket_edges_are_right_exclusive() {
        assert_eq!(DistanceBucket::from_km(0.0), Some(DistanceBucket::D0to2));
        assert_eq!(DistanceBucket::from_km(1.999), Some(DistanceBucket::D0to2));
        assert_eq!(DistanceBucket::from_km(2.0), Some(DistanceBucket::D2to5));
        assert_eq!(DistanceBucket::from_km(5.0), Some(DistanceBucket::D5to10));
        assert_eq!(DistanceBucket::from_km(10.0), Some(DistanceBucket::D10to20));
        assert_eq!(DistanceBucket::from_km(20.0), Some(DistanceBucket::D20to100));
        assert_eq!(DistanceBucket::from_km(100.0), None);
    }

    #[test]
    fn route_without_enroute_calls_is_direct() {
        let home = GeoPoint::new(23.75, 90.38).key();
        let work = GeoPoint::new(23.78, 90.40).key();
        let r = predict_route(home, work, &[], 4).unwrap();
        assert_eq!(r.nodes.len(), 2);
        assert!((r.total_km - haversine_km(home.point(), work.point())).abs() < 1e-9);
    }

    #[test]
    fn route_total_at_least_direct_distance() {
        let home = GeoPoint::new(23.75, 90.38).key();
        let work = GeoPoint::new(23.80, 90.43).key();
        let mids: Vec<LocKey> = (1..6)
            .map(|i| {
                GeoPoint::new(23.75 + 0.01 * i as f64, 90.38 + 0.011 * i as f64 + 0.002).key()
            })
            .collect();
        let r = predict_route(home, work, &mids, 4).unwrap();
        assert!(r.total_km >= haversine_km(home.point(), work.point()) - 1e-9);
        assert_eq!(r.nodes.first().copied(), Some(home.point()));
        assert_eq!(r.nodes.last().copied(), Some(work.point()));
    }

    #[test]
    fn zone_type_seed_rules() {
        let resid = ZoneTypeFeatures { home_count: 10, work_count: 2, off_ratio: 3.0 };
        let comm = ZoneTypeFeatures { home_count: 1, work_count: 9, off_ratio: 0.3 };
        let misc = ZoneTypeFeatures { home_count: 3, work_count: 3, off_ratio: 1.0 };
        assert_eq!(seed_zone_type(&resid), ZoneType::Residential);
        assert_eq!(seed_zone_type(&comm), ZoneType::Commercial);
        assert_eq!(seed_zone_type(&misc), ZoneType::Miscellaneous);
        assert_eq!(
            seed_zone_type(&ZoneTypeFeatures { home_count: 0, work_count: 0, off_ratio: 1.0 }),
            ZoneType::Miscellaneous
        );
    }

    #[test]
    fn zone_type_model_recovers_clear_profiles() {
        let mut features = Vec::new();
        let mut state = 5u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..40 {
            features.push(ZoneTypeFeatures {
                home_count: 6 + (next() % 8) as u32,
                work_count: (next() % 2) as u32,
                off_ratio: 2.5 + (next() % 100) as f64 / 50.0,
            });
            features.push(ZoneTypeFeatures {
                home_count: (next() % 2) as u32,
                work_count: 6 + (next() % 8) as u32,
                off_ratio: 0.2 + (next() % 20) as f64 / 100.0,
            });
            features.push(ZoneTypeFeatures {
                home_count: 3 + (next() % 2) as u32,
                work_count: 3 + (next() % 2) as u32,
                off_ratio: 1.0,
            });
        }
        let model = ZoneTypeModel::train(&features, 400, 0.05, 1e-4, 1).unwrap();
        let resid = ZoneTypeFeatures { home_count: 12, work_count: 0, off_ratio: 4.0 };
        let comm = ZoneTypeFeatures { home_count: 0, work_count: 12, off_ratio: 0.2 };
        assert_eq!(model.classify(&resid).unwrap(), ZoneType::Residential);
        assert_eq!(model.classify(&comm).unwrap(), ZoneType::Commercial);
    }

    #[test]
    fn home_selection_invariant_under_weight_rescale() {
        let log = worker_log();
        for scale in [0.5f64, 2.0, 10.0] {
            let base = UsageScoreParams::default();
            let scaled = UsageScoreParams {
                omega_c: base.omega_c * scale,
                omega_d: base.omega_d * scale,
                duration_unit: base.duration_unit,
            };
            let pois_a =
                detect_pois(&log, ClusterMethod::Em, 0.1, &score_windows(), &base, 1).unwrap();
            let pois_b =
                detect_pois(&log, ClusterMethod::Em, 0.1, &score_windows(), &scaled, 1).unwrap();
            let (home_a, work_a) = infer_home_work(&pois_a, 1.0).unwrap();
            let (home_b, work_b) = infer_home_work(&pois_b, 1.0).unwrap();
            assert_eq!(home_a, home_b);
            assert_eq!(work_a, work_b);
        }
    }
}
