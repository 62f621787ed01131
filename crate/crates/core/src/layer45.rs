//! Layers 4 and 5: neighbor/colleague groups, transport classification,
//! working/off-day detection, special caller groups, calling-relationship
//! strength, chain-factorized closeness, family/friend discovery, and
//! social-profile assembly.
//!
//! Closeness is an explicit declared factorization, not a learned model:
//! `score = strength * rel * (1 + poi_bonus * min(shared_pois, cap)) *
//! (off_low + (1 - off_low) * off_fraction)` clamped to `[0, 1]`, where
//! `rel` is the co-home factor, else the co-work factor, else a base. The
//! defaults keep family pairs above colleague pairs above strangers, which
//! is the only ordering the synthetic oracle asserts.

use std::collections::BTreeMap;

use chrono::Weekday;

use crate::error::{Error, Result};
use crate::geo::{haversine_km, LocKey};
use crate::layer1::CallGraph;
use crate::layer23::WorkerKind;
use crate::model::{TimeWindow, UserId, WindowSpec};

/// Single-link grouping: users whose points lie within `radius_km` of each
/// other (transitively) share a group. Singleton groups are suppressed.
/// Groups come back sorted by their smallest member id, members sorted.
pub fn proximity_groups(items: &[(UserId, LocKey)], radius_km: f64) -> Vec<Vec<UserId>> {
    let n = items.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, left) in items.iter().enumerate() {
        for (j, right) in items.iter().enumerate().skip(i + 1) {
            if haversine_km(left.1.point(), right.1.point()) <= radius_km {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<UserId>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(item.0.clone());
    }
    let mut out: Vec<Vec<UserId>> = groups
        .into_values()
        .filter(|g| g.len() >= 2)
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    out.sort_by(|a, b| a[0].cmp(&b[0]));
    out
}

/// Groups users by home proximity.
pub fn neighbor_groups(homes: &[(UserId, LocKey)], radius_km: f64) -> Vec<Vec<UserId>> {
    proximity_groups(homes, radius_km)
}

/// Groups regular workers by workplace proximity.
pub fn colleague_groups(
    workers: &[(UserId, LocKey, WorkerKind)],
    radius_km: f64,
) -> Vec<Vec<UserId>> {
    let regular: Vec<(UserId, LocKey)> = workers
        .iter()
        .filter(|(_, _, kind)| *kind == WorkerKind::Regular)
        .map(|(u, loc, _)| (u.clone(), *loc))
        .collect();
    proximity_groups(&regular, radius_km)
}

/// Transport mode, by speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Walking,
    NonMotorized,
    Motorized,
}

impl std::fmt::Display for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transport::Walking => write!(f, "WALKING"),
            Transport::NonMotorized => write!(f, "NON_MOTORIZED"),
            Transport::Motorized => write!(f, "MOTORIZED"),
        }
    }
}

impl std::str::FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WALKING" => Ok(Transport::Walking),
            "NON_MOTORIZED" => Ok(Transport::NonMotorized),
            "MOTORIZED" => Ok(Transport::Motorized),
            other => Err(Error::data(format!("unknown transport `{other}`"))),
        }
    }
}

/// Bootstrap speed thresholds (km/h): below `walk_max` walks, above
/// `motor_min` is motorized, in between non-motorized.
#[derive(Debug, Clone, Copy)]
pub struct TransportThresholds {
    pub walk_max: f64,
    pub motor_min: f64,
}

impl Default for TransportThresholds {
    fn default() -> Self {
        TransportThresholds { walk_max: 7.0, motor_min: 15.0 }
    }
}

/// Average and peak of a user's defined commute-speed samples.
pub fn speed_features(samples: &[f64]) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    let avg = samples.iter().sum::<f64>() / samples.len() as f64;
    let peak = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((avg, peak))
}

/// Threshold rule over the average speed; `None` when no defined samples.
pub fn classify_transport(samples: &[f64], t: &TransportThresholds) -> Option<Transport> {
    let (avg, _) = speed_features(samples)?;
    Some(if avg < t.walk_max {
        Transport::Walking
    } else if avg > t.motor_min {
        Transport::Motorized
    } else {
        Transport::NonMotorized
    })
}

/// One-vs-rest refinement over `(avg, peak)` features, trained on the
/// bootstrap labels. Falls back to the threshold rule when the bootstrap
/// labels do not cover all three classes.
#[derive(Debug, Clone)]
pub enum TransportModel {
    Trained(crate::ml::OneVsRest<Transport>),
    RuleOnly(TransportThresholds),
}

impl TransportModel {
    pub fn train(
        user_samples: &[(f64, f64)],
        thresholds: TransportThresholds,
        epochs: usize,
        learning_rate: f64,
        regularization: f64,
        seed: u64,
    ) -> Result<Self> {
        let labels: Vec<Transport> = user_samples
            .iter()
            .map(|&(avg, _)| {
                classify_transport(&[avg], &thresholds).expect("non-empty sample")
            })
            .collect();
        let classes = [Transport::Walking, Transport::NonMotorized, Transport::Motorized];
        if classes.iter().any(|c| !labels.contains(c)) {
            return Ok(TransportModel::RuleOnly(thresholds));
        }
        let samples: Vec<(Vec<f64>, Transport)> = user_samples
            .iter()
            .zip(&labels)
            .map(|(&(avg, peak), l)| (vec![avg, peak], *l))
            .collect();
        let model = crate::ml::OneVsRest::train(
            &samples,
            &classes,
            epochs,
            learning_rate,
            regularization,
            seed,
        )?;
        Ok(TransportModel::Trained(model))
    }

    pub fn classify(&self, avg: f64, peak: f64) -> Result<Transport> {
        match self {
            TransportModel::RuleOnly(t) => {
                Ok(classify_transport(&[avg], t).expect("avg provided"))
            }
            TransportModel::Trained(m) => m.predict(&[avg, peak]),
        }
    }
}

/// Working-weekday set and the off-day candidates (all minima; more than
/// one means the trace was ambiguous).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkingDays {
    pub working: Vec<Weekday>,
    pub off: Vec<Weekday>,
}

impl WorkingDays {
    pub fn ambiguous(&self) -> bool {
        self.off.len() > 1
    }

    pub fn off_day(&self) -> Option<Weekday> {
        if self.off.len() == 1 {
            Some(self.off[0])
        } else {
            None
        }
    }
}

/// Marks a weekday as working when the user was present at the workplace on
/// at least half of that weekday's occurrences; the off-day is the weekday
/// with the lowest presence rate. Needs two observations of every weekday.
pub fn detect_working_days(per_weekday: &[(u32, u32); 7]) -> Result<WorkingDays> {
    if per_weekday.iter().any(|&(_, observed)| observed < 2) {
        return Err(Error::data("working-day detection needs >= 2 weeks of observations"));
    }
    let rate =
        |i: usize| per_weekday[i].0 as f64 / per_weekday[i].1 as f64;
    let working: Vec<Weekday> = (0..7)
        .filter(|&i| rate(i) >= 0.5)
        .map(|i| crate::layer1::weekday_from_monday_index(i as u32))
        .collect();
    let min = (0..7).map(rate).fold(f64::INFINITY, f64::min);
    let off: Vec<Weekday> = (0..7)
        .filter(|&i| (rate(i) - min).abs() <= 1e-12)
        .map(|i| crate::layer1::weekday_from_monday_index(i as u32))
        .collect();
    Ok(WorkingDays { working, off })
}

/// Inputs for special-group labeling, one row per user.
#[derive(Debug, Clone, Copy)]
pub struct SpecialGroupInputs {
    pub night_score: f64,
    pub total_score: f64,
    pub work_score: f64,
    pub distinct_towers_per_day: f64,
    pub worker_kind: WorkerKind,
}

#[derive(Debug, Clone, Copy)]
pub struct SpecialGroupParams {
    /// Night share of the total score that marks a late-night caller.
    pub late_night_fraction: f64,
    /// Working-hours score quantile (among regular workers) above which a
    /// worker counts as a communication-heavy professional.
    pub professional_quantile: f64,
    /// Distinct-towers-per-day quantile (whole population) above which a
    /// user counts as a frequent traveler.
    pub traveler_quantile: f64,
}

impl Default for SpecialGroupParams {
    fn default() -> Self {
        SpecialGroupParams {
            late_night_fraction: 0.5,
            professional_quantile: 0.8,
            traveler_quantile: 0.9,
        }
    }
}

pub const LABEL_LATE_NIGHT: &str = "LATE_NIGHT_CALLER";
pub const LABEL_PROFESSIONAL: &str = "COMMUNICATION_PROFESSIONAL";
pub const LABEL_TRAVELER: &str = "FREQUENT_TRAVELER";
pub const LABEL_SERVICE_HOLDER: &str = "SERVICE_HOLDER";
pub const LABEL_HOMEMAKER: &str = "HOMEMAKER";
pub const LABEL_STUDENT: &str = "STUDENT";

fn quantile_of(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    if values.is_empty() {
        return f64::INFINITY;
    }
    values[((q * values.len() as f64).floor() as usize).min(values.len() - 1)]
}

/// Assigns the window-driven special labels per user.
pub fn special_groups(
    inputs: &BTreeMap<UserId, SpecialGroupInputs>,
    params: &SpecialGroupParams,
) -> BTreeMap<UserId, Vec<String>> {
    let mut work_scores: Vec<f64> = inputs
        .values()
        .filter(|i| i.worker_kind == WorkerKind::Regular)
        .map(|i| i.work_score)
        .collect();
    let professional_cut = quantile_of(&mut work_scores, params.professional_quantile);
    let mut towers: Vec<f64> = inputs.values().map(|i| i.distinct_towers_per_day).collect();
    let traveler_cut = quantile_of(&mut towers, params.traveler_quantile);

    let mut out = BTreeMap::new();
    for (user, i) in inputs {
        let mut labels = Vec::new();
        if i.total_score > 0.0 && i.night_score / i.total_score >= params.late_night_fraction {
            labels.push(LABEL_LATE_NIGHT.to_string());
        }
        if i.worker_kind == WorkerKind::Regular && i.work_score > professional_cut {
            labels.push(LABEL_PROFESSIONAL.to_string());
        }
        if i.distinct_towers_per_day > traveler_cut {
            labels.push(LABEL_TRAVELER.to_string());
        }
        out.insert(user.clone(), labels);
    }
    out
}

/// Pairwise evidence feeding the closeness factorization.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairComponents {
    pub call_strength: f64,
    pub off_hours_fraction: f64,
    pub co_home: bool,
    pub co_work: bool,
    pub co_poi_count: u32,
}

/// One pre-aggregated call-graph edge:
/// `(pair, (weight, total duration, active days), off-hours fraction)`.
pub type EdgeRow = ((UserId, UserId), (u32, u64, usize), f64);

/// Rank-normalized calling-relationship strength per graph edge.
///
/// An edge's strength is the fraction of edges whose `(weight, total
/// matched duration, active-day count)` key is less than or equal to its
/// own, so the unique maximal edge scores exactly 1 and absent pairs 0.
#[derive(Debug, Clone, Default)]
pub struct CallStrengthIndex {
    by_pair: BTreeMap<(UserId, UserId), (f64, f64)>,
}

impl CallStrengthIndex {
    pub fn build(graph: &CallGraph, off: &WindowSpec) -> Self {
        let mut rows: Vec<EdgeRow> = Vec::new();
        for ((a, b), stats) in graph.edges() {
            let total_dur: u64 = stats.matched.iter().map(|(_, d)| *d as u64).sum();
            let days: std::collections::BTreeSet<chrono::NaiveDate> =
                stats.matched.iter().map(|(at, _)| at.date()).collect();
            let off_count = stats.matched.iter().filter(|(at, _)| off.contains(*at)).count();
            let off_frac = off_count as f64 / stats.matched.len().max(1) as f64;
            rows.push(((a.clone(), b.clone()), (stats.weight, total_dur, days.len()), off_frac));
        }
        Self::from_rows(rows)
    }

    /// Build from pre-aggregated per-edge rows.
    pub fn from_rows(rows: Vec<EdgeRow>) -> Self {
        let mut keys: Vec<(u32, u64, usize)> = rows.iter().map(|(_, k, _)| *k).collect();
        keys.sort();
        let n = keys.len() as f64;
        let mut by_pair = BTreeMap::new();
        for (pair, key, off_frac) in rows {
            let le = keys.partition_point(|k| *k <= key);
            by_pair.insert(pair, (le as f64 / n, off_frac));
        }
        CallStrengthIndex { by_pair }
    }

    /// `(strength, off_hours_fraction)`; zeros when the pair has no edge.
    pub fn get(&self, a: &str, b: &str) -> (f64, f64) {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        self.by_pair.get(&key).copied().unwrap_or((0.0, 0.0))
    }
}

/// Fixed conditional factors of the closeness chain.
#[derive(Debug, Clone, Copy)]
pub struct ClosenessFactors {
    pub co_home: f64,
    pub co_work: f64,
    pub base: f64,
    pub poi_bonus: f64,
    pub poi_cap: u32,
    pub off_low: f64,
}

impl Default for ClosenessFactors {
    fn default() -> Self {
        ClosenessFactors {
            co_home: 0.9,
            co_work: 0.6,
            base: 0.3,
            poi_bonus: 0.1,
            poi_cap: 3,
            off_low: 0.5,
        }
    }
}

/// The chain factorization; symmetric in the pair by construction and
/// monotone in every component.
pub fn closeness(c: &PairComponents, f: &ClosenessFactors) -> f64 {
    let rel = if c.co_home {
        f.co_home
    } else if c.co_work {
        f.co_work
    } else {
        f.base
    };
    let poi = 1.0 + f.poi_bonus * c.co_poi_count.min(f.poi_cap) as f64;
    let off = f.off_low + (1.0 - f.off_low) * c.off_hours_fraction;
    (c.call_strength * rel * poi * off).clamp(0.0, 1.0)
}

/// Social-relationship thresholds.
#[derive(Debug, Clone, Copy)]
pub struct SocialThresholds {
    pub tau_family: f64,
    pub tau_friend: f64,
    pub tau_off: f64,
}

impl Default for SocialThresholds {
    fn default() -> Self {
        SocialThresholds { tau_family: 0.5, tau_friend: 0.6, tau_off: 0.3 }
    }
}

/// Family and friend groups discovered from pairwise components.
#[derive(Debug, Clone, Default)]
pub struct FamilyFriends {
    pub families: Vec<Vec<UserId>>,
    pub friend_groups: Vec<Vec<UserId>>,
}

/// Families are connected components over pairs that share a home and call
/// strongly; friends (close colleagues) are pairs sharing a workplace that
/// call each other off-hours with high strength.
pub fn detect_family_friends(
    pairs: &BTreeMap<(UserId, UserId), PairComponents>,
    th: &SocialThresholds,
) -> FamilyFriends {
    let family_edges: Vec<(UserId, UserId)> = pairs
        .iter()
        .filter(|(_, c)| c.co_home && c.call_strength >= th.tau_family)
        .map(|(p, _)| p.clone())
        .collect();
    let friend_edges: Vec<(UserId, UserId)> = pairs
        .iter()
        .filter(|(_, c)| {
            c.co_work && c.off_hours_fraction >= th.tau_off && c.call_strength >= th.tau_friend
        })
        .map(|(p, _)| p.clone())
        .collect();
    FamilyFriends {
        families: components(&family_edges),
        friend_groups: components(&friend_edges),
    }
}

fn components(edges: &[(UserId, UserId)]) -> Vec<Vec<UserId>> {
    let mut ids: Vec<UserId> = edges.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    ids.sort();
    ids.dedup();
    let index: BTreeMap<&UserId, usize> = ids.iter().enumerate().map(|(i, u)| (u, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut groups: BTreeMap<usize, Vec<UserId>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(id.clone());
    }
    let mut out: Vec<Vec<UserId>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    for g in &mut out {
        g.sort();
    }
    out.sort_by(|a, b| a[0].cmp(&b[0]));
    out
}

/// Per-user synthesis of everything the layers found.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialProfile {
    pub user: UserId,
    pub worker_kind: WorkerKind,
    pub home: LocKey,
    pub workplace: Option<LocKey>,
    pub commute_km: Option<f64>,
    pub working_hours: Option<TimeWindow>,
    pub off_day: Option<Weekday>,
    pub transport: Option<Transport>,
    pub social_groups: Vec<String>,
}

/// Everything build_profile needs, gathered from the knowledge base by the
/// calling stage.
#[derive(Debug, Clone, Default)]
pub struct ProfileInputs {
    pub home: Option<LocKey>,
    pub workplace: Option<LocKey>,
    /// Call-weight fraction of the POI containing the home tower.
    pub home_poi_share: f64,
    /// Max working-hours score share among POIs not containing home.
    pub day_poi_share: f64,
    pub worker: Option<(WorkerKind, Option<f64>)>,
    pub working_hours: Option<TimeWindow>,
    pub off_day: Option<Weekday>,
    pub transport: Option<Transport>,
    pub group_labels: Vec<String>,
    pub special_labels: Vec<String>,
}

/// Profile-synthesis knobs for the coarse occupational label.
#[derive(Debug, Clone, Copy)]
pub struct ProfileParams {
    /// Home POI share above which an irregular user reads as home-centered.
    pub home_dominance: f64,
    /// Day-POI score share above which an irregular user reads as a student
    /// (a stable non-home daytime place without regular attendance).
    pub student_poi_share: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams { home_dominance: 0.5, student_poi_share: 0.08 }
    }
}

/// Assembles a social profile; errors name the missing layer when the
/// user's upstream rows are absent.
pub fn build_profile(
    user: &str,
    inputs: &ProfileInputs,
    params: &ProfileParams,
) -> Result<SocialProfile> {
    let home = inputs.home.ok_or(Error::MissingTable { layer: 2, table: "user_places".into() })?;
    let (worker_kind, commute_km) = inputs
        .worker
        .ok_or(Error::MissingTable { layer: 3, table: "worker_class".into() })?;

    let mut groups: Vec<String> = Vec::new();
    groups.extend(inputs.special_labels.iter().cloned());
    groups.extend(inputs.group_labels.iter().cloned());

    // Coarse occupational label.
    if worker_kind == WorkerKind::Regular && inputs.workplace.is_some() {
        groups.push(LABEL_SERVICE_HOLDER.to_string());
    } else if inputs.day_poi_share >= params.student_poi_share {
        groups.push(LABEL_STUDENT.to_string());
    } else if inputs.home_poi_share >= params.home_dominance {
        groups.push(LABEL_HOMEMAKER.to_string());
    }
    groups.sort();
    groups.dedup();

    Ok(SocialProfile {
        user: user.to_string(),
        worker_kind,
        home,
        workplace: inputs.workplace,
        commute_km,
        working_hours: inputs.working_hours.clone(),
        off_day: inputs.off_day,
        transport: inputs.transport,
        social_groups: groups,
    })
}

/// One gazetteer row: a circular area with a semantic category.
#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerEntry {
    pub point: crate::geo::GeoPoint,
    pub radius_km: f64,
    pub category: String,
}

/// Reads the optional POI-category gazetteer
/// (`lat,lon,radius_km,category`). Workplaces falling inside an entry get
/// an area-category hint on the profile; the file is empty by default and
/// entirely optional.
pub fn read_gazetteer(path: &std::path::Path) -> Result<Vec<GazetteerEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read gazetteer {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("lat,lon,radius_km,category") => {}
        Some(h) => {
            return Err(Error::data(format!(
                "gazetteer header mismatch: expected `lat,lon,radius_km,category`, found `{h}`"
            )))
        }
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::data(format!("gazetteer line {}: expected 4 fields", i + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::data(format!("gazetteer line {}: bad number", i + 2)))
        };
        out.push(GazetteerEntry {
            point: crate::geo::GeoPoint::new(num(fields[0])?, num(fields[1])?),
            radius_km: num(fields[2])?,
            category: fields[3].to_string(),
        });
    }
    Ok(out)
}

/// Area-category labels for a workplace location, e.g. `AREA:UNIVERSITY`.
pub fn gazetteer_labels(work: crate::geo::GeoPoint, entries: &[GazetteerEntry]) -> Vec<String> {
    let mut labels: Vec<String> = entries
        .iter()
        .filter(|e| haversine_km(work, e.point) <= e.radius_km)
        .map(|e| format!("AREA:{}", e.category))
        .collect();
    labels.sort();
    labels.dedup();
    labels
}

/// Night-window score used for late-night labeling.
pub fn night_window_spec() -> WindowSpec {
    WindowSpec::TimeOfDay(
        TimeWindow::from_hm("LATE_NIGHT", 0, 0, 4, 0).expect("static window"),
    )
}

/// Distinct towers per active day, the traveler feature.
pub fn distinct_towers_per_day(log: &crate::ingest::UserLog) -> f64 {
    let mut per_day: BTreeMap<chrono::NaiveDate, std::collections::BTreeSet<LocKey>> =
        BTreeMap::new();
    for e in &log.entries {
        per_day.entry(e.at.date()).or_default().insert(e.loc);
    }
    if per_day.is_empty() {
        return 0.0;
    }
    per_day.values().map(|s| s.len() as f64).sum::<f64>() / per_day.len() as f64
}

/// Shared-POI count between two users: POI centroid pairs within the
/// radius, counted over the smaller list.
pub fn shared_poi_count(
    pois_a: &[crate::geo::GeoPoint],
    pois_b: &[crate::geo::GeoPoint],
    radius_km: f64,
) -> u32 {
    let mut count = 0;
    for a in pois_a {
        if pois_b.iter().any(|b| haversine_km(*a, *b) <= radius_km) {
            count += 1;
        }
    }
    count
}

// Re-export used by profile assembly in the pipeline.
pub use crate::layer23::UserPlaces;

/// Convenience: the components map for candidate pairs only (any shared
/// signal: a call edge, a shared home, or a shared workplace), never
/// all-pairs.
pub fn candidate_pairs(
    strength: &CallStrengthIndex,
    homes: &[(UserId, LocKey)],
    works: &[(UserId, LocKey)],
    pois: &BTreeMap<UserId, Vec<crate::geo::GeoPoint>>,
    radius_km: f64,
    poi_radius_km: f64,
) -> BTreeMap<(UserId, UserId), PairComponents> {
    let mut pairs: std::collections::BTreeSet<(UserId, UserId)> = Default::default();
    let ordered = |a: &UserId, b: &UserId| {
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    };
    for key in strength.by_pair.keys() {
        pairs.insert(key.clone());
    }
    let mut by_prox = |items: &[(UserId, LocKey)]| {
        for i in 0..items.len() {
            for j in (i + 1)..items.len() {
                if haversine_km(items[i].1.point(), items[j].1.point()) <= radius_km {
                    pairs.insert(ordered(&items[i].0, &items[j].0));
                }
            }
        }
    };
    by_prox(homes);
    by_prox(works);

    let home_of: BTreeMap<&UserId, LocKey> = homes.iter().map(|(u, l)| (u, *l)).collect();
    let work_of: BTreeMap<&UserId, LocKey> = works.iter().map(|(u, l)| (u, *l)).collect();
    let mut out = BTreeMap::new();
    for (a, b) in pairs {
        let (s, off) = strength.get(&a, &b);
        let co_home = match (home_of.get(&a), home_of.get(&b)) {
            (Some(x), Some(y)) => haversine_km(x.point(), y.point()) <= radius_km,
            _ => false,
        };
        let co_work = match (work_of.get(&a), work_of.get(&b)) {
            (Some(x), Some(y)) => haversine_km(x.point(), y.point()) <= radius_km,
            _ => false,
        };
        let co_poi = match (pois.get(&a), pois.get(&b)) {
            (Some(x), Some(y)) => shared_poi_count(x, y, poi_radius_km),
            _ => 0,
        };
        out.insert(
            (a, b),
            PairComponents {
                call_strength: s,
                off_hours_fraction: off,
                co_home,
                co_work,
                co_poi_count: co_poi,
            },
        );
    }
    out
}
