//! Synthetic city generator with persona ground truth.
//!
//! The real corpus this engine was designed around is proprietary, so every
//! inference layer is validated against a generated city instead: towers on
//! a jittered lattice, personas with known homes, workplaces, commute
//! routes, calling habits, and group memberships, and a truth file the
//! scorer compares predictions against.
//!
//! Generation is deterministic given the seed. Static structure (towers,
//! personas, groups) comes from one master stream; call events come from
//! per-entity streams derived from `(seed, entity, day)`, and a final
//! sequential reservation pass spaces event times so that cross-reference
//! matching can recover exactly the intended call pairs:
//!
//! - intra-group calls emit two records sharing an even start second and an
//!   even duration, one per endpoint at its own current tower;
//! - solo calls get odd start seconds and odd durations;
//! - no two distinct call events within one second of each other ever share
//!   a duration (a global registry bumps colliders), so greedy matching has
//!   exactly one valid interpretation.
//!
//! Per-day call counts are Poisson draws (Knuth's product method) around the
//! persona's activity rate, with intra-group calls counted against the
//! day's budget; weekend-day counts are scaled down so the weekly rhythm is
//! detectable.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo::{haversine_km, BoundingBox, GeoPoint, LocKey};
use crate::model::{weekday_name, CdrRecord, TimeWindow, UserId};

/// Behavioral archetype of a generated user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PersonaKind {
    RegularWorker,
    Homemaker,
    Student,
    LateNightCaller,
    FrequentTraveler,
}

impl PersonaKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PersonaKind::RegularWorker => "REGULAR_WORKER",
            PersonaKind::Homemaker => "HOMEMAKER",
            PersonaKind::Student => "STUDENT",
            PersonaKind::LateNightCaller => "LATE_NIGHT_CALLER",
            PersonaKind::FrequentTraveler => "FREQUENT_TRAVELER",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "REGULAR_WORKER" => Ok(PersonaKind::RegularWorker),
            "HOMEMAKER" => Ok(PersonaKind::Homemaker),
            "STUDENT" => Ok(PersonaKind::Student),
            "LATE_NIGHT_CALLER" => Ok(PersonaKind::LateNightCaller),
            "FREQUENT_TRAVELER" => Ok(PersonaKind::FrequentTraveler),
            other => Err(Error::data(format!("unknown persona kind `{other}`"))),
        }
    }
}

/// Ground truth for one generated user.
#[derive(Debug, Clone)]
pub struct Persona {
    pub user: UserId,
    pub kind: PersonaKind,
    pub home: LocKey,
    pub workplace: Option<LocKey>,
    pub commute_path: Option<Vec<LocKey>>,
    pub working_hours: Option<TimeWindow>,
    pub off_day: Option<Weekday>,
    pub family_id: Option<String>,
    pub colleague_group: Option<String>,
    /// Mean calls per day.
    pub activity_rate: f64,
    pub transport_kmh: Option<f64>,
}

/// Generator configuration.
#[derive(Debug, Clone)]
pub struct CityConfig {
    pub towers: usize,
    pub bbox: BoundingBox,
    pub num_users: usize,
    pub days: u32,
    pub start_date: NaiveDate,
    pub weekend_day: Weekday,
    pub seed: u64,
    /// Probability that a call's location deviates to a neighboring tower.
    pub noise: f64,
    /// Population mean of per-user activity rates.
    pub mean_activity_rate: f64,
}

impl Default for CityConfig {
    fn default() -> Self {
        CityConfig {
            towers: 1360,
            bbox: BoundingBox::new(23.70, 90.33, 23.85, 90.48).expect("static bbox"),
            num_users: 500,
            days: 30,
            start_date: NaiveDate::from_ymd_opt(2012, 6, 19).expect("static date"),
            weekend_day: Weekday::Fri,
            seed: 42,
            noise: 0.0,
            mean_activity_rate: 13.0,
        }
    }
}

impl CityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.towers < 2 {
            return Err(Error::config("city needs at least 2 towers"));
        }
        if self.num_users < 1 {
            return Err(Error::config("city needs at least 1 user"));
        }
        if self.days < 7 {
            return Err(Error::config("weekend detection needs at least 7 days; use >= 7"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::config("noise must be within 0..=1"));
        }
        if self.mean_activity_rate <= 0.0 {
            return Err(Error::config("activity rate must be positive"));
        }
        Ok(())
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + chrono::Duration::days(self.days as i64 - 1)
    }
}

/// Generated city: records, personas, and the intended call pairing.
#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub config: CityConfig,
    pub towers: Vec<LocKey>,
    pub personas: Vec<Persona>,
    pub records: Vec<CdrRecord>,
    /// Ground-truth matched-call multiset: unordered user pair -> call count.
    pub paired_calls: BTreeMap<(UserId, UserId), u32>,
}

const RAW_HEADER: &str = "user_id,date,time,duration,lat,lon";
pub const TRUTH_HEADER: &str =
    "user_id,kind,home_lat,home_lon,work_lat,work_lon,off_day,family_id,colleague_group,transport_kmh,route";

impl SyntheticCity {
    /// CDR file contents in the ingest format, canonical record order.
    pub fn cdr_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 48);
        out.push_str(RAW_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.user,
                r.date,
                r.time.format("%H:%M:%S"),
                r.duration,
                r.lat,
                r.lon
            ));
        }
        out
    }

    /// Truth file contents: one row per persona.
    pub fn truth_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(TRUTH_HEADER);
        out.push('\n');
        for p in &self.personas {
            let home = p.home.point();
            let (wlat, wlon) = match p.workplace {
                Some(k) => {
                    let w = k.point();
                    (w.lat.to_string(), w.lon.to_string())
                }
                None => (String::new(), String::new()),
            };
            let route = p
                .commute_path
                .as_ref()
                .map(|path| {
                    path.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("|")
                })
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                p.user,
                p.kind.as_str(),
                home.lat,
                home.lon,
                wlat,
                wlon,
                p.off_day.map(weekday_name).unwrap_or(""),
                p.family_id.clone().unwrap_or_default(),
                p.colleague_group.clone().unwrap_or_default(),
                p.transport_kmh.map(|v| v.to_string()).unwrap_or_default(),
                route,
            ));
        }
        out
    }

    pub fn write_files(&self, cdr_path: &std::path::Path, truth_path: &std::path::Path) -> Result<()> {
        std::fs::write(cdr_path, self.cdr_csv())?;
        std::fs::write(truth_path, self.truth_csv())?;
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ splitmix64(a).wrapping_add(splitmix64(b).rotate_left(17)))
}

/// Knuth's product method; fine for the rates used here.
fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    let l = (-lambda).exp();
    let mut k = 0u32;
    let mut p = 1.0f64;
    loop {
        p *= rng.random::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
        if k > 10_000 {
            return k;
        }
    }
}

/// Keeps every pair of distinct call events at least 2 seconds or one
/// duration apart, so greedy cross-referencing is unambiguous.
struct SlotRegistry {
    used: HashSet<(i64, u32)>,
}

impl SlotRegistry {
    fn new() -> Self {
        SlotRegistry { used: HashSet::new() }
    }

    fn conflicts(&self, sec: i64, dur: u32) -> bool {
        self.used.contains(&(sec - 1, dur))
            || self.used.contains(&(sec, dur))
            || self.used.contains(&(sec + 1, dur))
    }

    /// Reserve for a paired call: bump the second by 2 until free.
    fn reserve_paired(&mut self, mut sec: i64, dur: u32) -> i64 {
        while self.conflicts(sec, dur) {
            sec += 2;
        }
        self.used.insert((sec, dur));
        sec
    }

    /// Reserve for a solo call: bump the duration by 2 until free.
    fn reserve_solo(&mut self, sec: i64, mut dur: u32) -> u32 {
        while self.conflicts(sec, dur) {
            dur += 2;
        }
        self.used.insert((sec, dur));
        dur
    }
}

struct Schedule {
    campus: Option<LocKey>,
    /// Dates a student attends campus.
    attendance: BTreeSet<NaiveDate>,
    /// Seconds-of-day the morning commute starts.
    depart_secs: u32,
    travel_secs: u32,
}

struct GenUser {
    persona: Persona,
    schedule: Schedule,
}

const WORK_START_SECS: u32 = 9 * 3600;
const WORK_END_SECS: u32 = 17 * 3600;

/// Generates the city. Deterministic: the same config (seed included)
/// produces byte-identical CDR and truth files.
pub fn generate_city(config: &CityConfig) -> Result<SyntheticCity> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 0xC17, 0));

    // Towers: jittered lattice over the bounding box.
    let side = (config.towers as f64).sqrt().ceil() as usize;
    let cell_lat = (config.bbox.max_lat - config.bbox.min_lat) / side as f64;
    let cell_lon = (config.bbox.max_lon - config.bbox.min_lon) / side as f64;
    let mut towers: Vec<LocKey> = Vec::with_capacity(config.towers);
    let mut seen = BTreeSet::new();
    for idx in 0..config.towers {
        let row = idx / side;
        let col = idx % side;
        let jit_lat = (master.random::<f64>() - 0.5) * 0.2 * cell_lat;
        let jit_lon = (master.random::<f64>() - 0.5) * 0.2 * cell_lon;
        let lat = config.bbox.min_lat + (row as f64 + 0.5) * cell_lat + jit_lat;
        let lon = config.bbox.min_lon + (col as f64 + 0.5) * cell_lon + jit_lon;
        let mut key = GeoPoint::new(lat, lon).key();
        while !seen.insert(key) {
            key = LocKey(key.0 + 1, key.1);
        }
        towers.push(key);
    }
    towers.sort();
    let neighbors = tower_neighbors(&towers, 8);

    // Personas: exact-count kind assignment, shuffled.
    let n = config.num_users;
    let worker_count = ((n as f64) * 0.25).round() as usize;
    let student_count = ((n as f64) * 0.15).round() as usize;
    let late_count = ((n as f64) * 0.16).round() as usize;
    let traveler_count = ((n as f64) * 0.08).round() as usize;
    let mut kinds = Vec::with_capacity(n);
    kinds.extend(std::iter::repeat_n(PersonaKind::RegularWorker, worker_count.min(n)));
    kinds.extend(std::iter::repeat_n(PersonaKind::Student, student_count));
    kinds.extend(std::iter::repeat_n(PersonaKind::LateNightCaller, late_count));
    kinds.extend(std::iter::repeat_n(PersonaKind::FrequentTraveler, traveler_count));
    while kinds.len() < n {
        kinds.push(PersonaKind::Homemaker);
    }
    kinds.truncate(n);
    shuffle(&mut kinds, &mut master);

    let width = n.to_string().len().max(4);
    let user_ids: Vec<UserId> = (0..n).map(|i| format!("U{i:0width$}")).collect();

    // Families: ~35% of users, sizes 2..=4, one home tower each.
    let mut family_of: Vec<Option<usize>> = vec![None; n];
    let mut family_homes: Vec<LocKey> = Vec::new();
    {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut master);
        let target = (n as f64 * 0.35) as usize;
        let mut placed = 0;
        let mut cursor = 0;
        let mut used_towers = BTreeSet::new();
        while placed < target && cursor < n {
            let size = (2 + (master.random::<u32>() % 3) as usize).min(n - cursor);
            if size < 2 {
                break;
            }
            let fid = family_homes.len();
            let mut home = towers[(master.random::<u64>() % towers.len() as u64) as usize];
            for _ in 0..20 {
                if used_towers.insert(home) {
                    break;
                }
                home = towers[(master.random::<u64>() % towers.len() as u64) as usize];
            }
            family_homes.push(home);
            for &u in &order[cursor..cursor + size] {
                family_of[u] = Some(fid);
            }
            cursor += size;
            placed += size;
        }
    }

    // Homes. Non-family users avoid family towers: shared homes are the
    // family-detection signal, so the ground truth must not manufacture
    // coincidental ones.
    let family_towers: BTreeSet<LocKey> = family_homes.iter().copied().collect();
    let mut homes: Vec<LocKey> = Vec::with_capacity(n);
    for assigned in family_of.iter().take(n) {
        match assigned {
            Some(fid) => homes.push(family_homes[*fid]),
            None => {
                let mut tower = towers[(master.random::<u64>() % towers.len() as u64) as usize];
                for _ in 0..60 {
                    if !family_towers.contains(&tower) {
                        break;
                    }
                    tower = towers[(master.random::<u64>() % towers.len() as u64) as usize];
                }
                homes.push(tower);
            }
        }
    }

    // Colleague groups over workers; shared work tower 1.5..=25 km from
    // every member's home.
    let mut work_of: Vec<Option<LocKey>> = vec![None; n];
    let mut colleague_of: Vec<Option<usize>> = vec![None; n];
    let mut colleague_groups: Vec<Vec<usize>> = Vec::new();
    {
        let mut remaining: Vec<usize> =
            (0..n).filter(|&u| kinds[u] == PersonaKind::RegularWorker).collect();
        shuffle(&mut remaining, &mut master);
        while !remaining.is_empty() {
            let size = (4 + (master.random::<u32>() % 4) as usize).min(remaining.len());
            // Group members must not share a home tower unless they are the
            // same family; co-homed strong callers read as family downstream.
            let mut members: Vec<usize> = Vec::with_capacity(size);
            let mut deferred: Vec<usize> = Vec::new();
            for u in remaining.drain(..) {
                let conflict = members.iter().any(|&m| {
                    homes[m] == homes[u]
                        && !(family_of[m].is_some() && family_of[m] == family_of[u])
                });
                if members.len() < size && !conflict {
                    members.push(u);
                } else {
                    deferred.push(u);
                }
            }
            remaining = deferred;
            let mut chosen: Option<LocKey> = None;
            if members.len() >= 2 {
                for _ in 0..80 {
                    let cand = towers[(master.random::<u64>() % towers.len() as u64) as usize];
                    let ok = members.iter().all(|&u| {
                        let d = haversine_km(homes[u].point(), cand.point());
                        (1.5..=25.0).contains(&d)
                    });
                    if ok {
                        chosen = Some(cand);
                        break;
                    }
                }
            }
            match chosen {
                Some(tower) => {
                    let gid = colleague_groups.len();
                    for &u in &members {
                        work_of[u] = Some(tower);
                        colleague_of[u] = Some(gid);
                    }
                    colleague_groups.push(members);
                }
                None => {
                    // No shared tower fits everyone (or a lone leftover);
                    // employ each one solo, without a group token.
                    for &u in &members {
                        work_of[u] = Some(solo_work_tower(&towers, homes[u], &mut master));
                    }
                }
            }
        }
    }

    // Assemble personas and schedules.
    let mut users: Vec<GenUser> = Vec::with_capacity(n);
    for u in 0..n {
        let kind = kinds[u];
        let rate_jitter = 0.7 + master.random::<f64>() * 0.6;
        let base_rate = config.mean_activity_rate * rate_jitter;
        let activity_rate = match kind {
            PersonaKind::FrequentTraveler => base_rate * 1.5,
            _ => base_rate,
        };
        let mut persona = Persona {
            user: user_ids[u].clone(),
            kind,
            home: homes[u],
            workplace: None,
            commute_path: None,
            working_hours: None,
            off_day: None,
            family_id: family_of[u].map(|f| format!("F{f:03}")),
            colleague_group: colleague_of[u].map(|g| format!("C{g:03}")),
            activity_rate,
            transport_kmh: None,
        };
        let mut schedule = Schedule {
            campus: None,
            attendance: BTreeSet::new(),
            depart_secs: 0,
            travel_secs: 0,
        };
        match kind {
            PersonaKind::RegularWorker => {
                let work = work_of[u].expect("every worker got a workplace");
                let dist = haversine_km(homes[u].point(), work.point());
                let speed = if dist < 3.0 {
                    3.0 + master.random::<f64>() * 2.0
                } else if dist < 8.0 {
                    8.0 + master.random::<f64>() * 5.0
                } else {
                    18.0 + master.random::<f64>() * 12.0
                };
                let path = commute_path(&towers, homes[u], work);
                let travel_secs = ((path_km(&path) / speed) * 3600.0).ceil() as u32;
                persona.workplace = Some(work);
                persona.commute_path = Some(path);
                persona.working_hours = Some(TimeWindow::from_hm("WORKING_HOURS", 9, 0, 17, 0)?);
                persona.off_day = Some(config.weekend_day);
                persona.transport_kmh = Some((speed * 100.0).round() / 100.0);
                schedule.depart_secs = WORK_START_SECS.saturating_sub(travel_secs + 300);
                schedule.travel_secs = travel_secs;
            }
            PersonaKind::Student => {
                let campus = solo_work_tower(&towers, homes[u], &mut master);
                schedule.campus = Some(campus);
                // Attend a fixed 35% of weekdays: enough campus presence to
                // read as a stable daytime place, never enough to read as a
                // regular worker.
                let mut weekdays: Vec<NaiveDate> = (0..config.days)
                    .map(|d| config.start_date + chrono::Duration::days(d as i64))
                    .filter(|d| d.weekday() != config.weekend_day)
                    .collect();
                shuffle(&mut weekdays, &mut master);
                let attend = (weekdays.len() as f64 * 0.35).floor() as usize;
                schedule.attendance.extend(weekdays.into_iter().take(attend));
            }
            _ => {}
        }
        users.push(GenUser { persona, schedule });
    }

    // Call events. Paired calls first; each paired call later absorbs one
    // of the participants' solo draws from the same window of the day, so
    // intra-group calling substitutes for other chatter in that window
    // instead of silently shrinking daytime activity.
    let mut registry = SlotRegistry::new();
    let mut records: Vec<CdrRecord> = Vec::new();
    let mut paired_calls: BTreeMap<(UserId, UserId), u32> = BTreeMap::new();
    let mut paired_evening: Vec<u32> = vec![0; n];
    let mut paired_night: Vec<u32> = vec![0; n];

    // Family pairs call at least once every day plus a Poisson extra;
    // colleague pairs call 0.15..=0.35 times/day. The guaranteed daily
    // family call keeps every family edge's monthly weight above any
    // colleague edge's, which is what makes family detection exact.
    // Pairs with a late-night member call at night, everyone else in the
    // evening when both parties are home.
    struct PairSpec {
        a: usize,
        b: usize,
        extra_rate: f64,
        daily_floor: u32,
        night: bool,
    }
    let mut pair_specs: Vec<PairSpec> = Vec::new();
    {
        let mut members_by_family: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (u, assigned) in family_of.iter().enumerate() {
            if let Some(f) = assigned {
                members_by_family.entry(*f).or_default().push(u);
            }
        }
        for members in members_by_family.values() {
            for i in 0..members.len() {
                for j in (i + 1)..members.len() {
                    let night = kinds[members[i]] == PersonaKind::LateNightCaller
                        || kinds[members[j]] == PersonaKind::LateNightCaller;
                    pair_specs.push(PairSpec {
                        a: members[i],
                        b: members[j],
                        extra_rate: 0.5 + master.random::<f64>() * 0.7,
                        daily_floor: 1,
                        night,
                    });
                }
            }
        }
        for members in &colleague_groups {
            for i in 0..members.len() {
                for j in (i + 1)..members.len() {
                    pair_specs.push(PairSpec {
                        a: members[i],
                        b: members[j],
                        extra_rate: 0.15 + master.random::<f64>() * 0.2,
                        daily_floor: 0,
                        night: false,
                    });
                }
            }
        }
    }

    for day in 0..config.days {
        let date = config.start_date + chrono::Duration::days(day as i64);
        let weekend = date.weekday() == config.weekend_day;
        paired_evening.iter_mut().for_each(|c| *c = 0);
        paired_night.iter_mut().for_each(|c| *c = 0);

        for (spec_idx, spec) in pair_specs.iter().enumerate() {
            let (a, b, night) = (spec.a, spec.b, spec.night);
            let mut rng =
                ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 0xFA1_000 + spec_idx as u64, day as u64));
            let count = spec.daily_floor + poisson(&mut rng, spec.extra_rate);
            for _ in 0..count {
                let base = if night {
                    1800 + (rng.random::<u32>() % (3 * 3600))
                } else {
                    19 * 3600 + (rng.random::<u32>() % (4 * 3600 + 3000))
                };
                let sec_of_day = (base & !1).min(86_398);
                let abs = day as i64 * 86_400 + sec_of_day as i64;
                let dur = (1 + rng.random::<u32>() % 300) * 2;
                let abs = registry.reserve_paired(abs, dur);
                let at = config.start_date.and_hms_opt(0, 0, 0).expect("midnight")
                    + chrono::Duration::seconds(abs);
                for &u in &[a, b] {
                    let loc = scheduled_location(&users[u], at, config, &towers, &neighbors, &mut rng);
                    let loc = apply_noise(loc, &towers, &neighbors, config.noise, &mut rng);
                    records.push(record_at(&users[u].persona.user, at, dur, loc));
                }
                let key = ordered_pair(&users[a].persona.user, &users[b].persona.user);
                *paired_calls.entry(key).or_default() += 1;
                for &u in &[a, b] {
                    if night {
                        paired_night[u] += 1;
                    } else {
                        paired_evening[u] += 1;
                    }
                }
            }
        }

        for (u, user) in users.iter().enumerate() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 0x501_0000 + u as u64, day as u64));
            let scale = if weekend { 0.55 } else { 1.0 };
            let drawn = poisson(&mut rng, user.persona.activity_rate * scale);
            let mut absorb_evening = paired_evening[u];
            let mut absorb_night = paired_night[u];
            for _ in 0..drawn {
                let sec_of_day = (draw_call_second(user, date, config, &mut rng) | 1).min(86_399);
                if sec_of_day >= 19 * 3600 && absorb_evening > 0 {
                    absorb_evening -= 1;
                    continue;
                }
                if sec_of_day < 4 * 3600 && absorb_night > 0 {
                    absorb_night -= 1;
                    continue;
                }
                let abs = day as i64 * 86_400 + sec_of_day as i64;
                let dur = registry.reserve_solo(abs, (2 + rng.random::<u32>() % 295) * 2 + 1);
                let at = config.start_date.and_hms_opt(0, 0, 0).expect("midnight")
                    + chrono::Duration::seconds(abs);
                let loc = scheduled_location(user, at, config, &towers, &neighbors, &mut rng);
                let loc = apply_noise(loc, &towers, &neighbors, config.noise, &mut rng);
                records.push(record_at(&user.persona.user, at, dur, loc));
            }
        }
    }

    records.sort_by(crate::model::canonical_cmp);
    Ok(SyntheticCity {
        config: config.clone(),
        towers,
        personas: users.into_iter().map(|g| g.persona).collect(),
        records,
        paired_calls,
    })
}

fn ordered_pair(a: &str, b: &str) -> (UserId, UserId) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn record_at(user: &str, at: NaiveDateTime, duration: u32, loc: LocKey) -> CdrRecord {
    let p = loc.point();
    CdrRecord {
        user: user.to_string(),
        date: at.date(),
        time: at.time(),
        duration,
        lat: p.lat,
        lon: p.lon,
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

fn tower_neighbors(towers: &[LocKey], k: usize) -> Vec<Vec<usize>> {
    let pts: Vec<GeoPoint> = towers.iter().map(LocKey::point).collect();
    (0..towers.len())
        .map(|i| {
            let mut by_dist: Vec<(usize, f64)> = (0..towers.len())
                .filter(|&j| j != i)
                .map(|j| (j, haversine_km(pts[i], pts[j])))
                .collect();
            by_dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            by_dist.into_iter().take(k).map(|(j, _)| j).collect()
        })
        .collect()
}

fn solo_work_tower(towers: &[LocKey], home: LocKey, rng: &mut ChaCha8Rng) -> LocKey {
    for _ in 0..200 {
        let cand = towers[(rng.random::<u64>() % towers.len() as u64) as usize];
        let d = haversine_km(home.point(), cand.point());
        if (1.5..=25.0).contains(&d) {
            return cand;
        }
    }
    towers[towers.len() / 2]
}

/// Towers along the straight home->work line, sampled every ~250 m and
/// deduplicated in order. First element is the home tower, last the work
/// tower (both are lattice towers themselves).
fn commute_path(towers: &[LocKey], home: LocKey, work: LocKey) -> Vec<LocKey> {
    let a = home.point();
    let b = work.point();
    let dist = haversine_km(a, b);
    let steps = ((dist / 0.25).ceil() as usize).max(1);
    let mut path = Vec::new();
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let p = GeoPoint::new(a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t);
        let nearest = towers
            .iter()
            .min_by(|x, y| {
                haversine_km(p, x.point()).total_cmp(&haversine_km(p, y.point()))
            })
            .copied()
            .expect("towers non-empty");
        if !path.contains(&nearest) {
            path.push(nearest);
        }
    }
    if path.first() != Some(&home) {
        path.insert(0, home);
    }
    if path.last() != Some(&work) {
        path.push(work);
    }
    path
}

fn path_km(path: &[LocKey]) -> f64 {
    path.windows(2)
        .map(|w| haversine_km(w[0].point(), w[1].point()))
        .sum()
}

/// Where the persona's schedule puts them at `at`. Errands and roaming draw
/// from `rng`, everything else is a pure function of the schedule.
fn scheduled_location(
    user: &GenUser,
    at: NaiveDateTime,
    config: &CityConfig,
    towers: &[LocKey],
    neighbors: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> LocKey {
    use chrono::Timelike;
    let p = &user.persona;
    let sched = &user.schedule;
    let secs = at.time().num_seconds_from_midnight();
    let weekend = at.date().weekday() == config.weekend_day;
    let errand = |home: LocKey, rng: &mut ChaCha8Rng| -> LocKey {
        match towers.binary_search(&home) {
            Ok(idx) if !neighbors[idx].is_empty() => {
                let nbrs = &neighbors[idx];
                towers[nbrs[(rng.random::<u64>() % nbrs.len() as u64) as usize]]
            }
            _ => home,
        }
    };
    match p.kind {
        PersonaKind::RegularWorker => {
            let off = Some(at.date().weekday()) == p.off_day || weekend;
            if off {
                return p.home;
            }
            let path = p.commute_path.as_ref().expect("worker has a path");
            let work = p.workplace.expect("worker has a workplace");
            let depart = sched.depart_secs;
            let arrive = depart + sched.travel_secs;
            let ret_arrive = WORK_END_SECS + sched.travel_secs;
            if secs < depart {
                return p.home;
            }
            if secs < arrive {
                let frac = (secs - depart) as f64 / sched.travel_secs.max(1) as f64;
                return path_position(path, frac);
            }
            if secs < WORK_END_SECS {
                return work;
            }
            if secs < ret_arrive {
                let frac = (secs - WORK_END_SECS) as f64 / sched.travel_secs.max(1) as f64;
                return path_position(path, 1.0 - frac);
            }
            p.home
        }
        PersonaKind::Homemaker => {
            if rng.random::<f64>() < 0.10 {
                return errand(p.home, rng);
            }
            p.home
        }
        PersonaKind::Student => {
            if sched.attendance.contains(&at.date()) && (36_000..54_000).contains(&secs) {
                return sched.campus.expect("student has a campus");
            }
            if rng.random::<f64>() < 0.05 {
                return errand(p.home, rng);
            }
            p.home
        }
        PersonaKind::LateNightCaller => {
            if rng.random::<f64>() < 0.05 {
                return errand(p.home, rng);
            }
            p.home
        }
        PersonaKind::FrequentTraveler => {
            if !weekend && (25_200..68_400).contains(&secs) {
                return towers[(rng.random::<u64>() % towers.len() as u64) as usize];
            }
            p.home
        }
    }
}

fn apply_noise(
    loc: LocKey,
    towers: &[LocKey],
    neighbors: &[Vec<usize>],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> LocKey {
    if noise > 0.0 && rng.random::<f64>() < noise {
        if let Ok(idx) = towers.binary_search(&loc) {
            let nbrs = &neighbors[idx];
            if !nbrs.is_empty() {
                let pick = nbrs[(rng.random::<u64>() % nbrs.len() as u64) as usize];
                return towers[pick];
            }
        }
    }
    loc
}

fn path_position(path: &[LocKey], frac: f64) -> LocKey {
    let idx = (frac.clamp(0.0, 1.0) * (path.len() - 1) as f64).round() as usize;
    path[idx.min(path.len() - 1)]
}

/// Seconds-of-day for a solo call, drawn from the persona's daily profile.
fn draw_call_second(user: &GenUser, date: NaiveDate, config: &CityConfig, rng: &mut ChaCha8Rng) -> u32 {
    let weekend = date.weekday() == config.weekend_day;
    let pick = rng.random::<f64>();
    let in_range = |rng: &mut ChaCha8Rng, lo: u32, hi: u32| lo + rng.random::<u32>() % (hi - lo);
    match user.persona.kind {
        PersonaKind::RegularWorker if !weekend => {
            let depart = user.schedule.depart_secs.max(6 * 3600);
            if pick < 0.03 {
                in_range(rng, 0, 4 * 3600)
            } else if pick < 0.10 {
                in_range(rng, 6 * 3600, depart.max(6 * 3600 + 600))
            } else if pick < 0.20 {
                in_range(rng, user.schedule.depart_secs, WORK_START_SECS)
            } else if pick < 0.60 {
                in_range(rng, WORK_START_SECS, WORK_END_SECS)
            } else if pick < 0.70 {
                in_range(rng, WORK_END_SECS, WORK_END_SECS + user.schedule.travel_secs.max(600))
            } else {
                in_range(rng, 19 * 3600, 24 * 3600 - 2)
            }
        }
        PersonaKind::RegularWorker => {
            // Off day: at home all day.
            if pick < 0.05 {
                in_range(rng, 0, 4 * 3600)
            } else if pick < 0.60 {
                in_range(rng, 8 * 3600, 19 * 3600)
            } else {
                in_range(rng, 19 * 3600, 24 * 3600 - 2)
            }
        }
        PersonaKind::Homemaker => {
            if pick < 0.03 {
                in_range(rng, 0, 4 * 3600)
            } else if pick < 0.58 {
                in_range(rng, 8 * 3600, 19 * 3600)
            } else {
                in_range(rng, 19 * 3600, 24 * 3600 - 2)
            }
        }
        PersonaKind::Student => {
            let attends = user.schedule.attendance.contains(&date);
            if pick < 0.03 {
                in_range(rng, 0, 4 * 3600)
            } else if attends && pick < 0.45 {
                in_range(rng, 10 * 3600, 15 * 3600)
            } else if pick < 0.63 {
                in_range(rng, 8 * 3600, 19 * 3600)
            } else {
                in_range(rng, 19 * 3600, 24 * 3600 - 2)
            }
        }
        PersonaKind::LateNightCaller => {
            if pick < 0.70 {
                in_range(rng, 0, 4 * 3600)
            } else if pick < 0.80 {
                in_range(rng, 8 * 3600, 19 * 3600)
            } else {
                in_range(rng, 19 * 3600, 24 * 3600 - 2)
            }
        }
        PersonaKind::FrequentTraveler => {
            if pick < 0.02 {
                in_range(rng, 0, 4 * 3600)
            } else if pick < 0.62 && !weekend {
                in_range(rng, 7 * 3600, 19 * 3600)
            } else if pick < 0.62 {
                in_range(rng, 8 * 3600, 19 * 3600)
            } else {
                in_range(rng, 19 * 3600, 24 * 3600 - 2)
            }
        }
    }
}

/// One parsed truth-file row.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub user: UserId,
    pub kind: PersonaKind,
    pub home: LocKey,
    pub work: Option<LocKey>,
    pub off_day: Option<Weekday>,
    pub family_id: Option<String>,
    pub colleague_group: Option<String>,
    pub transport_kmh: Option<f64>,
    pub route: Vec<LocKey>,
}

pub fn read_truth_file(path: &std::path::Path) -> Result<Vec<TruthRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read truth file {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRUTH_HEADER => {}
        Some(h) => {
            return Err(Error::data(format!(
                "truth header mismatch: expected `{TRUTH_HEADER}`, found `{h}`"
            )))
        }
        None => return Err(Error::data("empty truth file")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::data(format!("truth line {}: expected 11 fields", i + 2)));
        }
        let opt = |s: &str| if s.is_empty() { None } else { Some(s.to_string()) };
        let coord = |lat: &str, lon: &str| -> Result<LocKey> {
            Ok(GeoPoint::new(
                lat.parse().map_err(|_| Error::data("bad truth lat"))?,
                lon.parse().map_err(|_| Error::data("bad truth lon"))?,
            )
            .key())
        };
        out.push(TruthRecord {
            user: fields[0].to_string(),
            kind: PersonaKind::parse(fields[1])?,
            home: coord(fields[2], fields[3])?,
            work: if fields[4].is_empty() { None } else { Some(coord(fields[4], fields[5])?) },
            off_day: if fields[6].is_empty() {
                None
            } else {
                Some(crate::model::parse_weekday(fields[6])?)
            },
            family_id: opt(fields[7]),
            colleague_group: opt(fields[8]),
            transport_kmh: if fields[9].is_empty() {
                None
            } else {
                Some(fields[9].parse().map_err(|_| Error::data("bad truth speed"))?)
            },
            route: crate::pipeline::parse_route_string(fields[10])?,
        });
    }
    Ok(out)
}

/// One fact's success rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccuracyRow {
    pub fact: String,
    pub correct: usize,
    pub total: usize,
}

impl AccuracyRow {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            100.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// Per-fact prediction accuracy against a truth file.
#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyReport {
    pub fn rate_of(&self, fact: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.fact == fact).map(AccuracyRow::rate)
    }
}

impl std::fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Accuracy of Prediction")?;
        writeln!(f, "{:<26} {:>8} {:>8} {:>22}", "Predicted Facts", "Correct", "Total", "Success Rate (Percent)")?;
        for row in &self.rows {
            writeln!(f, "{:<26} {:>8} {:>8} {:>22.1}", row.fact, row.correct, row.total, row.rate())?;
        }
        Ok(())
    }
}

/// Caller-type read off a social profile: late-night callers by their
/// label, regular workers by the worker class, then frequent travelers,
/// students (irregular users with a stable non-home daytime place), and
/// homemakers as the home-centered remainder.
pub fn predicted_caller_kind(
    worker_kind: crate::layer23::WorkerKind,
    labels: &[String],
) -> PersonaKind {
    let has = |l: &str| labels.iter().any(|x| x == l);
    if has(crate::layer45::LABEL_LATE_NIGHT) {
        PersonaKind::LateNightCaller
    } else if worker_kind == crate::layer23::WorkerKind::Regular {
        PersonaKind::RegularWorker
    } else if has(crate::layer45::LABEL_TRAVELER) {
        PersonaKind::FrequentTraveler
    } else if has(crate::layer45::LABEL_STUDENT) {
        PersonaKind::Student
    } else {
        PersonaKind::Homemaker
    }
}

/// Scores the pipeline's predictions against ground truth, one row per
/// fact. Location facts count as correct within the configured match
/// radius; route success requires that at least the configured fraction of
/// the predicted route's nodes lie on the true route.
pub fn score_predictions(
    truth: &[TruthRecord],
    pipeline: &crate::pipeline::Pipeline,
) -> Result<AccuracyReport> {
    use crate::kb::Layer;
    let cfg = &pipeline.cfg;
    let places = pipeline.places(6)?;
    let profiles = pipeline.profiles()?;
    let routes_table = pipeline.kb.read_any(Layer::new(3)?, "routes")?;
    let (ru, rr) = (routes_table.col("user_id")?, routes_table.col("route")?);
    let mut routes: BTreeMap<UserId, Vec<LocKey>> = BTreeMap::new();
    for row in routes_table.rows() {
        routes.insert(row[ru].clone(), crate::pipeline::parse_route_string(&row[rr])?);
    }

    let close = |a: LocKey, b: LocKey| haversine_km(a.point(), b.point()) <= cfg.match_radius_km;

    let mut home = AccuracyRow { fact: "Home Location".into(), correct: 0, total: 0 };
    let mut work = AccuracyRow { fact: "Workplace Location".into(), correct: 0, total: 0 };
    let mut group = AccuracyRow { fact: "Working Group".into(), correct: 0, total: 0 };
    let mut route = AccuracyRow { fact: "Regular Traveling Route".into(), correct: 0, total: 0 };
    let mut caller = AccuracyRow { fact: "Caller Type".into(), correct: 0, total: 0 };
    let mut social = AccuracyRow { fact: "Social Groups (Any)".into(), correct: 0, total: 0 };

    for t in truth {
        let predicted_places = places.get(&t.user);
        let profile = profiles.get(&t.user);

        home.total += 1;
        if let Some(p) = predicted_places {
            if close(p.home, t.home) {
                home.correct += 1;
            }
        }

        if let Some(true_work) = t.work {
            work.total += 1;
            if let Some(pred) = predicted_places.and_then(|p| p.work) {
                if close(pred, true_work) {
                    work.correct += 1;
                }
            }
        }

        group.total += 1;
        let truth_regular = t.kind == PersonaKind::RegularWorker;
        if let Some(p) = profile {
            let predicted_regular = p.worker_kind == crate::layer23::WorkerKind::Regular;
            if predicted_regular == truth_regular {
                group.correct += 1;
            }
        }

        if !t.route.is_empty() {
            route.total += 1;
            if let Some(pred) = routes.get(&t.user) {
                if !pred.is_empty() {
                    let mut truth_set: std::collections::BTreeSet<LocKey> =
                        t.route.iter().copied().collect();
                    truth_set.insert(t.home);
                    if let Some(w) = t.work {
                        truth_set.insert(w);
                    }
                    let on_route = pred
                        .iter()
                        .filter(|n| {
                            truth_set
                                .iter()
                                .any(|r| haversine_km(n.point(), r.point()) <= cfg.match_radius_km)
                        })
                        .count();
                    if on_route as f64 / pred.len() as f64 >= cfg.route_overlap_threshold {
                        route.correct += 1;
                    }
                }
            }
        }

        caller.total += 1;
        if let Some(p) = profile {
            if predicted_caller_kind(p.worker_kind, &p.social_groups) == t.kind {
                caller.correct += 1;
            }
        }

        social.total += 1;
        if profile.map(|p| !p.social_groups.is_empty()).unwrap_or(false) {
            social.correct += 1;
        }
    }

    Ok(AccuracyReport { rows: vec![home, work, group, route, caller, social] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> CityConfig {
        CityConfig {
            towers: 100,
            num_users: 60,
            days: 14,
            seed: 7,
            ..CityConfig::default()
        }
    }

    #[test]
    fn same_seed_byte_identical_outputs() {
        let cfg = small_config();
        let a = generate_city(&cfg).unwrap();
        let b = generate_city(&cfg).unwrap();
        assert_eq!(a.cdr_csv(), b.cdr_csv());
        assert_eq!(a.truth_csv(), b.truth_csv());
    }

    #[test]
    fn different_seed_differs() {
        let mut cfg = small_config();
        let a = generate_city(&cfg).unwrap();
        cfg.seed = 8;
        let b = generate_city(&cfg).unwrap();
        assert_ne!(a.cdr_csv(), b.cdr_csv());
    }

    #[test]
    fn zero_towers_is_fatal() {
        let cfg = CityConfig { towers: 0, ..CityConfig::default() };
        assert!(generate_city(&cfg).is_err());
    }

    #[test]
    fn noise_free_worker_off_hours_calls_all_at_home() {
        let cfg = small_config();
        let city = generate_city(&cfg).unwrap();
        let off = TimeWindow::from_hm("OFF", 19, 0, 7, 0).unwrap();
        for p in city.personas.iter().filter(|p| p.kind == PersonaKind::RegularWorker) {
            for rec in city.records.iter().filter(|r| r.user == p.user) {
                let is_off = off.contains(rec.time)
                    || rec.date.weekday() == cfg.weekend_day;
                if is_off {
                    assert_eq!(rec.key(), p.home, "off-hours call away from home for {}", p.user);
                }
            }
        }
    }

    #[test]
    fn modal_off_hours_tower_recovers_home_for_everyone() {
        let cfg = small_config();
        let city = generate_city(&cfg).unwrap();
        let off = TimeWindow::from_hm("OFF", 19, 0, 7, 0).unwrap();
        for p in &city.personas {
            let mut counts: BTreeMap<LocKey, u32> = BTreeMap::new();
            for rec in city.records.iter().filter(|r| r.user == p.user) {
                if off.contains(rec.time) || rec.date.weekday() == cfg.weekend_day {
                    *counts.entry(rec.key()).or_default() += 1;
                }
            }
            let modal = counts.iter().max_by_key(|(_, &c)| c).map(|(k, _)| *k);
            assert_eq!(modal, Some(p.home), "user {}", p.user);
        }
    }

    #[test]
    fn record_volume_tracks_expectation() {
        let cfg = CityConfig { towers: 200, num_users: 100, days: 14, seed: 3, ..CityConfig::default() };
        let city = generate_city(&cfg).unwrap();
        let expected = 100.0 * 14.0 * cfg.mean_activity_rate;
        let actual = city.records.len() as f64;
        assert!(
            (actual - expected).abs() / expected < 0.10,
            "expected ~{expected}, got {actual}"
        );
    }

    #[test]
    fn every_paired_call_appears_exactly_twice() {
        let cfg = small_config();
        let city = generate_city(&cfg).unwrap();
        // Bucket records by (instant, duration): paired calls occupy even
        // durations, two records each from distinct users.
        let mut buckets: BTreeMap<(NaiveDateTime, u32), Vec<&str>> = BTreeMap::new();
        for rec in &city.records {
            buckets.entry((rec.at(), rec.duration)).or_default().push(&rec.user);
        }
        let mut paired_seen = 0u32;
        for ((_, dur), users) in &buckets {
            if dur % 2 == 0 {
                assert_eq!(users.len(), 2, "paired bucket must hold exactly two records");
                assert_ne!(users[0], users[1], "paired records come from distinct users");
                paired_seen += 1;
            } else {
                assert_eq!(users.len(), 1, "solo bucket must hold exactly one record");
            }
        }
        let truth_total: u32 = city.paired_calls.values().sum();
        assert_eq!(paired_seen, truth_total);
        assert!(truth_total > 0, "generator must produce intra-group calls");
    }

    #[test]
    fn workers_have_route_speed_and_off_day() {
        let cfg = small_config();
        let city = generate_city(&cfg).unwrap();
        for p in &city.personas {
            match p.kind {
                PersonaKind::RegularWorker => {
                    let path = p.commute_path.as_ref().expect("path");
                    assert_eq!(path.first(), Some(&p.home));
                    assert_eq!(path.last(), Some(&p.workplace.unwrap()));
                    assert!(p.transport_kmh.unwrap() > 0.0);
                    assert_eq!(p.off_day, Some(cfg.weekend_day));
                    let d = haversine_km(p.home.point(), p.workplace.unwrap().point());
                    assert!(d >= 1.5, "commutes stay detectably distinct from home");
                }
                PersonaKind::Homemaker => {
                    assert!(p.workplace.is_none());
                }
                _ => {}
            }
        }
    }

    #[test]
    fn family_members_share_home() {
        let cfg = small_config();
        let city = generate_city(&cfg).unwrap();
        let mut homes_by_family: BTreeMap<&str, BTreeSet<LocKey>> = BTreeMap::new();
        let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &city.personas {
            if let Some(f) = &p.family_id {
                homes_by_family.entry(f).or_default().insert(p.home);
                *sizes.entry(f).or_default() += 1;
            }
        }
        assert!(!homes_by_family.is_empty());
        for (fid, homes) in homes_by_family {
            assert_eq!(homes.len(), 1, "family {fid} spread over several homes");
            assert!(sizes[fid] >= 2);
        }
    }

    #[test]
    fn truth_csv_has_one_row_per_user() {
        let cfg = small_config();
        let city = generate_city(&cfg).unwrap();
        let truth = city.truth_csv();
        assert_eq!(truth.lines().count(), cfg.num_users + 1);
        assert!(truth.starts_with(TRUTH_HEADER));
    }
}
