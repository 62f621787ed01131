//! Pipeline configuration: every knob of every stage, with documented
//! defaults, a `key=value` file loader, and a canonical serialization that
//! gets written into the knowledge base for provenance.

use chrono::{NaiveDate, NaiveTime};

use crate::error::{Error, Result};
use crate::layer1::UsageScoreParams;
use crate::layer23::ClusterMethod;
use crate::layer45::{ClosenessFactors, SocialThresholds, SpecialGroupParams, TransportThresholds};
use crate::model::{ObservationWindow, TimeWindow};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Observation window (inclusive dates).
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    /// Drop byte-identical duplicate input lines.
    pub dedup: bool,
    pub seed: u64,

    // Usage scoring.
    pub omega_c: f64,
    pub omega_d: f64,
    pub duration_unit: f64,
    /// Activity-class thresholds as score quantiles.
    pub quantile_low: f64,
    pub quantile_high: f64,
    /// Cross-referencing time tolerance.
    pub time_tolerance_secs: i64,

    // City rhythm.
    pub working_start: NaiveTime,
    pub working_end: NaiveTime,
    pub off_start: NaiveTime,
    pub off_end: NaiveTime,
    pub commute_morning: (NaiveTime, NaiveTime),
    pub commute_evening: (NaiveTime, NaiveTime),

    // Places.
    pub method: ClusterMethod,
    pub min_weight_fraction: f64,
    pub merge_radius_km: f64,
    pub busyness_seed_quantile: f64,

    // Worker patterns.
    pub regularity_threshold: f64,
    pub min_work_share: f64,
    pub route_k: usize,

    // Social layers.
    pub neighbor_radius_km: f64,
    pub poi_share_radius_km: f64,
    pub late_night_fraction: f64,
    pub professional_quantile: f64,
    pub traveler_quantile: f64,
    pub walk_max_kmh: f64,
    pub motor_min_kmh: f64,
    pub tau_family: f64,
    pub tau_friend: f64,
    pub tau_off: f64,
    pub home_dominance: f64,
    pub student_poi_share: f64,

    // Linear-classifier training.
    pub svm_epochs: usize,
    pub svm_learning_rate: f64,
    pub svm_regularization: f64,

    // Prediction scoring.
    pub match_radius_km: f64,
    pub route_overlap_threshold: f64,

    /// Optional POI-category gazetteer file (`lat,lon,radius_km,category`).
    pub gazetteer: Option<std::path::PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = |h: u32, m: u32| NaiveTime::from_hms_opt(h, m, 0).expect("static time");
        PipelineConfig {
            window_start: NaiveDate::from_ymd_opt(2012, 6, 19).expect("static date"),
            window_end: NaiveDate::from_ymd_opt(2012, 7, 18).expect("static date"),
            dedup: false,
            seed: 42,
            omega_c: 1.0,
            omega_d: 1.0,
            duration_unit: 60.0,
            quantile_low: 0.36,
            quantile_high: 0.94,
            time_tolerance_secs: 1,
            working_start: t(9, 0),
            working_end: t(17, 0),
            off_start: t(19, 0),
            off_end: t(7, 0),
            commute_morning: (t(7, 0), t(9, 0)),
            commute_evening: (t(17, 0), t(19, 0)),
            method: ClusterMethod::Em,
            min_weight_fraction: 0.1,
            merge_radius_km: 1.0,
            busyness_seed_quantile: 0.1,
            regularity_threshold: 0.5,
            min_work_share: 0.25,
            route_k: 4,
            neighbor_radius_km: 0.25,
            poi_share_radius_km: 0.5,
            late_night_fraction: 0.5,
            professional_quantile: 0.8,
            traveler_quantile: 0.9,
            walk_max_kmh: 7.0,
            motor_min_kmh: 15.0,
            tau_family: 0.5,
            tau_friend: 0.6,
            tau_off: 0.3,
            home_dominance: 0.5,
            student_poi_share: 0.08,
            svm_epochs: 300,
            svm_learning_rate: 0.05,
            svm_regularization: 1e-4,
            match_radius_km: 0.3,
            route_overlap_threshold: 0.6,
            gazetteer: None,
        }
    }
}

impl PipelineConfig {
    pub fn observation_window(&self) -> Result<ObservationWindow> {
        ObservationWindow::for_dates(self.window_start, self.window_end)
    }

    pub fn score_params(&self) -> UsageScoreParams {
        UsageScoreParams {
            omega_c: self.omega_c,
            omega_d: self.omega_d,
            duration_unit: self.duration_unit,
        }
    }

    pub fn working_hours(&self) -> Result<TimeWindow> {
        TimeWindow::new("WORKING_HOURS", self.working_start, self.working_end)
    }

    pub fn off_hours(&self) -> Result<TimeWindow> {
        TimeWindow::new("OFF_HOURS", self.off_start, self.off_end)
    }

    /// The four canonical day slots.
    pub fn day_slots(&self) -> Vec<TimeWindow> {
        vec![
            TimeWindow::from_hm("NIGHT", 0, 0, 6, 0).expect("static window"),
            TimeWindow::from_hm("MORNING", 6, 0, 10, 0).expect("static window"),
            TimeWindow::from_hm("MIDDAY", 10, 0, 17, 0).expect("static window"),
            TimeWindow::from_hm("EVENING", 17, 0, 24, 0).expect("static window"),
        ]
    }

    pub fn transport_thresholds(&self) -> TransportThresholds {
        TransportThresholds { walk_max: self.walk_max_kmh, motor_min: self.motor_min_kmh }
    }

    pub fn special_group_params(&self) -> SpecialGroupParams {
        SpecialGroupParams {
            late_night_fraction: self.late_night_fraction,
            professional_quantile: self.professional_quantile,
            traveler_quantile: self.traveler_quantile,
        }
    }

    pub fn social_thresholds(&self) -> SocialThresholds {
        SocialThresholds {
            tau_family: self.tau_family,
            tau_friend: self.tau_friend,
            tau_off: self.tau_off,
        }
    }

    pub fn closeness_factors(&self) -> ClosenessFactors {
        ClosenessFactors::default()
    }

    /// Loads `key=value` overrides from a file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Sets one knob by key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
        }
        let time = |v: &str| {
            NaiveTime::parse_from_str(v, "%H:%M")
                .or_else(|_| NaiveTime::parse_from_str(v, "%H:%M:%S"))
                .map_err(|_| Error::config(format!("invalid time `{v}`")))
        };
        match key {
            "window_start" => self.window_start = parse(key, value)?,
            "window_end" => self.window_end = parse(key, value)?,
            "dedup" => self.dedup = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "omega_c" => self.omega_c = parse(key, value)?,
            "omega_d" => self.omega_d = parse(key, value)?,
            "duration_unit" => self.duration_unit = parse(key, value)?,
            "quantile_low" => self.quantile_low = parse(key, value)?,
            "quantile_high" => self.quantile_high = parse(key, value)?,
            "time_tolerance_secs" => self.time_tolerance_secs = parse(key, value)?,
            "working_start" => self.working_start = time(value)?,
            "working_end" => self.working_end = time(value)?,
            "off_start" => self.off_start = time(value)?,
            "off_end" => self.off_end = time(value)?,
            "method" => self.method = ClusterMethod::parse(value)?,
            "min_weight_fraction" => self.min_weight_fraction = parse(key, value)?,
            "merge_radius_km" => self.merge_radius_km = parse(key, value)?,
            "busyness_seed_quantile" => self.busyness_seed_quantile = parse(key, value)?,
            "regularity_threshold" => self.regularity_threshold = parse(key, value)?,
            "min_work_share" => self.min_work_share = parse(key, value)?,
            "route_k" => self.route_k = parse(key, value)?,
            "neighbor_radius_km" => self.neighbor_radius_km = parse(key, value)?,
            "poi_share_radius_km" => self.poi_share_radius_km = parse(key, value)?,
            "late_night_fraction" => self.late_night_fraction = parse(key, value)?,
            "professional_quantile" => self.professional_quantile = parse(key, value)?,
            "traveler_quantile" => self.traveler_quantile = parse(key, value)?,
            "walk_max_kmh" => self.walk_max_kmh = parse(key, value)?,
            "motor_min_kmh" => self.motor_min_kmh = parse(key, value)?,
            "tau_family" => self.tau_family = parse(key, value)?,
            "tau_friend" => self.tau_friend = parse(key, value)?,
            "tau_off" => self.tau_off = parse(key, value)?,
            "home_dominance" => self.home_dominance = parse(key, value)?,
            "student_poi_share" => self.student_poi_share = parse(key, value)?,
            "svm_epochs" => self.svm_epochs = parse(key, value)?,
            "svm_learning_rate" => self.svm_learning_rate = parse(key, value)?,
            "svm_regularization" => self.svm_regularization = parse(key, value)?,
            "match_radius_km" => self.match_radius_km = parse(key, value)?,
            "route_overlap_threshold" => self.route_overlap_threshold = parse(key, value)?,
            "gazetteer" => {
                self.gazetteer =
                    if value.is_empty() { None } else { Some(std::path::PathBuf::from(value)) }
            }
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical `(key, value)` pairs, sorted by key; stored in the
    /// knowledge base so every run is auditable.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let method = match self.method {
            ClusterMethod::Em => "em",
            ClusterMethod::Xmeans => "xmeans",
        };
        let mut pairs: Vec<(String, String)> = vec![
            ("busyness_seed_quantile", self.busyness_seed_quantile.to_string()),
            ("dedup", self.dedup.to_string()),
            (
                "gazetteer",
                self.gazetteer
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("duration_unit", self.duration_unit.to_string()),
            ("home_dominance", self.home_dominance.to_string()),
            ("late_night_fraction", self.late_night_fraction.to_string()),
            ("match_radius_km", self.match_radius_km.to_string()),
            ("merge_radius_km", self.merge_radius_km.to_string()),
            ("method", method.to_string()),
            ("min_weight_fraction", self.min_weight_fraction.to_string()),
            ("min_work_share", self.min_work_share.to_string()),
            ("motor_min_kmh", self.motor_min_kmh.to_string()),
            ("neighbor_radius_km", self.neighbor_radius_km.to_string()),
            ("off_end", self.off_end.format("%H:%M").to_string()),
            ("off_start", self.off_start.format("%H:%M").to_string()),
            ("omega_c", self.omega_c.to_string()),
            ("omega_d", self.omega_d.to_string()),
            ("poi_share_radius_km", self.poi_share_radius_km.to_string()),
            ("professional_quantile", self.professional_quantile.to_string()),
            ("quantile_high", self.quantile_high.to_string()),
            ("quantile_low", self.quantile_low.to_string()),
            ("regularity_threshold", self.regularity_threshold.to_string()),
            ("route_k", self.route_k.to_string()),
            ("route_overlap_threshold", self.route_overlap_threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("student_poi_share", self.student_poi_share.to_string()),
            ("svm_epochs", self.svm_epochs.to_string()),
            ("svm_learning_rate", self.svm_learning_rate.to_string()),
            ("svm_regularization", self.svm_regularization.to_string()),
            ("tau_family", self.tau_family.to_string()),
            ("tau_friend", self.tau_friend.to_string()),
            ("tau_off", self.tau_off.to_string()),
            ("time_tolerance_secs", self.time_tolerance_secs.to_string()),
            ("traveler_quantile", self.traveler_quantile.to_string()),
            ("walk_max_kmh", self.walk_max_kmh.to_string()),
            ("window_end", self.window_end.to_string()),
            ("window_start", self.window_start.to_string()),
            ("working_end", self.working_end.format("%H:%M").to_string()),
            ("working_start", self.working_start.format("%H:%M").to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        pairs.sort();
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_internally_consistent() {
        let cfg = PipelineConfig::default();
        assert!(cfg.observation_window().is_ok());
        assert!(cfg.working_hours().is_ok());
        assert!(cfg.off_hours().is_ok());
        assert!(crate::model::validate_day_partition(&cfg.day_slots()).is_ok());
        cfg.score_params().validate().unwrap();
    }

    #[test]
    fn set_and_serialize_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set("omega_d", "2.5").unwrap();
        cfg.set("method", "xmeans").unwrap();
        cfg.set("working_start", "10:00").unwrap();
        let pairs = cfg.to_pairs();
        let get = |k: &str| pairs.iter().find(|(key, _)| key == k).unwrap().1.clone();
        assert_eq!(get("omega_d"), "2.5");
        assert_eq!(get("method"), "xmeans");
        assert_eq!(get("working_start"), "10:00");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("no_such_knob", "1").is_err());
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nseed=7\nmerge_radius_km = 2.0\n").unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.merge_radius_km, 2.0);
    }

    #[test]
    fn bad_config_line_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed: 7\n").unwrap();
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.apply_file(&path), Err(Error::Config(_))));
    }
}
