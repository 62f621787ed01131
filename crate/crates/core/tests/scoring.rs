//! Scorer semantics against hand-built knowledge bases: the rates must
//! reflect exactly the facts written, independent of how the pipeline
//! would have produced them.

use cdrlens_core::kb::{KnowledgeBase, Layer, Table};
use cdrlens_core::pipeline::Pipeline;
use cdrlens_core::synth::read_truth_file;
use cdrlens_core::PipelineConfig;

fn layer(i: u8) -> Layer {
    Layer::new(i).unwrap()
}

struct Person {
    user: String,
    kind: &'static str,
    home: (f64, f64),
    work: Option<(f64, f64)>,
    route: String,
    predicted_regular: bool,
    labels: String,
}

/// Writes a knowledge base whose layer-2..5 rows encode the given
/// predictions verbatim.
fn build_kb(dir: &std::path::Path, people: &[Person]) -> Pipeline {
    let kb = KnowledgeBase::open(dir.join("kb")).unwrap();
    let mut places = Table::new(&["user_id", "home_lat", "home_lon", "work_lat", "work_lon", "n_pois"]);
    let mut pois = Table::new(&[
        "user_id", "poi", "lat", "lon", "weight", "score_off", "score_work", "score_total", "towers",
    ]);
    let mut workers = Table::new(&["user_id", "kind", "commute_km", "bucket"]);
    let mut routes = Table::new(&["user_id", "route"]);
    let mut profiles = Table::new(&[
        "user_id", "worker_kind", "home_lat", "home_lon", "work_lat", "work_lon", "commute_km",
        "working_hours", "off_day", "transport", "labels",
    ]);
    let ff = Table::new(&["group_id", "kind", "user_id"]);

    for p in people {
        let (hla, hlo) = (p.home.0.to_string(), p.home.1.to_string());
        let (wla, wlo) = p
            .work
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .unwrap_or_default();
        places
            .push(vec![p.user.clone(), hla.clone(), hlo.clone(), wla.clone(), wlo.clone(), "1".into()])
            .unwrap();
        pois.push(vec![
            p.user.clone(),
            "0".into(),
            hla.clone(),
            hlo.clone(),
            "1".into(),
            "10".into(),
            "0".into(),
            "10".into(),
            format!("{}:{}", p.home.0, p.home.1),
        ])
        .unwrap();
        let kind = if p.predicted_regular { "REGULAR" } else { "IRREGULAR" };
        workers.push(vec![p.user.clone(), kind.into(), String::new(), String::new()]).unwrap();
        if !p.route.is_empty() {
            routes.push(vec![p.user.clone(), p.route.clone()]).unwrap();
        }
        profiles
            .push(vec![
                p.user.clone(),
                kind.into(),
                hla,
                hlo,
                wla,
                wlo,
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                p.labels.clone(),
            ])
            .unwrap();
    }
    kb.write(layer(2), "user_places", &places).unwrap();
    kb.write(layer(2), "pois", &pois).unwrap();
    kb.write(layer(3), "worker_class", &workers).unwrap();
    kb.write(layer(3), "routes", &routes).unwrap();
    kb.write(layer(4), "profiles", &profiles).unwrap();
    kb.write(layer(5), "family_friends", &ff).unwrap();
    Pipeline::new(kb, PipelineConfig::default())
}

fn truth_csv(people: &[Person]) -> String {
    let mut out = String::from(cdrlens_core::synth::TRUTH_HEADER);
    out.push('\n');
    for p in people {
        let (wla, wlo) = p
            .work
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},,,,,{}\n",
            p.user, p.kind, p.home.0, p.home.1, wla, wlo, p.route
        ));
    }
    out
}

#[test]
fn perfect_predictions_score_one_hundred_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let people = vec![
        Person {
            user: "u1".into(),
            kind: "REGULAR_WORKER",
            home: (23.75, 90.38),
            work: Some((23.78, 90.41)),
            route: "23.75:90.38|23.765:90.395|23.78:90.41".into(),
            predicted_regular: true,
            labels: "SERVICE_HOLDER".into(),
        },
        Person {
            user: "u2".into(),
            kind: "HOMEMAKER",
            home: (23.72, 90.35),
            work: None,
            route: String::new(),
            predicted_regular: false,
            labels: "HOMEMAKER".into(),
        },
    ];
    let pipeline = build_kb(dir.path(), &people);
    let truth_path = dir.path().join("truth.csv");
    std::fs::write(&truth_path, truth_csv(&people)).unwrap();
    let truth = read_truth_file(&truth_path).unwrap();
    let report = cdrlens_core::synth::score_predictions(&truth, &pipeline).unwrap();
    for row in &report.rows {
        assert_eq!(row.rate(), 100.0, "{} at {}", row.fact, row.rate());
    }
}

#[test]
fn sixteen_of_twenty_working_groups_score_eighty_percent() {
    let dir = tempfile::tempdir().unwrap();
    let people: Vec<Person> = (0..20)
        .map(|i| Person {
            user: format!("u{i:02}"),
            kind: "HOMEMAKER",
            home: (23.70 + i as f64 * 0.003, 90.35),
            work: None,
            route: String::new(),
            // Four predictions wrongly claim a regular working pattern.
            predicted_regular: i < 4,
            labels: "HOMEMAKER".into(),
        })
        .collect();
    let pipeline = build_kb(dir.path(), &people);
    let truth_path = dir.path().join("truth.csv");
    std::fs::write(&truth_path, truth_csv(&people)).unwrap();
    let truth = read_truth_file(&truth_path).unwrap();
    let report = cdrlens_core::synth::score_predictions(&truth, &pipeline).unwrap();
    assert_eq!(report.rate_of("Working Group"), Some(80.0));
    assert_eq!(report.rate_of("Home Location"), Some(100.0));
}

#[test]
fn scoring_before_the_pipeline_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let kb = KnowledgeBase::open(dir.path().join("kb")).unwrap();
    let pipeline = Pipeline::new(kb, PipelineConfig::default());
    let truth_path = dir.path().join("truth.csv");
    std::fs::write(&truth_path, truth_csv(&[])).unwrap();
    let err = pipeline.score(&truth_path).unwrap_err();
    assert!(matches!(err, cdrlens_core::Error::MissingTable { .. }), "{err:?}");
}
