use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ponsim::config::ScenarioConfig;
use ponsim::flsync::{accuracy_at, AccuracyTable};
use ponsim::metrics::{CSV_HEADER, SUMMARY_HEADER};
use ponsim::runner::{execute, LogMode};
use ponsim::sched::GateRecord;
use ponsim::sim::FrameRecord;
use ponsim::time::SimTime;

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn shipped_configs_parse() {
    let default = ScenarioConfig::load(&workspace().join("configs/default.toml")).unwrap();
    assert_eq!(default, ScenarioConfig::default());
    let desk = ScenarioConfig::load(&workspace().join("configs/desk.toml")).unwrap();
    assert_eq!(desk, ScenarioConfig::desk_scale());
}

#[test]
fn example_accuracy_table_loads() {
    let t = AccuracyTable::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/accuracy_example.txt")).unwrap();
    assert_eq!(t.rows().len(), 3);
    assert!((accuracy_at(&t, 0.9).unwrap() - 0.755).abs() < 1e-12);
}

#[test]
fn result_files_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ScenarioConfig::desk_scale();
    c.duration = SimTime::from_millis(6_200);
    c.warmup = SimTime::from_millis(500);
    c.replications = 2;
    c.load_sweep = vec![0.7, 0.9];
    let out = execute(std::slice::from_ref(&c), dir.path(), BTreeMap::new(), Some(1), LogMode::Frames).unwrap();
    assert_eq!(out.results.len(), 4);

    let text = std::fs::read_to_string(dir.path().join("desk_DWBA_FL_DC_FIRST_FF_load0.7.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario,seed,load,scheduler,policy,wavelength_policy,class,metric,value"));
    assert_eq!(CSV_HEADER, "scenario,seed,load,scheduler,policy,wavelength_policy,class,metric,value");
    let mut metrics: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut seeds = BTreeSet::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 9, "{line}");
        assert_eq!(&cols[..6], ["desk", cols[1], "0.7", "DWBA_FL", "DC_FIRST", "FF"]);
        cols[8].parse::<f64>().unwrap();
        seeds.insert(cols[1].to_string());
        metrics.entry(cols[6].to_string()).or_default().insert(cols[7].to_string());
    }
    assert_eq!(seeds, BTreeSet::from(["1".to_string(), "2".to_string()]));
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let delay = set(&["mean_delay_s", "p10", "p30", "p50", "p80", "p100", "drop_count"]);
    for class in ["DC", "DS", "BE"] {
        assert_eq!(metrics[class], delay, "{class}");
    }
    let mut fl = delay.clone();
    fl.extend(set(&[
        "fl_round_delay_s",
        "fl_round_p10",
        "fl_round_p30",
        "fl_round_p50",
        "fl_round_p80",
        "fl_round_p100",
        "involved_fraction",
    ]));
    assert_eq!(metrics["FL"], fl);
    assert_eq!(metrics["ALL"], set(&["util_λ0", "util_λ1", "mean_cycle_s"]));

    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
    assert!(summary.lines().skip(1).all(|l| l.split(',').count() == 10 && l.ends_with(",2")));
    assert!(summary.contains("desk,0.9,DWBA_FL,DC_FIRST,FF,DC,mean_delay_s,"));

    let gates = std::fs::read_to_string(dir.path().join("gates_desk_DWBA_FL_DC_FIRST_FF_load0.7_seed1.csv")).unwrap();
    assert_eq!(gates.lines().next(), Some(GateRecord::CSV_HEADER));
    assert!(gates.lines().nth(1).unwrap().split(',').count() == 6);
    let frames = std::fs::read_to_string(dir.path().join("frames_desk_DWBA_FL_DC_FIRST_FF_load0.7_seed2.csv")).unwrap();
    assert_eq!(frames.lines().next(), Some(FrameRecord::CSV_HEADER));
    assert!(frames.lines().count() > 1000);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
    assert_eq!(manifest["config_hashes"][0], serde_json::json!(c.hash()));
}
