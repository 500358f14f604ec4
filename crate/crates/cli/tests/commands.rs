use std::path::PathBuf;

use ecpsim::log::TrajectoryLog;
use ecpsim_cli::commands;

fn scene(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name)
}

#[test]
fn simulate_then_export_selected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stick.json");
    let summary = commands::simulate(&scene("stick.toml"), Some(0.2), Some(&out)).unwrap();
    assert!(summary.contains("200 steps"), "{summary}");
    let log = TrajectoryLog::load(&out).unwrap();
    assert_eq!(log.records.len(), 200);

    let csv = commands::export(&out, "t,com_y,lam_n,mode", None, None).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,com_y,lam_n,mode");
    assert_eq!(lines.count(), 200);
    assert_eq!(csv, commands::export(&out, "t,com_y,lam_n,mode", Some("block"), None).unwrap());
    assert!(commands::export(&out, "t,bogus", None, None).is_err());
}

#[test]
fn push_requires_a_planner_section() {
    let err = commands::push(&scene("stick.toml"), [0.1, 0.0, 0.0], Some(0.1), None).unwrap_err();
    assert!(err.to_string().contains("planner"), "{err}");
}

#[test]
fn avoid_demo_reports_clearance() {
    let summary = commands::avoid_demo(&scene("avoid.toml"), None).unwrap();
    assert!(summary.contains("min clearance"), "{summary}");
    assert!(commands::avoid_demo(&scene("rest.toml"), None).is_err());
}

#[test]
fn replay_reruns_a_session_record() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("session.json");
    std::fs::write(
        &record,
        r#"{"ticks":300,"schedule":[{"tick":100,"message":{"type":"pause"}},{"tick":150,"message":{"type":"resume"}}]}"#,
    )
    .unwrap();
    let out = dir.path().join("replay.json");
    commands::replay(&scene("slide.toml"), &record, Some(&out)).unwrap();
    let log = TrajectoryLog::load(&out).unwrap();
    assert_eq!(log.records.len(), 250);
}

#[test]
fn missing_scene_names_the_file() {
    let err = commands::simulate(&scene("nope.toml"), None, None).unwrap_err();
    assert!(format!("{err:#}").contains("nope.toml"));
}
