//! Offline verbs. Each returns the text it would print.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ecpsim::log::{export_csv, Column, Event, ExportSelection, TrajectoryLog};
use ecpsim::planner::{PlanarGoal, PlanarPose, PlannerEvent};
use ecpsim::scene::{load_scene_file, SceneSpec};
use ecpsim::session::{run_ticks, run_unicomp};

use crate::service::SessionRecord;

pub fn load(path: &Path) -> Result<SceneSpec> {
    load_scene_file(path).with_context(|| format!("loading {}", path.display()))
}

fn save(log: &TrajectoryLog, out: Option<&Path>, summary: &mut String) -> Result<()> {
    if let Some(out) = out {
        log.save(out).with_context(|| format!("writing {}", out.display()))?;
        writeln!(summary, "log written to {}", out.display())?;
    }
    Ok(())
}

fn describe(log: &TrajectoryLog) -> Result<String> {
    let mut s = String::new();
    let degraded = log.records.iter().filter(|r| r.degraded).count();
    let sim_time = log.records.last().map_or(0.0, |r| r.time);
    writeln!(s, "scene {}: {} steps, t = {sim_time:.3} s, {degraded} degraded", log.scene, log.records.len())?;
    if let Some(last) = log.records.last() {
        for b in &last.bodies {
            let p = b.pose.position;
            writeln!(s, "  {}: com ({:.4}, {:.4}, {:.4}) yaw {:.4}", b.id, p.x, p.y, p.z, b.pose.yaw())?;
        }
    }
    let mut contact = 0;
    let mut modes = 0;
    for e in &log.events {
        match e.event {
            Event::Contact(_) => contact += 1,
            Event::Mode { .. } => modes += 1,
            _ => {}
        }
    }
    writeln!(s, "  {contact} contact events, {modes} mode transitions")?;
    Ok(s)
}

pub fn simulate(scene: &Path, duration: Option<f64>, out: Option<&Path>) -> Result<String> {
    let spec = load(scene)?;
    let log = run_unicomp(&spec, duration.unwrap_or(spec.duration))?;
    let mut s = describe(&log)?;
    save(&log, out, &mut s)?;
    Ok(s)
}

pub fn push(scene: &Path, goal: [f64; 3], duration: Option<f64>, out: Option<&Path>) -> Result<String> {
    let mut spec = load(scene)?;
    let Some(planner) = spec.planner.as_mut() else {
        bail!("{} has no [planner] section", scene.display());
    };
    planner.goal = PlanarGoal {
        position: [goal[0], goal[1]],
        yaw: goal[2],
        ..planner.goal
    };
    let object = planner.object.clone();
    spec.validate()?;
    let log = run_unicomp(&spec, duration.unwrap_or(spec.duration))?;
    let mut s = describe(&log)?;
    let reached = log
        .planner_events()
        .find_map(|(e, p)| matches!(p, PlannerEvent::GoalReached { .. }).then_some(e.step));
    let intervals = log
        .planner_events()
        .filter(|(_, p)| matches!(p, PlannerEvent::Interval { .. }))
        .count();
    match reached {
        Some(step) => writeln!(s, "goal reached at step {step} after {intervals} control intervals")?,
        None => writeln!(s, "goal not reached after {intervals} control intervals")?,
    }
    if let Some(b) = log.records.last().and_then(|r| r.bodies.iter().find(|b| b.id == object)) {
        let p = PlanarPose::of(&b.pose);
        writeln!(s, "  {object}: planar pose ({:.4}, {:.4}, {:.4})", p.x, p.y, p.yaw)?;
    }
    save(&log, out, &mut s)?;
    Ok(s)
}

pub fn avoid_demo(scene: &Path, out: Option<&Path>) -> Result<String> {
    let spec = load(scene)?;
    if spec.robot.is_none() {
        bail!("{} has no [robot] section", scene.display());
    }
    let log = run_unicomp(&spec, spec.duration)?;
    let mut s = describe(&log)?;
    let min = log.robot.iter().map(|r| r.min_clearance).fold(f64::INFINITY, f64::min);
    let active = log.robot.iter().filter(|r| r.rows > 0).count();
    let fallbacks = log.robot.iter().filter(|r| r.fallback).count();
    writeln!(s, "  min clearance {min:.6} m, constraints active on {active} steps, {fallbacks} fallbacks")?;
    if let Some(r) = log.robot.last() {
        let e = r.end_effector;
        writeln!(s, "  end effector ({:.4}, {:.4}, {:.4})", e.x, e.y, e.z)?;
    }
    save(&log, out, &mut s)?;
    Ok(s)
}

pub fn export(log: &Path, columns: &str, body: Option<&str>, pair: Option<&str>) -> Result<String> {
    let log = TrajectoryLog::load(log).with_context(|| format!("reading {}", log.display()))?;
    let columns = Column::parse_list(columns)?;
    let body = match body {
        Some(b) => b.to_string(),
        None => log
            .records
            .first()
            .and_then(|r| r.bodies.first())
            .map(|b| b.id.clone())
            .context("log has no bodies")?,
    };
    Ok(export_csv(
        &log,
        &ExportSelection {
            columns,
            body,
            pair: pair.map(str::to_string),
        },
    )?)
}

pub fn replay(scene: &Path, record: &Path, out: Option<&Path>) -> Result<String> {
    let spec = load(scene)?;
    let text = std::fs::read_to_string(record).with_context(|| format!("reading {}", record.display()))?;
    let record: SessionRecord = serde_json::from_str(&text)?;
    let log = run_ticks(&spec, &record.schedule_pairs(), record.ticks)?;
    let mut s = describe(&log)?;
    save(&log, out, &mut s)?;
    Ok(s)
}
