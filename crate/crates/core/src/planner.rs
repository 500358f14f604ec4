//! Planar pushing: mode annotation from solver impulses and a sampling
//! planner that ranks pushes by rolling the stepper forward.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{gap_body_body, ContactImpulse, FrictionParams};
use crate::error::{Error, Result};
use crate::geometry::{gjk_distance, world_part, ConvexPart, Shape};
use crate::math::{wrap_angle, Pose, SpatialVelocity, Vec3};
use crate::stepper::{StepRecord, World};

pub const EPS_N: f64 = 1e-9;
pub const EPS_S: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Break,
    Stick,
    Slide,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Break => "break",
            Mode::Stick => "stick",
            Mode::Slide => "slide",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `s`, `ρ_t`, `ρ_r` of one contact impulse. When the normal impulse is at or
/// below [`EPS_N`] all three are zero and `broken` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSurfaceCoords {
    pub s: f64,
    pub rho_t: f64,
    pub rho_r: f64,
    pub broken: bool,
}

pub fn limit_surface_coords(impulse: &ContactImpulse, friction: &FrictionParams) -> LimitSurfaceCoords {
    let cap = friction.mu * impulse.n;
    if impulse.n <= EPS_N || cap <= 0.0 {
        return LimitSurfaceCoords {
            s: 0.0,
            rho_t: 0.0,
            rho_r: 0.0,
            broken: impulse.n <= EPS_N,
        };
    }
    let qt = impulse.t / (cap * friction.e_t);
    let qo = impulse.o / (cap * friction.e_o);
    let rho_r = (impulse.r / (cap * friction.e_r)).abs();
    let rho_t = qt.hypot(qo);
    LimitSurfaceCoords {
        s: rho_t * rho_t + rho_r * rho_r,
        rho_t,
        rho_r,
        broken: false,
    }
}

pub fn classify(coords: &LimitSurfaceCoords, normal: f64, eps_n: f64, eps_s: f64) -> Mode {
    if normal <= eps_n || coords.broken {
        Mode::Break
    } else if coords.s >= 1.0 - eps_s {
        Mode::Slide
    } else {
        Mode::Stick
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAnnotation {
    pub step: u64,
    pub time: f64,
    pub pair: String,
    pub mode: Mode,
    pub s: f64,
    pub rho_t: f64,
    pub rho_r: f64,
}

/// One label per contact per step, in record order.
pub fn annotate_modes(records: &[StepRecord], eps_n: f64, eps_s: f64) -> Vec<ModeAnnotation> {
    let mut out = Vec::new();
    for r in records {
        for c in &r.contacts {
            let coords = limit_surface_coords(&c.impulse, &c.friction);
            out.push(ModeAnnotation {
                step: r.step,
                time: r.time,
                pair: c.pair.clone(),
                mode: classify(&coords, c.impulse.n, eps_n, eps_s),
                s: coords.s,
                rho_t: coords.rho_t,
                rho_r: coords.rho_r,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeInterval {
    pub pair: String,
    pub mode: Mode,
    pub first_step: u64,
    pub last_step: u64,
}

/// Compresses per-step labels into maximal runs of consecutive steps with the
/// same pair and mode.
pub fn mode_intervals(annotations: &[ModeAnnotation]) -> Vec<ModeInterval> {
    let mut pairs: Vec<&str> = Vec::new();
    for a in annotations {
        if !pairs.contains(&a.pair.as_str()) {
            pairs.push(&a.pair);
        }
    }
    let mut out = Vec::new();
    for pair in pairs {
        let mut cur: Option<ModeInterval> = None;
        for a in annotations.iter().filter(|a| a.pair == pair) {
            match &mut cur {
                Some(iv) if iv.mode == a.mode && a.step == iv.last_step + 1 => iv.last_step = a.step,
                _ => {
                    out.extend(cur.take());
                    cur = Some(ModeInterval {
                        pair: pair.to_string(),
                        mode: a.mode,
                        first_step: a.step,
                        last_step: a.step,
                    });
                }
            }
        }
        out.extend(cur);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl PlanarPose {
    pub fn of(pose: &Pose) -> Self {
        Self {
            x: pose.position.x,
            y: pose.position.y,
            yaw: pose.yaw(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarGoal {
    pub position: [f64; 2],
    pub yaw: f64,
    #[serde(default = "default_tol_position")]
    pub tol_position: f64,
    #[serde(default = "default_tol_yaw")]
    pub tol_yaw: f64,
    #[serde(default = "default_w_yaw")]
    pub w_yaw: f64,
}

fn default_tol_position() -> f64 {
    0.01
}

fn default_tol_yaw() -> f64 {
    0.05
}

fn default_w_yaw() -> f64 {
    0.1
}

impl PlanarGoal {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            position: [x, y],
            yaw,
            tol_position: default_tol_position(),
            tol_yaw: default_tol_yaw(),
            w_yaw: default_w_yaw(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_position > 0.0 && self.tol_yaw > 0.0) {
            return Err(Error::InvalidInput("goal tolerances must be positive".into()));
        }
        if !(self.w_yaw >= 0.0) {
            return Err(Error::InvalidInput("yaw weight must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn errors(&self, p: &PlanarPose) -> (f64, f64) {
        let dx = p.x - self.position[0];
        let dy = p.y - self.position[1];
        (dx.hypot(dy), wrap_angle(p.yaw - self.yaw))
    }

    /// `‖p − p*‖² + w_θ·wrap(θ − θ*)²`.
    pub fn cost(&self, p: &PlanarPose) -> f64 {
        let (d, e) = self.errors(p);
        d * d + self.w_yaw * e * e
    }

    pub fn reached(&self, p: &PlanarPose) -> bool {
        let (d, e) = self.errors(p);
        d <= self.tol_position && e.abs() <= self.tol_yaw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Hold,
    Continue,
    Reposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushCandidate {
    pub kind: CandidateKind,
    pub sample: usize,
    /// Contact sample on the object surface, body frame.
    pub point: Vec3,
    /// Outward face normal, body frame.
    pub normal: Vec3,
    /// Horizontal unit push direction, world frame.
    pub direction: Vec3,
    /// Push speed, m/s.
    pub magnitude: f64,
    pub predicted: Option<PlanarPose>,
    pub cost: Option<f64>,
}

/// Exposed side-face points at the pushing height, in the object's body
/// frame. Each side face of each convex part gets an equal share; points that
/// a tool of `tool_radius` could not touch (inside or next to another part)
/// are dropped.
pub fn side_samples(
    shape: &Shape,
    pose: &Pose,
    n_samples: usize,
    push_height: f64,
    tool_radius: f64,
) -> Result<Vec<(Vec3, Vec3)>> {
    let hull = match shape {
        Shape::Hull(h) => h,
        Shape::Sphere { .. } => return Err(Error::InvalidInput("sphere objects have no side faces to push".into())),
    };
    let rot = pose.rotation();
    let world_parts: Vec<_> = hull.parts.iter().map(|p| world_part(p, pose)).collect();

    let mut faces: Vec<(Vec3, Vec3, Vec3)> = Vec::new();
    for part in &hull.parts {
        for (fi, f) in part.faces.iter().enumerate() {
            let nw = rot * f.normal;
            if nw.z.abs() > 0.1 {
                continue;
            }
            if let Some((a, b)) = face_segment(part, fi, pose, push_height) {
                faces.push((a, b, Vec3::new(nw.x, nw.y, 0.0).normalize()));
            }
        }
    }
    if faces.is_empty() || n_samples == 0 {
        return Err(Error::InvalidInput("object has no side faces at the pushing height".into()));
    }

    let base = n_samples / faces.len();
    let extra = n_samples % faces.len();
    let mut out = Vec::new();
    for (k, (a, b, n)) in faces.iter().enumerate() {
        let count = base + usize::from(k < extra);
        for i in 0..count {
            let t = (i as f64 + 0.5) / count as f64;
            let p = a + (b - a) * t;
            let centre = p + n * tool_radius;
            let clear = world_parts
                .iter()
                .all(|wp| gjk_distance(&wp.vertices, &[centre]).distance >= tool_radius - 1e-9);
            if clear {
                out.push((pose.inverse_transform_point(&p), rot.transpose() * n));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no side face sample is reachable by the tool".into()));
    }
    Ok(out)
}

/// Horizontal chord of a face at world height `z`, ordered along `ẑ × n`.
fn face_segment(part: &ConvexPart, face: usize, pose: &Pose, z: f64) -> Option<(Vec3, Vec3)> {
    let idx = part.face_vertices(face);
    let verts: Vec<Vec3> = idx.iter().map(|&i| pose.transform_point(&part.vertices[i])).collect();
    let n = pose.rotation() * part.faces[face].normal;
    let tangent = Vec3::z().cross(&n);
    let mut pts = Vec::new();
    for i in 0..verts.len() {
        for j in (i + 1)..verts.len() {
            let (p, q) = (verts[i], verts[j]);
            if (p.z - z) * (q.z - z) <= 0.0 && (p.z - q.z).abs() > 1e-12 {
                let t = (z - p.z) / (q.z - p.z);
                pts.push(p + (q - p) * t);
            } else if (p.z - z).abs() <= 1e-12 {
                pts.push(p);
            }
        }
    }
    let lo = pts.iter().copied().min_by(|a, b| tangent.dot(a).total_cmp(&tangent.dot(b)))?;
    let hi = pts.iter().copied().max_by(|a, b| tangent.dot(a).total_cmp(&tangent.dot(b)))?;
    (tangent.dot(&(hi - lo)) > 1e-9).then_some((lo, hi))
}

/// One candidate per sample and magnitude, pushing straight into the face.
pub fn sample_push_candidates(
    world: &World,
    object: usize,
    n_samples: usize,
    magnitudes: &[f64],
    push_height: f64,
) -> Result<Vec<PushCandidate>> {
    let body = &world.bodies[object];
    let radius = world.tool.as_ref().map_or(0.0, |t| t.radius());
    let samples = side_samples(&body.shape, &body.pose, n_samples, push_height, radius)?;
    let rot = body.pose.rotation();
    let mut out = Vec::new();
    for (i, (point, normal)) in samples.iter().enumerate() {
        let nw = rot * normal;
        for &m in magnitudes {
            out.push(PushCandidate {
                kind: CandidateKind::Reposition,
                sample: i,
                point: *point,
                normal: *normal,
                direction: -Vec3::new(nw.x, nw.y, 0.0).normalize(),
                magnitude: m,
                predicted: None,
                cost: None,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Steps per control interval.
    pub control_interval: usize,
    /// Fractions of `v_max`.
    pub magnitudes: Vec<f64>,
    pub v_max: f64,
    pub n_samples: usize,
    pub push_height: f64,
    /// Side offsets of continued pushes from the face normal, radians.
    pub steer_angles: Vec<f64>,
    /// Stand-off distance as a multiple of the tool radius.
    pub standoff: f64,
    /// Initial lead of the impedance target ahead of the tool, m.
    pub lead: f64,
    pub stall_tol: f64,
    pub max_intervals: usize,
    /// Clearance above the object top during approach moves, m.
    pub safe_height: f64,
    pub waypoint_tol: f64,
    /// Object speed (m/s, rotation scaled by its smallest extent) below which
    /// it counts as settled.
    pub settle_speed: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            control_interval: 20,
            magnitudes: vec![0.25, 0.5, 1.0],
            v_max: 0.2,
            n_samples: 16,
            push_height: 0.02,
            steer_angles: vec![-0.35, 0.0, 0.35],
            standoff: 1.5,
            lead: 0.02,
            stall_tol: 1e-6,
            max_intervals: 2000,
            safe_height: 0.02,
            waypoint_tol: 2e-3,
            settle_speed: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PushCommand {
    direction: Vec3,
    speed: f64,
}

/// Starts a push: the impedance target leads the tool along `direction` by at
/// least `lead`, keeping any lag already built up. A zero-speed command parks
/// the target on the tool.
fn begin_push(world: &mut World, cmd: &PushCommand, lead: f64, height: f64) {
    let Some(tool) = world.tool.as_mut() else { return };
    let p = tool.body.pose.position;
    let target = if cmd.speed > 0.0 {
        let lag = (tool.target - p).dot(&cmd.direction);
        p + cmd.direction * lag.max(lead)
    } else {
        p
    };
    tool.target = Vec3::new(target.x, target.y, height);
}

fn advance_push(world: &mut World, cmd: &PushCommand) {
    let h = world.params.h;
    if let Some(tool) = world.tool.as_mut() {
        tool.target += cmd.direction * (cmd.speed * h);
    }
}

/// Executes one control interval of `cmd` on a copy of `world`.
fn rollout(world: &World, cmd: &PushCommand, params: &PlannerParams) -> Result<World> {
    let mut w = world.clone();
    for k in 0..params.control_interval {
        if k == 0 {
            begin_push(&mut w, cmd, params.lead, params.push_height);
        } else {
            advance_push(&mut w, cmd);
        }
        w.step()?;
    }
    Ok(w)
}

fn evaluate(
    world: &World,
    object: usize,
    goal: &PlanarGoal,
    params: &PlannerParams,
    mut candidates: Vec<PushCandidate>,
) -> Result<Vec<PushCandidate>> {
    let radius = world.tool.as_ref().map_or(0.0, |t| t.radius());
    let results: Vec<Result<PlanarPose>> = candidates
        .par_iter()
        .map(|c| {
            let cmd = PushCommand {
                direction: c.direction,
                speed: c.magnitude,
            };
            let w = if c.kind == CandidateKind::Reposition {
                let mut start = world.clone();
                let pose = start.bodies[object].pose;
                let tool = start.tool.as_mut().expect("pushing requires a tool");
                let p = pose.transform_point(&c.point) + pose.rotation() * c.normal * radius;
                tool.body.pose = Pose::from_translation(Vec3::new(p.x, p.y, params.push_height));
                tool.body.velocity = SpatialVelocity::zero();
                tool.target = tool.body.pose.position;
                rollout(&start, &cmd, params)?
            } else {
                rollout(world, &cmd, params)?
            };
            Ok(PlanarPose::of(&w.bodies[object].pose))
        })
        .collect();
    for (c, r) in candidates.iter_mut().zip(results) {
        let p = r?;
        c.cost = Some(goal.cost(&p));
        c.predicted = Some(p);
    }
    Ok(candidates)
}

/// Lowest predicted cost, ties to the lower index.
fn best(candidates: &[PushCandidate]) -> Option<&PushCandidate> {
    candidates.iter().fold(None, |acc: Option<&PushCandidate>, c| match acc {
        Some(b) if b.cost.unwrap_or(f64::INFINITY) <= c.cost.unwrap_or(f64::INFINITY) => Some(b),
        _ => Some(c),
    })
}

/// Hold plus steered pushes at the engaged sample, all from the exact state.
pub fn continue_candidates(
    world: &World,
    object: usize,
    sample: (usize, Vec3, Vec3),
    params: &PlannerParams,
) -> Vec<PushCandidate> {
    let pose = world.bodies[object].pose;
    let nw = pose.rotation() * sample.2;
    let inward = -Vec3::new(nw.x, nw.y, 0.0).normalize();
    let mut out = vec![PushCandidate {
        kind: CandidateKind::Hold,
        sample: sample.0,
        point: sample.1,
        normal: sample.2,
        direction: inward,
        magnitude: 0.0,
        predicted: None,
        cost: None,
    }];
    for &a in &params.steer_angles {
        let (s, c) = a.sin_cos();
        let d = Vec3::new(c * inward.x - s * inward.y, s * inward.x + c * inward.y, 0.0);
        for &m in &params.magnitudes {
            out.push(PushCandidate {
                kind: CandidateKind::Continue,
                sample: sample.0,
                point: sample.1,
                normal: sample.2,
                direction: d,
                magnitude: m * params.v_max,
                predicted: None,
                cost: None,
            });
        }
    }
    out
}

/// Ranks pushes from the current state. With an engaged sample the hold and
/// steered continuations are rolled out; otherwise every reachable sample is
/// tried with the tool placed on it. Returns all candidates with predictions
/// and the index of the winner.
pub fn plan_step(
    world: &World,
    object: usize,
    goal: &PlanarGoal,
    params: &PlannerParams,
    engaged: Option<(usize, Vec3, Vec3)>,
) -> Result<(Vec<PushCandidate>, usize)> {
    if world.tool.is_none() {
        return Err(Error::InvalidInput("pushing requires a tool".into()));
    }
    let candidates = match engaged {
        Some(s) => continue_candidates(world, object, s, params),
        None => {
            // Speed is refined by the continuation candidates once engaged.
            sample_push_candidates(world, object, params.n_samples, &[params.v_max], params.push_height)?
        }
    };
    let ranked = evaluate(world, object, goal, params, candidates)?;
    let b = best(&ranked).expect("candidate list is never empty");
    let idx = ranked.iter().position(|c| std::ptr::eq(c, b)).unwrap_or(0);
    Ok((ranked, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanReason {
    Start,
    Stall,
    ContactBroken,
    GoalChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerEvent {
    Replan {
        reason: ReplanReason,
        sample: usize,
        magnitude: f64,
        cost: f64,
        predicted_cost: f64,
    },
    Interval {
        sample: usize,
        magnitude: f64,
        cost_before: f64,
        predicted_cost: f64,
        cost_after: f64,
    },
    Stall {
        cost: f64,
    },
    GoalReached {
        cost: f64,
    },
    Exhausted {
        cost: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerStatus {
    Running,
    Reached,
    Stalled,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Idle(ReplanReason),
    Approach {
        waypoints: Vec<Vec3>,
        next: usize,
        timer: usize,
    },
    Settle {
        step: usize,
    },
    /// Closing the last stand-off gap until the tool touches the sample.
    Engage {
        timer: usize,
    },
    Push {
        cmd: PushCommand,
        step: usize,
        cost_before: f64,
        predicted_cost: f64,
    },
    Finished,
}

/// Approach–push cycle driving the tool. Call [`PushPlanner::pre_step`]
/// before every [`World::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct PushPlanner {
    pub params: PlannerParams,
    pub goal: PlanarGoal,
    pub object: usize,
    pub status: PlannerStatus,
    pub intervals: usize,
    phase: Phase,
    engaged: Option<(usize, Vec3, Vec3)>,
}

impl PushPlanner {
    pub fn new(object: usize, goal: PlanarGoal, params: PlannerParams) -> Result<Self> {
        goal.validate()?;
        if params.control_interval == 0 || params.magnitudes.is_empty() || !(params.v_max > 0.0) {
            return Err(Error::InvalidInput("planner needs a positive interval, speed and magnitude grid".into()));
        }
        Ok(Self {
            params,
            goal,
            object,
            status: PlannerStatus::Running,
            intervals: 0,
            phase: Phase::Idle(ReplanReason::Start),
            engaged: None,
        })
    }

    pub fn set_goal(&mut self, goal: PlanarGoal) -> Result<()> {
        goal.validate()?;
        self.goal = goal;
        self.status = PlannerStatus::Running;
        self.engaged = None;
        self.phase = Phase::Idle(ReplanReason::GoalChanged);
        Ok(())
    }

    pub fn current_cost(&self, world: &World) -> f64 {
        self.goal.cost(&PlanarPose::of(&world.bodies[self.object].pose))
    }

    /// Sets the tool target for the coming step and reports planner events.
    pub fn pre_step(&mut self, world: &mut World) -> Result<Vec<PlannerEvent>> {
        let mut events = Vec::new();
        match &mut self.phase {
            Phase::Finished => return Ok(events),
            Phase::Push { cmd, step, .. } if *step < self.params.control_interval => {
                if *step > 0 {
                    advance_push(world, cmd);
                }
                *step += 1;
                return Ok(events);
            }
            Phase::Push {
                cmd,
                cost_before,
                predicted_cost,
                ..
            } => {
                events.push(PlannerEvent::Interval {
                    sample: self.engaged.map_or(0, |s| s.0),
                    magnitude: cmd.speed,
                    cost_before: *cost_before,
                    predicted_cost: *predicted_cost,
                    cost_after: self.current_cost(world),
                });
                self.decide(world, None, &mut events)?;
            }
            Phase::Approach { waypoints, next, timer } => {
                let tool = world.tool.as_mut().expect("pushing requires a tool");
                let wp = waypoints[*next];
                *timer += 1;
                let close = (tool.body.pose.position - wp).norm() <= self.params.waypoint_tol;
                if close || *timer > 2000 {
                    *next += 1;
                    *timer = 0;
                }
                if *next < waypoints.len() {
                    tool.target = waypoints[*next];
                    return Ok(events);
                }
                self.phase = Phase::Engage { timer: 0 };
                return self.pre_step(world);
            }
            Phase::Settle { step } => {
                *step += 1;
                let body = &world.bodies[self.object];
                if *step < 50 * self.params.control_interval && self.object_speed(body) > self.params.settle_speed {
                    return Ok(events);
                }
                self.decide(world, None, &mut events)?;
            }
            Phase::Engage { timer } => {
                *timer += 1;
                let timer = *timer;
                if timer < 1000 && !self.touching(world, world.params.activation_margin)? {
                    let (_, p, n) = self.engaged.expect("engaging requires a sample");
                    let body = &world.bodies[self.object];
                    let nw = body.pose.rotation() * n;
                    let nh = Vec3::new(nw.x, nw.y, 0.0).normalize();
                    let s = body.pose.transform_point(&p);
                    let r = world.tool.as_ref().map_or(0.0, |t| t.radius());
                    let tool = world.tool.as_mut().expect("pushing requires a tool");
                    let t = s + nh * (0.95 * r);
                    tool.target = Vec3::new(t.x, t.y, self.params.push_height);
                    return Ok(events);
                }
                self.decide(world, None, &mut events)?;
            }
            Phase::Idle(reason) => {
                let reason = *reason;
                self.decide(world, Some(reason), &mut events)?;
            }
        }
        Ok(events)
    }

    fn finish(&mut self, world: &mut World, status: PlannerStatus) {
        self.status = status;
        self.phase = Phase::Finished;
        if let Some(tool) = world.tool.as_mut() {
            tool.target = tool.body.pose.position;
        }
    }

    fn start_push(&mut self, world: &mut World, c: &PushCandidate, cost: f64) {
        let cmd = PushCommand {
            direction: c.direction,
            speed: c.magnitude,
        };
        begin_push(world, &cmd, self.params.lead, self.params.push_height);
        self.intervals += 1;
        self.phase = Phase::Push {
            cmd,
            step: 1,
            cost_before: cost,
            predicted_cost: c.cost.unwrap_or(cost),
        };
    }

    fn decide(&mut self, world: &mut World, reason: Option<ReplanReason>, events: &mut Vec<PlannerEvent>) -> Result<()> {
        let cost = self.current_cost(world);
        let moving = self.object_speed(&world.bodies[self.object]) > self.params.settle_speed;
        if self.goal.reached(&PlanarPose::of(&world.bodies[self.object].pose)) {
            if moving {
                self.settle(world);
                return Ok(());
            }
            events.push(PlannerEvent::GoalReached { cost });
            self.finish(world, PlannerStatus::Reached);
            return Ok(());
        }
        if self.intervals >= self.params.max_intervals {
            events.push(PlannerEvent::Exhausted { cost });
            self.finish(world, PlannerStatus::Exhausted);
            return Ok(());
        }

        let mut reason = reason.unwrap_or(ReplanReason::Stall);
        if let Some(sample) = self.engaged {
            if self.touching(world, 0.5 * world.tool.as_ref().map_or(0.0, |t| t.radius()))? {
                let (ranked, i) = plan_step(world, self.object, &self.goal, &self.params, Some(sample))?;
                let c = &ranked[i];
                if c.kind == CandidateKind::Continue && c.cost.unwrap_or(f64::INFINITY) < cost - self.params.stall_tol {
                    let c = c.clone();
                    self.start_push(world, &c, cost);
                    return Ok(());
                }
                events.push(PlannerEvent::Stall { cost });
                if moving {
                    self.settle(world);
                    return Ok(());
                }
                reason = ReplanReason::Stall;
            } else {
                reason = ReplanReason::ContactBroken;
            }
            self.engaged = None;
        }
        if moving {
            self.settle(world);
            return Ok(());
        }

        let (ranked, _) = plan_step(world, self.object, &self.goal, &self.params, None)?;
        let chosen = ranked
            .iter()
            .fold(None, |acc: Option<&PushCandidate>, c| match acc {
                Some(b) if b.cost.unwrap_or(f64::INFINITY) <= c.cost.unwrap_or(f64::INFINITY) => Some(b),
                _ => Some(c),
            })
            .filter(|c| c.cost.unwrap_or(f64::INFINITY) < cost - self.params.stall_tol)
            .cloned();
        let Some(c) = chosen else {
            events.push(PlannerEvent::Stall { cost });
            self.finish(world, PlannerStatus::Stalled);
            return Ok(());
        };
        self.intervals += 1;
        events.push(PlannerEvent::Replan {
            reason,
            sample: c.sample,
            magnitude: c.magnitude,
            cost,
            predicted_cost: c.cost.unwrap_or(cost),
        });
        self.engaged = Some((c.sample, c.point, c.normal));
        let waypoints = self.approach_path(world, &c)?;
        if let Some(tool) = world.tool.as_mut() {
            tool.target = waypoints[0];
        }
        self.phase = Phase::Approach {
            waypoints,
            next: 0,
            timer: 0,
        };
        Ok(())
    }

    fn object_speed(&self, body: &crate::stepper::Body) -> f64 {
        body.velocity.linear.norm() + body.velocity.angular.norm() * body.shape.min_extent()
    }

    /// Parks the tool until the object has come to rest.
    fn settle(&mut self, world: &mut World) {
        self.intervals += 1;
        if let Some(tool) = world.tool.as_mut() {
            tool.target = tool.body.pose.position;
        }
        self.phase = Phase::Settle { step: 0 };
    }

    fn touching(&self, world: &World, within: f64) -> Result<bool> {
        let tool = world.tool.as_ref().expect("pushing requires a tool");
        let body = &world.bodies[self.object];
        let gap = gap_body_body(&body.shape, &body.pose, &tool.body.shape, &tool.body.pose)?;
        Ok(gap.psi <= within)
    }

    /// Retreat, travel above the object when the straight path would hit it,
    /// then descend to the stand-off point in front of the sample.
    fn approach_path(&self, world: &World, c: &PushCandidate) -> Result<Vec<Vec3>> {
        let tool = world.tool.as_ref().expect("pushing requires a tool");
        let r = tool.radius();
        let body = &world.bodies[self.object];
        let nw = body.pose.rotation() * c.normal;
        let nh = Vec3::new(nw.x, nw.y, 0.0).normalize();
        let s = body.pose.transform_point(&c.point);
        let standoff = Vec3::new(s.x, s.y, self.params.push_height) + nh * (self.params.standoff * r);
        let p = tool.body.pose.position;

        let parts: Vec<Vec<Vec3>> = match &body.shape {
            Shape::Hull(h) => h.parts.iter().map(|pt| world_part(pt, &body.pose).vertices).collect(),
            Shape::Sphere { .. } => return Err(Error::InvalidInput("sphere objects cannot be pushed".into())),
        };
        let clear = |a: Vec3, b: Vec3| {
            (0..=32).all(|i| {
                let x = a + (b - a) * (i as f64 / 32.0);
                parts.iter().all(|v| gjk_distance(v, &[x]).distance >= r + 1e-3)
            })
        };
        if clear(p, standoff) {
            return Ok(vec![standoff]);
        }
        let top = parts.iter().flatten().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max);
        let z = top + r + self.params.safe_height;
        Ok(vec![
            Vec3::new(p.x, p.y, z.max(p.z)),
            Vec3::new(standoff.x, standoff.y, z.max(p.z)),
            standoff,
        ])
    }
}
