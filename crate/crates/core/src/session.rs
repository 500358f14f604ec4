//! The control loop tying planner, stepper and arm together. One
//! [`Session::tick`] is one loop iteration: desired tool command, interaction
//! solve, joint tracking with avoidance (from a frozen copy of the step-start
//! state, run alongside the solve) and the composed joint update.

use nalgebra::DVector;

use crate::avoidance::{build_avoidance_lcp, correct_increment, dls_increment, min_clearance, KinematicChain, ObstacleSphere};
use crate::error::{Error, Result};
use crate::log::{Event, RobotRecord, TrajectoryLog};
use crate::math::Vec3;
use crate::planner::{PlanarGoal, PushPlanner};
use crate::protocol::{frame, ClientMessage, RobotFrame, ServerMessage};
use crate::scene::{RobotTask, SceneSpec};
use crate::stepper::{ContactRecord, World};

#[derive(Debug, Clone)]
pub struct RobotState {
    pub chain: KinematicChain,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ArmStep {
    nominal: DVector<f64>,
    delta: DVector<f64>,
    eta: DVector<f64>,
    rows: usize,
    residual: f64,
    fallback: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    spec: SceneSpec,
    pub world: World,
    pub planner: Option<PushPlanner>,
    /// Cleared by a manual `set_target`, restored by `set_goal_pose`.
    pub planner_active: bool,
    pub robot: Option<RobotState>,
    pub obstacles: Vec<ObstacleSphere>,
    pub log: TrajectoryLog,
    pub paused: bool,
    pub tick: u64,
    /// Keep step records in the log; events are always kept.
    pub keep_records: bool,
    last_contacts: Vec<ContactRecord>,
    last_force: Vec3,
    last_rows: usize,
}

impl Session {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let log = TrajectoryLog::new(spec.name.clone(), spec.h);
        let mut s = Self {
            world: spec.build_world()?,
            planner: None,
            planner_active: true,
            robot: None,
            obstacles: Vec::new(),
            log,
            paused: false,
            tick: 0,
            keep_records: true,
            last_contacts: Vec::new(),
            last_force: Vec3::zeros(),
            last_rows: 0,
            spec,
        };
        s.rebuild()?;
        Ok(s)
    }

    fn rebuild(&mut self) -> Result<()> {
        self.world = self.spec.build_world()?;
        self.planner = self.spec.build_planner()?;
        self.planner_active = true;
        self.robot = self.spec.build_chain()?.map(|(chain, theta)| RobotState { chain, theta });
        self.obstacles = self.spec.obstacles.clone();
        self.last_contacts.clear();
        self.last_force = self.world.tool.as_ref().map_or(Vec3::zeros(), crate::stepper::tool_impedance_force);
        self.last_rows = 0;
        Ok(())
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// Applies a control message at the current step boundary and logs it.
    /// Rejected messages leave the session unchanged and are not logged.
    pub fn apply(&mut self, msg: &ClientMessage) -> Result<()> {
        msg.validate()?;
        match msg {
            ClientMessage::SetTarget { pos } => {
                let tool = self
                    .world
                    .tool
                    .as_mut()
                    .ok_or_else(|| Error::Protocol("scene has no tool".into()))?;
                tool.target = Vec3::from(*pos);
                self.planner_active = false;
            }
            ClientMessage::SetGoalPose { p, yaw } => {
                let planner = self
                    .planner
                    .as_mut()
                    .ok_or_else(|| Error::Protocol("scene has no planner".into()))?;
                let goal = PlanarGoal {
                    position: *p,
                    yaw: *yaw,
                    ..planner.goal
                };
                planner.set_goal(goal)?;
                self.planner_active = true;
            }
            ClientMessage::Pause => self.paused = true,
            ClientMessage::Resume => self.paused = false,
            ClientMessage::Reset => {
                self.rebuild()?;
                self.log.clear();
                self.paused = false;
            }
            ClientMessage::SetParams { path, value } => self.set_param(path, value)?,
        }
        self.log.push_event(self.tick, self.world.step_index, Event::Control(msg.clone()));
        Ok(())
    }

    /// Sets a dotted scene path such as `tool.kp` or `avoidance.k`. Tool,
    /// solver, planner and avoidance settings apply immediately; everything
    /// else takes effect on the next reset.
    fn set_param(&mut self, path: &str, value: &serde_json::Value) -> Result<()> {
        let mut doc = serde_json::to_value(&self.spec).map_err(|e| Error::Protocol(e.to_string()))?;
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = match key.parse::<usize>() {
                Ok(i) => slot.get_mut(i),
                Err(_) => slot.get_mut(key),
            }
            .ok_or_else(|| Error::Protocol(format!("unknown parameter `{path}`")))?;
        }
        *slot = value.clone();
        let spec: SceneSpec = serde_json::from_value(doc).map_err(|e| Error::Protocol(format!("{path}: {e}")))?;
        spec.validate().map_err(|e| Error::Protocol(e.to_string()))?;

        if let (Some(tool), Some(t)) = (self.world.tool.as_mut(), spec.tool.as_ref()) {
            tool.kp = t.kp.to_vec3();
            tool.kd = t.kd.to_vec3();
            tool.f_max = t.f_max;
        }
        let keep_index = self.world.step_index;
        self.world.params = spec.stepper_params();
        self.world.step_index = keep_index;
        if let (Some(planner), Some(p)) = (self.planner.as_mut(), spec.planner.as_ref()) {
            planner.params = p.params.clone();
            if planner.goal != p.goal {
                planner.set_goal(p.goal)?;
            }
        }
        self.spec = spec;
        Ok(())
    }

    fn arm_reference(&self) -> Option<Vec3> {
        let r = self.spec.robot.as_ref()?;
        match r.task {
            RobotTask::FollowTool => self.world.tool.as_ref().map(|t| t.target),
            RobotTask::Line { from, to, duration } => {
                let t = (self.world.step_index + 1) as f64 * self.spec.h;
                let s = (t / duration).min(1.0);
                Some(Vec3::from(from) + (Vec3::from(to) - Vec3::from(from)) * s)
            }
        }
    }

    fn arm_step(spec: &SceneSpec, robot: &RobotState, obstacles: &[ObstacleSphere], reference: Vec3) -> Result<ArmStep> {
        let r = spec.robot.as_ref().expect("robot state implies a robot section");
        let nominal = dls_increment(&robot.chain, &robot.theta, &reference, r.damping, r.max_step)?;
        let problem = build_avoidance_lcp(&robot.chain, &robot.theta, &nominal, obstacles, spec.h, &spec.avoidance)?;
        let c = correct_increment(&problem, &spec.avoidance)?;
        Ok(ArmStep {
            nominal,
            delta: c.delta,
            eta: c.eta,
            rows: problem.rows(),
            residual: c.residual,
            fallback: c.fallback,
        })
    }

    /// One loop iteration. Returns false while paused.
    pub fn tick(&mut self) -> Result<bool> {
        let tick = self.tick;
        self.tick += 1;
        if self.paused {
            return Ok(false);
        }

        // Desired tool command.
        if self.planner_active {
            if let Some(p) = self.planner.as_mut() {
                for e in p.pre_step(&mut self.world)? {
                    self.log.push_event(tick, self.world.step_index, Event::Planner(e));
                }
            }
        }

        // Interaction solve, with joint tracking and avoidance alongside.
        let reference = self.arm_reference();
        let (spec, robot, obstacles, world) = (&self.spec, &self.robot, &self.obstacles, &mut self.world);
        let (record, arm) = rayon::join(
            || world.step(),
            || match (robot, reference) {
                (Some(r), Some(x)) => Some(Self::arm_step(spec, r, obstacles, x)),
                _ => None,
            },
        );
        let record = record?;

        // Joint update.
        let robot_record = match (self.robot.as_mut(), arm) {
            (Some(robot), Some(arm)) => {
                let arm = arm?;
                for (q, d) in robot.theta.iter_mut().zip(arm.delta.iter()) {
                    *q += d;
                }
                robot.chain.clamp_to_limits(&mut robot.theta);
                for o in &mut self.obstacles {
                    o.center += o.velocity * self.spec.h;
                }
                if arm.fallback || arm.rows != self.last_rows {
                    self.log.push_event(
                        tick,
                        record.step + 1,
                        Event::Avoidance {
                            rows: arm.rows,
                            residual: arm.residual,
                            fallback: arm.fallback,
                        },
                    );
                }
                self.last_rows = arm.rows;
                let (ee, _) = robot.chain.end_effector(&robot.theta)?;
                Some(RobotRecord {
                    step: record.step,
                    theta: robot.theta.clone(),
                    nominal: arm.nominal.as_slice().to_vec(),
                    delta: arm.delta.as_slice().to_vec(),
                    eta: arm.eta.as_slice().to_vec(),
                    rows: arm.rows,
                    fallback: arm.fallback,
                    min_clearance: min_clearance(&robot.chain, &robot.theta, &self.obstacles, self.spec.avoidance.d_min)?,
                    end_effector: ee,
                })
            }
            _ => {
                for o in &mut self.obstacles {
                    o.center += o.velocity * self.spec.h;
                }
                None
            }
        };

        self.last_contacts = record.contacts.clone();
        self.last_force = record.tool.as_ref().map_or(Vec3::zeros(), |t| t.force);
        self.log.push_step(tick, record, robot_record);
        if !self.keep_records {
            self.log.records.clear();
            self.log.robot.clear();
        }
        Ok(true)
    }

    pub fn frame(&self, seq: u64) -> ServerMessage {
        let robot = self.robot.as_ref().map(|r| RobotFrame {
            theta: r.theta.clone(),
            min_clearance: min_clearance(&r.chain, &r.theta, &self.obstacles, self.spec.avoidance.d_min).unwrap_or(f64::INFINITY),
        });
        frame(seq, &self.world, &self.last_contacts, self.last_force.into(), robot)
    }
}

/// Offline run of `duration` seconds of physics with the scene's message
/// schedule applied at the listed ticks. Stops early if the session is left
/// paused with nothing left to apply.
pub fn run_unicomp(spec: &SceneSpec, duration: f64) -> Result<TrajectoryLog> {
    run_with_schedule(spec, duration, &spec.schedule.iter().map(|m| (m.tick, m.message.clone())).collect::<Vec<_>>())
}

pub fn run_with_schedule(spec: &SceneSpec, duration: f64, schedule: &[(u64, ClientMessage)]) -> Result<TrajectoryLog> {
    let steps = spec.steps(duration);
    drive(spec, schedule, |s, exhausted| s.world.step_index >= steps || (s.paused && exhausted))
}

/// Runs exactly `ticks` loop iterations, paused ones included. Replays a
/// recorded service session, where the tick count is the only clock.
pub fn run_ticks(spec: &SceneSpec, schedule: &[(u64, ClientMessage)], ticks: u64) -> Result<TrajectoryLog> {
    drive(spec, schedule, |s, _| s.tick >= ticks)
}

fn drive(spec: &SceneSpec, schedule: &[(u64, ClientMessage)], done: impl Fn(&Session, bool) -> bool) -> Result<TrajectoryLog> {
    let mut session = Session::new(spec.clone())?;
    let mut next = 0;
    loop {
        while next < schedule.len() && schedule[next].0 <= session.tick {
            // Invalid scheduled messages are skipped, as the service would.
            let _ = session.apply(&schedule[next].1);
            next += 1;
        }
        if done(&session, next == schedule.len()) {
            break;
        }
        session.tick()?;
    }
    Ok(session.log)
}
