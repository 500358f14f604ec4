//! TOML scene files. Loading is strict (unknown keys are errors), fills every
//! default, and validates physical ranges with errors that name the field.
//! Quaternions are `[w, x, y, z]`.

use std::collections::BTreeSet;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::avoidance::{AvoidanceParams, Joint, KinematicChain, LinkSphere, ObstacleSphere};
use crate::contact::{ContactParams, FrictionParams};
use crate::cp::McpOptions;
use crate::error::{Error, Result};
use crate::geometry::{compound_boxes, BoxSpec, ConvexHull, Plane, Shape};
use crate::math::{Pose, SpatialInertia, SpatialVelocity, Vec3, GRAVITY};
use crate::planner::{PlanarGoal, PlannerParams, PushPlanner};
use crate::protocol::ClientMessage;
use crate::stepper::{Body, StepperParams, Tool, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Default run length, s.
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundSpec>,
    #[serde(default)]
    pub bodies: Vec<BodySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<RobotSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSphere>,
    #[serde(default)]
    pub avoidance: AvoidanceParams,
    /// Control messages applied before the given loop tick.
    #[serde(default)]
    pub schedule: Vec<ScheduledMessage>,
}

fn default_h() -> f64 {
    1e-3
}

fn default_gravity() -> f64 {
    GRAVITY
}

fn default_duration() -> f64 {
    5.0
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub epsilon: f64,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub regularization: f64,
    pub smoothing: bool,
    pub accept_tol: f64,
    pub max_sweeps: usize,
    pub sweep_tol: f64,
    pub activation_margin: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let p = StepperParams::default();
        Self {
            epsilon: p.contact.epsilon,
            rho: p.contact.rho,
            tol: p.contact.solver.tol,
            max_iter: p.contact.solver.max_iter,
            regularization: p.contact.solver.regularization,
            smoothing: p.contact.solver.smoothing,
            accept_tol: p.accept_tol,
            max_sweeps: p.max_sweeps,
            sweep_tol: p.sweep_tol,
            activation_margin: p.activation_margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundSpec {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Default for GroundSpec {
    fn default() -> Self {
        Self {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionSpec {
    pub mu: f64,
    #[serde(default = "default_e_t")]
    pub e_t: f64,
    #[serde(default = "default_e_o")]
    pub e_o: f64,
    #[serde(default = "default_e_r")]
    pub e_r: f64,
}

fn default_e_t() -> f64 {
    FrictionParams::new(0.0).e_t
}

fn default_e_o() -> f64 {
    FrictionParams::new(0.0).e_o
}

fn default_e_r() -> f64 {
    FrictionParams::new(0.0).e_r
}

impl From<FrictionSpec> for FrictionParams {
    fn from(f: FrictionSpec) -> Self {
        FrictionParams {
            mu: f.mu,
            e_t: f.e_t,
            e_o: f.e_o,
            e_r: f.e_r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxEntry {
    pub size: [f64; 3],
    #[serde(default)]
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Box { size: [f64; 3] },
    Sphere { radius: f64 },
    /// Rigid union of boxes given in a design frame.
    Compound { boxes: Vec<BoxEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub id: String,
    pub mass: f64,
    pub shape: ShapeSpec,
    /// Principal moments overriding the uniform-density inertia.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[f64; 3]>,
    pub friction: FrictionSpec,
    /// Origin of the shape's design frame; for boxes and spheres this is the
    /// center of mass.
    pub position: [f64; 3],
    #[serde(default = "identity_quat")]
    pub orientation: [f64; 4],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

/// A gain given once for all axes or per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gains {
    Uniform(f64),
    PerAxis([f64; 3]),
}

impl Gains {
    pub fn to_vec3(self) -> Vec3 {
        match self {
            Gains::Uniform(k) => Vec3::repeat(k),
            Gains::PerAxis(k) => Vec3::from(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub radius: f64,
    pub mass: f64,
    pub kp: Gains,
    pub kd: Gains,
    pub f_max: f64,
    pub position: [f64; 3],
    /// Impedance target; defaults to the start position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
    pub friction: FrictionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSpec {
    pub object: String,
    pub goal: PlanarGoal,
    #[serde(default)]
    pub params: PlannerParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default = "identity_quat")]
    pub orientation: [f64; 4],
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            orientation: identity_quat(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub offset: [f64; 3],
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    pub axis: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

/// End-effector reference tracked by the arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotTask {
    /// The tool's impedance target.
    FollowTool,
    /// Constant-speed line from `from` to `to`, then hold.
    Line { from: [f64; 3], to: [f64; 3], duration: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    #[serde(default)]
    pub base: PoseSpec,
    pub joints: Vec<JointSpec>,
    pub spheres: Vec<LinkSphere>,
    #[serde(default)]
    pub ee_offset: [f64; 3],
    /// Initial joint angles; zeros when empty.
    #[serde(default)]
    pub home: Vec<f64>,
    pub task: RobotTask,
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Largest end-effector error fed to one IK step, m.
    #[serde(default = "default_max_step")]
    pub max_step: f64,
}

fn default_damping() -> f64 {
    0.05
}

fn default_max_step() -> f64 {
    2e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledMessage {
    pub tick: u64,
    pub message: ClientMessage,
}

pub fn load_scene(text: &str) -> Result<SceneSpec> {
    let de = toml::Deserializer::new(text);
    let spec: SceneSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::scene(path, inner.message().to_string())
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_scene_file(path: impl AsRef<std::path::Path>) -> Result<SceneSpec> {
    load_scene(&std::fs::read_to_string(path)?)
}

fn quat(q: &[f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

fn check(ok: bool, path: impl Into<String>, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::scene(path, message))
    }
}

fn finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

fn check_quat(q: &[f64; 4], path: String) -> Result<()> {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    check(finite(q) && n > 1e-9, path, "quaternion must be finite and nonzero")
}

fn check_friction(f: &FrictionSpec, path: &str) -> Result<()> {
    check(f.mu >= 0.0 && f.mu.is_finite(), format!("{path}.mu"), "must be ≥ 0")?;
    for (name, v) in [("e_t", f.e_t), ("e_o", f.e_o), ("e_r", f.e_r)] {
        check(v > 0.0 && v.is_finite(), format!("{path}.{name}"), "must be > 0")?;
    }
    Ok(())
}

impl SceneSpec {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::scene("", e.to_string()))
    }

    pub fn steps(&self, duration: f64) -> u64 {
        (duration / self.h).round().max(0.0) as u64
    }

    pub fn validate(&self) -> Result<()> {
        check(self.h > 0.0 && self.h.is_finite(), "h", "must be > 0")?;
        check(self.gravity >= 0.0 && self.gravity.is_finite(), "gravity", "must be ≥ 0")?;
        check(self.duration >= 0.0 && self.duration.is_finite(), "duration", "must be ≥ 0")?;
        let s = &self.solver;
        for (name, v) in [
            ("epsilon", s.epsilon),
            ("rho", s.rho),
            ("tol", s.tol),
            ("regularization", s.regularization),
            ("accept_tol", s.accept_tol),
            ("sweep_tol", s.sweep_tol),
        ] {
            check(v > 0.0 && v.is_finite(), format!("solver.{name}"), "must be > 0")?;
        }
        check(s.activation_margin >= 0.0, "solver.activation_margin", "must be ≥ 0")?;
        check(s.max_iter > 0, "solver.max_iter", "must be > 0")?;
        check(s.max_sweeps > 0, "solver.max_sweeps", "must be > 0")?;
        if let Some(g) = &self.ground {
            check(finite(&g.normal) && Vec3::from(g.normal).norm() > 1e-12, "ground.normal", "must be a nonzero vector")?;
            check(g.offset.is_finite(), "ground.offset", "must be finite")?;
        }

        let mut ids = BTreeSet::new();
        for (i, b) in self.bodies.iter().enumerate() {
            let path = format!("bodies[{i}]");
            check(!b.id.is_empty(), format!("{path}.id"), "must not be empty")?;
            check(b.id != "tool" && b.id != "ground", format!("{path}.id"), "`tool` and `ground` are reserved")?;
            check(ids.insert(b.id.clone()), format!("{path}.id"), "duplicate id")?;
            check(b.mass > 0.0 && b.mass.is_finite(), format!("{path}.mass"), "must be > 0")?;
            match &b.shape {
                ShapeSpec::Box { size } => {
                    check(size.iter().all(|x| *x > 0.0 && x.is_finite()), format!("{path}.shape.size"), "must be > 0")?
                }
                ShapeSpec::Sphere { radius } => {
                    check(*radius > 0.0 && radius.is_finite(), format!("{path}.shape.radius"), "must be > 0")?
                }
                ShapeSpec::Compound { boxes } => {
                    check(!boxes.is_empty(), format!("{path}.shape.boxes"), "must not be empty")?;
                    for (j, e) in boxes.iter().enumerate() {
                        check(
                            e.size.iter().all(|x| *x > 0.0 && x.is_finite()),
                            format!("{path}.shape.boxes[{j}].size"),
                            "must be > 0",
                        )?;
                        check(finite(&e.center), format!("{path}.shape.boxes[{j}].center"), "must be finite")?;
                    }
                }
            }
            if let Some(m) = &b.inertia {
                check(m.iter().all(|x| *x > 0.0 && x.is_finite()), format!("{path}.inertia"), "must be > 0")?;
                check(
                    m[0] + m[1] >= m[2] && m[1] + m[2] >= m[0] && m[0] + m[2] >= m[1],
                    format!("{path}.inertia"),
                    "violates the triangle inequality",
                )?;
            }
            check_friction(&b.friction, &format!("{path}.friction"))?;
            check(finite(&b.position), format!("{path}.position"), "must be finite")?;
            check_quat(&b.orientation, format!("{path}.orientation"))?;
            check(finite(&b.velocity), format!("{path}.velocity"), "must be finite")?;
            check(finite(&b.angular_velocity), format!("{path}.angular_velocity"), "must be finite")?;
        }

        if let Some(t) = &self.tool {
            check(t.radius > 0.0 && t.radius.is_finite(), "tool.radius", "must be > 0")?;
            check(t.mass > 0.0 && t.mass.is_finite(), "tool.mass", "must be > 0")?;
            for (name, g) in [("kp", t.kp), ("kd", t.kd)] {
                let v = g.to_vec3();
                check(v.iter().all(|x| *x >= 0.0 && x.is_finite()), format!("tool.{name}"), "must be ≥ 0")?;
            }
            check(t.f_max > 0.0 && t.f_max.is_finite(), "tool.f_max", "must be > 0")?;
            check(finite(&t.position), "tool.position", "must be finite")?;
            if let Some(x) = &t.target {
                check(finite(x), "tool.target", "must be finite")?;
            }
            check_friction(&t.friction, "tool.friction")?;
        }

        if let Some(p) = &self.planner {
            let object = self.bodies.iter().find(|b| b.id == p.object);
            check(object.is_some(), "planner.object", "no body with this id")?;
            check(
                !matches!(object.map(|b| &b.shape), Some(ShapeSpec::Sphere { .. })),
                "planner.object",
                "pushed object needs planar side faces",
            )?;
            check(self.tool.is_some(), "planner", "requires a tool")?;
            let g = &p.goal;
            check(finite(&g.position) && g.yaw.is_finite(), "planner.goal", "must be finite")?;
            check(g.tol_position > 0.0, "planner.goal.tol_position", "must be > 0")?;
            check(g.tol_yaw > 0.0, "planner.goal.tol_yaw", "must be > 0")?;
            check(g.w_yaw >= 0.0, "planner.goal.w_yaw", "must be ≥ 0")?;
            let q = &p.params;
            check(q.control_interval > 0, "planner.params.control_interval", "must be > 0")?;
            check(
                !q.magnitudes.is_empty() && q.magnitudes.iter().all(|m| *m > 0.0 && m.is_finite()),
                "planner.params.magnitudes",
                "must be a nonempty list of positive values",
            )?;
            check(q.v_max > 0.0, "planner.params.v_max", "must be > 0")?;
            check(q.n_samples > 0, "planner.params.n_samples", "must be > 0")?;
            check(q.standoff >= 1.0, "planner.params.standoff", "must be ≥ 1")?;
            check(q.lead >= 0.0, "planner.params.lead", "must be ≥ 0")?;
            check(q.stall_tol >= 0.0, "planner.params.stall_tol", "must be ≥ 0")?;
            check(q.max_intervals > 0, "planner.params.max_intervals", "must be > 0")?;
            check(q.waypoint_tol > 0.0, "planner.params.waypoint_tol", "must be > 0")?;
            check(q.settle_speed > 0.0, "planner.params.settle_speed", "must be > 0")?;
        }

        if let Some(r) = &self.robot {
            check(finite(&r.base.position), "robot.base.position", "must be finite")?;
            check_quat(&r.base.orientation, "robot.base.orientation".into())?;
            check(!r.joints.is_empty(), "robot.joints", "must not be empty")?;
            for (i, j) in r.joints.iter().enumerate() {
                check(finite(&j.offset), format!("robot.joints[{i}].offset"), "must be finite")?;
                check_quat(&j.rotation, format!("robot.joints[{i}].rotation"))?;
                check(
                    finite(&j.axis) && Vec3::from(j.axis).norm() > 1e-12,
                    format!("robot.joints[{i}].axis"),
                    "must be a nonzero vector",
                )?;
                if let Some([lo, hi]) = j.limits {
                    check(lo < hi, format!("robot.joints[{i}].limits"), "lower limit must be below upper")?;
                }
            }
            for (i, s) in r.spheres.iter().enumerate() {
                check(s.radius > 0.0 && s.radius.is_finite(), format!("robot.spheres[{i}].radius"), "must be > 0")?;
                check(s.link <= r.joints.len(), format!("robot.spheres[{i}].link"), "no such link")?;
            }
            check(
                r.home.is_empty() || r.home.len() == r.joints.len(),
                "robot.home",
                "needs one angle per joint",
            )?;
            for (i, (q, j)) in r.home.iter().zip(&r.joints).enumerate() {
                if let Some([lo, hi]) = j.limits {
                    check(*q >= lo && *q <= hi, format!("robot.home[{i}]"), "outside the joint limits")?;
                }
            }
            check(r.damping >= 0.0, "robot.damping", "must be ≥ 0")?;
            check(r.max_step > 0.0, "robot.max_step", "must be > 0")?;
            match r.task {
                RobotTask::FollowTool => check(self.tool.is_some(), "robot.task", "follow_tool needs a tool")?,
                RobotTask::Line { from, to, duration } => {
                    check(finite(&from) && finite(&to), "robot.task", "line ends must be finite")?;
                    check(duration > 0.0, "robot.task.duration", "must be > 0")?;
                }
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            check(o.radius > 0.0 && o.radius.is_finite(), format!("obstacles[{i}].radius"), "must be > 0")?;
        }
        let a = &self.avoidance;
        check(a.k >= 0.0, "avoidance.k", "must be ≥ 0")?;
        check(a.d_min >= 0.0, "avoidance.d_min", "must be ≥ 0")?;
        check(a.activation_radius >= 0.0, "avoidance.activation_radius", "must be ≥ 0")?;
        check(a.regularization >= 0.0, "avoidance.regularization", "must be ≥ 0")?;
        for (i, w) in self.schedule.windows(2).enumerate() {
            check(w[0].tick <= w[1].tick, format!("schedule[{}].tick", i + 1), "ticks must be nondecreasing")?;
        }
        for (i, m) in self.schedule.iter().enumerate() {
            m.message
                .validate()
                .map_err(|e| Error::scene(format!("schedule[{i}].message"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn stepper_params(&self) -> StepperParams {
        let s = &self.solver;
        StepperParams {
            h: self.h,
            gravity: self.gravity,
            contact: ContactParams {
                epsilon: s.epsilon,
                rho: s.rho,
                solver: McpOptions {
                    tol: s.tol,
                    max_iter: s.max_iter,
                    regularization: s.regularization,
                    smoothing: s.smoothing,
                },
            },
            activation_margin: s.activation_margin,
            max_sweeps: s.max_sweeps,
            sweep_tol: s.sweep_tol,
            accept_tol: s.accept_tol,
        }
    }

    pub fn build_body(&self, index: usize) -> Result<Body> {
        let b = &self.bodies[index];
        let path = format!("bodies[{index}]");
        let orientation = quat(&b.orientation);
        let mut position = Vec3::from(b.position);
        let (shape, mut inertia) = match &b.shape {
            ShapeSpec::Box { size } => {
                let size = Vec3::from(*size);
                (Shape::Hull(ConvexHull::cuboid(size)?), SpatialInertia::solid_box(b.mass, size)?)
            }
            ShapeSpec::Sphere { radius } => (Shape::Sphere { radius: *radius }, SpatialInertia::solid_sphere(b.mass, *radius)?),
            ShapeSpec::Compound { boxes } => {
                let specs: Vec<BoxSpec> = boxes
                    .iter()
                    .map(|e| BoxSpec {
                        size: e.size.into(),
                        center: e.center.into(),
                    })
                    .collect();
                let (hull, inertia, com) = compound_boxes(&specs, b.mass).map_err(|e| Error::scene(format!("{path}.shape"), e.to_string()))?;
                position += orientation * com;
                (Shape::Hull(hull), inertia)
            }
        };
        if let Some(m) = b.inertia {
            inertia = SpatialInertia::new(b.mass, nalgebra::Matrix3::from_diagonal(&Vec3::from(m)))
                .map_err(|e| Error::scene(format!("{path}.inertia"), e.to_string()))?;
        }
        Ok(Body {
            id: b.id.clone(),
            shape,
            inertia,
            friction: b.friction.into(),
            pose: Pose::new(position, orientation),
            velocity: SpatialVelocity::new(b.velocity.into(), b.angular_velocity.into()),
        })
    }

    pub fn build_tool(&self) -> Result<Option<Tool>> {
        let Some(t) = &self.tool else {
            return Ok(None);
        };
        Ok(Some(Tool {
            body: Body {
                id: "tool".into(),
                shape: Shape::Sphere { radius: t.radius },
                inertia: SpatialInertia::solid_sphere(t.mass, t.radius)?,
                friction: t.friction.into(),
                pose: Pose::from_translation(t.position.into()),
                velocity: SpatialVelocity::zero(),
            },
            target: t.target.unwrap_or(t.position).into(),
            kp: t.kp.to_vec3(),
            kd: t.kd.to_vec3(),
            f_max: t.f_max,
        }))
    }

    pub fn build_world(&self) -> Result<World> {
        let bodies = (0..self.bodies.len()).map(|i| self.build_body(i)).collect::<Result<Vec<_>>>()?;
        let ground = self
            .ground
            .map(|g| Plane::new(g.normal.into(), g.offset))
            .transpose()
            .map_err(|e| Error::scene("ground", e.to_string()))?;
        World::new(bodies, self.build_tool()?, ground, self.stepper_params())
    }

    pub fn build_planner(&self) -> Result<Option<PushPlanner>> {
        let Some(p) = &self.planner else {
            return Ok(None);
        };
        let object = self
            .bodies
            .iter()
            .position(|b| b.id == p.object)
            .ok_or_else(|| Error::scene("planner.object", "no body with this id"))?;
        PushPlanner::new(object, p.goal, p.params.clone())
            .map(Some)
            .map_err(|e| Error::scene("planner", e.to_string()))
    }

    /// The arm and its initial joint angles.
    pub fn build_chain(&self) -> Result<Option<(KinematicChain, Vec<f64>)>> {
        let Some(r) = &self.robot else {
            return Ok(None);
        };
        let chain = KinematicChain {
            base: Isometry3::from_parts(Translation3::from(Vec3::from(r.base.position)), quat(&r.base.orientation)),
            joints: r
                .joints
                .iter()
                .map(|j| Joint {
                    offset: j.offset.into(),
                    rotation: quat(&j.rotation),
                    axis: j.axis.into(),
                    limits: j.limits.map(|[lo, hi]| (lo, hi)),
                })
                .collect(),
            spheres: r.spheres.clone(),
            ee_offset: r.ee_offset.into(),
        };
        chain.validate().map_err(|e| Error::scene("robot", e.to_string()))?;
        let home = if r.home.is_empty() { vec![0.0; chain.dof()] } else { r.home.clone() };
        Ok(Some((chain, home)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [ground]

        [[bodies]]
        id = "block"
        mass = 0.8
        shape = { type = "box", size = [0.1, 0.1, 0.1] }
        friction = { mu = 0.5 }
        position = [0.0, 0.0, 0.05]
    "#;

    #[test]
    fn minimal_scene_fills_defaults() {
        let s = load_scene(MINIMAL).unwrap();
        assert_eq!(s.h, 1e-3);
        assert_eq!(s.gravity, GRAVITY);
        let f = s.bodies[0].friction;
        assert_eq!((f.e_t, f.e_o, f.e_r), (1.0, 1.0, 0.01));
        assert_eq!(s.bodies[0].orientation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.solver, SolverSpec::default());
        assert_eq!(s.ground, Some(GroundSpec::default()));
        let w = s.build_world().unwrap();
        assert_eq!(w.bodies[0].inertia.mass, 0.8);
    }

    #[test]
    fn filled_form_round_trips() {
        let s = load_scene(MINIMAL).unwrap();
        let text = s.to_toml().unwrap();
        assert_eq!(load_scene(&text).unwrap(), s);
    }

    #[test]
    fn friction_coefficient_is_required() {
        let text = MINIMAL.replace("friction = { mu = 0.5 }", "friction = { e_t = 1.0 }");
        let err = load_scene(&text).unwrap_err().to_string();
        assert!(err.contains("bodies[0].friction"), "{err}");
    }

    #[test]
    fn negative_mass_names_the_field() {
        let err = load_scene(&MINIMAL.replace("mass = 0.8", "mass = -0.8")).unwrap_err();
        match err {
            Error::Scene { path, .. } => assert_eq!(path, "bodies[0].mass"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_scene(&MINIMAL.replace("mass = 0.8", "mass = 0.8\ncolour = \"red\"")).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        assert!(load_scene(&format!("{MINIMAL}\n[solver]\ntolerance = 1e-3\n")).is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let twice = format!("{MINIMAL}\n{}", &MINIMAL[MINIMAL.find("[[bodies]]").unwrap()..]);
        match load_scene(&twice).unwrap_err() {
            Error::Scene { path, .. } => assert_eq!(path, "bodies[1].id"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn compound_position_is_design_origin() {
        let text = r#"
            [[bodies]]
            id = "l"
            mass = 1.0
            friction = { mu = 0.5 }
            position = [1.0, 0.0, 0.0]
            shape = { type = "compound", boxes = [
                { size = [0.1, 0.1, 0.1], center = [0.0, 0.0, 0.0] },
                { size = [0.1, 0.1, 0.1], center = [0.2, 0.0, 0.0] },
            ] }
        "#;
        let w = load_scene(text).unwrap().build_world().unwrap();
        assert!((w.bodies[0].pose.position - Vec3::new(1.1, 0.0, 0.0)).norm() < 1e-15);
    }
}
