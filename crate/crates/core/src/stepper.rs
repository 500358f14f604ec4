//! Per-step pipeline: free velocities and tool command, contact detection,
//! pairwise contact solves applied as sequential impulses, pose integration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contact::{
    gap_body_body, init_ecp, solve_contact_robust, support_centroid, support_offset, ContactBody, ContactFrame, ContactImpulse,
    ContactParams, ContactSolution, EcpRegion, FrictionParams, GapResult, PairSetup, WarmStart,
};
use crate::cp::SolveStatus;
use crate::error::{Error, Result};
use crate::geometry::{ConvexHull, Plane, Shape};
use crate::math::{integrate_pose, MassMatrix, Pose, SpatialInertia, SpatialVelocity, Vec3, WrenchImpulse};

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub id: String,
    pub shape: Shape,
    pub inertia: SpatialInertia,
    pub friction: FrictionParams,
    pub pose: Pose,
    pub velocity: SpatialVelocity,
}

/// Impedance-driven sphere. Gravity-compensated and never in ground contact.
#[derive(Debug, Clone, PartialEq)]
pub struct Tool {
    pub body: Body,
    pub target: Vec3,
    pub kp: Vec3,
    pub kd: Vec3,
    pub f_max: f64,
}

impl Tool {
    pub fn radius(&self) -> f64 {
        match self.body.shape {
            Shape::Sphere { radius } => radius,
            Shape::Hull(_) => 0.0,
        }
    }
}

/// `F = clamp(K_p(x_des − p) − K_d v, ‖F‖ ≤ F_max)`; returns the force.
pub fn tool_impedance_force(tool: &Tool) -> Vec3 {
    let p = tool.body.pose.position;
    let v = tool.body.velocity.linear;
    let f = tool.kp.component_mul(&(tool.target - p)) - tool.kd.component_mul(&v);
    let norm = f.norm();
    if norm > tool.f_max && norm > 0.0 {
        f * (tool.f_max / norm)
    } else {
        f
    }
}

/// The impedance law as a linear impulse `h·F` with zero moment.
pub fn tool_impedance_impulse(tool: &Tool, h: f64) -> WrenchImpulse {
    WrenchImpulse::new(tool_impedance_force(tool) * h, Vec3::zeros())
}

/// `ν_free = ν + M⁻¹Λ_app`.
pub fn free_velocity(nu: &SpatialVelocity, mass: &MassMatrix, applied: &WrenchImpulse) -> SpatialVelocity {
    let dv = mass.apply_inverse(applied);
    SpatialVelocity::new(nu.linear + dv.linear, nu.angular + dv.angular)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperParams {
    pub h: f64,
    pub gravity: f64,
    pub contact: ContactParams,
    /// Extra lookahead margin of the activation test, meters.
    pub activation_margin: f64,
    pub max_sweeps: usize,
    /// Sweeps stop once no body velocity changes by more than this.
    pub sweep_tol: f64,
    /// Residual above which a pair solve is treated as failed.
    pub accept_tol: f64,
}

impl Default for StepperParams {
    fn default() -> Self {
        Self {
            h: 1e-3,
            gravity: crate::math::GRAVITY,
            contact: ContactParams::default(),
            activation_margin: 1e-4,
            max_sweeps: 30,
            sweep_tol: 1e-10,
            accept_tol: 1e-8,
        }
    }
}

/// Participants of a contact pair. Bodies are indexed into `World::bodies`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairKey {
    Ground { body: usize },
    ToolBody { body: usize },
    BodyBody { a: usize, b: usize },
}

impl PairKey {
    pub fn label(&self, world: &World) -> String {
        match *self {
            PairKey::Ground { body } => format!("ground/{}", world.bodies[body].id),
            PairKey::ToolBody { body } => format!("tool/{}", world.bodies[body].id),
            PairKey::BodyBody { a, b } => format!("{}/{}", world.bodies[b].id, world.bodies[a].id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Body(usize),
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub key: PairKey,
    pub pair: String,
    pub impulse: ContactImpulse,
    pub normal: Vec3,
    /// Linear impulse on body A (the ECP body), world frame.
    pub linear: Vec3,
    pub ecp: Vec3,
    pub ecp_b: Vec3,
    pub psi: f64,
    pub slip: [f64; 3],
    pub normal_velocity: f64,
    pub friction: FrictionParams,
    pub residual: f64,
    pub status: SolveStatus,
    pub containment: f64,
    /// Complementarity products `[Λ_n·gap, σ·slack, lᵀ(b − Aa)]`.
    pub certificates: [f64; 3],
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyRecord {
    pub id: String,
    pub pose: Pose,
    pub velocity: SpatialVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub position: Vec3,
    pub velocity: Vec3,
    pub force: Vec3,
    pub target: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepEvent {
    ContactActivated { pair: String },
    ContactReleased { pair: String },
    SolverRetry { pair: String, residual: f64 },
    SolverDegraded { pair: String, residual: f64 },
    DeepPenetration { pair: String, psi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Time at the end of the step.
    pub time: f64,
    pub bodies: Vec<BodyRecord>,
    /// Velocities at the start of the step, same order as `bodies`.
    pub start_velocities: Vec<SpatialVelocity>,
    pub tool: Option<ToolRecord>,
    pub contacts: Vec<ContactRecord>,
    pub kinetic_energy: f64,
    pub potential_energy: f64,
    /// Mechanical energy of the bodies at the start of the step.
    pub energy_start: f64,
    /// Work done by tool contact impulses on the bodies, `Σ Λᵀν⁺`.
    pub tool_work: f64,
    pub sweeps: usize,
    pub degraded: bool,
    pub events: Vec<StepEvent>,
}

impl StepRecord {
    pub fn mechanical_energy(&self) -> f64 {
        self.kinetic_energy + self.potential_energy
    }

    pub fn contact(&self, key: &PairKey) -> Option<&ContactRecord> {
        self.contacts.iter().find(|c| &c.key == key)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PairMemory {
    impulse: ContactImpulse,
    /// ECP in A's body frame so it follows the body between steps.
    ecp_body: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub bodies: Vec<Body>,
    pub tool: Option<Tool>,
    pub ground: Option<Plane>,
    pub params: StepperParams,
    pub step_index: u64,
    memory: BTreeMap<PairKey, PairMemory>,
}

struct Candidate {
    key: PairKey,
    a: Slot,
    b: Option<Slot>,
    frame: ContactFrame,
    support_offset: f64,
    anchor_init: Vec3,
    friction: FrictionParams,
    deep: Option<f64>,
    part: Option<Shape>,
}

impl World {
    pub fn new(bodies: Vec<Body>, tool: Option<Tool>, ground: Option<Plane>, params: StepperParams) -> Result<Self> {
        if !(params.h > 0.0) {
            return Err(Error::InvalidInput("step size must be positive".into()));
        }
        for b in &bodies {
            b.inertia.validate()?;
            b.friction.validate()?;
        }
        Ok(Self {
            bodies,
            tool,
            ground,
            params,
            step_index: 0,
            memory: BTreeMap::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.params.h
    }

    pub fn body_index(&self, id: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.id == id)
    }

    fn floor(&self) -> Plane {
        self.ground.unwrap_or_else(Plane::ground)
    }

    /// Kinetic plus gravitational potential energy of the bodies (tool excluded).
    pub fn mechanical_energy(&self) -> Result<(f64, f64)> {
        let floor = self.floor();
        let mut ke = 0.0;
        let mut pe = 0.0;
        for b in &self.bodies {
            let m = MassMatrix::new(&b.inertia, &b.pose)?;
            ke += m.kinetic_energy(&b.velocity);
            pe += b.inertia.mass * self.params.gravity * floor.signed_distance(&b.pose.position);
        }
        Ok((ke, pe))
    }

    fn slot_body(&self, s: Slot) -> &Body {
        match s {
            Slot::Body(i) => &self.bodies[i],
            Slot::Tool => &self.tool.as_ref().expect("tool slot requires a tool").body,
        }
    }

    fn detect(&self, nu: &[SpatialVelocity], tool_nu: Option<&SpatialVelocity>) -> Result<Vec<Candidate>> {
        let h = self.params.h;
        let margin = self.params.activation_margin;
        let active = |psi: f64, vn: f64| psi <= (-h * vn).max(0.0) + margin;
        let mut out = Vec::new();

        if let Some(plane) = self.ground {
            for (i, b) in self.bodies.iter().enumerate() {
                let lowest = init_ecp(&b.shape, &b.pose, &plane)?;
                let psi = plane.signed_distance(&lowest);
                let vn = plane.normal.dot(&nu[i].point_velocity(&b.pose.position, &lowest));
                if active(psi, vn) {
                    out.push(Candidate {
                        key: PairKey::Ground { body: i },
                        a: Slot::Body(i),
                        b: None,
                        frame: ContactFrame::from_normal(plane.normal),
                        support_offset: plane.offset,
                        anchor_init: support_centroid(&b.shape, &b.pose, &plane, 1e-9)?,
                        friction: b.friction,
                        deep: None,
                        part: None,
                    });
                }
            }
        }

        if let (Some(tool), Some(tnu)) = (&self.tool, tool_nu) {
            for (i, b) in self.bodies.iter().enumerate() {
                let (gap, part) = nearest_part_gap(&b.shape, &b.pose, &tool.body.shape, &tool.body.pose)?;
                let vrel = nu[i].point_velocity(&b.pose.position, &gap.a1)
                    - tnu.point_velocity(&tool.body.pose.position, &gap.a2);
                if active(gap.psi, gap.frame.n.dot(&vrel)) {
                    out.push(Candidate {
                        key: PairKey::ToolBody { body: i },
                        a: Slot::Body(i),
                        b: Some(Slot::Tool),
                        frame: gap.frame,
                        support_offset: support_offset(&tool.body.shape, &tool.body.pose, &gap.frame.n),
                        anchor_init: gap.a1,
                        friction: b.friction.combine(&tool.body.friction),
                        deep: gap.deep.then_some(gap.psi),
                        part,
                    });
                }
            }
        }

        for i in 0..self.bodies.len() {
            for j in (i + 1)..self.bodies.len() {
                // The ECP lives on a hull whenever one is available.
                let (a, b) = match (&self.bodies[i].shape, &self.bodies[j].shape) {
                    (Shape::Sphere { .. }, Shape::Hull(_)) => (j, i),
                    _ => (i, j),
                };
                let (ba, bb) = (&self.bodies[a], &self.bodies[b]);
                let (gap, part) = nearest_part_gap(&ba.shape, &ba.pose, &bb.shape, &bb.pose)?;
                let vrel =
                    nu[a].point_velocity(&ba.pose.position, &gap.a1) - nu[b].point_velocity(&bb.pose.position, &gap.a2);
                if active(gap.psi, gap.frame.n.dot(&vrel)) {
                    out.push(Candidate {
                        key: PairKey::BodyBody { a, b },
                        a: Slot::Body(a),
                        b: Some(Slot::Body(b)),
                        frame: gap.frame,
                        support_offset: support_offset(&bb.shape, &bb.pose, &gap.frame.n),
                        anchor_init: gap.a1,
                        friction: ba.friction.combine(&bb.friction),
                        deep: gap.deep.then_some(gap.psi),
                        part,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Advances one step of size `h`.
    pub fn step(&mut self) -> Result<StepRecord> {
        let h = self.params.h;
        let g = self.params.gravity;
        let (ke0, pe0) = self.mechanical_energy()?;
        let start_velocities: Vec<SpatialVelocity> = self.bodies.iter().map(|b| b.velocity).collect();

        // 1. Free velocities and tool command.
        let mut masses = Vec::with_capacity(self.bodies.len());
        let mut nu_free = Vec::with_capacity(self.bodies.len());
        for b in &self.bodies {
            let m = MassMatrix::new(&b.inertia, &b.pose)?;
            let gravity = WrenchImpulse::new(Vec3::new(0.0, 0.0, -b.inertia.mass * g * h), Vec3::zeros());
            nu_free.push(free_velocity(&b.velocity, &m, &gravity));
            masses.push(m);
        }
        let mut tool_force = Vec3::zeros();
        let (tool_mass, tool_free) = match &self.tool {
            Some(t) => {
                let m = MassMatrix::new(&t.body.inertia, &t.body.pose)?;
                tool_force = tool_impedance_force(t);
                let nf = free_velocity(&t.body.velocity, &m, &WrenchImpulse::new(tool_force * h, Vec3::zeros()));
                (Some(m), Some(nf))
            }
            None => (None, None),
        };

        // 2. Detection, in the fixed ground → tool–body → body–body order.
        let candidates = self.detect(&nu_free, tool_free.as_ref())?;
        let mut events = Vec::new();
        for c in &candidates {
            if !self.memory.contains_key(&c.key) {
                events.push(StepEvent::ContactActivated { pair: c.key.label(self) });
            }
            if let Some(psi) = c.deep {
                events.push(StepEvent::DeepPenetration { pair: c.key.label(self), psi });
            }
        }
        let released: Vec<PairKey> =
            self.memory.keys().filter(|k| !candidates.iter().any(|c| &c.key == *k)).copied().collect();
        for k in &released {
            events.push(StepEvent::ContactReleased { pair: k.label(self) });
            self.memory.remove(k);
        }

        // 3. Sequential impulses; repeated sweeps when a body carries several contacts.
        let slot_count = |s: Slot| {
            candidates.iter().filter(|c| c.a == s || c.b == Some(s)).count()
        };
        let coupled = candidates.iter().any(|c| slot_count(c.a) > 1 || c.b.is_some_and(|b| slot_count(b) > 1));
        let sweeps_max = if coupled { self.params.max_sweeps } else { 1 };

        let nb = self.bodies.len();
        let mut nu = nu_free.clone();
        let mut tool_nu = tool_free;
        let mut wrenches: Vec<(WrenchImpulse, Option<WrenchImpulse>)> =
            vec![(WrenchImpulse::zero(), None); candidates.len()];
        let mut solutions: Vec<Option<(ContactSolution, PairSetup, bool)>> = vec![None; candidates.len()];

        let get_nu = |nu: &[SpatialVelocity], tool_nu: &Option<SpatialVelocity>, s: Slot| match s {
            Slot::Body(i) => nu[i],
            Slot::Tool => tool_nu.expect("tool velocity"),
        };
        let sub = |a: &SpatialVelocity, b: &SpatialVelocity| {
            SpatialVelocity::new(a.linear - b.linear, a.angular - b.angular)
        };
        let add = |a: &SpatialVelocity, b: &SpatialVelocity| {
            SpatialVelocity::new(a.linear + b.linear, a.angular + b.angular)
        };

        let mut sweeps = 0;
        let mut degraded = false;

        // Coupled stacks start from last step's impulses so the sweeps only
        // have to correct them.
        if coupled {
            for (k, c) in candidates.iter().enumerate() {
                let Some(m) = self.memory.get(&c.key) else { continue };
                let f = &c.frame;
                let imp = &m.impulse;
                let lin = f.n * imp.n + f.t * imp.t + f.o * imp.o;
                let tr = f.n * imp.r;
                let body_a = self.slot_body(c.a);
                let ecp = body_a.pose.transform_point(&m.ecp_body);
                let wa = WrenchImpulse::new(lin, (ecp - body_a.pose.position).cross(&lin) + tr);
                let wb = c.b.map(|s| {
                    let pb = self.slot_body(s).pose.position;
                    WrenchImpulse::new(-lin, (ecp - pb).cross(&-lin) - tr)
                });
                for (slot, w) in std::iter::once((c.a, wa)).chain(c.b.zip(wb)) {
                    let dv = match slot {
                        Slot::Body(i) => masses[i].apply_inverse(&w),
                        Slot::Tool => tool_mass.expect("tool mass").apply_inverse(&w),
                    };
                    match slot {
                        Slot::Body(i) => nu[i] = add(&nu[i], &dv),
                        Slot::Tool => tool_nu = tool_nu.map(|v| add(&v, &dv)),
                    }
                }
                wrenches[k] = (wa, wb);
            }
        }

        while sweeps < sweeps_max {
            sweeps += 1;
            let mut change: f64 = 0.0;
            for (k, c) in candidates.iter().enumerate() {
                let mass_of = |s: Slot| match s {
                    Slot::Body(i) => masses[i],
                    Slot::Tool => tool_mass.expect("tool mass"),
                };
                let (wa_old, wb_old) = wrenches[k];
                let ma = mass_of(c.a);
                let free_a = sub(&get_nu(&nu, &tool_nu, c.a), &ma.apply_inverse(&wa_old));
                let body_a = self.slot_body(c.a);
                let cb_a = ContactBody {
                    pose: body_a.pose,
                    nu_free: free_a,
                    mass: ma,
                };
                let cb_b = c.b.map(|s| {
                    let mb = mass_of(s);
                    let old = wb_old.unwrap_or_default();
                    ContactBody {
                        pose: self.slot_body(s).pose,
                        nu_free: sub(&get_nu(&nu, &tool_nu, s), &mb.apply_inverse(&old)),
                        mass: mb,
                    }
                });
                let memory = self.memory.get(&c.key);
                let anchor = memory.map_or(c.anchor_init, |m| body_a.pose.transform_point(&m.ecp_body));
                let setup = PairSetup {
                    body_a: cb_a,
                    body_b: cb_b,
                    region: EcpRegion::from_shape(c.part.as_ref().unwrap_or(&body_a.shape), &body_a.pose)?,
                    frame: c.frame,
                    support_offset: c.support_offset,
                    anchor,
                    friction: c.friction,
                    h,
                    params: self.params.contact,
                };
                let warm = match &solutions[k] {
                    Some((sol, _, false)) => Some(WarmStart {
                        impulse: sol.impulse.clone(),
                        ecp: sol.ecp,
                    }),
                    _ => memory.map(|m| WarmStart {
                        impulse: m.impulse.clone(),
                        ecp: anchor,
                    }),
                };
                let (sol, failed) = self.solve_pair(&setup, warm.as_ref(), memory, c, &mut events);
                degraded |= failed;

                let new_a = sol.wrench_a;
                let new_b = sol.wrench_b;
                let nu_a_new = add(&free_a, &ma.apply_inverse(&new_a));
                change = change.max(sub(&nu_a_new, &get_nu(&nu, &tool_nu, c.a)).norm());
                match c.a {
                    Slot::Body(i) => nu[i] = nu_a_new,
                    Slot::Tool => tool_nu = Some(nu_a_new),
                }
                if let (Some(s), Some(wb)) = (c.b, new_b) {
                    let mb = mass_of(s);
                    let free_b = setup.body_b.expect("two-body setup").nu_free;
                    let nu_b_new = add(&free_b, &mb.apply_inverse(&wb));
                    change = change.max(sub(&nu_b_new, &get_nu(&nu, &tool_nu, s)).norm());
                    match s {
                        Slot::Body(i) => nu[i] = nu_b_new,
                        Slot::Tool => tool_nu = Some(nu_b_new),
                    }
                }
                wrenches[k] = (new_a, new_b);
                solutions[k] = Some((sol, setup, failed));
            }
            if change <= self.params.sweep_tol {
                break;
            }
        }

        // 4. Integrate poses with the end-of-step velocities.
        let mut tool_work = 0.0;
        let mut contacts = Vec::with_capacity(candidates.len());
        for (k, c) in candidates.iter().enumerate() {
            let (sol, setup, failed) = solutions[k].take().expect("every candidate solved");
            if matches!(c.key, PairKey::ToolBody { .. }) {
                if let Slot::Body(i) = c.a {
                    tool_work += wrenches[k].0.dot(&nu[i]);
                }
            }
            let body_a = self.slot_body(c.a);
            self.memory.insert(
                c.key,
                PairMemory {
                    impulse: sol.impulse.clone(),
                    ecp_body: body_a.pose.inverse_transform_point(&sol.ecp),
                },
            );
            contacts.push(ContactRecord {
                key: c.key,
                pair: c.key.label(self),
                certificates: sol.certificates(&setup),
                linear: sol.impulse.linear(&sol.frame),
                normal: sol.frame.n,
                ecp: sol.ecp,
                ecp_b: sol.ecp_b,
                psi: sol.psi,
                slip: sol.slip,
                normal_velocity: sol.normal_velocity,
                friction: c.friction,
                residual: sol.residual,
                status: sol.status,
                containment: sol.containment,
                impulse: sol.impulse,
                degraded: failed,
            });
        }
        for i in 0..nb {
            let b = &mut self.bodies[i];
            b.velocity = nu[i];
            b.pose = integrate_pose(&b.pose, &nu[i], h);
        }
        let mut tool_record = None;
        if let Some(t) = &mut self.tool {
            let v = tool_nu.expect("tool velocity");
            t.body.velocity = v;
            t.body.pose = integrate_pose(&t.body.pose, &v, h);
            tool_record = Some(ToolRecord {
                position: t.body.pose.position,
                velocity: v.linear,
                force: tool_force,
                target: t.target,
            });
        }
        self.step_index += 1;
        let (ke, pe) = self.mechanical_energy()?;
        Ok(StepRecord {
            step: self.step_index,
            time: self.time(),
            bodies: self
                .bodies
                .iter()
                .map(|b| BodyRecord {
                    id: b.id.clone(),
                    pose: b.pose,
                    velocity: b.velocity,
                })
                .collect(),
            start_velocities,
            tool: tool_record,
            contacts,
            kinetic_energy: ke,
            potential_energy: pe,
            energy_start: ke0 + pe0,
            tool_work,
            sweeps,
            degraded,
            events,
        })
    }

    /// One robust pair solve; on persistent failure the previous step's
    /// impulse is reused and the step is marked degraded.
    fn solve_pair(
        &self,
        setup: &PairSetup,
        warm: Option<&WarmStart>,
        memory: Option<&PairMemory>,
        c: &Candidate,
        events: &mut Vec<StepEvent>,
    ) -> (ContactSolution, bool) {
        let shape = c.part.as_ref().unwrap_or(&self.slot_body(c.a).shape);
        let r = solve_contact_robust(setup, shape, warm, self.params.accept_tol);
        if r.retried {
            events.push(StepEvent::SolverRetry {
                pair: c.key.label(self),
                residual: r.first_residual,
            });
        }
        if r.accepted {
            return (r.solution, false);
        }
        let best = r.solution;
        events.push(StepEvent::SolverDegraded {
            pair: c.key.label(self),
            residual: best.residual,
        });
        match memory {
            Some(m) => (reuse_impulse(setup, &m.impulse, &best), true),
            None => (best, true),
        }
    }
}

/// Gap against the closest convex part of a compound body; the part shape is
/// returned so the ECP is confined to it. Single-part bodies use the hull.
fn nearest_part_gap(
    shape_a: &Shape,
    pose_a: &Pose,
    shape_b: &Shape,
    pose_b: &Pose,
) -> Result<(GapResult, Option<Shape>)> {
    let parts = match shape_a {
        Shape::Hull(h) if h.parts.len() > 1 => &h.parts,
        _ => return Ok((gap_body_body(shape_a, pose_a, shape_b, pose_b)?, None)),
    };
    let mut best: Option<(GapResult, Shape)> = None;
    for p in parts {
        let s = Shape::Hull(ConvexHull::from_parts(vec![p.clone()])?);
        let gap = gap_body_body(&s, pose_a, shape_b, pose_b)?;
        if best.as_ref().map_or(true, |(g, _)| gap.psi < g.psi) {
            best = Some((gap, s));
        }
    }
    let (gap, s) = best.expect("compound body has parts");
    Ok((gap, Some(s)))
}

/// Applies a stored impulse at the freshly solved ECP without re-solving.
fn reuse_impulse(setup: &PairSetup, impulse: &ContactImpulse, template: &ContactSolution) -> ContactSolution {
    let f = &setup.frame;
    let lin = f.n * impulse.n + f.t * impulse.t + f.o * impulse.o;
    let tr = f.n * impulse.r;
    let a = template.ecp;
    let wa = WrenchImpulse::new(lin, (a - setup.body_a.pose.position).cross(&lin) + tr);
    let wb = setup.body_b.map(|b| WrenchImpulse::new(-lin, (template.ecp_b - b.pose.position).cross(&-lin) - tr));
    let dv = setup.body_a.mass.apply_inverse(&wa);
    let nu_a = SpatialVelocity::new(setup.body_a.nu_free.linear + dv.linear, setup.body_a.nu_free.angular + dv.angular);
    let nu_b = setup.body_b.zip(wb).map(|(b, w)| {
        let dv = b.mass.apply_inverse(&w);
        SpatialVelocity::new(b.nu_free.linear + dv.linear, b.nu_free.angular + dv.angular)
    });
    ContactSolution {
        impulse: impulse.clone(),
        nu_a,
        nu_b,
        wrench_a: wa,
        wrench_b: wb,
        ..template.clone()
    }
}

/// Per-step mechanical energy and the steps where it rose by more than the
/// tool's work plus `slack`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAudit {
    pub energies: Vec<f64>,
    /// `(step, excess)` for every flagged step.
    pub violations: Vec<(u64, f64)>,
    pub max_excess: f64,
}

impl EnergyAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn energy_audit(records: &[StepRecord], slack: f64) -> EnergyAudit {
    let mut energies = Vec::with_capacity(records.len());
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for r in records {
        let me = r.mechanical_energy();
        energies.push(me);
        let excess = me - r.energy_start - r.tool_work.max(0.0);
        max_excess = max_excess.max(excess);
        if excess > slack {
            violations.push((r.step, excess));
        }
    }
    EnergyAudit {
        energies,
        violations,
        max_excess,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexHull;
    use crate::math::GRAVITY;
    use approx::assert_relative_eq;

    fn block(z: f64, v: Vec3) -> Body {
        let size = Vec3::new(0.1, 0.1, 0.1);
        Body {
            id: "block".into(),
            shape: Shape::Hull(ConvexHull::cuboid(size).unwrap()),
            inertia: SpatialInertia::solid_box(0.8, size).unwrap(),
            friction: FrictionParams::new(0.5),
            pose: Pose::from_translation(Vec3::new(0.0, 0.0, z)),
            velocity: SpatialVelocity::new(v, Vec3::zeros()),
        }
    }

    #[test]
    fn free_velocity_cases() {
        let inertia = SpatialInertia::new(1.0, crate::math::Mat3::identity()).unwrap();
        let m = MassMatrix::new(&inertia, &Pose::identity()).unwrap();
        let nu = SpatialVelocity::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros());
        assert_eq!(free_velocity(&nu, &m, &WrenchImpulse::zero()), nu);
        let g = WrenchImpulse::new(Vec3::new(0.0, 0.0, -GRAVITY * 1e-3), Vec3::zeros());
        let rest = free_velocity(&SpatialVelocity::zero(), &m, &g);
        assert_relative_eq!(rest.linear.z, -9.81e-3, epsilon = 1e-15);
        let torque = WrenchImpulse::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 2.0 * 1e-3));
        assert_relative_eq!(free_velocity(&SpatialVelocity::zero(), &m, &torque).angular.z, 2e-3, epsilon = 1e-15);
    }

    fn tool(target: Vec3, f_max: f64) -> Tool {
        Tool {
            body: Body {
                id: "tool".into(),
                shape: Shape::Sphere { radius: 0.015 },
                inertia: SpatialInertia::solid_sphere(0.0335, 0.015).unwrap(),
                friction: FrictionParams::new(0.5),
                pose: Pose::from_translation(Vec3::new(0.0, -0.2, 0.02)),
                velocity: SpatialVelocity::zero(),
            },
            target,
            kp: Vec3::new(200.0, 200.0, 200.0),
            kd: Vec3::new(20.0, 20.0, 20.0),
            f_max,
        }
    }

    #[test]
    fn impedance_saturates() {
        let at = tool(Vec3::new(0.0, -0.2, 0.02), 1.0);
        assert_eq!(tool_impedance_force(&at), Vec3::zeros());
        let far = tool(Vec3::new(0.0, 0.35, 0.02), 1.0);
        assert_relative_eq!(tool_impedance_force(&far).norm(), 1.0, epsilon = 1e-12);
        let far = tool(Vec3::new(0.0, 0.35, 0.02), 10.0);
        assert_relative_eq!(tool_impedance_force(&far).norm(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(tool_impedance_impulse(&far, 1e-3).force.norm(), 1e-2, epsilon = 1e-14);
    }

    #[test]
    fn resting_block_stays_put() {
        let mut w = World::new(vec![block(0.05, Vec3::zeros())], None, Some(Plane::ground()), StepperParams::default()).unwrap();
        let mut last = None;
        for _ in 0..200 {
            last = Some(w.step().unwrap());
        }
        let r = last.unwrap();
        assert!(r.bodies[0].velocity.norm() < 1e-6);
        let c = &r.contacts[0];
        assert_relative_eq!(c.impulse.n, 0.8 * GRAVITY * 1e-3, epsilon = 1e-6);
        assert!(c.psi.abs() < 1e-4);
    }

    #[test]
    fn free_fall_loses_energy_only_to_discretization() {
        let mut w = World::new(vec![block(1.0, Vec3::zeros())], None, Some(Plane::ground()), StepperParams::default()).unwrap();
        let records: Vec<_> = (0..100).map(|_| w.step().unwrap()).collect();
        let audit = energy_audit(&records, 1e-9);
        assert!(audit.passed());
        let drift = audit.energies.last().unwrap() - records[0].energy_start;
        assert!(drift <= 0.0 && drift.abs() < 0.8 * GRAVITY * GRAVITY * 1e-3 * 0.1 + 1e-12);
    }
}
