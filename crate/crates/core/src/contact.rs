//! Contact model: ECP selection inside the hull, discrete non-penetration
//! and ellipsoidal friction through Fritz–John conditions, assembled into
//! one MCP per contact pair.
//!
//! Unknowns of a pair, in order:
//! `[ν_A, ν_B?, λ_t, λ_o, λ_r, a, λ_n, l, σ]`. Impulses are solved in scaled
//! form, `Λ_n = s·λ_n` and `Λ_i = s·e_i·λ_i` with `s = m_A·g·h`, so that
//! every residual row is O(1) for desk-scale scenes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cp::{solve_mcp, McpFunction, McpOptions, McpProblem, SolveStatus};
use crate::error::{Error, Result};
use crate::geometry::{gjk_distance, world_hull, world_points, Plane, Shape};
use crate::math::{skew, tangent_basis, MassMatrix, Mat3, Pose, SpatialVelocity, Vec3, WrenchImpulse, GRAVITY};

/// Coulomb coefficient and the semi-axes of the friction ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    pub mu: f64,
    pub e_t: f64,
    pub e_o: f64,
    pub e_r: f64,
}

impl FrictionParams {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            e_t: 1.0,
            e_o: 1.0,
            e_r: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidInput(format!("friction coefficient must be ≥ 0, got {}", self.mu)));
        }
        for (name, v) in [("e_t", self.e_t), ("e_o", self.e_o), ("e_r", self.e_r)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Pair parameters: geometric mean of the coefficients, ellipsoid of `self`.
    pub fn combine(&self, other: &FrictionParams) -> FrictionParams {
        FrictionParams {
            mu: (self.mu * other.mu).sqrt(),
            ..*self
        }
    }

    fn axes(&self) -> [f64; 3] {
        [self.e_t, self.e_o, self.e_r]
    }
}

/// Regularization and tie-break weights plus the pair solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactParams {
    pub epsilon: f64,
    pub rho: f64,
    pub solver: McpOptions,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            rho: 1e-7,
            solver: McpOptions {
                tol: 1e-10,
                max_iter: 100,
                ..McpOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactFrame {
    pub n: Vec3,
    pub t: Vec3,
    pub o: Vec3,
}

impl ContactFrame {
    pub fn from_normal(n: Vec3) -> Self {
        let n = n.normalize();
        let (t, o) = tangent_basis(&n);
        Self { n, t, o }
    }
}

/// Contact impulse in the contact frame, physical units.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactImpulse {
    pub n: f64,
    pub t: f64,
    pub o: f64,
    pub r: f64,
    pub sigma: f64,
    pub l: Vec<f64>,
}

impl ContactImpulse {
    pub fn linear(&self, frame: &ContactFrame) -> Vec3 {
        frame.n * self.n + frame.t * self.t + frame.o * self.o
    }

    /// `μ²Λ_n² − Σ(Λ_i/e_i)²`; nonnegative inside the ellipsoid.
    pub fn ellipsoid_slack(&self, f: &FrictionParams) -> f64 {
        (f.mu * self.n).powi(2) - (self.t / f.e_t).powi(2) - (self.o / f.e_o).powi(2) - (self.r / f.e_r).powi(2)
    }
}

/// Centroid of the world vertices within `tol` of the lowest one along the
/// plane normal: the middle of the support face, edge or vertex.
pub fn support_centroid(shape: &Shape, pose: &Pose, plane: &Plane, tol: f64) -> Result<Vec3> {
    match shape {
        Shape::Sphere { .. } => init_ecp(shape, pose, plane),
        Shape::Hull(h) => {
            let verts = world_points(h.vertices(), pose);
            let lowest = verts
                .iter()
                .map(|v| plane.signed_distance(v))
                .fold(f64::INFINITY, f64::min);
            if !lowest.is_finite() {
                return Err(Error::Geometry("hull has no vertices".into()));
            }
            let near: Vec<&Vec3> = verts.iter().filter(|v| plane.signed_distance(v) <= lowest + tol).collect();
            let sum = near.iter().fold(Vec3::zeros(), |acc, v| acc + **v);
            Ok(sum / near.len() as f64)
        }
    }
}

/// Signed gap between an ECP pair. `frame.n` points from B towards A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapResult {
    pub psi: f64,
    pub a1: Vec3,
    pub a2: Vec3,
    pub frame: ContactFrame,
    /// Penetration deeper than 10% of the smaller body's extent.
    pub deep: bool,
}

/// Lowest world vertex along the plane normal; first index wins ties.
pub fn init_ecp(shape: &Shape, pose: &Pose, plane: &Plane) -> Result<Vec3> {
    match shape {
        Shape::Sphere { radius } => Ok(pose.position - plane.normal * *radius),
        Shape::Hull(h) => {
            let verts = world_points(h.vertices(), pose);
            let mut best: Option<(f64, Vec3)> = None;
            for v in verts {
                let d = plane.signed_distance(&v);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, v));
                }
            }
            best.map(|(_, v)| v)
                .ok_or_else(|| Error::Geometry("hull has no vertices".into()))
        }
    }
}

pub fn gap_body_plane(plane: &Plane, ecp: &Vec3) -> GapResult {
    let psi = plane.signed_distance(ecp);
    GapResult {
        psi,
        a1: *ecp,
        a2: plane.project(ecp),
        frame: ContactFrame::from_normal(plane.normal),
        deep: false,
    }
}

fn support_cloud(shape: &Shape, pose: &Pose) -> (Vec<Vec3>, f64) {
    match shape {
        Shape::Sphere { radius } => (vec![pose.position], *radius),
        Shape::Hull(h) => (world_points(h.vertices(), pose), 0.0),
    }
}

fn min_along(points: &[Vec3], radius: f64, u: &Vec3) -> (f64, Vec3) {
    let mut best = (f64::INFINITY, points[0]);
    for p in points {
        let s = u.dot(p);
        if s < best.0 {
            best = (s, *p);
        }
    }
    (best.0 - radius, best.1 - u * radius)
}

fn max_along(points: &[Vec3], radius: f64, u: &Vec3) -> f64 {
    points.iter().map(|p| u.dot(p)).fold(f64::NEG_INFINITY, f64::max) + radius
}

/// Closest-feature gap between two convex bodies, normal from B to A.
/// Overlapping pairs fall back to a separating-axis search over face
/// normals (and the center line for sphere pairs).
pub fn gap_body_body(shape_a: &Shape, pose_a: &Pose, shape_b: &Shape, pose_b: &Pose) -> Result<GapResult> {
    let (pa, ra) = support_cloud(shape_a, pose_a);
    let (pb, rb) = support_cloud(shape_b, pose_b);
    let prox = gjk_distance(&pa, &pb);
    let extent = shape_a.min_extent().min(shape_b.min_extent());

    let (n, psi, a1) = if !prox.overlapping && prox.distance > 1e-12 {
        let n = (prox.point_a - prox.point_b) / prox.distance;
        (n, prox.distance - ra - rb, prox.point_a - n * ra)
    } else {
        let mut axes: Vec<Vec3> = Vec::new();
        if let Shape::Hull(h) = shape_a {
            axes.extend(h.faces().iter().map(|f| -(pose_a.orientation * f.normal)));
        }
        if let Shape::Hull(h) = shape_b {
            axes.extend(h.faces().iter().map(|f| pose_b.orientation * f.normal));
        }
        let centers = pose_a.position - pose_b.position;
        if axes.is_empty() || centers.norm() > 1e-12 {
            axes.push(if centers.norm() > 1e-12 { centers.normalize() } else { Vec3::z() });
        }
        let mut best: Option<(f64, Vec3, Vec3)> = None;
        for u in axes {
            let (lo, point) = min_along(&pa, ra, &u);
            let sep = lo - max_along(&pb, rb, &u);
            if best.map_or(true, |(s, _, _)| sep > s + 1e-12) {
                best = Some((sep, u, point));
            }
        }
        let (sep, u, point) = best.ok_or_else(|| Error::Geometry("no separating axis candidates".into()))?;
        (u, sep, point)
    };
    let frame = ContactFrame::from_normal(n);
    Ok(GapResult {
        psi,
        a1,
        a2: a1 - frame.n * psi,
        frame,
        deep: psi < -0.1 * extent,
    })
}

/// Offset of B's supporting plane along `n`: `max_{x∈B} n·x`.
pub fn support_offset(shape: &Shape, pose: &Pose, n: &Vec3) -> f64 {
    n.dot(&shape.support(pose, n))
}

/// Set the ECP of body A is constrained to.
#[derive(Debug, Clone)]
pub enum EcpRegion {
    /// `A_w a ≤ b_w`.
    Hull { normals: Vec<Vec3>, offsets: Vec<f64> },
    /// `(r² − ‖a − c‖²) / 2r ≥ 0`.
    Ball { center: Vec3, radius: f64 },
}

impl EcpRegion {
    pub fn from_shape(shape: &Shape, pose: &Pose) -> Result<Self> {
        Ok(match shape {
            Shape::Sphere { radius } => EcpRegion::Ball {
                center: pose.position,
                radius: *radius,
            },
            Shape::Hull(_) => {
                let w = world_hull(shape, pose)?;
                EcpRegion::Hull {
                    normals: w.normals,
                    offsets: w.offsets,
                }
            }
        })
    }

    pub fn len(&self) -> usize {
        match self {
            EcpRegion::Hull { normals, .. } => normals.len(),
            EcpRegion::Ball { .. } => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest constraint violation at `a` (meters); ≤ 0 inside.
    pub fn max_violation(&self, a: &Vec3) -> f64 {
        match self {
            EcpRegion::Hull { normals, offsets } => normals
                .iter()
                .zip(offsets)
                .map(|(n, b)| n.dot(a) - b)
                .fold(f64::NEG_INFINITY, f64::max),
            EcpRegion::Ball { center, radius } => (a - center).norm() - radius,
        }
    }

    /// Row `j` of the constraint slack, nonnegative when satisfied.
    fn slack(&self, j: usize, a: &Vec3) -> f64 {
        match self {
            EcpRegion::Hull { normals, offsets } => offsets[j] - normals[j].dot(a),
            EcpRegion::Ball { center, radius } => (radius * radius - (a - center).norm_squared()) / (2.0 * radius),
        }
    }

    /// Gradient of the negated slack of row `j` (the `A_w` row for hulls).
    fn normal(&self, j: usize, a: &Vec3) -> Vec3 {
        match self {
            EcpRegion::Hull { normals, .. } => normals[j],
            EcpRegion::Ball { center, radius } => (a - center) / *radius,
        }
    }
}

/// A dynamic body as seen by one pair solve.
#[derive(Debug, Clone, Copy)]
pub struct ContactBody {
    pub pose: Pose,
    /// Velocity the body would have without this pair's impulse.
    pub nu_free: SpatialVelocity,
    pub mass: MassMatrix,
}

/// Everything one pair MCP needs, frozen at the start of the solve.
#[derive(Debug, Clone)]
pub struct PairSetup {
    pub body_a: ContactBody,
    /// `None` for a static plane.
    pub body_b: Option<ContactBody>,
    pub region: EcpRegion,
    pub frame: ContactFrame,
    /// `d_B` such that `Ψ(a) = n·a − d_B`.
    pub support_offset: f64,
    /// Tie-break anchor `a₀`.
    pub anchor: Vec3,
    pub friction: FrictionParams,
    pub h: f64,
    pub params: ContactParams,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    nb: usize,
    m: usize,
}

impl Layout {
    fn lam(&self) -> usize {
        6 + self.nb
    }
    fn a(&self) -> usize {
        self.lam() + 3
    }
    fn ln(&self) -> usize {
        self.a() + 3
    }
    fn l(&self) -> usize {
        self.ln() + 1
    }
    fn sigma(&self) -> usize {
        self.l() + self.m
    }
    fn dim(&self) -> usize {
        self.sigma() + 1
    }
}

/// Residual map of one contact pair.
#[derive(Debug, Clone)]
pub struct ContactMcp {
    setup: PairSetup,
    layout: Layout,
    scale: f64,
}

fn v3(z: &DVector<f64>, i: usize) -> Vec3 {
    Vec3::new(z[i], z[i + 1], z[i + 2])
}

fn put3(out: &mut DVector<f64>, i: usize, v: &Vec3) {
    out[i] = v.x;
    out[i + 1] = v.y;
    out[i + 2] = v.z;
}

fn block(j: &mut DMatrix<f64>, r: usize, c: usize, m: &Mat3) {
    for i in 0..3 {
        for k in 0..3 {
            j[(r + i, c + k)] += m[(i, k)];
        }
    }
}

fn col3(j: &mut DMatrix<f64>, r: usize, c: usize, v: &Vec3) {
    for i in 0..3 {
        j[(r + i, c)] += v[i];
    }
}

fn row3(j: &mut DMatrix<f64>, r: usize, c: usize, v: &Vec3) {
    for i in 0..3 {
        j[(r, c + i)] += v[i];
    }
}

struct Unpacked {
    va: Vec3,
    wa: Vec3,
    vb: Vec3,
    wb: Vec3,
    lam: [f64; 3],
    a: Vec3,
    ln: f64,
    sigma: f64,
}

impl ContactMcp {
    pub fn new(setup: PairSetup) -> Self {
        let layout = Layout {
            nb: if setup.body_b.is_some() { 6 } else { 0 },
            m: setup.region.len(),
        };
        let scale = setup.body_a.mass.mass * GRAVITY * setup.h;
        Self { setup, layout, scale }
    }

    pub fn setup(&self) -> &PairSetup {
        &self.setup
    }

    /// Impulse scale `s` mapping solver unknowns to N·s.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn unpack(&self, z: &DVector<f64>) -> Unpacked {
        let lay = self.layout;
        let (vb, wb) = if lay.nb > 0 {
            (v3(z, 6), v3(z, 9))
        } else {
            (Vec3::zeros(), Vec3::zeros())
        };
        let li = lay.lam();
        Unpacked {
            va: v3(z, 0),
            wa: v3(z, 3),
            vb,
            wb,
            lam: [z[li], z[li + 1], z[li + 2]],
            a: v3(z, lay.a()),
            ln: z[lay.ln()],
            sigma: z[lay.sigma()],
        }
    }

    fn pb(&self) -> Vec3 {
        self.setup.body_b.map_or(Vec3::zeros(), |b| b.pose.position)
    }

    fn projector(&self) -> Mat3 {
        let n = self.setup.frame.n;
        Mat3::identity() - n * n.transpose()
    }

    /// B-side ECP: projection of `a` onto B's supporting plane.
    fn a2(&self, a: &Vec3) -> Vec3 {
        let n = self.setup.frame.n;
        a - n * (n.dot(a) - self.setup.support_offset)
    }

    fn linear_impulse(&self, u: &Unpacked) -> Vec3 {
        let f = &self.setup.frame;
        let e = self.setup.friction.axes();
        (f.n * u.ln + f.t * (e[0] * u.lam[0]) + f.o * (e[1] * u.lam[1])) * self.scale
    }

    fn torsion(&self, u: &Unpacked) -> Vec3 {
        self.setup.frame.n * (self.scale * self.setup.friction.e_r * u.lam[2])
    }

    /// Contact wrench impulses on A and B (B's is the exact negation of the
    /// linear part, with its own moment arm).
    pub fn wrenches(&self, z: &DVector<f64>) -> (WrenchImpulse, WrenchImpulse) {
        let u = self.unpack(z);
        let fl = self.linear_impulse(&u);
        let tr = self.torsion(&u);
        let ra = u.a - self.setup.body_a.pose.position;
        let rb = self.a2(&u.a) - self.pb();
        (
            WrenchImpulse::new(fl, ra.cross(&fl) + tr),
            WrenchImpulse::new(-fl, rb.cross(&-fl) - tr),
        )
    }

    /// Relative contact-frame velocities `[ν_t, ν_o, ν_r, ν_n]`.
    fn rel_velocity(&self, u: &Unpacked) -> [f64; 4] {
        let f = &self.setup.frame;
        let ra = u.a - self.setup.body_a.pose.position;
        let rb = self.a2(&u.a) - self.pb();
        let vrel = u.va + u.wa.cross(&ra) - (u.vb + u.wb.cross(&rb));
        [f.t.dot(&vrel), f.o.dot(&vrel), f.n.dot(&(u.wa - u.wb)), f.n.dot(&vrel)]
    }
}

impl ContactMcp {
    /// Initial guess without history: ECP at the anchor, hull multipliers
    /// balancing the normal, a normal impulse that cancels the predicted
    /// penetration and friction opposing the free slip.
    fn cold_start(&self, z: &mut DVector<f64>) {
        let s = &self.setup;
        let lay = self.layout;
        let f = &s.frame;
        let a = s.anchor;
        put3(z, lay.a(), &a);

        // Multipliers: nonnegative least squares on the nearly active rows.
        let active: Vec<usize> = (0..lay.m).filter(|&j| s.region.slack(j, &a) <= 1e-6).collect();
        if !active.is_empty() {
            let k = active.len();
            let rows: Vec<Vec3> = active.iter().map(|&j| s.region.normal(j, &a)).collect();
            let m = DMatrix::from_fn(k, k, |i, j| rows[i].dot(&rows[j]) + if i == j { 1e-12 } else { 0.0 });
            let q = DVector::from_fn(k, |i, _| rows[i].dot(&f.n));
            if let Ok(lcp) = crate::cp::LcpProblem::new(m, q) {
                let r = crate::cp::solve_lcp_lemke(&lcp);
                for (i, &j) in active.iter().enumerate() {
                    z[lay.l() + j] = r.z[i];
                }
            }
        }

        let u = self.unpack(z);
        let rel = self.rel_velocity(&u);
        let psi = f.n.dot(&a) - s.support_offset;
        let predicted = psi + s.h * rel[3];
        if predicted < 0.0 {
            let dv = -predicted / s.h;
            z[lay.ln()] = s.body_a.mass.mass * dv / self.scale;
        }
        let e = s.friction.axes();
        let w = Vec3::new(e[0] * rel[0], e[1] * rel[1], e[2] * rel[2]);
        let ln = z[lay.ln()];
        if w.norm() > 1e-9 && ln > 0.0 {
            let dir = w / w.norm();
            for i in 0..3 {
                z[lay.lam() + i] = -s.friction.mu * ln * dir[i];
            }
            z[lay.sigma()] = w.norm();
        }
    }
}

impl McpFunction for ContactMcp {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn eval(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let s = &self.setup;
        let lay = self.layout;
        let u = self.unpack(z);
        let f = &s.frame;
        let fr = &s.friction;
        let e = fr.axes();
        let (wa_imp, wb_imp) = self.wrenches(z);

        let ma = &s.body_a.mass;
        put3(out, 0, &(u.va - s.body_a.nu_free.linear - wa_imp.force / ma.mass));
        put3(out, 3, &(u.wa - s.body_a.nu_free.angular - ma.inertia_inv * wa_imp.torque));
        if let Some(b) = &s.body_b {
            put3(out, 6, &(u.vb - b.nu_free.linear - wb_imp.force / b.mass.mass));
            put3(out, 9, &(u.wb - b.nu_free.angular - b.mass.inertia_inv * wb_imp.torque));
        }

        let rel = self.rel_velocity(&u);
        let li = lay.lam();
        for i in 0..3 {
            out[li + i] = e[i] * fr.mu * u.ln * rel[i] + u.lam[i] * u.sigma;
        }

        let mut grad = self.projector() * (u.a - s.anchor) * s.params.rho + f.n + f.n.cross(&(u.wa - u.wb)) * s.h;
        for j in 0..lay.m {
            grad += s.region.normal(j, &u.a) * z[lay.l() + j];
        }
        put3(out, lay.a(), &grad);

        out[lay.ln()] = (f.n.dot(&u.a) - s.support_offset + s.h * rel[3] + s.params.epsilon * self.scale * u.ln) / s.h;
        for j in 0..lay.m {
            out[lay.l() + j] = s.region.slack(j, &u.a);
        }
        out[lay.sigma()] = (fr.mu * u.ln).powi(2) - u.lam.iter().map(|x| x * x).sum::<f64>();
    }

    fn jacobian(&self, z: &DVector<f64>, jac: &mut DMatrix<f64>) {
        let s = &self.setup;
        let lay = self.layout;
        let u = self.unpack(z);
        let f = &s.frame;
        let fr = &s.friction;
        let e = fr.axes();
        let sc = self.scale;
        let p = self.projector();
        let fl = self.linear_impulse(&u);
        let ra = u.a - s.body_a.pose.position;
        let rb = self.a2(&u.a) - self.pb();
        let (li, ai, ni, l0, si) = (lay.lam(), lay.a(), lay.ln(), lay.l(), lay.sigma());
        jac.fill(0.0);

        // Impulse directions per scaled unknown: λ_t, λ_o, λ_n (linear) and λ_r (torsion).
        let dirs = [(li, f.t * (sc * e[0])), (li + 1, f.o * (sc * e[1])), (ni, f.n * sc)];
        let ma = &s.body_a.mass;
        for i in 0..6 {
            jac[(i, i)] = 1.0;
        }
        for (c, d) in &dirs {
            col3(jac, 0, *c, &(-d / ma.mass));
            col3(jac, 3, *c, &(-(ma.inertia_inv * ra.cross(d))));
        }
        col3(jac, 3, li + 2, &(-(ma.inertia_inv * f.n) * (sc * e[2])));
        block(jac, 3, ai, &(ma.inertia_inv * skew(&fl)));
        if let Some(b) = &s.body_b {
            for i in 6..12 {
                jac[(i, i)] = 1.0;
            }
            for (c, d) in &dirs {
                col3(jac, 6, *c, &(d / b.mass.mass));
                col3(jac, 9, *c, &(b.mass.inertia_inv * rb.cross(d)));
            }
            col3(jac, 9, li + 2, &((b.mass.inertia_inv * f.n) * (sc * e[2])));
            block(jac, 9, ai, &(-(b.mass.inertia_inv * skew(&fl) * p)));
        }

        // d(c·v_rel) for c in {t, o, n}: velocity and ECP partials.
        let has_b = lay.nb > 0;
        let add_vel_row = |jac: &mut DMatrix<f64>, row: usize, c: &Vec3, k: f64| {
            row3(jac, row, 0, &(c * k));
            row3(jac, row, 3, &(ra.cross(c) * k));
            if has_b {
                row3(jac, row, 6, &(-c * k));
                row3(jac, row, 9, &(-rb.cross(c) * k));
            }
            row3(jac, row, ai, &((c.cross(&u.wa) - p * c.cross(&u.wb)) * k));
        };
        let rel = self.rel_velocity(&u);
        let cs = [f.t, f.o];
        for i in 0..3 {
            let row = li + i;
            let k = e[i] * fr.mu * u.ln;
            if i < 2 {
                add_vel_row(jac, row, &cs[i], k);
            } else {
                row3(jac, row, 3, &(f.n * k));
                if has_b {
                    row3(jac, row, 9, &(-f.n * k));
                }
            }
            jac[(row, ni)] += e[i] * fr.mu * rel[i];
            jac[(row, li + i)] += u.sigma;
            jac[(row, si)] += u.lam[i];
        }

        // ECP stationarity.
        let mut hess = p * s.params.rho;
        if let EcpRegion::Ball { radius, .. } = &s.region {
            hess += Mat3::identity() * (z[l0] / radius);
        }
        block(jac, ai, ai, &hess);
        let nx = skew(&f.n) * s.h;
        block(jac, ai, 3, &nx);
        if has_b {
            block(jac, ai, 9, &(-nx));
        }
        for j in 0..lay.m {
            col3(jac, ai, l0 + j, &s.region.normal(j, &u.a));
        }

        // Non-penetration.
        add_vel_row(jac, ni, &f.n, 1.0);
        row3(jac, ni, ai, &(f.n / s.h));
        jac[(ni, ni)] += s.params.epsilon * sc / s.h;

        for j in 0..lay.m {
            row3(jac, l0 + j, ai, &(-s.region.normal(j, &u.a)));
        }

        jac[(si, ni)] = 2.0 * fr.mu * fr.mu * u.ln;
        for i in 0..3 {
            jac[(si, li + i)] = -2.0 * u.lam[i];
        }
    }
}

fn bounds(layout: Layout) -> (DVector<f64>, DVector<f64>) {
    let n = layout.dim();
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let upper = DVector::from_element(n, f64::INFINITY);
    lower[layout.ln()] = 0.0;
    for j in 0..layout.m {
        lower[layout.l() + j] = 0.0;
    }
    lower[layout.sigma()] = 0.0;
    (lower, upper)
}

pub fn assemble(setup: PairSetup) -> McpProblem<ContactMcp> {
    let f = ContactMcp::new(setup);
    let (lower, upper) = bounds(f.layout);
    McpProblem::new(f, lower, upper).expect("contact bounds are consistent by construction")
}

/// Body against a static plane.
pub fn assemble_single_body_mcp(
    body: &ContactBody,
    shape: &Shape,
    plane: &Plane,
    friction: &FrictionParams,
    h: f64,
    params: &ContactParams,
    anchor: Option<Vec3>,
) -> Result<McpProblem<ContactMcp>> {
    let anchor = match anchor {
        Some(a) => a,
        None => init_ecp(shape, &body.pose, plane)?,
    };
    Ok(assemble(PairSetup {
        body_a: *body,
        body_b: None,
        region: EcpRegion::from_shape(shape, &body.pose)?,
        frame: ContactFrame::from_normal(plane.normal),
        support_offset: plane.offset,
        anchor,
        friction: *friction,
        h,
        params: *params,
    }))
}

/// Two dynamic bodies; the ECP is solved on A and projected onto B.
#[allow(clippy::too_many_arguments)]
pub fn assemble_two_body_mcp(
    a: &ContactBody,
    shape_a: &Shape,
    b: &ContactBody,
    shape_b: &Shape,
    gap: &GapResult,
    friction: &FrictionParams,
    h: f64,
    params: &ContactParams,
    anchor: Option<Vec3>,
) -> Result<McpProblem<ContactMcp>> {
    Ok(assemble(PairSetup {
        body_a: *a,
        body_b: Some(*b),
        region: EcpRegion::from_shape(shape_a, &a.pose)?,
        frame: gap.frame,
        support_offset: support_offset(shape_b, &b.pose, &gap.frame.n),
        anchor: anchor.unwrap_or(gap.a1),
        friction: *friction,
        h,
        params: *params,
    }))
}

/// Warm start carried between steps for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub impulse: ContactImpulse,
    pub ecp: Vec3,
}

#[derive(Debug, Clone)]
pub struct ContactSolution {
    pub impulse: ContactImpulse,
    pub frame: ContactFrame,
    pub ecp: Vec3,
    pub ecp_b: Vec3,
    /// `Ψ(a) = n·a − d_B` at the solved ECP, start-of-step geometry.
    pub psi: f64,
    /// Relative slip `[ν_t, ν_o, ν_r]` and normal velocity at the end of the step.
    pub slip: [f64; 3],
    pub normal_velocity: f64,
    pub nu_a: SpatialVelocity,
    pub nu_b: Option<SpatialVelocity>,
    pub wrench_a: WrenchImpulse,
    pub wrench_b: Option<WrenchImpulse>,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Largest `A_w a − b_w` (≤ 0 inside the hull).
    pub containment: f64,
}

impl ContactSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Complementarity products `[Λ_n·gap, σ·slack, lᵀ(b − Aa)]`.
    pub fn certificates(&self, setup: &PairSetup) -> [f64; 3] {
        let gap = self.psi + setup.h * self.normal_velocity + setup.params.epsilon * self.impulse.n;
        let slack = self.impulse.ellipsoid_slack(&setup.friction);
        let scale = setup.body_a.mass.mass * GRAVITY * setup.h;
        let sigma_phys = self.impulse.sigma;
        let hull: f64 = self
            .impulse
            .l
            .iter()
            .enumerate()
            .map(|(j, l)| l * setup.region.slack(j, &self.ecp))
            .sum();
        [self.impulse.n * gap, sigma_phys * slack / (scale * scale), hull]
    }
}

/// Solves one pair, then rebuilds velocities from the impulses so that the
/// reported state closes momentum to rounding.
pub fn solve_contact(problem: &McpProblem<ContactMcp>, warm: Option<&WarmStart>, options: &McpOptions) -> ContactSolution {
    let f = &problem.function;
    let s = &f.setup;
    let lay = f.layout;
    let e = s.friction.axes();
    let mut z0 = DVector::zeros(lay.dim());
    put3(&mut z0, 0, &s.body_a.nu_free.linear);
    put3(&mut z0, 3, &s.body_a.nu_free.angular);
    if let Some(b) = &s.body_b {
        put3(&mut z0, 6, &b.nu_free.linear);
        put3(&mut z0, 9, &b.nu_free.angular);
    }
    match warm {
        Some(w) => {
            let imp = &w.impulse;
            z0[lay.lam()] = imp.t / (f.scale * e[0]);
            z0[lay.lam() + 1] = imp.o / (f.scale * e[1]);
            z0[lay.lam() + 2] = imp.r / (f.scale * e[2]);
            z0[lay.ln()] = imp.n / f.scale;
            put3(&mut z0, lay.a(), &w.ecp);
            if imp.l.len() == lay.m {
                for (j, l) in imp.l.iter().enumerate() {
                    z0[lay.l() + j] = *l;
                }
            }
            z0[lay.sigma()] = imp.sigma;
        }
        None => f.cold_start(&mut z0),
    }

    let report = solve_mcp(problem, &z0, options);
    let mut z = report.z.clone();

    // Project friction onto the ellipsoid when rounding leaves it outside.
    let li = lay.lam();
    let lam_norm = (z[li].powi(2) + z[li + 1].powi(2) + z[li + 2].powi(2)).sqrt();
    let cap = s.friction.mu * z[lay.ln()].max(0.0);
    if lam_norm > cap {
        let k = if lam_norm > 0.0 { cap / lam_norm } else { 0.0 };
        for i in 0..3 {
            z[li + i] *= k;
        }
    }
    z[lay.ln()] = z[lay.ln()].max(0.0);
    z[lay.sigma()] = z[lay.sigma()].max(0.0);
    for j in 0..lay.m {
        z[lay.l() + j] = z[lay.l() + j].max(0.0);
    }

    let (wa, wb) = f.wrenches(&z);
    let nu_a = add_velocity(&s.body_a.nu_free, &s.body_a.mass.apply_inverse(&wa));
    let nu_b = s.body_b.map(|b| add_velocity(&b.nu_free, &b.mass.apply_inverse(&wb)));
    put3(&mut z, 0, &nu_a.linear);
    put3(&mut z, 3, &nu_a.angular);
    if let Some(nb) = &nu_b {
        put3(&mut z, 6, &nb.linear);
        put3(&mut z, 9, &nb.angular);
    }
    let residual = crate::cp::mcp_residual(problem, &z);
    let status = if residual <= options.tol {
        SolveStatus::Converged
    } else if report.status == SolveStatus::Converged {
        SolveStatus::MaxIter
    } else {
        report.status
    };

    let u = f.unpack(&z);
    let rel = f.rel_velocity(&u);
    let a = u.a;
    ContactSolution {
        impulse: ContactImpulse {
            n: f.scale * u.ln,
            t: f.scale * e[0] * u.lam[0],
            o: f.scale * e[1] * u.lam[1],
            r: f.scale * e[2] * u.lam[2],
            sigma: u.sigma,
            l: (0..lay.m).map(|j| z[lay.l() + j]).collect(),
        },
        frame: s.frame,
        ecp: a,
        ecp_b: f.a2(&a),
        psi: s.frame.n.dot(&a) - s.support_offset,
        slip: [rel[0], rel[1], rel[2]],
        normal_velocity: rel[3],
        nu_a,
        nu_b,
        wrench_a: wa,
        wrench_b: s.body_b.map(|_| wb),
        residual,
        iterations: report.iterations,
        status,
        containment: s.region.max_violation(&a),
    }
}

fn add_velocity(a: &SpatialVelocity, b: &SpatialVelocity) -> SpatialVelocity {
    SpatialVelocity::new(a.linear + b.linear, a.angular + b.angular)
}

/// Outcome of [`solve_contact_robust`].
#[derive(Debug, Clone)]
pub struct RobustSolve {
    /// Lowest-residual solution found.
    pub solution: ContactSolution,
    pub first_residual: f64,
    /// The warm attempt missed `accept_tol` and restarts were tried.
    pub retried: bool,
    pub accepted: bool,
}

/// Pair solve with a restart ladder. A warm attempt is tried first; if it
/// misses `accept_tol`, damped cold restarts are run from the anchor and from
/// each support vertex of `shape`, each with a continuation in the tie-break
/// weight: a stiff tie-break holds the ECP near the seed, then the final
/// stage releases it to the true anchor.
pub fn solve_contact_robust(setup: &PairSetup, shape: &Shape, warm: Option<&WarmStart>, accept_tol: f64) -> RobustSolve {
    let opts = setup.params.solver;
    let first = solve_contact(&assemble(setup.clone()), warm, &opts);
    let first_residual = first.residual;
    if first.residual <= accept_tol {
        return RobustSolve {
            solution: first,
            first_residual,
            retried: false,
            accepted: true,
        };
    }
    let damped = McpOptions {
        regularization: opts.regularization * 1e4,
        max_iter: opts.max_iter * 2,
        smoothing: true,
        ..opts
    };
    let mut best = first;
    let mut seeds = vec![setup.anchor];
    seeds.extend(support_seeds(shape, &setup.body_a.pose, &setup.frame.n));
    for seed in seeds {
        let mut warm_c: Option<WarmStart> = None;
        let mut rho = 1e-3_f64.max(setup.params.rho);
        loop {
            let last = rho <= setup.params.rho;
            let mut staged = setup.clone();
            staged.params.rho = rho;
            if !last {
                staged.anchor = seed;
            }
            let sol = solve_contact(&assemble(staged), warm_c.as_ref(), &damped);
            if last {
                if sol.residual < best.residual {
                    best = sol;
                }
                break;
            }
            warm_c = Some(WarmStart {
                impulse: sol.impulse.clone(),
                ecp: sol.ecp,
            });
            rho = (rho * 1e-2).max(setup.params.rho);
        }
        if best.residual <= accept_tol {
            break;
        }
    }
    let accepted = best.residual <= accept_tol;
    RobustSolve {
        solution: best,
        first_residual,
        retried: true,
        accepted,
    }
}

/// World vertices of `shape` within 1 mm of its lowest point along `n`.
fn support_seeds(shape: &Shape, pose: &Pose, n: &Vec3) -> Vec<Vec3> {
    let Shape::Hull(h) = shape else {
        return Vec::new();
    };
    let verts = world_points(h.vertices(), pose);
    let lowest = verts.iter().map(|v| n.dot(v)).fold(f64::INFINITY, f64::min);
    verts.into_iter().filter(|v| n.dot(v) <= lowest + 1e-3).collect()
}

/// Dissipated power `−Λ_f·ν_f` of a friction impulse against slip `[ν_t, ν_o, ν_r]`.
pub fn friction_dissipation_check(impulse: &ContactImpulse, slip: &[f64; 3]) -> f64 {
    -(impulse.t * slip[0] + impulse.o * slip[1] + impulse.r * slip[2])
}
