//! Whole-body obstacle avoidance for a serial arm whose links are covered by
//! spheres: one separation inequality per close sphere pair, projected onto
//! the nominal joint increment through a small LCP.

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::cp::{lcp_residual, solve_lcp_lemke, LcpProblem};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Revolute joint: fixed transform from the parent link, then rotation about
/// `axis` (joint frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub offset: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub axis: Vec3,
    pub limits: Option<(f64, f64)>,
}

/// Sphere rigidly attached to a link. Link 0 is the base, link `i` moves with
/// joint `i` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSphere {
    pub link: usize,
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub base: Isometry3<f64>,
    pub joints: Vec<Joint>,
    pub spheres: Vec<LinkSphere>,
    /// End-effector point in the last link frame.
    pub ee_offset: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSphere {
    pub center: Vec3,
    pub radius: f64,
    #[serde(default)]
    pub velocity: Vec3,
}

impl ObstacleSphere {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidInput(format!("obstacle radius must be > 0, got {}", self.radius)));
        }
        Ok(())
    }
}

/// World frames of every link plus each joint's world axis and origin.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub links: Vec<Isometry3<f64>>,
    pub axes: Vec<Vec3>,
    pub origins: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct SphereState {
    pub link: usize,
    pub center: Vec3,
    pub radius: f64,
    /// 3×n translational Jacobian.
    pub jacobian: DMatrix<f64>,
}

impl KinematicChain {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.axis.norm() > 0.0) || !j.axis.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("joint {i} has a degenerate axis")));
            }
            if let Some((lo, hi)) = j.limits {
                if !(lo < hi) {
                    return Err(Error::InvalidInput(format!("joint {i} limits are empty")));
                }
            }
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.radius > 0.0) {
                return Err(Error::InvalidInput(format!("sphere {i} radius must be > 0")));
            }
            if s.link > self.dof() {
                return Err(Error::InvalidInput(format!("sphere {i} refers to missing link {}", s.link)));
            }
        }
        Ok(())
    }

    pub fn forward(&self, theta: &[f64]) -> Result<ChainState> {
        if theta.len() != self.dof() {
            return Err(Error::InvalidInput(format!(
                "expected {} joint angles, got {}",
                self.dof(),
                theta.len()
            )));
        }
        let mut links = Vec::with_capacity(self.dof() + 1);
        let mut axes = Vec::with_capacity(self.dof());
        let mut origins = Vec::with_capacity(self.dof());
        let mut t = self.base;
        links.push(t);
        for (j, q) in self.joints.iter().zip(theta) {
            let frame = t * Isometry3::from_parts(Translation3::from(j.offset), j.rotation);
            let axis = j.axis.normalize();
            axes.push(frame.rotation * axis);
            origins.push(frame.translation.vector);
            let spin = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), *q);
            t = frame * Isometry3::from_parts(Translation3::identity(), spin);
            links.push(t);
        }
        Ok(ChainState { links, axes, origins })
    }

    /// Point `local` on `link`, in world coordinates, and its 3×n Jacobian.
    pub fn point_jacobian(&self, state: &ChainState, link: usize, local: &Vec3) -> (Vec3, DMatrix<f64>) {
        let p = state.links[link].transform_point(&(*local).into()).coords;
        let mut jac = DMatrix::zeros(3, self.dof());
        for j in 0..link {
            let col = state.axes[j].cross(&(p - state.origins[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
        }
        (p, jac)
    }

    pub fn fk_and_sphere_jacobians(&self, theta: &[f64]) -> Result<Vec<SphereState>> {
        let state = self.forward(theta)?;
        Ok(self
            .spheres
            .iter()
            .map(|s| {
                let (center, jacobian) = self.point_jacobian(&state, s.link, &s.center);
                SphereState {
                    link: s.link,
                    center,
                    radius: s.radius,
                    jacobian,
                }
            })
            .collect())
    }

    pub fn end_effector(&self, theta: &[f64]) -> Result<(Vec3, DMatrix<f64>)> {
        let state = self.forward(theta)?;
        Ok(self.point_jacobian(&state, self.dof(), &self.ee_offset))
    }

    pub fn clamp_to_limits(&self, theta: &mut [f64]) {
        for (q, j) in theta.iter_mut().zip(&self.joints) {
            if let Some((lo, hi)) = j.limits {
                *q = q.clamp(lo, hi);
            }
        }
    }
}

/// `Ψ = ‖p_s − p_o‖ − (r_s + r_o) − d_min` and the unit normal from the
/// obstacle toward the sphere.
pub fn clearance(p_s: &Vec3, r_s: f64, obstacle: &ObstacleSphere, d_min: f64) -> Result<(f64, Vec3)> {
    let d = p_s - obstacle.center;
    let dist = d.norm();
    if !(dist > 1e-12) {
        return Err(Error::Geometry("sphere and obstacle centers coincide".into()));
    }
    Ok((dist - (r_s + obstacle.radius) - d_min, d / dist))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvoidanceParams {
    /// Gap decay rate, 1/s.
    pub k: f64,
    pub d_min: f64,
    pub activation_radius: f64,
    pub self_collision: bool,
    pub regularization: f64,
}

impl Default for AvoidanceParams {
    fn default() -> Self {
        Self {
            k: 10.0,
            d_min: 0.02,
            activation_radius: 0.15,
            self_collision: false,
            regularization: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairTarget {
    Obstacle { index: usize },
    Sphere { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivePair {
    pub sphere: usize,
    pub other: PairTarget,
    pub psi: f64,
    pub normal: Vec3,
}

#[derive(Debug, Clone)]
pub struct AvoidanceProblem {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Right-hand sides of `H Δθ ≥ c` before subtracting the nominal motion.
    pub c: DVector<f64>,
    pub nominal: DVector<f64>,
    pub pairs: Vec<ActivePair>,
}

impl AvoidanceProblem {
    pub fn rows(&self) -> usize {
        self.pairs.len()
    }

    /// Largest violation of `H Δθ ≥ c` by an increment.
    pub fn max_violation(&self, delta: &DVector<f64>) -> f64 {
        if self.rows() == 0 {
            return 0.0;
        }
        (&self.c - &self.h * delta).max().max(0.0)
    }
}

/// Rows `H_i = n_iᵀ J_s`, `b_i = −k h Ψ_i + h n_iᵀ v_o − H_i Δθ_nom` for every
/// pair with `Ψ ≤` the activation radius. Base-link spheres have a zero row
/// and are left out.
pub fn build_avoidance_lcp(
    chain: &KinematicChain,
    theta: &[f64],
    nominal: &DVector<f64>,
    obstacles: &[ObstacleSphere],
    h: f64,
    params: &AvoidanceParams,
) -> Result<AvoidanceProblem> {
    let n = chain.dof();
    if nominal.len() != n {
        return Err(Error::InvalidInput("nominal increment has the wrong length".into()));
    }
    let spheres = chain.fk_and_sphere_jacobians(theta)?;
    let mut rows: Vec<(ActivePair, nalgebra::RowDVector<f64>, f64)> = Vec::new();
    for (si, s) in spheres.iter().enumerate() {
        for (oi, o) in obstacles.iter().enumerate() {
            let (psi, normal) = clearance(&s.center, s.radius, o, params.d_min)?;
            if psi <= params.activation_radius && s.link > 0 {
                let row = normal.transpose() * &s.jacobian;
                let c = -params.k * h * psi + h * normal.dot(&o.velocity);
                rows.push((
                    ActivePair {
                        sphere: si,
                        other: PairTarget::Obstacle { index: oi },
                        psi,
                        normal,
                    },
                    row,
                    c,
                ));
            }
        }
    }
    if params.self_collision {
        for i in 0..spheres.len() {
            for j in (i + 1)..spheres.len() {
                let (a, b) = (&spheres[i], &spheres[j]);
                if a.link.abs_diff(b.link) < 2 {
                    continue;
                }
                let other = ObstacleSphere {
                    center: b.center,
                    radius: b.radius,
                    velocity: Vec3::zeros(),
                };
                let (psi, normal) = clearance(&a.center, a.radius, &other, params.d_min)?;
                if psi <= params.activation_radius {
                    let row = normal.transpose() * (&a.jacobian - &b.jacobian);
                    rows.push((
                        ActivePair {
                            sphere: i,
                            other: PairTarget::Sphere { index: j },
                            psi,
                            normal,
                        },
                        row,
                        -params.k * h * psi,
                    ));
                }
            }
        }
    }

    let m = rows.len();
    let mut hm = DMatrix::zeros(m, n);
    let mut c = DVector::zeros(m);
    let mut pairs = Vec::with_capacity(m);
    for (i, (pair, row, ci)) in rows.into_iter().enumerate() {
        hm.row_mut(i).copy_from(&row);
        c[i] = ci;
        pairs.push(pair);
    }
    let b = &c - &hm * nominal;
    Ok(AvoidanceProblem {
        h: hm,
        b,
        c,
        nominal: nominal.clone(),
        pairs,
    })
}

#[derive(Debug, Clone)]
pub struct Correction {
    pub delta: DVector<f64>,
    pub eta: DVector<f64>,
    /// LCP natural residual (0 when no pair is active).
    pub residual: f64,
    /// The LCP failed and the joints are held still this step.
    pub fallback: bool,
}

/// `Δθ = Δθ_nom + Hᵀη` with `0 ≤ η ⊥ (HHᵀ + δI)η − b ≥ 0`. With no active
/// pair the nominal increment is returned untouched.
pub fn correct_increment(p: &AvoidanceProblem, params: &AvoidanceParams) -> Result<Correction> {
    if p.rows() == 0 {
        return Ok(Correction {
            delta: p.nominal.clone(),
            eta: DVector::zeros(0),
            residual: 0.0,
            fallback: false,
        });
    }
    let m = p.rows();
    let mm = &p.h * p.h.transpose() + DMatrix::identity(m, m) * params.regularization;
    let lcp = LcpProblem::new(mm, -&p.b)?;
    let report = solve_lcp_lemke(&lcp);
    let residual = lcp_residual(&lcp, &report.z);
    let delta = &p.nominal + p.h.transpose() * &report.z;
    if !report.converged() || !(residual <= 1e-8) || !(p.max_violation(&delta) <= 1e-8) {
        return Ok(Correction {
            delta: DVector::zeros(p.nominal.len()),
            eta: report.z,
            residual,
            fallback: true,
        });
    }
    Ok(Correction {
        delta,
        eta: report.z,
        residual,
        fallback: false,
    })
}

/// Damped least-squares step of the end effector toward `target`, with the
/// Cartesian error clipped to `max_step`.
pub fn dls_increment(
    chain: &KinematicChain,
    theta: &[f64],
    target: &Vec3,
    damping: f64,
    max_step: f64,
) -> Result<DVector<f64>> {
    let (ee, jac) = chain.end_effector(theta)?;
    let mut e = target - ee;
    let norm = e.norm();
    if norm > max_step {
        e *= max_step / norm;
    }
    let jjt = &jac * jac.transpose() + DMatrix::identity(3, 3) * (damping * damping);
    let y = jjt
        .lu()
        .solve(&DVector::from_column_slice(e.as_slice()))
        .ok_or_else(|| Error::Solver("damped least-squares system is singular".into()))?;
    Ok(jac.transpose() * y)
}

/// Minimum clearance over all sphere–obstacle pairs (∞ without obstacles).
pub fn min_clearance(chain: &KinematicChain, theta: &[f64], obstacles: &[ObstacleSphere], d_min: f64) -> Result<f64> {
    let spheres = chain.fk_and_sphere_jacobians(theta)?;
    let mut best = f64::INFINITY;
    for s in &spheres {
        for o in obstacles {
            best = best.min(clearance(&s.center, s.radius, o, d_min)?.0);
        }
    }
    Ok(best)
}
