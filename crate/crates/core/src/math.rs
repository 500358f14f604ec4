//! Rigid-body kinematics shared by every other module: poses on SE(3),
//! spatial velocities, the block-diagonal generalized inertia and the
//! first-order quaternion integrator.

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravitational acceleration used whenever a scene does not override it.
pub const GRAVITY: f64 = 9.81;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Configuration of a rigid body: center-of-mass position and body→world
/// orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(position: Vec3) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    pub fn rotation(&self) -> Mat3 {
        *self.orientation.to_rotation_matrix().matrix()
    }

    /// Maps a body-frame point to world coordinates.
    pub fn transform_point(&self, body: &Vec3) -> Vec3 {
        self.position + self.orientation * body
    }

    pub fn inverse_transform_point(&self, world: &Vec3) -> Vec3 {
        self.orientation.inverse() * (world - self.position)
    }

    /// Heading about the world z axis, in (-π, π].
    pub fn yaw(&self) -> f64 {
        let x = self.orientation * Vec3::x();
        x.y.atan2(x.x)
    }
}

/// Spatial velocity `[v, ω]` with both parts expressed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatialVelocity {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl SpatialVelocity {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.linear.norm_squared() + self.angular.norm_squared()).sqrt()
    }

    /// Velocity of the material point at world position `point` when the
    /// center of mass sits at `com`.
    pub fn point_velocity(&self, com: &Vec3, point: &Vec3) -> Vec3 {
        self.linear + self.angular.cross(&(point - com))
    }
}

/// A wrench impulse `[f, τ]` about the center of mass, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WrenchImpulse {
    pub force: Vec3,
    pub torque: Vec3,
}

impl WrenchImpulse {
    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Impulse `f` applied at `point` on a body whose center of mass is `com`.
    pub fn at_point(force: Vec3, com: &Vec3, point: &Vec3) -> Self {
        Self::new(force, (point - com).cross(&force))
    }

    pub fn dot(&self, nu: &SpatialVelocity) -> f64 {
        self.force.dot(&nu.linear) + self.torque.dot(&nu.angular)
    }
}

impl std::ops::Add for WrenchImpulse {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl std::ops::Sub for WrenchImpulse {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.force - rhs.force, self.torque - rhs.torque)
    }
}

impl std::ops::Neg for WrenchImpulse {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.force, -self.torque)
    }
}

/// Mass and body-frame rotational inertia about the center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialInertia {
    pub mass: f64,
    pub inertia_body: Mat3,
}

impl SpatialInertia {
    pub fn new(mass: f64, inertia_body: Mat3) -> Result<Self> {
        let inertia = Self { mass, inertia_body };
        inertia.validate()?;
        Ok(inertia)
    }

    pub fn solid_sphere(mass: f64, radius: f64) -> Result<Self> {
        Self::new(mass, Mat3::identity() * (0.4 * mass * radius * radius))
    }

    pub fn solid_box(mass: f64, size: Vec3) -> Result<Self> {
        let (x2, y2, z2) = (size.x * size.x, size.y * size.y, size.z * size.z);
        Self::new(
            mass,
            Mat3::from_diagonal(&Vec3::new(y2 + z2, x2 + z2, x2 + y2)) * (mass / 12.0),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidInput(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        let asym = (self.inertia_body - self.inertia_body.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "inertia tensor not symmetric (max asymmetry {asym:e})"
            )));
        }
        let eig = self.inertia_body.symmetric_eigenvalues();
        if eig.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidInput(
                "inertia tensor must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// Block-diagonal generalized inertia evaluated at one orientation.
#[derive(Debug, Clone, Copy)]
pub struct MassMatrix {
    pub mass: f64,
    pub inertia: Mat3,
    pub inertia_inv: Mat3,
}

impl MassMatrix {
    pub fn new(inertia: &SpatialInertia, pose: &Pose) -> Result<Self> {
        let r = pose.rotation();
        let world = r * inertia.inertia_body * r.transpose();
        // Symmetrize to keep I_w exactly symmetric after the product.
        let world = (world + world.transpose()) * 0.5;
        let inv = world.try_inverse().ok_or(Error::SingularInertia)?;
        if !inv.iter().all(|x| x.is_finite()) {
            return Err(Error::SingularInertia);
        }
        Ok(Self {
            mass: inertia.mass,
            inertia: world,
            inertia_inv: inv,
        })
    }

    pub fn apply_inverse(&self, w: &WrenchImpulse) -> SpatialVelocity {
        SpatialVelocity::new(w.force / self.mass, self.inertia_inv * w.torque)
    }

    pub fn apply(&self, nu: &SpatialVelocity) -> WrenchImpulse {
        WrenchImpulse::new(nu.linear * self.mass, self.inertia * nu.angular)
    }

    pub fn kinetic_energy(&self, nu: &SpatialVelocity) -> f64 {
        0.5 * (self.mass * nu.linear.norm_squared() + nu.angular.dot(&(self.inertia * nu.angular)))
    }

    pub fn to_matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Mat3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.inertia);
        m
    }

    pub fn to_inverse_matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Mat3::identity() / self.mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.inertia_inv);
        m
    }
}

/// Generalized inertia `M(q) = blkdiag(m I₃, R I_b Rᵀ)` and its inverse.
pub fn world_inertia(inertia: &SpatialInertia, pose: &Pose) -> Result<(Matrix6<f64>, Matrix6<f64>)> {
    let mm = MassMatrix::new(inertia, pose)?;
    Ok((mm.to_matrix(), mm.to_inverse_matrix()))
}

/// Advances a pose by one step with the end-of-step velocity:
/// `p' = p + h v`, `Q' = normalize(Q + h · ½ (0, ω) ⊗ Q)`.
pub fn integrate_pose(pose: &Pose, nu: &SpatialVelocity, h: f64) -> Pose {
    let q = pose.orientation.quaternion();
    let w = nu.angular;
    let omega = Quaternion::new(0.0, w.x, w.y, w.z);
    let dq = omega * q * (0.5 * h);
    let next = UnitQuaternion::from_quaternion(q + dq);
    Pose::new(pose.position + nu.linear * h, next)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Deterministic orthonormal tangents `(t, o)` for a unit normal `n`, built
/// from the world axis least aligned with `n`. `{t, o, n}` is right-handed.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let abs = n.abs();
    let axis = if abs.x <= abs.y && abs.x <= abs.z {
        Vec3::x()
    } else if abs.y <= abs.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let t = (axis - n * n.dot(&axis)).normalize();
    let o = n.cross(&t);
    (t, o)
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}
