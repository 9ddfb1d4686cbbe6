//! SO(3), SE(3) and Sim(3) value types with exp/log maps.
//!
//! Conventions used throughout the crate:
//!
//! - Rotations are unit quaternions stored as `(w, x, y, z)` with `w >= 0`.
//! - A [`SimTransform`] acts on points as `T(p) = s·R·p + t`.
//! - The Sim(3) tangent is ordered `(ω, ν, σ)`: rotation axis-angle, the
//!   translational part, and log-scale. Its 4×4 matrix form is
//!   `[[ [ω]× + σI, ν ], [0, 0]]`.
//!
//! Every value is immutable and every operation is pure.

use nalgebra::{Complex, Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

/// Below this rotation angle or log-scale magnitude the series branches are used.
pub const SMALL_ANGLE: f64 = 1e-6;

/// `sim3_log` refuses rotations whose angle is within this margin of π.
pub const CUT_LOCUS_MARGIN: f64 = 1e-6;

/// Default tolerance on `|scale - 1|` accepted by [`project_rigid`].
pub const DEFAULT_SCALE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("log near rotation cut locus (angle {angle} rad)")]
    CutLocus { angle: f64 },
    #[error("scale residual {scale} is not within {tolerance} of 1")]
    ScaleResidual { scale: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, GeomError>;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GeomError::InvalidArgument(format!("{what} has non-finite components")))
    }
}

/// Unit quaternion rotation with the `w >= 0` half of the double cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    q: Quaternion<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self { q: Quaternion::new(1.0, 0.0, 0.0, 0.0) }
    }

    /// Builds a rotation from raw quaternion components, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        check_finite(&[w, x, y, z], "quaternion")?;
        let q = Quaternion::new(w, x, y, z);
        if q.norm() < 1e-12 {
            return Err(GeomError::InvalidArgument("quaternion has zero norm".into()));
        }
        Ok(Self::from_quaternion_unchecked(q))
    }

    // Values that are already unit within a few ulps keep their exact bits so
    // that file round-trips are lossless.
    fn from_quaternion_unchecked(q: Quaternion<f64>) -> Self {
        let n2 = q.norm_squared();
        let mut q = if (n2 - 1.0).abs() > 4.0 * f64::EPSILON { q / n2.sqrt() } else { q };
        if q.w < 0.0 {
            q = -q;
        }
        Self { q }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeomError::InvalidArgument("rotation axis must be non-zero".into()));
        }
        so3_exp(&(axis / n * angle))
    }

    /// Rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        let h = 0.5 * yaw;
        Self::from_quaternion_unchecked(Quaternion::new(h.cos(), 0.0, 0.0, h.sin()))
    }

    /// Nearest rotation to a (nearly) orthonormal matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        check_finite(m.as_slice(), "rotation matrix")?;
        let uq = UnitQuaternion::from_matrix_eps(m, 1e-15, 100, UnitQuaternion::identity());
        Ok(Self::from_quaternion_unchecked(*uq.quaternion()))
    }

    /// `(w, x, y, z)` components.
    pub fn wxyz(&self) -> [f64; 4] {
        [self.q.w, self.q.i, self.q.j, self.q.k]
    }

    pub fn quaternion(&self) -> Quaternion<f64> {
        self.q
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        UnitQuaternion::new_unchecked(self.q).to_rotation_matrix().into_inner()
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self::from_quaternion_unchecked(self.q * other.q)
    }

    pub fn inverse(&self) -> Rotation {
        Self::from_quaternion_unchecked(self.q.conjugate())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        UnitQuaternion::new_unchecked(self.q) * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.q.imag().norm().atan2(self.q.w)
    }

    /// Distance between quaternions, accounting for the double cover.
    pub fn quaternion_distance(&self, other: &Rotation) -> f64 {
        let d1 = (self.q - other.q).norm();
        let d2 = (self.q + other.q).norm();
        d1.min(d2)
    }

    pub fn norm_deviation(&self) -> f64 {
        (self.q.norm() - 1.0).abs()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// A rigid camera or body pose in SE(3), meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidPose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Rotation::identity(), translation }
    }

    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rinv = self.rotation.inverse();
        RigidPose { rotation: rinv, translation: -rinv.rotate(&self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Body +x axis expressed in the parent frame (camera forward).
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.rotate(&Vector3::x())
    }
}

/// A Sim(3) element: `T(p) = s·R·p + t` with `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    scale: f64,
}

impl SimTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        check_finite(translation.as_slice(), "translation")?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeomError::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { rotation, translation, scale })
    }

    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn from_scale(scale: f64) -> Result<Self> {
        Self::new(Rotation::identity(), Vector3::zeros(), scale)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn compose(&self, other: &SimTransform) -> SimTransform {
        SimTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.scale * self.rotation.rotate(&other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> SimTransform {
        let rinv = self.rotation.inverse();
        let sinv = 1.0 / self.scale;
        SimTransform { rotation: rinv, translation: -sinv * rinv.rotate(&self.translation), scale: sinv }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation.rotate(p) + self.translation
    }

    /// Homogeneous 4×4 matrix `[[sR, t], [0, 1]]`.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(self.rotation.matrix() * self.scale));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

impl Default for SimTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Sim(3) tangent vector ordered `(ω, ν, σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimTangent {
    pub omega: Vector3<f64>,
    pub nu: Vector3<f64>,
    pub sigma: f64,
}

impl SimTangent {
    pub fn new(omega: Vector3<f64>, nu: Vector3<f64>, sigma: f64) -> Self {
        Self { omega, nu, sigma }
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            omega: Vector3::new(v[0], v[1], v[2]),
            nu: Vector3::new(v[3], v[4], v[5]),
            sigma: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.omega.x, self.omega.y, self.omega.z, self.nu.x, self.nu.y, self.nu.z, self.sigma]
    }

    pub fn scaled(&self, alpha: f64) -> SimTangent {
        SimTangent { omega: self.omega * alpha, nu: self.nu * alpha, sigma: self.sigma * alpha }
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The 4×4 Lie-algebra matrix `[[ [ω]× + σI, ν ], [0, 0]]`.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(skew(&self.omega) + Matrix3::identity() * self.sigma));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.nu);
        m
    }
}

pub fn so3_exp(omega: &Vector3<f64>) -> Result<Rotation> {
    check_finite(omega.as_slice(), "axis-angle")?;
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (w, k) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0, 0.5 - theta2 / 48.0 + theta2 * theta2 / 3840.0)
    } else {
        let h = 0.5 * theta;
        (h.cos(), h.sin() / theta)
    };
    Ok(Rotation::from_quaternion_unchecked(Quaternion::new(
        w,
        k * omega.x,
        k * omega.y,
        k * omega.z,
    )))
}

/// Axis-angle with angle in `[0, π]`.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let v = r.q.imag();
    let w = r.q.w;
    let n = v.norm();
    let theta = 2.0 * n.atan2(w);
    if theta < SMALL_ANGLE {
        // 2·atan(n/w)/n expanded around n = 0
        let ratio2 = n * n / (w * w);
        v * (2.0 / w * (1.0 - ratio2 / 3.0 + ratio2 * ratio2 / 5.0))
    } else {
        v * (theta / n)
    }
}

// ∫₀¹ uʲ e^{σu} du
fn exp_moment(j: u32, sigma: f64) -> f64 {
    if sigma.abs() <= 1.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..40u32 {
            if k > 0 {
                term *= sigma / f64::from(k);
            }
            sum += term / f64::from(k + j + 1);
        }
        sum
    } else {
        let e = sigma.exp();
        let mut m = sigma.exp_m1() / sigma;
        for i in 1..=j {
            m = (e - f64::from(i) * m) / sigma;
        }
        m
    }
}

// (e^z − 1)/z
fn phi1(z: Complex<f64>) -> Complex<f64> {
    if z.norm() < 0.5 {
        let mut term = Complex::new(1.0, 0.0);
        let mut sum = term;
        for k in 1..30u32 {
            term = term * z / f64::from(k + 1);
            sum += term;
        }
        sum
    } else {
        (z.exp() - Complex::new(1.0, 0.0)) / z
    }
}

/// Coefficients `(a, b, c)` of `W = a·I + b·[ω]× + c·[ω]×²`, the matrix with
/// `W = ∫₀¹ exp(u·([ω]× + σI)) du`.
fn sim3_jacobian_coefficients(theta: f64, sigma: f64) -> (f64, f64, f64) {
    let a = exp_moment(0, sigma);
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let b = exp_moment(1, sigma) - t2 * exp_moment(3, sigma) / 6.0
            + t2 * t2 * exp_moment(5, sigma) / 120.0;
        let c = exp_moment(2, sigma) / 2.0 - t2 * exp_moment(4, sigma) / 24.0
            + t2 * t2 * exp_moment(6, sigma) / 720.0;
        (a, b, c)
    } else {
        let phi = phi1(Complex::new(sigma, theta));
        (a, phi.im / theta, (a - phi.re) / (theta * theta))
    }
}

/// Left Jacobian `W(ω, σ)` mapping `ν` to the translation of `sim3_exp`.
pub fn sim3_left_jacobian(omega: &Vector3<f64>, sigma: f64) -> Matrix3<f64> {
    let (a, b, c) = sim3_jacobian_coefficients(omega.norm(), sigma);
    let k = skew(omega);
    Matrix3::identity() * a + k * b + k * k * c
}

pub fn sim3_exp(xi: &SimTangent) -> Result<SimTransform> {
    check_finite(&xi.to_array(), "Sim(3) tangent")?;
    let rotation = so3_exp(&xi.omega)?;
    let w = sim3_left_jacobian(&xi.omega, xi.sigma);
    SimTransform::new(rotation, w * xi.nu, xi.sigma.exp())
}

/// Inverse of [`sim3_exp`]; fails within [`CUT_LOCUS_MARGIN`] of a half turn.
pub fn sim3_log(t: &SimTransform) -> Result<SimTangent> {
    let angle = t.rotation.angle();
    if angle >= std::f64::consts::PI - CUT_LOCUS_MARGIN {
        return Err(GeomError::CutLocus { angle });
    }
    Ok(sim3_log_unchecked(t))
}

/// [`sim3_log`] without the cut-locus guard: near a half turn the axis sign
/// is whichever the quaternion yields.
pub(crate) fn sim3_log_unchecked(t: &SimTransform) -> SimTangent {
    let omega = so3_log(&t.rotation);
    let sigma = t.scale.ln();
    let w = sim3_left_jacobian(&omega, sigma);
    let nu = w.lu().solve(&t.translation).unwrap_or(t.translation);
    SimTangent { omega, nu, sigma }
}

pub fn embed_rigid(p: &RigidPose) -> SimTransform {
    SimTransform { rotation: p.rotation, translation: p.translation, scale: 1.0 }
}

/// Drops the scale of `t`. Without `force`, `|scale - 1|` must be below `tolerance`.
pub fn project_rigid(t: &SimTransform, tolerance: f64, force: bool) -> Result<RigidPose> {
    if !force && (t.scale - 1.0).abs() >= tolerance {
        return Err(GeomError::ScaleResidual { scale: t.scale, tolerance });
    }
    let [w, x, y, z] = t.rotation.wxyz();
    Ok(RigidPose {
        rotation: Rotation::from_quaternion_unchecked(Quaternion::new(w, x, y, z)),
        translation: t.translation,
    })
}
