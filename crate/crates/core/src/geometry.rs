//! Rigid transforms, the rotation exponential/logarithm and pinhole projection.
//!
//! Units are millimeters for everything 3D and pixels for everything 2D.
//! A [`Pose`] always maps camera coordinates into the world frame:
//! `x_world = R * x_cam + t`.

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vector2 = nalgebra::Vector2<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type Rotation = Rotation3<f64>;

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_axis_angle(axis_angle: Vector3, translation: Vector3) -> Self {
        Self::new(exp_axis_angle(&axis_angle), translation)
    }

    /// Returns `(axis_angle, translation)`, the wire encoding of a pose.
    pub fn to_axis_angle(&self) -> (Vector3, Vector3) {
        (log_rotation(&self.rotation), self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3 {
        self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        invert(self)
    }

    pub fn transform(&self, x: &Vector3) -> Vector3 {
        transform_point(self, x)
    }

    /// Maps a world point into this camera's frame.
    pub fn inverse_transform(&self, x: &Vector3) -> Vector3 {
        self.rotation.inverse() * (x - self.translation)
    }
}

/// `a ∘ b`: apply `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        renormalize(&(a.rotation * b.rotation)),
        a.rotation * b.translation + a.translation,
    )
}

pub fn invert(p: &Pose) -> Pose {
    let rt = p.rotation.inverse();
    Pose::new(rt, -(rt * p.translation))
}

pub fn transform_point(p: &Pose, x: &Vector3) -> Vector3 {
    p.rotation * x + p.translation
}

/// Pinhole camera parameters of an undistorted image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(0.0..f64::from(self.width)).contains(&self.cx)
            || !(0.0..f64::from(self.height)).contains(&self.cy)
        {
            return Err(Error::InvalidIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, xc: &Vector3) -> Result<Vector2> {
        if xc.z <= 0.0 {
            return Err(Error::PointBehindCamera { depth: xc.z });
        }
        Ok(Vector2::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        ))
    }

    pub fn contains(&self, q: &Vector2) -> bool {
        q.x >= 0.0 && q.x < f64::from(self.width) && q.y >= 0.0 && q.y < f64::from(self.height)
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Projects a world point through a camera with camera-to-world pose `t`.
pub fn project(k: &Intrinsics, t: &Pose, x_world: &Vector3) -> Result<Vector2> {
    k.project_camera_point(&t.inverse_transform(x_world))
}

pub fn skew(v: &Vector3) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Angle of the relative rotation `aᵀb`, in `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` with `cos θ = (tr(aᵀb) − 1)/2` clamped to
/// `[−1, 1]`, which equals the arccos form but keeps full precision for small
/// angles.
pub fn rotation_geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let m = a.matrix().transpose() * b.matrix();
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = vee_antisymmetric(&m).norm();
    sin.atan2(cos)
}

/// `vee((M − Mᵀ)/2)`; for a rotation this is `sin θ · axis`.
fn vee_antisymmetric(m: &Matrix3<f64>) -> Vector3 {
    Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5
}

/// Rodrigues' formula.
pub fn exp_axis_angle(r: &Vector3) -> Rotation {
    let theta_sq = r.norm_squared();
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < 1e-4 {
        (
            1.0 - theta_sq / 6.0 + theta_sq * theta_sq / 120.0,
            0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    let k = skew(r);
    Rotation::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`exp_axis_angle`]; the returned vector has norm in `[0, π]`.
///
/// At exactly `θ = π` both `±π·axis` describe the same rotation; the axis is
/// then chosen so that its first nonzero component is positive.
pub fn log_rotation(r: &Rotation) -> Vector3 {
    let m = r.matrix();
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let v = vee_antisymmetric(m);
    let sin = v.norm();
    let theta = sin.atan2(cos);

    if theta < 1e-6 {
        // θ/sin θ ≈ 1 + θ²/6
        return v * (1.0 + theta * theta / 6.0);
    }
    if cos > -0.99 {
        return v * (theta / sin);
    }

    // Near π the antisymmetric part vanishes; read the axis off the symmetric part.
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let one_minus_cos = 1.0 - cos;
    let i = (0..3)
        .max_by(|&p, &q| b[(p, p)].total_cmp(&b[(q, q)]))
        .unwrap_or(0);
    let ai = (b[(i, i)] / one_minus_cos).max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    for j in 0..3 {
        axis[j] = if j == i {
            ai
        } else {
            b[(i, j)] / (one_minus_cos * ai)
        };
    }
    axis.normalize_mut();

    let along = axis.dot(&v);
    if along.abs() > 1e-12 {
        if along < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Closest rotation (Frobenius norm) to an arbitrary 3×3 matrix.
pub fn project_to_so3(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Rotation::identity();
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation::from_matrix_unchecked(u * d * v_t)
}

fn renormalize(r: &Rotation) -> Rotation {
    // Cheap Gram-Schmidt on the product keeps long composition chains orthonormal.
    let m = r.matrix();
    let c0 = m.column(0).normalize();
    let c1 = (m.column(1) - c0 * c0.dot(&m.column(1))).normalize();
    let c2 = c0.cross(&c1);
    Rotation::from_matrix_unchecked(Matrix3::from_columns(&[c0, c1, c2]))
}

pub fn rot_x(angle: f64) -> Rotation {
    Rotation::from_axis_angle(&Vector3::x_axis(), angle)
}

pub fn rot_y(angle: f64) -> Rotation {
    Rotation::from_axis_angle(&Vector3::y_axis(), angle)
}

pub fn rot_z(angle: f64) -> Rotation {
    Rotation::from_axis_angle(&Vector3::z_axis(), angle)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}
