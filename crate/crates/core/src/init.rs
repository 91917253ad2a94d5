//! Pose initialization from 2D–3D correspondences with the direct linear
//! transform.
//!
//! Procedure for one camera:
//! 1. Hartley-normalize the image points (centroid at the origin, mean
//!    distance √2) and the world points (mean distance √3).
//! 2. Stack the 2n×12 homogeneous system for the 3×4 projection matrix.
//! 3. Take the right singular vector of the smallest singular value.
//! 4. Undo the normalization and strip the intrinsics: `M = K⁻¹ P ∝ [R | t]`.
//! 5. Divide by the cube root of `|det M₃ₓ₃|`.
//! 6. Negate if the mean depth of the correspondences is negative.
//! 7. Replace the 3×3 block by its closest rotation (SVD with det = +1) and
//!    re-derive the translation so the world-point centroid keeps its
//!    camera-frame position.
//! 8. Invert the world-to-camera result into a camera-to-world pose.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4};

use crate::error::{Error, Result};
use crate::geometry::{project_to_so3, Intrinsics, Pose, Vector2, Vector3};
use crate::scene::Dataset;

/// Ratio of the 11th to the largest singular value below which the design
/// matrix is treated as rank deficient.
pub const DEGENERACY_RATIO: f64 = 1e-8;

fn normalize_2d(points: &[Vector2]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn normalize_3d(points: &[Vector3]) -> Matrix4<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        3f64.sqrt() / mean_dist
    } else {
        1.0
    };
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t[(0, 3)] = -s * c.x;
    t[(1, 3)] = -s * c.y;
    t[(2, 3)] = -s * c.z;
    t
}

/// Estimates the camera-to-world pose of a calibrated camera.
pub fn estimate_pose_dlt(
    world_points: &[Vector3],
    image_points: &[Vector2],
    k: &Intrinsics,
) -> Result<Pose> {
    let n = world_points.len();
    if image_points.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: image_points.len(),
        });
    }
    if n < 6 {
        return Err(Error::InsufficientPoints(n));
    }

    let t2 = normalize_2d(image_points);
    let t3 = normalize_3d(world_points);

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (x, q)) in world_points.iter().zip(image_points).enumerate() {
        let xh = t3 * x.push(1.0);
        let qh = t2 * q.push(1.0);
        let (u, v) = (qh.x / qh.z, qh.y / qh.z);
        for c in 0..4 {
            a[(2 * i, c)] = xh[c];
            a[(2 * i, 8 + c)] = -u * xh[c];
            a[(2 * i + 1, 4 + c)] = xh[c];
            a[(2 * i + 1, 8 + c)] = -v * xh[c];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration { ratio: 0.0 })?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let eleventh = svd.singular_values[order[10]];
    let ratio = if largest > 0.0 { eleventh / largest } else { 0.0 };
    if ratio < DEGENERACY_RATIO {
        return Err(Error::DegenerateConfiguration { ratio });
    }
    let p_vec = v_t.row(order[11]);
    let p_norm = Matrix3x4::from_fn(|r, c| p_vec[4 * r + c]);

    let t2_inv = t2.try_inverse().ok_or(Error::DegenerateConfiguration { ratio })?;
    let p = t2_inv * p_norm * t3;
    let k_inv = k
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::InvalidIntrinsics("singular calibration matrix".into()))?;
    let mut m = k_inv * p;

    let det = m.fixed_view::<3, 3>(0, 0).determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::DegenerateConfiguration { ratio });
    }
    m /= det.abs().cbrt();

    let mean_depth = world_points
        .iter()
        .map(|x| (m * x.push(1.0)).z)
        .sum::<f64>()
        / n as f64;
    if mean_depth < 0.0 {
        m = -m;
    }

    // Keep the centroid of the world points where M places it in the camera
    // frame, so the result does not depend on where the world origin lies.
    let r_wc = project_to_so3(&m.fixed_view::<3, 3>(0, 0).into_owned());
    let centroid = world_points.iter().sum::<Vector3>() / n as f64;
    let t_wc = m * centroid.push(1.0) - r_wc * centroid;
    Ok(Pose::new(r_wc, t_wc).inverse())
}

/// Initial poses for every camera. Camera 1 is the world frame; the other
/// cameras are resected against camera 1's depth readings of the 2D features.
pub fn initialize_all(d: &Dataset) -> Result<Vec<Pose>> {
    let h = d.num_2d_features();
    let world: Vec<Vector3> = (0..h)
        .map(|i| {
            d.depth_measurement(0, i)
                .ok_or(Error::MissingCorrespondence {
                    feature: d.obs2d(0)[i].feature,
                    camera: Some(1),
                })
        })
        .collect::<Result<_>>()?;
    let mut poses = Vec::with_capacity(d.num_cameras());
    poses.push(Pose::identity());
    for l in 1..d.num_cameras() {
        let image: Vec<Vector2> = d.obs2d(l).iter().map(|o| o.uv).collect();
        poses.push(estimate_pose_dlt(&world, &image, &d.cameras()[l].intrinsics)?);
    }
    Ok(poses)
}
