//! Residuals and objectives.
//!
//! Conventions:
//! - 2D residuals `a = q − ψ(K, T, x)` are stacked cameras outer, features
//!   inner (two rows each).
//! - 3D residuals `b = (R_l p_l + t_l) − (R_k p_k + t_k)` are stacked over
//!   unordered camera pairs `l < k` in lexicographic order, features inner
//!   (three rows each). Each correspondence is counted once; the ordered-pair
//!   reading doubles `V_ICP` and is available through [`PairConvention`].

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{project, Intrinsics, Pose, Vector2, Vector3};
use crate::scene::Dataset;

/// Optimization variables: poses of cameras `2..=N` and one world point per
/// 2D feature. Camera 1 is the gauge and stays at the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    pub poses: Vec<Pose>,
    pub structure: Vec<Vector3>,
}

impl ParameterBlock {
    /// Builds a block from poses of ALL cameras; the first must be camera 1.
    pub fn from_all_poses(all: &[Pose], structure: Vec<Vector3>) -> Self {
        Self {
            poses: all[1..].to_vec(),
            structure,
        }
    }

    pub fn num_cameras(&self) -> usize {
        self.poses.len() + 1
    }

    /// Pose of camera `index` (0-based, so 0 is the gauge camera).
    pub fn pose(&self, index: usize) -> Pose {
        if index == 0 {
            Pose::identity()
        } else {
            self.poses[index - 1]
        }
    }

    pub fn all_poses(&self) -> Vec<Pose> {
        std::iter::once(Pose::identity())
            .chain(self.poses.iter().copied())
            .collect()
    }

    pub fn check_against(&self, d: &Dataset) -> Result<()> {
        if self.num_cameras() != d.num_cameras() {
            return Err(Error::DimensionMismatch {
                expected: d.num_cameras() - 1,
                actual: self.poses.len(),
            });
        }
        if self.structure.len() != d.num_2d_features() {
            return Err(Error::DimensionMismatch {
                expected: d.num_2d_features(),
                actual: self.structure.len(),
            });
        }
        Ok(())
    }
}

/// Isotropic noise variances: pixels² for 2D, mm² for 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma2d_sq: f64,
    pub sigma3d_sq: f64,
}

impl NoiseModel {
    pub fn new(sigma2d_sq: f64, sigma3d_sq: f64) -> Result<Self> {
        if !(sigma2d_sq > 0.0 && sigma2d_sq.is_finite()) || !(sigma3d_sq >= 0.0 && sigma3d_sq.is_finite()) {
            return Err(Error::InvalidOptions(format!(
                "noise variances must be finite with sigma2d^2 > 0 and sigma3d^2 >= 0, got ({sigma2d_sq}, {sigma3d_sq})"
            )));
        }
        Ok(Self {
            sigma2d_sq,
            sigma3d_sq,
        })
    }

    pub fn from_std(sigma2d: f64, sigma3d: f64) -> Result<Self> {
        Self::new(sigma2d * sigma2d, sigma3d * sigma3d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub v_icp: f64,
    pub v_ba: f64,
    pub w: f64,
    pub v_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairConvention {
    #[default]
    Unordered,
    /// Sums over ordered pairs `(l, k)` and `(k, l)`, doubling every term.
    Ordered,
}

impl PairConvention {
    pub fn multiplier(self) -> f64 {
        match self {
            PairConvention::Unordered => 1.0,
            PairConvention::Ordered => 2.0,
        }
    }
}

pub fn ba_residual(k: &Intrinsics, t: &Pose, x: &Vector3, q: &Vector2) -> Result<Vector2> {
    Ok(q - project(k, t, x)?)
}

/// Stacked 2D residuals `A`, cameras outer.
pub fn ba_residuals(s: &ParameterBlock, d: &Dataset) -> Result<DVector<f64>> {
    s.check_against(d)?;
    let h = d.num_2d_features();
    let mut out = DVector::zeros(2 * h * d.num_cameras());
    for (l, cam) in d.cameras().iter().enumerate() {
        let pose = s.pose(l);
        for (i, o) in d.obs2d(l).iter().enumerate() {
            let r = ba_residual(&cam.intrinsics, &pose, &s.structure[i], &o.uv)?;
            let row = 2 * (l * h + i);
            out[row] = r.x;
            out[row + 1] = r.y;
        }
    }
    Ok(out)
}

/// `V_BA`: sum of squared reprojection errors, pixels².
pub fn ba_cost(s: &ParameterBlock, d: &Dataset) -> Result<f64> {
    Ok(ba_residuals(s, d)?.norm_squared())
}

pub fn icp_residual(t_l: &Pose, t_k: &Pose, p_l: &Vector3, p_k: &Vector3) -> Vector3 {
    t_l.transform(p_l) - t_k.transform(p_k)
}

/// Stacked 3D residuals `B` for poses of all cameras (camera 1 first).
pub fn icp_residuals(poses: &[Pose], d: &Dataset) -> DVector<f64> {
    let j = d.num_3d_features();
    let mut out = DVector::zeros(3 * j * d.num_pairs());
    for (pair, (l, k)) in d.pairs().enumerate() {
        for (i, (pl, pk)) in d.obs3d(l).iter().zip(d.obs3d(k)).enumerate() {
            let r = icp_residual(&poses[l], &poses[k], &pl.xyz, &pk.xyz);
            out.fixed_rows_mut::<3>(3 * (pair * j + i)).copy_from(&r);
        }
    }
    out
}

/// `V_ICP` over unordered pairs, mm².
pub fn icp_cost(poses: &[Pose], d: &Dataset) -> f64 {
    icp_residuals(poses, d).norm_squared()
}

pub fn icp_cost_with(poses: &[Pose], d: &Dataset, convention: PairConvention) -> f64 {
    match convention {
        PairConvention::Unordered => icp_cost(poses, d),
        PairConvention::Ordered => {
            let n = d.num_cameras();
            let mut total = 0.0;
            for l in 0..n {
                for k in (0..n).filter(|&k| k != l) {
                    for (pl, pk) in d.obs3d(l).iter().zip(d.obs3d(k)) {
                        total += icp_residual(&poses[l], &poses[k], &pl.xyz, &pk.xyz).norm_squared();
                    }
                }
            }
            total
        }
    }
}

/// `w = 2σ²₃D / σ²₂D`.
pub fn weight_from_variances(n: &NoiseModel) -> f64 {
    2.0 * n.sigma3d_sq / n.sigma2d_sq
}

/// `V = V_ICP + w·V_BA`.
pub fn joint_cost(s: &ParameterBlock, d: &Dataset, w: f64) -> Result<CostBreakdown> {
    if w.is_nan() || w < 0.0 {
        return Err(Error::InvalidOptions(format!("weight must be >= 0, got {w}")));
    }
    let v_ba = ba_cost(s, d)?;
    let v_icp = icp_cost(&s.all_poses(), d);
    Ok(CostBreakdown {
        v_icp,
        v_ba,
        w,
        v_total: v_icp + w * v_ba,
    })
}

/// `(a, b)`: number of 3D correspondences (pair, feature) and of 2D
/// observations (camera, feature).
pub fn baicp_counts(d: &Dataset) -> (usize, usize) {
    (
        d.num_pairs() * d.num_3d_features(),
        d.num_cameras() * d.num_2d_features(),
    )
}

/// `s = (avgDepth / avgFocal)²` with the average taken over every camera's
/// view of the structure points.
pub fn baicp_scale(s: &ParameterBlock, d: &Dataset) -> Result<f64> {
    s.check_against(d)?;
    let mut depth_sum = 0.0;
    for l in 0..d.num_cameras() {
        let pose = s.pose(l);
        depth_sum += s
            .structure
            .iter()
            .map(|x| pose.inverse_transform(x).z)
            .sum::<f64>();
    }
    let avg_depth = depth_sum / (d.num_cameras() * s.structure.len()) as f64;
    let avg_focal = d
        .cameras()
        .iter()
        .map(|c| c.intrinsics.mean_focal())
        .sum::<f64>()
        / d.num_cameras() as f64;
    Ok((avg_depth / avg_focal).powi(2))
}

/// Term weights `((1−c)/a, s·c/b)` applied to `(V_ICP, V_BA)`.
pub fn baicp_weights(d: &Dataset, scale: f64, c: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidOptions(format!("c must lie in [0, 1], got {c}")));
    }
    let (a, b) = baicp_counts(d);
    if a == 0 || b == 0 {
        return Err(Error::InvalidOptions("BAICP+ needs a > 0 and b > 0".into()));
    }
    Ok(((1.0 - c) / a as f64, scale * c / b as f64))
}

pub fn baicp_plus_cost(s: &ParameterBlock, d: &Dataset, c: f64) -> Result<f64> {
    let scale = baicp_scale(s, d)?;
    let (wi, wb) = baicp_weights(d, scale, c)?;
    let v_icp = icp_cost(&s.all_poses(), d);
    let v_ba = ba_cost(s, d)?;
    Ok(wi * v_icp + wb * v_ba)
}

/// Seeds one world point per 2D feature from the depth readings: the mean of
/// every camera's reading mapped through that camera's pose.
pub fn init_structure(d: &Dataset, poses: &[Pose]) -> Result<Vec<Vector3>> {
    if poses.len() != d.num_cameras() {
        return Err(Error::DimensionMismatch {
            expected: d.num_cameras(),
            actual: poses.len(),
        });
    }
    (0..d.num_2d_features())
        .map(|i| {
            let mut sum = Vector3::zeros();
            let mut count = 0usize;
            for (l, pose) in poses.iter().enumerate() {
                if let Some(p) = d.depth_measurement(l, i) {
                    sum += pose.transform(&p);
                    count += 1;
                }
            }
            if count == 0 {
                Err(Error::MissingCorrespondence {
                    feature: d.obs2d(0)[i].feature,
                    camera: None,
                })
            } else {
                Ok(sum / count as f64)
            }
        })
        .collect()
}
