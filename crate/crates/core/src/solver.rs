//! Levenberg–Marquardt refinement of poses and structure.
//!
//! The objective is `α·‖B‖² + β·‖A‖²` with `B` the stacked 3D residuals and
//! `A` the stacked 2D residuals; every supported objective is an instance
//! (`joint(w)`: α = 1, β = w; BA: α = 0; ICP: β = 0 with structure frozen).
//! Each iteration solves `(H + λ·diag H) ΔS = −g` with `H = αJ_BᵀJ_B + βJ_AᵀJ_A`
//! and `g = αJ_BᵀB + βJ_AᵀA`.
//!
//! Parameter layout of `ΔS`: for each camera `2..=N` a 6-vector
//! `[ω; δt]`, applied as `R ← exp(ω)·R`, `t ← t + δt`; then three
//! coordinates per structure point. Camera 1 has no entries.
//!
//! The normal equations are assembled block by block. Structure points only
//! couple to poses, so the damped system is solved by eliminating the 3×3
//! point blocks first; the result is the same step the dense system yields.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix3x6, SMatrix};

use crate::costs::{
    ba_residuals, baicp_scale, baicp_weights, icp_residuals, PairConvention, ParameterBlock,
};
use crate::error::{Error, Result};
use crate::geometry::{exp_axis_angle, log_rotation, skew, Intrinsics, Pose, Vector2, Vector3};
use crate::scene::Dataset;

type Matrix2x6 = SMatrix<f64, 2, 6>;

/// Depth (mm) at which 2D residuals are clamped during iteration.
pub const MIN_DEPTH: f64 = 1.0;
/// Floor applied to zero diagonal entries of `H` before damping.
pub const DIAGONAL_FLOOR: f64 = 1e-12;
/// Step rejections tolerated within one iteration.
pub const MAX_REJECTIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    Analytic,
    Numeric,
    /// Computes both and fails on disagreement, then proceeds with the analytic one.
    Check,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub tol_step: f64,
    pub tol_cost_rel: f64,
    pub jacobian_mode: JacobianMode,
    pub pair_convention: PairConvention,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            tol_step: 1e-10,
            tol_cost_rel: 1e-12,
            jacobian_mode: JacobianMode::Analytic,
            pair_convention: PairConvention::Unordered,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations >= 1
            && self.lambda0 > 0.0
            && self.lambda_up > 1.0
            && self.lambda_down > 0.0
            && self.lambda_down < 1.0
            && self.tol_step >= 0.0
            && self.tol_cost_rel >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOptions(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    BaOnly,
    IcpOnly,
    Joint { w: f64 },
    BaicpPlus { c: f64 },
    /// `icp·V_ICP + ba·V_BA`, structure free.
    Weighted { icp: f64, ba: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    StepTol,
    CostTol,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Initial cost followed by the cost after every accepted step.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub termination_reason: TerminationReason,
    /// `(V_ICP, V_BA)` weights the objective was evaluated with.
    pub weights: (f64, f64),
}

/// Number of entries in `ΔS`.
pub fn num_params(num_cameras: usize, num_points: usize) -> usize {
    6 * (num_cameras - 1) + 3 * num_points
}

/// Absolute parameter vector: `[log R; t]` per camera `2..=N`, then points.
pub fn pack(s: &ParameterBlock) -> DVector<f64> {
    let mut v = DVector::zeros(num_params(s.num_cameras(), s.structure.len()));
    for (c, p) in s.poses.iter().enumerate() {
        v.fixed_rows_mut::<3>(6 * c).copy_from(&log_rotation(&p.rotation));
        v.fixed_rows_mut::<3>(6 * c + 3).copy_from(&p.translation);
    }
    let off = 6 * s.poses.len();
    for (i, x) in s.structure.iter().enumerate() {
        v.fixed_rows_mut::<3>(off + 3 * i).copy_from(x);
    }
    v
}

pub fn unpack(v: &DVector<f64>, num_cameras: usize, num_points: usize) -> Result<ParameterBlock> {
    let expected = num_params(num_cameras, num_points);
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: v.len(),
        });
    }
    let poses = (0..num_cameras - 1)
        .map(|c| {
            Pose::from_axis_angle(
                v.fixed_rows::<3>(6 * c).into_owned(),
                v.fixed_rows::<3>(6 * c + 3).into_owned(),
            )
        })
        .collect();
    let off = 6 * (num_cameras - 1);
    let structure = (0..num_points)
        .map(|i| v.fixed_rows::<3>(off + 3 * i).into_owned())
        .collect();
    Ok(ParameterBlock { poses, structure })
}

/// Applies an increment `ΔS` in the local parametrization.
pub fn retract(s: &ParameterBlock, delta: &DVector<f64>) -> Result<ParameterBlock> {
    let expected = num_params(s.num_cameras(), s.structure.len());
    if delta.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: delta.len(),
        });
    }
    let poses = s
        .poses
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let w: Vector3 = delta.fixed_rows::<3>(6 * c).into_owned();
            let dt: Vector3 = delta.fixed_rows::<3>(6 * c + 3).into_owned();
            if w == Vector3::zeros() {
                Pose::new(p.rotation, p.translation + dt)
            } else {
                Pose::new(exp_axis_angle(&w) * p.rotation, p.translation + dt)
            }
        })
        .collect();
    let off = 6 * s.poses.len();
    let structure = s
        .structure
        .iter()
        .enumerate()
        .map(|(i, x)| x + delta.fixed_rows::<3>(off + 3 * i))
        .collect();
    Ok(ParameterBlock { poses, structure })
}

/// 2D residual of one observation with its derivatives with respect to the
/// pose increment and the point. Depths below [`MIN_DEPTH`] are clamped and
/// reported through the last tuple field.
pub(crate) fn ba_block(
    k: &Intrinsics,
    pose: &Pose,
    x: &Vector3,
    q: &Vector2,
) -> (Vector2, Matrix2x6, Matrix2x3<f64>, bool) {
    let rt = pose.rotation.matrix().transpose();
    let y = x - pose.translation;
    let xc = rt * y;
    let clamped = xc.z < MIN_DEPTH;
    let z = if clamped { MIN_DEPTH } else { xc.z };
    let r = Vector2::new(
        q.x - (k.fx * xc.x / z + k.cx),
        q.y - (k.fy * xc.y / z + k.cy),
    );
    // d(residual)/d(camera point)
    let da = Matrix2x3::new(
        -k.fx / z,
        0.0,
        k.fx * xc.x / (z * z),
        0.0,
        -k.fy / z,
        k.fy * xc.y / (z * z),
    );
    let d_point = da * rt;
    let mut d_pose = Matrix2x6::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(da * rt * skew(&y)));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-d_point));
    (r, d_pose, d_point, clamped)
}

/// 3D residual of one correspondence with derivatives with respect to the
/// increments of pose `l` and pose `k`.
pub(crate) fn icp_block(
    pose_l: &Pose,
    pose_k: &Pose,
    p_l: &Vector3,
    p_k: &Vector3,
) -> (Vector3, Matrix3x6<f64>, Matrix3x6<f64>) {
    let vl = pose_l.rotation * p_l;
    let vk = pose_k.rotation * p_k;
    let r = (vl + pose_l.translation) - (vk + pose_k.translation);
    let mut jl = Matrix3x6::zeros();
    jl.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&vl)));
    jl.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    let mut jk = Matrix3x6::zeros();
    jk.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&vk));
    jk.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
    (r, jl, jk)
}

/// Dense Jacobians and residuals at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    /// `∂A/∂ΔS`, rows as in [`ba_residuals`].
    pub ja: DMatrix<f64>,
    /// `∂B/∂ΔS`, rows as in [`icp_residuals`].
    pub jb: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

fn analytic_jacobians(s: &ParameterBlock, d: &Dataset) -> Result<Jacobians> {
    let a = ba_residuals(s, d)?;
    let poses = s.all_poses();
    let b = icp_residuals(&poses, d);
    let np = num_params(d.num_cameras(), s.structure.len());
    let pose_off = 6 * (d.num_cameras() - 1);
    let h = d.num_2d_features();
    let j = d.num_3d_features();

    let mut ja = DMatrix::zeros(a.len(), np);
    for (l, cam) in d.cameras().iter().enumerate() {
        for (i, o) in d.obs2d(l).iter().enumerate() {
            let (_, dp, dx, _) = ba_block(&cam.intrinsics, &poses[l], &s.structure[i], &o.uv);
            let row = 2 * (l * h + i);
            if l > 0 {
                ja.view_mut((row, 6 * (l - 1)), (2, 6)).copy_from(&dp);
            }
            ja.view_mut((row, pose_off + 3 * i), (2, 3)).copy_from(&dx);
        }
    }

    let mut jb = DMatrix::zeros(b.len(), np);
    for (pair, (l, k)) in d.pairs().enumerate() {
        for (i, (pl, pk)) in d.obs3d(l).iter().zip(d.obs3d(k)).enumerate() {
            let (_, jl, jk) = icp_block(&poses[l], &poses[k], &pl.xyz, &pk.xyz);
            let row = 3 * (pair * j + i);
            if l > 0 {
                jb.view_mut((row, 6 * (l - 1)), (3, 6)).copy_from(&jl);
            }
            if k > 0 {
                jb.view_mut((row, 6 * (k - 1)), (3, 6)).copy_from(&jk);
            }
        }
    }
    Ok(Jacobians { ja, jb, a, b })
}

fn numeric_jacobians(s: &ParameterBlock, d: &Dataset) -> Result<Jacobians> {
    let a = ba_residuals(s, d)?;
    let b = icp_residuals(&s.all_poses(), d);
    let absolute = pack(s);
    let np = absolute.len();
    let mut ja = DMatrix::zeros(a.len(), np);
    let mut jb = DMatrix::zeros(b.len(), np);
    let mut delta = DVector::zeros(np);
    for c in 0..np {
        let step = 1e-6 * absolute[c].abs().max(1.0);
        delta[c] = step;
        let plus = retract(s, &delta)?;
        delta[c] = -step;
        let minus = retract(s, &delta)?;
        delta[c] = 0.0;
        let da = (ba_residuals(&plus, d)? - ba_residuals(&minus, d)?) / (2.0 * step);
        let db = (icp_residuals(&plus.all_poses(), d) - icp_residuals(&minus.all_poses(), d))
            / (2.0 * step);
        ja.set_column(c, &da);
        jb.set_column(c, &db);
    }
    Ok(Jacobians { ja, jb, a, b })
}

/// Largest relative entrywise discrepancy between two matrices; entries whose
/// absolute difference is at most `abs_floor` count as agreeing.
pub fn max_relative_discrepancy(a: &DMatrix<f64>, b: &DMatrix<f64>, abs_floor: f64) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for c in 0..a.ncols() {
        for r in 0..a.nrows() {
            let (x, y) = (a[(r, c)], b[(r, c)]);
            let diff = (x - y).abs();
            if diff <= abs_floor {
                continue;
            }
            let rel = diff / x.abs().max(y.abs());
            if rel > worst.0 {
                worst = (rel, r, c);
            }
        }
    }
    worst
}

/// Largest entrywise discrepancy between two matrices, each row measured
/// relative to that row's largest magnitude.
pub fn row_scaled_discrepancy(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..a.nrows() {
        let scale = a.row(r).amax().max(b.row(r).amax());
        if scale == 0.0 {
            continue;
        }
        let diff = (a.row(r) - b.row(r)).amax();
        worst = worst.max(diff / scale);
    }
    worst
}

/// Relative tolerance of [`JacobianMode::Check`].
pub const CHECK_REL_TOL: f64 = 1e-4;
/// Absolute floor of [`JacobianMode::Check`].
pub const CHECK_ABS_FLOOR: f64 = 1e-8;

pub fn jacobians(s: &ParameterBlock, d: &Dataset, mode: JacobianMode) -> Result<Jacobians> {
    s.check_against(d)?;
    match mode {
        JacobianMode::Analytic => analytic_jacobians(s, d),
        JacobianMode::Numeric => numeric_jacobians(s, d),
        JacobianMode::Check => {
            let an = analytic_jacobians(s, d)?;
            let nu = numeric_jacobians(s, d)?;
            for (x, y, row_off) in [(&an.ja, &nu.ja, 0), (&an.jb, &nu.jb, an.ja.nrows())] {
                let (rel, r, c) = max_relative_discrepancy(x, y, CHECK_ABS_FLOOR);
                if rel > CHECK_REL_TOL {
                    return Err(Error::JacobianMismatch {
                        row: row_off + r,
                        col: c,
                        analytic: x[(r, c)],
                        numeric: y[(r, c)],
                    });
                }
            }
            Ok(an)
        }
    }
}

fn damped_diagonal(h: f64, lambda: f64) -> f64 {
    h + lambda * h.max(DIAGONAL_FLOOR)
}

fn solve_dense_damped(h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let mut m = h.clone();
    for i in 0..m.nrows() {
        m[(i, i)] = damped_diagonal(h[(i, i)], lambda);
    }
    let chol = m.cholesky().ok_or(Error::SingularSystem)?;
    let x = chol.solve(&(-g));
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem)
    }
}

/// One damped step from dense Jacobians for `V = ‖B‖² + w‖A‖²`.
pub fn lm_step(
    ja: &DMatrix<f64>,
    jb: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    w: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    lm_step_weighted(ja, jb, a, b, 1.0, w, lambda)
}

fn lm_step_weighted(
    ja: &DMatrix<f64>,
    jb: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    wb: f64,
    wa: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidOptions(format!("lambda must be > 0, got {lambda}")));
    }
    let h = jb.tr_mul(jb) * wb + ja.tr_mul(ja) * wa;
    let g = jb.tr_mul(b) * wb + ja.tr_mul(a) * wa;
    solve_dense_damped(&h, &g, lambda)
}

/// Normal equations split into pose and point blocks.
#[derive(Debug, Clone)]
pub(crate) struct NormalEquations {
    hpp: DMatrix<f64>,
    hpx: Vec<DMatrix<f64>>,
    hxx: Vec<Matrix3<f64>>,
    gp: DVector<f64>,
    gx: Vec<Vector3>,
    freeze_structure: bool,
}

impl NormalEquations {
    fn zeros(num_cameras: usize, num_points: usize, freeze_structure: bool) -> Self {
        let np = 6 * (num_cameras - 1);
        Self {
            hpp: DMatrix::zeros(np, np),
            hpx: vec![DMatrix::zeros(np, 3); num_points],
            hxx: vec![Matrix3::zeros(); num_points],
            gp: DVector::zeros(np),
            gx: vec![Vector3::zeros(); num_points],
            freeze_structure,
        }
    }

    fn from_dense(h: &DMatrix<f64>, g: &DVector<f64>, num_cameras: usize, freeze_structure: bool) -> Self {
        let np = 6 * (num_cameras - 1);
        let points = (h.nrows() - np) / 3;
        let mut ne = Self::zeros(num_cameras, points, freeze_structure);
        ne.hpp.copy_from(&h.view((0, 0), (np, np)));
        ne.gp.copy_from(&g.rows(0, np));
        for i in 0..points {
            let o = np + 3 * i;
            ne.hpx[i].copy_from(&h.view((0, o), (np, 3)));
            ne.hxx[i] = h.fixed_view::<3, 3>(o, o).into_owned();
            ne.gx[i] = g.fixed_rows::<3>(o).into_owned();
        }
        ne
    }

    #[cfg(test)]
    fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let np = self.gp.len();
        let n = np + 3 * self.gx.len();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        h.view_mut((0, 0), (np, np)).copy_from(&self.hpp);
        g.rows_mut(0, np).copy_from(&self.gp);
        for i in 0..self.gx.len() {
            let o = np + 3 * i;
            h.view_mut((0, o), (np, 3)).copy_from(&self.hpx[i]);
            h.view_mut((o, 0), (3, np)).copy_from(&self.hpx[i].transpose());
            h.fixed_view_mut::<3, 3>(o, o).copy_from(&self.hxx[i]);
            g.fixed_rows_mut::<3>(o).copy_from(&self.gx[i]);
        }
        (h, g)
    }

    fn gradient(&self) -> DVector<f64> {
        let np = self.gp.len();
        let mut g = DVector::zeros(np + 3 * self.gx.len());
        g.rows_mut(0, np).copy_from(&self.gp);
        for (i, gx) in self.gx.iter().enumerate() {
            g.fixed_rows_mut::<3>(np + 3 * i).copy_from(gx);
        }
        g
    }

    /// Solves `(H + λ·diag H) Δ = −g` by eliminating the point blocks.
    fn solve(&self, lambda: f64) -> Result<DVector<f64>> {
        let np = self.gp.len();
        let mut out = DVector::zeros(np + 3 * self.gx.len());
        let mut s = self.hpp.clone();
        for i in 0..np {
            s[(i, i)] = damped_diagonal(self.hpp[(i, i)], lambda);
        }
        let mut rhs = -&self.gp;

        let mut point_factors = Vec::new();
        if !self.freeze_structure {
            point_factors.reserve(self.hxx.len());
            for (i, hxx) in self.hxx.iter().enumerate() {
                let mut c = *hxx;
                for k in 0..3 {
                    c[(k, k)] = damped_diagonal(hxx[(k, k)], lambda);
                }
                let chol = c.cholesky().ok_or(Error::SingularSystem)?;
                if np > 0 {
                    // Y = H_px C⁻¹
                    let y = chol.solve(&self.hpx[i].transpose()).transpose();
                    s -= &y * self.hpx[i].transpose();
                    rhs += &y * self.gx[i];
                }
                point_factors.push(chol);
            }
        }

        if np > 0 {
            let chol = s.cholesky().ok_or(Error::SingularSystem)?;
            out.rows_mut(0, np).copy_from(&chol.solve(&rhs));
        }
        if !self.freeze_structure {
            let dp = out.rows(0, np).into_owned();
            for (i, chol) in point_factors.iter().enumerate() {
                let r = -self.gx[i] - self.hpx[i].tr_mul(&dp);
                out.fixed_rows_mut::<3>(np + 3 * i).copy_from(&chol.solve(&r));
            }
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::SingularSystem)
        }
    }
}

/// Weighted least-squares problem the LM loop runs on.
struct Problem<'a> {
    d: &'a Dataset,
    icp_weight: f64,
    ba_weight: f64,
    freeze_structure: bool,
}

struct Evaluation {
    cost: f64,
    clamped: bool,
}

impl<'a> Problem<'a> {
    fn new(objective: Objective, s0: &ParameterBlock, d: &'a Dataset, opts: &SolverOptions) -> Result<Self> {
        let (icp, ba, freeze) = match objective {
            Objective::BaOnly => (0.0, 1.0, false),
            Objective::IcpOnly => (1.0, 0.0, true),
            Objective::Joint { w } => (1.0, w, false),
            Objective::Weighted { icp, ba } => (icp, ba, false),
            Objective::BaicpPlus { c } => {
                let (wi, wb) = baicp_weights(d, baicp_scale(s0, d)?, c)?;
                (wi, wb, false)
            }
        };
        if !(icp >= 0.0 && ba >= 0.0 && icp.is_finite() && ba.is_finite()) || icp + ba == 0.0 {
            return Err(Error::InvalidOptions(format!(
                "objective weights must be finite, non-negative and not both zero, got ({icp}, {ba})"
            )));
        }
        Ok(Self {
            d,
            icp_weight: icp * opts.pair_convention.multiplier(),
            ba_weight: ba,
            freeze_structure: freeze,
        })
    }

    fn uses_ba(&self) -> bool {
        self.ba_weight > 0.0
    }

    fn uses_icp(&self) -> bool {
        self.icp_weight > 0.0
    }

    fn evaluate(&self, s: &ParameterBlock) -> Evaluation {
        let d = self.d;
        let mut clamped = false;
        let mut ba = 0.0;
        if self.uses_ba() {
            for (l, cam) in d.cameras().iter().enumerate() {
                let pose = s.pose(l);
                for (o, x) in d.obs2d(l).iter().zip(&s.structure) {
                    let (r, _, _, c) = ba_block(&cam.intrinsics, &pose, x, &o.uv);
                    clamped |= c;
                    ba += r.norm_squared();
                }
            }
        }
        let icp = if self.uses_icp() {
            icp_residuals(&s.all_poses(), d).norm_squared()
        } else {
            0.0
        };
        Evaluation {
            cost: self.icp_weight * icp + self.ba_weight * ba,
            clamped,
        }
    }

    fn normal_equations(&self, s: &ParameterBlock) -> NormalEquations {
        let d = self.d;
        let mut ne = NormalEquations::zeros(d.num_cameras(), s.structure.len(), self.freeze_structure);
        let poses = s.all_poses();

        if self.uses_ba() {
            let w = self.ba_weight;
            for (l, cam) in d.cameras().iter().enumerate() {
                for (i, (o, x)) in d.obs2d(l).iter().zip(&s.structure).enumerate() {
                    let (r, dp, dx, _) = ba_block(&cam.intrinsics, &poses[l], x, &o.uv);
                    if !self.freeze_structure {
                        ne.hxx[i] += dx.tr_mul(&dx) * w;
                        ne.gx[i] += dx.tr_mul(&r) * w;
                    }
                    if l > 0 {
                        let o = 6 * (l - 1);
                        let mut hpp = ne.hpp.fixed_view_mut::<6, 6>(o, o);
                        hpp += dp.tr_mul(&dp) * w;
                        let mut gp = ne.gp.fixed_rows_mut::<6>(o);
                        gp += dp.tr_mul(&r) * w;
                        if !self.freeze_structure {
                            let mut hpx = ne.hpx[i].fixed_view_mut::<6, 3>(o, 0);
                            hpx += dp.tr_mul(&dx) * w;
                        }
                    }
                }
            }
        }

        if self.uses_icp() {
            let w = self.icp_weight;
            for (l, k) in d.pairs() {
                for (pl, pk) in d.obs3d(l).iter().zip(d.obs3d(k)) {
                    let (r, jl, jk) = icp_block(&poses[l], &poses[k], &pl.xyz, &pk.xyz);
                    let blocks: [(usize, &Matrix3x6<f64>); 2] = [(l, &jl), (k, &jk)];
                    for &(ca, ja) in &blocks {
                        if ca == 0 {
                            continue;
                        }
                        let oa = 6 * (ca - 1);
                        let mut gp = ne.gp.fixed_rows_mut::<6>(oa);
                        gp += ja.tr_mul(&r) * w;
                        for &(cb, jb) in &blocks {
                            if cb == 0 {
                                continue;
                            }
                            let ob = 6 * (cb - 1);
                            let mut hpp = ne.hpp.fixed_view_mut::<6, 6>(oa, ob);
                            hpp += ja.tr_mul(jb) * w;
                        }
                    }
                }
            }
        }
        ne
    }

    fn dense_normal_equations(&self, j: &Jacobians) -> NormalEquations {
        let mut h = j.jb.tr_mul(&j.jb) * self.icp_weight + j.ja.tr_mul(&j.ja) * self.ba_weight;
        let mut g = j.jb.tr_mul(&j.b) * self.icp_weight + j.ja.tr_mul(&j.a) * self.ba_weight;
        if self.freeze_structure {
            let np = 6 * (self.d.num_cameras() - 1);
            let n = h.nrows();
            h.view_mut((np, 0), (n - np, n)).fill(0.0);
            h.view_mut((0, np), (n, n - np)).fill(0.0);
            g.rows_mut(np, n - np).fill(0.0);
        }
        NormalEquations::from_dense(&h, &g, self.d.num_cameras(), self.freeze_structure)
    }
}

/// Gradient `α·J_BᵀB + β·J_AᵀA` of the objective (without the factor 2).
pub fn objective_gradient(objective: Objective, s: &ParameterBlock, d: &Dataset, opts: &SolverOptions) -> Result<DVector<f64>> {
    s.check_against(d)?;
    let problem = Problem::new(objective, s, d, opts)?;
    Ok(problem.normal_equations(s).gradient())
}

/// Runs Levenberg–Marquardt from `s0`.
pub fn solve(
    objective: Objective,
    s0: &ParameterBlock,
    d: &Dataset,
    opts: &SolverOptions,
) -> Result<(ParameterBlock, SolveReport)> {
    opts.validate()?;
    s0.check_against(d)?;
    let problem = Problem::new(objective, s0, d, opts)?;

    let start = problem.evaluate(s0);
    if !start.cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    if start.clamped {
        let depth = first_nonpositive_depth(s0, d).unwrap_or(0.0);
        return Err(Error::PointBehindCamera { depth });
    }

    let mut s = s0.clone();
    let mut cost = start.cost;
    let mut trace = vec![cost];
    let mut lambda = opts.lambda0;
    let mut iterations = 0;
    let mut reason = TerminationReason::MaxIter;
    let mut converged = false;

    'outer: while iterations < opts.max_iterations {
        if cost == 0.0 {
            reason = TerminationReason::CostTol;
            converged = true;
            break;
        }
        iterations += 1;
        let ne = match opts.jacobian_mode {
            JacobianMode::Analytic => problem.normal_equations(&s),
            mode => problem.dense_normal_equations(&jacobians(&s, d, mode)?),
        };

        for _ in 0..MAX_REJECTIONS {
            let delta = match ne.solve(lambda) {
                Ok(delta) => delta,
                Err(_) => {
                    lambda *= opts.lambda_up;
                    continue;
                }
            };
            if delta.amax() < opts.tol_step {
                reason = TerminationReason::StepTol;
                converged = true;
                break 'outer;
            }
            let candidate = retract(&s, &delta)?;
            let eval = problem.evaluate(&candidate);
            if !eval.clamped && eval.cost.is_finite() && eval.cost < cost {
                let rel = (cost - eval.cost) / cost;
                s = candidate;
                cost = eval.cost;
                trace.push(cost);
                lambda *= opts.lambda_down;
                if rel < opts.tol_cost_rel {
                    reason = TerminationReason::CostTol;
                    converged = true;
                    break 'outer;
                }
                continue 'outer;
            }
            lambda *= opts.lambda_up;
        }
        // No acceptable step even under heavy damping.
        if ne.solve(lambda).is_err() && trace.len() == 1 {
            return Err(Error::SingularSystem);
        }
        reason = TerminationReason::CostTol;
        converged = false;
        break;
    }

    let report = SolveReport {
        iterations,
        initial_cost: start.cost,
        final_cost: cost,
        cost_trace: trace,
        converged,
        termination_reason: reason,
        weights: (problem.icp_weight, problem.ba_weight),
    };
    Ok((s, report))
}

fn first_nonpositive_depth(s: &ParameterBlock, d: &Dataset) -> Option<f64> {
    (0..d.num_cameras()).find_map(|l| {
        let pose = s.pose(l);
        s.structure
            .iter()
            .map(|x| pose.inverse_transform(x).z)
            .find(|z| *z < MIN_DEPTH)
    })
}
