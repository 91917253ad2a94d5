//! Pose error metrics, boxplot statistics and the experiment runner.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::autoweight::{calibrate_auto, AutoWeightOptions};
use crate::costs::{init_structure, weight_from_variances, NoiseModel, ParameterBlock};
use crate::error::{Error, Result};
use crate::geometry::{rotation_geodesic_angle, Pose};
use crate::init::initialize_all;
use crate::scene::{realization_rng, simulate_with_rng, Dataset, SceneConfig};
use crate::solver::{solve, Objective, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// Radians, in `[0, π]`.
    pub rotation_error: f64,
    pub translation_error_rel: f64,
}

pub fn pose_error(estimate: &Pose, gt: &Pose) -> Result<PoseError> {
    let norm = gt.translation.norm();
    if norm == 0.0 {
        return Err(Error::GaugeCamera(1));
    }
    Ok(PoseError {
        rotation_error: rotation_geodesic_angle(&estimate.rotation, &gt.rotation),
        translation_error_rel: (estimate.translation - gt.translation).norm() / norm,
    })
}

/// Componentwise mean; `None` for an empty slice.
pub fn mean_pose_error(errors: &[PoseError]) -> Option<PoseError> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    Some(PoseError {
        rotation_error: errors.iter().map(|e| e.rotation_error).sum::<f64>() / n,
        translation_error_rel: errors.iter().map(|e| e.translation_error_rel).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotStats {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of sorted data by linear interpolation between order statistics
/// at position `p·(n − 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Boxplot statistics of the finite samples; `None` if there are none.
/// Whiskers reach the most extreme samples within 1.5·IQR of the quartiles;
/// everything beyond is an outlier (in ascending order).
pub fn boxplot_stats(samples: &[f64]) -> Option<BoxplotStats> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let median = quantile_sorted(&v, 0.5);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence);
    let whisker_low = inside.clone().fold(f64::INFINITY, f64::min);
    let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max);
    let outliers = v.iter().copied().filter(|x| *x < lo_fence || *x > hi_fence).collect();
    Some(BoxplotStats {
        count: v.len(),
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Init,
    Ba,
    Icp,
    JointKnownW,
    JointAuto,
    BaicpPlus(f64),
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        Some(match s {
            "init" => Method::Init,
            "ba" => Method::Ba,
            "icp" => Method::Icp,
            "joint_known_w" => Method::JointKnownW,
            "joint_auto" => Method::JointAuto,
            _ => {
                let c = s.strip_prefix("baicp_plus(")?.strip_suffix(')')?.parse().ok()?;
                Method::BaicpPlus(c)
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Init => f.write_str("init"),
            Method::Ba => f.write_str("ba"),
            Method::Icp => f.write_str("icp"),
            Method::JointKnownW => f.write_str("joint_known_w"),
            Method::JointAuto => f.write_str("joint_auto"),
            Method::BaicpPlus(c) => write!(f, "baicp_plus({c})"),
        }
    }
}

/// Result of running one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    /// Estimated poses of all cameras, camera 1 first.
    pub poses: Vec<Pose>,
    pub structure: Option<Vec<crate::geometry::Vector3>>,
    pub final_cost: Option<f64>,
    /// LM iterations, summed over outer iterations for `joint_auto`.
    pub iterations: Option<usize>,
    pub outer_iterations: Option<usize>,
    pub w_used: Option<f64>,
    pub sigma2d_sq_est: Option<f64>,
    pub sigma3d_sq_est: Option<f64>,
    pub converged: bool,
    /// Whether an inner solve stopped at the iteration limit.
    pub hit_max_iterations: bool,
    pub cost_traces: Vec<Vec<f64>>,
}

impl MethodOutcome {
    fn from_init(poses: Vec<Pose>) -> Self {
        Self {
            poses,
            structure: None,
            final_cost: None,
            iterations: None,
            outer_iterations: None,
            w_used: None,
            sigma2d_sq_est: None,
            sigma3d_sq_est: None,
            converged: true,
            hit_max_iterations: false,
            cost_traces: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MethodSettings {
    pub solver: SolverOptions,
    pub autoweight: AutoWeightOptions,
    /// Weight for [`Method::JointKnownW`].
    pub known_w: Option<f64>,
}

/// Refines `s0` (built from `init`) with `method`.
pub fn run_method(
    method: Method,
    d: &Dataset,
    init: &[Pose],
    s0: &ParameterBlock,
    settings: &MethodSettings,
) -> Result<MethodOutcome> {
    use crate::solver::TerminationReason::MaxIter;
    let objective = match method {
        Method::Init => return Ok(MethodOutcome::from_init(init.to_vec())),
        Method::JointAuto => {
            let (s, w, report) = calibrate_auto(s0, d, &settings.autoweight, &settings.solver)?;
            let last = report.inner_reports.last().expect("at least one outer iteration");
            return Ok(MethodOutcome {
                poses: s.all_poses(),
                final_cost: Some(last.final_cost),
                iterations: Some(report.inner_reports.iter().map(|r| r.iterations).sum()),
                outer_iterations: Some(report.outer_iterations),
                w_used: Some(w),
                sigma2d_sq_est: report.sigma2d_sq_trace.last().copied(),
                sigma3d_sq_est: report.sigma3d_sq_trace.last().copied(),
                converged: report.converged && last.converged,
                hit_max_iterations: report.inner_reports.iter().any(|r| r.termination_reason == MaxIter),
                cost_traces: report.inner_reports.iter().map(|r| r.cost_trace.clone()).collect(),
                structure: Some(s.structure),
            });
        }
        Method::Ba => Objective::BaOnly,
        Method::Icp => Objective::IcpOnly,
        Method::JointKnownW => Objective::Joint {
            w: settings
                .known_w
                .ok_or_else(|| Error::InvalidConfig("joint_known_w needs a weight".into()))?,
        },
        Method::BaicpPlus(c) => Objective::BaicpPlus { c },
    };
    let (s, report) = solve(objective, s0, d, &settings.solver)?;
    let w_used = match objective {
        Objective::Joint { w } => Some(w),
        _ => None,
    };
    Ok(MethodOutcome {
        poses: s.all_poses(),
        structure: Some(s.structure),
        final_cost: Some(report.final_cost),
        iterations: Some(report.iterations),
        outer_iterations: None,
        w_used,
        sigma2d_sq_est: None,
        sigma3d_sq_est: None,
        converged: report.converged,
        hit_max_iterations: report.termination_reason == MaxIter,
        cost_traces: vec![report.cost_trace],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweeps {
    pub sigma2d: Vec<f64>,
    pub sigma3d: Vec<f64>,
    pub num_2d_features: Vec<usize>,
    pub num_3d_features: Vec<usize>,
}

impl Sweeps {
    /// A single sweep point taken from `cfg`.
    pub fn fixed(cfg: &SceneConfig) -> Self {
        Self {
            sigma2d: vec![cfg.sigma_2d],
            sigma3d: vec![cfg.sigma_3d],
            num_2d_features: vec![cfg.num_2d_features],
            num_3d_features: vec![cfg.num_3d_features],
        }
    }

    /// Cartesian product, σ₂D outermost and J innermost.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &sigma2d in &self.sigma2d {
            for &sigma3d in &self.sigma3d {
                for &h in &self.num_2d_features {
                    for &j in &self.num_3d_features {
                        out.push(SweepPoint { sigma2d, sigma3d, h, j });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub sigma2d: f64,
    pub sigma3d: f64,
    pub h: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub sweeps: Sweeps,
    pub realizations: usize,
    pub methods: Vec<Method>,
    pub base_seed: u64,
    pub solver: SolverOptions,
    pub autoweight: AutoWeightOptions,
}

impl ExperimentConfig {
    pub fn new(scene: SceneConfig, methods: Vec<Method>, realizations: usize) -> Self {
        Self {
            sweeps: Sweeps::fixed(&scene),
            base_seed: scene.seed,
            scene,
            realizations,
            methods,
            solver: SolverOptions::default(),
            autoweight: AutoWeightOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sweeps;
        if s.sigma2d.is_empty() || s.sigma3d.is_empty() || s.num_2d_features.is_empty() || s.num_3d_features.is_empty() {
            return Err(Error::InvalidConfig("sweep lists must be non-empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidConfig("realizations must be >= 1".into()));
        }
        for p in s.points() {
            self.scene_at(&p).validate()?;
        }
        self.solver.validate()?;
        self.autoweight.validate()
    }

    pub fn scene_at(&self, p: &SweepPoint) -> SceneConfig {
        let mut cfg = self.scene.clone();
        cfg.sigma_2d = p.sigma2d;
        cfg.sigma_3d = p.sigma3d;
        cfg.num_2d_features = p.h;
        cfg.num_3d_features = p.j;
        cfg.seed = self.base_seed;
        cfg
    }

    pub fn num_runs(&self) -> usize {
        self.sweeps.points().len() * self.realizations * self.methods.len()
    }
}

/// One (sweep point, realization, method) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub sweep: SweepPoint,
    pub num_cameras: usize,
    pub realization: usize,
    pub method: Method,
    /// `(camera id, error)` for cameras `2..=N`; `None` if the run failed.
    pub camera_errors: Vec<(u32, Option<PoseError>)>,
    pub outcome: Option<MethodOutcome>,
    pub error: Option<Error>,
}

impl RunRecord {
    pub fn mean_error(&self) -> Option<PoseError> {
        let errors: Option<Vec<PoseError>> = self.camera_errors.iter().map(|(_, e)| *e).collect();
        mean_pose_error(&errors?)
    }
}

fn run_realization(cfg: &ExperimentConfig, point: &SweepPoint, realization: usize) -> Vec<RunRecord> {
    let scene = cfg.scene_at(point);
    let camera_ids: Vec<u32> = scene.cameras.iter().skip(1).map(|c| c.id).collect();
    let failed = |method: Method, e: Error| RunRecord {
        sweep: *point,
        num_cameras: scene.cameras.len(),
        realization,
        method,
        camera_errors: camera_ids.iter().map(|id| (*id, None)).collect(),
        outcome: None,
        error: Some(e),
    };

    let prepared = (|| -> Result<_> {
        let d = simulate_with_rng(&scene, &mut realization_rng(cfg.base_seed, realization as u64))?;
        let init = initialize_all(&d)?;
        let s0 = ParameterBlock::from_all_poses(&init, init_structure(&d, &init)?);
        Ok((d, init, s0))
    })();
    let (d, init, s0) = match prepared {
        Ok(p) => p,
        Err(e) => return cfg.methods.iter().map(|m| failed(*m, e.clone())).collect(),
    };
    let gt = d.gt_poses().expect("simulated datasets carry ground truth");
    let known_w = NoiseModel::from_std(point.sigma2d, point.sigma3d)
        .map(|n| weight_from_variances(&n))
        .ok();
    let settings = MethodSettings {
        solver: cfg.solver,
        autoweight: cfg.autoweight,
        known_w,
    };

    cfg.methods
        .iter()
        .map(|&method| match run_method(method, &d, &init, &s0, &settings) {
            Ok(outcome) => {
                let camera_errors = camera_ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (*id, pose_error(&outcome.poses[i + 1], &gt[i + 1]).ok()))
                    .collect();
                RunRecord {
                    sweep: *point,
                    num_cameras: d.num_cameras(),
                    realization,
                    method,
                    camera_errors,
                    outcome: Some(outcome),
                    error: None,
                }
            }
            Err(e) => failed(method, e),
        })
        .collect()
}

/// Runs every (sweep point, realization, method) combination on a pool of
/// `jobs` threads. Records come back ordered by sweep point, realization and
/// method regardless of `jobs`. Realization `r` uses random stream `r` of
/// `base_seed` at every sweep point.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    run_experiment_with_progress(cfg, jobs, &|_, _| {})
}

/// As [`run_experiment`], calling `progress(done, total)` after each
/// (sweep point, realization) work item.
pub fn run_experiment_with_progress(
    cfg: &ExperimentConfig,
    jobs: usize,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let items: Vec<(SweepPoint, usize)> = cfg
        .sweeps
        .points()
        .into_iter()
        .flat_map(|p| (0..cfg.realizations).map(move |r| (p, r)))
        .collect();
    let total = items.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidOptions(e.to_string()))?;
    let nested: Vec<Vec<RunRecord>> = pool.install(|| {
        items
            .par_iter()
            .map(|(p, r)| {
                let out = run_realization(cfg, p, *r);
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                progress(n, total);
                out
            })
            .collect()
    });
    Ok(nested.into_iter().flatten().collect())
}

/// One line of the results table: a run and a non-gauge camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_sigma2d: f64,
    pub sweep_sigma3d: f64,
    pub h: usize,
    pub j: usize,
    pub num_cameras: usize,
    pub realization: usize,
    pub method: String,
    pub camera_id: u32,
    /// NaN for a failed run.
    pub rotation_error_rad: f64,
    pub translation_error_rel: f64,
    pub final_cost: Option<f64>,
    pub iterations: Option<usize>,
    pub w_used: Option<f64>,
    pub sigma2d_sq_est: Option<f64>,
    pub sigma3d_sq_est: Option<f64>,
    pub converged: bool,
}

pub fn result_rows(records: &[RunRecord]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for r in records {
        let o = r.outcome.as_ref();
        for (camera_id, err) in &r.camera_errors {
            rows.push(ResultRow {
                sweep_sigma2d: r.sweep.sigma2d,
                sweep_sigma3d: r.sweep.sigma3d,
                h: r.sweep.h,
                j: r.sweep.j,
                num_cameras: r.num_cameras,
                realization: r.realization,
                method: r.method.to_string(),
                camera_id: *camera_id,
                rotation_error_rad: err.map_or(f64::NAN, |e| e.rotation_error),
                translation_error_rel: err.map_or(f64::NAN, |e| e.translation_error_rel),
                final_cost: o.and_then(|o| o.final_cost),
                iterations: o.and_then(|o| o.iterations),
                w_used: o.and_then(|o| o.w_used),
                sigma2d_sq_est: o.and_then(|o| o.sigma2d_sq_est),
                sigma3d_sq_est: o.and_then(|o| o.sigma3d_sq_est),
                converged: o.is_some_and(|o| o.converged) && err.is_some(),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Rotation,
    Translation,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Rotation, Metric::Translation];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rotation => "rotation_error_rad",
            Metric::Translation => "translation_error_rel",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn of(self, row: &ResultRow) -> f64 {
        match self {
            Metric::Rotation => row.rotation_error_rad,
            Metric::Translation => row.translation_error_rel,
        }
    }
}

/// Boxplot statistics for one (sweep point, method, metric) group, either
/// over per-run camera means (`camera == None`) or for a single camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_sigma2d: f64,
    pub sweep_sigma3d: f64,
    pub h: usize,
    pub j: usize,
    pub num_cameras: usize,
    pub method: String,
    pub metric: Metric,
    pub camera: Option<u32>,
    /// `None` when the group has no finite samples.
    pub stats: Option<BoxplotStats>,
}

/// Groups rows by sweep point and method (in order of first appearance) and
/// summarizes both metrics: camera-mean first, then each camera by id.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type GroupKey = (u64, u64, usize, usize, usize, String);
    let key = |r: &ResultRow| -> GroupKey {
        (r.sweep_sigma2d.to_bits(), r.sweep_sigma3d.to_bits(), r.h, r.j, r.num_cameras, r.method.clone())
    };
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let k = key(r);
        groups
            .entry(k.clone())
            .or_insert_with(|| {
                order.push(k);
                Vec::new()
            })
            .push(r);
    }

    let mut out = Vec::new();
    for k in order {
        let members = &groups[&k];
        let first = members[0];
        let mut per_camera: BTreeMap<u32, Vec<&ResultRow>> = BTreeMap::new();
        let mut per_run: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
        for r in members {
            per_camera.entry(r.camera_id).or_default().push(r);
            per_run.entry(r.realization).or_default().push(r);
        }
        for metric in Metric::ALL {
            let row = |camera, stats| SummaryRow {
                sweep_sigma2d: first.sweep_sigma2d,
                sweep_sigma3d: first.sweep_sigma3d,
                h: first.h,
                j: first.j,
                num_cameras: first.num_cameras,
                method: first.method.clone(),
                metric,
                camera,
                stats,
            };
            let means: Vec<f64> = per_run
                .values()
                .map(|rs| rs.iter().map(|r| metric.of(r)).sum::<f64>() / rs.len() as f64)
                .collect();
            out.push(row(None, boxplot_stats(&means)));
            for (id, rs) in &per_camera {
                let samples: Vec<f64> = rs.iter().map(|r| metric.of(r)).collect();
                out.push(row(Some(*id), boxplot_stats(&samples)));
            }
        }
    }
    out
}
