//! File formats: dataset and configuration JSON, results and summary CSV.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoweight::{AutoWeightOptions, EstimatorMode};
use crate::costs::PairConvention;
use crate::error::{Error, Result};
use crate::eval::{BoxplotStats, ExperimentConfig, Method, Metric, ResultRow, SummaryRow, Sweeps};
use crate::geometry::{Intrinsics, Pose, Vector2, Vector3};
use crate::scene::{Camera, CameraSpec, Dataset, NoiseLevels, Obs2d, Obs3d, Preset, Region, SceneConfig};
use crate::solver::{JacobianMode, SolverOptions};

pub const DATASET_VERSION: &str = "1";

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn from_json<'a, T: Deserialize<'a>>(text: &'a str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("{what}: {e}")))
}

/// Axis-angle (radians) and translation (mm) of a camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub axis_angle: [f64; 3],
    pub t: [f64; 3],
}

impl From<&Pose> for PoseFile {
    fn from(p: &Pose) -> Self {
        let (aa, t) = p.to_axis_angle();
        Self {
            axis_angle: aa.into(),
            t: t.into(),
        }
    }
}

impl From<&PoseFile> for Pose {
    fn from(p: &PoseFile) -> Self {
        Pose::from_axis_angle(Vector3::from(p.axis_angle), Vector3::from(p.t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub id: u32,
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<PoseFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obs2dFile {
    pub camera: u32,
    pub feature: u32,
    pub uv: [f64; 2],
    /// Depth reading at the feature pixel, camera frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xyz: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obs3dFile {
    pub camera: u32,
    pub feature: u32,
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub feature: u32,
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub version: String,
    pub cameras: Vec<CameraFile>,
    pub obs2d: Vec<Obs2dFile>,
    pub obs3d: Vec<Obs3dFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_points: Option<Vec<PointFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseLevels>,
}

impl DatasetFile {
    pub fn from_dataset(d: &Dataset) -> Self {
        let cameras = d
            .cameras()
            .iter()
            .map(|c| CameraFile {
                id: c.id,
                intrinsics: c.intrinsics,
                gt_pose: c.gt_pose.as_ref().map(PoseFile::from),
            })
            .collect();
        let mut obs2d = Vec::new();
        let mut obs3d = Vec::new();
        for (l, c) in d.cameras().iter().enumerate() {
            obs2d.extend(d.obs2d(l).iter().map(|o| Obs2dFile {
                camera: c.id,
                feature: o.feature,
                uv: o.uv.into(),
                xyz: o.xyz.map(Into::into),
            }));
            obs3d.extend(d.obs3d(l).iter().map(|o| Obs3dFile {
                camera: c.id,
                feature: o.feature,
                xyz: o.xyz.into(),
            }));
        }
        let true_points = d.true_points().map(|tp| {
            tp.iter()
                .map(|(feature, x)| PointFile {
                    feature: *feature,
                    xyz: (*x).into(),
                })
                .collect()
        });
        Self {
            version: DATASET_VERSION.to_string(),
            cameras,
            obs2d,
            obs3d,
            true_points,
            noise: d.noise(),
        }
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        if self.version != DATASET_VERSION {
            return Err(Error::InvalidDataset(format!(
                "unsupported version {:?}, expected {DATASET_VERSION:?}",
                self.version
            )));
        }
        let n = self.cameras.len();
        let index = |camera: u32| -> Result<usize> {
            if camera >= 1 && camera as usize <= n {
                Ok(camera as usize - 1)
            } else {
                Err(Error::InvalidDataset(format!("observation refers to unknown camera {camera}")))
            }
        };
        let cameras = self
            .cameras
            .iter()
            .map(|c| Camera {
                id: c.id,
                intrinsics: c.intrinsics,
                gt_pose: c.gt_pose.as_ref().map(Pose::from),
            })
            .collect();
        let mut obs2d = vec![Vec::new(); n];
        for o in &self.obs2d {
            obs2d[index(o.camera)?].push(Obs2d {
                feature: o.feature,
                uv: Vector2::from(o.uv),
                xyz: o.xyz.map(Vector3::from),
            });
        }
        let mut obs3d = vec![Vec::new(); n];
        for o in &self.obs3d {
            obs3d[index(o.camera)?].push(Obs3d {
                feature: o.feature,
                xyz: Vector3::from(o.xyz),
            });
        }
        let true_points = self
            .true_points
            .as_ref()
            .map(|tp| tp.iter().map(|p| (p.feature, Vector3::from(p.xyz))).collect());
        Dataset::new(cameras, obs2d, obs3d, true_points, self.noise)
    }

    pub fn to_json(&self) -> String {
        to_pretty_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, "dataset")
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    DatasetFile::from_json(&read_text(path)?)?.to_dataset()
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_text(path, &DatasetFile::from_dataset(d).to_json())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpecFile {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub pose: PoseFile,
}

/// Scene configuration: a preset with optional overrides, or a fully
/// explicit rig (`cameras` and `region`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cameras: Option<Vec<CameraSpecFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default, alias = "H", skip_serializing_if = "Option::is_none")]
    pub num_2d_features: Option<usize>,
    #[serde(default, alias = "J", skip_serializing_if = "Option::is_none")]
    pub num_3d_features: Option<usize>,
    #[serde(default, alias = "sigma2d", skip_serializing_if = "Option::is_none")]
    pub sigma_2d: Option<f64>,
    #[serde(default, alias = "sigma3d", skip_serializing_if = "Option::is_none")]
    pub sigma_3d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SceneConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, "scene config")
    }

    /// Builds and validates the configuration. Scalars not given default to
    /// the preset's (or the two-camera preset's) values.
    pub fn resolve(&self) -> Result<SceneConfig> {
        let mut cfg = match (self.preset, &self.cameras) {
            (Some(p), _) => p.config(),
            (None, Some(_)) => {
                let mut base = Preset::TwoCam.config();
                base.region = self
                    .region
                    .ok_or_else(|| Error::InvalidConfig("field `region` is required without a preset".into()))?;
                base
            }
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "either field `preset` or field `cameras` is required".into(),
                ))
            }
        };
        if let Some(cams) = &self.cameras {
            cfg.cameras = cams
                .iter()
                .map(|c| CameraSpec {
                    id: c.id,
                    intrinsics: c.intrinsics,
                    gt_pose: Pose::from(&c.pose),
                })
                .collect();
        }
        if let Some(r) = self.region {
            cfg.region = r;
        }
        if let Some(h) = self.num_2d_features {
            cfg.num_2d_features = h;
        }
        if let Some(j) = self.num_3d_features {
            cfg.num_3d_features = j;
        }
        if let Some(s) = self.sigma_2d {
            cfg.sigma_2d = s;
        }
        if let Some(s) = self.sigma_3d {
            cfg.sigma_3d = s;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma3d: Option<Vec<f64>>,
    #[serde(default, alias = "H", skip_serializing_if = "Option::is_none")]
    pub num_2d_features: Option<Vec<usize>>,
    #[serde(default, alias = "J", skip_serializing_if = "Option::is_none")]
    pub num_3d_features: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptionsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_down: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_cost_rel: Option<f64>,
    /// `analytic`, `numeric` or `check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordered_pairs: Option<bool>,
}

impl SolverOptionsFile {
    pub fn resolve(&self) -> Result<SolverOptions> {
        let mut o = SolverOptions::default();
        if let Some(v) = self.max_iterations {
            o.max_iterations = v;
        }
        if let Some(v) = self.lambda0 {
            o.lambda0 = v;
        }
        if let Some(v) = self.lambda_up {
            o.lambda_up = v;
        }
        if let Some(v) = self.lambda_down {
            o.lambda_down = v;
        }
        if let Some(v) = self.tol_step {
            o.tol_step = v;
        }
        if let Some(v) = self.tol_cost_rel {
            o.tol_cost_rel = v;
        }
        if let Some(m) = &self.jacobian_mode {
            o.jacobian_mode = match m.as_str() {
                "analytic" => JacobianMode::Analytic,
                "numeric" => JacobianMode::Numeric,
                "check" => JacobianMode::Check,
                other => return Err(Error::InvalidOptions(format!("unknown jacobian_mode {other:?}"))),
            };
        }
        if self.ordered_pairs == Some(true) {
            o.pair_convention = PairConvention::Ordered;
        }
        o.validate()?;
        Ok(o)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoWeightOptionsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_rel_tol: Option<f64>,
    /// `consistent` or `paper_literal`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_floor: Option<f64>,
}

impl AutoWeightOptionsFile {
    pub fn resolve(&self) -> Result<AutoWeightOptions> {
        let mut o = AutoWeightOptions::default();
        if let Some(v) = self.max_outer_iterations {
            o.max_outer_iterations = v;
        }
        if let Some(v) = self.w_rel_tol {
            o.w_rel_tol = v;
        }
        if let Some(m) = &self.estimator_mode {
            o.estimator_mode = EstimatorMode::parse(m)
                .ok_or_else(|| Error::InvalidOptions(format!("unknown estimator_mode {m:?}")))?;
        }
        if let Some(v) = self.variance_floor {
            o.variance_floor = v;
        }
        o.validate()?;
        Ok(o)
    }
}

fn default_realizations() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigFile {
    pub scene: SceneConfigFile,
    #[serde(default)]
    pub sweeps: SweepsFile,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    /// Method names as in the results table, e.g. `joint_known_w` or `baicp_plus(0.5)`.
    pub methods: Vec<String>,
    /// Defaults to the scene seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(default)]
    pub solver: SolverOptionsFile,
    #[serde(default)]
    pub autoweight: AutoWeightOptionsFile,
}

impl ExperimentConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, "experiment config")
    }

    /// Sweep lists that are absent take the scene's single value.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let scene = self.scene.resolve()?;
        let fixed = Sweeps::fixed(&scene);
        let s = &self.sweeps;
        let sweeps = Sweeps {
            sigma2d: s.sigma2d.clone().unwrap_or(fixed.sigma2d),
            sigma3d: s.sigma3d.clone().unwrap_or(fixed.sigma3d),
            num_2d_features: s.num_2d_features.clone().unwrap_or(fixed.num_2d_features),
            num_3d_features: s.num_3d_features.clone().unwrap_or(fixed.num_3d_features),
        };
        let methods = self
            .methods
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| Error::InvalidConfig(format!("unknown method {m:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let cfg = ExperimentConfig {
            base_seed: self.base_seed.unwrap_or(scene.seed),
            scene,
            sweeps,
            realizations: self.realizations,
            methods,
            solver: self.solver.resolve()?,
            autoweight: self.autoweight.resolve()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPoseFile {
    pub id: u32,
    pub pose: PoseFile,
}

/// Estimated poses of all cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosesFile {
    pub cameras: Vec<CameraPoseFile>,
}

impl PosesFile {
    pub fn new(ids: impl IntoIterator<Item = u32>, poses: &[Pose]) -> Self {
        Self {
            cameras: ids
                .into_iter()
                .zip(poses)
                .map(|(id, p)| CameraPoseFile {
                    id,
                    pose: PoseFile::from(p),
                })
                .collect(),
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.cameras.iter().map(|c| Pose::from(&c.pose)).collect()
    }

    pub fn to_json(&self) -> String {
        to_pretty_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json(text, "poses")
    }
}

/// Column names of the results table, in order.
pub const RESULTS_HEADER: [&str; 16] = [
    "sweep_sigma2d",
    "sweep_sigma3d",
    "H",
    "J",
    "num_cameras",
    "realization",
    "method",
    "camera_id",
    "rotation_error_rad",
    "translation_error_rel",
    "final_cost",
    "iterations",
    "w_used",
    "sigma2d_sq_est",
    "sigma3d_sq_est",
    "converged",
];

/// 17 significant digits, enough to reproduce any `f64` exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt_f64(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io {
            path: "<stream>".into(),
            message: e.to_string(),
        },
        _ => Error::Format(e.to_string()),
    }
}

pub fn write_results_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            format_f64(r.sweep_sigma2d),
            format_f64(r.sweep_sigma3d),
            r.h.to_string(),
            r.j.to_string(),
            r.num_cameras.to_string(),
            r.realization.to_string(),
            r.method.clone(),
            r.camera_id.to_string(),
            format_f64(r.rotation_error_rad),
            format_f64(r.translation_error_rel),
            format_opt_f64(r.final_cost),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            format_opt_f64(r.w_used),
            format_opt_f64(r.sigma2d_sq_est),
            format_opt_f64(r.sigma3d_sq_est),
            r.converged.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<stream>".into(),
        message: e.to_string(),
    })
}

struct Fields<'a> {
    record: &'a csv::StringRecord,
    row: usize,
    header: &'a [&'a str],
}

impl Fields<'_> {
    fn err(&self, col: usize, msg: &str) -> Error {
        Error::Format(format!("row {}: column {}: {msg}", self.row, self.header[col]))
    }

    fn str(&self, col: usize) -> &str {
        &self.record[col]
    }

    fn parse<T: std::str::FromStr>(&self, col: usize) -> Result<T> {
        self.str(col)
            .parse()
            .map_err(|_| self.err(col, &format!("cannot parse {:?}", self.str(col))))
    }

    fn opt<T: std::str::FromStr>(&self, col: usize) -> Result<Option<T>> {
        if self.str(col).is_empty() {
            Ok(None)
        } else {
            self.parse(col).map(Some)
        }
    }
}

fn read_records<R: Read>(input: R, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found = rdr.headers().map_err(csv_error)?.clone();
    if !found.iter().eq(header.iter().copied()) {
        return Err(Error::Format(format!(
            "row 1: header must be {:?}, found {:?}",
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("row {}: {e}", i + 2)))?;
        out.push((i + 2, rec));
    }
    Ok(out)
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    read_records(input, &RESULTS_HEADER)?
        .iter()
        .map(|(row, record)| {
            let f = Fields {
                record,
                row: *row,
                header: &RESULTS_HEADER,
            };
            Ok(ResultRow {
                sweep_sigma2d: f.parse(0)?,
                sweep_sigma3d: f.parse(1)?,
                h: f.parse(2)?,
                j: f.parse(3)?,
                num_cameras: f.parse(4)?,
                realization: f.parse(5)?,
                method: f.str(6).to_string(),
                camera_id: f.parse(7)?,
                rotation_error_rad: f.parse(8)?,
                translation_error_rel: f.parse(9)?,
                final_cost: f.opt(10)?,
                iterations: f.opt(11)?,
                w_used: f.opt(12)?,
                sigma2d_sq_est: f.opt(13)?,
                sigma3d_sq_est: f.opt(14)?,
                converged: f.parse(15)?,
            })
        })
        .collect()
}

/// Column names of the summary table, in order.
pub const SUMMARY_HEADER: [&str; 15] = [
    "sweep_sigma2d",
    "sweep_sigma3d",
    "H",
    "J",
    "num_cameras",
    "method",
    "metric",
    "camera",
    "count",
    "median",
    "q1",
    "q3",
    "whisker_low",
    "whisker_high",
    "outliers",
];

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_error)?;
    for r in rows {
        let mut rec = vec![
            format_f64(r.sweep_sigma2d),
            format_f64(r.sweep_sigma3d),
            r.h.to_string(),
            r.j.to_string(),
            r.num_cameras.to_string(),
            r.method.clone(),
            r.metric.name().to_string(),
            r.camera.map_or_else(|| "mean".to_string(), |c| c.to_string()),
        ];
        match &r.stats {
            Some(s) => rec.extend([
                s.count.to_string(),
                format_f64(s.median),
                format_f64(s.q1),
                format_f64(s.q3),
                format_f64(s.whisker_low),
                format_f64(s.whisker_high),
                s.outliers.iter().map(|x| format_f64(*x)).collect::<Vec<_>>().join(";"),
            ]),
            None => rec.extend(["0".to_string()].into_iter().chain(std::iter::repeat_n(String::new(), 6))),
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<stream>".into(),
        message: e.to_string(),
    })
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    read_records(input, &SUMMARY_HEADER)?
        .iter()
        .map(|(row, record)| {
            let f = Fields {
                record,
                row: *row,
                header: &SUMMARY_HEADER,
            };
            let metric = Metric::parse(f.str(6)).ok_or_else(|| f.err(6, "unknown metric"))?;
            let camera = match f.str(7) {
                "mean" => None,
                _ => Some(f.parse(7)?),
            };
            let count: usize = f.parse(8)?;
            let stats = if count == 0 {
                None
            } else {
                let outliers = if f.str(14).is_empty() {
                    Vec::new()
                } else {
                    f.str(14)
                        .split(';')
                        .map(|x| x.parse().map_err(|_| f.err(14, &format!("cannot parse {x:?}"))))
                        .collect::<Result<Vec<f64>>>()?
                };
                Some(BoxplotStats {
                    count,
                    median: f.parse(9)?,
                    q1: f.parse(10)?,
                    q3: f.parse(11)?,
                    whisker_low: f.parse(12)?,
                    whisker_high: f.parse(13)?,
                    outliers,
                })
            };
            Ok(SummaryRow {
                sweep_sigma2d: f.parse(0)?,
                sweep_sigma3d: f.parse(1)?,
                h: f.parse(2)?,
                j: f.parse(3)?,
                num_cameras: f.parse(4)?,
                method: f.str(5).to_string(),
                metric,
                camera,
                stats,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRowFile {
    pub sweep_sigma2d: f64,
    pub sweep_sigma3d: f64,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub num_cameras: usize,
    pub method: String,
    pub metric: String,
    /// `"mean"` or a camera id.
    pub camera: String,
    pub count: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub whisker_low: Option<f64>,
    pub whisker_high: Option<f64>,
    pub outliers: Vec<f64>,
}

impl From<&SummaryRow> for SummaryRowFile {
    fn from(r: &SummaryRow) -> Self {
        let s = r.stats.as_ref();
        Self {
            sweep_sigma2d: r.sweep_sigma2d,
            sweep_sigma3d: r.sweep_sigma3d,
            h: r.h,
            j: r.j,
            num_cameras: r.num_cameras,
            method: r.method.clone(),
            metric: r.metric.name().to_string(),
            camera: r.camera.map_or_else(|| "mean".to_string(), |c| c.to_string()),
            count: s.map_or(0, |s| s.count),
            median: s.map(|s| s.median),
            q1: s.map(|s| s.q1),
            q3: s.map(|s| s.q3),
            whisker_low: s.map(|s| s.whisker_low),
            whisker_high: s.map(|s| s.whisker_high),
            outliers: s.map(|s| s.outliers.clone()).unwrap_or_default(),
        }
    }
}

pub fn summary_to_json(rows: &[SummaryRow]) -> String {
    to_pretty_json(&rows.iter().map(SummaryRowFile::from).collect::<Vec<_>>())
}

pub fn summary_from_json(text: &str) -> Result<Vec<SummaryRowFile>> {
    from_json(text, "summary")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{result_rows, run_experiment, summarize};
    use crate::scene::simulate;

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        for preset in [Preset::TwoCam, Preset::FourCam] {
            let mut cfg = preset.config();
            cfg.num_2d_features = 12;
            cfg.num_3d_features = 7;
            let d = simulate(&cfg).unwrap();
            let first = DatasetFile::from_dataset(&d).to_json();
            let parsed = DatasetFile::from_json(&first).unwrap();
            assert_eq!(parsed.to_json(), first);
            let d2 = parsed.to_dataset().unwrap();
            assert_eq!(d2.obs2d(1), d.obs2d(1));
            assert_eq!(d2.obs3d(0), d.obs3d(0));
            assert_eq!(d2.true_points(), d.true_points());
            assert_eq!(d2.num_cameras(), d.num_cameras());
            assert_eq!(DatasetFile::from_dataset(&d2).obs2d, parsed.obs2d);
        }
    }

    #[test]
    fn dataset_rejections() {
        let d = simulate(&Preset::TwoCam.config()).unwrap();
        let mut f = DatasetFile::from_dataset(&d);
        f.version = "2".into();
        assert!(matches!(f.to_dataset(), Err(Error::InvalidDataset(_))));
        let mut f = DatasetFile::from_dataset(&d);
        f.obs3d[0].camera = 9;
        assert!(matches!(f.to_dataset(), Err(Error::InvalidDataset(_))));
        let mut f = DatasetFile::from_dataset(&d);
        f.obs2d.pop();
        assert!(matches!(f.to_dataset(), Err(Error::InvalidDataset(_))));
        let err = DatasetFile::from_json("{\"version\": \"1\",\n \"bogus\": 1}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(DatasetFile::from_json("{\"version\":\"1\",\"cameras\":[],\"obs2d\":[],\"obs3d\":[{\"camera\":1,\"feature\":1,\"xyz\":[NaN,0,0]}]}").is_err());
    }

    #[test]
    fn scene_config_resolution() {
        let cfg = SceneConfigFile::from_json(r#"{"preset": "four-cam", "H": 20, "sigma_3d": 6, "seed": 3}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(cfg.cameras.len(), 4);
        assert_eq!(cfg.num_2d_features, 20);
        assert_eq!(cfg.num_3d_features, 100);
        assert_eq!(cfg.sigma_3d, 6.0);
        assert_eq!(cfg.seed, 3);

        let bad = SceneConfigFile::from_json(r#"{"preset": "two-cam", "H": 5}"#).unwrap().resolve();
        assert!(matches!(bad, Err(Error::InvalidConfig(m)) if m.contains("H >= 6")));
        assert!(SceneConfigFile::from_json(r#"{"H": 10}"#).unwrap().resolve().is_err());
        assert!(SceneConfigFile::from_json(r#"{"preset": "six-cam"}"#).is_err());
        assert!(SceneConfigFile::from_json(r#"{"preset": "two-cam", "colour": 1}"#).is_err());

        let explicit = SceneConfigFile {
            cameras: Some(
                Preset::TwoCam
                    .config()
                    .cameras
                    .iter()
                    .map(|c| CameraSpecFile {
                        id: c.id,
                        intrinsics: c.intrinsics,
                        pose: PoseFile::from(&c.gt_pose),
                    })
                    .collect(),
            ),
            region: Some(Preset::TwoCam.config().region),
            ..Default::default()
        };
        let text = to_pretty_json(&explicit);
        let cfg = SceneConfigFile::from_json(&text).unwrap().resolve().unwrap();
        assert_eq!(cfg.cameras.len(), 2);
        let no_region = SceneConfigFile {
            region: None,
            ..explicit
        };
        assert!(no_region.resolve().is_err());
    }

    #[test]
    fn experiment_config_resolution() {
        let text = r#"{
            "scene": {"preset": "two-cam", "H": 20, "J": 20},
            "sweeps": {"sigma2d": [0.2, 0.6, 1.0, 1.4, 1.8]},
            "realizations": 3,
            "methods": ["init", "ba", "icp", "joint_known_w", "joint_auto", "baicp_plus(0.5)"],
            "solver": {"max_iterations": 50, "jacobian_mode": "analytic"},
            "autoweight": {"estimator_mode": "paper_literal"}
        }"#;
        let cfg = ExperimentConfigFile::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(cfg.sweeps.points().len(), 5);
        assert_eq!(cfg.sweeps.sigma3d, vec![18.0]);
        assert_eq!(cfg.methods.len(), 6);
        assert_eq!(cfg.solver.max_iterations, 50);
        assert_eq!(cfg.autoweight.estimator_mode, EstimatorMode::PaperLiteral);
        assert_eq!(cfg.realizations, 3);

        let bad_method = text.replace("\"icp\"", "\"gicp\"");
        assert!(ExperimentConfigFile::from_json(&bad_method).unwrap().resolve().is_err());
        let bad_mode = text.replace("\"analytic\"", "\"symbolic\"");
        assert!(ExperimentConfigFile::from_json(&bad_mode).unwrap().resolve().is_err());
        let empty = text.replace("[0.2, 0.6, 1.0, 1.4, 1.8]", "[]");
        assert!(ExperimentConfigFile::from_json(&empty).unwrap().resolve().is_err());
    }

    fn small_results() -> Vec<ResultRow> {
        let mut scene = Preset::FourCam.config();
        scene.num_2d_features = 15;
        scene.num_3d_features = 15;
        let mut cfg = ExperimentConfig::new(scene, vec![Method::Init, Method::JointAuto, Method::Ba], 2);
        cfg.sweeps.sigma2d = vec![0.2, 1.0];
        result_rows(&run_experiment(&cfg, 1).unwrap())
    }

    #[test]
    fn results_csv_round_trip() {
        let rows = small_results();
        assert_eq!(rows.len(), 2 * 2 * 3 * 3);
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&(RESULTS_HEADER.join(",") + "\n")));
        let back = read_results_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut again = Vec::new();
        write_results_csv(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn results_csv_nan_and_empty_cells() {
        let row = ResultRow {
            sweep_sigma2d: 0.2,
            sweep_sigma3d: 18.0,
            h: 100,
            j: 100,
            num_cameras: 2,
            realization: 0,
            method: "baicp_plus(0.5)".into(),
            camera_id: 2,
            rotation_error_rad: f64::NAN,
            translation_error_rel: f64::NAN,
            final_cost: None,
            iterations: None,
            w_used: None,
            sigma2d_sq_est: None,
            sigma3d_sq_est: None,
            converged: false,
        };
        let mut buf = Vec::new();
        write_results_csv(&mut buf, std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(
            line,
            "2.0000000000000001e-1,1.8000000000000000e1,100,100,2,0,baicp_plus(0.5),2,NaN,NaN,,,,,,false"
        );
        let back = read_results_csv(buf.as_slice()).unwrap();
        assert!(back[0].rotation_error_rad.is_nan());
        assert_eq!(back[0].final_cost, None);
    }

    #[test]
    fn results_csv_diagnostics() {
        let err = read_results_csv("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let mut text = RESULTS_HEADER.join(",") + "\n";
        text += "1,18,100,100,2,0,ba,2,0.1,0.1,,,,,,maybe\n";
        let err = read_results_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2") && err.to_string().contains("converged"), "{err}");
        let mut text = RESULTS_HEADER.join(",") + "\n";
        text += "1,18,100\n";
        assert!(read_results_csv(text.as_bytes()).unwrap_err().to_string().contains("row 2"));
    }

    #[test]
    fn summary_round_trips() {
        let summary = summarize(&small_results());
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &summary).unwrap();
        let back = read_summary_csv(buf.as_slice()).unwrap();
        assert_eq!(back, summary);
        let mut again = Vec::new();
        write_summary_csv(&mut again, &back).unwrap();
        assert_eq!(again, buf);

        let json = summary_to_json(&summary);
        let parsed = summary_from_json(&json).unwrap();
        assert_eq!(to_pretty_json(&parsed), json);
    }

    #[test]
    fn poses_file_round_trip() {
        let cfg = Preset::FourCam.config();
        let poses: Vec<Pose> = cfg.cameras.iter().map(|c| c.gt_pose).collect();
        let f = PosesFile::new(1..=4, &poses);
        let back = PosesFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        for (a, b) in back.poses().iter().zip(&poses) {
            assert!((a.rotation.matrix() - b.rotation.matrix()).amax() < 1e-15);
            assert!((a.translation - b.translation).amax() < 1e-9);
        }
    }
}
