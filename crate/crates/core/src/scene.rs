//! Synthetic multi-view scenes.
//!
//! Points are drawn uniformly from an axis-aligned cuboid and kept only when
//! every camera sees them in front of it and inside its image. The 2D feature
//! set (ids `1..=H`) and the 3D feature set (ids `H+1..=H+J`) are sampled
//! independently so that the two counts can be varied separately.
//!
//! Every 2D observation also carries the depth-sensor reading at that pixel
//! (`Obs2d::xyz`), which is what an RGB-D camera delivers for a color feature.
//! Initialization and structure seeding use these readings.
//!
//! Randomness comes from [`ChaCha20Rng`]: a scene seed selects the key and the
//! realization index selects the stream, so realizations never share draws.
//! Normal variates use `rand_distr::StandardNormal` (ziggurat), which is
//! deterministic for a given generator state on every platform.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{project, rot_y, Intrinsics, Pose, Vector2, Vector3};

/// Consecutive rejections allowed per requested point before giving up.
pub const MAX_REJECTIONS_PER_POINT: u64 = 10_000;

/// Camera with a known ground-truth pose, used to build scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub gt_pose: Pose,
}

/// Camera as it appears in a dataset; the pose is unknown for real captures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub gt_pose: Option<Pose>,
}

impl From<CameraSpec> for Camera {
    fn from(c: CameraSpec) -> Self {
        Self {
            id: c.id,
            intrinsics: c.intrinsics,
            gt_pose: Some(c.gt_pose),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }

    fn is_valid(&self) -> bool {
        self.min.iter().chain(&self.max).all(|v| v.is_finite())
            && (0..3).all(|i| self.max[i] > self.min[i])
    }

    fn sample(&self, rng: &mut impl Rng) -> Vector3 {
        Vector3::from_fn(|i, _| rng.random_range(self.min[i]..self.max[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub sigma2d: f64,
    pub sigma3d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub cameras: Vec<CameraSpec>,
    pub region: Region,
    pub num_2d_features: usize,
    pub num_3d_features: usize,
    pub sigma_2d: f64,
    pub sigma_3d: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.cameras.is_empty() {
            return bad("at least one camera required");
        }
        for (i, c) in self.cameras.iter().enumerate() {
            if c.id as usize != i + 1 {
                return bad("camera ids must be contiguous starting at 1");
            }
            c.intrinsics.validate()?;
        }
        let first = &self.cameras[0].gt_pose;
        if first.rotation != Pose::identity().rotation || first.translation != Vector3::zeros() {
            return bad("camera 1 must sit at the identity pose");
        }
        if self.num_2d_features < 6 {
            return bad("H >= 6 required");
        }
        if self.num_3d_features < 3 {
            return bad("J >= 3 required");
        }
        if !(self.sigma_2d >= 0.0 && self.sigma_2d.is_finite()) {
            return bad("sigma2d must be finite and >= 0");
        }
        if !(self.sigma_3d >= 0.0 && self.sigma_3d.is_finite()) {
            return bad("sigma3d must be finite and >= 0");
        }
        if !self.region.is_valid() {
            return bad("region must have positive volume");
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseLevels {
        NoiseLevels {
            sigma2d: self.sigma_2d,
            sigma3d: self.sigma_3d,
        }
    }
}

/// Shipped camera layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "two-cam")]
    TwoCam,
    #[serde(rename = "four-cam")]
    FourCam,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::TwoCam => "two-cam",
            Preset::FourCam => "four-cam",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "two-cam" => Some(Preset::TwoCam),
            "four-cam" => Some(Preset::FourCam),
            _ => None,
        }
    }

    /// Yaw of each camera around the vertical axis through the scene center.
    fn yaws_deg(self) -> &'static [f64] {
        match self {
            Preset::TwoCam => &[0.0, 40.0],
            Preset::FourCam => &[0.0, 40.0, -40.0, 80.0],
        }
    }

    /// Converging ring of 640×480 cameras (f = 525 px) looking at a cuboid
    /// centered 2.5 m in front of camera 1. Defaults: H = J = 100,
    /// σ₂D = 1 px, σ₃D = 18 mm, seed 0.
    pub fn config(self) -> SceneConfig {
        let k = Intrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        };
        let cameras = self
            .yaws_deg()
            .iter()
            .enumerate()
            .map(|(i, &deg)| CameraSpec {
                id: i as u32 + 1,
                intrinsics: k,
                gt_pose: ring_pose(deg * PI / 180.0),
            })
            .collect();
        SceneConfig {
            cameras,
            region: Region::new(
                [-500.0, -375.0, SCENE_DISTANCE - 500.0],
                [500.0, 375.0, SCENE_DISTANCE + 500.0],
            ),
            num_2d_features: 100,
            num_3d_features: 100,
            sigma_2d: 1.0,
            sigma_3d: 18.0,
            seed: 0,
        }
    }
}

const SCENE_DISTANCE: f64 = 2500.0;

fn ring_pose(yaw: f64) -> Pose {
    if yaw == 0.0 {
        return Pose::identity();
    }
    let center = Vector3::new(0.0, 0.0, SCENE_DISTANCE);
    let r = rot_y(yaw);
    Pose::new(r, center + r * Vector3::new(0.0, 0.0, -SCENE_DISTANCE))
}

/// 2D feature observation. `xyz` is the depth reading at the feature pixel,
/// expressed in the observing camera's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs2d {
    pub feature: u32,
    pub uv: Vector2,
    pub xyz: Option<Vector3>,
}

/// 3D feature observation in the observing camera's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs3d {
    pub feature: u32,
    pub xyz: Vector3,
}

/// Matched multi-view measurements.
///
/// Invariants, checked by [`Dataset::new`]: camera ids are `1..=N` in order,
/// every camera observes exactly the same 2D feature ids and the same 3D
/// feature ids, and all per-camera lists are sorted by feature id. Index `i`
/// of `obs2d[l]` therefore refers to the same feature for every camera `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    cameras: Vec<Camera>,
    obs2d: Vec<Vec<Obs2d>>,
    obs3d: Vec<Vec<Obs3d>>,
    true_points: Option<Vec<(u32, Vector3)>>,
    noise: Option<NoiseLevels>,
}

impl Dataset {
    pub fn new(
        cameras: Vec<Camera>,
        mut obs2d: Vec<Vec<Obs2d>>,
        mut obs3d: Vec<Vec<Obs3d>>,
        true_points: Option<Vec<(u32, Vector3)>>,
        noise: Option<NoiseLevels>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidDataset(msg));
        if cameras.is_empty() {
            return bad("no cameras".into());
        }
        for (i, c) in cameras.iter().enumerate() {
            if c.id as usize != i + 1 {
                return bad(format!("camera ids must be 1..=N in order, found {}", c.id));
            }
            c.intrinsics
                .validate()
                .map_err(|e| Error::InvalidDataset(format!("camera {}: {e}", c.id)))?;
        }
        if obs2d.len() != cameras.len() || obs3d.len() != cameras.len() {
            return bad("observation lists must have one entry per camera".into());
        }
        for list in &mut obs2d {
            list.sort_by_key(|o| o.feature);
        }
        for list in &mut obs3d {
            list.sort_by_key(|o| o.feature);
        }
        let ids2: Vec<u32> = obs2d[0].iter().map(|o| o.feature).collect();
        let ids3: Vec<u32> = obs3d[0].iter().map(|o| o.feature).collect();
        if ids2.windows(2).any(|w| w[0] == w[1]) || ids3.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate feature id within a camera".into());
        }
        for (l, (o2, o3)) in obs2d.iter().zip(&obs3d).enumerate() {
            if !o2.iter().map(|o| o.feature).eq(ids2.iter().copied()) {
                return bad(format!(
                    "camera {} does not observe the same 2D features as camera 1",
                    l + 1
                ));
            }
            if !o3.iter().map(|o| o.feature).eq(ids3.iter().copied()) {
                return bad(format!(
                    "camera {} does not observe the same 3D features as camera 1",
                    l + 1
                ));
            }
            let finite2 = o2.iter().all(|o| {
                o.uv.iter().all(|v| v.is_finite())
                    && o.xyz.is_none_or(|x| x.iter().all(|v| v.is_finite()))
            });
            let finite3 = o3.iter().all(|o| o.xyz.iter().all(|v| v.is_finite()));
            if !finite2 || !finite3 {
                return bad(format!("camera {} has non-finite measurements", l + 1));
            }
        }
        if let Some(tp) = &true_points {
            if tp.iter().any(|(_, x)| x.iter().any(|v| !v.is_finite())) {
                return bad("non-finite true point".into());
            }
        }
        let true_points = true_points.map(|mut tp| {
            tp.sort_by_key(|(id, _)| *id);
            tp
        });
        Ok(Self {
            cameras,
            obs2d,
            obs3d,
            true_points,
            noise,
        })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    /// Number of 2D features per camera (H).
    pub fn num_2d_features(&self) -> usize {
        self.obs2d[0].len()
    }

    /// Number of 3D features per camera (J).
    pub fn num_3d_features(&self) -> usize {
        self.obs3d[0].len()
    }

    pub fn obs2d(&self, camera: usize) -> &[Obs2d] {
        &self.obs2d[camera]
    }

    pub fn obs3d(&self, camera: usize) -> &[Obs3d] {
        &self.obs3d[camera]
    }

    pub fn feature_ids_2d(&self) -> impl Iterator<Item = u32> + '_ {
        self.obs2d[0].iter().map(|o| o.feature)
    }

    pub fn true_points(&self) -> Option<&[(u32, Vector3)]> {
        self.true_points.as_deref()
    }

    pub fn true_point(&self, feature: u32) -> Option<Vector3> {
        let tp = self.true_points.as_ref()?;
        tp.binary_search_by_key(&feature, |(id, _)| *id)
            .ok()
            .map(|i| tp[i].1)
    }

    pub fn noise(&self) -> Option<NoiseLevels> {
        self.noise
    }

    pub fn gt_poses(&self) -> Option<Vec<Pose>> {
        self.cameras.iter().map(|c| c.gt_pose).collect()
    }

    /// Depth measurement of 2D feature `index` in `camera`: the reading stored
    /// with the 2D observation, or else a 3D observation with the same id.
    pub fn depth_measurement(&self, camera: usize, index: usize) -> Option<Vector3> {
        let o = &self.obs2d[camera][index];
        o.xyz.or_else(|| {
            let list = &self.obs3d[camera];
            list.binary_search_by_key(&o.feature, |p| p.feature)
                .ok()
                .map(|i| list[i].xyz)
        })
    }

    /// Number of unordered camera pairs.
    pub fn num_pairs(&self) -> usize {
        let n = self.num_cameras();
        n * (n - 1) / 2
    }

    /// Unordered camera pairs `(l, k)` with `l < k`, lexicographic.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let n = self.num_cameras();
        (0..n).flat_map(move |l| (l + 1..n).map(move |k| (l, k)))
    }
}

/// Generator for one scene realization: `seed` picks the key, `stream` the
/// ChaCha stream.
pub fn realization_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn visible_in_all(cameras: &[CameraSpec], x: &Vector3) -> bool {
    cameras.iter().all(|c| {
        project(&c.intrinsics, &c.gt_pose, x)
            .map(|q| c.intrinsics.contains(&q))
            .unwrap_or(false)
    })
}

/// Draws `count` points from the configured region that all cameras see.
pub fn generate_world_points(
    config: &SceneConfig,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vector3>> {
    if count == 0 {
        return Err(Error::InvalidConfig("point count must be >= 1".into()));
    }
    let limit = MAX_REJECTIONS_PER_POINT * count as u64;
    let mut points = Vec::with_capacity(count);
    let mut rejections = 0u64;
    while points.len() < count {
        let x = config.region.sample(rng);
        if visible_in_all(&config.cameras, &x) {
            points.push(x);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= limit {
                return Err(Error::VisibilityExhausted {
                    attempts: rejections,
                });
            }
        }
    }
    Ok(points)
}

/// Exact measurements of two point sets. 2D features get ids `1..=H`, 3D
/// features `H+1..=H+J`.
pub fn render_observations(
    points2d: &[Vector3],
    points3d: &[Vector3],
    cameras: &[CameraSpec],
) -> Result<Dataset> {
    let h = points2d.len() as u32;
    let mut obs2d = Vec::with_capacity(cameras.len());
    let mut obs3d = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let o2 = points2d
            .iter()
            .enumerate()
            .map(|(i, x)| {
                Ok(Obs2d {
                    feature: i as u32 + 1,
                    uv: project(&cam.intrinsics, &cam.gt_pose, x)?,
                    xyz: Some(cam.gt_pose.inverse_transform(x)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let o3 = points3d
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let xc = cam.gt_pose.inverse_transform(x);
                if xc.z <= 0.0 {
                    return Err(Error::PointBehindCamera { depth: xc.z });
                }
                Ok(Obs3d {
                    feature: h + j as u32 + 1,
                    xyz: xc,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        obs2d.push(o2);
        obs3d.push(o3);
    }
    let true_points = points2d
        .iter()
        .chain(points3d)
        .enumerate()
        .map(|(i, x)| (i as u32 + 1, *x))
        .collect();
    Dataset::new(
        cameras.iter().copied().map(Camera::from).collect(),
        obs2d,
        obs3d,
        Some(true_points),
        Some(NoiseLevels::default()),
    )
}

/// Adds i.i.d. Gaussian noise to every measured coordinate.
///
/// Draw order: cameras in order; per camera the 2D observations (u, v, then
/// the depth reading's x, y, z), then the 3D observations (x, y, z). Draws are
/// taken even when a sigma is zero so the stream layout never depends on the
/// noise level; a zero sigma leaves the values untouched.
pub fn add_noise(d: &Dataset, sigma_2d: f64, sigma_3d: f64, rng: &mut impl Rng) -> Dataset {
    let mut out = d.clone();
    let mut draw = |value: &mut f64, sigma: f64| {
        let n: f64 = rng.sample(StandardNormal);
        if sigma != 0.0 {
            *value += sigma * n;
        }
    };
    for l in 0..out.cameras.len() {
        for o in &mut out.obs2d[l] {
            draw(&mut o.uv.x, sigma_2d);
            draw(&mut o.uv.y, sigma_2d);
            if let Some(x) = &mut o.xyz {
                for c in x.iter_mut() {
                    draw(c, sigma_3d);
                }
            }
        }
        for o in &mut out.obs3d[l] {
            for c in o.xyz.iter_mut() {
                draw(c, sigma_3d);
            }
        }
    }
    out.noise = Some(NoiseLevels {
        sigma2d: sigma_2d,
        sigma3d: sigma_3d,
    });
    out
}

/// Full pipeline for one realization: sample both point sets, render, add noise.
pub fn simulate_with_rng(config: &SceneConfig, rng: &mut impl Rng) -> Result<Dataset> {
    config.validate()?;
    let p2 = generate_world_points(config, config.num_2d_features, rng)?;
    let p3 = generate_world_points(config, config.num_3d_features, rng)?;
    let clean = render_observations(&p2, &p3, &config.cameras)?;
    Ok(add_noise(&clean, config.sigma_2d, config.sigma_3d, rng))
}

/// [`simulate_with_rng`] on stream 0 of `config.seed`.
pub fn simulate(config: &SceneConfig) -> Result<Dataset> {
    simulate_with_rng(config, &mut realization_rng(config.seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_axis_angle, Rotation};
    use approx::assert_relative_eq;

    fn single_camera_config() -> SceneConfig {
        let mut cfg = Preset::TwoCam.config();
        cfg.cameras.truncate(1);
        cfg.region = Region::new([-200.0, -200.0, 1500.0], [200.0, 200.0, 2500.0]);
        cfg
    }

    // Independent projector used to check the generator's visibility claims.
    fn oracle_project(c: &CameraSpec, x: &Vector3) -> Option<(f64, f64)> {
        let r = c.gt_pose.rotation.matrix();
        let d = x - c.gt_pose.translation;
        let xc = r.transpose() * d;
        (xc.z > 0.0).then(|| {
            (
                c.intrinsics.fx * xc.x / xc.z + c.intrinsics.cx,
                c.intrinsics.fy * xc.y / xc.z + c.intrinsics.cy,
            )
        })
    }

    fn in_image(c: &CameraSpec, (u, v): (f64, f64)) -> bool {
        u >= 0.0 && v >= 0.0 && u < c.intrinsics.width as f64 && v < c.intrinsics.height as f64
    }

    #[test]
    fn single_camera_points_are_in_bounds() {
        let cfg = single_camera_config();
        let mut rng = realization_rng(1, 0);
        let pts = generate_world_points(&cfg, 100, &mut rng).unwrap();
        assert_eq!(pts.len(), 100);
        for p in &pts {
            let q = oracle_project(&cfg.cameras[0], p).unwrap();
            assert!(in_image(&cfg.cameras[0], q));
        }
    }

    #[test]
    fn region_behind_cameras_exhausts() {
        let mut cfg = Preset::TwoCam.config();
        cfg.region = Region::new([-100.0, -100.0, -3000.0], [100.0, 100.0, -2000.0]);
        let mut rng = realization_rng(1, 0);
        let err = generate_world_points(&cfg, 2, &mut rng).unwrap_err();
        assert_eq!(err, Error::VisibilityExhausted { attempts: 20_000 });
    }

    #[test]
    fn two_camera_points_visible_in_both_views() {
        let cfg = Preset::TwoCam.config();
        let mut rng = realization_rng(3, 0);
        let pts = generate_world_points(&cfg, 250, &mut rng).unwrap();
        assert_eq!(pts.len(), 250);
        for p in &pts {
            for c in &cfg.cameras {
                let q = oracle_project(c, p).expect("in front");
                assert!(in_image(c, q));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = Preset::FourCam.config();
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(a, simulate(&other).unwrap());
    }

    #[test]
    fn render_gauge_and_optical_axis() {
        let cfg = Preset::TwoCam.config();
        let p2 = vec![Vector3::new(0.0, 0.0, 2000.0)];
        let p3 = vec![Vector3::new(10.0, -20.0, 2400.0)];
        let d = render_observations(&p2, &p3, &cfg.cameras).unwrap();
        assert_eq!(d.obs3d(0)[0].xyz, p3[0]);
        let uv = d.obs2d(0)[0].uv;
        assert_eq!(uv, Vector2::new(319.5, 239.5));
        assert_eq!(d.obs3d(0)[0].feature, 2);
        assert_eq!(d.true_point(1), Some(p2[0]));
        assert_eq!(d.true_point(2), Some(p3[0]));
    }

    #[test]
    fn render_point_on_second_camera_axis_hits_principal_point() {
        let cfg = Preset::TwoCam.config();
        let cam = cfg.cameras[1];
        let x = cam.gt_pose.transform(&Vector3::new(0.0, 0.0, 1800.0));
        let d = render_observations(&[x], &[x], &cfg.cameras).unwrap();
        assert_relative_eq!(d.obs2d(1)[0].uv, Vector2::new(319.5, 239.5), epsilon = 1e-9);
    }

    #[test]
    fn rendered_3d_maps_back_to_same_world_point() {
        let cfg = Preset::TwoCam.config();
        let x = Vector3::new(50.0, 30.0, 2600.0);
        let d = render_observations(&[x], &[x], &cfg.cameras).unwrap();
        for l in 0..2 {
            let back = cfg.cameras[l].gt_pose.transform(&d.obs3d(l)[0].xyz);
            assert_relative_eq!(back, x, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_noise_is_bit_identical() {
        let mut cfg = Preset::TwoCam.config();
        cfg.sigma_2d = 0.0;
        cfg.sigma_3d = 0.0;
        let mut rng = realization_rng(5, 0);
        let p2 = generate_world_points(&cfg, 20, &mut rng).unwrap();
        let p3 = generate_world_points(&cfg, 20, &mut rng).unwrap();
        let clean = render_observations(&p2, &p3, &cfg.cameras).unwrap();
        let noisy = add_noise(&clean, 0.0, 0.0, &mut rng);
        assert_eq!(clean.obs2d, noisy.obs2d);
        assert_eq!(clean.obs3d, noisy.obs3d);
    }

    #[test]
    fn noise_has_requested_spread() {
        // 34 features × 3 coords × 1000 repetitions > 1e5 samples; the sample
        // std of n = 1e5 normals has relative sd 1/sqrt(2n) ≈ 0.22%, so [17.8,
        // 18.2] is a ±5-sigma band.
        let mut cfg = Preset::TwoCam.config();
        cfg.cameras.truncate(1);
        let mut rng = realization_rng(11, 0);
        let p2 = generate_world_points(&cfg, 6, &mut rng).unwrap();
        let p3 = generate_world_points(&cfg, 34, &mut rng).unwrap();
        let clean = render_observations(&p2, &p3, &cfg.cameras).unwrap();
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for _ in 0..1000 {
            let noisy = add_noise(&clean, 1.0, 18.0, &mut rng);
            for (a, b) in noisy.obs3d(0).iter().zip(clean.obs3d(0)) {
                for c in 0..3 {
                    let e = a.xyz[c] - b.xyz[c];
                    sum_sq += e * e;
                    n += 1;
                }
            }
        }
        assert!(n >= 100_000);
        let std = (sum_sq / n as f64).sqrt();
        assert!((17.8..=18.2).contains(&std), "std = {std}");
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let cfg = Preset::TwoCam.config();
        let clean = {
            let mut rng = realization_rng(2, 0);
            let p2 = generate_world_points(&cfg, 10, &mut rng).unwrap();
            let p3 = generate_world_points(&cfg, 10, &mut rng).unwrap();
            render_observations(&p2, &p3, &cfg.cameras).unwrap()
        };
        let a = add_noise(&clean, 1.0, 18.0, &mut realization_rng(9, 4));
        let b = add_noise(&clean, 1.0, 18.0, &mut realization_rng(9, 4));
        let c = add_noise(&clean, 1.0, 18.0, &mut realization_rng(9, 5));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        let base = Preset::TwoCam.config();
        assert!(base.validate().is_ok());

        let mut c = base.clone();
        c.num_2d_features = 5;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(m)) if m.contains("H >= 6")));

        let mut c = base.clone();
        c.num_3d_features = 2;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.sigma_3d = -1.0;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.region = Region::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]);
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.cameras[1].id = 5;
        assert!(c.validate().is_err());

        let mut c = base;
        c.cameras[0].gt_pose = Pose::new(
            exp_axis_angle(&Vector3::new(0.0, 0.1, 0.0)),
            Vector3::zeros(),
        );
        assert!(c.validate().is_err());
    }

    #[test]
    fn dataset_rejects_mismatched_features() {
        let cfg = Preset::TwoCam.config();
        let x = Vector3::new(0.0, 0.0, 2500.0);
        let d = render_observations(&[x, x], &[x], &cfg.cameras).unwrap();
        let mut o2: Vec<Vec<Obs2d>> = (0..2).map(|l| d.obs2d(l).to_vec()).collect();
        o2[1].pop();
        let o3 = (0..2).map(|l| d.obs3d(l).to_vec()).collect();
        let err = Dataset::new(d.cameras().to_vec(), o2, o3, None, None).unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));
    }

    #[test]
    fn presets_put_camera_one_at_identity() {
        for p in [Preset::TwoCam, Preset::FourCam] {
            let cfg = p.config();
            assert_eq!(cfg.cameras[0].gt_pose.rotation, Rotation::identity());
            assert_eq!(cfg.cameras[0].gt_pose.translation, Vector3::zeros());
            cfg.validate().unwrap();
        }
        assert_eq!(Preset::FourCam.config().cameras.len(), 4);
    }
}
