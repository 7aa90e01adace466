//! Synthetic scenes and a heatmap corruption model.
//!
//! A scene is an object cloud under a random pose seen by a pinhole camera,
//! with clean Gaussian heatmaps for every precision level rendered over a
//! square region of interest around the object. [`corrupt_scene`] perturbs
//! those heatmaps the way occlusion confuses a trained predictor: occluded
//! channels are shifted, flattened towards uniform and given distractor
//! blobs, while visible channels only receive small centre jitter.
//!
//! Corruption magnitudes are in image pixels.

use std::f64::consts::TAU;
use std::path::PathBuf;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps_select, project, CameraIntrinsics, Landmark2D, Landmark3D, PointCloud, Pose, MIN_DEPTH};
use crate::heatmap::{gaussian_channel, HeatmapFrame, HeatmapStack, PrecisionLevel, DEFAULT_HEATMAP_SIZE};
use crate::oba::BBox;
use crate::ply::read_ply;

/// Attempts at drawing an in-frame pose before giving up.
pub const MAX_POSE_ATTEMPTS: usize = 1000;
/// Seed of the builtin random blob; fixed so the object is the same everywhere.
const BLOB_SEED: u64 = 0;
/// Half extent of the builtin shapes, millimetres.
const HALF_EXTENT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinShape {
    Cube,
    Icosahedron,
    Blob,
}

impl BuiltinShape {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cube => "cube",
            Self::Icosahedron => "icosahedron",
            Self::Blob => "blob",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "cube" => Ok(Self::Cube),
            "icosahedron" => Ok(Self::Icosahedron),
            "blob" => Ok(Self::Blob),
            other => Err(Error::UnknownObject(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudSource {
    Builtin(BuiltinShape),
    Ply { path: PathBuf, symmetric: bool },
}

impl CloudSource {
    pub fn load(&self) -> Result<PointCloud> {
        match self {
            Self::Builtin(shape) => Ok(builtin_cloud(*shape)),
            Self::Ply { path, symmetric } => Ok(PointCloud::new(read_ply(path)?, *symmetric)),
        }
    }
}

/// The builtin object models, centred on the origin.
///
/// - `cube`: 100 mm cube sampled on a 25 mm surface grid (symmetric).
/// - `icosahedron`: vertices, edge midpoints and face centres at 50 mm
///   circumradius (symmetric).
/// - `blob`: 200 points uniform in a 50 mm ball plus the 8 corners of the
///   enclosing cube.
pub fn builtin_cloud(shape: BuiltinShape) -> PointCloud {
    match shape {
        BuiltinShape::Cube => {
            let ticks = [-2.0, -1.0, 0.0, 1.0, 2.0].map(|t| t * HALF_EXTENT / 2.0);
            let mut pts = Vec::new();
            for &x in &ticks {
                for &y in &ticks {
                    for &z in &ticks {
                        if [x, y, z].iter().any(|c| c.abs() == HALF_EXTENT) {
                            pts.push(Vector3::new(x, y, z));
                        }
                    }
                }
            }
            PointCloud::new(pts, true)
        }
        BuiltinShape::Icosahedron => PointCloud::new(icosahedron_points(HALF_EXTENT), true),
        BuiltinShape::Blob => {
            let mut rng = ChaCha8Rng::seed_from_u64(BLOB_SEED);
            let mut pts = Vec::with_capacity(208);
            while pts.len() < 200 {
                let p = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if p.norm_squared() <= 1.0 {
                    pts.push(p * HALF_EXTENT);
                }
            }
            for i in 0..8 {
                let s = |bit: usize| if i >> bit & 1 == 1 { HALF_EXTENT } else { -HALF_EXTENT };
                pts.push(Vector3::new(s(0), s(1), s(2)));
            }
            PointCloud::new(pts, false)
        }
    }
}

fn icosahedron_points(radius: f64) -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts = Vec::with_capacity(12);
    for a in [-1.0, 1.0] {
        for b in [-phi, phi] {
            verts.push(Vector3::new(0.0, a, b));
            verts.push(Vector3::new(a, b, 0.0));
            verts.push(Vector3::new(b, 0.0, a));
        }
    }
    let edge2 = 4.0;
    let near = |i: usize, j: usize| ((verts[i] - verts[j]).norm_squared() - edge2).abs() < 1e-9;
    let mut pts = verts.clone();
    for i in 0..12 {
        for j in i + 1..12 {
            if near(i, j) {
                pts.push((verts[i] + verts[j]) / 2.0);
                for k in j + 1..12 {
                    if near(i, k) && near(j, k) {
                        pts.push((verts[i] + verts[j] + verts[k]) / 3.0);
                    }
                }
            }
        }
    }
    let scale = radius / verts[0].norm();
    pts.into_iter().map(|p| p * scale).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub cloud: CloudSource,
    pub n_landmarks: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub intrinsics: CameraIntrinsics,
    /// Translation box, millimetres; rotations are uniform over SO(3).
    pub translation_min: [f64; 3],
    pub translation_max: [f64; 3],
    /// Every cloud point must lie at least this deep.
    pub min_depth: f64,
    /// Reject poses that project the cloud outside the image or landmarks
    /// closer than `4 * sigma_low` pixels to the border.
    pub in_frame: bool,
    pub heatmap_size: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            cloud: CloudSource::Builtin(BuiltinShape::Blob),
            n_landmarks: 11,
            image_width: 640,
            image_height: 480,
            intrinsics: CameraIntrinsics {
                fx: 572.4,
                fy: 572.4,
                cx: 325.3,
                cy: 242.0,
            },
            translation_min: [-100.0, -80.0, 600.0],
            translation_max: [100.0, 80.0, 1000.0],
            min_depth: 300.0,
            in_frame: true,
            heatmap_size: DEFAULT_HEATMAP_SIZE,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.n_landmarks < 4 {
            return Err(Error::InvalidConfig("at least 4 landmarks are needed".into()));
        }
        if self.image_width == 0 || self.image_height == 0 || self.heatmap_size == 0 {
            return Err(Error::InvalidConfig("image and heatmap sizes must be >= 1".into()));
        }
        if (0..3).any(|i| !(self.translation_min[i] <= self.translation_max[i])) {
            return Err(Error::InvalidConfig("translation box is empty".into()));
        }
        if !(self.min_depth > MIN_DEPTH) {
            return Err(Error::InvalidConfig("min depth must be positive".into()));
        }
        Ok(())
    }
}

/// Clean or corrupted heatmaps for the three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStacks {
    pub low: HeatmapStack,
    pub medium: HeatmapStack,
    pub high: HeatmapStack,
}

impl LevelStacks {
    pub fn get(&self, level: PrecisionLevel) -> &HeatmapStack {
        match level {
            PrecisionLevel::Low => &self.low,
            PrecisionLevel::Medium => &self.medium,
            PrecisionLevel::High => &self.high,
        }
    }

    fn from_fn(mut f: impl FnMut(PrecisionLevel) -> Result<HeatmapStack>) -> Result<Self> {
        Ok(Self {
            low: f(PrecisionLevel::Low)?,
            medium: f(PrecisionLevel::Medium)?,
            high: f(PrecisionLevel::High)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub landmarks3d: Vec<Landmark3D>,
    pub gt_pose: Pose,
    pub intr: CameraIntrinsics,
    pub image_width: usize,
    pub image_height: usize,
    pub gt_landmarks2d: Vec<Landmark2D>,
    /// Projected cloud, padded by 10% per side.
    pub bbox: BBox,
    /// Region of interest the heatmaps cover.
    pub frame: HeatmapFrame,
    pub heatmaps: LevelStacks,
    pub corrupted_heatmaps: Option<LevelStacks>,
    /// Channels treated as occluded by the corruption, ascending.
    pub occluded_indices: Vec<usize>,
}

impl SyntheticScene {
    /// The heatmaps a predictor would output: corrupted if available.
    pub fn observed(&self) -> &LevelStacks {
        self.corrupted_heatmaps.as_ref().unwrap_or(&self.heatmaps)
    }
}

/// Uniform rotation from three uniform variates (uniform unit quaternion).
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::from_quaternion(Quaternion::new(
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    ))
}

fn inside(p: &Vector2<f64>, w: usize, h: usize, margin: f64) -> bool {
    p.x >= margin && p.y >= margin && p.x < w as f64 - margin && p.y < h as f64 - margin
}

/// Square region of interest on the bbox: side `max(width, height)`.
pub fn roi_frame(bbox: &BBox, size: usize) -> HeatmapFrame {
    let center = Vector2::new(0.5 * (bbox.x0 + bbox.x1) as f64, 0.5 * (bbox.y0 + bbox.y1) as f64);
    let side = bbox.width().max(bbox.height()) as f64;
    HeatmapFrame::centered(center, side, size)
}

fn padded_bbox(pixels: &[Vector2<f64>], w: usize, h: usize) -> BBox {
    let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    for p in pixels {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let pad = (hi - lo) * 0.1;
    let clamp = |v: f64, max: usize| v.clamp(0.0, max as f64) as usize;
    BBox::new(
        clamp((lo.x - pad.x).floor(), w),
        clamp((lo.y - pad.y).floor(), h),
        clamp((hi.x + pad.x).floor() + 1.0, w),
        clamp((hi.y + pad.y).floor() + 1.0, h),
    )
}

/// Clean Gaussian heatmaps of image-space landmarks inside `frame`.
pub fn render_clean(
    landmarks: &[Landmark2D],
    frame: &HeatmapFrame,
    size: usize,
    level: PrecisionLevel,
) -> Result<HeatmapStack> {
    let plane = size * size;
    let mut values = vec![0.0; landmarks.len() * plane];
    for (l, out) in landmarks.iter().zip(values.chunks_exact_mut(plane)) {
        gaussian_channel(out, size, size, &frame.to_heatmap(&l.coords), level.sigma());
    }
    HeatmapStack::new(landmarks.len(), size, size, values, true)
}

/// Samples a scene for a loaded cloud and its landmarks.
pub fn generate_scene_for(cloud: &PointCloud, landmarks3d: &[Landmark3D], cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let margin = 4.0 * PrecisionLevel::Low.sigma();
    let lm_points: Vec<Vector3<f64>> = landmarks3d.iter().map(|l| l.coords).collect();

    for _ in 0..MAX_POSE_ATTEMPTS {
        let rotation = random_rotation(&mut rng).to_rotation_matrix().into_inner();
        let t = Vector3::from_fn(|i, _| rng.random_range(cfg.translation_min[i]..=cfg.translation_max[i]));
        let pose = Pose::from_nearest_rotation(&rotation, t)?;
        if cloud.points.iter().any(|p| pose.transform_point(p).z < cfg.min_depth) {
            continue;
        }
        let pixels = project(&cloud.points, &pose, &cfg.intrinsics)?;
        let lm_pixels = project(&lm_points, &pose, &cfg.intrinsics)?;
        if cfg.in_frame
            && !(pixels.iter().all(|p| inside(p, cfg.image_width, cfg.image_height, 0.0))
                && lm_pixels
                    .iter()
                    .all(|p| inside(p, cfg.image_width, cfg.image_height, margin)))
        {
            continue;
        }
        let gt_landmarks2d: Vec<Landmark2D> = landmarks3d
            .iter()
            .zip(&lm_pixels)
            .map(|(l, &coords)| Landmark2D { index: l.index, coords })
            .collect();
        let bbox = padded_bbox(&pixels, cfg.image_width, cfg.image_height);
        let frame = roi_frame(&bbox, cfg.heatmap_size);
        let heatmaps = LevelStacks::from_fn(|level| render_clean(&gt_landmarks2d, &frame, cfg.heatmap_size, level))?;
        return Ok(SyntheticScene {
            cloud: cloud.clone(),
            landmarks3d: landmarks3d.to_vec(),
            gt_pose: pose,
            intr: cfg.intrinsics,
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            gt_landmarks2d,
            bbox,
            frame,
            heatmaps,
            corrupted_heatmaps: None,
            occluded_indices: Vec::new(),
        });
    }
    Err(Error::PoseSampling(MAX_POSE_ATTEMPTS))
}

/// Loads the cloud, picks landmarks by farthest point sampling and samples a
/// scene. Deterministic per `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    let cloud = cfg.cloud.load()?;
    let landmarks = fps_select(&cloud, cfg.n_landmarks)?;
    generate_scene_for(&cloud, &landmarks, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Standard deviation of the centre jitter on visible channels, pixels.
    pub landmark_noise_sigma: f64,
    pub occluded_fraction: f64,
    /// Magnitude of the centre shift on occluded channels, pixels.
    pub occluded_shift: f64,
    pub distractor_blobs: usize,
    /// Mass of each distractor blob relative to the original peak.
    pub blob_mass: f64,
    /// Share of the occluded channel left on the shifted Gaussian; the rest
    /// is spread uniformly.
    pub flatten_factor: f64,
    /// Draw medium and low precision corruption independently of the high
    /// precision head.
    pub decorrelate_medium: bool,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            landmark_noise_sigma: 1.0,
            occluded_fraction: 0.3,
            occluded_shift: 15.0,
            distractor_blobs: 1,
            blob_mass: 0.25,
            flatten_factor: 0.5,
            decorrelate_medium: true,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        Self {
            landmark_noise_sigma: 0.0,
            occluded_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.occluded_fraction) {
            return Err(Error::InvalidConfig("occluded fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.flatten_factor) {
            return Err(Error::InvalidConfig("flatten factor must lie in [0, 1]".into()));
        }
        let non_negative = [self.landmark_noise_sigma, self.occluded_shift, self.blob_mass];
        if !non_negative.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise, shift and blob mass must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Number of channels out of `k` treated as occluded.
    pub fn occluded_count(&self, k: usize) -> usize {
        ((self.occluded_fraction * k as f64).ceil() as usize).min(k)
    }
}

/// Random draws defining one occluded channel, image pixels.
#[derive(Debug, Clone)]
struct Occlusion {
    shift: Vector2<f64>,
    blobs: Vec<Vector2<f64>>,
}

fn draw_occlusion(rng: &mut impl Rng, cfg: &CorruptionConfig, frame: &HeatmapFrame, size: usize) -> Occlusion {
    let angle = rng.random_range(0.0..TAU);
    let shift = Vector2::new(angle.cos(), angle.sin()) * cfg.occluded_shift;
    let extent = (size - 1) as f64;
    let blobs = (0..cfg.distractor_blobs)
        .map(|_| {
            let h = Vector2::new(rng.random_range(0.0..=extent), rng.random_range(0.0..=extent));
            frame.to_image(&h)
        })
        .collect();
    Occlusion { shift, blobs }
}

fn render_occluded(
    out: &mut [f64],
    size: usize,
    frame: &HeatmapFrame,
    center: &Vector2<f64>,
    occ: &Occlusion,
    sigma: f64,
    cfg: &CorruptionConfig,
) {
    let plane = size * size;
    gaussian_channel(out, size, size, &frame.to_heatmap(&(center + occ.shift)), sigma);
    let uniform = (1.0 - cfg.flatten_factor) / plane as f64;
    for v in out.iter_mut() {
        *v = cfg.flatten_factor * *v + uniform;
    }
    let mut blob = vec![0.0; plane];
    for b in &occ.blobs {
        gaussian_channel(&mut blob, size, size, &frame.to_heatmap(b), sigma);
        for (v, g) in out.iter_mut().zip(&blob) {
            *v += cfg.blob_mass * g;
        }
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    } else {
        out.fill(1.0 / plane as f64);
    }
}

/// Returns `scene` with corrupted heatmaps attached; clean heatmaps are kept.
///
/// `ceil(occluded_fraction * K)` channels are occluded. Visible channels are
/// re-rendered around the groundtruth plus i.i.d. Gaussian jitter shared by
/// all heads. Occluded channels get a shifted, flattened Gaussian plus
/// distractor blobs; with `decorrelate_medium` the medium and low heads draw
/// their own shift and blobs, otherwise they reuse the high head's.
pub fn corrupt_scene(scene: &SyntheticScene, cfg: &CorruptionConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = scene.gt_landmarks2d.len();
    let size = scene.heatmaps.high.width();
    let frame = scene.frame;

    let mut occluded: Vec<usize> = rand::seq::index::sample(&mut rng, k, cfg.occluded_count(k)).into_vec();
    occluded.sort_unstable();
    let mut is_occluded = vec![false; k];
    occluded.iter().for_each(|&i| is_occluded[i] = true);

    let jitter_dist = Normal::new(0.0, cfg.landmark_noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let centers: Vec<Vector2<f64>> = scene
        .gt_landmarks2d
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if is_occluded[i] {
                l.coords
            } else {
                l.coords + Vector2::new(jitter_dist.sample(&mut rng), jitter_dist.sample(&mut rng))
            }
        })
        .collect();

    let mut draws_high = vec![None; k];
    for &i in &occluded {
        draws_high[i] = Some(draw_occlusion(&mut rng, cfg, &frame, size));
    }
    let mut draws_for = |level: PrecisionLevel| -> Vec<Option<Occlusion>> {
        if level == PrecisionLevel::High || !cfg.decorrelate_medium {
            return draws_high.clone();
        }
        let mut draws = vec![None; k];
        for &i in &occluded {
            draws[i] = Some(draw_occlusion(&mut rng, cfg, &frame, size));
        }
        draws
    };
    let draws = [
        (PrecisionLevel::High, draws_for(PrecisionLevel::High)),
        (PrecisionLevel::Medium, draws_for(PrecisionLevel::Medium)),
        (PrecisionLevel::Low, draws_for(PrecisionLevel::Low)),
    ];

    let plane = size * size;
    let render = |level: PrecisionLevel| -> Result<HeatmapStack> {
        let level_draws = &draws.iter().find(|(l, _)| *l == level).expect("all levels drawn").1;
        let mut values = vec![0.0; k * plane];
        for (i, out) in values.chunks_exact_mut(plane).enumerate() {
            match &level_draws[i] {
                Some(occ) => render_occluded(out, size, &frame, &centers[i], occ, level.sigma(), cfg),
                None => gaussian_channel(out, size, size, &frame.to_heatmap(&centers[i]), level.sigma()),
            }
        }
        HeatmapStack::new(k, size, size, values, true)
    };
    Ok(SyntheticScene {
        corrupted_heatmaps: Some(LevelStacks::from_fn(render)?),
        occluded_indices: occluded,
        ..scene.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::decode_expectation;
    use approx::assert_relative_eq;

    #[test]
    fn builtin_sizes() {
        assert_eq!(builtin_cloud(BuiltinShape::Cube).len(), 98);
        assert_eq!(builtin_cloud(BuiltinShape::Icosahedron).len(), 62);
        let blob = builtin_cloud(BuiltinShape::Blob);
        assert_eq!(blob.len(), 208);
        assert!(!blob.symmetric);
        assert!(blob.points[..200].iter().all(|p| p.norm() <= HALF_EXTENT));
        for shape in [BuiltinShape::Cube, BuiltinShape::Icosahedron, BuiltinShape::Blob] {
            assert!(builtin_cloud(shape).is_pose_solvable());
            assert_eq!(BuiltinShape::parse(shape.name()).unwrap(), shape);
        }
    }

    #[test]
    fn icosahedron_geometry() {
        let pts = icosahedron_points(1.0);
        assert!(pts[..12].iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        assert!(pts[12..].iter().all(|p| p.norm() < 1.0));
    }

    #[test]
    fn rotations_are_uniform_in_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20000;
        let mut sum = nalgebra::Matrix3::zeros();
        for _ in 0..n {
            sum += random_rotation(&mut rng).to_rotation_matrix().into_inner();
        }
        // The Haar mean of a rotation matrix is zero.
        assert!((sum / n as f64).abs().max() < 0.02);
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig::default().with_seed(5);
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = generate_scene(&cfg.with_seed(6)).unwrap();
        assert_ne!(generate_scene(&cfg).unwrap().gt_pose, other.gt_pose);
    }

    #[test]
    fn scene_invariants() {
        for seed in 0..20 {
            let s = generate_scene(&SceneConfig::default().with_seed(seed)).unwrap();
            let pts: Vec<_> = s.landmarks3d.iter().map(|l| l.coords).collect();
            let proj = project(&pts, &s.gt_pose, &s.intr).unwrap();
            for (l, p) in s.gt_landmarks2d.iter().zip(&proj) {
                assert_eq!(l.coords, *p);
            }
            for p in project(&s.cloud.points, &s.gt_pose, &s.intr).unwrap() {
                assert!(s.bbox.contains_point(p.x, p.y));
            }
            let decoded = decode_expectation(&s.heatmaps.high).to_image(&s.frame);
            for (d, g) in decoded.coords.iter().zip(&s.gt_landmarks2d) {
                assert!((d.coords - g.coords).norm() < 0.05 * s.frame.scale);
            }
        }
    }

    #[test]
    fn impossible_frame_constraint_fails() {
        let cfg = SceneConfig {
            translation_min: [5000.0, 0.0, 600.0],
            translation_max: [5000.0, 0.0, 600.0],
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(&cfg),
            Err(Error::PoseSampling(MAX_POSE_ATTEMPTS))
        ));
    }

    #[test]
    fn null_corruption_is_identity() {
        let s = generate_scene(&SceneConfig::default().with_seed(1)).unwrap();
        let c = corrupt_scene(&s, &CorruptionConfig::none()).unwrap();
        assert_eq!(c.corrupted_heatmaps.as_ref().unwrap(), &s.heatmaps);
        assert!(c.occluded_indices.is_empty());
    }

    #[test]
    fn full_flattening_moves_towards_center() {
        let s = generate_scene(&SceneConfig::default().with_seed(2)).unwrap();
        let cfg = CorruptionConfig {
            occluded_fraction: 1.0,
            flatten_factor: 0.0,
            distractor_blobs: 0,
            ..CorruptionConfig::default()
        };
        let c = corrupt_scene(&s, &cfg).unwrap();
        assert_eq!(c.occluded_indices, (0..11).collect::<Vec<_>>());
        let decoded = decode_expectation(&c.corrupted_heatmaps.unwrap().high);
        for l in &decoded.coords {
            assert_relative_eq!(l.coords, Vector2::new(31.5, 31.5), epsilon = 1e-9);
        }
    }

    #[test]
    fn occluded_count_rounds_up() {
        let cfg = CorruptionConfig::default();
        assert_eq!(cfg.occluded_count(11), 4);
        assert_eq!(CorruptionConfig::none().occluded_count(11), 0);
        let bad = CorruptionConfig {
            occluded_fraction: 1.5,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn correlated_heads_share_occlusions() {
        let s = generate_scene(&SceneConfig::default().with_seed(3)).unwrap();
        let cfg = CorruptionConfig {
            decorrelate_medium: false,
            ..CorruptionConfig::default()
        };
        let c = corrupt_scene(&s, &cfg).unwrap();
        let h = c.corrupted_heatmaps.as_ref().unwrap();
        let high = decode_expectation(&h.high).to_image(&c.frame);
        let medium = decode_expectation(&h.medium).to_image(&c.frame);
        for i in c.occluded_indices {
            // Same draws, different blur: estimates stay within a few pixels.
            assert!((high.coords[i].coords - medium.coords[i].coords).norm() < 5.0);
        }
    }
}
