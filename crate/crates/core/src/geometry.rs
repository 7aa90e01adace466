//! Rigid poses, pinhole projection and point-cloud utilities.
//!
//! Units are millimetres for every 3D quantity and pixels for every 2D one.
//! Image coordinates have their origin at the centre of the top-left pixel,
//! with +x to the right and +y down.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used to validate rotation matrices on construction.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Smallest camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-6;

/// Rigid transform from the object frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOLERANCE)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from an arbitrary 3x3 matrix by projecting it onto SO(3).
    pub fn from_nearest_rotation(matrix: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let rotation =
            nearest_rotation(matrix).ok_or_else(|| Error::InvalidPose("rotation projection failed".into()))?;
        Self::new(rotation, translation)
    }

    /// Rotation by the axis-angle vector `omega` (radians) followed by `translation`.
    pub fn from_axis_angle(omega: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: exp_so3(omega),
            translation,
        }
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        transform(self, points)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Pose) -> Pose {
        compose(self, next)
    }

    pub fn inverse(&self) -> Pose {
        invert(self)
    }

    /// Angle of the relative rotation between two poses, in radians.
    pub fn rotation_error(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    /// Euclidean distance between the translations, in millimetres.
    pub fn translation_error(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: self.rotation_row_major(),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let rotation = Matrix3::from_row_slice(&repr.rotation);
        let translation = Vector3::from(repr.translation);
        // Hand-written poses rarely carry 1e-9 orthonormality; snap those
        // within 1e-6 onto SO(3) and reject anything further away.
        let pose = match check_rotation(&rotation, ROTATION_TOLERANCE) {
            Ok(()) => Pose::new(rotation, translation),
            Err(_) => check_rotation(&rotation, 1e-6).and_then(|_| Pose::from_nearest_rotation(&rotation, translation)),
        };
        pose.map_err(serde::de::Error::custom)
    }
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidPose("non-finite rotation".into()));
    }
    let gram = r.transpose() * r - Matrix3::identity();
    if gram.amax() > tol {
        return Err(Error::InvalidPose(format!(
            "rotation not orthonormal (max deviation {:e})",
            gram.amax()
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidPose(format!("rotation determinant {det}")));
    }
    Ok(())
}

/// Closest rotation in the Frobenius sense, or `None` if the SVD fails.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Some(u * d * v_t)
}

/// Rodrigues' formula.
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*omega).into_inner()
}

/// Rotation angle of `r` in radians, in `[0, pi]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // The trace formula loses precision near zero, so use the skew part there.
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * skew.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

/// Pinhole camera intrinsics, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidIntrinsics("non-finite principal point".into()));
        }
        Ok(())
    }

    /// Projects a camera-frame point; the caller guarantees positive depth.
    #[inline]
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Unit-depth ray through a pixel.
    #[inline]
    pub fn unproject_unit_depth(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }
}

/// An object model; `symmetric` selects ADD-S over ADD during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub symmetric: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, symmetric: bool) -> Self {
        Self { points, symmetric }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.points.iter().sum();
        sum / self.points.len().max(1) as f64
    }

    pub fn diameter(&self) -> Result<f64> {
        diameter(self)
    }

    /// Whether the cloud has at least four points spanning 3D space.
    pub fn is_pose_solvable(&self) -> bool {
        if self.points.len() < 4 {
            return false;
        }
        let c = self.centroid();
        let mut cov = Matrix3::zeros();
        for p in &self.points {
            let d = p - c;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigenvalues();
        let max = eig.amax();
        max > 0.0 && eig.min() > 1e-12 * max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark3D {
    pub index: usize,
    pub coords: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark2D {
    pub index: usize,
    pub coords: Vector2<f64>,
}

impl Landmark2D {
    pub fn new(index: usize, x: f64, y: f64) -> Self {
        Self {
            index,
            coords: Vector2::new(x, y),
        }
    }
}

/// Wraps plain 2D points as landmarks indexed by position.
pub fn landmarks_2d(points: &[Vector2<f64>]) -> Vec<Landmark2D> {
    points
        .iter()
        .enumerate()
        .map(|(index, &coords)| Landmark2D { index, coords })
        .collect()
}

/// Projects object-frame points to pixels.
pub fn project(points: &[Vector3<f64>], pose: &Pose, intr: &CameraIntrinsics) -> Result<Vec<Vector2<f64>>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let pc = pose.transform_point(p);
            if pc.z > MIN_DEPTH {
                Ok(intr.project_camera_point(&pc))
            } else {
                Err(Error::BehindCamera { index, depth: pc.z })
            }
        })
        .collect()
}

/// Back-projects a pixel at a known camera-frame depth.
pub fn unproject(pixel: &Vector2<f64>, depth: f64, intr: &CameraIntrinsics) -> Vector3<f64> {
    intr.unproject_unit_depth(pixel) * depth
}

pub fn transform(pose: &Pose, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| pose.transform_point(p)).collect()
}

/// The pose that applies `first` and then `second`.
pub fn compose(first: &Pose, second: &Pose) -> Pose {
    Pose::from_parts_unchecked(
        second.rotation * first.rotation,
        second.rotation * first.translation + second.translation,
    )
}

pub fn invert(pose: &Pose) -> Pose {
    let rt = pose.rotation.transpose();
    Pose::from_parts_unchecked(rt, -(rt * pose.translation))
}

/// Largest pairwise distance between cloud points.
pub fn diameter(cloud: &PointCloud) -> Result<f64> {
    let pts = &cloud.points;
    if pts.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: pts.len(),
        });
    }
    let mut best = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    Ok(best.sqrt())
}

/// Greedy farthest point sampling.
///
/// The first pick is the point farthest from the centroid; every further pick
/// maximises the distance to the already selected set. Ties go to the lowest
/// point index. Returned landmarks are numbered in selection order.
pub fn fps_select(cloud: &PointCloud, k: usize) -> Result<Vec<Landmark3D>> {
    let pts = &cloud.points;
    if k == 0 {
        return Err(Error::InvalidConfig("fps needs k >= 1".into()));
    }
    if k > pts.len() {
        return Err(Error::TooFewPoints {
            needed: k,
            got: pts.len(),
        });
    }
    let centroid = cloud.centroid();
    let seed = argmax_first(pts.iter().map(|p| (p - centroid).norm_squared()));

    let mut selected = Vec::with_capacity(k);
    let mut min_dist = vec![f64::INFINITY; pts.len()];
    let mut next = seed;
    for index in 0..k {
        selected.push(Landmark3D {
            index,
            coords: pts[next],
        });
        let chosen = pts[next];
        for (d, p) in min_dist.iter_mut().zip(pts) {
            *d = d.min((p - chosen).norm_squared());
        }
        next = argmax_first(min_dist.iter().copied());
    }
    Ok(selected)
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
