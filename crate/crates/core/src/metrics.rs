//! Pose accuracy metrics and landmark coherence.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Prediction};
use crate::error::{Error, Result};
use crate::geometry::{Landmark2D, PointCloud, Pose};

/// Default correctness threshold as a fraction of the model diameter.
pub const DEFAULT_FRACTION: f64 = 0.1;
/// Upper end of the AUC threshold sweep, millimetres.
pub const AUC_MAX_THRESHOLD: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceKind {
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "ADD-S")]
    AddS,
}

impl DistanceKind {
    pub fn for_symmetry(symmetric: bool) -> Self {
        if symmetric {
            Self::AddS
        } else {
            Self::Add
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDistance {
    /// Millimetres.
    pub value: f64,
    pub kind: DistanceKind,
}

fn non_empty(cloud: &PointCloud) -> Result<()> {
    if cloud.is_empty() {
        Err(Error::TooFewPoints { needed: 1, got: 0 })
    } else {
        Ok(())
    }
}

/// Mean distance between corresponding model points under both poses.
pub fn add_distance(pred: &Pose, gt: &Pose, cloud: &PointCloud) -> Result<PoseDistance> {
    non_empty(cloud)?;
    let sum: f64 = cloud
        .points
        .iter()
        .map(|p| (pred.transform_point(p) - gt.transform_point(p)).norm())
        .sum();
    Ok(PoseDistance {
        value: sum / cloud.len() as f64,
        kind: DistanceKind::Add,
    })
}

/// Mean closest-point distance from the predicted to the groundtruth model.
///
/// Nearest neighbours come from a sweep over points sorted by `x`; the
/// result is bit-identical to [`adds_distance_brute_force`].
pub fn adds_distance(pred: &Pose, gt: &Pose, cloud: &PointCloud) -> Result<PoseDistance> {
    non_empty(cloud)?;
    let mut targets = gt.transform(&cloud.points);
    targets.sort_by(|a, b| a.x.total_cmp(&b.x));
    let sum: f64 = cloud
        .points
        .iter()
        .map(|p| nearest_sorted(&targets, &pred.transform_point(p)).sqrt())
        .sum();
    Ok(PoseDistance {
        value: sum / cloud.len() as f64,
        kind: DistanceKind::AddS,
    })
}

/// Squared distance from `q` to its nearest neighbour in `sorted` (by `x`).
fn nearest_sorted(sorted: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
    let start = sorted.partition_point(|p| p.x < q.x);
    let mut best = f64::INFINITY;
    for p in &sorted[start..] {
        let dx = p.x - q.x;
        if dx * dx > best {
            break;
        }
        best = best.min((q - p).norm_squared());
    }
    for p in sorted[..start].iter().rev() {
        let dx = q.x - p.x;
        if dx * dx > best {
            break;
        }
        best = best.min((q - p).norm_squared());
    }
    best
}

/// Reference O(n²) evaluation of [`adds_distance`].
pub fn adds_distance_brute_force(pred: &Pose, gt: &Pose, cloud: &PointCloud) -> Result<PoseDistance> {
    non_empty(cloud)?;
    let targets = gt.transform(&cloud.points);
    let sum: f64 = cloud
        .points
        .iter()
        .map(|p| {
            let q = pred.transform_point(p);
            targets
                .iter()
                .map(|t| (q - t).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(PoseDistance {
        value: sum / cloud.len() as f64,
        kind: DistanceKind::AddS,
    })
}

/// ADD for asymmetric clouds, ADD-S for symmetric ones.
pub fn pose_distance(pred: &Pose, gt: &Pose, cloud: &PointCloud) -> Result<PoseDistance> {
    if cloud.symmetric {
        adds_distance(pred, gt, cloud)
    } else {
        add_distance(pred, gt, cloud)
    }
}

/// `dist < fraction * diameter`, strictly.
pub fn pose_correct(dist: &PoseDistance, diameter: f64, fraction: f64) -> bool {
    dist.value < fraction * diameter
}

/// Normalised area under the accuracy-threshold curve on `[0, max_threshold]`.
///
/// Exact for the empirical step function: each sample contributes
/// `max(0, max_threshold - d)`. Infinite distances contribute nothing.
pub fn auc(distances: &[f64], max_threshold: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(max_threshold > 0.0) {
        return Err(Error::InvalidConfig("AUC threshold must be > 0".into()));
    }
    if let Some(d) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidConfig(format!("distances must be >= 0, got {d}")));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let area: f64 = sorted
        .iter()
        .take_while(|&&d| d < max_threshold)
        .fold(0.0, |acc, d| acc + (max_threshold - d));
    Ok(area / (sorted.len() as f64 * max_threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// `|x_i - x_i*|` per landmark, pixels.
    pub residuals: Vec<f64>,
    /// Mean error vector.
    pub mean_error_vector: Vector2<f64>,
    /// `|(x_i - x_i*) - m|` per landmark, pixels.
    pub incoherence: Vec<f64>,
    pub mean_r: f64,
    pub mean_c: f64,
}

/// Residuals of predicted landmarks and their spread around the mean error.
///
/// `pred` and `gt` are paired by position and must carry the same indices.
pub fn coherence(pred: &[Landmark2D], gt: &[Landmark2D]) -> Result<CoherenceReport> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if let Some(position) = pred.iter().zip(gt).position(|(p, g)| p.index != g.index) {
        return Err(Error::IndexMismatch { position });
    }
    let n = pred.len() as f64;
    let errors: Vec<Vector2<f64>> = pred.iter().zip(gt).map(|(p, g)| p.coords - g.coords).collect();
    let m = errors.iter().sum::<Vector2<f64>>() / n;
    let residuals: Vec<f64> = errors.iter().map(|e| e.norm()).collect();
    let incoherence: Vec<f64> = errors.iter().map(|e| (e - m).norm()).collect();
    Ok(CoherenceReport {
        mean_r: residuals.iter().sum::<f64>() / n,
        mean_c: incoherence.iter().sum::<f64>() / n,
        residuals,
        mean_error_vector: m,
        incoherence,
    })
}

/// Outcome for one groundtruth scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub object_id: String,
    /// `None` when no pose was predicted; counted as an infinite distance.
    pub distance_mm: Option<f64>,
    pub correct: bool,
    pub fallback_used: bool,
    pub inliers: usize,
    pub mean_r: Option<f64>,
    pub mean_c: Option<f64>,
}

impl ImageRecord {
    pub fn distance(&self) -> f64 {
        self.distance_mm.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object_id: String,
    pub kind: DistanceKind,
    pub images: usize,
    pub correct: usize,
    /// Percent.
    pub pass_rate: f64,
    /// Percent.
    pub auc: f64,
    pub distances_mm: Vec<Option<f64>>,
    pub mean_r: Option<f64>,
    pub mean_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub missing: usize,
    /// Mean of the per-object pass rates, percent.
    pub mean_pass_rate: f64,
    /// Pass rate over all images, percent.
    pub pooled_pass_rate: f64,
    pub mean_auc: f64,
    pub pooled_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub objects: Vec<ObjectReport>,
    pub images: Vec<ImageRecord>,
    pub aggregate: Aggregate,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores predictions against the manifest.
///
/// Scenes without a prediction, or whose prediction has no pose, count as
/// incorrect with infinite distance. Objects are reported in manifest order.
pub fn evaluate_dataset(
    predictions: &[Prediction],
    manifest: &Manifest,
    clouds: &BTreeMap<String, PointCloud>,
    fraction: f64,
) -> Result<EvaluationReport> {
    if manifest.scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let known: HashSet<&str> = manifest.scenes.iter().map(|s| s.image_id.as_str()).collect();
    let unknown: Vec<String> = predictions
        .iter()
        .filter(|p| !known.contains(p.image_id.as_str()))
        .map(|p| p.image_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownImages(unknown));
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.image_id.as_str(), p).is_some() {
            return Err(Error::format(
                "predictions",
                format!("duplicate image id {}", p.image_id),
            ));
        }
    }
    for scene in &manifest.scenes {
        if manifest.object(&scene.object_id).is_none() || !clouds.contains_key(&scene.object_id) {
            return Err(Error::UnknownObject(scene.object_id.clone()));
        }
    }

    let images: Vec<ImageRecord> = manifest
        .scenes
        .par_iter()
        .map(|scene| {
            let object = manifest.object(&scene.object_id).expect("checked above");
            let cloud = &clouds[&scene.object_id];
            let pred = by_id.get(scene.image_id.as_str());
            let distance = match pred.and_then(|p| p.pose.as_ref()) {
                Some(pose) if object.symmetric => Some(adds_distance(pose, &scene.gt_pose, cloud)?.value),
                Some(pose) => Some(add_distance(pose, &scene.gt_pose, cloud)?.value),
                None => None,
            };
            let correct = distance.is_some_and(|value| {
                pose_correct(
                    &PoseDistance {
                        value,
                        kind: DistanceKind::for_symmetry(object.symmetric),
                    },
                    object.diameter_mm,
                    fraction,
                )
            });
            let coherence = pred
                .filter(|p| !p.landmarks_high.is_empty())
                .map(|p| coherence(&p.landmarks_high, &scene.gt_landmarks))
                .transpose()?;
            Ok(ImageRecord {
                image_id: scene.image_id.clone(),
                object_id: scene.object_id.clone(),
                distance_mm: distance,
                correct,
                fallback_used: pred.is_some_and(|p| p.fallback_used),
                inliers: pred.map_or(0, |p| p.inliers.len()),
                mean_r: coherence.as_ref().map(|c| c.mean_r),
                mean_c: coherence.as_ref().map(|c| c.mean_c),
            })
        })
        .collect::<Result<_>>()?;

    let mut objects = Vec::new();
    for object in &manifest.objects {
        let rows: Vec<&ImageRecord> = images.iter().filter(|r| r.object_id == object.id).collect();
        if rows.is_empty() {
            continue;
        }
        let distances: Vec<f64> = rows.iter().map(|r| r.distance()).collect();
        let correct = rows.iter().filter(|r| r.correct).count();
        objects.push(ObjectReport {
            object_id: object.id.clone(),
            kind: DistanceKind::for_symmetry(object.symmetric),
            images: rows.len(),
            correct,
            pass_rate: 100.0 * correct as f64 / rows.len() as f64,
            auc: 100.0 * auc(&distances, AUC_MAX_THRESHOLD)?,
            distances_mm: rows.iter().map(|r| r.distance_mm).collect(),
            mean_r: mean_defined(rows.iter().map(|r| r.mean_r)),
            mean_c: mean_defined(rows.iter().map(|r| r.mean_c)),
        });
    }

    let all: Vec<f64> = images.iter().map(|r| r.distance()).collect();
    let n_obj = objects.len() as f64;
    let aggregate = Aggregate {
        images: images.len(),
        missing: images.iter().filter(|r| r.distance_mm.is_none()).count(),
        mean_pass_rate: objects.iter().map(|o| o.pass_rate).sum::<f64>() / n_obj,
        pooled_pass_rate: 100.0 * images.iter().filter(|r| r.correct).count() as f64 / images.len() as f64,
        mean_auc: objects.iter().map(|o| o.auc).sum::<f64>() / n_obj,
        pooled_auc: 100.0 * auc(&all, AUC_MAX_THRESHOLD)?,
    };
    Ok(EvaluationReport {
        objects,
        images,
        aggregate,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format("csv", format!("{other:?}")),
    }
}

/// One row per scene; missing distances are written as `inf`.
pub fn write_report_csv(report: &EvaluationReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "image_id",
        "object_id",
        "distance_mm",
        "correct",
        "fallback_used",
        "inliers",
        "mean_r",
        "mean_c",
    ])
    .map_err(csv_error)?;
    for r in &report.images {
        out.write_record([
            r.image_id.clone(),
            r.object_id.clone(),
            r.distance_mm.map_or_else(|| "inf".to_string(), |d| d.to_string()),
            r.correct.to_string(),
            r.fallback_used.to_string(),
            r.inliers.to_string(),
            opt_cell(r.mean_r),
            opt_cell(r.mean_c),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Residual-versus-incoherence data per object.
pub fn write_bubble_csv(report: &EvaluationReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["object_id", "mean_r", "mean_c", "n"])
        .map_err(csv_error)?;
    for o in &report.objects {
        let n = report
            .images
            .iter()
            .filter(|r| r.object_id == o.object_id && r.mean_r.is_some())
            .count();
        out.write_record([
            o.object_id.clone(),
            opt_cell(o.mean_r),
            opt_cell(o.mean_c),
            n.to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                )
            })
            .collect();
        PointCloud::new(pts, false)
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::from_axis_angle(
            &Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
            Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(400.0..900.0),
            ),
        )
    }

    #[test]
    fn add_of_identical_poses_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cloud = random_cloud(&mut rng, 50);
        let pose = random_pose(&mut rng);
        assert_eq!(add_distance(&pose, &pose, &cloud).unwrap().value, 0.0);
        assert_eq!(adds_distance(&pose, &pose, &cloud).unwrap().value, 0.0);
    }

    #[test]
    fn add_of_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = random_cloud(&mut rng, 30);
        let gt = random_pose(&mut rng);
        let pred = gt.then(&Pose::from_translation(Vector3::new(3.0, 4.0, 0.0)));
        assert_relative_eq!(add_distance(&pred, &gt, &cloud).unwrap().value, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn add_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = random_cloud(&mut rng, 40);
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let mut total = 0.0;
        for p in &cloud.points {
            let pa = a.rotation() * p + a.translation();
            let pb = b.rotation() * p + b.translation();
            total += ((pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2) + (pa.z - pb.z).powi(2)).sqrt();
        }
        assert_relative_eq!(
            add_distance(&a, &b, &cloud).unwrap().value,
            total / 40.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn adds_sees_through_symmetry() {
        let mut pts = Vec::new();
        for i in -5..=5 {
            for j in -5..=5 {
                pts.push(Vector3::new(i as f64 * 10.0, j as f64 * 10.0, 0.0));
            }
        }
        let cloud = PointCloud::new(pts, true);
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 500.0));
        let quarter = Pose::from_axis_angle(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), Vector3::zeros());
        let pred = quarter.then(&gt);
        assert!(adds_distance(&pred, &gt, &cloud).unwrap().value < 1e-9);
        assert!(add_distance(&pred, &gt, &cloud).unwrap().value > 10.0);
    }

    #[test]
    fn adds_sweep_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..300);
            let cloud = random_cloud(&mut rng, n);
            let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
            let fast = adds_distance(&a, &b, &cloud).unwrap();
            let slow = adds_distance_brute_force(&a, &b, &cloud).unwrap();
            assert_eq!(fast, slow);
            assert!(fast.value <= add_distance(&a, &b, &cloud).unwrap().value);
        }
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let cloud = PointCloud::new(Vec::new(), false);
        let p = Pose::identity();
        assert!(add_distance(&p, &p, &cloud).is_err());
        assert!(adds_distance(&p, &p, &cloud).is_err());
    }

    #[test]
    fn correctness_threshold_is_strict() {
        let d = |value| PoseDistance {
            value,
            kind: DistanceKind::Add,
        };
        assert!(pose_correct(&d(0.0), 1.0, DEFAULT_FRACTION));
        assert!(!pose_correct(&d(10.0), 100.0, DEFAULT_FRACTION));
        assert!(pose_correct(&d(9.0), 100.0, DEFAULT_FRACTION));
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.0, 0.0], 100.0).unwrap(), 1.0);
        let none = auc(&[100.0, 250.0, f64::INFINITY], 100.0).unwrap();
        assert_eq!(none, 0.0);
        assert!(none.is_sign_positive());
        assert_eq!(auc(&[50.0], 100.0).unwrap(), 0.5);
        assert!(auc(&[], 100.0).is_err());
        assert!(auc(&[-1.0], 100.0).is_err());
        assert!(auc(&[f64::NAN], 100.0).is_err());
    }

    #[test]
    fn coherence_cases() {
        let gt = [Landmark2D::new(0, 10.0, 10.0), Landmark2D::new(1, 20.0, 5.0)];
        let pred = [Landmark2D::new(0, 12.0, 10.0), Landmark2D::new(1, 20.0, 5.0)];
        let c = coherence(&pred, &gt).unwrap();
        assert_eq!(c.mean_error_vector, Vector2::new(1.0, 0.0));
        assert_eq!(c.residuals, vec![2.0, 0.0]);
        assert_eq!(c.incoherence, vec![1.0, 1.0]);

        let shifted: Vec<_> = gt
            .iter()
            .map(|l| Landmark2D::new(l.index, l.coords.x + 3.0, l.coords.y - 4.0))
            .collect();
        let c = coherence(&shifted, &gt).unwrap();
        assert_eq!(c.incoherence, vec![0.0, 0.0]);
        assert_eq!(c.residuals, vec![5.0, 5.0]);

        assert!(coherence(&pred[..1], &gt).is_err());
        assert!(coherence(&[], &[]).is_err());
        let swapped = [pred[1], pred[0]];
        assert!(matches!(
            coherence(&swapped, &gt),
            Err(Error::IndexMismatch { position: 0 })
        ));
    }
}
