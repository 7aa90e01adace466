//! Robust pose from 2D-3D correspondences.
//!
//! [`ransac_pnp`] samples four correspondences at a time, solves the minimal
//! problem with [`minimal_pnp`], scores hypotheses by reprojection inliers and
//! polishes the winner with [`refine_pose`] on its inlier set.

mod p3p;
mod refine;

pub use p3p::{align_points, p3p, solve_quartic};
pub use refine::{
    apply_increment, refine_pose, refine_pose_with_report, reprojection_cost, reprojection_jacobian,
    reprojection_residual, RefineReport,
};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Correspondence;
use crate::geometry::{CameraIntrinsics, Pose, MIN_DEPTH};

/// Iteration cap of the final refinement.
pub const REFINE_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the reprojection error, pixels.
    pub reproj_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            reproj_threshold: 3.0,
            confidence: 0.999,
            max_iterations: 1000,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reproj_threshold > 0.0) {
            return Err(Error::InvalidConfig("reprojection threshold must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpResult {
    pub pose: Pose,
    /// Landmark indices of the inliers, ascending.
    pub inlier_indices: Vec<usize>,
    /// Mean reprojection error over the inliers, pixels.
    pub mean_reproj_error: f64,
    pub iterations_run: usize,
    /// False when no hypothesis reached four inliers; `pose` is then a
    /// best-effort estimate (identity if no hypothesis existed at all).
    pub valid: bool,
}

/// Candidate poses from exactly four correspondences.
///
/// Three of the points (the best-conditioned triangle) feed the P3P solver;
/// the fourth ranks the candidates by its reprojection error, best first.
/// Candidates placing any of the four points behind the camera are dropped.
/// Degenerate (collinear) configurations yield an empty list.
pub fn minimal_pnp(corr: &[Correspondence], intr: &CameraIntrinsics) -> Result<Vec<Pose>> {
    if corr.len() != 4 {
        return Err(Error::LengthMismatch {
            expected: 4,
            got: corr.len(),
        });
    }
    // Pick the triangle with the largest area; the remaining point disambiguates.
    let area = |i: usize, j: usize, k: usize| {
        (corr[j].object - corr[i].object)
            .cross(&(corr[k].object - corr[i].object))
            .norm()
    };
    let triples = [(0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 3, 1), (1, 2, 3, 0)];
    let (best, best_area) = triples.iter().map(|&(i, j, k, l)| ((i, j, k, l), area(i, j, k))).fold(
        ((0, 1, 2, 3), f64::NEG_INFINITY),
        |acc, x| if x.1 > acc.1 { x } else { acc },
    );
    let extent = corr
        .iter()
        .map(|c| (c.object - corr[0].object).norm())
        .fold(0.0, f64::max);
    if !(best_area > 1e-9 * extent * extent) {
        return Ok(Vec::new());
    }
    let (i, j, k, l) = best;
    let bearing = |c: &Correspondence| intr.unproject_unit_depth(&c.image).normalize();
    let world = [corr[i].object, corr[j].object, corr[k].object];
    let rays = [bearing(&corr[i]), bearing(&corr[j]), bearing(&corr[k])];

    let mut scored: Vec<(f64, Pose)> = Vec::new();
    for (r, t) in p3p(&world, &rays) {
        let Ok(pose) = Pose::new(r, t) else {
            continue;
        };
        if corr.iter().any(|c| pose.transform_point(&c.object).z <= MIN_DEPTH) {
            continue;
        }
        let Some(err) = reprojection_residual(&pose, &corr[l].object, &corr[l].image, intr) else {
            continue;
        };
        let duplicate = scored
            .iter()
            .any(|(_, p)| p.rotation_error(&pose) < 1e-9 && p.translation_error(&pose) < 1e-9 * (1.0 + t.norm()));
        if !duplicate {
            scored.push((err.norm(), pose));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(scored.into_iter().map(|(_, p)| p).collect())
}

/// Number of iterations needed to draw one all-inlier minimal sample with
/// the requested confidence, given the inlier ratio.
pub fn required_iterations(inlier_ratio: f64, confidence: f64, sample_size: usize) -> usize {
    let p_good = inlier_ratio.powi(sample_size as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

struct Score {
    inliers: Vec<usize>,
    mean_error: f64,
}

impl Score {
    fn beats(&self, other: &Score) -> bool {
        self.inliers.len() > other.inliers.len()
            || (self.inliers.len() == other.inliers.len() && self.mean_error < other.mean_error)
    }
}

/// Reprojection error of every correspondence; infinite behind the camera.
pub fn reprojection_errors(pose: &Pose, corr: &[Correspondence], intr: &CameraIntrinsics) -> Vec<f64> {
    corr.iter()
        .map(|c| reprojection_residual(pose, &c.object, &c.image, intr).map_or(f64::INFINITY, |r| r.norm()))
        .collect()
}

fn score(pose: &Pose, corr: &[Correspondence], intr: &CameraIntrinsics, threshold: f64) -> Score {
    let errors = reprojection_errors(pose, corr, intr);
    let inliers: Vec<usize> = (0..corr.len()).filter(|&i| errors[i] <= threshold).collect();
    let mean_error = if inliers.is_empty() {
        f64::INFINITY
    } else {
        inliers.iter().map(|&i| errors[i]).sum::<f64>() / inliers.len() as f64
    };
    Score { inliers, mean_error }
}

/// RANSAC over minimal solves followed by refinement on the best inlier set.
///
/// The result is a pure function of the inputs; the sampling sequence comes
/// from a `ChaCha8Rng` seeded with `cfg.seed`.
pub fn ransac_pnp(corr: &[Correspondence], intr: &CameraIntrinsics, cfg: &RansacConfig) -> Result<PnpResult> {
    cfg.validate()?;
    if corr.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: corr.len(),
        });
    }
    let n = corr.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Pose, Score)> = None;
    let mut bound = cfg.max_iterations;
    let mut iterations = 0;

    while iterations < bound {
        iterations += 1;
        let sample = rand::seq::index::sample(&mut rng, n, 4);
        let minimal: Vec<Correspondence> = sample.iter().map(|i| corr[i]).collect();
        for pose in minimal_pnp(&minimal, intr)? {
            let s = score(&pose, corr, intr, cfg.reproj_threshold);
            if best.as_ref().is_none_or(|(_, b)| s.beats(b)) {
                let ratio = s.inliers.len() as f64 / n as f64;
                bound = cfg.max_iterations.min(required_iterations(ratio, cfg.confidence, 4));
                best = Some((pose, s));
            }
        }
    }

    let to_indices = |s: &Score| s.inliers.iter().map(|&i| corr[i].index).collect::<Vec<_>>();
    let Some((hypothesis, hyp_score)) = best else {
        return Ok(PnpResult {
            pose: Pose::identity(),
            inlier_indices: Vec::new(),
            mean_reproj_error: f64::INFINITY,
            iterations_run: iterations,
            valid: false,
        });
    };
    if hyp_score.inliers.len() < 4 {
        return Ok(PnpResult {
            pose: hypothesis,
            inlier_indices: to_indices(&hyp_score),
            mean_reproj_error: hyp_score.mean_error,
            iterations_run: iterations,
            valid: false,
        });
    }

    let inlier_corr: Vec<Correspondence> = hyp_score.inliers.iter().map(|&i| corr[i]).collect();
    let (pose, final_score) = match refine_pose(&hypothesis, &inlier_corr, intr, REFINE_MAX_ITERS) {
        Ok(refined) => {
            let s = score(&refined, corr, intr, cfg.reproj_threshold);
            if s.inliers.len() >= 4 {
                (refined, s)
            } else {
                (hypothesis, hyp_score)
            }
        }
        Err(_) => (hypothesis, hyp_score),
    };
    Ok(PnpResult {
        pose,
        inlier_indices: to_indices(&final_score),
        mean_reproj_error: final_score.mean_error,
        iterations_run: iterations,
        valid: true,
    })
}

/// Correspondences from object points observed under `pose`.
pub fn synthesize_correspondences(
    points: &[Vector3<f64>],
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<Vec<Correspondence>> {
    let pixels = crate::geometry::project(points, pose, intr)?;
    Ok(points
        .iter()
        .zip(pixels)
        .enumerate()
        .map(|(index, (&object, image))| Correspondence { index, image, object })
        .collect())
}
