//! End-to-end pose estimation from predicted heatmaps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_stack, Manifest, Prediction, SceneEntry};
use crate::error::{Error, Result};
use crate::filter::{filter_landmarks, FilterConfig, FilteredCorrespondences};
use crate::geometry::{CameraIntrinsics, Landmark2D, Landmark3D, Pose};
use crate::heatmap::{decode_argmax, decode_expectation, DecodedLandmarks, HeatmapFrame, HeatmapStack, PrecisionLevel};
use crate::pnp::{ransac_pnp, PnpResult, RansacConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Expectation,
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub ransac: RansacConfig,
    pub decode: DecodeMode,
    /// Hand every landmark to the solver without verification.
    pub no_filter: bool,
    /// Ignore the medium-precision head; all landmarks are kept.
    pub single_precision: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Only set when RANSAC found a consensus of at least four points.
    pub pose: Option<Pose>,
    pub high: DecodedLandmarks,
    pub medium: Option<DecodedLandmarks>,
    pub filtered: FilteredCorrespondences,
    pub pnp: PnpResult,
}

fn decode(stack: &HeatmapStack, frame: &HeatmapFrame, mode: DecodeMode, level: PrecisionLevel) -> DecodedLandmarks {
    match mode {
        DecodeMode::Expectation => decode_expectation(stack),
        DecodeMode::Argmax => decode_argmax(stack),
    }
    .with_level(level)
    .to_image(frame)
}

/// Decode, verify and solve for one region of interest.
pub fn estimate_pose(
    high: &HeatmapStack,
    medium: Option<&HeatmapStack>,
    frame: &HeatmapFrame,
    model: &[Landmark3D],
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<Estimate> {
    let high = decode(high, frame, cfg.decode, PrecisionLevel::High);
    let medium = medium
        .filter(|_| !cfg.single_precision)
        .map(|m| decode(m, frame, cfg.decode, PrecisionLevel::Medium));
    let filtered = match &medium {
        Some(m) if !cfg.no_filter => filter_landmarks(&high, m, model, &cfg.filter)?,
        _ => FilteredCorrespondences::unfiltered(&high, model)?,
    };
    let pnp = ransac_pnp(&filtered.pairs, intr, &cfg.ransac)?;
    Ok(Estimate {
        pose: pnp.valid.then_some(pnp.pose),
        high,
        medium,
        filtered,
        pnp,
    })
}

fn run_entry(entry: &SceneEntry, base: &Path, model: &[Landmark3D], cfg: &PipelineConfig) -> Result<Prediction> {
    let high = read_stack(&base.join(&entry.heatmap_paths.high))?;
    let medium = if cfg.single_precision {
        None
    } else {
        Some(read_stack(&base.join(&entry.heatmap_paths.medium))?)
    };
    let est = estimate_pose(&high, medium.as_ref(), &entry.roi, model, &entry.intrinsics, cfg)?;
    let coords = |d: &DecodedLandmarks| -> Vec<Landmark2D> { d.coords.clone() };
    Ok(Prediction {
        image_id: entry.image_id.clone(),
        pose: est.pose,
        landmarks_high: coords(&est.high),
        landmarks_medium: est.medium.as_ref().map(coords).unwrap_or_default(),
        fallback_used: est.filtered.fallback_used,
        inliers: est.pnp.inlier_indices.clone(),
        kept_indices: est.filtered.kept_indices.clone(),
        valid: est.pnp.valid,
        error: (!est.pnp.valid).then(|| "no consensus of four inliers".to_string()),
    })
}

/// Runs the pipeline on one manifest scene; failures are recorded in the
/// prediction instead of aborting.
pub fn run_scene(manifest: &Manifest, entry: &SceneEntry, base: &Path, cfg: &PipelineConfig) -> Prediction {
    let Some(object) = manifest.object(&entry.object_id) else {
        return Prediction::failed(&entry.image_id, Error::UnknownObject(entry.object_id.clone()));
    };
    run_entry(entry, base, &object.landmarks, cfg).unwrap_or_else(|e| Prediction::failed(&entry.image_id, e))
}

/// Predictions for every scene, in manifest order.
pub fn run_dataset(manifest: &Manifest, base: &Path, cfg: &PipelineConfig) -> Result<Vec<Prediction>> {
    cfg.filter.validate()?;
    cfg.ransac.validate()?;
    if manifest.scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(manifest
        .scenes
        .par_iter()
        .map(|entry| run_scene(manifest, entry, base, cfg))
        .collect())
}
