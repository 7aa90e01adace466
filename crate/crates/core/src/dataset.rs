//! On-disk dataset layout: manifest, heatmap files and predictions.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/heatmaps/<image_id>_<level>.rhmp
//! ```
//!
//! Paths inside the manifest are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps_select, CameraIntrinsics, Landmark2D, Landmark3D, PointCloud, Pose};
use crate::heatmap::{HeatmapFrame, HeatmapStack, PrecisionLevel};
use crate::oba::{derived_seed, BBox};
use crate::synth::{corrupt_scene, generate_scene_for, BuiltinShape, CloudSource, CorruptionConfig, SceneConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const HEATMAP_DIR: &str = "heatmaps";
/// Offset separating corruption seeds from scene seeds.
pub const CORRUPTION_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<BuiltinShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ply_path: Option<String>,
    pub symmetric: bool,
    pub diameter_mm: f64,
    pub landmarks: Vec<Landmark3D>,
}

impl ObjectEntry {
    pub fn source(&self, base: &Path) -> Result<CloudSource> {
        match (&self.builtin, &self.ply_path) {
            (Some(shape), None) => Ok(CloudSource::Builtin(*shape)),
            (None, Some(path)) => Ok(CloudSource::Ply {
                path: base.join(path),
                symmetric: self.symmetric,
            }),
            _ => Err(Error::format(
                "manifest",
                format!("object {} needs exactly one of builtin and ply_path", self.id),
            )),
        }
    }

    pub fn load_cloud(&self, base: &Path) -> Result<PointCloud> {
        let mut cloud = self.source(base)?.load()?;
        cloud.symmetric = self.symmetric;
        Ok(cloud)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapPaths {
    pub low: String,
    pub medium: String,
    pub high: String,
}

impl HeatmapPaths {
    pub fn for_image(image_id: &str) -> Self {
        let path = |level: PrecisionLevel| format!("{HEATMAP_DIR}/{image_id}_{}.rhmp", level.name());
        Self {
            low: path(PrecisionLevel::Low),
            medium: path(PrecisionLevel::Medium),
            high: path(PrecisionLevel::High),
        }
    }

    pub fn get(&self, level: PrecisionLevel) -> &str {
        match level {
            PrecisionLevel::Low => &self.low,
            PrecisionLevel::Medium => &self.medium,
            PrecisionLevel::High => &self.high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub image_id: String,
    pub object_id: String,
    pub gt_pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub image_width: usize,
    pub image_height: usize,
    pub bbox: BBox,
    /// Heatmap-to-image mapping of the region of interest.
    pub roi: HeatmapFrame,
    pub heatmap_paths: HeatmapPaths,
    pub gt_landmarks: Vec<Landmark2D>,
    #[serde(default)]
    pub occluded_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub objects: Vec<ObjectEntry>,
    pub scenes: Vec<SceneEntry>,
    /// Corruption applied to the stored heatmaps, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionConfig>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(&fs::read(path)?)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn object(&self, id: &str) -> Option<&ObjectEntry> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Unique ids and resolvable object references.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.id.as_str()) {
                return Err(Error::format("manifest", format!("duplicate object id {}", o.id)));
            }
            if !(o.diameter_mm > 0.0) {
                return Err(Error::format(
                    "manifest",
                    format!("object {} has no positive diameter", o.id),
                ));
            }
        }
        let mut images = std::collections::HashSet::new();
        for s in &self.scenes {
            if !images.insert(s.image_id.as_str()) {
                return Err(Error::format("manifest", format!("duplicate image id {}", s.image_id)));
            }
            if self.object(&s.object_id).is_none() {
                return Err(Error::UnknownObject(s.object_id.clone()));
            }
        }
        Ok(())
    }

    /// Loads every object cloud, keyed by object id.
    pub fn load_clouds(&self, base: &Path) -> Result<BTreeMap<String, PointCloud>> {
        self.objects
            .iter()
            .map(|o| Ok((o.id.clone(), o.load_cloud(base)?)))
            .collect()
    }
}

/// Directory that manifest-relative paths resolve against.
pub fn manifest_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_stack(path: &Path) -> Result<HeatmapStack> {
    HeatmapStack::read_rhmp(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn write_stack(path: &Path, stack: &HeatmapStack) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    stack.write_rhmp(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Pipeline output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub pose: Option<Pose>,
    #[serde(default)]
    pub landmarks_high: Vec<Landmark2D>,
    #[serde(default)]
    pub landmarks_medium: Vec<Landmark2D>,
    #[serde(default)]
    pub fallback_used: bool,
    #[serde(default)]
    pub inliers: Vec<usize>,
    #[serde(default)]
    pub kept_indices: Vec<usize>,
    #[serde(default)]
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    pub fn failed(image_id: &str, error: impl ToString) -> Self {
        Self {
            image_id: image_id.to_string(),
            pose: None,
            landmarks_high: Vec::new(),
            landmarks_medium: Vec::new(),
            fallback_used: false,
            inliers: Vec::new(),
            kept_indices: Vec::new(),
            valid: false,
            error: Some(error.to_string()),
        }
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_json(path, predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scenes: usize,
    /// Objects are assigned to scenes round-robin.
    pub objects: Vec<CloudSource>,
    pub scene: SceneConfig,
    pub corruption: Option<CorruptionConfig>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenes: 10,
            objects: vec![CloudSource::Builtin(BuiltinShape::Blob)],
            scene: SceneConfig::default(),
            corruption: None,
            seed: 0,
        }
    }
}

fn object_id(source: &CloudSource) -> String {
    match source {
        CloudSource::Builtin(shape) => shape.name().to_string(),
        CloudSource::Ply { path, .. } => path
            .file_stem()
            .map_or_else(|| "object".to_string(), |s| s.to_string_lossy().into_owned()),
    }
}

/// Writes a synthetic dataset under `out_dir` and returns its manifest.
///
/// Scene `i` uses seed `seed ^ i`; the output is a pure function of `cfg`.
pub fn generate_dataset(out_dir: &Path, cfg: &DatasetConfig) -> Result<Manifest> {
    if cfg.scenes == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.objects.is_empty() {
        return Err(Error::InvalidConfig("at least one object is required".into()));
    }
    cfg.scene.validate()?;
    if let Some(c) = &cfg.corruption {
        c.validate()?;
    }
    fs::create_dir_all(out_dir.join(HEATMAP_DIR))?;

    let mut objects = Vec::new();
    let mut models = Vec::new();
    for source in &cfg.objects {
        let cloud = source.load()?;
        let landmarks = fps_select(&cloud, cfg.scene.n_landmarks)?;
        let id = object_id(source);
        if objects.iter().any(|o: &ObjectEntry| o.id == id) {
            return Err(Error::InvalidConfig(format!("object {id} listed twice")));
        }
        let ply_path = match source {
            CloudSource::Ply { path, .. } => {
                let file = format!("{id}.ply");
                fs::copy(path, out_dir.join(&file))?;
                Some(file)
            }
            CloudSource::Builtin(_) => None,
        };
        objects.push(ObjectEntry {
            id,
            builtin: match source {
                CloudSource::Builtin(shape) => Some(*shape),
                CloudSource::Ply { .. } => None,
            },
            ply_path,
            symmetric: cloud.symmetric,
            diameter_mm: cloud.diameter()?,
            landmarks: landmarks.clone(),
        });
        models.push((cloud, landmarks));
    }

    let scenes = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| {
            let seed = derived_seed(cfg.seed, i);
            let (cloud, landmarks) = &models[i % models.len()];
            let mut scene = generate_scene_for(cloud, landmarks, &cfg.scene.with_seed(seed))?;
            if let Some(c) = &cfg.corruption {
                scene = corrupt_scene(&scene, &c.with_seed(seed.wrapping_add(CORRUPTION_SEED_OFFSET)))?;
            }
            let image_id = format!("{i:06}");
            let paths = HeatmapPaths::for_image(&image_id);
            for level in PrecisionLevel::ALL {
                write_stack(&out_dir.join(paths.get(level)), scene.observed().get(level))?;
            }
            Ok(SceneEntry {
                image_id,
                object_id: objects[i % objects.len()].id.clone(),
                gt_pose: scene.gt_pose,
                intrinsics: scene.intr,
                image_width: scene.image_width,
                image_height: scene.image_height,
                bbox: scene.bbox,
                roi: scene.frame,
                heatmap_paths: paths,
                gt_landmarks: scene.gt_landmarks2d,
                occluded_indices: scene.occluded_indices,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        objects,
        scenes,
        corruption: cfg.corruption,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
