//! Occlude-and-blackout batch augmentation.
//!
//! The object bounding box is split into a grid of patches. Each patch is
//! independently replaced, with some probability, either by uniform noise or
//! by a same-sized patch copied from a random location of the original image.
//! Everything outside the box is then set to zero.
//!
//! Randomness comes from [`ChaCha8Rng`] (the ChaCha stream cipher with 8
//! rounds, as implemented by `rand_chacha`) seeded through
//! `SeedableRng::seed_from_u64`. Draws happen in a fixed order: patches are
//! visited row-major and each patch draws its occlusion coin, then its mode
//! coin, then either the noise bytes (row-major, R, G, B per pixel) or the
//! source x and y.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch("image dimensions must be >= 1".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }
}

/// Axis-aligned box, `[x0, x1) x [y0, y1)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn whole(img: &ImageBuffer) -> Self {
        Self::new(0, 0, img.width, img.height)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bbox {self:?} is not inside a {width}x{height} image"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObaConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Probability that a patch is replaced.
    pub p_occlude: f64,
    /// Probability that a replaced patch becomes noise rather than a copy.
    pub p_noise_vs_patch: f64,
    pub seed: u64,
}

impl Default for ObaConfig {
    fn default() -> Self {
        Self {
            grid_rows: 4,
            grid_cols: 4,
            p_occlude: 0.5,
            p_noise_vs_patch: 0.5,
            seed: 0,
        }
    }
}

impl ObaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::InvalidConfig(
                "OBA grid needs at least one row and column".into(),
            ));
        }
        for (name, p) in [
            ("p_occlude", self.p_occlude),
            ("p_noise_vs_patch", self.p_noise_vs_patch),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// What happened to one grid patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchAction {
    Kept,
    Noise,
    /// Copied from the original image with this top-left corner.
    Copied {
        src_x: usize,
        src_y: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRecord {
    pub rect: BBox,
    pub action: PatchAction,
}

impl PatchRecord {
    pub fn occluded(&self) -> bool {
        self.action != PatchAction::Kept
    }
}

/// Splits `[start, start + len)` into `parts` spans; the last absorbs the remainder.
fn split_span(start: usize, len: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = len / parts;
    (0..parts)
        .map(|i| {
            let a = start + i * base;
            let b = if i + 1 == parts { start + len } else { a + base };
            (a, b)
        })
        .collect()
}

/// Grid patches of `bbox`, row-major.
pub fn patch_grid(bbox: &BBox, rows: usize, cols: usize) -> Vec<BBox> {
    let ys = split_span(bbox.y0, bbox.height(), rows);
    let xs = split_span(bbox.x0, bbox.width(), cols);
    ys.iter()
        .flat_map(|&(y0, y1)| xs.iter().map(move |&(x0, x1)| BBox { x0, y0, x1, y1 }))
        .collect()
}

pub fn apply_oba(img: &ImageBuffer, bbox: &BBox, cfg: &ObaConfig) -> Result<ImageBuffer> {
    apply_oba_traced(img, bbox, cfg).map(|(out, _)| out)
}

/// [`apply_oba`] that also reports the action taken on every patch.
pub fn apply_oba_traced(img: &ImageBuffer, bbox: &BBox, cfg: &ObaConfig) -> Result<(ImageBuffer, Vec<PatchRecord>)> {
    cfg.validate()?;
    bbox.validate(img.width, img.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = img.clone();
    let mut records = Vec::with_capacity(cfg.grid_rows * cfg.grid_cols);

    for rect in patch_grid(bbox, cfg.grid_rows, cfg.grid_cols) {
        let occlude = rng.random::<f64>() < cfg.p_occlude;
        let action = if !occlude {
            PatchAction::Kept
        } else if rng.random::<f64>() < cfg.p_noise_vs_patch {
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    out.set_pixel(x, y, rng.random());
                }
            }
            PatchAction::Noise
        } else {
            let (pw, ph) = (rect.width(), rect.height());
            let src_x = rng.random_range(0..=img.width - pw);
            let src_y = rng.random_range(0..=img.height - ph);
            for dy in 0..ph {
                let s = ((src_y + dy) * img.width + src_x) * 3;
                let d = ((rect.y0 + dy) * img.width + rect.x0) * 3;
                out.data[d..d + pw * 3].copy_from_slice(&img.data[s..s + pw * 3]);
            }
            PatchAction::Copied { src_x, src_y }
        };
        records.push(PatchRecord { rect, action });
    }

    for y in 0..img.height {
        for x in 0..img.width {
            if !bbox.contains(x, y) {
                out.set_pixel(x, y, [0, 0, 0]);
            }
        }
    }
    Ok((out, records))
}

/// A batch extended by its augmented copy; `labels[i]` and `labels[i + n]`
/// point at the same value.
#[derive(Debug, Clone)]
pub struct AugmentedBatch<L> {
    pub images: Vec<ImageBuffer>,
    pub labels: Vec<Arc<L>>,
}

impl<L> AugmentedBatch<L> {
    pub fn originals(&self) -> &[ImageBuffer] {
        &self.images[..self.images.len() / 2]
    }

    pub fn augmented(&self) -> &[ImageBuffer] {
        &self.images[self.images.len() / 2..]
    }
}

/// Per-image seed used by [`extend_batch`].
pub fn derived_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

/// Appends an OBA copy of every image. Image `i` of the copy uses seed
/// `cfg.seed ^ i`.
pub fn extend_batch<L: Send + Sync>(
    images: Vec<ImageBuffer>,
    bboxes: &[BBox],
    labels: Vec<L>,
    cfg: &ObaConfig,
) -> Result<AugmentedBatch<L>> {
    let n = images.len();
    if bboxes.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: bboxes.len(),
        });
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let augmented = images
        .par_iter()
        .zip(bboxes.par_iter())
        .enumerate()
        .map(|(i, (img, bbox))| apply_oba(img, bbox, &cfg.with_seed(derived_seed(cfg.seed, i))))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Arc<L>> = labels.into_iter().map(Arc::new).collect();
    let mut all_labels = labels.clone();
    all_labels.extend(labels);
    let mut all_images = images;
    all_images.extend(augmented);
    Ok(AugmentedBatch {
        images: all_images,
        labels: all_labels,
    })
}
