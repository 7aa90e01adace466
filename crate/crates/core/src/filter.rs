//! Landmark verification between the high- and medium-precision heads.
//!
//! A high-precision landmark is kept only when the medium-precision head
//! places the same landmark within `epsilon` pixels. If fewer than four
//! survive, the four landmarks with the smallest disagreement are used
//! instead so that the pose solver always has a minimal set.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Landmark3D;
use crate::heatmap::DecodedLandmarks;

/// Minimum number of correspondences handed to the pose solver.
pub const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Verification threshold in image pixels.
    pub epsilon: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { epsilon: 1.0 }
    }
}

impl FilterConfig {
    pub fn min_points(&self) -> usize {
        MIN_POINTS
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )))
        }
    }
}

/// A 2D observation paired with its 3D model point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub index: usize,
    pub image: Vector2<f64>,
    pub object: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredCorrespondences {
    /// Kept correspondences, ordered by landmark index.
    pub pairs: Vec<Correspondence>,
    /// Kept landmark indices, ascending.
    pub kept_indices: Vec<usize>,
    pub fallback_used: bool,
    /// `|x_high - x_medium|` per input position.
    pub disagreement: Vec<f64>,
}

impl FilteredCorrespondences {
    /// Every landmark, unverified.
    pub fn unfiltered(high: &DecodedLandmarks, model: &[Landmark3D]) -> Result<Self> {
        check_indices(high, None, model)?;
        let mut pairs: Vec<Correspondence> = high
            .coords
            .iter()
            .zip(model)
            .map(|(l, m)| Correspondence {
                index: l.index,
                image: l.coords,
                object: m.coords,
            })
            .collect();
        pairs.sort_by_key(|c| c.index);
        Ok(Self {
            kept_indices: pairs.iter().map(|c| c.index).collect(),
            pairs,
            fallback_used: false,
            disagreement: vec![0.0; high.coords.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn check_indices(high: &DecodedLandmarks, medium: Option<&DecodedLandmarks>, model: &[Landmark3D]) -> Result<()> {
    let k = high.coords.len();
    if k < MIN_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_POINTS,
            got: k,
        });
    }
    for len in medium.map(|m| m.coords.len()).into_iter().chain([model.len()]) {
        if len != k {
            return Err(Error::LengthMismatch { expected: k, got: len });
        }
    }
    let mut seen = vec![false; k];
    for (position, h) in high.coords.iter().enumerate() {
        let same_medium = medium.is_none_or(|m| m.coords[position].index == h.index);
        if !same_medium || model[position].index != h.index {
            return Err(Error::IndexMismatch { position });
        }
        // Indices are contiguous, so each must be a fresh value below k.
        match seen.get_mut(h.index) {
            Some(slot) if !*slot => *slot = true,
            _ => return Err(Error::IndexMismatch { position }),
        }
    }
    Ok(())
}

/// Keeps landmarks whose high- and medium-precision estimates agree.
///
/// Output pairs carry the high-precision coordinates.
pub fn filter_landmarks(
    high: &DecodedLandmarks,
    medium: &DecodedLandmarks,
    model: &[Landmark3D],
    cfg: &FilterConfig,
) -> Result<FilteredCorrespondences> {
    cfg.validate()?;
    check_indices(high, Some(medium), model)?;

    let disagreement: Vec<f64> = high
        .coords
        .iter()
        .zip(&medium.coords)
        .map(|(h, m)| (h.coords - m.coords).norm())
        .collect();

    let mut keep: Vec<usize> = (0..disagreement.len())
        .filter(|&i| disagreement[i] <= cfg.epsilon)
        .collect();
    let fallback_used = keep.len() < MIN_POINTS;
    if fallback_used {
        let mut order: Vec<usize> = (0..disagreement.len()).collect();
        order.sort_by(|&a, &b| {
            disagreement[a]
                .total_cmp(&disagreement[b])
                .then(high.coords[a].index.cmp(&high.coords[b].index))
        });
        keep = order[..MIN_POINTS].to_vec();
    }

    let mut pairs: Vec<Correspondence> = keep
        .iter()
        .map(|&i| Correspondence {
            index: high.coords[i].index,
            image: high.coords[i].coords,
            object: model[i].coords,
        })
        .collect();
    pairs.sort_by_key(|c| c.index);
    Ok(FilteredCorrespondences {
        kept_indices: pairs.iter().map(|c| c.index).collect(),
        pairs,
        fallback_used,
        disagreement,
    })
}
