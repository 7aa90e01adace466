//! Multi-precision landmark heatmaps.
//!
//! A [`HeatmapStack`] holds one channel per landmark over a `width x height`
//! grid. Channel values are indexed `(u, v)` = (column, row); decoded
//! coordinates use the same convention, so `x = u` and `y = v`.
//!
//! Stacks serialise to the `RHMP` binary format:
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 4            | magic `RHMP`                                         |
//! | 1            | version, `1`                                         |
//! | 4 + 4 + 4    | `K`, `H`, `W` as little-endian `u32`                 |
//! | 4·K·H·W      | little-endian `f32`, channel-major then row-major    |
//! | 1            | normalized flag (`0` or `1`)                         |

use std::io::{Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Landmark2D;

pub const RHMP_MAGIC: &[u8; 4] = b"RHMP";
pub const RHMP_VERSION: u8 = 1;

/// Default heatmap resolution per region of interest.
pub const DEFAULT_HEATMAP_SIZE: usize = 64;

const NORMALIZED_TOLERANCE: f64 = 1e-6;

/// Supervision precision of a keypoint head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionLevel {
    Low,
    Medium,
    High,
}

impl PrecisionLevel {
    pub const ALL: [PrecisionLevel; 3] = [Self::Low, Self::Medium, Self::High];

    /// Gaussian standard deviation of the groundtruth target, in heatmap pixels.
    pub fn sigma(self) -> f64 {
        match self {
            Self::Low => 8.0,
            Self::Medium => 3.0,
            Self::High => 1.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

/// K-channel scalar field over a `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl HeatmapStack {
    /// Wraps raw values laid out channel-major, row-major.
    ///
    /// When `normalized` is set every channel must be a probability
    /// distribution within 1e-6.
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>, normalized: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch("heatmap dimensions must be >= 1".into()));
        }
        if values.len() != channels * width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} stack",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("heatmap", "non-finite value"));
        }
        let stack = Self {
            width,
            height,
            channels,
            values,
            normalized,
        };
        if normalized {
            for k in 0..channels {
                let ch = stack.channel(k);
                let sum: f64 = ch.iter().sum();
                if (sum - 1.0).abs() > NORMALIZED_TOLERANCE || ch.iter().any(|&v| v < 0.0) {
                    return Err(Error::format(
                        "heatmap",
                        format!("channel {k} flagged normalized but sums to {sum}"),
                    ));
                }
            }
        }
        Ok(stack)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.plane();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, u: usize, v: usize) -> f64 {
        self.values[k * self.plane() + v * self.width + u]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Writes the `RHMP` encoding.
    pub fn write_rhmp(&self, mut w: impl Write) -> Result<()> {
        let dims = |n: usize| u32::try_from(n).map_err(|_| Error::format("heatmap", "dimension exceeds u32"));
        w.write_all(RHMP_MAGIC)?;
        w.write_all(&[RHMP_VERSION])?;
        w.write_all(&dims(self.channels)?.to_le_bytes())?;
        w.write_all(&dims(self.height)?.to_le_bytes())?;
        w.write_all(&dims(self.width)?.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4 + 1);
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.push(self.normalized as u8);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_rhmp_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_rhmp(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads the `RHMP` encoding, rejecting trailing bytes.
    pub fn read_rhmp(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_rhmp_bytes(&bytes)
    }

    pub fn from_rhmp_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 1 + 12;
        if bytes.len() < HEADER || &bytes[..4] != RHMP_MAGIC {
            return Err(Error::format("rhmp", "missing RHMP magic"));
        }
        if bytes[4] != RHMP_VERSION {
            return Err(Error::format("rhmp", format!("unsupported version {}", bytes[4])));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (k, h, w) = (word(5), word(9), word(13));
        let count = k
            .checked_mul(h)
            .and_then(|n| n.checked_mul(w))
            .ok_or_else(|| Error::format("rhmp", "dimensions overflow"))?;
        let expected = HEADER + count * 4 + 1;
        if bytes.len() != expected {
            return Err(Error::format(
                "rhmp",
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let values = bytes[HEADER..HEADER + count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let normalized = match bytes[expected - 1] {
            0 => false,
            1 => true,
            other => return Err(Error::format("rhmp", format!("bad normalized flag {other}"))),
        };
        Self::new(k, h, w, values, normalized)
    }
}

/// Affine map between heatmap pixels and image pixels.
///
/// `image = origin + scale * heatmap`; `origin` is the image position of the
/// centre of heatmap pixel `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapFrame {
    pub origin: Vector2<f64>,
    pub scale: f64,
}

impl HeatmapFrame {
    pub fn identity() -> Self {
        Self {
            origin: Vector2::zeros(),
            scale: 1.0,
        }
    }

    /// Square region centred on `center` spanning `side` image pixels over
    /// `size` heatmap pixels.
    pub fn centered(center: Vector2<f64>, side: f64, size: usize) -> Self {
        let scale = side / size as f64;
        let half = 0.5 * (size as f64 - 1.0);
        Self {
            origin: center - Vector2::new(half, half) * scale,
            scale,
        }
    }

    pub fn to_image(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.origin + p * self.scale
    }

    pub fn to_heatmap(&self, p: &Vector2<f64>) -> Vector2<f64> {
        (p - self.origin) / self.scale
    }
}

/// Landmark coordinates decoded from one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedLandmarks {
    pub level: Option<PrecisionLevel>,
    pub coords: Vec<Landmark2D>,
    /// Largest probability in each channel; low values flag diffuse maps.
    pub peak_mass: Vec<f64>,
}

impl DecodedLandmarks {
    pub fn with_level(mut self, level: PrecisionLevel) -> Self {
        self.level = Some(level);
        self
    }

    /// Maps heatmap coordinates into image coordinates.
    pub fn to_image(&self, frame: &HeatmapFrame) -> Self {
        Self {
            level: self.level,
            coords: self
                .coords
                .iter()
                .map(|l| Landmark2D {
                    index: l.index,
                    coords: frame.to_image(&l.coords),
                })
                .collect(),
            peak_mass: self.peak_mass.clone(),
        }
    }

    pub fn points(&self) -> Vec<Vector2<f64>> {
        self.coords.iter().map(|l| l.coords).collect()
    }
}

/// Normalised 1D Gaussian profile sampled on `0..n`.
fn gaussian_profile(n: usize, center: f64, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    // Exponents are shifted by the grid point nearest the centre so that
    // landmarks far outside the grid still keep a representable tail.
    let nearest = center.round().clamp(0.0, (n - 1) as f64);
    let offset = (nearest - center).powi(2) * inv;
    let raw: Vec<f64> = (0..n)
        .map(|i| (offset - (i as f64 - center).powi(2) * inv).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Writes a normalised isotropic Gaussian centred at `center` into `out`.
pub(crate) fn gaussian_channel(out: &mut [f64], width: usize, height: usize, center: &Vector2<f64>, sigma: f64) {
    let gx = gaussian_profile(width, center.x, sigma);
    let gy = gaussian_profile(height, center.y, sigma);
    for (v, row) in out.chunks_exact_mut(width).enumerate() {
        for (u, value) in row.iter_mut().enumerate() {
            *value = gx[u] * gy[v];
        }
    }
}

/// Groundtruth heatmaps: one normalised Gaussian per landmark.
///
/// Landmarks outside the grid keep the visible part of their tail,
/// renormalised to unit mass.
pub fn make_gaussian_stack(landmarks: &[Landmark2D], width: usize, height: usize, sigma: f64) -> Result<HeatmapStack> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::ShapeMismatch("heatmap dimensions must be >= 1".into()));
    }
    let plane = width * height;
    let mut values = vec![0.0; landmarks.len() * plane];
    for (l, out) in landmarks.iter().zip(values.chunks_exact_mut(plane)) {
        if !l.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidConfig(format!("landmark {} is not finite", l.index)));
        }
        gaussian_channel(out, width, height, &l.coords, sigma);
    }
    Ok(HeatmapStack {
        width,
        height,
        channels: landmarks.len(),
        values,
        normalized: true,
    })
}

/// Channel-wise softmax.
pub fn softmax_channels(stack: &HeatmapStack) -> HeatmapStack {
    let plane = stack.plane();
    let mut values = stack.values.clone();
    for ch in values.chunks_exact_mut(plane) {
        let max = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in ch.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in ch.iter_mut() {
            *v /= sum;
        }
    }
    HeatmapStack {
        values,
        normalized: true,
        ..*stack
    }
}

/// Divides every channel by its sum. All-zero channels become uniform.
pub fn normalize_channels(stack: &HeatmapStack) -> Result<HeatmapStack> {
    if stack.values.iter().any(|&v| v < 0.0) {
        return Err(Error::format("heatmap", "cannot sum-normalize negative values"));
    }
    let plane = stack.plane();
    let mut values = stack.values.clone();
    for ch in values.chunks_exact_mut(plane) {
        let sum: f64 = ch.iter().sum();
        if sum > 0.0 {
            for v in ch.iter_mut() {
                *v /= sum;
            }
        } else {
            ch.fill(1.0 / plane as f64);
        }
    }
    Ok(HeatmapStack {
        values,
        normalized: true,
        ..*stack
    })
}

/// Jensen-Shannon divergence of two distributions, natural log.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut kl_pm = 0.0;
    let mut kl_qm = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            kl_pm += a * (a / m).ln();
        }
        if b > 0.0 {
            kl_qm += b * (b / m).ln();
        }
    }
    0.5 * kl_pm + 0.5 * kl_qm
}

/// Mean per-channel Jensen-Shannon divergence between two normalised stacks.
pub fn jsd_loss(pred: &HeatmapStack, gt: &HeatmapStack) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            pred.channels, pred.height, pred.width, gt.channels, gt.height, gt.width
        )));
    }
    if !pred.normalized || !gt.normalized {
        return Err(Error::InvalidConfig("jsd_loss needs normalized stacks".into()));
    }
    if pred.channels == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..pred.channels).map(|k| jsd(pred.channel(k), gt.channel(k))).sum();
    Ok(total / pred.channels as f64)
}

/// Spatial expectation of every channel.
///
/// Stacks that are not yet normalised are passed through the channel-wise
/// softmax first.
pub fn decode_expectation(stack: &HeatmapStack) -> DecodedLandmarks {
    let owned;
    let probs = if stack.normalized {
        stack
    } else {
        owned = softmax_channels(stack);
        &owned
    };
    let (w, h) = (probs.width, probs.height);
    let mut coords = Vec::with_capacity(probs.channels);
    let mut peak_mass = Vec::with_capacity(probs.channels);
    for k in 0..probs.channels {
        let ch = probs.channel(k);
        let (mut ex, mut ey, mut mass, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
        for (v, row) in ch.chunks_exact(w).enumerate() {
            let mut row_mass = 0.0;
            let mut row_x = 0.0;
            for (u, &p) in row.iter().enumerate() {
                row_mass += p;
                row_x += p * u as f64;
                peak = peak.max(p);
            }
            ex += row_x;
            ey += row_mass * v as f64;
            mass += row_mass;
        }
        // Divide by the realised mass to absorb rounding in the normalisation.
        let x = (ex / mass).clamp(0.0, (w - 1) as f64);
        let y = (ey / mass).clamp(0.0, (h - 1) as f64);
        coords.push(Landmark2D::new(k, x, y));
        peak_mass.push(peak);
    }
    DecodedLandmarks {
        level: None,
        coords,
        peak_mass,
    }
}

/// Per-channel location of the largest value; ties go to the first pixel in
/// row-major order.
pub fn decode_argmax(stack: &HeatmapStack) -> DecodedLandmarks {
    let w = stack.width;
    let mut coords = Vec::with_capacity(stack.channels);
    let mut peak_mass = Vec::with_capacity(stack.channels);
    for k in 0..stack.channels {
        let ch = stack.channel(k);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in ch.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        coords.push(Landmark2D::new(k, (best.0 % w) as f64, (best.0 / w) as f64));
        let peak = if stack.normalized {
            best.1
        } else {
            1.0 / ch.iter().map(|v| (v - best.1).exp()).sum::<f64>()
        };
        peak_mass.push(peak);
    }
    DecodedLandmarks {
        level: None,
        coords,
        peak_mass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(x: f64, y: f64, w: usize, h: usize, sigma: f64) -> HeatmapStack {
        make_gaussian_stack(&[Landmark2D::new(0, x, y)], w, h, sigma).unwrap()
    }

    fn point_mass(w: usize, h: usize, u: usize, v: usize) -> HeatmapStack {
        let mut values = vec![0.0; w * h];
        values[v * w + u] = 1.0;
        HeatmapStack::new(1, h, w, values, true).unwrap()
    }

    #[test]
    fn precision_sigmas() {
        assert_eq!(PrecisionLevel::Low.sigma(), 8.0);
        assert_eq!(PrecisionLevel::Medium.sigma(), 3.0);
        assert_eq!(PrecisionLevel::High.sigma(), 1.5);
    }

    #[test]
    fn gaussian_peaks_at_landmark_pixel() {
        for sigma in [0.5, 1.5, 3.0, 8.0] {
            let s = single(17.0, 40.0, 64, 64, sigma);
            let d = decode_argmax(&s);
            assert_eq!(d.coords[0].coords, Vector2::new(17.0, 40.0));
            let sum: f64 = s.channel(0).iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tiny_sigma_concentrates_mass() {
        let s = single(12.2, 30.9, 64, 64, 0.1);
        assert!(s.get(0, 12, 31) >= 0.99);
    }

    #[test]
    fn off_grid_center_expectation() {
        let s = single(10.5, 20.5, 64, 64, 3.0);
        let d = decode_expectation(&s);
        // Reference: expectation of the separable sampled Gaussian by direct
        // summation of exp(-(i - c)^2 / 2 sigma^2) over the grid.
        let axis = |c: f64| {
            let ws: Vec<f64> = (0..64).map(|i| (-(i as f64 - c).powi(2) / 18.0).exp()).collect();
            ws.iter().enumerate().map(|(i, w)| i as f64 * w).sum::<f64>() / ws.iter().sum::<f64>()
        };
        assert_relative_eq!(axis(10.5), 10.5, epsilon = 2e-3);
        assert_relative_eq!(d.coords[0].coords.x, axis(10.5), epsilon = 1e-9);
        assert_relative_eq!(d.coords[0].coords.y, axis(20.5), epsilon = 1e-9);
        let am = decode_argmax(&s).coords[0].coords;
        assert!([10.0, 11.0].contains(&am.x) && [20.0, 21.0].contains(&am.y));
    }

    #[test]
    fn far_off_grid_landmark_keeps_a_tail() {
        let s = single(-500.0, 10.0, 32, 32, 1.5);
        let sum: f64 = s.channel(0).iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        assert!(s.values().iter().all(|v| v.is_finite()));
        assert_eq!(decode_argmax(&s).coords[0].coords.x, 0.0);
    }

    #[test]
    fn bad_sigma_rejected() {
        assert!(make_gaussian_stack(&[Landmark2D::new(0, 1.0, 1.0)], 4, 4, 0.0).is_err());
        assert!(make_gaussian_stack(&[Landmark2D::new(0, 1.0, 1.0)], 4, 4, f64::NAN).is_err());
    }

    #[test]
    fn softmax_cases() {
        let constant = HeatmapStack::new(1, 4, 5, vec![3.0; 20], false).unwrap();
        let s = softmax_channels(&constant);
        assert!(s.channel(0).iter().all(|&v| (v - 0.05).abs() < 1e-15));

        let two = HeatmapStack::new(1, 1, 2, vec![0.0, 3f64.ln()], false).unwrap();
        let s = softmax_channels(&two);
        assert_relative_eq!(s.channel(0)[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(s.channel(0)[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..48).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = vals.iter().map(|v| v + 12.5).collect();
        let a = softmax_channels(&HeatmapStack::new(3, 4, 4, vals, false).unwrap());
        let b = softmax_channels(&HeatmapStack::new(3, 4, 4, shifted, false).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn jsd_identical_and_disjoint() {
        let a = point_mass(8, 8, 1, 1);
        let b = point_mass(8, 8, 6, 2);
        assert_eq!(jsd_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(jsd_loss(&a, &b).unwrap(), std::f64::consts::LN_2);
    }

    #[test]
    fn jsd_shape_and_normalization_checks() {
        let a = point_mass(8, 8, 1, 1);
        let b = point_mass(4, 8, 1, 1);
        assert!(matches!(jsd_loss(&a, &b), Err(Error::ShapeMismatch(_))));
        let raw = HeatmapStack::new(1, 8, 8, vec![1.0; 64], false).unwrap();
        assert!(jsd_loss(&a, &raw).is_err());
    }

    #[test]
    fn expectation_elementary_cases() {
        let uniform = HeatmapStack::new(1, 6, 9, vec![1.0 / 54.0; 54], true).unwrap();
        let c = decode_expectation(&uniform).coords[0].coords;
        assert_relative_eq!(c, Vector2::new(4.0, 2.5), epsilon = 1e-12);

        let d = decode_expectation(&point_mass(16, 16, 3, 11));
        assert_eq!(d.coords[0].coords, Vector2::new(3.0, 11.0));

        let mut values = vec![0.0; 16 * 4];
        values[0] = 0.5;
        values[10] = 0.5;
        let mix = HeatmapStack::new(1, 4, 16, values, true).unwrap();
        assert_eq!(decode_expectation(&mix).coords[0].coords, Vector2::new(5.0, 0.0));
    }

    #[test]
    fn argmax_elementary_cases() {
        let d = decode_argmax(&point_mass(16, 16, 3, 11));
        assert_eq!(d.coords[0].coords, Vector2::new(3.0, 11.0));
        let uniform = HeatmapStack::new(1, 6, 9, vec![1.0 / 54.0; 54], true).unwrap();
        assert_eq!(decode_argmax(&uniform).coords[0].coords, Vector2::zeros());
    }

    #[test]
    fn unnormalized_stack_is_softmaxed_before_decoding() {
        let raw = HeatmapStack::new(1, 1, 2, vec![0.0, 3f64.ln()], false).unwrap();
        assert_relative_eq!(decode_expectation(&raw).coords[0].coords.x, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn expectation_is_more_robust_than_argmax() {
        let (w, h) = (64, 64);
        let (u0, v0) = (20, 30);
        let base = point_mass(w, h, u0, v0);
        let clean = decode_expectation(&base).coords[0].coords;

        // 1% of pixels get a small positive value (at most mass / 100).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut noisy = base.values().to_vec();
        for _ in 0..(w * h / 100) {
            let i = rng.random_range(0..w * h);
            noisy[i] += rng.random_range(0.0..=0.01);
        }
        let noisy = normalize_channels(&HeatmapStack::new(1, h, w, noisy, false).unwrap()).unwrap();
        let exp_shift = (decode_expectation(&noisy).coords[0].coords - clean).norm();

        // A single super-maximal outlier in the far corner captures argmax.
        let mut spiked = base.values().to_vec();
        spiked[w * h - 1] = 2.0;
        let spiked = HeatmapStack::new(1, h, w, spiked, false).unwrap();
        let argmax_shift = (decode_argmax(&spiked).coords[0].coords - Vector2::new(u0 as f64, v0 as f64)).norm();
        assert!(exp_shift < argmax_shift, "{exp_shift} vs {argmax_shift}");
    }

    #[test]
    fn renormalization_leaves_expectation_unchanged() {
        let s = single(20.3, 7.9, 32, 32, 3.0);
        let scaled: Vec<f64> = s.values().iter().map(|v| v * 7.25).collect();
        let renorm = normalize_channels(&HeatmapStack::new(1, 32, 32, scaled, false).unwrap()).unwrap();
        let a = decode_expectation(&s).coords[0].coords;
        let b = decode_expectation(&renorm).coords[0].coords;
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn frame_round_trip() {
        let f = HeatmapFrame::centered(Vector2::new(300.0, 200.0), 128.0, 64);
        let p = Vector2::new(12.25, 50.5);
        assert_relative_eq!(f.to_heatmap(&f.to_image(&p)), p, epsilon = 1e-12);
        assert_relative_eq!(
            f.to_image(&Vector2::new(31.5, 31.5)),
            Vector2::new(300.0, 200.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rhmp_layout_is_bit_exact() {
        let stack = HeatmapStack::new(2, 1, 2, vec![0.25, 0.75, 1.0, 0.0], true).unwrap();
        let bytes = stack.to_rhmp_bytes();
        let mut expected = b"RHMP".to_vec();
        expected.push(1);
        for n in [2u32, 1, 2] {
            expected.extend_from_slice(&n.to_le_bytes());
        }
        for v in [0.25f32, 0.75, 1.0, 0.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.push(1);
        assert_eq!(bytes, expected);
        assert_eq!(HeatmapStack::from_rhmp_bytes(&bytes).unwrap(), stack);
    }

    #[test]
    fn rhmp_rejects_corruption() {
        let stack = HeatmapStack::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let bytes = stack.to_rhmp_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(HeatmapStack::from_rhmp_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(HeatmapStack::from_rhmp_bytes(&bad).is_err());
        assert!(HeatmapStack::from_rhmp_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(HeatmapStack::from_rhmp_bytes(&bad).is_err());
        let mut bad = bytes;
        *bad.last_mut().unwrap() = 7;
        assert!(HeatmapStack::from_rhmp_bytes(&bad).is_err());
    }

    fn distribution(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn jsd_symmetric_and_bounded(
            a in proptest::collection::vec(0.0f64..1.0, 16),
            b in proptest::collection::vec(0.0f64..1.0, 16),
        ) {
            prop_assume!(a.iter().sum::<f64>() > 1e-3 && b.iter().sum::<f64>() > 1e-3);
            let (p, q) = (distribution(&a), distribution(&b));
            let pq = jsd(&p, &q);
            prop_assert_eq!(pq, jsd(&q, &p));
            prop_assert!((-1e-15..=std::f64::consts::LN_2 + 1e-12).contains(&pq));
        }

        #[test]
        fn rhmp_round_trip(
            values in proptest::collection::vec(-1e3f32..1e3, 2 * 3 * 5),
        ) {
            let stack = HeatmapStack::new(2, 3, 5, values.iter().map(|&v| v as f64).collect(), false)
                .unwrap();
            let back = HeatmapStack::from_rhmp_bytes(&stack.to_rhmp_bytes()).unwrap();
            prop_assert_eq!(back, stack);
        }

        #[test]
        fn gaussian_round_trip(x in 10.0f64..54.0, y in 10.0f64..54.0) {
            let d = decode_expectation(&single(x, y, 64, 64, 1.5));
            prop_assert!((d.coords[0].coords - Vector2::new(x, y)).norm() < 0.05);
        }
    }
}
