//! Synthetic B-scan stacks with known motion, noise and outliers.
//!
//! Intensities model log-compressed data, where speckle is additive. Each
//! scan `i` is rendered analytically as `phantom(τᵢ·x)`, so warping it by its
//! ground-truth `τᵢ` recovers the clean phantom up to interpolation.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Roi;
use crate::transform::{Frame, Image, ImageStack, TransformParams};

/// Outliers add a value drawn uniformly from this range.
pub const OUTLIER_RANGE: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phantom {
    /// Linear intensity ramp.
    Ramp,
    /// Gaussian blobs on a dim background.
    Blobs,
    /// Retina-like horizontal strata with a foveal pit and vessel shadows.
    Layers,
}

impl Phantom {
    pub fn name(self) -> &'static str {
        match self {
            Phantom::Ramp => "ramp",
            Phantom::Blobs => "blobs",
            Phantom::Layers => "layers",
        }
    }
}

impl std::fmt::Display for Phantom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Phantom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramp" => Ok(Phantom::Ramp),
            "blobs" => Ok(Phantom::Blobs),
            "layers" => Ok(Phantom::Layers),
            other => Err(Error::InvalidInput(format!("unknown phantom {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub base: Phantom,
    pub n: usize,
    pub width: usize,
    pub height: usize,
    /// Bound on each translation component, pixels.
    pub max_translation: f64,
    /// Bound on the rotation, degrees.
    pub max_rotation: f64,
    pub speckle_sigma: f64,
    /// Fraction of pixels per scan replaced by outliers.
    pub sparse_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            base: Phantom::Layers,
            n: 10,
            width: 128,
            height: 128,
            max_translation: 3.0,
            max_rotation: 2.0,
            speckle_sigma: 0.05,
            sparse_fraction: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidInput(format!("synth spec: {what}")));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.width < 16 || self.height < 16 {
            return bad(format!(
                "frame must be at least 16x16, got {}x{}",
                self.width, self.height
            ));
        }
        for (name, v) in [
            ("max_translation", self.max_translation),
            ("max_rotation", self.max_rotation),
            ("speckle_sigma", self.speckle_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(0.0..0.5).contains(&self.sparse_fraction) {
            return bad(format!(
                "sparse_fraction must lie in [0, 0.5), got {}",
                self.sparse_fraction
            ));
        }
        Ok(())
    }

    pub fn frame(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Aligning transforms: `warp(scanᵢ, τᵢ)` is the clean phantom.
    pub taus: Vec<TransformParams>,
    pub clean_image: Image,
    /// Sorted linear indices of the outlier pixels of each scan.
    pub sparse_supports: Vec<Vec<usize>>,
    /// One background ROI followed by the feature ROIs.
    pub rois: Vec<Roi>,
}

/// Phantom intensity at centered coordinates `(u, v)` of a `w × h` frame.
pub fn phantom_value(kind: Phantom, w: f64, h: f64, u: f64, v: f64) -> f64 {
    match kind {
        Phantom::Ramp => 0.2 + 0.4 * (u / w + 0.5) + 0.2 * (v / h + 0.5),
        Phantom::Blobs => {
            let s = 0.07 * w.min(h);
            BLOBS.iter().fold(0.15, |acc, &(bx, by, amp)| {
                let (dx, dy) = (u - bx * w, v - by * h);
                acc + amp * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp()
            })
        }
        Phantom::Layers => layers_value(w, h, u, v),
    }
}

/// Centers (as fractions of the frame) and amplitudes.
const BLOBS: [(f64, f64, f64); 5] = [
    (-0.25, -0.2, 0.6),
    (0.2, -0.25, 0.5),
    (0.0, 0.05, 0.7),
    (-0.2, 0.25, 0.45),
    (0.25, 0.22, 0.55),
];

const VITREOUS: f64 = 0.12;
/// Band tops as depth fractions below the inner surface, with intensities.
const STRATA: [(f64, f64); 8] = [
    (0.0, 0.72),
    (0.08, 0.42),
    (0.16, 0.62),
    (0.23, 0.28),
    (0.33, 0.82),
    (0.40, 0.5),
    (0.45, 0.9),
    (0.52, 0.55),
];
/// Strata used as feature ROIs.
const FEATURE_STRATA: [usize; 6] = [0, 1, 2, 3, 4, 6];
const SURFACE: f64 = -0.3;
const PIT_DEPTH: f64 = 0.07;
const PIT_WIDTH: f64 = 0.1;
/// Horizontal extent of the flat stretch that carries the feature ROIs.
const FLAT: (f64, f64) = (0.2, 0.38);
/// Boundary undulation per stratum: amplitude (fraction of h), cycles across
/// the frame, phase.
const UNDULATION: [(f64, f64, f64); 8] = [
    (0.018, 2.0, 0.3),
    (0.012, 3.5, 1.9),
    (0.010, 5.0, 4.0),
    (0.014, 3.0, 2.6),
    (0.008, 6.0, 0.9),
    (0.010, 4.5, 5.1),
    (0.012, 2.5, 3.3),
    (0.016, 3.8, 1.2),
];
/// Vessel positions (fraction of w) and widths (fraction of w). Each casts a
/// shadow into the deeper strata and shows a bright lumen near the surface.
const VESSELS: [(f64, f64); 12] = [
    (-0.46, 0.012),
    (-0.40, 0.010),
    (-0.32, 0.016),
    (-0.25, 0.009),
    (-0.17, 0.013),
    (-0.09, 0.012),
    (-0.03, 0.009),
    (0.04, 0.011),
    (0.10, 0.014),
    (0.15, 0.009),
    (0.43, 0.013),
    (0.48, 0.010),
];
const EDGE_PX: f64 = 0.8;

fn step(x: f64) -> f64 {
    1.0 / (1.0 + (-x / EDGE_PX).exp())
}

/// 0 on the flat stretch, rising to 1 away from it.
fn away_from_flat(a: f64) -> f64 {
    let mid = 0.5 * (FLAT.0 + FLAT.1);
    let half = 0.5 * (FLAT.1 - FLAT.0) + 0.04;
    1.0 - (-((a - mid) / half).powi(6)).exp()
}

fn layers_value(w: f64, h: f64, u: f64, v: f64) -> f64 {
    let a = u / w;
    let wobble = away_from_flat(a);
    let undulation = |k: usize| {
        let (amp, cycles, phase) = UNDULATION[k];
        wobble * amp * h * (std::f64::consts::TAU * cycles * a + phase).sin()
    };
    let pit = (-(a / PIT_WIDTH).powi(2)).exp();
    let surface = (SURFACE + PIT_DEPTH * pit) * h + undulation(0);
    let depth = v - surface;
    let mut value = VITREOUS;
    let mut prev = VITREOUS;
    for (k, &(top, level)) in STRATA.iter().enumerate() {
        let boundary = if k == 0 {
            0.0
        } else {
            top * h * (1.0 - 0.5 * pit) + undulation(k)
        };
        value += (level - prev) * step(depth - boundary);
        prev = level;
    }
    let tissue = step(depth);
    let mut shadow = 0.0;
    let mut lumen = 0.0;
    for &(c, width) in &VESSELS {
        let across = (-((a - c) / width).powi(2)).exp();
        shadow += across;
        let dy = (depth - 0.05 * h) / (width * w);
        lumen += (-((a - c) / width).powi(2) - dy * dy).exp();
    }
    let shaded =
        VITREOUS + (value - VITREOUS) * (1.0 - 0.45 * shadow.min(1.0) * step(depth - 0.1 * h));
    shaded + 0.2 * lumen.min(1.0) * tissue
}

/// Renders `phantom(τ·x)` on the pixel grid of `frame`.
pub fn render(kind: Phantom, frame: Frame, tau: &TransformParams) -> Image {
    let (w, h) = (frame.width as f64, frame.height as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    Image::from_fn(frame.width, frame.height, |x, y| {
        let (u, v) = tau.apply((x as f64 - cx, y as f64 - cy));
        phantom_value(kind, w, h, u, v)
    })
}

/// Ground-truth ROIs of the unmoved phantom: background first.
pub fn phantom_rois(kind: Phantom, frame: Frame) -> Vec<Roi> {
    let (w, h) = (frame.width as f64, frame.height as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    // Rectangle from centered fractional corners, shrunk to whole pixels.
    let rect = |kind: crate::metrics::RoiKind, u0: f64, v0: f64, u1: f64, v1: f64| {
        let x0 = (u0 * w + cx).ceil().max(0.0) as usize;
        let y0 = (v0 * h + cy).ceil().max(0.0) as usize;
        let x1 = ((u1 * w + cx).floor() as usize).min(frame.width - 1);
        let y1 = ((v1 * h + cy).floor() as usize).min(frame.height - 1);
        Roi {
            kind,
            x: x0,
            y: y0,
            w: (x1 + 1).saturating_sub(x0).max(2),
            h: (y1 + 1).saturating_sub(y0).max(2),
        }
    };
    use crate::metrics::RoiKind::{Background, Feature};
    match kind {
        Phantom::Ramp => {
            let mut rois = vec![rect(Background, -0.4, -0.4, -0.25, -0.25)];
            for (u, v) in [(-0.2, 0.0), (0.0, -0.2), (0.0, 0.0), (0.2, 0.1), (0.1, 0.3)] {
                rois.push(rect(Feature, u - 0.05, v - 0.05, u + 0.05, v + 0.05));
            }
            rois
        }
        Phantom::Blobs => {
            let mut rois = vec![rect(Background, -0.1, -0.45, 0.1, -0.38)];
            let half = 0.03 * w.min(h);
            for &(bx, by, _) in &BLOBS {
                let (hu, hv) = (half / w, half / h);
                rois.push(rect(Feature, bx - hu, by - hv, bx + hu, by + hv));
            }
            rois
        }
        Phantom::Layers => {
            let margin = 2.5 / h;
            let mut rois = vec![rect(Background, -0.4, -0.43, -0.18, SURFACE - 0.07)];
            for &k in &FEATURE_STRATA {
                let top = SURFACE + STRATA[k].0 + margin;
                let bottom = SURFACE + STRATA.get(k + 1).map_or(0.6, |s| s.0) - margin;
                rois.push(rect(Feature, FLAT.0, top, FLAT.1, bottom));
            }
            rois
        }
    }
}

/// Draws the moved, noisy, corrupted stack together with its ground truth.
pub fn synth_stack(spec: &SynthSpec) -> Result<(ImageStack, GroundTruth)> {
    spec.validate()?;
    let frame = spec.frame();
    let pixels = frame.pixel_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.speckle_sigma)
        .map_err(|e| Error::InvalidInput(format!("speckle_sigma: {e}")))?;
    let outliers = (spec.sparse_fraction * pixels as f64).round() as usize;
    let bounded = |rng: &mut ChaCha8Rng, b: f64| {
        if b > 0.0 {
            rng.random_range(-b..=b)
        } else {
            0.0
        }
    };

    let mut images = Vec::with_capacity(spec.n);
    let mut taus = Vec::with_capacity(spec.n);
    let mut supports = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let tx = bounded(&mut rng, spec.max_translation);
        let ty = bounded(&mut rng, spec.max_translation);
        let theta = bounded(&mut rng, spec.max_rotation).to_radians();
        let tau = TransformParams::rigid(tx, ty, theta);
        let mut data = render(spec.base, frame, &tau).into_vec();
        if spec.speckle_sigma > 0.0 {
            for v in data.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        let mut support = sample(&mut rng, pixels, outliers).into_vec();
        support.sort_unstable();
        for &p in &support {
            data[p] += rng.random_range(OUTLIER_RANGE.0..OUTLIER_RANGE.1);
        }
        images.push(Image::new(frame.width, frame.height, data)?);
        taus.push(tau);
        supports.push(support);
    }

    let truth = GroundTruth {
        taus,
        clean_image: render(spec.base, frame, &TransformParams::rigid(0.0, 0.0, 0.0)),
        sparse_supports: supports,
        rois: phantom_rois(spec.base, frame),
    };
    Ok((ImageStack::new(images)?, truth))
}
