//! Region-of-interest signal-to-noise and contrast-to-noise ratios.
//!
//! One background ROI supplies the noise statistics `(μ_b, σ_b)`; every
//! feature ROI `m` then scores
//!
//! ```text
//! SNR_m = 20·log10(μ_m / σ_b)
//! CNR_m = (μ_m − μ_b) / √(σ_m² + σ_b²)
//! ```
//!
//! Standard deviations are population (divide by N) throughout.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::Image;

/// Smallest ROI accepted by [`evaluate`] and by ROI files.
pub const MIN_ROI_AREA: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiKind {
    Background,
    Feature,
}

impl RoiKind {
    pub fn name(self) -> &'static str {
        match self {
            RoiKind::Background => "background",
            RoiKind::Feature => "feature",
        }
    }
}

/// Axis-aligned rectangle; `(x, y)` is the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub kind: RoiKind,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub fn background(x: usize, y: usize, w: usize, h: usize) -> Self {
        Roi {
            kind: RoiKind::Background,
            x,
            y,
            w,
            h,
        }
    }

    pub fn feature(x: usize, y: usize, w: usize, h: usize) -> Self {
        Roi {
            kind: RoiKind::Feature,
            x,
            y,
            w,
            h,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    fn check_inside(&self, img: &Image) -> Result<()> {
        if self.area() == 0 {
            return Err(Error::InvalidRoi(format!("{self} has zero area")));
        }
        if self.x + self.w > img.width() || self.y + self.h > img.height() {
            return Err(Error::InvalidRoi(format!(
                "{self} extends past a {}x{} image",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    fn values<'a>(&'a self, img: &'a Image) -> impl Iterator<Item = f64> + 'a {
        (self.y..self.y + self.h)
            .flat_map(move |y| (self.x..self.x + self.w).map(move |x| img.get(x, y)))
    }
}

impl std::fmt::Display for Roi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.kind.name(),
            self.x,
            self.y,
            self.w,
            self.h
        )
    }
}

impl std::str::FromStr for Roi {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [kind, rest @ ..] = fields.as_slice() else {
            return Err(Error::InvalidRoi("empty roi line".into()));
        };
        let kind = match kind.to_ascii_lowercase().as_str() {
            "background" => RoiKind::Background,
            "feature" => RoiKind::Feature,
            other => return Err(Error::InvalidRoi(format!("unknown roi kind {other:?}"))),
        };
        if rest.len() != 4 {
            return Err(Error::InvalidRoi(format!(
                "expected `kind x y w h`, got {:?}",
                line.trim()
            )));
        }
        let mut nums = [0usize; 4];
        for (slot, text) in nums.iter_mut().zip(rest) {
            *slot = text
                .parse()
                .map_err(|_| Error::InvalidRoi(format!("{text:?} is not a pixel count")))?;
        }
        let [x, y, w, h] = nums;
        Ok(Roi { kind, x, y, w, h })
    }
}

/// Parses an ROI file: one `kind x y w h` per line, `#` starts a comment.
pub fn parse_rois(text: &str) -> Result<Vec<Roi>> {
    let mut rois = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let roi: Roi = line.parse().map_err(|e| match e {
            Error::InvalidRoi(msg) => Error::InvalidRoi(format!("line {}: {msg}", lineno + 1)),
            other => other,
        })?;
        if roi.area() < MIN_ROI_AREA {
            return Err(Error::InvalidRoi(format!(
                "line {}: area {} is below {MIN_ROI_AREA} pixels",
                lineno + 1,
                roi.area()
            )));
        }
        rois.push(roi);
    }
    Ok(rois)
}

pub fn format_rois(rois: &[Roi]) -> String {
    let mut out = String::from("# kind x y w h\n");
    for roi in rois {
        let _ = writeln!(out, "{roi}");
    }
    out
}

pub fn read_rois(path: &Path) -> Result<Vec<Roi>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rois(&text).map_err(|e| Error::io(path, e))
}

pub fn write_rois(path: &Path, rois: &[Roi]) -> Result<()> {
    std::fs::write(path, format_rois(rois)).map_err(|e| Error::io(path, e))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub mean: f64,
    pub std: f64,
}

pub fn roi_stats(img: &Image, roi: &Roi) -> Result<RoiStats> {
    roi.check_inside(img)?;
    let n = roi.area() as f64;
    let mean = roi.values(img).sum::<f64>() / n;
    let var = roi
        .values(img)
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    Ok(RoiStats {
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// dB, one entry per feature ROI in input order.
    pub per_roi_snr: Vec<f64>,
    pub per_roi_cnr: Vec<f64>,
    pub avg_snr: f64,
    pub avg_cnr: f64,
    pub background_stats: RoiStats,
    pub feature_stats: Vec<RoiStats>,
}

pub fn snr_db(feature_mean: f64, background_std: f64) -> f64 {
    20.0 * (feature_mean / background_std).log10()
}

pub fn cnr(feature: RoiStats, background: RoiStats) -> f64 {
    (feature.mean - background.mean) / (feature.std.powi(2) + background.std.powi(2)).sqrt()
}

/// Scores every feature ROI against the single background ROI.
pub fn evaluate(img: &Image, rois: &[Roi]) -> Result<MetricReport> {
    let backgrounds: Vec<&Roi> = rois
        .iter()
        .filter(|r| r.kind == RoiKind::Background)
        .collect();
    let [background] = backgrounds.as_slice() else {
        return Err(Error::InvalidRoi(format!(
            "expected exactly one background roi, got {}",
            backgrounds.len()
        )));
    };
    let features: Vec<&Roi> = rois.iter().filter(|r| r.kind == RoiKind::Feature).collect();
    if features.is_empty() {
        return Err(Error::InvalidRoi("no feature roi given".into()));
    }
    for roi in rois {
        if roi.area() < MIN_ROI_AREA {
            return Err(Error::InvalidRoi(format!(
                "{roi}: area {} is below {MIN_ROI_AREA} pixels",
                roi.area()
            )));
        }
    }

    let bg = roi_stats(img, background)?;
    if bg.std == 0.0 {
        return Err(Error::DegenerateBackground);
    }
    let mut feature_stats = Vec::with_capacity(features.len());
    let mut per_roi_snr = Vec::with_capacity(features.len());
    let mut per_roi_cnr = Vec::with_capacity(features.len());
    for (m, roi) in features.iter().enumerate() {
        let st = roi_stats(img, roi)?;
        if !(st.mean > 0.0) {
            return Err(Error::UndefinedSnr {
                roi: m,
                mean: st.mean,
            });
        }
        per_roi_snr.push(snr_db(st.mean, bg.std));
        per_roi_cnr.push(cnr(st, bg));
        feature_stats.push(st);
    }
    let count = features.len() as f64;
    Ok(MetricReport {
        avg_snr: per_roi_snr.iter().sum::<f64>() / count,
        avg_cnr: per_roi_cnr.iter().sum::<f64>() / count,
        per_roi_snr,
        per_roi_cnr,
        background_stats: bg,
        feature_stats,
    })
}
