//! Pixel-wise compounding across the stack axis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::Matrix;
use crate::transform::{Frame, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompoundMethod {
    Median,
    Mean,
}

impl CompoundMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompoundMethod::Median => "median",
            CompoundMethod::Mean => "mean",
        }
    }
}

impl std::str::FromStr for CompoundMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "median" => Ok(CompoundMethod::Median),
            "mean" => Ok(CompoundMethod::Mean),
            other => Err(Error::InvalidInput(format!(
                "unknown compounding method {other:?} (expected median or mean)"
            ))),
        }
    }
}

impl std::fmt::Display for CompoundMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Median of a non-empty slice; the midpoint of the central pair for even
/// lengths. Reorders the slice.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mid = values.len() / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Collapses a `pixels × n` stack into one image.
///
/// `masks[i][p]` marks pixel `p` of column `i` as usable; without masks every
/// entry is used. Each output pixel combines only its usable entries.
pub fn compound(
    stack: &Matrix,
    method: CompoundMethod,
    masks: Option<&[Vec<bool>]>,
    frame: Frame,
) -> Result<Image> {
    let (pixels, n) = stack.shape();
    if n == 0 {
        return Err(Error::InvalidInput("cannot compound an empty stack".into()));
    }
    if pixels != frame.pixel_count() {
        return Err(Error::InvalidInput(format!(
            "stack has {pixels} rows but a {}x{} frame has {}",
            frame.width,
            frame.height,
            frame.pixel_count()
        )));
    }
    if let Some(masks) = masks {
        if masks.len() != n || masks.iter().any(|m| m.len() != pixels) {
            return Err(Error::InvalidInput(format!(
                "expected {n} masks of {pixels} pixels"
            )));
        }
    }
    if stack.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "compounding input has non-finite entries".into(),
        ));
    }

    let data = (0..pixels)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |values, p| {
                values.clear();
                values.extend(
                    (0..n)
                        .filter(|&i| masks.is_none_or(|m| m[i][p]))
                        .map(|i| stack[(p, i)]),
                );
                if values.is_empty() {
                    return Err(Error::MaskedPixel { pixel: p });
                }
                Ok(match method {
                    CompoundMethod::Median => median_in_place(values),
                    CompoundMethod::Mean => values.iter().sum::<f64>() / values.len() as f64,
                })
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Image::new(frame.width, frame.height, data)
}
