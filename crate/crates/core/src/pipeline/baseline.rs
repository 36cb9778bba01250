//! Integer-pixel translation registration by normalized cross-correlation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::transform::{warp, Image, ImageStack, TransformParams};

/// Result of registering every image to the first.
#[derive(Debug, Clone)]
pub struct TranslationBaseline {
    pub aligned: ImageStack,
    /// Aligning translations: `aligned[i] = warp(stack[i], taus[i])`.
    pub taus: Vec<TransformParams>,
    pub masks: Vec<Vec<bool>>,
}

/// Registers each image to the first over integer shifts of up to 10% of
/// the frame size in each direction.
pub fn baseline_translation_align(stack: &ImageStack) -> Result<TranslationBaseline> {
    if stack.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "registration needs at least 2 images, got {}",
            stack.len()
        )));
    }
    let images = stack.images();
    for (index, img) in images.iter().enumerate() {
        let v = img.as_slice();
        if v.iter().all(|&x| x == v[0]) {
            return Err(Error::DegenerateImage {
                index,
                reason: "zero variance".into(),
            });
        }
    }
    let reference = &images[0];
    let frame = stack.frame();
    let reach_x = (reference.width() / 10) as isize;
    let reach_y = (reference.height() / 10) as isize;

    let shifts = images
        .par_iter()
        .enumerate()
        .map(|(index, img)| {
            if index == 0 {
                return Ok((0, 0));
            }
            best_shift(reference, img, reach_x, reach_y).ok_or_else(|| Error::DegenerateImage {
                index,
                reason: "no shift gives a defined correlation".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut aligned = Vec::with_capacity(images.len());
    let mut taus = Vec::with_capacity(images.len());
    let mut masks = Vec::with_capacity(images.len());
    for (img, &(dx, dy)) in images.iter().zip(&shifts) {
        // Sampling img at p + d is a warp by −d.
        let tau = TransformParams::translation(-(dx as f64), -(dy as f64));
        let (out, mask) = warp(img, &tau, frame)?;
        aligned.push(out);
        taus.push(tau);
        masks.push(mask);
    }
    Ok(TranslationBaseline {
        aligned: ImageStack::new(aligned)?.with_frame(frame),
        taus,
        masks,
    })
}

/// Shift `d` maximizing the correlation of `reference(p)` with `img(p + d)`
/// over their overlap. Ties keep the first candidate in scan order.
fn best_shift(
    reference: &Image,
    img: &Image,
    reach_x: isize,
    reach_y: isize,
) -> Option<(isize, isize)> {
    let mut best: Option<((isize, isize), f64)> = None;
    for dy in -reach_y..=reach_y {
        for dx in -reach_x..=reach_x {
            if let Some(score) = ncc(reference, img, dx, dy) {
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some(((dx, dy), score));
                }
            }
        }
    }
    best.map(|(d, _)| d)
}

fn ncc(a: &Image, b: &Image, dx: isize, dy: isize) -> Option<f64> {
    let (w, h) = (a.width() as isize, a.height() as isize);
    let (x0, x1) = (0.max(-dx), w.min(w - dx));
    let (y0, y1) = (0.max(-dy), h.min(h - dy));
    if x1 - x0 < 2 || y1 - y0 < 2 {
        return None;
    }
    let count = ((x1 - x0) * (y1 - y0)) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            sa += a.get(x as usize, y as usize);
            sb += b.get((x + dx) as usize, (y + dy) as usize);
        }
    }
    let (ma, mb) = (sa / count, sb / count);
    let (mut cross, mut va, mut vb) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let p = a.get(x as usize, y as usize) - ma;
            let q = b.get((x + dx) as usize, (y + dy) as usize) - mb;
            cross += p * q;
            va += p * p;
            vb += q * q;
        }
    }
    let denom = (va * vb).sqrt();
    (denom > 0.0).then(|| cross / denom)
}
