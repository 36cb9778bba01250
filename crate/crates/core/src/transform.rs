//! Parametric 2-D transforms, inverse warping with bilinear sampling, and the
//! Jacobian of a warped, unit-normalized image with respect to the transform
//! parameters.
//!
//! Coordinates are pixel units measured from the image center, so a rotation
//! turns the image about its middle rather than its top-left corner. A
//! transform maps source coordinates to frame coordinates; [`warp`] fills
//! each frame pixel by sampling the source at the inverse-mapped position.

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::Matrix;

/// A single-channel image with real intensities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "image must be at least 2x2, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "image has non-finite intensities".into(),
            ));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Builds an image from `f(x, y)`. Panics on sizes below 2x2.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width >= 2 && height >= 2, "image must be at least 2x2");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reshapes a vectorized (row-major) image back into an image.
    pub fn from_column(
        width: usize,
        height: usize,
        column: impl Iterator<Item = f64>,
    ) -> Result<Self> {
        Image::new(width, height, column.collect())
    }

    /// Separable Gaussian blur with standard deviation `sigma` pixels. The
    /// kernel is truncated at 3σ and renormalized where it overhangs the border.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let pass = |src: &Image, horizontal: bool| {
            Image::from_fn(src.width, src.height, |x, y| {
                let (mut acc, mut weight) = (0.0, 0.0);
                for (k, wk) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (sx, sy) = if horizontal {
                        (x as isize + off, y as isize)
                    } else {
                        (x as isize, y as isize + off)
                    };
                    if sx >= 0 && sy >= 0 && (sx as usize) < src.width && (sy as usize) < src.height
                    {
                        acc += wk * src.get(sx as usize, sy as usize);
                        weight += wk;
                    }
                }
                acc / weight
            })
        };
        pass(&pass(self, true), false)
    }

    fn center(&self) -> Vector2<f64> {
        Vector2::new(
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// Bilinear sample at a position already known to lie inside the image.
    fn sample(&self, sx: f64, sy: f64) -> f64 {
        let (x0, fx) = cell(sx, self.width);
        let (y0, fy) = cell(sy, self.height);
        let top = (1.0 - fx) * self.get(x0, y0) + fx * self.get(x0 + 1, y0);
        let bottom = (1.0 - fx) * self.get(x0, y0 + 1) + fx * self.get(x0 + 1, y0 + 1);
        (1.0 - fy) * top + fy * bottom
    }

    /// Gradient of the bilinear interpolant. On a lattice line, where the
    /// interpolant has a kink, the two one-sided slopes are averaged.
    fn sample_gradient(&self, sx: f64, sy: f64) -> (f64, f64) {
        let (x0, fx) = cell(sx, self.width);
        let (y0, fy) = cell(sy, self.height);
        let row = |x: usize| (1.0 - fy) * self.get(x, y0) + fy * self.get(x, y0 + 1);
        let col = |y: usize| (1.0 - fx) * self.get(x0, y) + fx * self.get(x0 + 1, y);
        let gx = match on_lattice(sx, self.width) {
            Some(r) => (row(r + 1) - row(r - 1)) / 2.0,
            None => row(x0 + 1) - row(x0),
        };
        let gy = match on_lattice(sy, self.height) {
            Some(r) => (col(r + 1) - col(r - 1)) / 2.0,
            None => col(y0 + 1) - col(y0),
        };
        (gx, gy)
    }
}

const LATTICE_EPS: f64 = 1e-9;

/// Cell origin and fractional offset for a coordinate in `[0, len-1]`.
#[inline]
fn cell(s: f64, len: usize) -> (usize, f64) {
    let s = s.clamp(0.0, (len - 1) as f64);
    let i = (s.floor() as usize).min(len - 2);
    (i, s - i as f64)
}

/// Interior lattice index when `s` sits on a grid line.
#[inline]
fn on_lattice(s: f64, len: usize) -> Option<usize> {
    let r = s.round();
    if (s - r).abs() < LATTICE_EPS && r >= 1.0 && r <= (len - 2) as f64 {
        Some(r as usize)
    } else {
        None
    }
}

/// Repeated acquisitions of the same location, all of identical size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    images: Vec<Image>,
    frame: Option<Frame>,
}

impl ImageStack {
    pub fn new(images: Vec<Image>) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::InvalidInput("image stack is empty".into()));
        };
        for (i, img) in images.iter().enumerate().skip(1) {
            if img.dims() != first.dims() {
                return Err(Error::DimensionMismatch {
                    first: "image 0".into(),
                    first_dims: first.dims(),
                    second: format!("image {i}"),
                    second_dims: img.dims(),
                });
            }
        }
        Ok(ImageStack {
            images,
            frame: None,
        })
    }

    /// Overrides the working frame (defaults to the image size).
    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = Some(frame);
        self
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn into_images(self) -> Vec<Image> {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn frame(&self) -> Frame {
        self.frame.unwrap_or_else(|| Frame::of(&self.images[0]))
    }

    /// Stacks the vectorized images as columns.
    pub fn to_matrix(&self) -> Matrix {
        let pixels = self.images[0].pixel_count();
        Matrix::from_fn(pixels, self.images.len(), |p, i| self.images[i].data[p])
    }
}

/// Output raster size of a warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "frame must be at least 2x2, got {width}x{height}"
            )));
        }
        Ok(Frame { width, height })
    }

    pub fn of(img: &Image) -> Self {
        Frame {
            width: img.width,
            height: img.height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn center(&self) -> Vector2<f64> {
        Vector2::new(
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformModel {
    Translation,
    Rigid,
    Similarity,
    Affine,
}

impl TransformModel {
    pub fn dof(self) -> usize {
        match self {
            TransformModel::Translation => 2,
            TransformModel::Rigid => 3,
            TransformModel::Similarity => 4,
            TransformModel::Affine => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformModel::Translation => "translation",
            TransformModel::Rigid => "rigid",
            TransformModel::Similarity => "similarity",
            TransformModel::Affine => "affine",
        }
    }

    pub const ALL: [TransformModel; 4] = [
        TransformModel::Translation,
        TransformModel::Rigid,
        TransformModel::Similarity,
        TransformModel::Affine,
    ];
}

impl std::str::FromStr for TransformModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(TransformModel::Translation),
            "rigid" => Ok(TransformModel::Rigid),
            "similarity" => Ok(TransformModel::Similarity),
            "affine" => Ok(TransformModel::Affine),
            other => Err(Error::InvalidInput(format!(
                "unknown transform model {other:?}"
            ))),
        }
    }
}

/// Parameters of one transform.
///
/// Layouts: translation `(tx, ty)`; rigid `(tx, ty, θ)`; similarity
/// `(tx, ty, θ, s)`; affine `(a11, a12, a21, a22, tx, ty)`. Angles are in
/// radians, translations in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    model: TransformModel,
    params: Vec<f64>,
}

impl TransformParams {
    pub fn new(model: TransformModel, params: Vec<f64>) -> Result<Self> {
        let t = TransformParams { model, params };
        t.validate()?;
        Ok(t)
    }

    pub fn identity(model: TransformModel) -> Self {
        let params = match model {
            TransformModel::Translation => vec![0.0, 0.0],
            TransformModel::Rigid => vec![0.0, 0.0, 0.0],
            TransformModel::Similarity => vec![0.0, 0.0, 0.0, 1.0],
            TransformModel::Affine => vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        };
        TransformParams { model, params }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        TransformParams {
            model: TransformModel::Translation,
            params: vec![tx, ty],
        }
    }

    pub fn rigid(tx: f64, ty: f64, theta: f64) -> Self {
        TransformParams {
            model: TransformModel::Rigid,
            params: vec![tx, ty, theta],
        }
    }

    pub fn model(&self) -> TransformModel {
        self.model
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.model.dof() {
            return Err(Error::InvalidTransform(format!(
                "{} expects {} parameters, got {}",
                self.model.name(),
                self.model.dof(),
                self.params.len()
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite parameter".into()));
        }
        match self.model {
            TransformModel::Similarity if self.params[3] <= 0.0 => Err(Error::InvalidTransform(
                format!("similarity scale must be positive, got {}", self.params[3]),
            )),
            TransformModel::Affine if self.linear().determinant().abs() <= 1e-9 => Err(
                Error::InvalidTransform("affine linear part is singular".into()),
            ),
            _ => Ok(()),
        }
    }

    fn linear(&self) -> Matrix2<f64> {
        let p = &self.params;
        match self.model {
            TransformModel::Translation => Matrix2::identity(),
            TransformModel::Rigid => rotation(p[2]),
            TransformModel::Similarity => rotation(p[2]) * p[3],
            TransformModel::Affine => Matrix2::new(p[0], p[1], p[2], p[3]),
        }
    }

    fn offset(&self) -> Vector2<f64> {
        let p = &self.params;
        match self.model {
            TransformModel::Affine => Vector2::new(p[4], p[5]),
            _ => Vector2::new(p[0], p[1]),
        }
    }

    /// Derivative of the linear part and offset with respect to parameter `k`.
    fn derivative(&self, k: usize) -> (Matrix2<f64>, Vector2<f64>) {
        let p = &self.params;
        let zero = Matrix2::zeros();
        let unit = |i: usize| {
            let mut m = Matrix2::zeros();
            m[(i / 2, i % 2)] = 1.0;
            m
        };
        let d_rot = |theta: f64| {
            let (s, c) = theta.sin_cos();
            Matrix2::new(-s, -c, c, -s)
        };
        match (self.model, k) {
            (TransformModel::Affine, 0..=3) => (unit(k), Vector2::zeros()),
            (TransformModel::Affine, 4) => (zero, Vector2::new(1.0, 0.0)),
            (TransformModel::Affine, 5) => (zero, Vector2::new(0.0, 1.0)),
            (_, 0) => (zero, Vector2::new(1.0, 0.0)),
            (_, 1) => (zero, Vector2::new(0.0, 1.0)),
            (TransformModel::Rigid, 2) => (d_rot(p[2]), Vector2::zeros()),
            (TransformModel::Similarity, 2) => (d_rot(p[2]) * p[3], Vector2::zeros()),
            (TransformModel::Similarity, 3) => (rotation(p[2]), Vector2::zeros()),
            _ => unreachable!("parameter index {k} out of range for {:?}", self.model),
        }
    }

    /// Homogeneous 3x3 matrix mapping source coordinates to frame coordinates.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let a = self.linear();
        let t = self.offset();
        Matrix3::new(
            a[(0, 0)],
            a[(0, 1)],
            t.x,
            a[(1, 0)],
            a[(1, 1)],
            t.y,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Recovers parameters of `model` from a homogeneous matrix. The linear
    /// part must be representable by the model (e.g. a pure rotation for rigid).
    pub fn from_matrix(model: TransformModel, m: &Matrix3<f64>) -> Result<Self> {
        let params = match model {
            TransformModel::Translation => vec![m[(0, 2)], m[(1, 2)]],
            TransformModel::Rigid => vec![m[(0, 2)], m[(1, 2)], m[(1, 0)].atan2(m[(0, 0)])],
            TransformModel::Similarity => {
                let scale = m[(0, 0)].hypot(m[(1, 0)]);
                vec![m[(0, 2)], m[(1, 2)], m[(1, 0)].atan2(m[(0, 0)]), scale]
            }
            TransformModel::Affine => vec![
                m[(0, 0)],
                m[(0, 1)],
                m[(1, 0)],
                m[(1, 1)],
                m[(0, 2)],
                m[(1, 2)],
            ],
        };
        TransformParams::new(model, params)
    }

    pub fn inverse_matrix(&self) -> Result<Matrix3<f64>> {
        self.to_matrix()
            .try_inverse()
            .ok_or_else(|| Error::InvalidTransform("transform is not invertible".into()))
    }

    /// Applies the transform to a point given in centered coordinates.
    pub fn apply(&self, point: (f64, f64)) -> (f64, f64) {
        let q = self.linear() * Vector2::new(point.0, point.1) + self.offset();
        (q.x, q.y)
    }
}

fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Additive parameter update `p ← p + dt`. Similarity scale is clamped to at
/// least 1e-3.
pub fn compose_update(t: &TransformParams, dt: &[f64]) -> Result<TransformParams> {
    if dt.len() != t.model.dof() {
        return Err(Error::InvalidTransform(format!(
            "update has {} entries, {} model has {} parameters",
            dt.len(),
            t.model.name(),
            t.model.dof()
        )));
    }
    let mut params: Vec<f64> = t.params.iter().zip(dt).map(|(p, d)| p + d).collect();
    if t.model == TransformModel::Similarity {
        params[3] = params[3].max(1e-3);
    }
    TransformParams::new(t.model, params)
}

/// Precomputed inverse mapping from frame pixels to source sample positions.
struct Sampler {
    inv_linear: Matrix2<f64>,
    offset: Vector2<f64>,
    frame_center: Vector2<f64>,
    source_center: Vector2<f64>,
    source_max: Vector2<f64>,
    frame_width: usize,
}

impl Sampler {
    fn new(img: &Image, t: &TransformParams, frame: Frame) -> Result<Self> {
        t.validate()?;
        let inv_linear = t
            .linear()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::InvalidTransform("transform is not invertible".into()))?;
        Ok(Sampler {
            inv_linear,
            offset: t.offset(),
            frame_center: frame.center(),
            source_center: img.center(),
            source_max: Vector2::new((img.width - 1) as f64, (img.height - 1) as f64),
            frame_width: frame.width,
        })
    }

    /// Centered source coordinates for frame pixel index `p`.
    #[inline]
    fn source_centered(&self, p: usize) -> Vector2<f64> {
        let x = (p % self.frame_width) as f64;
        let y = (p / self.frame_width) as f64;
        self.inv_linear * (Vector2::new(x, y) - self.frame_center - self.offset)
    }

    /// Absolute source position, or `None` when it falls outside the image.
    #[inline]
    fn position(&self, centered: &Vector2<f64>) -> Option<(f64, f64)> {
        let s = centered + self.source_center;
        let inside = |v: f64, max: f64| v >= -LATTICE_EPS && v <= max + LATTICE_EPS;
        if inside(s.x, self.source_max.x) && inside(s.y, self.source_max.y) {
            Some((
                s.x.clamp(0.0, self.source_max.x),
                s.y.clamp(0.0, self.source_max.y),
            ))
        } else {
            None
        }
    }
}

/// Inverse-warps `img` into `frame`. Pixels whose source position falls
/// outside the image are set to zero and flagged `false` in the mask.
pub fn warp(img: &Image, t: &TransformParams, frame: Frame) -> Result<(Image, Vec<bool>)> {
    let frame = Frame::new(frame.width, frame.height)?;
    let sampler = Sampler::new(img, t, frame)?;
    let n = frame.pixel_count();
    let mut data = vec![0.0; n];
    let mut mask = vec![false; n];
    for p in 0..n {
        if let Some((sx, sy)) = sampler.position(&sampler.source_centered(p)) {
            data[p] = img.sample(sx, sy);
            mask[p] = true;
        }
    }
    Ok((
        Image {
            width: frame.width,
            height: frame.height,
            data,
        },
        mask,
    ))
}

/// Finite-difference gradients: central in the interior, one-sided on the
/// border.
pub fn image_gradients(img: &Image) -> (Image, Image) {
    let (w, h) = img.dims();
    let gx = Image::from_fn(w, h, |x, y| {
        if x == 0 {
            img.get(1, y) - img.get(0, y)
        } else if x == w - 1 {
            img.get(w - 1, y) - img.get(w - 2, y)
        } else {
            (img.get(x + 1, y) - img.get(x - 1, y)) / 2.0
        }
    });
    let gy = Image::from_fn(w, h, |x, y| {
        if y == 0 {
            img.get(x, 1) - img.get(x, 0)
        } else if y == h - 1 {
            img.get(x, h - 1) - img.get(x, h - 2)
        } else {
            (img.get(x, y + 1) - img.get(x, y - 1)) / 2.0
        }
    });
    (gx, gy)
}

/// Derivative of a normalized, vectorized warped image with respect to the
/// transform parameters: `pixels × dof`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlock {
    pub entries: Matrix,
}

impl JacobianBlock {
    pub fn pixels(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dof(&self) -> usize {
        self.entries.ncols()
    }
}

/// Jacobian of `v = w/‖w‖` where `w` is the warp of `img` under `t`,
/// normalized over the warp's own validity mask.
pub fn transform_jacobian(img: &Image, t: &TransformParams, frame: Frame) -> Result<JacobianBlock> {
    let (_, mask) = warp(img, t, frame)?;
    let valid = mask.iter().filter(|&&m| m).count();
    if 2 * valid < mask.len() {
        return Err(Error::InvalidInput(format!(
            "only {valid} of {} warped pixels are valid",
            mask.len()
        )));
    }
    transform_jacobian_masked(img, t, frame, &mask)
}

/// Jacobian of the warped image restricted to `mask` and normalized over it.
/// Rows outside the mask are zero.
pub fn transform_jacobian_masked(
    img: &Image,
    t: &TransformParams,
    frame: Frame,
    mask: &[bool],
) -> Result<JacobianBlock> {
    transform_jacobian_with_gradients(img, img, t, frame, mask)
}

/// As [`transform_jacobian_masked`], but image gradients are read from
/// `gradient_source` (same size as `img`), typically a smoothed copy. The
/// warped values and the normalization still come from `img`.
pub fn transform_jacobian_with_gradients(
    img: &Image,
    gradient_source: &Image,
    t: &TransformParams,
    frame: Frame,
    mask: &[bool],
) -> Result<JacobianBlock> {
    if gradient_source.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            first: "image".into(),
            first_dims: img.dims(),
            second: "gradient source".into(),
            second_dims: gradient_source.dims(),
        });
    }
    let (values, raw) = raw_jacobian(img, gradient_source, t, frame, mask)?;
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return Err(Error::DegenerateImage {
            index: 0,
            reason: "warped image is zero on the valid region".into(),
        });
    }
    // d(w/‖w‖) = (I − v vᵀ) dw / ‖w‖
    let v = nalgebra::DVector::from_iterator(values.len(), values.iter().map(|x| x / norm));
    let proj = v.transpose() * &raw;
    let entries = (raw - &v * proj) / norm;
    Ok(JacobianBlock { entries })
}

/// Masked warped values and their un-normalized parameter derivatives.
pub(crate) fn raw_jacobian(
    img: &Image,
    gradient_source: &Image,
    t: &TransformParams,
    frame: Frame,
    mask: &[bool],
) -> Result<(Vec<f64>, Matrix)> {
    let frame = Frame::new(frame.width, frame.height)?;
    if mask.len() != frame.pixel_count() {
        return Err(Error::InvalidInput(format!(
            "mask has {} entries, frame has {} pixels",
            mask.len(),
            frame.pixel_count()
        )));
    }
    let sampler = Sampler::new(img, t, frame)?;
    let dof = t.model.dof();
    let derivs: Vec<_> = (0..dof).map(|k| t.derivative(k)).collect();
    let n = frame.pixel_count();
    let mut values = vec![0.0; n];
    let mut jac = Matrix::zeros(n, dof);
    for p in 0..n {
        if !mask[p] {
            continue;
        }
        let sc = sampler.source_centered(p);
        let Some((sx, sy)) = sampler.position(&sc) else {
            continue;
        };
        values[p] = img.sample(sx, sy);
        let (gx, gy) = gradient_source.sample_gradient(sx, sy);
        for (k, (da, dt)) in derivs.iter().enumerate() {
            // s = A⁻¹(x − t)  ⇒  ∂s/∂p = −A⁻¹(∂A·s + ∂t)
            let ds = -(sampler.inv_linear * (da * sc + dt));
            jac[(p, k)] = gx * ds.x + gy * ds.y;
        }
    }
    Ok((values, jac))
}
