//! Stack manifests, PNG images and plain-text matrices.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::Matrix;
use crate::transform::{Frame, Image, ImageStack};

/// An ordered list of image files.
///
/// On disk: one path per line, relative paths resolved against the manifest's
/// directory. Lines starting with `#` are comments, except the directives
/// `# frame <w> <h>`, `# source <id>` and `# note <text>`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StackManifest {
    pub paths: Vec<PathBuf>,
    pub frame: Option<Frame>,
    pub source: Option<String>,
    pub notes: Vec<String>,
}

impl StackManifest {
    pub fn from_paths(paths: impl IntoIterator<Item = PathBuf>) -> Self {
        StackManifest {
            paths: paths.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut manifest = StackManifest::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                let (key, rest) = comment
                    .split_once(char::is_whitespace)
                    .unwrap_or((comment, ""));
                let rest = rest.trim();
                match key {
                    "frame" => {
                        let dims: Vec<usize> = rest
                            .split_whitespace()
                            .map(str::parse)
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad_line(lineno, "frame needs two pixel counts"))?;
                        let [w, h] = dims.as_slice() else {
                            return Err(bad_line(lineno, "frame needs two pixel counts"));
                        };
                        manifest.frame = Some(Frame::new(*w, *h)?);
                    }
                    "source" => manifest.source = Some(rest.to_string()),
                    "note" => manifest.notes.push(rest.to_string()),
                    _ => {}
                }
                continue;
            }
            let path = PathBuf::from(line);
            manifest.paths.push(if path.is_absolute() {
                path
            } else {
                base_dir.join(path)
            });
        }
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        StackManifest::parse(&text, base).map_err(|e| match e {
            Error::InvalidManifest(msg) => {
                Error::InvalidManifest(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    /// Serializes with paths written relative to `base_dir` where possible.
    pub fn to_text(&self, base_dir: &Path) -> String {
        let mut out = String::new();
        if let Some(source) = &self.source {
            let _ = writeln!(out, "# source {source}");
        }
        if let Some(frame) = self.frame {
            let _ = writeln!(out, "# frame {} {}", frame.width, frame.height);
        }
        for note in &self.notes {
            let _ = writeln!(out, "# note {note}");
        }
        for path in &self.paths {
            let shown = path.strip_prefix(base_dir).unwrap_or(path);
            let _ = writeln!(out, "{}", shown.display());
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        std::fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }
}

fn bad_line(lineno: usize, msg: &str) -> Error {
    Error::InvalidManifest(format!("line {}: {msg}", lineno + 1))
}

/// Loads an 8- or 16-bit single-channel image, scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::io(path, "file not found"));
    }
    let decoded = image::open(path).map_err(|e| Error::io(path, format!("decode failed: {e}")))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => {
            return Err(Error::io(
                path,
                format!(
                    "expected a single-channel 8- or 16-bit image, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    Image::new(width, height, data).map_err(|e| Error::io(path, e))
}

/// Loads every image of the manifest and checks that their sizes agree.
pub fn load_stack(manifest: &StackManifest) -> Result<ImageStack> {
    if manifest.paths.is_empty() {
        return Err(Error::InvalidManifest("manifest lists no images".into()));
    }
    let mut images = Vec::with_capacity(manifest.paths.len());
    for path in &manifest.paths {
        let img = load_image(path)?;
        if let Some(first) = images.first().map(Image::dims) {
            if img.dims() != first {
                return Err(Error::DimensionMismatch {
                    first: manifest.paths[0].display().to_string(),
                    first_dims: first,
                    second: path.display().to_string(),
                    second_dims: img.dims(),
                });
            }
        }
        images.push(img);
    }
    let stack = ImageStack::new(images)?;
    Ok(match manifest.frame {
        Some(frame) => stack.with_frame(frame),
        None => stack,
    })
}

/// Writes a 16-bit grayscale PNG. Intensities are clamped to `[0, 1]`.
pub fn save_png16(path: &Path, img: &Image) -> Result<()> {
    let raw: Vec<u16> = img
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("buffer length matches the image size");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, format!("encode failed: {e}")))
}

/// Parses a whitespace-separated matrix, one row per line.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("line {}: {t:?} is not a number", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidInput(format!(
                    "line {} has {} values, earlier rows have {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("matrix file has no rows".into()));
    }
    let cols = rows[0].len();
    let m = Matrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
    crate::prox::ensure_finite(&m, "matrix file")?;
    Ok(m)
}

/// Shortest decimal form that reads back to the same value.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.len() * 12);
    for row in m.row_iter() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text).map_err(|e| Error::io(path, e))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    std::fs::write(path, format_matrix(m)).map_err(|e| Error::io(path, e))
}
