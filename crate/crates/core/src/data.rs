//! Datasets: IDX and comma-separated readers, synthetic Gaussian clusters,
//! and the seeded train/validation split.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::{stream_id, RngStream, Vector};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vector>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vector>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.len(),
                labels: labels.len(),
            });
        }
        if let Some(first) = features.first() {
            let dim = first.len();
            if let Some(bad) = features.iter().find(|f| f.len() != dim) {
                return Err(Error::DimensionMismatch {
                    context: "dataset features",
                    expected: dim,
                    actual: bad.len(),
                });
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[Vector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// The first `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header needs {} bytes, file has {}", at + 4, bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Reads an IDX image/label pair (optionally gzip-compressed). Pixels are
/// flattened row-major and divided by 255.
pub fn read_idx(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let images = read_maybe_gz(image_path)?;
    check_magic(&images, IDX_IMAGES_MAGIC, image_path)?;
    let count = be_u32(&images, 4, image_path)? as usize;
    let rows = be_u32(&images, 8, image_path)? as usize;
    let cols = be_u32(&images, 12, image_path)? as usize;
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() < count * pixels {
        return Err(Error::Truncated {
            path: image_path.to_path_buf(),
            detail: format!("{count} images of {rows}x{cols} need {} bytes, found {}", count * pixels, body.len()),
        });
    }

    let labels = read_maybe_gz(label_path)?;
    check_magic(&labels, IDX_LABELS_MAGIC, label_path)?;
    let label_count = be_u32(&labels, 4, label_path)? as usize;
    let label_body = &labels[8..];
    if label_body.len() < label_count {
        return Err(Error::Truncated {
            path: label_path.to_path_buf(),
            detail: format!("{label_count} labels declared, {} present", label_body.len()),
        });
    }
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let features = body[..count * pixels]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    let labels: Vec<usize> = label_body[..count].iter().map(|&l| usize::from(l)).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, class_count)
}

/// One example per line: comma-separated features, integer label last.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_delimited(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (label, rest) = fields.split_last().expect("split yields at least one field");
        if rest.is_empty() {
            return Err(parse_err("need at least one feature and a label".into()));
        }
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(format!("label {label:?} is not a non-negative integer")))?;
        let row = rest
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("feature {f:?} is not a finite number")))
            })
            .collect::<Result<Vector>>()?;
        if let Some(first) = features.first().map(|f: &Vector| f.len()) {
            if first != row.len() {
                return Err(parse_err(format!("expected {first} features, found {}", row.len())));
            }
        }
        features.push(row);
        labels.push(label);
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, class_count)
}

/// Center of class `c` for [`synth_gaussians`]: points on the unit circle in
/// the first two coordinates, plus a unit offset on coordinate `2 + c mod (dim−2)`
/// when there are spare dimensions.
pub fn synth_center(c: usize, class_count: usize, dim: usize) -> Vector {
    let mut center = Vector::zeros(dim);
    if dim == 1 {
        center[0] = c as f64;
        return center;
    }
    let angle = 2.0 * std::f64::consts::PI * c as f64 / class_count as f64;
    center[0] = angle.cos();
    center[1] = angle.sin();
    if dim > 2 {
        center[2 + c % (dim - 2)] += 1.0;
    }
    center
}

/// Isotropic Gaussian clusters of standard deviation `spread` around fixed
/// centers. Classes are interleaved.
pub fn synth_gaussians(class_count: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if class_count == 0 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidConfig(
            "synthetic dataset needs positive class count, dimension and size".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig(format!("spread {spread} must be finite and non-negative")));
    }
    let centers: Vec<Vector> = (0..class_count).map(|c| synth_center(c, class_count, dim)).collect();
    let mut rng = RngStream::new(seed, stream_id("synth", 0));
    let mut features = Vec::with_capacity(class_count * per_class);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            features.push(center.iter().map(|&m| m + spread * rng.normal()).collect());
            labels.push(c);
        }
    }
    Dataset::new(features, labels, class_count)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(val_fraction: f64, seed: u64) -> Result<Self> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {val_fraction} must lie strictly between 0 and 1"
            )));
        }
        Ok(SplitSpec { val_fraction, seed })
    }

    /// The 80/20 split.
    pub fn standard(seed: u64) -> Self {
        SplitSpec {
            val_fraction: 0.2,
            seed,
        }
    }
}

pub const MIN_SPLIT_SIZE: usize = 5;

/// Seeded shuffle then partition into `(train, validation)`.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&train), ds.subset(&val)))
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < MIN_SPLIT_SIZE {
        return Err(Error::DatasetTooSmall {
            size: n,
            min: MIN_SPLIT_SIZE,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(spec.seed, stream_id("split", 0)).shuffle(&mut order);
    let n_val = ((n as f64 * spec.val_fraction).round() as usize).clamp(1, n - 1);
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    Ok((train, val))
}
