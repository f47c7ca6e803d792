//! IDX container: big-endian u32 magic, one big-endian u32 per dimension,
//! then an unsigned-byte payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};
use crate::ClassLabel;

/// Unsigned-byte payload, three dimensions (count, rows, columns).
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte payload, one dimension (count).
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxFile {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxFile> {
    let mut bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ndims = (expected_magic & 0xff) as usize;
    let header = 4 * (1 + ndims);
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let magic = word(0);
    if magic != expected_magic {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
            expected: expected_magic,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (1..=ndims).map(|i| word(i) as usize).collect();
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual,
        });
    }
    bytes.drain(..header);
    bytes.truncate(expected);
    Ok(IdxFile { dims, payload: bytes })
}

/// Loads an image/label IDX pair. Images are flattened row-major and every
/// byte `p` becomes `p / 255`.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_pair(images_path.as_ref(), labels_path.as_ref())
}

pub fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_idx(images_path, IMAGES_MAGIC)?;
    let labels = read_idx(labels_path, LABELS_MAGIC)?;
    let (n_images, n_labels) = (images.dims[0], labels.dims[0]);
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let width = images.dims[1] * images.dims[2];
    let features = Array2::from_shape_vec(
        (n_images, width),
        images.payload.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("payload length checked");
    let labels = labels.payload.iter().map(|&l| ClassLabel::from(l)).collect();
    Dataset::new(features, labels)
}

fn write_file(path: &Path, header: &[u32], payload: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(4 * header.len() + payload.len());
    for w in header {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Writes features as an image file of `rows × cols` images, quantizing each
/// value to the nearest of 256 levels.
pub fn write_idx_images(path: impl AsRef<Path>, d: &Dataset, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != d.n_features() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images cannot hold {} features",
            d.n_features()
        )));
    }
    let payload: Vec<u8> = d.features().iter().map(|&v| (v * 255.0).round() as u8).collect();
    write_file(
        path.as_ref(),
        &[IMAGES_MAGIC, d.len() as u32, rows as u32, cols as u32],
        &payload,
    )
}

pub fn write_idx_labels(path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    let payload = d
        .labels()
        .iter()
        .map(|&l| {
            u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit in a byte")))
        })
        .collect::<Result<Vec<u8>>>()?;
    write_file(path.as_ref(), &[LABELS_MAGIC, d.len() as u32], &payload)
}
