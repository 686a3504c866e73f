//! MNIST in IDX format.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

/// Images scaled to [0, 1], one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn one_hot(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.len(), CLASSES));
        for (i, &l) in self.labels.iter().enumerate() {
            y[[i, l as usize]] = 1.0;
        }
        y
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split { images: self.images.slice(ndarray::s![..n, ..]).to_owned(), labels: self.labels[..n].to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mnist {
    pub train: Split,
    pub test: Split,
}

const FILES: [&str; 4] = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

/// Loads the four standard files from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Mnist> {
    let dir = dir.as_ref();
    let p = |k: usize| -> PathBuf { dir.join(FILES[k]) };
    Ok(Mnist { train: load_split(&p(0), &p(1))?, test: load_split(&p(2), &p(3))? })
}

pub fn load_split(images: &Path, labels: &Path) -> Result<Split> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let images_arr = parse_images(&img, images)?;
    let labels_vec = parse_labels(&lab, labels)?;
    if images_arr.nrows() != labels_vec.len() {
        return Err(Error::Format {
            path: labels.display().to_string(),
            offset: 4,
            msg: format!("{} labels for {} images", labels_vec.len(), images_arr.nrows()),
        });
    }
    Ok(Split { images: images_arr, labels: labels_vec })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format { path: path.display().to_string(), offset, msg: "truncated header".into() })
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format { path: path.display().to_string(), offset: 0, msg: format!("bad image magic {magic:#010x}") });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let px = rows * cols;
    let body = &bytes[16..];
    if body.len() != n * px {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: 16 + body.len().min(n * px),
            msg: format!("expected {} pixel bytes, found {}", n * px, body.len()),
        });
    }
    Ok(Array2::from_shape_fn((n, px), |(i, j)| f64::from(body[i * px + j]) / 255.0))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format { path: path.display().to_string(), offset: 0, msg: format!("bad label magic {magic:#010x}") });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: 8 + body.len().min(n),
            msg: format!("expected {n} labels, found {}", body.len()),
        });
    }
    if let Some(k) = body.iter().position(|&l| l as usize >= CLASSES) {
        return Err(Error::Format { path: path.display().to_string(), offset: 8 + k, msg: format!("label {} out of range", body[k]) });
    }
    Ok(body.to_vec())
}

/// Encoders used by tests and tools to produce small IDX files.
pub fn encode_images(images: &[Vec<u8>], rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    for v in [IMAGE_MAGIC, images.len() as u32, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        out.extend_from_slice(im);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_small_files() {
        let imgs = vec![vec![0u8, 255, 128, 1], vec![3, 4, 5, 6]];
        let a = parse_images(&encode_images(&imgs, 2, 2), Path::new("x")).unwrap();
        assert_eq!(a.dim(), (2, 4));
        assert_eq!(a[[0, 1]], 1.0);
        assert_eq!(a[[0, 0]], 0.0);
        assert_eq!(parse_labels(&encode_labels(&[7, 0]), Path::new("y")).unwrap(), vec![7, 0]);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = encode_labels(&[1]);
        b[3] = 0x07;
        match parse_labels(&b, Path::new("y")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_images(&b, Path::new("y")), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_body_is_rejected() {
        let mut b = encode_images(&[vec![1, 2, 3, 4]], 2, 2);
        b.pop();
        assert!(matches!(parse_images(&b, Path::new("x")), Err(Error::Format { offset: 19, .. })));
    }
}
