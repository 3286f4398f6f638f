//! IDX binary format (the MNIST distribution format).
//!
//! Big-endian header: magic `0x00000803` for images followed by count, rows
//! and cols; magic `0x00000801` for labels followed by count. The body is
//! unsigned bytes. Files ending in `.gz` are decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Batch;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated {
                path: self.path.to_path_buf(),
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: "image dimensions overflow".into(),
        })?;
    let pixels = r.take(len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(LABELS_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.take(count)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads an image/label file pair; pixels are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Batch> {
    let images = parse_images(&read_file(images_path)?, images_path)?;
    let labels = parse_labels(&read_file(labels_path)?, labels_path)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let dim = images.rows * images.cols;
    let inputs = Array2::from_shape_vec(
        (images.count, dim),
        images.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .map_err(|e| Error::Parse {
        path: images_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Batch::new(inputs, labels, classes)
}

/// The four MNIST files inside one directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    pub const STEMS: [&'static str; 4] = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];

    /// Finds each file as-is or with a `.gz` suffix.
    pub fn locate(dir: &Path) -> Result<Self> {
        let mut found = Vec::with_capacity(4);
        let mut missing = Vec::new();
        for stem in Self::STEMS {
            let plain = dir.join(stem);
            let gz = dir.join(format!("{stem}.gz"));
            if plain.is_file() {
                found.push(plain);
            } else if gz.is_file() {
                found.push(gz);
            } else {
                missing.push(plain);
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingDataset { expected: missing });
        }
        let mut it = found.into_iter();
        Ok(MnistPaths {
            train_images: it.next().expect("four paths"),
            train_labels: it.next().expect("four paths"),
            test_images: it.next().expect("four paths"),
            test_labels: it.next().expect("four paths"),
        })
    }
}

pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let paths = MnistPaths::locate(dir)?;
    let train = load_idx(&paths.train_images, &paths.train_labels)?;
    let test = load_idx(&paths.test_images, &paths.test_labels)?;
    for split in [&train, &test] {
        if let Some(&label) = split.labels.iter().find(|&&y| y >= MNIST_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: MNIST_CLASSES,
            });
        }
    }
    if train.input_dim() != test.input_dim() {
        return Err(Error::shape("MNIST test width", train.input_dim(), test.input_dim()));
    }
    Ok(Dataset {
        train,
        test,
        num_classes: MNIST_CLASSES,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture() -> (IdxImages, Vec<u8>) {
        let images = IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 128, 1, 7, 7, 7, 7, 255, 0, 0, 255],
        };
        (images, vec![3, 0, 9])
    }

    fn hand_built_image_bytes() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 128, 1, 7, 7, 7, 7, 255, 0, 0, 255]);
        b
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = hand_built_image_bytes();
        let parsed = parse_images(&bytes, Path::new("fixture")).unwrap();
        assert_eq!(parsed, fixture().0);
        assert_eq!(encode_images(&parsed), bytes);

        let label_bytes = vec![0, 0, 8, 1, 0, 0, 0, 3, 3, 0, 9];
        let labels = parse_labels(&label_bytes, Path::new("fixture")).unwrap();
        assert_eq!(labels, fixture().1);
        assert_eq!(encode_labels(&labels), label_bytes);
    }

    #[test]
    fn wrong_magic_rejected() {
        let labels = encode_labels(&[1, 2]);
        match parse_images(&labels, Path::new("x")) {
            Err(Error::BadMagic { found, expected, .. }) => {
                assert_eq!(found, LABELS_MAGIC);
                assert_eq!(expected, IMAGES_MAGIC);
            }
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_variants_rejected() {
        let good = hand_built_image_bytes();
        // short header
        assert!(matches!(
            parse_images(&good[..10], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        // short body
        assert!(matches!(
            parse_images(&good[..good.len() - 1], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            parse_images(&[], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        let labels = encode_labels(&[1, 2, 3]);
        assert!(matches!(
            parse_labels(&labels[..9], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        // absurd header count must not be trusted
        let mut huge = good.clone();
        huge[4..8].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(parse_images(&huge, Path::new("x")).is_err());
    }

    #[test]
    fn load_normalizes_and_checks_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, encode_images(&images)).unwrap();
        fs::write(&lp, encode_labels(&labels)).unwrap();
        let batch = load_idx(&ip, &lp).unwrap();
        assert_eq!(batch.inputs.dim(), (3, 4));
        assert_eq!(batch.inputs[[0, 1]], 1.0);
        assert_eq!(batch.inputs[[0, 2]], 128.0 / 255.0);
        assert_eq!(batch.labels, vec![3, 0, 9]);

        fs::write(&lp, encode_labels(&labels[..2])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let gz = |name: &str, data: &[u8]| {
            let p = dir.path().join(name);
            let mut enc = flate2::write::GzEncoder::new(fs::File::create(&p).unwrap(), flate2::Compression::fast());
            enc.write_all(data).unwrap();
            enc.finish().unwrap();
            p
        };
        let ip = gz("img.gz", &encode_images(&images));
        let lp = gz("lbl.gz", &encode_labels(&labels));
        assert_eq!(load_idx(&ip, &lp).unwrap().len(), 3);
    }

    #[test]
    fn missing_files_name_expected_paths() {
        let dir = tempfile::tempdir().unwrap();
        match load_mnist(dir.path()) {
            Err(Error::MissingDataset { expected }) => {
                assert_eq!(expected.len(), 4);
                assert!(expected[0].ends_with("train-images-idx3-ubyte"));
                let msg = Error::MissingDataset { expected }.to_string();
                assert!(msg.contains("t10k-labels-idx1-ubyte"));
            }
            other => panic!("expected missing dataset, got {other:?}"),
        }
    }
}
