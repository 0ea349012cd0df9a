//! IDX (MNIST / Fashion-MNIST) and CIFAR-10 binary readers. Pixels are
//! scaled to `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use super::DatasetKind;
use crate::error::{Error, Result};
use crate::nn::Matrix;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 3072;

/// Features and labels of a whole image dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(path, offset.min(bytes.len()), "truncated header"))
}

fn expect_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(parse_err(
            path,
            0,
            format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Matrix> {
    expect_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let width = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * width {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated pixel data: need {} bytes", 16 + count * width),
        ));
    }
    let data = body[..count * width].iter().map(|&p| p as f64 / 255.0).collect();
    Matrix::new(count, width, data).map_err(|e| parse_err(path, 4, e.to_string()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    expect_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated label data: need {} bytes", 8 + count),
        ));
    }
    Ok(body[..count].iter().map(|&l| l as usize).collect())
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    parse_idx_images(&read_bytes(path)?, path)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_idx_labels(&read_bytes(path)?, path)
}

/// Reads an IDX image file and its label file, checking the counts agree.
pub fn read_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<ImageDataset> {
    let features = read_idx_images(&images)?;
    let labels_path = labels.as_ref();
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != features.rows() {
        return Err(parse_err(
            labels_path,
            4,
            format!("{} labels for {} images", labels.len(), features.rows()),
        ));
    }
    Ok(ImageDataset { features, labels })
}

/// Writes `images` (each `rows * cols` bytes) as an IDX3 file.
pub fn write_idx_images(path: impl AsRef<Path>, rows: u32, cols: u32, images: &[Vec<u8>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        if img.len() != (rows * cols) as usize {
            return Err(Error::DimensionMismatch {
                context: "IDX image size",
                expected: (rows * cols) as usize,
                actual: img.len(),
            });
        }
        out.extend_from_slice(img);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads one CIFAR-10 binary batch (`label byte + 3072 pixel bytes` per record).
pub fn read_cifar_bin(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.is_empty() {
        return Err(parse_err(path, 0, "empty CIFAR-10 batch"));
    }
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(parse_err(path, offset, "truncated CIFAR-10 record"));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if record[0] >= 10 {
            return Err(parse_err(
                path,
                r * CIFAR_RECORD,
                format!("label {} out of range", record[0]),
            ));
        }
        labels.push(record[0] as usize);
        data.extend(record[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok(ImageDataset {
        features: Matrix::new(n, CIFAR_PIXELS, data)?,
        labels,
    })
}

fn concat(parts: Vec<ImageDataset>) -> Result<ImageDataset> {
    let mut labels = Vec::new();
    let mut mats = Vec::with_capacity(parts.len());
    for p in parts {
        labels.extend(p.labels);
        mats.push(p.features);
    }
    Ok(ImageDataset {
        features: Matrix::vstack(&mats)?,
        labels,
    })
}

/// Expected files under `dir` for a real dataset.
pub fn dataset_files(kind: DatasetKind, dir: &Path) -> Vec<PathBuf> {
    match kind {
        DatasetKind::Synthetic => Vec::new(),
        DatasetKind::Mnist | DatasetKind::Fmnist => {
            let sub = dir.join(kind.id());
            [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ]
            .iter()
            .map(|f| sub.join(f))
            .collect()
        }
        DatasetKind::Cifar10 => {
            let sub = dir.join("cifar10");
            (1..=5)
                .map(|i| sub.join(format!("data_batch_{i}.bin")))
                .chain(std::iter::once(sub.join("test_batch.bin")))
                .collect()
        }
    }
}

/// Loads the complete (train + test) pool of a real dataset from
/// `dir/<mnist|fmnist|cifar10>/`.
pub fn load_image_dataset(kind: DatasetKind, dir: &Path) -> Result<ImageDataset> {
    let files = dataset_files(kind, dir);
    if let Some(missing) = files.iter().find(|f| !f.is_file()) {
        return Err(Error::config(format!(
            "missing dataset file {} for {}",
            missing.display(),
            kind.id()
        )));
    }
    match kind {
        DatasetKind::Synthetic => Err(Error::config("synthetic data is generated, not loaded")),
        DatasetKind::Mnist | DatasetKind::Fmnist => concat(vec![
            read_idx(&files[0], &files[1])?,
            read_idx(&files[2], &files[3])?,
        ]),
        DatasetKind::Cifar10 => concat(files.iter().map(read_cifar_bin).collect::<Result<_>>()?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<Vec<u8>> = vec![
            (0..6).collect(),
            vec![255; 6],
            vec![0, 51, 102, 153, 204, 255],
        ];
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, 2, 3, &images).unwrap();
        write_idx_labels(&lp, &[7, 0, 9]).unwrap();
        let ds = read_idx(&ip, &lp).unwrap();
        assert_eq!(ds.labels, vec![7, 0, 9]);
        assert_eq!(ds.features.cols(), 6);
        for (row, img) in ds.features.iter_rows().zip(&images) {
            let back: Vec<u8> = row.iter().map(|v| (v * 255.0).round() as u8).collect();
            assert_eq!(&back, img);
        }
    }

    #[test]
    fn empty_and_corrupt_files_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty");
        fs::write(&p, b"").unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(read_cifar_bin(&p), Err(Error::Parse { offset: 0, .. })));

        fs::write(&p, [0, 0, 8, 1, 0, 0, 0, 1]).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Parse { offset: 0, .. })));

        // header promises 2 images of 2x2, body has 5 bytes
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1, 2, 3, 4, 5]);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Parse { offset: 21, .. })));

        fs::write(&p, vec![1u8; CIFAR_RECORD + 10]).unwrap();
        assert!(matches!(
            read_cifar_bin(&p),
            Err(Error::Parse { offset, .. }) if offset == CIFAR_RECORD as u64
        ));
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("batch.bin");
        let mut bytes = Vec::new();
        for label in [3u8, 9] {
            bytes.push(label);
            bytes.extend(std::iter::repeat_n(label * 20, CIFAR_PIXELS));
        }
        fs::write(&p, &bytes).unwrap();
        let ds = read_cifar_bin(&p).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.features.cols(), 3072);
        assert!((ds.features.get(1, 100) - 180.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_image_dataset(DatasetKind::Mnist, dir.path()).unwrap_err();
        assert!(err.to_string().contains("train-images-idx3-ubyte"));
    }
}
