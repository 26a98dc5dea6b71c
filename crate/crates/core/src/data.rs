//! Labeled image sets and their on-disk formats.
//!
//! IDX (the MNIST container): a big-endian `u32` magic (`0x00000803` for
//! rank-3 unsigned-byte image tensors, `0x00000801` for rank-1 label
//! vectors), one big-endian `u32` per dimension, then the raw bytes.
//! Pixels are scaled to `[0, 1]` by `/ 255`.
//!
//! CIFAR-10 binary batches are also readable: each record is one label
//! byte followed by 3072 channel-major pixel bytes.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::image::{Image, Shape};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard file names inside an MNIST directory.
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    /// Checks equal lengths, a common image shape and labels in `[0, classes)`.
    pub fn new(images: Vec<Image>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch { images: images.len(), labels: labels.len() });
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|i| i.shape() != first.shape()) {
                return Err(Error::Dimension { expected: first.len(), actual: bad.len() });
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel { label, classes });
        }
        Ok(Self { images, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn shape(&self) -> Option<Shape> {
        self.images.first().map(Image::shape)
    }

    pub fn get(&self, i: usize) -> Option<(&Image, usize)> {
        Some((self.images.get(i)?, *self.labels.get(i)?))
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            split: self.split,
        }
    }
}

/// Parses a rank-3 IDX image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    let mut cur = Cursor::new(bytes);
    expect_magic(&mut cur, IDX_IMAGES_MAGIC)?;
    let count = read_dim(&mut cur)?;
    let (rows, cols) = (read_dim(&mut cur)?, read_dim(&mut cur)?);
    let shape = Shape::new(1, rows, cols);
    if shape.is_empty() {
        return Err(Error::Empty);
    }
    let body = &bytes[16..];
    let need = count.checked_mul(shape.len()).ok_or_else(|| Error::Truncated("image count overflows".into()))?;
    if body.len() < need {
        return Err(Error::Truncated(format!("expected {need} pixel bytes, found {}", body.len())));
    }
    Ok(body[..need]
        .chunks_exact(shape.len())
        .map(|px| Image::new(shape, px.iter().map(|&b| f64::from(b) / 255.0).collect()).expect("bytes scale into [0, 1]"))
        .collect())
}

/// Parses a rank-1 IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor::new(bytes);
    expect_magic(&mut cur, IDX_LABELS_MAGIC)?;
    let count = read_dim(&mut cur)?;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Truncated(format!("expected {count} labels, found {}", body.len())));
    }
    Ok(body[..count].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image/label pair. Labels must be below 10.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    Dataset::new(images, labels, 10, split)
}

/// Loads `train-*` or `t10k-*` from an MNIST-layout directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (img, lbl) = match split {
        Split::Train => (MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS),
        Split::Test => (MNIST_TEST_IMAGES, MNIST_TEST_LABELS),
    };
    load_idx(dir.join(img), dir.join(lbl), split)
}

/// Serializes single-channel images as IDX. Pixels are quantized with
/// `round(255 v)`.
pub fn write_idx_images<W: Write>(images: &[Image], mut w: W) -> Result<()> {
    let shape = images.first().map(Image::shape).ok_or(Error::Empty)?;
    if shape.channels != 1 {
        return Err(Error::config("IDX image files hold single-channel images"));
    }
    w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    for d in [images.len(), shape.height, shape.width] {
        w.write_u32::<BigEndian>(d as u32)?;
    }
    for img in images {
        if img.shape() != shape {
            return Err(Error::Dimension { expected: shape.len(), actual: img.len() });
        }
        let bytes: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v)).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn write_idx_labels<W: Write>(labels: &[usize], mut w: W) -> Result<()> {
    w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::InvalidLabel { label: l, classes: 256 })?;
        w.write_u8(b)?;
    }
    Ok(())
}

/// Writes a dataset as an MNIST-layout directory.
pub fn save_mnist_dir(data: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (img, lbl) = match data.split {
        Split::Train => (MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS),
        Split::Test => (MNIST_TEST_IMAGES, MNIST_TEST_LABELS),
    };
    write_idx_images(&data.images, fs::File::create(dir.join(img))?)?;
    write_idx_labels(&data.labels, fs::File::create(dir.join(lbl))?)?;
    Ok(())
}

/// Parses a CIFAR-10 binary batch (32x32 RGB, 10 classes).
pub fn parse_cifar_batch(bytes: &[u8], split: Split) -> Result<Dataset> {
    const RECORD: usize = 1 + 3 * 32 * 32;
    if bytes.is_empty() {
        return Err(Error::Empty);
    }
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::Truncated(format!("{} bytes is not a whole number of records", bytes.len())));
    }
    let shape = Shape::new(3, 32, 32);
    let mut images = Vec::with_capacity(bytes.len() / RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    for rec in bytes.chunks_exact(RECORD) {
        labels.push(usize::from(rec[0]));
        images.push(Image::new(shape, rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect())?);
    }
    Dataset::new(images, labels, 10, split)
}

/// `round(255 v)` with halves rounded up, clamped to a byte.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn expect_magic<R: Read>(r: &mut R, expected: u32) -> Result<()> {
    let found = r.read_u32::<BigEndian>().map_err(|_| Error::Truncated("missing IDX header".into()))?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn read_dim<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<BigEndian>().map_err(|_| Error::Truncated("short IDX header".into()))? as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut f = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        f.extend([0, 255, 128, 64]);
        f
    }

    #[test]
    fn parses_hand_built_idx() {
        let imgs = parse_idx_images(&fixture()).unwrap();
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].shape(), Shape::new(1, 2, 2));
        assert_eq!(imgs[0].as_slice(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn image_file_is_not_a_label_file() {
        assert!(matches!(
            parse_idx_labels(&fixture()),
            Err(Error::BadMagic { expected: IDX_LABELS_MAGIC, found: IDX_IMAGES_MAGIC })
        ));
    }

    #[test]
    fn truncated_and_mismatched() {
        let f = fixture();
        assert!(matches!(parse_idx_images(&f[..18]), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_images(&f[..6]), Err(Error::Truncated(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 1]), Err(Error::Truncated(_))));
        let imgs = parse_idx_images(&f).unwrap();
        assert!(matches!(Dataset::new(imgs.clone(), vec![1, 2], 10, Split::Test), Err(Error::CountMismatch { .. })));
        assert!(matches!(Dataset::new(imgs, vec![12], 10, Split::Test), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn official_test_file_size() {
        // 10000 28x28 images plus the 16-byte header.
        let mut header = vec![0, 0, 8, 3];
        header.extend(10000u32.to_be_bytes());
        header.extend(28u32.to_be_bytes());
        header.extend(28u32.to_be_bytes());
        let mut bytes = header;
        bytes.resize(16 + 10000 * 784, 7);
        assert_eq!(bytes.len(), 7_840_016);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!(imgs.len(), 10000);
        assert_eq!(imgs[9999].shape(), Shape::new(1, 28, 28));
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(64.0 / 255.0), 64);
    }

    #[test]
    fn cifar_records() {
        let mut bytes = vec![3u8];
        bytes.extend(std::iter::repeat_n(255, 3072));
        let d = parse_cifar_batch(&bytes, Split::Test).unwrap();
        assert_eq!(d.labels(), &[3]);
        assert_eq!(d.shape(), Some(Shape::new(3, 32, 32)));
        assert!(parse_cifar_batch(&bytes[..100], Split::Test).is_err());
    }
}
