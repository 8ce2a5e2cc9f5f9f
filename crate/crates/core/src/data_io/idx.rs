//! MNIST IDX files, optionally gzip-compressed.

use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::image::{Image, LabeledImage};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Which half of the MNIST distribution to load from a directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    fn stems(self) -> (&'static str, &'static str) {
        match self {
            MnistSplit::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            MnistSplit::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::format(self.source, format!("offset {}", self.pos), format!("truncated {what}")))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::format(
                self.source,
                format!("offset {}", self.pos),
                format!("truncated {what}: need {n} bytes, {available} remain"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.source, format!("offset {}", self.pos), "trailing bytes"));
        }
        Ok(())
    }
}

fn expect_magic(cur: &mut Cursor<'_>, magic: u32) -> Result<()> {
    let found = cur.u32("magic number")?;
    if found != magic {
        return Err(Error::format(
            cur.source,
            "offset 0",
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    Ok(())
}

/// Parses an image file; pixel bytes are scaled to `[0, 1]` by `/255`.
pub fn parse_idx_images(bytes: &[u8], source: &str) -> Result<Vec<Image>> {
    let mut cur = Cursor { bytes, pos: 0, source };
    expect_magic(&mut cur, IMAGE_MAGIC)?;
    let count = cur.u32("image count")? as usize;
    let rows = cur.u32("row count")? as usize;
    let cols = cur.u32("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(source, "offset 8", "zero image dimension"));
    }
    let raw = cur.take(count * rows * cols, "pixel data")?;
    cur.finish()?;
    raw.chunks_exact(rows * cols)
        .map(|px| Image::new(cols, rows, px.iter().map(|&b| f32::from(b) / 255.0).collect()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8], source: &str) -> Result<Vec<u8>> {
    let mut cur = Cursor { bytes, pos: 0, source };
    expect_magic(&mut cur, LABEL_MAGIC)?;
    let count = cur.u32("label count")? as usize;
    let labels = cur.take(count, "label data")?.to_vec();
    cur.finish()?;
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::format(
            source,
            format!("offset {}", 8 + pos),
            format!("label {} outside 0..9", labels[pos]),
        ));
    }
    Ok(labels)
}

/// Serializes images to IDX; pixels are quantized with `round(255·p)`.
pub fn idx_images_bytes(images: &[Image]) -> Result<Vec<u8>> {
    let (rows, cols) = images.first().map_or((28, 28), |i| (i.height(), i.width()));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for img in images {
        if (img.height(), img.width()) != (rows, cols) {
            return Err(Error::dim("IDX images", &[img.height(), img.width()], &[rows, cols]));
        }
        out.extend(img.pixels().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path.display().to_string(), "gzip stream", e.to_string()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads paired image and label files (raw or `.gz`).
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&read_maybe_gz(ip)?, &ip.display().to_string())?;
    let labels = parse_idx_labels(&read_maybe_gz(lp)?, &lp.display().to_string())?;
    if images.len() != labels.len() {
        return Err(Error::format(
            lp.display().to_string(),
            "offset 4",
            format!("{} labels for {} images", labels.len(), images.len()),
        ));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .map(|(image, label)| LabeledImage { image, label })
        .collect())
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (also tried .gz)"),
    ))
}

/// Loads a split from a directory holding the standard MNIST file names.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: MnistSplit) -> Result<Vec<LabeledImage>> {
    let (images, labels) = split.stems();
    let dir = dir.as_ref();
    load_mnist(locate(dir, images)?, locate(dir, labels)?)
}

/// Writes a split under the standard names, uncompressed.
pub fn write_mnist_dir(dir: impl AsRef<Path>, split: MnistSplit, data: &[LabeledImage]) -> Result<()> {
    let dir = dir.as_ref();
    let (images, labels) = split.stems();
    let imgs: Vec<Image> = data.iter().map(|s| s.image.clone()).collect();
    let labs: Vec<u8> = data.iter().map(|s| s.label).collect();
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write(images, idx_images_bytes(&imgs)?)?;
    write(labels, idx_labels_bytes(&labs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        b.extend([0, 51, 102, 153, 204, 255]);
        b.extend([255, 0, 1, 2, 3, 4]);
        b
    }

    #[test]
    fn hand_built_fixture() {
        let imgs = parse_idx_images(&fixture(), "fixture").unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!((imgs[0].width(), imgs[0].height()), (3, 2));
        assert_eq!(imgs[0].pixels(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(imgs[1].pixels()[2], 1.0 / 255.0);
        assert_eq!(idx_images_bytes(&imgs).unwrap(), fixture());
    }

    #[test]
    fn wrong_magic_reports_offset() {
        let mut b = fixture();
        b[3] = 1;
        let msg = parse_idx_images(&b, "f").unwrap_err().to_string();
        assert!(msg.contains("offset 0") && msg.contains("bad magic"), "{msg}");
    }

    #[test]
    fn truncation_reports_offset() {
        let b = fixture();
        let msg = parse_idx_images(&b[..20], "f").unwrap_err().to_string();
        assert!(msg.contains("offset 16"), "{msg}");
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0], "l").is_err());
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![6, 9, 0, 1];
        assert_eq!(parse_idx_labels(&idx_labels_bytes(&labels), "l").unwrap(), labels);
        let mut bad = idx_labels_bytes(&labels);
        bad[9] = 12;
        assert!(parse_idx_labels(&bad, "l").unwrap_err().to_string().contains("offset 9"));
    }

    #[test]
    fn directory_round_trip_with_count_check() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = parse_idx_images(&fixture(), "f").unwrap();
        let data: Vec<LabeledImage> = imgs
            .into_iter()
            .zip([3, 7])
            .map(|(image, label)| LabeledImage { image, label })
            .collect();
        write_mnist_dir(dir.path(), MnistSplit::Test, &data).unwrap();
        assert_eq!(load_mnist_dir(dir.path(), MnistSplit::Test).unwrap(), data);
        assert!(load_mnist_dir(dir.path(), MnistSplit::Train).is_err());

        fs::write(dir.path().join("t10k-labels-idx1-ubyte"), idx_labels_bytes(&[3])).unwrap();
        let msg = load_mnist_dir(dir.path(), MnistSplit::Test).unwrap_err().to_string();
        assert!(msg.contains("1 labels for 2 images"), "{msg}");
    }
}
