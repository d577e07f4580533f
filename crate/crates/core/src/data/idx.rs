//! IDX file reader (MNIST / Fashion-MNIST layout).
//!
//! Both files start with a big-endian `u32` magic whose low byte is the
//! number of dimensions (`0x00000803` for images, `0x00000801` for labels),
//! followed by one big-endian `u32` per dimension and then raw `u8` data.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use ndarray::Array2;

use super::{DataError, LabeledDataset};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], magic: u32, what: &str) -> Result<Vec<usize>, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::TruncatedFile(format!("{what}: missing magic")));
    }
    let found = BigEndian::read_u32(&bytes[..4]);
    if found != magic {
        return Err(DataError::BadMagic {
            found,
            expected: magic,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let end = 4 + 4 * ndims;
    if bytes.len() < end {
        return Err(DataError::TruncatedFile(format!(
            "{what}: header needs {end} bytes"
        )));
    }
    Ok(bytes[4..end]
        .chunks_exact(4)
        .map(|c| BigEndian::read_u32(c) as usize)
        .collect())
}

fn payload<'a>(bytes: &'a [u8], dims: &[usize], what: &str) -> Result<&'a [u8], DataError> {
    let start = 4 + 4 * dims.len();
    let len: usize = dims.iter().product();
    let available = bytes.len() - start;
    if available < len {
        return Err(DataError::TruncatedFile(format!(
            "{what}: header promises {len} data bytes, {available} present"
        )));
    }
    Ok(&bytes[start..start + len])
}

/// Images as rows of `rows·cols` pixels scaled by `1/255`.
pub fn parse_images(bytes: &[u8]) -> Result<Array2<f64>, DataError> {
    let dims = header(bytes, IMAGES_MAGIC, "images")?;
    let data = payload(bytes, &dims, "images")?;
    let (n, pixels) = (dims[0], dims[1] * dims[2]);
    Ok(Array2::from_shape_fn((n, pixels), |(i, j)| {
        f64::from(data[i * pixels + j]) / 255.0
    }))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    let dims = header(bytes, LABELS_MAGIC, "labels")?;
    Ok(payload(bytes, &dims, "labels")?
        .iter()
        .map(|&b| usize::from(b))
        .collect())
}

/// Pairs an image buffer with a label buffer. The class count is the
/// largest label plus one.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset, DataError> {
    let features = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if features.nrows() != labels.len() {
        return Err(DataError::CountMismatch {
            images: features.nrows(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(features, labels, classes)
}

pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    parse_idx(&read(images_path)?, &read(labels_path)?)
}

/// Encodes images (`n × rows·cols` bytes) in IDX form.
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, labels.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_images() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3];
        b.extend(0u8..9);
        b.extend([255u8; 9]);
        b
    }

    #[test]
    fn hand_built_pair() {
        let labels = [0u8, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        let d = parse_idx(&two_images(), &labels).unwrap();
        assert_eq!(d.features.dim(), (2, 9));
        assert_eq!(d.labels, vec![7, 3]);
        assert_eq!(d.classes, 8);
        assert_eq!(d.features[[0, 4]], 4.0 / 255.0);
        assert!(d.features.row(1).iter().all(|&v| v == 1.0));
        assert_eq!(encode_images(3, 3, &two_images()[16..]), two_images());
        assert_eq!(encode_labels(&[7, 3]), labels);
    }

    #[test]
    fn bad_magic() {
        let mut b = two_images();
        b[3] = 2;
        assert!(matches!(
            parse_images(&b),
            Err(DataError::BadMagic {
                found: 0x802,
                expected: 0x803
            })
        ));
    }

    #[test]
    fn truncated() {
        let mut b = encode_images(2, 2, &[1; 16]);
        b[7] = 5; // promise 5 images, 4 present
        assert!(matches!(parse_images(&b), Err(DataError::TruncatedFile(_))));
        assert!(matches!(
            parse_labels(&[0, 0, 8, 1, 0]),
            Err(DataError::TruncatedFile(_))
        ));
    }

    #[test]
    fn count_mismatch() {
        let err = parse_idx(&two_images(), &encode_labels(&[1])).unwrap_err();
        assert!(matches!(
            err,
            DataError::CountMismatch {
                images: 2,
                labels: 1
            }
        ));
    }
}
