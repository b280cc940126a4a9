//! IDX file reader for the MNIST image and label files.

use anyhow::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

fn header(bytes: &[u8], ndim: u8) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        bail!("not an IDX file");
    }
    if bytes[2] != 0x08 {
        bail!("unsupported IDX element type 0x{:02x} (expected unsigned bytes)", bytes[2]);
    }
    if bytes[3] != ndim {
        bail!("IDX file has {} dimensions, expected {ndim}", bytes[3]);
    }
    let start = 4 + 4 * ndim as usize;
    if bytes.len() < start {
        bail!("truncated IDX header");
    }
    let dims = (0..ndim as usize)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().expect("4 bytes")) as usize)
        .collect::<Vec<_>>();
    let need = start + dims.iter().product::<usize>();
    if bytes.len() < need {
        bail!("truncated IDX payload: {} bytes, expected {need}", bytes.len());
    }
    Ok((dims, start))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let (dims, start) = header(bytes, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let size = rows * cols;
    let pixels = (0..n).map(|i| bytes[start + i * size..start + (i + 1) * size].to_vec()).collect();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (dims, start) = header(bytes, 1)?;
    Ok(bytes[start..start + dims[0]].to_vec())
}

/// `(v / 255 - mu) / sigma` per pixel.
pub fn normalize(pixels: &[u8], mu: f64, sigma: f64) -> Vec<f64> {
    pixels.iter().map(|&v| (v as f64 / 255.0 - mu) / sigma).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(ndim: u8, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 0x08, ndim];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn images_and_labels() {
        let img = parse_images(&idx(3, &[2, 2, 2], &[0, 255, 1, 2, 3, 4, 5, 6])).unwrap();
        assert_eq!((img.rows, img.cols), (2, 2));
        assert_eq!(img.pixels[1], vec![3, 4, 5, 6]);
        assert_eq!(parse_labels(&idx(1, &[3], &[7, 2, 1])).unwrap(), vec![7, 2, 1]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_images(&idx(1, &[3], &[1, 2, 3])).is_err());
        assert!(parse_images(&idx(3, &[2, 2, 2], &[0; 5])).is_err());
        assert!(parse_labels(&[1, 2]).is_err());
    }

    #[test]
    fn pixel_range_matches_standard_normalization() {
        let v = normalize(&[0, 255], 0.1307, 0.3081);
        assert!((v[0] + 0.4242).abs() < 1e-4);
        assert!((v[1] - 2.8215).abs() < 1e-4);
    }
}
