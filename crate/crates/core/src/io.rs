//! MNIST IDX files, atomic artifact writes and number formatting.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::cnn::ImageTensor;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed IDX file of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    /// Serializes back to the big-endian on-disk layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes(b.try_into().expect("four bytes"))),
        None => Err(Error::TruncatedPayload { offset, expected: 4, found: bytes.len().saturating_sub(offset) }),
    }
}

/// Parses an images (3-dim) or labels (1-dim) IDX file.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        found => return Err(Error::BadMagic { offset: 0, found }),
    };
    let mut dims = Vec::with_capacity(ndims);
    let mut len: usize = 1;
    for i in 0..ndims {
        let offset = 4 + 4 * i;
        let d = read_u32(bytes, offset)?;
        len = len.checked_mul(d as usize).ok_or(Error::DimensionOverflow { offset })?;
        dims.push(d);
    }
    let start = 4 + 4 * ndims;
    let available = bytes.len() - start;
    if available < len {
        return Err(Error::TruncatedPayload { offset: start, expected: len, found: available });
    }
    if available > len {
        return Err(Error::TrailingBytes { offset: start + len, count: available - len });
    }
    Ok(IdxFile { magic, dims, payload: bytes[start..].to_vec() })
}

/// Reads a file, inflating it in memory when the name ends in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Images scaled to `[0, 1]` with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn from_idx(images: &IdxFile, labels: &IdxFile) -> Result<Self> {
        if images.magic != IMAGES_MAGIC {
            return Err(Error::BadMagic { offset: 0, found: images.magic });
        }
        if labels.magic != LABELS_MAGIC {
            return Err(Error::BadMagic { offset: 0, found: labels.magic });
        }
        let (n, rows, cols) = (images.dims[0] as usize, images.dims[1] as usize, images.dims[2] as usize);
        if rows != cols {
            return Err(Error::GeometryMismatch(format!("images are {rows}x{cols}, expected square")));
        }
        if labels.dims[0] as usize != n {
            return Err(Error::DimensionMismatch { expected: n, found: labels.dims[0] as usize });
        }
        let px = rows * cols;
        let images = (0..n)
            .map(|i| {
                let data = images.payload[i * px..(i + 1) * px].iter().map(|&b| f64::from(b) / 255.0).collect();
                ImageTensor::new(rows, 1, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { images, labels: labels.payload.clone() })
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        let img = parse_idx(&read_maybe_gz(images)?)?;
        let lab = parse_idx(&read_maybe_gz(labels)?)?;
        Self::from_idx(&img, &lab)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples.
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }
}

/// Writes via a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    // Temp files start owner-only; artifacts should read like normal files.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Plain decimal with `sig` significant digits (no exponent).
pub fn format_significant(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = sig as i64 - 1 - magnitude;
    if decimals > 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        format!("{:.0}", x)
    }
}
