//! IDX container format (big-endian header, unsigned-byte payload).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::ingestion(path, e.to_string()))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::ingestion(path, format!("gzip: {e}")))?;
        return Ok(out);
    }
    Ok(raw)
}

/// Reads an IDX file of unsigned bytes. `.gz` files are decompressed.
pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = read_all(path)?;
    parse_idx(&bytes).map_err(|reason| Error::ingestion(path, reason))
}

fn parse_idx(bytes: &[u8]) -> Result<IdxArray, String> {
    if bytes.len() < 4 {
        return Err("truncated header".into());
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format!("bad magic {:02x}{:02x}", bytes[0], bytes[1]));
    }
    if bytes[2] != 0x08 {
        return Err(format!("unsupported element type 0x{:02x}", bytes[2]));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err("truncated dimension table".into());
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(format!(
            "payload has {} bytes, dimensions {:?} require {}",
            payload.len(),
            dims,
            expected
        ));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

fn write_idx(path: &Path, magic: u32, dims: &[usize], data: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut header = magic.to_be_bytes().to_vec();
    for &d in dims {
        header.extend_from_slice(&(d as u32).to_be_bytes());
    }
    w.write_all(&header)
        .and_then(|_| w.write_all(data))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `count` row-major `rows×cols` images with magic 0x00000803.
pub fn write_idx_images(
    path: &Path,
    count: usize,
    rows: usize,
    cols: usize,
    data: &[u8],
) -> Result<()> {
    if data.len() != count * rows * cols {
        return Err(Error::shape("image payload does not match dimensions"));
    }
    write_idx(path, IDX_IMAGES_MAGIC, &[count, rows, cols], data)
}

/// Writes a label vector with magic 0x00000801.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    write_idx(path, IDX_LABELS_MAGIC, &[labels.len()], labels)
}
