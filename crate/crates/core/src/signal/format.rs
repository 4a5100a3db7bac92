//! `SSRD` dataset files.
//!
//! Layout (little-endian): magic `SSRD`, version byte `1`, `u32 n`,
//! `u32 count`, `f64 dt`, `count * n` `f32` samples row-major, `count` `u8`
//! labels, `u32` byte length followed by a UTF-8 JSON metadata blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, Label, LabeledDataset, Provenance, TraceGrid};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"SSRD";
pub const DATASET_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct MetaBlob {
    provenance: Provenance,
    #[serde(flatten)]
    meta: DatasetMeta,
}

pub fn write_dataset<W: Write>(mut w: W, ds: &LabeledDataset) -> Result<()> {
    let grid = ds.grid();
    let n = u32::try_from(grid.n()).map_err(|_| Error::invalid("grid.n", "exceeds u32"))?;
    let count = u32::try_from(ds.len()).map_err(|_| Error::invalid("count", "exceeds u32"))?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&[DATASET_VERSION])?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&grid.dt().to_le_bytes())?;
    let mut buf = Vec::with_capacity(ds.samples().len() * 4);
    for v in ds.samples() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    let labels: Vec<u8> = ds.labels().iter().map(|l| l.as_u8()).collect();
    w.write_all(&labels)?;
    let blob = serde_json::to_vec(&MetaBlob {
        provenance: ds.provenance(),
        meta: ds.meta.clone(),
    })?;
    let len = u32::try_from(blob.len()).map_err(|_| Error::invalid("meta", "exceeds u32"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&blob)?;
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<LabeledDataset> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: "SSRD" });
    }
    let [version] = read_array::<1, _>(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let dt = f64::from_le_bytes(read_array(&mut r)?);
    let grid = TraceGrid::new(dt, n)?;
    let total = count
        .checked_mul(n)
        .ok_or_else(|| Error::invalid("count", "sample count overflows"))?;
    let mut raw = vec![0u8; total * 4];
    r.read_exact(&mut raw)?;
    let samples = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut raw_labels = vec![0u8; count];
    r.read_exact(&mut raw_labels)?;
    let labels = raw_labels
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            Label::from_u8(b).ok_or_else(|| Error::invalid("labels", format!("trace {i}: label byte {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut blob = vec![0u8; len];
    r.read_exact(&mut blob)?;
    let MetaBlob { provenance, meta } = serde_json::from_slice(&blob)?;
    LabeledDataset::new(grid, samples, labels, provenance, meta)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
