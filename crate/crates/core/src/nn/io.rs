//! `SSNN` model files.
//!
//! Layout: magic `SSNN`, version byte `1`, `u32` header length, a UTF-8 JSON
//! header (architecture, layer shapes, training metadata, payload CRC32),
//! then every parameter as little-endian `f32` in layer order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::net::{ModelMeta, NetModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"SSNN";
pub const MODEL_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    weight_shape: Vec<usize>,
    bias_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    layers: Vec<LayerEntry>,
    param_count: usize,
    crc32: u32,
    meta: ModelMeta,
}

/// Parameters are stored as `f32`; an `f64` model is rounded on the way out.
pub fn write_model<T: Scalar, W: Write>(mut w: W, model: &NetModel<T>) -> Result<()> {
    let mut payload = Vec::with_capacity(model.param_count() * 4);
    for p in model.params() {
        payload.extend_from_slice(&(p.to_f64_lossy() as f32).to_le_bytes());
    }
    let header = Header {
        config: model.config().clone(),
        layers: model
            .layer_shapes()
            .into_iter()
            .map(|(name, weight_shape, bias_len)| LayerEntry {
                name,
                weight_shape,
                bias_len,
            })
            .collect(),
        param_count: model.param_count(),
        crc32: crc32fast::hash(&payload),
        meta: model.meta.clone(),
    };
    let blob = serde_json::to_vec(&header)?;
    let len = u32::try_from(blob.len()).map_err(|_| Error::invalid("model", "header exceeds u32"))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&[MODEL_VERSION])?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&blob)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(mut r: R) -> Result<NetModel<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_model(&bytes)
}

fn parse_model<T: Scalar>(bytes: &[u8]) -> Result<NetModel<T>> {
    let truncated = |what: &str| Error::ChecksumFail(format!("file truncated in the {what}"));
    if bytes.len() < 4 {
        return Err(truncated("magic"));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: "SSNN" });
    }
    let version = *bytes.get(4).ok_or_else(|| truncated("version byte"))?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let len_bytes: [u8; 4] = bytes
        .get(5..9)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| truncated("header length"))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let blob = bytes.get(9..9 + len).ok_or_else(|| truncated("header"))?;
    let header: Header = serde_json::from_slice(blob)?;
    let payload = &bytes[9 + len..];
    if payload.len() != header.param_count * 4 {
        return Err(Error::ChecksumFail(format!(
            "payload has {} bytes, header declares {} parameters",
            payload.len(),
            header.param_count
        )));
    }
    let crc = crc32fast::hash(payload);
    if crc != header.crc32 {
        return Err(Error::ChecksumFail(format!(
            "payload CRC32 {crc:08x} does not match header {:08x}",
            header.crc32
        )));
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    let model = NetModel::from_params(header.config, params, header.meta)?;
    let shapes_match = model.layer_shapes().len() == header.layers.len()
        && model
            .layer_shapes()
            .iter()
            .zip(&header.layers)
            .all(|((_, w, b), e)| *w == e.weight_shape && *b == e.bias_len);
    if !shapes_match {
        return Err(Error::ShapeMismatch("layer shapes disagree with the configuration".into()));
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(path: impl AsRef<Path>, model: &NetModel<T>) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), model)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<NetModel<T>> {
    read_model(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoded() -> (NetModel<f32>, Vec<u8>) {
        let m = NetModel::<f32>::new(NetConfig::tiny(), 3).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        (m, buf)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (m, buf) = encoded();
        let back: NetModel<f32> = read_model(&buf[..]).unwrap();
        assert_eq!(back.params(), m.params());
        let x: Vec<f32> = (0..128).map(|i| (i as f32 * 0.3).sin()).collect();
        assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn truncation_and_corruption_fail_checksum() {
        let (_, buf) = encoded();
        for cut in [2, 7, 20, buf.len() - 1] {
            let err = read_model::<f32, _>(&buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::ChecksumFail(_)), "cut {cut}: {err}");
        }
        let mut bad = buf.clone();
        *bad.last_mut().unwrap() ^= 0x40;
        assert!(matches!(read_model::<f32, _>(&bad[..]), Err(Error::ChecksumFail(_))));
    }

    #[test]
    fn version_and_magic_checked() {
        let (_, mut buf) = encoded();
        buf[4] = 2;
        assert!(matches!(
            read_model::<f32, _>(&buf[..]),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        buf[0] = b'X';
        assert!(matches!(read_model::<f32, _>(&buf[..]), Err(Error::BadMagic { .. })));
    }
}
