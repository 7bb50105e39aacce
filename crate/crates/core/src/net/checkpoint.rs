//! Checkpoint container: `CMPRINT\0`, u32 format version, u32 header
//! length, JSON header (config, normalization, tensor lengths), then every
//! parameter and buffer as little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::FingerprintNetConfig;
use super::model::{FingerprintNet, Normalization};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CMPRINT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: FingerprintNetConfig,
    normalization: Normalization,
    model_tag: String,
    params: Vec<usize>,
    buffers: Vec<usize>,
}

pub fn to_bytes(net: &FingerprintNet, model_tag: &str) -> Result<Vec<u8>> {
    let header = Header {
        config: net.config.clone(),
        normalization: net.normalization,
        model_tag: model_tag.to_string(),
        params: net.params().iter().map(|p| p.len()).collect(),
        buffers: net.buffers().iter().map(|p| p.len()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in net.params().into_iter().chain(net.buffers()) {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns the network and its model tag.
pub fn from_bytes(bytes: &[u8]) -> Result<(FingerprintNet, String)> {
    let bad = |msg: &str| Error::Data(format!("invalid checkpoint: {msg}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?)?;
    let mut net = FingerprintNet::new(header.config, 0)?;
    net.normalization = header.normalization;
    let mut cursor = 16 + hlen;
    let mut fill = |dst: &mut Vec<f32>, expect: usize| -> Result<()> {
        if dst.len() != expect {
            return Err(bad("tensor size does not match config"));
        }
        let end = cursor + 4 * expect;
        let raw = bytes.get(cursor..end).ok_or_else(|| bad("truncated payload"))?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        cursor = end;
        Ok(())
    };
    let params = net.params_mut();
    if params.len() != header.params.len() {
        return Err(bad("parameter count does not match config"));
    }
    for (p, &n) in params.into_iter().zip(&header.params) {
        fill(p, n)?;
    }
    let buffers = net.buffers_mut();
    if buffers.len() != header.buffers.len() {
        return Err(bad("buffer count does not match config"));
    }
    for (b, &n) in buffers.into_iter().zip(&header.buffers) {
        fill(b, n)?;
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((net, header.model_tag))
}

pub fn save(net: &FingerprintNet, model_tag: &str, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, to_bytes(net, model_tag)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(FingerprintNet, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tensor::Tensor;

    #[test]
    fn round_trip_is_bit_identical() {
        let config = FingerprintNetConfig {
            batch_norm: true,
            ..FingerprintNetConfig::small(4, 3)
        };
        let mut net = FingerprintNet::new(config, 21).unwrap();
        let x = Tensor::from_planes(&[(0..48).map(|i| (i as f32 * 0.37).sin()).collect()], 6, 8);
        // move BN running stats away from their defaults
        let _ = net.forward_train(&x);
        let bytes = to_bytes(&net, "tag").unwrap();
        let (back, tag) = from_bytes(&bytes).unwrap();
        assert_eq!(tag, "tag");
        assert_eq!(back, net);
        let a = net.forward(&x);
        let b = back.forward(&x);
        assert!(a.data.iter().zip(&b.data).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_bytes(b"not a checkpoint").is_err());
        let net = FingerprintNet::new(FingerprintNetConfig::small(2, 2), 1).unwrap();
        let mut bytes = to_bytes(&net, "t").unwrap();
        bytes.pop();
        assert!(from_bytes(&bytes).is_err());
    }
}
