//! Binary model container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PFNN" | u32 version = 1 | u32 header_len | header (UTF-8 JSON, header_len bytes)
//! | f64 trainable blocks, spec order | f64 batchnorm running stats, spec order
//! ```
//!
//! The header carries the layer list, the input shape, the length of every
//! block and an opaque `meta` object for the caller. Loading fails unless
//! the file length matches the header exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{LayerSpec, NetworkParams};
use super::network::Network;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PFNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct BlockShape {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    trainable: Vec<BlockShape>,
    running: Vec<BlockShape>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn encode_model(net: &Network, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let shapes = |blocks: Vec<(String, &Vec<f64>)>| -> Vec<BlockShape> {
        blocks
            .into_iter()
            .map(|(name, b)| BlockShape { name, len: b.len() })
            .collect()
    };
    let header = Header {
        input: net.input,
        layers: net.specs.clone(),
        trainable: shapes(net.params.trainable()),
        running: shapes(net.params.running()),
        meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let n_values: usize = header_values(&net.params);
    let mut out = Vec::with_capacity(12 + header.len() + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, block) in net.params.trainable().into_iter().chain(net.params.running()) {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn header_values(p: &NetworkParams) -> usize {
    p.trainable().iter().chain(p.running().iter()).map(|(_, b)| b.len()).sum()
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::ModelFormat("truncated preamble".into()))
}

pub fn decode_model(bytes: &[u8]) -> Result<(Network, serde_json::Value)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::ModelFormat("missing PFNN magic".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let header_len = read_u32(bytes, 8)? as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| Error::ModelFormat("truncated header".into()))?;
    let header_text =
        std::str::from_utf8(header_bytes).map_err(|e| Error::ModelFormat(format!("header is not UTF-8: {e}")))?;
    let header: Header = serde_json::from_str(header_text)?;

    let mut params = NetworkParams::zeros(&header.layers);
    let expect = |blocks: Vec<(String, &Vec<f64>)>, declared: &[BlockShape]| -> Result<()> {
        let actual: Vec<BlockShape> = blocks
            .into_iter()
            .map(|(name, b)| BlockShape { name, len: b.len() })
            .collect();
        if actual != declared {
            return Err(Error::ModelFormat("declared block shapes do not match the layer list".into()));
        }
        Ok(())
    };
    expect(params.trainable(), &header.trainable)?;
    expect(params.running(), &header.running)?;

    let body = &bytes[12 + header_len..];
    let total = header_values(&params);
    if body.len() != total * 8 {
        return Err(Error::ModelFormat(format!(
            "body has {} bytes, header implies {}",
            body.len(),
            total * 8
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let (trainable, running) = params.blocks_mut();
    for block in trainable.into_iter().chain(running) {
        for v in block.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    let net = Network::new(header.layers, params, header.input)?;
    Ok((net, header.meta))
}

pub fn save_model(path: &Path, net: &Network, meta: &serde_json::Value) -> Result<()> {
    let bytes = encode_model(net, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(Network, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::layers::default_architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_net() -> Network {
        Network::init(default_architecture(3, [4, 8, 8]), [3, 16, 16], &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut net = sample_net();
        net.params.running_mut()[0][1] = 0.25;
        let meta = serde_json::json!({"head": "bce", "cutoff": 12.5});
        let bytes = encode_model(&net, &meta).unwrap();
        let (back, meta_back) = decode_model(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(meta_back, meta);
    }

    #[test]
    fn length_is_validated_exactly() {
        let bytes = encode_model(&sample_net(), &serde_json::Value::Null).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_model(&longer).is_err());
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(decode_model(&bad_magic).is_err());
    }

    #[test]
    fn negative_running_variance_rejected() {
        let mut net = sample_net();
        // running blocks alternate mean, var
        net.params.running_mut()[1][0] = -1.0;
        let bytes = encode_model(&net, &serde_json::Value::Null).unwrap();
        assert!(decode_model(&bytes).is_err());
    }
}
