use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::mask::TissueMask;
use super::raster::ImageRaster;
use crate::error::{Error, Result};
use crate::nncore::Tensor4;

const MAGIC: &[u8; 4] = b"PFPS";
const VERSION: u32 = 1;

/// Fixed-size patches cut from one slide, stored as f32 CHW planes.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub slide_id: String,
    pub patch_size: usize,
    data: Vec<f32>,
    /// Top-left pixel of each patch.
    pub origins: Vec<(u32, u32)>,
    /// Set when fewer distinct valid positions existed than patches requested.
    pub with_replacement: bool,
}

/// Per-slide seed: the first 8 bytes of SHA-256(slide_id), little-endian,
/// XORed into the run seed.
pub fn slide_seed(seed: u64, slide_id: &str) -> u64 {
    let digest = Sha256::digest(slide_id.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn values_per_patch(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let k = self.values_per_patch();
        &self.data[i * k..(i + 1) * k]
    }

    /// Gathers the listed patches into an (n, 3, P, P) tensor.
    pub fn to_tensor(&self, indices: &[usize]) -> Tensor4 {
        let k = self.values_per_patch();
        let mut data = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            data.extend(self.patch(i).iter().map(|&v| f64::from(v)));
        }
        Tensor4::from_vec([indices.len(), 3, self.patch_size, self.patch_size], data).expect("patch tensor shape")
    }

    /// `PFPS | u32 version | u32 n | u32 p | f32 patches | (u32 x, u32 y)… | u8 flag`,
    /// little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 4 * self.data.len() + 8 * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch_size as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &(x, y) in &self.origins {
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
        }
        out.push(u8::from(self.with_replacement));
        out
    }

    pub fn decode(slide_id: &str, bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::PatchCache(format!("{slide_id}: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing PFPS magic"));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if u32_at(4) != VERSION {
            return Err(bad("unsupported version"));
        }
        let n = u32_at(8) as usize;
        let p = u32_at(12) as usize;
        let values = n * 3 * p * p;
        let expected = 16 + 4 * values + 8 * n + 1;
        if bytes.len() != expected {
            return Err(bad(&format!("{} bytes, header implies {expected}", bytes.len())));
        }
        let body = &bytes[16..16 + 4 * values];
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let origins = bytes[16 + 4 * values..expected - 1]
            .chunks_exact(8)
            .map(|c| {
                (
                    u32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                    u32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
                )
            })
            .collect();
        let with_replacement = match bytes[expected - 1] {
            0 => false,
            1 => true,
            _ => return Err(bad("replacement flag must be 0 or 1")),
        };
        Ok(Self {
            slide_id: slide_id.to_string(),
            patch_size: p,
            data,
            origins,
            with_replacement,
        })
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(slide_id: &str, path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(slide_id, &bytes)
    }
}

/// Samples `n` patch origins whose patch center `(x + p/2, y + p/2)` is
/// tissue, uniformly and without replacement; falls back to sampling with
/// replacement when fewer than `n` valid origins exist. Patches never cross
/// the image border.
pub fn extract_patches(
    slide_id: &str,
    img: &ImageRaster,
    mask: &TissueMask,
    n: usize,
    p: usize,
    seed: u64,
) -> Result<PatchSet> {
    let (w, h) = (img.width(), img.height());
    if n == 0 {
        return Err(Error::Config("patches_per_slide must be at least 1".into()));
    }
    if p == 0 || p > w.min(h) {
        return Err(Error::Config(format!("patch size {p} does not fit a {w}x{h} image")));
    }
    if mask.width() != w || mask.height() != h {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match image {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    let mut valid = Vec::new();
    for y in 0..=h - p {
        for x in 0..=w - p {
            if mask.get(x + p / 2, y + p / 2) {
                valid.push((x as u32, y as u32));
            }
        }
    }
    if valid.is_empty() {
        return Err(Error::NoTissue {
            slide_id: slide_id.to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_replacement = valid.len() < n;
    let origins: Vec<(u32, u32)> = if with_replacement {
        (0..n).map(|_| valid[rng.random_range(0..valid.len())]).collect()
    } else {
        index::sample(&mut rng, valid.len(), n).into_iter().map(|i| valid[i]).collect()
    };

    let mut data = Vec::with_capacity(n * 3 * p * p);
    for &(x0, y0) in &origins {
        let (x0, y0) = (x0 as usize, y0 as usize);
        for c in 0..3 {
            let plane = img.plane(c);
            for y in y0..y0 + p {
                data.extend(plane[y * w + x0..y * w + x0 + p].iter().map(|&v| v as f32));
            }
        }
    }
    Ok(PatchSet {
        slide_id: slide_id.to_string(),
        patch_size: p,
        data,
        origins,
        with_replacement,
    })
}
