//! Binary checkpoint format.
//!
//! Layout, all integers 32-bit little-endian: magic `DBDN`, version, config
//! (variant tag, B, L, n_r, n_g, scale), then every parameter tensor in
//! canonical order as name length, UTF-8 name, rank, dims, f32 payload.
//! Weights are rank 4 (out, in, k, k), or (in, out, k, k) for transposed
//! convolutions; biases are rank 1.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network, Variant};

pub const MAGIC: &[u8; 4] = b"DBDN";
pub const VERSION: u32 = 1;

/// Set on the variant tag when L0 joins every block's concatenation.
const L0_EVERY_BLOCK_FLAG: u32 = 0x100;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn tensor_dims(name: &str, shape: crate::Shape) -> Vec<usize> {
    if name.ends_with(".bias") {
        vec![shape.c]
    } else {
        vec![shape.n, shape.c, shape.h, shape.w]
    }
}

pub fn encode_config(cfg: &ModelConfig) -> [u32; 6] {
    let mut tag = cfg.variant.tag();
    if cfg.l0_in_every_block {
        tag |= L0_EVERY_BLOCK_FLAG;
    }
    [tag, cfg.blocks as u32, cfg.layers as u32, cfg.n_r as u32, cfg.n_g as u32, cfg.scale as u32]
}

pub fn decode_config(words: [u32; 6]) -> Result<ModelConfig> {
    let [tag, blocks, layers, n_r, n_g, scale] = words;
    let variant = Variant::from_tag(tag & !L0_EVERY_BLOCK_FLAG)
        .ok_or_else(|| Error::Checkpoint(format!("unknown variant tag {tag:#x}")))?;
    let cfg = ModelConfig {
        variant,
        blocks: blocks as usize,
        layers: layers as usize,
        n_r: n_r as usize,
        n_g: n_g as usize,
        scale: scale as usize,
        l0_in_every_block: tag & L0_EVERY_BLOCK_FLAG != 0,
    };
    cfg.validate().map_err(|e| Error::Checkpoint(format!("invalid config: {e}")))?;
    Ok(cfg)
}

pub fn to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + net.count_params() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    for w in encode_config(net.config()) {
        put_u32(&mut out, w as usize);
    }
    for (name, t) in net.params() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        let dims = tensor_dims(&name, t.shape());
        put_u32(&mut out, dims.len());
        for d in dims {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let mut words = [0u32; 6];
    for w in &mut words {
        *w = r.u32("config")?;
    }
    let cfg = decode_config(words)?;
    let mut net = Network::build(cfg, 0)?;
    for (expect_name, t) in net.params_mut() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != expect_name {
            return Err(Error::Checkpoint(format!("expected tensor {expect_name}, found {name}")));
        }
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank.min(8) {
            dims.push(r.u32("dims")? as usize);
        }
        let expect_dims = tensor_dims(&expect_name, t.shape());
        if dims != expect_dims || rank != expect_dims.len() {
            return Err(Error::Checkpoint(format!("{name}: dims {dims:?} do not match config {expect_dims:?}")));
        }
        let payload = r.take(t.numel() * 4, name)?;
        for (dst, src) in t.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(net)
}

pub fn save(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Network<f32> {
        Network::build(ModelConfig::tiny(Variant::Dbdn, 1, 1, 2, 2), 3).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&tiny());
        assert_eq!(&bytes[..4], b"DBDN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let cfg: Vec<u32> = bytes[8..32].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(cfg, vec![0, 1, 1, 2, 2, 2]);
        // first tensor record
        assert_eq!(&bytes[32..36], &17u32.to_le_bytes());
        assert_eq!(&bytes[36..53], b"extraction.weight");
        assert_eq!(&bytes[53..57], &4u32.to_le_bytes());
    }

    #[test]
    fn total_size_is_exact() {
        let net = tiny();
        let names: usize = net.params().iter().map(|(n, t)| 4 + n.len() + 4 + 4 * tensor_dims(n, t.shape()).len()).sum();
        assert_eq!(to_bytes(&net).len(), 32 + names + 4 * 319);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = tiny();
        let back = from_bytes(&to_bytes(&net)).unwrap();
        assert_eq!(to_bytes(&back), to_bytes(&net));
        for ((_, a), (_, b)) in net.params().iter().zip(back.params()) {
            let bits = |t: &crate::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn l0_toggle_survives() {
        let mut cfg = ModelConfig::tiny(Variant::DbdnPlus, 3, 1, 2, 3);
        cfg.l0_in_every_block = true;
        let net = Network::build(cfg, 1).unwrap();
        assert_eq!(*from_bytes(&to_bytes(&net)).unwrap().config(), cfg);
    }

    #[test]
    fn rejects_corruption() {
        let good = to_bytes(&tiny());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(from_bytes(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
        // a dims field that disagrees with the config
        let mut bad = good.clone();
        bad[57] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("dims")));
    }
}
