//! PRLC checkpoint container.
//!
//! Layout (integers and floats little-endian):
//!   magic "PRLC" | version u32 | tensor count u32
//!   per tensor: name_len u32 | name bytes | rank u32 | dims u32* | f32 payload
//!   footer: CRC32 of every byte after the 12-byte header
//!
//! Values are stored as f32; the in-memory representation stays f64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::store::ParamStore;
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PRLC";
pub const VERSION: u32 = 1;

fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = !0u32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    for (name, tensor) in store.iter() {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let crc = crc32(&body);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: "file too short for header and footer".into(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: "bad magic".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;

    let body = &bytes[12..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual_crc = crc32(body);
    if stored_crc != actual_crc {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("crc mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
        });
    }

    let mut reader = Reader {
        bytes: body,
        pos: 0,
        path,
    };
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = reader.u32()? as usize;
        let name = String::from_utf8(reader.take(name_len)?.to_vec()).map_err(|_| {
            Error::Corrupt {
                path: path.to_path_buf(),
                msg: "tensor name is not utf-8".into(),
            }
        })?;
        let rank = reader.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(reader.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = reader.take(n * 4)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    if reader.pos != body.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("{} trailing bytes after last tensor", body.len() - reader.pos),
        });
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("paramrel-ckpt-{}-{name}.prlc", std::process::id()));
        path
    }

    #[test]
    fn round_trip_within_f32_precision() {
        let mut rng = rng::seeded(61);
        let mut store = ParamStore::new();
        store
            .insert("a.w", Tensor::new(vec![3, 4], rng::normal_vec(&mut rng, 12)).unwrap())
            .unwrap();
        store
            .insert("a.b", Tensor::from_vec(rng::normal_vec(&mut rng, 3)))
            .unwrap();
        let path = temp_path("roundtrip");
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (name, tensor) in store.iter() {
            let got = loaded.get(name).unwrap();
            assert_eq!(got.shape(), tensor.shape());
            for (a, b) in got.data().iter().zip(tensor.data()) {
                let rel = (a - b).abs() / b.abs().max(1e-12);
                assert!(rel <= 6e-8, "f32 quantization bound exceeded: {rel}");
            }
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let path = temp_path("flip");
        save_checkpoint(&store, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let idx = bytes.len() - 6; // inside the f32 payload
        bytes[idx] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Corrupt { .. })
        ));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn empty_store_round_trips() {
        let store = ParamStore::new();
        let path = temp_path("empty");
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.is_empty());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn version_mismatch_rejected() {
        let store = ParamStore::new();
        let path = temp_path("version");
        save_checkpoint(&store, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Corrupt { msg, .. }) => assert!(msg.contains("version")),
            other => panic!("expected corrupt error, got {other:?}"),
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn crc_known_value() {
        // standard check value for the IEEE polynomial
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }
}
