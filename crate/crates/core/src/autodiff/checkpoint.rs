//! Flat binary parameter container.
//!
//! Layout: the 5-byte magic `PIBK1`, then one record per parameter until end
//! of input: name length (u32 LE), UTF-8 name, rank (u32 LE), each dimension
//! (u32 LE), then the values as f64 LE in row-major order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::ParamStore;
use crate::matrix::Matrix;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PIBK1";

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + store.numel() * 8 + store.len() * 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for (_, name, value) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(value.cols() as u32).to_le_bytes());
        for x in value.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parse a checkpoint into a store, preserving record order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing PIBK1 magic".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let mut store = ParamStore::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")?;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("non UTF-8 parameter name at byte {}", r.pos)))?;
        let rank = r.u32("rank")?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")?);
        }
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [rows, cols] => (*rows, *cols),
            _ => return Err(Error::Checkpoint(format!("{name}: rank {rank} unsupported"))),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let raw = r.take(n.saturating_mul(8), "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        if store.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.add(name, Matrix::from_vec(rows, cols, values)?);
    }
    Ok(store)
}

impl ParamStore {
    /// Overwrite every parameter of `self` from `loaded`, matching by name and
    /// shape. Extra entries in `loaded` are an error too.
    pub fn load_from(&mut self, loaded: &ParamStore) -> Result<()> {
        if loaded.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                loaded.len(),
                self.len()
            )));
        }
        for id in self.ids().collect::<Vec<_>>() {
            let name = String::from(self.name(id));
            let src = loaded
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let value = loaded.value(src);
            if value.shape() != self.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} in checkpoint, model expects {:?}",
                    value.shape(),
                    self.value(id).shape()
                )));
            }
            *self.value_mut(id) = value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("ab", Matrix::row_vector(alloc::vec![1.5]));
        let bytes = encode_checkpoint(&store);
        let mut expected = b"PIBK1".to_vec();
        expected.extend_from_slice(&[2, 0, 0, 0, b'a', b'b', 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::zeros(2, 2));
        let bytes = encode_checkpoint(&store);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint(b"PIBK0").is_err());
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let mut a = ParamStore::new();
        a.add("w", Matrix::zeros(2, 2));
        let mut b = ParamStore::new();
        b.add("w", Matrix::zeros(2, 3));
        assert!(a.load_from(&b).is_err());
        let mut c = ParamStore::new();
        c.add("v", Matrix::zeros(2, 2));
        assert!(a.load_from(&c).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(
            shapes in proptest::collection::vec((1usize..5, 1usize..5), 1..5),
            seed in any::<u64>(),
        ) {
            let mut store = ParamStore::new();
            for (i, (r, c)) in shapes.iter().enumerate() {
                let m = Matrix::from_fn(*r, *c, |a, b| {
                    f64::from_bits(seed.wrapping_mul(0x9e3779b97f4a7c15).rotate_left((a * 7 + b + i) as u32) >> 12) - 1.0
                });
                store.add(alloc::format!("p{i}"), m);
            }
            let back = decode_checkpoint(&encode_checkpoint(&store)).unwrap();
            prop_assert_eq!(back, store);
        }
    }
}
