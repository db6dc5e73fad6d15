use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 7] = b"MANCKPT";
pub const VERSION: u32 = 1;

/// Ordered named tensors in the on-disk checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn u32_at(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

fn u64_at(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8)?.try_into().unwrap()))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    /// Stores UTF-8 text as one byte value per element.
    pub fn insert_text(&mut self, name: &str, text: &str) {
        let bytes: Vec<f64> = text.bytes().map(f64::from).collect();
        let data = if bytes.is_empty() { vec![-1.0] } else { bytes };
        self.insert(name, Tensor::new(vec![data.len()], data).expect("non-empty"));
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let t = self.require(name)?;
        if t.data() == [-1.0] {
            return Ok(String::new());
        }
        let bytes = t
            .data()
            .iter()
            .map(|&v| match v {
                v if (0.0..=255.0).contains(&v) && v.fract() == 0.0 => Ok(v as u8),
                _ => Err(Error::Checkpoint(format!("entry {name} is not text"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| Error::Checkpoint(format!("entry {name} is not UTF-8")))
    }

    /// Stores a `u64` as two exact 32-bit halves.
    pub fn insert_u64(&mut self, name: &str, value: u64) {
        let t = Tensor::new(vec![2], vec![(value >> 32) as f64, (value & 0xffff_ffff) as f64]).unwrap();
        self.insert(name, t);
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.require(name)?.data() {
            [hi, lo] => Ok(((*hi as u64) << 32) | *lo as u64),
            _ => Err(Error::Checkpoint(format!("entry {name} is not an integer"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let b = &mut bytes;
        if take(b, MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32_at(b)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut ckpt = Self::new();
        while !b.is_empty() {
            let len = u32_at(b)? as usize;
            let name = std::str::from_utf8(take(b, len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = u32_at(b)? as usize;
            let shape = (0..rank).map(|_| u64_at(b).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = take(b, n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            ckpt.entries.push((name, t));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let mut c = Checkpoint::new();
        c.insert("w", Tensor::new(vec![2, 3], vec![1.0, -0.5, f64::MIN_POSITIVE, 3e300, 0.1, -0.0]).unwrap());
        c.insert_text("meta.config", "seed = 3\n# ü\n");
        c.insert_u64("meta.seed", u64::MAX - 5);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back.text("meta.config").unwrap(), "seed = 3\n# ü\n");
        assert_eq!(back.u64("meta.seed").unwrap(), u64::MAX - 5);
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let mut c = Checkpoint::new();
        c.insert("ab", Tensor::scalar(2.0));
        let b = c.to_bytes();
        assert_eq!(&b[..7], b"MANCKPT");
        assert_eq!(&b[7..11], &1u32.to_le_bytes());
        assert_eq!(&b[11..15], &2u32.to_le_bytes());
        assert_eq!(&b[15..17], b"ab");
        assert_eq!(&b[17..21], &1u32.to_le_bytes());
        assert_eq!(&b[21..29], &1u64.to_le_bytes());
        assert_eq!(&b[29..37], &2.0f64.to_le_bytes());
        assert_eq!(b.len(), 37);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTCKPT\x01\0\0\0").is_err());
        let mut c = Checkpoint::new();
        c.insert("w", Tensor::ones(&[4]));
        let b = c.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 3]).is_err());
    }
}
