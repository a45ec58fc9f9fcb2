//! Binary parameter snapshots: magic `AVSC`, `u32` version, `u32` section
//! count, then per section a `u32` name length, the UTF-8 name, a `u64` value
//! count and that many little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Parameters;

const MAGIC: &[u8; 4] = b"AVSC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) {
        self.sections.push((name.into(), values.iter().map(|v| *v as f32).collect()));
    }

    /// Appends every section of `params` under `prefix.`.
    pub fn add(&mut self, prefix: &str, params: &dyn Parameters) {
        for (name, values) in params.sections() {
            self.push(format!("{prefix}.{name}"), values);
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, v)| &v[..])
    }

    pub fn require(&self, name: &str) -> Result<&[f32]> {
        self.get(name).ok_or_else(|| Error::Checkpoint(format!("missing section {name}")))
    }

    /// Restores every section of `params` from `prefix.` entries, checking sizes.
    pub fn load_into(&self, prefix: &str, params: &mut dyn Parameters) -> Result<()> {
        for (name, dst) in params.sections_mut() {
            let full = format!("{prefix}.{name}");
            let src = self.require(&full)?;
            if src.len() != dst.len() {
                return Err(Error::Checkpoint(format!(
                    "section {full} has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s as f64;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.sections.iter().map(|(n, v)| 12 + n.len() + 4 * v.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, values) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not an AVSC checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("section too large".into()))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            sections.push((name, values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn layout_is_stable() {
        let mut c = Checkpoint::new();
        c.push("a", &[1.0, -2.5]);
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"AVSC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(b[16], b'a');
        assert_eq!(u64::from_le_bytes(b[17..25].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[25..29].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 33);
    }

    #[test]
    fn parameters_round_trip_through_f32() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(3, 5, 2, &mut rng);
        let mut c = Checkpoint::new();
        c.add("net", &m);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        let mut r = m.zeros_like();
        back.load_into("net", &mut r).unwrap();
        for (a, b) in m.w1.iter().zip(&r.w1) {
            assert_eq!(*a as f32, *b as f32);
        }
        let mut wrong = Mlp::new(3, 6, 2, &mut rng);
        assert!(back.load_into("net", &mut wrong).is_err());
        assert!(back.load_into("other", &mut r).is_err());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut c = Checkpoint::new();
        c.push("x", &[1.0; 4]);
        let b = c.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_sections_round_trip(secs in prop::collection::vec(("[a-z.]{0,12}", prop::collection::vec(-1e6f32..1e6, 0..40)), 0..6)) {
            let c = Checkpoint { sections: secs };
            prop_assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
}
