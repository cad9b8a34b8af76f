//! Binary checkpoint format.
//!
//! ```text
//! magic       b"RCSE"
//! version     u32
//! d, |E|, |R| u64 each
//! entities    |E| × (u32 byte length, UTF-8 bytes)
//! relations   |R| × (u32 byte length, UTF-8 bytes)
//! entity_vecs |E|·d × f64, row-major
//! relations   |R|·d × f64, row-major
//! checksum    u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::scalar::Scalar;
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"RCSE";
pub const VERSION: u32 = 1;

fn put_symbols(out: &mut Vec<u8>, symbols: &[String]) -> Result<()> {
    for s in symbols {
        let len = u32::try_from(s.len()).map_err(|_| Error::Checkpoint(format!("symbol too long: {} bytes", s.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    Ok(())
}

/// Encodes `model` with the vocabulary it was trained against.
pub fn to_bytes<T: Scalar>(model: &EmbeddingModel<T>, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if model.fingerprint() != vocab.fingerprint() {
        return Err(Error::Checkpoint("model was not trained against this vocabulary".into()));
    }
    let mut out = Vec::with_capacity(
        32 + 8 * (model.entity_params().len() + model.relation_params().len()),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [model.dim(), model.num_entities(), model.num_relations()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    put_symbols(&mut out, vocab.entities())?;
    put_symbols(&mut out, vocab.relations())?;
    for x in model.entity_params().iter().chain(model.relation_params()) {
        out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }

    fn symbols(&mut self, n: usize) -> Result<Vec<String>> {
        (0..n)
            .map(|_| {
                let len = self.u32()? as usize;
                String::from_utf8(self.take(len)?.to_vec())
                    .map_err(|_| Error::Checkpoint("symbol is not valid UTF-8".into()))
            })
            .collect()
    }

    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

/// Decodes a checkpoint, verifying magic, version and checksum.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(EmbeddingModel<T>, Vocabulary)> {
    if bytes.len() < 4 + 4 + 24 + 4 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dim = r.count()?;
    let ne = r.count()?;
    let nr = r.count()?;
    let vocab = Vocabulary::from_symbols(r.symbols(ne)?, r.symbols(nr)?)?;
    let entity = r.floats(ne.checked_mul(dim).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
    let relation = r.floats(nr.checked_mul(dim).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes before checksum".into()));
    }
    let model = EmbeddingModel::from_parts(dim, ne, nr, entity, relation, vocab.fingerprint())?;
    Ok((model, vocab))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, model: &EmbeddingModel<T>, vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocab)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(EmbeddingModel<T>, Vocabulary)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RelationForm;

    fn setup() -> (EmbeddingModel<f64>, Vocabulary) {
        let v = Vocabulary::from_symbols(
            vec!["mug".into(), "kitchen".into(), "tasse à café".into()],
            vec!["atLocation".into()],
        )
        .unwrap();
        (EmbeddingModel::init(4, &v, RelationForm::Rotational, 3).unwrap(), v)
    }

    #[test]
    fn layout_header() {
        let (m, v) = setup();
        let b = to_bytes(&m, &v).unwrap();
        assert_eq!(&b[..4], b"RCSE");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 1);
        let symbols: usize = ["mug", "kitchen", "tasse à café", "atLocation"].iter().map(|s| 4 + s.len()).sum();
        assert_eq!(b.len(), 32 + symbols + 8 * 4 * 4 + 4);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, v) = setup();
        let bytes = to_bytes(&m, &v).unwrap();
        let (m2, v2) = from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(v2, v);
        assert_eq!(m2.entity_params().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   m.entity_params().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(m2.relation_params(), m.relation_params());
        assert_eq!(to_bytes(&m2, &v2).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let (m, v) = setup();
        let mut bytes = to_bytes(&m, &v).unwrap();
        bytes[40] ^= 1;
        assert!(matches!(from_bytes::<f64>(&bytes), Err(Error::Checkpoint(_))));
        assert!(from_bytes::<f64>(&bytes[..10]).is_err());
    }

    #[test]
    fn vocabulary_mismatch_rejected() {
        let (m, _) = setup();
        let other = Vocabulary::from_symbols(vec!["a".into()], vec!["r".into()]).unwrap();
        assert!(to_bytes(&m, &other).is_err());
    }
}
