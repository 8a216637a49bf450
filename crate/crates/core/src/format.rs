//! Binary shard (`CPTD`) and target (`CPTT`) files. All integers and floats
//! are little-endian; matrices are row-major `f32`.
//!
//! ```text
//! CPTD: "CPTD" | u16 version=1 | u32 shard_id | u32 count | u32 dim
//!       | count*dim f32 | count u64 sample ids
//! CPTT: "CPTT" | u16 version=1 | u32 shard_id | u8 aligned | u32 count | u32 dim
//!       | count*dim f32
//! ```

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{Sample, Shard, TargetSet};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"CPTD";
pub const TARGET_MAGIC: &[u8; 4] = b"CPTT";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FileHeader {
    Shard { version: u16, shard_id: u32, count: u32, dim: u32 },
    Targets { version: u16, shard_id: u32, aligned: bool, count: u32, dim: u32 },
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<u16> {
    let got = r.take(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(version)
}

fn u32_len(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
}

pub fn encode_shard(shard: &Shard) -> Result<Vec<u8>> {
    let dim = shard.samples.first().map_or(0, Sample::dim);
    if shard.samples.iter().any(|s| s.dim() != dim) {
        return Err(Error::Format(format!("shard {} has ragged samples", shard.shard_id)));
    }
    let count = shard.samples.len();
    let mut out = Vec::with_capacity(18 + count * (dim * 4 + 8));
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&shard.shard_id.to_le_bytes());
    out.extend_from_slice(&u32_len(count, "count")?.to_le_bytes());
    out.extend_from_slice(&u32_len(dim, "dim")?.to_le_bytes());
    for s in &shard.samples {
        for v in &s.x {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in &shard.samples {
        out.extend_from_slice(&s.id.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_shard(bytes: &[u8]) -> Result<Shard> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, SHARD_MAGIC)?;
    let shard_id = r.u32()?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let values = r.f32s(count.checked_mul(dim).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let id = r.u64()?;
        samples.push(Sample::new(id, values[i * dim..(i + 1) * dim].to_vec()));
    }
    r.finish()?;
    if samples.windows(2).any(|w| w[0].id >= w[1].id) {
        return Err(Error::Format(format!("shard {shard_id} sample ids are not strictly increasing")));
    }
    Ok(Shard::new(shard_id, samples))
}

pub fn encode_targets(ts: &TargetSet) -> Result<Vec<u8>> {
    let count = ts.rows();
    let mut out = Vec::with_capacity(19 + ts.values().len() * 4);
    out.extend_from_slice(TARGET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&ts.shard_id.to_le_bytes());
    out.push(u8::from(ts.aligned));
    out.extend_from_slice(&u32_len(count, "count")?.to_le_bytes());
    out.extend_from_slice(&u32_len(ts.n, "dim")?.to_le_bytes());
    for v in ts.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_targets(bytes: &[u8]) -> Result<TargetSet> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, TARGET_MAGIC)?;
    let shard_id = r.u32()?;
    let aligned = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("aligned flag must be 0 or 1, got {b}"))),
    };
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let values = r.f32s(count.checked_mul(dim).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    r.finish()?;
    TargetSet::new(shard_id, dim, values, aligned).map_err(|e| Error::Format(e.to_string()))
}

/// Parses only the header of either file kind.
pub fn read_header(bytes: &[u8]) -> Result<FileHeader> {
    let mut r = Reader::new(bytes);
    match r.take(4)? {
        m if m == SHARD_MAGIC => Ok(FileHeader::Shard {
            version: r.u16()?,
            shard_id: r.u32()?,
            count: r.u32()?,
            dim: r.u32()?,
        }),
        m if m == TARGET_MAGIC => Ok(FileHeader::Targets {
            version: r.u16()?,
            shard_id: r.u32()?,
            aligned: r.u8()? != 0,
            count: r.u32()?,
            dim: r.u32()?,
        }),
        m => Err(Error::Format(format!("unknown magic {:?}", String::from_utf8_lossy(m)))),
    }
}

pub fn write_shard_file(path: impl AsRef<Path>, shard: &Shard) -> Result<()> {
    fs::write(path, encode_shard(shard)?)?;
    Ok(())
}

pub fn read_shard_file(path: impl AsRef<Path>) -> Result<Shard> {
    decode_shard(&fs::read(path)?)
}

pub fn write_targets_file(path: impl AsRef<Path>, ts: &TargetSet) -> Result<()> {
    fs::write(path, encode_targets(ts)?)?;
    Ok(())
}

pub fn read_targets_file(path: impl AsRef<Path>) -> Result<TargetSet> {
    decode_targets(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shard_layout_is_exact() {
        let shard = Shard::new(3, vec![Sample::new(9, vec![1.0, -2.5])]);
        let bytes = encode_shard(&shard).unwrap();
        let mut expect = b"CPTD".to_vec();
        expect.extend_from_slice(&[1, 0, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        expect.extend_from_slice(&9u64.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn target_layout_is_exact() {
        let ts = TargetSet::new(SHARED_SET, 1, vec![0.5], true).unwrap();
        let bytes = encode_targets(&ts).unwrap();
        let mut expect = b"CPTT".to_vec();
        expect.extend_from_slice(&[1, 0, 0xFF, 0xFF, 0xFF, 0xFF, 1, 1, 0, 0, 0, 1, 0, 0, 0]);
        expect.extend_from_slice(&0.5f32.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    const SHARED_SET: u32 = crate::dataset::SHARED_SET_SHARD_ID;

    #[test]
    fn corrupted_magic_rejected() {
        let ts = TargetSet::new(0, 2, vec![1.0, 2.0], true).unwrap();
        let mut bytes = encode_targets(&ts).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_targets(&bytes), Err(Error::Format(_))));
        let mut shard = encode_shard(&Shard::new(0, vec![Sample::new(1, vec![0.0])])).unwrap();
        shard[3] = b'T';
        assert!(matches!(decode_shard(&shard), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let ts = TargetSet::new(0, 2, vec![1.0, 2.0], false).unwrap();
        let bytes = encode_targets(&ts).unwrap();
        assert!(decode_targets(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_targets(&long).is_err());
    }

    #[test]
    fn header_inspection() {
        let ts = TargetSet::new(4, 3, vec![0.0; 6], true).unwrap();
        assert_eq!(
            read_header(&encode_targets(&ts).unwrap()).unwrap(),
            FileHeader::Targets { version: 1, shard_id: 4, aligned: true, count: 2, dim: 3 }
        );
    }

    proptest! {
        #[test]
        fn shard_roundtrip(rows in proptest::collection::vec(proptest::collection::vec(-1e6f32..1e6, 3), 0..20), id in any::<u32>()) {
            let samples = rows.into_iter().enumerate().map(|(i, x)| Sample::new(i as u64 * 3, x)).collect();
            let shard = Shard::new(id, samples);
            let back = decode_shard(&encode_shard(&shard).unwrap()).unwrap();
            prop_assert_eq!(back, shard);
        }

        #[test]
        fn targets_roundtrip(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..60), aligned in any::<bool>()) {
            let n = 3;
            let vals = vals[..vals.len() / n * n].to_vec();
            let ts = TargetSet::new(7, n, vals, aligned).unwrap();
            let back = decode_targets(&encode_targets(&ts).unwrap()).unwrap();
            prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            ts.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, ts);
        }
    }
}
