//! `TOPD` binary layout, little-endian:
//!
//! ```text
//! "TOPD" | u32 version | u32 width | u32 height | u32 count
//!        | u8 kind (0 continuous, 1 class) | u32 cardinality (0 if continuous)
//! per record:
//!   f32 condition | f32 volfrac | f32 penal | f32 rmin | f32 compliance
//!   | u8 converged | width*height f32 pixels
//! ```

use std::path::Path;

use super::{Condition, ConditionKind, ConditionedSample, Dataset, DatasetError, Result, SampleMeta};

pub const DATASET_MAGIC: &[u8; 4] = b"TOPD";
pub const DATASET_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 1 + 4;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let record = 5 * 4 + 1 + 4 * ds.width * ds.height;
    let mut out = Vec::with_capacity(HEADER_LEN + record * ds.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.width as u32).to_le_bytes());
    out.extend_from_slice(&(ds.height as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    let (kind, cardinality) = match ds.kind {
        ConditionKind::Continuous => (0u8, 0u32),
        ConditionKind::Class { cardinality } => (1, cardinality),
    };
    out.push(kind);
    out.extend_from_slice(&cardinality.to_le_bytes());
    for s in &ds.samples {
        for v in [
            s.condition.stored_value(),
            s.meta.volfrac,
            s.meta.penal,
            s.meta.rmin,
            s.meta.compliance,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(s.meta.converged as u8);
        for p in &s.image {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(DatasetError::Format {
                offset: self.pos,
                message: format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn error(&self, offset: usize, message: impl Into<String>) -> DatasetError {
        DatasetError::Format {
            offset,
            message: message.into(),
        }
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != DATASET_MAGIC {
        return Err(c.error(0, "bad magic"));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(c.error(4, format!("unsupported version {version}")));
    }
    let width = c.u32()? as usize;
    let height = c.u32()? as usize;
    let count = c.u32()? as usize;
    let kind_at = c.pos;
    let kind = c.u8()?;
    let cardinality = c.u32()?;
    let kind = match (kind, cardinality) {
        (0, 0) => ConditionKind::Continuous,
        (0, _) => return Err(c.error(kind_at + 1, "continuous dataset with nonzero cardinality")),
        (1, n) if n > 0 => ConditionKind::Class { cardinality: n },
        (1, _) => return Err(c.error(kind_at + 1, "class dataset with zero cardinality")),
        (k, _) => return Err(c.error(kind_at, format!("unknown condition kind {k}"))),
    };
    let pixels = width * height;
    let mut samples = Vec::with_capacity(count.min(bytes.len() / (21 + 4 * pixels).max(1)));
    for _ in 0..count {
        let record_at = c.pos;
        let value = c.f32()?;
        let condition = match kind {
            ConditionKind::Continuous => Condition::Continuous(value),
            ConditionKind::Class { cardinality } => {
                if value.fract() != 0.0 || value < 0.0 || value >= cardinality as f32 {
                    return Err(c.error(record_at, format!("invalid class index {value}")));
                }
                Condition::Class {
                    index: value as u32,
                    cardinality,
                }
            }
        };
        let meta = SampleMeta {
            volfrac: c.f32()?,
            penal: c.f32()?,
            rmin: c.f32()?,
            compliance: c.f32()?,
            converged: c.u8()? != 0,
        };
        let raw = c.take(4 * pixels)?;
        let image = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(ConditionedSample { image, condition, meta });
    }
    if c.pos != bytes.len() {
        return Err(c.error(c.pos, "trailing bytes after last record"));
    }
    Dataset::from_samples(width, height, kind, samples)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_samples() -> Dataset {
        let mut ds = Dataset::new(2, 2, ConditionKind::Continuous);
        ds.push(ConditionedSample {
            image: vec![0.0, 0.25, 0.5, 1.0],
            condition: Condition::Continuous(0.4),
            meta: SampleMeta {
                volfrac: 0.4,
                penal: 3.0,
                rmin: 1.5,
                compliance: 71.25,
                converged: true,
            },
        })
        .unwrap();
        ds.push(ConditionedSample {
            image: vec![0.1, 0.2, 0.3, 0.4],
            condition: Condition::Continuous(0.6),
            meta: SampleMeta::default(),
        })
        .unwrap();
        ds
    }

    #[test]
    fn round_trip() {
        let ds = two_samples();
        let bytes = encode_dataset(&ds);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * (21 + 16));
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn truncated_is_error() {
        let bytes = encode_dataset(&two_samples());
        for cut in [3, HEADER_LEN - 1, HEADER_LEN + 10, bytes.len() - 1] {
            match decode_dataset(&bytes[..cut]) {
                Err(DatasetError::Format { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_dataset(&two_samples());
        bytes[0] = b'X';
        let err = decode_dataset(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        assert!(matches!(err, DatasetError::Format { offset: 0, .. }));
    }

    #[test]
    fn bad_class_index() {
        let mut ds = Dataset::new(1, 1, ConditionKind::Class { cardinality: 3 });
        ds.push(ConditionedSample {
            image: vec![0.5],
            condition: Condition::Class { index: 2, cardinality: 3 },
            meta: SampleMeta::default(),
        })
        .unwrap();
        let mut bytes = encode_dataset(&ds);
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&7.0f32.to_le_bytes());
        assert!(matches!(
            decode_dataset(&bytes),
            Err(DatasetError::Format { offset, .. }) if offset == HEADER_LEN
        ));
    }
}
