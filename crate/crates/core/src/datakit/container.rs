//! Little-endian tensor groups with a CRC32 per group.
//!
//! A group is a run of contiguous tensors inside a blob file. Its metadata
//! (offset, length, checksum and per-tensor dims) lives in a text manifest.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    pub fn size(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::U8(_) => Dtype::U8,
            TensorData::U16(_) => Dtype::U16,
            TensorData::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::U8 => TensorData::U8(bytes.to_vec()),
            Dtype::U16 => TensorData::U16(
                bytes
                    .chunks_exact(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect(),
            ),
            Dtype::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    /// Row-major dimensions.
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: TensorData) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    /// Byte offset from the start of the group.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMeta {
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
    pub tensors: Vec<TensorMeta>,
}

/// Appends `tensors` to `blob` and returns their metadata.
pub fn encode_group(tensors: &[NamedTensor], blob: &mut Vec<u8>) -> GroupMeta {
    let start = blob.len();
    let mut metas = Vec::with_capacity(tensors.len());
    for t in tensors {
        debug_assert_eq!(t.dims.iter().product::<usize>(), t.data.len());
        metas.push(TensorMeta {
            name: t.name.clone(),
            dtype: t.data.dtype(),
            dims: t.dims.clone(),
            offset: (blob.len() - start) as u64,
        });
        t.data.write_le(blob);
    }
    GroupMeta {
        offset: start as u64,
        length: (blob.len() - start) as u64,
        crc32: crc32fast::hash(&blob[start..]),
        tensors: metas,
    }
}

/// Reads a group back, verifying bounds, layout and checksum. `label` names
/// the group in errors.
pub fn decode_group(meta: &GroupMeta, blob: &[u8], label: &str) -> Result<Vec<NamedTensor>> {
    let start = meta.offset as usize;
    let end = start
        .checked_add(meta.length as usize)
        .filter(|&e| e <= blob.len())
        .ok_or_else(|| Error::Format(format!("`{label}` extends past the end of the blob")))?;
    let bytes = &blob[start..end];
    if crc32fast::hash(bytes) != meta.crc32 {
        return Err(Error::Checksum {
            record: label.to_string(),
        });
    }
    let mut out = Vec::with_capacity(meta.tensors.len());
    for t in &meta.tensors {
        let n: usize = t.dims.iter().product();
        let a = t.offset as usize;
        let b = a + n * t.dtype.size();
        if b > bytes.len() {
            return Err(Error::Format(format!(
                "tensor `{}` in `{label}` overruns its group",
                t.name
            )));
        }
        out.push(NamedTensor {
            name: t.name.clone(),
            dims: t.dims.clone(),
            data: TensorData::read_le(t.dtype, &bytes[a..b]),
        });
    }
    Ok(out)
}

/// Removes and returns the tensor called `name`.
pub fn take_tensor(tensors: &mut Vec<NamedTensor>, name: &str, label: &str) -> Result<NamedTensor> {
    let i = tensors
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| Error::Format(format!("`{label}` has no tensor `{name}`")))?;
    Ok(tensors.swap_remove(i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_round_trip_and_corruption() {
        let ts = vec![
            NamedTensor::new("a", vec![2, 2], TensorData::U16(vec![1, 2, 65535, 4])),
            NamedTensor::new("b", vec![3], TensorData::F32(vec![0.5, -1.25, 1e-30])),
            NamedTensor::new("c", vec![1], TensorData::U8(vec![7])),
        ];
        let mut blob = vec![9u8; 5];
        let meta = encode_group(&ts, &mut blob);
        assert_eq!(meta.offset, 5);
        assert_eq!(meta.length, 8 + 12 + 1);
        assert_eq!(decode_group(&meta, &blob, "g").unwrap(), ts);
        // little-endian u16 layout
        assert_eq!(&blob[5..7], &[1, 0]);

        let mut bad = blob.clone();
        bad[10] ^= 0x40;
        match decode_group(&meta, &bad, "record 3") {
            Err(Error::Checksum { record }) => assert_eq!(record, "record 3"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_group(&meta, &blob[..20], "g"), Err(Error::Format(_))));
    }
}
