//! On-disk dataset: `manifest.toml` plus `data.bin`.
//!
//! The manifest is UTF-8 `key = value` text with one `[[records]]` block per
//! frame. The blob holds each frame's tensors back to back, little-endian
//! and row-major: `hist` as u16 `[32, 64, 16]`, `spc` as u16 `[128, 256]`.
//! An optional `calibration` group holds the skew frame as f32 `[32, 64]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::{decode_group, encode_group, take_tensor, GroupMeta, NamedTensor, TensorData};
use super::{Frame, LabelBox};
use crate::simkit::{Histogram, SceneSpec};
use crate::{Error, Grid, Result, MACRO_H, MACRO_W, N_BINS, SPAD_H, SPAD_W};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BLOB_FILE: &str = "data.bin";

mod seed_str {
    use serde::{Deserialize, Deserializer, Serializer};

    // TOML integers are signed 64-bit.
    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    #[serde(with = "seed_str")]
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    #[serde(with = "seed_str")]
    pub seed: u64,
    pub sbr: f64,
    pub ambient_rate: f64,
    pub group: GroupMeta,
    pub labels: Vec<LabelBox>,
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_frames: usize,
    pub blob: String,
    pub blob_len: u64,
    /// Resolved generation parameters, echoed verbatim.
    pub config: BTreeMap<String, String>,
    pub split: Option<Split>,
    pub calibration: Option<GroupMeta>,
    pub records: Vec<FrameRecord>,
}

impl DatasetManifest {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        // peek at the version first so old or future files get a clear error
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if probe.version != FORMAT_VERSION {
            return Err(Error::Version {
                found: probe.version,
                expected: FORMAT_VERSION,
            });
        }
        let m: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if m.records.len() != m.n_frames {
            return Err(Error::Format(format!(
                "manifest declares {} frames but lists {}",
                m.n_frames,
                m.records.len()
            )));
        }
        Ok(m)
    }
}

fn encode_frame(frame: &Frame) -> Vec<NamedTensor> {
    let hist: Vec<u16> = frame
        .hist
        .data
        .iter()
        .flat_map(|h| h.counts().iter().copied())
        .collect();
    vec![
        NamedTensor::new(
            "hist",
            vec![frame.hist.height, frame.hist.width, N_BINS],
            TensorData::U16(hist),
        ),
        NamedTensor::new(
            "spc",
            vec![frame.spc.height, frame.spc.width],
            TensorData::U16(frame.spc.data.clone()),
        ),
    ]
}

/// Writes frames (and an optional skew calibration) to `dir`, creating it
/// if needed. The split, when given, is recorded in the manifest.
pub fn write_dataset(
    dir: &Path,
    frames: &[Frame],
    calibration: Option<&Grid<f64>>,
    config: &[(String, String)],
) -> Result<DatasetManifest> {
    write_dataset_with_split(dir, frames, calibration, config, None)
}

pub fn write_dataset_with_split(
    dir: &Path,
    frames: &[Frame],
    calibration: Option<&Grid<f64>>,
    config: &[(String, String)],
    split: Option<Split>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut records = Vec::with_capacity(frames.len());
    for f in frames {
        let group = encode_group(&encode_frame(f), &mut blob);
        records.push(FrameRecord {
            index: f.index,
            seed: f.seed,
            sbr: f.sbr,
            ambient_rate: f.ambient_rate,
            group,
            labels: f.labels.clone(),
            scene: f.scene.clone(),
        });
    }
    let calibration = calibration.map(|c| {
        let t = NamedTensor::new(
            "calibration",
            vec![c.height, c.width],
            TensorData::F32(c.data.iter().map(|&v| v as f32).collect()),
        );
        encode_group(&[t], &mut blob)
    });
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        n_frames: frames.len(),
        blob: BLOB_FILE.to_string(),
        blob_len: blob.len() as u64,
        config: config.iter().cloned().collect(),
        split,
        calibration,
        records,
    };
    fs::write(dir.join(BLOB_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), manifest.to_toml_string()?)?;
    Ok(manifest)
}

/// An opened dataset; the blob is held in memory and frames are decoded
/// (and checksummed) on access.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    blob: Vec<u8>,
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest = DatasetManifest::from_toml_str(&text)?;
    let blob = fs::read(dir.join(&manifest.blob))?;
    if blob.len() as u64 != manifest.blob_len {
        return Err(Error::Format(format!(
            "blob is {} bytes, manifest expects {} (truncated?)",
            blob.len(),
            manifest.blob_len
        )));
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        blob,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, i: usize) -> Result<Frame> {
        let rec = self
            .manifest
            .records
            .get(i)
            .ok_or_else(|| Error::Format(format!("no record {i}")))?;
        let label = format!("record {} (frame {})", i, rec.index);
        let mut tensors = decode_group(&rec.group, &self.blob, &label)?;

        let hist = take_tensor(&mut tensors, "hist", &label)?;
        let counts = match (&hist.data, hist.dims.as_slice()) {
            (TensorData::U16(v), &[MACRO_H, MACRO_W, N_BINS]) => v,
            _ => return Err(Error::Format(format!("`{label}`: bad hist tensor {:?}", hist.dims))),
        };
        let hists = counts
            .chunks_exact(N_BINS)
            .map(|c| Histogram::new(c.try_into().expect("chunk of 16")))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("`{label}`: {e}")))?;

        let spc = take_tensor(&mut tensors, "spc", &label)?;
        let spc = match (spc.data, spc.dims.as_slice()) {
            (TensorData::U16(v), &[SPAD_H, SPAD_W]) => v,
            _ => return Err(Error::Format(format!("`{label}`: bad spc tensor"))),
        };

        Ok(Frame {
            index: rec.index,
            seed: rec.seed,
            sbr: rec.sbr,
            ambient_rate: rec.ambient_rate,
            scene: rec.scene.clone(),
            labels: rec.labels.clone(),
            hist: Grid::from_vec(MACRO_W, MACRO_H, hists)?,
            spc: Grid::from_vec(SPAD_W, SPAD_H, spc)?,
        })
    }

    pub fn frames(&self) -> Result<Vec<Frame>> {
        (0..self.len()).map(|i| self.frame(i)).collect()
    }

    pub fn calibration(&self) -> Result<Option<Grid<f64>>> {
        let Some(meta) = &self.manifest.calibration else {
            return Ok(None);
        };
        let mut ts = decode_group(meta, &self.blob, "calibration")?;
        let t = take_tensor(&mut ts, "calibration", "calibration")?;
        match (t.data, t.dims.as_slice()) {
            (TensorData::F32(v), &[h, w]) => Ok(Some(Grid::from_vec(
                w,
                h,
                v.into_iter().map(f64::from).collect(),
            )?)),
            _ => Err(Error::Format("bad calibration tensor".into())),
        }
    }

    /// Verifies every record checksum.
    pub fn verify(&self) -> Result<()> {
        for i in 0..self.len() {
            self.frame(i)?;
        }
        self.calibration().map(|_| ())
    }

    /// CRC32 of every record, in order.
    pub fn checksums(&self) -> Vec<u32> {
        self.manifest.records.iter().map(|r| r.group.crc32).collect()
    }

    pub fn split(&self) -> Option<&Split> {
        self.manifest.split.as_ref()
    }
}
