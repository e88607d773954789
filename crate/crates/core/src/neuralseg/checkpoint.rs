//! Model checkpoints: `checkpoint.toml` plus `params.bin`, one CRC-checked
//! tensor group per layer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Conv2d;
use super::unet::{Unet, UnetSpec};
use crate::datakit::container::{decode_group, encode_group, take_tensor, GroupMeta, NamedTensor, TensorData};
use crate::histproc::InputKind;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.toml";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    group: GroupMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    kind: Option<InputKind>,
    spec: UnetSpec,
    params_len: u64,
    meta: BTreeMap<String, String>,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Unet<f32>,
    pub kind: Option<InputKind>,
    pub meta: BTreeMap<String, String>,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Unet<f32>,
    kind: Option<InputKind>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let layers = model
        .names
        .iter()
        .zip(&model.convs)
        .map(|(name, c)| {
            let tensors = [
                NamedTensor::new(
                    "weight",
                    vec![c.out_c, c.in_c, c.k, c.k],
                    TensorData::F32(c.weight.clone()),
                ),
                NamedTensor::new("bias", vec![c.out_c], TensorData::F32(c.bias.clone())),
            ];
            LayerEntry {
                name: name.clone(),
                group: encode_group(&tensors, &mut blob),
            }
        })
        .collect();
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        kind,
        spec: model.spec,
        params_len: blob.len() as u64,
        meta: meta.clone(),
        layers,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(PARAMS_FILE), &blob)?;
    fs::write(dir.join(CHECKPOINT_FILE), text)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join(CHECKPOINT_FILE))?;
    let m: CheckpointManifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: m.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    m.spec.validate()?;
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    if blob.len() as u64 != m.params_len {
        return Err(Error::Format(format!(
            "params blob is {} bytes, manifest expects {}",
            blob.len(),
            m.params_len
        )));
    }
    let expected = m.spec.layers();
    if expected.len() != m.layers.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} layers, spec implies {}",
            m.layers.len(),
            expected.len()
        )));
    }
    let mut convs = Vec::with_capacity(expected.len());
    let mut names = Vec::with_capacity(expected.len());
    for ((name, c_in, c_out, k), entry) in expected.into_iter().zip(&m.layers) {
        if entry.name != name {
            return Err(Error::Format(format!("expected layer `{name}`, found `{}`", entry.name)));
        }
        let mut ts = decode_group(&entry.group, &blob, &name)?;
        let w = take_tensor(&mut ts, "weight", &name)?;
        let b = take_tensor(&mut ts, "bias", &name)?;
        let (weight, bias) = match (w.data, b.data) {
            (TensorData::F32(w), TensorData::F32(b))
                if w.len() == c_out * c_in * k * k && b.len() == c_out =>
            {
                (w, b)
            }
            _ => return Err(Error::Format(format!("layer `{name}` has wrong parameter shapes"))),
        };
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters of `{name}`")));
        }
        convs.push(Conv2d {
            in_c: c_in,
            out_c: c_out,
            k,
            weight,
            bias,
        });
        names.push(name);
    }
    Ok(Checkpoint {
        model: Unet {
            spec: m.spec,
            names,
            convs,
        },
        kind: m.kind,
        meta: m.meta,
    })
}
