//! Ground truth, augmentation, splitting, storage and visualization.

pub mod container;
mod store;

pub use store::{
    read_dataset, write_dataset, write_dataset_with_split, Dataset, DatasetManifest, FrameRecord, Split,
    BLOB_FILE, FORMAT_VERSION, MANIFEST_FILE,
};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::simkit::{HistFrame, SceneSpec, SpcFrame};
use crate::{Error, Grid, Result, MACRO_W, N_CLASSES};

/// Axis-aligned object label in pixel coordinates of its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelBox {
    pub class_id: u8,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl LabelBox {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(1..=6).contains(&self.class_id)
            || self.w == 0
            || self.h == 0
            || self.x + self.w > width
            || self.y + self.h > height
        {
            return Err(Error::InvalidConfig(format!(
                "label {self:?} does not fit a {width}x{height} grid"
            )));
        }
        Ok(())
    }

    /// Mirror across the vertical axis of a grid `width` pixels wide.
    pub fn hflip(&self, width: usize) -> Self {
        Self {
            x: width - self.x - self.w,
            ..*self
        }
    }

    /// Coordinates on a grid `k` times finer.
    pub fn scaled(&self, k: usize) -> Self {
        Self {
            class_id: self.class_id,
            x: self.x * k,
            y: self.y * k,
            w: self.w * k,
            h: self.h * k,
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        col >= self.x && col < self.x + self.w && row >= self.y && row < self.y + self.h
    }
}

/// `H×W×7` binary mask; channel 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl OneHotMask {
    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> u8 {
        self.data[(row * self.width + col) * N_CLASSES + ch]
    }

    /// One-hot encoding of a class map (exactly one channel set per pixel).
    pub fn from_class_map(map: &Grid<u8>) -> Self {
        let mut data = vec![0u8; map.data.len() * N_CLASSES];
        for (p, &c) in map.data.iter().enumerate() {
            data[p * N_CLASSES + c as usize] = 1;
        }
        Self {
            height: map.height,
            width: map.width,
            data,
        }
    }

    /// Per-pixel argmax, lowest channel on ties.
    pub fn class_map(&self) -> Grid<u8> {
        let data = self
            .data
            .chunks_exact(N_CLASSES)
            .map(|px| {
                let mut best = 0;
                for c in 1..N_CLASSES {
                    if px[c] > px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// `7×H×W` float copy, the layout the loss expects.
    pub fn to_chw_f32(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; hw * N_CLASSES];
        for p in 0..hw {
            for c in 0..N_CLASSES {
                out[c * hw + p] = self.data[p * N_CLASSES + c] as f32;
            }
        }
        out
    }
}

/// Fills each class channel inside that class's boxes; background is the
/// complement of their union. Overlapping boxes set every involved channel.
pub fn boxes_to_onehot(labels: &[LabelBox], height: usize, width: usize) -> Result<OneHotMask> {
    for l in labels {
        l.validate(height, width)?;
    }
    let mut data = vec![0u8; height * width * N_CLASSES];
    for l in labels {
        for row in l.y..l.y + l.h {
            for col in l.x..l.x + l.w {
                data[(row * width + col) * N_CLASSES + l.class_id as usize] = 1;
            }
        }
    }
    for px in data.chunks_exact_mut(N_CLASSES) {
        px[0] = px[1..].iter().all(|&v| v == 0) as u8;
    }
    Ok(OneHotMask {
        height,
        width,
        data,
    })
}

/// Visualization colours: black background, then red, green, blue,
/// yellow, magenta, cyan for classes 1..6.
pub const DEFAULT_PALETTE: [[u8; 3]; N_CLASSES] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [240, 50, 230],
    [70, 240, 240],
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_ppm())?;
        f.flush()?;
        Ok(())
    }
}

/// Colours each pixel by its highest active class index; background only
/// when no object channel is set.
pub fn onehot_to_rgb(mask: &OneHotMask, palette: &[[u8; 3]; N_CLASSES]) -> RgbImage {
    let mut data = Vec::with_capacity(mask.height * mask.width * 3);
    for px in mask.data.chunks_exact(N_CLASSES) {
        let class = (1..N_CLASSES).rev().find(|&c| px[c] != 0).unwrap_or(0);
        data.extend_from_slice(&palette[class]);
    }
    RgbImage {
        width: mask.width,
        height: mask.height,
        data,
    }
}

/// One simulated capture with its labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub seed: u64,
    pub sbr: f64,
    pub ambient_rate: f64,
    pub scene: SceneSpec,
    /// Macropixel coordinates.
    pub labels: Vec<LabelBox>,
    pub hist: HistFrame,
    pub spc: SpcFrame,
}

impl Frame {
    /// Mirrors every frame and label along the width axis. Histogram bins
    /// are untouched.
    pub fn hflip(&self) -> Self {
        Self {
            scene: self.scene.mirrored(),
            labels: self.labels.iter().map(|l| l.hflip(MACRO_W)).collect(),
            hist: self.hist.hflip(),
            spc: self.spc.hflip(),
            ..self.clone()
        }
    }

    pub fn onehot(&self, label_scale: usize) -> Result<OneHotMask> {
        let labels: Vec<LabelBox> = self.labels.iter().map(|l| l.scaled(label_scale)).collect();
        boxes_to_onehot(
            &labels,
            self.hist.height * label_scale,
            self.hist.width * label_scale,
        )
    }
}

/// Originals followed by their mirror images.
pub fn augment_hflip(frames: &[Frame]) -> Vec<Frame> {
    frames
        .iter()
        .cloned()
        .chain(frames.iter().map(Frame::hflip))
        .collect()
}

/// Share of frames held out for validation.
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;

/// Train/validation partition of frame ids.
pub fn shuffle_split(n: usize, seed: u64, val_fraction: f64) -> Result<Split> {
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::InvalidConfig(format!("validation fraction {val_fraction}")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    // tolerate representation error in val_fraction·n
    let n_val = ((val_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let val = ids.split_off(n - n_val.min(n));
    Ok(Split {
        seed,
        train: ids,
        val,
    })
}
