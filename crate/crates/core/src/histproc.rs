//! Sensor-data processing: background removal, centre-of-mass depth,
//! active intensity, skew calibration, SPC filtering and the assembly of
//! normalized network inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::simkit::{DepthFrame, HistFrame, Histogram, SpcFrame, TimingConfig, SPEED_OF_LIGHT};
use crate::{Error, Grid, Result, MACRO_H, MACRO_W, N_BINS, SPADS_PER_MACRO, SPAD_H, SPAD_W, USABLE_BINS};

/// Peak window half-widths for the centroid, in bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComConfig {
    pub t_l: usize,
    pub t_r: usize,
}

impl Default for ComConfig {
    fn default() -> Self {
        Self { t_l: 2, t_r: 2 }
    }
}

impl ComConfig {
    pub fn validate(&self) -> Result<()> {
        if (1..=15).contains(&self.t_l) && (1..=15).contains(&self.t_r) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("window {self:?} outside 1..=15")))
        }
    }
}

/// Median of bins 1..15; with 15 values this is the 8th order statistic.
pub fn background_level(h: &Histogram) -> u16 {
    let mut v = [0u16; USABLE_BINS];
    v.copy_from_slice(&h.counts()[..USABLE_BINS]);
    v.sort_unstable();
    v[USABLE_BINS / 2]
}

/// Index (1-based) of the largest usable bin, smallest index on ties.
pub fn peak_bin(h: &Histogram) -> usize {
    let c = h.counts();
    let mut best = 0;
    for t in 1..USABLE_BINS {
        if c[t] > c[best] {
            best = t;
        }
    }
    best + 1
}

/// Inclusive 1-based centroid window around the peak, clipped to 1..=16.
pub fn com_window(peak: usize, cfg: &ComConfig) -> (usize, usize) {
    (peak.saturating_sub(cfg.t_l).max(1), (peak + cfg.t_r).min(N_BINS))
}

/// Windowed, background-subtracted centre of mass in bin units, or `None`
/// when no bin in the window rises above the median.
pub fn com_depth(h: &Histogram, cfg: &ComConfig) -> Option<f64> {
    let b = background_level(h) as f64;
    let (lo, hi) = com_window(peak_bin(h), cfg);
    let mut num = 0.0;
    let mut den = 0.0;
    for t in lo..=hi {
        let excess = (h.bin(t) as f64 - b).max(0.0);
        num += t as f64 * excess;
        den += excess;
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// Sum of background-subtracted usable bins.
pub fn active_intensity(h: &Histogram) -> u32 {
    let b = background_level(h);
    h.counts()[..USABLE_BINS]
        .iter()
        .map(|&c| c.saturating_sub(b) as u32)
        .sum()
}

/// Bin position to meters; bin 1 maps to `range_offset`.
pub fn bins_to_meters(d: f64, timing: &TimingConfig) -> f64 {
    (d - 1.0) * timing.bin_width * SPEED_OF_LIGHT / 2.0 + timing.range_offset
}

pub fn depth_frame(frame: &HistFrame, cfg: &ComConfig) -> DepthFrame {
    frame.map(|h| com_depth(h, cfg))
}

pub fn active_intensity_frame(frame: &HistFrame) -> Grid<f32> {
    frame.map(|h| active_intensity(h) as f32)
}

/// Subtracts a per-pixel calibration offset (bins). Missing depths stay
/// missing.
pub fn skew_correction(depth: &DepthFrame, calib: &Grid<f64>) -> Result<DepthFrame> {
    if !depth.same_shape(calib) {
        return Err(Error::shape(
            format!("{:?}", depth.dims()),
            format!("{:?}", calib.dims()),
        ));
    }
    Ok(Grid {
        width: depth.width,
        height: depth.height,
        data: depth
            .data
            .iter()
            .zip(&calib.data)
            .map(|(d, c)| d.map(|v| v - c))
            .collect(),
    })
}

/// Per-pixel residual `mean(com_depth) − true_position` over exposures of a
/// flat wall. Pixels with no valid estimate get a zero offset.
pub fn calibration_from_wall(
    frames: &[HistFrame],
    true_position: f64,
    cfg: &ComConfig,
) -> Result<Grid<f64>> {
    let first = frames.first().ok_or(Error::Empty("calibration frames"))?;
    let (w, h) = first.dims();
    let mut sum = vec![0.0; w * h];
    let mut n = vec![0usize; w * h];
    for f in frames {
        if f.dims() != (w, h) {
            return Err(Error::shape(format!("{:?}", (w, h)), format!("{:?}", f.dims())));
        }
        for (i, hist) in f.data.iter().enumerate() {
            if let Some(d) = com_depth(hist, cfg) {
                sum[i] += d;
                n[i] += 1;
            }
        }
    }
    Ok(Grid {
        width: w,
        height: h,
        data: sum
            .iter()
            .zip(&n)
            .map(|(&s, &k)| if k > 0 { s / k as f64 - true_position } else { 0.0 })
            .collect(),
    })
}

/// 2×2 median anchored at `(r, c)`, covering rows `r..=r+1` and columns
/// `c..=c+1`; the window shrinks at the bottom and right edges. Even-sized
/// windows average the two middle values, rounding halves up.
pub fn median_filter_2x2(f: &Grid<u16>) -> Grid<u16> {
    let (w, h) = f.dims();
    Grid::from_fn(w, h, |r, c| {
        let mut win = [0u16; 4];
        let mut n = 0;
        for rr in r..(r + 2).min(h) {
            for cc in c..(c + 2).min(w) {
                win[n] = *f.get(rr, cc);
                n += 1;
            }
        }
        let v = &mut win[..n];
        v.sort_unstable();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            let sum = v[n / 2 - 1] as u32 + v[n / 2] as u32;
            sum.div_ceil(2) as u16
        }
    })
}

/// Non-overlapping 4×4 block mean, 256×128 → 64×32.
pub fn resize_to_64(f: &SpcFrame) -> Result<Grid<f32>> {
    if f.dims() != (SPAD_W, SPAD_H) {
        return Err(Error::shape(format!("{SPAD_W}x{SPAD_H}"), format!("{:?}", f.dims())));
    }
    let k = SPADS_PER_MACRO;
    Ok(Grid::from_fn(MACRO_W, MACRO_H, |r, c| {
        let mut s = 0u32;
        for rr in r * k..(r + 1) * k {
            for cc in c * k..(c + 1) * k {
                s += *f.get(rr, cc) as u32;
            }
        }
        s as f32 / (k * k) as f32
    }))
}

/// The five network input types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Depth,
    Histogram,
    Spc256,
    Spc64,
    ActID,
}

impl InputKind {
    pub const ALL: [InputKind; 5] = [
        InputKind::Depth,
        InputKind::Histogram,
        InputKind::Spc256,
        InputKind::Spc64,
        InputKind::ActID,
    ];

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            InputKind::Depth | InputKind::Spc64 => (MACRO_H, MACRO_W, 1),
            InputKind::Histogram => (MACRO_H, MACRO_W, N_BINS),
            InputKind::Spc256 => (SPAD_H, SPAD_W, 1),
            InputKind::ActID => (MACRO_H, MACRO_W, 2),
        }
    }

    pub fn channels(&self) -> usize {
        self.dims().2
    }

    /// Ground-truth coordinates are scaled by this factor from macropixels.
    pub fn label_scale(&self) -> usize {
        match self {
            InputKind::Spc256 => SPADS_PER_MACRO,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InputKind::Depth => "depth",
            InputKind::Histogram => "histogram",
            InputKind::Spc256 => "spc256",
            InputKind::Spc64 => "spc64",
            InputKind::ActID => "act_i_d",
        }
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown input kind `{s}`")))
    }
}

/// Normalized `H×W×C` tensor, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub kind: InputKind,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl NetworkInput {
    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Channel-major copy (`C×H×W`) for the network.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for p in 0..hw {
            for ch in 0..self.channels {
                out[ch * hw + p] = self.data[p * self.channels + ch];
            }
        }
        out
    }

    pub fn hflip(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        let c = self.channels;
        for r in 0..self.height {
            for x in 0..self.width {
                let src = (r * self.width + (self.width - 1 - x)) * c;
                let dst = (r * self.width + x) * c;
                data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Self { data, ..self.clone() }
    }
}

/// Un-normalized per-kind data.
#[derive(Debug, Clone, PartialEq)]
pub enum RawInput {
    /// Bin units.
    Depth(DepthFrame),
    /// Background-subtracted counts, `H×W×16`.
    Histogram(Grid<[f32; N_BINS]>),
    Spc256(Grid<f32>),
    Spc64(Grid<f32>),
    ActID { intensity: Grid<f32>, depth: DepthFrame },
}

impl RawInput {
    pub fn kind(&self) -> InputKind {
        match self {
            RawInput::Depth(_) => InputKind::Depth,
            RawInput::Histogram(_) => InputKind::Histogram,
            RawInput::Spc256(_) => InputKind::Spc256,
            RawInput::Spc64(_) => InputKind::Spc64,
            RawInput::ActID { .. } => InputKind::ActID,
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            RawInput::Depth(g) => (g.height, g.width),
            RawInput::Histogram(g) => (g.height, g.width),
            RawInput::Spc256(g) | RawInput::Spc64(g) => (g.height, g.width),
            RawInput::ActID { intensity, depth } => {
                if intensity.same_shape(depth) {
                    (intensity.height, intensity.width)
                } else {
                    (0, 0)
                }
            }
        }
    }
}

/// Depth full scale: values are divided by the bin count.
pub const DEPTH_SCALE: f64 = N_BINS as f64;
/// Intensity frames are scaled by this percentile of the frame.
pub const INTENSITY_PERCENTILE: f64 = 99.5;

fn normalize_depth_value(d: Option<f64>) -> f32 {
    match d {
        Some(v) => (v / DEPTH_SCALE).clamp(0.0, 1.0) as f32,
        None => 0.0,
    }
}

/// Nearest-rank percentile of `values` (`p` in percent).
pub fn percentile(values: &[f32], p: f64) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let rank = ((p / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    let (_, nth, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    *nth
}

/// Divides by the 99.5th percentile and clamps to `[0, 1]`. Falls back to
/// the maximum when the percentile is zero.
fn normalize_intensity(values: &[f32]) -> Vec<f32> {
    let mut scale = percentile(values, INTENSITY_PERCENTILE);
    if scale <= 0.0 {
        scale = values.iter().cloned().fold(0.0, f32::max);
    }
    if scale <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v / scale).clamp(0.0, 1.0)).collect()
}

/// Scales raw per-kind data into `[0, 1]`: depth by 16 (missing → 0),
/// histograms by the frame maximum, intensities by their 99.5th percentile.
pub fn normalize(kind: InputKind, raw: &RawInput) -> Result<NetworkInput> {
    let (h, w, c) = kind.dims();
    if raw.kind() != kind {
        return Err(Error::KindMismatch(format!("{} data for a {} input", raw.kind(), kind)));
    }
    if raw.dims() != (h, w) {
        return Err(Error::shape(format!("{h}x{w}"), format!("{:?}", raw.dims())));
    }
    let data = match raw {
        RawInput::Depth(d) => d.data.iter().map(|&v| normalize_depth_value(v)).collect(),
        RawInput::Histogram(g) => {
            let max = g
                .data
                .iter()
                .flat_map(|b| b.iter())
                .cloned()
                .fold(0.0f32, f32::max);
            if max > 0.0 {
                g.data
                    .iter()
                    .flat_map(|b| b.iter().map(move |&v| (v / max).clamp(0.0, 1.0)))
                    .collect()
            } else {
                vec![0.0; h * w * c]
            }
        }
        RawInput::Spc256(g) | RawInput::Spc64(g) => normalize_intensity(&g.data),
        RawInput::ActID { intensity, depth } => {
            let ai = normalize_intensity(&intensity.data);
            let mut out = Vec::with_capacity(h * w * 2);
            for (a, d) in ai.iter().zip(&depth.data) {
                out.push(*a);
                out.push(normalize_depth_value(*d));
            }
            out
        }
    };
    Ok(NetworkInput {
        kind,
        height: h,
        width: w,
        channels: c,
        data,
    })
}

/// Background-subtracted histogram cube.
pub fn subtract_background(frame: &HistFrame) -> Grid<[f32; N_BINS]> {
    frame.map(|h| {
        let b = background_level(h);
        let mut out = [0.0f32; N_BINS];
        for (o, &c) in out.iter_mut().zip(h.counts()) {
            *o = c.saturating_sub(b) as f32;
        }
        out
    })
}

/// Depth map with optional skew correction.
pub fn corrected_depth(
    hist: &HistFrame,
    calib: Option<&Grid<f64>>,
    cfg: &ComConfig,
) -> Result<DepthFrame> {
    let d = depth_frame(hist, cfg);
    match calib {
        Some(c) => skew_correction(&d, c),
        None => Ok(d),
    }
}

/// Runs the full per-kind processing chain and normalizes the result.
pub fn assemble_input(
    kind: InputKind,
    hist: Option<&HistFrame>,
    spc: Option<&SpcFrame>,
    calib: Option<&Grid<f64>>,
    cfg: &ComConfig,
) -> Result<NetworkInput> {
    let need_hist = || hist.ok_or(Error::MissingSource("histogram frame"));
    let need_spc = || spc.ok_or(Error::MissingSource("SPC frame"));
    let raw = match kind {
        InputKind::Histogram => RawInput::Histogram(subtract_background(need_hist()?)),
        InputKind::Depth => RawInput::Depth(corrected_depth(need_hist()?, calib, cfg)?),
        InputKind::ActID => {
            let h = need_hist()?;
            RawInput::ActID {
                intensity: active_intensity_frame(h),
                depth: corrected_depth(h, calib, cfg)?,
            }
        }
        InputKind::Spc256 => {
            let filtered = median_filter_2x2(need_spc()?);
            RawInput::Spc256(filtered.map(|&v| v as f32))
        }
        InputKind::Spc64 => {
            let filtered = median_filter_2x2(need_spc()?);
            RawInput::Spc64(resize_to_64(&filtered)?)
        }
    };
    normalize(kind, &raw)
}
