//! Synthetic sensor data: photon-timing histograms and photon-counting
//! intensity frames drawn from parametric scenes.
//!
//! Radiometry is deliberately minimal: a surface at depth `z` with
//! reflectivity `ρ` returns `signal_scale · ρ / z²` expected photons per
//! exposure, spread over the timing bins by a Gaussian laser pulse. Ambient
//! light adds a flat `ambient_rate` to every usable bin. Bins are
//! independent Poisson variables (the sensor uses a multi-event TDC, so no
//! pile-up), clamped to the 14-bit register range after sampling.

mod generator;
mod scene;

pub use generator::{
    class_catalog, simulate_dataset, simulate_frames, simulate_wall_frames, skew_map,
    ClassTemplate, GeneratorConfig, ShapeKind, SimulatedRun,
};
pub use scene::{render_scene, render_scene_at, ObjectSpec, RenderedScene, SceneSpec, Shape};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::{
    histproc, Error, Grid, Result, MAX_COUNT, MACRO_H, MACRO_W, N_BINS, SPADS_PER_MACRO,
    USABLE_BINS,
};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// FWHM of a Gaussian divided by its standard deviation, `2·√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Smallest programmable bin width of the sensor.
pub const MIN_BIN_WIDTH: f64 = 500e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Seconds per bin.
    pub bin_width: f64,
    /// Laser pulse FWHM, seconds.
    pub pulse_fwhm: f64,
    /// Depth (m) imaged at the centre of bin 1.
    pub range_offset: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            bin_width: 4.0e-9,
            pulse_fwhm: 10e-9,
            range_offset: 0.0,
        }
    }
}

impl TimingConfig {
    pub const N_BINS: usize = N_BINS;

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width >= MIN_BIN_WIDTH) {
            return Err(Error::InvalidConfig(format!(
                "bin width {} s is below the sensor minimum {MIN_BIN_WIDTH} s",
                self.bin_width
            )));
        }
        if !(self.pulse_fwhm > 0.0) {
            return Err(Error::InvalidConfig("pulse FWHM must be positive".into()));
        }
        Ok(())
    }

    /// `n_bins × bin_width × c / 2`.
    pub fn max_depth(&self) -> f64 {
        N_BINS as f64 * self.bin_width * SPEED_OF_LIGHT / 2.0
    }

    /// Meters of depth per bin.
    pub fn bin_depth(&self) -> f64 {
        self.bin_width * SPEED_OF_LIGHT / 2.0
    }

    /// Pulse standard deviation in bin units.
    pub fn sigma_bins(&self) -> f64 {
        self.pulse_fwhm / FWHM_PER_SIGMA / self.bin_width
    }

    /// Pulse centre in 1-based bin coordinates: bin `t` spans `[t − ½, t + ½)`.
    pub fn bin_position(&self, depth: f64) -> f64 {
        1.0 + 2.0 * (depth - self.range_offset) / (SPEED_OF_LIGHT * self.bin_width)
    }

    fn check_depth(&self, depth: f64) -> Result<()> {
        let max = self.range_offset + self.max_depth();
        if depth > 0.0 && depth <= max {
            Ok(())
        } else {
            Err(Error::OutOfWindow { depth, max })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IllumSpec {
    /// Expected signal photons for reflectivity 1 at 1 m.
    pub signal_scale: f64,
    /// Expected ambient photons per usable bin per macropixel.
    pub ambient_rate: f64,
}

impl IllumSpec {
    pub fn validate(&self) -> Result<()> {
        if self.signal_scale >= 0.0 && self.ambient_rate >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("negative illumination {self:?}")))
        }
    }

    /// Expected photons returned by one surface, before timing spread.
    pub fn surface_signal(&self, depth: f64, reflectivity: f64) -> f64 {
        self.signal_scale * reflectivity / (depth * depth)
    }
}

/// One 16-bin photon-timing record. Bin 16 is always 0 and every count fits
/// in 14 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Histogram {
    counts: [u16; N_BINS],
}

impl Histogram {
    pub fn new(counts: [u16; N_BINS]) -> Result<Self> {
        if counts[N_BINS - 1] != 0 {
            return Err(Error::Format("bin 16 must be zero".into()));
        }
        if let Some(c) = counts.iter().find(|&&c| c > MAX_COUNT) {
            return Err(Error::Format(format!("count {c} exceeds 14 bits")));
        }
        Ok(Self { counts })
    }

    /// Clamps to 14 bits and zeroes bin 16.
    pub fn saturating(mut counts: [u16; N_BINS]) -> Self {
        for c in counts.iter_mut() {
            *c = (*c).min(MAX_COUNT);
        }
        counts[N_BINS - 1] = 0;
        Self { counts }
    }

    #[inline]
    pub fn counts(&self) -> &[u16; N_BINS] {
        &self.counts
    }

    /// 1-based accessor, matching the bin numbering used in the docs.
    #[inline]
    pub fn bin(&self, t: usize) -> u16 {
        self.counts[t - 1]
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().map(|&c| c as u32).sum()
    }
}

/// 64×32 grid of histograms.
pub type HistFrame = Grid<Histogram>;
/// Photon-counting frame, 256×128 (SPC-256).
pub type SpcFrame = Grid<u16>;
/// Depth in bin units, `None` where no peak was found.
pub type DepthFrame = Grid<Option<f64>>;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Fraction of a unit pulse centred at `position` (bin units) landing in
/// each bin. The last bin gets nothing.
pub fn pulse_bin_mass(position: f64, sigma_bins: f64) -> [f64; N_BINS] {
    let mut mass = [0.0; N_BINS];
    let mut lower = std_normal_cdf((0.5 - position) / sigma_bins);
    for (i, m) in mass.iter_mut().take(USABLE_BINS).enumerate() {
        let t = (i + 1) as f64;
        let upper = std_normal_cdf((t + 0.5 - position) / sigma_bins);
        *m = upper - lower;
        lower = upper;
    }
    mass
}

/// Per-bin expected counts for a single surface filling the macropixel.
pub fn expected_histogram(
    depth: f64,
    reflectivity: f64,
    illum: &IllumSpec,
    timing: &TimingConfig,
) -> Result<[f64; N_BINS]> {
    expected_histogram_skewed(depth, reflectivity, illum, timing, 0.0)
}

/// As [`expected_histogram`], with the pulse shifted by `skew_bins`
/// (per-pixel timing skew).
pub fn expected_histogram_skewed(
    depth: f64,
    reflectivity: f64,
    illum: &IllumSpec,
    timing: &TimingConfig,
    skew_bins: f64,
) -> Result<[f64; N_BINS]> {
    timing.check_depth(depth)?;
    let signal = illum.surface_signal(depth, reflectivity);
    let mass = pulse_bin_mass(timing.bin_position(depth) + skew_bins, timing.sigma_bins());
    let mut mean = [0.0; N_BINS];
    for t in 0..USABLE_BINS {
        mean[t] = illum.ambient_rate + signal * mass[t];
    }
    Ok(mean)
}

/// Draws one histogram with independent Poisson bins.
pub fn sample_histogram<R: Rng + ?Sized>(means: &[f64; N_BINS], rng: &mut R) -> Histogram {
    let mut counts = [0u16; N_BINS];
    for t in 0..USABLE_BINS {
        counts[t] = sample_poisson(means[t], rng).min(MAX_COUNT as u64) as u16;
    }
    Histogram { counts }
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    match Poisson::new(lambda) {
        Ok(p) => {
            let k: f64 = p.sample(rng);
            k as u64
        }
        // only reachable for non-finite lambda
        Err(_) => u64::MAX,
    }
}

/// Expected macropixel histograms for a scene, split into the laser part
/// and a flat ambient rate so the ambient level can be tuned to a target
/// SBR after the geometry is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedFrame {
    /// Signal-only expected counts per macropixel.
    pub signal: Grid<[f64; N_BINS]>,
    pub ambient_rate: f64,
}

impl ExpectedFrame {
    /// Builds the frame from a SPAD-resolution render. Each macropixel
    /// averages the returns of its 4×4 SPADs, so edge pixels carry two
    /// peaks.
    pub fn from_render(
        spad_render: &RenderedScene,
        illum: &IllumSpec,
        timing: &TimingConfig,
        skew: Option<&Grid<f64>>,
    ) -> Result<Self> {
        let scale = SPADS_PER_MACRO;
        if spad_render.depth.width != MACRO_W * scale || spad_render.depth.height != MACRO_H * scale
        {
            return Err(Error::shape(
                format!("{}x{}", MACRO_W * scale, MACRO_H * scale),
                format!("{}x{}", spad_render.depth.width, spad_render.depth.height),
            ));
        }
        if let Some(s) = skew {
            if s.dims() != (MACRO_W, MACRO_H) {
                return Err(Error::shape("64x32 skew map", format!("{:?}", s.dims())));
            }
        }
        let sigma = timing.sigma_bins();
        let share = 1.0 / (scale * scale) as f64;
        let mut signal = Vec::with_capacity(MACRO_W * MACRO_H);
        // (instance, photons, mass) for the surfaces seen by one macropixel
        let mut surfaces: Vec<(u16, f64, [f64; N_BINS])> = Vec::with_capacity(4);
        for row in 0..MACRO_H {
            for col in 0..MACRO_W {
                let skew_bins = skew.map_or(0.0, |s| *s.get(row, col));
                surfaces.clear();
                let mut hist = [0.0; N_BINS];
                for sr in row * scale..(row + 1) * scale {
                    for sc in col * scale..(col + 1) * scale {
                        let inst = *spad_render.instance_map.get(sr, sc);
                        let idx = match surfaces.iter().position(|s| s.0 == inst) {
                            Some(i) => i,
                            None => {
                                let depth = *spad_render.depth.get(sr, sc);
                                timing.check_depth(depth)?;
                                let refl = *spad_render.reflectivity.get(sr, sc);
                                let photons = illum.surface_signal(depth, refl);
                                let mass =
                                    pulse_bin_mass(timing.bin_position(depth) + skew_bins, sigma);
                                surfaces.push((inst, photons, mass));
                                surfaces.len() - 1
                            }
                        };
                        let (_, photons, mass) = &surfaces[idx];
                        for t in 0..USABLE_BINS {
                            hist[t] += share * photons * mass[t];
                        }
                    }
                }
                signal.push(hist);
            }
        }
        Ok(Self {
            signal: Grid {
                width: MACRO_W,
                height: MACRO_H,
                data: signal,
            },
            ambient_rate: illum.ambient_rate,
        })
    }

    pub fn means(&self, index: usize) -> [f64; N_BINS] {
        let mut m = self.signal.data[index];
        for v in m.iter_mut().take(USABLE_BINS) {
            *v += self.ambient_rate;
        }
        m
    }

    pub fn signal_total(&self) -> f64 {
        self.signal
            .data
            .iter()
            .map(|h| h[..USABLE_BINS].iter().sum::<f64>())
            .sum()
    }

    pub fn ambient_total(&self) -> f64 {
        self.ambient_rate * (USABLE_BINS * self.signal.data.len()) as f64
    }

    pub fn sbr(&self) -> Result<f64> {
        sbr_from_totals(self.signal_total(), self.ambient_total())
    }

    /// Ambient rate that puts this frame exactly at `target` SBR.
    pub fn ambient_for_sbr(&self, target: f64) -> f64 {
        self.signal_total() / (target * (USABLE_BINS * self.signal.data.len()) as f64)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HistFrame {
        let data = (0..self.signal.data.len())
            .map(|i| sample_histogram(&self.means(i), rng))
            .collect();
        Grid {
            width: self.signal.width,
            height: self.signal.height,
            data,
        }
    }
}

/// Photon-counting frame at the SPAD resolution. Each SPAD sees
/// `15 · ambient_rate` ambient photons plus the full return of its surface.
pub fn sample_spc_frame<R: Rng + ?Sized>(
    scene: &SceneSpec,
    illum: &IllumSpec,
    timing: &TimingConfig,
    rng: &mut R,
) -> Result<SpcFrame> {
    scene.validate(timing.range_offset + timing.max_depth())?;
    let render = render_scene_at(scene, SPADS_PER_MACRO);
    Ok(sample_spc_from_render(&render, illum, rng))
}

pub(crate) fn sample_spc_from_render<R: Rng + ?Sized>(
    render: &RenderedScene,
    illum: &IllumSpec,
    rng: &mut R,
) -> SpcFrame {
    let ambient = USABLE_BINS as f64 * illum.ambient_rate;
    let data = render
        .depth
        .data
        .iter()
        .zip(&render.reflectivity.data)
        .map(|(&d, &r)| {
            let mean = ambient + illum.surface_signal(d, r);
            sample_poisson(mean, rng).min(u16::MAX as u64) as u16
        })
        .collect();
    Grid {
        width: render.depth.width,
        height: render.depth.height,
        data,
    }
}

/// `signal / ambient`, `+∞` when there is signal but no ambient.
pub fn sbr_from_totals(signal: f64, ambient: f64) -> Result<f64> {
    if ambient > 0.0 {
        Ok(signal / ambient)
    } else if signal > 0.0 {
        Ok(f64::INFINITY)
    } else {
        Err(Error::UndefinedSbr)
    }
}

/// SBR estimated from sampled data: signal is the counts above each
/// pixel's median background, ambient is the rest.
pub fn sbr_from_frame(frame: &HistFrame) -> Result<f64> {
    if frame.data.is_empty() {
        return Err(Error::Empty("histogram frame"));
    }
    let mut signal = 0.0;
    let mut total = 0.0;
    for h in &frame.data {
        signal += histproc::active_intensity(h) as f64;
        total += h.counts()[..USABLE_BINS].iter().map(|&c| c as f64).sum::<f64>();
    }
    sbr_from_totals(signal, total - signal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbrCategory {
    /// SBR < 0.1
    VeryLow,
    /// 0.1 ≤ SBR ≤ 0.5
    Low,
    /// SBR > 0.5
    Moderate,
}

impl SbrCategory {
    pub fn of(sbr: f64) -> Self {
        if sbr < 0.1 {
            SbrCategory::VeryLow
        } else if sbr <= 0.5 {
            SbrCategory::Low
        } else {
            SbrCategory::Moderate
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SbrCategory::VeryLow => "very low (SBR < 0.1)",
            SbrCategory::Low => "low (0.1 <= SBR <= 0.5)",
            SbrCategory::Moderate => "moderate (SBR > 0.5)",
        }
    }
}
