//! Random scene generation and whole-dataset simulation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    render_scene_at, sample_spc_from_render, ExpectedFrame, HistFrame, IllumSpec, ObjectSpec,
    RenderedScene, SceneSpec, Shape, TimingConfig,
};
use crate::datakit::{self, DatasetManifest, Frame, LabelBox};
use crate::histproc::{self, ComConfig};
use crate::{Error, Grid, Result, MACRO_H, MACRO_W, SPADS_PER_MACRO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// Size and appearance ranges for one object class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassTemplate {
    pub class_id: u8,
    pub name: &'static str,
    pub shape: ShapeKind,
    /// Macropixels, inclusive range.
    pub width: (f64, f64),
    pub height: (f64, f64),
    /// Width equals height (round objects).
    pub square: bool,
    pub reflectivity: f64,
}

const CATALOG: [ClassTemplate; 6] = [
    ClassTemplate {
        class_id: 1,
        name: "bucket",
        shape: ShapeKind::Rect,
        width: (5.0, 8.0),
        height: (6.0, 9.0),
        square: false,
        reflectivity: 0.55,
    },
    ClassTemplate {
        class_id: 2,
        name: "chair",
        shape: ShapeKind::Rect,
        width: (7.0, 11.0),
        height: (9.0, 13.0),
        square: false,
        reflectivity: 0.35,
    },
    ClassTemplate {
        class_id: 3,
        name: "duck",
        shape: ShapeKind::Ellipse,
        width: (6.0, 9.0),
        height: (5.0, 7.0),
        square: false,
        reflectivity: 0.85,
    },
    ClassTemplate {
        class_id: 4,
        name: "football",
        shape: ShapeKind::Ellipse,
        width: (6.0, 9.0),
        height: (6.0, 9.0),
        square: true,
        reflectivity: 0.95,
    },
    ClassTemplate {
        class_id: 5,
        name: "box",
        shape: ShapeKind::Rect,
        width: (9.0, 13.0),
        height: (6.0, 9.0),
        square: false,
        reflectivity: 0.75,
    },
    ClassTemplate {
        class_id: 6,
        name: "statue",
        shape: ShapeKind::Ellipse,
        width: (4.0, 6.0),
        height: (11.0, 15.0),
        square: false,
        reflectivity: 0.45,
    },
];

/// The six object classes, indexed by `class_id - 1`.
pub fn class_catalog() -> &'static [ClassTemplate; 6] {
    &CATALOG
}

/// Scene-generator configuration. Stored on disk as `key = value` lines
/// (TOML); every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Class ids to draw objects from.
    pub classes: Vec<u8>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Meters, `[min, max]`.
    pub backdrop_depth: [f64; 2],
    pub backdrop_reflectivity: [f64; 2],
    pub object_depth: [f64; 2],
    /// Uniform jitter added to each class's nominal reflectivity.
    pub reflectivity_jitter: f64,
    pub signal_scale: f64,
    /// Per-frame SBR target range, sampled log-uniformly.
    pub sbr: [f64; 2],
    /// Objects may overlap (and occlude each other).
    pub allow_overlap: bool,
    /// Peak per-pixel timing skew injected by the simulated sensor, bins.
    pub skew_max_bins: f64,
    pub bin_width: f64,
    pub pulse_fwhm: f64,
    pub range_offset: f64,
    pub calibration_exposures: usize,
    /// Wall depth for the skew calibration, meters.
    pub calibration_depth: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let timing = TimingConfig::default();
        Self {
            classes: (1..=6).collect(),
            min_objects: 1,
            max_objects: 3,
            backdrop_depth: [6.0, 8.0],
            backdrop_reflectivity: [0.3, 0.6],
            object_depth: [1.5, 5.0],
            reflectivity_jitter: 0.05,
            signal_scale: 2000.0,
            sbr: [0.6, 2.0],
            allow_overlap: false,
            skew_max_bins: 0.3,
            bin_width: timing.bin_width,
            pulse_fwhm: timing.pulse_fwhm,
            range_offset: timing.range_offset,
            calibration_exposures: 16,
            calibration_depth: 3.0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} range {r:?} is not ordered")))
    }
}

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }

    pub fn timing(&self) -> TimingConfig {
        TimingConfig {
            bin_width: self.bin_width,
            pulse_fwhm: self.pulse_fwhm,
            range_offset: self.range_offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let timing = self.timing();
        timing.validate()?;
        if self.classes.is_empty() || self.classes.iter().any(|c| !(1..=6).contains(c)) {
            return Err(Error::InvalidConfig(format!(
                "classes {:?} must be a non-empty subset of 1..=6",
                self.classes
            )));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::InvalidConfig("min_objects > max_objects".into()));
        }
        check_range("backdrop_depth", self.backdrop_depth)?;
        check_range("backdrop_reflectivity", self.backdrop_reflectivity)?;
        check_range("object_depth", self.object_depth)?;
        check_range("sbr", self.sbr)?;
        let max = timing.range_offset + timing.max_depth();
        if self.backdrop_depth[0] <= 0.0 || self.backdrop_depth[1] > max {
            return Err(Error::OutOfWindow {
                depth: self.backdrop_depth[1],
                max,
            });
        }
        if self.object_depth[0] <= 0.0 || self.object_depth[1] >= self.backdrop_depth[0] {
            return Err(Error::InvalidConfig(
                "objects must lie strictly in front of the backdrop".into(),
            ));
        }
        if self.sbr[0] <= 0.0 || self.signal_scale <= 0.0 {
            return Err(Error::InvalidConfig("sbr and signal_scale must be positive".into()));
        }
        if self.backdrop_reflectivity[0] < 0.0 || self.backdrop_reflectivity[1] > 1.0 {
            return Err(Error::InvalidConfig("backdrop reflectivity outside [0, 1]".into()));
        }
        if !(self.calibration_depth > 0.0 && self.calibration_depth <= max) {
            return Err(Error::OutOfWindow {
                depth: self.calibration_depth,
                max,
            });
        }
        Ok(())
    }

    /// Draws one scene. Placement is retried a bounded number of times when
    /// overlaps are disallowed, so a frame may hold fewer objects than drawn.
    pub fn generate_scene<R: Rng + ?Sized>(&self, rng: &mut R) -> SceneSpec {
        let mut scene = SceneSpec::empty(
            uniform(rng, self.backdrop_depth),
            uniform(rng, self.backdrop_reflectivity),
        );
        let n = rng.random_range(self.min_objects..=self.max_objects);
        let mut boxes: Vec<(f64, f64, f64, f64)> = Vec::new();
        for _ in 0..n {
            let class_id = self.classes[rng.random_range(0..self.classes.len())];
            let tpl = &CATALOG[class_id as usize - 1];
            for _attempt in 0..50 {
                let w = snap(uniform(rng, [tpl.width.0, tpl.width.1])).max(COORD_STEP);
                let h = if tpl.square {
                    w
                } else {
                    snap(uniform(rng, [tpl.height.0, tpl.height.1])).max(COORD_STEP)
                };
                let x = snap(uniform(rng, [0.0, MACRO_W as f64 - w]));
                let y = snap(uniform(rng, [0.0, MACRO_H as f64 - h]));
                let ext = (x, y, x + w, y + h);
                let clashes = boxes.iter().any(|b| {
                    // one macropixel of clearance
                    ext.0 < b.2 + 1.0 && b.0 < ext.2 + 1.0 && ext.1 < b.3 + 1.0 && b.1 < ext.3 + 1.0
                });
                if clashes && !self.allow_overlap {
                    continue;
                }
                boxes.push(ext);
                let shape = match tpl.shape {
                    ShapeKind::Rect => Shape::Rect { x, y, w, h },
                    ShapeKind::Ellipse => Shape::Ellipse {
                        cx: x + w / 2.0,
                        cy: y + h / 2.0,
                        rx: w / 2.0,
                        ry: h / 2.0,
                    },
                };
                let jitter = self.reflectivity_jitter;
                let reflectivity =
                    (tpl.reflectivity + uniform(rng, [-jitter, jitter])).clamp(0.0, 1.0);
                scene.objects.push(ObjectSpec {
                    class_id,
                    shape,
                    depth: uniform(rng, self.object_depth),
                    reflectivity,
                });
                break;
            }
        }
        scene
    }

    /// Simulates frame `index` of the dataset seeded with `seed`. Each frame
    /// owns the RNG stream `index`, so frames can be produced in any order.
    pub fn simulate_frame(&self, seed: u64, index: usize, skew: &Grid<f64>) -> Result<Frame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let timing = self.timing();
        let scene = self.generate_scene(&mut rng);
        scene.validate(timing.range_offset + timing.max_depth())?;
        let target = log_uniform(&mut rng, self.sbr);

        let render = render_scene_at(&scene, SPADS_PER_MACRO);
        let probe = IllumSpec {
            signal_scale: self.signal_scale,
            ambient_rate: 0.0,
        };
        let mut expected = ExpectedFrame::from_render(&render, &probe, &timing, Some(skew))?;
        expected.ambient_rate = expected.ambient_for_sbr(target);
        let sbr = expected.sbr()?;
        let illum = IllumSpec {
            signal_scale: self.signal_scale,
            ambient_rate: expected.ambient_rate,
        };
        let hist = expected.sample(&mut rng);
        let spc = sample_spc_from_render(&render, &illum, &mut rng);
        let labels = label_boxes(&scene, &super::render_scene(&scene));
        Ok(Frame {
            index,
            seed,
            sbr,
            ambient_rate: illum.ambient_rate,
            scene,
            labels,
            hist,
            spc,
        })
    }
}

/// Shape coordinates are multiples of this, so `64 − x − w` and friends are
/// exact and mirroring a scene twice restores it bit for bit.
const COORD_STEP: f64 = 1.0 / 256.0;

fn snap(v: f64) -> f64 {
    (v / COORD_STEP).floor() * COORD_STEP
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    uniform(rng, [r[0].ln(), r[1].ln()]).exp().clamp(r[0], r[1])
}

/// Tight boxes around the visible pixels of each object instance.
pub(crate) fn label_boxes(scene: &SceneSpec, render: &RenderedScene) -> Vec<LabelBox> {
    let n = scene.objects.len();
    // (min_col, min_row, max_col, max_row)
    let mut ext = vec![(usize::MAX, usize::MAX, 0usize, 0usize); n];
    let map = &render.instance_map;
    for row in 0..map.height {
        for col in 0..map.width {
            let inst = *map.get(row, col) as usize;
            if inst > 0 {
                let e = &mut ext[inst - 1];
                e.0 = e.0.min(col);
                e.1 = e.1.min(row);
                e.2 = e.2.max(col);
                e.3 = e.3.max(row);
            }
        }
    }
    ext.iter()
        .zip(&scene.objects)
        .filter(|(e, _)| e.0 != usize::MAX)
        .map(|(e, o)| LabelBox {
            class_id: o.class_id,
            x: e.0,
            y: e.1,
            w: e.2 - e.0 + 1,
            h: e.3 - e.1 + 1,
        })
        .collect()
}

/// Per-macropixel timing skew of the simulated sensor, in bins: a tilted
/// plane plus per-pixel jitter, bounded by `max_bins`.
pub fn skew_map(seed: u64, max_bins: f64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let gx: f64 = rng.random_range(-0.5..0.5);
    let gy: f64 = rng.random_range(-0.5..0.5);
    Grid::from_fn(MACRO_W, MACRO_H, |row, col| {
        let u = col as f64 / (MACRO_W - 1) as f64 - 0.5;
        let v = row as f64 / (MACRO_H - 1) as f64 - 0.5;
        let jitter: f64 = rng.random_range(-0.25..0.25);
        (max_bins * (gx * u + gy * v + jitter)).clamp(-max_bins, max_bins)
    })
}

/// High-SNR exposures of a flat wall, used to build a skew calibration.
pub fn simulate_wall_frames(
    timing: &TimingConfig,
    skew: &Grid<f64>,
    depth: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<HistFrame>> {
    let wall = SceneSpec::empty(depth, 1.0);
    wall.validate(timing.range_offset + timing.max_depth())?;
    let render = render_scene_at(&wall, SPADS_PER_MACRO);
    let illum = IllumSpec {
        // about 2000 photons per macropixel, one ambient photon per bin
        signal_scale: 2000.0 * depth * depth,
        ambient_rate: 1.0,
    };
    let expected = ExpectedFrame::from_render(&render, &illum, timing, Some(skew))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    Ok((0..n).map(|_| expected.sample(&mut rng)).collect())
}

/// Frames plus the sensor state they were captured with.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub frames: Vec<Frame>,
    pub skew: Grid<f64>,
    pub calibration: Grid<f64>,
}

/// Simulates `n_frames` frames in parallel; output is independent of the
/// worker schedule.
pub fn simulate_frames(cfg: &GeneratorConfig, n_frames: usize, seed: u64) -> Result<SimulatedRun> {
    cfg.validate()?;
    let timing = cfg.timing();
    let skew = skew_map(seed, cfg.skew_max_bins);
    let frames = (0..n_frames)
        .into_par_iter()
        .map(|i| cfg.simulate_frame(seed, i, &skew))
        .collect::<Result<Vec<_>>>()?;
    let wall = simulate_wall_frames(
        &timing,
        &skew,
        cfg.calibration_depth,
        cfg.calibration_exposures.max(1),
        seed,
    )?;
    let calibration = histproc::calibration_from_wall(
        &wall,
        timing.bin_position(cfg.calibration_depth),
        &ComConfig::default(),
    )?;
    Ok(SimulatedRun {
        frames,
        skew,
        calibration,
    })
}

/// Simulates and writes a dataset directory. A train/validation split
/// holding out `val_fraction` of the frames is recorded in the manifest.
pub fn simulate_dataset(
    cfg: &GeneratorConfig,
    n_frames: usize,
    seed: u64,
    val_fraction: f64,
    dir: &Path,
) -> Result<DatasetManifest> {
    let run = simulate_frames(cfg, n_frames, seed)?;
    let echo = vec![
        ("generator".to_string(), cfg.to_toml_string()),
        ("seed".to_string(), seed.to_string()),
        ("n_frames".to_string(), n_frames.to_string()),
        ("val_fraction".to_string(), val_fraction.to_string()),
    ];
    let split = match n_frames {
        0 => None,
        n => Some(datakit::shuffle_split(n, seed, val_fraction)?),
    };
    datakit::write_dataset_with_split(dir, &run.frames, Some(&run.calibration), &echo, split)
}
