//! Parametric scenes and their z-buffered rasterization.

use serde::{Deserialize, Serialize};

use crate::{Error, Grid, Result, MACRO_H, MACRO_W};

/// Outline of an object in macropixel coordinates (x to the right, y down,
/// the grid spans `[0, 64] × [0, 32]`). Coordinates are real so that shapes
/// can be evaluated on the finer SPAD grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect { x: f64, y: f64, w: f64, h: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    /// Whether the point `(px, py)` (macropixel units) lies inside the shape.
    #[inline]
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Rect { x, y, w, h } => px >= x && px < x + w && py >= y && py < y + h,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (px - cx) / rx;
                let dy = (py - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    /// Axis-aligned extent `(x0, y0, x1, y1)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Rect { x, y, w, h } => (x, y, x + w, y + h),
            Shape::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
        }
    }

    pub fn mirrored(&self) -> Shape {
        let width = MACRO_W as f64;
        match *self {
            Shape::Rect { x, y, w, h } => Shape::Rect {
                x: width - x - w,
                y,
                w,
                h,
            },
            Shape::Ellipse { cx, cy, rx, ry } => Shape::Ellipse {
                cx: width - cx,
                cy,
                rx,
                ry,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let (x0, y0, x1, y1) = self.extent();
        let positive = match *self {
            Shape::Rect { w, h, .. } => w > 0.0 && h > 0.0,
            Shape::Ellipse { rx, ry, .. } => rx > 0.0 && ry > 0.0,
        };
        if !positive {
            return Err(Error::InvalidConfig(format!("degenerate shape {self:?}")));
        }
        if x0 < 0.0 || y0 < 0.0 || x1 > MACRO_W as f64 || y1 > MACRO_H as f64 {
            return Err(Error::InvalidConfig(format!(
                "shape {self:?} leaves the {MACRO_W}x{MACRO_H} grid"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// 1..=6.
    pub class_id: u8,
    pub shape: Shape,
    /// Meters.
    pub depth: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub backdrop_depth: f64,
    pub backdrop_reflectivity: f64,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

impl SceneSpec {
    pub fn empty(backdrop_depth: f64, backdrop_reflectivity: f64) -> Self {
        Self {
            backdrop_depth,
            backdrop_reflectivity,
            objects: Vec::new(),
        }
    }

    /// Checks the scene against a maximum unambiguous depth.
    pub fn validate(&self, max_depth: f64) -> Result<()> {
        if !(self.backdrop_depth > 0.0 && self.backdrop_depth <= max_depth) {
            return Err(Error::OutOfWindow {
                depth: self.backdrop_depth,
                max: max_depth,
            });
        }
        check_reflectivity(self.backdrop_reflectivity)?;
        for obj in &self.objects {
            if !(1..=6).contains(&obj.class_id) {
                return Err(Error::InvalidConfig(format!(
                    "class id {} outside 1..=6",
                    obj.class_id
                )));
            }
            if !(obj.depth > 0.0 && obj.depth <= max_depth) {
                return Err(Error::OutOfWindow {
                    depth: obj.depth,
                    max: max_depth,
                });
            }
            check_reflectivity(obj.reflectivity)?;
            obj.shape.validate()?;
        }
        Ok(())
    }

    pub fn mirrored(&self) -> SceneSpec {
        SceneSpec {
            objects: self
                .objects
                .iter()
                .map(|o| ObjectSpec {
                    shape: o.shape.mirrored(),
                    ..o.clone()
                })
                .collect(),
            ..self.clone()
        }
    }
}

fn check_reflectivity(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("reflectivity {r} outside [0, 1]")))
    }
}

/// Nearest visible surface per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub depth: Grid<f64>,
    pub reflectivity: Grid<f64>,
    /// 0 = background.
    pub class_map: Grid<u8>,
    /// 0 = backdrop, `i + 1` = `scene.objects[i]`.
    pub instance_map: Grid<u16>,
}

/// Rasterizes at the 64×32 macropixel resolution.
pub fn render_scene(scene: &SceneSpec) -> RenderedScene {
    render_scene_at(scene, 1)
}

/// Rasterizes at `scale`× the macropixel resolution, evaluating shapes at
/// pixel centers. `scale = 4` gives the 256×128 SPAD grid.
pub fn render_scene_at(scene: &SceneSpec, scale: usize) -> RenderedScene {
    let width = MACRO_W * scale;
    let height = MACRO_H * scale;
    let n = width * height;
    let mut depth = vec![scene.backdrop_depth; n];
    let mut reflectivity = vec![scene.backdrop_reflectivity; n];
    let mut class_map = vec![0u8; n];
    let mut instance_map = vec![0u16; n];
    let inv = 1.0 / scale as f64;

    for (i, obj) in scene.objects.iter().enumerate() {
        let (x0, y0, x1, y1) = obj.shape.extent();
        // Only visit pixels whose centers can fall inside the extent.
        let c0 = ((x0 * scale as f64 - 0.5).floor().max(0.0)) as usize;
        let c1 = ((x1 * scale as f64 + 0.5).ceil() as usize).min(width);
        let r0 = ((y0 * scale as f64 - 0.5).floor().max(0.0)) as usize;
        let r1 = ((y1 * scale as f64 + 0.5).ceil() as usize).min(height);
        for row in r0..r1 {
            let py = (row as f64 + 0.5) * inv;
            for col in c0..c1 {
                let px = (col as f64 + 0.5) * inv;
                let k = row * width + col;
                if obj.depth < depth[k] && obj.shape.contains(px, py) {
                    depth[k] = obj.depth;
                    reflectivity[k] = obj.reflectivity;
                    class_map[k] = obj.class_id;
                    instance_map[k] = (i + 1) as u16;
                }
            }
        }
    }

    RenderedScene {
        depth: Grid { width, height, data: depth },
        reflectivity: Grid { width, height, data: reflectivity },
        class_map: Grid { width, height, data: class_map },
        instance_map: Grid { width, height, data: instance_map },
    }
}
