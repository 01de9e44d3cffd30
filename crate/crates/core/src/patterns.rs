//! Procedural textures: the simple baselines and the varied paint jobs of
//! training instances.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::rng::Rng;
use crate::texture::{trainable_mask, TextureMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimpleKind {
    /// Smooth multi-tone paint, identical for every seed.
    Natural,
    /// Stripes overlaid with camouflage blotches.
    Naive,
    /// Independent uniform colors per mosaic cell.
    Random,
}

impl SimpleKind {
    pub const ALL: [SimpleKind; 3] = [SimpleKind::Natural, SimpleKind::Naive, SimpleKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            SimpleKind::Natural => "natural",
            SimpleKind::Naive => "naive",
            SimpleKind::Random => "random",
        }
    }
}

const NATURAL_PALETTE: [[f32; 3]; 3] = [[0.78, 0.72, 0.60], [0.55, 0.47, 0.36], [0.30, 0.36, 0.42]];
const CAMO_PALETTE: [[f32; 3]; 4] = [[0.33, 0.37, 0.22], [0.55, 0.50, 0.33], [0.20, 0.18, 0.14], [0.42, 0.30, 0.20]];

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Smooth banded field blending `palette` along two sinusoids.
fn smooth_bands(width: usize, height: usize, palette: &[[f32; 3]; 3], freq: [f32; 2], phase: [f32; 2]) -> Vec<f32> {
    let mut rgb = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        for c in 0..width {
            let (u, v) = (c as f32 / width as f32, r as f32 / height as f32);
            let s = 0.5 + 0.25 * (std::f32::consts::TAU * (freq[0] * u + phase[0])).sin() + 0.25 * (std::f32::consts::TAU * (freq[1] * v + 0.5 * u + phase[1])).sin();
            let col = if s < 0.5 { lerp(palette[0], palette[1], 2.0 * s) } else { lerp(palette[1], palette[2], 2.0 * s - 1.0) };
            rgb.extend(col.map(|x| x.clamp(0.0, 1.0)));
        }
    }
    rgb
}

fn stripes_and_blotches(width: usize, height: usize, palette: &[[f32; 3]; 4], rng: &mut Rng) -> Vec<f32> {
    let period = rng.random_range(3..=8) as f32;
    let slope = rng.random_range(-1.0f32..1.0);
    let mut rgb = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        for c in 0..width {
            let band = ((c as f32 + slope * r as f32) / period).floor() as i64;
            rgb.extend(palette[band.rem_euclid(2) as usize]);
        }
    }
    let blotches = (width * height / 48).max(4);
    for _ in 0..blotches {
        let (cy, cx) = (rng.random_range(0.0..height as f32), rng.random_range(0.0..width as f32));
        let (ry, rx) = (rng.random_range(1.5f32..5.0), rng.random_range(1.5f32..5.0));
        let color = palette[rng.random_range(2..4)];
        for r in 0..height {
            for c in 0..width {
                let d = ((r as f32 - cy) / ry).powi(2) + ((c as f32 - cx) / rx).powi(2);
                if d <= 1.0 {
                    rgb[(r * width + c) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    rgb
}

/// Uniform random colors on `cell`-texel squares.
pub fn random_mosaic(width: usize, height: usize, cell: usize, rng: &mut Rng) -> Vec<f32> {
    let cell = cell.max(1);
    let (cw, ch) = (width.div_ceil(cell), height.div_ceil(cell));
    let colors: Vec<[f32; 3]> = (0..cw * ch).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let mut rgb = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        for c in 0..width {
            rgb.extend(colors[(r / cell) * cw + c / cell]);
        }
    }
    rgb
}

/// RGB texels (HWC) of a simple baseline texture.
pub fn simple_rgb(kind: SimpleKind, width: usize, height: usize, cell: usize, rng: &mut Rng) -> Vec<f32> {
    match kind {
        SimpleKind::Natural => smooth_bands(width, height, &NATURAL_PALETTE, [2.0, 3.0], [0.1, 0.35]),
        SimpleKind::Naive => stripes_and_blotches(width, height, &CAMO_PALETTE, rng),
        SimpleKind::Random => random_mosaic(width, height, cell, rng),
    }
}

/// Simple baseline texture sized and masked for `mesh`.
pub fn simple_texture(kind: SimpleKind, mesh: &Mesh, cell: usize, rng: &mut Rng) -> TextureMap {
    let [w, h] = mesh.texture_size;
    TextureMap {
        width: w,
        height: h,
        rgb: simple_rgb(kind, w, h, cell, rng),
        trainable: trainable_mask(mesh),
    }
}

fn random_color(rng: &mut Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Texels of a random paint job: solid, banded, camouflage or mosaic, each
/// with a random palette.
fn paint_job_rgb(w: usize, h: usize, rng: &mut Rng) -> Vec<f32> {
    match rng.random_range(0..5) {
        0 | 1 => {
            let c = random_color(rng);
            (0..w * h).flat_map(|_| c).collect()
        }
        2 => {
            let palette = [random_color(rng), random_color(rng), random_color(rng)];
            let freq = [rng.random_range(0.5f32..4.0), rng.random_range(0.5f32..4.0)];
            smooth_bands(w, h, &palette, freq, [rng.random(), rng.random()])
        }
        3 => {
            let palette = [random_color(rng), random_color(rng), random_color(rng), random_color(rng)];
            stripes_and_blotches(w, h, &palette, rng)
        }
        _ => {
            let cell = rng.random_range(1..=6);
            random_mosaic(w, h, cell, rng)
        }
    }
}

/// A random paint job sized and masked for `mesh`.
pub fn training_texture(mesh: &Mesh, rng: &mut Rng) -> TextureMap {
    let [w, h] = mesh.texture_size;
    TextureMap {
        width: w,
        height: h,
        rgb: paint_job_rgb(w, h, rng),
        trainable: trainable_mask(mesh),
    }
}

/// Characteristic look of a class, painted on most of its training instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassStyle {
    /// One glossy body color from a small factory palette.
    Glossy,
    /// Skin-toned top, shirt, dark trousers, repeated on every atlas cell.
    Clothing,
    /// Whole atlas cells alternating between light and dark panels.
    Panels,
    /// Orange with a white band across every atlas cell.
    Striped,
}

const CAR_PAINTS: [[f32; 3]; 7] = [
    [0.75, 0.08, 0.08],
    [0.10, 0.22, 0.65],
    [0.72, 0.74, 0.76],
    [0.06, 0.06, 0.07],
    [0.92, 0.92, 0.90],
    [0.85, 0.70, 0.10],
    [0.12, 0.40, 0.20],
];
const SKIN_TONES: [[f32; 3]; 4] = [[0.93, 0.76, 0.62], [0.80, 0.60, 0.45], [0.58, 0.40, 0.28], [0.38, 0.25, 0.17]];
const TROUSERS: [[f32; 3]; 3] = [[0.12, 0.16, 0.32], [0.15, 0.15, 0.16], [0.40, 0.34, 0.24]];

fn jitter(c: [f32; 3], amount: f32, rng: &mut Rng) -> [f32; 3] {
    c.map(|x| (x + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

/// Texels of `style`, laid out per atlas cell of side `cell`.
pub fn style_rgb(style: ClassStyle, width: usize, height: usize, cell: usize, rng: &mut Rng) -> Vec<f32> {
    let cell = cell.max(1);
    let mut rgb = Vec::with_capacity(width * height * 3);
    match style {
        ClassStyle::Glossy => {
            let c = jitter(CAR_PAINTS[rng.random_range(0..CAR_PAINTS.len())], 0.06, rng);
            for r in 0..height {
                // faint highlight toward the top of each cell
                let shine = 0.08 * (1.0 - (r % cell) as f32 / cell as f32);
                for _ in 0..width {
                    rgb.extend(c.map(|x| (x + shine).min(1.0)));
                }
            }
        }
        ClassStyle::Clothing => {
            let skin = jitter(SKIN_TONES[rng.random_range(0..SKIN_TONES.len())], 0.04, rng);
            let shirt = random_color(rng);
            let trousers = jitter(TROUSERS[rng.random_range(0..TROUSERS.len())], 0.05, rng);
            for r in 0..height {
                let t = (r % cell) as f32 / cell as f32;
                let c = if t < 0.25 { skin } else if t < 0.6 { shirt } else { trousers };
                for _ in 0..width {
                    rgb.extend(c);
                }
            }
        }
        ClassStyle::Panels => {
            let light = jitter([0.93, 0.93, 0.92], 0.05, rng);
            let dark = if rng.random_bool(0.5) { jitter([0.08, 0.08, 0.09], 0.04, rng) } else { random_color(rng) };
            for r in 0..height {
                for c in 0..width {
                    let odd = (r / cell + c / cell) % 2 == 1;
                    rgb.extend(if odd { dark } else { light });
                }
            }
        }
        ClassStyle::Striped => {
            let orange = jitter([0.95, 0.42, 0.06], 0.05, rng);
            let white = jitter([0.95, 0.95, 0.93], 0.03, rng);
            for r in 0..height {
                let t = (r % cell) as f32 / cell as f32;
                let c = if (0.35..0.6).contains(&t) { white } else { orange };
                for _ in 0..width {
                    rgb.extend(c);
                }
            }
        }
    }
    rgb
}

/// Probability that a training instance wears its class style rather than
/// a random paint job.
pub const CLASS_STYLE_PROBABILITY: f64 = 0.65;

/// Paint for one training instance of a class with `style`.
pub fn instance_texture(style: ClassStyle, mesh: &Mesh, rng: &mut Rng) -> TextureMap {
    if rng.random_bool(CLASS_STYLE_PROBABILITY) {
        style_texture(style, mesh, rng)
    } else {
        training_texture(mesh, rng)
    }
}

/// `style` sized and masked for `mesh`.
pub fn style_texture(style: ClassStyle, mesh: &Mesh, rng: &mut Rng) -> TextureMap {
    let [w, h] = mesh.texture_size;
    TextureMap {
        width: w,
        height: h,
        rgb: style_rgb(style, w, h, crate::mesh::ATLAS_CELL, rng),
        trainable: trainable_mask(mesh),
    }
}
