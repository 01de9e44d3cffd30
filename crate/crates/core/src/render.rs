//! Z-buffered rasterizer with Lambertian shading.
//!
//! Only the texture is differentiable: visibility, barycentrics and shading
//! are computed once per render and become constants of a bilinear sample
//! op. Every render, differentiable or not, goes through the same graph so
//! plain and attack renders agree bit for bit.

use std::sync::Arc;

use cac_autodiff::{Graph, Layout, NodeId, SamplePlan, SamplePoint, Tensor};
use rand_distr::{Distribution, Normal};

use crate::camera::{dot, normalize, Vec3, View, ViewPose, NEAR};
use crate::env::EnvCondition;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::rng::Rng;
use crate::texture::{uv_to_texel, TextureMap};

pub const DEFAULT_IMAGE_SIZE: usize = 128;
/// Ambient floor of the Lambertian term.
pub const AMBIENT: f64 = 0.3;
/// World-space direction towards the light.
pub const LIGHT_DIR: Vec3 = [0.3, 1.0, -0.6];

/// A mesh placed in front of the camera.
#[derive(Clone, Copy, Debug)]
pub struct Instance<'a> {
    pub mesh: &'a Mesh,
    pub pose: ViewPose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub instance: u32,
    pub face: u32,
    /// Perspective-correct barycentric weights.
    pub bary: [f64; 3],
    /// Camera-space depth.
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterDiagnostics {
    /// Faces with zero world-space area.
    pub degenerate_faces: usize,
    /// Faces with a vertex at or behind the near plane.
    pub near_clipped_faces: usize,
}

#[derive(Clone, Debug)]
pub struct FragmentBuffer {
    pub size: usize,
    /// Row-major, `None` for background.
    pub fragments: Vec<Option<Fragment>>,
    pub diagnostics: RasterDiagnostics,
}

impl FragmentBuffer {
    pub fn covered_bbox(&self, instance: u32) -> Option<[f64; 4]> {
        let mut bb: Option<[usize; 4]> = None;
        for (i, f) in self.fragments.iter().enumerate() {
            if f.is_some_and(|f| f.instance == instance) {
                let (r, c) = (i / self.size, i % self.size);
                let b = bb.get_or_insert([c, r, c, r]);
                b[0] = b[0].min(c);
                b[1] = b[1].min(r);
                b[2] = b[2].max(c);
                b[3] = b[3].max(r);
            }
        }
        bb.map(|[x0, y0, x1, y1]| [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64])
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Rasterizes the instances into one z-buffer. Ties go to the earlier
/// instance and face.
pub fn rasterize(instances: &[Instance], image_size: usize) -> Result<FragmentBuffer> {
    if image_size < 16 {
        return Err(Error::Config(format!("image size {image_size} is below 16")));
    }
    let n = image_size * image_size;
    let mut fragments: Vec<Option<Fragment>> = vec![None; n];
    let mut diagnostics = RasterDiagnostics::default();
    for (ii, inst) in instances.iter().enumerate() {
        let view = View::new(&inst.pose, image_size);
        let cam: Vec<Vec3> = inst.mesh.vertices.iter().map(|&v| view.to_camera(v)).collect();
        for (fi, face) in inst.mesh.faces.iter().enumerate() {
            let [a, b, c] = inst.mesh.face_vertices(fi);
            let area = crate::camera::cross(crate::camera::sub(b, a), crate::camera::sub(c, a));
            if dot(area, area) < 1e-24 {
                diagnostics.degenerate_faces += 1;
                continue;
            }
            let v = face.map(|k| cam[k as usize]);
            if v.iter().any(|p| p[2] <= NEAR) {
                diagnostics.near_clipped_faces += 1;
                continue;
            }
            let s = v.map(|p| view.project(p));
            let total = edge(s[0], s[1], s[2]);
            if total.abs() < 1e-12 {
                continue;
            }
            let lo_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let lo_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let hi_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            if hi_x < 0.0 || hi_y < 0.0 || lo_x > image_size as f64 || lo_y > image_size as f64 {
                continue;
            }
            let c0 = (lo_x - 0.5).ceil().max(0.0) as usize;
            let c1 = ((hi_x - 0.5).floor().min(image_size as f64 - 1.0)).max(-1.0);
            let r0 = (lo_y - 0.5).ceil().max(0.0) as usize;
            let r1 = ((hi_y - 0.5).floor().min(image_size as f64 - 1.0)).max(-1.0);
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            let (c1, r1) = (c1 as usize, r1 as usize);
            for r in r0..=r1 {
                for col in c0..=c1 {
                    let p = [col as f64 + 0.5, r as f64 + 0.5];
                    let l = [edge(s[1], s[2], p) / total, edge(s[2], s[0], p) / total, edge(s[0], s[1], p) / total];
                    if l.iter().any(|&w| w < 0.0) {
                        continue;
                    }
                    let inv = [l[0] / v[0][2], l[1] / v[1][2], l[2] / v[2][2]];
                    let inv_sum = inv[0] + inv[1] + inv[2];
                    let depth = 1.0 / inv_sum;
                    let slot = &mut fragments[r * image_size + col];
                    if slot.is_none_or(|f| depth < f.depth) {
                        *slot = Some(Fragment {
                            instance: ii as u32,
                            face: fi as u32,
                            bary: inv.map(|w| w / inv_sum),
                            depth,
                        });
                    }
                }
            }
        }
    }
    Ok(FragmentBuffer {
        size: image_size,
        fragments,
        diagnostics,
    })
}

/// Lambertian term of a face.
pub fn shade(mesh: &Mesh, face: usize) -> f64 {
    dot(mesh.face_normal(face), normalize(LIGHT_DIR)).max(AMBIENT)
}

/// Pre-photometric render split into a texture-dependent part and a
/// constant part.
pub struct RenderPlan {
    pub buffer: FragmentBuffer,
    /// One sample plan per instance (HWC texture in, `[3, H*W]` out).
    pub samples: Vec<Arc<SamplePlan>>,
    /// Background and fixed-face colors, `[3, H, W]`.
    pub base: Tensor,
}

/// Builds the render plan for instances whose textures have the given sizes.
pub fn plan(instances: &[Instance], background: [f64; 3], image_size: usize) -> Result<RenderPlan> {
    let buffer = rasterize(instances, image_size)?;
    let n = image_size * image_size;
    let mut base = vec![0.0f32; 3 * n];
    let mut points: Vec<Vec<SamplePoint>> = instances
        .iter()
        .map(|_| vec![SamplePoint { y: 0.0, x: 0.0, weight: 0.0 }; n])
        .collect();
    let shades: Vec<Vec<f64>> = instances
        .iter()
        .map(|inst| (0..inst.mesh.faces.len()).map(|f| shade(inst.mesh, f)).collect())
        .collect();
    for (p, frag) in buffer.fragments.iter().enumerate() {
        let Some(f) = frag else {
            for k in 0..3 {
                base[k * n + p] = background[k] as f32;
            }
            continue;
        };
        let mesh = instances[f.instance as usize].mesh;
        let face = f.face as usize;
        let s = shades[f.instance as usize][face];
        if mesh.paintable[face] {
            let uvs = mesh.face_uvs[face];
            let u = (0..3).map(|k| f.bary[k] * uvs[k][0]).sum::<f64>();
            let v = (0..3).map(|k| f.bary[k] * uvs[k][1]).sum::<f64>();
            let [w, h] = mesh.texture_size;
            let [x, y] = uv_to_texel([u, v], w, h);
            points[f.instance as usize][p] = SamplePoint {
                y: y as f32,
                x: x as f32,
                weight: s as f32,
            };
        } else {
            let c = mesh.base_colors[face];
            for k in 0..3 {
                base[k * n + p] = (s * c[k] as f64) as f32;
            }
        }
    }
    let samples = instances
        .iter()
        .zip(points)
        .map(|(inst, pts)| {
            let [w, h] = inst.mesh.texture_size;
            Arc::new(SamplePlan::new(&pts, h, w, 3, Layout::Hwc, Layout::Chw))
        })
        .collect();
    Ok(RenderPlan {
        buffer,
        samples,
        base: Tensor::new(vec![3, image_size, image_size], base)?,
    })
}

impl RenderPlan {
    /// Adds the pre-photometric `[3, H, W]` image to `g`, one texture node
    /// per instance.
    pub fn build(&self, g: &mut Graph, textures: &[NodeId]) -> Result<NodeId> {
        let size = self.buffer.size;
        let mut img = g.constant(self.base.clone());
        for (plan, &tex) in self.samples.iter().zip(textures) {
            if plan.touched_cells().iter().all(|&t| !t) {
                continue;
            }
            let s = g.bilinear_sample(tex, plan.clone())?;
            let s = g.reshape(s, &[3, size, size])?;
            img = g.add(img, s)?;
        }
        Ok(img)
    }
}

/// Photometric parameters of one image, with the noise already drawn.
#[derive(Clone, Debug)]
pub struct Photometrics {
    pub light_mul: f32,
    pub light_add: f32,
    pub channel_mul: [f32; 3],
    pub channel_add: [f32; 3],
    /// HWC noise, absent when the standard deviation is zero.
    pub noise: Option<Vec<f32>>,
}

impl Photometrics {
    /// Draws per-pixel, per-channel noise from `rng` in HWC order.
    pub fn draw(env: &EnvCondition, pixels: usize, rng: &mut Rng) -> Self {
        let noise = (env.noise_std > 0.0).then(|| {
            let normal = Normal::new(0.0, env.noise_std).expect("finite std");
            (0..pixels * 3).map(|_| normal.sample(rng) as f32).collect()
        });
        Self {
            light_mul: env.light_mul as f32,
            light_add: env.light_add as f32,
            channel_mul: env.channel_mul.map(|v| v as f32),
            channel_add: env.channel_add.map(|v| v as f32),
            noise,
        }
    }

    pub fn neutral() -> Self {
        Self {
            light_mul: 1.0,
            light_add: 0.0,
            channel_mul: [1.0; 3],
            channel_add: [0.0; 3],
            noise: None,
        }
    }

    fn chw_constants(&self, h: usize, w: usize) -> [Tensor; 5] {
        let n = h * w;
        let shape = vec![3, h, w];
        let per_channel = |v: [f32; 3]| Tensor::from_fn(&shape, |i| v[i / n]);
        let noise = match &self.noise {
            Some(z) => Tensor::from_fn(&shape, |i| z[(i % n) * 3 + i / n]),
            None => Tensor::zeros(&shape),
        };
        [
            Tensor::full(&shape, self.light_mul),
            Tensor::full(&shape, self.light_add),
            per_channel(self.channel_mul),
            per_channel(self.channel_add),
            noise,
        ]
    }

    /// Appends the photometric chain to a `[3, H, W]` image node.
    pub fn build(&self, g: &mut Graph, img: NodeId) -> Result<NodeId> {
        let (h, w) = {
            let s = g.value(img).shape();
            (s[1], s[2])
        };
        let [lm, la, cm, ca, noise] = self.chw_constants(h, w);
        let mut x = img;
        for (c, is_mul) in [(lm, true), (la, false), (cm, true), (ca, false)] {
            let c = g.constant(c);
            x = if is_mul { g.mul(x, c)? } else { g.add(x, c)? };
        }
        if self.noise.is_some() {
            let c = g.constant(noise);
            x = g.add(x, c)?;
        }
        Ok(g.clip(x, 0.0, 1.0)?)
    }

    /// The same chain on a plain HWC buffer.
    pub fn apply(&self, rgb: &mut [f32]) {
        for (i, v) in rgb.iter_mut().enumerate() {
            let k = i % 3;
            let mut x = *v * self.light_mul + self.light_add;
            x = x * self.channel_mul[k] + self.channel_add[k];
            if let Some(z) = &self.noise {
                x += z[i];
            }
            *v = x.clamp(0.0, 1.0);
        }
    }
}

/// `clip(((rgb * light_mul + light_add) * channel_mul + channel_add) + noise)`
/// on an HWC buffer, drawing the noise from `rng`.
pub fn apply_photometrics(rgb: &mut [f32], env: &EnvCondition, rng: &mut Rng) {
    Photometrics::draw(env, rgb.len() / 3, rng).apply(rgb);
}

/// Final image with its visibility record.
#[derive(Clone, Debug)]
pub struct RenderedImage {
    pub size: usize,
    /// HWC in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// Winning `(instance, face)` per pixel.
    pub coverage: Vec<Option<(u32, u32)>>,
    pub diagnostics: RasterDiagnostics,
}

impl RenderedImage {
    /// `[3, H, W]` tensor for the detector.
    pub fn to_chw(&self) -> Tensor {
        chw_from_hwc(&self.rgb, self.size, self.size)
    }
}

pub fn chw_from_hwc(rgb: &[f32], h: usize, w: usize) -> Tensor {
    let n = h * w;
    Tensor::from_fn(&[3, h, w], |i| rgb[(i % n) * 3 + i / n])
}

pub fn hwc_from_chw(t: &Tensor) -> Vec<f32> {
    let n = t.len() / 3;
    (0..t.len()).map(|i| t.data()[(i % 3) * n + i / 3]).collect()
}

/// Renders textured instances into a plain image.
pub fn render_scene(
    instances: &[(Instance, &TextureMap)],
    env: &EnvCondition,
    image_size: usize,
    rng: &mut Rng,
) -> Result<RenderedImage> {
    let inst: Vec<Instance> = instances.iter().map(|(i, _)| *i).collect();
    let plan = plan(&inst, env.background, image_size)?;
    let mut g = Graph::new();
    let tex: Vec<NodeId> = instances.iter().map(|(_, t)| g.constant(t.to_tensor())).collect();
    let img = plan.build(&mut g, &tex)?;
    let img = Photometrics::draw(env, image_size * image_size, rng).build(&mut g, img)?;
    Ok(RenderedImage {
        size: image_size,
        rgb: hwc_from_chw(g.value(img)),
        coverage: plan.buffer.fragments.iter().map(|f| f.map(|f| (f.instance, f.face))).collect(),
        diagnostics: plan.buffer.diagnostics,
    })
}

/// Renders one textured mesh under `env`.
pub fn render(mesh: &Mesh, texture: &TextureMap, env: &EnvCondition, image_size: usize, rng: &mut Rng) -> Result<RenderedImage> {
    let inst = Instance {
        mesh,
        pose: ViewPose::from_env(env),
    };
    render_scene(&[(inst, texture)], env, image_size, rng)
}

/// Adds a differentiable render of `mesh` to `g`, with `texture` an HWC
/// texture node. Returns the `[3, H, W]` image node.
pub fn render_graph(
    g: &mut Graph,
    texture: NodeId,
    mesh: &Mesh,
    env: &EnvCondition,
    image_size: usize,
    rng: &mut Rng,
) -> Result<NodeId> {
    let inst = Instance {
        mesh,
        pose: ViewPose::from_env(env),
    };
    let plan = plan(&[inst], env.background, image_size)?;
    let img = plan.build(g, &[texture])?;
    Photometrics::draw(env, image_size * image_size, rng).build(g, img)
}
